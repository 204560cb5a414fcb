"""Experiment grids: named presets and custom architecture x upsampler sweeps.

Each preset fixes an exemplar, an iteration budget and a list of grid points
sized so a full sweep over five seeds runs on one CPU core in minutes.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .arch import ArchSpec, Family, param_count
from .engine import DipOptions, NoiseSpec, RunTask, aggregate, run_tasks
from .resampling import named_upsampler

SCHEMA_VERSION = 1


@dataclass
class GridPoint:
    labels: dict
    spec: ArchSpec


@dataclass
class Preset:
    description: str
    exemplar: str
    iterations: int
    build: Callable[[int], list[GridPoint]]
    log_every: int = 25
    lr: float = 0.01


def _decoder(family: str, depth: int, width: int, up: str, channels: int, layers: int | None = None) -> ArchSpec:
    return ArchSpec(Family(family), depth_levels=depth, width=width, num_conv_layers=layers or depth + 1,
                    upsampler=named_upsampler(up), output_channels=channels)


def _hourglass(depth: int, width: int, skips, channels: int, up: str = "bilinear") -> ArchSpec:
    return ArchSpec(Family.HOURGLASS, depth_levels=depth, width=width, skip_channels=skips,
                    upsampler=named_upsampler(up), output_channels=channels)


def upsampler_points(family: str, depth: int, width: int, upsamplers: Sequence[str], channels: int) -> list[GridPoint]:
    return [GridPoint({"arch": f"{family}-d{depth}-w{width}", "upsampler": u},
                      _decoder(family, depth, width, u, channels)) for u in upsamplers]


def _upsampling_ablation(channels: int) -> list[GridPoint]:
    return upsampler_points("mlpdecoder", 4, 64, ("bilinear", "nn", "transposed", "none"), channels)


def _filter_bank(channels: int) -> list[GridPoint]:
    return upsampler_points("convdecoder", 5, 8, ("nn", "bilinear", "k14", "k15", "k60", "k100"), channels)


def _peak_timing(channels: int) -> list[GridPoint]:
    return upsampler_points("convdecoder", 5, 16, ("nn", "k14", "k15", "k60"), channels)


def _width_grid(channels: int) -> list[GridPoint]:
    return [GridPoint({"arch": f"hourglass-d1-w{w}", "depth": 1, "width": w, "skips": 0},
                      _hourglass(1, w, 0, channels)) for w in (32, 64, 128)]


def _depth_grid(channels: int) -> list[GridPoint]:
    points = [GridPoint({"arch": f"hourglass-d{d}-w32", "depth": d, "width": 32, "skips": 0},
                        _hourglass(d, 32, 0, channels)) for d in (1, 2, 4)]
    # the skip sits at the second level: a top-level skip would only forward the input noise
    points.append(GridPoint({"arch": "hourglass-d4-w32-skip1", "depth": 4, "width": 32, "skips": 1},
                            _hourglass(4, 32, [0, 8, 0, 0], channels)))
    return points


PRESETS = {
    "upsampling": Preset("MLP decoder with and without upsampling", "coarse", 200, _upsampling_ablation),
    "filter-bank": Preset("ConvDecoder across the low-pass filter bank", "coarse", 375, _filter_bank),
    "peak-timing": Preset("peak-PSNR iteration against stopband attenuation", "fine", 1500, _peak_timing),
    "width": Preset("hourglass width at depth 1", "coarse", 200, _width_grid, lr=0.002),
    "depth": Preset("hourglass depth with and without a skip", "fine", 500, _depth_grid),
}


def custom_points(family: str, depths: Sequence[int], widths: Sequence[int], skips: Sequence[int],
                  upsamplers: Sequence[str], channels: int) -> list[GridPoint]:
    """Cartesian grid; ``skips`` counts skip connections from the top level (hourglass only)."""
    points = []
    for d in depths:
        for w in widths:
            for s in (skips if family == "hourglass" else [0]):
                for u in upsamplers:
                    labels = {"arch": f"{family}-d{d}-w{w}" + (f"-skip{s}" if s else ""), "upsampler": u,
                              "depth": d, "width": w, "skips": s}
                    if family == "hourglass":
                        skip_list = [max(w // 4, 1) if i < s else 0 for i in range(d)]
                        spec = _hourglass(d, w, skip_list, channels, u)
                    else:
                        spec = _decoder(family, d, w, u, channels)
                    points.append(GridPoint(labels, spec))
    return points


def build_tasks(images: Sequence[tuple[str, np.ndarray]], points: Sequence[GridPoint], noise: NoiseSpec,
                seeds: Sequence[int], opts: DipOptions) -> list[RunTask]:
    """Image x grid point x seed, in that nesting order."""
    tasks = []
    for name, clean in images:
        for p in points:
            for seed in seeds:
                labels = {"image": name, **p.labels, "params": param_count(p.spec), "seed": seed}
                tasks.append(RunTask(labels, clean, noise, p.spec, replace(opts, seed=seed)))
    return tasks


def run_sweep(images, points, noise, seeds, opts, jobs: int = 1) -> tuple[list[dict], list[dict]]:
    tasks = build_tasks(images, points, noise, seeds, opts)
    rows = run_tasks(tasks, jobs)
    keys = [k for k in rows[0] if k not in ("seed",) and k in tasks[0].labels]
    return rows, aggregate(rows, keys)


METRIC_COLUMNS = ("peak_psnr", "final_psnr", "peak_iteration", "peak_ssim", "final_ssim", "noisy_psnr", "error")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v + 0.0:.10g}"  # + 0.0 folds -0.0 into 0.0
    return str(v)


def format_csv(rows: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    """CSV text with a schema-version comment line and a header row."""
    if columns is None:
        columns = []
        for r in rows:
            for k in r:
                if k not in columns:
                    columns.append(k)
    buf = io.StringIO()
    buf.write(f"# schema_version={SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def sweep_csv(rows: Sequence[dict], medians: Sequence[dict]) -> str:
    label_cols = [k for k in rows[0] if k not in METRIC_COLUMNS]
    columns = ["row"] + label_cols + list(METRIC_COLUMNS)
    tagged = [{"row": "run", **r} for r in rows] + [{"row": "median", **m} for m in medians]
    return format_csv(tagged, columns)


def read_csv(text: str) -> list[dict]:
    """Parse CSV text written by ``format_csv`` (comment lines skipped)."""
    lines = [line for line in text.splitlines() if not line.startswith("#")]
    return list(csv.DictReader(lines))
