"""Noise synthesis, the DIP fitting loop and trajectory analysis.

Images are channel-first float arrays in [0, 1]. Gaussian sigma is given in
8-bit gray levels, as is customary for denoising benchmarks.
"""

from __future__ import annotations

import enum
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .arch import ArchSpec, ArchSpecError, build_network
from .autodiff import Adam, Tensor
from .metrics import psnr, ssim
from .resampling import UpsamplerSpec, named_upsampler


class DivergenceError(FloatingPointError):
    """The training loss became NaN or infinite."""

    def __init__(self, iteration: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at iteration {iteration}")
        self.iteration = iteration
        self.loss = loss


# ----------------------------------------------------------------------------
# noise


class NoiseKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    POISSON = "poisson"
    NONE = "none"


def add_gaussian_noise(image: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """``clip(x + N(0, sigma^2), 0, 255)`` for an image on the 0..255 scale."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    image = np.asarray(image, dtype=np.float64)
    if sigma == 0:
        return image.copy()
    noise = np.random.default_rng(seed).normal(0.0, sigma, size=image.shape)
    return np.clip(image + noise, 0.0, 255.0)


def add_poisson_noise(image: np.ndarray, zeta: float, seed: int) -> np.ndarray:
    """Scaled Poisson noise ``zeta * Poisson(x / zeta)`` for an image in [0, 1]."""
    if zeta <= 0:
        raise ValueError("zeta must be positive")
    image = np.asarray(image, dtype=np.float64)
    if np.any(image < 0):
        raise ValueError("Poisson noise needs a non-negative image")
    counts = np.random.default_rng(seed).poisson(image / zeta)
    return zeta * counts


@dataclass(frozen=True)
class NoiseSpec:
    kind: NoiseKind = NoiseKind.GAUSSIAN
    sigma: float = 25.0
    zeta: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.kind is NoiseKind.POISSON and self.zeta <= 0:
            raise ValueError("zeta must be positive")

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "NoiseSpec":
        """Parse ``gaussian:25``, ``poisson:0.1`` or ``none``."""
        kind, _, value = text.strip().lower().partition(":")
        try:
            if kind == "none":
                return cls(NoiseKind.NONE, sigma=0.0, seed=seed)
            if kind == "gaussian":
                return cls(NoiseKind.GAUSSIAN, sigma=float(value or 25), seed=seed)
            if kind == "poisson":
                return cls(NoiseKind.POISSON, zeta=float(value or 0.1), seed=seed)
        except ValueError as exc:
            raise ValueError(f"bad noise level in {text!r}: {exc}") from None
        raise ValueError(f"unknown noise model {text!r}; use gaussian:S, poisson:Z or none")

    @property
    def label(self) -> str:
        if self.kind is NoiseKind.GAUSSIAN:
            return f"gaussian:{self.sigma:g}"
        if self.kind is NoiseKind.POISSON:
            return f"poisson:{self.zeta:g}"
        return "none"

    def apply(self, image: np.ndarray) -> np.ndarray:
        """Corrupt a [0, 1] image; the result is also on the [0, 1] scale."""
        if self.kind is NoiseKind.GAUSSIAN:
            return add_gaussian_noise(np.asarray(image) * 255.0, self.sigma, self.seed) / 255.0
        if self.kind is NoiseKind.POISSON:
            return add_poisson_noise(image, self.zeta, self.seed)
        return np.array(image, dtype=np.float64)


# ----------------------------------------------------------------------------
# the fitting loop


@dataclass
class DipOptions:
    iterations: int = 3000
    lr: float = 0.01
    seed: int = 0
    input_noise_scale: float = 0.1
    log_every: int = 25

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.log_every < 1:
            raise ValueError("log_every must be at least 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")


@dataclass
class TrajectoryRecord:
    iteration: int
    loss: float
    psnr: float | None = None
    ssim: float | None = None


@dataclass
class TrainTrajectory:
    records: list[TrajectoryRecord] = field(default_factory=list)
    best_psnr_iteration: int | None = None
    final_output: np.ndarray | None = None
    best_output: np.ndarray | None = None

    @property
    def iterations(self) -> list[int]:
        return [r.iteration for r in self.records]

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.records]

    @property
    def psnrs(self) -> list[float]:
        return [r.psnr for r in self.records if r.psnr is not None]

    @property
    def ssims(self) -> list[float]:
        return [r.ssim for r in self.records if r.ssim is not None]

    def record_at(self, iteration: int) -> TrajectoryRecord:
        for r in self.records:
            if r.iteration == iteration:
                return r
        raise KeyError(iteration)

    def summary(self) -> dict:
        """Peak and final metrics; empty when no clean reference was given."""
        if not self.psnrs:
            return {}
        last = self.records[-1]
        return {
            "peak_psnr": max(self.psnrs),
            "final_psnr": last.psnr,
            "peak_iteration": peak_iteration(self),
            "peak_ssim": max(self.ssims),
            "final_ssim": last.ssim,
        }


def input_noise(shape: tuple[int, ...], scale: float, seed: int) -> np.ndarray:
    """The fixed network input ``Uniform(0, 1) * scale``."""
    return np.random.default_rng([seed, 1]).uniform(0.0, 1.0, size=shape) * scale


def run_dip(noisy: np.ndarray, spec: ArchSpec, opts: DipOptions | None = None,
            clean: np.ndarray | None = None,
            stop: Callable[[TrajectoryRecord], bool] | None = None) -> TrainTrajectory:
    """Fit ``G(z)`` to ``noisy`` under MSE with Adam and record the trajectory.

    A record is taken every ``log_every`` iterations and at the last one. Each
    record holds the loss of that iteration's forward pass and, if ``clean`` is
    given, PSNR/SSIM of the same output. ``stop`` may end the run early; it is
    called with each new record.
    """
    opts = opts or DipOptions()
    noisy = np.asarray(noisy, dtype=np.float64)
    if noisy.ndim == 2:
        noisy = noisy[None]
    if clean is not None:
        clean = np.asarray(clean, dtype=np.float64)
        if clean.ndim == 2:
            clean = clean[None]
        if clean.shape != noisy.shape:
            raise ValueError(f"clean image shape {clean.shape} differs from noisy {noisy.shape}")
    channels, height, width = noisy.shape
    if spec.output_channels != channels:
        raise ArchSpecError(f"spec produces {spec.output_channels} channels but the image has {channels}")
    z = Tensor(input_noise(spec.input_shape(height, width), opts.input_noise_scale, opts.seed))
    target = Tensor(noisy)
    net = build_network(spec, seed=opts.seed)
    optimizer = Adam(net.parameters(), lr=opts.lr)

    traj = TrainTrajectory()
    best = -math.inf
    out = None
    for it in range(1, opts.iterations + 1):
        optimizer.zero_grad()
        pred = net(z)
        loss = ad.mse_loss(pred, target)
        value = float(loss.data)
        if not math.isfinite(value):
            raise DivergenceError(it, value)
        ad.backward(loss)
        out = pred.data
        logged = it % opts.log_every == 0 or it == opts.iterations
        if logged:
            rec = TrajectoryRecord(it, value)
            if clean is not None:
                rec.psnr = psnr(out, clean)
                rec.ssim = ssim(out, clean, data_range=1.0)
                if rec.psnr > best:
                    best = rec.psnr
                    traj.best_psnr_iteration = it
                    traj.best_output = out.copy()
            traj.records.append(rec)
            if stop is not None and stop(rec):
                break
        optimizer.step()
    traj.final_output = out.copy()
    if traj.best_output is None:
        traj.best_output = traj.final_output
    return traj


def peak_iteration(trajectory: TrainTrajectory) -> int:
    """Iteration of maximum PSNR; the earliest one wins ties."""
    best_it, best = None, -math.inf
    for r in trajectory.records:
        if r.psnr is not None and r.psnr > best:
            best_it, best = r.iteration, r.psnr
    if best_it is None:
        raise ValueError("trajectory has no PSNR records; pass a clean image to run_dip")
    return best_it


# ----------------------------------------------------------------------------
# grids of runs


@dataclass
class RunTask:
    """One denoising run of a grid, labelled for the output table."""

    labels: dict
    clean: np.ndarray
    noise: NoiseSpec
    spec: ArchSpec
    opts: DipOptions


RUN_FIELDS = ("peak_psnr", "final_psnr", "peak_iteration", "peak_ssim", "final_ssim")


def execute(task: RunTask) -> dict:
    """Run one task; failures are reported in the row rather than raised."""
    row = dict(task.labels)
    try:
        noisy = task.noise.apply(task.clean)
        traj = run_dip(noisy, task.spec, task.opts, clean=task.clean)
        row.update(traj.summary())
        row["noisy_psnr"] = psnr(noisy, task.clean)
        row["error"] = ""
    except (ArithmeticError, ValueError) as exc:
        row.update({k: None for k in RUN_FIELDS})
        row["noisy_psnr"] = None
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def run_tasks(tasks: Sequence[RunTask], jobs: int = 1) -> list[dict]:
    """Execute tasks, in parallel when ``jobs > 1``; rows keep the task order."""
    if jobs <= 1 or len(tasks) <= 1:
        return [execute(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(execute, tasks))


def aggregate(rows: Sequence[dict], group_keys: Sequence[str]) -> list[dict]:
    """Median of each metric per group, skipping failed runs.

    Groups appear in order of first occurrence and carry ``seed = "median"``.
    """
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in group_keys), []).append(row)
    out = []
    for key, members in groups.items():
        agg = dict(zip(group_keys, key))
        agg["seed"] = "median"
        ok = [m for m in members if not m.get("error")]
        for name in RUN_FIELDS + ("noisy_psnr",):
            vals = [m[name] for m in ok if m.get(name) is not None]
            agg[name] = statistics.median(vals) if vals else None
        agg["error"] = "" if ok else "all runs failed"
        out.append(agg)
    return out


def sweep_upsamplers(clean: np.ndarray, noise: NoiseSpec, base: ArchSpec,
                     upsamplers: Sequence[UpsamplerSpec | str], seeds: Sequence[int],
                     opts: DipOptions | None = None, jobs: int = 1) -> tuple[list[dict], list[dict]]:
    """Denoise ``clean + noise`` once per upsampler and seed.

    Returns per-run rows and per-upsampler median rows. The noise realization
    is shared by all runs; ``seed`` only changes the network initialization
    and input.
    """
    opts = opts or DipOptions()
    ups = [named_upsampler(u) if isinstance(u, str) else u for u in upsamplers]
    tasks = []
    for up in ups:
        spec = replace(base, upsampler=up)
        for seed in seeds:
            tasks.append(RunTask({"upsampler": up.label, "seed": seed}, clean, noise, spec,
                                 replace(opts, seed=seed)))
    rows = run_tasks(tasks, jobs)
    return rows, aggregate(rows, ["upsampler"])
