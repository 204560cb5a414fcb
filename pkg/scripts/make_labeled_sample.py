"""Regenerate the labeled image sample used to train and evaluate the width classifier.

Every image is procedural. Its width label is found empirically: a 2-level
hourglass of each candidate width denoises a noisy copy, and the label is the
width whose best output over the run has the highest SSIM against the clean
image, averaged over a few network initializations.

    python scripts/make_labeled_sample.py --out src/spectraldip/data/sample
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from spectraldip.arch import ArchSpec, Family
from spectraldip.config import ManifestEntry, write_manifest
from spectraldip.engine import DipOptions, NoiseSpec, run_dip
from spectraldip.exemplars import coarse_image, fine_image
from spectraldip.experiments import format_csv
from spectraldip.imageio import load_image, save_image
from spectraldip.texture import WIDTH_CLASSES


def sample_images(size: int, per_kind: int) -> list[tuple[str, str, np.ndarray]]:
    """(name, texture class, image) triples: smooth scenes, medium and fine grating mosaics."""
    images = []
    for i in range(per_kind):
        images.append((f"smooth_{i:02d}", "coarse", coarse_image(size, 100 + i)))
    for i in range(per_kind):
        images.append((f"medium_{i:02d}", "fine", fine_image(size, 200 + i, patches=5, periods=(8.0, 16.0))))
    for i in range(per_kind):
        images.append((f"fine_{i:02d}", "fine", fine_image(size, 300 + i, patches=7, periods=(3.0, 6.0))))
    return images


def label_image(clean: np.ndarray, noise_seed: int, iterations: int, sigma: float,
                seeds: tuple[int, ...] = (0, 1, 2)) -> dict[int, float]:
    """Best SSIM within ``iterations`` steps for each candidate width, mean over network seeds."""
    noisy = NoiseSpec(sigma=sigma, seed=noise_seed).apply(clean)
    scores = {}
    for width in WIDTH_CLASSES:
        spec = ArchSpec(Family.HOURGLASS, depth_levels=2, width=width, output_channels=clean.shape[0])
        best = []
        for seed in seeds:
            traj = run_dip(noisy, spec, DipOptions(iterations=iterations, log_every=10, seed=seed), clean=clean)
            best.append(max(r.ssim for r in traj.records))
        scores[width] = float(np.mean(best))
    return scores


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--per-kind", type=int, default=6)
    p.add_argument("--iters", type=int, default=400)
    p.add_argument("--sigma", type=float, default=25.0)
    p.add_argument("--seeds", default="0,1,2", help="network seeds averaged per width")
    args = p.parse_args(argv)

    args.out.mkdir(parents=True, exist_ok=True)
    entries, rows = [], []
    for n, (name, texture, image) in enumerate(sample_images(args.size, args.per_kind)):
        path = args.out / f"{name}.png"
        save_image(image, path)
        # label what is stored on disk, after 8-bit rounding
        scores = label_image(load_image(path), n, args.iters, args.sigma,
                             tuple(int(v) for v in args.seeds.split(",")))
        label = max(WIDTH_CLASSES, key=lambda w: (scores[w], -w))
        entries.append(ManifestEntry(path, None, label, texture))
        rows.append({"image": path.name, **{f"ssim_w{w}": scores[w] for w in WIDTH_CLASSES}, "label": label})
        print(f"{name}: " + " ".join(f"w{w}={scores[w]:.4f}" for w in WIDTH_CLASSES) + f" -> {label}",
              file=sys.stderr, flush=True)
    write_manifest(entries, args.out / "manifest.csv")
    (args.out / "labels.csv").write_text(format_csv(rows))
    return 0


if __name__ == "__main__":
    sys.exit(main())
