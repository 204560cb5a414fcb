"""Command-line interface: analyze, denoise, spectrum, sweep, train-classifier.

Exit codes: 0 success, 1 experiment failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .arch import ArchSpec, ArchSpecError, Family, dip_baseline, param_count, recommend_arch
from .config import ConfigError, apply_config, load_manifest, read_config
from .engine import DipOptions, NoiseSpec, run_dip
from .experiments import PRESETS, custom_points, format_csv, run_sweep, sweep_csv
from .exemplars import EXEMPLARS, exemplar
from .imageio import ImageFormatError, center_crop_resize, load_image, save_image
from .metrics import psnr, ssim
from .resampling import (LPF_BANK, LPFDesignError, freq_response, named_upsampler,
                         verify_spectrum_replication)
from .texture import (ClassifierError, ClassifierMode, WidthClassifier, classify_width, texture_features,
                      train_width_classifier)

SEED_ENV = "SPECTRALDIP_SEED"


class UsageError(Exception):
    """Bad input; maps to exit code 2."""


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.replace(",", " ").split()]


def _str_list(text: str) -> list[str]:
    return [t for t in text.replace(",", " ").split()]


def _dump_json(doc: dict, path: str | None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _read_image(path: str, resize: int | None = None) -> np.ndarray:
    try:
        img = load_image(path)
    except FileNotFoundError:
        raise UsageError(f"cannot read image {path}: no such file") from None
    except (ImageFormatError, OSError) as exc:
        raise UsageError(f"cannot read image {path}: {exc}") from None
    return center_crop_resize(img, resize or None)


def _load_classifier(path: str | None) -> WidthClassifier | None:
    if not path:
        return None
    try:
        return WidthClassifier.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load classifier {path}: {exc}") from None


# ----------------------------------------------------------------------------
# analyze


def analyze_image(image: np.ndarray, family: str, classifier: WidthClassifier | None) -> dict:
    feats = texture_features(image)
    fallback = feats.undefined_variance and classifier is not None and classifier.mode is ClassifierMode.LINEAR
    model = WidthClassifier() if fallback or classifier is None else classifier
    spec = recommend_arch(feats, family, model, output_channels=image.shape[0])
    baseline = dip_baseline(output_channels=image.shape[0])
    count = param_count(spec)
    return {
        "texture_features": feats.to_dict(),
        "undefined_variance": feats.undefined_variance,
        "classifier_mode": model.mode.value,
        "classifier_fallback": fallback,
        "predicted_width": classify_width(feats, model),
        "recommended_arch": spec.to_dict(),
        "param_count": count,
        "baseline_param_count": param_count(baseline),
        "param_ratio": count / param_count(baseline),
        "image_shape": list(image.shape),
    }


def cmd_analyze(args) -> int:
    image = _read_image(args.input)
    report = analyze_image(image, args.family, _load_classifier(args.classifier))
    report["input"] = str(args.input)
    if args.arch_out:
        Path(args.arch_out).write_text(ArchSpec.from_dict(report["recommended_arch"]).to_json())
    _dump_json(report, args.out)
    return 0


# ----------------------------------------------------------------------------
# denoise


def _arch_for(args, image: np.ndarray) -> ArchSpec:
    if args.arch == "auto":
        d = analyze_image(image, args.family, _load_classifier(args.classifier))
        return ArchSpec.from_dict(d["recommended_arch"])
    try:
        spec = ArchSpec.from_json(Path(args.arch).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read architecture {args.arch}: {exc.strerror}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"invalid architecture {args.arch}: {exc}") from None
    if spec.output_channels != image.shape[0]:
        spec.output_channels = image.shape[0]
    return spec


def cmd_denoise(args) -> int:
    seed = args.seed
    image = _read_image(args.input, args.resize)
    clean = _read_image(args.clean, args.resize) if args.clean else None
    try:
        noise = NoiseSpec.parse(args.noise, seed=seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if noise.kind.value != "none":
        # the input is the clean image; synthesize the observation
        clean = image if clean is None else clean
        noisy = noise.apply(image)
    else:
        noisy = image
    if clean is not None and clean.shape != noisy.shape:
        raise UsageError(f"clean image shape {clean.shape} does not match input {noisy.shape}")
    # texture analysis describes the scene, so prefer the clean image when we have it
    spec = _arch_for(args, image if noise.kind.value != "none" else noisy)
    try:
        spec.check_size(*noisy.shape[1:])
        opts = DipOptions(iterations=args.iters, lr=args.lr, seed=seed, log_every=args.log_every)
    except (ArchSpecError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    traj = run_dip(noisy, spec, opts, clean=clean)
    result = traj.best_output if args.report == "best" else traj.final_output
    if args.log:
        rows = [{"iteration": r.iteration, "loss": r.loss, "psnr": r.psnr, "ssim": r.ssim} for r in traj.records]
        Path(args.log).write_text(format_csv(rows, ["iteration", "loss", "psnr", "ssim"]))
    if args.out:
        save_image(result, args.out)
    summary = {"arch": spec.to_dict(), "param_count": param_count(spec), "iterations": args.iters,
               "noise": noise.label, "seed": seed, "report": args.report,
               "final_loss": traj.records[-1].loss}
    if clean is not None:
        summary.update(traj.summary())
        summary["noisy_psnr"] = psnr(noisy, clean)
        summary["reported_psnr"] = psnr(result, clean)
        summary["reported_ssim"] = ssim(result, clean, data_range=1.0)
    _dump_json(summary, args.summary)
    return 0


# ----------------------------------------------------------------------------
# spectrum


def cmd_spectrum(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = _str_list(args.bank)
    try:
        ups = [(n, named_upsampler(n)) for n in names]
    except LPFDesignError as exc:
        print(f"spectraldip: filter design failed: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    kernel_rows = []
    for name, up in ups:
        if up.kind.value in ("none",):
            raise UsageError("the 'none' upsampler has no frequency response")
        resp = freq_response(up.kernel, up.gain, args.points)
        rows = [{"omega": float(w), "magnitude_db": float(m)} for w, m in zip(resp.omega, resp.magnitude_db)]
        (out / f"response_{name}.csv").write_text(format_csv(rows, ["omega", "magnitude_db"]))
        for i, tap in enumerate(up.effective_kernel):
            kernel_rows.append({"name": name, "tap": i, "value": float(tap)})
    (out / "kernels.csv").write_text(format_csv(kernel_rows, ["name", "tap", "value"]))
    rng = np.random.default_rng(args.seed)
    rep_rows = []
    for n in range(args.min_length, args.max_length + 1):
        x = rng.standard_normal(n)
        rep_rows.append({"n": n, "factor": 2, "residual": verify_spectrum_replication(x, 2)})
    (out / "replication.csv").write_text(format_csv(rep_rows, ["n", "factor", "residual"]))
    _dump_json({"bank": names, "points": args.points, "max_residual": max(r["residual"] for r in rep_rows),
                "files": sorted(p.name for p in out.glob("*.csv"))}, args.summary)
    return 0


# ----------------------------------------------------------------------------
# sweep


def _sweep_images(args) -> list[tuple[str, np.ndarray]]:
    if args.manifest:
        try:
            entries = load_manifest(args.manifest)
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
        return [(e.reference_path.name, _read_image(str(e.reference_path), args.resize)) for e in entries]
    name = args.exemplar or PRESETS.get(args.preset, PRESETS["filter-bank"]).exemplar
    if name not in EXEMPLARS:
        raise UsageError(f"unknown exemplar {name!r}")
    return [(name, center_crop_resize(exemplar(name), args.resize or None))]


def cmd_sweep(args) -> int:
    images = _sweep_images(args)
    channels = images[0][1].shape[0]
    if any(img.shape[0] != channels for _, img in images):
        raise UsageError("all sweep images must have the same channel count")
    if args.preset == "custom":
        points = custom_points(args.family, _int_list(args.depths), _int_list(args.widths),
                               _int_list(args.skips), _str_list(args.upsamplers), channels)
        iterations = args.iters or 500
        log_every = args.log_every or 25
        lr = args.lr or 0.01
    else:
        preset = PRESETS[args.preset]
        points = preset.build(channels)
        iterations = args.iters or preset.iterations
        log_every = args.log_every or preset.log_every
        lr = args.lr or preset.lr
    try:
        noise = NoiseSpec.parse(args.noise, seed=args.seed)
        opts = DipOptions(iterations=iterations, lr=lr, log_every=log_every)
        seeds = _int_list(args.seeds)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not seeds:
        raise UsageError("need at least one seed")
    rows, medians = run_sweep(images, points, noise, seeds, opts, jobs=args.jobs)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{args.preset}.csv").write_text(sweep_csv(rows, medians))
    failed = sum(1 for r in rows if r["error"])
    if failed:
        print(f"spectraldip: {failed} of {len(rows)} runs failed", file=sys.stderr)
    return 1 if failed == len(rows) else 0


# ----------------------------------------------------------------------------
# train-classifier


def cmd_train_classifier(args) -> int:
    try:
        entries = load_manifest(args.manifest)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    data = []
    for e in entries:
        if e.width_label is None:
            raise UsageError(f"{e.image_path}: manifest entry has no width_label")
        feats = texture_features(_read_image(str(e.image_path)))
        if feats.undefined_variance:
            print(f"spectraldip: skipping {e.image_path.name}: zero-variance image", file=sys.stderr)
            continue
        data.append((feats, e.width_label))
    try:
        model = train_width_classifier(data, seed=args.seed, folds=args.folds, repeats=args.repeats)
    except (ClassifierError, ValueError) as exc:
        raise UsageError(f"training failed: {exc}") from None
    model.save(args.out)
    _dump_json({"model": str(args.out), **model.metadata}, args.summary)
    return 0


# ----------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    seed = default_seed()
    parser = argparse.ArgumentParser(prog="spectraldip", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="key = value file; command-line flags take precedence")
        p.add_argument("--seed", type=int, default=seed, help=f"random seed (default ${SEED_ENV} or 0)")
        p.set_defaults(func=func)
        return p

    p = add("analyze", cmd_analyze, "texture features, predicted width and a recommended architecture")
    p.add_argument("--input", required=True)
    p.add_argument("--family", choices=[f.value for f in Family], default="hourglass")
    p.add_argument("--classifier", help="trained width classifier JSON (default: rule based)")
    p.add_argument("--out", help="report path (default stdout)")
    p.add_argument("--arch-out", help="also write the recommended architecture JSON here")

    p = add("denoise", cmd_denoise, "fit a deep image prior to one image")
    p.add_argument("--input", required=True)
    p.add_argument("--clean", help="clean reference for PSNR/SSIM tracking")
    p.add_argument("--arch", default="auto", help="architecture JSON file or 'auto'")
    p.add_argument("--family", choices=[f.value for f in Family], default="hourglass",
                   help="family used by --arch auto")
    p.add_argument("--classifier", help="width classifier used by --arch auto")
    p.add_argument("--noise", default="none", help="gaussian:SIGMA | poisson:ZETA | none; "
                   "with noise the input is treated as clean and corrupted")
    p.add_argument("--iters", type=int, default=3000)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--log-every", type=int, default=25)
    p.add_argument("--resize", type=int, default=128, help="center-crop and resize to N (0 keeps the size)")
    p.add_argument("--log", help="trajectory CSV path")
    p.add_argument("--out", help="output PNG path")
    p.add_argument("--report", choices=("final", "best"), default="final")
    p.add_argument("--summary", help="summary JSON path (default stdout)")

    p = add("spectrum", cmd_spectrum, "frequency responses, kernels and spectrum-replication residuals")
    p.add_argument("--bank", default=",".join(LPF_BANK))
    p.add_argument("--points", type=int, default=512)
    p.add_argument("--min-length", type=int, default=2)
    p.add_argument("--max-length", type=int, default=128)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--summary", help="summary JSON path (default stdout)")

    p = add("sweep", cmd_sweep, "run an experiment grid and write per-run and median CSV rows")
    p.add_argument("--preset", choices=sorted(PRESETS) + ["custom"], default="filter-bank")
    p.add_argument("--manifest", help="images to sweep (default: the preset's exemplar)")
    p.add_argument("--exemplar", choices=sorted(EXEMPLARS))
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--noise", default="gaussian:25")
    p.add_argument("--iters", type=int, default=0, help="0 uses the preset's budget")
    p.add_argument("--lr", type=float, default=0.0, help="0 uses the preset's learning rate")
    p.add_argument("--log-every", type=int, default=0, help="0 uses the preset's interval")
    p.add_argument("--resize", type=int, default=128)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--family", choices=[f.value for f in Family], default="hourglass")
    p.add_argument("--depths", default="2")
    p.add_argument("--widths", default="32")
    p.add_argument("--skips", default="0")
    p.add_argument("--upsamplers", default="bilinear")
    p.add_argument("--out-dir", required=True)

    p = add("train-classifier", cmd_train_classifier, "fit the linear width classifier on a labeled manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--summary", help="summary JSON path (default stdout)")
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        try:
            apply_config(sub, read_config(args.config))
        except ConfigError as exc:
            sub.error(str(exc))
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    except UsageError as exc:
        print(f"spectraldip: error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, ArchSpecError) as exc:
        print(f"spectraldip: run failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
