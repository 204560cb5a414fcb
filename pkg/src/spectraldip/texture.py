"""Texture scoring: GLCM statistics, radially averaged power spectra, width classification."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from PIL import Image

WIDTH_CLASSES = (32, 64, 128)
GLCM_LEVELS = 16
PSD_BINS = 32
PSD_SIZE = 256
LOG_EPS = 1e-12
UNDEFINED_VARIANCE = "undefined-variance"

ANGLE_OFFSETS = {0: (1, 0), 45: (1, -1), 90: (0, -1), 135: (-1, -1)}

# mean log10 power of the upper half of the radial spectrum of a [0,1] image, 256x256
DEFAULT_THRESHOLDS = (0.8, 1.0)
CLASSIFIER_FORMAT = "spectraldip.width-classifier"
CLASSIFIER_VERSION = 1


class UndefinedVarianceError(ValueError):
    """GLCM correlation is undefined because the quantized image has no variance."""


class ClassifierError(ValueError):
    pass


# ----------------------------------------------------------------------------
# grayscale handling


def to_gray(image: np.ndarray) -> np.ndarray:
    """Luminance (0.299, 0.587, 0.114) of a (3,H,W)/(H,W,3) image; 2D and 1-channel pass through."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim != 3:
        raise ValueError(f"expected a 2D or 3D image, got shape {img.shape}")
    planes = img if img.shape[0] in (1, 3, 4) else np.moveaxis(img, -1, 0)
    if planes.shape[0] == 1:
        return planes[0]
    planes = planes[:3]
    if np.array_equal(planes[0], planes[1]) and np.array_equal(planes[0], planes[2]):
        return planes[0].copy()
    return 0.299 * planes[0] + 0.587 * planes[1] + 0.114 * planes[2]


def quantize(gray: np.ndarray, levels: int, value_range: tuple[float, float] = (0.0, 255.0)) -> np.ndarray:
    lo, hi = value_range
    q = np.floor((np.asarray(gray, dtype=np.float64) - lo) * levels / (hi - lo))
    return np.clip(q, 0, levels - 1).astype(np.intp)


# ----------------------------------------------------------------------------
# GLCM


def glcm(image: np.ndarray, offset: tuple[int, int] = (1, 0), levels: int = GLCM_LEVELS,
         value_range: tuple[float, float] = (0.0, 255.0), symmetric: bool = True) -> np.ndarray:
    """Normalized co-occurrence matrix for pixel pairs ``(r, c)`` and ``(r + dy, c + dx)``.

    ``offset`` is ``(dx, dy)`` in image coordinates, rows growing downwards; values are
    binned uniformly over ``value_range``.
    """
    if not 2 <= levels <= 256:
        raise ValueError("levels must lie in [2, 256]")
    q = quantize(image, levels, value_range)
    if q.ndim != 2:
        raise ValueError("glcm expects a 2D gray image")
    dx, dy = offset
    h, w = q.shape
    if abs(dx) >= w or abs(dy) >= h:
        raise ValueError(f"offset {offset} does not fit in a {h}x{w} image")
    a = q[max(0, -dy):h - max(0, dy), max(0, -dx):w - max(0, dx)]
    b = q[max(0, dy):h + min(0, dy), max(0, dx):w + min(0, dx)]
    counts = np.zeros((levels, levels))
    np.add.at(counts, (a.ravel(), b.ravel()), 1.0)
    if symmetric:
        counts = counts + counts.T
    return counts / counts.sum()


@dataclass(frozen=True)
class GlcmFeatures:
    correlation_0: float | None
    homogeneity_45: float
    contrast_0: float


def _glcm_stats(p: np.ndarray) -> tuple[float, float, float | None]:
    i, j = np.indices(p.shape)
    contrast = float(np.sum(p * (i - j) ** 2))
    homogeneity = float(np.sum(p / (1.0 + np.abs(i - j))))
    mu_i = np.sum(i * p)
    mu_j = np.sum(j * p)
    var_i = np.sum(p * (i - mu_i) ** 2)
    var_j = np.sum(p * (j - mu_j) ** 2)
    if var_i <= 0 or var_j <= 0:
        correlation = None
    else:
        correlation = float(np.sum(p * (i - mu_i) * (j - mu_j)) / np.sqrt(var_i * var_j))
    return contrast, homogeneity, correlation


def glcm_features(image: np.ndarray, levels: int = GLCM_LEVELS,
                  value_range: tuple[float, float] = (0.0, 255.0)) -> GlcmFeatures:
    """Correlation and contrast at 0 degrees, homogeneity at 45 degrees.

    Correlation is ``None`` when the quantized image has zero variance.
    """
    p0 = glcm(image, ANGLE_OFFSETS[0], levels, value_range)
    p45 = glcm(image, ANGLE_OFFSETS[45], levels, value_range)
    contrast, _, correlation = _glcm_stats(p0)
    _, homogeneity, _ = _glcm_stats(p45)
    return GlcmFeatures(correlation, homogeneity, contrast)


# ----------------------------------------------------------------------------
# radial PSD


def power_spectrum(image: np.ndarray) -> np.ndarray:
    """|DFT|^2 with DC moved to the centre."""
    return np.abs(np.fft.fftshift(np.fft.fft2(np.asarray(image, dtype=np.float64)))) ** 2


def radial_psd(image: np.ndarray, n_bins: int = PSD_BINS) -> np.ndarray:
    """Azimuthal mean of the power spectrum in ``n_bins`` radial bins, as log10(power + 1e-12).

    Frequencies with radius ``r < N/2`` fall in bin ``floor(r * n_bins / (N/2))``; the
    corners beyond the inscribed circle are dropped. Non-square images are zero padded.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("radial_psd expects a 2D gray image")
    h, w = img.shape
    n = max(h, w)
    if (h, w) != (n, n):
        img = np.pad(img, ((0, n - h), (0, n - w)))
    if not 1 <= n_bins <= n // 2:
        raise ValueError(f"n_bins must lie in [1, {n // 2}] for side {n}")
    power = power_spectrum(img)
    freqs = np.arange(n) - n // 2
    r = np.hypot(freqs[:, None], freqs[None, :])
    r_max = n / 2.0
    inside = r < r_max
    bins = np.floor(r[inside] * n_bins / r_max).astype(np.intp)
    sums = np.bincount(bins, weights=power[inside], minlength=n_bins)
    counts = np.bincount(bins, minlength=n_bins)
    return np.log10(sums / counts + LOG_EPS)


def resize_square(gray: np.ndarray, size: int = PSD_SIZE) -> np.ndarray:
    if gray.shape == (size, size):
        return gray.astype(np.float64, copy=True)
    img = Image.fromarray(np.asarray(gray, dtype=np.float32), mode="F")
    return np.asarray(img.resize((size, size), Image.BICUBIC), dtype=np.float64)


# ----------------------------------------------------------------------------
# feature record


@dataclass
class TextureFeatures:
    glcm_correlation_0: float | None
    glcm_homogeneity_45: float
    glcm_contrast_0: float
    radial_psd: np.ndarray

    @property
    def undefined_variance(self) -> bool:
        return self.glcm_correlation_0 is None

    def vector(self) -> np.ndarray:
        if self.glcm_correlation_0 is None:
            raise UndefinedVarianceError("GLCM correlation is undefined for a zero-variance image")
        return np.concatenate([[self.glcm_correlation_0, self.glcm_homogeneity_45, self.glcm_contrast_0],
                               self.radial_psd])

    def to_dict(self) -> dict:
        return {
            "glcm_correlation_0": UNDEFINED_VARIANCE if self.glcm_correlation_0 is None else self.glcm_correlation_0,
            "glcm_homogeneity_45": self.glcm_homogeneity_45,
            "glcm_contrast_0": self.glcm_contrast_0,
            "radial_psd": [float(v) for v in self.radial_psd],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TextureFeatures":
        corr = d["glcm_correlation_0"]
        return cls(None if corr == UNDEFINED_VARIANCE else float(corr), float(d["glcm_homogeneity_45"]),
                   float(d["glcm_contrast_0"]), np.asarray(d["radial_psd"], dtype=np.float64))


def texture_features(image: np.ndarray, levels: int = GLCM_LEVELS, n_bins: int = PSD_BINS,
                     psd_size: int = PSD_SIZE) -> TextureFeatures:
    """Features of an image with intensities in [0, 1] (gray or RGB, channel-first or last).

    GLCM statistics use the image on the 8-bit scale; the radial PSD is taken on the
    [0, 1] scale after a bicubic resize to ``psd_size`` squared.
    """
    gray = to_gray(image)
    g = glcm_features(gray * 255.0, levels)
    psd = radial_psd(resize_square(gray, psd_size), n_bins)
    return TextureFeatures(g.correlation_0, g.homogeneity_45, g.contrast_0, psd)


# ----------------------------------------------------------------------------
# width classification


class ClassifierMode(str, enum.Enum):
    RULE_BASED = "rule-based"
    LINEAR = "linear"


@dataclass
class WidthClassifier:
    mode: ClassifierMode = ClassifierMode.RULE_BASED
    classes: tuple[int, ...] = WIDTH_CLASSES
    thresholds: tuple[float, float] = DEFAULT_THRESHOLDS
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    feature_mean: np.ndarray | None = None
    feature_std: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mode = ClassifierMode(self.mode)
        self.classes = tuple(int(c) for c in self.classes)

    @property
    def n_features(self) -> int | None:
        return None if self.weights is None else self.weights.shape[1]

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        """Per-class scores for raw feature rows ``x`` of shape (n, d) or (d,)."""
        if self.mode is not ClassifierMode.LINEAR:
            raise ClassifierError("decision scores exist only for linear classifiers")
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.weights.shape[1]:
            raise ClassifierError(f"expected {self.weights.shape[1]} features, got {x.shape[1]}")
        z = (x - self.feature_mean) / self.feature_std
        return z @ self.weights.T + self.bias

    def to_dict(self) -> dict:
        d = {
            "format": CLASSIFIER_FORMAT,
            "version": CLASSIFIER_VERSION,
            "mode": self.mode.value,
            "classes": list(self.classes),
            "thresholds": list(self.thresholds),
            "metadata": self.metadata,
        }
        if self.mode is ClassifierMode.LINEAR:
            d.update(
                weights=self.weights.tolist(),
                bias=self.bias.tolist(),
                feature_mean=self.feature_mean.tolist(),
                feature_std=self.feature_std.tolist(),
            )
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WidthClassifier":
        if d.get("format") != CLASSIFIER_FORMAT:
            raise ClassifierError("not a width-classifier document")
        if int(d.get("version", -1)) != CLASSIFIER_VERSION:
            raise ClassifierError(f"unsupported classifier version {d.get('version')}")
        arr = {k: np.asarray(d[k], dtype=np.float64) for k in ("weights", "bias", "feature_mean", "feature_std") if k in d}
        return cls(mode=d["mode"], classes=tuple(d["classes"]), thresholds=tuple(d["thresholds"]),
                   metadata=d.get("metadata", {}), **arr)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "WidthClassifier":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def high_frequency_energy(features: TextureFeatures) -> float:
    psd = features.radial_psd
    return float(np.mean(psd[len(psd) // 2:]))


def classify_width(features: TextureFeatures, model: WidthClassifier | None = None) -> int:
    """Predict a channel width from texture features.

    Rule-based: the mean upper-half radial PSD against two thresholds. Linear: argmax
    of per-class scores, ties going to the smaller width.
    """
    model = model or WidthClassifier()
    if model.mode is ClassifierMode.RULE_BASED:
        e = high_frequency_energy(features)
        lo, hi = model.thresholds
        small, mid, large = sorted(model.classes)[:3]
        return small if e < lo else mid if e < hi else large
    scores = model.decision_function(features.vector())[0]
    order = np.argsort(model.classes, kind="stable")
    best = order[0]
    for idx in order[1:]:
        if scores[idx] > scores[best]:
            best = idx
    return model.classes[best]


def _canonical_order(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # lexsort's primary key is the last one: feature 0, then 1, ..., then the label
    return np.lexsort([y] + [x[:, k] for k in range(x.shape[1] - 1, -1, -1)])


def fit_linear_ovr(x: np.ndarray, y: np.ndarray, classes: Sequence[int], l2: float = 1e-2,
                   epochs: int = 2000, lr: float = 0.1, seed: int = 0) -> WidthClassifier:
    """One-vs-rest linear classifiers on standardized features, hinge loss plus L2.

    Full-batch subgradient descent on rows sorted into a canonical order and then
    shuffled with ``seed``, so the result does not depend on the input order.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    order = _canonical_order(x, y)
    perm = np.random.default_rng(seed).permutation(len(order))
    x, y = x[order][perm], y[order][perm]
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std < 1e-12] = 1.0
    z = (x - mean) / std
    n, d = z.shape
    weights = np.zeros((len(classes), d))
    bias = np.zeros(len(classes))
    for c_idx, c in enumerate(classes):
        t = np.where(y == c, 1.0, -1.0)
        w = np.zeros(d)
        b = 0.0
        for epoch in range(epochs):
            margin = t * (z @ w + b)
            active = margin < 1.0
            gw = l2 * w - (t[active, None] * z[active]).sum(axis=0) / n
            gb = -t[active].sum() / n
            step = lr / np.sqrt(1.0 + epoch)
            w -= step * gw
            b -= step * gb
        weights[c_idx] = w
        bias[c_idx] = b
    return WidthClassifier(ClassifierMode.LINEAR, tuple(classes), weights=weights, bias=bias,
                           feature_mean=mean, feature_std=std)


def train_width_classifier(dataset: Sequence[tuple[TextureFeatures, int]], seed: int = 0,
                           classes: Sequence[int] = WIDTH_CLASSES, folds: int = 5,
                           repeats: int = 10, **fit_kwargs) -> WidthClassifier:
    """Fit the linear classifier on all of ``dataset``; record its cross-validated micro AUC."""
    x = np.array([f.vector() for f, _ in dataset])
    y = np.array([int(w) for _, w in dataset])
    if len(set(y.tolist())) < 2:
        raise ClassifierError("training needs at least two width classes")
    unknown = set(y.tolist()) - set(classes)
    if unknown:
        raise ClassifierError(f"labels {sorted(unknown)} are not among classes {list(classes)}")
    model = fit_linear_ovr(x, y, classes, seed=seed, **fit_kwargs)
    auc = cross_validated_auc(x, y, classes, folds=folds, repeats=repeats, seed=seed, **fit_kwargs)
    model.metadata = {"cv_micro_auc": auc, "folds": folds, "repeats": repeats, "n_samples": int(len(y)),
                      "seed": seed}
    return model


def binary_auc(labels: np.ndarray, scores: np.ndarray) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic (ties count half)."""
    from scipy.stats import rankdata

    labels = np.asarray(labels, dtype=bool)
    n_pos = labels.sum()
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative samples")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def stratified_folds(y: np.ndarray, folds: int, rng: np.random.Generator) -> np.ndarray:
    assignment = np.empty(len(y), dtype=np.intp)
    start = 0
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(len(idx))]
        assignment[idx] = (start + np.arange(len(idx))) % folds
        start += len(idx)
    return assignment


def cross_validated_auc(x: np.ndarray, y: np.ndarray, classes: Sequence[int] = WIDTH_CLASSES,
                        folds: int = 5, repeats: int = 10, seed: int = 0, **fit_kwargs) -> float:
    """Micro-averaged one-vs-rest AUC of held-out decision scores, mean over repeats."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    order = _canonical_order(x, y)
    x, y = x[order], y[order]
    rng = np.random.default_rng(seed)
    aucs = []
    onehot = (y[:, None] == np.asarray(classes)[None, :])
    for _ in range(repeats):
        assignment = stratified_folds(y, folds, rng)
        scores = np.zeros((len(y), len(classes)))
        for k in range(folds):
            test = assignment == k
            if not test.any():
                continue
            train = ~test
            if len(set(y[train].tolist())) < 2:
                raise ClassifierError("a training fold contains a single class")
            model = fit_linear_ovr(x[train], y[train], classes, seed=seed, **fit_kwargs)
            scores[test] = model.decision_function(x[test])
        aucs.append(binary_auc(onehot.ravel(), scores.ravel()))
    return float(np.mean(aucs))


def cross_validated_predictions(x: np.ndarray, y: np.ndarray, classes: Sequence[int] = WIDTH_CLASSES,
                                folds: int = 5, seed: int = 0, **fit_kwargs) -> np.ndarray:
    """Held-out width predictions, returned in the input order."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    order = _canonical_order(x, y)
    assignment = stratified_folds(y[order], folds, np.random.default_rng(seed))
    pred = np.zeros(len(y), dtype=np.int64)
    for k in range(folds):
        test = order[assignment == k]
        train = order[assignment != k]
        if test.size == 0:
            continue
        model = fit_linear_ovr(x[train], y[train], classes, seed=seed, **fit_kwargs)
        for i in test:
            f = TextureFeatures(x[i, 0], x[i, 1], x[i, 2], x[i, 3:])
            pred[i] = classify_width(f, model)
    return pred
