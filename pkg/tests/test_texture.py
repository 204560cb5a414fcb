import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spectraldip.texture import (
    UNDEFINED_VARIANCE, ClassifierError, ClassifierMode, TextureFeatures, UndefinedVarianceError,
    WidthClassifier, binary_auc, classify_width, cross_validated_auc, fit_linear_ovr, glcm, glcm_features,
    high_frequency_energy, power_spectrum, radial_psd, texture_features, to_gray, train_width_classifier,
)


# ----------------------------------------------------------------------------
# GLCM


def test_glcm_constant_image():
    p = glcm(np.full((6, 6), 100.0), levels=16)
    q = int(100 * 16 // 256)
    assert p[q, q] == 1.0
    assert np.count_nonzero(p) == 1


def test_glcm_checkerboard():
    board = np.array([[0.0, 1.0], [1.0, 0.0]])
    p = glcm(board, (1, 0), levels=2, value_range=(0.0, 2.0))
    np.testing.assert_allclose(p, [[0, 0.5], [0.5, 0]])


def test_glcm_checkerboard_by_enumeration():
    # oracle: count the horizontal pairs of a larger board directly
    board = (np.indices((4, 6)).sum(axis=0) % 2) * 255.0
    counts = np.zeros((2, 2))
    for r in range(4):
        for c in range(5):
            a, b = int(board[r, c] > 0), int(board[r, c + 1] > 0)
            counts[a, b] += 1
            counts[b, a] += 1
    np.testing.assert_allclose(glcm(board, (1, 0), levels=2), counts / counts.sum())


def test_glcm_45_degree_offset_pairs_up_right():
    img = np.zeros((3, 3))
    img[1, 0] = 255.0  # its 45-degree neighbour is (0, 1)
    img[0, 1] = 255.0
    p = glcm(img, (1, -1), levels=2, symmetric=False)
    assert p[1, 1] == pytest.approx(1 / 4)


@given(st.integers(2, 12), st.integers(2, 12), st.integers(2, 64), st.integers(0, 2**31 - 1))
def test_glcm_is_a_distribution(h, w, levels, seed):
    img = np.random.default_rng(seed).uniform(0, 255, size=(h, w))
    for offset in ((1, 0), (1, -1)):
        p = glcm(img, offset, levels)
        assert abs(p.sum() - 1.0) < 1e-12
        assert np.all(p >= 0)
        np.testing.assert_array_equal(p, p.T)


def test_glcm_offset_too_large():
    with pytest.raises(ValueError):
        glcm(np.zeros((1, 1)), (1, 0))
    with pytest.raises(ValueError):
        glcm(np.zeros((4, 4)), (1, 0), levels=1)


def test_features_constant_image():
    f = glcm_features(np.full((8, 8), 40.0))
    assert f.contrast_0 == 0.0
    assert f.homogeneity_45 == 1.0
    assert f.correlation_0 is None


def test_features_checkerboard():
    board = np.array([[0.0, 1.0], [1.0, 0.0]])
    f = glcm_features(board, levels=2, value_range=(0.0, 2.0))
    assert f.contrast_0 == pytest.approx(1.0)
    assert f.correlation_0 == pytest.approx(-1.0)


@given(st.integers(3, 16), st.integers(0, 2**31 - 1))
def test_homogeneity_bounds(n, seed):
    img = np.random.default_rng(seed).uniform(0, 255, size=(n, n))
    f = glcm_features(img)
    assert 0.0 < f.homogeneity_45 <= 1.0
    assert f.contrast_0 >= 0.0
    assert f.correlation_0 is None or -1.0 - 1e-12 <= f.correlation_0 <= 1.0 + 1e-12


# ----------------------------------------------------------------------------
# radial PSD


def test_psd_constant_image():
    psd = radial_psd(np.full((32, 32), 3.0), 16)
    assert psd[0] > 0
    np.testing.assert_allclose(psd[1:], np.log10(1e-12))


def test_psd_cosine_peak_by_brute_force():
    n = 32
    x = np.cos(2 * np.pi * np.arange(n) / 8)[None, :].repeat(n, axis=0)
    # oracle: explicit 2D DFT sum, then locate the strongest non-DC frequency
    k = np.arange(n)
    basis = np.exp(-2j * np.pi * np.outer(k, k) / n)
    spectrum = np.abs(basis @ x @ basis.T) ** 2
    ky, kx = np.unravel_index(np.argmax(spectrum), spectrum.shape)
    r = np.hypot(min(ky, n - ky), min(kx, n - kx))
    assert r == 4
    psd = radial_psd(x, n_bins=16)
    assert np.argmax(psd) == int(r * 16 / (n / 2))


def test_parseval(rng):
    img = rng.standard_normal((24, 24))
    power = power_spectrum(img)
    assert abs(power.sum() - img.size * np.sum(img ** 2)) <= 1e-9 * power.sum()


def test_psd_bins_limit():
    with pytest.raises(ValueError):
        radial_psd(np.zeros((16, 16)), 9)


def test_smooth_decays_faster_than_noise(rng):
    yy, xx = np.mgrid[0:128, 0:128] / 128.0
    smooth = 0.3 + 0.4 * xx * yy
    noise = rng.uniform(0, 1, size=(128, 128))
    a = texture_features(smooth).radial_psd
    b = texture_features(noise).radial_psd
    assert a[16] < b[16]


def test_natural_photo_psd_decays():
    data = pytest.importorskip("skimage.data")
    photo = data.camera() / 255.0
    psd = texture_features(photo).radial_psd
    smooth = np.convolve(psd, np.ones(3) / 3, mode="valid")  # smooth[i] covers bins i..i+2
    tail = smooth[2:]
    assert np.all(np.diff(tail) <= 1e-9)


# ----------------------------------------------------------------------------
# texture features


def test_gray_conversion():
    rgb = np.stack([np.full((2, 2), 1.0), np.zeros((2, 2)), np.zeros((2, 2))])
    np.testing.assert_allclose(to_gray(rgb), 0.299)
    np.testing.assert_allclose(to_gray(np.moveaxis(rgb, 0, -1)), 0.299)


def test_features_deterministic_and_gray_equivalent(rng):
    gray = rng.uniform(0, 1, size=(40, 40))
    a = texture_features(gray)
    b = texture_features(gray)
    c = texture_features(np.stack([gray] * 3))
    for f in (b, c):
        assert f.to_dict() == a.to_dict()


def test_features_round_trip(rng):
    f = texture_features(rng.uniform(0, 1, size=(32, 32)))
    g = TextureFeatures.from_dict(json.loads(json.dumps(f.to_dict())))
    np.testing.assert_array_equal(g.vector(), f.vector())


def test_undefined_variance_is_flagged():
    f = texture_features(np.full((32, 32), 0.5))
    assert f.undefined_variance
    assert f.to_dict()["glcm_correlation_0"] == UNDEFINED_VARIANCE
    with pytest.raises(UndefinedVarianceError):
        f.vector()


# ----------------------------------------------------------------------------
# width classification


def test_rule_based_constant_is_smallest():
    assert classify_width(texture_features(np.full((64, 64), 0.5))) == 32


def test_rule_based_white_noise_is_largest(rng):
    noise = rng.standard_normal((128, 128))  # unit variance
    assert classify_width(texture_features(noise)) == 128


def test_rule_based_thresholds_order(rng):
    model = WidthClassifier(thresholds=(-1.0, 0.0))
    feats = texture_features(rng.uniform(0, 1, size=(64, 64)))
    e = high_frequency_energy(feats)
    expected = 32 if e < -1 else 64 if e < 0 else 128
    assert classify_width(feats, model) == expected


@given(st.integers(0, 2**31 - 1))
def test_shift_invariance(seed):
    r = np.random.default_rng(seed)
    img = np.clip(0.4 + 0.1 * r.standard_normal((64, 64)), 0.05, 0.85)
    img = np.round(img * 255) / 255
    shifted = img + 10 / 255
    assert classify_width(texture_features(img)) == classify_width(texture_features(shifted))


def _blobs(n, rng, separation=3.0):
    x0 = rng.standard_normal((n, 4))
    x1 = rng.standard_normal((n, 4)) + separation
    return np.vstack([x0, x1]), np.array([32] * n + [128] * n)


def _features_from_rows(x):
    return [TextureFeatures(row[0], row[1], row[2], row[3:]) for row in x]


def test_linear_separable_training_accuracy(rng):
    x, y = _blobs(20, rng, separation=6.0)
    model = fit_linear_ovr(x, y, (32, 128))
    pred = [classify_width(f, model) for f in _features_from_rows(x)]
    assert np.mean(np.array(pred) == y) == 1.0


def test_training_is_order_independent(rng):
    x, y = _blobs(15, rng)
    data = list(zip(_features_from_rows(x), y))
    perm = rng.permutation(len(data))
    a = train_width_classifier(data, seed=7, classes=(32, 128), repeats=2)
    b = train_width_classifier([data[i] for i in perm], seed=7, classes=(32, 128), repeats=2)
    np.testing.assert_array_equal(a.weights, b.weights)
    np.testing.assert_array_equal(a.bias, b.bias)
    assert a.metadata == b.metadata


def test_training_needs_two_classes(rng):
    x, _ = _blobs(5, rng)
    with pytest.raises(ClassifierError):
        train_width_classifier(list(zip(_features_from_rows(x), [64] * len(x))))


def test_dimension_mismatch(rng):
    x, y = _blobs(10, rng)
    model = fit_linear_ovr(x, y, (32, 128))
    with pytest.raises(ClassifierError):
        classify_width(TextureFeatures(0.1, 0.2, 0.3, np.zeros(5)), model)


def test_ties_go_to_smaller_width():
    model = WidthClassifier(ClassifierMode.LINEAR, (32, 64, 128), weights=np.zeros((3, 4)), bias=np.zeros(3),
                            feature_mean=np.zeros(4), feature_std=np.ones(4))
    assert classify_width(TextureFeatures(0.0, 0.0, 0.0, np.zeros(1)), model) == 32


def test_classifier_save_load(tmp_path, rng):
    x, y = _blobs(10, rng)
    model = fit_linear_ovr(x, y, (32, 128))
    path = tmp_path / "model.json"
    model.save(path)
    back = WidthClassifier.load(path)
    np.testing.assert_array_equal(back.weights, model.weights)
    assert back.mode is ClassifierMode.LINEAR
    doc = json.loads(path.read_text())
    doc["version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(ClassifierError):
        WidthClassifier.load(path)


def test_binary_auc_against_pair_counting(rng):
    labels = rng.integers(0, 2, size=40).astype(bool)
    scores = np.round(rng.standard_normal(40), 1)  # rounding creates ties
    pos, neg = scores[labels], scores[~labels]
    oracle = np.mean([(p > q) + 0.5 * (p == q) for p in pos for q in neg])
    assert binary_auc(labels, scores) == pytest.approx(oracle, abs=1e-12)


def test_cv_auc_on_separable_data(rng):
    x, y = _blobs(15, rng, separation=5.0)
    assert cross_validated_auc(x, y, (32, 128), repeats=2) > 0.95
