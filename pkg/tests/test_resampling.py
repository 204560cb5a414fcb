import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spectraldip import autodiff as ad
from spectraldip.autodiff import Tensor
from spectraldip.resampling import (
    BILINEAR_KERNEL, LPF_BANK, NN_KERNEL, LPFDesignError, UpsamplerKind, UpsamplerSpec, design_kaiser,
    design_lpf, dft, freq_response, named_upsampler, passband_deviation_db, upsample, upsample_adjoint,
    upsample_array, upsample_axis, upsample_axis_direct, upsampling_matrix, verify_spectrum_replication,
    zero_insert,
)

from conftest import numeric_grad, relative_error


# ----------------------------------------------------------------------------
# zero insertion and spectra


def test_zero_insert_values():
    np.testing.assert_array_equal(zero_insert(np.array([1.0, 2, 3, 4]), 2), [1, 0, 2, 0, 3, 0, 4, 0])
    np.testing.assert_array_equal(zero_insert(np.zeros(5), 2), np.zeros(10))
    np.testing.assert_array_equal(zero_insert(np.array([1.0, 2]), 3), [1, 0, 0, 2, 0, 0])


def test_zero_insert_2d():
    x = np.arange(4.0).reshape(2, 2)
    up = zero_insert(x, 2, axes=(0, 1))
    assert up.shape == (4, 4)
    np.testing.assert_array_equal(up[::2, ::2], x)
    assert np.count_nonzero(up) == 3  # x[0, 0] is zero


def test_dft_matches_numpy(rng):
    x = rng.standard_normal(37)
    np.testing.assert_allclose(dft(x), np.fft.fft(x), atol=1e-10)


def test_replication_length_16(rng):
    x = rng.standard_normal(16)
    up = dft(zero_insert(x, 2))
    base = dft(x)
    assert np.max(np.abs(up - base[np.arange(32) % 16])) < 1e-10


def test_replication_random_64(rng):
    assert verify_spectrum_replication(rng.standard_normal(64)) < 1e-9


def test_replication_constant_mirror():
    c = 2.5
    up = dft(zero_insert(np.array([c, c]), 2))
    assert abs(up[0]) == pytest.approx(abs(up[2]))
    assert abs(up[0]) == pytest.approx(2 * c)
    assert abs(up[1]) < 1e-12 and abs(up[3]) < 1e-12


def test_replication_pure_tone():
    n, k = 16, 3
    x = np.exp(2j * np.pi * k * np.arange(n) / n)
    spectrum = np.abs(dft(zero_insert(x, 2)))
    assert set(np.flatnonzero(spectrum > 1e-9)) == {k, k + n}


@given(st.integers(2, 128), st.integers(0, 2**31 - 1))
def test_replication_property(n, seed):
    x = np.random.default_rng(seed).standard_normal(n)
    assert verify_spectrum_replication(x) < 1e-9


def test_replication_needs_two_samples():
    with pytest.raises(ValueError):
        verify_spectrum_replication(np.ones(1))


# ----------------------------------------------------------------------------
# filter design and responses


def test_design_fixed_kernels():
    k, g = design_lpf("nn")
    np.testing.assert_array_equal(k, [1, 1])
    assert g == 1.0
    k, g = design_lpf("bilinear")
    np.testing.assert_array_equal(k, [0.5, 1, 0.5])
    assert g == 1.0


def test_nn_response_half_band():
    resp = freq_response(NN_KERNEL, 1.0, 513)
    i = np.argmin(np.abs(resp.omega - math.pi / 2))
    assert resp.omega[i] == pytest.approx(math.pi / 2)
    assert resp.magnitude_db[i] == pytest.approx(20 * math.log10(math.sqrt(2) / 2), abs=1e-12)
    # closed form 2|cos(w/2)| relative to DC
    np.testing.assert_allclose(resp.magnitude, np.maximum(np.abs(np.cos(resp.omega / 2)), 1e-15), atol=1e-12)


def test_bilinear_nyquist_null():
    resp = freq_response(BILINEAR_KERNEL, 1.0, 512)
    assert resp.magnitude[-1] < 1e-12
    assert resp.omega[-1] == pytest.approx(math.pi)


def test_delta_is_flat():
    resp = freq_response(np.array([1.0]), 1.0, 128)
    np.testing.assert_allclose(resp.magnitude_db, 0.0, atol=1e-12)


def test_response_shape_and_order():
    resp = freq_response(BILINEAR_KERNEL, 1.0, 200)
    assert resp.omega.shape == resp.magnitude_db.shape == (200,)
    assert np.all(np.diff(resp.omega) > 0)


def test_response_errors():
    with pytest.raises(ValueError):
        freq_response(np.zeros(3))
    with pytest.raises(ValueError):
        freq_response(NN_KERNEL, 1.0, 32)


@pytest.mark.parametrize("db", [14, 15, 60, 100])
def test_kaiser_stopband_target(db):
    kernel, gain = design_lpf(db)
    resp = freq_response(kernel, gain, 4096)
    assert resp.peak_db(0.6 * math.pi) <= -db + 1.0
    assert kernel.sum() * gain == pytest.approx(2.0)
    np.testing.assert_allclose(kernel, kernel[::-1], atol=1e-15)


@pytest.mark.parametrize("db", [14, 15])
def test_kaiser_matches_nn_passband(db):
    kernel, _ = design_lpf(db)
    assert passband_deviation_db(kernel) < 0.03


def test_kaiser_has_nyquist_null():
    for db in (14, 60, 100):
        kernel, _ = design_lpf(db)
        assert freq_response(kernel, 1.0, 512).magnitude[-1] < 1e-9


def test_attenuation_ordering_at_three_quarters_pi():
    def at(kernel):
        resp = freq_response(kernel, 1.0, 1025)
        return resp.magnitude_db[np.argmin(np.abs(resp.omega - 0.75 * math.pi))]

    k60, _ = design_lpf(60)
    k100, _ = design_lpf(100)
    assert at(k100) < at(k60) < at(BILINEAR_KERNEL) < at(NN_KERNEL)


def test_bank_stopband_energy_ordering():
    energies = {}
    for name in LPF_BANK:
        up = named_upsampler(name)
        resp = freq_response(up.kernel, up.gain, 2048)
        energies[name] = float(np.sum(resp.magnitude[resp.omega >= 0.6 * math.pi] ** 2))
    assert max(energies, key=energies.get) == "nn"
    assert min(energies, key=energies.get) == "k100"


def test_design_rejects_bad_targets():
    with pytest.raises(LPFDesignError):
        design_kaiser(5.0)
    with pytest.raises(LPFDesignError):
        design_kaiser(60.0, passband_edge=0.9 * math.pi, transition_width=0.2 * math.pi)


def test_design_reports_achievable_attenuation():
    with pytest.raises(LPFDesignError) as info:
        design_kaiser(100.0, transition_width=0.01 * math.pi, max_taps=31)
    assert info.value.achievable_db is not None
    assert 0 <= info.value.achievable_db < 100


# ----------------------------------------------------------------------------
# upsampler specs


def test_named_upsamplers():
    assert named_upsampler("nn").kind is UpsamplerKind.NEAREST
    assert named_upsampler("k60").stopband_db == 60
    assert named_upsampler("kaiser:15").label == "k15"
    assert named_upsampler("none").kind is UpsamplerKind.NONE
    with pytest.raises(ValueError):
        named_upsampler("lanczos")


@pytest.mark.parametrize("name", list(LPF_BANK) + ["transposed"])
def test_dc_gain_equals_factor(name):
    up = named_upsampler(name)
    assert up.effective_kernel.sum() == pytest.approx(up.factor)


@pytest.mark.parametrize("name", list(LPF_BANK) + ["none", "transposed"])
def test_spec_round_trip(name):
    up = named_upsampler(name)
    back = UpsamplerSpec.from_dict(up.to_dict())
    assert back.kind is up.kind and back.label == up.label
    np.testing.assert_array_equal(back.kernel, up.kernel)


# ----------------------------------------------------------------------------
# the upsampling operator


def test_nn_upsample_row():
    x = np.array([[[1.0, 2.0]]])
    out = upsample_axis(x, NN_KERNEL, 2, -1)
    np.testing.assert_array_equal(out, [[[1, 1, 2, 2]]])


def test_bilinear_upsample_row():
    out = upsample_axis(np.array([[1.0, 3.0, 5.0]]), BILINEAR_KERNEL, 2, -1)
    np.testing.assert_allclose(out, [[1, 2, 3, 4, 5, 2.5]])  # last sample sees the zero pad


@pytest.mark.parametrize("name", ["nn", "bilinear", "k14", "k60", "k100"])
def test_matrix_matches_direct(name, rng):
    up = named_upsampler(name)
    x = rng.standard_normal((2, 5, 7))
    for axis in (-1, -2):
        np.testing.assert_allclose(upsample_axis(x, up.kernel, 2, axis),
                                   upsample_axis_direct(x, up.kernel, 2, axis), atol=1e-14)


@pytest.mark.parametrize("name", LPF_BANK)
def test_constant_preserved_in_interior(name):
    up = named_upsampler(name)
    out = upsample_array(np.full((1, 64, 64), 0.7), up.effective_kernel, 2)
    margin = len(up.kernel)
    interior = out[0, margin:-margin, margin:-margin]
    np.testing.assert_allclose(interior, 0.7, atol=1e-12)


@given(st.sampled_from(["nn", "bilinear", "k15", "k60"]), st.integers(1, 3), st.integers(1, 9),
       st.integers(1, 9), st.integers(0, 2**31 - 1))
def test_adjoint_property(name, c, h, w, seed):
    up = named_upsampler(name)
    r = np.random.default_rng(seed)
    x = r.standard_normal((c, h, w))
    y = r.standard_normal((c, 2 * h, 2 * w))
    lhs = np.sum(upsample_array(x, up.kernel, 2) * y)
    rhs = np.sum(x * upsample_adjoint(y, up.kernel, 2))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_upsample_gradient_bilinear(rng):
    x = Tensor(rng.standard_normal((1, 3, 3)), requires_grad=True)
    spec = named_upsampler("bilinear")
    ad.backward(ad.sum_all(upsample(x, spec)))
    numeric = numeric_grad(lambda: float(upsample(Tensor(x.data), spec).data.sum()), x.data)
    assert relative_error(x.grad.ravel(), numeric) < 1e-6


def test_transposed_kernel_gradient(rng):
    spec = named_upsampler("transposed")
    x = Tensor(rng.standard_normal((2, 4, 3)), requires_grad=True)
    k = Tensor(BILINEAR_KERNEL + 0.01 * rng.standard_normal(3), requires_grad=True)
    probe = rng.standard_normal((2, 8, 6))

    def f():
        return float(np.sum(upsample(Tensor(x.data), spec, Tensor(k.data)).data * probe))

    ad.backward(ad.sum_all(ad.mul(upsample(x, spec, k), Tensor(probe))))
    assert relative_error(x.grad.ravel(), numeric_grad(f, x.data)) < 1e-6
    assert relative_error(k.grad, numeric_grad(f, k.data)) < 1e-6


def test_upsample_none_is_an_error():
    with pytest.raises(ValueError):
        upsample(Tensor(np.zeros((1, 2, 2))), named_upsampler("none"))


def test_upsampling_matrix_is_cached_and_readonly():
    a = upsampling_matrix(NN_KERNEL, 2, 8)
    b = upsampling_matrix(NN_KERNEL.copy(), 2, 8)
    assert a is b
    assert not a.flags.writeable
