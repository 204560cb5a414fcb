import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spectraldip import autodiff as ad
from spectraldip.arch import (
    ArchSpec, ArchSpecError, Block, Conv, Family, Upsample, build_network, conv_decoder_base, dip_baseline,
    param_count, recommend_arch,
)
from spectraldip.autodiff import Tensor
from spectraldip.resampling import named_upsampler
from spectraldip.texture import TextureFeatures, WidthClassifier, texture_features


def _enumerated(spec, seed=0):
    return sum(p.size for p in build_network(spec, seed).parameters())


def _forward(spec, h, w, seed=0):
    net = build_network(spec, seed)
    z = Tensor(np.random.default_rng(seed).uniform(0, 0.1, size=spec.input_shape(h, w)))
    return net(z).data


def test_single_conv_param_count():
    conv = Conv(3, 8, 3, 1, np.random.default_rng(0))
    assert sum(p.size for p in conv.params()) == 224


def test_conv_decoder_base_layout():
    spec = conv_decoder_base()
    net = build_network(spec)
    kinds = [type(layer).__name__ for layer in net.layers()]
    assert kinds.count("Block") == 6
    assert kinds.count("Upsample") == 5
    assert kinds[-1] == "Conv"
    assert net.head.weight.shape[:2] == (3, 128)
    assert all(b.conv.weight.shape[-1] == 3 and b.conv.weight.shape[0] == 128 for b in net.blocks)


def test_conv_decoder_base_count():
    count = param_count(conv_decoder_base())
    assert 750_000 <= count <= 1_000_000
    assert count == _enumerated(conv_decoder_base())


def test_mlp_decoder_count_matches_enumeration():
    spec = ArchSpec(Family.MLP_DECODER, depth_levels=3, width=64, num_conv_layers=4)
    assert spec.kernel_size == 1
    assert param_count(spec) == _enumerated(spec)


def test_hourglass_preserves_size():
    spec = ArchSpec(Family.HOURGLASS, depth_levels=2, width=128, skip_channels=[32, 0], output_channels=1)
    out = _forward(spec, 16, 16)
    assert out.shape == (1, 16, 16)


def test_seeds_control_initialization():
    spec = ArchSpec(Family.HOURGLASS, depth_levels=2, width=8)
    a = [p.data for p in build_network(spec, 1).parameters()]
    b = [p.data for p in build_network(spec, 1).parameters()]
    c = [p.data for p in build_network(spec, 2).parameters()]
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))
    assert any(x.tobytes() != y.tobytes() for x, y in zip(a, c))


def test_kaiming_uniform_bounds():
    conv = Conv(16, 4, 3, 1, np.random.default_rng(0))
    bound = np.sqrt(6.0 / (16 * 9))
    assert np.all(np.abs(conv.weight.data) <= bound)
    assert conv.weight.data.std() == pytest.approx(bound / np.sqrt(3), rel=0.15)
    np.testing.assert_array_equal(conv.bias.data, 0.0)


def test_divisibility_checked_before_allocation(monkeypatch):
    spec = ArchSpec(Family.HOURGLASS, depth_levels=3, width=8)
    with pytest.raises(ArchSpecError):
        spec.input_shape(20, 16)
    dec = ArchSpec(Family.CONV_DECODER, depth_levels=5, width=8)
    with pytest.raises(ArchSpecError):
        dec.check_size(48, 48)


def test_invalid_specs():
    with pytest.raises(ArchSpecError):
        ArchSpec(Family.HOURGLASS, depth_levels=0)
    with pytest.raises(ArchSpecError):
        ArchSpec(Family.HOURGLASS, upsampler=named_upsampler("none"))
    with pytest.raises(ArchSpecError):
        ArchSpec(Family.HOURGLASS, depth_levels=2, width=[8, 8, 8])
    with pytest.raises(ArchSpecError):
        ArchSpec(Family.CONV_DECODER, depth_levels=4, num_conv_layers=3)


def test_json_round_trip():
    spec = ArchSpec(Family.HOURGLASS, depth_levels=3, width=[16, 32, 64], skip_channels=[4, 0, 8],
                    upsampler=named_upsampler("k60"), output_channels=3)
    back = ArchSpec.from_json(spec.to_json())
    assert back.to_dict() == spec.to_dict()
    assert param_count(back) == param_count(spec)


def test_json_rejects_unknown_keys():
    doc = ArchSpec().to_dict()
    doc["dropout"] = 0.5
    with pytest.raises(ArchSpecError):
        ArchSpec.from_dict(doc)


def test_no_upsampling_decoder_runs_at_full_resolution():
    spec = ArchSpec(Family.MLP_DECODER, depth_levels=4, width=16, upsampler=named_upsampler("none"))
    assert spec.input_shape(32, 32) == (128, 32, 32)
    with_up = ArchSpec(Family.MLP_DECODER, depth_levels=4, width=16)
    assert param_count(spec) == param_count(with_up)


def test_transposed_upsampler_is_learnable():
    spec = ArchSpec(Family.CONV_DECODER, depth_levels=2, width=4, upsampler=named_upsampler("transposed"))
    net = build_network(spec)
    ups = [u for u in net.upsamplers if u is not None]
    assert len(ups) == 2 and all(u.kernel is not None and u.kernel.requires_grad for u in ups)
    assert param_count(spec) == _enumerated(spec)
    z = Tensor(np.random.default_rng(0).uniform(0, 0.1, size=spec.input_shape(16, 16)))
    ad.backward(ad.mse_loss(net(z), Tensor(np.full((1, 16, 16), 0.5))))
    assert np.any(ups[0].kernel.grad != 0)


specs = st.builds(
    lambda fam, depth, widths, skips, up, channels: ArchSpec(
        fam, depth_levels=depth,
        width=widths[: depth + 1] if fam != Family.HOURGLASS else widths[:depth],
        skip_channels=skips[:depth], upsampler=named_upsampler(up), output_channels=channels),
    st.sampled_from(list(Family)),
    st.integers(1, 3),
    st.lists(st.integers(1, 6), min_size=4, max_size=4),
    st.lists(st.integers(0, 3), min_size=3, max_size=3),
    st.sampled_from(["nn", "bilinear", "transposed", "k15"]),
    st.integers(1, 3),
)


@settings(max_examples=50)
@given(specs, st.integers(0, 1000))
def test_closed_form_matches_enumeration(spec, seed):
    assert param_count(spec) == _enumerated(spec, seed)


@settings(max_examples=20)
@given(specs)
def test_forward_shape_and_range(spec):
    side = 4 * 2 ** spec.depth_levels
    out = _forward(spec, side, side)
    assert out.shape == (spec.output_channels, side, side)
    assert np.all((out > 0) & (out < 1))


@given(st.integers(1, 4), st.integers(2, 64), st.integers(0, 3))
def test_skip_increases_count(depth, width, level):
    level = level % depth
    plain = ArchSpec(Family.HOURGLASS, depth_levels=depth, width=width, skip_channels=0)
    skips = [0] * depth
    skips[level] = max(width // 4, 1)
    assert param_count(ArchSpec(Family.HOURGLASS, depth_levels=depth, width=width, skip_channels=skips)) > param_count(plain)


# ----------------------------------------------------------------------------
# recommendation


def _features_for(width):
    levels = {32: -5.0, 64: 0.9, 128: 2.0}
    return TextureFeatures(0.9, 0.5, 1.0, np.full(32, levels[width]))


def test_recommend_fine_hourglass():
    spec = recommend_arch(_features_for(128), Family.HOURGLASS)
    assert spec.depth_levels == 2 and spec.widths == [128, 128]
    assert sum(1 for s in spec.skips if s) == 1 and spec.skips[0] == 32
    assert spec.upsampler.kind.value == "bilinear"


def test_recommend_coarse_hourglass():
    spec = recommend_arch(_features_for(32), Family.HOURGLASS)
    assert spec.depth_levels == 2 and spec.widths == [32, 32]
    assert spec.skips == [0, 0]


@pytest.mark.parametrize("width,depth", [(128, 2), (64, 3), (32, 5)])
def test_recommend_decoder_depth(width, depth):
    spec = recommend_arch(_features_for(width), Family.CONV_DECODER)
    assert spec.depth_levels == depth and spec.num_conv_layers == 6
    assert set(spec.widths) == {width}


def test_recommend_constant_image_is_smallest():
    const = recommend_arch(texture_features(np.full((64, 64), 0.5)), Family.HOURGLASS)
    fine = recommend_arch(_features_for(128), Family.HOURGLASS)
    assert const.widths[0] == 32
    assert param_count(const) < param_count(fine)


@pytest.mark.parametrize("width", [32, 64, 128])
@pytest.mark.parametrize("channels", [1, 3])
def test_recommended_are_under_parameterized(width, channels):
    rec = recommend_arch(_features_for(width), Family.HOURGLASS, output_channels=channels)
    assert param_count(rec) <= 0.40 * param_count(dip_baseline(output_channels=channels))
