"""Architecture specs, network construction and the texture-driven recommendation rule."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .resampling import UpsamplerKind, UpsamplerSpec, named_upsampler, upsample
from .texture import TextureFeatures, WidthClassifier, classify_width

ARCH_FORMAT = "spectraldip.arch-spec"
ARCH_VERSION = 1
LEAKY_SLOPE = 0.2
NORM_EPS = 1e-5
TRANSPOSED_INIT_NOISE = 0.01

# predicted width -> number of upsampling stages kept in a 6-layer decoder
DECODER_DEPTH_FOR_WIDTH = {128: 2, 64: 3, 32: 5}


class ArchSpecError(ValueError):
    pass


class Family(str, enum.Enum):
    HOURGLASS = "hourglass"
    CONV_DECODER = "convdecoder"
    MLP_DECODER = "mlpdecoder"


def _per_level(value, n: int, what: str) -> list[int]:
    if isinstance(value, (list, tuple)):
        if len(value) != n:
            raise ArchSpecError(f"{what} needs {n} entries, got {len(value)}")
        return [int(v) for v in value]
    return [int(value)] * n


@dataclass
class ArchSpec:
    family: Family = Family.HOURGLASS
    depth_levels: int = 2
    width: int | list[int] = 128
    skip_channels: int | list[int] = 0
    upsampler: UpsamplerSpec = field(default_factory=lambda: named_upsampler("bilinear"))
    kernel_size: int = 3
    num_conv_layers: int | None = None
    input_channels: int | None = None
    output_channels: int = 1

    def __post_init__(self):
        self.family = Family(self.family)
        if self.family is Family.MLP_DECODER:
            self.kernel_size = 1
        if self.input_channels is None:
            self.input_channels = 32 if self.family is Family.HOURGLASS else 128
        if self.num_conv_layers is None:
            self.num_conv_layers = self.depth_levels + 1 if self.decoder else self.depth_levels
        self.validate()

    @property
    def decoder(self) -> bool:
        return self.family is not Family.HOURGLASS

    @property
    def n_width_levels(self) -> int:
        return self.num_conv_layers if self.decoder else self.depth_levels

    @property
    def widths(self) -> list[int]:
        return _per_level(self.width, self.n_width_levels, "width")

    @property
    def skips(self) -> list[int]:
        if self.decoder:
            return [0] * self.depth_levels
        return _per_level(self.skip_channels, self.depth_levels, "skip_channels")

    @property
    def n_upsamplers(self) -> int:
        return 0 if self.upsampler.kind is UpsamplerKind.NONE else self.depth_levels

    @property
    def total_factor(self) -> int:
        return self.upsampler.factor ** self.n_upsamplers

    def validate(self) -> None:
        if self.depth_levels < 1:
            raise ArchSpecError("depth_levels must be at least 1")
        if self.kernel_size not in (1, 3):
            raise ArchSpecError("kernel_size must be 1 or 3")
        if self.decoder and self.num_conv_layers < self.depth_levels:
            raise ArchSpecError("decoder families need num_conv_layers >= depth_levels")
        if self.family is Family.HOURGLASS and self.upsampler.kind is UpsamplerKind.NONE:
            raise ArchSpecError("an hourglass needs an upsampler to undo its strided encoder")
        if self.family is Family.HOURGLASS and self.upsampler.factor != 2:
            raise ArchSpecError("hourglass encoders downsample by 2, so the upsampling factor must be 2")
        if any(w < 1 for w in self.widths) or any(s < 0 for s in self.skips):
            raise ArchSpecError("widths must be positive and skip_channels non-negative")
        if self.input_channels < 1 or self.output_channels < 1:
            raise ArchSpecError("channel counts must be positive")

    def check_size(self, height: int, width: int) -> None:
        """Raise unless an image of this size can be produced by the network."""
        f = self.total_factor if self.decoder else 2 ** self.depth_levels
        if height % f or width % f:
            raise ArchSpecError(f"image size {height}x{width} is not divisible by {f} for this {self.family.value}")
        if self.decoder and (height // f) * (width // f) < 2:
            raise ArchSpecError("decoder input would have a single pixel; channel norm needs two")

    def input_shape(self, height: int, width: int) -> tuple[int, int, int]:
        self.check_size(height, width)
        if self.decoder:
            f = self.total_factor
            return self.input_channels, height // f, width // f
        return self.input_channels, height, width

    def to_dict(self) -> dict:
        return {
            "format": ARCH_FORMAT,
            "version": ARCH_VERSION,
            "family": self.family.value,
            "depth_levels": self.depth_levels,
            "width": self.width,
            "skip_channels": self.skip_channels,
            "upsampler": self.upsampler.to_dict(),
            "kernel_size": self.kernel_size,
            "num_conv_layers": self.num_conv_layers,
            "input_channels": self.input_channels,
            "output_channels": self.output_channels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        if d.get("format", ARCH_FORMAT) != ARCH_FORMAT:
            raise ArchSpecError("not an architecture document")
        if int(d.get("version", ARCH_VERSION)) != ARCH_VERSION:
            raise ArchSpecError(f"unsupported architecture version {d.get('version')}")
        known = {"family", "depth_levels", "width", "skip_channels", "upsampler", "kernel_size",
                 "num_conv_layers", "input_channels", "output_channels"}
        extra = set(d) - known - {"format", "version"}
        if extra:
            raise ArchSpecError(f"unknown architecture keys: {sorted(extra)}")
        kwargs = {k: d[k] for k in known if k in d}
        if "upsampler" in kwargs:
            kwargs["upsampler"] = UpsamplerSpec.from_dict(kwargs["upsampler"])
        return cls(**kwargs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ArchSpec":
        return cls.from_dict(json.loads(text))


# ----------------------------------------------------------------------------
# layers


class Conv:
    def __init__(self, cin: int, cout: int, k: int, stride: int, rng: np.random.Generator):
        bound = math.sqrt(6.0 / (cin * k * k))
        self.weight = Tensor(rng.uniform(-bound, bound, size=(cout, cin, k, k)), requires_grad=True)
        self.bias = Tensor(np.zeros(cout), requires_grad=True)
        self.stride = stride
        self.padding = (k - 1) // 2

    def params(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class Norm:
    def __init__(self, c: int):
        self.scale = Tensor(np.ones(c), requires_grad=True)
        self.shift = Tensor(np.zeros(c), requires_grad=True)

    def params(self) -> list[Tensor]:
        return [self.scale, self.shift]

    def __call__(self, x: Tensor) -> Tensor:
        return ad.affine_channels(ad.channel_norm(x, NORM_EPS), self.scale, self.shift)


class Upsample:
    def __init__(self, spec: UpsamplerSpec, rng: np.random.Generator):
        self.spec = spec
        self.kernel = None
        if spec.kind is UpsamplerKind.TRANSPOSED:
            init = spec.kernel + TRANSPOSED_INIT_NOISE * rng.standard_normal(spec.kernel.shape)
            self.kernel = Tensor(init, requires_grad=True)

    def params(self) -> list[Tensor]:
        return [] if self.kernel is None else [self.kernel]

    def __call__(self, x: Tensor) -> Tensor:
        return upsample(x, self.spec, self.kernel)


class Block:
    """conv -> channel norm -> activation."""

    def __init__(self, cin, cout, k, stride, rng, activation):
        self.conv = Conv(cin, cout, k, stride, rng)
        self.norm = Norm(cout)
        self.activation = activation

    def params(self) -> list[Tensor]:
        return self.conv.params() + self.norm.params()

    def __call__(self, x: Tensor) -> Tensor:
        return self.activation(self.norm(self.conv(x)))


def _lrelu(x: Tensor) -> Tensor:
    return ad.leaky_relu(x, LEAKY_SLOPE)


# ----------------------------------------------------------------------------
# networks


class Model:
    """A built network: ordered layers, a forward pass and its parameter list."""

    def __init__(self, spec: ArchSpec, seed: int):
        self.spec = spec
        self.seed = seed
        rng = np.random.default_rng(seed)
        if spec.decoder:
            self._build_decoder(rng)
        else:
            self._build_hourglass(rng)

    def _build_hourglass(self, rng):
        s = self.spec
        widths, skips, k = s.widths, s.skips, s.kernel_size
        self.down, self.skip, self.up, self.upsamplers = [], [], [], []
        cin = s.input_channels
        for level in range(s.depth_levels):
            self.skip.append(Block(cin, skips[level], 1, 1, rng, _lrelu) if skips[level] else None)
            self.down.append(Block(cin, widths[level], k, 2, rng, _lrelu))
            cin = widths[level]
        for level in reversed(range(s.depth_levels)):
            self.upsamplers.append(Upsample(s.upsampler, rng))
            out = widths[level - 1] if level > 0 else widths[0]
            self.up.append(Block(cin + skips[level], out, k, 1, rng, _lrelu))
            cin = out
        self.head = Conv(cin, s.output_channels, 1, 1, rng)

    def _build_decoder(self, rng):
        s = self.spec
        widths, k = s.widths, s.kernel_size
        self.blocks, self.upsamplers = [], []
        cin = s.input_channels
        for i in range(s.num_conv_layers):
            self.blocks.append(Block(cin, widths[i], k, 1, rng, ad.relu))
            cin = widths[i]
            self.upsamplers.append(Upsample(s.upsampler, rng) if i < s.n_upsamplers else None)
        self.head = Conv(cin, s.output_channels, 1, 1, rng)

    def layers(self) -> list:
        if self.spec.decoder:
            seq = []
            for block, up in zip(self.blocks, self.upsamplers):
                seq.append(block)
                if up is not None:
                    seq.append(up)
            return seq + [self.head]
        skips = [b for b in self.skip if b is not None]
        ups = [u for pair in zip(self.upsamplers, self.up) for u in pair]
        return self.down + skips + ups + [self.head]

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers() for p in layer.params()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, z: Tensor) -> Tensor:
        if self.spec.decoder:
            x = z
            for block, up in zip(self.blocks, self.upsamplers):
                x = block(x)
                if up is not None:
                    x = up(x)
            return ad.sigmoid(self.head(x))
        x = z
        skipped = []
        for down, skip in zip(self.down, self.skip):
            skipped.append(skip(x) if skip is not None else None)
            x = down(x)
        for i, (up, block) in enumerate(zip(self.upsamplers, self.up)):
            x = up(x)
            s = skipped[len(skipped) - 1 - i]
            if s is not None:
                x = ad.concat_channels(x, s)
            x = block(x)
        return ad.sigmoid(self.head(x))


def build_network(spec: ArchSpec, seed: int = 0) -> Model:
    spec.validate()
    return Model(spec, seed)


def _conv_params(cin: int, cout: int, k: int) -> int:
    return k * k * cin * cout + cout


def param_count(spec: ArchSpec) -> int:
    """Closed-form parameter count (conv: k^2*Cin*Cout + Cout; norm: 2*C)."""
    spec.validate()
    k = spec.kernel_size
    widths = spec.widths
    ups = spec.n_upsamplers
    up_params = len(spec.upsampler.kernel) * ups if spec.upsampler.kind is UpsamplerKind.TRANSPOSED else 0
    total = up_params
    if spec.decoder:
        cin = spec.input_channels
        for w in widths:
            total += _conv_params(cin, w, k) + 2 * w
            cin = w
        return total + _conv_params(cin, spec.output_channels, 1)
    skips = spec.skips
    cin = spec.input_channels
    for level in range(spec.depth_levels):
        if skips[level]:
            total += _conv_params(cin, skips[level], 1) + 2 * skips[level]
        total += _conv_params(cin, widths[level], k) + 2 * widths[level]
        cin = widths[level]
    for level in reversed(range(spec.depth_levels)):
        out = widths[level - 1] if level > 0 else widths[0]
        total += _conv_params(cin + skips[level], out, k) + 2 * out
        cin = out
    return total + _conv_params(cin, spec.output_channels, 1)


# ----------------------------------------------------------------------------
# reference specs and recommendation


def conv_decoder_base(output_channels: int = 3, upsampler: UpsamplerSpec | None = None) -> ArchSpec:
    """The 6-layer, 128-channel, 5-upsampler convolutional decoder."""
    return ArchSpec(Family.CONV_DECODER, depth_levels=5, width=128, num_conv_layers=6,
                    upsampler=upsampler or named_upsampler("bilinear"), output_channels=output_channels)


def dip_baseline(output_channels: int = 3) -> ArchSpec:
    """5-level hourglass, width 128, skips of width/4 at every level."""
    return ArchSpec(Family.HOURGLASS, depth_levels=5, width=128, skip_channels=32,
                    output_channels=output_channels)


def recommend_arch(features: TextureFeatures, family: Family | str = Family.HOURGLASS,
                   classifier: WidthClassifier | None = None, output_channels: int = 1) -> ArchSpec:
    """Depth from the family rule, width from the texture classifier."""
    family = Family(family)
    width = classify_width(features, classifier)
    if family is Family.HOURGLASS:
        skips = [width // 4, 0] if width >= 128 else 0
        return ArchSpec(family, depth_levels=2, width=width, skip_channels=skips,
                        upsampler=named_upsampler("bilinear"), output_channels=output_channels)
    depth = DECODER_DEPTH_FOR_WIDTH.get(width, 5)
    return ArchSpec(family, depth_levels=depth, width=width, num_conv_layers=6,
                    upsampler=named_upsampler("bilinear"), output_channels=output_channels)


def with_upsampler(spec: ArchSpec, upsampler: UpsamplerSpec) -> ArchSpec:
    return replace(spec, upsampler=upsampler)
