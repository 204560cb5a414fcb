"""Deep image prior denoising with controllable upsampling spectra."""

__version__ = "0.1.0"

from .arch import ArchSpec, Family, build_network, param_count, recommend_arch
from .engine import DipOptions, NoiseSpec, TrainTrajectory, peak_iteration, run_dip, sweep_upsamplers
from .metrics import psnr, ssim
from .resampling import UpsamplerSpec, design_lpf, freq_response, named_upsampler
from .texture import TextureFeatures, WidthClassifier, classify_width, texture_features

__all__ = [
    "ArchSpec",
    "DipOptions",
    "Family",
    "NoiseSpec",
    "TextureFeatures",
    "TrainTrajectory",
    "UpsamplerSpec",
    "WidthClassifier",
    "build_network",
    "classify_width",
    "design_lpf",
    "freq_response",
    "named_upsampler",
    "param_count",
    "peak_iteration",
    "psnr",
    "recommend_arch",
    "run_dip",
    "ssim",
    "sweep_upsamplers",
    "texture_features",
]
