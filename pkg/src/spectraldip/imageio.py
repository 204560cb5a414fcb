"""8-bit PNG / PGM / PPM reading and writing with channel-first [0, 1] arrays."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

SUPPORTED_FORMATS = ("PNG", "PPM")
_SAVE_FORMATS = {".png": "PNG", ".pgm": "PPM", ".ppm": "PPM", ".pnm": "PPM"}
# modes converted on load, and what they become
_MODE_MAP = {"L": "L", "RGB": "RGB", "1": "L", "P": "RGB", "LA": "L", "RGBA": "RGB"}


class ImageFormatError(ValueError):
    """The file is not an 8-bit PNG/PGM/PPM image."""


def load_image(path: str | Path) -> np.ndarray:
    """Read an image as float64 ``(C, H, W)`` in [0, 1]; C is 1 for gray and 3 for colour."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            fmt = im.format
            if fmt not in SUPPORTED_FORMATS:
                raise ImageFormatError(f"{path}: unsupported image format {fmt}; expected PNG, PGM or PPM")
            if im.mode not in _MODE_MAP:
                raise ImageFormatError(f"{path}: unsupported {fmt} pixel mode {im.mode}; only 8-bit images are read")
            arr = np.asarray(im.convert(_MODE_MAP[im.mode]), dtype=np.float64)
    except UnidentifiedImageError:
        raise ImageFormatError(f"{path}: unrecognized image format") from None
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = np.moveaxis(arr, -1, 0)
    return np.ascontiguousarray(arr / 255.0)


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and round half-to-even onto 0..255."""
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(image: np.ndarray, path: str | Path) -> None:
    """Write a ``(C, H, W)`` or ``(H, W)`` array in [0, 1] as an 8-bit image."""
    path = Path(path)
    fmt = _SAVE_FORMATS.get(path.suffix.lower())
    if fmt is None:
        raise ImageFormatError(f"{path}: cannot write format {path.suffix or '(none)'}; use .png, .pgm or .ppm")
    image = np.asarray(image)
    if image.ndim == 3:
        if image.shape[0] not in (1, 3):
            raise ImageFormatError(f"cannot write an image with {image.shape[0]} channels")
        image = image[0] if image.shape[0] == 1 else np.moveaxis(image, 0, -1)
    pixels = to_uint8(image)
    if path.suffix.lower() == ".pgm" and pixels.ndim == 3:
        raise ImageFormatError(f"{path}: PGM holds gray images only")
    Image.fromarray(pixels).save(path, format=fmt)


def center_crop_resize(image: np.ndarray, size: int | None) -> np.ndarray:
    """Center-crop to a square and resize (bicubic) to ``size``; ``None`` leaves the image alone."""
    if size is None:
        return image
    _, h, w = image.shape
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    image = image[:, top:top + side, left:left + side]
    if side == size:
        return np.ascontiguousarray(image)
    channels = [np.asarray(Image.fromarray(c.astype(np.float32), mode="F").resize((size, size), Image.BICUBIC),
                           dtype=np.float64) for c in image]
    return np.clip(np.stack(channels), 0.0, 1.0)
