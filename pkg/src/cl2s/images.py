"""Shared image type: H x W x 3 float arrays in [0, 1], plus I/O and torch bridging.

Every stage of the toolkit (heads, fusion, metrics, haze synthesis) trades in
this one currency. Images are decoded from 8-bit sRGB and normalized by 255
at load time; channel order is RGB throughout.
"""

import numpy as np
import torch
from PIL import Image as PILImage


class ValidationError(ValueError):
    """An image violates the domain invariants."""


def validate_image(img):
    """Check image invariants; return the array as float64 on success.

    Raises ValidationError on the first violation: wrong rank, channel
    count != 3, empty spatial dims, or non-finite values.
    """
    arr = np.asarray(img)
    if arr.ndim != 3:
        raise ValidationError(f"expected H x W x 3 array, got shape {arr.shape}")
    if arr.shape[2] != 3:
        raise ValidationError(f"channel mismatch: expected 3 channels, got {arr.shape[2]}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValidationError(f"empty image: shape {arr.shape}")
    arr = arr.astype(np.float64, copy=False)
    if not np.isfinite(arr).all():
        idx = np.argwhere(~np.isfinite(arr))[0]
        raise ValidationError(f"non-finite value at pixel {tuple(int(i) for i in idx)}")
    return arr


def clamp_unit(img):
    """Clamp all values into [0, 1]. Idempotent and monotone per element."""
    arr = np.asarray(img)
    if not np.isfinite(arr).all():
        idx = np.argwhere(~np.isfinite(arr))[0]
        raise ValidationError(f"non-finite value at pixel {tuple(int(i) for i in idx)}")
    return np.clip(arr, 0.0, 1.0)


def quantize_unit(img):
    """Round-trip through 8-bit quantization (what saving to PNG would do)."""
    arr = np.clip(np.asarray(img), 0.0, 1.0)
    return np.round(arr * 255.0).astype(np.uint8).astype(np.float64) / 255.0


def load_image(path):
    """Decode an 8-bit image file to an RGB float array in [0, 1]."""
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr


def save_image(img, path):
    """Write an image as 8-bit RGB (format from the file suffix, PNG preferred)."""
    arr = np.clip(np.asarray(img), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    PILImage.fromarray(data, mode="RGB").save(path)


def to_tensor(img, dtype=torch.float32):
    """H x W x 3 array -> 1 x 3 x H x W tensor."""
    arr = np.ascontiguousarray(np.asarray(img), dtype=np.float64)
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0).to(dtype)


def from_tensor(t):
    """1 x 3 x H x W (or 3 x H x W) tensor -> H x W x 3 float array."""
    if t.dim() == 4:
        t = t.squeeze(0)
    return t.detach().permute(1, 2, 0).cpu().numpy().astype(np.float64)
