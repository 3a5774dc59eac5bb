"""Image I/O and pixel-space conventions.

Images are numpy float arrays in [0, 1], shaped (H, W) for grayscale or
(H, W, 3) for RGB. The corpus convention is dark ink on light paper, so the
background value is 1.0 (white). Grayscale conversion uses ITU-R BT.601 luma
weights so that hashes are identical across decoders.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ImageDecodeError

BT601_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)
BACKGROUND = 1.0


def load_image(path: str | Path) -> np.ndarray:
    """Decode an 8-bit grayscale or RGB PNG into a float array in [0, 1].

    Alpha is composited over white; palette images are expanded. Anything
    unreadable raises ImageDecodeError.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode == "P":
                im = im.convert("RGBA")
            if im.mode in ("RGBA", "LA"):
                background = Image.new("RGBA", im.size, (255, 255, 255, 255))
                im = Image.alpha_composite(background, im.convert("RGBA")).convert("RGB")
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except (OSError, ValueError, SyntaxError) as exc:
        raise ImageDecodeError(f"cannot decode image {path}: {exc}") from exc
    return arr


def save_png(img: np.ndarray, path: str | Path) -> None:
    """Write a [0, 1] float array as an 8-bit PNG (grayscale or RGB)."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    u8 = np.round(arr * 255.0).astype(np.uint8)
    mode = "L" if u8.ndim == 2 else "RGB"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(u8, mode=mode).save(path, format="PNG")


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Collapse an RGB image to single-channel luma; grayscale passes through."""
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 1:
        return img[:, :, 0]
    if img.ndim == 3 and img.shape[2] == 3:
        return (img.astype(np.float64) @ BT601_WEIGHTS).astype(np.float32)
    raise ValueError(f"unsupported image shape {img.shape}")


def resize(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear-resize a single-channel float image to (width, height)."""
    if img.ndim != 2:
        raise ValueError("resize expects a single-channel image")
    w, h = size
    pil = Image.fromarray(np.ascontiguousarray(img, dtype=np.float32), mode="F")
    out = pil.resize((w, h), resample=Image.BILINEAR)
    return np.asarray(out, dtype=np.float32)


def quantize(img: np.ndarray) -> np.ndarray:
    """Quantize a [0, 1] float image to uint8, the canonical form for hashing."""
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
