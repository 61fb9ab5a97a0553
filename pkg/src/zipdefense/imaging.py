"""Image arrays, display/latent range conversion, fidelity metrics and file I/O.

Images are float64 numpy arrays shaped ``(H, W, C)`` with C in {1, 3} and
values in [0, 1]. Latents share the shape and live nominally in [-1, 1].
"""

from __future__ import annotations

import math
import re
from pathlib import Path

import numpy as np
from PIL import Image as PILImage


def check_image(img, name: str = "image") -> np.ndarray:
    """Validate and return ``img`` as a float64 ``(H, W, C)`` array in [0, 1]."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] not in (1, 3) or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must have shape (H, W, 1|3), got {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def to_latent(img) -> np.ndarray:
    return 2.0 * np.asarray(img, dtype=np.float64) - 1.0


def from_latent(lat) -> np.ndarray:
    return np.clip((np.asarray(lat, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images; ``inf`` when equal."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def quantize(img) -> np.ndarray:
    """8-bit code values, ``round(v * 255)`` with halves rounded up."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(arr * 255.0 + 0.5).astype(np.uint8)


def dequantize(codes) -> np.ndarray:
    arr = np.asarray(codes, dtype=np.float64) / 255.0
    return arr[..., None] if arr.ndim == 2 else arr


# --- PNG (via Pillow) -------------------------------------------------------


def write_png(path, img) -> None:
    codes = quantize(check_image(img))
    mode = "L" if codes.shape[2] == 1 else "RGB"
    data = codes[..., 0] if mode == "L" else codes
    PILImage.fromarray(data, mode=mode).save(path, format="PNG")


def read_png(path) -> np.ndarray:
    with PILImage.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("L" if im.mode in ("1", "I", "I;16", "LA") else "RGB")
        return dequantize(np.asarray(im))


# --- Netpbm P6 / P5 --------------------------------------------------------

_PNM_HEADER = re.compile(rb"^(P[56])\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def write_ppm(path, img) -> None:
    """Binary PPM (P6) for RGB images, PGM (P5) for single-channel ones."""
    codes = quantize(check_image(img))
    h, w, c = codes.shape
    magic = b"P6" if c == 3 else b"P5"
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (w, h))
        f.write(codes.tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = _PNM_HEADER.match(raw)
    if m is None:
        raise ValueError(f"{path}: not a binary P5/P6 file")
    magic, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit files are supported (maxval {maxval})")
    c = 3 if magic == b"P6" else 1
    body = raw[m.end():m.end() + w * h * c]
    if len(body) != w * h * c:
        raise ValueError(f"{path}: truncated pixel data")
    return dequantize(np.frombuffer(body, dtype=np.uint8).reshape(h, w, c))


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pgm", ".pnm"):
        return read_ppm(path)
    return read_png(path)


def write_image(path, img) -> None:
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pgm", ".pnm"):
        write_ppm(path, img)
    else:
        write_png(path, img)
