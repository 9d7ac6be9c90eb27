"""Image containers, PNG/PPM I/O, Gaussian pyramids, and fidelity metrics.

Pixel data lives in a float32 ``(H, W, 3)`` array normalized to [0, 1].
All metric arithmetic is carried out in double precision with a fixed
reduction order, so results do not depend on how work is split internally.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from scipy.ndimage import correlate1d


class ImageError(Exception):
    """Unreadable, unwritable, or unsupported image data."""


@dataclass
class Image:
    """An RGB image: float32 values in [0, 1], shape (height, width, 3)."""

    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ImageError(f"expected (H, W, 3) data, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ImageError("image contains non-finite values")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class ImagePyramid:
    """Pyramid levels ordered finest (index 0) to coarsest."""

    levels: list[Image]

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, i: int) -> Image:
        return self.levels[i]


def _read_ppm(path: Path) -> tuple[np.ndarray, int]:
    """Parse a binary (P6) PPM; returns the integer samples and the maxval."""
    raw = path.read_bytes()
    if not raw.startswith(b"P6"):
        raise ImageError(f"{path}: not a binary P6 PPM")
    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments allowed between them.
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        m = re.match(rb"(?:\s+|#[^\n]*\n)*(\d+)", raw[pos:])
        if m is None:
            raise ImageError(f"{path}: malformed PPM header")
        fields.append(int(m.group(1)))
        pos += m.end()
    width, height, maxval = fields
    if not 0 < maxval < 65536:
        raise ImageError(f"{path}: invalid PPM maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.uint8
    count = width * height * 3
    pixels = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
    if pixels.size != count:
        raise ImageError(f"{path}: truncated PPM payload")
    return pixels.reshape(height, width, 3), maxval


def load_image(path: str | Path) -> Image:
    """Load an 8- or 16-bit RGB PNG or binary PPM, normalized to [0, 1].

    Values are divided by the sample maximum (255, 65535, or the PPM
    maxval), so full-scale inputs map to exactly 1.0.
    """
    path = Path(path)
    if not path.is_file():
        raise ImageError(f"{path}: no such file")
    if path.suffix.lower() in (".ppm", ".pnm"):
        arr, maxval = _read_ppm(path)
    else:
        arr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
        if arr is None:
            raise ImageError(f"{path}: unreadable or unsupported image")
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ImageError(f"{path}: expected 3-channel RGB data")
        arr = arr[:, :, ::-1]  # BGR -> RGB
        maxval = 65535 if arr.dtype == np.uint16 else 255
    return Image(arr.astype(np.float64) / maxval)


def save_image(img: Image, path: str | Path) -> None:
    """Write an 8-bit PNG; each channel is round(clamp(v, 0, 1) * 255), half up."""
    path = Path(path)
    clamped = np.clip(img.data.astype(np.float64), 0.0, 1.0)
    bytes_ = np.floor(clamped * 255.0 + 0.5).astype(np.uint8)
    ok = cv2.imwrite(str(path), bytes_[:, :, ::-1])
    if not ok:
        raise ImageError(f"{path}: could not write PNG")


# 5-tap binomial kernel; weights sum to exactly 1 in binary floating point.
_PYRAMID_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def _downsample(data: np.ndarray) -> np.ndarray:
    """Blur with the separable binomial kernel (reflect padding), keep even pixels."""
    work = data.astype(np.float64)
    work = correlate1d(work, _PYRAMID_KERNEL, axis=0, mode="mirror")
    work = correlate1d(work, _PYRAMID_KERNEL, axis=1, mode="mirror")
    return work[::2, ::2]


def build_pyramid(img: Image, num_levels: int) -> ImagePyramid:
    """Build a blur-and-halve pyramid with ``num_levels`` levels.

    Level 0 is the input; each coarser level has ceil-halved dimensions.
    The coarsest level must remain at least 8x8.
    """
    if num_levels < 1:
        raise ValueError("num_levels must be >= 1")
    shrink = 2 ** (num_levels - 1)
    if math.ceil(img.width / shrink) < 8 or math.ceil(img.height / shrink) < 8:
        raise ValueError(
            f"{num_levels} levels would shrink {img.width}x{img.height} below 8x8"
        )
    levels = [img]
    for _ in range(num_levels - 1):
        levels.append(Image(_downsample(levels[-1].data)))
    return ImagePyramid(levels)


def _check_same_shape(a: Image, b: Image) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"image shape mismatch: {a.data.shape} vs {b.data.shape}")


def psnr(a: Image, b: Image) -> float:
    """Peak signal-to-noise ratio in dB with peak 1.0; +inf for identical images."""
    _check_same_shape(a, b)
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def _ssim_kernel() -> np.ndarray:
    half = (_SSIM_WINDOW - 1) / 2.0
    x = np.arange(_SSIM_WINDOW) - half
    k = np.exp(-(x * x) / (2.0 * _SSIM_SIGMA * _SSIM_SIGMA))
    return k / k.sum()


def _window_mean(channel: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Gaussian-weighted local means, restricted to fully valid window positions."""
    half = _SSIM_WINDOW // 2
    out = correlate1d(channel, kernel, axis=0, mode="constant")
    out = correlate1d(out, kernel, axis=1, mode="constant")
    return out[half:-half, half:-half]


def ssim(a: Image, b: Image) -> float:
    """Mean structural similarity over valid 11x11 windows, averaged over channels."""
    _check_same_shape(a, b)
    if a.height < _SSIM_WINDOW or a.width < _SSIM_WINDOW:
        raise ValueError(f"images must be at least {_SSIM_WINDOW}x{_SSIM_WINDOW}")
    kernel = _ssim_kernel()
    c1 = _SSIM_K1 * _SSIM_K1
    c2 = _SSIM_K2 * _SSIM_K2
    total = 0.0
    for ch in range(3):
        x = a.data[:, :, ch].astype(np.float64)
        y = b.data[:, :, ch].astype(np.float64)
        mx = _window_mean(x, kernel)
        my = _window_mean(y, kernel)
        mxx = _window_mean(x * x, kernel)
        myy = _window_mean(y * y, kernel)
        mxy = _window_mean(x * y, kernel)
        vx = mxx - mx * mx
        vy = myy - my * my
        cov = mxy - mx * my
        score = ((2 * mx * my + c1) * (2 * cov + c2)) / (
            (mx * mx + my * my + c1) * (vx + vy + c2)
        )
        total += float(np.mean(score))
    return total / 3.0


def l1_loss_and_grad(rendered: Image, target: Image) -> tuple[float, np.ndarray]:
    """Mean absolute error and its subgradient w.r.t. the rendered image.

    The gradient entry is sign(r - t) / count with sign(0) = 0; ``count``
    includes all pixels and channels.
    """
    _check_same_shape(rendered, target)
    diff = rendered.data.astype(np.float64) - target.data.astype(np.float64)
    loss = float(np.mean(np.abs(diff)))
    grad = np.sign(diff) / diff.size
    return loss, grad
