"""Procedural test images with natural-image statistics.

There is no image corpus bundled with the package; benchmarks and the
acceptance suite synthesize crops instead.  The generator mixes 1/f
spectrum noise (the classic natural-image power law) with a few smooth
colored shapes so there are both textures and edges to fit.
"""

from __future__ import annotations

import numpy as np

from .image import Image


def _pink_noise(width: int, height: int, rng: np.random.Generator,
                alpha: float = 1.2) -> np.ndarray:
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    radius = np.hypot(fy, fx)
    radius[0, 0] = 1.0
    spectrum = rng.standard_normal((height, width)) + 1j * rng.standard_normal(
        (height, width))
    spectrum /= radius ** alpha
    field = np.fft.ifft2(spectrum).real
    field -= field.mean()
    std = field.std()
    return field / std if std > 0 else field


def make_natural_image(width: int, height: int, rng_seed: int = 0) -> Image:
    """A deterministic RGB image with 1/f texture, soft shapes, and edges."""
    rng = np.random.default_rng(rng_seed)
    shared = _pink_noise(width, height, rng)
    channels = []
    for _ in range(3):
        own = _pink_noise(width, height, rng)
        channels.append(0.75 * shared + 0.45 * own)
    img = np.stack(channels, axis=-1)

    yy, xx = np.mgrid[0:height, 0:width]
    for _ in range(4):
        cx, cy = rng.uniform(0.15, 0.85) * width, rng.uniform(0.15, 0.85) * height
        rx, ry = rng.uniform(0.08, 0.3) * width, rng.uniform(0.08, 0.3) * height
        theta = rng.uniform(0, np.pi)
        u = (xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)
        v = -(xx - cx) * np.sin(theta) + (yy - cy) * np.cos(theta)
        d = (u / rx) ** 2 + (v / ry) ** 2
        mask = 1.0 / (1.0 + np.exp(np.minimum(18.0 * (d - 1.0), 60.0)))  # soft ellipse
        tint = rng.uniform(-0.9, 0.9, size=3)
        img += mask[:, :, None] * tint

    lo, hi = np.quantile(img, [0.005, 0.995])
    img = np.clip((img - lo) / max(hi - lo, 1e-9), 0.0, 1.0)
    return Image((0.03 + 0.94 * img).astype(np.float32))
