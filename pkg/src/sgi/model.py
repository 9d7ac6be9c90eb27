"""Seed data model and decoding of seeds into renderable 2D Gaussians.

Each seed owns a position, a feature vector, two per-seed scalings, and K
positional offsets.  Two shared MLPs decode the feature vector into the K
Gaussians' colors and raw shape parameters.  Decoding is vectorized over
all seeds; the matching backward pass is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .nn import Mlp, MlpGrads, mlp_backward, mlp_forward

# np.float32 round-trips keep codec headers bit-faithful to the values the
# encoder actually used, so config reals are canonicalized to f32 up front.
def _f32(x: float) -> float:
    return float(np.float32(x))


@dataclass
class ModelConfig:
    """Structural model parameters (shared by trainer and codec)."""

    num_seeds: int
    gaussians_per_seed: int = 10
    feature_dim: int = 24
    # Base quantization step per attribute group: features, offset scaling,
    # scale gain, offsets.
    base_steps: tuple[float, float, float, float] = (1.0, 0.05, 0.05, 0.02)
    base_scale_cap: float = 2.0
    min_scale: float = 0.3

    def __post_init__(self) -> None:
        if min(self.num_seeds, self.gaussians_per_seed, self.feature_dim) < 1:
            raise ValueError("num_seeds, gaussians_per_seed, feature_dim must be >= 1")
        if any(q <= 0 for q in self.base_steps):
            raise ValueError("all base quantization steps must be > 0")
        self.base_steps = tuple(_f32(q) for q in self.base_steps)
        self.base_scale_cap = _f32(self.base_scale_cap)
        self.min_scale = _f32(self.min_scale)

    @property
    def dims_per_seed(self) -> int:
        """Coded attribute dimensions per seed: D + 4 + 2K."""
        return self.feature_dim + 4 + 2 * self.gaussians_per_seed


@dataclass
class SeedSet:
    """All learnable per-seed state at one pyramid level."""

    positions: np.ndarray      # (N, 2) pixels, fixed after init
    features: np.ndarray       # (N, D)
    offset_scale: np.ndarray   # (N, 2) scales the offsets into pixels
    scale_gain: np.ndarray     # (N, 2) scales the MLP base scales
    offsets: np.ndarray        # (N, K, 2) unitless offsets
    level: int
    width: int
    height: int

    @property
    def num_seeds(self) -> int:
        return self.positions.shape[0]

    def copy(self) -> "SeedSet":
        return SeedSet(
            self.positions.copy(), self.features.copy(), self.offset_scale.copy(),
            self.scale_gain.copy(), self.offsets.copy(),
            self.level, self.width, self.height,
        )


def seed_grid_shape(width: int, height: int, num_seeds: int) -> tuple[int, int]:
    """(rows, cols) of the near-square seed grid covering a width x height image."""
    cols = max(1, math.ceil(math.sqrt(num_seeds * width / height)))
    rows = math.ceil(num_seeds / cols)
    return rows, cols


def grid_positions(width: int, height: int, num_seeds: int) -> np.ndarray:
    """Cell-center positions of the canonical seed grid, row-major, first N cells."""
    rows, cols = seed_grid_shape(width, height, num_seeds)
    idx = np.arange(num_seeds)
    col = idx % cols
    row = idx // cols
    pos = np.empty((num_seeds, 2))
    pos[:, 0] = (col + 0.5) * (width / cols)
    pos[:, 1] = (row + 0.5) * (height / rows)
    return pos


def init_seeds(
    width: int, height: int, cfg: ModelConfig, rng_seed: int, level: int = 0
) -> SeedSet:
    """Seeds on a near-square grid with small random features and offsets."""
    n, k = cfg.num_seeds, cfg.gaussians_per_seed
    if n > width * height:
        raise ValueError(f"{n} seeds exceed the {width}x{height} pixel count")
    rows, cols = seed_grid_shape(width, height, n)
    rng = np.random.default_rng(rng_seed)
    cell = np.array([width / cols / 4.0, height / rows / 4.0])
    return SeedSet(
        positions=grid_positions(width, height, n),
        features=rng.uniform(-1e-2, 1e-2, size=(n, cfg.feature_dim)),
        offset_scale=np.tile(cell, (n, 1)),
        scale_gain=np.tile(cell, (n, 1)),
        offsets=rng.uniform(-1.0, 1.0, size=(n, k, 2)),
        level=level,
        width=width,
        height=height,
    )


@dataclass
class GaussianSet:
    """Decoded renderable primitives, seed-major order (N*K entries)."""

    mu: np.ndarray      # (G, 2) pixels
    scale: np.ndarray   # (G, 2) pixels, >= min_scale
    angle: np.ndarray   # (G,) radians
    color: np.ndarray   # (G, 3) opacity-weighted, may be negative

    def __len__(self) -> int:
        return self.mu.shape[0]


@dataclass
class DecodeCache:
    """Intermediates retained for the decode backward pass."""

    features: np.ndarray
    color_cache: np.ndarray
    shape_cache: np.ndarray
    sig: np.ndarray          # (N, K, 2) sigmoid(raw scale)
    gain_abs: np.ndarray     # (N, 2)
    gain_sign: np.ndarray    # (N, 2)
    pre_floor: np.ndarray    # (N, K, 2) base * |gain| before the min-scale floor
    offsets: np.ndarray
    offset_scale: np.ndarray


@dataclass
class SeedGrads:
    positions: np.ndarray
    features: np.ndarray
    offset_scale: np.ndarray
    scale_gain: np.ndarray
    offsets: np.ndarray

    @classmethod
    def zeros_like(cls, seeds: SeedSet) -> "SeedGrads":
        return cls(*(np.zeros_like(a) for a in (
            seeds.positions, seeds.features, seeds.offset_scale,
            seeds.scale_gain, seeds.offsets)))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def decode_all(
    seeds: SeedSet,
    color_mlp: Mlp,
    shape_mlp: Mlp,
    cfg: ModelConfig,
    features: np.ndarray | None = None,
    offset_scale: np.ndarray | None = None,
    scale_gain: np.ndarray | None = None,
    offsets: np.ndarray | None = None,
) -> tuple[GaussianSet, DecodeCache]:
    """Decode every seed into its K Gaussians (stable seed-major order).

    The optional overrides substitute noised attribute values during
    quantization-aware training without mutating the seed set.
    """
    n, k = seeds.num_seeds, cfg.gaussians_per_seed
    feats = seeds.features if features is None else features
    o_scale = seeds.offset_scale if offset_scale is None else offset_scale
    gain = seeds.scale_gain if scale_gain is None else scale_gain
    offs = seeds.offsets if offsets is None else offsets
    for mlp, name in ((color_mlp, "color"), (shape_mlp, "shape")):
        if mlp.in_dim != cfg.feature_dim or mlp.out_dim != 3 * k:
            raise ValueError(f"{name} MLP must map {cfg.feature_dim} -> {3 * k}")

    color_raw, color_cache = mlp_forward(color_mlp, feats)
    shape_raw, shape_cache = mlp_forward(shape_mlp, feats)
    shape_raw = shape_raw.reshape(n, k, 3)

    mu = seeds.positions[:, None, :] + offs * o_scale[:, None, :]
    sig = _sigmoid(shape_raw[:, :, :2])
    base = sig * cfg.base_scale_cap
    gain_abs = np.abs(gain)
    pre_floor = base * gain_abs[:, None, :]
    scale = np.maximum(pre_floor, cfg.min_scale)
    angle = shape_raw[:, :, 2]

    gaussians = GaussianSet(
        mu=mu.reshape(n * k, 2),
        scale=scale.reshape(n * k, 2),
        angle=angle.reshape(n * k),
        color=color_raw.reshape(n * k, 3),
    )
    cache = DecodeCache(
        features=np.asarray(feats, dtype=np.float64),
        color_cache=color_cache,
        shape_cache=shape_cache,
        sig=sig,
        gain_abs=gain_abs,
        gain_sign=np.sign(gain),
        pre_floor=pre_floor,
        offsets=offs,
        offset_scale=o_scale,
    )
    return gaussians, cache


def decode_backward(
    seeds: SeedSet,
    cfg: ModelConfig,
    color_mlp: Mlp,
    shape_mlp: Mlp,
    cache: DecodeCache,
    d_mu: np.ndarray,
    d_scale: np.ndarray,
    d_angle: np.ndarray,
    d_color: np.ndarray,
) -> tuple[SeedGrads, MlpGrads, MlpGrads]:
    """Chain per-Gaussian render gradients back to seed attributes and MLPs."""
    n, k = seeds.num_seeds, cfg.gaussians_per_seed
    d_mu = d_mu.reshape(n, k, 2)
    d_scale = d_scale.reshape(n, k, 2)

    grads = SeedGrads.zeros_like(seeds)
    grads.positions = d_mu.sum(axis=1)
    grads.offsets = d_mu * cache.offset_scale[:, None, :]
    grads.offset_scale = (d_mu * cache.offsets).sum(axis=1)

    # Scale chain: s = max(base * |gain|, min_scale), base = sigmoid(raw) * cap.
    live = cache.pre_floor > cfg.min_scale
    d_pre = d_scale * live
    d_base = d_pre * cache.gain_abs[:, None, :]
    grads.scale_gain = (d_pre * cache.sig * cfg.base_scale_cap).sum(axis=1) \
        * cache.gain_sign
    d_raw_scale = d_base * cfg.base_scale_cap * cache.sig * (1.0 - cache.sig)

    d_shape_raw = np.concatenate(
        [d_raw_scale, d_angle.reshape(n, k, 1)], axis=2
    ).reshape(n, 3 * k)
    d_feat_shape, shape_grads = mlp_backward(
        shape_mlp, cache.features, cache.shape_cache, d_shape_raw
    )
    d_feat_color, color_grads = mlp_backward(
        color_mlp, cache.features, cache.color_cache, d_color.reshape(n, 3 * k)
    )
    grads.features = d_feat_shape + d_feat_color
    return grads, color_grads, shape_grads


def build_covariance(scale: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Covariances R(theta) diag(s1^2, s2^2) R(theta)^T, shape (..., 2, 2).

    Off-diagonals are computed once and mirrored, so the result is exactly
    symmetric; eigenvalues are exactly {s1^2, s2^2}.
    """
    scale = np.asarray(scale, dtype=np.float64)
    angle = np.asarray(angle, dtype=np.float64)
    c, s = np.cos(angle), np.sin(angle)
    v1 = scale[..., 0] ** 2
    v2 = scale[..., 1] ** 2
    cov = np.empty(angle.shape + (2, 2))
    cov[..., 0, 0] = c * c * v1 + s * s * v2
    cov[..., 1, 1] = s * s * v1 + c * c * v2
    off = c * s * (v1 - v2)
    cov[..., 0, 1] = off
    cov[..., 1, 0] = off
    return cov


DET_FLOOR = 1e-12


def invert_covariance(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form 2x2 inverse with the determinant floored at 1e-12."""
    cov = np.asarray(cov, dtype=np.float64)
    det = cov[..., 0, 0] * cov[..., 1, 1] - cov[..., 0, 1] * cov[..., 1, 0]
    det = np.maximum(det, DET_FLOOR)
    inv = np.empty_like(cov)
    inv[..., 0, 0] = cov[..., 1, 1] / det
    inv[..., 1, 1] = cov[..., 0, 0] / det
    inv[..., 0, 1] = -cov[..., 0, 1] / det
    inv[..., 1, 0] = inv[..., 0, 1]
    return inv, det


def adapt_to_finer(seeds: SeedSet, fine_width: int, fine_height: int) -> SeedSet:
    """Transfer a seed set one pyramid level finer (positions/scales doubled).

    Features and offsets carry over unchanged; MLPs are shared across
    levels and need no adaptation.
    """
    if seeds.level < 1:
        raise ValueError("seed set is already at the finest level")
    return replace(
        seeds.copy(),
        positions=seeds.positions * 2.0,
        offset_scale=seeds.offset_scale * 2.0,
        scale_gain=seeds.scale_gain * 2.0,
        level=seeds.level - 1,
        width=fine_width,
        height=fine_height,
    )
