"""Quantization, the binary hash grid, the context model, and rate losses.

The context model predicts, per seed and per attribute group, a Gaussian
(mean, sigma) and a quantization refinement from multi-resolution hash
features of the seed position.  Rate is measured as the - log2 interval
mass of each (noised or quantized) attribute under that Gaussian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .model import ModelConfig, SeedSet
from .nn import Mlp, mlp_forward

SIGMA_MIN = 1e-4
P_MIN = 2.0 ** -16
# Spatial hash primes, one per coordinate.
_HASH_PRIME_X = np.uint64(2654435761)
_HASH_PRIME_Y = np.uint64(805459861)

# Attribute group order used everywhere: seed features, offset scaling,
# scale gain, offsets.
GROUP_NAMES = ("features", "offset_scale", "scale_gain", "offsets")


@dataclass
class GridSpec:
    """Shape of the multiresolution binary hash grid."""

    levels: int = 4
    base_resolutions: tuple[int, ...] = (16, 32, 64, 128)
    table_size: int = 2 ** 14
    features: int = 4

    def __post_init__(self) -> None:
        if len(self.base_resolutions) != self.levels:
            raise ValueError("need one base resolution per level")
        if self.table_size < 1 or self.features < 1 or self.levels < 1:
            raise ValueError("grid dimensions must be positive")


@dataclass
class BinaryHashGrid:
    """Latent table whose signs are the +-1 features actually used."""

    spec: GridSpec
    resolutions: np.ndarray  # (levels, 2) cells along x and y
    latents: np.ndarray      # (levels, table_size, features) float64

    @property
    def entry_count(self) -> int:
        return self.latents.size

    def signs(self) -> np.ndarray:
        """Binarized view in {-1, +1}; sign(0) is +1."""
        return np.where(self.latents >= 0.0, 1.0, -1.0)


def make_grid(spec: GridSpec, width: int, height: int, rng_seed: int) -> BinaryHashGrid:
    """Grid with the base resolution along the longer side, aspect-preserving."""
    long_side = max(width, height)
    res = np.empty((spec.levels, 2), dtype=np.int64)
    for lvl, base in enumerate(spec.base_resolutions):
        res[lvl, 0] = max(1, round(base * width / long_side))
        res[lvl, 1] = max(1, round(base * height / long_side))
    rng = np.random.default_rng(rng_seed)
    latents = rng.uniform(-1e-2, 1e-2, size=(spec.levels, spec.table_size, spec.features))
    return BinaryHashGrid(spec, res, latents)


def hash_corner_index(cx: np.ndarray, cy: np.ndarray, table_size: int) -> np.ndarray:
    """Two-prime XOR spatial hash of integer corner coordinates."""
    hx = cx.astype(np.uint64) * _HASH_PRIME_X
    hy = cy.astype(np.uint64) * _HASH_PRIME_Y
    return ((hx ^ hy) % np.uint64(table_size)).astype(np.int64)


@dataclass
class LookupCache:
    """Corner indices and bilinear weights from one hash_lookup call."""

    indices: np.ndarray  # (N, levels, 4)
    weights: np.ndarray  # (N, levels, 4)


def _lookup_geometry(grid: BinaryHashGrid, x_norm: np.ndarray) -> LookupCache:
    x = np.clip(np.asarray(x_norm, dtype=np.float64), 0.0, 1.0)
    n = x.shape[0]
    levels = grid.spec.levels
    indices = np.empty((n, levels, 4), dtype=np.int64)
    weights = np.empty((n, levels, 4))
    for lvl in range(levels):
        pos = x * grid.resolutions[lvl]
        c0 = np.floor(pos).astype(np.int64)
        f = pos - c0
        wx0, wy0 = 1.0 - f[:, 0], 1.0 - f[:, 1]
        wx1, wy1 = f[:, 0], f[:, 1]
        corners = (
            (c0[:, 0], c0[:, 1], wx0 * wy0),
            (c0[:, 0] + 1, c0[:, 1], wx1 * wy0),
            (c0[:, 0], c0[:, 1] + 1, wx0 * wy1),
            (c0[:, 0] + 1, c0[:, 1] + 1, wx1 * wy1),
        )
        for k, (cx, cy, w) in enumerate(corners):
            indices[:, lvl, k] = hash_corner_index(cx, cy, grid.spec.table_size)
            weights[:, lvl, k] = w
    return LookupCache(indices, weights)


def features_from_table(
    table: np.ndarray, cache: LookupCache
) -> np.ndarray:
    """Bilinear blend of table rows at the cached corners, levels concatenated."""
    n, levels, _ = cache.indices.shape
    f = table.shape[-1]
    out = np.empty((n, levels * f))
    for lvl in range(levels):
        acc = np.zeros((n, f))
        for k in range(4):
            acc += cache.weights[:, lvl, k, None] * table[lvl, cache.indices[:, lvl, k]]
        out[:, lvl * f:(lvl + 1) * f] = acc
    return out


def hash_lookup(
    grid: BinaryHashGrid, x_norm: np.ndarray
) -> tuple[np.ndarray, LookupCache]:
    """Interpolated +-1 features for positions normalized to [0, 1]^2.

    Returns the (N, levels * features) feature matrix and the cache needed
    to run the straight-through backward pass.
    """
    cache = _lookup_geometry(grid, x_norm)
    return features_from_table(grid.signs(), cache), cache


def hash_lookup_backward(
    grid: BinaryHashGrid, cache: LookupCache, d_features: np.ndarray
) -> np.ndarray:
    """Straight-through gradients: binarization treated as identity.

    Scatter order is fixed (level, then corner, then seed index), so the
    result is deterministic.
    """
    levels = grid.spec.levels
    f = grid.spec.features
    d_latents = np.zeros_like(grid.latents)
    d_features = d_features.reshape(-1, levels, f)
    for lvl in range(levels):
        for k in range(4):
            np.add.at(
                d_latents[lvl],
                cache.indices[:, lvl, k],
                cache.weights[:, lvl, k, None] * d_features[:, lvl, :],
            )
    return d_latents


@dataclass
class AttributeDistribution:
    """Per-seed, per-group Gaussian parameters and quantization refinement."""

    mean: np.ndarray    # (N, 4)
    sigma: np.ndarray   # (N, 4), >= SIGMA_MIN
    refine: np.ndarray  # (N, 4)


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def context_predict(
    context_mlp: Mlp, features: np.ndarray
) -> tuple[AttributeDistribution, tuple[np.ndarray, np.ndarray]]:
    """Split the 12-wide context MLP output into (mean, sigma, refine) heads.

    sigma passes through softplus and is floored at SIGMA_MIN; the other
    heads are identity.  Also returns (raw output, mlp cache) for backward.
    """
    if context_mlp.out_dim != 12:
        raise ValueError("context MLP must output 12 values (3 per attribute group)")
    raw, cache = mlp_forward(context_mlp, features)
    dist = AttributeDistribution(
        mean=raw[..., 0:4],
        sigma=np.maximum(softplus(raw[..., 4:8]), SIGMA_MIN),
        refine=raw[..., 8:12],
    )
    return dist, (raw, cache)


def quant_step(base_step: np.ndarray, refine: np.ndarray) -> np.ndarray:
    """Refined quantization step Q * (1 + tanh r), in (0, 2Q)."""
    return np.asarray(base_step) * (1.0 + np.tanh(refine))


def quantize_train(
    values: np.ndarray, q: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Additive uniform noise of width q (the training-time relaxation)."""
    return values + rng.uniform(-0.5, 0.5, size=np.shape(values)) * q


def quantize_test(values: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Round to the nearest multiple of q (half away from zero).

    Returns (reconstructed values, integer symbols).
    """
    scaled = np.asarray(values, dtype=np.float64) / q
    symbols = (np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)).astype(np.int64)
    return symbols * np.asarray(q, dtype=np.float64), symbols


def gaussian_cdf(z: np.ndarray) -> np.ndarray:
    return 0.5 * erfc(-np.asarray(z, dtype=np.float64) / np.sqrt(2.0))


def interval_mass(
    values: np.ndarray, mean: np.ndarray, sigma: np.ndarray, q: np.ndarray
) -> np.ndarray:
    """Probability mass of the width-q interval centered on each value."""
    hi = (values - mean + 0.5 * q) / sigma
    lo = (values - mean - 0.5 * q) / sigma
    return gaussian_cdf(hi) - gaussian_cdf(lo)


def symbol_probability(
    symbols: np.ndarray, mean: np.ndarray, sigma: np.ndarray, q: np.ndarray
) -> np.ndarray:
    """Mass of the quantization bin of each symbol, floored at 2^-16."""
    values = np.asarray(symbols, dtype=np.float64) * q
    return np.maximum(interval_mass(values, mean, sigma, q), P_MIN)


def group_values(seeds: SeedSet) -> list[np.ndarray]:
    """The four coded attribute groups as (N, dims) arrays, field order."""
    n = seeds.num_seeds
    return [
        seeds.features,
        seeds.offset_scale,
        seeds.scale_gain,
        seeds.offsets.reshape(n, -1),
    ]


@dataclass
class ContextState:
    """One evaluation of the context model over all seeds."""

    features: np.ndarray          # (N, levels * F) hash features
    lookup: LookupCache
    raw: np.ndarray               # (N, 12) context MLP output
    mlp_cache: np.ndarray
    dist: AttributeDistribution
    q: np.ndarray                 # (N, 4) refined steps


def evaluate_context(
    seeds: SeedSet,
    grid: BinaryHashGrid,
    context_mlp: Mlp,
    cfg: ModelConfig,
    positions: np.ndarray | None = None,
) -> ContextState:
    """Hash features -> context MLP -> per-group distributions and steps."""
    pos = seeds.positions if positions is None else positions
    x_norm = pos / np.array([seeds.width, seeds.height], dtype=np.float64)
    feats, lookup = hash_lookup(grid, x_norm)
    dist, (raw, mlp_cache) = context_predict(context_mlp, feats)
    q = quant_step(np.asarray(cfg.base_steps), dist.refine)
    return ContextState(feats, lookup, raw, mlp_cache, dist, q)


def entropy_bits(
    values: list[np.ndarray], ctx: ContextState
) -> float:
    """Total - log2 interval mass over all seeds and attribute dimensions."""
    bits = 0.0
    for j, vals in enumerate(values):
        p = np.maximum(
            interval_mass(vals, ctx.dist.mean[:, j, None],
                          ctx.dist.sigma[:, j, None], ctx.q[:, j, None]),
            P_MIN,
        )
        bits -= float(np.sum(np.log2(p)))
    return bits


def entropy_loss(
    seeds: SeedSet,
    grid: BinaryHashGrid,
    context_mlp: Mlp,
    cfg: ModelConfig,
    values: list[np.ndarray] | None = None,
) -> float:
    """Rate estimate in bits for the given (possibly noised) attribute values."""
    ctx = evaluate_context(seeds, grid, context_mlp, cfg)
    return entropy_bits(group_values(seeds) if values is None else values, ctx)


_INV_LN2 = 1.0 / np.log(2.0)


def _normal_pdf(z: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)


@dataclass
class EntropyGrads:
    """Gradients of the entropy bits w.r.t. values and context outputs."""

    d_values: list[np.ndarray]
    d_mean: np.ndarray    # (N, 4)
    d_sigma: np.ndarray   # (N, 4)
    d_q: np.ndarray       # (N, 4)


def entropy_bits_and_grads(
    values: list[np.ndarray], ctx: ContextState
) -> tuple[float, EntropyGrads]:
    """entropy_bits plus exact gradients (zero where the p floor engages)."""
    bits = 0.0
    d_values = []
    d_mean = np.zeros_like(ctx.dist.mean)
    d_sigma = np.zeros_like(ctx.dist.sigma)
    d_q = np.zeros_like(ctx.q)
    for j, vals in enumerate(values):
        mean = ctx.dist.mean[:, j, None]
        sigma = ctx.dist.sigma[:, j, None]
        q = ctx.q[:, j, None]
        z_hi = (vals - mean + 0.5 * q) / sigma
        z_lo = (vals - mean - 0.5 * q) / sigma
        p_raw = gaussian_cdf(z_hi) - gaussian_cdf(z_lo)
        live = p_raw > P_MIN
        p = np.maximum(p_raw, P_MIN)
        bits -= float(np.sum(np.log2(p)))

        coeff = np.where(live, -_INV_LN2 / p, 0.0)
        pdf_hi = _normal_pdf(z_hi)
        pdf_lo = _normal_pdf(z_lo)
        dp_dv = (pdf_hi - pdf_lo) / sigma
        d_values.append(coeff * dp_dv)
        d_mean[:, j] = np.sum(coeff * -dp_dv, axis=1)
        d_sigma[:, j] = np.sum(
            coeff * -(pdf_hi * z_hi - pdf_lo * z_lo) / sigma, axis=1)
        d_q[:, j] = np.sum(coeff * (pdf_hi + pdf_lo) / (2.0 * sigma), axis=1)
    return bits, EntropyGrads(d_values, d_mean, d_sigma, d_q)


def hash_loss(grid: BinaryHashGrid) -> float:
    """Upper bound in bits for coding the grid signs (0 log 0 = 0)."""
    signs = grid.signs()
    n1 = float(np.count_nonzero(signs > 0))
    n0 = signs.size - n1
    total = n1 + n0
    bits = 0.0
    if n1 > 0:
        bits -= n1 * np.log2(n1 / total)
    if n0 > 0:
        bits -= n0 * np.log2(n0 / total)
    return bits


def hash_loss_grad(grid: BinaryHashGrid) -> float:
    """Straight-through d(hash_loss)/d(latent), identical for every entry.

    Each sign contributes (b+1)/2 to the +1 count, so the per-entry STE
    gradient is 0.5 * log2(n0/n1); zero at the degenerate boundaries.
    """
    signs = grid.signs()
    n1 = float(np.count_nonzero(signs > 0))
    n0 = signs.size - n1
    if n1 == 0.0 or n0 == 0.0:
        return 0.0
    return 0.5 * float(np.log2(n0 / n1))


def hash_loss_and_grad(grid: BinaryHashGrid) -> tuple[float, float]:
    """hash_loss and its per-entry STE gradient from a single sign count."""
    n1 = float(np.count_nonzero(grid.latents >= 0.0))
    n0 = grid.entry_count - n1
    total = n1 + n0
    bits = 0.0
    if n1 > 0:
        bits -= n1 * np.log2(n1 / total)
    if n0 > 0:
        bits -= n0 * np.log2(n0 / total)
    grad = 0.5 * float(np.log2(n0 / n1)) if (n1 > 0 and n0 > 0) else 0.0
    return bits, grad


def total_loss(
    l_img: float, l_entropy: float, l_hash: float,
    rate_weight: float, num_seeds: int, dims_per_seed: int,
) -> float:
    """Fidelity plus rate, balanced per coded attribute dimension."""
    return l_img + rate_weight / (num_seeds * dims_per_seed) * (l_entropy + l_hash)
