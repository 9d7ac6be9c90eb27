"""Multi-scale quantization-aware training of the seed model.

Each step: refresh the context model's per-seed distributions, inject
uniform quantization noise into every coded attribute, decode and splat
the Gaussians, measure L1 fidelity plus the rate losses, and push exact
analytic gradients back through every path (raster, decode, MLPs, noise
addition, hash straight-through).  Levels run coarse to fine; seeds and
scalings double when moving to a finer level.
"""

from __future__ import annotations

import json
import math
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import entropy
from .codec import DecodedModel, encode_model
from .entropy import (
    BinaryHashGrid, GridSpec, entropy_bits_and_grads, evaluate_context,
    hash_loss, hash_loss_and_grad, hash_lookup_backward, make_grid, total_loss,
)
from .image import Image, build_pyramid, psnr, ssim
from .model import (
    ModelConfig, SeedSet, adapt_to_finer, decode_all, decode_backward, init_seeds,
)
from .nn import (
    AdamState, Mlp, MlpAdam, adam_step, mlp_backward, mlp_init, serialize_mlp,
)
from .raster import PairCache, render


class TrainingDiverged(RuntimeError):
    """Loss or gradients became non-finite."""


@dataclass
class LearningRates:
    """Per-component Adam learning rates (positions stay frozen)."""

    positions: float = 0.0
    offsets: float = 0.01
    features: float = 0.0075
    scalings: float = 0.007
    color_mlp: float = 0.008
    shape_mlp: float = 0.004
    context_mlp: float = 0.005
    grid: float = 0.005


@dataclass
class TrainConfig:
    steps: int = 15000
    levels: int = 3
    rate_weight: float = 0.001
    lrs: LearningRates = field(default_factory=LearningRates)
    # Decay to 0.1x over each level, for every component except the seed
    # features and the two scalings.
    lr_decay: bool = True
    seed: int = 0
    log_every: int = 0

    def __post_init__(self) -> None:
        if self.steps < self.levels:
            raise ValueError("need at least one step per pyramid level")
        if self.rate_weight < 0:
            raise ValueError("rate_weight must be >= 0")


@dataclass
class TrainReport:
    """Per-step loss traces plus end-of-run metrics."""

    steps: list[int] = field(default_factory=list)
    l_img: list[float] = field(default_factory=list)
    l_entropy_bits: list[float] = field(default_factory=list)
    l_hash_bits: list[float] = field(default_factory=list)
    total: list[float] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)
    level_seconds: list[float] = field(default_factory=list)
    final_psnr: float = 0.0
    final_ssim: float = 0.0
    estimated_bytes: float = 0.0


@dataclass
class TrainResult:
    seeds: SeedSet
    color_mlp: Mlp
    shape_mlp: Mlp
    context_mlp: Mlp
    grid: BinaryHashGrid
    cfg: ModelConfig
    report: TrainReport


@dataclass
class StepGrads:
    """Gradients of the total loss for one optimization step."""

    features: np.ndarray
    offset_scale: np.ndarray
    scale_gain: np.ndarray
    offsets: np.ndarray
    color_mlp: object
    shape_mlp: object
    context_mlp: object
    grid: np.ndarray


def _l1_f64(rendered: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    diff = rendered - target
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def loss_and_grads(
    seeds: SeedSet,
    color_mlp: Mlp,
    shape_mlp: Mlp,
    context_mlp: Mlp,
    grid: BinaryHashGrid,
    target: np.ndarray,
    cfg: ModelConfig,
    rate_weight: float,
    noise: list[np.ndarray] | None,
    raster_dtype=np.float32,
) -> tuple[dict[str, float], StepGrads]:
    """One full forward/backward evaluation of the training objective.

    ``noise`` holds per-group uniform(-1/2, 1/2) draws (None disables
    noise, which the gradient oracles rely on).  The noise scale q is
    treated as constant when perturbing values, but the entropy loss keeps
    its exact dependence on q.  Splatting runs in float32 by default; the
    finite-difference oracles pass float64.
    """
    n, k = seeds.num_seeds, cfg.gaussians_per_seed
    ctx = evaluate_context(seeds, grid, context_mlp, cfg)
    values = entropy.group_values(seeds)
    if noise is not None:
        values = [v + u * ctx.q[:, j, None] for j, (v, u) in enumerate(zip(values, noise))]

    gaussians, dec_cache = decode_all(
        seeds, color_mlp, shape_mlp, cfg,
        features=values[0], offset_scale=values[1], scale_gain=values[2],
        offsets=values[3].reshape(n, k, 2),
    )
    pairs = PairCache(gaussians, seeds.width, seeds.height, dtype=raster_dtype)
    l_img, d_img = _l1_f64(pairs.forward(), target)
    rg = pairs.backward(d_img)
    seed_grads, color_grads, shape_grads = decode_backward(
        seeds, cfg, color_mlp, shape_mlp, dec_cache,
        rg.d_mu, rg.d_scale, rg.d_angle, rg.d_color,
    )

    ent_bits, ent = entropy_bits_and_grads(values, ctx)
    hash_bits, hash_grad = hash_loss_and_grad(grid)
    rate_scale = rate_weight / (n * cfg.dims_per_seed)

    # Context MLP backward: identity mean head, softplus sigma head with
    # floor, and the tanh refinement inside q.
    d_raw = np.zeros((n, 12))
    d_raw[:, 0:4] = rate_scale * ent.d_mean
    raw_sigma = ctx.raw[:, 4:8]
    sigma_live = entropy.softplus(raw_sigma) > entropy.SIGMA_MIN
    d_raw[:, 4:8] = rate_scale * ent.d_sigma * _sigmoid_stable(raw_sigma) * sigma_live
    tanh_r = np.tanh(ctx.dist.refine)
    d_raw[:, 8:12] = (
        rate_scale * ent.d_q * np.asarray(cfg.base_steps) * (1.0 - tanh_r * tanh_r)
    )
    d_ctx_features, ctx_mlp_grads = mlp_backward(
        context_mlp, ctx.features, ctx.mlp_cache, d_raw)
    grid_grad = hash_lookup_backward(grid, ctx.lookup, d_ctx_features)
    grid_grad += rate_scale * hash_grad

    losses = {
        "l_img": l_img,
        "entropy_bits": ent_bits,
        "hash_bits": hash_bits,
        "total": total_loss(l_img, ent_bits, hash_bits, rate_weight, n,
                            cfg.dims_per_seed),
    }
    grads = StepGrads(
        features=seed_grads.features + rate_scale * ent.d_values[0],
        offset_scale=seed_grads.offset_scale + rate_scale * ent.d_values[1],
        scale_gain=seed_grads.scale_gain + rate_scale * ent.d_values[2],
        offsets=seed_grads.offsets + rate_scale * ent.d_values[3].reshape(n, k, 2),
        color_mlp=color_grads,
        shape_mlp=shape_grads,
        context_mlp=ctx_mlp_grads,
        grid=grid_grad,
    )
    return losses, grads


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _level_steps(total: int, levels: int) -> list[int]:
    per = total // levels
    counts = [per] * levels
    counts[-1] += total - per * levels  # remainder goes to the finest level
    return counts


def train(image: Image, cfg: ModelConfig, tcfg: TrainConfig) -> TrainResult:
    """Fit the model to ``image`` coarse-to-fine; deterministic per seed."""
    pyramid = build_pyramid(image, tcfg.levels)
    coarse = pyramid[tcfg.levels - 1]
    seeds = init_seeds(coarse.width, coarse.height, cfg, tcfg.seed,
                       level=tcfg.levels - 1)
    k = cfg.gaussians_per_seed
    gspec = GridSpec()
    color_mlp = mlp_init(cfg.feature_dim, cfg.feature_dim, 3 * k, tcfg.seed + 1)
    shape_mlp = mlp_init(cfg.feature_dim, cfg.feature_dim, 3 * k, tcfg.seed + 2)
    context_mlp = mlp_init(gspec.levels * gspec.features, 64, 12, tcfg.seed + 3)
    grid = make_grid(gspec, image.width, image.height, tcfg.seed + 4)

    opt = {
        "features": AdamState.like(seeds.features),
        "offset_scale": AdamState.like(seeds.offset_scale),
        "scale_gain": AdamState.like(seeds.scale_gain),
        "offsets": AdamState.like(seeds.offsets),
        "grid": AdamState.like(grid.latents),
    }
    mlp_opt = {
        "color": MlpAdam.like(color_mlp),
        "shape": MlpAdam.like(shape_mlp),
        "context": MlpAdam.like(context_mlp),
    }

    report = TrainReport()
    lrs = tcfg.lrs
    counts = _level_steps(tcfg.steps, tcfg.levels)
    global_step = 0
    for level in range(tcfg.levels - 1, -1, -1):
        target = pyramid[level].data.astype(np.float64)
        level_t0 = time.perf_counter()
        steps_here = counts[tcfg.levels - 1 - level]
        for local in range(steps_here):
            t0 = time.perf_counter()
            decay = 0.1 ** (local / max(steps_here - 1, 1)) if tcfg.lr_decay else 1.0
            noise_rng = np.random.default_rng([tcfg.seed, global_step])
            draw = noise_rng.uniform(-0.5, 0.5, (seeds.num_seeds, cfg.dims_per_seed))
            d = cfg.feature_dim
            noise = [draw[:, :d], draw[:, d:d + 2], draw[:, d + 2:d + 4],
                     draw[:, d + 4:]]
            losses, grads = loss_and_grads(
                seeds, color_mlp, shape_mlp, context_mlp, grid, target,
                cfg, tcfg.rate_weight, noise)
            if not math.isfinite(losses["total"]):
                raise TrainingDiverged(
                    f"non-finite loss at step {global_step}: {losses}")

            adam_step(seeds.features, grads.features, opt["features"], lrs.features)
            adam_step(seeds.offset_scale, grads.offset_scale, opt["offset_scale"],
                      lrs.scalings)
            adam_step(seeds.scale_gain, grads.scale_gain, opt["scale_gain"],
                      lrs.scalings)
            adam_step(seeds.offsets, grads.offsets, opt["offsets"],
                      lrs.offsets * decay)
            mlp_opt["color"].step(color_mlp, grads.color_mlp, lrs.color_mlp * decay)
            mlp_opt["shape"].step(shape_mlp, grads.shape_mlp, lrs.shape_mlp * decay)
            mlp_opt["context"].step(context_mlp, grads.context_mlp,
                                    lrs.context_mlp * decay)
            adam_step(grid.latents, grads.grid, opt["grid"], lrs.grid * decay)

            report.steps.append(global_step)
            report.l_img.append(losses["l_img"])
            report.l_entropy_bits.append(losses["entropy_bits"])
            report.l_hash_bits.append(losses["hash_bits"])
            report.total.append(losses["total"])
            report.wall_ms.append((time.perf_counter() - t0) * 1e3)
            if tcfg.log_every and global_step % tcfg.log_every == 0:
                print(
                    f"step {global_step:6d} level {level} "
                    f"l_img {losses['l_img']:.5f} "
                    f"rate {losses['entropy_bits'] + losses['hash_bits']:.0f} bits",
                    file=sys.stderr,
                )
            global_step += 1
        report.level_seconds.append(time.perf_counter() - level_t0)
        if level > 0:
            finer = pyramid[level - 1]
            seeds = adapt_to_finer(seeds, finer.width, finer.height)

    gaussians, _ = decode_all(seeds, color_mlp, shape_mlp, cfg)
    final = render(gaussians, seeds.width, seeds.height)
    report.final_psnr = psnr(final, image)
    report.final_ssim = ssim(final, image)
    report.estimated_bytes = _estimate_bytes(
        seeds, color_mlp, shape_mlp, context_mlp, grid, cfg)
    return TrainResult(seeds, color_mlp, shape_mlp, context_mlp, grid, cfg, report)


def _estimate_bytes(seeds, color_mlp, shape_mlp, context_mlp, grid, cfg) -> float:
    """Rate estimate from exact symbols, before actually running the coder."""
    ctx = evaluate_context(seeds, grid, context_mlp, cfg)
    bits = hash_loss(grid)
    for j, vals in enumerate(entropy.group_values(seeds)):
        _, symbols = entropy.quantize_test(vals, ctx.q[:, j, None])
        p = entropy.symbol_probability(
            symbols, ctx.dist.mean[:, j, None],
            ctx.dist.sigma[:, j, None], ctx.q[:, j, None])
        bits -= float(np.sum(np.log2(p)))
    mlp_bytes = sum(len(serialize_mlp(m)) for m in (color_mlp, shape_mlp, context_mlp))
    return bits / 8.0 + mlp_bytes


def encode_result(result: TrainResult) -> bytes:
    """Serialize a training result to the .sgi container."""
    return encode_model(
        result.seeds, result.color_mlp, result.shape_mlp, result.context_mlp,
        result.grid, result.cfg, init_seed=0)


def render_model(decoded: DecodedModel, scale: float = 1.0) -> Image:
    """Render a decoded model, optionally rescaled (continuous zoom)."""
    return render_at_scale(
        decoded.seeds, decoded.color_mlp, decoded.shape_mlp, decoded.cfg, scale)


def render_at_scale(
    seeds: SeedSet, color_mlp: Mlp, shape_mlp: Mlp, cfg: ModelConfig, scale: float
) -> Image:
    """Scale positions and scalings by ``scale`` and render at the scaled size."""
    if scale <= 0:
        raise ValueError("scale must be > 0")
    scaled = seeds.copy()
    scaled.positions = seeds.positions * scale
    scaled.offset_scale = seeds.offset_scale * scale
    scaled.scale_gain = seeds.scale_gain * scale
    scaled.width = max(1, round(seeds.width * scale))
    scaled.height = max(1, round(seeds.height * scale))
    gaussians, _ = decode_all(scaled, color_mlp, shape_mlp, cfg)
    return render(gaussians, scaled.width, scaled.height)


def evaluate(image: Image, decoded: DecodedModel) -> dict:
    """Fidelity and size metrics of a decoded model against its source image."""
    if (decoded.seeds.width, decoded.seeds.height) != (image.width, image.height):
        raise ValueError("stream dimensions do not match the reference image")
    rendered = render_model(decoded)
    total = decoded.total_bytes
    return {
        "psnr_db": psnr(rendered, image),
        "ssim": ssim(rendered, image),
        "bytes_total": total,
        "bytes_per_component": dict(decoded.component_bytes),
        "bpp": 8.0 * total / (image.width * image.height),
    }


def write_report_csv(report: TrainReport, path) -> None:
    """Per-step trace: step, l_img, entropy bits, hash bits, total, wall ms."""
    with open(path, "w") as fh:
        fh.write("step,l_img,l_entropy_bits,l_hash_bits,total,wall_ms\n")
        for row in zip(report.steps, report.l_img, report.l_entropy_bits,
                       report.l_hash_bits, report.total, report.wall_ms):
            fh.write(f"{row[0]},{row[1]:.8g},{row[2]:.8g},{row[3]:.8g},"
                     f"{row[4]:.8g},{row[5]:.4g}\n")


def write_summary_json(report: TrainReport, path, extra: dict | None = None) -> None:
    summary = {
        "steps": len(report.steps),
        "final_psnr_db": report.final_psnr,
        "final_ssim": report.final_ssim,
        "estimated_bytes": report.estimated_bytes,
        "level_seconds": report.level_seconds,
        "final_l_img": report.l_img[-1] if report.l_img else None,
    }
    if extra:
        summary.update(extra)
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
