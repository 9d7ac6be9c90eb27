"""Bitstream container: range coder, fixed-point CDFs, and model (de)serialization.

Symmetry rule: every probability table the decoder needs is a pure
double-precision function of data it has already decoded (header fields,
MLP weights, grid signs, positions).  The encoder therefore canonicalizes
its inputs to their serialized forms (float32 weights, +-1 grid, snapped
positions) *before* computing any table, so both sides run the identical
arithmetic on identical values.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import entropy
from .entropy import BinaryHashGrid, GridSpec, evaluate_context, quantize_test
from .model import ModelConfig, SeedSet, grid_positions, seed_grid_shape
from .nn import Mlp, deserialize_mlp, round_trip_f32, serialize_mlp

MAGIC = b"SGI1"
VERSION = 1

CDF_TOTAL = 1 << 16
_RC_TOP = 1 << 24
_RC_BOT = 1 << 16
_RC_MASK = 0xFFFFFFFF


class SgiFormatError(Exception):
    """Structurally invalid bitstream (bad magic, sizes, or versions)."""


class CorruptStreamError(SgiFormatError):
    """Payload bytes fail a checksum or desynchronize the decoder."""


# ---------------------------------------------------------------------------
# Range coder (carry-less, 32-bit range, byte-oriented)
# ---------------------------------------------------------------------------

class RangeEncoder:
    def __init__(self) -> None:
        self.low = 0
        self.range = _RC_MASK
        self.out = bytearray()

    def encode(self, cum_lo: int, cum_hi: int) -> None:
        """Narrow the interval to [cum_lo, cum_hi) out of CDF_TOTAL."""
        r = self.range // CDF_TOTAL
        self.low += cum_lo * r
        self.range = (cum_hi - cum_lo) * r
        low, rng, out = self.low, self.range, self.out
        while True:
            if (low ^ (low + rng)) < _RC_TOP:
                pass
            elif rng < _RC_BOT:
                rng = -low & (_RC_BOT - 1)
            else:
                break
            out.append((low >> 24) & 0xFF)
            rng = (rng << 8) & _RC_MASK
            low = (low << 8) & _RC_MASK
        self.low, self.range = low, rng

    def finish(self) -> bytes:
        """Emit a final value inside the interval, dropping trailing zeros.

        The decoder zero-fills reads past the end of the stream, so any
        trailing zero bytes of the chosen value can be omitted.
        """
        # range >= BOT after normalization, so a BOT-aligned value always
        # fits inside [low, low + range); its low bytes are zero.
        final = (self.low + _RC_BOT - 1) & ~(_RC_BOT - 1)
        for shift in (24, 16, 8, 0):
            self.out.append((final >> shift) & 0xFF)
        while self.out and self.out[-1] == 0:
            self.out.pop()
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 4
        self.low = 0
        self.range = _RC_MASK
        code = 0
        for i in range(4):
            code = (code << 8) | (data[i] if i < len(data) else 0)
        self.code = code

    def _next_byte(self) -> int:
        b = self.data[self.pos] if self.pos < len(self.data) else 0
        self.pos += 1
        return b

    def decode_cum(self) -> int:
        """The cumulative-frequency coordinate of the pending symbol."""
        self._r = self.range // CDF_TOTAL
        cum = (self.code - self.low) // self._r
        return min(cum, CDF_TOTAL - 1)

    def consume(self, cum_lo: int, cum_hi: int) -> None:
        """Account for the symbol whose CDF slot is [cum_lo, cum_hi)."""
        r = self._r
        low = self.low + cum_lo * r
        rng = (cum_hi - cum_lo) * r
        code = self.code
        while True:
            if (low ^ (low + rng)) < _RC_TOP:
                pass
            elif rng < _RC_BOT:
                rng = -low & (_RC_BOT - 1)
            else:
                break
            code = ((code << 8) | self._next_byte()) & _RC_MASK
            rng = (rng << 8) & _RC_MASK
            low = (low << 8) & _RC_MASK
        self.low, self.range, self.code = low, rng, code


def rc_encode(symbols, cdf_provider) -> bytes:
    """Encode alphabet indices; ``cdf_provider(i)`` yields the i-th CDF.

    Each CDF is an ascending integer array with cdf[0] = 0 and
    cdf[-1] = 65536; every symbol must have nonzero width.
    """
    enc = RangeEncoder()
    for i, s in enumerate(symbols):
        cdf = cdf_provider(i)
        lo, hi = int(cdf[s]), int(cdf[s + 1])
        if hi <= lo:
            raise ValueError(f"symbol {s} has zero probability mass")
        enc.encode(lo, hi)
    return enc.finish()


def rc_decode(data: bytes, count: int, cdf_provider) -> list[int]:
    """Recover ``count`` alphabet indices; provider must mirror the encoder."""
    dec = RangeDecoder(data)
    out = []
    for i in range(count):
        cdf = cdf_provider(i)
        cum = dec.decode_cum()
        s = int(np.searchsorted(cdf, cum, side="right")) - 1
        dec.consume(int(cdf[s]), int(cdf[s + 1]))
        out.append(s)
    return out


# ---------------------------------------------------------------------------
# Fixed-point probability tables
# ---------------------------------------------------------------------------

def _apportion(masses: np.ndarray) -> np.ndarray:
    """Scale nonnegative masses to integers summing to exactly CDF_TOTAL.

    Largest-remainder apportionment with a floor of 1 per bucket; fully
    deterministic (ties broken by bucket index).
    """
    n = masses.size
    if n > CDF_TOTAL:
        raise SgiFormatError(f"{n} buckets cannot each get 1/{CDF_TOTAL}")
    total = float(masses.sum())
    ideal = masses * (CDF_TOTAL / total) if total > 0 else np.full(n, CDF_TOTAL / n)
    base = np.maximum(np.floor(ideal).astype(np.int64), 1)
    deficit = CDF_TOTAL - int(base.sum())
    if deficit > 0:
        remainder = ideal - np.floor(ideal)
        order = np.lexsort((np.arange(n), -remainder))
        base[order[:deficit]] += 1
    while deficit < 0:
        over = np.where(base > 1, base - ideal, -np.inf)
        order = np.lexsort((np.arange(n), -over))
        take = min(-deficit, int(np.count_nonzero(base > 1)))
        base[order[:take]] -= 1
        deficit += take
    return base


def fixed_point_cdf(
    mean: float, sigma: float, q: float, s_min: int, s_max: int
) -> np.ndarray:
    """Cumulative 16-bit table over [escape, s_min..s_max, escape].

    Bucket k >= 1 holds symbol s_min + k - 1; buckets 0 and -1 absorb the
    two tail masses.  The table always sums to exactly 65536.
    """
    edges = (np.arange(s_min, s_max + 2) * q - 0.5 * q - mean) / sigma
    cdf_vals = entropy.gaussian_cdf(edges)
    masses = np.empty(s_max - s_min + 3)
    masses[0] = cdf_vals[0]
    masses[1:-1] = np.diff(cdf_vals)
    masses[-1] = 1.0 - cdf_vals[-1]
    fp = _apportion(np.maximum(masses, 0.0))
    out = np.zeros(fp.size + 1, dtype=np.int64)
    np.cumsum(fp, out=out[1:])
    return out


# ---------------------------------------------------------------------------
# Adaptive byte model (used for mode-1 position deltas)
# ---------------------------------------------------------------------------

class AdaptiveByteModel:
    """Order-0 Laplace-smoothed byte frequencies, rescaled below 2^15."""

    def __init__(self) -> None:
        self.freq = np.ones(256, dtype=np.int64)
        self._rebuild()

    def _rebuild(self) -> None:
        self.cdf = np.zeros(257, dtype=np.int64)
        np.cumsum(self.freq, out=self.cdf[1:])

    def scaled_cdf(self) -> np.ndarray:
        total = int(self.cdf[-1])
        return (self.cdf * CDF_TOTAL) // total

    def update(self, byte: int) -> None:
        self.freq[byte] += 32
        if int(self.freq.sum()) >= (1 << 15):
            self.freq = (self.freq + 1) // 2
        self._rebuild()


def _zigzag(v: int) -> int:
    return (v << 1) ^ (v >> 63) if v < 0 else v << 1


def _unzigzag(v: int) -> int:
    return -(v >> 1) - 1 if v & 1 else v >> 1


def _varint_bytes(v: int) -> list[int]:
    out = []
    while True:
        b = v & 0x7F
        v >>= 7
        if v:
            out.append(b | 0x80)
        else:
            out.append(b)
            return out


# ---------------------------------------------------------------------------
# Section encoders
# ---------------------------------------------------------------------------

POSITION_PRECISION = 16  # sub-pixel steps per pixel in mode 1


def snap_positions(positions: np.ndarray) -> np.ndarray:
    """Round positions to the 1/16-pixel lattice used by mode-1 coding."""
    return np.floor(positions * POSITION_PRECISION + 0.5) / POSITION_PRECISION


def encode_positions(seeds: SeedSet, init_seed: int = 0) -> tuple[int, bytes, np.ndarray, np.ndarray]:
    """Code seed positions; returns (mode, payload, positions, seed order).

    Mode 0 stores just the canonical grid shape when positions match it
    bit-exactly (the usual case: position learning rate is zero).  Mode 1
    snaps to 1/16 px, sorts by (y, x), and codes deltas adaptively; the
    returned order permutes the seeds into coded order.
    """
    n = seeds.num_seeds
    canonical = grid_positions(seeds.width, seeds.height, n)
    if np.array_equal(canonical, seeds.positions):
        rows, cols = seed_grid_shape(seeds.width, seeds.height, n)
        payload = struct.pack("<III", rows, cols, init_seed & 0xFFFFFFFF)
        return 0, payload, canonical, np.arange(n)

    snapped = snap_positions(seeds.positions)
    fixed = np.floor(snapped * POSITION_PRECISION + 0.5).astype(np.int64)
    order = np.lexsort((np.arange(n), fixed[:, 0], fixed[:, 1]))
    fixed = fixed[order]
    deltas: list[int] = []
    prev = np.zeros(2, dtype=np.int64)
    for i in range(n):
        deltas.append(int(fixed[i, 1] - prev[1]))
        deltas.append(int(fixed[i, 0] - prev[0]))
        prev = fixed[i]
    model = AdaptiveByteModel()
    enc = RangeEncoder()
    for d in deltas:
        for b in _varint_bytes(_zigzag(d)):
            cdf = model.scaled_cdf()
            enc.encode(int(cdf[b]), int(cdf[b + 1]))
            model.update(b)
    return 1, enc.finish(), snapped[order], order


def decode_positions(
    mode: int, payload: bytes, width: int, height: int, n: int
) -> np.ndarray:
    if mode == 0:
        if len(payload) != 12:
            raise CorruptStreamError("mode-0 position payload must be 12 bytes")
        rows, cols, _seed = struct.unpack("<III", payload)
        if (rows, cols) != seed_grid_shape(width, height, n):
            raise CorruptStreamError("position grid shape mismatch")
        return grid_positions(width, height, n)
    if mode != 1:
        raise SgiFormatError(f"unknown position-coding mode {mode}")
    model = AdaptiveByteModel()
    dec = RangeDecoder(payload)

    def next_varint() -> int:
        value = 0
        shift = 0
        while True:
            cdf = model.scaled_cdf()
            cum = dec.decode_cum()
            b = int(np.searchsorted(cdf, cum, side="right")) - 1
            dec.consume(int(cdf[b]), int(cdf[b + 1]))
            model.update(b)
            value |= (b & 0x7F) << shift
            if not b & 0x80:
                return value
            shift += 7
            if shift > 63:
                raise CorruptStreamError("runaway varint in position stream")

    positions = np.empty((n, 2))
    px = py = 0
    for i in range(n):
        py += _unzigzag(next_varint())
        px += _unzigzag(next_varint())
        positions[i, 0] = px
        positions[i, 1] = py
    return positions / POSITION_PRECISION


def encode_hash_grid(grid: BinaryHashGrid) -> bytes:
    """n1 count (u64) followed by the statically coded sign bits."""
    signs = grid.signs().reshape(-1)
    n1 = int(np.count_nonzero(signs > 0))
    total = signs.size
    p1 = min(max(round(n1 / total * CDF_TOTAL), 1), CDF_TOTAL - 1) if total else 1
    lo_split = CDF_TOTAL - p1
    enc = RangeEncoder()
    bits = signs > 0
    for b in bits:
        if b:
            enc.encode(lo_split, CDF_TOTAL)
        else:
            enc.encode(0, lo_split)
    return struct.pack("<Q", n1) + enc.finish()


def decode_hash_grid(payload: bytes, spec: GridSpec, resolutions: np.ndarray) -> BinaryHashGrid:
    if len(payload) < 8:
        raise CorruptStreamError("hash grid section truncated")
    (n1,) = struct.unpack_from("<Q", payload, 0)
    total = spec.levels * spec.table_size * spec.features
    if n1 > total:
        raise CorruptStreamError("hash grid +1 count exceeds entry count")
    p1 = min(max(round(n1 / total * CDF_TOTAL), 1), CDF_TOTAL - 1) if total else 1
    lo_split = CDF_TOTAL - p1
    dec = RangeDecoder(payload[8:])
    values = np.empty(total)
    for i in range(total):
        cum = dec.decode_cum()
        if cum < lo_split:
            values[i] = -1.0
            dec.consume(0, lo_split)
        else:
            values[i] = 1.0
            dec.consume(lo_split, CDF_TOTAL)
    if int(np.count_nonzero(values > 0)) != n1:
        raise CorruptStreamError("hash grid sign count mismatch")
    latents = values.reshape(spec.levels, spec.table_size, spec.features)
    return BinaryHashGrid(spec, resolutions.copy(), latents)


# ---------------------------------------------------------------------------
# Attribute streams
# ---------------------------------------------------------------------------

_MAX_SYMBOL_SPAN = CDF_TOTAL - 3


def _symbol_crc(symbols: np.ndarray) -> int:
    return zlib.crc32(symbols.astype("<i4").tobytes()) & 0xFFFFFFFF


def _encode_raw32(enc: RangeEncoder, value: int) -> None:
    u = value & 0xFFFFFFFF
    for half in (u >> 16, u & 0xFFFF):
        enc.encode(half, half + 1)


def _decode_raw32(dec: RangeDecoder) -> int:
    u = 0
    for _ in range(2):
        cum = dec.decode_cum()
        dec.consume(cum, cum + 1)
        u = (u << 16) | cum
    return u - (1 << 32) if u >= (1 << 31) else u


def encode_attribute_stream(
    symbols: np.ndarray, mean: np.ndarray, sigma: np.ndarray, q: np.ndarray
) -> bytes:
    """One group's symbols (N, dims) under per-seed context distributions."""
    s_min = int(symbols.min()) if symbols.size else 0
    s_max = int(symbols.max()) if symbols.size else 0
    if s_max - s_min > _MAX_SYMBOL_SPAN:
        raise SgiFormatError(
            f"symbol span {s_max - s_min} too wide for 16-bit tables; "
            "attributes look degenerate"
        )
    enc = RangeEncoder()
    n, dims = symbols.shape
    for i in range(n):
        cdf = fixed_point_cdf(mean[i], sigma[i], q[i], s_min, s_max)
        last = len(cdf) - 2
        for s in symbols[i]:
            k = int(s) - s_min + 1
            if 1 <= k < last:
                enc.encode(int(cdf[k]), int(cdf[k + 1]))
            else:  # outside the table: escape bucket + raw value
                esc = 0 if k < 1 else last
                enc.encode(int(cdf[esc]), int(cdf[esc + 1]))
                _encode_raw32(enc, int(s))
    payload = enc.finish()
    head = struct.pack("<iiI", s_min, s_max, len(payload))
    return head + payload + struct.pack("<I", _symbol_crc(symbols.reshape(-1)))


def decode_attribute_stream(
    data: bytes, n: int, dims: int, mean: np.ndarray, sigma: np.ndarray, q: np.ndarray
) -> np.ndarray:
    if len(data) < 16:
        raise CorruptStreamError("attribute stream truncated")
    s_min, s_max, coded_len = struct.unpack_from("<iiI", data, 0)
    if len(data) != 16 + coded_len:
        raise CorruptStreamError("attribute stream length mismatch")
    (crc,) = struct.unpack_from("<I", data, 12 + coded_len)
    dec = RangeDecoder(data[12:12 + coded_len])
    symbols = np.empty((n, dims), dtype=np.int64)
    for i in range(n):
        cdf = fixed_point_cdf(mean[i], sigma[i], q[i], s_min, s_max)
        last = len(cdf) - 2
        for d in range(dims):
            cum = dec.decode_cum()
            k = int(np.searchsorted(cdf, cum, side="right")) - 1
            dec.consume(int(cdf[k]), int(cdf[k + 1]))
            if k == 0 or k == last:
                symbols[i, d] = _decode_raw32(dec)
            else:
                symbols[i, d] = s_min + k - 1
    if _symbol_crc(symbols.reshape(-1)) != crc:
        raise CorruptStreamError("attribute symbol checksum mismatch")
    return symbols


# ---------------------------------------------------------------------------
# Whole-model container
# ---------------------------------------------------------------------------

@dataclass
class DecodedModel:
    """Everything reconstructed from a bitstream."""

    seeds: SeedSet
    color_mlp: Mlp
    shape_mlp: Mlp
    context_mlp: Mlp
    grid: BinaryHashGrid
    cfg: ModelConfig
    init_seed: int
    component_bytes: dict[str, int]

    @property
    def total_bytes(self) -> int:
        return sum(self.component_bytes.values())


_SECTIONS = (
    "color_mlp", "shape_mlp", "context_mlp", "hash_grid", "positions",
    "features", "offset_scale", "scale_gain", "offsets",
)


def _pack_header(cfg: ModelConfig, seeds: SeedSet, grid: BinaryHashGrid,
                 mlps: tuple[Mlp, Mlp, Mlp], pos_mode: int, init_seed: int,
                 payload_crc: int) -> bytes:
    spec = grid.spec
    parts = [
        MAGIC,
        struct.pack("<H", VERSION),
        struct.pack("<II", seeds.width, seeds.height),
        struct.pack("<III", cfg.num_seeds, cfg.gaussians_per_seed, cfg.feature_dim),
        struct.pack("<4f", *cfg.base_steps),
        struct.pack("<ff", cfg.base_scale_cap, cfg.min_scale),
        struct.pack("<III", spec.levels, spec.table_size, spec.features),
        grid.resolutions.astype("<u4").tobytes(),
        struct.pack("<B", pos_mode),
    ]
    for mlp in mlps:
        parts.append(struct.pack("<III", mlp.in_dim, mlp.hidden_dim, mlp.out_dim))
    parts.append(struct.pack("<II", init_seed & 0xFFFFFFFF, payload_crc))
    return b"".join(parts)


def encode_model(
    seeds: SeedSet,
    color_mlp: Mlp,
    shape_mlp: Mlp,
    context_mlp: Mlp,
    grid: BinaryHashGrid,
    cfg: ModelConfig,
    init_seed: int = 0,
) -> bytes:
    """Serialize a trained model to the .sgi container.

    Decoding the result reproduces the quantized attributes bit-exactly;
    re-encoding the decoded model yields these same bytes.
    """
    if seeds.level != 0:
        raise ValueError("encode expects a seed set at the finest level")
    for arr in (seeds.features, seeds.offset_scale, seeds.scale_gain, seeds.offsets):
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite seed attributes")

    # Canonicalize to the decoder's view before computing any probability.
    color_mlp = round_trip_f32(color_mlp)
    shape_mlp = round_trip_f32(shape_mlp)
    context_mlp = round_trip_f32(context_mlp)
    grid = BinaryHashGrid(grid.spec, grid.resolutions, grid.signs())
    pos_mode, pos_payload, positions, order = encode_positions(seeds, init_seed)
    coded = seeds.copy()
    coded.positions = positions
    coded.features = seeds.features[order]
    coded.offset_scale = seeds.offset_scale[order]
    coded.scale_gain = seeds.scale_gain[order]
    coded.offsets = seeds.offsets[order]

    ctx = evaluate_context(coded, grid, context_mlp, cfg)
    sections = {
        "color_mlp": serialize_mlp(color_mlp),
        "shape_mlp": serialize_mlp(shape_mlp),
        "context_mlp": serialize_mlp(context_mlp),
        "hash_grid": encode_hash_grid(grid),
        "positions": pos_payload,
    }
    for j, (name, values) in enumerate(zip(_SECTIONS[5:], entropy.group_values(coded))):
        _, symbols = quantize_test(values, ctx.q[:, j, None])
        sections[name] = encode_attribute_stream(
            symbols, ctx.dist.mean[:, j], ctx.dist.sigma[:, j], ctx.q[:, j])

    payload = b"".join(
        struct.pack("<I", len(sections[name])) + sections[name] for name in _SECTIONS
    )
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    header = _pack_header(cfg, seeds, grid, (color_mlp, shape_mlp, context_mlp),
                          pos_mode, init_seed, crc)
    return header + payload


def decode_model(data: bytes) -> DecodedModel:
    """Reconstruct the quantized model; raises on any corruption."""
    if len(data) < 4 or data[:4] != MAGIC:
        raise SgiFormatError("bad magic; not an SGI stream")
    off = 4
    (version,) = struct.unpack_from("<H", data, off); off += 2
    if version != VERSION:
        raise SgiFormatError(f"unsupported version {version}")
    try:
        width, height = struct.unpack_from("<II", data, off); off += 8
        n, k, d = struct.unpack_from("<III", data, off); off += 12
        base_steps = struct.unpack_from("<4f", data, off); off += 16
        scale_cap, min_scale = struct.unpack_from("<ff", data, off); off += 8
        levels, table_size, features = struct.unpack_from("<III", data, off); off += 12
        res = np.frombuffer(data, dtype="<u4", count=levels * 2, offset=off)
        res = res.reshape(levels, 2).astype(np.int64); off += levels * 8
        (pos_mode,) = struct.unpack_from("<B", data, off); off += 1
        mlp_dims = []
        for _ in range(3):
            mlp_dims.append(struct.unpack_from("<III", data, off)); off += 12
        init_seed, crc = struct.unpack_from("<II", data, off); off += 8
    except struct.error as exc:
        raise SgiFormatError("truncated header") from exc

    header_len = off
    payload = data[off:]
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CorruptStreamError("payload checksum mismatch")

    raw_sections: dict[str, bytes] = {}
    for name in _SECTIONS:
        if off + 4 > len(data):
            raise CorruptStreamError(f"missing section {name}")
        (length,) = struct.unpack_from("<I", data, off); off += 4
        if off + length > len(data):
            raise CorruptStreamError(f"section {name} truncated")
        raw_sections[name] = data[off:off + length]
        off += length
    if off != len(data):
        raise CorruptStreamError("trailing bytes after final section")

    cfg = ModelConfig(
        num_seeds=n, gaussians_per_seed=k, feature_dim=d,
        base_steps=tuple(base_steps), base_scale_cap=scale_cap, min_scale=min_scale,
    )
    color_mlp, _ = deserialize_mlp(raw_sections["color_mlp"])
    shape_mlp, _ = deserialize_mlp(raw_sections["shape_mlp"])
    context_mlp, _ = deserialize_mlp(raw_sections["context_mlp"])
    for mlp, dims in zip((color_mlp, shape_mlp, context_mlp), mlp_dims):
        if (mlp.in_dim, mlp.hidden_dim, mlp.out_dim) != dims:
            raise CorruptStreamError("MLP dimensions disagree with header")
    spec = GridSpec(
        levels=levels,
        base_resolutions=tuple(int(max(rx, ry)) for rx, ry in res),
        table_size=table_size, features=features,
    )
    grid = decode_hash_grid(raw_sections["hash_grid"], spec, res)
    positions = decode_positions(pos_mode, raw_sections["positions"], width, height, n)

    seeds = SeedSet(
        positions=positions,
        features=np.zeros((n, d)),
        offset_scale=np.zeros((n, 2)),
        scale_gain=np.zeros((n, 2)),
        offsets=np.zeros((n, k, 2)),
        level=0, width=width, height=height,
    )
    ctx = evaluate_context(seeds, grid, context_mlp, cfg)
    dims_per_group = (d, 2, 2, 2 * k)
    arrays = []
    for j, (name, dims) in enumerate(zip(_SECTIONS[5:], dims_per_group)):
        symbols = decode_attribute_stream(
            raw_sections[name], n, dims,
            ctx.dist.mean[:, j], ctx.dist.sigma[:, j], ctx.q[:, j])
        arrays.append(symbols * ctx.q[:, j, None])
    seeds.features = arrays[0]
    seeds.offset_scale = arrays[1]
    seeds.scale_gain = arrays[2]
    seeds.offsets = arrays[3].reshape(n, k, 2)

    component_bytes = {"header": header_len}
    for name in _SECTIONS:
        component_bytes[name] = len(raw_sections[name]) + 4
    return DecodedModel(seeds, color_mlp, shape_mlp, context_mlp, grid, cfg,
                        init_seed, component_bytes)
