"""Command-line surface: encode, decode, eval, and rate-distortion sweeps.

Exit codes: 0 success, 1 usage, 2 I/O, 3 numeric failure, 4 corrupt stream.
Flags override values from an optional TOML config (--config), which in
turn overrides the built-in defaults.  The env var SGI_THREADS caps worker
threads (0 = auto); the numeric kernels are sequential and deterministic,
so results are identical for every setting.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .codec import CorruptStreamError, SgiFormatError, decode_model, encode_model
from .image import ImageError, load_image, save_image
from .model import ModelConfig
from .trainer import (
    TrainConfig, TrainingDiverged, evaluate, render_model, train,
    write_report_csv, write_summary_json,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3
EXIT_CORRUPT = 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse default exits 2; we use 1
        raise UsageError(message)


def thread_cap() -> int:
    """Worker-thread cap from SGI_THREADS (0 = auto)."""
    raw = os.environ.get("SGI_THREADS", "0")
    try:
        cap = int(raw)
    except ValueError as exc:
        raise UsageError(f"SGI_THREADS must be an integer, got {raw!r}") from exc
    if cap < 0:
        raise UsageError("SGI_THREADS must be >= 0")
    return cap


_CONFIG_KEYS = ("gaussians", "k", "lam", "levels", "steps", "seed")


def _load_config(path: str) -> dict:
    try:
        import tomllib  # Python >= 3.11
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    out = {}
    for key, value in raw.items():
        dest = "lam" if key == "lambda" else key
        if dest not in _CONFIG_KEYS:
            raise UsageError(f"unknown config key {key!r}")
        out[dest] = value
    return out


def build_parser() -> _Parser:
    parser = _Parser(prog="sgi", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_train_flags(p):
        p.add_argument("--gaussians", type=int, required=True,
                       help="total Gaussian budget (seeds = round(n/k))")
        p.add_argument("--k", type=int, default=10, help="Gaussians per seed")
        p.add_argument("--lambda", dest="lam", type=float, default=0.001,
                       help="rate weight in the training loss")
        p.add_argument("--levels", type=int, default=3, help="pyramid levels")
        p.add_argument("--steps", type=int, default=15000,
                       help="total optimization steps")
        p.add_argument("--seed", type=int, default=0, help="rng seed")
        p.add_argument("--config", type=str, default=None,
                       help="TOML file with defaults for the flags above")

    enc = sub.add_parser("encode", help="fit an image and write a .sgi stream")
    enc.add_argument("--input", required=True, help="source PNG or PPM")
    enc.add_argument("--output", required=True, help="output .sgi path")
    add_train_flags(enc)
    enc.add_argument("--report", default=None,
                     help="directory for the training CSV/JSON/figures")
    enc.add_argument("--log-every", type=int, default=0,
                     help="progress print cadence (0 = quiet)")

    dec = sub.add_parser("decode", help="decode a .sgi stream to a PNG")
    dec.add_argument("--input", required=True, help=".sgi stream")
    dec.add_argument("--output", required=True, help="output PNG")
    dec.add_argument("--scale", type=float, default=1.0,
                     help="render at scale x the stored resolution")

    ev = sub.add_parser("eval", help="fidelity/size metrics of a stream")
    ev.add_argument("--image", required=True, help="reference image")
    ev.add_argument("--stream", required=True, help=".sgi stream")
    ev.add_argument("--report", required=True, help="output JSON path")

    sw = sub.add_parser("sweep", help="encode+eval across parameter values")
    sw.add_argument("--image", required=True, help="source image")
    sw.add_argument("--vary", required=True, choices=("lambda", "gaussians"))
    sw.add_argument("--values", required=True,
                    help="comma-separated values for the varied parameter")
    sw.add_argument("--out", required=True, help="output CSV path")
    add_train_flags(sw)
    return parser


def _apply_config(args: argparse.Namespace, argv: list[str]) -> None:
    """Config file fills in flags the user did not pass explicitly."""
    if getattr(args, "config", None) is None:
        return
    overrides = _load_config(args.config)
    passed = {a.split("=")[0].lstrip("-").replace("-", "_") for a in argv
              if a.startswith("--")}
    passed = {"lam" if p == "lambda" else p for p in passed}
    for key, value in overrides.items():
        if key not in passed:
            setattr(args, key, value)


def _model_configs(args) -> tuple[ModelConfig, TrainConfig]:
    if args.gaussians < args.k:
        raise UsageError("--gaussians must be at least --k")
    num_seeds = max(1, round(args.gaussians / args.k))
    cfg = ModelConfig(num_seeds=num_seeds, gaussians_per_seed=args.k)
    tcfg = TrainConfig(steps=args.steps, levels=args.levels,
                       rate_weight=args.lam, seed=args.seed,
                       log_every=getattr(args, "log_every", 0))
    return cfg, tcfg


def _print_size_table(component_bytes: dict[str, int]) -> None:
    total = sum(component_bytes.values())
    print("component sizes (bytes):")
    for name, size in component_bytes.items():
        print(f"  {name:>14}: {size:>10d}  ({100.0 * size / total:5.1f}%)")
    print(f"  {'total':>14}: {total:>10d}")


def _json_safe(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    return value


def cmd_encode(args) -> int:
    cfg, tcfg = _model_configs(args)
    image = load_image(args.input)
    print(f"encoding {args.input}: {image.width}x{image.height}, "
          f"{cfg.num_seeds * cfg.gaussians_per_seed} Gaussians "
          f"(N={cfg.num_seeds}, K={cfg.gaussians_per_seed}), "
          f"levels={tcfg.levels}, lambda={tcfg.rate_weight:g}, "
          f"steps={tcfg.steps}, seed={tcfg.seed}")
    result = train(image, cfg, tcfg)
    data = encode_model(result.seeds, result.color_mlp, result.shape_mlp,
                        result.context_mlp, result.grid, result.cfg,
                        init_seed=tcfg.seed)
    Path(args.output).write_bytes(data)
    decoded = decode_model(data)
    metrics = evaluate(image, decoded)
    _print_size_table(decoded.component_bytes)
    print(f"decoded fidelity: PSNR {metrics['psnr_db']:.3f} dB, "
          f"SSIM {metrics['ssim']:.5f}, {metrics['bpp']:.4f} bpp")
    if args.report:
        report_dir = Path(args.report)
        report_dir.mkdir(parents=True, exist_ok=True)
        write_report_csv(result.report, report_dir / "train_log.csv")
        write_summary_json(result.report, report_dir / "summary.json",
                           extra={"bytes_actual": len(data),
                                  "psnr_db": _json_safe(metrics["psnr_db"]),
                                  "ssim": metrics["ssim"]})
        from .plots import save_training_curves
        save_training_curves(result.report, report_dir / "loss_curves.png")
    return EXIT_OK


def cmd_decode(args) -> int:
    data = Path(args.input).read_bytes()
    decoded = decode_model(data)
    image = render_model(decoded, scale=args.scale)
    save_image(image, args.output)
    print(f"decoded {args.input} -> {args.output} "
          f"({image.width}x{image.height}, scale {args.scale:g})")
    return EXIT_OK


def cmd_eval(args) -> int:
    image = load_image(args.image)
    decoded = decode_model(Path(args.stream).read_bytes())
    metrics = evaluate(image, decoded)
    payload = {
        "psnr_db": _json_safe(metrics["psnr_db"]),
        "ssim": metrics["ssim"],
        "bytes_total": metrics["bytes_total"],
        "bytes_per_component": metrics["bytes_per_component"],
        "bpp": metrics["bpp"],
    }
    with open(args.report, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    print(f"PSNR {metrics['psnr_db']:.3f} dB, SSIM {metrics['ssim']:.5f}, "
          f"{metrics['bytes_total']} bytes ({metrics['bpp']:.4f} bpp)")
    return EXIT_OK


def cmd_sweep(args) -> int:
    values = [v for v in args.values.split(",") if v]
    if len(values) < 2:
        raise UsageError("--values needs at least two comma-separated entries")
    image = load_image(args.image)
    rows = []
    for raw in values:
        value = float(raw) if args.vary == "lambda" else int(raw)
        if args.vary == "lambda":
            args.lam = value
        else:
            args.gaussians = value
        cfg, tcfg = _model_configs(args)
        t0 = time.time()
        result = train(image, cfg, tcfg)
        data = encode_model(result.seeds, result.color_mlp, result.shape_mlp,
                            result.context_mlp, result.grid, result.cfg,
                            init_seed=tcfg.seed)
        wall = time.time() - t0
        metrics = evaluate(image, decode_model(data))
        rows.append({
            "value": value,
            "psnr": metrics["psnr_db"],
            "ssim": metrics["ssim"],
            "bytes": metrics["bytes_total"],
            "bpp": metrics["bpp"],
            "wall_s": wall,
        })
        print(f"{args.vary}={value:g}: PSNR {metrics['psnr_db']:.3f} dB, "
              f"{metrics['bytes_total']} bytes, {wall:.1f}s")
    with open(args.out, "w") as fh:
        fh.write("value,psnr,ssim,bytes,bpp,wall_s\n")
        for r in rows:
            fh.write(f"{r['value']:g},{r['psnr']:.6g},{r['ssim']:.6g},"
                     f"{r['bytes']},{r['bpp']:.6g},{r['wall_s']:.3f}\n")
    from .plots import save_rd_curve
    figure_path = Path(args.out).with_name(Path(args.out).stem + "_rd.png")
    save_rd_curve(rows, args.vary, figure_path)
    print(f"wrote {args.out} and {figure_path}")
    return EXIT_OK


_COMMANDS = {
    "encode": cmd_encode,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        thread_cap()
        args = parser.parse_args(argv)
        _apply_config(args, argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ImageError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SgiFormatError as exc:
        print(f"corrupt stream: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
