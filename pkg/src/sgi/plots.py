"""Matplotlib figures written alongside the CSV/JSON reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .trainer import TrainReport  # noqa: E402


def save_training_curves(report: TrainReport, path) -> None:
    """Fidelity and rate traces over the optimization steps."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    steps = np.asarray(report.steps)
    ax1.plot(steps, report.l_img, lw=0.8, color="tab:blue")
    ax1.set_xlabel("step")
    ax1.set_ylabel("L1 loss")
    ax1.set_yscale("log")
    ax1.set_title("fidelity")
    rate = np.asarray(report.l_entropy_bits) + np.asarray(report.l_hash_bits)
    ax2.plot(steps, rate / 8192.0, lw=0.8, color="tab:red")
    ax2.set_xlabel("step")
    ax2.set_ylabel("rate estimate (KiB)")
    ax2.set_title("rate")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_rd_curve(rows: list[dict], vary: str, path) -> None:
    """Rate-distortion scatter from sweep rows (bpp vs PSNR)."""
    fig, ax = plt.subplots(figsize=(4.6, 3.4))
    bpp = [r["bpp"] for r in rows]
    psnr = [r["psnr"] for r in rows]
    ax.plot(bpp, psnr, "o-", color="tab:blue")
    for r in rows:
        ax.annotate(f'{r["value"]:g}', (r["bpp"], r["psnr"]),
                    textcoords="offset points", xytext=(4, 4), fontsize=8)
    ax.set_xlabel("bits per pixel")
    ax.set_ylabel("PSNR (dB)")
    ax.set_title(f"rate-distortion sweep over {vary}")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
