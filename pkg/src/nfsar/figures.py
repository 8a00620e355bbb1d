"""Matplotlib report figures rendered next to the delimited outputs."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_DPI = 130


def save_image_figure(pixels: np.ndarray, extent_m: tuple[float, float], title: str,
                      path, annotate: str | None = None):
    """Single reconstruction with physical axes and a colorbar."""
    ex, ey = extent_m
    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    im = ax.imshow(pixels, cmap="inferno", origin="lower",
                   extent=[-ex / 2 * 100, ex / 2 * 100, -ey / 2 * 100, ey / 2 * 100],
                   vmin=0.0, vmax=1.0)
    ax.set_xlabel("x [cm]")
    ax.set_ylabel("y [cm]")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label="normalized reflectivity")
    if annotate:
        ax.text(0.02, 0.98, annotate, transform=ax.transAxes, fontsize=8,
                va="top", color="w")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_compare_figure(panels: list[tuple[np.ndarray, str]], path,
                        suptitle: str | None = None):
    """Row of images on a shared [0, 1] scale (input / restored / truth)."""
    n = len(panels)
    fig, axes = plt.subplots(1, n, figsize=(3.4 * n, 3.6))
    if n == 1:
        axes = [axes]
    for ax, (pixels, title) in zip(axes, panels):
        im = ax.imshow(pixels, cmap="inferno", origin="lower", vmin=0.0, vmax=1.0)
        ax.set_title(title, fontsize=10)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.colorbar(im, ax=axes, shrink=0.8, label="normalized reflectivity")
    if suptitle:
        fig.suptitle(suptitle)
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)


def save_echo_figure(magnitude_db: np.ndarray, path):
    """Echo cube magnitude (element vs frequency index)."""
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    im = ax.imshow(magnitude_db, aspect="auto", cmap="viridis", origin="lower")
    ax.set_xlabel("frequency index")
    ax.set_ylabel("element index")
    ax.set_title("echo magnitude [dB]")
    fig.colorbar(im, ax=ax, label="dB")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_bench_figure(reports, path):
    """Quality and runtime bars per algorithm."""
    names = [r.algorithm for r in reports]
    psnrs = [r.psnr_db if math.isfinite(r.psnr_db) else 0.0 for r in reports]
    rmses = [r.rmse for r in reports]
    times = [max(r.wall_time_s, 1e-6) for r in reports]
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.6))
    axes[0].bar(names, psnrs, color="tab:blue")
    axes[0].set_ylabel("PSNR [dB]")
    axes[1].bar(names, rmses, color="tab:orange")
    axes[1].set_ylabel("RMSE")
    axes[2].bar(names, times, color="tab:green")
    axes[2].set_yscale("log")
    axes[2].set_ylabel("time per sample [s]")
    for ax in axes:
        ax.tick_params(axis="x", rotation=20)
        ax.grid(True, axis="y", alpha=0.3)
    fig.suptitle("benchmark summary")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_training_curves(rows, path):
    """Per-step training loss with the validation PSNR checkpoints."""
    steps = [r.step for r in rows]
    losses = [r.train_l1 for r in rows]
    val_pts = [(r.step, r.val_psnr) for r in rows
               if r.val_psnr is not None and math.isfinite(r.val_psnr)]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(steps, losses, lw=0.8, color="tab:blue", label="train L1")
    ax.set_xlabel("step")
    ax.set_ylabel("train L1")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    if val_pts:
        ax2 = ax.twinx()
        ax2.plot([p[0] for p in val_pts], [p[1] for p in val_pts], "o-",
                 color="tab:red", ms=3, label="val PSNR")
        ax2.set_ylabel("validation PSNR [dB]", color="tab:red")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
