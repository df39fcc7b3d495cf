"""Figures written next to the CLI's text/JSON outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_loss_curve(curve, path, title="training loss"):
    steps = [r["step"] for r in curve]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(steps, [r["l_total"] for r in curve], label="total")
    ax.semilogy(steps, [r["l_hdr"] for r in curve], label="HDR (tonemapped L1)")
    if any(r["l_distill"] for r in curve):
        ax.semilogy(steps, [r["l_distill"] for r in curve], label="distillation")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_ablation(rows, path):
    """Bar chart of mean PSNR-mu / PSNR-L per ablation row."""
    labels = [r.label for r in rows]
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(x - 0.2, [r.report.psnr_l for r in rows], 0.4, label="PSNR-L")
    ax.bar(x + 0.2, [r.report.psnr_mu for r in rows], 0.4, label="PSNR-$\\mu$")
    ax.set_xticks(x, labels, rotation=15, ha="right")
    ax.set_ylabel("dB")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_metrics(report, path):
    """Per-sample PSNR bars for an evaluation report."""
    names = [r["sample"] for r in report.rows]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(names) + 2), 4))
    ax.bar(x - 0.2, [r["psnr_l"] for r in report.rows], 0.4, label="PSNR-L")
    ax.bar(x + 0.2, [r["psnr_mu"] for r in report.rows], 0.4, label="PSNR-$\\mu$")
    ax.set_xticks(x, names, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("dB")
    ax.set_title(f"mean PSNR-L {report.psnr_l:.2f} dB, PSNR-$\\mu$ {report.psnr_mu:.2f} dB")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
