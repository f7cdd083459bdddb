"""Figure rendering for the report-producing commands.

Each CSV artifact gets a PNG sibling; the CSV stays the canonical output
and nothing downstream parses the figures.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from cgnn.model import Metrics


def save_metrics_plot(history: list[Metrics], path: str | Path) -> None:
    epochs = [m.epoch for m in history]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_loss.plot(epochs, [m.train_loss for m in history], color="tab:red")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss")
    ax_acc.plot(epochs, [m.train_acc for m in history], label="train")
    ax_acc.plot(epochs, [m.val_acc for m in history], label="val")
    ax_acc.plot(epochs, [m.test_acc for m in history], label="test")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_ylim(0.0, 1.0)
    ax_acc.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_sweep_plot(rows: list[dict], path: str | Path) -> None:
    """rows: dicts with variant, t1, test_acc."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    variants = []
    for row in rows:
        if row["variant"] not in variants:
            variants.append(row["variant"])
    for variant in variants:
        pts = sorted(
            (r["t1"], r["test_acc"]) for r in rows if r["variant"] == variant
        )
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=variant)
    ax.set_xlabel("ending time t1")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_mem_plot(rows: list[dict], path: str | Path) -> None:
    """rows: dicts with variant, steps, peak_live."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    variants = []
    for row in rows:
        if row["variant"] not in variants:
            variants.append(row["variant"])
    for variant in variants:
        pts = sorted(
            (r["steps"], r["peak_live"]) for r in rows if r["variant"] == variant
        )
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="s", label=variant)
    ax.set_xlabel("solver steps / propagation layers")
    ax.set_ylabel("peak live matrix buffers")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
