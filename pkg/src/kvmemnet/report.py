"""Figure rendering for the train/eval/decode report paths."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_loss_curve(losses: Sequence[float], path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.plot(np.arange(1, len(losses) + 1), losses, lw=1.0, color="#27567b")
    ax.set_xlabel("update")
    ax.set_ylabel("batch loss")
    ax.set_title("training loss")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_attention_map(alphas: np.ndarray, out_tokens: Sequence[str], path: str | Path, title: str = "") -> None:
    """Heatmap of per-step attention over memory slots; rows are output steps."""
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    im = ax.imshow(alphas, aspect="auto", cmap="viridis", vmin=0.0, vmax=1.0)
    ax.set_xlabel("memory slot")
    ax.set_ylabel("output step")
    if title:
        ax.set_title(title)
    if out_tokens and len(out_tokens) == alphas.shape[0]:
        ax.set_yticks(np.arange(len(out_tokens)))
        ax.set_yticklabels(out_tokens, fontsize=7)
    fig.colorbar(im, ax=ax, label="attention weight")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
