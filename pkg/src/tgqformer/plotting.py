"""Report figures written next to the CSV outputs.

Figures use the Agg backend and carry no timestamp or software metadata, so
equal inputs produce byte-identical PNG files.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="png", dpi=100, metadata=_META)
    plt.close(fig)
    return path


def plot_hit_curve(hit_rates: dict[int, float], path, title: str = "Hit rate") -> Path:
    ks = sorted(hit_rates)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ks, [100 * hit_rates[k] for k in ks], marker="o")
    ax.set_xscale("log")
    ax.set_xticks(ks)
    ax.set_xticklabels([str(k) for k in ks])
    ax.set_xlabel("K")
    ax.set_ylabel("H@K (%)")
    ax.set_ylim(0, 100)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_ablation(rows: list[tuple[str, dict[int, float]]], path, ks=(20, 50, 100)) -> Path:
    """Grouped bars: one group per K, one bar per variant."""
    fig, ax = plt.subplots(figsize=(6.5, 3.5))
    width = 0.8 / max(len(rows), 1)
    for i, (label, rates) in enumerate(rows):
        xs = [j + i * width for j in range(len(ks))]
        ax.bar(xs, [100 * rates[k] for k in ks], width=width, label=label)
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(ks))])
    ax.set_xticklabels([f"H@{k}" for k in ks])
    ax.set_ylabel("%")
    ax.legend(fontsize=7)
    ax.set_title("Ablation")
    fig.tight_layout()
    return _save(fig, path)


def plot_robustness(grid: dict[str, dict[int, float]], path, ks=(10, 20, 50)) -> Path:
    names = list(grid)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for k in ks:
        ax.plot(names, [100 * grid[n][k] for n in names], marker="o", label=f"H@{k}")
    ax.set_xlabel("severity")
    ax.set_ylabel("%")
    ax.legend()
    ax.grid(alpha=0.3)
    ax.set_title("Robustness")
    fig.tight_layout()
    return _save(fig, path)
