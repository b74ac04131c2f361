"""Report emission: machine-readable JSON, delimited tables, and figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def write_json(path: str | Path, payload: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def write_csv(path: str | Path, header: Sequence[str],
              rows: Sequence[Sequence]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(c) for c in row])


def _cell(value):
    # 17 significant digits round-trips float64 exactly
    if isinstance(value, float):
        return format(value, ".17g")
    return value


def summary_table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Fixed-width text table for terminal summaries."""
    cells = [[str(c) if not isinstance(c, float) else f"{c:.4f}" for c in row]
             for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h)
              for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in cells:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines)


def plot_loss_curves(path: str | Path, traces: dict[int, Sequence[float]]) -> None:
    """One line per seed: training loss against epoch."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    for seed, trace in sorted(traces.items()):
        ax.plot(range(1, len(trace) + 1), trace, label=f"seed {seed}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_component_accuracy(path: str | Path, labels: Sequence[str],
                            means: Sequence[float], stds: Sequence[float]) -> None:
    """Bar chart of fused vs single-component accuracies."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 4))
    x = range(len(labels))
    ax.bar(x, means, yerr=stds, capsize=4, color="#4878d0")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, rotation=15)
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_sweep(path: str | Path, axis_name: str, values: Sequence,
               means: Sequence[float], stds: Sequence[float]) -> None:
    """Accuracy (with seed spread) against one swept hyperparameter."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    positions = range(len(values))
    ax.errorbar(positions, means, yerr=stds, marker="o", capsize=4)
    ax.set_xticks(list(positions))
    ax.set_xticklabels([str(v) for v in values], rotation=15)
    ax.set_xlabel(axis_name)
    ax.set_ylabel("accuracy")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
