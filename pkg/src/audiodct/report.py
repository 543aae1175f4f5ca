"""Report rendering: figures for training runs and evaluation summaries.

Everything lands as files: PNG figures next to a combined aggregates CSV, so
a run can be inspected without any interactive session.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def read_metrics(path) -> dict[str, list]:
    cols: dict[str, list] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            for key, val in row.items():
                cols.setdefault(key, []).append(val)
    return cols


def _floats(values):
    out = []
    for v in values:
        try:
            out.append(float(v))
        except (TypeError, ValueError):
            out.append(float("nan"))
    return out


def training_curves(metrics_paths: list, out_png, labels: list | None = None) -> Path:
    """Loss and learning-rate curves for one or more runs."""
    labels = labels or [Path(p).parent.name or Path(p).stem for p in metrics_paths]
    fig, (ax_loss, ax_lr) = plt.subplots(1, 2, figsize=(11, 4))
    for path, label in zip(metrics_paths, labels):
        cols = read_metrics(path)
        it = _floats(cols.get("iteration", []))
        ax_loss.plot(it, _floats(cols.get("train_loss", [])), label=f"{label} train", lw=1)
        val_pairs = [
            (i, v) for i, v in zip(it, _floats(cols.get("val_loss", [])))
            if v == v
        ]
        if val_pairs:
            ax_loss.plot(*zip(*val_pairs), "o-", ms=3, label=f"{label} val")
        ax_lr.plot(it, _floats(cols.get("lr", [])), label=label, lw=1)
    ax_loss.set_xlabel("iteration")
    ax_loss.set_ylabel("loss")
    ax_loss.legend(fontsize=8)
    ax_lr.set_xlabel("iteration")
    ax_lr.set_ylabel("learning rate")
    ax_lr.legend(fontsize=8)
    fig.tight_layout()
    out = Path(out_png)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=130)
    plt.close(fig)
    return out


def eval_summary(eval_json_paths: list, out_dir) -> tuple[Path, Path]:
    """Bar chart plus a combined aggregates CSV over evaluation reports."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for path in eval_json_paths:
        data = json.loads(Path(path).read_text())
        row = {"source": Path(path).stem, "suite": data["suite"]}
        row.update(data["aggregates"])
        rows.append(row)

    keys = ["source", "suite"]
    for row in rows:
        for k in row:
            if k not in keys:
                keys.append(k)
    csv_path = out / "aggregates.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)

    fig, ax = plt.subplots(figsize=(max(6, 1.6 * len(rows)), 4))
    headline = {"aqa": "accuracy", "aac": "token_f1", "distill": "mean_kl",
                "qualitative": "pattern_rate"}
    names, values = [], []
    for row in rows:
        metric = headline.get(row["suite"])
        if metric and metric in row:
            names.append(f"{row['source']}\n{metric}")
            values.append(float(row[metric]))
    if names:
        ax.bar(names, values, color="#4878a8")
        for i, v in enumerate(values):
            ax.text(i, v, f"{v:.2f}", ha="center", va="bottom", fontsize=8)
    ax.set_ylabel("headline metric")
    fig.tight_layout()
    png_path = out / "eval_summary.png"
    fig.savefig(png_path, dpi=130)
    plt.close(fig)
    return png_path, csv_path
