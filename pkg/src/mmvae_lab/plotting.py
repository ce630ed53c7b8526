"""Render experiment CSVs into SVG line charts.

Figures mirror the report structure: training-metric curves, the baseline
curve, the four integration measures per modality, window comparisons across
schedules, and schedule traces. Everything reads the delimited outputs, so
figures can be regenerated without re-running an experiment.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

MODALITY_COLORS = {
    "joint": "tab:blue",
    "vision": "tab:orange",
    "touch": "tab:green",
    "sound": "tab:red",
    "motor": "tab:purple",
}

MEASURE_PANELS = (
    ("single_modality_error", "modality", "single modality error (own coords)"),
    ("single_modality_error", "all", "single modality error (all coords)"),
    ("loss_of_precision", "modality", "loss of precision (own coords)"),
    ("loss_of_precision", "all", "loss of precision (all coords)"),
)


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _band(ax, rows, label=None, color=None):
    epochs = [int(r["epoch"]) for r in rows]
    mean = [float(r["mean"]) for r in rows]
    lo = [float(r["min"]) for r in rows]
    hi = [float(r["max"]) for r in rows]
    ax.plot(epochs, mean, label=label, color=color)
    ax.fill_between(epochs, lo, hi, alpha=0.2, color=color, linewidth=0)


def plot_metrics(experiment_dir: str | Path, out_path: str | Path) -> Path:
    """Prediction error and loss components vs epoch, mean with min/max band."""
    rows = _read_csv(Path(experiment_dir) / "aggregate_metrics.csv")
    names = ("prediction_error", "reconstruction_loss", "latent_loss", "total_loss")
    fig, axes = plt.subplots(len(names), 1, figsize=(7, 10), sharex=True)
    schedule = rows[0]["schedule"] if rows else ""
    for ax, name in zip(axes, names):
        _band(ax, [r for r in rows if r["metric"] == name])
        ax.set_ylabel(name.replace("_", " "))
    axes[-1].set_xlabel("epoch")
    axes[0].set_title(f"training metrics ({schedule})")
    fig.tight_layout()
    return _save(fig, out_path)


def plot_baseline(experiment_dir: str | Path, out_path: str | Path) -> Path:
    rows = [r for r in _read_csv(Path(experiment_dir) / "aggregate_measures.csv")
            if r["measure"] == "baseline"]
    fig, ax = plt.subplots(figsize=(7, 4))
    _band(ax, rows)
    ax.set_xlabel("epoch")
    ax.set_ylabel("baseline KL")
    ax.set_title(f"baseline ({rows[0]['schedule'] if rows else ''})")
    fig.tight_layout()
    return _save(fig, out_path)


def plot_measures(experiment_dir: str | Path, out_path: str | Path) -> Path:
    """One panel per measure family/scope, one line per modality."""
    rows = _read_csv(Path(experiment_dir) / "aggregate_measures.csv")
    fig, axes = plt.subplots(2, 2, figsize=(11, 7), sharex=True)
    schedule = rows[0]["schedule"] if rows else ""
    for ax, (measure, scope, title) in zip(axes.ravel(), MEASURE_PANELS):
        modalities = sorted({r["modality"] for r in rows if r["measure"] == measure})
        for mod in modalities:
            sub = [r for r in rows
                   if (r["measure"], r["scope"], r["modality"]) == (measure, scope, mod)]
            _band(ax, sub, label=mod, color=MODALITY_COLORS.get(mod))
        ax.set_title(title)
        ax.set_yscale("log")
    for ax in axes[-1]:
        ax.set_xlabel("epoch")
    axes[0, 0].legend(fontsize=8)
    fig.suptitle(f"integration measures ({schedule})")
    fig.tight_layout()
    return _save(fig, out_path)


def plot_comparison(comparison_dir: str | Path, out_path: str | Path) -> Path:
    """Window means per schedule; darker markers carry the all-coordinate scope."""
    rows = _read_csv(Path(comparison_dir) / "comparison.csv")
    rows = [r for r in rows if r["measure"] != "baseline"]
    families = ("single_modality_error", "loss_of_precision")
    windows = sorted({r["window"] for r in rows})
    fig, axes = plt.subplots(len(families), len(windows), figsize=(11, 7),
                             sharey="row", squeeze=False)
    schedules = sorted({r["schedule"] for r in rows})
    xpos = {s: i for i, s in enumerate(schedules)}
    for i, fam in enumerate(families):
        for j, win in enumerate(windows):
            ax = axes[i][j]
            for r in rows:
                if r["measure"] != fam or r["window"] != win:
                    continue
                dark = r["scope"] == "all"
                ax.scatter(
                    xpos[r["schedule"]], float(r["mean"]),
                    color=MODALITY_COLORS.get(r["modality"], "gray"),
                    alpha=0.95 if dark else 0.45,
                    marker="o" if dark else "^", s=30,
                )
            ax.set_xticks(range(len(schedules)))
            ax.set_xticklabels(schedules, rotation=20, fontsize=8)
            ax.set_yscale("log")
            ax.set_title(f"{fam.replace('_', ' ')} (window {win})", fontsize=10)
    fig.tight_layout()
    return _save(fig, out_path)


def plot_schedule(csv_path: str | Path, out_path: str | Path) -> Path:
    with open(csv_path, newline="") as f:
        rows = list(csv.DictReader(f))
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot([int(r["epoch"]) for r in rows], [float(r["beta"]) for r in rows], linewidth=0.8)
    ax.set_xlabel("epoch")
    ax.set_ylabel("beta")
    ax.set_ylim(-0.05, 1.05)
    fig.tight_layout()
    return _save(fig, out_path)


def render_experiment_figures(experiment_dir: str | Path,
                              figures_dir: str | Path | None = None) -> list[Path]:
    """metrics.svg, baseline.svg, measures.svg next to the experiment CSVs."""
    experiment_dir = Path(experiment_dir)
    figures = Path(figures_dir) if figures_dir is not None else experiment_dir / "figures"
    figures.mkdir(parents=True, exist_ok=True)
    return [
        plot_metrics(experiment_dir, figures / "metrics.svg"),
        plot_baseline(experiment_dir, figures / "baseline.svg"),
        plot_measures(experiment_dir, figures / "measures.svg"),
    ]


def _save(fig, out_path: str | Path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return out_path
