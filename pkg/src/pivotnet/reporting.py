"""Figure rendering for finished runs.

Reads the delimited files a run leaves behind (metrics, score densities,
AMS scans, summary) and renders SVG figures next to them.  Everything
here is file-to-file: no network objects are needed to build a report.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .errors import DataError
from .evaluation import GAUSSIAN_UNIT_ENTROPY
from .training import read_metrics_csv


def read_density_csv(path: str | Path):
    """Return {z_value: (bin_edges, masses)} from a density table."""
    groups: dict[float, list[tuple[float, float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["z", "bin_lo", "bin_hi", "mass"]:
            raise DataError(f"{path}: unexpected density schema {header}")
        for row in reader:
            if not row:
                continue
            z, lo, hi, mass = (float(v) for v in row)
            groups.setdefault(z, []).append((lo, hi, mass))
    out = {}
    for z, rows in groups.items():
        rows.sort()
        edges = [r[0] for r in rows] + [rows[-1][1]]
        out[z] = (edges, [r[2] for r in rows])
    return out


def read_ams_csv(path: str | Path):
    thresholds, ams_values = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["threshold", "s", "b", "ams"]:
            raise DataError(f"{path}: unexpected ams schema {header}")
        for row in reader:
            if not row:
                continue
            thresholds.append(float(row[0]))
            ams_values.append(float(row[3]) if row[3] != "" else math.nan)
    return thresholds, ams_values


def read_summary_kv(path: str | Path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition(" = ")
            if not _:
                raise DataError(f"{path}: malformed summary line {line!r}")
            out[key] = value
    return out


def plot_training_curves(
    metrics: dict, path: str | Path, lam: float, h_y_given_x: float | None = None
) -> None:
    """Three stacked panels: L_f, L_r and E_lambda over iterations.

    Dashed reference lines mark the nuisance prior's entropy on the L_r
    panel and, when a conditional-entropy estimate is supplied, the
    optimal-pivotal levels L_f = H(Y|X) and E = H(Y|X) - lam * H(Z).
    """
    it = metrics["iteration"]
    fig, axes = plt.subplots(3, 1, figsize=(7, 8), sharex=True)
    axes[0].plot(it, metrics["loss_f"], color="tab:blue")
    axes[0].set_ylabel("classifier loss")
    if h_y_given_x is not None:
        axes[0].axhline(h_y_given_x, ls="--", color="gray", label="H(Y|X)")
        axes[0].legend(loc="best", fontsize=8)
    axes[1].plot(it, metrics["loss_r"], color="tab:red")
    axes[1].axhline(GAUSSIAN_UNIT_ENTROPY, ls="--", color="gray", label="H(Z)")
    axes[1].set_ylabel("adversary loss")
    axes[1].legend(loc="best", fontsize=8)
    axes[2].plot(it, metrics["e_lambda"], color="tab:green")
    if h_y_given_x is not None:
        axes[2].axhline(
            h_y_given_x - lam * GAUSSIAN_UNIT_ENTROPY,
            ls="--",
            color="gray",
            label="H(Y|X) - lambda H(Z)",
        )
        axes[2].legend(loc="best", fontsize=8)
    axes[2].set_ylabel("value")
    axes[2].set_xlabel("iteration")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_score_densities(densities: dict, path: str | Path, title: str = "") -> None:
    """Step curves of the score distribution, one per nuisance value."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for z in sorted(densities):
        edges, masses = densities[z]
        ax.stairs(masses, edges, label=f"z = {z:g}")
    ax.set_xlabel("classifier score")
    ax.set_ylabel("probability mass per bin")
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_ams_scan(thresholds, ams_values, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(thresholds, ams_values, color="tab:purple")
    finite = [(a, t) for t, a in zip(thresholds, ams_values) if not math.isnan(a)]
    if finite:
        best_ams, best_t = max(finite)
        ax.axvline(best_t, ls=":", color="gray")
        ax.annotate(
            f"best {best_ams:.3f} @ {best_t:.3f}",
            xy=(best_t, best_ams),
            fontsize=8,
        )
    ax.set_xlabel("selection threshold")
    ax.set_ylabel("significance")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def render_report(run_dir: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    """Render every figure the run's files support; returns written paths.

    Requires metrics.csv and summary.txt; density and AMS figures are
    produced when their tables are present.
    """
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir is not None else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = run_dir / "metrics.csv"
    summary_path = run_dir / "summary.txt"
    if not metrics_path.exists() or not summary_path.exists():
        raise DataError(
            f"run directory {run_dir} is missing metrics.csv or summary.txt; "
            "was training completed?"
        )
    summary = read_summary_kv(summary_path)
    lam = float(summary.get("lambda", "0"))
    h_y_given_x = (
        float(summary["h_y_given_x"]) if "h_y_given_x" in summary else None
    )
    written = []
    metrics = read_metrics_csv(metrics_path)
    if len(metrics["iteration"]):
        curves_path = out_dir / "training_curves.svg"
        plot_training_curves(metrics, curves_path, lam, h_y_given_x)
        written.append(curves_path)
    for stem, title in (("densities", "final"), ("densities_pretrain", "pretrained")):
        table = run_dir / f"{stem}.csv"
        if table.exists():
            fig_path = out_dir / f"{stem}.svg"
            plot_score_densities(read_density_csv(table), fig_path, title=title)
            written.append(fig_path)
    ams_table = run_dir / "ams.csv"
    if ams_table.exists():
        thresholds, ams_values = read_ams_csv(ams_table)
        fig_path = out_dir / "ams.svg"
        plot_ams_scan(thresholds, ams_values, fig_path)
        written.append(fig_path)
    return written
