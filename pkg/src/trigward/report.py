"""Result tables and plots: long-form CSV, defense-comparison and
trigger-bound sweep pivots, flip-curve and bound-check figures, plus a JSON
mirror that round-trips to the same CSV content."""

import csv
import json
from pathlib import Path

import numpy as np

from .evaluation import mean_over_surrogates


def _fmt(x):
    return f"{x:.6f}" if isinstance(x, float) else str(x)


def write_long_csv(rows, path):
    """One row per (victim, surrogate, attack) cell plus clean rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = ["dataset", "victim_id", "defense", "surrogate_id", "attack", "eps",
              "robust_accuracy", "clean_accuracy", "seed", "victim_checkpoint",
              "surrogate_checkpoint"]
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in fields})
    return path


def pivot_table(matrices, victim_columns, clean_by_victim):
    """Collapse matrices into a defense-comparison pivot.

    ``victim_columns`` maps victim_id -> column label; victims sharing a
    label are averaged together (the per-victim mean over surrogates, then
    the mean over the column's victims (the grand mean restricted to that
    column)).
    """
    columns = []
    for vid in victim_columns:
        label = victim_columns[vid]
        if label not in columns:
            columns.append(label)
    table = {"columns": columns, "rows": []}

    clean_row = {"attack": "clean"}
    for label in columns:
        vids = [v for v, lab in victim_columns.items() if lab == label]
        clean_row[label] = float(np.mean([clean_by_victim[v] for v in vids]))
    table["rows"].append(clean_row)

    for attack_id, matrix in matrices.items():
        row = {"attack": attack_id}
        pv = matrix.per_victim_mean()
        for label in columns:
            vids = [v for v, lab in victim_columns.items() if lab == label]
            row[label] = float(np.mean([pv[v] for v in vids]))
        table["rows"].append(row)
    return table


def write_pivot_csv(table, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["attack"] + table["columns"])
        for row in table["rows"]:
            w.writerow([row["attack"]] + [_fmt(row[c]) for c in table["columns"]])
    return path


def json_mirror(payload, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
    return path


def plot_flip_curve(curve, path, title="trigger sign-flip probe"):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax1 = plt.subplots(figsize=(5, 3.4))
    ax1.plot(curve.proportions, curve.loss_values, "o-", color="tab:red", label="loss")
    ax1.set_xlabel("flipped proportion of -tau")
    ax1.set_ylabel("cross-entropy", color="tab:red")
    ax2 = ax1.twinx()
    ax2.plot(curve.proportions, curve.accuracies, "s-", color="tab:blue", label="accuracy")
    ax2.set_ylabel("accuracy", color="tab:blue")
    ax2.set_ylim(0, 1)
    ax1.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def plot_bound_check(report, path, title="first-order bound check"):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = ["loss(delta*)", "max random", "mean random", "loss(0)"]
    vals = [report.loss_star, float(report.loss_random.max()) if report.loss_random.size else 0.0,
            float(report.loss_random.mean()) if report.loss_random.size else 0.0,
            report.loss_zero]
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.bar(labels, vals, color=["tab:red", "tab:orange", "tab:blue", "tab:gray"])
    ax.axhline(report.loss_zero + report.bound, ls="--", color="k",
               label="loss(0) + (eps/eps_t) log C")
    ax.set_ylabel("mean cross-entropy")
    ax.set_title(f"{title} (eps={report.eps:.4f}, eps_t={report.eps_t:.4f})")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def plot_sweep(sweep_rows, path, title="robustness vs trigger bound"):
    """sweep_rows: list of {eps_t, robust, clean}."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    xs = [r["eps_t"] for r in sweep_rows]
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.plot(xs, [r["robust"] for r in sweep_rows], "o-", label="robust accuracy")
    ax.plot(xs, [r["clean"] for r in sweep_rows], "s--", label="clean (triggered) accuracy")
    ax.set_xlabel("trigger bound eps_t")
    ax.set_ylabel("accuracy")
    ax.set_xscale("log")
    ax.set_ylim(0, 1)
    ax.legend()
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
