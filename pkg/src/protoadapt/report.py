"""Report emission: aligned text tables, CSV/JSON, and matplotlib figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from protoadapt.adapter import TrainHistory
from protoadapt.evaluation import EvalReport


def format_report(report: EvalReport, class_names: list[str] | None = None) -> str:
    """Human-readable single-report summary with per-class breakdown."""
    lines = [
        f"mode           {report.mode or '-'}",
        f"top-1 accuracy {report.top1:.4f}",
        f"evaluated      {report.n_evaluated}",
        "",
        f"{'class':<24} {'acc':>8} {'n':>6}",
    ]
    for i, (acc, total) in enumerate(
        zip(report.per_class_acc, report.per_class_total)
    ):
        name = class_names[i] if class_names else str(i)
        acc_s = f"{acc:.4f}" if acc is not None else "-"
        lines.append(f"{name:<24} {acc_s:>8} {total:>6}")
    return "\n".join(lines) + "\n"


def format_table(reports: dict, key_header: str) -> str:
    """Aligned table, one row per configuration."""
    lines = [f"{key_header:<16} {'top1':>8} {'n':>6}"]
    for key, rep in reports.items():
        lines.append(f"{str(key):<16} {rep.top1:>8.4f} {rep.n_evaluated:>6}")
    return "\n".join(lines) + "\n"


def write_report_json(reports: dict, path: str | Path) -> None:
    doc = {str(k): rep.to_dict() for k, rep in reports.items()}
    Path(path).write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def write_table_csv(reports: dict, path: str | Path, key_header: str) -> None:
    """One row per configuration with the full config echo."""
    config_keys = sorted({k for rep in reports.values() for k in rep.config})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([key_header, "top1", "n_evaluated"] + config_keys)
        for key, rep in reports.items():
            w.writerow(
                [key, repr(rep.top1), rep.n_evaluated]
                + [rep.config.get(ck, "") for ck in config_keys]
            )


def plot_modes(reports: dict[str, EvalReport], path: str | Path) -> None:
    """Bar chart of accuracy per configuration (ablation rows)."""
    fig, ax = plt.subplots(figsize=(7, 4))
    names = list(reports)
    vals = [reports[m].top1 for m in names]
    ax.bar(names, vals, color="steelblue")
    ax.set_ylabel("top-1 accuracy")
    ax.set_ylim(0, 1)
    for i, v in enumerate(vals):
        ax.text(i, v + 0.01, f"{v:.3f}", ha="center", fontsize=8)
    ax.tick_params(axis="x", rotation=20)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_sweep(reports: dict[int, EvalReport], path: str | Path) -> None:
    """Accuracy vs selection size k."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ks = sorted(reports)
    ax.plot(ks, [reports[k].top1 for k in ks], marker="o")
    ax.set_xlabel("selected samples per class (k)")
    ax.set_ylabel("top-1 accuracy")
    ax.set_xscale("log", base=2)
    ax.set_xticks(ks, [str(k) for k in ks])
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_history(history: TrainHistory, path: str | Path) -> None:
    """Training loss and accuracy per epoch."""
    epochs = range(1, len(history.epochs) + 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [r["loss"] for r in history.epochs], label="loss", color="tab:red")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean training loss", color="tab:red")
    ax2 = ax.twinx()
    ax2.plot(
        epochs,
        [r["train_acc"] for r in history.epochs],
        label="train acc",
        color="tab:blue",
    )
    ax2.set_ylabel("training accuracy", color="tab:blue")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_per_class(
    report: EvalReport, path: str | Path, class_names: list[str] | None = None
) -> None:
    """Per-class accuracy bars for one evaluation."""
    accs = report.per_class_acc
    names = class_names or [str(i) for i in range(len(accs))]
    fig, ax = plt.subplots(figsize=(max(6, 0.4 * len(accs)), 4))
    ax.bar(names, [a if a is not None else 0.0 for a in accs], color="seagreen")
    ax.axhline(report.top1, color="black", ls="--", lw=1, label=f"overall {report.top1:.3f}")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1)
    ax.legend()
    ax.tick_params(axis="x", rotation=90, labelsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
