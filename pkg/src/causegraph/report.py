"""Report rendering: JSON, aligned text tables, CSV, and matplotlib figures.

Figures are rendered with the Agg backend and scrubbed PNG metadata so repeat
runs with the same inputs produce byte-identical files.
"""

from __future__ import annotations

import csv
import json

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_PNG_META = {"Software": ""}


def write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def metrics_table(rows: list[tuple[str, float, float, float]]) -> str:
    """Aligned table in (Method, P, R, F1) column order."""
    width = max([len("Method")] + [len(r[0]) for r in rows])
    lines = [f"{'Method':<{width}}  {'P':>6}  {'R':>6}  {'F1':>6}"]
    for method, p, r, f1 in rows:
        lines.append(f"{method:<{width}}  {p:>6.1f}  {r:>6.1f}  {f1:>6.1f}")
    return "\n".join(lines) + "\n"


def write_metrics(out_dir, name: str, rows: list[tuple[str, float, float, float]],
                  extra: dict | None = None) -> None:
    payload = {method: {"precision": p, "recall": r, "f1": f1}
               for method, p, r, f1 in rows}
    if extra:
        payload.update(extra)
    write_json(out_dir / f"{name}.json", payload)
    (out_dir / f"{name}.txt").write_text(metrics_table(rows), encoding="utf-8")
    with open(out_dir / f"{name}.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "precision", "recall", "f1"])
        for method, p, r, f1 in rows:
            writer.writerow([method, f"{p:.4f}", f"{r:.4f}", f"{f1:.4f}"])


def _save(fig, path) -> None:
    fig.savefig(path, format="png", metadata=_PNG_META)
    plt.close(fig)


def plot_training_curve(path, epochs: list[int], losses: list[float],
                        dev_f1: list[float]) -> None:
    fig, ax1 = plt.subplots(figsize=(6, 4))
    ax1.plot(epochs, losses, color="tab:blue", label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("mean batch loss", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(epochs, dev_f1, color="tab:red", label="dev F1")
    ax2.set_ylabel("dev F1 (%)", color="tab:red")
    ax2.set_ylim(0, 105)
    fig.tight_layout()
    _save(fig, path)


def plot_fold_f1(path, f1s: list[float], aggregate: float) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(range(len(f1s)), f1s, color="tab:blue", label="per fold")
    ax.axhline(aggregate, color="tab:red", linestyle="--", label="pooled")
    ax.set_xlabel("fold")
    ax.set_ylabel("F1 (%)")
    ax.set_ylim(0, 105)
    ax.set_xticks(range(len(f1s)))
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def plot_layer_sweep(path, layers: list[int], f1s: list[float]) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(layers, f1s, marker="o", color="tab:blue")
    ax.set_xlabel("graph layers")
    ax.set_ylabel("F1 (%)")
    ax.set_xticks(layers)
    ax.set_ylim(0, 105)
    fig.tight_layout()
    _save(fig, path)
