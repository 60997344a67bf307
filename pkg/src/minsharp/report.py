"""Delimited output, JSON reports, rank correlations and figures.

Every artifact embeds the fully resolved run configuration and a format
version: CSV files carry them in leading `#` comment lines, JSON files
in top-level fields.  Figures are rendered next to the delimited output
as PNG files with the same stem; the CSV/JSON stays the artifact of
record.
"""

from __future__ import annotations

import json
import os

import numpy as np

FORMAT_VERSION = "1"


def config_json(config: dict) -> str:
    return json.dumps(config, sort_keys=True, separators=(", ", ": "))


def format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_csv(path, header: list[str], rows: list[tuple], config: dict) -> None:
    lines = [
        f"# format_version: {FORMAT_VERSION}",
        f"# config: {config_json(config)}",
        ",".join(header),
    ]
    for row in rows:
        lines.append(",".join(format_cell(v) for v in row))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def write_json(path, payload: dict, config: dict) -> None:
    doc = {"format_version": FORMAT_VERSION, "config": config}
    doc.update(payload)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def figure_path(out_path, suffix: str = "") -> str:
    stem, _ = os.path.splitext(str(out_path))
    return f"{stem}{suffix}.png"


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2:
        return float("nan")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc @ xc) * (yc @ yc))
    if denom == 0:
        return float("nan")
    return float((xc @ yc) / denom)


def _ranks(x: np.ndarray) -> np.ndarray:
    # average ranks for ties
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sorted_x = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j)
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return pearson(_ranks(x), _ranks(y))


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def training_figure(history, path) -> None:
    """Loss and train accuracy per epoch."""
    plt = _pyplot()
    epochs = [h.epoch for h in history]
    fig, ax1 = plt.subplots(figsize=(6, 4))
    ax1.plot(epochs, [h.loss for h in history], color="tab:blue", label="loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss", color="tab:blue")
    ax1.set_yscale("log")
    ax2 = ax1.twinx()
    ax2.plot(
        epochs, [h.accuracy for h in history], color="tab:orange", label="accuracy"
    )
    ax2.set_ylabel("train accuracy", color="tab:orange")
    ax2.set_ylim(0.0, 1.02)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def bench_figure(rows, path) -> None:
    """Timing per method over n, and exact-vs-oracle trace agreement.

    rows: (method, n, mean_seconds, std_seconds, trace_value).
    """
    plt = _pyplot()
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    methods = sorted({r[0] for r in rows})
    for method in methods:
        pts = sorted((r[1], r[2]) for r in rows if r[0] == method)
        ax1.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=method)
    ax1.set_xscale("log")
    ax1.set_yscale("log")
    ax1.set_xlabel("number of samples")
    ax1.set_ylabel("seconds")
    ax1.set_title("trace computation time")
    ax1.legend()

    by_n = {}
    for method, n, _, _, trace_value in rows:
        by_n.setdefault(n, {})[method] = trace_value
    xs, ys = [], []
    for n, values in sorted(by_n.items()):
        if "oracle" in values and "exact" in values:
            xs.append(values["oracle"])
            ys.append(values["exact"])
    if xs:
        lo, hi = min(xs + ys), max(xs + ys)
        pad = 0.05 * (hi - lo) if hi > lo else max(abs(hi), 1.0) * 0.05
        line = [lo - pad, hi + pad]
        ax2.plot(line, line, color="gray", linestyle="--", linewidth=1)
        ax2.scatter(xs, ys, color="tab:red", zorder=3)
    ax2.set_xlabel("oracle trace")
    ax2.set_ylabel("exact trace")
    ax2.set_title("agreement (points on the diagonal)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def experiment_figure(rows, path) -> None:
    """Generalization gap and sharpness across corruption ratios.

    rows: (ratio, seed, gap, ms, ns, train_acc, test_acc); ns may be None.
    """
    plt = _pyplot()
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ratios = sorted({r[0] for r in rows})
    mean_gap = [np.mean([r[2] for r in rows if r[0] == q]) for q in ratios]
    mean_ms = [np.mean([r[3] for r in rows if r[0] == q]) for q in ratios]
    ax1.plot(ratios, mean_gap, marker="o", color="tab:blue", label="gap")
    ax1.set_xlabel("label corruption ratio")
    ax1.set_ylabel("generalization gap", color="tab:blue")
    ax1b = ax1.twinx()
    ax1b.plot(ratios, mean_ms, marker="s", color="tab:red", label="sharpness")
    ax1b.set_ylabel("minimum sharpness", color="tab:red")
    ax1.set_title("means per ratio")

    gaps = [r[2] for r in rows]
    ms_values = [r[3] for r in rows]
    ax2.scatter(ms_values, gaps, c=[r[0] for r in rows], cmap="viridis")
    ax2.set_xlabel("minimum sharpness")
    ax2.set_ylabel("generalization gap")
    ax2.set_title(
        f"pearson={pearson(gaps, ms_values):.3f} "
        f"spearman={spearman(gaps, ms_values):.3f}"
    )
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
