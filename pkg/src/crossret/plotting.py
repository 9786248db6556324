"""Matplotlib figures written next to the report tables."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
}

# keeps PNG bytes stable across runs
_PNG_META = {"Software": None}


def _legend(ax, n: int):
    if n > 6:
        ax.legend(loc="upper left", bbox_to_anchor=(1.01, 1.0), frameon=False, ncol=1 + n // 14)
    else:
        ax.legend(loc="upper left", frameon=False)


def _colors(ax, n: int):
    if n > 10:
        ax.set_prop_cycle(color=plt.get_cmap("tab20").colors[:n])


def _save(fig, path: Path):
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def plot_cumulative(series_rows, bucket: str, path) -> Path:
    """Cumulative long-short return (percent) for every model in one bucket scheme."""
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(8.0, 3.8))
        by_model: dict = {}
        for r in series_rows:
            if r["bucket"] == bucket:
                by_model.setdefault(r["model"], []).append(r)
        _colors(ax, len(by_model))
        for name, rows in by_model.items():
            ax.plot(range(len(rows)), [100 * r["cumulative"] for r in rows], label=name, lw=1.2)
        if by_model:
            months = [r["month"] for r in next(iter(by_model.values()))]
            step = max(1, len(months) // 8)
            ax.set_xticks(range(0, len(months), step))
            ax.set_xticklabels(months[::step], rotation=45, ha="right")
            _legend(ax, len(by_model))
        ax.axhline(0.0, color="0.6", lw=0.6)
        ax.set_ylabel("cumulative long-short return (%)")
        ax.set_title(f"{bucket} long-short portfolio")
        _save(fig, path)
    return path


def plot_corr(doc, path) -> Path:
    """Monthly rank correlation per model, with the mean as a dashed line."""
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(8.0, 3.8))
        _colors(ax, len(doc["monthly"]))
        for name, months in doc["monthly"].items():
            vals = [float(m["corr"]) for m in months]
            line, = ax.plot(range(len(vals)), vals, lw=0.9, label=name)
            if vals:
                ax.axhline(sum(vals) / len(vals), color=line.get_color(), ls="--", lw=0.7)
        ax.axhline(0.0, color="0.6", lw=0.6)
        ax.set_xlabel("prediction month")
        ax.set_ylabel("rank correlation")
        if doc["monthly"]:
            _legend(ax, len(doc["monthly"]))
        _save(fig, path)
    return path


def plot_summary_bars(doc, path) -> Path:
    """Mean CORR per model as horizontal bars."""
    path = Path(path)
    rows = [r for r in doc["rows"] if r["status"] == "ok"]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 0.35 * max(len(rows), 3) + 1.0))
        ax.barh([r["name"] for r in rows][::-1], [r["corr"] for r in rows][::-1], color="0.35")
        ax.axvline(0.0, color="0.6", lw=0.6)
        ax.set_xlabel("mean monthly rank correlation")
        _save(fig, path)
    return path
