"""Report rows, run-directory persistence and the aligned text table."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import MissingRunArtifacts
from .metrics import FRACTIONS, stars
from .mlp import PRESET_GROUPS
from .pipeline import BacktestReport

SCHEMA_VERSION = 1

ROW_COLUMNS = [
    "name", "status", "n_months", "corr",
    "dir_tertile_pct", "dir_tertile_p", "dir_tertile_stars",
    "dir_quintile_pct", "dir_quintile_p", "dir_quintile_stars",
    "mse",
    "return_tertile_pct", "risk_tertile_pct", "rr_tertile",
    "return_quintile_pct", "risk_quintile_pct", "rr_quintile",
    "error",
]

MONTHLY_COLUMNS = [
    "month", "n", "corr", "mse",
    "dir_tertile_hits", "dir_tertile_total", "dir_quintile_hits", "dir_quintile_total",
    "ls_tertile", "ls_quintile",
]


def report_row(rep: BacktestReport) -> dict:
    row = {c: None for c in ROW_COLUMNS}
    row["name"] = rep.name
    if not rep.ok:
        row["status"] = "failed"
        row["error"] = rep.error
        return row
    s = rep.summary
    row.update(status="ok", n_months=s.n_months, corr=s.corr, mse=s.mse)
    for f, d in s.direction.items():
        row[f"dir_{f}_pct"] = 100.0 * d.fraction
        row[f"dir_{f}_p"] = d.p_value
        row[f"dir_{f}_stars"] = d.stars
    for f, st in rep.strategy.items():
        row[f"return_{f}_pct"] = st.return_pct
        row[f"risk_{f}_pct"] = st.risk_pct
        row[f"rr_{f}"] = st.r_over_r
    return row


def group_averages(rows: Sequence[dict]) -> list[dict]:
    """Category means over complete preset groups (DNN8_Avg, DNN5_Avg, ...)."""
    by_name = {r["name"]: r for r in rows if r["status"] == "ok"}
    out = []
    for group, names in PRESET_GROUPS.items():
        if not all(n in by_name for n in names):
            continue
        members = [by_name[n] for n in names]
        avg = {"name": f"{group}_Avg"}
        for col in ("corr", "dir_tertile_pct", "dir_quintile_pct", "mse"):
            avg[col] = float(np.mean([m[col] for m in members]))
        out.append(avg)
    return out


def monthly_rows(rep: BacktestReport) -> list[dict]:
    rows = []
    for k, ev in enumerate(rep.evals):
        rows.append({
            "month": ev.month, "n": ev.universe, "corr": ev.corr, "mse": ev.mse,
            **{f"dir_{f}_hits": ev.direction[f].hits for f in FRACTIONS},
            **{f"dir_{f}_total": ev.direction[f].total for f in FRACTIONS},
            **{f"ls_{f}": rep.ls[f][k].ls_return for f in FRACTIONS},
        })
    return rows


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "NA" if math.isnan(v) else repr(v)
    return str(v)


def write_csv(path: Path, columns: list[str], rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in columns])


def safe_name(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "._-" else "_" for ch in name)


def write_run(out: Path, reports: Sequence[BacktestReport], resolved_config: dict) -> None:
    """Persist one run: report JSON/CSV, monthly series, score sheets, fit log."""
    out = Path(out)
    (out / "scores").mkdir(parents=True, exist_ok=True)
    (out / "monthly").mkdir(exist_ok=True)
    rows = [report_row(r) for r in reports]
    fits = {r.name: [{"prediction_month": f.prediction_month, "train_month": f.train_month,
                      "n_examples": f.n_examples, "train_mse": f.train_mse, **f.info}
                     for f in r.fits] for r in reports}
    doc = {
        "schema_version": SCHEMA_VERSION,
        "config": resolved_config,
        "rows": rows,
        "group_averages": group_averages(rows),
        "fits": fits,
    }
    (out / "config.resolved.json").write_text(json.dumps(resolved_config, indent=2) + "\n")
    (out / "report.json").write_text(json.dumps(doc, indent=2) + "\n")
    write_csv(out / "report.csv", ROW_COLUMNS, rows)
    for r in reports:
        if not r.ok:
            continue
        r.sheet.to_csv(out / "scores" / f"{safe_name(r.name)}.csv")
        write_csv(out / "monthly" / f"{safe_name(r.name)}.csv", MONTHLY_COLUMNS, monthly_rows(r))


def load_run(run_dir) -> dict:
    run_dir = Path(run_dir)
    path = run_dir / "report.json"
    if not path.is_file():
        raise MissingRunArtifacts(f"{run_dir}: no report.json")
    doc = json.loads(path.read_text())
    monthly = {}
    for row in doc["rows"]:
        if row["status"] != "ok":
            continue
        p = run_dir / "monthly" / f"{safe_name(row['name'])}.csv"
        if not p.is_file():
            raise MissingRunArtifacts(f"{p} missing")
        with open(p, newline="", encoding="utf-8") as fh:
            monthly[row["name"]] = list(csv.DictReader(fh))
    doc["monthly"] = monthly
    return doc


def _fmt(v, spec: str) -> str:
    if v is None:
        return "-"
    return format(v, spec)


def render_table(doc: dict) -> str:
    """Aligned text table: CORR, Direction %, MSE, then Return/Risk/R-R per bucket."""
    head = ["Model", "CORR", "Dir T%", "Dir Q%", "MSE",
            "Ret T%", "Risk T%", "R/R T", "Ret Q%", "Risk Q%", "R/R Q"]
    lines = []
    for r in doc["rows"]:
        if r["status"] != "ok":
            lines.append([r["name"], "failed: " + (r.get("error") or "")] + [""] * (len(head) - 2))
            continue
        lines.append([
            r["name"], _fmt(r["corr"], ".4f"),
            _fmt(r["dir_tertile_pct"], ".2f") + (r["dir_tertile_stars"] or ""),
            _fmt(r["dir_quintile_pct"], ".2f") + (r["dir_quintile_stars"] or ""),
            _fmt(r["mse"], ".4f"),
            _fmt(r["return_tertile_pct"], ".2f"), _fmt(r["risk_tertile_pct"], ".2f"),
            _fmt(r["rr_tertile"], ".2f"),
            _fmt(r["return_quintile_pct"], ".2f"), _fmt(r["risk_quintile_pct"], ".2f"),
            _fmt(r["rr_quintile"], ".2f"),
        ])
    for g in doc.get("group_averages", []):
        lines.append([g["name"], _fmt(g["corr"], ".4f"), _fmt(g["dir_tertile_pct"], ".2f"),
                      _fmt(g["dir_quintile_pct"], ".2f"), _fmt(g["mse"], ".4f")] + [""] * 6)
    widths = [max(len(str(x)) for x in col) for col in zip(head, *lines)]
    fmt_row = lambda cells: "  ".join(  # noqa: E731
        str(c).ljust(w) if i == 0 else str(c).rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))
    out = [fmt_row(head), "  ".join("-" * w for w in widths)]
    out += [fmt_row(x) for x in lines]
    out.append("")
    out.append("***p<0.001, **p<0.01, *p<0.05 (one-sided binomial test of Direction > 50%)")
    return "\n".join(out) + "\n"


def cumulative_series(doc: dict) -> list[dict]:
    rows = []
    for name, months in doc["monthly"].items():
        for f in FRACTIONS:
            cum = 0.0
            for m in months:
                ls = float(m[f"ls_{f}"])
                cum += ls
                rows.append({"month": m["month"], "model": name, "bucket": f,
                             "ls_return": ls, "cumulative": cum})
    return rows


__all__ = ["SCHEMA_VERSION", "cumulative_series", "group_averages", "load_run", "render_table",
           "report_row", "stars", "write_run"]
