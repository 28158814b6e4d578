"""Plot-ready CSV tables built from finished runs.

target_vs_achieved.csv, one row per run, sorted by target:
    target, achieved_density, val_error, retained_params_fraction,
    retained_macs_fraction, method, lambda_pen, status, run
    (``target`` is blank for penalized runs, which sort after the rest by lambda_pen)

traces.csv, one row per logged step and group:
    run, step, epoch, group, density, lambda, train_loss
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

from .experiment import read_metrics

SUMMARY_COLUMNS = ["target", "achieved_density", "val_error", "retained_params_fraction",
                   "retained_macs_fraction", "method", "lambda_pen", "status", "run"]
TRACE_COLUMNS = ["run", "step", "epoch", "group", "density", "lambda", "train_loss"]


def _scalar(v):
    if v is None:
        return None
    if isinstance(v, (list, tuple)):
        return float(v[0]) if len(v) == 1 else None
    return float(v)


def _cell(v):
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


def summary_row(summary: dict, run: str):
    report = summary.get("report", {})
    achieved = summary.get("overall_density", _scalar(summary.get("achieved_density")))
    return {
        "target": _scalar(summary.get("target")),
        "achieved_density": achieved,
        "val_error": summary.get("val_error"),
        "retained_params_fraction": report.get("retained_params_fraction"),
        "retained_macs_fraction": report.get("retained_macs_fraction"),
        "method": summary.get("method", ""),
        "lambda_pen": _scalar(summary.get("lambda_pen")),
        "status": summary.get("status", ""),
        "run": run,
    }


def _sort_key(row):
    t, lam = row["target"], row["lambda_pen"]
    return (t is None, t if t is not None else (lam if lam is not None else 0.0), row["run"])


def write_target_table(rows, path):
    rows = sorted(rows, key=_sort_key)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow([_cell(r[c]) for c in SUMMARY_COLUMNS])
    return rows


def write_traces(traces, path):
    """``traces`` maps run name to metrics rows as read from metrics.csv."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for run in sorted(traces):
            for rec in traces[run]:
                groups = sorted(int(k.split("_")[1]) for k in rec if k.startswith("density_"))
                for g in groups:
                    w.writerow([run, rec["step"], rec["epoch"], g, rec[f"density_{g}"],
                                rec.get(f"lambda_{g}", ""), rec["train_loss"]])


def emit_plot_data(runs_dir, out_dir=None):
    """Scan ``runs_dir`` for run folders (summary.json + metrics.csv) and write both tables."""
    runs_dir = Path(runs_dir)
    out_dir = Path(out_dir) if out_dir is not None else runs_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    rows, traces = [], {}
    for summary_path in sorted(runs_dir.glob("*/summary.json")):
        run = summary_path.parent.name
        rows.append(summary_row(json.loads(summary_path.read_text()), run))
        metrics = summary_path.parent / "metrics.csv"
        if metrics.exists():
            traces[run] = read_metrics(metrics)
    write_target_table(rows, out_dir / "target_vs_achieved.csv")
    write_traces(traces, out_dir / "traces.csv")
    return out_dir / "target_vs_achieved.csv", out_dir / "traces.csv"
