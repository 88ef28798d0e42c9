"""Report files: metrics JSON, gap-table CSV, histogram JSON.

``metrics.json`` deliberately carries no wall-clock data (that goes to
``timing.json``) so repeated identical runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from .experiment import ExperimentResult

METRICS_SCHEMA_VERSION = 1
ROW_LABELS = ("Positive", "Hard Negative", "Easy Negative", "Precision@1")


def _dump(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def gap_table(columns: list[tuple[str, dict]]) -> list[list[str]]:
    """Rows of the gap CSV; ``columns`` pairs a header with a gap-report dict."""
    header = ["Type"] + [name for name, _ in columns]
    rows = [header]
    cells = {label: [label] for label in ROW_LABELS}
    for _, r in columns:
        cells["Positive"].append(f"{r['mean_positive']:.4f}")
        cells["Hard Negative"].append(f"{r['mean_hard_negative']:.4f}({r['hard_gap']:+.4f})")
        cells["Easy Negative"].append(f"{r['mean_easy_negative']:.4f}({r['easy_gap']:+.4f})")
        cells["Precision@1"].append(f"{100 * r['precision_at_1']:.1f}")
    rows.extend(cells[label] for label in ROW_LABELS)
    return rows


def _write_csv(path: Path, rows: list[list[str]]) -> None:
    with path.open("w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def emit_report(results: list[ExperimentResult], out_dir) -> dict[str, Path]:
    """Write metrics.json, gap_report.csv, histograms.json and timing.json; return their paths."""
    if not results:
        raise ValidationError("no results to report")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "metrics": out / "metrics.json",
            "gap_report": out / "gap_report.csv",
            "histograms": out / "histograms.json",
            "timing": out / "timing.json",
        }
        _dump(paths["metrics"], {"schema_version": METRICS_SCHEMA_VERSION, "results": [r.metrics() for r in results]})
        _write_csv(paths["gap_report"], gap_table([(r.name, r.report.to_dict()) for r in results]))
        _dump(
            paths["histograms"],
            {
                "schema_version": METRICS_SCHEMA_VERSION,
                "runs": [{"name": r.name, "seed": r.seed, "histogram": r.histogram.to_dict()} for r in results],
            },
        )
        _dump(paths["timing"], {r.name: r.wall_clock_seconds for r in results})
    except OSError as exc:
        raise ValidationError(f"cannot write report to {out}: {exc}") from exc
    return paths


def aggregate_runs(runs_dir) -> dict:
    """Average every metrics.json under ``runs_dir`` per result name (first-seen order)."""
    files = sorted(Path(runs_dir).rglob("metrics.json"))
    if not files:
        raise ValidationError(f"no metrics.json under {runs_dir}")
    grouped: dict[str, list[dict]] = {}
    for f in files:
        for res in json.loads(f.read_text())["results"]:
            grouped.setdefault(res["name"], []).append(res)
    summary = {}
    for name, items in grouped.items():
        fields = ("mean_positive", "mean_hard_negative", "mean_easy_negative", "hard_gap", "easy_gap", "precision_at_1")
        avg = {k: float(np.mean([it["gap_report"][k] for it in items])) for k in fields}
        avg["recall_at_5"] = float(np.mean([it["recall_at_5"] for it in items]))
        avg["n_runs"] = len(items)
        avg["seeds"] = sorted(it["seed"] for it in items)
        summary[name] = avg
    return {"schema_version": METRICS_SCHEMA_VERSION, "variants": summary}


def write_summary(summary: dict, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"summary": out / "summary.json", "summary_csv": out / "summary.csv"}
    _dump(paths["summary"], summary)
    _write_csv(paths["summary_csv"], gap_table(list(summary["variants"].items())))
    return paths
