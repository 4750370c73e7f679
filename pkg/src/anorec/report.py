"""Evaluation reports: JSON for machines, a text table for humans, and
per-criterion ROC points as CSV with a rendered PNG figure.

All artifacts land in one output directory. Rendering uses the Agg
backend so reports work without a display.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .errors import ValidationError
from .evaluation import RocCurve

REPORT_JSON = "report.json"
REPORT_TXT = "report.txt"


def roc_csv_name(criterion: str) -> str:
    return f"roc_{criterion}.csv"


def roc_png_name(criterion: str) -> str:
    return f"roc_{criterion}.png"


def build_report(curves: dict[str, RocCurve], meta: dict | None = None) -> dict:
    """Summary dict for a set of named ROC criteria."""
    criteria = {}
    for name in sorted(curves):
        curve = curves[name]
        criteria[name] = {
            "auc": float(curve.auc),
            "eer": float(curve.eer),
            "points": int(len(curve.tpr)),
        }
    return {"criteria": criteria, "meta": dict(meta or {})}


def validate_report(report: dict) -> None:
    """Schema check for a report dict (as written to report.json)."""
    if not isinstance(report, dict):
        raise ValidationError("report must be an object")
    for key in ("criteria", "meta"):
        if key not in report:
            raise ValidationError(f"report lacks {key!r}")
    if not isinstance(report["criteria"], dict):
        raise ValidationError("report criteria must be an object")
    if not isinstance(report["meta"], dict):
        raise ValidationError("report meta must be an object")
    for name, entry in report["criteria"].items():
        if not isinstance(entry, dict):
            raise ValidationError(f"criterion {name!r} must be an object")
        for field in ("auc", "eer", "points"):
            if field not in entry:
                raise ValidationError(f"criterion {name!r} lacks {field!r}")
        for field in ("auc", "eer"):
            v = entry[field]
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ValidationError(f"criterion {name!r}: {field} not numeric")
            if not 0.0 <= float(v) <= 1.0:
                raise ValidationError(
                    f"criterion {name!r}: {field} {v} outside [0, 1]"
                )
        points = entry["points"]
        if not isinstance(points, int) or isinstance(points, bool) or points < 0:
            raise ValidationError(
                f"criterion {name!r}: points must be a non-negative integer"
            )


def format_report_table(report: dict) -> str:
    """Fixed-width text table over the report's criteria."""
    rows = [("criterion", "auc", "eer", "points")]
    for name in sorted(report["criteria"]):
        entry = report["criteria"][name]
        rows.append(
            (name, f"{entry['auc']:.6f}", f"{entry['eer']:.6f}",
             str(entry["points"]))
        )
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = []
    for r in rows:
        lines.append(
            "  ".join(
                r[0].ljust(widths[0]) if i == 0 else r[i].rjust(widths[i])
                for i in range(4)
            ).rstrip()
        )
    meta = report.get("meta") or {}
    for key in sorted(meta):
        lines.append(f"{key}: {meta[key]}")
    return "\n".join(lines) + "\n"


def write_roc_csv(path: str | os.PathLike, curve: RocCurve) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["threshold", "tpr", "fpr"])
        for t, tpr, fpr in zip(curve.thresholds, curve.tpr, curve.fpr):
            w.writerow([repr(float(t)), repr(float(tpr)), repr(float(fpr))])


def render_roc_png(path: str | os.PathLike, curve: RocCurve, title: str) -> None:
    fig, ax = plt.subplots(figsize=(5, 5))
    try:
        ax.plot(curve.fpr, curve.tpr, marker=".", markersize=3,
                label=f"AUC {curve.auc:.4f}")
        ax.plot([0, 1], [0, 1], linestyle=":", linewidth=1, color="gray")
        ax.plot([curve.eer], [1.0 - curve.eer], marker="o", markersize=5,
                color="crimson", linestyle="none",
                label=f"EER {curve.eer:.4f}")
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.set_xlim(-0.02, 1.02)
        ax.set_ylim(-0.02, 1.02)
        ax.set_title(title)
        ax.legend(loc="lower right")
        fig.savefig(path, dpi=120, bbox_inches="tight")
    finally:
        plt.close(fig)


def write_report(
    outdir: str | os.PathLike,
    curves: dict[str, RocCurve],
    meta: dict | None = None,
) -> dict:
    """Write report.json, report.txt, and per-criterion CSV + PNG.

    Returns the report dict that was written.
    """
    outdir = os.fspath(outdir)
    os.makedirs(outdir, exist_ok=True)
    report = build_report(curves, meta)
    validate_report(report)
    with open(os.path.join(outdir, REPORT_JSON), "w") as f:
        json.dump(report, f, sort_keys=True, indent=1)
        f.write("\n")
    with open(os.path.join(outdir, REPORT_TXT), "w") as f:
        f.write(format_report_table(report))
    for name, curve in curves.items():
        write_roc_csv(os.path.join(outdir, roc_csv_name(name)), curve)
        render_roc_png(os.path.join(outdir, roc_png_name(name)), curve, name)
    return report
