"""Desk-scale quantitative analysis: error percentiles, MAE, repeatability."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .geometry import DualPlaneRig
from .imaging import ncc
from .registration import evaluate_errors

REPEATABILITY_GATE = 0.985

SERIES_TARGET = "target-robot"
SERIES_AUTO = "auto-reg"
SERIES_MANUAL = "manual"

METRICS = ("inplane_l1", "geodesic")


class EvalError(ValueError):
    pass


@dataclass
class PercentileTable:
    series: str
    metric: str
    values: np.ndarray  # value at integer percentile ranks 1..100

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (100,):
            raise EvalError("percentile table needs ranks 1..100")


def _series_errors(records, rig: DualPlaneRig):
    out = {SERIES_TARGET: {m: [] for m in METRICS}}
    have_auto = any(r.auto_pose is not None for r in records)
    have_manual = any(r.manual_pose is not None for r in records)
    if have_auto:
        out[SERIES_AUTO] = {m: [] for m in METRICS}
    if have_manual:
        out[SERIES_MANUAL] = {m: [] for m in METRICS}
    for r in records:
        pairs = [(SERIES_TARGET, r.target_pose)]
        if r.auto_pose is not None:
            pairs.append((SERIES_AUTO, r.auto_pose))
        if r.manual_pose is not None:
            pairs.append((SERIES_MANUAL, r.manual_pose))
        for series, est in pairs:
            e = evaluate_errors(est, r.true_pose, rig)
            out[series]["inplane_l1"].append(e.inplane_l1)
            out[series]["geodesic"].append(e.geodesic)
    return out


def error_percentiles(records, rig: DualPlaneRig) -> list[PercentileTable]:
    """Linear-interpolated percentiles 1..100 per series and metric."""
    if not records:
        raise EvalError("no records")
    ranks = np.arange(1, 101)
    tables = []
    for series, metrics in _series_errors(records, rig).items():
        for metric, vals in metrics.items():
            tables.append(
                PercentileTable(series, metric, np.percentile(vals, ranks, method="linear"))
            )
    return tables


def mae_summary(records, rig: DualPlaneRig) -> dict:
    """{series: {"mae_mm": float, "mae_deg": float}}"""
    out = {}
    for series, metrics in _series_errors(records, rig).items():
        out[series] = {
            "mae_mm": float(np.mean(metrics["inplane_l1"])),
            "mae_deg": float(np.mean(metrics["geodesic"])),
        }
    return out


def repeatability_report(images) -> dict:
    """Pairwise NCC matrix with unit diagonal; pass iff min off-diagonal
    >= 0.985."""
    if len(images) < 2:
        raise EvalError("need >= 2 images")
    n = len(images)
    mat = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            v = ncc(images[i], images[j])
            mat[i, j] = v
            mat[j, i] = v
    off = mat[~np.eye(n, dtype=bool)]
    return {
        "ncc_matrix": mat,
        "min_ncc": float(off.min()),
        "passed": bool(off.min() >= REPEATABILITY_GATE),
    }


def percentiles_csv(tables: list[PercentileTable]) -> str:
    buf = io.StringIO()
    buf.write("series,metric,percentile,value\n")
    for t in tables:
        for rank, v in zip(range(1, 101), t.values):
            buf.write(f"{t.series},{t.metric},{rank},{v:.15g}\n")
    return buf.getvalue()
