"""Discrimination, calibration and selective-prediction metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

Z95 = 1.959964
N_CAL_BINS = 20
DEFAULT_GRID = tuple(round(0.05 * i, 2) for i in range(11))


class DegenerateInputError(ValueError):
    pass


def accuracy_with_wilson(correct: int, total: int, z: float = Z95) -> tuple[float, float, float]:
    """Accuracy and its Wilson score interval, clamped to [0, 1]."""
    if total < 1:
        raise ValueError("accuracy_with_wilson: total must be >= 1")
    if not (0 <= correct <= total):
        raise ValueError("accuracy_with_wilson: correct must lie in [0, total]")
    n = float(total)
    p = correct / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (p + z2 / (2.0 * n)) / denom
    half = z * math.sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom
    # the bounds equal p at the extremes; pin them against rounding
    lo = 0.0 if correct == 0 else min(p, center - half)
    hi = 1.0 if correct == total else max(p, center + half)
    return p, max(0.0, lo), min(1.0, hi)


def ci_overlap(a: Sequence[float], b: Sequence[float]) -> bool:
    """True when the closed intervals ``a`` and ``b`` share at least one point."""
    return max(a[0], b[0]) <= min(a[1], b[1])


# --------------------------------------------------------------------------
# calibration
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CalibrationTable:
    """Per-interval counts; ``observed`` is NaN where ``count`` is zero."""

    representative: np.ndarray
    count: np.ndarray
    observed: np.ndarray

    @property
    def index(self) -> np.ndarray:
        return np.arange(1, self.count.size + 1)

    @property
    def total(self) -> int:
        return int(self.count.sum())

    def rows(self):
        for i, pi, n, y in zip(self.index, self.representative, self.count, self.observed):
            yield int(i), float(pi), int(n), (None if n == 0 else float(y))


def calibration(probabilities, labels, n_bins: int = N_CAL_BINS) -> CalibrationTable:
    p = np.asarray(probabilities, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if p.size != y.size:
        raise ValueError("calibration: probabilities and labels differ in length")
    if np.any((p < 0) | (p > 1)):
        raise ValueError("calibration: probabilities must lie in [0, 1]")
    edges = np.arange(n_bins + 1, dtype=np.float64) / n_bins
    idx = np.clip(np.searchsorted(edges, p, side="right") - 1, 0, n_bins - 1)
    count = np.bincount(idx, minlength=n_bins)
    events = np.bincount(idx, weights=(y == 1).astype(np.float64), minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        observed = np.where(count > 0, events / np.maximum(count, 1), np.nan)
    representative = (2.0 * np.arange(1, n_bins + 1) - 1.0) / (2.0 * n_bins)
    return CalibrationTable(representative, count, observed)


def sanders_score(table: CalibrationTable) -> float:
    N = table.total
    if N == 0:
        raise ValueError("sanders_score: table is empty")
    occ = table.count > 0
    gap = table.observed[occ] - table.representative[occ]
    return float(np.sum(table.count[occ] * gap * gap) / N)


# --------------------------------------------------------------------------
# ROC
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # score at which each point after (0, 0) is reached
    auc: float


def roc_auc(scores, is_positive) -> RocCurve:
    """ROC by sweeping every distinct score from high to low.

    Tied scores enter together, so a tie between a positive and a negative
    contributes half a concordant pair. The AUC is accumulated in integer
    counts and divided once.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    pos = np.asarray(is_positive).ravel().astype(bool)
    if s.size != pos.size:
        raise ValueError("roc_auc: scores and labels differ in length")
    if np.any(np.isnan(s)):
        raise ValueError("roc_auc: scores contain NaN")
    P = int(pos.sum())
    N = int(s.size - P)
    if P == 0 or N == 0:
        raise DegenerateInputError(
            "roc_auc: degenerate input, need at least one positive and one negative"
        )
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    pos_sorted = pos[order]
    last_of_group = np.r_[s_sorted[1:] != s_sorted[:-1], True]
    tp = np.cumsum(pos_sorted)[last_of_group]
    fp = np.cumsum(~pos_sorted)[last_of_group]
    tp = np.r_[0, tp].astype(np.int64)
    fp = np.r_[0, fp].astype(np.int64)
    twice_area = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])))
    auc = twice_area / (2 * P * N)
    return RocCurve(fp / N, tp / P, s_sorted[last_of_group], auc)


# --------------------------------------------------------------------------
# selective prediction
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RemovalCurve:
    fraction_removed: np.ndarray
    accuracy: np.ndarray
    n_retained: np.ndarray


def retained_count(fraction: float, n: int) -> int:
    # tolerance keeps e.g. (1 - 0.05) * 100 from rounding up to 96
    return int(math.ceil((1.0 - fraction) * n - 1e-9))


def removal_curve(uncertainties, is_correct, grid: Sequence[float] = DEFAULT_GRID) -> RemovalCurve:
    """Accuracy after discarding the most uncertain fraction of items.

    Items leave in descending uncertainty; equal uncertainties leave in
    input order. ``ceil((1 - f) * N)`` items are kept at fraction ``f``.
    """
    u = np.asarray(uncertainties, dtype=np.float64).ravel()
    ok = np.asarray(is_correct).ravel().astype(bool)
    if u.size != ok.size:
        raise ValueError("removal_curve: inputs differ in length")
    if u.size == 0:
        raise ValueError("removal_curve: empty input")
    grid = np.asarray(grid, dtype=np.float64)
    if np.any((grid < 0) | (grid > 1)):
        raise ValueError("removal_curve: fractions must lie in [0, 1]")
    n = u.size
    order = np.argsort(-u, kind="stable")
    ok_sorted = ok[order]
    # correct counts among the last k items, for every k
    tail_correct = np.r_[0, np.cumsum(ok_sorted[::-1])]
    kept = np.array([retained_count(f, n) for f in grid])
    with np.errstate(invalid="ignore", divide="ignore"):
        acc = np.where(kept > 0, tail_correct[kept] / np.maximum(kept, 1), np.nan)
    return RemovalCurve(grid, acc, kept)


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

UNCERTAINTY_MEASURES = ("var", "vr", "pe", "mi", "epi", "alea")


@dataclass(eq=False)
class EvaluationReport:
    n: int
    n_correct: int
    accuracy: float
    ci: tuple[float, float]
    sanders: float
    calibration: CalibrationTable
    discrimination: RocCurve | None
    error_roc: dict  # measure -> RocCurve | None
    removal: dict  # measure -> RemovalCurve

    def auc(self, measure: str) -> float | None:
        roc = self.error_roc.get(measure)
        return None if roc is None else roc.auc

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "n_correct": self.n_correct,
            "accuracy": self.accuracy,
            "ci_lower": self.ci[0],
            "ci_upper": self.ci[1],
            "sanders": self.sanders,
            "auc_discrimination": None if self.discrimination is None else self.discrimination.auc,
            "auc_error_detection": {m: self.auc(m) for m in self.error_roc},
            "calibration": [
                {"interval": i, "representative": pi, "count": n, "observed": y}
                for i, pi, n, y in self.calibration.rows()
            ],
        }


def evaluate_predictions(
    p_stroke,
    y_true,
    y_pred,
    measures: dict | None = None,
    *,
    z: float = Z95,
    grid: Sequence[float] = DEFAULT_GRID,
    strict: bool = False,
) -> EvaluationReport:
    """Full report for binary predictions.

    ``measures`` maps a measure name to per-item uncertainties; it drives
    the error-detection ROC (errors are the positives) and the removal
    curves. With ``strict`` a single-class ``y_true`` raises
    :class:`DegenerateInputError` from the discrimination ROC; otherwise
    degenerate ROCs are reported as absent.
    """
    p = np.asarray(p_stroke, dtype=np.float64)
    y = np.asarray(y_true).astype(np.int64)
    yhat = np.asarray(y_pred).astype(np.int64)
    if not (p.size == y.size == yhat.size):
        raise ValueError("evaluate_predictions: inputs differ in length")
    correct = yhat == y
    n_ok = int(correct.sum())
    acc, lo, hi = accuracy_with_wilson(n_ok, int(y.size), z)
    table = calibration(p, y)
    try:
        disc = roc_auc(p, y == 1)
    except DegenerateInputError:
        if strict:
            raise
        disc = None
    error_roc = {}
    removal = {}
    for name, values in (measures or {}).items():
        if values is None:
            continue
        values = np.asarray(values, dtype=np.float64)
        try:
            error_roc[name] = roc_auc(values, ~correct)
        except DegenerateInputError:
            error_roc[name] = None
        removal[name] = removal_curve(values, correct, grid)
    return EvaluationReport(
        n=int(y.size), n_correct=n_ok, accuracy=acc, ci=(lo, hi),
        sanders=sanders_score(table), calibration=table, discrimination=disc,
        error_roc=error_roc, removal=removal,
    )


def report_files(report: EvaluationReport) -> dict[str, str]:
    """Plot-data CSVs for a report, keyed by file name."""
    files = {}
    lines = ["interval,representative,count,observed"]
    for i, pi, n, y in report.calibration.rows():
        lines.append(f"{i},{pi!r},{n},{'' if y is None else repr(y)}")
    files["calibration.csv"] = "\n".join(lines) + "\n"
    if report.discrimination is not None:
        files["roc_discrimination.csv"] = _roc_csv(report.discrimination)
    for name, roc in report.error_roc.items():
        if roc is not None:
            files[f"roc_{name}.csv"] = _roc_csv(roc)
    for name, curve in report.removal.items():
        rows = ["fraction_removed,n_retained,accuracy"]
        for f, k, a in zip(curve.fraction_removed, curve.n_retained, curve.accuracy):
            rows.append(f"{float(f)!r},{int(k)},{'' if np.isnan(a) else repr(float(a))}")
        files[f"removal_{name}.csv"] = "\n".join(rows) + "\n"
    return files


def _roc_csv(roc: RocCurve) -> str:
    rows = ["fpr,tpr"]
    rows += [f"{float(a)!r},{float(b)!r}" for a, b in zip(roc.fpr, roc.tpr)]
    return "\n".join(rows) + "\n"
