"""Summaries of an MC-dropout predictive distribution.

Every measure takes the T x 2 run matrix of one image (or one patient)
and returns a scalar, except :func:`histogram_counts`. Entropies are in
nats with the convention ``0 * ln 0 = 0``; the binary maximum is ``ln 2``.

The single-measure functions below use the general per-class formulas.
:func:`summarize` and :func:`summarize_many` go through the compiled
batch kernel instead; both routes agree to rounding.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import xlogy

from . import _kernels
from .predstore import NO_STROKE, STROKE, PredictiveSamples

THRESHOLD = 0.5
N_BINS = _kernels.N_BINS
MI_CLAMP = 1e-12

# Order used by the CLI and by feature construction.
MEASURE_NAMES = ("var", "vr", "pe", "mi", "epi", "alea")


@dataclass(frozen=True, eq=False)
class UncertaintySummary:
    mean_prob: tuple[float, float]
    var: float
    vr: float
    pe: float
    mi: float
    epi: float
    alea: float
    hist: np.ndarray  # (2, 100), class 0 first
    predicted_class: str

    @property
    def p_stroke(self) -> float:
        return self.mean_prob[1]

    def measure(self, name: str) -> float:
        if name not in MEASURE_NAMES:
            raise KeyError(name)
        return getattr(self, name)


def _runs(s) -> np.ndarray:
    if isinstance(s, PredictiveSamples):
        return s.runs
    runs = np.asarray(s, dtype=np.float64)
    if runs.ndim != 2 or runs.shape[0] < 1:
        raise ValueError(f"expected a (T, C) run matrix, got shape {runs.shape}")
    return runs


def _mean(a) -> np.ndarray:
    # mean about the first run, exact when all runs are equal
    return a[0] + (a - a[0]).sum(axis=0) / a.shape[0]


def mean_probability(s) -> tuple[float, float]:
    m = _mean(_runs(s))
    return float(m[0]), float(m[1])


def mc_variance(s) -> float:
    """Population variance over runs, averaged over classes."""
    runs = _runs(s)
    T = runs.shape[0]
    per_class = ((runs - _mean(runs)) ** 2).sum(axis=0) / T
    return float(per_class.mean())


def variation_ratio(s, threshold: float = THRESHOLD) -> float:
    """``1 - n_mode / T`` with per-run class ``p_stroke > threshold``.

    Equal mode counts resolve to class 0, which leaves the value unchanged
    but fixes which class is reported as the mode.
    """
    runs = _runs(s)
    T = runs.shape[0]
    n1 = int(np.count_nonzero(runs[:, 1] > threshold))
    n_mode = max(T - n1, n1)
    return 1.0 - n_mode / T


def predictive_entropy(mean_prob) -> float:
    p = np.asarray(mean_prob, dtype=np.float64)
    return float(-xlogy(p, p).sum())


def mutual_information(s) -> float:
    runs = _runs(s)
    pe = predictive_entropy(_mean(runs))
    mi = pe + float(_mean(xlogy(runs, runs).sum(axis=1)))
    if -MI_CLAMP <= mi < 0.0:
        mi = 0.0
    return mi


def epistemic(s) -> float:
    return mc_variance(s)


def aleatoric(s) -> float:
    runs = _runs(s)
    p1 = runs[:, 1]
    return float(_mean(p1 * (1.0 - p1)))


def histogram_counts(s) -> np.ndarray:
    """Normalized run counts in 100 bins of width 0.01, one row per class.

    Bin ``j`` (1-based) is ``[(j-1)/100, j/100)``; the last bin is closed
    at 1.0.
    """
    runs = _runs(s)
    T = runs.shape[0]
    out = np.zeros((runs.shape[1], N_BINS))
    for c in range(runs.shape[1]):
        idx = np.clip(np.searchsorted(_kernels.BIN_EDGES, runs[:, c], side="right") - 1, 0, N_BINS - 1)
        out[c] = np.bincount(idx, minlength=N_BINS) / T
    return out


def predicted_class(p_stroke: float, threshold: float = THRESHOLD) -> str:
    return STROKE if p_stroke > threshold else NO_STROKE


def _from_kernel(out, i) -> UncertaintySummary:
    mean0, mean1, var, vr, pe, mi, alea, hist = out
    v = float(var[i])
    return UncertaintySummary(
        mean_prob=(float(mean0[i]), float(mean1[i])),
        var=v,
        vr=float(vr[i]),
        pe=float(pe[i]),
        mi=float(mi[i]),
        epi=v,
        alea=float(alea[i]),
        hist=np.array(hist[i]),
        predicted_class=predicted_class(float(mean1[i])),
    )


def summarize(s) -> UncertaintySummary:
    if not isinstance(s, PredictiveSamples):
        s = PredictiveSamples.from_runs(s)
    out = _kernels.image_summaries(s.p_stroke[None, :], THRESHOLD)
    return _from_kernel(out, 0)


def summarize_many(samples: Sequence[PredictiveSamples]) -> list[UncertaintySummary]:
    """Summaries for many inputs; inputs sharing T are batched into one kernel call."""
    result: list[UncertaintySummary | None] = [None] * len(samples)
    groups: dict[int, list[int]] = {}
    for i, s in enumerate(samples):
        groups.setdefault(s.T, []).append(i)
    for T, idx in groups.items():
        block = np.stack([samples[i].p_stroke for i in idx])
        out = _kernels.image_summaries(block, THRESHOLD)
        for row, i in enumerate(idx):
            result[i] = _from_kernel(out, row)
    return result  # type: ignore[return-value]
