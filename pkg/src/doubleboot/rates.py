"""Contingency tallies and the realized error-rate functionals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .panel import counts_from_indices, effect_tstats


class ContingencyCounts(NamedTuple):
    tn: int
    fp: int
    fn: int
    tp: int

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp


class RealizedRates(NamedTuple):
    rfdr: float
    rmiss: float
    rratio: float
    tpr: float
    fpr: float


class AggregateRates(NamedTuple):
    type1: float
    type2: float
    oratio: float
    tpr: float
    fpr: float


RATE_FIELDS = RealizedRates._fields


def count_outcomes(decisions, truth) -> ContingencyCounts:
    d = np.asarray(decisions, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    if d.shape != t.shape:
        raise ValueError(f"decisions length {d.size} != truth length {t.size}")
    tp = int(np.count_nonzero(d & t))
    fp = int(np.count_nonzero(d & ~t))
    fn = int(np.count_nonzero(~d & t))
    tn = int(d.size - tp - fp - fn)
    return ContingencyCounts(tn, fp, fn, tp)


def _ratio(num, den):
    return num / den if den > 0 else 0.0


def realized_rates(c: ContingencyCounts) -> RealizedRates:
    """RFDR, RMISS, RRATIO, TPR and FPR, each 0 when its denominator is 0."""
    tn, fp, fn, tp = c
    return RealizedRates(
        rfdr=_ratio(fp, fp + tp),
        rmiss=_ratio(fn, fn + tn),
        rratio=_ratio(fp, fn),
        tpr=_ratio(tp, tp + fn),
        fpr=_ratio(fp, fp + tn),
    )


def rates_from_counts(tn, fp, fn, tp) -> np.ndarray:
    """Vectorised realized_rates; inputs broadcast, output has a trailing axis of 5."""
    tn, fp, fn, tp = (np.asarray(a, dtype=float) for a in (tn, fp, fn, tp))

    def ratio(num, den):
        return np.divide(num, den, out=np.zeros(np.broadcast(num, den).shape), where=den > 0)

    return np.stack(
        [
            ratio(fp, fp + tp),
            ratio(fn, fn + tn),
            ratio(fp, fn),
            ratio(tp, tp + fn),
            ratio(fp, fp + tn),
        ],
        axis=-1,
    )


def rates_from_decisions(reject: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Realized rates for a stack of decision vectors (..., N) against one truth."""
    reject = np.asarray(reject, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    tp = (reject & truth).sum(axis=-1)
    fp = (reject & ~truth).sum(axis=-1)
    n_true = int(truth.sum())
    n_null = truth.size - n_true
    return rates_from_counts(n_null - fp, fp, n_true - tp, tp)


def cutoff_counts(t: np.ndarray, truth: np.ndarray, cutoffs: np.ndarray, sidedness="one_sided_right"):
    """FP and TP counts of the rule ``t > c`` for each draw row and cutoff.

    ``t`` is (J, N); returns two (J, G) integer arrays.  NaN statistics
    never reject.
    """
    t = np.atleast_2d(t)
    s = np.abs(t) if sidedness == "two_sided" else t
    s = np.where(np.isfinite(s), s, -np.inf)
    cut = np.asarray(cutoffs, dtype=float)
    fp = np.empty((s.shape[0], cut.size), dtype=np.int64)
    tp = np.empty_like(fp)
    null_s = np.sort(s[:, ~truth], axis=1)
    true_s = np.sort(s[:, truth], axis=1)
    for r in range(s.shape[0]):
        fp[r] = null_s.shape[1] - np.searchsorted(null_s[r], cut, side="right")
        tp[r] = true_s.shape[1] - np.searchsorted(true_s[r], cut, side="right")
    return fp, tp


def aggregate(rates: Iterable[RealizedRates]) -> AggregateRates:
    """Arithmetic means of the realized rates, summed in the given (i, j) order."""
    arr = np.array([tuple(r) for r in rates], dtype=float)
    if arr.size == 0:
        raise ValueError("cannot aggregate an empty list of rates")
    total = np.zeros(5)
    for row in arr:
        total = total + row
    return AggregateRates(*(total / arr.shape[0]))


@dataclass
class RocCurve:
    cutoffs: np.ndarray  # includes -inf and +inf
    fpr: np.ndarray
    tpr: np.ndarray

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def roc_curve(labeled, draws, cutoff_grid, sidedness="one_sided_right", min_obs: int = 8) -> RocCurve:
    """Average (FPR, TPR) over resamples of a truth-labelled panel, per cutoff.

    ``draws`` is an iterable of IndexDraw objects or a (J, D) index array.
    Endpoints at cutoffs -inf and +inf are always included.
    """
    grid = np.asarray(cutoff_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("cutoff grid is empty")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("cutoff grid must be strictly increasing")
    idx = np.array([getattr(d, "indices", d) for d in draws])
    panel = labeled.panel
    counts = counts_from_indices(idx, panel.n_periods)
    _, t = effect_tstats(counts, panel, labeled.model_factors, min_obs)
    cuts = np.concatenate([[-np.inf], grid, [np.inf]])
    fp, tp = cutoff_counts(t, labeled.truth, cuts, sidedness)
    n_true = int(labeled.truth.sum())
    n_null = labeled.truth.size - n_true
    r = rates_from_counts(n_null - fp, fp, n_true - tp, tp)
    # the -inf rule rejects every column, including ones with no valid statistic
    r[:, 0, 3] = 1.0 if n_true else 0.0
    r[:, 0, 4] = 1.0 if n_null else 0.0
    return RocCurve(cuts, r[..., 4].mean(axis=0), r[..., 3].mean(axis=0))
