"""Return/factor panels and per-strategy statistics.

Two families of estimators live here:

* exact, column-at-a-time estimators (`t_stat_mean`, `alpha_regression`,
  `panel_stats`) used for reporting and for constructing pseudo samples;
* batched kernels (`weighted_tstats`, `weighted_alpha_tstats`) that evaluate
  many bootstrap draws at once.  A draw of period indices is equivalent to a
  vector of per-period multiplicities, so the statistics of every column under
  every draw reduce to matrix products against the count matrix.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DataError,
    DegenerateVariance,
    DuplicateIdentifier,
    RankDeficient,
    TooFewObservations,
)

DEFAULT_MIN_OBS = 8

# relative tolerance below which a sample standard deviation counts as zero
_DEGENERATE_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class ReturnPanel:
    """D x N panel of per-period simple returns with an observation mask.

    Masked-out cells are stored as NaN in ``values``; every statistic reads
    ``mask`` and never treats a missing cell as zero.

    Panels produced by resampling carry ``resampled=True``: their period
    labels are the (possibly repeated) labels of the drawn rows and columns
    may end up with no observations at all.
    """

    values: np.ndarray
    mask: np.ndarray
    period_labels: tuple
    names: tuple
    resampled: bool = False

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        mask = np.array(self.mask, dtype=bool)
        if values.ndim != 2:
            raise DataError(f"values must be 2-D, got shape {values.shape}")
        if mask.shape != values.shape:
            raise DataError(f"mask shape {mask.shape} != values shape {values.shape}")
        D, N = values.shape
        labels = tuple(self.period_labels)
        names = tuple(str(n) for n in self.names)
        if len(labels) != D:
            raise DataError(f"{len(labels)} period labels for {D} rows")
        if len(names) != N:
            raise DataError(f"{len(names)} names for {N} columns")
        if D < 2 and not self.resampled:
            raise DataError("panel needs at least 2 periods")
        if N < 1:
            raise DataError("panel needs at least 1 column")
        if len(set(names)) != N:
            dup = next(n for n in names if names.count(n) > 1)
            raise DuplicateIdentifier(f"duplicate strategy name {dup!r}")
        bad = mask & ~np.isfinite(values)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise DataError(f"non-finite observed value at row {r}, column {names[c]!r}")
        if not self.resampled:
            for a, b in zip(labels, labels[1:]):
                if not a < b:
                    raise DataError(f"period labels not strictly increasing at {a!r} -> {b!r}")
            empty = ~mask.any(axis=0)
            if empty.any():
                raise DataError(f"column {names[int(np.argmax(empty))]!r} has no observations")
        values = np.where(mask, values, np.nan)
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "period_labels", labels)
        object.__setattr__(self, "names", names)

    @classmethod
    def from_array(cls, values, names=None, period_labels=None) -> "ReturnPanel":
        """Build a panel from an array where NaN marks missing cells."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        D, N = values.shape
        if names is None:
            names = [f"s{j}" for j in range(N)]
        if period_labels is None:
            period_labels = list(range(D))
        return cls(values, np.isfinite(values), tuple(period_labels), tuple(names))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n_periods(self) -> int:
        return self.values.shape[0]

    @property
    def n_strategies(self) -> int:
        return self.values.shape[1]

    @cached_property
    def filled(self) -> np.ndarray:
        """Values with missing cells replaced by 0.0 (for masked arithmetic)."""
        out = np.where(self.mask, self.values, 0.0)
        out.setflags(write=False)
        return out

    @cached_property
    def n_obs(self) -> np.ndarray:
        return self.mask.sum(axis=0)

    def with_values(self, values: np.ndarray) -> "ReturnPanel":
        """Same mask, labels and names with new observed values."""
        return ReturnPanel(values, self.mask, self.period_labels, self.names, self.resampled)

    def select(self, columns: Sequence[int]) -> "ReturnPanel":
        cols = list(columns)
        return ReturnPanel(
            self.values[:, cols],
            self.mask[:, cols],
            self.period_labels,
            tuple(self.names[c] for c in cols),
            self.resampled,
        )

    def rows(self, rows: Sequence[int]) -> "ReturnPanel":
        """Contiguous or arbitrary row subset keeping the label-order invariant."""
        rows = list(rows)
        return ReturnPanel(
            self.values[rows],
            self.mask[rows],
            tuple(self.period_labels[r] for r in rows),
            self.names,
            self.resampled,
        )

    def equals(self, other: "ReturnPanel") -> bool:
        return (
            self.shape == other.shape
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.filled, other.filled)
            and self.period_labels == other.period_labels
            and self.names == other.names
        )

    def fingerprint(self) -> str:
        """SHA-256 over observed values, mask, labels and names."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.filled).tobytes())
        h.update(np.ascontiguousarray(self.mask).tobytes())
        h.update(repr(self.period_labels).encode())
        h.update(repr(self.names).encode())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class FactorPanel:
    """D x K benchmark factor returns aligned with a ReturnPanel's rows."""

    values: np.ndarray
    period_labels: tuple
    names: tuple = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[1] < 1:
            raise DataError("factor panel needs shape (D, K) with K >= 1")
        labels = tuple(self.period_labels)
        if len(labels) != values.shape[0]:
            raise DataError(f"{len(labels)} factor labels for {values.shape[0]} rows")
        names = tuple(self.names) or tuple(f"f{k}" for k in range(values.shape[1]))
        if len(names) != values.shape[1]:
            raise DataError("factor names do not match factor count")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "period_labels", labels)
        object.__setattr__(self, "names", names)

    @property
    def n_factors(self) -> int:
        return self.values.shape[1]

    def design(self) -> np.ndarray:
        """Regressor matrix [1, factors].

        Factor columns that are identically zero carry no information and are
        left out, so an all-zero factor panel reduces to intercept-only.
        """
        F = self.values
        live = ~np.all(F == 0.0, axis=0)
        return np.column_stack([np.ones(F.shape[0]), F[:, live]])

    def check_aligned(self, panel: ReturnPanel) -> None:
        if self.values.shape[0] != panel.n_periods:
            raise DataError(
                f"factor panel has {self.values.shape[0]} rows, return panel {panel.n_periods}"
            )
        if not panel.resampled and self.period_labels != panel.period_labels:
            raise DataError("factor period labels are not aligned with the return panel")
        used = panel.mask.any(axis=1)
        if not np.isfinite(self.values[used]).all():
            raise DataError("missing factor value on a period where a strategy is observed")

    def rows(self, rows: Sequence[int]) -> "FactorPanel":
        rows = list(rows)
        return FactorPanel(
            self.values[rows], tuple(self.period_labels[r] for r in rows), self.names
        )


@dataclass
class StrategyStat:
    mean: float
    t_stat: float
    n_obs: int
    alpha: Optional[float] = None
    t_alpha: Optional[float] = None
    residuals: Optional[np.ndarray] = field(default=None, repr=False)
    excluded: bool = False
    reason: Optional[str] = None

    @property
    def effect(self) -> float:
        """Alpha when a factor model was fitted, else the mean."""
        return self.alpha if self.alpha is not None else self.mean

    @property
    def t_effect(self) -> float:
        return self.t_alpha if self.t_alpha is not None else self.t_stat


def _column_and_mask(column, mask):
    x = np.asarray(column, dtype=float).ravel()
    if mask is None:
        m = np.isfinite(x)
    else:
        m = np.asarray(mask, dtype=bool).ravel()
        if m.shape != x.shape:
            raise DataError("mask length differs from column length")
    return x, m


def t_stat_mean(column, mask=None, min_obs: int = DEFAULT_MIN_OBS) -> StrategyStat:
    """t-statistic of the sample mean over the observed entries.

    Raises TooFewObservations when fewer than ``min_obs`` entries are
    observed and DegenerateVariance when the sample standard deviation is 0.
    """
    x, m = _column_and_mask(column, mask)
    obs = x[m]
    n = obs.size
    if n < max(min_obs, 2):
        raise TooFewObservations(f"{n} observations, need {max(min_obs, 2)}")
    mean = float(obs.mean())
    sd = float(obs.std(ddof=1))
    if sd <= _DEGENERATE_RTOL * float(np.abs(obs).max()) or sd == 0.0:
        raise DegenerateVariance("sample standard deviation is zero")
    return StrategyStat(mean=mean, t_stat=mean / (sd / math.sqrt(n)), n_obs=n)


def _newey_west_lags(n: int) -> int:
    return int(math.floor(4 * (n / 100.0) ** (2.0 / 9.0)))


def alpha_regression(
    column,
    factors,
    mask=None,
    min_obs: int = DEFAULT_MIN_OBS,
    se: str = "ols",
    hac_lags: Optional[int] = None,
) -> StrategyStat:
    """OLS of a return series on an intercept plus benchmark factors.

    ``factors`` is a FactorPanel or a (D, K) array.  The regression uses the
    periods on which the column is observed.  ``se="ols"`` gives homoskedastic
    standard errors; ``se="hac"`` gives Newey-West errors (Bartlett kernel).
    Factors that are zero on every observed period are dropped.
    """
    x, m = _column_and_mask(column, mask)
    F = factors.values if isinstance(factors, FactorPanel) else np.asarray(factors, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    if F.shape[0] != x.size:
        raise DataError("factor rows do not match the return series length")
    y = x[m]
    Fm = F[m]
    # an identically zero factor is dropped rather than reported as collinear
    Fm = Fm[:, ~np.all(Fm == 0.0, axis=0)]
    X = np.column_stack([np.ones(y.size), Fm])
    n, p = X.shape
    if n < max(min_obs, p + 1):
        raise TooFewObservations(f"{n} observations, need {max(min_obs, p + 1)}")
    if not np.isfinite(X).all():
        raise DataError("missing factor value on an observed period")
    if np.linalg.matrix_rank(X) < p:
        raise RankDeficient("regressors are collinear over the observed periods")
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    dof = n - p
    XtX_inv = np.linalg.inv(X.T @ X)
    if se == "ols":
        sigma2 = float(resid @ resid) / dof
        var_alpha = sigma2 * XtX_inv[0, 0]
    elif se == "hac":
        lags = _newey_west_lags(n) if hac_lags is None else hac_lags
        Xe = X * resid[:, None]
        S = Xe.T @ Xe
        for lag in range(1, lags + 1):
            w = 1.0 - lag / (lags + 1.0)
            G = Xe[lag:].T @ Xe[:-lag]
            S += w * (G + G.T)
        S *= n / dof
        var_alpha = float((XtX_inv @ S @ XtX_inv)[0, 0])
    else:
        raise ValueError(f"unknown standard-error type {se!r}")
    if not var_alpha > 0.0:
        raise DegenerateVariance("regression residual variance is zero")
    alpha = float(beta[0])
    residuals = np.full(x.size, np.nan)
    residuals[m] = resid
    try:
        base = t_stat_mean(x, m, min_obs=min_obs)
        mean, t = base.mean, base.t_stat
    except DegenerateVariance:
        mean, t = float(y.mean()), float("nan")
    return StrategyStat(
        mean=mean,
        t_stat=t,
        n_obs=n,
        alpha=alpha,
        t_alpha=alpha / math.sqrt(var_alpha),
        residuals=residuals,
    )


def panel_stats(
    panel: ReturnPanel,
    factors: Optional[FactorPanel] = None,
    min_obs: int = DEFAULT_MIN_OBS,
    se: str = "ols",
) -> list[StrategyStat]:
    """One StrategyStat per column; failing columns are flagged, not dropped."""
    if factors is not None:
        factors.check_aligned(panel)
    out = []
    for j in range(panel.n_strategies):
        col, m = panel.values[:, j], panel.mask[:, j]
        try:
            if factors is None:
                out.append(t_stat_mean(col, m, min_obs))
            else:
                out.append(alpha_regression(col, factors, m, min_obs, se=se))
        except (TooFewObservations, DegenerateVariance, RankDeficient) as exc:
            n = int(m.sum())
            mean = float(col[m].mean()) if n else float("nan")
            out.append(
                StrategyStat(mean, float("nan"), n, excluded=True, reason=f"{type(exc).__name__}: {exc}")
            )
    return out


# ---------------------------------------------------------------------------
# batched kernels
# ---------------------------------------------------------------------------


def counts_from_indices(indices: np.ndarray, D: int) -> np.ndarray:
    """Per-period multiplicities of one draw (1-D) or many draws (2-D)."""
    idx = np.asarray(indices)
    if idx.ndim == 1:
        return np.bincount(idx, minlength=D).astype(float)
    out = np.zeros((idx.shape[0], D))
    rows = np.repeat(np.arange(idx.shape[0]), idx.shape[1])
    np.add.at(out, (rows, idx.ravel()), 1.0)
    return out


def weighted_mean_se(
    counts: np.ndarray,
    filled: np.ndarray,
    mask: np.ndarray,
    min_obs: int = DEFAULT_MIN_OBS,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean and its standard error for every column under every weighting row.

    ``counts`` is (B, D); returns two (B, N) arrays.  Invalid cells (too few
    observations, fewer than two distinct observed periods, or zero variance)
    are NaN in both outputs.
    """
    C = np.atleast_2d(np.asarray(counts, dtype=float))
    M = mask.astype(float)
    n = C @ M
    distinct = (C > 0).astype(float) @ M
    s1 = C @ filled
    s2 = C @ (filled * filled)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = s1 / n
        var = (s2 - n * mean * mean) / (n - 1.0)
        ok = (n >= max(min_obs, 2)) & (distinct >= 2) & (var > _DEGENERATE_RTOL**2 * (s2 / n))
        se = np.sqrt(var / n)
    return np.where(ok, mean, np.nan), np.where(ok, se, np.nan)


def weighted_tstats(counts, filled, mask, min_obs: int = DEFAULT_MIN_OBS):
    """Mean and mean t-statistic under every weighting row, each (B, N)."""
    mean, se = weighted_mean_se(counts, filled, mask, min_obs)
    return mean, mean / se


def weighted_alpha_se(
    counts: np.ndarray,
    filled: np.ndarray,
    mask: np.ndarray,
    design: np.ndarray,
    min_obs: int = DEFAULT_MIN_OBS,
) -> tuple[np.ndarray, np.ndarray]:
    """Intercept and its homoskedastic standard error under every weighting row.

    ``design`` is the (D, P) regressor matrix including the intercept column.
    A cell is invalid (NaN) when it has fewer than ``min_obs`` weighted
    observations, fewer than P + 1 distinct observed periods, or a zero
    residual sum of squares.
    """
    C = np.atleast_2d(np.asarray(counts, dtype=float))
    X = np.asarray(design, dtype=float)
    B = C.shape[0]
    D, N = filled.shape
    P = X.shape[1]
    M = mask.astype(float)
    n = C @ M
    distinct = (C > 0).astype(float) @ M
    Xf = np.where(np.isfinite(X), X, 0.0)

    H = np.empty((B, N, P))
    for k in range(P):
        H[:, :, k] = (C * Xf[:, k]) @ filled
    yty = C @ (filled * filled)

    if mask.all():
        # one design per draw, shared by every column
        G = np.einsum("bd,dk,dl->bkl", C, Xf, Xf)
        few = (C > 0).sum(axis=1) < P + 1
        G[few] = np.eye(P)
        Ginv = np.broadcast_to(np.linalg.inv(G)[:, None, :, :], (B, N, P, P))
    else:
        G = np.empty((B, N, P, P))
        for k in range(P):
            for l in range(k, P):
                g = (C * (Xf[:, k] * Xf[:, l])) @ M
                G[:, :, k, l] = g
                G[:, :, l, k] = g
        pre_ok = (n >= max(min_obs, P + 1)) & (distinct >= P + 1)
        G[~pre_ok] = np.eye(P)
        Ginv = np.linalg.inv(G)

    beta = np.einsum("bnkl,bnl->bnk", Ginv, H)
    ssr = yty - np.einsum("bnk,bnk->bn", beta, H)
    with np.errstate(invalid="ignore", divide="ignore"):
        var_a = ssr / (n - P) * Ginv[:, :, 0, 0]
        ok = (
            (n >= max(min_obs, P + 1))
            & (distinct >= P + 1)
            & (ssr > _DEGENERATE_RTOL * yty)
            & (var_a > 0)
        )
        se = np.sqrt(var_a)
    return np.where(ok, beta[:, :, 0], np.nan), np.where(ok, se, np.nan)


def weighted_alpha_tstats(counts, filled, mask, design, min_obs: int = DEFAULT_MIN_OBS):
    """Intercept and its t-statistic under every weighting row, each (B, N)."""
    alpha, se = weighted_alpha_se(counts, filled, mask, design, min_obs)
    return alpha, alpha / se


def effect_se(
    counts: np.ndarray,
    panel: ReturnPanel,
    factors: Optional[FactorPanel] = None,
    min_obs: int = DEFAULT_MIN_OBS,
) -> tuple[np.ndarray, np.ndarray]:
    if factors is None:
        return weighted_mean_se(counts, panel.filled, panel.mask, min_obs)
    return weighted_alpha_se(counts, panel.filled, panel.mask, factors.design(), min_obs)


def effect_tstats(
    counts: np.ndarray,
    panel: ReturnPanel,
    factors: Optional[FactorPanel] = None,
    min_obs: int = DEFAULT_MIN_OBS,
) -> tuple[np.ndarray, np.ndarray]:
    """Dispatch to the mean or alpha kernel depending on ``factors``."""
    effect, se = effect_se(counts, panel, factors, min_obs)
    return effect, effect / se


def exact_effects(
    panel: ReturnPanel,
    factors: Optional[FactorPanel] = None,
    min_obs: int = DEFAULT_MIN_OBS,
) -> tuple[np.ndarray, np.ndarray]:
    """In-sample effect (mean or alpha) and its t-statistic per column.

    Uses least squares column by column, so the effect is accurate to
    machine precision; excluded columns are NaN.
    """
    stats = panel_stats(panel, factors, min_obs)
    effect = np.array([np.nan if s.excluded else s.effect for s in stats])
    t = np.array([np.nan if s.excluded else s.t_effect for s in stats])
    return effect, t
