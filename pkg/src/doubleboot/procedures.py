"""Multiple-testing decision rules.

Each rule maps a cross-section of statistics to a `RejectionSet`.  The
p-value rules (BH, BY, Storey) are step-up procedures and come in two
flavours: a single-vector form and a batched form over a (J, N) stack of
p-value rows, used by the bootstrap driver.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import special, stats

from .errors import BudgetExceeded, InsufficientIterations
from .panel import DEFAULT_MIN_OBS, FactorPanel, ReturnPanel, counts_from_indices, effect_se
from .resample import Stage, rng_for, sample_indices

PVALUE_SOURCES = ("normal_one_sided", "normal_two_sided", "student_t")
RSW_TAG = "rsw2008_stepdown_fdr"
STOREY_THETAS = (0.4, 0.6, 0.8)

# B * N**2 above this is refused
DEFAULT_RSW_BUDGET = 2e10


@dataclass(frozen=True, eq=False)
class PValueVector:
    p: np.ndarray
    source: str = "normal_one_sided"

    def __post_init__(self):
        p = np.array(self.p, dtype=float).reshape(-1)
        if p.size < 1:
            raise ValueError("p-value vector is empty")
        if not np.all((p >= 0.0) & (p <= 1.0)):
            raise ValueError("p-values must lie in [0, 1]")
        if self.source not in PVALUE_SOURCES:
            raise ValueError(f"source must be one of {PVALUE_SOURCES}")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    def __len__(self):
        return self.p.size


@dataclass(frozen=True, eq=False)
class RejectionSet:
    """Rejection decisions plus the cutoff that produced them.

    For p-value rules ``threshold`` is a p-value and reject(i) <=> p_i <= threshold;
    for t-statistic rules it is a t cutoff.  ``columns`` is set when the set
    refers to a subset of a larger cross-section.
    """

    reject: np.ndarray
    threshold: float
    procedure_tag: str
    columns: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_rejected(self) -> int:
        return int(np.count_nonzero(self.reject))

    def __len__(self):
        return len(self.reject)


def pvalues_from_t(t, source: str = "normal_one_sided", df=None) -> PValueVector:
    """Convert t-statistics to p-values.  Non-finite statistics map to p = 1."""
    return PValueVector(pvalue_array(t, source, df), source)


def pvalue_array(t, source: str = "normal_one_sided", df=None) -> np.ndarray:
    """Array form of `pvalues_from_t`; works on any shape."""
    t = np.asarray(t, dtype=float)
    finite = np.isfinite(t)
    tt = np.where(finite, t, 0.0)
    if source == "normal_one_sided":
        p = special.ndtr(-tt)
    elif source == "normal_two_sided":
        p = 2.0 * special.ndtr(-np.abs(tt))
    elif source == "student_t":
        if df is None:
            raise ValueError("student_t p-values need degrees of freedom")
        df = np.broadcast_to(np.asarray(df, dtype=float), t.shape)
        p = stats.t.sf(tt, np.where(finite, df, 1.0))
    else:
        raise ValueError(f"unknown p-value source {source!r}")
    return np.where(finite, np.clip(p, 0.0, 1.0), 1.0)


def _as_p(p) -> np.ndarray:
    if isinstance(p, PValueVector):
        return p.p
    return PValueVector(p).p


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def fixed_cutoff(tstats, t_cut: float, sidedness: str = "one_sided_right") -> RejectionSet:
    t = np.asarray(tstats, dtype=float)
    s = np.abs(t) if sidedness == "two_sided" else t
    return RejectionSet(s > t_cut, float(t_cut), "fixed_cutoff")


def step_up(p: np.ndarray, crit: np.ndarray, tag: str) -> RejectionSet:
    """Generic step-up: largest k with p_(k) <= crit[k-1]; reject p <= p_(k)."""
    ps = np.sort(p)
    ok = np.nonzero(ps <= crit)[0]
    if ok.size == 0:
        return RejectionSet(np.zeros(p.size, dtype=bool), 0.0, tag)
    thr = float(ps[ok[-1]])
    return RejectionSet(p <= thr, thr, tag)


def harmonic(N: int) -> float:
    return float(np.sum(1.0 / np.arange(1, N + 1)))


def storey_pi0(p: np.ndarray, theta: float) -> float:
    """Null-proportion estimate, clamped to [1/N, 1]."""
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    N = p.size
    pi0 = np.count_nonzero(p > theta) / (N * (1.0 - theta))
    return float(min(1.0, max(1.0 / N, pi0)))


def bh(p, alpha: float) -> RejectionSet:
    p = _as_p(p)
    _check_alpha(alpha)
    N = p.size
    return step_up(p, alpha * np.arange(1, N + 1) / N, "bh")


def by(p, alpha: float) -> RejectionSet:
    p = _as_p(p)
    _check_alpha(alpha)
    N = p.size
    return step_up(p, alpha / harmonic(N) * np.arange(1, N + 1) / N, "by")


def storey(p, alpha: float, theta: float = 0.6) -> RejectionSet:
    p = _as_p(p)
    _check_alpha(alpha)
    N = p.size
    pi0 = storey_pi0(p, theta)
    return step_up(p, alpha * np.arange(1, N + 1) / (N * pi0), f"storey_{theta:g}")


# batched forms -----------------------------------------------------------


def step_up_rows(P: np.ndarray, level: np.ndarray) -> np.ndarray:
    """Step-up on every row of a (J, N) p-value matrix.

    ``level`` is the per-row effective alpha (shape (J,) or scalar); the
    criterion for rank k is level * k / N.  Returns a (J, N) boolean array.
    """
    P = np.atleast_2d(P)
    J, N = P.shape
    ps = np.sort(P, axis=1)
    level = np.broadcast_to(np.asarray(level, dtype=float), (J,))
    crit = level[:, None] * np.arange(1, N + 1)[None, :] / N
    ok = ps <= crit
    any_ok = ok.any(axis=1)
    last = N - 1 - np.argmax(ok[:, ::-1], axis=1)
    thr = np.where(any_ok, ps[np.arange(J), last], -np.inf)
    return P <= thr[:, None]


def bh_rows(P, alpha):
    return step_up_rows(P, alpha)


def by_rows(P, alpha):
    P = np.atleast_2d(P)
    return step_up_rows(P, alpha / harmonic(P.shape[1]))


def storey_rows(P, alpha, theta):
    P = np.atleast_2d(P)
    N = P.shape[1]
    pi0 = (P > theta).sum(axis=1) / (N * (1.0 - theta))
    pi0 = np.clip(pi0, 1.0 / N, 1.0)
    return step_up_rows(P, alpha / pi0)


# Romano-Shaikh-Wolf ------------------------------------------------------


def rsw_critical_values(t_boot: np.ndarray, alpha: float) -> np.ndarray:
    """Critical values c_1..c_s for the FDR step-down.

    ``t_boot`` is (B, s) with columns ordered by ascending observed statistic,
    holding centred bootstrap statistics.  c_j treats the j columns with the
    smallest observed statistics as true nulls and the rest as already
    rejected; c_j is the smallest value such that the bootstrap estimate of
    E[F / max(R, 1)] with the largest of those j null statistics exceeding
    it stays at or below alpha.
    """
    B, s = t_boot.shape
    Tb = np.where(np.isfinite(t_boot), t_boot, -np.inf)
    c = np.empty(s)
    budget = alpha * B
    for j in range(1, s + 1):
        sub = np.sort(Tb[:, :j], axis=1)
        top = sub[:, -1]
        if j > 1:
            # count consecutive lower-rank nulls that also clear their cutoffs
            passes = sub[:, :-1] > c[: j - 1]
            fails = ~passes[:, ::-1]
            L = np.where(fails.any(axis=1), np.argmax(fails, axis=1), j - 1)
        else:
            L = np.zeros(B, dtype=int)
        g = (1.0 + L) / (s - j + 1.0 + L)
        order = np.argsort(-top, kind="stable")
        cum = np.cumsum(g[order])
        k = int(np.searchsorted(cum, budget + 1e-12 * max(budget, 1.0), side="right"))
        c[j - 1] = top[order[k]] if k < B else -np.inf
    return c


def rsw_stepdown(t_obs: np.ndarray, t_boot: np.ndarray, alpha: float) -> RejectionSet:
    """Step-down decisions from observed statistics and centred bootstrap statistics."""
    t_obs = np.asarray(t_obs, dtype=float)
    s = t_obs.size
    score = np.where(np.isfinite(t_obs), t_obs, -np.inf)
    asc = np.argsort(score, kind="stable")
    c = rsw_critical_values(t_boot[:, asc], alpha)
    reject = np.zeros(s, dtype=bool)
    for j in range(s, 0, -1):
        col = asc[j - 1]
        if score[col] > c[j - 1]:
            reject[col] = True
        else:
            break
    thr = float(score[reject].min()) if reject.any() else np.inf
    return RejectionSet(reject, thr, RSW_TAG)


def _rsw_stats(panel, factors, mode, sidedness, B, seed, key, min_obs, block=200):
    D = panel.n_periods
    f = factors if mode == "factor_alpha" else None
    eff, se = effect_se(np.ones((1, D)), panel, f, min_obs)
    eff, se = eff[0], se[0]
    t_obs = eff / se
    t_boot = np.empty((B, panel.n_strategies))
    for lo in range(0, B, block):
        hi = min(B, lo + block)
        idx = np.stack([sample_indices(seed, D, int(Stage.RSW), *key, b) for b in range(lo, hi)])
        e_b, se_b = effect_se(counts_from_indices(idx, D), panel, f, min_obs)
        t_boot[lo:hi] = (e_b - eff[None, :]) / se_b
    if sidedness == "two_sided":
        return np.abs(t_obs), np.abs(t_boot)
    return t_obs, t_boot


def rsw(
    panel,
    alpha: float,
    B: int = 1000,
    subsample_size: Optional[int] = None,
    subsample_count: int = 100,
    *,
    seed: int = 0,
    key: Sequence[int] = (),
    factors: Optional[FactorPanel] = None,
    mode: str = "raw_mean",
    sidedness: str = "one_sided_right",
    min_obs: int = DEFAULT_MIN_OBS,
    budget: float = DEFAULT_RSW_BUDGET,
    subsets: Optional[Sequence[np.ndarray]] = None,
) -> Union[RejectionSet, list[RejectionSet]]:
    """Bootstrap FDR step-down on a return panel.

    ``panel`` may be a ReturnPanel or a TruthLabeledPanel (whose mode and
    factors are then used).  Bootstrap statistics are t-statistics of the
    resampled effect re-centred at the sample effect.  ``key`` extends the
    seed coordinate so callers can give each invocation its own streams.

    When ``subsample_size`` is given and the panel is wider, the procedure
    runs on ``subsample_count`` random column subsets (or on ``subsets`` if
    supplied) and a list of RejectionSets with ``columns`` set is returned.
    """
    _check_alpha(alpha)
    if B < 100:
        raise InsufficientIterations(f"RSW needs B >= 100, got {B}")
    if hasattr(panel, "truth"):
        factors = panel.factors if factors is None else factors
        mode = panel.mode
        panel = panel.panel
    N = panel.n_strategies
    if subsets is None and subsample_size is not None and N > subsample_size:
        subsets = rsw_subsets(N, subsample_size, subsample_count, seed)
    width = N if subsets is None else max(len(s) for s in subsets)
    if B * float(width) ** 2 > budget:
        raise BudgetExceeded(f"RSW cost B*N^2 = {B * float(width) ** 2:.3g} exceeds budget {budget:.3g}")
    t_obs, t_boot = _rsw_stats(panel, factors, mode, sidedness, B, seed, tuple(key), min_obs)
    if subsets is None:
        return rsw_stepdown(t_obs, t_boot, alpha)
    out = []
    for cols in subsets:
        cols = np.asarray(cols)
        r = rsw_stepdown(t_obs[cols], t_boot[:, cols], alpha)
        out.append(RejectionSet(r.reject, r.threshold, r.procedure_tag, cols))
    return out


def rsw_subsets(N: int, size: int, count: int, seed: int) -> list[np.ndarray]:
    """Fixed random column subsets (sorted) for subsampled RSW runs."""
    rng = rng_for(seed, int(Stage.SUBSET))
    return [np.sort(rng.choice(N, size=size, replace=False)) for _ in range(count)]
