"""Cross-sectional joint test of zero alphas and its error rates.

The test compares extreme percentiles of the cross-section of alpha
t-statistics with their distribution under a bootstrapped null in which every
fund's in-sample alpha has been removed.  All funds share the same resampled
rows in each draw, so cross-sectional dependence is preserved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import AllFundsFiltered, DataError
from .inject import InjectionConfig, build_alternative_panel, shift_columns
from .panel import FactorPanel, ReturnPanel, counts_from_indices, effect_se
from .calibrate import ordered_map, resolve_threads
from .resample import IndexDraw, Stage, apply_draw, sample_indices

DEFAULT_STATISTICS = ("max", 99.9, 99.5, 99.0, 98.0, 95.0, 90.0)
DEFAULT_LEVELS = (0.01, 0.05, 0.10)

_BLOCK = 100


def stat_label(spec) -> str:
    return "max" if spec == "max" else f"{float(spec):g}"


def _check_spec(spec):
    if spec == "max":
        return "max"
    q = float(spec)
    if not 0.0 < q <= 100.0:
        raise ValueError(f"percentile must lie in (0, 100], got {spec}")
    return q


@dataclass(frozen=True)
class JointTestConfig:
    statistics: tuple = DEFAULT_STATISTICS
    B: int = 1000
    min_obs_T: int = 8
    subsample_windows: Optional[tuple] = None
    alpha_levels: tuple = DEFAULT_LEVELS
    M: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "statistics", tuple(_check_spec(s) for s in self.statistics))
        if not self.statistics:
            raise ValueError("no statistics requested")
        if self.min_obs_T < 2:
            raise ValueError("min_obs_T must be >= 2")
        if self.B < 1 or self.M < 1:
            raise ValueError("B and M must be >= 1")
        if any(not 0.0 < a <= 1.0 for a in self.alpha_levels):
            raise ValueError("significance levels must lie in (0, 1]")


def _rank(q: float, n: int) -> int:
    # guard against q * n / 100 landing a hair above an integer
    return min(n, max(1, math.ceil(round(q * n / 100.0, 9))))


def percentile_stat(tvec, spec) -> float:
    """Order statistic at rank ceil(q/100 * n) (1-based), or the maximum."""
    t = np.asarray(tvec, dtype=float).reshape(-1)
    if t.size == 0:
        raise ValueError("percentile of an empty vector")
    spec = _check_spec(spec)
    s = np.sort(t)
    if spec == "max":
        return float(s[-1])
    return float(s[_rank(spec, s.size) - 1])


def percentile_rows(T: np.ndarray, specs: Sequence) -> np.ndarray:
    """Statistics of every row of ``T`` ignoring NaN entries; (rows, len(specs)).

    Rows with no finite entries give NaN.
    """
    T = np.atleast_2d(T)
    S = np.sort(np.where(np.isfinite(T), T, np.nan), axis=1)  # NaN sorts last
    n = np.isfinite(T).sum(axis=1)
    out = np.full((T.shape[0], len(specs)), np.nan)
    rows = np.nonzero(n > 0)[0]
    for c, spec in enumerate(specs):
        spec = _check_spec(spec)
        if spec == "max":
            ranks = n[rows]
        else:
            ranks = np.array([_rank(spec, int(k)) for k in n[rows]])
        out[rows, c] = S[rows, ranks - 1]
    return out


class JointStat(NamedTuple):
    observed: float
    p_value: float


@dataclass
class JointTestResult:
    stats: dict  # label -> JointStat
    B: int
    n_funds: int
    excluded: dict = field(default_factory=dict)  # name -> reason

    def rejects(self, level: float) -> dict:
        return {k: v.p_value <= level for k, v in self.stats.items()}

    def to_dict(self) -> dict:
        return {
            "B": self.B,
            "n_funds": self.n_funds,
            "excluded": dict(self.excluded),
            "stats": {k: {"observed": v.observed, "p_value": v.p_value} for k, v in self.stats.items()},
        }

    @classmethod
    def from_dict(cls, d) -> "JointTestResult":
        return cls(
            stats={k: JointStat(v["observed"], v["p_value"]) for k, v in d["stats"].items()},
            B=d["B"],
            n_funds=d["n_funds"],
            excluded=dict(d.get("excluded", {})),
        )


def _n_params(factors) -> int:
    return 1 if factors is None else factors.n_factors + 1


def filter_funds(panel: ReturnPanel, factors, min_obs_T: int):
    """Keep funds with at least ``min_obs_T`` observations and an estimable statistic.

    Returns (filtered panel, kept column indices, excluded name -> reason).
    """
    D = panel.n_periods
    min_obs = max(min_obs_T, _n_params(factors) + 1)
    eff, se = effect_se(np.ones((1, D)), panel, factors, min_obs)
    excluded = {}
    keep = []
    for k, name in enumerate(panel.names):
        if panel.n_obs[k] < min_obs_T:
            excluded[name] = f"{int(panel.n_obs[k])} observations < {min_obs_T}"
        elif not np.isfinite(se[0, k]):
            excluded[name] = "statistic not estimable"
        else:
            keep.append(k)
    if not keep:
        raise AllFundsFiltered(f"no fund has >= {min_obs_T} observations and an estimable statistic")
    out = panel if len(keep) == panel.n_strategies else panel.select(keep)
    return out, np.array(keep), excluded


def ff_joint_test(
    panel: ReturnPanel,
    factors: Optional[FactorPanel],
    cfg: JointTestConfig,
    seed: int = 0,
    key: Sequence[int] = (),
) -> JointTestResult:
    """Joint test of zero alphas (zero means when ``factors`` is None).

    Funds with fewer than ``min_obs_T`` observations are dropped from the
    actual sample; within each bootstrap draw a fund whose resampled history
    falls below ``min_obs_T`` observations is left out of that draw's
    cross-section.  p-value = (1 + #{bootstrap stat >= observed}) / (B + 1).
    """
    if factors is not None:
        factors.check_aligned(panel)
    fp, _, excluded = filter_funds(panel, factors, cfg.min_obs_T)
    D = fp.n_periods
    min_obs = max(cfg.min_obs_T, _n_params(factors) + 1)
    eff, se = effect_se(np.ones((1, D)), fp, factors, min_obs)
    t_obs = eff / se
    observed = percentile_rows(t_obs, cfg.statistics)[0]

    # null: remove every fund's in-sample effect
    null = shift_columns(fp, -eff[0])
    ge = np.zeros(len(cfg.statistics), dtype=np.int64)
    key = tuple(int(k) for k in key)
    for lo in range(0, cfg.B, _BLOCK):
        bs = range(lo, min(cfg.B, lo + _BLOCK))
        idx = np.stack([sample_indices(seed, D, int(Stage.JOINT), *key, b) for b in bs])
        e_b, se_b = effect_se(counts_from_indices(idx, D), null, factors, min_obs)
        stat_b = percentile_rows(e_b / se_b, cfg.statistics)
        # a draw with no usable fund cannot exceed anything
        ge += np.sum(np.where(np.isfinite(stat_b), stat_b >= observed, False), axis=0)
    p = (1.0 + ge) / (cfg.B + 1.0)
    stats = {
        stat_label(s): JointStat(float(o), float(pv)) for s, o, pv in zip(cfg.statistics, observed, p)
    }
    return JointTestResult(stats, cfg.B, fp.n_strategies, excluded)


@dataclass
class FFErrorRates:
    """Joint-test rejection frequencies over M perturbed pseudo samples.

    At p0 = 0 a rejection is a Type I error; at p0 > 0 a non-rejection is a
    Type II error.  ``error_rate`` picks the relevant one.
    """

    p0: float
    M: int
    B: int
    reject_rate: dict  # stat label -> {level: rate}
    se: dict
    failures: int = 0

    @property
    def nonreject_rate(self) -> dict:
        return {s: {a: 1.0 - r for a, r in v.items()} for s, v in self.reject_rate.items()}

    @property
    def error_rate(self) -> dict:
        return self.reject_rate if self.p0 == 0 else self.nonreject_rate

    def to_dict(self) -> dict:
        return {
            "p0": self.p0,
            "M": self.M,
            "B": self.B,
            "failures": self.failures,
            "reject_rate": {s: {repr(a): r for a, r in v.items()} for s, v in self.reject_rate.items()},
            "se": {s: {repr(a): r for a, r in v.items()} for s, v in self.se.items()},
        }


def ff_error_rates(
    panel: ReturnPanel,
    factors: Optional[FactorPanel],
    p0: float,
    cfg: JointTestConfig,
    seed: int = 0,
    threads: Optional[int] = None,
) -> FFErrorRates:
    """Type I (p0 = 0) or Type II (p0 > 0) rates of the joint test.

    Each of the M iterations builds a pseudo sample (all-null at p0 = 0,
    top-p0 injection from outer draw m otherwise), perturbs it with one
    resample of the periods, and runs the joint test on the perturbation.
    """
    if factors is not None:
        factors.check_aligned(panel)
    base, _, _ = filter_funds(panel, factors, cfg.min_obs_T)
    D = base.n_periods
    mode = "raw_mean" if factors is None else "factor_alpha"
    min_obs = max(cfg.min_obs_T, _n_params(factors) + 1)
    eff, _ = effect_se(np.ones((1, D)), base, factors, min_obs)
    eff = eff[0]
    inj = InjectionConfig(p0, mode, "one_sided_right", min_obs)
    labels = [stat_label(s) for s in cfg.statistics]
    levels = np.asarray(cfg.alpha_levels, dtype=float)

    def one(m):
        if p0 == 0:
            pseudo = shift_columns(base, -eff)
        else:
            outer = sample_indices(seed, D, int(Stage.OUTER), m, 0)
            pseudo = build_alternative_panel(base, inj, IndexDraw(outer), factors, eff).panel
        pert = sample_indices(seed, D, int(Stage.PERTURB), m, 0)
        pp = apply_draw(pseudo, pert)
        fpp = None if factors is None else apply_draw(factors, pert)
        try:
            res = ff_joint_test(pp, fpp, cfg, seed, key=(m,))
        except AllFundsFiltered:
            return None
        p = np.array([res.stats[s].p_value for s in labels])
        return p[:, None] <= levels[None, :]

    out = ordered_map(one, list(range(cfg.M)), resolve_threads(threads))
    ok = [r for r in out if r is not None]
    if not ok:
        raise AllFundsFiltered("every perturbation lost all funds")
    H = np.stack(ok).astype(float)  # (M_ok, stats, levels)
    mean = H.mean(axis=0)
    se = H.std(axis=0, ddof=1) / math.sqrt(len(ok)) if len(ok) > 1 else np.zeros_like(mean)
    rr = {s: {float(a): float(mean[k, l]) for l, a in enumerate(levels)} for k, s in enumerate(labels)}
    ss = {s: {float(a): float(se[k, l]) for l, a in enumerate(levels)} for k, s in enumerate(labels)}
    return FFErrorRates(p0, len(ok), cfg.B, rr, ss, failures=len(out) - len(ok))


def frac_statistic(
    panel: ReturnPanel,
    factors: Optional[FactorPanel],
    cfg: JointTestConfig,
    upper_bound: float = 0.40,
    grid_step: float = 0.01,
    seed: int = 0,
    key: Sequence[int] = (),
    level: float = 0.05,
) -> float:
    """Largest D on the grid such that every (100 - 100d)th percentile with d <= D
    is jointly significant at ``level``; 0 when the first one is not."""
    n = int(round(upper_bound / grid_step))
    ds = [round(grid_step * k, 10) for k in range(1, n + 1)]
    qs = [round(100.0 * (1.0 - d), 8) for d in ds]
    sub = JointTestConfig(statistics=tuple(qs), B=cfg.B, min_obs_T=cfg.min_obs_T, M=1)
    res = ff_joint_test(panel, factors, sub, seed, key)
    frac = 0.0
    for d, q in zip(ds, qs):
        if res.stats[stat_label(q)].p_value <= level:
            frac = d
        else:
            break
    return frac


@dataclass
class FracDistribution:
    values: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    def prob_at_least(self, x: float) -> float:
        return float(np.mean(self.values >= x - 1e-12))


def frac_distribution(
    panel: ReturnPanel,
    factors: Optional[FactorPanel],
    p0: float,
    cfg: JointTestConfig,
    I: int = 10,
    J: int = 100,
    seed: int = 0,
    threads: Optional[int] = None,
) -> FracDistribution:
    """Frac over resamples of truth-labelled pseudo samples at a given p0."""
    base, _, _ = filter_funds(panel, factors, cfg.min_obs_T)
    D = base.n_periods
    mode = "raw_mean" if factors is None else "factor_alpha"
    min_obs = max(cfg.min_obs_T, _n_params(factors) + 1)
    inj = InjectionConfig(p0, mode, "one_sided_right", min_obs)
    eff, _ = effect_se(np.ones((1, D)), base, factors, min_obs)

    def outer(i):
        draw = IndexDraw(sample_indices(seed, D, int(Stage.OUTER), i, 0))
        labeled = build_alternative_panel(base, inj, draw, factors, eff[0])
        vals = []
        for j in range(J):
            idx = sample_indices(seed, D, int(Stage.INNER), i, j)
            pp = apply_draw(labeled.panel, idx)
            fpp = None if factors is None else apply_draw(factors, idx)
            try:
                vals.append(frac_statistic(pp, fpp, cfg, seed=seed, key=(i, j)))
            except AllFundsFiltered:
                vals.append(0.0)
        return vals

    rows = ordered_map(outer, list(range(I)), resolve_threads(threads))
    return FracDistribution(np.array([v for r in rows for v in r]))


class Window(NamedTuple):
    panel: ReturnPanel
    factors: Optional[FactorPanel]
    start: object
    end: object


def subsample_split(
    panel: ReturnPanel,
    windows: Sequence[tuple],
    complete: bool = False,
    factors: Optional[FactorPanel] = None,
) -> list[Window]:
    """Cut the panel into period windows given as inclusive (start, end) labels.

    Funds with no observation in a window are dropped from it; with
    ``complete=True`` so is any fund missing a period inside the window.
    """
    labels = panel.period_labels
    spans = []
    for start, end in windows:
        rows = [r for r, lab in enumerate(labels) if start <= lab <= end]
        if not rows:
            raise DataError(f"window ({start}, {end}) contains no periods")
        spans.append((start, end, rows))
    spans.sort(key=lambda s: s[2][0])
    for a, b in zip(spans, spans[1:]):
        if a[2][-1] >= b[2][0]:
            raise DataError(f"windows ({a[0]}, {a[1]}) and ({b[0]}, {b[1]}) overlap")
    out = []
    for start, end, rows in spans:
        m = panel.mask[rows]
        keep = m.all(axis=0) if complete else m.any(axis=0)
        if not keep.any():
            raise DataError(f"window ({start}, {end}) has no eligible fund")
        cols = np.nonzero(keep)[0]
        sub = ReturnPanel(
            panel.values[rows][:, cols],
            m[:, cols],
            tuple(labels[r] for r in rows),
            tuple(panel.names[c] for c in cols),
            panel.resampled,
        )
        f = None if factors is None else FactorPanel(
            factors.values[rows], tuple(factors.period_labels[r] for r in rows), factors.names
        )
        out.append(Window(sub, f, start, end))
    return out
