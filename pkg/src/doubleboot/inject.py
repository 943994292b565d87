"""Truth-labelled pseudo samples.

The null pseudo sample removes every column's in-sample effect.  The
alternative pseudo sample ranks columns on a bootstrapped copy of the data,
declares the top ``round(p0 * N)`` true, and shifts each original column so
its in-sample effect equals either the bootstrapped effect of the selected
column or zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DataError, NoTrueStrategies, PositivityViolation
from .panel import (
    DEFAULT_MIN_OBS,
    FactorPanel,
    ReturnPanel,
    effect_tstats,
    exact_effects,
    panel_stats,
)
from .resample import IndexDraw

MODES = ("raw_mean", "factor_alpha")
SIDEDNESS = ("one_sided_right", "two_sided")


def n_true(p0: float, N: int) -> int:
    """round(p0 * N) with halves rounded up."""
    return int(math.floor(p0 * N + 0.5))


@dataclass(frozen=True)
class InjectionConfig:
    p0: float
    mode: str = "raw_mean"
    sidedness: str = "one_sided_right"
    min_obs: int = DEFAULT_MIN_OBS

    def __post_init__(self):
        if not 0.0 <= self.p0 < 1.0:
            raise ValueError(f"p0 must lie in [0, 1), got {self.p0}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.sidedness not in SIDEDNESS:
            raise ValueError(f"sidedness must be one of {SIDEDNESS}")


@dataclass(eq=False)
class TruthLabeledPanel:
    panel: ReturnPanel
    truth: np.ndarray
    injected_effect: np.ndarray
    factors: Optional[FactorPanel] = None
    mode: str = "raw_mean"
    # t-statistic of each selected column in the ranking draw (NaN for nulls)
    selected_t: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_true(self) -> int:
        return int(self.truth.sum())

    @property
    def model_factors(self) -> Optional[FactorPanel]:
        """Factors to regress on, or None when effects are plain means."""
        return self.factors if self.mode == "factor_alpha" else None


def _check_mode(mode: str, factors: Optional[FactorPanel]) -> Optional[FactorPanel]:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode == "factor_alpha":
        if factors is None:
            raise DataError("factor_alpha mode needs a factor panel")
        return factors
    return None


def in_sample_effects(
    panel: ReturnPanel,
    mode: str = "raw_mean",
    factors: Optional[FactorPanel] = None,
    min_obs: int = DEFAULT_MIN_OBS,
) -> np.ndarray:
    """Exact in-sample effects; raises the first column's estimation error."""
    f = _check_mode(mode, factors)
    if f is not None:
        f.check_aligned(panel)
    stats = panel_stats(panel, f, min_obs)
    for name, s in zip(panel.names, stats):
        if s.excluded:
            raise DataError(f"column {name!r} cannot be estimated: {s.reason}")
    return np.array([s.effect for s in stats])


def shift_columns(panel: ReturnPanel, shifts: np.ndarray) -> ReturnPanel:
    """Add a per-column constant to observed cells only."""
    return panel.with_values(panel.filled + np.asarray(shifts)[None, :])


def build_null_panel(
    panel: ReturnPanel,
    mode: str = "raw_mean",
    factors: Optional[FactorPanel] = None,
    min_obs: int = DEFAULT_MIN_OBS,
    effects: Optional[np.ndarray] = None,
) -> TruthLabeledPanel:
    """Remove each column's in-sample mean (or alpha) from its observed returns.

    ``effects`` may carry precomputed in-sample effects to skip re-estimation.
    """
    f = _check_mode(mode, factors)
    if effects is None:
        effects = in_sample_effects(panel, mode, f, min_obs)
    N = panel.n_strategies
    return TruthLabeledPanel(
        panel=shift_columns(panel, -effects),
        truth=np.zeros(N, dtype=bool),
        injected_effect=np.zeros(N),
        factors=factors,
        mode=mode,
        selected_t=np.full(N, np.nan),
    )


def rank_columns(t: np.ndarray, sidedness: str = "one_sided_right") -> np.ndarray:
    """Column order by descending t (|t| for two-sided); ties go to the lower index.

    NaN statistics rank last.
    """
    score = np.abs(t) if sidedness == "two_sided" else np.asarray(t, dtype=float)
    score = np.where(np.isfinite(score), score, -np.inf)
    # lexsort's last key is primary
    return np.lexsort((np.arange(score.size), -score))


def build_alternative_panel(
    panel: ReturnPanel,
    config: InjectionConfig,
    outer_draw: IndexDraw,
    factors: Optional[FactorPanel] = None,
    effects: Optional[np.ndarray] = None,
) -> TruthLabeledPanel:
    """Alternative pseudo sample Y_i for one ranking draw.

    The bootstrapped panel X_i = apply_draw(X_0, outer_draw) is never
    materialised: its per-column effects and t-statistics come from the
    count-weighted kernels, which are identical to recomputing on the
    gathered rows.
    """
    f = _check_mode(config.mode, factors)
    if effects is None:
        effects = in_sample_effects(panel, config.mode, f, config.min_obs)
    N = panel.n_strategies
    k = n_true(config.p0, N)
    if k == 0:
        return build_null_panel(panel, config.mode, factors, config.min_obs, effects)

    counts = outer_draw.counts()[None, :]
    boot_effect, boot_t = effect_tstats(counts, panel, f, config.min_obs)
    boot_effect, boot_t = boot_effect[0], boot_t[0]
    order = rank_columns(boot_t, config.sidedness)
    chosen = order[:k]
    if not np.isfinite(boot_t[chosen]).all():
        raise PositivityViolation(
            f"only {int(np.isfinite(boot_t).sum())} columns have a finite bootstrapped "
            f"statistic, cannot select {k}"
        )
    target = boot_effect[chosen]
    if config.sidedness == "one_sided_right" and not (target > 0).all():
        bad = chosen[np.argmin(target)]
        raise PositivityViolation(
            f"p0={config.p0}: selected column {panel.names[bad]!r} has bootstrapped "
            f"effect {boot_effect[bad]:.3g} <= 0"
        )

    truth = np.zeros(N, dtype=bool)
    truth[chosen] = True
    injected = np.zeros(N)
    injected[chosen] = target
    selected_t = np.full(N, np.nan)
    selected_t[chosen] = boot_t[chosen]
    return TruthLabeledPanel(
        panel=shift_columns(panel, injected - effects),
        truth=truth,
        injected_effect=injected,
        factors=factors,
        mode=config.mode,
        selected_t=selected_t,
    )


def selection_stats(labeled: TruthLabeledPanel) -> tuple[float, float]:
    """Median effect and median t-statistic across the true columns of one draw.

    Averaging these medians across draws is left to the caller.
    """
    if labeled.n_true == 0:
        raise NoTrueStrategies("panel has no true strategies")
    eff = labeled.injected_effect[labeled.truth]
    if labeled.selected_t is not None and np.isfinite(labeled.selected_t[labeled.truth]).all():
        t = labeled.selected_t[labeled.truth]
    else:
        _, t_all = exact_effects(labeled.panel, labeled.model_factors)
        t = t_all[labeled.truth]
    return float(np.median(eff)), float(np.median(t))
