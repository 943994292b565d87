"""Double-bootstrap error-rate calibration.

For each outer draw i the panel is turned into a truth-labelled pseudo sample
Y_i (one per p0, all built from the same ranking draw); each inner draw j
resamples Y_i and every procedure's decisions are tallied against the known
truth.  Cell rates are means over all (i, j); Monte Carlo standard errors
come from the spread of the per-i means.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import __version__
from .errors import DoubleBootError, PositivityViolation
from .inject import (
    InjectionConfig,
    MODES,
    SIDEDNESS,
    build_alternative_panel,
    in_sample_effects,
    n_true,
    selection_stats,
)
from .panel import DEFAULT_MIN_OBS, FactorPanel, ReturnPanel, effect_tstats, panel_stats
from .procedures import (
    PVALUE_SOURCES,
    by_rows,
    bh_rows,
    pvalue_array,
    rsw,
    rsw_subsets,
    storey_rows,
)
from .rates import RocCurve, cutoff_counts, rates_from_counts, rates_from_decisions
from .resample import BootstrapPlan, IndexDraw, Stage, apply_draw, count_block, draw_block

DEFAULT_CUTOFF_GRID = tuple(round(1.5 + 0.1 * k, 1) for k in range(36))
PROCEDURE_KINDS = ("bh", "by", "storey", "rsw")
METRICS = ("type1", "type2", "oratio", "tpr", "fpr")

# inner draws evaluated per kernel call
_INNER_BLOCK = 100


def resolve_threads(threads: Optional[int] = None) -> int:
    """Explicit value, else DOUBLEBOOT_THREADS, else 1."""
    if threads is None:
        env = os.environ.get("DOUBLEBOOT_THREADS")
        threads = int(env) if env else 1
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    return threads


def ordered_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Map preserving input order; results never depend on ``threads``."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


@dataclass(frozen=True)
class ProcedureSpec:
    """A p-value or bootstrap multiple-testing rule evaluated at every alpha."""

    kind: str
    theta: Optional[float] = None
    B: int = 1000
    subsample_size: Optional[int] = None
    subsample_count: int = 100

    def __post_init__(self):
        if self.kind not in PROCEDURE_KINDS:
            raise ValueError(f"procedure kind must be one of {PROCEDURE_KINDS}, got {self.kind!r}")
        if self.kind == "storey":
            if self.theta is None or not 0.0 < self.theta < 1.0:
                raise ValueError("storey needs theta in (0, 1)")

    @property
    def label(self) -> str:
        if self.kind == "storey":
            return f"storey({self.theta:g})"
        return self.kind

    @classmethod
    def parse(cls, spec) -> "ProcedureSpec":
        """Accept a ProcedureSpec, a dict, or a string like 'bh' or 'storey(0.6)'."""
        if isinstance(spec, ProcedureSpec):
            return spec
        if isinstance(spec, dict):
            return cls(**spec)
        s = str(spec).strip().lower()
        if s.startswith("storey"):
            inner = s[len("storey") :].strip("()_ ")
            return cls("storey", theta=float(inner) if inner else 0.6)
        return cls(s)


def fixed_label(cutoff: float) -> str:
    return f"t>{cutoff:g}"


@dataclass
class Cell:
    """Error rates of one (p0, method, alpha or cutoff) combination.

    Rate fields are None when the cell is invalid.
    """

    p0: float
    method: str
    alpha: Optional[float]
    cutoff: Optional[float]
    I: int
    J: int
    type1: Optional[float] = None
    type2: Optional[float] = None
    oratio: Optional[float] = None
    tpr: Optional[float] = None
    fpr: Optional[float] = None
    se_type1: Optional[float] = None
    se_type2: Optional[float] = None
    se_oratio: Optional[float] = None
    valid: bool = True
    reason: Optional[str] = None
    attained: Optional[bool] = None

    @property
    def key(self) -> tuple:
        return (self.p0, self.method, self.alpha, self.cutoff)


@dataclass
class ErrorRateReport:
    cells: list[Cell]
    provenance: dict
    # per p0: average of the per-draw median effect / t of the true columns
    selection: dict = field(default_factory=dict)

    def cell(self, p0, method, alpha=None, cutoff=None) -> Cell:
        for c in self.cells:
            if c.p0 == p0 and c.method == method and c.alpha == alpha and (cutoff is None or c.cutoff == cutoff):
                return c
        raise KeyError((p0, method, alpha, cutoff))

    def fixed_cells(self, p0) -> list[Cell]:
        return sorted(
            (c for c in self.cells if c.p0 == p0 and c.alpha is None and c.method.startswith("t>")),
            key=lambda c: c.cutoff,
        )

    def roc(self, p0) -> RocCurve:
        """Average (FPR, TPR) per fixed cutoff, with the -inf/+inf endpoints."""
        cells = [c for c in self.fixed_cells(p0) if c.valid]
        cuts = np.array([-np.inf] + [c.cutoff for c in cells] + [np.inf])
        fpr = np.array([1.0] + [c.fpr for c in cells] + [0.0])
        tpr = np.array([1.0] + [c.tpr for c in cells] + [0.0])
        return RocCurve(cuts, fpr, tpr)

    def to_dict(self) -> dict:
        return {
            "schema": "doubleboot.error_rate_report/1",
            "provenance": self.provenance,
            "selection": {repr(float(k)): v for k, v in self.selection.items()},
            "cells": [asdict(c) for c in self.cells],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ErrorRateReport":
        return cls(
            cells=[Cell(**c) for c in d["cells"]],
            provenance=d["provenance"],
            selection={float(k): v for k, v in d.get("selection", {}).items()},
        )

    def __eq__(self, other):
        return isinstance(other, ErrorRateReport) and self.to_dict() == other.to_dict()


def _strictly_increasing(name, grid):
    g = list(grid)
    if any(not b > a for a, b in zip(g, g[1:])):
        raise ValueError(f"{name} must be strictly increasing")
    return tuple(float(x) for x in g)


@dataclass
class CalibrationRequest:
    panel: ReturnPanel
    p0_grid: Sequence[float]
    plan: BootstrapPlan
    alpha_grid: Sequence[float] = ()
    cutoff_grid: Sequence[float] = ()
    procedures: Sequence = ()
    factors: Optional[FactorPanel] = None
    mode: str = "raw_mean"
    sidedness: str = "one_sided_right"
    min_obs: int = DEFAULT_MIN_OBS
    pvalue_source: Optional[str] = None
    threads: Optional[int] = None
    rsw_budget: float = 2e10

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.sidedness not in SIDEDNESS:
            raise ValueError(f"sidedness must be one of {SIDEDNESS}")
        if self.mode == "factor_alpha":
            if self.factors is None:
                raise ValueError("factor_alpha mode needs factors")
            self.factors.check_aligned(self.panel)
        self.p0_grid = _strictly_increasing("p0_grid", self.p0_grid)
        self.alpha_grid = _strictly_increasing("alpha_grid", self.alpha_grid)
        self.cutoff_grid = _strictly_increasing("cutoff_grid", self.cutoff_grid)
        self.procedures = tuple(ProcedureSpec.parse(p) for p in self.procedures)
        if not self.p0_grid:
            raise ValueError("p0_grid is empty")
        if not self.procedures and not self.cutoff_grid:
            raise ValueError("nothing to evaluate: no procedures and no cutoff grid")
        if self.procedures and not self.alpha_grid:
            raise ValueError("alpha_grid is empty")
        if any(not 0.0 < a < 1.0 for a in self.alpha_grid):
            raise ValueError("alpha values must lie in (0, 1)")
        for p0 in self.p0_grid:
            InjectionConfig(p0, self.mode, self.sidedness, self.min_obs)
        if self.pvalue_source is None:
            self.pvalue_source = (
                "normal_two_sided" if self.sidedness == "two_sided" else "normal_one_sided"
            )
        if self.pvalue_source not in PVALUE_SOURCES:
            raise ValueError(f"pvalue_source must be one of {PVALUE_SOURCES}")
        if self.plan.D != self.panel.n_periods:
            raise ValueError(f"plan.D={self.plan.D} but panel has {self.panel.n_periods} periods")

    @property
    def model_factors(self) -> Optional[FactorPanel]:
        return self.factors if self.mode == "factor_alpha" else None


def drop_inestimable(panel: ReturnPanel, factors=None, min_obs: int = DEFAULT_MIN_OBS):
    """Remove columns whose in-sample statistic cannot be computed.

    Returns the filtered panel and the dropped column names.
    """
    stats = panel_stats(panel, factors, min_obs)
    keep = [k for k, s in enumerate(stats) if not s.excluded]
    dropped = [panel.names[k] for k, s in enumerate(stats) if s.excluded]
    if len(keep) == panel.n_strategies:
        return panel, []
    if not keep:
        raise DoubleBootError("no column has an estimable statistic")
    return panel.select(keep), dropped


def check_positivity(panel, p0, mode="raw_mean", factors=None, min_obs=DEFAULT_MIN_OBS):
    """Necessary condition for one-sided injection: enough positive in-sample effects."""
    k = n_true(p0, panel.n_strategies)
    eff = in_sample_effects(panel, mode, factors, min_obs)
    positive = int(np.count_nonzero(eff > 0))
    if k > positive:
        raise PositivityViolation(
            f"p0={p0} needs {k} true columns but only {positive} have a positive effect"
        )


def _column_layout(req: CalibrationRequest) -> list[tuple]:
    """Cell descriptors (p0, method, alpha, cutoff, proc) in report order."""
    out = []
    for p0 in req.p0_grid:
        for c in req.cutoff_grid:
            out.append((p0, fixed_label(c), None, c, None))
        for proc in req.procedures:
            for a in req.alpha_grid:
                out.append((p0, proc.label, a, None, proc))
    return out


def _pvalue_df(req, labeled_panel):
    if req.pvalue_source != "student_t":
        return None
    P = 1 if req.model_factors is None else req.model_factors.n_factors + 1
    return np.maximum(labeled_panel.n_obs - P, 1)


def _rsw_rates(req, proc, labeled, i, idx_rows, alpha, subsets):
    """Mean realized rates of RSW over the inner draws of one outer iteration."""
    acc = np.zeros(5)
    for j, idx in idx_rows:
        inner = apply_draw(labeled.panel, idx)
        f = None if req.model_factors is None else apply_draw(req.model_factors, idx)
        res = rsw(
            inner,
            alpha,
            B=proc.B,
            seed=req.plan.master_seed,
            key=(i, j),
            factors=f,
            mode=req.mode,
            sidedness=req.sidedness,
            min_obs=req.min_obs,
            budget=req.rsw_budget,
            subsets=subsets,
        )
        if isinstance(res, list):
            r = np.mean([rates_from_decisions(s.reject, labeled.truth[s.columns]) for s in res], axis=0)
        else:
            r = rates_from_decisions(res.reject, labeled.truth)
        acc += r
    return acc / len(idx_rows)


def _outer_iteration(req: CalibrationRequest, effects, layout, i: int):
    """Per-cell mean rates over the J inner draws of outer draw i.

    Returns (rates (n_cells, 5) with NaN rows for failed cells, reasons, selection).
    """
    plan = req.plan
    D = plan.D
    outer = IndexDraw(draw_block(plan.master_seed, D, Stage.OUTER, i, [0])[0])
    n_cells = len(layout)
    rates = np.full((n_cells, 5), np.nan)
    reasons: dict[int, str] = {}
    selection = {}
    mf = req.model_factors

    for p0 in req.p0_grid:
        cells = [k for k, c in enumerate(layout) if c[0] == p0]
        cfg = InjectionConfig(p0, req.mode, req.sidedness, req.min_obs)
        try:
            labeled = build_alternative_panel(req.panel, cfg, outer, req.factors, effects)
        except DoubleBootError as exc:
            for k in cells:
                reasons[k] = f"outer draw {i}: {type(exc).__name__}: {exc}"
            continue
        if labeled.n_true:
            selection[p0] = selection_stats(labeled)
        truth = labeled.truth
        n_t = int(truth.sum())
        n_n = truth.size - n_t
        df = _pvalue_df(req, labeled.panel)

        fixed = [k for k in cells if layout[k][3] is not None]
        pproc = [k for k in cells if layout[k][4] is not None and layout[k][4].kind != "rsw"]
        rsw_cells = [k for k in cells if layout[k][4] is not None and layout[k][4].kind == "rsw"]
        sums = np.zeros((n_cells, 5))

        for lo in range(0, plan.J, _INNER_BLOCK):
            js = range(lo, min(plan.J, lo + _INNER_BLOCK))
            counts = count_block(plan.master_seed, D, Stage.INNER, i, js)
            _, t = effect_tstats(counts, labeled.panel, mf, req.min_obs)
            if fixed:
                cuts = np.array([layout[k][3] for k in fixed])
                fp, tp = cutoff_counts(t, truth, cuts, req.sidedness)
                r = rates_from_counts(n_n - fp, fp, n_t - tp, tp)
                sums[fixed] += r.sum(axis=0)
            if pproc:
                P = pvalue_array(t, req.pvalue_source, df)
                for k in pproc:
                    _, _, a, _, proc = layout[k]
                    if proc.kind == "bh":
                        rej = bh_rows(P, a)
                    elif proc.kind == "by":
                        rej = by_rows(P, a)
                    else:
                        rej = storey_rows(P, a, proc.theta)
                    sums[k] += rates_from_decisions(rej, truth).sum(axis=0)
        for k in fixed + pproc:
            rates[k] = sums[k] / plan.J

        if rsw_cells:
            idx_rows = [
                (j, draw_block(plan.master_seed, D, Stage.INNER, i, [j])[0]) for j in range(plan.J)
            ]
            for k in rsw_cells:
                _, _, a, _, proc = layout[k]
                subsets = None
                N = req.panel.n_strategies
                if proc.subsample_size is not None and N > proc.subsample_size:
                    subsets = rsw_subsets(N, proc.subsample_size, proc.subsample_count, plan.master_seed)
                try:
                    rates[k] = _rsw_rates(req, proc, labeled, i, idx_rows, a, subsets)
                except DoubleBootError as exc:
                    reasons[k] = f"outer draw {i}: {type(exc).__name__}: {exc}"
    return rates, reasons, selection


def _provenance(req: CalibrationRequest, dropped) -> dict:
    return {
        "package": "doubleboot",
        "version": __version__,
        "seed": int(req.plan.master_seed),
        "I": req.plan.I,
        "J": req.plan.J,
        "D": req.plan.D,
        "N": req.panel.n_strategies,
        "mode": req.mode,
        "sidedness": req.sidedness,
        "min_obs": req.min_obs,
        "pvalue_source": req.pvalue_source,
        "p0_grid": list(req.p0_grid),
        "alpha_grid": list(req.alpha_grid),
        "cutoff_grid": list(req.cutoff_grid),
        "procedures": [asdict(p) for p in req.procedures],
        "data_fingerprint": req.panel.fingerprint(),
        "dropped_columns": list(dropped),
    }


def double_bootstrap(
    req: CalibrationRequest,
    on_outer: Optional[Callable[[int], None]] = None,
) -> ErrorRateReport:
    """Run the full outer x inner grid and aggregate every cell.

    A cell is marked invalid (with the first failure reason) when any outer
    iteration cannot evaluate it; other cells are unaffected.
    """
    panel, dropped = drop_inestimable(req.panel, req.model_factors, req.min_obs)
    if dropped:
        req = replace(req, panel=panel)
    effects = in_sample_effects(req.panel, req.mode, req.model_factors, req.min_obs)
    layout = _column_layout(req)
    threads = resolve_threads(req.threads)
    I, J = req.plan.I, req.plan.J

    def task(i):
        out = _outer_iteration(req, effects, layout, i)
        if on_outer is not None:
            on_outer(i)
        return out

    results = ordered_map(task, list(range(I)), threads)

    per_i = np.stack([r[0] for r in results])  # (I, cells, 5)
    cells = []
    for k, (p0, method, alpha, cutoff, _) in enumerate(layout):
        reason = next((r[1][k] for r in results if k in r[1]), None)
        cell = Cell(p0=p0, method=method, alpha=alpha, cutoff=cutoff, I=I, J=J)
        if reason is not None:
            cell.valid = False
            cell.reason = reason
            cells.append(cell)
            continue
        total = np.zeros(5)
        for i in range(I):  # fixed (i) order
            total = total + per_i[i, k]
        mean = total / I
        for name, v in zip(METRICS, mean):
            setattr(cell, name, float(v))
        if I > 1:
            se = per_i[:, k, :3].std(axis=0, ddof=1) / math.sqrt(I)
            cell.se_type1, cell.se_type2, cell.se_oratio = (float(x) for x in se)
        cells.append(cell)

    selection = {}
    for p0 in req.p0_grid:
        rows = [r[2][p0] for r in results if p0 in r[2]]
        if rows:
            arr = np.array(rows)
            selection[p0] = {
                "avg_effect": float(arr[:, 0].mean()),
                "avg_t": float(arr[:, 1].mean()),
                "draws": len(rows),
            }
    return ErrorRateReport(cells, _provenance(req, dropped), selection)


@dataclass(frozen=True)
class CutoffSolution:
    t_star: float
    achieved_type1: float
    attained: bool
    se_type1: Optional[float] = None
    type2: Optional[float] = None


def select_cutoff(grid: Sequence[float], type1: Sequence[float], target: float) -> tuple[int, bool]:
    """Index of the grid point with the largest TYPE1 not above ``target``.

    Ties go to the smallest cutoff.  If no point qualifies, the last grid
    index is returned with ``attained=False``.  NaN entries never qualify.
    """
    t1 = np.asarray(type1, dtype=float)
    ok = np.isfinite(t1) & (t1 <= target)
    if not ok.any():
        return len(grid) - 1, False
    best = np.max(t1[ok])
    return int(np.nonzero(ok & (t1 == best))[0][0]), True


def solve_from_report(report: ErrorRateReport, p0: float, alpha_target: float) -> CutoffSolution:
    cells = report.fixed_cells(p0)
    if not cells:
        raise ValueError("report has no fixed-cutoff cells")
    grid = [c.cutoff for c in cells]
    t1 = [c.type1 if c.valid else np.nan for c in cells]
    k, ok = select_cutoff(grid, t1, alpha_target)
    c = cells[k]
    return CutoffSolution(
        t_star=c.cutoff,
        achieved_type1=c.type1 if c.valid else float("nan"),
        attained=ok,
        se_type1=c.se_type1,
        type2=c.type2,
    )


def solve_cutoff(
    panel: ReturnPanel,
    p0: float,
    alpha_target: float,
    grid: Sequence[float] = DEFAULT_CUTOFF_GRID,
    plan: Optional[BootstrapPlan] = None,
    **kwargs,
) -> CutoffSolution:
    """Smallest-error admissible t cutoff for a target Type I rate at one p0.

    Extra keyword arguments (factors, mode, sidedness, min_obs, threads) are
    passed to the CalibrationRequest.
    """
    if plan is None:
        plan = BootstrapPlan(0, 100, 1000, panel.n_periods)
    req = CalibrationRequest(panel=panel, p0_grid=[p0], plan=plan, cutoff_grid=grid, **kwargs)
    return solve_from_report(double_bootstrap(req), p0, alpha_target)


def compare_methods(req: CalibrationRequest) -> ErrorRateReport:
    """Procedure cells plus an HL(opt) cell per (p0, alpha).

    HL(opt) is the fixed cutoff chosen by `select_cutoff` on the common-draw
    cutoff curve, with that cutoff's rates.  Uses the default 1.5..5.0 grid
    when the request has no cutoff grid.
    """
    if not req.cutoff_grid:
        req = replace(req, cutoff_grid=DEFAULT_CUTOFF_GRID)
    report = double_bootstrap(req)
    extra = []
    for p0 in req.p0_grid:
        cells = report.fixed_cells(p0)
        grid = [c.cutoff for c in cells]
        t1 = [c.type1 if c.valid else np.nan for c in cells]
        for a in req.alpha_grid:
            k, ok = select_cutoff(grid, t1, a)
            src = cells[k]
            extra.append(replace(src, method="HL(opt)", alpha=a, attained=ok))
    report.cells.extend(extra)
    return report
