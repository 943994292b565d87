"""Simulation harness: known-truth populations versus double-bootstrap estimates.

A population D_m demeans every column of a base panel, then gives a random
subset of columns a Gamma-distributed mean.  Each population is perturbed K
times by resampling periods; on each perturbation the realized FDR of a
procedure (truth known) is compared with the double-bootstrap estimate of its
Type I rate computed from the panel alone.
"""

from __future__ import annotations

import json
import math
import os
import threading
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .calibrate import (
    CalibrationRequest,
    ProcedureSpec,
    double_bootstrap,
    fixed_label,
    ordered_map,
    resolve_threads,
)
from .errors import BudgetExceeded, DoubleBootError
from .inject import TruthLabeledPanel, in_sample_effects, n_true, shift_columns
from .panel import DEFAULT_MIN_OBS, ReturnPanel, effect_tstats
from .procedures import bh, by, fixed_cutoff, pvalue_array, rsw, storey
from .rates import rates_from_decisions
from .resample import BootstrapPlan, IndexDraw, Stage, apply_draw, rng_for, sample_indices

MU0_GRID = (0.025, 0.05, 0.10)
SIGMA0_GRID = (0.0, 0.025, 0.05)
DEFAULT_P0_GRID = (0.05, 0.10, 0.15)
DEFAULT_DELTAS = (0.01, 0.05, 0.10)


@dataclass(frozen=True)
class GammaSpec:
    """Gamma law parameterised by mean and standard deviation (annual units)."""

    mu0: float
    sigma0: float = 0.0

    def __post_init__(self):
        if not (self.mu0 > 0 and math.isfinite(self.mu0)):
            raise ValueError(f"mu0 must be positive, got {self.mu0}")
        if not (self.sigma0 >= 0 and math.isfinite(self.sigma0)):
            raise ValueError(f"sigma0 must be >= 0, got {self.sigma0}")

    @property
    def shape(self) -> float:
        return self.mu0**2 / self.sigma0**2

    @property
    def scale(self) -> float:
        return self.sigma0**2 / self.mu0


def gamma_sample(spec: GammaSpec, n: int, seed) -> np.ndarray:
    """``n`` i.i.d. draws; a point mass at mu0 when sigma0 = 0.

    ``seed`` is an int or a numpy Generator.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if spec.sigma0 == 0:
        return np.full(n, float(spec.mu0))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.gamma(spec.shape, spec.scale, size=n)


def synthetic_panel(
    D: int,
    N: int,
    seed: int,
    vol: float = 0.02,
    correlation: float = 0.0,
    true_fraction: float = 0.0,
    signal_mean: float = 0.0,
    periods_per_year: int = 12,
    key: Sequence[int] = (),
) -> TruthLabeledPanel:
    """Normal returns with one common factor giving pairwise ``correlation``.

    ``signal_mean`` is an annual mean added to round(true_fraction * N)
    randomly chosen columns.
    """
    if not 0.0 <= correlation < 1.0:
        raise ValueError("correlation must lie in [0, 1)")
    rng = rng_for(seed, int(Stage.SYNTHETIC), *key)
    common = rng.standard_normal((D, 1))
    idio = rng.standard_normal((D, N))
    X = vol * (math.sqrt(correlation) * common + math.sqrt(1.0 - correlation) * idio)
    truth = np.zeros(N, dtype=bool)
    k = n_true(true_fraction, N)
    if k:
        truth[rng.choice(N, size=k, replace=False)] = True
    effect = np.where(truth, signal_mean / periods_per_year, 0.0)
    X = X + effect[None, :]
    panel = ReturnPanel.from_array(X, [f"s{j:04d}" for j in range(N)])
    return TruthLabeledPanel(panel, truth, effect)


@dataclass
class SimStudyConfig:
    base_panel: ReturnPanel
    gamma: GammaSpec = GammaSpec(0.05, 0.025)
    true_fraction: float = 0.10
    M: int = 50
    K: int = 20
    procedures: Sequence[str] = ("bh", "by")
    p0_grid: Sequence[float] = DEFAULT_P0_GRID
    alpha_grid: Sequence[float] = DEFAULT_DELTAS
    seed: int = 0
    periods_per_year: int = 12
    est_I: int = 10
    est_J: int = 40
    rsw_B: int = 200
    min_obs: int = DEFAULT_MIN_OBS
    max_work: float = 1e10
    checkpoint: Optional[str] = None
    threads: Optional[int] = None

    def __post_init__(self):
        if self.M < 1 or self.K < 1:
            raise ValueError("M and K must be >= 1")
        if not 0.0 < self.true_fraction < 1.0:
            raise ValueError("true_fraction must lie in (0, 1)")
        if self.est_I < 1 or self.est_J < 1:
            raise ValueError("est_I and est_J must be >= 1")
        self.procedures = tuple(self.procedures)
        for p in self.procedures:
            parse_procedure(p)
        if not self.p0_grid or not self.alpha_grid:
            raise ValueError("p0_grid and alpha_grid must be nonempty")

    def work(self) -> float:
        """Inner-draw column evaluations the run will perform."""
        N = self.base_panel.n_strategies
        return float(self.M * self.K * self.est_I * self.est_J * len(self.p0_grid) * N)


def parse_procedure(label: str):
    """'fixed(c)' gives ('fixed', c); anything else a ProcedureSpec."""
    s = str(label).strip().lower()
    if s.startswith("fixed"):
        return ("fixed", float(s[len("fixed") :].strip("()_ ")))
    return ProcedureSpec.parse(s)


def build_population(cfg: SimStudyConfig, m: int) -> TruthLabeledPanel:
    """Population D_m: demeaned base plus Gamma means on a random column subset."""
    base = cfg.base_panel
    N = base.n_strategies
    rng = rng_for(cfg.seed, int(Stage.POPULATION), m)
    eff = in_sample_effects(base, "raw_mean", None, cfg.min_obs)
    k = n_true(cfg.true_fraction, N)
    truth = np.zeros(N, dtype=bool)
    injected = np.zeros(N)
    if k:
        chosen = np.sort(rng.choice(N, size=k, replace=False))
        truth[chosen] = True
        injected[chosen] = gamma_sample(cfg.gamma, k, rng) / cfg.periods_per_year
    return TruthLabeledPanel(shift_columns(base, injected - eff), truth, injected)


def _decisions(proc, t, panel, delta, seed, key):
    """Rejections of one procedure on one panel at level delta."""
    if isinstance(proc, tuple):
        return fixed_cutoff(t, proc[1]).reject
    if proc.kind == "rsw":
        return rsw(panel, delta, B=proc.B, seed=seed, key=key).reject
    p = pvalue_array(t)
    if proc.kind == "bh":
        return bh(p, delta).reject
    if proc.kind == "by":
        return by(p, delta).reject
    return storey(p, delta, proc.theta).reject


def _est_seed(seed: int, m: int, k: int) -> int:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(Stage.ESTIMATE), m, k))
    return int(ss.generate_state(1, np.uint64)[0])


def _row_keys(cfg):
    """(procedure label, delta) pairs; fixed cutoffs have a single None delta."""
    out = []
    for label in cfg.procedures:
        proc = parse_procedure(label)
        if isinstance(proc, tuple):
            out.append((label, proc, None))
        else:
            for d in cfg.alpha_grid:
                out.append((label, proc, float(d)))
    return out


def _one_perturbation(cfg: SimStudyConfig, pop: TruthLabeledPanel, m: int, k: int) -> list[dict]:
    D = pop.panel.n_periods
    draw = sample_indices(cfg.seed, D, int(Stage.PERTURB), m, k)
    pert = apply_draw(pop.panel, draw)
    _, t = effect_tstats(np.ones((1, D)), pert, None, cfg.min_obs)
    t = t[0]
    rows = _row_keys(cfg)

    # estimate from the panel alone
    procs = []
    cuts = []
    for _, proc, _ in rows:
        if isinstance(proc, tuple):
            cuts.append(proc[1])
        elif proc not in procs:
            procs.append(proc)
    req = CalibrationRequest(
        panel=pert,
        p0_grid=sorted(cfg.p0_grid),
        plan=BootstrapPlan(_est_seed(cfg.seed, m, k), cfg.est_I, cfg.est_J, D),
        alpha_grid=sorted(cfg.alpha_grid) if procs else (),
        cutoff_grid=sorted(set(cuts)),
        procedures=[ProcedureSpec(p.kind, p.theta, cfg.rsw_B) for p in procs],
        min_obs=cfg.min_obs,
        threads=1,
    )
    report = double_bootstrap(req)

    records = []
    for label, proc, delta in rows:
        rej = _decisions(proc, t, pert, delta if delta is not None else 0.05, cfg.seed, (m, k))
        actual = float(rates_from_decisions(rej, pop.truth)[0])
        est = {}
        for p0 in sorted(cfg.p0_grid):
            if isinstance(proc, tuple):
                c = report.cell(p0, fixed_label(proc[1]), None, proc[1])
            else:
                c = report.cell(p0, proc.label, delta)
            est[repr(float(p0))] = c.type1 if c.valid else None
        records.append({"m": m, "k": k, "procedure": label, "delta": delta, "actual": actual, "est": est})
    return records


@dataclass
class SimRow:
    procedure: str
    delta: Optional[float]
    mu0: float
    sigma0: float
    p0: float
    actual: float
    est: Optional[float]
    win: Optional[bool]
    se_actual: float
    se_est: Optional[float]
    n: int
    n_est: int


@dataclass
class SimStudyResult:
    rows: list[SimRow]
    provenance: dict = field(default_factory=dict)

    def row(self, procedure, delta, p0) -> SimRow:
        for r in self.rows:
            if r.procedure == procedure and r.delta == delta and r.p0 == p0:
                return r
        raise KeyError((procedure, delta, p0))

    def to_dict(self) -> dict:
        return {
            "schema": "doubleboot.simstudy/1",
            "provenance": self.provenance,
            "rows": [asdict(r) for r in self.rows],
        }

    @classmethod
    def from_dict(cls, d) -> "SimStudyResult":
        return cls([SimRow(**r) for r in d["rows"]], d.get("provenance", {}))


def _load_checkpoint(path) -> dict:
    done = {}
    if path and os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    break  # torn final line from an interrupted run
                done.setdefault((rec["m"], rec["k"]), []).append(rec)
    return done


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return None, None
    total = 0.0
    for v in x:  # fixed order
        total += v
    mean = total / x.size
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return float(mean), se


def run_sim_study(cfg: SimStudyConfig) -> SimStudyResult:
    """Actual versus estimated Type I rates for every (procedure, delta, p0).

    Completed (m, k) records are appended to ``cfg.checkpoint`` (JSON lines)
    and reused on restart.  Raises BudgetExceeded before any work when the
    configured scale exceeds ``cfg.max_work``.
    """
    if cfg.work() > cfg.max_work:
        raise BudgetExceeded(f"simulation needs {cfg.work():.3g} evaluations, budget {cfg.max_work:.3g}")
    n_rows = len(_row_keys(cfg))
    done = {key: recs for key, recs in _load_checkpoint(cfg.checkpoint).items() if len(recs) == n_rows}
    lock = threading.Lock()

    def population_task(m):
        pop = None
        out = []
        for k in range(cfg.K):
            if (m, k) in done:
                out.extend(done[(m, k)])
                continue
            if pop is None:
                pop = build_population(cfg, m)
            recs = _one_perturbation(cfg, pop, m, k)
            if cfg.checkpoint:
                with lock, open(cfg.checkpoint, "a", encoding="utf-8") as fh:
                    for r in recs:
                        fh.write(json.dumps(r, sort_keys=True) + "\n")
            out.extend(recs)
        return out

    per_m = ordered_map(population_task, list(range(cfg.M)), resolve_threads(cfg.threads))
    records = [r for recs in per_m for r in recs]
    records.sort(key=lambda r: (r["m"], r["k"]))

    rows = []
    for label, proc, delta in _row_keys(cfg):
        recs = [r for r in records if r["procedure"] == label and r["delta"] == delta]
        actual, se_a = _mean_se([r["actual"] for r in recs])
        for p0 in sorted(cfg.p0_grid):
            ests = [r["est"][repr(float(p0))] for r in recs]
            ests = [e for e in ests if e is not None]
            est, se_e = _mean_se(ests)
            win = None
            if delta is not None and est is not None:
                win = bool(abs(est - actual) < abs(delta - actual))
            rows.append(
                SimRow(
                    procedure=label,
                    delta=delta,
                    mu0=cfg.gamma.mu0,
                    sigma0=cfg.gamma.sigma0,
                    p0=float(p0),
                    actual=actual,
                    est=est,
                    win=win,
                    se_actual=se_a,
                    se_est=se_e,
                    n=len(recs),
                    n_est=len(ests),
                )
            )
    prov = {
        "seed": int(cfg.seed),
        "M": cfg.M,
        "K": cfg.K,
        "est_I": cfg.est_I,
        "est_J": cfg.est_J,
        "true_fraction": cfg.true_fraction,
        "periods_per_year": cfg.periods_per_year,
        "data_fingerprint": cfg.base_panel.fingerprint(),
    }
    return SimStudyResult(rows, prov)
