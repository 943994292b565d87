"""Command-line entry point.

    doubleboot <command> [--config FILE] [--seed N] [--out-dir DIR]
                         [--threads N] [--checkpoint FILE]
                         [--panel CSV] [--factors CSV]

Configuration files are JSON or YAML.  Unknown keys are rejected.  Every run
writes ``manifest.json`` next to its outputs.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 budget exceeded.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .calibrate import (
    DEFAULT_CUTOFF_GRID,
    CalibrationRequest,
    compare_methods,
    double_bootstrap,
    solve_from_report,
)
from .errors import BudgetExceeded, ConfigError, DoubleBootError, InsufficientIterations
from .ffjoint import (
    DEFAULT_LEVELS,
    DEFAULT_STATISTICS,
    JointTestConfig,
    ff_error_rates,
    ff_joint_test,
    frac_distribution,
    frac_statistic,
    subsample_split,
)
from .io import (
    emit_cutoffs,
    emit_report,
    gen_synthetic,
    load_factors,
    load_panel,
    manifest,
    write_csv,
    write_json,
)
from .resample import BootstrapPlan
from .simstudy import GammaSpec, SimStudyConfig, run_sim_study, synthetic_panel

log = logging.getLogger("doubleboot")

COMMANDS = ("calibrate", "solve-cutoff", "compare", "roc", "ffjoint", "frac", "simstudy", "gen-synthetic")
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_BUDGET = 0, 2, 3, 4


@dataclass
class CalibrateSection:
    p0_grid: list = field(default_factory=lambda: [0.0, 0.05, 0.10, 0.20])
    alpha_grid: list = field(default_factory=lambda: [0.01, 0.05, 0.10])
    cutoff_grid: list = field(default_factory=lambda: list(DEFAULT_CUTOFF_GRID))
    procedures: list = field(default_factory=lambda: ["bh", "by", "storey(0.4)", "storey(0.6)", "storey(0.8)"])
    I: int = 100
    J: int = 1000
    mode: str = "raw_mean"
    sidedness: str = "one_sided_right"
    min_obs: int = 8
    pvalue_source: Optional[str] = None
    alpha_targets: list = field(default_factory=lambda: [0.01, 0.05, 0.10])


@dataclass
class JointSection:
    statistics: list = field(default_factory=lambda: list(DEFAULT_STATISTICS))
    B: int = 1000
    min_obs_T: int = 8
    alpha_levels: list = field(default_factory=lambda: list(DEFAULT_LEVELS))
    M: int = 1000
    windows: Optional[list] = None
    complete: bool = False
    error_rate_p0: list = field(default_factory=list)


@dataclass
class FracSection:
    B: int = 1000
    min_obs_T: int = 8
    upper_bound: float = 0.40
    grid_step: float = 0.01
    p0_grid: list = field(default_factory=list)
    I: int = 10
    J: int = 100


@dataclass
class SimSection:
    mu0: float = 0.05
    sigma0: float = 0.025
    true_fraction: float = 0.10
    M: int = 50
    K: int = 20
    procedures: list = field(default_factory=lambda: ["bh", "by"])
    p0_grid: list = field(default_factory=lambda: [0.05, 0.10, 0.15])
    alpha_grid: list = field(default_factory=lambda: [0.01, 0.05, 0.10])
    est_I: int = 10
    est_J: int = 40
    periods_per_year: int = 12
    max_work: float = 1e10


@dataclass
class SyntheticSection:
    D: int = 240
    N: int = 200
    vol: float = 0.02
    correlation: float = 0.0
    true_fraction: float = 0.0
    signal_mean: float = 0.0
    periods_per_year: int = 12
    path: str = "synthetic.csv"


_SECTIONS = {
    "calibrate": CalibrateSection,
    "ffjoint": JointSection,
    "frac": FracSection,
    "simstudy": SimSection,
    "synthetic": SyntheticSection,
}


@dataclass
class RunConfig:
    command: Optional[str] = None
    seed: int = 0
    out_dir: str = "out"
    threads: Optional[int] = None
    checkpoint: Optional[str] = None
    panel: Optional[str] = None
    factors: Optional[str] = None
    formats: list = field(default_factory=lambda: ["json", "csv", "plotdata"])
    calibrate: CalibrateSection = field(default_factory=CalibrateSection)
    ffjoint: JointSection = field(default_factory=JointSection)
    frac: FracSection = field(default_factory=FracSection)
    simstudy: SimSection = field(default_factory=SimSection)
    synthetic: SyntheticSection = field(default_factory=SyntheticSection)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a mapping")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {unknown}")
        kwargs = {}
        for k, v in d.items():
            if k in _SECTIONS:
                if not isinstance(v, dict):
                    raise ConfigError(f"section {k!r} must be a mapping")
                sec = _SECTIONS[k]
                sub_known = {f.name for f in dataclasses.fields(sec)}
                bad = sorted(set(v) - sub_known)
                if bad:
                    raise ConfigError(f"unknown keys in section {k!r}: {bad}")
                kwargs[k] = sec(**v)
            else:
                kwargs[k] = v
        cfg = cls(**kwargs)
        if cfg.command is not None and cfg.command not in COMMANDS:
            raise ConfigError(f"unknown command {cfg.command!r}")
        bad = sorted(set(cfg.formats) - {"json", "csv", "plotdata"})
        if bad:
            raise ConfigError(f"unknown output formats: {bad}")
        return cfg

    def hashed(self) -> dict:
        """Settings that determine the outputs (threads and paths excluded)."""
        d = dataclasses.asdict(self)
        for k in ("threads", "out_dir", "checkpoint", "panel", "factors"):
            d.pop(k)
        return d


def load_config(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        if str(path).endswith((".yaml", ".yml")):
            return yaml.safe_load(text) or {}
        return json.loads(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="doubleboot", description="Double-bootstrap multiple-testing error rates.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON or YAML configuration file")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out-dir")
    ap.add_argument("--threads", type=int, help="worker threads (env DOUBLEBOOT_THREADS)")
    ap.add_argument("--checkpoint", help="resumable log for simstudy")
    ap.add_argument("--panel", help="return panel CSV")
    ap.add_argument("--factors", help="factor CSV aligned with the panel")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _inputs(cfg: RunConfig, need_panel=True):
    if cfg.panel is None:
        if need_panel:
            raise ConfigError("this command needs --panel")
        return None, None
    panel = load_panel(cfg.panel)
    factors = load_factors(cfg.factors, panel) if cfg.factors else None
    return panel, factors


def _request(cfg: RunConfig, panel, factors, procedures=True) -> CalibrationRequest:
    s = cfg.calibrate
    return CalibrationRequest(
        panel=panel,
        p0_grid=s.p0_grid,
        plan=BootstrapPlan(cfg.seed, s.I, s.J, panel.n_periods),
        alpha_grid=s.alpha_grid if procedures else (),
        cutoff_grid=s.cutoff_grid,
        procedures=s.procedures if procedures else (),
        factors=factors,
        mode=s.mode,
        sidedness=s.sidedness,
        min_obs=s.min_obs,
        pvalue_source=s.pvalue_source,
        threads=cfg.threads,
    )


def _joint_cfg(s: JointSection) -> JointTestConfig:
    return JointTestConfig(
        statistics=tuple(s.statistics),
        B=s.B,
        min_obs_T=s.min_obs_T,
        alpha_levels=tuple(s.alpha_levels),
        M=s.M,
    )


def run(cfg: RunConfig) -> list[Path]:
    """Execute ``cfg.command``; returns the written output paths."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cmd = cfg.command
    fm = cfg.formats
    paths: list[Path] = []

    if cmd == "gen-synthetic":
        spec = dataclasses.asdict(cfg.synthetic)
        target = Path(spec.pop("path"))
        if not target.is_absolute():
            target = out / target
        paths.extend(gen_synthetic(spec, cfg.seed, target))

    elif cmd in ("calibrate", "compare", "roc"):
        panel, factors = _inputs(cfg)
        req = _request(cfg, panel, factors, procedures=(cmd != "roc"))
        report = compare_methods(req) if cmd == "compare" else double_bootstrap(req)
        if cmd == "roc":
            paths.extend(emit_report(report, out, ["plotdata"], stem="roc"))
        else:
            paths.extend(emit_report(report, out, fm, stem=cmd))

    elif cmd == "solve-cutoff":
        panel, factors = _inputs(cfg)
        report = double_bootstrap(_request(cfg, panel, factors, procedures=False))
        sols = []
        for p0 in report.provenance["p0_grid"]:
            for a in cfg.calibrate.alpha_targets:
                s = solve_from_report(report, p0, a)
                sols.append(
                    {
                        "p0": p0,
                        "alpha_target": float(a),
                        "t_star": s.t_star,
                        "achieved_type1": s.achieved_type1,
                        "se_type1": s.se_type1,
                        "type2": s.type2,
                        "attained": s.attained,
                    }
                )
        paths.extend(emit_cutoffs(sols, out, fm))

    elif cmd == "ffjoint":
        panel, factors = _inputs(cfg)
        s = cfg.ffjoint
        jc = _joint_cfg(s)
        windows = [(None, panel, factors)]
        if s.windows:
            windows = [(f"{w.start}-{w.end}", w.panel, w.factors)
                       for w in subsample_split(panel, [tuple(x) for x in s.windows], s.complete, factors)]
        results = {}
        rows = []
        for name, p, f in windows:
            res = ff_joint_test(p, f, jc, cfg.seed)
            key = name or "full"
            results[key] = res.to_dict()
            for stat, v in res.stats.items():
                rows.append((key, stat, v.observed, v.p_value, res.n_funds, res.B))
        doc = {"schema": "doubleboot.joint_test/1", "results": results}
        if s.error_rate_p0:
            doc["error_rates"] = [
                ff_error_rates(panel, factors, float(p0), jc, cfg.seed, cfg.threads).to_dict()
                for p0 in s.error_rate_p0
            ]
        if "json" in fm:
            write_json(doc, out / "ffjoint.json")
            paths.append(out / "ffjoint.json")
        if "csv" in fm:
            write_csv(out / "ffjoint.csv", ["window", "statistic", "observed", "p_value", "n_funds", "B"], rows)
            paths.append(out / "ffjoint.csv")
            if s.error_rate_p0:
                er_rows = []
                for er in doc["error_rates"]:
                    for stat, lv in er["reject_rate"].items():
                        for a, r in lv.items():
                            er_rows.append((er["p0"], stat, float(a), r, er["se"][stat][a], er["M"], er["B"]))
                write_csv(out / "ff_error_rates.csv",
                          ["p0", "statistic", "level", "reject_rate", "se", "M", "B"], er_rows)
                paths.append(out / "ff_error_rates.csv")

    elif cmd == "frac":
        panel, factors = _inputs(cfg)
        s = cfg.frac
        jc = JointTestConfig(statistics=("max",), B=s.B, min_obs_T=s.min_obs_T, M=1)
        frac = frac_statistic(panel, factors, jc, s.upper_bound, s.grid_step, cfg.seed)
        doc = {"schema": "doubleboot.frac/1", "frac": frac, "distributions": []}
        rows = [("observed", None, frac, None)]
        for p0 in s.p0_grid:
            dist = frac_distribution(panel, factors, float(p0), jc, s.I, s.J, cfg.seed, cfg.threads)
            doc["distributions"].append(
                {"p0": float(p0), "mean": dist.mean, "prob_ge_10pct": dist.prob_at_least(0.10),
                 "values": dist.values.tolist()}
            )
            rows.append(("distribution", float(p0), dist.mean, dist.prob_at_least(0.10)))
        if "json" in fm:
            write_json(doc, out / "frac.json")
            paths.append(out / "frac.json")
        if "csv" in fm:
            write_csv(out / "frac.csv", ["kind", "p0", "mean_frac", "prob_ge_10pct"], rows)
            paths.append(out / "frac.csv")

    elif cmd == "simstudy":
        s = cfg.simstudy
        panel, _ = _inputs(cfg, need_panel=False)
        if panel is None:
            syn = dataclasses.asdict(cfg.synthetic)
            syn.pop("path")
            syn.update(true_fraction=0.0, signal_mean=0.0)
            panel = synthetic_panel(seed=cfg.seed, **syn).panel
        sc = SimStudyConfig(
            base_panel=panel,
            gamma=GammaSpec(s.mu0, s.sigma0),
            true_fraction=s.true_fraction,
            M=s.M,
            K=s.K,
            procedures=s.procedures,
            p0_grid=s.p0_grid,
            alpha_grid=s.alpha_grid,
            seed=cfg.seed,
            periods_per_year=s.periods_per_year,
            est_I=s.est_I,
            est_J=s.est_J,
            max_work=s.max_work,
            checkpoint=cfg.checkpoint,
            threads=cfg.threads,
        )
        res = run_sim_study(sc)
        if "json" in fm:
            write_json(res.to_dict(), out / "simstudy.json")
            paths.append(out / "simstudy.json")
        if "csv" in fm:
            cols = ["procedure", "delta", "mu0", "sigma0", "p0", "actual", "est", "win",
                    "se_actual", "se_est", "n", "n_est"]
            write_csv(out / "simstudy.csv", cols,
                      ([getattr(r, c) for c in cols] for r in res.rows))
            paths.append(out / "simstudy.csv")
    else:
        raise ConfigError(f"unknown command {cmd!r}")

    inputs = {"panel": cfg.panel, "factors": cfg.factors}
    write_json(manifest(cmd, cfg.hashed(), cfg.seed, inputs), out / "manifest.json")
    paths.append(out / "manifest.json")
    return paths


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        raw = load_config(args.config) if args.config else {}
        raw = dict(raw)
        raw["command"] = args.command
        for key in ("seed", "out_dir", "threads", "checkpoint", "panel", "factors"):
            v = getattr(args, key)
            if v is not None:
                raw[key] = v
        cfg = RunConfig.from_dict(raw)
    except (ConfigError, TypeError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        paths = run(cfg)
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (ConfigError, InsufficientIterations) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DoubleBootError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for p in paths:
        log.info("wrote %s", p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
