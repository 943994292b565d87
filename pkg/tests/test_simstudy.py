import json

import numpy as np
import pytest

from doubleboot.errors import BudgetExceeded
from doubleboot.inject import in_sample_effects
from doubleboot.panel import ReturnPanel
from doubleboot.simstudy import (
    GammaSpec,
    SimStudyConfig,
    SimStudyResult,
    build_population,
    gamma_sample,
    parse_procedure,
    run_sim_study,
    synthetic_panel,
)


def base(D=96, N=40, seed=0):
    return ReturnPanel.from_array(np.random.default_rng(seed).normal(0.002, 0.02, (D, N)))


def small_cfg(**kw):
    kw.setdefault("base_panel", base())
    kw.setdefault("M", 2)
    kw.setdefault("K", 2)
    kw.setdefault("est_I", 3)
    kw.setdefault("est_J", 10)
    kw.setdefault("p0_grid", (0.1,))
    kw.setdefault("alpha_grid", (0.05,))
    return SimStudyConfig(**kw)


class TestGamma:
    def test_point_mass(self):
        assert np.all(gamma_sample(GammaSpec(0.05, 0.0), 10, 0) == 0.05)

    @pytest.mark.parametrize("mu, sigma", [(0.05, 0.025), (0.10, 0.05), (0.025, 0.05)])
    def test_moments(self, mu, sigma):
        n = 100_000
        x = gamma_sample(GammaSpec(mu, sigma), n, 1)
        assert abs(x.mean() - mu) < 4 * sigma / np.sqrt(n)
        assert x.std() == pytest.approx(sigma, rel=0.03)

    def test_skewness(self):
        mu, sigma = 0.05, 0.025
        x = gamma_sample(GammaSpec(mu, sigma), 400_000, 2)
        skew = ((x - x.mean()) ** 3).mean() / x.std() ** 3
        assert skew == pytest.approx(2 * sigma / mu, rel=0.08)

    @pytest.mark.parametrize("mu, sigma", [(0.0, 0.1), (-1.0, 0.1), (0.1, -0.1), (np.inf, 0.1)])
    def test_invalid(self, mu, sigma):
        with pytest.raises(ValueError):
            GammaSpec(mu, sigma)


class TestPopulation:
    def test_shift_identity(self):
        cfg = small_cfg()
        pop = build_population(cfg, 0)
        eff = in_sample_effects(pop.panel, "raw_mean", None, cfg.min_obs)
        np.testing.assert_allclose(eff, pop.injected_effect, atol=1e-10)
        assert pop.truth.sum() == 4

    def test_variance_unchanged(self):
        cfg = small_cfg()
        pop = build_population(cfg, 1)
        np.testing.assert_allclose(pop.panel.values.var(axis=0), cfg.base_panel.values.var(axis=0), rtol=1e-10)

    def test_monthly_units(self):
        pop = build_population(small_cfg(gamma=GammaSpec(0.06, 0.0)), 0)
        assert np.allclose(pop.injected_effect[pop.truth], 0.005)

    def test_fixed_per_m(self):
        cfg = small_cfg()
        a, b = build_population(cfg, 3), build_population(cfg, 3)
        assert (a.truth == b.truth).all() and (a.injected_effect == b.injected_effect).all()
        assert not (a.truth == build_population(cfg, 4).truth).all()

    def test_tiny_population_rounds_to_no_truth(self):
        pop = build_population(small_cfg(base_panel=base(N=4), true_fraction=0.1), 0)
        assert not pop.truth.any()


class TestProcedureParsing:
    def test_fixed(self):
        assert parse_procedure("fixed(2.5)") == ("fixed", 2.5)
        assert parse_procedure("fixed(inf)") == ("fixed", np.inf)

    def test_unknown(self):
        with pytest.raises(ValueError):
            small_cfg(procedures=("holm",))


class TestRunSimStudy:
    def test_infinite_cutoff_has_no_errors(self):
        res = run_sim_study(small_cfg(procedures=("fixed(inf)",)))
        (row,) = res.rows
        assert row.actual == 0.0 and row.est == 0.0 and row.win is None

    def test_rows_cover_grid(self):
        res = run_sim_study(small_cfg(procedures=("bh", "by"), alpha_grid=(0.05, 0.1), p0_grid=(0.05, 0.1)))
        assert len(res.rows) == 2 * 2 * 2
        assert all(r.n == 4 for r in res.rows)

    def test_thread_invariant(self):
        a = run_sim_study(small_cfg(threads=1)).to_dict()
        assert a == run_sim_study(small_cfg(threads=3)).to_dict()

    def test_checkpoint_resume(self, tmp_path):
        ck = tmp_path / "ck.jsonl"
        full = run_sim_study(small_cfg(checkpoint=str(ck))).to_dict()
        lines = ck.read_text().splitlines()
        assert len(lines) == 2 * 2 * 2  # M * K * procedures
        # keep one finished perturbation, half of another, and a torn record
        ck.write_text("\n".join(lines[:3]) + "\n" + lines[3][:10])
        again = run_sim_study(small_cfg(checkpoint=str(ck))).to_dict()
        assert again == full

    def test_checkpoint_records_reused(self, tmp_path):
        ck = tmp_path / "ck.jsonl"
        run_sim_study(small_cfg(checkpoint=str(ck)))
        recs = [json.loads(x) for x in ck.read_text().splitlines()]
        for r in recs:
            r["actual"] = 0.5
        ck.write_text("".join(json.dumps(r) + "\n" for r in recs))
        res = run_sim_study(small_cfg(checkpoint=str(ck)))
        assert res.rows[0].actual == 0.5

    def test_budget_guard(self):
        with pytest.raises(BudgetExceeded):
            run_sim_study(small_cfg(M=1000, K=1000, max_work=1e6))

    def test_round_trip(self):
        res = run_sim_study(small_cfg())
        assert SimStudyResult.from_dict(json.loads(json.dumps(res.to_dict()))).to_dict() == res.to_dict()


class TestSyntheticPanel:
    def test_truth_count_and_effect(self):
        lp = synthetic_panel(60, 50, seed=0, true_fraction=0.1, signal_mean=0.12)
        assert lp.truth.sum() == 5
        assert np.allclose(lp.injected_effect[lp.truth], 0.01)
        assert np.all(lp.injected_effect[~lp.truth] == 0)

    def test_correlation(self):
        lp = synthetic_panel(4000, 6, seed=1, correlation=0.5)
        C = np.corrcoef(lp.panel.values, rowvar=False)
        off = C[~np.eye(6, dtype=bool)]
        assert np.allclose(off, 0.5, atol=0.05)

    def test_independent_columns(self):
        lp = synthetic_panel(4000, 6, seed=2, correlation=0.0)
        C = np.corrcoef(lp.panel.values, rowvar=False)
        assert np.abs(C[~np.eye(6, dtype=bool)]).max() < 0.06
