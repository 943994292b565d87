import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from doubleboot.errors import (
    DataError,
    DegenerateVariance,
    DuplicateIdentifier,
    RankDeficient,
    TooFewObservations,
)
from doubleboot.panel import (
    FactorPanel,
    ReturnPanel,
    alpha_regression,
    counts_from_indices,
    effect_tstats,
    panel_stats,
    t_stat_mean,
)

from conftest import random_factors, random_panel


class TestReturnPanel:
    def test_missing_cells_stored_as_nan(self):
        p = ReturnPanel.from_array([[0.1, np.nan], [0.2, 0.3]])
        assert p.mask.tolist() == [[True, False], [True, True]]
        assert np.isnan(p.values[0, 1])
        assert p.filled[0, 1] == 0.0

    @pytest.mark.parametrize(
        "kwargs, err",
        [
            (dict(values=np.zeros((1, 2)), mask=np.ones((1, 2), bool), period_labels=(0,), names=("a", "b")), DataError),
            (dict(values=np.zeros((2, 2)), mask=np.ones((2, 2), bool), period_labels=(0, 1), names=("a", "a")), DuplicateIdentifier),
            (dict(values=np.zeros((2, 1)), mask=np.ones((2, 1), bool), period_labels=(1, 1), names=("a",)), DataError),
            (dict(values=np.zeros((2, 1)), mask=np.zeros((2, 1), bool), period_labels=(0, 1), names=("a",)), DataError),
        ],
        ids=["one-period", "dup-name", "labels-not-increasing", "empty-column"],
    )
    def test_invariants_enforced(self, kwargs, err):
        with pytest.raises(err):
            ReturnPanel(**kwargs)

    def test_values_are_read_only(self, panel):
        with pytest.raises(ValueError):
            panel.values[0, 0] = 1.0

    def test_fingerprint_tracks_content(self, panel):
        other = panel.with_values(panel.filled + 1e-9)
        assert panel.fingerprint() == random_panel().fingerprint()
        assert panel.fingerprint() != other.fingerprint()


class TestTStatMean:
    def test_symmetric_series_has_zero_t(self):
        s = t_stat_mean(np.array([1.0, -1.0, 1.0, -1.0]), min_obs=2)
        assert s.mean == 0.0 and s.t_stat == 0.0

    def test_constant_series_is_degenerate(self):
        with pytest.raises(DegenerateVariance):
            t_stat_mean(np.full(10, 0.03))

    def test_too_few_observations(self):
        x = np.array([0.1, np.nan, 0.2, np.nan])
        with pytest.raises(TooFewObservations):
            t_stat_mean(x, min_obs=3)

    def test_matches_hand_formula(self):
        x = np.array([0.012, -0.004, 0.031, 0.007, -0.015, 0.022, 0.003, 0.018, -0.009, 0.011, 0.026, -0.002])
        n = len(x)
        m = sum(x) / n
        s = math.sqrt(sum((v - m) ** 2 for v in x) / (n - 1))
        assert t_stat_mean(x).t_stat == pytest.approx(m / (s / math.sqrt(n)), rel=1e-12)

    def test_masked_cells_ignored(self):
        x = np.array([0.01, 0.02, np.nan, 0.04, 0.00, 0.03, 0.05, 0.02, 0.01])
        full = t_stat_mean(x[~np.isnan(x)])
        assert t_stat_mean(x).t_stat == pytest.approx(full.t_stat, rel=1e-14)
        assert t_stat_mean(x).n_obs == 8

    @given(
        hnp.arrays(np.float64, st.integers(8, 40), elements=st.floats(-0.5, 0.5)),
        st.floats(0.01, 100.0),
    )
    def test_scale_invariance(self, x, c):
        if np.std(x) < 1e-6:
            return
        assert t_stat_mean(c * x).t_stat == pytest.approx(t_stat_mean(x).t_stat, rel=1e-9, abs=1e-9)


class TestAlphaRegression:
    def test_exact_factor_fit_has_zero_alpha(self, factors):
        y = 0.5 * factors.values[:, 0]
        s = alpha_regression(y, factors)
        assert abs(s.alpha) < 1e-12

    def test_zero_factors_reduce_to_mean_test(self):
        rng = np.random.default_rng(3)
        y = rng.normal(0.01, 0.05, 40)
        zero = FactorPanel(np.zeros((40, 2)), tuple(range(40)))
        s = alpha_regression(y, zero)
        ref = t_stat_mean(y)
        assert s.alpha == pytest.approx(ref.mean, rel=1e-12)
        assert s.t_alpha == pytest.approx(ref.t_stat, rel=1e-10)
        _, t = effect_tstats(np.ones((1, 40)), ReturnPanel.from_array(y), zero)
        assert t[0, 0] == pytest.approx(ref.t_stat, rel=1e-10)

    def test_intercept_only_agrees_with_t_stat_mean(self):
        rng = np.random.default_rng(3)
        y = rng.normal(0.01, 0.05, 40)
        p = ReturnPanel.from_array(y)
        e, t = effect_tstats(np.ones((1, 40)), p, None)
        ref = t_stat_mean(y)
        assert t[0, 0] == pytest.approx(ref.t_stat, rel=1e-10)
        assert e[0, 0] == pytest.approx(ref.mean, rel=1e-12)

    def test_normal_equations_oracle(self):
        rng = np.random.default_rng(11)
        F = rng.normal(size=(30, 3))
        y = 0.02 + F @ np.array([0.3, -0.5, 1.1]) + rng.normal(0, 0.1, 30)
        fp = FactorPanel(F, tuple(range(30)))
        X = np.column_stack([np.ones(30), F])
        beta = np.linalg.inv(X.T @ X) @ X.T @ y
        resid = y - X @ beta
        se = math.sqrt(resid @ resid / (30 - 4) * np.linalg.inv(X.T @ X)[0, 0])
        s = alpha_regression(y, fp)
        assert s.alpha == pytest.approx(beta[0], rel=1e-10)
        assert s.t_alpha == pytest.approx(beta[0] / se, rel=1e-10)
        np.testing.assert_allclose(s.residuals, resid, atol=1e-12)

    def test_collinear_factors_rank_deficient(self):
        rng = np.random.default_rng(2)
        f = rng.normal(size=20)
        fp = FactorPanel(np.column_stack([f, 2 * f]), tuple(range(20)))
        with pytest.raises(RankDeficient):
            alpha_regression(rng.normal(size=20), fp)

    def test_residuals_nan_where_unobserved(self, factors):
        rng = np.random.default_rng(4)
        y = rng.normal(0, 0.05, 60)
        y[[3, 17]] = np.nan
        s = alpha_regression(y, factors)
        assert np.isnan(s.residuals[[3, 17]]).all()
        assert np.isfinite(np.delete(s.residuals, [3, 17])).all()

    def test_hac_option_changes_only_standard_error(self, factors):
        rng = np.random.default_rng(6)
        y = rng.normal(0.01, 0.05, 60)
        a = alpha_regression(y, factors)
        b = alpha_regression(y, factors, se="hac")
        assert a.alpha == pytest.approx(b.alpha, rel=1e-14)
        assert a.t_alpha != b.t_alpha


class TestPanelStats:
    def test_short_column_flagged_not_dropped(self):
        X = np.random.default_rng(0).normal(0, 0.02, (20, 3))
        X[2:, 1] = np.nan
        stats = panel_stats(ReturnPanel.from_array(X), min_obs=8)
        assert len(stats) == 3
        assert stats[1].excluded and not stats[0].excluded and not stats[2].excluded
        assert "observ" in stats[1].reason

    def test_no_factors_no_alpha(self, panel):
        assert all(s.alpha is None and s.t_alpha is None for s in panel_stats(panel))

    def test_wide_panel_count_matches_columnwise(self):
        p = random_panel(D=120, N=484, seed=9, mean=0.004, vol=0.02)
        stats = panel_stats(p)
        oracle = sum(t_stat_mean(p.values[:, j]).t_stat > 2.0 for j in range(484))
        assert sum(s.t_stat > 2.0 for s in stats) == oracle

    def test_permuting_columns_permutes_output(self, gappy_panel, factors):
        f = FactorPanel(np.random.default_rng(1).normal(size=(80, 2)), tuple(range(80)))
        perm = np.random.default_rng(0).permutation(gappy_panel.n_strategies)
        a = panel_stats(gappy_panel, f)
        b = panel_stats(gappy_panel.select(perm), f)
        for k, j in enumerate(perm):
            assert b[k].t_alpha == pytest.approx(a[j].t_alpha, rel=1e-12)


class TestWeightedKernels:
    """Count-weighted kernels must equal recomputation on the gathered rows."""

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_mean_kernel_matches_gather(self, seed):
        rng = np.random.default_rng(seed)
        p = random_panel(D=30, N=5, seed=seed % 1000, missing=0.15)
        idx = rng.integers(0, 30, size=30)
        e, t = effect_tstats(counts_from_indices(idx, 30), p, None, min_obs=4)
        for j in range(5):
            col = p.values[idx, j]
            obs = col[~np.isnan(col)]
            if obs.size < 4 or np.unique(obs).size < 2:
                assert np.isnan(t[0, j])
                continue
            assert e[0, j] == pytest.approx(obs.mean(), rel=1e-10, abs=1e-14)
            assert t[0, j] == pytest.approx(obs.mean() / (obs.std(ddof=1) / math.sqrt(obs.size)), rel=1e-8)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.booleans())
    def test_alpha_kernel_matches_lstsq(self, seed, gappy):
        rng = np.random.default_rng(seed)
        D = 40
        p = random_panel(D=D, N=4, seed=seed % 997, missing=0.2 if gappy else 0.0)
        f = random_factors(D=D, K=2, seed=seed % 991)
        idx = rng.integers(0, D, size=D)
        _, t = effect_tstats(counts_from_indices(idx, D), p, f, min_obs=8)
        X = f.design()[idx]
        for j in range(4):
            y = p.values[idx, j]
            ok = ~np.isnan(y)
            if ok.sum() < 8 or np.unique(idx[ok]).size < 4:
                assert np.isnan(t[0, j])
                continue
            beta, *_ = np.linalg.lstsq(X[ok], y[ok], rcond=None)
            r = y[ok] - X[ok] @ beta
            XtX_inv = np.linalg.inv(X[ok].T @ X[ok])
            se = math.sqrt(r @ r / (ok.sum() - 3) * XtX_inv[0, 0])
            assert t[0, j] == pytest.approx(beta[0] / se, rel=1e-7)
