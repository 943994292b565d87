import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from doubleboot.inject import InjectionConfig, build_alternative_panel, build_null_panel
from doubleboot.rates import (
    ContingencyCounts,
    RealizedRates,
    aggregate,
    count_outcomes,
    cutoff_counts,
    rates_from_counts,
    realized_rates,
    roc_curve,
)
from doubleboot.resample import IndexDraw, apply_draw
from doubleboot.panel import exact_effects

from conftest import random_panel


def tables(max_n):
    for n in range(1, max_n + 1):
        for tn, fp, fn in itertools.product(range(n + 1), repeat=3):
            tp = n - tn - fp - fn
            if tp >= 0:
                yield ContingencyCounts(tn, fp, fn, tp)


def forced(c):
    """Rates by exact rational arithmetic."""
    def r(a, b):
        return Fraction(a, b) if b else Fraction(0)
    return (r(c.fp, c.fp + c.tp), r(c.fn, c.fn + c.tn), r(c.fp, c.fn), r(c.tp, c.tp + c.fn), r(c.fp, c.fp + c.tn))


class TestCountOutcomes:
    def test_all_reject_all_true(self):
        assert count_outcomes([True] * 5, [True] * 5) == (0, 0, 0, 5)

    def test_no_rejections(self):
        truth = [True, False, True, False, False]
        assert count_outcomes([False] * 5, truth) == (3, 0, 2, 0)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            count_outcomes([True], [True, False])

    def test_loop_oracle(self):
        rng = np.random.default_rng(0)
        d, t = rng.uniform(size=50) < 0.3, rng.uniform(size=50) < 0.2
        tally = dict(tn=0, fp=0, fn=0, tp=0)
        for di, ti in zip(d, t):
            key = ("t" if di == ti else "f") + ("p" if di else "n")
            tally[key] += 1
        assert count_outcomes(d, t) == (tally["tn"], tally["fp"], tally["fn"], tally["tp"])

    @given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=30), st.randoms())
    def test_permutation_invariant(self, pairs, rnd):
        d, t = map(list, zip(*pairs))
        perm = list(range(len(d)))
        rnd.shuffle(perm)
        c = count_outcomes(d, t)
        assert c == count_outcomes([d[k] for k in perm], [t[k] for k in perm])
        assert c.total == len(d)
        assert c.fp + c.tn == t.count(False)


class TestRealizedRates:
    def test_worked_counts(self):
        r = realized_rates(ContingencyCounts(95, 1, 1, 3))
        assert r.rfdr == 0.25 and r.rmiss == pytest.approx(1 / 96) and r.rratio == 1.0

    def test_no_discoveries_zero_fdr(self):
        assert realized_rates(ContingencyCounts(10, 0, 3, 0)).rfdr == 0.0

    @pytest.mark.parametrize("n_managers, expected", [(100, 2 / 97), (1000, 2 / 997)])
    def test_miss_rate_example(self, n_managers, expected):
        # 5 skilled managers, 3 found, 2 missed; no false discoveries
        c = ContingencyCounts(n_managers - 5, 0, 2, 3)
        assert realized_rates(c).rmiss == pytest.approx(expected, rel=1e-15)

    def test_exhaustive_small_tables(self):
        for c in tables(6):
            got = realized_rates(c)
            for g, f in zip(got, forced(c)):
                assert g == float(f)

    def test_vectorised_agrees(self):
        cs = list(tables(5))
        arr = rates_from_counts(*np.array(cs).T)
        for row, c in zip(arr, cs):
            assert tuple(row) == tuple(realized_rates(c))

    def test_rfdr_is_one_minus_precision(self):
        for c in tables(5):
            if c.fp + c.tp:
                assert realized_rates(c).rfdr == pytest.approx(1 - c.tp / (c.fp + c.tp))


class TestAggregate:
    def test_single(self):
        r = RealizedRates(0.1, 0.2, 0.3, 0.4, 0.5)
        assert tuple(aggregate([r])) == tuple(r)

    def test_two(self):
        rs = [RealizedRates(0, 0, 0, 0, 0), RealizedRates(0.5, 0, 0, 0, 0)]
        assert aggregate(rs).type1 == 0.25

    def test_empty(self):
        with pytest.raises(ValueError):
            aggregate([])

    def test_compensated_summation_oracle(self):
        rng = np.random.default_rng(1)
        rows = rng.uniform(size=(10_000, 5))
        got = aggregate(RealizedRates(*r) for r in rows)
        for k in range(5):
            assert got[k] == pytest.approx(math.fsum(rows[:, k]) / 10_000, rel=1e-12)


class TestCutoffCounts:
    def test_sets_shrink_with_cutoff(self):
        rng = np.random.default_rng(2)
        t = rng.normal(size=(20, 30))
        truth = rng.uniform(size=30) < 0.3
        grid = np.linspace(-1, 3, 21)
        fp, tp = cutoff_counts(t, truth, grid)
        assert np.all(np.diff(fp, axis=1) <= 0) and np.all(np.diff(tp, axis=1) <= 0)
        for g, c in enumerate(grid):
            assert np.array_equal(fp[:, g], ((t > c) & ~truth).sum(axis=1))


class TestRocCurve:
    def _labeled(self, p0=0.2):
        p = random_panel(D=60, N=25, seed=7, mean=0.01)
        idx = IndexDraw(np.random.default_rng(0).integers(0, 60, 60))
        return build_alternative_panel(p, InjectionConfig(p0), idx)

    def test_endpoints(self):
        lab = self._labeled()
        draws = np.random.default_rng(1).integers(0, 60, (10, 60))
        roc = roc_curve(lab, draws, [1.0, 2.0])
        pts = roc.points()
        assert pts[0] == (1.0, 1.0) and pts[-1] == (0.0, 0.0)

    def test_monotone_in_cutoff(self):
        lab = self._labeled()
        draws = np.random.default_rng(1).integers(0, 60, (30, 60))
        roc = roc_curve(lab, draws, np.linspace(0, 4, 17))
        assert np.all(np.diff(roc.fpr) <= 0) and np.all(np.diff(roc.tpr) <= 0)

    def test_no_true_columns(self):
        lab = build_null_panel(random_panel(D=40, N=10))
        roc = roc_curve(lab, np.random.default_rng(0).integers(0, 40, (5, 40)), [0.0, 1.0])
        assert np.all(roc.tpr == 0)

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            roc_curve(self._labeled(), np.zeros((1, 60), dtype=int), [])

    def test_per_draw_tally_oracle(self):
        lab = self._labeled()
        draws = np.random.default_rng(3).integers(0, 60, (200, 60))
        grid = [0.5, 1.5, 2.5]
        roc = roc_curve(lab, draws, grid)
        fpr = np.zeros(3)
        tpr = np.zeros(3)
        for d in draws:
            _, t = exact_effects(apply_draw(lab.panel, d))
            for g, c in enumerate(grid):
                rej = t > c
                tpr[g] += (rej & lab.truth).sum() / lab.truth.sum()
                fpr[g] += (rej & ~lab.truth).sum() / (~lab.truth).sum()
        np.testing.assert_allclose(roc.fpr[1:-1], fpr / 200, atol=1e-12)
        np.testing.assert_allclose(roc.tpr[1:-1], tpr / 200, atol=1e-12)
