import json

import numpy as np
import pytest

from doubleboot.calibrate import (
    DEFAULT_CUTOFF_GRID,
    CalibrationRequest,
    ErrorRateReport,
    ProcedureSpec,
    compare_methods,
    double_bootstrap,
    select_cutoff,
    solve_cutoff,
    solve_from_report,
)
from doubleboot.panel import ReturnPanel
from doubleboot.resample import BootstrapPlan

from conftest import random_factors, random_panel


def noise_panel(D=120, N=60, seed=0, signal=0.0, k=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(0.0, 0.02, (D, N))
    X[:, :k] += signal
    return ReturnPanel.from_array(X)


def request(panel, I=8, J=40, seed=1, **kw):
    kw.setdefault("p0_grid", [0.0, 0.1])
    return CalibrationRequest(panel=panel, plan=BootstrapPlan(seed, I, J, panel.n_periods), **kw)


@pytest.fixture(scope="module")
def signal_panel():
    return noise_panel(seed=3, signal=0.006, k=8)


class TestRequestValidation:
    def test_grids_must_increase(self, signal_panel):
        with pytest.raises(ValueError):
            request(signal_panel, p0_grid=[0.1, 0.05], cutoff_grid=[2.0])

    def test_needs_something_to_evaluate(self, signal_panel):
        with pytest.raises(ValueError):
            request(signal_panel)

    def test_alpha_grid_required_with_procedures(self, signal_panel):
        with pytest.raises(ValueError):
            request(signal_panel, procedures=["bh"])

    def test_factor_mode_needs_factors(self, signal_panel):
        with pytest.raises(ValueError):
            request(signal_panel, cutoff_grid=[2.0], mode="factor_alpha")

    @pytest.mark.parametrize("spec, label", [("bh", "bh"), ("storey(0.4)", "storey(0.4)"), ({"kind": "rsw", "B": 100}, "rsw")])
    def test_procedure_parsing(self, spec, label):
        assert ProcedureSpec.parse(spec).label == label


class TestDoubleBootstrap:
    def test_null_has_no_misses(self, signal_panel):
        rep = double_bootstrap(request(signal_panel, cutoff_grid=[1.5, 2.0], procedures=["bh"], alpha_grid=[0.05]))
        for c in rep.cells:
            if c.p0 == 0.0:
                assert c.type2 == 0.0 and c.oratio == 0.0

    def test_infinite_cutoff_never_errs(self, signal_panel):
        rep = double_bootstrap(request(signal_panel, cutoff_grid=[2.0, np.inf]))
        for p0 in (0.0, 0.1):
            assert rep.cell(p0, "t>inf", cutoff=np.inf).type1 == 0.0

    def test_cells_carry_iteration_counts(self, signal_panel):
        rep = double_bootstrap(request(signal_panel, I=3, J=7, cutoff_grid=[2.0]))
        assert all((c.I, c.J) == (3, 7) for c in rep.cells)

    def test_thread_count_irrelevant(self, signal_panel):
        kw = dict(cutoff_grid=[1.5, 2.5], procedures=["bh", "storey(0.6)"], alpha_grid=[0.05, 0.1])
        a = double_bootstrap(request(signal_panel, threads=1, **kw))
        b = double_bootstrap(request(signal_panel, threads=4, **kw))
        assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)

    def test_containment_in_tallies(self, signal_panel):
        rep = double_bootstrap(
            request(signal_panel, procedures=["by", "bh", "storey(0.4)", "storey(0.8)"], alpha_grid=[0.05, 0.1])
        )
        for a in (0.05, 0.1):
            by_, bh_ = rep.cell(0.1, "by", a), rep.cell(0.1, "bh", a)
            for st_label in ("storey(0.4)", "storey(0.8)"):
                st_ = rep.cell(0.1, st_label, a)
                assert by_.fpr <= bh_.fpr <= st_.fpr
                assert by_.tpr <= bh_.tpr <= st_.tpr
            assert by_.type2 >= bh_.type2

    def test_standard_error_shrinks_with_I(self, signal_panel):
        kw = dict(cutoff_grid=[1.8], p0_grid=[0.1])
        small = double_bootstrap(request(signal_panel, I=10, J=30, seed=2, **kw)).cells[0]
        big = double_bootstrap(request(signal_panel, I=40, J=30, seed=2, **kw)).cells[0]
        ratio = small.se_type1 / big.se_type1
        assert 1.2 < ratio < 3.3  # sqrt(4) = 2 up to MC noise

    def test_failing_cell_isolated(self):
        rng = np.random.default_rng(0)
        X = rng.normal(-0.01, 0.02, (120, 40))
        X[:, :3] += 0.02
        p = ReturnPanel.from_array(X)
        rep = double_bootstrap(request(p, p0_grid=[0.05, 0.5], cutoff_grid=[2.0]))
        bad = rep.cell(0.5, "t>2", cutoff=2.0)
        assert not bad.valid and "PositivityViolation" in bad.reason and bad.type1 is None
        assert rep.cell(0.05, "t>2", cutoff=2.0).valid

    def test_inestimable_columns_dropped(self, signal_panel):
        X = signal_panel.values.copy()
        X[3:, 0] = np.nan
        p = ReturnPanel.from_array(X)
        rep = double_bootstrap(request(p, cutoff_grid=[2.0]))
        assert rep.provenance["dropped_columns"] == ["s0"]
        assert rep.provenance["N"] == p.n_strategies - 1

    def test_factor_mode_runs(self):
        p = random_panel(D=60, N=30, seed=2, mean=0.004)
        f = random_factors(D=60, K=2)
        rep = double_bootstrap(request(p, I=3, J=10, cutoff_grid=[2.0], mode="factor_alpha", factors=f))
        assert all(c.valid for c in rep.cells)

    def test_rsw_cells(self):
        p = noise_panel(D=60, N=20, seed=1, signal=0.01, k=3)
        rep = double_bootstrap(
            request(p, I=2, J=3, procedures=[ProcedureSpec("rsw", B=100)], alpha_grid=[0.1], p0_grid=[0.1])
        )
        assert rep.cells[0].valid and 0 <= rep.cells[0].type1 <= 1

    def test_json_round_trip(self, signal_panel):
        rep = double_bootstrap(request(signal_panel, cutoff_grid=[2.0], procedures=["bh"], alpha_grid=[0.05]))
        again = ErrorRateReport.from_dict(json.loads(json.dumps(rep.to_dict())))
        assert again == rep


class TestSelectCutoff:
    grid = [1.5, 1.6, 1.7, 1.8]

    def test_largest_admissible(self):
        assert select_cutoff(self.grid, [0.2, 0.06, 0.04, 0.01], 0.05) == (2, True)

    def test_ties_to_smallest_cutoff(self):
        assert select_cutoff(self.grid, [0.2, 0.04, 0.04, 0.01], 0.05) == (1, True)

    def test_unattained(self):
        assert select_cutoff(self.grid, [0.3, 0.2, 0.1, 0.09], 0.05) == (3, False)

    def test_target_one(self):
        assert select_cutoff(self.grid, [0.9, 0.8, 0.7, 0.6], 1.0) == (0, True)


class TestSolveCutoff:
    def test_target_one_gives_smallest_grid_point(self, signal_panel):
        sol = solve_cutoff(signal_panel, 0.1, 1.0, plan=BootstrapPlan(0, 4, 20, 120))
        assert sol.t_star == 1.5 and sol.attained

    def test_dense_grid_reevaluation(self, signal_panel):
        plan = BootstrapPlan(5, 10, 60, 120)
        sol = solve_cutoff(signal_panel, 0.1, 0.05, plan=plan)
        dense = np.round(np.arange(1.5, 5.0001, 0.05), 2)
        rep = double_bootstrap(CalibrationRequest(panel=signal_panel, p0_grid=[0.1], plan=plan, cutoff_grid=dense))
        at_star = rep.cell(0.1, f"t>{sol.t_star:g}", cutoff=sol.t_star)
        assert at_star.type1 == sol.achieved_type1
        assert sol.achieved_type1 <= 0.05 + 3 * sol.se_type1
        finer = solve_from_report(rep, 0.1, 0.05)
        assert abs(finer.t_star - sol.t_star) <= 0.1 + 1e-9


class TestCompareMethods:
    def test_optimal_column(self, signal_panel):
        rep = compare_methods(request(signal_panel, procedures=["bh", "by"], alpha_grid=[0.01, 0.05, 0.1]))
        for p0 in (0.0, 0.1):
            for a in (0.01, 0.05, 0.1):
                c = rep.cell(p0, "HL(opt)", a)
                if c.attained:
                    assert c.type1 <= a
                assert c.cutoff in DEFAULT_CUTOFF_GRID
