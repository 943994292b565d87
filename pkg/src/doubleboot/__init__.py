"""Double-bootstrap calibration of multiple-testing error rates."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AllFundsFiltered,
    BudgetExceeded,
    ConfigError,
    DataError,
    DegenerateVariance,
    DoubleBootError,
    DuplicateIdentifier,
    InsufficientIterations,
    NoTrueStrategies,
    ParseError,
    PositivityViolation,
    RankDeficient,
    TooFewObservations,
)
from .panel import (  # noqa: E402
    FactorPanel,
    ReturnPanel,
    StrategyStat,
    alpha_regression,
    panel_stats,
    t_stat_mean,
)
from .resample import BootstrapPlan, IndexDraw, Stage, apply_draw, draw_indices  # noqa: E402
from .inject import (  # noqa: E402
    InjectionConfig,
    TruthLabeledPanel,
    build_alternative_panel,
    build_null_panel,
    selection_stats,
)
from .rates import (  # noqa: E402
    AggregateRates,
    ContingencyCounts,
    RealizedRates,
    aggregate,
    count_outcomes,
    realized_rates,
    roc_curve,
)
from .procedures import (  # noqa: E402
    PValueVector,
    RejectionSet,
    bh,
    by,
    fixed_cutoff,
    pvalues_from_t,
    rsw,
    storey,
)
from .calibrate import (  # noqa: E402
    CalibrationRequest,
    ErrorRateReport,
    ProcedureSpec,
    compare_methods,
    double_bootstrap,
    select_cutoff,
    solve_cutoff,
)
from .ffjoint import (  # noqa: E402
    JointTestConfig,
    JointTestResult,
    ff_error_rates,
    ff_joint_test,
    frac_distribution,
    frac_statistic,
    percentile_stat,
    subsample_split,
)
from .simstudy import (  # noqa: E402
    GammaSpec,
    SimStudyConfig,
    build_population,
    gamma_sample,
    run_sim_study,
    synthetic_panel,
)
from .io import emit_report, gen_synthetic, load_factors, load_panel, write_panel  # noqa: E402
