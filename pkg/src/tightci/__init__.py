"""Nonasymptotic confidence intervals for average treatment effects.

Public surface: randomization designs (:mod:`tightci.design`), Horvitz-
Thompson estimation (:mod:`tightci.estimator`), interval constructions
(:mod:`tightci.intervals`), data-generating processes (:mod:`tightci.dgp`),
the deterministic experiment harness (:mod:`tightci.harness`), and the
command-line front end (:mod:`tightci.cli`).
"""

__version__ = "0.1.0"

from .design import (  # noqa: E402,F401
    Assignment,
    DesignError,
    DesignParams,
    EnumerationBudgetError,
    LayoutInfeasibleError,
    MbcrLayout,
    compute_layout,
    draw_bernoulli,
    draw_complete,
    draw_mbcr,
    enumerate_mbcr_distribution,
)
from .estimator import (  # noqa: E402,F401
    EstimatorError,
    ObservedData,
    PotentialTable,
    conditional_mean_given_eta,
    groupwise_sums,
    ht_mbcr,
    ht_standard,
    pseudo_outcome,
)
from .intervals import (  # noqa: E402,F401
    Interval,
    IntervalError,
    clt_ci,
    cn_mbcr_bounds,
    gamma_b,
    gamma_e,
    hoeff_mbcr_ci,
    naive_hoeffding_ci,
    reevaluate,
    studentized_ci,
    sub_bernoulli_ci,
)
from .dgp import DgpError, DgpSpec, sample_population, true_ate_iid  # noqa: E402,F401
from .harness import (  # noqa: E402,F401
    ConfigError,
    ExperimentConfig,
    Report,
    load_config,
    parse_config,
    run_coverage,
    run_equivalence,
    run_experiment,
    run_rmse,
    run_width_scaling,
    write_outputs,
)
