"""Queue-length estimation at fixed-time signals from connected vehicles.

A simulation and estimation toolkit for the end-of-red queue at a fixed-time
signalized intersection observed through connected vehicles (CVs), optionally
equipped with range sensors that reveal the single vehicle behind the last CV.

Layers:

* :mod:`cvqueue.core` — domain types and plain-text configuration.
* :mod:`cvqueue.sim` — seeded Monte Carlo point-queue simulator.
* :mod:`cvqueue.analytic` — exact and approximate closed forms, no overflow.
* :mod:`cvqueue.overflow` — overflow-queue approximations and composites.
* :mod:`cvqueue.estimators` — per-cycle estimators, known and unknown params.
* :mod:`cvqueue.oracle` — independent verification oracles.
* :mod:`cvqueue.harness` — sweeps, figure data, acceptance checks.
* :mod:`cvqueue.cli` — ``cvqueue`` command-line entry point.
"""

from .core import (
    ClampLog,
    ConfigError,
    CvObservation,
    CycleOutcome,
    ErrorSummary,
    EstimateResult,
    RunConfig,
    SCENARIOS,
    SignalDemandConfig,
    format_config_text,
    parse_config_text,
)
from .sim import (
    CarriedQueue,
    NoQBatch,
    SimRun,
    advance_overflow,
    observe,
    simulate_cycle,
    simulate_red_phases,
    substream_rng,
)
from .analytic import (
    ImprovementCurves,
    NoOverflowMoments,
    cdf_t,
    density_t,
    expected_l,
    expected_l_prime,
    expected_t,
    expected_t_prime,
    improvement_curves,
    no_overflow_moments,
    prob_no_cv,
    prob_not_last,
    variance_d_no_overflow,
)
from .overflow import (
    DivergenceError,
    OverflowModel,
    RHO_CAP,
    ScenarioProbs,
    approx_expected_n,
    approx_variance_d,
    scenario_probs,
    steady_expected_n,
)
from .estimators import (
    ParamEstimates,
    ParamHistory,
    estimate_no_q,
    estimate_params,
    estimate_unknown_params,
    estimate_unknown_with_q,
    estimate_with_q,
)
from .oracle import OracleReport, mc_conditional_oracle, quadrature_oracle, run_oracle
from .harness import (
    DEFAULT_SEED,
    ExperimentSpec,
    SweepResult,
    TrackingResult,
    Verdict,
    emit_figure_data,
    r2_through_origin,
    run_acceptance,
    run_sweep,
    run_tracking,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # core
    "ClampLog",
    "ConfigError",
    "CvObservation",
    "CycleOutcome",
    "ErrorSummary",
    "EstimateResult",
    "RunConfig",
    "SCENARIOS",
    "SignalDemandConfig",
    "format_config_text",
    "parse_config_text",
    # sim
    "CarriedQueue",
    "NoQBatch",
    "SimRun",
    "advance_overflow",
    "observe",
    "simulate_cycle",
    "simulate_red_phases",
    "substream_rng",
    # analytic
    "ImprovementCurves",
    "NoOverflowMoments",
    "cdf_t",
    "density_t",
    "expected_l",
    "expected_l_prime",
    "expected_t",
    "expected_t_prime",
    "improvement_curves",
    "no_overflow_moments",
    "prob_no_cv",
    "prob_not_last",
    "variance_d_no_overflow",
    # overflow
    "DivergenceError",
    "OverflowModel",
    "RHO_CAP",
    "ScenarioProbs",
    "approx_expected_n",
    "approx_variance_d",
    "scenario_probs",
    "steady_expected_n",
    # estimators
    "ParamEstimates",
    "ParamHistory",
    "estimate_no_q",
    "estimate_params",
    "estimate_unknown_params",
    "estimate_unknown_with_q",
    "estimate_with_q",
    # oracle
    "OracleReport",
    "mc_conditional_oracle",
    "quadrature_oracle",
    "run_oracle",
    # harness
    "DEFAULT_SEED",
    "ExperimentSpec",
    "SweepResult",
    "TrackingResult",
    "Verdict",
    "emit_figure_data",
    "r2_through_origin",
    "run_acceptance",
    "run_sweep",
    "run_tracking",
]
