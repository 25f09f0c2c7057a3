"""Robust stabilization of a perturbed chemostat with bounded dilution.

The package is organized bottom-up: ``dynamics`` (integration and
disturbance plumbing), ``chemostat`` (plant model, log coordinates,
standing hypotheses), ``feedback`` (control laws and gain design),
``certify`` (Lyapunov constants and grid certificates), ``harness``
(Monte-Carlo suites and counterexamples), ``cli`` (config-driven entry
point). The names below are the supported surface; anything underscored
is internal.
"""

from .chemostat import (
    ChemostatScenario,
    ConfigError,
    GrowthModel,
    HypothesisError,
    S2Certificate,
    check_S2,
    from_transformed,
    growth_rate,
    load_scenario,
    mu_max,
    physical_rhs,
    scenario_from_dict,
    solve_equilibrium,
    to_transformed,
    transformed_rhs,
)
from .certify import (
    CertificateReport,
    ControlAffineSystem,
    RclfConstants,
    reach_time_bound,
    relaxed_band_constants,
    relaxed_growth_envelope,
    synthesize_rclf_constants,
    verify_rclf_derivative,
    verify_relaxed_clf_conditions,
    verify_relaxed_conditions,
)
from .dynamics import (
    CompactBox,
    DisturbanceSignal,
    Trajectory,
    constant_disturbance,
    first_entry_time,
    integrate_rk4,
    sample_disturbance,
    sat,
    trajectory_to_csv,
    write_trajectory_csv,
)
from .feedback import (
    BacksteppingStageTable,
    GainSelectionError,
    LSpec,
    PsiSpec,
    RclfFeedbackParams,
    SaturatedGains,
    TriangularSystemSpec,
    classical_feedback,
    compute_backstepping_gains,
    constrained_quadratic_feedback,
    patch_feedbacks,
    rclf_feedback,
    relaxed_feedback,
    saturated_backstepping,
)
from .harness import (
    ClosedLoop,
    EntryReport,
    SweepReport,
    UrgasConfig,
    UrgasReport,
    WashoutResult,
    classical_loop,
    rclf_loop,
    relaxed_loop,
    run_urgas_suite,
    simulate_closed_loop,
    uncertainty_sweep,
    validate_absorbing_entry,
    washout_counterexample,
)

__all__ = [
    "BacksteppingStageTable",
    "CertificateReport",
    "ChemostatScenario",
    "ClosedLoop",
    "CompactBox",
    "ConfigError",
    "ControlAffineSystem",
    "DisturbanceSignal",
    "EntryReport",
    "GainSelectionError",
    "GrowthModel",
    "HypothesisError",
    "LSpec",
    "PsiSpec",
    "RclfConstants",
    "RclfFeedbackParams",
    "S2Certificate",
    "SaturatedGains",
    "SweepReport",
    "Trajectory",
    "TriangularSystemSpec",
    "UrgasConfig",
    "UrgasReport",
    "WashoutResult",
    "check_S2",
    "classical_feedback",
    "classical_loop",
    "compute_backstepping_gains",
    "constant_disturbance",
    "constrained_quadratic_feedback",
    "first_entry_time",
    "from_transformed",
    "growth_rate",
    "integrate_rk4",
    "load_scenario",
    "mu_max",
    "patch_feedbacks",
    "physical_rhs",
    "rclf_feedback",
    "rclf_loop",
    "reach_time_bound",
    "relaxed_band_constants",
    "relaxed_feedback",
    "relaxed_growth_envelope",
    "relaxed_loop",
    "run_urgas_suite",
    "sample_disturbance",
    "sat",
    "saturated_backstepping",
    "scenario_from_dict",
    "simulate_closed_loop",
    "solve_equilibrium",
    "synthesize_rclf_constants",
    "to_transformed",
    "trajectory_to_csv",
    "transformed_rhs",
    "uncertainty_sweep",
    "validate_absorbing_entry",
    "verify_rclf_derivative",
    "verify_relaxed_clf_conditions",
    "verify_relaxed_conditions",
    "washout_counterexample",
    "write_trajectory_csv",
]
