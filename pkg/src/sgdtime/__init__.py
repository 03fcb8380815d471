"""Deterministic simulation and runtime analysis for distributed SGD."""

from .problem import ChainQuadratic, solve_tridiagonal
from .time_models import (
    ChiSquareDelay,
    ConstantDelay,
    ExponentialDelay,
    FixedTimes,
    GammaDelay,
    ParticipationSchedule,
    PowerProfile,
    PowerProfiles,
    RandomDelays,
    ShiftedExponentialDelay,
    StallError,
    TruncatedNormalDelay,
    UniformDelay,
    chaotic_profiles,
    estimate_tail_scale,
    load_profiles_csv,
    participation_profiles,
    periodic_profiles,
    save_profiles_csv,
    speedup_switch_profiles,
)
from .simulator import ALGORITHMS, SimConfig, Trajectory, run
from .analyzer import (
    BoundSequences,
    ComplexityReport,
    RateConstants,
    best_group_size,
    bound_sequences,
    complexity_report,
    group_cost,
    group_pace,
    ideal_runtime,
    iteration_count,
    log_gap_certificate,
    lower_bound_sequence,
    participation_runtime_bound,
    power_law_group_size,
    random_delay_runtime_bound,
    sync_runtime,
    upper_bound_sequence,
)
from .harness import (
    ExperimentSpec,
    GapStudy,
    SweepResult,
    emit_report,
    gap_table,
    load_spec,
    run_gap_study,
    run_sweep,
    spec_from_dict,
)

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS",
    "BoundSequences",
    "ChainQuadratic",
    "ChiSquareDelay",
    "ComplexityReport",
    "ConstantDelay",
    "ExperimentSpec",
    "ExponentialDelay",
    "FixedTimes",
    "GammaDelay",
    "GapStudy",
    "ParticipationSchedule",
    "PowerProfile",
    "PowerProfiles",
    "RandomDelays",
    "RateConstants",
    "ShiftedExponentialDelay",
    "SimConfig",
    "StallError",
    "SweepResult",
    "Trajectory",
    "TruncatedNormalDelay",
    "UniformDelay",
    "best_group_size",
    "bound_sequences",
    "chaotic_profiles",
    "complexity_report",
    "emit_report",
    "estimate_tail_scale",
    "gap_table",
    "group_cost",
    "group_pace",
    "ideal_runtime",
    "iteration_count",
    "load_profiles_csv",
    "load_spec",
    "log_gap_certificate",
    "lower_bound_sequence",
    "participation_profiles",
    "participation_runtime_bound",
    "periodic_profiles",
    "power_law_group_size",
    "random_delay_runtime_bound",
    "run",
    "run_gap_study",
    "run_sweep",
    "save_profiles_csv",
    "solve_tridiagonal",
    "spec_from_dict",
    "speedup_switch_profiles",
    "sync_runtime",
    "upper_bound_sequence",
    "__version__",
]
