"""Deterministic simulator for epoch-transition atomicity.

The package models fleets of components that each move from epoch e-1 to
epoch e through a multi-stage persistence pipeline, crash at adversarially
chosen instants, and are then classified on a three-point epoch lattice.
It provides the simulation kernel, the lattice algebra with analytic and
Monte Carlo reliability models, naive and bilateral checkpoint protocols,
an adversarial schedule constructor, an epoch-tagged AdamW optimizer, a
retry-amplification model, and a fleet firmware deployment battery.
"""

from __future__ import annotations

from .adversary import (
    MixedWitness,
    SearchResult,
    StraddlingSchedule,
    WitnessFalsification,
    boundary_grid,
    construct_straddling,
    search_schedules,
    straddle_trial,
    witness_mixed,
)
from .deploy import (
    CollectiveInstance,
    CollectiveSpec,
    DecisionRegister,
    DeployCase,
    DeployReport,
    FencePolicy,
    FirmwareEpoch,
    FirmwareNode,
    deploy_candidates,
    detect_mixed,
    directed_straddle_case,
    random_deploy_case,
    run_case_consensus,
    run_case_naive,
    run_consensus_deploy,
    run_naive_deploy,
)
from .kernel import (
    AdversarialSchedule,
    Component,
    ConfigError,
    DelayPolicy,
    Event,
    EventKind,
    FixedDelay,
    SchedulePastError,
    SimConfig,
    Simulation,
    SimulationError,
    StepLimitExceeded,
    Trace,
    TraceRecord,
    UniformDelay,
    digest64,
    new_simulation,
)
from .lattice import (
    AtomicityClass,
    BinaryModelParams,
    EpochSymbol,
    EpochVector,
    LatticeError,
    MonteCarloResult,
    ReliabilityRow,
    TernaryBounds,
    TernaryModelParams,
    classify,
    join,
    meet,
    monte_carlo_atomicity,
    pr_atomic_binary,
    pr_atomic_ternary,
    pr_mixed_analytic,
    reliability_row,
    reliability_table,
)
from .optimizer import (
    AdamWHyperparams,
    DivergenceSeries,
    EpochTags,
    EpochTypedOptimizerState,
    QuadraticTask,
    StepMode,
    TypeViolationError,
    ValidationResult,
    adamw_step,
    default_validation_threshold,
    initial_state,
    make_skew_pair,
    moment_skew,
    run_trajectory,
    skew_consistency_check,
    trajectory_divergence,
    validation_checkpoint,
)
from .persistence import (
    ComponentEpochState,
    CrashRecord,
    DurabilityMap,
    DEFAULT_DURABILITY,
    OutcomeKind,
    PersistenceProcess,
    PersistenceStage,
    ProtocolViolation,
    ack_digest,
    crash_outcome,
)
from .protocols import (
    BilateralConfig,
    ClassTallies,
    ComparisonReport,
    Decision,
    DecisionRecord,
    NaiveCheckpointConfig,
    ProtocolOutcome,
    RetryModel,
    RetryStats,
    RetrySummary,
    bernoulli_attempt,
    compare_protocols,
    conv_holds,
    crash_schedule,
    derive_seed,
    geometric_baseline,
    retry_sweep,
    run_bilateral,
    run_naive,
    run_retry_loop,
    simulated_bilateral_attempt,
    snap_holds,
)

__version__ = "0.1.0"

__all__ = [
    "AdamWHyperparams",
    "AdversarialSchedule",
    "AtomicityClass",
    "BilateralConfig",
    "BinaryModelParams",
    "ClassTallies",
    "CollectiveInstance",
    "CollectiveSpec",
    "ComparisonReport",
    "Component",
    "ComponentEpochState",
    "ConfigError",
    "CrashRecord",
    "Decision",
    "DecisionRecord",
    "DecisionRegister",
    "DeployCase",
    "DeployReport",
    "DelayPolicy",
    "DivergenceSeries",
    "DurabilityMap",
    "DEFAULT_DURABILITY",
    "EpochSymbol",
    "EpochTags",
    "EpochTypedOptimizerState",
    "EpochVector",
    "Event",
    "EventKind",
    "FencePolicy",
    "FirmwareEpoch",
    "FirmwareNode",
    "FixedDelay",
    "LatticeError",
    "MixedWitness",
    "MonteCarloResult",
    "NaiveCheckpointConfig",
    "OutcomeKind",
    "PersistenceProcess",
    "PersistenceStage",
    "ProtocolOutcome",
    "ProtocolViolation",
    "QuadraticTask",
    "ReliabilityRow",
    "RetryModel",
    "RetryStats",
    "RetrySummary",
    "SchedulePastError",
    "SearchResult",
    "SimConfig",
    "Simulation",
    "SimulationError",
    "StepLimitExceeded",
    "StepMode",
    "StraddlingSchedule",
    "TernaryBounds",
    "TernaryModelParams",
    "Trace",
    "TraceRecord",
    "TypeViolationError",
    "UniformDelay",
    "ValidationResult",
    "WitnessFalsification",
    "ack_digest",
    "adamw_step",
    "bernoulli_attempt",
    "boundary_grid",
    "classify",
    "compare_protocols",
    "construct_straddling",
    "conv_holds",
    "crash_outcome",
    "crash_schedule",
    "default_validation_threshold",
    "deploy_candidates",
    "derive_seed",
    "detect_mixed",
    "digest64",
    "directed_straddle_case",
    "geometric_baseline",
    "initial_state",
    "join",
    "make_skew_pair",
    "meet",
    "moment_skew",
    "monte_carlo_atomicity",
    "new_simulation",
    "pr_atomic_binary",
    "pr_atomic_ternary",
    "pr_mixed_analytic",
    "random_deploy_case",
    "reliability_row",
    "reliability_table",
    "retry_sweep",
    "run_bilateral",
    "run_case_consensus",
    "run_case_naive",
    "run_consensus_deploy",
    "run_naive",
    "run_naive_deploy",
    "run_retry_loop",
    "run_trajectory",
    "search_schedules",
    "simulated_bilateral_attempt",
    "skew_consistency_check",
    "snap_holds",
    "straddle_trial",
    "trajectory_divergence",
    "validation_checkpoint",
    "witness_mixed",
]
