"""Capacity-constrained scheduling of draft tokens for batched speculative decoding."""

from .accept_model import (
    AcceptanceMatrix,
    BetaSource,
    DegenerateResidualError,
    MatrixSource,
    MixSource,
    SurrogateConfig,
    TokenDistribution,
    emitted_law,
    implied_acceptance_prob,
    residual_distribution,
    sample_acceptance_matrix,
    surrogate_estimates,
    verify_token,
)
from .metrics import MetricsReport, build_report
from .selector import (
    Candidate,
    CapacityExceededError,
    OracleSizeExceededError,
    PolicyStats,
    Selection,
    cumulative_products,
    expected_accepted,
    select_dsd,
    select_fixed_window,
    select_oracle,
    select_tetris,
)
from .sim_engine import ConfigError, SimConfig, StepOutcome, run_simulation
from .trace_io import (
    ExperimentSpec,
    TraceSchemaError,
    load_experiment,
    read_trace,
    write_comparison_table,
    write_trace,
)

__version__ = "0.1.0"
