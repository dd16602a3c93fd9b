"""GhostRNN kit - ghost-state GRU cells, parameter accounting and redundancy analysis."""

from ghostrnn.errors import (
    ErrorType,
    GhostRNNError,
    ShapeError,
    ConfigError,
    NonFiniteError,
    DivergenceError,
    CheckpointError,
    exit_code_for,
    cli_errors,
)

from ghostrnn.cells import (
    CellKind,
    Activation,
    CheapOp,
    GruParams,
    GhostParams,
    CellState,
    init_cell,
    gru_step,
    ghost_step,
    run_sequence,
)

from ghostrnn.backprop import forward_with_tape, bptt, grad_check

from ghostrnn.complexity import (
    param_count_gru,
    param_count_phi,
    param_count_ghost,
    count_report,
    matched_gru_state_dim,
)

from ghostrnn.config import TrainConfig

from ghostrnn.logging import MetricsLogger, setup_logging

__all__ = [
    # Error handling
    "ErrorType",
    "GhostRNNError",
    "ShapeError",
    "ConfigError",
    "NonFiniteError",
    "DivergenceError",
    "CheckpointError",
    "exit_code_for",
    "cli_errors",
    # Cells
    "CellKind",
    "Activation",
    "CheapOp",
    "GruParams",
    "GhostParams",
    "CellState",
    "init_cell",
    "gru_step",
    "ghost_step",
    "run_sequence",
    # Gradients
    "forward_with_tape",
    "bptt",
    "grad_check",
    # Accounting
    "param_count_gru",
    "param_count_phi",
    "param_count_ghost",
    "count_report",
    "matched_gru_state_dim",
    # Configuration and logging
    "TrainConfig",
    "MetricsLogger",
    "setup_logging",
]
