"""Parameter and multiply-accumulate accounting.

Closed forms (weights only, biases excluded):

    GRU      3 (feature + state) state
    phi      (state / r) (state - state / r)
    GhostRNN 3 (feature + state) (state / r) + phi

One MAC is counted per weight element per time step, so MACs per step
equal the weight count for both cells.
"""

import math
from typing import Optional

import numpy as np

from ghostrnn.cells import CellKind, CellParams, GhostParams, ghost_step, gru_step, initial_state
from ghostrnn.errors import GhostRNNError
from ghostrnn.kernel import MacCounter
from ghostrnn.models import CountReport


def _require_dims(feature_dim: int, state_dim: int) -> None:
    if feature_dim < 1 or state_dim < 1:
        raise GhostRNNError.invalid_config(
            f"dims must be >= 1, got feature_dim={feature_dim}, state_dim={state_dim}"
        )


def _intrinsic(state_dim: int, r: int) -> int:
    if r < 1:
        raise GhostRNNError.invalid_config(f"ratio must be >= 1, got {r}")
    if state_dim % r != 0:
        raise GhostRNNError.invalid_config(
            f"state-dim not divisible: {state_dim} is not a multiple of ratio {r}"
        )
    return state_dim // r


def param_count_gru(feature_dim: int, state_dim: int) -> int:
    _require_dims(feature_dim, state_dim)
    return 3 * (feature_dim + state_dim) * state_dim


def param_count_phi(state_dim: int, r: int) -> int:
    if state_dim < 1:
        raise GhostRNNError.invalid_config(f"state_dim must be >= 1, got {state_dim}")
    k = _intrinsic(state_dim, r)
    return k * (state_dim - k)


def param_count_ghost(feature_dim: int, state_dim: int, r: int) -> int:
    _require_dims(feature_dim, state_dim)
    k = _intrinsic(state_dim, r)
    return 3 * (feature_dim + state_dim) * k + param_count_phi(state_dim, r)


def bias_count(kind: CellKind, state_dim: int, r: int = 1) -> int:
    """Bias entries: six per state unit for a GRU; seven per intrinsic unit plus phi's for GhostRNN."""
    if CellKind(kind) is CellKind.GRU:
        return 6 * state_dim
    k = _intrinsic(state_dim, r)
    return 7 * k + (state_dim - k)


def macs_per_step(kind: CellKind, feature_dim: int, state_dim: int, r: int = 1) -> int:
    """Multiplies of one recurrent step, one per weight element."""
    if CellKind(kind) is CellKind.GRU:
        return param_count_gru(feature_dim, state_dim)
    return param_count_ghost(feature_dim, state_dim, r)


def matched_gru_state_dim(feature_dim: int, state_dim: int, r: int) -> int:
    """Largest GRU state size whose weight count does not exceed the GhostRNN's.

    This is the equal-budget baseline a GhostRNN is compared against.
    """
    budget = param_count_ghost(feature_dim, state_dim, r)
    # 3 s^2 + 3 f s - budget <= 0
    s = (math.isqrt(9 * feature_dim ** 2 + 12 * budget) - 3 * feature_dim) // 6
    while s > 1 and param_count_gru(feature_dim, s) > budget:
        s -= 1
    while param_count_gru(feature_dim, s + 1) <= budget:
        s += 1
    return max(s, 1)


def count_report(
    kind: CellKind,
    feature_dim: int,
    state_dim: int,
    r: int = 1,
    matched: bool = False,
) -> CountReport:
    """Weights, biases, MACs and compression against a same-size GRU."""
    kind = CellKind(kind)
    gru_weights = param_count_gru(feature_dim, state_dim)
    if kind is CellKind.GRU:
        weights = gru_weights
    else:
        weights = param_count_ghost(feature_dim, state_dim, r)
    report = CountReport(
        weights_only=weights,
        with_biases=weights + bias_count(kind, state_dim, r),
        macs_per_step=macs_per_step(kind, feature_dim, state_dim, r),
        compression_vs_gru=1.0 - weights / gru_weights,
    )
    if matched and kind is CellKind.GHOST:
        s = matched_gru_state_dim(feature_dim, state_dim, r)
        report.matched_gru_state_dim = s
        report.matched_gru_weights = param_count_gru(feature_dim, s)
    return report


def allocated_weights(cell: CellParams) -> int:
    """Element count of the weight matrices actually held by ``cell``."""
    return sum(int(t.size) for name, t in cell.tensors().items() if name.startswith("W_"))


def allocated_biases(cell: CellParams) -> int:
    return sum(int(t.size) for name, t in cell.tensors().items() if name.startswith("b_"))


def measured_macs_per_step(cell: CellParams, x: Optional[np.ndarray] = None) -> int:
    """Run one step under a ``MacCounter`` and return the multiplies it did."""
    if x is None:
        x = np.zeros(cell.feature_dim)
    state = initial_state(cell)
    with MacCounter.active() as counter:
        if isinstance(cell, GhostParams):
            ghost_step(cell, x, state)
        else:
            gru_step(cell, x, state.h)
    return counter.count


__all__ = [
    "param_count_gru",
    "param_count_phi",
    "param_count_ghost",
    "bias_count",
    "macs_per_step",
    "matched_gru_state_dim",
    "count_report",
    "allocated_weights",
    "allocated_biases",
    "measured_macs_per_step",
]
