"""Backpropagation through time for the GRU and GhostRNN cells.

The reverse pass is derived by hand from the step equations in
``ghostrnn.cells``; the GhostRNN path carries gradients from g_t back
through phi into h_t, and from the next step's use of g_{t-1}.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ghostrnn.cells import (
    CellParams,
    CellState,
    GhostParams,
    GruParams,
    StepCache,
    activation_derivative,
    as_sequence,
    initial_state,
    run_sequence,
    step_cached,
    with_tensors,
)
from ghostrnn.errors import GhostRNNError


logger = logging.getLogger("ghostrnn.backprop")

LossFn = Callable[[np.ndarray], Tuple[float, np.ndarray]]

EPS_RANGE = (1e-7, 1e-3)
REL_ERROR_FLOOR = 1e-12
# loss rounding budget, in ulps of the loss, for central differences
ROUNDING_ULPS = 64


@dataclass
class Tape:
    """Per-step activations recorded by ``forward_with_tape``.

    ``derived_g0`` is set when the initial ghost state was computed as
    phi(h0) inside the forward pass rather than supplied by the caller.
    """
    steps: List[StepCache] = field(default_factory=list)
    derived_g0: bool = False

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(eq=False)
class Gradients:
    """Gradient of a scalar loss for every tensor of a cell bundle."""
    tensors: Dict[str, np.ndarray]
    d_h0: np.ndarray
    d_g0: np.ndarray

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]


def _outer(delta: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    """delta inputs^T summed over the batch axis, if any."""
    if delta.ndim == 1:
        return np.outer(delta, inputs)
    return delta.T @ inputs


def _rowsum(delta: np.ndarray) -> np.ndarray:
    return delta if delta.ndim == 1 else delta.sum(axis=0)


def full_states(states: Sequence[CellState]) -> np.ndarray:
    """Stack [h g] of every step into a (T, ..., m) array."""
    return np.stack([s.full() for s in states])


def forward_with_tape(
    cell: CellParams,
    xs: Union[np.ndarray, Sequence[np.ndarray]],
    s0: Optional[CellState] = None,
) -> Tuple[List[CellState], Tape]:
    """Run the cell like ``run_sequence`` and record the tape.

    ``xs`` is (T, feature_dim) for one sequence or (T, batch, feature_dim)
    for a batch of equal-length sequences.
    """
    sequence = as_sequence(xs)
    derived = s0 is None
    if s0 is None:
        s0 = initial_state(cell, batch=sequence.shape[1] if sequence.ndim == 3 else None)
    tape = Tape(derived_g0=derived and isinstance(cell, GhostParams))
    states: List[CellState] = []
    state = s0
    for x in sequence:
        cache = step_cached(cell, x, state)
        tape.steps.append(cache)
        state = CellState(cache.h, cache.g)
        states.append(state)
    return states, tape


def bptt(cell: CellParams, tape: Tape, d_states: Union[np.ndarray, Sequence[np.ndarray]]) -> Gradients:
    """Exact gradients of the loss given dL/d(state_t) for every step.

    ``d_states[t]`` has the full-state width ([h g] for GhostRNN); zero
    rows are allowed for steps that carry no loss. Gradients are summed
    over the batch axis when the tape holds a batch.
    """
    if len(tape) == 0:
        raise GhostRNNError.shape_mismatch("tape is empty")
    d = np.asarray(d_states, dtype=np.float64)
    if d.shape[0] != len(tape):
        raise GhostRNNError.shape_mismatch(
            f"d_states length {d.shape[0]} does not match tape length {len(tape)}"
        )
    expected = tape.steps[0].h.shape[:-1] + (cell.full_dim,)
    if d.shape[1:] != expected:
        raise GhostRNNError.shape_mismatch(
            f"d_states entries must have shape {expected}, got {d.shape[1:]}"
        )

    ghost = isinstance(cell, GhostParams)
    k = cell.intrinsic_dim if ghost else cell.state_dim
    params = cell.tensors()
    grads = {name: np.zeros_like(value) for name, value in params.items()}

    last = tape.steps[-1]
    dh_next = np.zeros_like(last.h)
    dg_next = np.zeros_like(last.g)

    for t in range(len(tape) - 1, -1, -1):
        step = tape.steps[t]
        dh = d[t][..., :k] + dh_next
        if ghost:
            dg = d[t][..., k:] + dg_next
            da_phi = dg * activation_derivative(cell.phi.activation, step.g)
            grads["W_phi"] += _outer(da_phi, step.h)
            grads["b_phi"] += _rowsum(da_phi)
            dh = dh + da_phi @ params["W_phi"]

        # h = (1 - z) * c + z * h_prev
        dc = dh * (1.0 - step.z)
        dz = dh * (step.h_prev - step.c)
        dh_prev = dh * step.z

        # c = tanh(W_ic x + b_ic + r * n [+ W_gc g_prev + b_gc])
        da_c = dc * (1.0 - step.c * step.c)
        grads["W_ic"] += _outer(da_c, step.x)
        grads["b_ic"] += _rowsum(da_c)
        dr = da_c * step.n
        dn = da_c * step.r
        grads["W_hc"] += _outer(dn, step.h_prev)
        grads["b_hc"] += _rowsum(dn)
        dh_prev = dh_prev + dn @ params["W_hc"]
        if ghost:
            grads["W_gc"] += _outer(da_c, step.g_prev)
            grads["b_gc"] += _rowsum(da_c)
            dg_prev = da_c @ params["W_gc"]

        # gates read [h_prev g_prev]
        da_r = dr * step.r * (1.0 - step.r)
        da_z = dz * step.z * (1.0 - step.z)
        grads["W_ir"] += _outer(da_r, step.x)
        grads["b_ir"] += _rowsum(da_r)
        grads["W_hr"] += _outer(da_r, step.hg_prev)
        grads["b_hr"] += _rowsum(da_r)
        grads["W_iz"] += _outer(da_z, step.x)
        grads["b_iz"] += _rowsum(da_z)
        grads["W_hz"] += _outer(da_z, step.hg_prev)
        grads["b_hz"] += _rowsum(da_z)
        dhg = da_r @ params["W_hr"] + da_z @ params["W_hz"]

        dh_prev = dh_prev + dhg[..., :k]
        dh_next = dh_prev
        if ghost:
            dg_next = dg_prev + dhg[..., k:]

    d_g0 = dg_next
    d_h0 = dh_next
    if tape.derived_g0:
        # g0 = phi(h0) was computed from the parameters
        first = tape.steps[0]
        da0 = d_g0 * activation_derivative(cell.phi.activation, first.g_prev)
        grads["W_phi"] += _outer(da0, first.h_prev)
        grads["b_phi"] += _rowsum(da0)
        d_h0 = d_h0 + da0 @ params["W_phi"]

    return Gradients(grads, d_h0, d_g0)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def mse_loss(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean squared error and its gradient 2 (pred - target) / len."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 1:
        raise GhostRNNError.shape_mismatch(
            f"mse_loss needs equal-length vectors, got {pred.shape} and {target.shape}"
        )
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.shape[0]


def cross_entropy_loss(logits: np.ndarray, cls: int) -> Tuple[float, np.ndarray]:
    """-log softmax(logits)[cls] and its gradient softmax - onehot."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise GhostRNNError.shape_mismatch(f"logits must be a vector, got shape {logits.shape}")
    if not 0 <= cls < logits.shape[0]:
        raise GhostRNNError.invalid_config(
            f"class index {cls} out of range for {logits.shape[0]} logits"
        )
    shifted = logits - np.max(logits)
    exp = np.exp(shifted)
    total = float(np.sum(exp))
    loss = float(np.log(total) - shifted[cls])
    grad = exp / total
    grad[cls] -= 1.0
    return loss, grad


def final_state_mse(target: np.ndarray) -> LossFn:
    """Loss on the last state only: mse_loss(state_T, target)."""
    target = np.asarray(target, dtype=np.float64)

    def loss(states: np.ndarray) -> Tuple[float, np.ndarray]:
        value, grad = mse_loss(states[-1], target)
        d = np.zeros_like(states)
        d[-1] = grad
        return value, d
    return loss


def final_state_cross_entropy(cls: int) -> LossFn:
    """Cross-entropy with the last state used as logits."""
    def loss(states: np.ndarray) -> Tuple[float, np.ndarray]:
        value, grad = cross_entropy_loss(states[-1], cls)
        d = np.zeros_like(states)
        d[-1] = grad
        return value, d
    return loss


def quadratic_loss(weights: np.ndarray, offsets: Optional[np.ndarray] = None) -> LossFn:
    """0.5 * sum_t sum_i w[t, i] (s[t, i] - o[t, i])^2 over all steps."""
    weights = np.asarray(weights, dtype=np.float64)

    def loss(states: np.ndarray) -> Tuple[float, np.ndarray]:
        diff = states if offsets is None else states - offsets
        return float(0.5 * np.sum(weights * diff * diff)), weights * diff
    return loss


# ---------------------------------------------------------------------------
# Gradient check
# ---------------------------------------------------------------------------

def _sequence_loss(cell: CellParams, xs: np.ndarray, loss: LossFn, s0: Optional[CellState]) -> float:
    states, _ = run_sequence(cell, xs, s0)
    value, _ = loss(full_states(states))
    if not np.isfinite(value):
        raise GhostRNNError.non_finite(f"loss is not finite: {value}")
    return value


def grad_check(
    cell: CellParams,
    xs: Union[np.ndarray, Sequence[np.ndarray]],
    loss: LossFn,
    eps: float = 1e-5,
    s0: Optional[CellState] = None,
    enforce_eps_range: bool = True,
) -> float:
    """Largest relative gap between BPTT and central differences.

    Every parameter entry is perturbed by +/-eps. A difference quotient
    carries rounding noise of about ``ROUNDING_ULPS * ulp(loss) / eps``, so
    that much absolute disagreement is forgiven before the gap is taken:

        gap = max(0, |analytic - numeric| - noise) / max(|analytic|, |numeric|, 1e-12)

    Truncation error (order eps**2) is not forgiven, so a coarse eps shows
    up as a large gap.

    Raises:
        ConfigError: If eps is outside [1e-7, 1e-3] and the range is enforced.
        NonFiniteError: If the loss evaluates to NaN or inf.
    """
    lo, hi = EPS_RANGE
    if enforce_eps_range and not lo <= eps <= hi:
        raise GhostRNNError.invalid_config(f"eps must be in [{lo}, {hi}], got {eps}")
    sequence = as_sequence(xs)

    states, tape = forward_with_tape(cell, sequence, s0)
    value, d_states = loss(full_states(states))
    if not np.isfinite(value):
        raise GhostRNNError.non_finite(f"loss is not finite: {value}")
    analytic = bptt(cell, tape, d_states)

    base = {name: tensor.copy() for name, tensor in cell.tensors().items()}
    worst = 0.0
    for name, tensor in base.items():
        for index in np.ndindex(tensor.shape):
            original = tensor[index]
            tensor[index] = original + eps
            plus = _sequence_loss(with_tensors(cell, base), sequence, loss, s0)
            tensor[index] = original - eps
            minus = _sequence_loss(with_tensors(cell, base), sequence, loss, s0)
            tensor[index] = original
            numeric = (plus - minus) / (2.0 * eps)
            noise = ROUNDING_ULPS * math.ulp(max(abs(value), abs(plus), abs(minus))) / eps
            a = float(analytic[name][index])
            excess = max(0.0, abs(a - numeric) - noise)
            gap = excess / max(abs(a), abs(numeric), REL_ERROR_FLOOR)
            if gap > worst:
                worst = gap
                logger.debug("grad_check worst so far: %s%s gap=%.3e", name, index, gap)
    return worst


__all__ = [
    "LossFn",
    "Tape",
    "Gradients",
    "full_states",
    "forward_with_tape",
    "bptt",
    "mse_loss",
    "cross_entropy_loss",
    "final_state_mse",
    "final_state_cross_entropy",
    "quadratic_loss",
    "grad_check",
]
