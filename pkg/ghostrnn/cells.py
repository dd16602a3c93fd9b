"""GRU and GhostRNN recurrent cells.

The GRU step:

    r_t = sigmoid(W_ir x_t + b_ir + W_hr h_{t-1} + b_hr)
    z_t = sigmoid(W_iz x_t + b_iz + W_hz h_{t-1} + b_hz)
    c_t = tanh(W_ic x_t + b_ic + r_t * (W_hc h_{t-1} + b_hc))
    h_t = (1 - z_t) * c_t + z_t * h_{t-1}

The GhostRNN step keeps only ``state_dim / r`` intrinsic units h and builds
the remaining ghost units g with a cheap map phi:

    r_t, z_t use W_h* [h_{t-1} g_{t-1}]
    c_t = tanh(W_ic x_t + b_ic + r_t * (W_hc h_{t-1} + b_hc) + W_gc g_{t-1} + b_gc)
    h_t = (1 - z_t) * c_t + z_t * h_{t-1}
    g_t = phi(h_t) = act(W_phi h_t + b_phi)

Every step function accepts either single vectors or ``(batch, dim)`` rows.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ghostrnn.errors import GhostRNNError
from ghostrnn.kernel import Xoshiro256StarStar, derive_seed, matvec
from ghostrnn.models import FeatureMap


class CellKind(str, Enum):
    GRU = "gru"
    GHOST = "ghost"


class Activation(str, Enum):
    """Activation applied by the cheap operation."""
    TANH = "tanh"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"


def sigmoid(a: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * a))


_ACTIVATIONS: Dict[Activation, Callable[[np.ndarray], np.ndarray]] = {
    Activation.TANH: np.tanh,
    Activation.SIGMOID: sigmoid,
    Activation.IDENTITY: lambda a: a.copy(),
}


def activation_derivative(activation: Activation, out: np.ndarray) -> np.ndarray:
    """d act / d a expressed through the activation output."""
    if activation is Activation.TANH:
        return 1.0 - out * out
    if activation is Activation.SIGMOID:
        return out * (1.0 - out)
    return np.ones_like(out)


def _require_matrix(name: str, value: np.ndarray, rows: int, cols: int) -> None:
    if value.ndim != 2 or value.shape != (rows, cols):
        raise GhostRNNError.shape_mismatch(
            f"{name} must have shape ({rows}, {cols}), got {value.shape}"
        )


def _require_vector(name: str, value: np.ndarray, length: int) -> None:
    if value.ndim != 1 or value.shape[0] != length:
        raise GhostRNNError.shape_mismatch(
            f"{name} must have length {length}, got shape {value.shape}"
        )


def _require_rows(name: str, value: np.ndarray, length: int) -> None:
    if value.ndim not in (1, 2) or value.shape[-1] != length:
        raise GhostRNNError.shape_mismatch(
            f"{name} must have trailing dimension {length}, got shape {value.shape}"
        )


# ---------------------------------------------------------------------------
# Parameter bundles
# ---------------------------------------------------------------------------

GRU_TENSOR_ORDER = (
    "W_ir", "W_iz", "W_ic", "W_hr", "W_hz", "W_hc",
    "b_ir", "b_iz", "b_ic", "b_hr", "b_hz", "b_hc",
)
GHOST_TENSOR_ORDER = GRU_TENSOR_ORDER + ("W_gc", "b_gc", "W_phi", "b_phi")


def _init_tensors(shapes: Dict[str, Tuple[int, ...]], order: Sequence[str], seed: int) -> Dict[str, np.ndarray]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.

    Tensor i of ``order`` draws from its own stream seeded with
    ``derive_seed(seed, i)``.
    """
    tensors: Dict[str, np.ndarray] = {}
    for index, name in enumerate(order):
        shape = shapes[name]
        if name.startswith("b_") or 0 in shape:
            tensors[name] = np.zeros(shape)
            continue
        bound = 1.0 / np.sqrt(shape[1])
        rng = Xoshiro256StarStar(derive_seed(seed, index))
        tensors[name] = rng.uniform_array(-bound, bound, shape)
    return tensors


@dataclass(frozen=True, eq=False)
class CheapOp:
    """Cheap map phi producing ghost states from intrinsic states."""
    W_phi: np.ndarray
    b_phi: np.ndarray
    activation: Activation = Activation.TANH

    def __post_init__(self):
        if self.W_phi.ndim != 2:
            raise GhostRNNError.shape_mismatch(f"W_phi must be a matrix, got shape {self.W_phi.shape}")
        _require_vector("b_phi", self.b_phi, self.W_phi.shape[0])
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def ghost_dim(self) -> int:
        return self.W_phi.shape[0]

    @property
    def intrinsic_dim(self) -> int:
        return self.W_phi.shape[1]


def cheap_apply(phi: CheapOp, h: np.ndarray) -> np.ndarray:
    """g = activation(W_phi h + b_phi)."""
    _require_rows("h", h, phi.intrinsic_dim)
    return _ACTIVATIONS[phi.activation](matvec(phi.W_phi, h) + phi.b_phi)


@dataclass(frozen=True, eq=False)
class GruParams:
    """Weights and biases of a plain GRU cell."""
    W_ir: np.ndarray
    W_iz: np.ndarray
    W_ic: np.ndarray
    W_hr: np.ndarray
    W_hz: np.ndarray
    W_hc: np.ndarray
    b_ir: np.ndarray
    b_iz: np.ndarray
    b_ic: np.ndarray
    b_hr: np.ndarray
    b_hz: np.ndarray
    b_hc: np.ndarray

    kind = CellKind.GRU

    def __post_init__(self):
        if self.W_ir.ndim != 2:
            raise GhostRNNError.shape_mismatch(f"W_ir must be a matrix, got shape {self.W_ir.shape}")
        s, f = self.W_ir.shape
        for name in ("W_ir", "W_iz", "W_ic"):
            _require_matrix(name, getattr(self, name), s, f)
        for name in ("W_hr", "W_hz", "W_hc"):
            _require_matrix(name, getattr(self, name), s, s)
        for name in ("b_ir", "b_iz", "b_ic", "b_hr", "b_hz", "b_hc"):
            _require_vector(name, getattr(self, name), s)

    @property
    def feature_dim(self) -> int:
        return self.W_ir.shape[1]

    @property
    def state_dim(self) -> int:
        return self.W_ir.shape[0]

    @property
    def full_dim(self) -> int:
        return self.state_dim

    @property
    def ratio(self) -> int:
        return 1

    def tensors(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in GRU_TENSOR_ORDER}

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray]) -> "GruParams":
        missing = [n for n in GRU_TENSOR_ORDER if n not in tensors]
        if missing:
            raise GhostRNNError.shape_mismatch(f"GRU tensors missing: {', '.join(missing)}")
        return cls(**{n: np.asarray(tensors[n], dtype=np.float64) for n in GRU_TENSOR_ORDER})

    @classmethod
    def init(cls, feature_dim: int, state_dim: int, seed: int) -> "GruParams":
        if feature_dim < 1 or state_dim < 1:
            raise GhostRNNError.invalid_config(
                f"dims must be >= 1, got feature_dim={feature_dim}, state_dim={state_dim}"
            )
        shapes = {}
        for name in GRU_TENSOR_ORDER:
            if name.startswith("b_"):
                shapes[name] = (state_dim,)
            elif name in ("W_ir", "W_iz", "W_ic"):
                shapes[name] = (state_dim, feature_dim)
            else:
                shapes[name] = (state_dim, state_dim)
        return cls.from_tensors(_init_tensors(shapes, GRU_TENSOR_ORDER, seed))


@dataclass(frozen=True, eq=False)
class GhostParams:
    """Weights of a GhostRNN cell; ``phi`` maps intrinsic to ghost states."""
    W_ir: np.ndarray
    W_iz: np.ndarray
    W_ic: np.ndarray
    W_hr: np.ndarray
    W_hz: np.ndarray
    W_hc: np.ndarray
    W_gc: np.ndarray
    b_ir: np.ndarray
    b_iz: np.ndarray
    b_ic: np.ndarray
    b_hr: np.ndarray
    b_hz: np.ndarray
    b_hc: np.ndarray
    b_gc: np.ndarray
    phi: CheapOp

    kind = CellKind.GHOST

    def __post_init__(self):
        if self.W_ir.ndim != 2:
            raise GhostRNNError.shape_mismatch(f"W_ir must be a matrix, got shape {self.W_ir.shape}")
        k, f = self.W_ir.shape
        ghost = self.phi.ghost_dim
        if self.phi.intrinsic_dim != k:
            raise GhostRNNError.shape_mismatch(
                f"W_phi must have {k} columns (intrinsic_dim), got {self.phi.intrinsic_dim}"
            )
        full = k + ghost
        if full % k != 0:
            raise GhostRNNError.invalid_config(
                f"full_dim {full} is not a multiple of intrinsic_dim {k}"
            )
        for name in ("W_ir", "W_iz", "W_ic"):
            _require_matrix(name, getattr(self, name), k, f)
        for name in ("W_hr", "W_hz"):
            _require_matrix(name, getattr(self, name), k, full)
        _require_matrix("W_hc", self.W_hc, k, k)
        _require_matrix("W_gc", self.W_gc, k, ghost)
        for name in ("b_ir", "b_iz", "b_ic", "b_hr", "b_hz", "b_hc", "b_gc"):
            _require_vector(name, getattr(self, name), k)

    @property
    def feature_dim(self) -> int:
        return self.W_ir.shape[1]

    @property
    def intrinsic_dim(self) -> int:
        return self.W_ir.shape[0]

    @property
    def ghost_dim(self) -> int:
        return self.phi.ghost_dim

    @property
    def full_dim(self) -> int:
        return self.intrinsic_dim + self.ghost_dim

    @property
    def state_dim(self) -> int:
        return self.full_dim

    @property
    def ratio(self) -> int:
        return self.full_dim // self.intrinsic_dim

    def tensors(self) -> Dict[str, np.ndarray]:
        tensors = {name: getattr(self, name) for name in GHOST_TENSOR_ORDER[:-2]}
        tensors["W_phi"] = self.phi.W_phi
        tensors["b_phi"] = self.phi.b_phi
        return tensors

    @classmethod
    def from_tensors(
        cls,
        tensors: Dict[str, np.ndarray],
        activation: Activation = Activation.TANH,
    ) -> "GhostParams":
        missing = [n for n in GHOST_TENSOR_ORDER if n not in tensors]
        if missing:
            raise GhostRNNError.shape_mismatch(f"GhostRNN tensors missing: {', '.join(missing)}")
        arrays = {n: np.asarray(tensors[n], dtype=np.float64) for n in GHOST_TENSOR_ORDER}
        phi = CheapOp(arrays.pop("W_phi"), arrays.pop("b_phi"), Activation(activation))
        return cls(**arrays, phi=phi)

    @classmethod
    def from_gru(cls, p: GruParams, activation: Activation = Activation.TANH) -> "GhostParams":
        """r = 1 GhostRNN carrying the weights of ``p``; it has no ghost units."""
        k = p.state_dim
        tensors = {name: value.copy() for name, value in p.tensors().items()}
        tensors["W_gc"] = np.zeros((k, 0))
        tensors["b_gc"] = np.zeros(k)
        tensors["W_phi"] = np.zeros((0, k))
        tensors["b_phi"] = np.zeros(0)
        return cls.from_tensors(tensors, activation)

    def to_gru(self) -> GruParams:
        """GRU with the same weights; only valid for r = 1."""
        if self.ghost_dim != 0:
            raise GhostRNNError.invalid_config(
                f"only an r=1 GhostRNN converts to a GRU, this one has ghost_dim {self.ghost_dim}"
            )
        return GruParams.from_tensors(self.tensors())

    @classmethod
    def init(
        cls,
        feature_dim: int,
        state_dim: int,
        r: int,
        seed: int,
        activation: Activation = Activation.TANH,
    ) -> "GhostParams":
        k = intrinsic_dim_for(state_dim, r)
        if feature_dim < 1:
            raise GhostRNNError.invalid_config(f"feature_dim must be >= 1, got {feature_dim}")
        ghost = state_dim - k
        shapes: Dict[str, Tuple[int, ...]] = {
            "W_ir": (k, feature_dim), "W_iz": (k, feature_dim), "W_ic": (k, feature_dim),
            "W_hr": (k, state_dim), "W_hz": (k, state_dim), "W_hc": (k, k),
            "W_gc": (k, ghost), "W_phi": (ghost, k), "b_phi": (ghost,),
        }
        for name in ("b_ir", "b_iz", "b_ic", "b_hr", "b_hz", "b_hc", "b_gc"):
            shapes[name] = (k,)
        return cls.from_tensors(_init_tensors(shapes, GHOST_TENSOR_ORDER, seed), activation)


CellParams = Union[GruParams, GhostParams]


def intrinsic_dim_for(state_dim: int, r: int) -> int:
    """state_dim / r, rejecting ratios that do not divide the state size."""
    if r < 1:
        raise GhostRNNError.invalid_config(f"ratio must be >= 1, got {r}")
    if state_dim < 1:
        raise GhostRNNError.invalid_config(f"state-dim must be >= 1, got {state_dim}")
    if state_dim % r != 0:
        raise GhostRNNError.invalid_config(
            f"state-dim not divisible: {state_dim} is not a multiple of ratio {r}",
            state_dim=state_dim,
            ratio=r,
        )
    return state_dim // r


def with_tensors(cell: CellParams, tensors: Dict[str, np.ndarray]) -> CellParams:
    """Rebuild a bundle of the same kind from named tensors."""
    if isinstance(cell, GhostParams):
        return GhostParams.from_tensors(tensors, cell.phi.activation)
    return GruParams.from_tensors(tensors)


def init_cell(
    kind: CellKind,
    feature_dim: int,
    state_dim: int,
    r: int,
    seed: int,
    activation: Activation = Activation.TANH,
) -> CellParams:
    kind = CellKind(kind)
    if kind is CellKind.GRU:
        return GruParams.init(feature_dim, state_dim, seed)
    return GhostParams.init(feature_dim, state_dim, r, seed, activation)


# ---------------------------------------------------------------------------
# Steps
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CellState:
    """Intrinsic states h and ghost states g (empty for a GRU)."""
    h: np.ndarray
    g: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def full(self) -> np.ndarray:
        """The concatenation [h g]."""
        if self.g.shape[-1] == 0:
            return self.h
        return np.concatenate([self.h, self.g], axis=-1)


@dataclass(frozen=True, eq=False)
class StepCache:
    """Activations of one step, kept for the backward pass."""
    x: np.ndarray
    h_prev: np.ndarray
    g_prev: np.ndarray
    hg_prev: np.ndarray
    r: np.ndarray
    z: np.ndarray
    n: np.ndarray
    c: np.ndarray
    h: np.ndarray
    g: np.ndarray


def gru_step_cached(p: GruParams, x: np.ndarray, h_prev: np.ndarray) -> StepCache:
    _require_rows("x", x, p.feature_dim)
    _require_rows("h_prev", h_prev, p.state_dim)
    r = sigmoid(matvec(p.W_ir, x) + p.b_ir + matvec(p.W_hr, h_prev) + p.b_hr)
    z = sigmoid(matvec(p.W_iz, x) + p.b_iz + matvec(p.W_hz, h_prev) + p.b_hz)
    n = matvec(p.W_hc, h_prev) + p.b_hc
    c = np.tanh(matvec(p.W_ic, x) + p.b_ic + r * n)
    h = (1.0 - z) * c + z * h_prev
    empty = np.zeros(h.shape[:-1] + (0,))
    return StepCache(x, h_prev, empty, h_prev, r, z, n, c, h, empty)


def gru_step(p: GruParams, x: np.ndarray, h_prev: np.ndarray) -> np.ndarray:
    """One GRU step; returns h_t."""
    return gru_step_cached(p, x, h_prev).h


def ghost_step_cached(p: GhostParams, x: np.ndarray, s_prev: CellState) -> StepCache:
    _require_rows("x", x, p.feature_dim)
    _require_rows("h_prev", s_prev.h, p.intrinsic_dim)
    _require_rows("g_prev", s_prev.g, p.ghost_dim)
    h_prev, g_prev = s_prev.h, s_prev.g
    hg_prev = np.concatenate([h_prev, g_prev], axis=-1)
    r = sigmoid(matvec(p.W_ir, x) + p.b_ir + matvec(p.W_hr, hg_prev) + p.b_hr)
    z = sigmoid(matvec(p.W_iz, x) + p.b_iz + matvec(p.W_hz, hg_prev) + p.b_hz)
    n = matvec(p.W_hc, h_prev) + p.b_hc
    # the ghost term sits outside the reset-gate product
    c = np.tanh(matvec(p.W_ic, x) + p.b_ic + r * n + (matvec(p.W_gc, g_prev) + p.b_gc))
    h = (1.0 - z) * c + z * h_prev
    g = cheap_apply(p.phi, h)
    return StepCache(x, h_prev, g_prev, hg_prev, r, z, n, c, h, g)


def ghost_step(p: GhostParams, x: np.ndarray, s_prev: CellState) -> CellState:
    """One GhostRNN step; returns the new (h_t, g_t)."""
    cache = ghost_step_cached(p, x, s_prev)
    return CellState(cache.h, cache.g)


def step_cached(cell: CellParams, x: np.ndarray, state: CellState) -> StepCache:
    if isinstance(cell, GhostParams):
        return ghost_step_cached(cell, x, state)
    return gru_step_cached(cell, x, state.h)


def initial_state(cell: CellParams, batch: Optional[int] = None) -> CellState:
    """h0 = 0 and, for GhostRNN, g0 = phi(h0)."""
    shape = (cell.state_dim,) if isinstance(cell, GruParams) else (cell.intrinsic_dim,)
    if batch is not None:
        shape = (batch,) + shape
    h0 = np.zeros(shape)
    if isinstance(cell, GhostParams):
        return CellState(h0, cheap_apply(cell.phi, h0))
    return CellState(h0, np.zeros(shape[:-1] + (0,)))


def as_sequence(xs: Union[np.ndarray, Sequence[np.ndarray]]) -> np.ndarray:
    """Stack input vectors into a (T, ...) float64 array."""
    if isinstance(xs, np.ndarray):
        array = xs.astype(np.float64, copy=False)
    else:
        if len(xs) == 0:
            raise GhostRNNError.shape_mismatch("input sequence is empty")
        array = np.stack([np.asarray(x, dtype=np.float64) for x in xs])
    if array.ndim < 2 or array.shape[0] == 0:
        raise GhostRNNError.shape_mismatch(
            f"input sequence must be a non-empty (T, feature_dim) array, got shape {array.shape}"
        )
    return array


def run_sequence(
    cell: CellParams,
    xs: Union[np.ndarray, Sequence[np.ndarray]],
    s0: Optional[CellState] = None,
) -> Tuple[List[CellState], FeatureMap]:
    """Iterate the cell over ``xs``.

    Returns the state after every step and the m x n feature map whose
    column t is the full state [h g] after step t.
    """
    sequence = as_sequence(xs)
    if sequence.ndim != 2:
        raise GhostRNNError.shape_mismatch(
            f"run_sequence takes a single (T, feature_dim) sequence, got shape {sequence.shape}"
        )
    state = s0 if s0 is not None else initial_state(cell)
    states: List[CellState] = []
    for x in sequence:
        cache = step_cached(cell, x, state)
        state = CellState(cache.h, cache.g)
        states.append(state)
    columns = np.stack([s.full() for s in states], axis=1)
    return states, FeatureMap(columns)


__all__ = [
    "CellKind",
    "Activation",
    "sigmoid",
    "activation_derivative",
    "CheapOp",
    "GruParams",
    "GhostParams",
    "CellParams",
    "CellState",
    "StepCache",
    "intrinsic_dim_for",
    "init_cell",
    "with_tensors",
    "cheap_apply",
    "gru_step",
    "gru_step_cached",
    "ghost_step",
    "ghost_step_cached",
    "step_cached",
    "initial_state",
    "as_sequence",
    "run_sequence",
    "GRU_TENSOR_ORDER",
    "GHOST_TENSOR_ORDER",
]
