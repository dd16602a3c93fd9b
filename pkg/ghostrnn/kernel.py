"""Dense linear algebra, singular values and seeded random numbers.

Matrices and vectors are float64 ``numpy.ndarray`` values. ``matvec`` also
accepts a batch of vectors stacked as rows, which is how the cells run
mini-batches through the same code path as single sequences.
"""

import contextlib
import contextvars
import logging
import math
from typing import Iterator, List, MutableSequence, Optional, TypeVar

import numpy as np

from ghostrnn.errors import GhostRNNError


logger = logging.getLogger("ghostrnn.kernel")

Matrix = np.ndarray
Vector = np.ndarray

_MASK64 = (1 << 64) - 1

# Off-diagonal Frobenius norm target, relative to the input's Frobenius norm
JACOBI_TOLERANCE = 1e-12
JACOBI_MAX_SWEEPS = 100


# ---------------------------------------------------------------------------
# Multiply counting
# ---------------------------------------------------------------------------

_mac_counter: contextvars.ContextVar[Optional["MacCounter"]] = contextvars.ContextVar(
    "ghostrnn_mac_counter", default=None
)


class MacCounter:
    """Counts scalar multiplies performed by ``matvec`` while active.

    Usage::

        with MacCounter.active() as counter:
            ghost_step(params, x, state)
        counter.count
    """

    def __init__(self) -> None:
        self.count = 0
        self.calls = 0

    def add(self, macs: int) -> None:
        self.count += macs
        self.calls += 1

    @classmethod
    @contextlib.contextmanager
    def active(cls) -> Iterator["MacCounter"]:
        counter = cls()
        token = _mac_counter.set(counter)
        try:
            yield counter
        finally:
            _mac_counter.reset(token)


# ---------------------------------------------------------------------------
# Dense operations
# ---------------------------------------------------------------------------

def check_finite(name: str, values: np.ndarray) -> None:
    """Raise ``NonFiniteError`` if ``values`` holds NaN or inf."""
    if not np.all(np.isfinite(values)):
        raise GhostRNNError.non_finite(f"{name} contains non-finite values", tensor=name)


def matvec(A: Matrix, x: np.ndarray) -> np.ndarray:
    """Compute y[i] = sum_j A[i, j] * x[j].

    ``x`` may be a single vector of length ``A.cols`` or a ``(batch, A.cols)``
    stack of vectors, in which case one output row is produced per input row.

    Raises:
        ShapeError: If the inner dimensions differ.
    """
    if A.ndim != 2 or x.ndim not in (1, 2) or x.shape[-1] != A.shape[1]:
        raise GhostRNNError.shape_mismatch(
            f"matvec dimension mismatch: matrix {A.shape} vs vector {x.shape}",
            matrix=list(A.shape),
            vector=list(x.shape),
        )
    counter = _mac_counter.get()
    if counter is not None:
        batch = 1 if x.ndim == 1 else x.shape[0]
        counter.add(A.shape[0] * A.shape[1] * batch)
    return x @ A.T


def _two_sided_jacobi(R: np.ndarray) -> np.ndarray:
    """Diagonalize a square matrix with paired left/right plane rotations.

    Each (p, q) step first rotates the 2x2 block to symmetric form, then
    applies a symmetric Jacobi rotation on both sides. Returns the diagonal.
    """
    A = R.copy()
    n = A.shape[0]
    if n == 1:
        return np.abs(np.diag(A))
    total = float(np.linalg.norm(A))
    if total == 0.0:
        return np.zeros(n)
    target = JACOBI_TOLERANCE * total

    for sweep in range(JACOBI_MAX_SWEEPS):
        off = float(np.linalg.norm(A - np.diag(np.diag(A))))
        if off <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                a, b = A[p, p], A[p, q]
                c, d = A[q, p], A[q, q]
                if b == 0.0 and c == 0.0:
                    continue
                # Rotation making the block symmetric
                theta = math.atan2(b - c, a + d)
                cs, sn = math.cos(theta), math.sin(theta)
                x = cs * a - sn * c
                y = cs * b - sn * d
                z = sn * b + cs * d
                # Symmetric Jacobi rotation for [[x, y], [y, z]]
                if y == 0.0:
                    cj, sj = 1.0, 0.0
                else:
                    zeta = (z - x) / (2.0 * y)
                    t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                    cj = 1.0 / math.sqrt(1.0 + t * t)
                    sj = cj * t
                # Left rotation L = G @ J, right rotation J
                l11 = cs * cj - sn * sj
                l12 = cs * sj + sn * cj
                l21 = -sn * cj - cs * sj
                l22 = -sn * sj + cs * cj
                row_p = A[p, :].copy()
                row_q = A[q, :].copy()
                A[p, :] = l11 * row_p + l21 * row_q
                A[q, :] = l12 * row_p + l22 * row_q
                col_p = A[:, p].copy()
                col_q = A[:, q].copy()
                A[:, p] = cj * col_p - sj * col_q
                A[:, q] = sj * col_p + cj * col_q
    else:
        logger.warning("Jacobi SVD hit %d sweeps without converging", JACOBI_MAX_SWEEPS)

    return np.abs(np.diag(A))


def singular_values(A: Matrix) -> Vector:
    """Singular values of ``A`` in descending order, length min(rows, cols).

    Rectangular inputs are first reduced to a square triangular factor by
    QR (singular values are unchanged), then diagonalized by two-sided
    Jacobi rotations.

    Raises:
        ShapeError: If ``A`` is not a non-empty 2-D matrix.
        NonFiniteError: If ``A`` has NaN or inf entries.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise GhostRNNError.shape_mismatch(
            f"singular_values needs a non-empty matrix, got shape {A.shape}"
        )
    check_finite("matrix", A)
    M = A if A.shape[0] >= A.shape[1] else A.T
    if M.shape[0] > M.shape[1]:
        M = np.linalg.qr(M, mode="r")
    sigma = _two_sided_jacobi(M)
    return np.sort(sigma)[::-1].copy()


def cosine_similarity(u: Vector, v: Vector) -> float:
    """<u, v> / (||u|| ||v||); zero-norm inputs give 0."""
    if u.shape != v.shape or u.ndim != 1:
        raise GhostRNNError.shape_mismatch(
            f"cosine_similarity needs equal-length vectors, got {u.shape} and {v.shape}"
        )
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    value = float(np.dot(u, v)) / (nu * nv)
    return min(1.0, max(-1.0, value))


# ---------------------------------------------------------------------------
# Random numbers: xoshiro256** seeded via splitmix64
# ---------------------------------------------------------------------------

def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step. Returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Per-item seed: splitmix64 output for ``seed XOR index``."""
    _, out = splitmix64((seed ^ index) & _MASK64)
    return out


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


T = TypeVar("T")


class Xoshiro256StarStar:
    """Deterministic xoshiro256** generator.

    The 256-bit state is expanded from the 64-bit seed with four splitmix64
    outputs, so a given seed yields the same stream on every platform.
    Instances are single-owner; ``spawn`` derives independent streams.
    """

    def __init__(self, seed: int):
        if seed < 0:
            raise GhostRNNError.invalid_config(f"seed must be non-negative, got {seed}")
        self.seed = seed & _MASK64
        sm = self.seed
        state: List[int] = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            state.append(out)
        self._s = state

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        """Uniform value in [lo, hi).

        Raises:
            ConfigError: If lo >= hi.
        """
        if not lo < hi:
            raise GhostRNNError.invalid_config(f"uniform needs lo < hi, got lo={lo}, hi={hi}")
        value = lo + (hi - lo) * self.random()
        if value >= hi:
            value = math.nextafter(hi, lo)
        return value

    def uniform_array(self, lo: float, hi: float, size: int | tuple[int, ...]) -> np.ndarray:
        """Array of ``uniform(lo, hi)`` draws filled in row-major order."""
        shape = (size,) if isinstance(size, int) else tuple(size)
        count = int(np.prod(shape)) if shape else 1
        values = np.fromiter((self.uniform(lo, hi) for _ in range(count)), dtype=np.float64, count=count)
        return values.reshape(shape)

    def normal(self) -> float:
        """Standard normal draw (Box-Muller, one value per two uniforms)."""
        u1 = 1.0 - self.random()  # (0, 1]
        u2 = self.random()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def normal_array(self, size: int | tuple[int, ...]) -> np.ndarray:
        shape = (size,) if isinstance(size, int) else tuple(size)
        count = int(np.prod(shape)) if shape else 1
        values = np.fromiter((self.normal() for _ in range(count)), dtype=np.float64, count=count)
        return values.reshape(shape)

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection sampling."""
        if n <= 0:
            raise GhostRNNError.invalid_config(f"randbelow needs n > 0, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def shuffle(self, items: MutableSequence[T]) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def spawn(self, index: int) -> "Xoshiro256StarStar":
        """Independent generator for item ``index`` of this seed."""
        return Xoshiro256StarStar(derive_seed(self.seed, index))


RngState = Xoshiro256StarStar


def rng_uniform(state: Xoshiro256StarStar, lo: float, hi: float) -> float:
    """Draw a value in [lo, hi) and advance ``state``."""
    return state.uniform(lo, hi)


__all__ = [
    "Matrix",
    "Vector",
    "MacCounter",
    "check_finite",
    "matvec",
    "singular_values",
    "cosine_similarity",
    "splitmix64",
    "derive_seed",
    "Xoshiro256StarStar",
    "RngState",
    "rng_uniform",
]
