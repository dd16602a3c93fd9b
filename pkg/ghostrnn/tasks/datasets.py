"""Seeded synthetic datasets.

Each sample i draws from its own generator seeded with
``derive_seed(seed, i)``, so a dataset is a pure function of
``(seed, params)`` and samples can be produced in any order.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterator, List, Sequence, Tuple, Union

import numpy as np

from ghostrnn.errors import GhostRNNError
from ghostrnn.kernel import Xoshiro256StarStar, derive_seed


logger = logging.getLogger("ghostrnn.tasks")

FRAME_SIZE = 16
ADDING_FEATURES = 2
DEFAULT_PULSE_NOISE = 0.1
DEFAULT_SNR_RANGE = (0.0, 10.0)


class TaskKind(str, Enum):
    ADDING = "adding"
    CLASSIFY = "classify"
    DENOISE = "denoise"


@dataclass(frozen=True, eq=False)
class LabeledSequence:
    """One input sequence and its target.

    The target is a class index for classification, a length-1 vector for
    the adding task and a (T, frame) array of clean frames for denoising.
    """
    inputs: np.ndarray
    target: Union[int, np.ndarray]

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape[0] == 0:
            raise GhostRNNError.shape_mismatch(
                f"inputs must be a non-empty (T, feature_dim) array, got {self.inputs.shape}"
            )


@dataclass(eq=False)
class Dataset:
    """A batch of equal-length sequences.

    Attributes:
        task: Which generator produced the data
        inputs: (count, T, feature_dim) inputs
        targets: (count, 1) sums, (count,) class indices or (count, T, frame) clean frames
        params: Generator parameters, enough to regenerate the data
        extras: Per-sample side data (mixture, clean and snr_db for denoising)
    """
    task: TaskKind
    inputs: np.ndarray
    targets: np.ndarray
    params: Dict[str, Any] = field(default_factory=dict)
    extras: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.task = TaskKind(self.task)
        if self.inputs.ndim != 3:
            raise GhostRNNError.shape_mismatch(f"inputs must be (count, T, F), got {self.inputs.shape}")
        count = self.inputs.shape[0]
        if self.targets.shape[0] != count:
            raise GhostRNNError.shape_mismatch(
                f"{self.targets.shape[0]} targets for {count} input sequences"
            )
        for name, values in self.extras.items():
            if values.shape[0] != count:
                raise GhostRNNError.shape_mismatch(f"extra '{name}' has {values.shape[0]} rows, expected {count}")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def __iter__(self) -> Iterator[LabeledSequence]:
        for i in range(len(self)):
            yield self.sample(i)

    @property
    def length(self) -> int:
        return self.inputs.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.inputs.shape[2]

    @property
    def output_dim(self) -> int:
        if self.task is TaskKind.CLASSIFY:
            return int(self.params["n_classes"])
        if self.task is TaskKind.DENOISE:
            return self.targets.shape[2]
        return 1

    def sample(self, i: int) -> LabeledSequence:
        target = self.targets[i]
        if self.task is TaskKind.CLASSIFY:
            target = int(target)
        return LabeledSequence(self.inputs[i], target)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(
            self.task,
            self.inputs[idx],
            self.targets[idx],
            dict(self.params),
            {name: values[idx] for name, values in self.extras.items()},
        )

    def arrays(self) -> Dict[str, np.ndarray]:
        """Every per-sample array, keyed by name."""
        result = {"inputs": self.inputs, "targets": self.targets}
        result.update(self.extras)
        return result


def _require_count(count: int) -> None:
    if count < 1:
        raise GhostRNNError.invalid_config(f"count must be >= 1, got {count}")


def _two_positions(rng: Xoshiro256StarStar, length: int) -> Tuple[int, int]:
    """Two distinct positions in [0, length)."""
    p = rng.randbelow(length)
    q = rng.randbelow(length - 1)
    if q >= p:
        q += 1
    return p, q


def gen_adding(seed: int, count: int, length: int) -> Dataset:
    """Adding problem: sum the two values flagged by the marker channel."""
    _require_count(count)
    if length < 2:
        raise GhostRNNError.invalid_config(f"adding task needs length >= 2, got {length}")
    inputs = np.zeros((count, length, ADDING_FEATURES))
    targets = np.zeros((count, 1))
    for i in range(count):
        rng = Xoshiro256StarStar(derive_seed(seed, i))
        values = rng.uniform_array(0.0, 1.0, length)
        p, q = _two_positions(rng, length)
        inputs[i, :, 0] = values
        inputs[i, p, 1] = 1.0
        inputs[i, q, 1] = 1.0
        targets[i, 0] = values[p] + values[q]
    return Dataset(
        TaskKind.ADDING,
        inputs,
        targets,
        {"task": TaskKind.ADDING.value, "seed": seed, "count": count, "length": length},
    )


def symbol_count(n_classes: int) -> int:
    """Smallest alphabet whose ordered symbol pairs cover ``n_classes`` classes."""
    needed = math.ceil(n_classes / 2)
    a = 2
    while a * (a - 1) // 2 < needed:
        a += 1
    return a


def _symbol_pairs(alphabet: int) -> List[Tuple[int, int]]:
    return list(itertools.combinations(range(alphabet), 2))


def pulses_for_class(cls: int, n_classes: int) -> Tuple[int, int]:
    """(first, second) symbols whose order encodes class ``cls``.

    Classes 2j and 2j+1 share the symbol pair j and differ only in order.
    """
    if not 0 <= cls < n_classes:
        raise GhostRNNError.invalid_config(f"class {cls} out of range for {n_classes} classes")
    a, b = _symbol_pairs(symbol_count(n_classes))[cls // 2]
    return (a, b) if cls % 2 == 0 else (b, a)


def class_of_pulses(first: int, second: int, n_classes: int) -> int:
    """Class encoded by a pulse of symbol ``first`` followed by ``second``.

    Inverse of :func:`pulses_for_class`. With an odd class count the last
    pair is only used in one order, and the other order is rejected.
    """
    if first == second:
        raise GhostRNNError.invalid_config("the two pulses must carry different symbols")
    for cls in range(n_classes):
        if pulses_for_class(cls, n_classes) == (first, second):
            return cls
    raise GhostRNNError.invalid_config(
        f"pulse order ({first}, {second}) encodes no class of {n_classes}"
    )


def gen_order_classify(
    seed: int,
    count: int,
    length: int,
    n_classes: int,
    noise: float = DEFAULT_PULSE_NOISE,
) -> Dataset:
    """Temporal-order classification.

    Every frame carries uniform noise in [-noise, noise) on each symbol
    channel; two frames additionally carry a unit pulse on one symbol each.
    The class is set by which symbols pulse and in which order. Sample i
    has class ``i % n_classes``, so the classes are balanced.
    """
    _require_count(count)
    if n_classes < 2:
        raise GhostRNNError.invalid_config(f"n_classes must be >= 2, got {n_classes}")
    if length < 2:
        raise GhostRNNError.invalid_config(f"classify task needs length >= 2, got {length}")
    if noise < 0.0:
        raise GhostRNNError.invalid_config(f"noise must be >= 0, got {noise}")
    alphabet = symbol_count(n_classes)
    inputs = np.zeros((count, length, alphabet))
    targets = np.zeros(count, dtype=np.int64)
    for i in range(count):
        rng = Xoshiro256StarStar(derive_seed(seed, i))
        cls = i % n_classes
        first, second = pulses_for_class(cls, n_classes)
        if noise > 0.0:
            inputs[i] = rng.uniform_array(-noise, noise, (length, alphabet))
        p, q = _two_positions(rng, length)
        t1, t2 = min(p, q), max(p, q)
        inputs[i, t1, first] += 1.0
        inputs[i, t2, second] += 1.0
        targets[i] = cls
    return Dataset(
        TaskKind.CLASSIFY,
        inputs,
        targets,
        {
            "task": TaskKind.CLASSIFY.value,
            "seed": seed,
            "count": count,
            "length": length,
            "n_classes": n_classes,
            "noise": noise,
        },
    )


def _power(signal: np.ndarray) -> float:
    return float(np.mean(signal * signal))


def gen_denoise(
    seed: int,
    count: int,
    length: int,
    snr_range: Tuple[float, float] = DEFAULT_SNR_RANGE,
    noise_scale: float = 1.0,
) -> Dataset:
    """Sinusoid denoising.

    clean is the sum of two sinusoids with random amplitude, frequency and
    phase; white Gaussian noise is scaled to an SNR drawn from
    ``snr_range`` dB and then multiplied by ``noise_scale``. Inputs are the
    mixture cut into non-overlapping frames of 16 samples, targets the
    clean frames. The SNR actually realized is stored per sample in
    ``extras["snr_db"]`` (+inf when there is no noise).
    """
    _require_count(count)
    if length < FRAME_SIZE or length % FRAME_SIZE != 0:
        raise GhostRNNError.invalid_config(
            f"denoise length must be a positive multiple of {FRAME_SIZE}, got {length}"
        )
    lo, hi = snr_range
    if lo > hi:
        raise GhostRNNError.invalid_config(f"snr range must have lo <= hi, got {snr_range}")
    if noise_scale < 0.0:
        raise GhostRNNError.invalid_config(f"noise_scale must be >= 0, got {noise_scale}")

    t = np.arange(length, dtype=np.float64)
    clean = np.zeros((count, length))
    mixture = np.zeros((count, length))
    snr_db = np.zeros(count)
    for i in range(count):
        rng = Xoshiro256StarStar(derive_seed(seed, i))
        for _ in range(2):
            amplitude = rng.uniform(0.5, 1.0)
            freq = rng.uniform(0.01, 0.2)
            phase = rng.uniform(0.0, 2.0 * math.pi)
            clean[i] += amplitude * np.sin(2.0 * math.pi * freq * t + phase)
        target_snr = rng.uniform(lo, hi) if lo < hi else lo
        noise = rng.normal_array(length)
        p_clean = _power(clean[i])
        noise *= noise_scale * math.sqrt(p_clean / (_power(noise) * 10.0 ** (target_snr / 10.0)))
        mixture[i] = clean[i] + noise
        p_noise = _power(mixture[i] - clean[i])
        snr_db[i] = 10.0 * math.log10(p_clean / p_noise) if p_noise > 0.0 else math.inf

    frames = length // FRAME_SIZE
    return Dataset(
        TaskKind.DENOISE,
        mixture.reshape(count, frames, FRAME_SIZE),
        clean.reshape(count, frames, FRAME_SIZE),
        {
            "task": TaskKind.DENOISE.value,
            "seed": seed,
            "count": count,
            "length": length,
            "snr_range": [lo, hi],
            "noise_scale": noise_scale,
        },
        {"mixture": mixture, "clean": clean, "snr_db": snr_db},
    )


def task_feature_dim(task: TaskKind, n_classes: int = 2) -> int:
    """Input width a task produces."""
    task = TaskKind(task)
    if task is TaskKind.ADDING:
        return ADDING_FEATURES
    if task is TaskKind.CLASSIFY:
        return symbol_count(n_classes)
    return FRAME_SIZE


def generate(
    task: TaskKind,
    seed: int,
    count: int,
    length: int,
    n_classes: int = 2,
    **options: Any,
) -> Dataset:
    """Dispatch to the generator for ``task``."""
    task = TaskKind(task)
    logger.debug("generating %s: seed=%d count=%d length=%d", task.value, seed, count, length)
    if task is TaskKind.ADDING:
        return gen_adding(seed, count, length)
    if task is TaskKind.CLASSIFY:
        return gen_order_classify(seed, count, length, n_classes, **options)
    return gen_denoise(seed, count, length, **options)


__all__ = [
    "FRAME_SIZE",
    "TaskKind",
    "LabeledSequence",
    "Dataset",
    "gen_adding",
    "gen_order_classify",
    "gen_denoise",
    "symbol_count",
    "pulses_for_class",
    "class_of_pulses",
    "task_feature_dim",
    "generate",
]
