"""Configuration for GhostRNN training runs.

``TrainConfig`` describes one experiment completely: the cell, the task and
its generator parameters, and the optimizer schedule. Process-level knobs
(worker threads, log level) come from the environment, which ``main.py``
may populate from a ``.env`` file.
"""

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, List, Optional, Tuple

from ghostrnn.cells import Activation, CellKind, intrinsic_dim_for
from ghostrnn.errors import GhostRNNError
from ghostrnn.tasks import FRAME_SIZE, TaskKind, task_feature_dim


ENV_THREADS = "GHOSTRNN_THREADS"
ENV_LOG_LEVEL = "GHOSTRNN_LOG_LEVEL"

DEFAULT_LR_STEPS: Tuple[Tuple[int, float], ...] = ((10000, 0.1), (20000, 0.1))
DEFAULT_LENGTHS = {TaskKind.ADDING: 50, TaskKind.CLASSIFY: 50, TaskKind.DENOISE: 256}


@dataclass
class TrainConfig:
    """One training experiment.

    Defaults follow the published recipe: Adam at 5e-4 stepped down by
    0.1 at iterations 10,000 and 20,000, weight decay 1e-5, batch 100.
    ``length`` of None picks the task's default sequence length and
    ``data_seed`` of None reuses ``seed`` for dataset generation.
    """

    task: TaskKind = TaskKind.ADDING
    cell: CellKind = CellKind.GHOST
    state_dim: int = 32
    ratio: int = 2
    activation: Activation = Activation.TANH
    feature_dim: Optional[int] = None
    length: Optional[int] = None
    n_classes: int = 4
    train_count: int = 10000
    val_count: int = 1000
    test_count: int = 1000
    seed: int = 1
    data_seed: Optional[int] = None
    batch_size: int = 100
    max_epochs: int = 20
    max_iterations: Optional[int] = None
    initial_lr: float = 5e-4
    lr_steps: List[Tuple[int, float]] = field(default_factory=lambda: [tuple(s) for s in DEFAULT_LR_STEPS])
    weight_decay: float = 1e-5
    clip_norm: float = 5.0
    early_stop_patience: int = 5
    reduction_chunk: int = 25
    record_wall_time: bool = False

    def __post_init__(self):
        try:
            self.task = TaskKind(self.task)
            self.cell = CellKind(self.cell)
            self.activation = Activation(self.activation)
        except ValueError as e:
            raise GhostRNNError.invalid_config(str(e)) from e
        self.lr_steps = [(int(step), float(mult)) for step, mult in self.lr_steps]
        self._validate()

    def _validate(self) -> None:
        positive = {
            "state_dim": self.state_dim,
            "ratio": self.ratio,
            "train_count": self.train_count,
            "val_count": self.val_count,
            "test_count": self.test_count,
            "batch_size": self.batch_size,
            "early_stop_patience": self.early_stop_patience,
            "reduction_chunk": self.reduction_chunk,
        }
        for name, value in positive.items():
            if value < 1:
                raise GhostRNNError.invalid_config(f"{name} must be >= 1, got {value}")
        if self.cell is CellKind.GHOST:
            intrinsic_dim_for(self.state_dim, self.ratio)
        if self.n_classes < 2:
            raise GhostRNNError.invalid_config(f"n_classes must be >= 2, got {self.n_classes}")
        if self.seed < 0 or (self.data_seed is not None and self.data_seed < 0):
            raise GhostRNNError.invalid_config("seeds must be non-negative")
        if self.max_epochs < 0:
            raise GhostRNNError.invalid_config(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise GhostRNNError.invalid_config(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.length is not None and self.length < 2:
            raise GhostRNNError.invalid_config(f"length must be >= 2, got {self.length}")
        if self.task is TaskKind.DENOISE and self.resolved_length % FRAME_SIZE != 0:
            raise GhostRNNError.invalid_config(
                f"denoise length must be a multiple of {FRAME_SIZE}, got {self.resolved_length}"
            )
        if not self.initial_lr > 0.0:
            raise GhostRNNError.invalid_config(f"initial_lr must be > 0, got {self.initial_lr}")
        if self.weight_decay < 0.0:
            raise GhostRNNError.invalid_config(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not self.clip_norm > 0.0:
            raise GhostRNNError.invalid_config(f"clip_norm must be > 0, got {self.clip_norm}")
        previous = -1
        for step, mult in self.lr_steps:
            if step <= previous:
                raise GhostRNNError.invalid_config("lr_steps iterations must be strictly increasing and >= 0")
            if not mult > 0.0 or math.isinf(mult):
                raise GhostRNNError.invalid_config(f"lr step multiplier must be a positive number, got {mult}")
            previous = step
        expected = task_feature_dim(self.task, self.n_classes)
        if self.feature_dim is not None and self.feature_dim != expected:
            raise GhostRNNError.invalid_config(
                f"feature_dim {self.feature_dim} does not match the {self.task.value} task input width {expected}"
            )

    @property
    def resolved_feature_dim(self) -> int:
        return task_feature_dim(self.task, self.n_classes)

    @property
    def resolved_length(self) -> int:
        return self.length if self.length is not None else DEFAULT_LENGTHS[self.task]

    @property
    def resolved_data_seed(self) -> int:
        return self.data_seed if self.data_seed is not None else self.seed

    @property
    def effective_ratio(self) -> int:
        return 1 if self.cell is CellKind.GRU else self.ratio

    def with_overrides(self, **overrides: Any) -> "TrainConfig":
        """Copy with every non-None override applied."""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def to_dict(self) -> Dict[str, Any]:
        result = asdict(self)
        result["task"] = self.task.value
        result["cell"] = self.cell.value
        result["activation"] = self.activation.value
        result["lr_steps"] = [[step, mult] for step, mult in self.lr_steps]
        return result

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise GhostRNNError.invalid_config(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str, **overrides: Any) -> "TrainConfig":
        """Load a JSON config; non-None ``overrides`` win over file values."""
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except OSError as e:
            raise GhostRNNError.invalid_config(f"cannot read config file {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise GhostRNNError.invalid_config(f"config file {path} is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise GhostRNNError.invalid_config(f"config file {path} must hold a JSON object")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(data)

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


def get_thread_count() -> int:
    """Worker threads for gradient computation (GHOSTRNN_THREADS, 0 = sequential).

    Raises:
        ConfigError: If the variable is not a non-negative integer.
    """
    raw = os.environ.get(ENV_THREADS, "0").strip() or "0"
    try:
        threads = int(raw)
    except ValueError as e:
        raise GhostRNNError.invalid_config(f"{ENV_THREADS} must be an integer, got '{raw}'") from e
    if threads < 0:
        raise GhostRNNError.invalid_config(f"{ENV_THREADS} must be >= 0, got {threads}")
    return threads


def get_log_level() -> str:
    return os.environ.get(ENV_LOG_LEVEL, "INFO").upper()


__all__ = [
    "ENV_THREADS",
    "ENV_LOG_LEVEL",
    "DEFAULT_LR_STEPS",
    "TrainConfig",
    "get_thread_count",
    "get_log_level",
]
