"""Result records shared across the GhostRNN kit."""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np


VALID_METRICS = ["accuracy", "sdr", "sdri", "si_sdr", "si_sdri", "mse"]


@dataclass(eq=False)
class FeatureMap:
    """Hidden-state values over time: row i is unit i, column t is step t."""
    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ValueError(f"feature map must be a non-empty m x n matrix, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature map entries must be finite")

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


@dataclass
class CountReport:
    """Parameter and MAC accounting for one recurrent cell."""
    weights_only: int
    with_biases: int
    macs_per_step: int
    compression_vs_gru: float
    matched_gru_state_dim: Optional[int] = None
    matched_gru_weights: Optional[int] = None

    def __post_init__(self):
        if self.with_biases < self.weights_only:
            raise ValueError("with_biases cannot be smaller than weights_only")
        if not 0.0 <= self.compression_vs_gru <= 1.0:
            raise ValueError("compression_vs_gru must be in [0, 1]")

    def to_dict(self) -> Dict[str, Any]:
        result: Dict[str, Any] = {
            "weights_only": self.weights_only,
            "with_biases": self.with_biases,
            "macs_per_step": self.macs_per_step,
            "compression_vs_gru": self.compression_vs_gru,
        }
        if self.matched_gru_state_dim is not None:
            result["matched_gru_state_dim"] = self.matched_gru_state_dim
            result["matched_gru_weights"] = self.matched_gru_weights
        return result


@dataclass(eq=False)
class PcaReport:
    """Cumulative contribution of principal components of a feature map."""
    singular_values: np.ndarray
    contribution: np.ndarray
    k_at_threshold: int
    threshold: float
    centered: bool = True
    squared: bool = True
    degenerate: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "singular_values": [float(v) for v in self.singular_values],
            "contribution": [float(v) for v in self.contribution],
            "k_at_threshold": self.k_at_threshold,
            "threshold": self.threshold,
            "centered": self.centered,
            "squared": self.squared,
            "degenerate": self.degenerate,
        }


@dataclass(eq=False)
class SimilarityMatrix:
    """Pairwise cosine similarity between hidden units."""
    values: np.ndarray
    zero_rows: List[int] = field(default_factory=list)

    @property
    def m(self) -> int:
        return self.values.shape[0]


@dataclass
class MetricValue:
    """One named evaluation metric; SDR-family values are in dB and may be +/-inf."""
    name: str
    value: float

    def __post_init__(self):
        if self.name not in VALID_METRICS:
            raise ValueError(f"metric name must be one of: {', '.join(VALID_METRICS)}")
        if self.name == "accuracy" and not 0.0 <= self.value <= 1.0:
            raise ValueError("accuracy must be in [0, 1]")
        if math.isnan(self.value):
            raise ValueError(f"metric {self.name} is NaN")


@dataclass
class EpochRecord:
    """Metrics recorded at the end of one training epoch."""
    epoch: int
    train_loss: float
    val_loss: float
    val_metric: float
    lr: float
    iterations: int
    wall_time: Optional[float] = None

    def __post_init__(self):
        if not isinstance(self.epoch, int) or self.epoch < 1:
            raise ValueError("epoch must be a positive integer")

    def to_dict(self) -> Dict[str, Any]:
        result: Dict[str, Any] = {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "val_metric": self.val_metric,
            "lr": self.lr,
            "iterations": self.iterations,
        }
        if self.wall_time is not None:
            result["wall_time"] = self.wall_time
        return result


@dataclass
class RunHistory:
    """Per-epoch log of one training run."""
    records: List[EpochRecord] = field(default_factory=list)
    stopped_early: bool = False
    best_epoch: Optional[int] = None

    def append(self, record: EpochRecord) -> None:
        expected = len(self.records) + 1
        if record.epoch != expected:
            raise ValueError(f"epochs must be contiguous: expected {expected}, got {record.epoch}")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)


__all__ = [
    "VALID_METRICS",
    "FeatureMap",
    "CountReport",
    "PcaReport",
    "SimilarityMatrix",
    "MetricValue",
    "EpochRecord",
    "RunHistory",
]
