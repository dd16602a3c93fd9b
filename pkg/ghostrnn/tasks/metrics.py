"""Evaluation metrics: accuracy, MSE and the SDR family.

SDR-family values are in dB. +inf marks an exact reconstruction and -inf
an estimate with no component along the target; both are ordinary float
values and serialize as "inf" / "-inf".
"""

import math
from typing import Callable, Sequence, Union

import numpy as np

from ghostrnn.errors import GhostRNNError


SignalMetric = Callable[[np.ndarray, np.ndarray], float]


def _signals(estimate: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    estimate = np.asarray(estimate, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if estimate.shape != target.shape:
        raise GhostRNNError.shape_mismatch(
            f"estimate and target lengths differ: {estimate.shape[0]} vs {target.shape[0]}"
        )
    if estimate.shape[0] == 0:
        raise GhostRNNError.shape_mismatch("signals must be non-empty")
    if not np.any(target):
        raise GhostRNNError.invalid_config("target signal is all zero")
    return estimate, target


def _db(numerator: float, denominator: float) -> float:
    if denominator == 0.0:
        return math.inf
    return 10.0 * math.log10(numerator / denominator)


def sdr(estimate: np.ndarray, target: np.ndarray) -> float:
    """10 log10(||s||^2 / ||s - s_hat||^2)."""
    estimate, target = _signals(estimate, target)
    error = target - estimate
    return _db(float(np.dot(target, target)), float(np.dot(error, error)))


def si_sdr(estimate: np.ndarray, target: np.ndarray) -> float:
    """Scale-invariant SDR.

    The target is scaled by the least-squares factor
    alpha = <s_hat, s> / ||s||^2 before the ratio is taken.
    """
    estimate, target = _signals(estimate, target)
    if not np.any(estimate):
        raise GhostRNNError.invalid_config("estimate signal is all zero")
    dot = float(np.dot(estimate, target))
    if dot == 0.0:
        return -math.inf
    alpha = dot / float(np.dot(target, target))
    projection = alpha * target
    error = estimate - projection
    return _db(float(np.dot(projection, projection)), float(np.dot(error, error)))


_SIGNAL_METRICS = {"sdr": sdr, "si_sdr": si_sdr}


def improvement(
    metric: Union[str, SignalMetric],
    estimate: np.ndarray,
    mixture: np.ndarray,
    target: np.ndarray,
) -> float:
    """metric(estimate, target) - metric(mixture, target).

    Equal scores (including two infinities of the same sign) give 0.
    """
    if isinstance(metric, str):
        if metric not in _SIGNAL_METRICS:
            raise GhostRNNError.invalid_config(
                f"unknown signal metric '{metric}', expected one of {sorted(_SIGNAL_METRICS)}"
            )
        metric = _SIGNAL_METRICS[metric]
    processed = metric(estimate, target)
    unprocessed = metric(mixture, target)
    if processed == unprocessed:
        return 0.0
    return processed - unprocessed


def accuracy(predictions: Sequence[int], labels: Sequence[int]) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise GhostRNNError.shape_mismatch(
            f"{predictions.shape[0]} predictions for {labels.shape[0]} labels"
        )
    if predictions.size == 0:
        raise GhostRNNError.invalid_config("accuracy of an empty set is undefined")
    return float(np.mean(predictions == labels))


def mse(prediction: np.ndarray, target: np.ndarray) -> float:
    prediction = np.asarray(prediction, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if prediction.shape != target.shape:
        raise GhostRNNError.shape_mismatch(f"mse shapes differ: {prediction.shape} vs {target.shape}")
    diff = prediction - target
    return float(np.mean(diff * diff))


__all__ = [
    "SignalMetric",
    "sdr",
    "si_sdr",
    "improvement",
    "accuracy",
    "mse",
]
