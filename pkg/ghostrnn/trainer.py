"""Deterministic training and evaluation.

A ``Model`` is a recurrent cell plus an affine ``Readout`` from the full
state [h g]. The readout sees the final state for the adding and
classification tasks and every state for denoising.

Each mini-batch is split into fixed chunks of ``reduction_chunk`` samples
(in the shuffled batch order). Chunks may be processed by worker threads
but their gradients are summed in ascending chunk order, so the result
does not depend on the number of threads.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ghostrnn.backprop import bptt, forward_with_tape, full_states
from ghostrnn.cells import CellParams, init_cell, with_tensors
from ghostrnn.config import TrainConfig, get_thread_count
from ghostrnn.errors import DivergenceError, GhostRNNError, NonFiniteError
from ghostrnn.kernel import Xoshiro256StarStar, derive_seed, matvec
from ghostrnn.logging import MetricsLogger
from ghostrnn.models import VALID_METRICS, EpochRecord, MetricValue, RunHistory
from ghostrnn.tasks import Dataset, TaskKind, generate
from ghostrnn.tasks.metrics import accuracy, improvement, mse, sdr, si_sdr


logger = logging.getLogger("ghostrnn.trainer")

# derive_seed index of the per-epoch shuffle stream, clear of tensor indices
SHUFFLE_STREAM = 1 << 32
PREDICT_CHUNK = 500


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Readout:
    """Affine map y = W_out s + b_out from the full cell state."""
    W_out: np.ndarray
    b_out: np.ndarray

    def __post_init__(self):
        if self.W_out.ndim != 2:
            raise GhostRNNError.shape_mismatch(f"W_out must be a matrix, got shape {self.W_out.shape}")
        if self.b_out.shape != (self.W_out.shape[0],):
            raise GhostRNNError.shape_mismatch(
                f"b_out must have length {self.W_out.shape[0]}, got shape {self.b_out.shape}"
            )

    @property
    def input_dim(self) -> int:
        return self.W_out.shape[1]

    @property
    def output_dim(self) -> int:
        return self.W_out.shape[0]

    def tensors(self) -> Dict[str, np.ndarray]:
        return {"W_out": self.W_out, "b_out": self.b_out}

    def apply(self, states: np.ndarray) -> np.ndarray:
        """Outputs for (..., input_dim) states."""
        flat = states.reshape(-1, states.shape[-1])
        out = matvec(self.W_out, flat) + self.b_out
        return out.reshape(states.shape[:-1] + (self.output_dim,))

    @classmethod
    def init(cls, input_dim: int, output_dim: int, seed: int, first_index: int) -> "Readout":
        """Uniform(-1/sqrt(input_dim), 1/sqrt(input_dim)) weights, zero bias.

        W_out draws from ``derive_seed(seed, first_index)`` so it continues
        the cell's per-tensor seed sequence.
        """
        bound = 1.0 / math.sqrt(input_dim)
        rng = Xoshiro256StarStar(derive_seed(seed, first_index))
        return cls(rng.uniform_array(-bound, bound, (output_dim, input_dim)), np.zeros(output_dim))


@dataclass(frozen=True, eq=False)
class Model:
    """A cell and, once set up for a task, its readout."""
    cell: CellParams
    readout: Optional[Readout] = None

    def __post_init__(self):
        if self.readout is not None and self.readout.input_dim != self.cell.full_dim:
            raise GhostRNNError.shape_mismatch(
                f"readout reads {self.readout.input_dim} units, cell state has {self.cell.full_dim}"
            )

    def tensors(self) -> Dict[str, np.ndarray]:
        tensors = dict(self.cell.tensors())
        if self.readout is not None:
            tensors.update(self.readout.tensors())
        return tensors

    def with_tensors(self, tensors: Dict[str, np.ndarray]) -> "Model":
        cell = with_tensors(self.cell, {k: v for k, v in tensors.items() if k not in ("W_out", "b_out")})
        readout = Readout(tensors["W_out"], tensors["b_out"]) if self.readout is not None else None
        return Model(cell, readout)

    def require_readout(self) -> Readout:
        if self.readout is None:
            raise GhostRNNError.invalid_config("model has no readout; it cannot be trained or evaluated")
        return self.readout


class Head(str, Enum):
    FINAL = "final"
    EVERY_STEP = "every_step"


def head_for(task: TaskKind) -> Head:
    return Head.EVERY_STEP if TaskKind(task) is TaskKind.DENOISE else Head.FINAL


def output_dim_for(config: TrainConfig) -> int:
    if config.task is TaskKind.CLASSIFY:
        return config.n_classes
    if config.task is TaskKind.DENOISE:
        return config.resolved_feature_dim
    return 1


def init_model(config: TrainConfig) -> Model:
    cell = init_cell(
        config.cell,
        config.resolved_feature_dim,
        config.state_dim,
        config.effective_ratio,
        config.seed,
        config.activation,
    )
    readout = Readout.init(cell.full_dim, output_dim_for(config), config.seed, len(cell.tensors()))
    return Model(cell, readout)


# ---------------------------------------------------------------------------
# Losses on readout outputs
# ---------------------------------------------------------------------------

def task_loss(task: TaskKind, outputs: np.ndarray, targets: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-sample losses and d(loss_b)/d(outputs).

    ``outputs`` is (B, out) for the final-state head and (T, B, out) for
    the every-step head; ``targets`` is batch-major as stored in a Dataset.
    """
    task = TaskKind(task)
    if task is TaskKind.CLASSIFY:
        labels = np.asarray(targets, dtype=np.int64)
        if np.any(labels < 0) or np.any(labels >= outputs.shape[1]):
            raise GhostRNNError.invalid_config(f"class labels out of range for {outputs.shape[1]} logits")
        rows = np.arange(outputs.shape[0])
        shifted = outputs - outputs.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        total = exp.sum(axis=1)
        losses = np.log(total) - shifted[rows, labels]
        grad = exp / total[:, None]
        grad[rows, labels] -= 1.0
        return losses, grad
    if task is TaskKind.DENOISE:
        target = np.transpose(targets, (1, 0, 2))
        if target.shape != outputs.shape:
            raise GhostRNNError.shape_mismatch(f"outputs {outputs.shape} vs targets {target.shape}")
        diff = outputs - target
        per_sample = diff.shape[0] * diff.shape[2]
        losses = np.sum(diff * diff, axis=(0, 2)) / per_sample
        return losses, 2.0 * diff / per_sample
    if targets.shape != outputs.shape:
        raise GhostRNNError.shape_mismatch(f"outputs {outputs.shape} vs targets {targets.shape}")
    diff = outputs - targets
    return np.mean(diff * diff, axis=1), 2.0 * diff / diff.shape[1]


def _time_major(inputs: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.transpose(inputs, (1, 0, 2)))


def loss_and_gradients(
    model: Model,
    task: TaskKind,
    inputs: np.ndarray,
    targets: np.ndarray,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Summed loss and summed gradients over a (B, T, F) block of samples."""
    readout = model.require_readout()
    states, tape = forward_with_tape(model.cell, _time_major(inputs))
    S = full_states(states)
    if head_for(task) is Head.FINAL:
        outputs = readout.apply(S[-1])
        losses, d_out = task_loss(task, outputs, targets)
        d_states = np.zeros_like(S)
        d_states[-1] = d_out @ readout.W_out
        g_W = d_out.T @ S[-1]
    else:
        outputs = readout.apply(S)
        losses, d_out = task_loss(task, outputs, targets)
        d_states = d_out @ readout.W_out
        g_W = d_out.reshape(-1, d_out.shape[-1]).T @ S.reshape(-1, S.shape[-1])
    grads = dict(bptt(model.cell, tape, d_states).tensors)
    grads["W_out"] = g_W
    grads["b_out"] = d_out.reshape(-1, d_out.shape[-1]).sum(axis=0)
    return float(np.sum(losses)), grads


def batch_gradients(
    model: Model,
    dataset: Dataset,
    indices: Sequence[int],
    chunk_size: int,
    executor: Optional[ThreadPoolExecutor] = None,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Mean loss and mean gradients over ``indices``, reduced in chunk order."""
    if len(indices) == 0:
        raise GhostRNNError.invalid_config("empty batch")
    chunks = [list(indices[i:i + chunk_size]) for i in range(0, len(indices), chunk_size)]

    def work(chunk: List[int]) -> Tuple[float, Dict[str, np.ndarray]]:
        idx = np.asarray(chunk, dtype=np.intp)
        return loss_and_gradients(model, dataset.task, dataset.inputs[idx], dataset.targets[idx])

    results = list(executor.map(work, chunks)) if executor is not None else [work(c) for c in chunks]
    total_loss = 0.0
    totals = {name: np.zeros_like(value) for name, value in model.tensors().items()}
    for loss, grads in results:
        total_loss += loss
        for name in totals:
            totals[name] += grads[name]
    n = len(indices)
    return total_loss / n, {name: value / n for name, value in totals.items()}


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class AdamState:
    """Adam moments with decoupled weight decay."""
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.t < 0:
            raise GhostRNNError.invalid_config(f"Adam step counter must be >= 0, got {self.t}")
        if set(self.m) != set(self.v):
            raise GhostRNNError.shape_mismatch("Adam moments must cover the same tensors")
        for name in self.m:
            if self.m[name].shape != self.v[name].shape:
                raise GhostRNNError.shape_mismatch(f"Adam moments of {name} differ in shape")

    @classmethod
    def create(
        cls,
        params: Dict[str, np.ndarray],
        lr: float = 5e-4,
        weight_decay: float = 0.0,
        **hyper: float,
    ) -> "AdamState":
        return cls(
            m={name: np.zeros_like(value) for name, value in params.items()},
            v={name: np.zeros_like(value) for name, value in params.items()},
            lr=lr,
            weight_decay=weight_decay,
            **hyper,
        )


def adam_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    state: AdamState,
    lr: Optional[float] = None,
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """One Adam update; returns new parameters and state, inputs untouched.

    Raises:
        ShapeError: If gradients and parameters do not line up.
        NonFiniteError: If a gradient holds NaN or inf; the tensor is named.
    """
    if set(grads) != set(params) or set(state.m) != set(params):
        raise GhostRNNError.shape_mismatch(
            f"tensor names differ: params {sorted(params)}, grads {sorted(grads)}"
        )
    for name, g in grads.items():
        if g.shape != params[name].shape or state.m[name].shape != params[name].shape:
            raise GhostRNNError.shape_mismatch(
                f"gradient of {name} has shape {g.shape}, parameter has {params[name].shape}"
            )
        if not np.all(np.isfinite(g)):
            raise GhostRNNError.non_finite(f"gradient of {name} is not finite", tensor=name)

    lr = state.lr if lr is None else lr
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    new_params: Dict[str, np.ndarray] = {}
    new_m: Dict[str, np.ndarray] = {}
    new_v: Dict[str, np.ndarray] = {}
    for name, theta in params.items():
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = m / bias1
        v_hat = v / bias2
        theta = theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        if state.weight_decay > 0.0:
            theta = theta - lr * state.weight_decay * theta
        new_params[name] = theta
        new_m[name] = m
        new_v[name] = v
    return new_params, replace(state, m=new_m, v=new_v, t=t)


def lr_at(config: TrainConfig, iteration: int) -> float:
    """initial_lr times every step multiplier whose iteration has been reached."""
    if iteration < 0:
        raise GhostRNNError.invalid_config(f"iteration must be >= 0, got {iteration}")
    lr = config.initial_lr
    for step, mult in config.lr_steps:
        if step <= iteration:
            lr *= mult
    return lr


def global_norm(grads: Dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_by_global_norm(grads: Dict[str, np.ndarray], clip_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    """Scale all gradients together so their joint L2 norm is at most ``clip_norm``."""
    norm = global_norm(grads)
    if math.isinf(clip_norm) or norm <= clip_norm:
        return grads, norm
    scale = clip_norm / norm
    return {name: g * scale for name, g in grads.items()}, norm


# ---------------------------------------------------------------------------
# Prediction and evaluation
# ---------------------------------------------------------------------------

def predict(model: Model, dataset: Dataset, chunk_size: int = PREDICT_CHUNK) -> np.ndarray:
    """Readout outputs for every sample.

    (N, out) for final-state tasks, (N, T, out) for denoising.
    """
    readout = model.require_readout()
    if dataset.feature_dim != model.cell.feature_dim:
        raise GhostRNNError.shape_mismatch(
            f"dataset feature_dim {dataset.feature_dim} does not match cell feature_dim {model.cell.feature_dim}"
        )
    head = head_for(dataset.task)
    blocks = []
    for start in range(0, len(dataset), chunk_size):
        xs = _time_major(dataset.inputs[start:start + chunk_size])
        states, _ = forward_with_tape(model.cell, xs)
        S = full_states(states)
        if head is Head.FINAL:
            blocks.append(readout.apply(S[-1]))
        else:
            blocks.append(np.transpose(readout.apply(S), (1, 0, 2)))
    return np.concatenate(blocks, axis=0)


def dataset_loss(model: Model, dataset: Dataset, outputs: Optional[np.ndarray] = None) -> float:
    """Mean per-sample training loss over the dataset."""
    if outputs is None:
        outputs = predict(model, dataset)
    if head_for(dataset.task) is Head.EVERY_STEP:
        outputs = np.transpose(outputs, (1, 0, 2))
    losses, _ = task_loss(dataset.task, outputs, dataset.targets)
    return float(np.mean(losses))


TASK_METRICS = {
    TaskKind.ADDING: ("mse",),
    TaskKind.CLASSIFY: ("accuracy",),
    TaskKind.DENOISE: ("sdr", "sdri", "si_sdr", "si_sdri", "mse"),
}
# metric reported as val_metric during training
PRIMARY_METRIC = {TaskKind.ADDING: "mse", TaskKind.CLASSIFY: "accuracy", TaskKind.DENOISE: "si_sdri"}


def _signal_scores(estimates: np.ndarray, dataset: Dataset) -> Dict[str, float]:
    clean = dataset.extras["clean"]
    mixture = dataset.extras["mixture"]
    per_metric: Dict[str, List[float]] = {"sdr": [], "sdri": [], "si_sdr": [], "si_sdri": []}
    for i in range(len(dataset)):
        per_metric["sdr"].append(sdr(estimates[i], clean[i]))
        per_metric["sdri"].append(improvement(sdr, estimates[i], mixture[i], clean[i]))
        per_metric["si_sdr"].append(si_sdr(estimates[i], clean[i]))
        per_metric["si_sdri"].append(improvement(si_sdr, estimates[i], mixture[i], clean[i]))
    return {name: float(np.mean(values)) for name, values in per_metric.items()}


def evaluate(
    model: Model,
    dataset: Dataset,
    metrics: Optional[Iterable[str]] = None,
    outputs: Optional[np.ndarray] = None,
) -> List[MetricValue]:
    """Metrics over the whole dataset; classification scores the argmax of the readout."""
    available = TASK_METRICS[dataset.task]
    names = list(available) if metrics is None else list(metrics)
    for name in names:
        if name not in VALID_METRICS or name not in available:
            raise GhostRNNError.invalid_config(
                f"metric '{name}' is not available for the {dataset.task.value} task; choose from {list(available)}"
            )
    if outputs is None:
        outputs = predict(model, dataset)
    scores: Dict[str, float] = {}
    if dataset.task is TaskKind.CLASSIFY:
        scores["accuracy"] = accuracy(np.argmax(outputs, axis=1), dataset.targets)
    else:
        scores["mse"] = mse(outputs, dataset.targets)
        if dataset.task is TaskKind.DENOISE and any(n != "mse" for n in names):
            scores.update(_signal_scores(outputs.reshape(len(dataset), -1), dataset))
    return [MetricValue(name, scores[name]) for name in names]


def metrics_to_dict(values: Iterable[MetricValue]) -> Dict[str, float]:
    return {v.name: v.value for v in values}


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Splits:
    train: Dataset
    val: Dataset
    test: Optional[Dataset] = None


def make_splits(config: TrainConfig, include_test: bool = True) -> Splits:
    """Train/val/test datasets drawn from streams 1, 2 and 3 of the data seed."""
    seed = config.resolved_data_seed
    length = config.resolved_length

    def split(index: int, count: int) -> Dataset:
        return generate(config.task, derive_seed(seed, index), count, length, config.n_classes)

    test = split(3, config.test_count) if include_test else None
    return Splits(split(1, config.train_count), split(2, config.val_count), test)


def eval_split(config: TrainConfig) -> Dataset:
    seed = config.resolved_data_seed
    return generate(config.task, derive_seed(seed, 3), config.test_count, config.resolved_length, config.n_classes)


@dataclass(eq=False)
class TrainResult:
    """Outcome of one run: best-validation model, last model and history."""
    model: Model
    final_model: Model
    history: RunHistory
    iterations: int
    best_val_metric: Optional[float] = None


def train_step(
    model: Model,
    adam: AdamState,
    dataset: Dataset,
    indices: Sequence[int],
    config: TrainConfig,
    lr: float,
    executor: Optional[ThreadPoolExecutor] = None,
) -> Tuple[Model, AdamState, float]:
    """Gradient, clipping and one Adam update on the samples ``indices``."""
    loss, grads = batch_gradients(model, dataset, indices, config.reduction_chunk, executor)
    if not math.isfinite(loss):
        raise GhostRNNError.divergence(f"training loss is not finite: {loss}", loss=str(loss))
    grads, _ = clip_by_global_norm(grads, config.clip_norm)
    try:
        params, adam = adam_step(model.tensors(), grads, adam, lr=lr)
    except NonFiniteError as e:
        raise GhostRNNError.divergence(e.message, **(e.details or {})) from e
    return model.with_tensors(params), adam, loss


def train(
    config: TrainConfig,
    metrics: Optional[MetricsLogger] = None,
    threads: Optional[int] = None,
    splits: Optional[Splits] = None,
    progress: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainResult:
    """Train ``config`` to completion.

    Stops after ``max_epochs`` epochs, after ``max_iterations`` updates if
    set, or after ``early_stop_patience`` epochs without a lower
    validation loss. Returns the parameters with the lowest validation
    loss seen.

    Raises:
        DivergenceError: On a non-finite loss or gradient; ``last_good``
            carries the parameters from before the failing step.
    """
    if threads is None:
        threads = get_thread_count()
    if splits is None:
        splits = make_splits(config, include_test=False)
    model = init_model(config)
    adam = AdamState.create(model.tensors(), lr=config.initial_lr, weight_decay=config.weight_decay)
    history = RunHistory()
    shuffle_rng = Xoshiro256StarStar(derive_seed(config.seed, SHUFFLE_STREAM))

    best_model = model
    best_val = math.inf
    best_metric: Optional[float] = None
    stale = 0
    iteration = 0
    lr = lr_at(config, 0)
    n_train = len(splits.train)
    budget_spent = False

    executor = ThreadPoolExecutor(max_workers=threads) if threads > 0 else None
    try:
        for epoch in range(1, config.max_epochs + 1):
            started = time.perf_counter()
            order = list(range(n_train))
            shuffle_rng.shuffle(order)
            loss_sum = 0.0
            seen = 0
            for start in range(0, n_train, config.batch_size):
                batch = order[start:start + config.batch_size]
                lr = lr_at(config, iteration)
                try:
                    model, adam, loss = train_step(model, adam, splits.train, batch, config, lr, executor)
                except DivergenceError as e:
                    e.last_good = model
                    e.details = dict(e.details or {}, epoch=epoch, iteration=iteration)
                    logger.error("diverged at epoch %d iteration %d: %s", epoch, iteration, e.message)
                    raise
                iteration += 1
                loss_sum += loss * len(batch)
                seen += len(batch)
                if config.max_iterations is not None and iteration >= config.max_iterations:
                    budget_spent = True
                    break

            outputs = predict(model, splits.val)
            val_loss = dataset_loss(model, splits.val, outputs)
            if not math.isfinite(val_loss):
                error = GhostRNNError.divergence(
                    f"validation loss is not finite: {val_loss}", epoch=epoch, iteration=iteration
                )
                error.last_good = best_model
                raise error
            val_metric = metrics_to_dict(
                evaluate(model, splits.val, [PRIMARY_METRIC[config.task]], outputs)
            )[PRIMARY_METRIC[config.task]]
            record = EpochRecord(
                epoch=epoch,
                train_loss=loss_sum / seen,
                val_loss=val_loss,
                val_metric=val_metric,
                lr=lr,
                iterations=iteration,
                wall_time=time.perf_counter() - started if config.record_wall_time else None,
            )
            history.append(record)
            if metrics is not None:
                metrics.log(record)
            if progress is not None:
                progress(record)
            logger.info(
                "epoch %d: train_loss=%.6g val_loss=%.6g val_%s=%.6g lr=%.3g",
                epoch, record.train_loss, val_loss, PRIMARY_METRIC[config.task], val_metric, lr,
            )

            if val_loss < best_val:
                best_val = val_loss
                best_model = model
                best_metric = val_metric
                history.best_epoch = epoch
                stale = 0
            else:
                stale += 1
                if stale >= config.early_stop_patience:
                    history.stopped_early = True
                    logger.info("early stop after %d epochs without improvement", stale)
                    break
            if budget_spent:
                logger.info("iteration budget of %d reached", config.max_iterations)
                break
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    return TrainResult(best_model, model, history, iteration, best_metric)


def train_repeats(
    config: TrainConfig,
    repeats: int,
    metrics_factory: Optional[Callable[[int], Optional[MetricsLogger]]] = None,
    threads: Optional[int] = None,
) -> List[TrainResult]:
    """Independent runs with seeds seed, seed+1, ... on the same data."""
    if repeats < 1:
        raise GhostRNNError.invalid_config(f"repeats must be >= 1, got {repeats}")
    base = replace(config, data_seed=config.resolved_data_seed)
    splits = make_splits(base, include_test=False)
    results = []
    for i in range(repeats):
        run_config = replace(base, seed=config.seed + i)
        metrics = metrics_factory(i) if metrics_factory is not None else None
        try:
            results.append(train(run_config, metrics, threads, splits))
        finally:
            if metrics is not None:
                metrics.close()
    return results


__all__ = [
    "Readout",
    "Model",
    "Head",
    "head_for",
    "init_model",
    "task_loss",
    "loss_and_gradients",
    "batch_gradients",
    "AdamState",
    "adam_step",
    "lr_at",
    "global_norm",
    "clip_by_global_norm",
    "predict",
    "dataset_loss",
    "evaluate",
    "metrics_to_dict",
    "Splits",
    "make_splits",
    "eval_split",
    "TrainResult",
    "train_step",
    "train",
    "train_repeats",
]
