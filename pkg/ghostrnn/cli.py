"""Command-line interface: train, eval, analyze, count, gradcheck, export.

Results go to stdout as one JSON line; diagnostics go to stderr. Exit
codes: 0 ok, 2 usage or input error, 3 training divergence, 4 a numerical
check failed.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

from ghostrnn.backprop import LossFn, final_state_cross_entropy, final_state_mse, grad_check, quadratic_loss
from ghostrnn.cells import Activation, CellKind, init_cell
from ghostrnn.complexity import allocated_weights, count_report
from ghostrnn.config import TrainConfig, get_log_level, get_thread_count
from ghostrnn.errors import EXIT_OK, DivergenceError, GhostRNNError, cli_errors
from ghostrnn.kernel import Xoshiro256StarStar, derive_seed
from ghostrnn.logging import MetricsLogger, setup_logging
from ghostrnn.model_io import dump_dataset, load, save
from ghostrnn.redundancy import (
    DEFAULT_MAX_STEPS,
    DEFAULT_THRESHOLD,
    collect_feature_map,
    pca_contribution,
    similarity_matrix,
    write_analysis,
)
from ghostrnn.tasks import FRAME_SIZE, TaskKind, generate, symbol_count, task_feature_dim
from ghostrnn.trainer import (
    PRIMARY_METRIC,
    Model,
    TrainResult,
    eval_split,
    evaluate,
    metrics_to_dict,
    train,
)


logger = logging.getLogger("ghostrnn.cli")

DEFAULTS = TrainConfig()
# derive_seed index of the analysis sequences and the gradcheck inputs
ANALYZE_STREAM = 4
GRADCHECK_STREAM = 1 << 33


def _emit(payload: Dict[str, Any]) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")
    sys.stdout.flush()


def _lr_steps(text: str) -> List[Tuple[int, float]]:
    """Parse "10000:0.1,20000:0.1"; an empty string means no steps."""
    steps: List[Tuple[int, float]] = []
    for item in filter(None, (part.strip() for part in text.split(","))):
        try:
            step, mult = item.split(":")
            steps.append((int(step), float(mult)))
        except ValueError as e:
            raise argparse.ArgumentTypeError(f"bad lr step '{item}', expected ITERATION:MULTIPLIER") from e
    return steps


def _default(name: str) -> str:
    value = getattr(DEFAULTS, name)
    if hasattr(value, "value"):
        value = value.value
    if name == "lr_steps":
        value = ",".join(f"{s}:{m:g}" for s, m in value)
    return f"(default: {value})"


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_data_flags(parser: argparse.ArgumentParser, count_flags: bool = True) -> None:
    parser.add_argument("--task", choices=[t.value for t in TaskKind], default=None,
                        help=f"Synthetic task {_default('task')}")
    parser.add_argument("--length", type=int, default=None,
                        help="Sequence length (default: 50 for adding/classify, 256 for denoise)")
    parser.add_argument("--n-classes", type=int, default=None,
                        help=f"Classes of the classify task {_default('n_classes')}")
    parser.add_argument("--seed", type=int, default=None, help=f"Run seed {_default('seed')}")
    parser.add_argument("--data-seed", type=int, default=None,
                        help="Dataset seed (default: the run seed)")
    if count_flags:
        parser.add_argument("--test-count", type=int, default=None,
                            help=f"Test split size {_default('test_count')}")


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="JSON TrainConfig file; flags override its values")
    _add_data_flags(parser)
    parser.add_argument("--cell", choices=[k.value for k in CellKind], default=None,
                        help=f"Recurrent cell {_default('cell')}")
    parser.add_argument("--state-dim", type=int, default=None, help=f"Full state size {_default('state_dim')}")
    parser.add_argument("--ratio", type=int, default=None,
                        help=f"Full-to-intrinsic state ratio r, ghost cell only {_default('ratio')}")
    parser.add_argument("--activation", choices=[a.value for a in Activation], default=None,
                        help=f"Cheap-operation activation {_default('activation')}")
    parser.add_argument("--train-count", type=int, default=None, help=f"Train split size {_default('train_count')}")
    parser.add_argument("--val-count", type=int, default=None, help=f"Validation split size {_default('val_count')}")
    parser.add_argument("--epochs", type=int, default=None, help=f"Maximum epochs {_default('max_epochs')}")
    parser.add_argument("--max-iterations", type=int, default=None,
                        help="Stop after this many updates (default: no limit)")
    parser.add_argument("--batch-size", type=int, default=None, help=f"Mini-batch size {_default('batch_size')}")
    parser.add_argument("--lr", type=float, default=None, help=f"Initial Adam learning rate {_default('initial_lr')}")
    parser.add_argument("--lr-steps", type=_lr_steps, default=None,
                        help=f"Step-down schedule ITER:MULT,... {_default('lr_steps')}")
    parser.add_argument("--weight-decay", type=float, default=None,
                        help=f"Decoupled weight decay {_default('weight_decay')}")
    parser.add_argument("--clip-norm", type=float, default=None,
                        help=f"Global gradient-norm clip {_default('clip_norm')}")
    parser.add_argument("--patience", type=int, default=None,
                        help=f"Early-stopping patience in epochs {_default('early_stop_patience')}")
    parser.add_argument("--reduction-chunk", type=int, default=None,
                        help=f"Samples per gradient chunk {_default('reduction_chunk')}")
    parser.add_argument("--record-wall-time", action="store_const", const=True, default=None,
                        help="Add per-epoch wall time to metrics.jsonl (default: off)")
    parser.add_argument("--threads", type=int, default=None,
                        help="Gradient worker threads, 0 = sequential (default: $GHOSTRNN_THREADS or 0)")
    parser.add_argument("--repeats", type=int, default=1,
                        help="Independent runs with seeds seed, seed+1, ... (default: 1)")
    parser.add_argument("--out-dir", default="runs/train", help="Output directory (default: runs/train)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ghostrnn",
        description="GhostRNN cells: training, redundancy analysis, parameter accounting",
    )
    parser.add_argument(
        "--log-level",
        type=str,
        default=get_log_level(),
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level (default: $GHOSTRNN_LOG_LEVEL or INFO)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="Train a model on a synthetic task")
    _add_train_flags(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="Evaluate a checkpoint on a task's test split")
    p.add_argument("--checkpoint", required=True, help="Checkpoint file")
    p.add_argument("--config", default=None, help="JSON TrainConfig file for the task parameters")
    _add_data_flags(p)
    p.add_argument("--metrics", default=None,
                   help="Comma-separated metric names (default: all metrics of the task)")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("analyze", help="PCA contribution and cosine similarity of hidden states")
    p.add_argument("--checkpoint", required=True, help="Checkpoint file")
    _add_data_flags(p, count_flags=False)
    p.add_argument("--count", type=int, default=1, help="Number of sequences to run (default: 1)")
    p.add_argument("--max-steps", type=int, default=DEFAULT_MAX_STEPS,
                   help=f"Feature-map column budget (default: {DEFAULT_MAX_STEPS})")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD,
                   help=f"Contribution threshold for k (default: {DEFAULT_THRESHOLD})")
    p.add_argument("--uncentered", action="store_true", help="Skip row-mean centering (default: centered)")
    p.add_argument("--unsquared", action="store_true", help="Use singular values, not their squares (default: squared)")
    p.add_argument("--digits", type=int, default=9, help="Significant digits in CSV output (default: 9)")
    p.add_argument("--out-dir", required=True, help="Output directory")
    p.set_defaults(handler=cmd_analyze)

    p = sub.add_parser("count", help="Weights, biases and MACs of a cell")
    p.add_argument("--cell", choices=[k.value for k in CellKind], default=CellKind.GHOST.value,
                   help="Recurrent cell (default: ghost)")
    p.add_argument("--feature-dim", type=int, required=True, help="Input feature size")
    p.add_argument("--state-dim", type=int, required=True, help="Full state size")
    p.add_argument("--ratio", type=int, default=2, help="Full-to-intrinsic ratio r, ghost only (default: 2)")
    p.add_argument("--matched", action="store_true",
                   help="Add the largest GRU state size within the GhostRNN weight budget")
    p.set_defaults(handler=cmd_count)

    p = sub.add_parser("gradcheck", help="Compare BPTT with central differences")
    p.add_argument("--cell", choices=[k.value for k in CellKind], default=CellKind.GHOST.value,
                   help="Recurrent cell (default: ghost)")
    p.add_argument("--feature-dim", type=int, default=3, help="Input feature size (default: 3)")
    p.add_argument("--state-dim", type=int, default=6, help="Full state size (default: 6)")
    p.add_argument("--ratio", type=int, default=2, help="Full-to-intrinsic ratio r, ghost only (default: 2)")
    p.add_argument("--activation", choices=[a.value for a in Activation], default=Activation.TANH.value,
                   help="Cheap-operation activation (default: tanh)")
    p.add_argument("--length", type=int, default=5, help="Sequence length (default: 5)")
    p.add_argument("--loss", choices=["mse", "ce", "quadratic"], default="mse",
                   help="Loss on the states (default: mse)")
    p.add_argument("--seed", type=int, default=12, help="Seed for weights and inputs (default: 12)")
    p.add_argument("--eps", type=float, default=1e-5, help="Finite-difference step (default: 1e-5)")
    p.add_argument("--tol", type=float, default=1e-5, help="Maximum relative error to pass (default: 1e-5)")
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("export", help="Dump a generated dataset as raw f64 plus a JSON sidecar")
    _add_data_flags(p, count_flags=False)
    p.add_argument("--count", type=int, default=100, help="Number of samples (default: 100)")
    p.add_argument("--name", default="dataset", help="File name prefix (default: dataset)")
    p.add_argument("--out-dir", required=True, help="Output directory")
    p.set_defaults(handler=cmd_export)
    return parser


# ---------------------------------------------------------------------------
# Config assembly
# ---------------------------------------------------------------------------

_FLAG_FIELDS = {
    "task": "task",
    "cell": "cell",
    "state_dim": "state_dim",
    "ratio": "ratio",
    "activation": "activation",
    "length": "length",
    "n_classes": "n_classes",
    "train_count": "train_count",
    "val_count": "val_count",
    "test_count": "test_count",
    "seed": "seed",
    "data_seed": "data_seed",
    "batch_size": "batch_size",
    "epochs": "max_epochs",
    "max_iterations": "max_iterations",
    "lr": "initial_lr",
    "lr_steps": "lr_steps",
    "weight_decay": "weight_decay",
    "clip_norm": "clip_norm",
    "patience": "early_stop_patience",
    "reduction_chunk": "reduction_chunk",
    "record_wall_time": "record_wall_time",
}


def _flag_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        field_name: getattr(args, flag)
        for flag, field_name in _FLAG_FIELDS.items()
        if getattr(args, flag, None) is not None
    }


def config_from_args(args: argparse.Namespace, **fixed: Any) -> TrainConfig:
    """TrainConfig from --config (if any) with flag values laid over it."""
    overrides = _flag_overrides(args)
    overrides.update(fixed)
    if getattr(args, "config", None):
        return TrainConfig.from_file(args.config, **overrides)
    return TrainConfig.from_dict(overrides)


def _infer_task(args: argparse.Namespace, model: Model) -> Dict[str, Any]:
    """Task fields implied by the checkpoint's input and readout widths."""
    if args.task is not None or getattr(args, "config", None):
        return {}
    f = model.cell.feature_dim
    out = model.readout.output_dim if model.readout is not None else None
    if out == 1 and f == task_feature_dim(TaskKind.ADDING):
        return {"task": TaskKind.ADDING.value}
    if out == FRAME_SIZE and f == FRAME_SIZE:
        return {"task": TaskKind.DENOISE.value}
    if out is not None and out >= 2 and f == symbol_count(out):
        return {"task": TaskKind.CLASSIFY.value, "n_classes": out}
    raise GhostRNNError.invalid_config(
        f"cannot tell the task of a checkpoint with feature_dim {f} and output_dim {out}; pass --task"
    )


def _data_config(args: argparse.Namespace, model: Model) -> TrainConfig:
    """Task parameters for a loaded model; the cell fields mirror the checkpoint."""
    fixed: Dict[str, Any] = {
        "cell": model.cell.kind.value,
        "state_dim": model.cell.state_dim,
        "ratio": model.cell.ratio,
    }
    fixed.update(_infer_task(args, model))
    return config_from_args(args, **fixed)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _run_one(config: TrainConfig, out_dir: str, threads: int) -> TrainResult:
    os.makedirs(out_dir, exist_ok=True)
    config.write(os.path.join(out_dir, "config.json"))
    with MetricsLogger(os.path.join(out_dir, "metrics.jsonl")) as metrics:
        try:
            result = train(config, metrics, threads)
        except DivergenceError as e:
            if e.last_good is not None:
                save(e.last_good, os.path.join(out_dir, "last_good.grnn"))
                logger.error("last good parameters kept in %s", os.path.join(out_dir, "last_good.grnn"))
            raise
        logger.info("run finished in %s: %s", out_dir, metrics.get_stats())
    save(result.model, os.path.join(out_dir, "best.grnn"))
    save(result.final_model, os.path.join(out_dir, "final.grnn"))
    return result


def _run_summary(config: TrainConfig, result: TrainResult) -> Dict[str, Any]:
    report = count_report(config.cell, config.resolved_feature_dim, config.state_dim, config.effective_ratio)
    allocated = allocated_weights(result.model.cell)
    if allocated != report.weights_only:
        raise GhostRNNError.check_failed(
            f"cell holds {allocated} weights but the closed form gives {report.weights_only}"
        )
    return {
        "seed": config.seed,
        "weights_only": report.weights_only,
        "with_biases": report.with_biases,
        "compression_vs_gru": report.compression_vs_gru,
        "best_epoch": result.history.best_epoch,
        "best_val_metric": result.best_val_metric,
        "val_metric": PRIMARY_METRIC[config.task],
        "epochs": len(result.history),
        "iterations": result.iterations,
        "stopped_early": result.history.stopped_early,
    }


@cli_errors
def cmd_train(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    if args.repeats < 1:
        raise GhostRNNError.invalid_config(f"--repeats must be >= 1, got {args.repeats}")
    threads = args.threads if args.threads is not None else get_thread_count()
    if threads < 0:
        raise GhostRNNError.invalid_config(f"--threads must be >= 0, got {threads}")

    if args.repeats == 1:
        result = _run_one(config, args.out_dir, threads)
        _emit(_run_summary(config, result))
        return EXIT_OK

    os.makedirs(args.out_dir, exist_ok=True)
    base = replace(config, data_seed=config.resolved_data_seed)
    base.write(os.path.join(args.out_dir, "config.json"))
    runs = []
    for i in range(args.repeats):
        run_config = replace(base, seed=config.seed + i)
        result = _run_one(run_config, os.path.join(args.out_dir, f"run_{i + 1}"), threads)
        runs.append(_run_summary(run_config, result))
    values = [r["best_val_metric"] for r in runs if r["best_val_metric"] is not None]
    _emit({
        "repeats": args.repeats,
        "mean_best_val_metric": sum(values) / len(values) if values else None,
        "val_metric": PRIMARY_METRIC[config.task],
        "runs": runs,
    })
    return EXIT_OK


@cli_errors
def cmd_eval(args: argparse.Namespace) -> int:
    model = load(args.checkpoint)
    config = _data_config(args, model)
    dataset = eval_split(config)
    names = [n.strip() for n in args.metrics.split(",")] if args.metrics else None
    values = evaluate(model, dataset, names)
    _emit({"task": config.task.value, "count": len(dataset), "metrics": metrics_to_dict(values)})
    return EXIT_OK


@cli_errors
def cmd_analyze(args: argparse.Namespace) -> int:
    if args.count < 1:
        raise GhostRNNError.invalid_config(f"--count must be >= 1, got {args.count}")
    model = load(args.checkpoint)
    config = _data_config(args, model)
    sequences = generate(
        config.task,
        derive_seed(config.resolved_data_seed, ANALYZE_STREAM),
        args.count,
        config.resolved_length,
        config.n_classes,
    )
    fm = collect_feature_map(model.cell, list(sequences.inputs), args.max_steps)
    report = pca_contribution(fm, args.threshold, centered=not args.uncentered, squared=not args.unsquared)
    similarity = similarity_matrix(fm)
    suggested = write_analysis(args.out_dir, fm, report, similarity, args.digits)
    _emit({
        "m": fm.m,
        "n": fm.n,
        "k_at_threshold": report.k_at_threshold,
        "suggested_r": suggested,
        "degenerate": report.degenerate,
        "out_dir": args.out_dir,
    })
    return EXIT_OK


@cli_errors
def cmd_count(args: argparse.Namespace) -> int:
    kind = CellKind(args.cell)
    ratio = 1 if kind is CellKind.GRU else args.ratio
    report = count_report(kind, args.feature_dim, args.state_dim, ratio, matched=args.matched)
    payload = {"cell": kind.value, "feature_dim": args.feature_dim, "state_dim": args.state_dim, "ratio": ratio}
    payload.update(report.to_dict())
    _emit(payload)
    return EXIT_OK


def _gradcheck_loss(name: str, rng: Xoshiro256StarStar, length: int, full_dim: int) -> LossFn:
    if name == "ce":
        return final_state_cross_entropy(rng.randbelow(full_dim))
    if name == "quadratic":
        return quadratic_loss(rng.uniform_array(0.5, 1.5, (length, full_dim)))
    return final_state_mse(rng.uniform_array(-0.5, 0.5, full_dim))


@cli_errors
def cmd_gradcheck(args: argparse.Namespace) -> int:
    kind = CellKind(args.cell)
    ratio = 1 if kind is CellKind.GRU else args.ratio
    if args.length < 1:
        raise GhostRNNError.invalid_config(f"--length must be >= 1, got {args.length}")
    if not args.eps > 0.0:
        raise GhostRNNError.invalid_config(f"--eps must be > 0, got {args.eps}")
    cell = init_cell(kind, args.feature_dim, args.state_dim, ratio, args.seed, Activation(args.activation))
    rng = Xoshiro256StarStar(derive_seed(args.seed, GRADCHECK_STREAM))
    xs = rng.normal_array((args.length, args.feature_dim))
    loss = _gradcheck_loss(args.loss, rng, args.length, cell.full_dim)
    error = grad_check(cell, xs, loss, eps=args.eps, enforce_eps_range=False)
    passed = error < args.tol
    _emit({"max_rel_error": error, "tol": args.tol, "passed": passed})
    if not passed:
        raise GhostRNNError.check_failed(
            f"max relative error {error:.3e} exceeds tolerance {args.tol:.3e}",
            max_rel_error=error,
        )
    return EXIT_OK


@cli_errors
def cmd_export(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    dataset = generate(config.task, config.resolved_data_seed, args.count, config.resolved_length, config.n_classes)
    sidecar = dump_dataset(dataset, args.out_dir, args.name)
    _emit({"out_dir": args.out_dir, "task": config.task.value, "arrays": sidecar["arrays"]})
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    setup_logging(args.log_level)
    return args.handler(args)


__all__ = [
    "build_parser",
    "config_from_args",
    "cmd_train",
    "cmd_eval",
    "cmd_analyze",
    "cmd_count",
    "cmd_gradcheck",
    "cmd_export",
    "main",
]
