"""Synthetic tasks and their evaluation metrics."""

from ghostrnn.tasks.datasets import (
    FRAME_SIZE,
    Dataset,
    LabeledSequence,
    TaskKind,
    class_of_pulses,
    gen_adding,
    gen_denoise,
    gen_order_classify,
    generate,
    pulses_for_class,
    symbol_count,
    task_feature_dim,
)
from ghostrnn.tasks.metrics import accuracy, improvement, mse, sdr, si_sdr


__all__ = [
    "FRAME_SIZE",
    "Dataset",
    "LabeledSequence",
    "TaskKind",
    "class_of_pulses",
    "gen_adding",
    "gen_denoise",
    "gen_order_classify",
    "generate",
    "pulses_for_class",
    "symbol_count",
    "task_feature_dim",
    "accuracy",
    "improvement",
    "mse",
    "sdr",
    "si_sdr",
]
