"""Checkpoint files and tabular exports.

Checkpoint layout (all integers unsigned little-endian, floats f64 LE):

    magic          4 bytes  b"GRNN"
    format_version u32      1
    cell_kind      u8       0 = gru, 1 = ghost
    activation     u8       0 = tanh, 1 = sigmoid, 2 = identity
    feature_dim    u32
    state_dim      u32      full state width
    ratio          u32
    ghost_dim      u32
    tensor_count   u32
    tensor_count x:
        name_len   u16, name UTF-8
        rank       u8, dims u32 x rank
        values     f64 x prod(dims), row-major

Zero-size tensors (the ghost path of an r = 1 cell) are not written; the
loader rebuilds them from the header dims.
"""

import json
import logging
import math
import os
import struct
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ghostrnn.cells import (
    Activation,
    CellKind,
    CellParams,
    GhostParams,
    GruParams,
    GHOST_TENSOR_ORDER,
    GRU_TENSOR_ORDER,
)
from ghostrnn.errors import CheckpointError, GhostRNNError
from ghostrnn.tasks import Dataset
from ghostrnn.trainer import Model, Readout


logger = logging.getLogger("ghostrnn.model_io")

MAGIC = b"GRNN"
FORMAT_VERSION = 1
READOUT_TENSORS = ("W_out", "b_out")

_HEADER = struct.Struct("<4sIBBIIIII")
_CELL_TAGS = {CellKind.GRU: 0, CellKind.GHOST: 1}
_ACTIVATION_TAGS = {Activation.TANH: 0, Activation.SIGMOID: 1, Activation.IDENTITY: 2}


@dataclass(frozen=True)
class CheckpointHeader:
    kind: CellKind
    activation: Activation
    feature_dim: int
    state_dim: int
    ratio: int
    ghost_dim: int
    version: int = FORMAT_VERSION


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------

def _split(params: Union[CellParams, Model]) -> Tuple[CellParams, Dict[str, np.ndarray]]:
    cell = getattr(params, "cell", params)
    readout = getattr(params, "readout", None)
    extra = readout.tensors() if readout is not None else {}
    return cell, extra


def _header_for(cell: CellParams) -> CheckpointHeader:
    activation = cell.phi.activation if isinstance(cell, GhostParams) else Activation.TANH
    ghost_dim = cell.ghost_dim if isinstance(cell, GhostParams) else 0
    return CheckpointHeader(
        kind=cell.kind,
        activation=activation,
        feature_dim=cell.feature_dim,
        state_dim=cell.state_dim,
        ratio=cell.ratio,
        ghost_dim=ghost_dim,
    )


def to_bytes(params: Union[CellParams, Model]) -> bytes:
    """Serialize a cell or a full model into checkpoint bytes."""
    cell, extra = _split(params)
    header = _header_for(cell)
    tensors = dict(cell.tensors())
    tensors.update(extra)
    for name, value in tensors.items():
        if not np.all(np.isfinite(value)):
            raise GhostRNNError.non_finite(f"tensor {name} has non-finite values; refusing to save")
    written = [(name, value) for name, value in tensors.items() if value.size > 0]

    parts = [
        _HEADER.pack(
            MAGIC,
            header.version,
            _CELL_TAGS[header.kind],
            _ACTIVATION_TAGS[header.activation],
            header.feature_dim,
            header.state_dim,
            header.ratio,
            header.ghost_dim,
            len(written),
        )
    ]
    for name, value in written:
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    return b"".join(parts)


def save(params: Union[CellParams, Model], path: str) -> None:
    """Write ``params`` to ``path`` in checkpoint format."""
    data = to_bytes(params)
    try:
        with open(path, "wb") as f:
            f.write(data)
    except OSError as e:
        raise CheckpointError.io_error(path, e) from e
    logger.debug("saved checkpoint %s (%d bytes)", path, len(data))


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------

class _Reader:
    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def take(self, n: int, what: str) -> bytes:
        available = len(self._data) - self._pos
        if n > available:
            raise CheckpointError.truncation(what, n, available)
        chunk = self._data[self._pos:self._pos + n]
        self._pos += n
        return chunk

    def unpack(self, fmt: str, what: str) -> Tuple[Any, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    @property
    def remaining(self) -> int:
        return len(self._data) - self._pos


def read_tensor_table(data: bytes) -> Tuple[CheckpointHeader, Dict[str, np.ndarray]]:
    """Parse header and tensor table without checking them against a cell layout."""
    reader = _Reader(data)
    available = reader.remaining
    if available < len(MAGIC):
        raise CheckpointError.truncation("magic", len(MAGIC), available)
    magic = bytes(data[:len(MAGIC)])
    if magic != MAGIC:
        raise CheckpointError.bad_magic(magic)
    magic, version, kind_tag, act_tag, f, s, r, ghost, count = reader.unpack(_HEADER.format, "header")
    if version != FORMAT_VERSION:
        raise CheckpointError.bad_version(version)
    kinds = {tag: kind for kind, tag in _CELL_TAGS.items()}
    activations = {tag: act for act, tag in _ACTIVATION_TAGS.items()}
    if kind_tag not in kinds:
        raise CheckpointError.shape(f"unknown cell_kind tag {kind_tag}")
    if act_tag not in activations:
        raise CheckpointError.shape(f"unknown activation tag {act_tag}")
    header = CheckpointHeader(kinds[kind_tag], activations[act_tag], f, s, r, ghost, version)

    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H", "tensor name length")
        raw_name = reader.take(name_len, "tensor name")
        try:
            name = raw_name.decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError.shape(f"tensor name {bytes(raw_name)!r} is not valid UTF-8") from None
        if name in tensors:
            raise CheckpointError.shape(f"duplicate tensor name '{name}'")
        (rank,) = reader.unpack("<B", f"rank of {name}")
        dims = reader.unpack(f"<{rank}I", f"dims of {name}")
        # Python ints, so huge dims cannot wrap before the length check in take()
        size = math.prod(dims)
        raw = reader.take(8 * size, f"values of {name}")
        tensors[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)
    if reader.remaining:
        raise CheckpointError.shape(f"{reader.remaining} trailing bytes after the tensor table")
    return header, tensors


def expected_shapes(header: CheckpointHeader) -> Dict[str, Tuple[int, ...]]:
    """Cell tensor shapes implied by the header dims."""
    f, s = header.feature_dim, header.state_dim
    if header.kind is CellKind.GRU:
        if header.ratio != 1 or header.ghost_dim != 0:
            raise CheckpointError.shape(
                f"GRU header must have ratio 1 and ghost_dim 0, got {header.ratio} and {header.ghost_dim}"
            )
        shapes = {name: (s,) for name in GRU_TENSOR_ORDER if name.startswith("b_")}
        shapes.update({"W_ir": (s, f), "W_iz": (s, f), "W_ic": (s, f)})
        shapes.update({"W_hr": (s, s), "W_hz": (s, s), "W_hc": (s, s)})
        return shapes
    if header.ratio < 1 or s % header.ratio != 0:
        raise CheckpointError.shape(f"header ratio {header.ratio} does not divide state_dim {s}")
    k = s // header.ratio
    ghost = s - k
    if header.ghost_dim != ghost:
        raise CheckpointError.shape(f"header ghost_dim {header.ghost_dim} does not match {s} - {k}")
    shapes = {name: (k,) for name in GHOST_TENSOR_ORDER if name.startswith("b_")}
    shapes["b_phi"] = (ghost,)
    shapes.update({"W_ir": (k, f), "W_iz": (k, f), "W_ic": (k, f)})
    shapes.update({"W_hr": (k, s), "W_hz": (k, s), "W_hc": (k, k)})
    shapes.update({"W_gc": (k, ghost), "W_phi": (ghost, k)})
    return shapes


def from_bytes(data: bytes) -> Model:
    """Rebuild the model stored in checkpoint bytes.

    A checkpoint without readout tensors loads as a model whose readout
    is None.
    """
    header, tensors = read_tensor_table(data)
    shapes = expected_shapes(header)
    cell_tensors: Dict[str, np.ndarray] = {}
    for name, shape in shapes.items():
        if name not in tensors:
            if 0 in shape:
                cell_tensors[name] = np.zeros(shape)
                continue
            raise CheckpointError.shape(f"tensor {name} missing from checkpoint")
        value = tensors.pop(name)
        if value.shape != shape:
            raise CheckpointError.shape(f"tensor {name} has shape {value.shape}, expected {shape}")
        cell_tensors[name] = value

    readout: Optional[Readout] = None
    present = [name for name in READOUT_TENSORS if name in tensors]
    if present:
        if len(present) != len(READOUT_TENSORS):
            raise CheckpointError.shape("readout needs both W_out and b_out")
        try:
            readout = Readout(tensors.pop("W_out"), tensors.pop("b_out"))
        except GhostRNNError as e:
            raise CheckpointError.shape(f"readout: {e.message}") from e
    if tensors:
        raise CheckpointError.shape(f"unexpected tensors in checkpoint: {', '.join(sorted(tensors))}")

    try:
        if header.kind is CellKind.GRU:
            cell: CellParams = GruParams.from_tensors(cell_tensors)
        else:
            cell = GhostParams.from_tensors(cell_tensors, header.activation)
    except GhostRNNError as e:
        raise CheckpointError.shape(e.message) from e
    if readout is not None and readout.input_dim != cell.full_dim:
        raise CheckpointError.shape(
            f"readout reads {readout.input_dim} units but the cell state has {cell.full_dim}"
        )
    return Model(cell, readout)


def load(path: str) -> Model:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CheckpointError.io_error(path, e) from e
    return from_bytes(data)


# ---------------------------------------------------------------------------
# Tabular export
# ---------------------------------------------------------------------------

def format_value(value: Union[int, float], digits: int = 9) -> str:
    """Fixed significant digits; integers verbatim; "inf" / "-inf" sentinels."""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        raise GhostRNNError.non_finite("NaN cannot be exported")
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.{digits}g}"


def _write_lines(path: str, lines: Iterable[str]) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            for line in lines:
                f.write(line)
                f.write("\n")
    except OSError as e:
        raise CheckpointError.io_error(path, e) from e


def export_csv(matrix: Union[np.ndarray, Sequence[Sequence[float]]], path: str, digits: int = 9) -> None:
    """Write a matrix as comma-separated rows; a vector is written as one row."""
    if digits < 1:
        raise GhostRNNError.invalid_config(f"digits must be >= 1, got {digits}")
    values = np.asarray(matrix, dtype=np.float64)
    if values.ndim == 1:
        values = values.reshape(1, -1)
    if values.ndim != 2:
        raise GhostRNNError.shape_mismatch(f"export_csv needs a matrix, got shape {values.shape}")
    _write_lines(path, (",".join(format_value(v, digits) for v in row) for row in values))


def export_table(
    path: str,
    header: Sequence[str],
    rows: Iterable[Sequence[Union[int, float]]],
    digits: int = 9,
) -> None:
    """CSV with a header line; integer cells stay integers."""
    lines: List[str] = [",".join(header)]
    lines.extend(",".join(format_value(v, digits) for v in row) for row in rows)
    _write_lines(path, lines)


# ---------------------------------------------------------------------------
# Dataset dump
# ---------------------------------------------------------------------------

def dump_dataset(dataset: Dataset, out_dir: str, name: str = "dataset") -> Dict[str, Any]:
    """Write every dataset array as raw f64 LE plus a JSON sidecar.

    Files are ``<name>.<array>.f64`` and ``<name>.json``; the sidecar lists
    each file with its shape and the generator parameters.
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise CheckpointError.io_error(out_dir, e) from e
    files: Dict[str, Any] = {}
    for array_name, values in dataset.arrays().items():
        filename = f"{name}.{array_name}.f64"
        path = os.path.join(out_dir, filename)
        try:
            with open(path, "wb") as f:
                f.write(np.ascontiguousarray(values, dtype="<f8").tobytes())
        except OSError as e:
            raise CheckpointError.io_error(path, e) from e
        files[array_name] = {"file": filename, "shape": list(values.shape)}
    sidecar = {
        "dtype": "float64",
        "byte_order": "little",
        "task": dataset.task.value,
        "params": dataset.params,
        "arrays": files,
    }
    path = os.path.join(out_dir, f"{name}.json")
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(sidecar, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise CheckpointError.io_error(path, e) from e
    return sidecar


__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "CheckpointHeader",
    "to_bytes",
    "save",
    "read_tensor_table",
    "expected_shapes",
    "from_bytes",
    "load",
    "format_value",
    "export_csv",
    "export_table",
    "dump_dataset",
]
