"""Unit tests for checkpoints and tabular export."""

import csv
import json
import struct

import numpy as np
import pytest

from ghostrnn.cells import CellKind, GhostParams, GruParams, init_cell
from ghostrnn.errors import CheckpointError, ConfigError, ErrorType, NonFiniteError
from ghostrnn.model_io import (
    MAGIC,
    dump_dataset,
    export_csv,
    export_table,
    format_value,
    from_bytes,
    load,
    read_tensor_table,
    save,
    to_bytes,
)
from ghostrnn.tasks import gen_adding, gen_denoise
from ghostrnn.trainer import Model, Readout, predict


def _model(kind=CellKind.GHOST, f=3, s=6, r=2, seed=1):
    cell = init_cell(kind, f, s, r, seed)
    return Model(cell, Readout.init(cell.full_dim, 2, seed, len(cell.tensors())))


def _header(kind_tag=1, f=3, s=6, r=2, ghost=3, count=0, version=1, magic=MAGIC):
    return struct.pack("<4sIBBIIIII", magic, version, kind_tag, 0, f, s, r, ghost, count)


def _entry(name, values):
    values = np.asarray(values, dtype=np.float64)
    encoded = name.encode("utf-8")
    return (
        struct.pack("<H", len(encoded)) + encoded
        + struct.pack("<B", values.ndim) + struct.pack(f"<{values.ndim}I", *values.shape)
        + values.astype("<f8").tobytes()
    )


class TestRoundTrip:
    @pytest.mark.parametrize("kind, r", [(CellKind.GRU, 1), (CellKind.GHOST, 1), (CellKind.GHOST, 2), (CellKind.GHOST, 3)])
    def test_save_load_identity(self, tmp_path, kind, r):
        model = _model(kind, r=r)
        path = str(tmp_path / "model.grnn")
        save(model, path)
        loaded = load(path)
        assert type(loaded.cell) is type(model.cell)
        for name, value in model.tensors().items():
            assert np.array_equal(loaded.tensors()[name], value)
            assert loaded.tensors()[name].shape == value.shape

    def test_save_load_save_bytes(self, tmp_path):
        model = _model()
        first = to_bytes(model)
        again = to_bytes(from_bytes(first))
        assert first == again

    def test_deterministic_bytes(self):
        assert to_bytes(_model(seed=4)) == to_bytes(_model(seed=4))

    def test_r1_omits_ghost_tensors(self):
        header, tensors = read_tensor_table(to_bytes(_model(CellKind.GHOST, r=1)))
        assert header.ghost_dim == 0
        assert header.ratio == 1
        assert "W_phi" not in tensors
        assert "b_phi" not in tensors
        assert "W_gc" not in tensors
        assert "b_gc" in tensors

    def test_cell_only_checkpoint(self):
        cell = init_cell(CellKind.GHOST, 2, 4, 2, seed=0)
        loaded = from_bytes(to_bytes(cell))
        assert loaded.readout is None
        assert loaded.cell.ghost_dim == 2

    def test_activation_preserved(self):
        cell = GhostParams.init(2, 4, 2, seed=0, activation="sigmoid")
        assert from_bytes(to_bytes(cell)).cell.phi.activation.value == "sigmoid"

    def test_loaded_r1_ghost_evaluates_like_gru(self):
        gru = GruParams.init(2, 5, seed=7)
        readout = Readout.init(5, 1, 7, 12)
        ghost_model = from_bytes(to_bytes(Model(GhostParams.from_gru(gru), readout)))
        data = gen_adding(seed=1, count=6, length=7)
        assert np.array_equal(predict(ghost_model, data), predict(Model(gru, readout), data))

    def test_nan_refused(self):
        cell = init_cell(CellKind.GRU, 2, 3, 1, seed=0)
        tensors = dict(cell.tensors())
        tensors["b_ir"] = np.array([0.0, np.nan, 0.0])
        with pytest.raises(NonFiniteError):
            to_bytes(GruParams.from_tensors(tensors))

    def test_io_failure(self, tmp_path):
        with pytest.raises(CheckpointError) as info:
            save(_model(), str(tmp_path / "missing" / "model.grnn"))
        assert info.value.error_type is ErrorType.IO_ERROR


class TestCorruption:
    def test_bad_magic(self):
        data = b"XXXX" + to_bytes(_model())[4:]
        with pytest.raises(CheckpointError) as info:
            from_bytes(data)
        assert info.value.error_type is ErrorType.BAD_MAGIC
        assert "bad magic" in str(info.value)

    def test_bad_version(self):
        data = bytearray(to_bytes(_model()))
        data[4:8] = struct.pack("<I", 2)
        with pytest.raises(CheckpointError) as info:
            from_bytes(bytes(data))
        assert info.value.error_type is ErrorType.BAD_VERSION

    @pytest.mark.parametrize("cut", [2, 20, 40, -8])
    def test_truncation(self, cut):
        data = to_bytes(_model())
        with pytest.raises(CheckpointError) as info:
            from_bytes(data[:cut])
        assert info.value.error_type is ErrorType.TRUNCATION
        assert "truncation" in str(info.value)

    def test_shape_mismatch(self):
        data = bytearray(to_bytes(_model()))
        data[10:14] = struct.pack("<I", 4)  # feature_dim
        with pytest.raises(CheckpointError) as info:
            from_bytes(bytes(data))
        assert info.value.error_type is ErrorType.SHAPE_MISMATCH

    def test_trailing_bytes(self):
        with pytest.raises(CheckpointError):
            from_bytes(to_bytes(_model()) + b"\x00")

    def test_duplicate_name(self):
        data = _header(count=2) + _entry("b_ir", [1.0]) + _entry("b_ir", [2.0])
        with pytest.raises(CheckpointError):
            read_tensor_table(data)

    def test_hand_built_two_tensor_file(self):
        data = (
            _header(count=2)
            + _entry("W_ir", np.arange(9.0).reshape(3, 3))
            + _entry("b_phi", [0.5, -0.5, 1.0])
        )
        header, tensors = read_tensor_table(data)
        assert header.kind is CellKind.GHOST
        assert (header.feature_dim, header.state_dim, header.ratio, header.ghost_dim) == (3, 6, 2, 3)
        assert tensors["W_ir"].shape == (3, 3)
        assert tensors["W_ir"][2, 1] == 7.0
        assert np.array_equal(tensors["b_phi"], [0.5, -0.5, 1.0])
        with pytest.raises(CheckpointError):
            from_bytes(data)

    def test_unknown_cell_tag(self):
        with pytest.raises(CheckpointError):
            read_tensor_table(_header(kind_tag=9))

    def test_name_not_utf8(self):
        data = _header(count=1) + struct.pack("<H", 1) + b"\xff" + struct.pack("<BI", 1, 1) + struct.pack("<d", 1.0)
        with pytest.raises(CheckpointError) as info:
            read_tensor_table(data)
        assert info.value.error_type is ErrorType.SHAPE_MISMATCH
        assert "UTF-8" in str(info.value)

    def test_huge_dims_reported_as_truncation(self):
        # 2**21 * 2**21 * 2**22 * 8 bytes overflows a 64-bit product
        name = b"W_ir"
        data = (
            _header(count=1) + struct.pack("<H", len(name)) + name
            + struct.pack("<B3I", 3, 2**21, 2**21, 2**22) + struct.pack("<d", 1.0)
        )
        with pytest.raises(CheckpointError) as info:
            read_tensor_table(data)
        assert info.value.error_type is ErrorType.TRUNCATION
        assert info.value.details["needed"] == 8 * 2**64


class TestExport:
    def test_single_value(self, tmp_path):
        path = tmp_path / "one.csv"
        export_csv([[1.5]], str(path))
        assert path.read_bytes() == b"1.5\n"

    def test_infinities(self, tmp_path):
        path = tmp_path / "inf.csv"
        export_csv(np.array([[np.inf, -np.inf, 0.25]]), str(path))
        assert path.read_text() == "inf,-inf,0.25\n"

    def test_nan_rejected(self, tmp_path):
        with pytest.raises(NonFiniteError):
            export_csv([[np.nan]], str(tmp_path / "nan.csv"))

    def test_symmetric_reparse(self, tmp_path):
        rng = np.random.default_rng(0)
        a = rng.uniform(-1, 1, (5, 5))
        sym = (a + a.T) / 2.0
        path = tmp_path / "sym.csv"
        export_csv(sym, str(path), digits=9)
        with open(path, newline="") as f:
            parsed = np.array([[float(v) for v in row] for row in csv.reader(f)])
        assert np.array_equal(parsed, parsed.T)
        assert np.allclose(parsed, sym, rtol=1e-8, atol=0.0)

    def test_format_value(self):
        assert format_value(3) == "3"
        assert format_value(np.int64(12)) == "12"
        assert format_value(1.0 / 3.0, 4) == "0.3333"
        assert format_value(float("inf")) == "inf"

    def test_digits_validated(self, tmp_path):
        with pytest.raises(ConfigError):
            export_csv([[1.0]], str(tmp_path / "x.csv"), digits=0)

    def test_table_header_and_integers(self, tmp_path):
        path = tmp_path / "table.csv"
        export_table(str(path), ("k", "value"), [(1, 0.5), (2, 1.0)])
        assert path.read_text() == "k,value\n1,0.5\n2,1\n"


class TestDatasetDump:
    def test_raw_files_and_sidecar(self, tmp_path):
        data = gen_denoise(seed=1, count=2, length=32)
        sidecar = dump_dataset(data, str(tmp_path), "val")
        assert sidecar["task"] == "denoise"
        assert sidecar["arrays"]["inputs"]["shape"] == [2, 2, 16]
        raw = np.frombuffer((tmp_path / "val.inputs.f64").read_bytes(), dtype="<f8").reshape(2, 2, 16)
        assert np.array_equal(raw, data.inputs)
        with open(tmp_path / "val.json", encoding="utf-8") as f:
            assert json.load(f)["params"]["seed"] == 1
        assert (tmp_path / "val.snr_db.f64").exists()
