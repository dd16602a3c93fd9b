"""Unit tests for the command-line interface."""

import json
import struct

import pytest

from ghostrnn import cli
from ghostrnn.cells import CellKind, init_cell
from ghostrnn.errors import GhostRNNError
from ghostrnn.model_io import load, save
from ghostrnn.tasks import symbol_count
from ghostrnn.trainer import Model, Readout


TRAIN_ARGS = [
    "train", "--task", "adding", "--cell", "ghost", "--state-dim", "4", "--ratio", "2",
    "--length", "5", "--train-count", "20", "--val-count", "8", "--test-count", "8",
    "--batch-size", "5", "--epochs", "2", "--seed", "3", "--threads", "0",
]


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr().out.strip().splitlines()
    return code, json.loads(out[-1]) if out else None


@pytest.fixture
def trained(tmp_path, capsys):
    out_dir = tmp_path / "run"
    code, payload = run(capsys, *TRAIN_ARGS, "--out-dir", str(out_dir))
    assert code == 0
    return out_dir, payload


class TestParser:
    def test_help(self, capsys):
        assert cli.main(["--help"]) == 0

    def test_unknown_flag(self, capsys):
        assert cli.main(["count", "--feature-dim", "2", "--state-dim", "4", "--bogus"]) == 2

    def test_missing_command(self, capsys):
        assert cli.main([]) == 2

    def test_bad_lr_steps(self, capsys):
        assert cli.main(TRAIN_ARGS + ["--lr-steps", "10:x"]) == 2


class TestCount:
    def test_ghost_counts(self, capsys):
        code, payload = run(capsys, "count", "--cell", "ghost", "--feature-dim", "10", "--state-dim", "100", "--ratio", "2")
        assert code == 0
        assert payload["weights_only"] == 19_000
        assert payload["ratio"] == 2
        assert "matched_gru_state_dim" not in payload

    def test_gru_ignores_ratio(self, capsys):
        code, payload = run(capsys, "count", "--cell", "gru", "--feature-dim", "10", "--state-dim", "100", "--ratio", "4")
        assert code == 0
        assert payload["weights_only"] == 33_000
        assert payload["ratio"] == 1

    def test_matched_baseline(self, capsys):
        code, payload = run(
            capsys, "count", "--feature-dim", "10", "--state-dim", "100", "--ratio", "2", "--matched"
        )
        assert code == 0
        assert payload["matched_gru_state_dim"] == 74

    def test_ratio_must_divide_state(self, capsys):
        code, payload = run(capsys, "count", "--feature-dim", "10", "--state-dim", "100", "--ratio", "3")
        assert code == 2
        assert payload is None


class TestGradcheck:
    def test_default_passes(self, capsys):
        code, payload = run(capsys, "gradcheck")
        assert code == 0
        assert payload["passed"] is True
        assert payload["max_rel_error"] < 1e-5

    def test_coarse_step_fails(self, capsys):
        code, payload = run(capsys, "gradcheck", "--eps", "1e-1")
        assert code == 4
        assert payload["passed"] is False

    def test_non_positive_eps(self, capsys):
        assert cli.main(["gradcheck", "--eps", "0"]) == 2


class TestTrain:
    def test_outputs_written(self, trained):
        out_dir, payload = trained
        for name in ("config.json", "metrics.jsonl", "best.grnn", "final.grnn"):
            assert (out_dir / name).exists()
        assert payload["weights_only"] == 40
        assert payload["epochs"] == 2
        assert payload["val_metric"] == "mse"
        assert len((out_dir / "metrics.jsonl").read_text().splitlines()) == 2

    def test_rerun_is_byte_identical(self, trained, tmp_path, capsys):
        first, _ = trained
        second = tmp_path / "again"
        code, _ = run(capsys, *TRAIN_ARGS, "--out-dir", str(second))
        assert code == 0
        for name in ("metrics.jsonl", "best.grnn", "final.grnn", "config.json"):
            assert (first / name).read_bytes() == (second / name).read_bytes()

    def test_config_file_with_overrides(self, tmp_path, capsys):
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps({
            "task": "adding", "cell": "gru", "state_dim": 3, "length": 4,
            "train_count": 10, "val_count": 5, "test_count": 5, "batch_size": 5, "max_epochs": 3,
        }))
        out_dir = tmp_path / "cfg"
        code, payload = run(
            capsys, "train", "--config", str(config_path), "--epochs", "1", "--threads", "0", "--out-dir", str(out_dir)
        )
        assert code == 0
        assert payload["epochs"] == 1
        written = json.loads((out_dir / "config.json").read_text())
        assert written["cell"] == "gru"
        assert written["max_epochs"] == 1

    def test_repeats(self, tmp_path, capsys):
        out_dir = tmp_path / "rep"
        code, payload = run(capsys, *TRAIN_ARGS, "--epochs", "1", "--repeats", "2", "--out-dir", str(out_dir))
        assert code == 0
        assert payload["repeats"] == 2
        assert [r["seed"] for r in payload["runs"]] == [3, 4]
        assert (out_dir / "run_1" / "best.grnn").exists()
        assert (out_dir / "run_2" / "best.grnn").exists()
        assert json.loads((out_dir / "config.json").read_text())["data_seed"] == 3

    def test_invalid_state_dim(self, tmp_path, capsys):
        assert cli.main(TRAIN_ARGS + ["--ratio", "3", "--out-dir", str(tmp_path / "bad")]) == 2

    def test_divergence_exit_code(self, tmp_path, capsys, monkeypatch):
        last_good = Model(init_cell(CellKind.GRU, 2, 3, 1, seed=0))

        def diverge(*args, **kwargs):
            error = GhostRNNError.divergence("training loss is not finite: nan")
            error.last_good = last_good
            raise error

        monkeypatch.setattr(cli, "train", diverge)
        out_dir = tmp_path / "div"
        assert cli.main(TRAIN_ARGS + ["--out-dir", str(out_dir)]) == 3
        assert load(str(out_dir / "last_good.grnn")).cell.state_dim == 3


class TestEvalAnalyzeExport:
    def test_eval_infers_task(self, trained, capsys):
        out_dir, _ = trained
        code, payload = run(
            capsys, "eval", "--checkpoint", str(out_dir / "best.grnn"), "--length", "5", "--test-count", "8"
        )
        assert code == 0
        assert payload["task"] == "adding"
        assert payload["count"] == 8
        assert set(payload["metrics"]) == {"mse"}

    def test_eval_corrupt_checkpoint(self, tmp_path, capsys):
        path = tmp_path / "junk.grnn"
        path.write_bytes(b"JUNKJUNKJUNK")
        assert cli.main(["eval", "--checkpoint", str(path)]) == 2

    def test_eval_bad_tensor_name(self, tmp_path, capsys):
        path = tmp_path / "badname.grnn"
        header = struct.pack("<4sIBBIIIII", b"GRNN", 1, 0, 0, 2, 3, 1, 0, 1)
        path.write_bytes(header + struct.pack("<H", 1) + b"\xff" + struct.pack("<BI", 1, 3) + bytes(24))
        assert cli.main(["eval", "--checkpoint", str(path)]) == 2

    @pytest.mark.parametrize("n_classes", [2, 5])
    def test_eval_infers_classify_from_readout(self, tmp_path, capsys, n_classes):
        cell = init_cell(CellKind.GHOST, symbol_count(n_classes), 4, 2, seed=1)
        path = tmp_path / "classify.grnn"
        save(Model(cell, Readout.init(cell.full_dim, n_classes, 1, len(cell.tensors()))), str(path))
        code, payload = run(capsys, "eval", "--checkpoint", str(path), "--length", "6", "--test-count", "10")
        assert code == 0
        assert payload["task"] == "classify"
        assert set(payload["metrics"]) == {"accuracy"}

    def test_eval_cell_only_needs_task(self, tmp_path, capsys):
        path = tmp_path / "cell.grnn"
        save(Model(init_cell(CellKind.GRU, 2, 3, 1, seed=1)), str(path))
        assert cli.main(["eval", "--checkpoint", str(path)]) == 2

    def test_analyze_writes_report(self, trained, tmp_path, capsys):
        out_dir, _ = trained
        analysis = tmp_path / "analysis"
        code, payload = run(
            capsys, "analyze", "--checkpoint", str(out_dir / "best.grnn"),
            "--length", "5", "--count", "2", "--out-dir", str(analysis),
        )
        assert code == 0
        assert (payload["m"], payload["n"]) == (4, 10)
        for name in ("singular_values.csv", "contribution.csv", "similarity.csv", "pca_report.json"):
            assert (analysis / name).exists()
        assert len((analysis / "similarity.csv").read_text().splitlines()) == 4

    def test_analyze_column_budget(self, trained, tmp_path, capsys):
        out_dir, _ = trained
        code, payload = run(
            capsys, "analyze", "--checkpoint", str(out_dir / "best.grnn"), "--length", "5",
            "--count", "3", "--max-steps", "7", "--out-dir", str(tmp_path / "budget"),
        )
        assert code == 0
        assert payload["n"] == 7

    def test_export_dataset(self, tmp_path, capsys):
        code, payload = run(
            capsys, "export", "--task", "denoise", "--length", "32", "--count", "3", "--out-dir", str(tmp_path / "data")
        )
        assert code == 0
        assert payload["arrays"]["inputs"]["shape"] == [3, 2, 16]
        assert (tmp_path / "data" / "dataset.json").exists()
        assert (tmp_path / "data" / "dataset.inputs.f64").stat().st_size == 3 * 32 * 8

    def test_export_bad_length(self, tmp_path, capsys):
        assert cli.main(["export", "--task", "denoise", "--length", "20", "--out-dir", str(tmp_path / "x")]) == 2
