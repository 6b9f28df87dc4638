"""End-to-end command-line workflows and exit codes."""

import os

import numpy as np
import pytest

from lpcanet.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from lpcanet.data_io import read_pgm, write_pgm, write_ppm


def run(*argv):
    return main(list(argv))


def synth(out, n=4, seed=0, size="64x64"):
    assert run("synth", "--out", str(out), "--n", str(n), "--seed", str(seed),
               "--size", size) == EXIT_OK


def dir_bytes(path):
    return {f: (path / f).read_bytes() for f in sorted(os.listdir(path))}


class TestSynthCommand:
    def test_writes_triples_manifest_and_resolved_config(self, tmp_path):
        out = tmp_path / "data"
        assert run("synth", "--out", str(out), "--n", "8") == EXIT_OK
        files = sorted(os.listdir(out))
        assert sum(f.endswith((".ppm", ".pgm")) for f in files) == 24
        assert "manifest.tsv" in files and "config.resolved" in files
        assert len((out / "manifest.tsv").read_text().splitlines()) == 8

    def test_rerun_with_same_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        synth(a, n=4, seed=3)
        synth(b, n=4, seed=3)
        assert dir_bytes(a) == dir_bytes(b)

    def test_nonempty_out_dir_needs_force(self, tmp_path):
        out = tmp_path / "data"
        synth(out, n=2)
        assert run("synth", "--out", str(out), "--n", "2") == EXIT_DATA
        assert run("synth", "--out", str(out), "--n", "2", "--force") == EXIT_OK

    def test_bad_size_is_usage_error(self, tmp_path):
        assert run("synth", "--out", str(tmp_path / "x"), "--n", "1",
                   "--size", "banana") == EXIT_USAGE


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """One shared synth + short training run for the train/eval/infer tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    synth(data, n=4, seed=0)
    out = root / "run"
    code = run("train", "--data", str(data / "manifest.tsv"), "--out", str(out),
               "--epochs", "2", "--batch", "2", "--eval-every", "1",
               "--checkpoint-every", "2", "--seed", "0")
    assert code == EXIT_OK
    return data, out


class TestTrainCommand:
    def test_outputs(self, trained):
        _, out = trained
        names = set(os.listdir(out))
        assert {"config.resolved", "train_log.csv", "checkpoint_0002.lpca",
                "checkpoint_last.lpca"} <= names
        resolved = (out / "config.resolved").read_text()
        assert "model.cam=enabled" in resolved
        assert "train.seed=0" in resolved

    def test_seeded_rerun_reproduces_log(self, trained, tmp_path):
        data, out = trained
        out2 = tmp_path / "run2"
        assert run("train", "--data", str(data / "manifest.tsv"), "--out", str(out2),
                   "--epochs", "2", "--batch", "2", "--eval-every", "1",
                   "--checkpoint-every", "2", "--seed", "0") == EXIT_OK
        assert (out / "train_log.csv").read_bytes() == (out2 / "train_log.csv").read_bytes()
        assert (out / "checkpoint_last.lpca").read_bytes() == \
            (out2 / "checkpoint_last.lpca").read_bytes()

    def test_no_cam_flag_recorded(self, tmp_path):
        data = tmp_path / "d"
        synth(data, n=2, seed=1)
        out = tmp_path / "r"
        assert run("train", "--data", str(data / "manifest.tsv"), "--out", str(out),
                   "--epochs", "1", "--batch", "2", "--no-cam") == EXIT_OK
        assert "model.cam=disabled" in (out / "config.resolved").read_text()

    def test_size_mismatch_rejected(self, tmp_path):
        data = tmp_path / "d"
        synth(data, n=1, size="128x128", seed=2)
        assert run("train", "--data", str(data / "manifest.tsv"),
                   "--out", str(tmp_path / "r"), "--epochs", "1") == EXIT_DATA


class TestEvalCommand:
    def test_reports_and_artifacts(self, trained, tmp_path):
        data, run_dir = trained
        out = tmp_path / "eval"
        assert run("eval", "--data", str(data / "manifest.tsv"),
                   "--checkpoint", str(run_dir / "checkpoint_last.lpca"),
                   "--out", str(out)) == EXIT_OK
        names = set(os.listdir(out))
        assert {"metrics.csv", "pr_curve.csv", "roc_curve.csv"} <= names
        assert sum(n.endswith("_pred.pgm") for n in names) == 4
        lines = (out / "metrics.csv").read_text().splitlines()
        assert lines[0] == "id,MAE,IoU,maxF,maxE,S"
        assert len(lines) == 6 and lines[-1].startswith("DATASET,")
        assert len((out / "pr_curve.csv").read_text().splitlines()) == 257

    def test_empty_manifest_is_clean_error_without_csv(self, trained, tmp_path):
        _, run_dir = trained
        empty = tmp_path / "empty.tsv"
        empty.write_text("")
        out = tmp_path / "eval"
        assert run("eval", "--data", str(empty),
                   "--checkpoint", str(run_dir / "checkpoint_last.lpca"),
                   "--out", str(out)) == EXIT_DATA
        assert not (out / "metrics.csv").exists()

    def test_corrupt_checkpoint_rejected(self, trained, tmp_path):
        data, run_dir = trained
        bad = tmp_path / "bad.lpca"
        blob = bytearray((run_dir / "checkpoint_last.lpca").read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        bad.write_bytes(bytes(blob))
        assert run("eval", "--data", str(data / "manifest.tsv"),
                   "--checkpoint", str(bad), "--out", str(tmp_path / "e")) == EXIT_DATA


class TestInferCommand:
    def test_deterministic_output(self, trained, tmp_path):
        data, run_dir = trained
        rgb = str(data / "synth_00000_rgb.ppm")
        depth = str(data / "synth_00000_depth.pgm")
        outs = [tmp_path / "a.pgm", tmp_path / "b.pgm"]
        for o in outs:
            assert run("infer", "--rgb", rgb, "--depth", depth,
                       "--checkpoint", str(run_dir / "checkpoint_last.lpca"),
                       "--out", str(o)) == EXIT_OK
        assert outs[0].read_bytes() == outs[1].read_bytes()
        assert read_pgm(str(outs[0])).shape == (64, 64)

    def test_mismatched_sizes_rejected(self, trained, tmp_path):
        _, run_dir = trained
        rng = np.random.default_rng(0)
        write_ppm(rng.integers(0, 256, (64, 64, 3), dtype=np.uint8), str(tmp_path / "r.ppm"))
        write_pgm(rng.integers(0, 256, (32, 32), dtype=np.uint8), str(tmp_path / "d.pgm"))
        assert run("infer", "--rgb", str(tmp_path / "r.ppm"),
                   "--depth", str(tmp_path / "d.pgm"),
                   "--checkpoint", str(run_dir / "checkpoint_last.lpca"),
                   "--out", str(tmp_path / "o.pgm")) == EXIT_DATA


class TestGradcheckCommand:
    def test_selected_ops_pass_and_report(self, capsys):
        assert run("gradcheck", "--ops", "add,mul,softmax") == EXIT_OK
        lines = capsys.readouterr().out.strip().splitlines()
        assert any(line.startswith("add") and "max-rel-err" in line for line in lines)
        assert len([l for l in lines if "max-rel-err" in l]) == 3

    def test_injected_fault_fails_with_numeric_exit(self, capsys):
        assert run("gradcheck", "--ops", "add", "--inject-fault") == EXIT_NUMERIC
        assert "FAIL" in capsys.readouterr().out

    def test_unknown_op_is_data_error(self):
        assert run("gradcheck", "--ops", "frobnicate") == EXIT_DATA


class TestBenchCommand:
    def test_tiny_report(self, capsys):
        assert run("bench", "--preset", "tiny", "--runs", "2") == EXIT_OK
        out = capsys.readouterr().out
        assert "parameters:" in out and "mult-adds per image:" in out
        assert "median forward latency" in out


class TestUsage:
    def test_missing_required_flag(self):
        assert run("synth", "--n", "2") == EXIT_USAGE

    def test_unknown_command(self):
        assert run("transmogrify") == EXIT_USAGE
