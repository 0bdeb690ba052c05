"""End-to-end checks for the command-line entry point."""

import json

import numpy as np
import pytest

from rosa import batch_retrieve, write_symbol_stream
from rosa.cli import main
from rosa.symbolizer import read_i32_tensor


class TestExitCodes:
    def test_unknown_subcommand_is_config_error(self, capsys):
        assert main(["no-such-command"]) == 2

    def test_no_subcommand_is_config_error(self, capsys):
        assert main([]) == 2

    def test_help_exits_clean(self, capsys):
        assert main(["--help"]) == 0


class TestStats:
    def test_collision_stats_json(self, capsys):
        assert main(["collision-stats", "--route-bits", "4", "--samples", "50000"]) == 0
        blob = json.loads(capsys.readouterr().out)
        assert blob["M"] == 4
        assert blob["bound"] == pytest.approx(1 / 16)
        assert blob["pass"] is True

    def test_stability_stats_json(self, capsys):
        argv = ["stability-stats", "--route-bits", "4", "--delta", "0.01", "--samples", "50000"]
        assert main(argv) == 0
        blob = json.loads(capsys.readouterr().out)
        assert blob["bound"] == pytest.approx(0.04)
        assert blob["pass"] is True

    def test_stability_rejects_negative_delta(self, capsys):
        assert main(["stability-stats", "--delta", "-0.5"]) == 2


class TestRetrieve:
    def _streams(self, tmp_path, seed=0):
        rng = np.random.default_rng(seed)
        q = rng.integers(0, 16, size=(2, 40, 3))
        k = rng.integers(0, 16, size=(2, 40, 3))
        qp, kp = tmp_path / "q.bin", tmp_path / "k.bin"
        write_symbol_stream(qp, q, 4)
        write_symbol_stream(kp, k, 4)
        return q, k, qp, kp

    def test_file_path_matches_library_path(self, tmp_path, capsys):
        q, k, qp, kp = self._streams(tmp_path)
        prefix = tmp_path / "out"
        argv = ["retrieve", "--queries", str(qp), "--keys", str(kp), "--out-prefix", str(prefix)]
        assert main(argv) == 0
        expected = batch_retrieve(q, k, 4)
        tau, shape, m = read_i32_tensor(f"{prefix}.tau.bin")
        assert m == 4 and shape == (2, 40, 3)
        np.testing.assert_array_equal(tau.reshape(shape), expected.tau)
        mask, _, _ = read_i32_tensor(f"{prefix}.mask.bin")
        np.testing.assert_array_equal(mask.reshape(shape), expected.mask)
        taucf, _, _ = read_i32_tensor(f"{prefix}.taucf.bin")
        np.testing.assert_array_equal(taucf.reshape(shape + (4, 2)), expected.tau_cf)

    def test_missing_file_is_config_error(self, tmp_path, capsys):
        argv = ["retrieve", "--queries", str(tmp_path / "nope.bin"), "--keys", str(tmp_path / "nope.bin")]
        assert main(argv) == 2

    def test_route_width_mismatch_is_config_error(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        qp, kp = tmp_path / "q.bin", tmp_path / "k.bin"
        write_symbol_stream(qp, rng.integers(0, 4, size=(1, 8, 1)), 2)
        write_symbol_stream(kp, rng.integers(0, 16, size=(1, 8, 1)), 4)
        assert main(["retrieve", "--queries", str(qp), "--keys", str(kp)]) == 2

    def test_workers_do_not_change_results(self, tmp_path, capsys):
        q, k, qp, kp = self._streams(tmp_path, seed=3)
        outs = []
        for workers, prefix in [("1", "a"), ("3", "b")]:
            argv = [
                "retrieve", "--queries", str(qp), "--keys", str(kp),
                "--out-prefix", str(tmp_path / prefix), "--workers", workers,
            ]
            assert main(argv) == 0
            outs.append(read_i32_tensor(tmp_path / f"{prefix}.tau.bin")[0])
        np.testing.assert_array_equal(outs[0], outs[1])


class TestBenchSam:
    def test_emits_csv_with_doubling_rows(self, tmp_path, capsys):
        out = tmp_path / "bench.csv"
        argv = [
            "bench-sam", "--min-len", "256", "--max-len", "1024",
            "--repeats", "1", "--max-ratio", "1e9", "--out", str(out),
        ]
        assert main(argv) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "T,seconds,ns_per_step,ratio_vs_half"
        assert [int(l.split(",")[0]) for l in lines[1:]] == [256, 512, 1024]

    def test_bad_length_range_is_config_error(self, capsys):
        assert main(["bench-sam", "--min-len", "1024", "--max-len", "512"]) == 2


class TestGradcheck:
    def test_default_seed_passes(self, capsys):
        assert main(["gradcheck", "--seed", "0"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out and "PASS" in out


class TestConfigFile:
    def test_flags_override_config_file_over_defaults(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"route_bits": 2, "samples": 50000}))
        assert main(["collision-stats", "--config", str(cfg)]) == 0
        assert json.loads(capsys.readouterr().out)["M"] == 2
        assert main(["collision-stats", "--config", str(cfg), "--route-bits", "3"]) == 0
        assert json.loads(capsys.readouterr().out)["M"] == 3

    def test_unknown_config_key_is_config_error(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"routebits": 2}))
        assert main(["collision-stats", "--config", str(cfg)]) == 2

    def test_malformed_config_is_config_error(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{not json")
        assert main(["collision-stats", "--config", str(cfg)]) == 2


class TestMqar:
    def test_tiny_run_writes_metrics(self, tmp_path, capsys):
        out = tmp_path / "metrics.jsonl"
        csv_out = tmp_path / "metrics.csv"
        argv = [
            "mqar", "--mode", "window_only", "--dim", "32", "--seq-len", "32",
            "--window", "8", "--epochs", "1", "--pairs", "4", "--key-vocab", "8",
            "--value-vocab", "8", "--sequences", "16",
            "--out", str(out), "--csv-out", str(csv_out),
        ]
        assert main(argv) == 0
        rows = [json.loads(l) for l in out.read_text().splitlines()]
        assert rows and {"epoch", "loss", "val_acc"} <= set(rows[0])
        assert csv_out.read_text().splitlines()[0] == "epoch,loss,val_acc"
        assert "final epoch=1" in capsys.readouterr().out

    def test_window_covering_answers_is_config_error(self, capsys):
        argv = [
            "mqar", "--mode", "window_only", "--dim", "32", "--seq-len", "32",
            "--window", "32", "--epochs", "1", "--pairs", "4", "--key-vocab", "8",
            "--value-vocab", "8", "--sequences", "16",
        ]
        assert main(argv) == 2
