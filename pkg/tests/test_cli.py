import json
import os

import numpy as np
import pytest

from fadnet.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main, parse_shape
from fadnet.data import load_pfm, read_manifest

TINY_INI = """
[network]
base_channels = 2
max_channels = 4
[correlation]
max_range = 2
[train]
batch_size = 2
[schedule]
epochs = 1, 1, 1, 1
"""


def records(text):
    return [json.loads(line) for line in text.splitlines() if line.strip()]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.ini").write_text(TINY_INI)
    assert main(["gen-data", "--n", "4", "--seed", "5", "--max-disparity", "6", "--out", str(root / "train")]) == 0
    assert main(["gen-data", "--n", "2", "--seed", "6", "--max-disparity", "6", "--out", str(root / "test")]) == 0
    args = ["train", "--config", str(root / "tiny.ini"), "--train", str(root / "train/manifest.txt")]
    args += ["--test", str(root / "test/manifest.txt"), "--out", str(root / "run")]
    assert main(args) == 0
    return root


class TestGenData:
    def test_writes_triplets_and_manifest(self, tmp_path, capsys):
        assert main(["gen-data", "--n", "10", "--out", str(tmp_path)]) == EXIT_OK
        entries = read_manifest(tmp_path / "manifest.txt")
        assert len(entries) == 10
        for left, right, gt in entries:
            for name in (left, right, gt):
                assert (tmp_path / name).is_file()
        out = records(capsys.readouterr().out)
        assert len(out) == 10 and all(r["warp_mae"] < 1e-6 for r in out)

    def test_same_seed_same_bytes(self, tmp_path):
        for d in ("a", "b"):
            main(["gen-data", "--n", "3", "--seed", "9", "--out", str(tmp_path / d)])
        for name in sorted(os.listdir(tmp_path / "a")):
            if name != "run.json":
                assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name

    def test_bad_count(self, tmp_path):
        assert main(["gen-data", "--n", "0", "--out", str(tmp_path)]) == EXIT_USAGE


class TestTrain:
    def test_outputs(self, workspace):
        run = workspace / "run"
        for r in range(1, 5):
            assert (run / f"round{r}.ckpt").is_file()
        assert not (run / "last.ckpt").exists()
        assert (run / "curves.png").read_bytes()[:4] == b"\x89PNG"
        log = records((run / "metrics.jsonl").read_text())
        assert log[0]["round"] == 0 and [r["round"] for r in log[1:]] == [1, 2, 3, 4]
        manifest = json.loads((run / "run.json").read_text())
        assert manifest["command"] == "train"
        assert manifest["config"]["network"]["base_channels"] == 2
        assert set(manifest["outputs"]) >= {"metrics.jsonl", "round4.ckpt", "curves.png"}
        for key in ("seed", "started", "finished", "inputs", "version", "args"):
            assert key in manifest

    def test_rerun_reproduces_metrics(self, workspace, tmp_path):
        assert main(["rerun", str(workspace / "run/run.json"), "--out", str(tmp_path)]) == EXIT_OK
        assert (tmp_path / "metrics.jsonl").read_text() == (workspace / "run/metrics.jsonl").read_text()
        assert (tmp_path / "round4.ckpt").read_bytes() == (workspace / "run/round4.ckpt").read_bytes()

    def test_stop_and_resume(self, workspace, tmp_path):
        base = ["train", "--config", str(workspace / "tiny.ini"), "--train", str(workspace / "train/manifest.txt")]
        assert main(base + ["--out", str(tmp_path), "--stop-after", "2,0"]) == EXIT_OK
        assert (tmp_path / "last.ckpt").is_file() and not (tmp_path / "round3.ckpt").exists()
        assert main(base + ["--out", str(tmp_path), "--resume", str(tmp_path / "last.ckpt")]) == EXIT_OK
        full = tmp_path / "full"
        assert main(base + ["--out", str(full)]) == EXIT_OK
        assert (tmp_path / "round4.ckpt").read_bytes() == (full / "round4.ckpt").read_bytes()

    def test_without_test_set_logs_null(self, workspace, tmp_path):
        base = ["train", "--config", str(workspace / "tiny.ini"), "--train", str(workspace / "train/manifest.txt")]
        assert main(base + ["--out", str(tmp_path), "--stop-after", "1,0"]) == EXIT_OK
        log = records((tmp_path / "metrics.jsonl").read_text())
        assert all(r["test_epe"] is None for r in log)

    def test_missing_manifest(self, tmp_path, capsys):
        code = main(["train", "--train", str(tmp_path / "nope.txt"), "--out", str(tmp_path / "o")])
        assert code == EXIT_USAGE
        assert "nope.txt" in capsys.readouterr().err

    def test_bad_config(self, workspace, tmp_path):
        bad = tmp_path / "bad.ini"
        bad.write_text("[train]\nbatch_size = lots\n")
        code = main(["train", "--config", str(bad), "--train", str(workspace / "train/manifest.txt"), "--out", str(tmp_path)])
        assert code == EXIT_USAGE


class TestInfer:
    def test_writes_pfm_and_png(self, workspace, tmp_path, capsys):
        out = tmp_path / "d.pfm"
        args = ["infer", "--checkpoint", str(workspace / "run/round4.ckpt"), "--left", str(workspace / "test/000000_left.pfm")]
        args += ["--right", str(workspace / "test/000000_right.pfm"), "--out", str(out), "--png", str(tmp_path / "d.png"), "--manifest"]
        assert main(args) == EXIT_OK
        disp, _ = load_pfm(out, channels=1)
        assert disp.shape == (64, 128)
        assert (tmp_path / "d.png").is_file() and (tmp_path / "run.json").is_file()
        rec = records(capsys.readouterr().out)[-1]
        assert rec["inference_ms"] > 0

    def test_corrupt_checkpoint(self, workspace, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"garbage" * 10)
        args = ["infer", "--checkpoint", str(bad), "--left", str(workspace / "test/000000_left.pfm")]
        args += ["--right", str(workspace / "test/000000_right.pfm"), "--out", str(tmp_path / "d.pfm")]
        assert main(args) == EXIT_DATA

    def test_size_mismatch(self, workspace, tmp_path):
        from fadnet.data import write_image

        small = tmp_path / "small.ppm"
        write_image(str(small), np.zeros((3, 32, 64), dtype=np.float32))
        args = ["infer", "--checkpoint", str(workspace / "run/round4.ckpt"), "--left", str(workspace / "test/000000_left.pfm")]
        args += ["--right", str(small), "--out", str(tmp_path / "d.pfm")]
        assert main(args) == EXIT_USAGE


class TestEval:
    def _pred_dir(self, workspace, tmp_path, fn):
        from fadnet.data import load_manifest, save_pfm

        preds = tmp_path / "preds"
        preds.mkdir()
        samples = load_manifest(workspace / "test/manifest.txt")
        for s in samples:
            save_pfm(str(preds / f"{s.source_id}.pfm"), fn(s).astype(np.float32))
        return preds, samples

    def test_ground_truth_as_prediction(self, workspace, tmp_path, capsys):
        preds, _ = self._pred_dir(workspace, tmp_path, lambda s: np.where(np.isfinite(s.gt_disparity), s.gt_disparity, 0))
        assert main(["eval", "--data", str(workspace / "test/manifest.txt"), "--predictions", str(preds)]) == EXIT_OK
        summary = records(capsys.readouterr().out)[-1]
        assert summary["summary"] and summary["epe"] == 0.0 and summary["d1_all"] == 0.0

    def test_zero_prediction_gives_mean_gt(self, workspace, tmp_path, capsys):
        preds, samples = self._pred_dir(workspace, tmp_path, lambda s: np.zeros_like(s.gt_disparity))
        out = tmp_path / "out"
        assert main(["eval", "--data", str(workspace / "test/manifest.txt"), "--predictions", str(preds), "--out", str(out)]) == 0
        rows = records(capsys.readouterr().out)
        per, summary = rows[:-1], rows[-1]
        for s, r in zip(samples, per):
            mask = s.mask()
            assert r["epe"] == pytest.approx(float(np.abs(s.gt_disparity[mask]).mean()), rel=1e-6)
        assert summary["epe"] == pytest.approx(np.mean([r["epe"] for r in per]))
        assert (out / "metrics.jsonl").is_file() and (out / "eval_000000.png").is_file()

    def test_missing_prediction_is_skipped(self, workspace, tmp_path, capsys):
        preds, _ = self._pred_dir(workspace, tmp_path, lambda s: np.zeros_like(s.gt_disparity))
        os.remove(preds / "000001.pfm")
        with pytest.warns(UserWarning, match="000001"):
            assert main(["eval", "--data", str(workspace / "test/manifest.txt"), "--predictions", str(preds)]) == 0
        summary = records(capsys.readouterr().out)[-1]
        assert summary["samples"] == 1 and summary["skipped"] == 1

    def test_checkpoint_source(self, workspace, capsys):
        assert main(["eval", "--data", str(workspace / "test/manifest.txt"), "--checkpoint", str(workspace / "run/round4.ckpt")]) == 0
        assert records(capsys.readouterr().out)[-1]["samples"] == 2

    def test_needs_exactly_one_source(self, workspace):
        assert main(["eval", "--data", str(workspace / "test/manifest.txt")]) == EXIT_USAGE


class TestBench:
    def test_protocol_and_outputs(self, tmp_path, capsys):
        args = ["bench", "--kernel", "pointwise_corr,patch_corr,warp,conv2d", "--shape", "1x4x8x16", "--max-range", "4"]
        assert main(args + ["--reps", "100", "--out", str(tmp_path)]) == EXIT_OK
        rows = records(capsys.readouterr().out)
        assert [r["kernel"] for r in rows] == ["pointwise_corr", "patch_corr", "warp", "conv2d"]
        assert all(r["reps"] == 100 and r["warmup"] == 5 and r["mean_ms"] >= r["min_ms"] > 0 for r in rows)
        assert rows[1]["macs"] == 9 * rows[0]["macs"]
        assert (tmp_path / "bench.png").is_file() and (tmp_path / "bench.jsonl").is_file()

    def test_unknown_kernel(self):
        assert main(["bench", "--kernel", "fft"]) == EXIT_USAGE

    @pytest.mark.parametrize("shape", ["0x4x8x8", "1x4x8", "axbxcxd"])
    def test_bad_shape(self, shape):
        assert main(["bench", "--kernel", "warp", "--shape", shape]) == EXIT_USAGE

    def test_parse_shape(self):
        assert parse_shape("2X3x4x5") == (2, 3, 4, 5)


class TestMisc:
    def test_dump_config_round_trips(self, tmp_path, capsys):
        from fadnet import config as cfgmod

        assert main(["dump-config", "--preset", "desk"]) == 0
        assert cfgmod.loads(capsys.readouterr().out) == cfgmod.desk_experiment()

    def test_rerun_rejects_garbage(self, tmp_path):
        bad = tmp_path / "run.json"
        bad.write_text("{}")
        assert main(["rerun", str(bad)]) == EXIT_DATA

    def test_unknown_command_is_usage_error(self):
        with pytest.raises(SystemExit) as err:
            main(["frobnicate"])
        assert err.value.code == 2
