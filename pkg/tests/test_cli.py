"""End-to-end tests of the command-line interface (in-process)."""

import csv

import numpy as np
import pytest

from anticipate import cli
from anticipate import metrics as M
from anticipate.data import read_feature_file, read_manifest


def run(argv):
    return cli.main(argv)


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    code = run(["generate", "--out", str(out), "--pos", "6", "--neg", "6",
                "--frames", "20", "--objects", "3", "--feature-dim", "8",
                "--tau", "16", "--seed", "11", "--test-fraction", "0.34"])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def run_dir(dataset_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = run(["train", "--data", str(dataset_dir), "--out", str(out),
                "--epochs", "3", "--batch-size", "4", "--learning-rate", "2e-3",
                "--seed", "3", "--dropout", "0.2"])
    assert code == 0
    return out


class TestGenerate:
    def test_files_and_manifest(self, dataset_dir):
        manifest = read_manifest(dataset_dir / "manifest.txt")
        assert len(manifest.train) + len(manifest.test) == 12
        assert len(manifest.test) == 4  # round(6 * 0.34) per class
        assert all((dataset_dir / p).exists() for p in manifest.train + manifest.test)

    def test_rerun_same_seed_identical_bytes(self, dataset_dir, tmp_path):
        code = run(["generate", "--out", str(tmp_path), "--pos", "6", "--neg", "6",
                    "--frames", "20", "--objects", "3", "--feature-dim", "8",
                    "--tau", "16", "--seed", "11", "--test-fraction", "0.34"])
        assert code == 0
        for p in sorted(tmp_path.glob("*.fab")):
            assert p.read_bytes() == (dataset_dir / p.name).read_bytes()
        assert ((tmp_path / "manifest.txt").read_text()
                == (dataset_dir / "manifest.txt").read_text())

    def test_difficulty_recorded_in_manifest_comment(self, tmp_path):
        run(["generate", "--out", str(tmp_path), "--pos", "1", "--neg", "1",
             "--frames", "5", "--objects", "2", "--feature-dim", "4",
             "--difficulty", "0.5", "--seed", "1"])
        manifest = read_manifest(tmp_path / "manifest.txt")
        assert any("difficulty=0.5" in c for c in manifest.comments)

    def test_usage_error_exit_code(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run(["generate", "--pos", "1"])
        assert exc.value.code == 2


class TestTrain:
    def test_writes_checkpoint_and_log(self, run_dir):
        assert (run_dir / "checkpoint.bin").exists()
        assert (run_dir / "train_log.csv").exists()

    def test_echoes_effective_config(self, dataset_dir, tmp_path, capsys):
        run(["train", "--data", str(dataset_dir), "--out", str(tmp_path),
             "--epochs", "1", "--batch-size", "4", "--seed", "1", "--dropout", "0"])
        out = capsys.readouterr().out
        assert "config: epochs = 1" in out
        assert "config: variant = final" in out
        assert "parameters:" in out

    def test_invalid_variant_is_usage_error(self, dataset_dir, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run(["train", "--data", str(dataset_dir), "--out", str(tmp_path),
                 "--variant", "fa9"])
        assert exc.value.code == 2

    def test_missing_data_reports_manifest_path(self, tmp_path, capsys):
        code = run(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path)])
        assert code == 1
        assert "manifest" in capsys.readouterr().err

    def test_config_file_with_cli_override(self, dataset_dir, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "# comment line\n"
            "epochs = 5\n"
            "batch_size = 4\n"
            "dropout = 0.0\n"
            f"data = {dataset_dir}\n"
            f"out = {tmp_path / 'out'}\n")
        code = run(["train", "--config", str(cfg), "--epochs", "1", "--seed", "2"])
        assert code == 0
        out = capsys.readouterr().out
        assert "config: epochs = 1" in out  # CLI flag wins over file
        assert (tmp_path / "out" / "checkpoint.bin").exists()

    def test_unknown_config_key_rejected(self, dataset_dir, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("warp_speed = 9\n")
        code = run(["train", "--config", str(cfg), "--data", str(dataset_dir),
                    "--out", str(tmp_path)])
        assert code == 2
        assert "unknown config key" in capsys.readouterr().err

    def test_fa4_census_exceeds_final_by_head_size(self, dataset_dir, tmp_path, capsys):
        sizes = {}
        for variant in ("final", "fa4"):
            run(["train", "--data", str(dataset_dir), "--out",
                 str(tmp_path / variant), "--epochs", "1", "--batch-size", "12",
                 "--seed", "1", "--variant", variant, "--dropout", "0"])
            out = capsys.readouterr().out
            line = next(l for l in out.splitlines() if l.startswith("parameters:"))
            sizes[variant] = int(line.split(":")[1])
        assert sizes["fa4"] - sizes["final"] == 2 * 8 + 1


class TestEval:
    def test_prints_metrics_and_writes_csvs(self, dataset_dir, run_dir, tmp_path, capsys):
        code = run(["eval", "--checkpoint", str(run_dir / "checkpoint.bin"),
                    "--data", str(dataset_dir), "--out", str(tmp_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "mAP:" in out and "ATTA:" in out
        curve = M.read_pr_curve(tmp_path / "pr_curve.csv")
        assert 0.0 <= curve.map <= 1.0
        with open(tmp_path / "probabilities.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["video_id", "frame", "probability"]
        assert len(rows) == 1 + 4 * 20  # 4 test videos, 20 frames each

    def test_metrics_identical_across_runs(self, dataset_dir, run_dir, tmp_path, capsys):
        outputs = []
        for sub in ("a", "b"):
            run(["eval", "--checkpoint", str(run_dir / "checkpoint.bin"),
                 "--data", str(dataset_dir), "--out", str(tmp_path / sub)])
            outputs.append(capsys.readouterr().out)
        assert outputs[0] == outputs[1]
        assert ((tmp_path / "a" / "pr_curve.csv").read_text()
                == (tmp_path / "b" / "pr_curve.csv").read_text())

    def test_thread_pool_matches_serial(self, dataset_dir, run_dir, tmp_path,
                                        capsys, monkeypatch):
        run(["eval", "--checkpoint", str(run_dir / "checkpoint.bin"),
             "--data", str(dataset_dir), "--out", str(tmp_path / "serial")])
        serial = capsys.readouterr().out
        monkeypatch.setenv("ANTICIPATE_THREADS", "4")
        run(["eval", "--checkpoint", str(run_dir / "checkpoint.bin"),
             "--data", str(dataset_dir), "--out", str(tmp_path / "pooled")])
        pooled = capsys.readouterr().out
        assert serial == pooled
        assert ((tmp_path / "serial" / "pr_curve.csv").read_text()
                == (tmp_path / "pooled" / "pr_curve.csv").read_text())

    def test_dimension_mismatch_is_runtime_error(self, run_dir, tmp_path, capsys):
        run(["generate", "--out", str(tmp_path), "--pos", "1", "--neg", "1",
             "--frames", "5", "--objects", "2", "--feature-dim", "16",
             "--test-fraction", "1.0"])
        code = run(["eval", "--checkpoint", str(run_dir / "checkpoint.bin"),
                    "--data", str(tmp_path), "--out", str(tmp_path)])
        assert code == 1
        assert "feature dim" in capsys.readouterr().err


class TestPredict:
    def test_threshold_zero_alarms_at_frame_one(self, dataset_dir, run_dir, capsys):
        manifest = read_manifest(dataset_dir / "manifest.txt")
        target = dataset_dir / manifest.test[0]
        code = run(["predict", "--checkpoint", str(run_dir / "checkpoint.bin"),
                    "--file", str(target), "--threshold", "0"])
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "frame,probability,alarm"
        first = lines[1].split(",")
        assert first[0] == "1" and first[2] == "1"

    def test_alarm_sticky_and_matches_first_crossing(self, dataset_dir, run_dir,
                                                     tmp_path, capsys):
        manifest = read_manifest(dataset_dir / "manifest.txt")
        target = dataset_dir / manifest.test[0]
        sample = read_feature_file(target)
        threshold = 0.5
        code = run(["predict", "--checkpoint", str(run_dir / "checkpoint.bin"),
                    "--file", str(target), "--threshold", str(threshold)])
        assert code == 0
        rows = [l.split(",") for l in capsys.readouterr().out.strip().splitlines()[1:]]
        probs = np.array([float(r[1]) for r in rows])
        alarms = np.array([int(r[2]) for r in rows])
        crossing = np.nonzero(probs >= threshold)[0]
        if crossing.size:
            first = crossing[0]
            assert np.all(alarms[:first] == 0)
            assert np.all(alarms[first:] == 1)
            score = M.VideoScore(probs=np.clip(probs, 0, 1), positive=True,
                                 tau=float(sample.n_frames), fps=sample.fps)
            expected_tta = (sample.n_frames - (first + 1)) / sample.fps
            assert M.tta_at([score], threshold) == pytest.approx(max(0.0, expected_tta))
        else:
            assert not alarms.any()

    def test_output_prefix_stable_as_file_grows(self, dataset_dir, run_dir,
                                                tmp_path, capsys):
        from anticipate.data import VideoSample, write_feature_file
        manifest = read_manifest(dataset_dir / "manifest.txt")
        sample = read_feature_file(dataset_dir / manifest.test[0])
        prefix = VideoSample(
            object_feats=sample.object_feats[:8].copy(),
            frame_feats=sample.frame_feats[:8].copy(),
            positive=False, tau=float("inf"), fps=sample.fps,
            n_objects=sample.n_objects[:8].copy())
        short = tmp_path / "short.fab"
        write_feature_file(prefix, short)
        run(["predict", "--checkpoint", str(run_dir / "checkpoint.bin"),
             "--file", str(short), "--threshold", "0.8"])
        short_out = capsys.readouterr().out.strip().splitlines()
        run(["predict", "--checkpoint", str(run_dir / "checkpoint.bin"),
             "--file", str(dataset_dir / manifest.test[0]), "--threshold", "0.8"])
        full_out = capsys.readouterr().out.strip().splitlines()
        assert full_out[:9] == short_out[:9]  # header + 8 shared frames

    def test_malformed_file_is_runtime_error(self, run_dir, tmp_path, capsys):
        bad = tmp_path / "bad.fab"
        bad.write_bytes(b"not a feature file at all")
        code = run(["predict", "--checkpoint", str(run_dir / "checkpoint.bin"),
                    "--file", str(bad)])
        assert code == 1
