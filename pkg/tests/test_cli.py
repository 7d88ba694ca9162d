import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from protoadapt.cli import build_parser, main


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    """Small synthetic caches shared by the CLI tests."""
    root = tmp_path_factory.mktemp("clifx")
    rc = main([
        "synth", "--out-dir", str(root), "--classes", "5", "--dims", "16",
        "--samples-per-class", "40", "--splits", "train,test,variant",
    ])
    assert rc == 0
    return root


def run_pipeline_dir(fixture_dir, out, extra=()):
    rc = main([
        "train", "--cache", str(fixture_dir / "train"),
        "--classifier", str(fixture_dir / "classifier"),
        "--pipeline", "--epochs", "3", "--out", str(out), *extra,
    ])
    assert rc == 0
    return out


class TestExitCodes:
    def test_missing_classifier_flag(self, fixture_dir, tmp_path, capsys):
        rc = main([
            "pseudo-label", "--cache", str(fixture_dir / "train"),
            "--out", str(tmp_path / "pl.json"),
        ])
        assert rc == 2
        assert "--classifier" in capsys.readouterr().err

    def test_missing_path(self, tmp_path, capsys):
        rc = main(["validate", "--cache", str(tmp_path / "nope")])
        assert rc == 2

    def test_validate_ok(self, fixture_dir):
        assert main(["validate", "--cache", str(fixture_dir / "train")]) == 0

    def test_validate_reports_corruption(self, fixture_dir, tmp_path):
        bad = tmp_path / "bad"
        shutil.copytree(fixture_dir / "train", bad)
        payload = bad / "vitb16.f32"
        raw = bytearray(payload.read_bytes())
        raw[0] ^= 0xFF
        payload.write_bytes(bytes(raw))
        assert main(["validate", "--cache", str(bad)]) == 2


class TestHelpDefaults:
    @pytest.mark.parametrize("sub", ["pseudo-label", "train", "ablate", "sweep"])
    def test_defaults_in_help(self, sub, capsys):
        with pytest.raises(SystemExit):
            build_parser().parse_args([sub, "--help"])
        text = capsys.readouterr().out
        assert "default 16" in text  # k
        assert "default 0.01" in text  # tau
        assert "default 5.5" in text  # eta
        assert "default 1.0" in text  # beta

    def test_train_defaults(self, capsys):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["train", "--help"])
        text = capsys.readouterr().out
        assert "default 20" in text  # epochs
        assert "default 0.001" in text  # lr
        assert "default 256" in text  # batch


class TestPseudoLabel:
    def test_writes_and_counts(self, fixture_dir, tmp_path, capsys):
        out = tmp_path / "pl.json"
        rc = main([
            "pseudo-label", "--cache", str(fixture_dir / "train"),
            "--classifier", str(fixture_dir / "classifier"),
            "--out", str(out), "--k", "8",
        ])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert doc["k"] == 8
        total = sum(len(v) for v in doc["per_class"].values())
        assert total <= 8 * 5
        assert "selection precision" in capsys.readouterr().out

    def test_rerun_byte_identical(self, fixture_dir, tmp_path):
        args = [
            "pseudo-label", "--cache", str(fixture_dir / "train"),
            "--classifier", str(fixture_dir / "classifier"),
        ]
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()


class TestTrainCommand:
    def test_pipeline_outputs(self, fixture_dir, tmp_path):
        out = run_pipeline_dir(fixture_dir, tmp_path / "adapter")
        assert (out / "adapter.json").is_file()
        assert (out / "weights.f32").is_file()
        assert (out / "history.csv").is_file()
        assert (out / "history.png").is_file()
        assert (out / "pseudolabels.json").is_file()
        lines = (out / "history.csv").read_text().strip().splitlines()
        assert len(lines) == 4  # header + 3 epochs

    def test_seed_repeat_identical_payload(self, fixture_dir, tmp_path):
        a = run_pipeline_dir(fixture_dir, tmp_path / "a", ["--seed", "7"])
        b = run_pipeline_dir(fixture_dir, tmp_path / "b", ["--seed", "7"])
        assert (a / "weights.f32").read_bytes() == (b / "weights.f32").read_bytes()
        assert (a / "pseudolabels.json").read_bytes() == (
            b / "pseudolabels.json"
        ).read_bytes()

    def test_staged_inputs(self, fixture_dir, tmp_path):
        pl = tmp_path / "pl.json"
        pr = tmp_path / "protos"
        base = [
            "--cache", str(fixture_dir / "train"),
            "--classifier", str(fixture_dir / "classifier"),
        ]
        assert main(["pseudo-label", *base, "--out", str(pl)]) == 0
        assert main([
            "prototypes", "--cache", str(fixture_dir / "train"),
            "--pseudolabels", str(pl), "--classifier", str(fixture_dir / "classifier"),
            "--out", str(pr),
        ]) == 0
        assert main([
            "train", *base, "--pseudolabels", str(pl), "--prototypes", str(pr),
            "--epochs", "2", "--out", str(tmp_path / "adapter"),
        ]) == 0


class TestEvalPredict:
    def test_eval_reports(self, fixture_dir, tmp_path):
        adapter = run_pipeline_dir(fixture_dir, tmp_path / "adapter")
        out = tmp_path / "rep"
        rc = main([
            "eval", "--adapter", str(adapter),
            "--cache", str(fixture_dir / "test"),
            "--classifier", str(fixture_dir / "classifier"),
            "--out-dir", str(out),
        ])
        assert rc == 0
        assert (out / "report.txt").is_file()
        assert (out / "report.json").is_file()
        assert (out / "report.csv").is_file()
        assert (out / "per_class.png").is_file()

    def test_predict_csv(self, fixture_dir, tmp_path):
        adapter = run_pipeline_dir(fixture_dir, tmp_path / "adapter")
        out = tmp_path / "pred.csv"
        rc = main([
            "predict", "--adapter", str(adapter),
            "--cache", str(fixture_dir / "test"),
            "--classifier", str(fixture_dir / "classifier"),
            "--out", str(out),
        ])
        assert rc == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "sample_id,predicted_class,predicted_name"
        assert len(lines) == 201


class TestAblateSweep:
    def test_ablate_five_rows(self, fixture_dir, tmp_path):
        out = tmp_path / "abl"
        rc = main([
            "ablate", "--train-cache", str(fixture_dir / "train"),
            "--test-cache", str(fixture_dir / "test"),
            "--classifier", str(fixture_dir / "classifier"),
            "--epochs", "3", "--out-dir", str(out),
        ])
        assert rc == 0
        rows = (out / "ablation.csv").read_text().strip().splitlines()
        assert len(rows) == 6  # header + 5 modes
        modes = [r.split(",")[0] for r in rows[1:]]
        assert modes == ["zero_shot", "adapter_only", "training_free", "no_init", "full"]
        assert (out / "ablation.png").is_file()

    def test_sweep_four_rows(self, fixture_dir, tmp_path):
        out = tmp_path / "sw"
        rc = main([
            "sweep", "--train-cache", str(fixture_dir / "train"),
            "--test-cache", str(fixture_dir / "test"),
            "--classifier", str(fixture_dir / "classifier"),
            "--epochs", "2", "--jobs", "2", "--out-dir", str(out),
        ])
        assert rc == 0
        rows = (out / "sweep.csv").read_text().strip().splitlines()
        assert [r.split(",")[0] for r in rows[1:]] == ["4", "8", "16", "32"]
        assert (out / "sweep.png").is_file()


class TestConfigFile:
    def test_precedence(self, fixture_dir, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"k": 4, "epochs": 2}))
        out = tmp_path / "pl.json"
        rc = main([
            "pseudo-label", "--cache", str(fixture_dir / "train"),
            "--classifier", str(fixture_dir / "classifier"),
            "--config", str(cfg), "--out", str(out),
        ])
        assert rc == 0
        assert json.loads(out.read_text())["k"] == 4
        # explicit flag beats the config file
        rc = main([
            "pseudo-label", "--cache", str(fixture_dir / "train"),
            "--classifier", str(fixture_dir / "classifier"),
            "--config", str(cfg), "--k", "2", "--out", str(out),
        ])
        assert rc == 0
        assert json.loads(out.read_text())["k"] == 2

    def test_unknown_key_rejected(self, fixture_dir, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"bogus_key": 1}))
        rc = main([
            "pseudo-label", "--cache", str(fixture_dir / "train"),
            "--classifier", str(fixture_dir / "classifier"),
            "--config", str(cfg), "--out", str(tmp_path / "pl.json"),
        ])
        assert rc == 2
        assert "bogus_key" in capsys.readouterr().err

    def test_imagenet_profile_epochs(self, fixture_dir, tmp_path):
        out = run_pipeline_dir(fixture_dir, tmp_path / "a")
        doc = json.loads((out / "adapter.json").read_text())
        assert doc["trained_epochs"] == 3
        out2 = tmp_path / "b"
        rc = main([
            "train", "--cache", str(fixture_dir / "train"),
            "--classifier", str(fixture_dir / "classifier"),
            "--pipeline", "--profile", "imagenet", "--out", str(out2),
        ])
        assert rc == 0
        assert json.loads((out2 / "adapter.json").read_text())["trained_epochs"] == 30


class TestCrossCacheGuard:
    def test_mismatched_classes_exit_2(self, fixture_dir, tmp_path, capsys):
        adapter = run_pipeline_dir(fixture_dir, tmp_path / "adapter")
        other = tmp_path / "other"
        rc = main([
            "synth", "--out-dir", str(other), "--classes", "4", "--dims", "16",
            "--samples-per-class", "10", "--splits", "test",
        ])
        assert rc == 0
        rc = main([
            "eval", "--adapter", str(adapter),
            "--cache", str(other / "test"),
            "--classifier", str(fixture_dir / "classifier"),
            "--out-dir", str(tmp_path / "rep"),
        ])
        assert rc == 2
        assert "class" in capsys.readouterr().err

    def test_variant_eval_runs(self, fixture_dir, tmp_path):
        adapter = run_pipeline_dir(fixture_dir, tmp_path / "adapter")
        rc = main([
            "eval", "--adapter", str(adapter),
            "--cache", str(fixture_dir / "variant"),
            "--classifier", str(fixture_dir / "classifier"),
            "--out-dir", str(tmp_path / "rep"),
        ])
        assert rc == 0
