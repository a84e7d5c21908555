"""CLI thin client: exit codes, artifact paths, flag plumbing."""

import json

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from cibr.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def write_config(tmp_path, name="cfg.yaml", **overrides):
    cfg = {
        "data": {"kind": "gaussian", "dim_shared": 1, "rho": 0.8,
                 "dim_v_noise": 1, "dim_t_noise": 1},
        "encoder_v": {"hidden": [8], "embed_dim": 4},
        "encoder_t": {"hidden": [8], "embed_dim": 4},
        "critics": {"diag_hidden": [8], "v_hidden": [8], "t_hidden": [8]},
        "batch_size": 8,
        "steps": 2,
        "critic_steps": 1,
        "seed": 1,
        "eval": {"n_eval": 8, "recall_ks": [1, 2]},
        "out_dir": str(tmp_path / "out"),
    }
    cfg.update(overrides)
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


class TestTrainCommand:
    def test_happy_path_three_artifacts(self, runner, tmp_path):
        cfg = write_config(tmp_path)
        result = runner.invoke(main, ["train", "--config", cfg])
        assert result.exit_code == 0, result.output
        out = tmp_path / "out"
        assert (out / "steps.csv").exists()
        assert (out / "manifest.json").exists()
        assert (out / "checkpoint.ckpt").exists()

    def test_unknown_key_exit_2(self, runner, tmp_path):
        cfg = write_config(tmp_path, lamda=0.5)
        result = runner.invoke(main, ["train", "--config", cfg])
        assert result.exit_code == 2
        assert "lamda" in result.output

    def test_negative_lambda_exit_2(self, runner, tmp_path):
        cfg = write_config(tmp_path, **{"lambda": -0.5})
        result = runner.invoke(main, ["train", "--config", cfg])
        assert result.exit_code == 2

    def test_missing_config_exit_4(self, runner, tmp_path):
        result = runner.invoke(main, ["train", "--config", str(tmp_path / "nope.yaml")])
        assert result.exit_code == 4

    def test_seed_and_out_overrides(self, runner, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "elsewhere"
        result = runner.invoke(main, ["train", "--config", cfg, "--seed", "9",
                                      "--out", str(out)])
        assert result.exit_code == 0, result.output
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 9


class TestEvalCommand:
    def test_eval_and_direction(self, runner, tmp_path):
        cfg = write_config(tmp_path)
        assert runner.invoke(main, ["train", "--config", cfg]).exit_code == 0
        ckpt = str(tmp_path / "out" / "checkpoint.ckpt")
        result = runner.invoke(main, ["eval", "--checkpoint", ckpt, "--config", cfg,
                                      "--direction", "v2t"])
        assert result.exit_code == 0, result.output
        report = json.loads((tmp_path / "out" / "retrieval_report.json").read_text())
        assert report["direction"] == "v2t"

    def test_dim_mismatch_exit_2(self, runner, tmp_path):
        cfg = write_config(tmp_path)
        assert runner.invoke(main, ["train", "--config", cfg]).exit_code == 0
        ckpt = str(tmp_path / "out" / "checkpoint.ckpt")
        cfg_bad = write_config(tmp_path, name="bad.yaml",
                               encoder_v={"hidden": [8], "embed_dim": 6},
                               encoder_t={"hidden": [8], "embed_dim": 6})
        result = runner.invoke(main, ["eval", "--checkpoint", ckpt, "--config", cfg_bad])
        assert result.exit_code == 2


class TestSweepCommand:
    def test_two_rows(self, runner, tmp_path):
        cfg = write_config(tmp_path)
        result = runner.invoke(main, ["sweep", "--config", cfg, "--lambdas", "0,0.5"])
        assert result.exit_code == 0, result.output
        lines = (tmp_path / "out" / "sweep.csv").read_text().splitlines()
        assert len(lines) == 3

    def test_empty_lambdas_exit_2(self, runner, tmp_path):
        cfg = write_config(tmp_path)
        result = runner.invoke(main, ["sweep", "--config", cfg, "--lambdas", ""])
        assert result.exit_code == 2

    def test_unparsable_lambdas_exit_2(self, runner, tmp_path):
        cfg = write_config(tmp_path)
        result = runner.invoke(main, ["sweep", "--config", cfg, "--lambdas", "0,abc"])
        assert result.exit_code == 2


class TestEstimateMICommand:
    def test_gaussian(self, runner, tmp_path):
        cfg = {
            "data": {"kind": "gaussian", "dim_shared": 1, "rho": 0.8},
            "critic_hidden": [8],
            "steps": 2,
            "batch_size": 8,
            "n_eval": 16,
            "out_dir": str(tmp_path / "mi"),
        }
        path = tmp_path / "mi.yaml"
        path.write_text(yaml.safe_dump(cfg))
        result = runner.invoke(main, ["estimate-mi", "--config", str(path)])
        assert result.exit_code == 0, result.output
        assert "oracle" in result.output
        assert (tmp_path / "mi" / "mi_estimate.json").exists()


class TestGradcheckCommand:
    def test_passes_exit_0(self, runner):
        result = runner.invoke(main, ["gradcheck"])
        assert result.exit_code == 0, result.output
        # one line per registered op plus the summary
        assert result.output.count("max rel err") >= 20

    def test_sabotage_exit_1_names_op(self, runner):
        result = runner.invoke(main, ["gradcheck", "--sabotage", "exp"])
        assert result.exit_code == 1
        assert "exp" in result.output
        assert "FAILED ops" in result.output
