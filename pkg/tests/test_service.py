"""HTTP surface: request validation, artifact writing, error mapping."""

import json

import pytest
from fastapi.testclient import TestClient

from cibr.service.app import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def tiny_train_config(out_dir, **overrides):
    cfg = {
        "data": {"kind": "gaussian", "dim_shared": 1, "rho": 0.8,
                 "dim_v_noise": 1, "dim_t_noise": 1},
        "encoder_v": {"hidden": [8], "embed_dim": 4},
        "encoder_t": {"hidden": [8], "embed_dim": 4},
        "critics": {"diag_hidden": [8], "v_hidden": [8], "t_hidden": [8]},
        "batch_size": 8,
        "steps": 2,
        "critic_steps": 1,
        "seed": 3,
        "eval": {"n_eval": 8, "recall_ks": [1, 2]},
        "out_dir": str(out_dir),
    }
    cfg.update(overrides)
    return cfg


class TestHealth:
    def test_health(self, client):
        body = client.get("/health").json()
        assert body["status"] == "ok"


class TestTrain:
    def test_minimal_run_writes_artifacts(self, client, tmp_path):
        cfg = tiny_train_config(tmp_path / "run")
        resp = client.post("/train", json={"config": cfg})
        assert resp.status_code == 200, resp.text
        body = resp.json()
        for key in ("step_csv", "manifest", "checkpoint"):
            assert (tmp_path / "run").joinpath(body[key].split("/")[-1]).exists()
        manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
        assert manifest["config"]["lambda"] == 0.0
        assert manifest["seed"] == 3

    def test_unknown_key_rejected_by_name(self, client, tmp_path):
        cfg = tiny_train_config(tmp_path, lamda=0.5)
        resp = client.post("/train", json={"config": cfg})
        assert resp.status_code == 422
        assert "lamda" in resp.text

    def test_negative_lambda_rejected(self, client, tmp_path):
        cfg = tiny_train_config(tmp_path)
        cfg["lambda"] = -1.0
        resp = client.post("/train", json={"config": cfg})
        assert resp.status_code == 422

    def test_seed_override(self, client, tmp_path):
        cfg = tiny_train_config(tmp_path / "a")
        resp = client.post("/train", json={"config": cfg, "seed": 11})
        assert resp.status_code == 200
        manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert manifest["seed"] == 11


class TestEval:
    def test_eval_after_train(self, client, tmp_path):
        cfg = tiny_train_config(tmp_path / "run")
        ckpt = client.post("/train", json={"config": cfg}).json()["checkpoint"]
        resp = client.post("/eval", json={"checkpoint": ckpt, "config": cfg})
        assert resp.status_code == 200, resp.text
        body = resp.json()
        assert body["retrieval"]["direction"] == "t2v"
        assert (tmp_path / "run" / "retrieval_report.json").exists()
        # gaussian data carries no labels, so no classification report
        assert body["classification"] is None

    def test_direction_flag(self, client, tmp_path):
        cfg = tiny_train_config(tmp_path / "run2")
        ckpt = client.post("/train", json={"config": cfg}).json()["checkpoint"]
        resp = client.post(
            "/eval", json={"checkpoint": ckpt, "config": cfg, "direction": "v2t"}
        )
        assert resp.json()["retrieval"]["direction"] == "v2t"

    def test_dim_mismatch_names_both(self, client, tmp_path):
        cfg = tiny_train_config(tmp_path / "run3")
        ckpt = client.post("/train", json={"config": cfg}).json()["checkpoint"]
        cfg_bad = tiny_train_config(tmp_path / "run3",
                                    encoder_v={"hidden": [8], "embed_dim": 6},
                                    encoder_t={"hidden": [8], "embed_dim": 6})
        resp = client.post("/eval", json={"checkpoint": ckpt, "config": cfg_bad})
        assert resp.status_code == 400
        assert resp.json()["error_kind"] == "config"
        assert "4" in resp.json()["detail"] and "6" in resp.json()["detail"]

    def test_missing_checkpoint_is_io(self, client, tmp_path):
        cfg = tiny_train_config(tmp_path)
        resp = client.post("/eval", json={"checkpoint": str(tmp_path / "no.ckpt"),
                                          "config": cfg})
        assert resp.status_code == 500
        assert resp.json()["error_kind"] == "io"


class TestSweep:
    def test_two_lambdas_two_rows(self, client, tmp_path):
        cfg = tiny_train_config(tmp_path / "sweep")
        resp = client.post("/sweep", json={"config": cfg, "lambdas": [0.0, 0.5]})
        assert resp.status_code == 200, resp.text
        body = resp.json()
        assert [row["lambda"] for row in body["rows"]] == [0.0, 0.5]
        lines = (tmp_path / "sweep" / "sweep.csv").read_text().splitlines()
        assert lines[0] == "lambda,recall_at_1,accuracy,reg_v,reg_t,i_zv_zt"
        assert len(lines) == 3

    def test_empty_lambdas_rejected(self, client, tmp_path):
        cfg = tiny_train_config(tmp_path)
        resp = client.post("/sweep", json={"config": cfg, "lambdas": []})
        assert resp.status_code == 400
        assert resp.json()["error_kind"] == "config"


class TestEstimateMI:
    def test_gaussian_reports_oracle(self, client, tmp_path):
        cfg = {
            "data": {"kind": "gaussian", "dim_shared": 1, "rho": 0.8},
            "critic_hidden": [8],
            "steps": 3,
            "batch_size": 8,
            "n_eval": 16,
            "out_dir": str(tmp_path / "mi"),
        }
        resp = client.post("/estimate-mi", json={"config": cfg})
        assert resp.status_code == 200, resp.text
        body = resp.json()
        assert body["oracle_nats"] == pytest.approx(0.5108256237659907, abs=1e-9)
        report = json.loads((tmp_path / "mi" / "mi_estimate.json").read_text())
        assert report["abs_error"] == pytest.approx(
            abs(body["estimate_nats"] - body["oracle_nats"]), abs=1e-12
        )

    def test_file_data_no_oracle(self, client, tmp_path):
        import numpy as np

        g = np.random.default_rng(0)
        pv, pt = tmp_path / "v.csv", tmp_path / "t.csv"
        np.savetxt(pv, g.standard_normal((16, 2)), delimiter=",")
        np.savetxt(pt, g.standard_normal((16, 2)), delimiter=",")
        cfg = {
            "data": {"kind": "file", "path_v": str(pv), "path_t": str(pt)},
            "critic_hidden": [8],
            "steps": 2,
            "batch_size": 8,
            "n_eval": 16,
            "out_dir": str(tmp_path / "mi2"),
        }
        body = client.post("/estimate-mi", json={"config": cfg}).json()
        assert body["oracle_nats"] is None
        report = json.loads((tmp_path / "mi2" / "mi_estimate.json").read_text())
        assert "oracle_nats" not in report

    def test_clustered_rejected(self, client, tmp_path):
        cfg = {
            "data": {"kind": "clustered"},
            "out_dir": str(tmp_path),
        }
        resp = client.post("/estimate-mi", json={"config": cfg})
        assert resp.status_code == 400


class TestGradcheck:
    def test_passes(self, client):
        body = client.post("/gradcheck", json={}).json()
        assert body["passed"] is True
        assert body["failing"] == []
        assert all(err < body["tolerance"] for err in body["ops"].values())

    def test_sabotage_detected(self, client):
        body = client.post("/gradcheck", json={"sabotage": "relu"}).json()
        assert body["passed"] is False
        assert body["failing"] == ["relu"]
