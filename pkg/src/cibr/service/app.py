"""FastAPI application exposing training, evaluation, sweeps, standalone
MI estimation, and gradient certification.

Jobs run synchronously in the request (runs are seconds-to-minutes);
artifacts land on the server's filesystem under the request's out_dir, and
responses carry both the file paths and the headline numbers.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..certify import TOLERANCE, failing_ops, gradcheck_suite
from ..errors import CibrError, ConfigError, DivergenceError, IoError
from ..nn import load_checkpoint, save_checkpoint
from ..train import (
    config_hash,
    estimate_mi,
    eval_dataset,
    run_training,
    standard_eval,
    sweep_lambda,
    write_manifest,
    write_step_csv,
)
from ..evaluate import evaluate_encoders
from . import models

log = logging.getLogger("cibr.service")

SWEEP_CSV_HEADER = "lambda,recall_at_1,accuracy,reg_v,reg_t,i_zv_zt"


def _ensure_dir(path: str) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoError(f"cannot create output directory {path}: {e}") from e
    return p


def _write_json(payload: dict, path: Path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def create_app() -> FastAPI:
    app = FastAPI(title="cibr", version=__version__)

    @app.exception_handler(DivergenceError)
    async def divergence_handler(request: Request, exc: DivergenceError):
        return JSONResponse(status_code=500, content={"error_kind": "divergence", "detail": str(exc)})

    @app.exception_handler(IoError)
    async def io_handler(request: Request, exc: IoError):
        return JSONResponse(status_code=500, content={"error_kind": "io", "detail": str(exc)})

    @app.exception_handler(OSError)
    async def os_handler(request: Request, exc: OSError):
        return JSONResponse(status_code=500, content={"error_kind": "io", "detail": str(exc)})

    @app.exception_handler(CibrError)
    async def domain_handler(request: Request, exc: CibrError):
        # anything else from the domain layer is a bad request/config
        return JSONResponse(status_code=400, content={"error_kind": "config", "detail": str(exc)})

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/train", response_model=models.TrainResponse)
    def train(req: models.TrainRequest) -> models.TrainResponse:
        config = req.config.to_run_config(seed_override=req.seed)
        out = _ensure_dir(req.out_dir or req.config.out_dir)
        log.info("training: %d steps, lambda=%.3g, out=%s", config.steps, config.lambda_, out)
        result = run_training(config)
        step_csv = out / "steps.csv"
        manifest_path = out / "manifest.json"
        ckpt_path = out / "checkpoint.ckpt"
        try:
            write_step_csv(result.records, step_csv)
            write_manifest(result.manifest, manifest_path)
            save_checkpoint(
                ckpt_path,
                {"encoder_v": result.encoder_v, "encoder_t": result.encoder_t},
                config.seed,
            )
        except OSError as e:
            raise IoError(f"cannot write artifacts under {out}: {e}") from e
        return models.TrainResponse(
            out_dir=str(out),
            step_csv=str(step_csv),
            manifest=str(manifest_path),
            checkpoint=str(ckpt_path),
            config_hash=config_hash(config),
            final_metrics=result.manifest["final_metrics"],
        )

    @app.post("/eval", response_model=models.EvalResponse)
    def eval_checkpoint(req: models.EvalRequest) -> models.EvalResponse:
        groups, _header = load_checkpoint(req.checkpoint)
        if "encoder_v" not in groups or "encoder_t" not in groups:
            raise ConfigError(f"checkpoint {req.checkpoint} lacks encoder groups")
        config = req.config.to_run_config()
        enc_v, enc_t = groups["encoder_v"], groups["encoder_t"]
        if tuple(enc_v.spec.layer_dims) != tuple(config.encoder_v.layer_dims) or \
           tuple(enc_t.spec.layer_dims) != tuple(config.encoder_t.layer_dims):
            raise ConfigError(
                f"checkpoint dims {list(enc_v.spec.layer_dims)}/{list(enc_t.spec.layer_dims)} "
                f"do not match config dims {list(config.encoder_v.layer_dims)}/"
                f"{list(config.encoder_t.layer_dims)}"
            )
        opts = req.config.eval.to_options(direction=req.direction)
        ds = eval_dataset(config, opts.n_eval)
        ev = evaluate_encoders(enc_v, enc_t, ds, opts)
        out = _ensure_dir(req.out_dir or req.config.out_dir)
        retrieval_path = out / "retrieval_report.json"
        _write_json(ev.retrieval.to_json(), retrieval_path)
        classification_path = None
        classification = None
        if ev.classification is not None:
            classification = ev.classification.to_json()
            classification_path = out / "classification_report.json"
            _write_json(classification, classification_path)
        return models.EvalResponse(
            retrieval=ev.retrieval.to_json(),
            classification=classification,
            retrieval_path=str(retrieval_path),
            classification_path=None if classification_path is None else str(classification_path),
        )

    @app.post("/sweep", response_model=models.SweepResponse)
    def sweep(req: models.SweepRequest) -> models.SweepResponse:
        if not req.lambdas:
            raise ConfigError("lambda list must be non-empty")
        config = req.config.to_run_config(seed_override=req.seed)
        opts = req.config.eval.to_options()
        rows = sweep_lambda(config, req.lambdas, standard_eval(opts))
        out = _ensure_dir(req.out_dir or req.config.out_dir)
        csv_path = out / "sweep.csv"
        try:
            with open(csv_path, "w", encoding="utf-8") as f:
                f.write(SWEEP_CSV_HEADER + "\n")
                for row in rows:
                    f.write(
                        f"{row['lambda']!r},{row['recall_at_1']!r},{row['accuracy']!r},"
                        f"{row['reg_v']!r},{row['reg_t']!r},{row['i_zv_zt']!r}\n"
                    )
        except OSError as e:
            raise IoError(f"cannot write {csv_path}: {e}") from e
        return models.SweepResponse(rows=rows, csv_path=str(csv_path))

    @app.post("/estimate-mi", response_model=models.EstimateMIResponse)
    def estimate(req: models.EstimateMIRequest) -> models.EstimateMIResponse:
        cfg = req.config
        report = estimate_mi(
            cfg.data_spec(),
            critic_hidden=tuple(cfg.critic_hidden),
            steps=cfg.steps,
            batch_size=cfg.batch_size,
            lr=cfg.lr,
            ema_decay=cfg.ema_decay,
            seed=cfg.seed,
            n_eval=cfg.n_eval,
            clamp_t=cfg.clamp_t,
        )
        out = _ensure_dir(req.out_dir or cfg.out_dir)
        report_path = out / "mi_estimate.json"
        _write_json(report, report_path)
        return models.EstimateMIResponse(
            estimate_nats=report["estimate_nats"],
            oracle_nats=report.get("oracle_nats"),
            abs_error=report.get("abs_error"),
            report_path=str(report_path),
        )

    @app.post("/gradcheck", response_model=models.GradcheckResponse)
    def gradcheck(req: models.GradcheckRequest) -> models.GradcheckResponse:
        results = gradcheck_suite(sabotage=req.sabotage)
        failing = failing_ops(results)
        return models.GradcheckResponse(
            ops=results, failing=failing, passed=not failing, tolerance=TOLERANCE
        )

    return app


app = create_app()
