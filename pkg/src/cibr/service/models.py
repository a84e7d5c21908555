"""Request/response schemas for the service, mirroring the run config.

Every config model forbids unknown keys, so a typo like `lamda` is
rejected at validation time with the offending key named in the error.
"""

from __future__ import annotations

from typing import Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..data import ClusteredPairSpec, FileDataSpec, GaussianPairSpec
from ..errors import ConfigError
from ..evaluate import EvalOptions
from ..nn import MlpSpec
from ..train import RunConfig, data_dims


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GaussianDataModel(StrictModel):
    kind: Literal["gaussian"] = "gaussian"
    dim_shared: int = Field(0, ge=0)
    dim_v_noise: int = Field(0, ge=0)
    dim_t_noise: int = Field(0, ge=0)
    rho: Optional[Union[float, List[float]]] = None
    mix_v: Optional[List[List[float]]] = None
    mix_t: Optional[List[List[float]]] = None
    noise_v: float = 1.0
    noise_t: float = 1.0

    def to_spec(self, n_samples: int = 2, seed: int = 0) -> GaussianPairSpec:
        rho = self.rho
        if isinstance(rho, list):
            rho = tuple(rho)
        return GaussianPairSpec(
            n_samples=n_samples,
            seed=seed,
            dim_shared=self.dim_shared,
            dim_v_noise=self.dim_v_noise,
            dim_t_noise=self.dim_t_noise,
            rho=rho,
            mix_v=None if self.mix_v is None else np.asarray(self.mix_v),
            mix_t=None if self.mix_t is None else np.asarray(self.mix_t),
            noise_v=self.noise_v,
            noise_t=self.noise_t,
        )


class ClusteredDataModel(StrictModel):
    kind: Literal["clustered"] = "clustered"
    n_classes: int = Field(4, ge=2)
    dim_v: int = Field(16, ge=1)
    dim_t: int = Field(16, ge=1)
    class_separation: float = Field(3.0, gt=0)
    noise_scale: float = Field(1.0, ge=0)

    def to_spec(self, n_per_class: int = 1, seed: int = 0) -> ClusteredPairSpec:
        return ClusteredPairSpec(
            n_classes=self.n_classes,
            dim_v=self.dim_v,
            dim_t=self.dim_t,
            class_separation=self.class_separation,
            noise_scale=self.noise_scale,
            n_per_class=n_per_class,
            seed=seed,
        )


class FileDataModel(StrictModel):
    kind: Literal["file"] = "file"
    path_v: str
    path_t: str
    path_labels: Optional[str] = None

    def to_spec(self) -> FileDataSpec:
        return FileDataSpec(path_v=self.path_v, path_t=self.path_t, path_labels=self.path_labels)


DataModel = Union[GaussianDataModel, ClusteredDataModel, FileDataModel]


class EncoderModel(StrictModel):
    hidden: List[int] = [64]
    embed_dim: int = Field(32, ge=1)


class CriticsModel(StrictModel):
    diag_hidden: List[int] = [128, 128]
    v_hidden: List[int] = [128, 128]
    t_hidden: List[int] = [128, 128]


class EvalOptionsModel(StrictModel):
    n_eval: int = Field(512, ge=2)
    recall_ks: List[int] = [1, 5, 10]
    direction: Literal["t2v", "v2t"] = "t2v"

    def to_options(self, direction: Optional[str] = None) -> EvalOptions:
        return EvalOptions(
            n_eval=self.n_eval,
            recall_ks=tuple(self.recall_ks),
            direction=direction or self.direction,
        )


class ConfigFileModel(StrictModel):
    """The on-disk experiment config: run settings, eval options, output."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    data: DataModel = Field(discriminator="kind")
    encoder_v: EncoderModel = EncoderModel()
    encoder_t: EncoderModel = EncoderModel()
    critics: CriticsModel = CriticsModel()
    lambda_: float = Field(0.0, ge=0, alias="lambda")
    beta: float = Field(1.0, ge=0)
    tau: float = Field(0.1, gt=0)
    batch_size: int = Field(128, ge=2)
    steps: int = Field(500, ge=1)
    critic_steps: int = Field(5, ge=1)
    lr_encoder: float = Field(1e-3, gt=0)
    lr_critic: float = Field(1e-3, gt=0)
    ema_decay: float = Field(0.99, gt=0, lt=1)
    seed: int = Field(0, ge=0)
    symmetric: bool = True
    clamp_t: float = Field(50.0, gt=0)
    eval: EvalOptionsModel = EvalOptionsModel()
    out_dir: str = "runs/latest"

    def data_spec(self, seed: int):
        if isinstance(self.data, FileDataModel):
            return self.data.to_spec()
        if isinstance(self.data, GaussianDataModel):
            return self.data.to_spec(n_samples=self.batch_size, seed=seed)
        return self.data.to_spec(n_per_class=1, seed=seed)

    def to_run_config(self, seed_override: Optional[int] = None) -> RunConfig:
        seed = self.seed if seed_override is None else seed_override
        spec = self.data_spec(seed)
        dims = data_dims(spec)
        if dims is None:
            from ..data import load_paired_csv

            ds = load_paired_csv(spec.path_v, spec.path_t, spec.path_labels)
            dims = (ds.xv.cols, ds.xt.cols)
        dv, dt = dims
        return RunConfig(
            data=spec,
            encoder_v=MlpSpec((dv, *self.encoder_v.hidden, self.encoder_v.embed_dim)),
            encoder_t=MlpSpec((dt, *self.encoder_t.hidden, self.encoder_t.embed_dim)),
            critic_diag_hidden=tuple(self.critics.diag_hidden),
            critic_v_hidden=tuple(self.critics.v_hidden),
            critic_t_hidden=tuple(self.critics.t_hidden),
            lambda_=self.lambda_,
            beta=self.beta,
            tau=self.tau,
            batch_size=self.batch_size,
            steps=self.steps,
            critic_steps=self.critic_steps,
            lr_encoder=self.lr_encoder,
            lr_critic=self.lr_critic,
            ema_decay=self.ema_decay,
            seed=seed,
            symmetric=self.symmetric,
            clamp_t=self.clamp_t,
        )


# -- requests/responses --------------------------------------------------------


class TrainRequest(StrictModel):
    config: ConfigFileModel
    seed: Optional[int] = Field(None, ge=0)
    out_dir: Optional[str] = None


class TrainResponse(StrictModel):
    out_dir: str
    step_csv: str
    manifest: str
    checkpoint: str
    config_hash: str
    final_metrics: Dict[str, float]


class EvalRequest(StrictModel):
    checkpoint: str
    config: ConfigFileModel
    direction: Optional[Literal["t2v", "v2t"]] = None
    out_dir: Optional[str] = None


class EvalResponse(StrictModel):
    retrieval: dict
    classification: Optional[dict] = None
    retrieval_path: str
    classification_path: Optional[str] = None


class SweepRequest(StrictModel):
    config: ConfigFileModel
    lambdas: List[float]
    seed: Optional[int] = Field(None, ge=0)
    out_dir: Optional[str] = None


class SweepResponse(StrictModel):
    rows: List[Dict[str, float]]
    csv_path: str


class MIEstimationModel(StrictModel):
    """Standalone MI estimation settings (critic training budget)."""

    data: DataModel = Field(discriminator="kind")
    critic_hidden: List[int] = [128, 128]
    steps: int = Field(1500, ge=1)
    batch_size: int = Field(256, ge=2)
    lr: float = Field(1e-3, gt=0)
    ema_decay: float = Field(0.99, gt=0, lt=1)
    seed: int = Field(0, ge=0)
    n_eval: int = Field(4096, ge=2)
    clamp_t: float = Field(50.0, gt=0)
    out_dir: str = "runs/mi"

    def data_spec(self):
        if isinstance(self.data, ClusteredDataModel):
            raise ConfigError("MI estimation runs on gaussian or file data")
        if isinstance(self.data, GaussianDataModel):
            return self.data.to_spec(n_samples=self.batch_size, seed=self.seed)
        return self.data.to_spec()


class EstimateMIRequest(StrictModel):
    config: MIEstimationModel
    out_dir: Optional[str] = None


class EstimateMIResponse(StrictModel):
    estimate_nats: float
    oracle_nats: Optional[float] = None
    abs_error: Optional[float] = None
    report_path: str


class GradcheckRequest(StrictModel):
    # sabotage injects a broken backward rule; harness self-test only
    sabotage: Optional[str] = None


class GradcheckResponse(StrictModel):
    ops: Dict[str, float]
    failing: List[str]
    passed: bool
    tolerance: float


class ErrorPayload(StrictModel):
    error_kind: Literal["config", "divergence", "io", "internal"]
    detail: str
