"""The alternating training loop for the regularized contrastive objective.

Each step draws a fresh batch from the deterministic data stream, runs k
ascent rounds on all five critics (with the standard moving-average
correction of the partition-term gradient), then one descent step on both
encoders through the total loss with critics frozen. Identical configs
produce identical step records, bit for bit, except wall-clock columns.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from .autodiff import Tensor, backward, concat_cols
from .data import (
    ClusteredPairSpec,
    FileDataSpec,
    GaussianPairSpec,
    PairedDataset,
    gaussian_conditional_mi,
    gaussian_mi,
    gen_clustered_pairs,
    gen_gaussian_pairs,
    gen_mvn,
    load_paired_csv,
    subset,
)
from .errors import ConfigError, DegenerateEmbeddingError, DivergenceError
from .errors import SampleCountError
from .evaluate import EvalOptions, EvalResult, evaluate_encoders
from .nn import (AdamState, MlpParams, MlpSpec, adam_step, collect_grads, encode,
                 init_mlp, mlp_forward)
from .objectives import (CriticSet, LossConfig, _total_loss, conditional_mi_estimate,
    dv_bound, paired_critic_scores)
from .rng import derive_seed, stream

DEFAULT_CRITIC_HIDDEN = (128, 128)


@dataclass(frozen=True)
class RunConfig:
    """Everything one training run depends on, seed included."""

    data: object  # GaussianPairSpec | ClusteredPairSpec | FileDataSpec
    encoder_v: MlpSpec
    encoder_t: MlpSpec
    critic_diag_hidden: tuple = DEFAULT_CRITIC_HIDDEN
    critic_v_hidden: tuple = DEFAULT_CRITIC_HIDDEN
    critic_t_hidden: tuple = DEFAULT_CRITIC_HIDDEN
    lambda_: float = 0.0
    beta: float = 1.0
    tau: float = 0.1
    batch_size: int = 128
    steps: int = 500
    critic_steps: int = 5
    lr_encoder: float = 1e-3
    lr_critic: float = 1e-3
    ema_decay: float = 0.99
    seed: int = 0
    symmetric: bool = True
    clamp_t: float = 50.0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (negatives and marginal pairs)")
        if self.steps < 1 or self.critic_steps < 1:
            raise ConfigError("steps and critic_steps must be >= 1")
        if self.lambda_ < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lambda_}")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.lr_encoder <= 0 or self.lr_critic <= 0:
            raise ConfigError("learning rates must be > 0")
        if not 0.0 < self.ema_decay < 1.0:
            raise ConfigError(f"ema_decay must lie strictly in (0, 1), got {self.ema_decay}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.encoder_v.out_dim != self.encoder_t.out_dim:
            raise ConfigError(
                f"encoders must share the embedding dim, got {self.encoder_v.out_dim} "
                f"and {self.encoder_t.out_dim}"
            )
        dims = data_dims(self.data)
        if dims is not None:
            dv, dt = dims
            if self.encoder_v.in_dim != dv:
                raise ConfigError(
                    f"encoder_v expects {self.encoder_v.in_dim} input dims, data has {dv}"
                )
            if self.encoder_t.in_dim != dt:
                raise ConfigError(
                    f"encoder_t expects {self.encoder_t.in_dim} input dims, data has {dt}"
                )

    @property
    def embed_dim(self) -> int:
        return self.encoder_v.out_dim

    def loss_config(self) -> LossConfig:
        return LossConfig(tau=self.tau, symmetric=self.symmetric, clamp_t=self.clamp_t)


def data_dims(spec) -> tuple | None:
    """(dim_v, dim_t) when known without touching the filesystem."""
    if isinstance(spec, GaussianPairSpec):
        return spec.dims_v, spec.dims_t
    if isinstance(spec, ClusteredPairSpec):
        return spec.dim_v, spec.dim_t
    return None


@dataclass(frozen=True)
class StepRecord:
    step: int
    clip_loss: float
    reg_v: float
    reg_t: float
    total_loss: float
    i_zv_zt: float
    wall_ms: float


@dataclass
class _CriticState:
    params: MlpParams
    adam: AdamState
    ema: float = None


@dataclass
class TrainResult:
    encoder_v: MlpParams
    encoder_t: MlpParams
    critics: CriticSet
    records: list
    manifest: dict


class _BatchSource:
    """Deterministic per-step batches for any of the three data kinds."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.full = None
        if isinstance(config.data, FileDataSpec):
            self.full = load_paired_csv(
                config.data.path_v, config.data.path_t, config.data.path_labels
            )
            dv, dt = self.full.xv.cols, self.full.xt.cols
            if config.encoder_v.in_dim != dv or config.encoder_t.in_dim != dt:
                raise ConfigError(
                    f"encoders expect ({config.encoder_v.in_dim}, {config.encoder_t.in_dim}) "
                    f"input dims, file data has ({dv}, {dt})"
                )

    def draw(self, step: int) -> PairedDataset:
        cfg = self.config
        n = cfg.batch_size
        seed = derive_seed(cfg.seed, "batch", step)
        if isinstance(cfg.data, GaussianPairSpec):
            return gen_gaussian_pairs(replace(cfg.data, n_samples=n, seed=seed))
        if isinstance(cfg.data, ClusteredPairSpec):
            per_class = -(-n // cfg.data.n_classes)  # ceil; labels interleave
            ds = gen_clustered_pairs(replace(cfg.data, n_per_class=per_class, seed=seed))
            return subset(ds, range(n))
        g = stream(cfg.seed, "perm", step)
        if self.full.n >= n:
            idx = g.choice(self.full.n, size=n, replace=False)
        else:
            idx = g.choice(self.full.n, size=n, replace=True)
        return subset(self.full, idx)


def critic_update(
    critic: MlpParams,
    left: Tensor,
    right: Tensor,
    adam: AdamState,
    ema: float,
    cfg: LossConfig,
    ema_decay: float,
) -> tuple:
    """One ascent step on the DV value of a single critic.

    The gradient of the log-partition term uses an exponential moving
    average of mean(exp T) in place of the per-batch mean, the usual
    debiasing for this estimator; the reported value stays the raw
    per-batch DV bound. Returns (params, adam, ema, dv_value).
    """
    t_joint, t_marginal = paired_critic_scores(critic, left, right)
    c = cfg.clamp_t
    mean_joint = t_joint.clip(-c, c).mean()
    mean_exp_marginal = t_marginal.clip(-c, c).exp().mean()
    batch_partition = mean_exp_marginal.item()
    value = mean_joint.item() - math.log(batch_partition)
    if not math.isfinite(value):
        raise DivergenceError(f"DV value is non-finite: {value}")
    ema = batch_partition if ema is None else ema_decay * ema + (1.0 - ema_decay) * batch_partition
    loss = mean_exp_marginal.scale(1.0 / ema) - mean_joint
    backward(loss)
    params, adam = adam_step(critic, collect_grads(critic), adam)
    return params, adam, ema, value


def encoder_update(
    encoder_v: MlpParams,
    encoder_t: MlpParams,
    critics: CriticSet,
    batch: PairedDataset,
    config: RunConfig,
    adam_v: AdamState,
    adam_t: AdamState,
) -> tuple:
    """One descent step on the total loss; critics stay frozen.

    Returns (encoder_v, encoder_t, adam_v, adam_t, parts).
    """
    zv = encode(encoder_v, batch.xv)
    zt = encode(encoder_t, batch.xt)
    total, parts = _total_loss(
        zv, zt, batch.xv, batch.xt, critics,
        config.lambda_, config.loss_config(), config.beta,
    )
    if not math.isfinite(parts.total):
        raise DivergenceError(f"total loss is non-finite: {parts.total}")
    backward(total)
    encoder_v, adam_v = adam_step(encoder_v, collect_grads(encoder_v), adam_v)
    encoder_t, adam_t = adam_step(encoder_t, collect_grads(encoder_t), adam_t)
    return encoder_v, encoder_t, adam_v, adam_t, parts


def _critic_states(config: RunConfig) -> dict:
    dims = data_dims(config.data)
    if dims is None:
        ds = load_paired_csv(config.data.path_v, config.data.path_t, config.data.path_labels)
        dims = (ds.xv.cols, ds.xt.cols)
    dv, dt = dims
    d = config.embed_dim
    layout = {
        "zv_zt": (d + d, config.critic_diag_hidden),
        "v_joint": (d + dv + dt, config.critic_v_hidden),
        "v_cond": (d + dt, config.critic_v_hidden),
        "t_joint": (d + dt + dv, config.critic_t_hidden),
        "t_cond": (d + dv, config.critic_t_hidden),
    }
    states = {}
    for name, (in_dim, hidden) in layout.items():
        params = init_mlp(MlpSpec((in_dim, *hidden, 1)), derive_seed(config.seed, "critic", name))
        states[name] = _CriticState(
            params=params, adam=AdamState.for_params(params, lr=config.lr_critic)
        )
    return states


def config_echo(config: RunConfig) -> dict:
    """JSON-able echo of a config, defaults fully materialized."""

    def convert(obj):
        if isinstance(obj, (GaussianPairSpec, ClusteredPairSpec, FileDataSpec)):
            d = {k: convert(v) for k, v in obj.__dict__.items()}
            d["kind"] = {GaussianPairSpec: "gaussian", ClusteredPairSpec: "clustered",
                         FileDataSpec: "file"}[type(obj)]
            return d
        if isinstance(obj, MlpSpec):
            return list(obj.layer_dims)
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, tuple):
            return list(obj)
        return obj

    echo = {k: convert(v) for k, v in config.__dict__.items()}
    echo["lambda"] = echo.pop("lambda_")
    return echo


def config_hash(config: RunConfig) -> str:
    blob = json.dumps(config_echo(config), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def run_training(config: RunConfig) -> TrainResult:
    """Train encoders and critics; returns params, records, and manifest."""
    source = _BatchSource(config)
    encoder_v = init_mlp(config.encoder_v, derive_seed(config.seed, "enc", "v"))
    encoder_t = init_mlp(config.encoder_t, derive_seed(config.seed, "enc", "t"))
    adam_v = AdamState.for_params(encoder_v, lr=config.lr_encoder)
    adam_t = AdamState.for_params(encoder_t, lr=config.lr_encoder)
    critics = _critic_states(config)
    lcfg = config.loss_config()

    records = []
    for step in range(1, config.steps + 1):
        t0 = time.perf_counter()
        try:
            batch = source.draw(step)
            zv_const = encode(encoder_v.frozen(), batch.xv)
            zt_const = encode(encoder_t.frozen(), batch.xt)
            xv_xt = concat_cols(batch.xv, batch.xt)
            xt_xv = concat_cols(batch.xt, batch.xv)
            pairs = {
                "zv_zt": (zv_const, zt_const),
                "v_joint": (zv_const, xv_xt),
                "v_cond": (zv_const, batch.xt),
                "t_joint": (zt_const, xt_xv),
                "t_cond": (zt_const, batch.xv),
            }
            for _ in range(config.critic_steps):
                for name, cs in critics.items():
                    left, right = pairs[name]
                    cs.params, cs.adam, cs.ema, _ = critic_update(
                        cs.params, left, right, cs.adam, cs.ema, lcfg, config.ema_decay
                    )
            critic_set = CriticSet(**{name: cs.params for name, cs in critics.items()})
            encoder_v, encoder_t, adam_v, adam_t, parts = encoder_update(
                encoder_v, encoder_t, critic_set, batch, config, adam_v, adam_t
            )
        except (DivergenceError, DegenerateEmbeddingError) as e:
            last = records[-1] if records else None
            raise DivergenceError(f"diverged at step {step}: {e} (last finite record: {last})") from e
        records.append(StepRecord(
            step=step,
            clip_loss=parts.clip,
            reg_v=parts.reg_v,
            reg_t=parts.reg_t,
            total_loss=parts.total,
            i_zv_zt=parts.diagnostics.i_zv_zt,
            wall_ms=(time.perf_counter() - t0) * 1e3,
        ))

    critic_set = CriticSet(**{name: cs.params for name, cs in critics.items()})
    manifest = build_manifest(config, records)
    manifest["final_estimates"] = _holdout_estimates(config, encoder_v, encoder_t, critic_set)
    return TrainResult(
        encoder_v=encoder_v,
        encoder_t=encoder_t,
        critics=critic_set,
        records=records,
        manifest=manifest,
    )


def _holdout_estimates(
    config: RunConfig, encoder_v: MlpParams, encoder_t: MlpParams, critics: CriticSet
) -> dict:
    """Low-variance final diagnostics on one large held-out batch.

    Per-step records estimate on batch_size samples, which is noisy; run
    comparisons (regularizer compression, cross-modal MI stability) need a
    steadier readout, so the manifest also carries estimates on a single
    seed-derived batch of at least 1024 samples.
    """
    n = max(1024, config.batch_size)
    seed = derive_seed(config.seed, "diagnostic")
    if isinstance(config.data, GaussianPairSpec):
        ds = gen_gaussian_pairs(replace(config.data, n_samples=n, seed=seed))
    elif isinstance(config.data, ClusteredPairSpec):
        per_class = -(-n // config.data.n_classes)
        ds = subset(gen_clustered_pairs(replace(config.data, n_per_class=per_class, seed=seed)),
                    range(n))
    else:
        ds = load_paired_csv(config.data.path_v, config.data.path_t, config.data.path_labels)
    zv = encode(encoder_v.frozen(), ds.xv)
    zt = encode(encoder_t.frozen(), ds.xt)
    _, parts = _total_loss(
        zv, zt, ds.xv, ds.xt, critics, 0.0, config.loss_config(), config.beta
    )
    return {
        "n": ds.n,
        "clip_loss": parts.clip,
        "reg_v": parts.reg_v,
        "reg_t": parts.reg_t,
        "i_zv_zt": parts.diagnostics.i_zv_zt,
        "cib_value": parts.diagnostics.cib_value,
    }


def final_metrics(records: list, tail_fraction: float = 0.1) -> dict:
    """Mean of each logged quantity over the trailing fraction of steps.

    Single-batch estimates are noisy, so "final" values are tail averages
    rather than the literal last record.
    """
    tail = records[-max(1, int(len(records) * tail_fraction)):]
    return {
        "clip_loss": float(np.mean([r.clip_loss for r in tail])),
        "reg_v": float(np.mean([r.reg_v for r in tail])),
        "reg_t": float(np.mean([r.reg_t for r in tail])),
        "total_loss": float(np.mean([r.total_loss for r in tail])),
        "i_zv_zt": float(np.mean([r.i_zv_zt for r in tail])),
        "tail_steps": len(tail),
    }


def build_manifest(config: RunConfig, records: list) -> dict:
    return {
        "format": "cibr-run-manifest",
        "version": 1,
        "library_version": __version__,
        "seed": config.seed,
        "config": config_echo(config),
        "config_hash": config_hash(config),
        "steps_completed": len(records),
        "final_metrics": final_metrics(records),
    }


CSV_HEADER = "step,clip_loss,reg_v,reg_t,total_loss,i_zv_zt,wall_ms"


def write_step_csv(records: list, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(CSV_HEADER + "\n")
        for r in records:
            f.write(
                f"{r.step},{r.clip_loss!r},{r.reg_v!r},{r.reg_t!r},"
                f"{r.total_loss!r},{r.i_zv_zt!r},{r.wall_ms:.3f}\n"
            )


def write_manifest(manifest: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def eval_dataset(config: RunConfig, n_eval: int) -> PairedDataset:
    """Held-out samples from the run's data source, seed-derived."""
    seed = derive_seed(config.seed, "eval")
    if isinstance(config.data, GaussianPairSpec):
        return gen_gaussian_pairs(replace(config.data, n_samples=n_eval, seed=seed))
    if isinstance(config.data, ClusteredPairSpec):
        per_class = -(-n_eval // config.data.n_classes)
        ds = gen_clustered_pairs(replace(config.data, n_per_class=per_class, seed=seed))
        return subset(ds, range(n_eval))
    full = load_paired_csv(config.data.path_v, config.data.path_t, config.data.path_labels)
    if full.n < 2:
        raise SampleCountError("file-backed evaluation needs >= 2 samples")
    return full


def standard_eval(opts: EvalOptions):
    """The sweep's per-run evaluation: held-out retrieval + classification."""

    def run(result: TrainResult, config: RunConfig) -> dict:
        ds = eval_dataset(config, opts.n_eval)
        ev: EvalResult = evaluate_encoders(result.encoder_v, result.encoder_t, ds, opts)
        first_k = sorted(ev.retrieval.recall_at)[0]
        return {
            "recall_at_1": ev.retrieval.recall_at.get(1, ev.retrieval.recall_at[first_k]),
            "accuracy": float("nan") if ev.classification is None else ev.classification.accuracy,
        }

    return run


def estimate_mi(
    data_spec,
    critic_hidden: tuple = DEFAULT_CRITIC_HIDDEN,
    steps: int = 1500,
    batch_size: int = 256,
    lr: float = 1e-3,
    ema_decay: float = 0.99,
    seed: int = 0,
    n_eval: int = 4096,
    clamp_t: float = 50.0,
) -> dict:
    """Train a fresh critic on raw (Xv, Xt) pairs and report the DV value.

    The estimate comes from a single evaluation on held-out samples after
    training. When the data spec is Gaussian the closed-form value and the
    absolute error are included.
    """
    if steps < 1 or batch_size < 2 or n_eval < 2:
        raise ConfigError("need steps >= 1, batch_size >= 2, n_eval >= 2")
    cfg = LossConfig(clamp_t=clamp_t)

    if isinstance(data_spec, FileDataSpec):
        full = load_paired_csv(data_spec.path_v, data_spec.path_t, data_spec.path_labels)
        dv, dt = full.xv.cols, full.xt.cols

        def draw(step):
            g = stream(seed, "perm", step)
            replace_draw = full.n < batch_size
            return subset(full, g.choice(full.n, size=batch_size, replace=replace_draw))

        eval_ds = full
        oracle = None
    elif isinstance(data_spec, GaussianPairSpec):
        dv, dt = data_spec.dims_v, data_spec.dims_t

        def draw(step):
            return gen_gaussian_pairs(
                replace(data_spec, n_samples=batch_size, seed=derive_seed(seed, "batch", step))
            )

        eval_ds = gen_gaussian_pairs(
            replace(data_spec, n_samples=n_eval, seed=derive_seed(seed, "eval"))
        )
        oracle = gaussian_mi(data_spec)
    else:
        raise ConfigError(f"estimate_mi supports gaussian or file data, got {type(data_spec)}")

    critic = init_mlp(MlpSpec((dv + dt, *critic_hidden, 1)), derive_seed(seed, "critic"))
    adam = AdamState.for_params(critic, lr=lr)
    ema = None
    for step in range(1, steps + 1):
        batch = draw(step)
        try:
            critic, adam, ema, _ = critic_update(
                critic, batch.xv, batch.xt, adam, ema, cfg, ema_decay
            )
        except DivergenceError as e:
            raise DivergenceError(f"diverged at step {step}: {e}") from e

    t_joint, t_marginal = paired_critic_scores(critic, eval_ds.xv, eval_ds.xt)
    estimate = dv_bound(t_joint, t_marginal, cfg).item()
    report = {"estimate_nats": estimate, "n_eval": eval_ds.n, "steps": steps, "seed": seed}
    if oracle is not None:
        report["oracle_nats"] = oracle
        report["abs_error"] = abs(estimate - oracle)
    return report


def estimate_conditional_mi(
    cov,
    dims: tuple,
    critic_hidden: tuple = DEFAULT_CRITIC_HIDDEN,
    steps: int = 2000,
    batch_size: int = 256,
    lr: float = 1e-3,
    ema_decay: float = 0.99,
    seed: int = 0,
    n_eval: int = 4096,
    clamp_t: float = 50.0,
) -> dict:
    """Train the chain-rule critic pair on a known Gaussian triple.

    Samples (Z, X, X') from the given joint covariance (block sizes in
    `dims`), trains one critic on (Z; [X, X']) and one on (Z; X'), and
    reports the difference of their DV values on held-out samples next to
    the closed-form conditional MI.
    """
    dz, dx, dxc = dims
    cfg = LossConfig(clamp_t=clamp_t)
    oracle = gaussian_conditional_mi(cov, dims)

    critic_joint = init_mlp(
        MlpSpec((dz + dx + dxc, *critic_hidden, 1)), derive_seed(seed, "critic", "joint")
    )
    critic_cond = init_mlp(
        MlpSpec((dz + dxc, *critic_hidden, 1)), derive_seed(seed, "critic", "cond")
    )
    adam_joint = AdamState.for_params(critic_joint, lr=lr)
    adam_cond = AdamState.for_params(critic_cond, lr=lr)
    ema_joint = ema_cond = None

    def split(t: Tensor):
        z = Tensor(t.data[:, :dz])
        x = Tensor(t.data[:, dz:dz + dx])
        xc = Tensor(t.data[:, dz + dx:])
        return z, x, xc

    for step in range(1, steps + 1):
        z, x, xc = split(gen_mvn(cov, batch_size, derive_seed(seed, "batch", step)))
        try:
            critic_joint, adam_joint, ema_joint, _ = critic_update(
                critic_joint, z, concat_cols(x, xc), adam_joint, ema_joint, cfg, ema_decay
            )
            critic_cond, adam_cond, ema_cond, _ = critic_update(
                critic_cond, z, xc, adam_cond, ema_cond, cfg, ema_decay
            )
        except DivergenceError as e:
            raise DivergenceError(f"diverged at step {step}: {e}") from e

    z, x, xc = split(gen_mvn(cov, n_eval, derive_seed(seed, "eval")))
    est = conditional_mi_estimate(z, x, xc, critic_joint, critic_cond, cfg)
    return {
        "estimate_nats": est.value_nats,
        "oracle_nats": oracle,
        "abs_error": abs(est.value_nats - oracle),
        "n_eval": n_eval,
        "steps": steps,
        "seed": seed,
    }


def sweep_lambda(base: RunConfig, lambdas, evaluate_run) -> list:
    """Independent runs per lambda (shared seed), each followed by eval.

    `evaluate_run` maps (TrainResult, RunConfig) to a metrics dict; rows
    come back ordered by lambda, duplicates preserved.
    """
    if not lambdas:
        raise ConfigError("lambda list must be non-empty")
    if any(lam < 0 for lam in lambdas):
        raise ConfigError("all lambda values must be >= 0")
    rows = []
    for lam in sorted(float(l) for l in lambdas):
        cfg = replace(base, lambda_=lam)
        result = run_training(cfg)
        metrics = evaluate_run(result, cfg)
        fe = result.manifest["final_estimates"]
        rows.append({
            "lambda": lam,
            "reg_v": fe["reg_v"],
            "reg_t": fe["reg_t"],
            "i_zv_zt": fe["i_zv_zt"],
            **metrics,
        })
    return rows
