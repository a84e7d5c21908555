"""Training objectives and information-theoretic diagnostics.

The pieces:

* `info_nce_loss`: softmax contrastive alignment over an in-batch
  similarity matrix, temperature-scaled, optionally symmetrized over the
  two retrieval directions.
* `dv_mi_estimate`: the Donsker-Varadhan lower bound on mutual
  information from critic scores on joint vs. product-of-marginals pairs,
  the quantity a trained statistics network pushes toward the true MI.
* `conditional_mi_estimate`: I(Z;X|X') via the exact chain-rule identity
  I(Z;X|X') = I(Z;X,X') - I(Z;X'), one critic per unconditional term.
* `cibr_total_loss`: contrastive loss plus a lambda-weighted penalty on
  both modality-specific redundancies, with critics held frozen so
  gradients reach only the encoders.

Marginal samples for the DV bound come from an in-batch derangement: the
critic's second argument is shifted by one row, giving a deterministic
pairing with no fixed points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    concat_cols,
    gather_rows,
    log_mean_exp,
    row_l2_normalize,
    row_logsumexp,
    take_diag,
)
from .errors import AlignmentError, ConfigError, SampleCountError, ShapeError
from .nn import MlpParams, mlp_forward


@dataclass(frozen=True)
class LossConfig:
    """Temperature, direction symmetry, and the critic-output clamp."""

    tau: float = 0.1
    symmetric: bool = True
    clamp_t: float = 50.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.clamp_t <= 0:
            raise ConfigError(f"clamp_t must be > 0, got {self.clamp_t}")


@dataclass(frozen=True)
class MIEstimate:
    """A Donsker-Varadhan lower-bound value in nats plus sample counts."""

    value_nats: float
    n_joint: int
    n_marginal: int
    critic_id: str = ""


@dataclass(frozen=True)
class CIBDiagnostics:
    """Reported-only information quantities for one batch."""

    beta: float
    i_zv_zt: float
    i_zv_xv_given_xt: float
    i_zt_xt_given_xv: float
    cib_value: float


def cosine_similarity_matrix(zv: Tensor, zt: Tensor) -> Tensor:
    """S[i][j] = cosine similarity of zv row i and zt row j."""
    if zv.cols != zt.cols:
        raise ShapeError(f"embedding dims differ: {zv.shape} vs {zt.shape}")
    return row_l2_normalize(zv) @ row_l2_normalize(zt).T


def info_nce_loss(s: Tensor, cfg: LossConfig) -> Tensor:
    """Contrastive cross-entropy over a square similarity matrix.

    Row direction treats row i's diagonal entry as the positive among the
    row's candidates; with cfg.symmetric the column direction is averaged
    in. Stabilized row-wise, so any constant shift of a row cancels.
    """
    if s.rows != s.cols:
        raise ShapeError(f"similarity matrix must be square, got {s.shape}")
    logits = s.scale(1.0 / cfg.tau)
    loss = (row_logsumexp(logits) - take_diag(logits)).mean()
    if cfg.symmetric:
        logits_t = logits.T
        loss_t = (row_logsumexp(logits_t) - take_diag(logits_t)).mean()
        loss = (loss + loss_t).scale(0.5)
    return loss


def dv_bound(t_joint: Tensor, t_marginal: Tensor, cfg: LossConfig) -> Tensor:
    """Differentiable DV value: mean(T_joint) - log mean exp(T_marginal).

    Critic outputs are clamped to [-clamp_t, clamp_t] before use, so the
    exponential cannot overflow no matter what the critic emits.
    """
    if t_joint.cols != 1 or t_marginal.cols != 1:
        raise ShapeError(
            f"critic outputs must be n x 1 columns, got {t_joint.shape} and {t_marginal.shape}"
        )
    if t_joint.rows < 2 or t_marginal.rows < 2:
        raise SampleCountError(
            f"DV bound needs >= 2 samples per side, got {t_joint.rows} joint "
            f"and {t_marginal.rows} marginal"
        )
    c = cfg.clamp_t
    return t_joint.clip(-c, c).mean() - log_mean_exp(t_marginal.clip(-c, c))


def dv_mi_estimate(
    t_joint: Tensor, t_marginal: Tensor, cfg: LossConfig, critic_id: str = ""
) -> MIEstimate:
    """DV lower-bound estimate as a plain report value."""
    value = dv_bound(t_joint, t_marginal, cfg).item()
    return MIEstimate(
        value_nats=value,
        n_joint=t_joint.rows,
        n_marginal=t_marginal.rows,
        critic_id=critic_id,
    )


def derangement(n: int) -> np.ndarray:
    """Index shift by one: the in-batch pairing for marginal samples."""
    return (np.arange(n) + 1) % n


def paired_critic_scores(critic: MlpParams, left: Tensor, right: Tensor) -> tuple:
    """Critic scores on aligned pairs and on derangement-shifted pairs.

    Returns (t_joint, t_marginal), each n x 1. The second argument is the
    one shifted, matching the marginal-sampling convention everywhere.
    """
    if left.rows != right.rows:
        raise AlignmentError(f"sample counts differ: {left.rows} vs {right.rows}")
    t_joint = mlp_forward(critic, concat_cols(left, right))
    t_marginal = mlp_forward(critic, concat_cols(left, gather_rows(right, derangement(left.rows))))
    return t_joint, t_marginal


@dataclass
class CriticSet:
    """The five statistics networks one training run maintains.

    zv_zt scores (Zv, Zt) pairs for the cross-modal MI diagnostic; the
    joint/cond pairs realize each conditional-MI regularizer through the
    chain rule.
    """

    zv_zt: MlpParams
    v_joint: MlpParams  # scores (Zv, [Xv, Xt])
    v_cond: MlpParams   # scores (Zv, Xt)
    t_joint: MlpParams  # scores (Zt, [Xt, Xv])
    t_cond: MlpParams   # scores (Zt, Xv)

    def named(self) -> dict:
        return {
            "zv_zt": self.zv_zt,
            "v_joint": self.v_joint,
            "v_cond": self.v_cond,
            "t_joint": self.t_joint,
            "t_cond": self.t_cond,
        }


def conditional_mi_bound(
    z: Tensor,
    x: Tensor,
    x_cond: Tensor,
    critic_joint: MlpParams,
    critic_cond: MlpParams,
    cfg: LossConfig,
) -> Tensor:
    """Differentiable chain-rule estimate of I(Z; X | X').

    Computed as dv(Z; [X, X']) - dv(Z; X'), each term its own critic. The
    identity is exact; only the two DV estimates approximate.
    """
    if not (z.rows == x.rows == x_cond.rows):
        raise AlignmentError(
            f"sample counts differ: z={z.rows}, x={x.rows}, x_cond={x_cond.rows}"
        )
    tj, tm = paired_critic_scores(critic_joint, z, concat_cols(x, x_cond))
    joint_term = dv_bound(tj, tm, cfg)
    tj, tm = paired_critic_scores(critic_cond, z, x_cond)
    cond_term = dv_bound(tj, tm, cfg)
    return joint_term - cond_term


def conditional_mi_estimate(
    z: Tensor,
    x: Tensor,
    x_cond: Tensor,
    critic_joint: MlpParams,
    critic_cond: MlpParams,
    cfg: LossConfig,
    critic_id: str = "",
) -> MIEstimate:
    """Report-value form of `conditional_mi_bound`."""
    value = conditional_mi_bound(z, x, x_cond, critic_joint, critic_cond, cfg).item()
    return MIEstimate(value_nats=value, n_joint=z.rows, n_marginal=z.rows, critic_id=critic_id)


@dataclass(frozen=True)
class TotalLossParts:
    """Scalar breakdown of one `cibr_total_loss` evaluation."""

    total: float
    clip: float
    reg_v: float
    reg_t: float
    diagnostics: CIBDiagnostics


def _total_loss(
    zv: Tensor,
    zt: Tensor,
    xv: Tensor,
    xt: Tensor,
    critics: CriticSet,
    lambda_: float,
    cfg: LossConfig,
    beta: float = 0.0,
) -> tuple:
    """(total Tensor, TotalLossParts) with critics frozen.

    With lambda_ == 0 the regularizer contributes nothing to the graph at
    all; its estimates are still computed detached for the diagnostics.
    """
    if lambda_ < 0:
        raise ConfigError(f"lambda must be >= 0, got {lambda_}")
    if beta < 0:
        raise ConfigError(f"beta must be >= 0, got {beta}")
    frozen = CriticSet(**{k: p.frozen() for k, p in critics.named().items()})
    xv_c, xt_c = xv.detach(), xt.detach()

    clip = info_nce_loss(cosine_similarity_matrix(zv, zt), cfg)
    if lambda_ > 0:
        reg_v_t = conditional_mi_bound(zv, xv_c, xt_c, frozen.v_joint, frozen.v_cond, cfg)
        reg_t_t = conditional_mi_bound(zt, xt_c, xv_c, frozen.t_joint, frozen.t_cond, cfg)
        total = clip + (reg_v_t + reg_t_t).scale(lambda_)
        reg_v, reg_t = reg_v_t.item(), reg_t_t.item()
    else:
        total = clip
        zv_c, zt_c = zv.detach(), zt.detach()
        reg_v = conditional_mi_bound(zv_c, xv_c, xt_c, frozen.v_joint, frozen.v_cond, cfg).item()
        reg_t = conditional_mi_bound(zt_c, xt_c, xv_c, frozen.t_joint, frozen.t_cond, cfg).item()

    tj, tm = paired_critic_scores(frozen.zv_zt, zv.detach(), zt.detach())
    i_zv_zt = dv_bound(tj, tm, cfg).item()

    diag = CIBDiagnostics(
        beta=beta,
        i_zv_zt=i_zv_zt,
        i_zv_xv_given_xt=reg_v,
        i_zt_xt_given_xv=reg_t,
        cib_value=(reg_v + reg_t + i_zv_zt) - beta * i_zv_zt,
    )
    parts = TotalLossParts(
        total=total.item(), clip=clip.item(), reg_v=reg_v, reg_t=reg_t, diagnostics=diag
    )
    return total, parts


def cibr_total_loss(
    zv: Tensor,
    zt: Tensor,
    xv: Tensor,
    xt: Tensor,
    critics: CriticSet,
    lambda_: float,
    cfg: LossConfig,
    beta: float = 0.0,
) -> tuple:
    """Contrastive loss plus lambda-weighted redundancy penalties.

    Returns (total loss Tensor, CIBDiagnostics). Gradients flow to the
    encoder outputs only; the critics are frozen for the evaluation.
    """
    total, parts = _total_loss(zv, zt, xv, xt, critics, lambda_, cfg, beta)
    return total, parts.diagnostics


def cib_objective(diag: CIBDiagnostics) -> float:
    """Diagnostic bottleneck value from one batch's estimates.

    The joint-information term is approximated by the recorded convention
    reg_v + reg_t + i_zv_zt; beta weights only the cross-modal term. This
    number is reported, never optimized.
    """
    return diag.cib_value
