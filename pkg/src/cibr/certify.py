"""Gradient certification: finite-difference checks over every exposed op.

Each registered check builds a scalar function from one operation (or one
composite: MLP forward, contrastive loss, the full regularized total) and
compares analytic gradients against central differences at 10 random
points. Inputs stay in [-1, 1] with relu/clip arguments kept away from
their kinks, since subgradients at kinks legitimately disagree with
symmetric differences.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (
    Tensor,
    concat_cols,
    gather_rows,
    grad_check,
    log_mean_exp,
    row_l2_normalize,
    row_logsumexp,
    take_diag,
)
from .nn import MlpSpec, init_mlp, mlp_forward
from .objectives import CriticSet, LossConfig, _total_loss, cosine_similarity_matrix, info_nce_loss
from .rng import stream

TOLERANCE = 1e-4
POINTS_PER_OP = 10


def _away_from_zero(x: np.ndarray, margin: float = 0.05) -> np.ndarray:
    """Push entries out of (-margin, margin) so kinks stay untouched."""
    return np.where(np.abs(x) < margin, np.sign(x) * margin + (x == 0) * margin, x)


def _clip_probe(g) -> np.ndarray:
    """Entries clearly inside or clearly outside the [-0.5, 0.5] clip band."""
    u = g.uniform(-1.0, 1.0, size=(3, 4))
    inside = 0.8 * u
    outside = np.sign(u) * (0.6 + 0.5 * (np.abs(u) - 0.5))
    return np.where(np.abs(u) < 0.5, inside, outside)


def _sabotaged_identity(t: Tensor) -> Tensor:
    """Identity with a deliberately wrong backward rule (self-test hook)."""

    def bw(g):
        if t.grad is None:
            t.grad = np.zeros(t.data.shape)
        t.grad += 1.01 * g

    return Tensor._from_op(t.data.copy(), (t,), bw, "sabotaged")


def _uniform(g, r, c):
    return g.uniform(-1.0, 1.0, size=(r, c))


def _checks() -> dict:
    """op name -> builder; a builder maps an rng to (scalar fn, probe array).

    Constants a check needs (the other operand, network weights) are drawn
    once per point, before the function is handed to grad_check.
    """

    def matmul_left(g):
        b = Tensor(_uniform(g, 4, 3))
        return (lambda x: (x @ b).sum()), _uniform(g, 3, 4)

    def matmul_right(g):
        a = Tensor(_uniform(g, 4, 3))
        return (lambda x: (a @ x).sum()), _uniform(g, 3, 4)

    def add(g):
        b = Tensor(_uniform(g, 3, 4))
        return (lambda x: (x + b).mean()), _uniform(g, 3, 4)

    def add_row_bias(g):
        a = Tensor(_uniform(g, 5, 4))
        return (lambda x: (a + x).mean()), _uniform(g, 1, 4)

    def sub(g):
        b = Tensor(_uniform(g, 3, 4))
        return (lambda x: (x - b).mean()), _uniform(g, 3, 4)

    def mul(g):
        b = Tensor(_uniform(g, 3, 4))
        return (lambda x: (x * b).sum()), _uniform(g, 3, 4)

    def scale(g):
        return (lambda x: x.scale(-1.7).sum()), _uniform(g, 3, 4)

    def exp(g):
        return (lambda x: x.exp().sum()), _uniform(g, 3, 4)

    def log(g):
        return (lambda x: x.log().sum()), g.uniform(0.5, 1.5, size=(3, 4))

    def relu(g):
        return (lambda x: x.relu().sum()), _away_from_zero(_uniform(g, 3, 4), 0.1)

    def clip(g):
        return (lambda x: x.clip(-0.5, 0.5).sum()), _clip_probe(g)

    def transpose(g):
        b = Tensor(_uniform(g, 3, 2))
        return (lambda x: (x.T @ b).sum()), _uniform(g, 3, 4)

    def full_sum(g):
        return (lambda x: x.sum()), _uniform(g, 3, 4)

    def full_mean(g):
        return (lambda x: x.mean()), _uniform(g, 3, 4)

    def concat(g):
        b = Tensor(_uniform(g, 3, 2))
        return (lambda x: concat_cols(x, b).sum()), _uniform(g, 3, 4)

    def gather(g):
        return (lambda x: gather_rows(x, [2, 0, 1, 0]).sum()), _uniform(g, 3, 4)

    def diag(g):
        return (lambda x: take_diag(x).sum()), _uniform(g, 4, 4)

    def normalize(g):
        return (lambda x: row_l2_normalize(x).sum()), _away_from_zero(_uniform(g, 3, 4), 0.3)

    def logsumexp_rows(g):
        return (lambda x: row_logsumexp(x).sum()), _uniform(g, 3, 4)

    def lme(g):
        return (lambda x: log_mean_exp(x)), _uniform(g, 5, 1)

    def mlp(g):
        params = init_mlp(MlpSpec((3, 5, 2)), seed=int(g.integers(1 << 30)))
        return (lambda x: mlp_forward(params, x).sum()), _uniform(g, 4, 3)

    def cosine(g):
        zt = Tensor(_away_from_zero(_uniform(g, 3, 4), 0.3))
        return (lambda x: cosine_similarity_matrix(x, zt).sum()), \
            _away_from_zero(_uniform(g, 3, 4), 0.3)

    def info_nce(g):
        cfg = LossConfig(tau=0.5)
        return (lambda x: info_nce_loss(x, cfg)), _uniform(g, 4, 4)

    def total_loss(g):
        seed = int(g.integers(1 << 30))
        critics = CriticSet(
            zv_zt=init_mlp(MlpSpec((8, 8, 1)), seed + 1),
            v_joint=init_mlp(MlpSpec((10, 8, 1)), seed + 2),
            v_cond=init_mlp(MlpSpec((7, 8, 1)), seed + 3),
            t_joint=init_mlp(MlpSpec((10, 8, 1)), seed + 4),
            t_cond=init_mlp(MlpSpec((7, 8, 1)), seed + 5),
        )
        xv = Tensor(_uniform(g, 4, 3))
        xt = Tensor(_uniform(g, 4, 3))
        zt = Tensor(_away_from_zero(_uniform(g, 4, 4), 0.3))
        cfg = LossConfig(tau=0.5)

        def f(zv):
            total, _ = _total_loss(zv, zt, xv, xt, critics, 0.7, cfg, beta=1.0)
            return total

        return f, _away_from_zero(_uniform(g, 4, 4), 0.3)

    return {
        "matmul_left": matmul_left,
        "matmul_right": matmul_right,
        "add": add,
        "add_row_bias": add_row_bias,
        "sub": sub,
        "mul": mul,
        "scale": scale,
        "exp": exp,
        "log": log,
        "relu": relu,
        "clip": clip,
        "transpose": transpose,
        "sum": full_sum,
        "mean": full_mean,
        "concat_cols": concat,
        "gather_rows": gather,
        "take_diag": diag,
        "row_l2_normalize": normalize,
        "row_logsumexp": logsumexp_rows,
        "log_mean_exp": lme,
        "mlp_forward": mlp,
        "cosine_similarity": cosine,
        "info_nce": info_nce,
        "cibr_total_loss": total_loss,
    }


def gradcheck_suite(seed: int = 0, sabotage: str = None) -> dict:
    """Run every registered check; returns op name -> max relative error.

    `sabotage` injects a wrong backward rule into the named op's check, a
    fixture for verifying that the harness actually catches bad rules.
    """
    results = {}
    for name, make in _checks().items():
        worst = 0.0
        for point in range(POINTS_PER_OP):
            g = stream(seed, "gradcheck", name, point)
            f, x0 = make(g)
            if sabotage == name:
                f = (lambda inner: lambda x: inner(_sabotaged_identity(x)))(f)
            worst = max(worst, grad_check(f, Tensor(x0), eps=1e-4))
        results[name] = worst
    return results


def failing_ops(results: dict, tolerance: float = TOLERANCE) -> list:
    return [name for name, err in results.items() if not err < tolerance]
