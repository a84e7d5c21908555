"""MLP encoders/critics, deterministic init, Adam, and checkpoint files.

Parameters are updated functionally: `adam_step` returns fresh params and
state, so a training step never mutates tensors the graph still references.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tensor, row_l2_normalize
from .errors import CheckpointError, ConstructionError, DivergenceError, ShapeError
from .rng import stream

CHECKPOINT_MAGIC = b"CIBRCKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths input -> hidden... -> output; relu between layers,
    affine output."""

    layer_dims: tuple

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2:
            raise ConstructionError(f"spec needs >= 2 layer dims, got {dims}")
        if any(d < 1 for d in dims):
            raise ConstructionError(f"layer dims must be >= 1, got {dims}")

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]


@dataclass
class MlpParams:
    """Weight/bias tensors in layer order, all requires_grad."""

    spec: MlpSpec
    weights: list
    biases: list

    def tensors(self) -> list:
        """Flat [W0, b0, W1, b1, ...] view used by the optimizer."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def tensor_names(self) -> list:
        out = []
        for i in range(len(self.weights)):
            out.extend([f"W{i}", f"b{i}"])
        return out

    def frozen(self) -> "MlpParams":
        """Same values with gradients switched off (constant in the graph)."""
        return MlpParams(
            spec=self.spec,
            weights=[w.detach() for w in self.weights],
            biases=[b.detach() for b in self.biases],
        )


def init_mlp(spec: MlpSpec, seed: int) -> MlpParams:
    """Glorot-uniform weights, zero biases, from per-layer named streams.

    A pure function of (spec, seed): the same arguments always yield
    bitwise-identical parameters.
    """
    weights, biases = [], []
    for layer, (fan_in, fan_out) in enumerate(zip(spec.layer_dims, spec.layer_dims[1:])):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        g = stream(seed, "init", layer)
        w = g.uniform(-bound, bound, size=(fan_in, fan_out))
        weights.append(Tensor(w, requires_grad=True))
        biases.append(Tensor(np.zeros((1, fan_out)), requires_grad=True))
    return MlpParams(spec=spec, weights=weights, biases=biases)


def mlp_forward(params: MlpParams, x: Tensor) -> Tensor:
    """Alternating affine/relu composition; the final layer stays affine."""
    if x.cols != params.spec.in_dim:
        raise ShapeError(
            f"input has {x.cols} columns but the first layer expects {params.spec.in_dim}"
        )
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i != last:
            h = h.relu()
    return h


def encode(params: MlpParams, x: Tensor) -> Tensor:
    """Unit-norm embeddings: encoder outputs live on the sphere.

    Normalizing before any objective touches the embeddings leaves the
    contrastive loss unchanged (cosine already ignores scale) and denies
    the encoder the scale games that would otherwise fool the critics
    without moving any actual information.
    """
    return row_l2_normalize(mlp_forward(params, x))


@dataclass
class AdamState:
    """Bias-corrected Adam moments, aligned with MlpParams.tensors()."""

    m: list
    v: list
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: MlpParams, lr: float = 1e-3, **hyper) -> "AdamState":
        if lr <= 0:
            raise ConstructionError(f"lr must be > 0, got {lr}")
        shapes = [t.data.shape for t in params.tensors()]
        return cls(
            m=[np.zeros(s) for s in shapes],
            v=[np.zeros(s) for s in shapes],
            lr=lr,
            **hyper,
        )


def adam_step(params: MlpParams, grads: list, state: AdamState) -> tuple:
    """One bias-corrected Adam update; returns (new params, new state)."""
    flat = params.tensors()
    names = params.tensor_names()
    if len(grads) != len(flat):
        raise ShapeError(f"expected {len(flat)} gradient arrays, got {len(grads)}")
    t = state.step_count + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t

    new_values, new_m, new_v = [], [], []
    for name, p, g, m, v in zip(names, flat, grads, state.m, state.v):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {p.data.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient entry in {name}")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        new_values.append(p.data - update)
        new_m.append(m)
        new_v.append(v)

    weights, biases = [], []
    for i in range(len(params.weights)):
        weights.append(Tensor(new_values[2 * i], requires_grad=True))
        biases.append(Tensor(new_values[2 * i + 1], requires_grad=True))
    new_params = MlpParams(spec=params.spec, weights=weights, biases=biases)
    new_state = replace(state, m=new_m, v=new_v, step_count=t)
    return new_params, new_state


def collect_grads(params: MlpParams) -> list:
    """Gradients of params.tensors() after a backward pass (zeros if unused)."""
    return [t.grad_or_zeros() for t in params.tensors()]


# -- checkpoint files ---------------------------------------------------------
#
# Layout: 8-byte magic, uint32 version, uint32 header length, UTF-8 JSON
# header {format, version, seed, groups: [{name, layer_dims}]}, then for each
# group, for each layer, W then b as row-major little-endian float64.


def save_checkpoint(path, groups: dict, seed: int) -> None:
    header = {
        "format": "cibr-checkpoint",
        "version": CHECKPOINT_VERSION,
        "seed": int(seed),
        "groups": [
            {"name": name, "layer_dims": list(p.spec.layer_dims)} for name, p in groups.items()
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for p in groups.values():
            for t in p.tensors():
                f.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple:
    """Read a checkpoint; returns ({name: MlpParams}, header dict)."""
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        version, hlen = struct.unpack("<II", f.read(8))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(f.read(hlen).decode("utf-8"))
        groups = {}
        for entry in header["groups"]:
            spec = MlpSpec(tuple(entry["layer_dims"]))
            weights, biases = [], []
            for fan_in, fan_out in zip(spec.layer_dims, spec.layer_dims[1:]):
                w = np.frombuffer(f.read(8 * fan_in * fan_out), dtype="<f8")
                if w.size != fan_in * fan_out:
                    raise CheckpointError(f"{path}: truncated weight block")
                b = np.frombuffer(f.read(8 * fan_out), dtype="<f8")
                if b.size != fan_out:
                    raise CheckpointError(f"{path}: truncated bias block")
                weights.append(Tensor(w.reshape(fan_in, fan_out), requires_grad=True))
                biases.append(Tensor(b.reshape(1, fan_out), requires_grad=True))
            groups[entry["name"]] = MlpParams(spec=spec, weights=weights, biases=biases)
    return groups, header
