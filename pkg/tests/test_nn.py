"""MLP init/forward, the Adam update, and checkpoint round-trips."""

import numpy as np
import pytest

from cibr.autodiff import Tensor, backward
from cibr.errors import CheckpointError, ConstructionError, DivergenceError, ShapeError
from cibr.nn import (
    AdamState,
    MlpSpec,
    adam_step,
    collect_grads,
    init_mlp,
    load_checkpoint,
    mlp_forward,
    save_checkpoint,
)


class TestInit:
    def test_same_seed_bitwise_identical(self):
        a = init_mlp(MlpSpec((4, 8, 2)), seed=7)
        b = init_mlp(MlpSpec((4, 8, 2)), seed=7)
        for ta, tb in zip(a.tensors(), b.tensors()):
            assert ta.data.tobytes() == tb.data.tobytes()

    def test_biases_zero(self):
        params = init_mlp(MlpSpec((4, 8, 2)), seed=1)
        for b in params.biases:
            np.testing.assert_array_equal(b.data, np.zeros(b.data.shape))

    def test_weight_shapes(self):
        params = init_mlp(MlpSpec((4, 8, 2)), seed=1)
        assert [w.data.shape for w in params.weights] == [(4, 8), (8, 2)]

    def test_glorot_bound_respected(self):
        params = init_mlp(MlpSpec((30, 10)), seed=3)
        bound = np.sqrt(6.0 / 40.0)
        assert np.abs(params.weights[0].data).max() <= bound

    def test_bad_spec(self):
        with pytest.raises(ConstructionError):
            MlpSpec((4,))
        with pytest.raises(ConstructionError):
            MlpSpec((4, 0, 2))


class TestForward:
    def test_zero_params_zero_output(self):
        params = init_mlp(MlpSpec((3, 4, 2)), seed=0)
        zeroed = [Tensor(np.zeros(t.data.shape), requires_grad=True) for t in params.weights]
        params.weights = zeroed
        out = mlp_forward(params, Tensor(np.ones((5, 3))))
        np.testing.assert_array_equal(out.data, np.zeros((5, 2)))

    def test_single_layer_is_affine(self):
        params = init_mlp(MlpSpec((2, 2)), seed=0)
        params.weights[0] = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
        params.biases[0] = Tensor([[10.0, 20.0]], requires_grad=True)
        out = mlp_forward(params, Tensor([[1.0, 1.0]]))
        np.testing.assert_array_equal(out.data, [[14.0, 26.0]])

    def test_dim_mismatch(self):
        params = init_mlp(MlpSpec((3, 2)), seed=0)
        with pytest.raises(ShapeError):
            mlp_forward(params, Tensor(np.ones((4, 5))))

    def test_grad_check_through_mlp(self):
        from cibr.autodiff import grad_check

        params = init_mlp(MlpSpec((3, 5, 2)), seed=11)
        x = np.random.default_rng(4).uniform(-1, 1, (4, 3))
        assert grad_check(lambda t: mlp_forward(params, t).sum(), Tensor(x)) < 1e-4


class TestAdam:
    def _params(self, seed=0):
        return init_mlp(MlpSpec((2, 2)), seed=seed)

    def test_zero_gradients_fixed_point(self):
        p = self._params()
        state = AdamState.for_params(p)
        grads = [np.zeros(t.data.shape) for t in p.tensors()]
        p2, state2 = adam_step(p, grads, state)
        for a, b in zip(p.tensors(), p2.tensors()):
            np.testing.assert_array_equal(a.data, b.data)
        assert state2.step_count == 1

    def test_descent_direction(self):
        w = init_mlp(MlpSpec((1, 1)), seed=0)
        w.weights[0] = Tensor([[1.0]], requires_grad=True)
        state = AdamState.for_params(w, lr=0.1)
        loss = (w.weights[0] * w.weights[0]).sum()
        backward(loss)
        w2, _ = adam_step(w, collect_grads(w), state)
        assert abs(w2.weights[0].data[0, 0]) < 1.0

    def test_deterministic(self):
        p = self._params(3)
        grads = [np.full(t.data.shape, 0.3) for t in p.tensors()]
        out1 = adam_step(p, grads, AdamState.for_params(p))
        out2 = adam_step(p, grads, AdamState.for_params(p))
        for a, b in zip(out1[0].tensors(), out2[0].tensors()):
            assert a.data.tobytes() == b.data.tobytes()

    def test_non_finite_gradient_named(self):
        p = init_mlp(MlpSpec((2, 3, 2)), seed=0)
        grads = [np.zeros(t.data.shape) for t in p.tensors()]
        grads[2][0, 0] = np.nan
        with pytest.raises(DivergenceError, match="W1"):
            adam_step(p, grads, AdamState.for_params(p))

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_convex_probe_converges(self, seed):
        target = np.random.default_rng(100 + seed).uniform(-1, 1, (3, 2))
        p = init_mlp(MlpSpec((3, 2)), seed=seed)
        state = AdamState.for_params(p, lr=1e-2)
        for _ in range(500):
            w = p.weights[0]
            diff = w - Tensor(target)
            backward((diff * diff).sum())
            p, state = adam_step(p, collect_grads(p), state)
        assert np.linalg.norm(p.weights[0].data - target) < 1e-3


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        groups = {
            "encoder_v": init_mlp(MlpSpec((4, 8, 3)), seed=5),
            "encoder_t": init_mlp(MlpSpec((6, 8, 3)), seed=6),
        }
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, groups, seed=42)
        loaded, header = load_checkpoint(path)
        assert header["seed"] == 42
        assert list(loaded) == ["encoder_v", "encoder_t"]
        for name in groups:
            for a, b in zip(groups[name].tensors(), loaded[name].tensors()):
                assert a.data.tobytes() == b.data.tobytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 16)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, {"enc": init_mlp(MlpSpec((4, 2)), seed=1)}, seed=0)
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
