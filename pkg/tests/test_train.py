import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leancnn.arch import ArchitectureSpec, LayerSpec
from leancnn.data import compute_stats, synth_dataset
from leancnn.params import init_parameters, set_trainable
from leancnn.train import (
    AdamConfig,
    AdamState,
    EpochRecord,
    TrainConfig,
    TrainHistory,
    TrainingDiverged,
    adam_step,
    bce_loss,
    categorical_ce,
    one_hot,
    train,
)


def small_net(size=8, k=2):
    return ArchitectureSpec(
        (
            LayerSpec("input", "input", {"shape": (size, size, 3)}),
            LayerSpec("conv2d", "c1", {"filters": 4, "kernel": 3, "activation": "relu"}),
            LayerSpec("maxpool2d", "p1"),
            LayerSpec("flatten", "flat"),
            LayerSpec("dense", "d1", {"units": 8, "activation": "relu"}),
            LayerSpec("dropout", "drop", {"rate": 0.25}),
            LayerSpec("dense", "out", {"units": k, "activation": "softmax"}),
        )
    )


def small_data(k=2, n=4, size=8, seed=0):
    ds = synth_dataset(k=k, n=n, size=size, seed=seed)
    return ds.with_stats(compute_stats(ds))


class TestLosses:
    def test_bce_half(self):
        assert bce_loss([0.5, 0.5], [1, 0]) == pytest.approx(math.log(2), abs=1e-6)

    def test_bce_confident_wrong(self):
        assert bce_loss([0.9], [0]) == pytest.approx(-math.log(0.1), abs=1e-6)

    def test_bce_perfect(self):
        assert 0 <= bce_loss([1.0, 0.0], [1, 0]) <= -math.log(1 - 1e-7) + 1e-15

    def test_bce_bad_label(self):
        with pytest.raises(ValueError):
            bce_loss([0.3], [2])

    def test_ce_uniform(self):
        p = np.full((3, 7), 1 / 7)
        assert categorical_ce(p, one_hot([0, 3, 6], 7)) == pytest.approx(math.log(7), abs=1e-6)

    def test_ce_perfect(self):
        assert categorical_ce(np.eye(3), np.eye(3)) == pytest.approx(0, abs=1e-6)

    def test_ce_malformed(self):
        with pytest.raises(ValueError, match="one-hot"):
            categorical_ce(np.full((1, 2), 0.5), [[1, 1]])
        with pytest.raises(ValueError, match="sum to 1"):
            categorical_ce([[0.2, 0.2]], [[1, 0]])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=20))
    def test_two_class_reduces_to_bce(self, pairs):
        p = np.array([a for a, _ in pairs])
        y = np.array([b for _, b in pairs])
        probs = np.stack([1 - p, p], axis=1)
        ce = categorical_ce(probs, one_hot(y, 2))
        bce = bce_loss(p, y)
        assert ce >= 0 and bce >= 0
        assert abs(ce - bce) < 1e-6


class TestAdam:
    def _params(self):
        spec = ArchitectureSpec((LayerSpec("input", "input", {"shape": (4,)}), LayerSpec("dense", "d", {"units": 3})))
        return init_parameters(spec, 0, np.float64)

    def test_first_step_is_lr(self):
        params = self._params()
        grads = {"d": {"weights": np.full((4, 3), 0.37), "bias": np.full(3, -2.5)}}
        new, state = adam_step(params, grads, AdamState())
        assert state.t == 1
        step_w = params["d"].weights - new["d"].weights
        step_b = params["d"].bias - new["d"].bias
        assert np.allclose(step_w, 1e-3, rtol=1e-6)
        assert np.allclose(step_b, -1e-3, rtol=1e-6)

    def test_zero_gradient(self):
        params = self._params()
        grads = {"d": {"weights": np.zeros((4, 3)), "bias": np.zeros(3)}}
        new, state = adam_step(params, grads, AdamState(t=4))
        assert state.t == 5
        assert np.array_equal(new["d"].weights, params["d"].weights)

    def test_frozen_bitwise(self):
        params = self._params()
        set_trainable(params, "d", False)
        before = params["d"].weights.tobytes()
        state = AdamState()
        rng = np.random.default_rng(0)
        for _ in range(10):
            grads = {"d": {"weights": rng.normal(size=(4, 3)), "bias": rng.normal(size=3)}}
            params, state = adam_step(params, grads, state)
        assert params["d"].weights.tobytes() == before
        assert state.t == 10

    def test_nonfinite(self):
        params = self._params()
        with pytest.raises(FloatingPointError, match="d/weights"):
            adam_step(params, {"d": {"weights": np.full((4, 3), np.nan), "bias": np.zeros(3)}}, AdamState())

    def test_moments(self):
        params = self._params()
        g = np.random.default_rng(1).normal(size=(4, 3))
        grads = {"d": {"weights": g, "bias": np.zeros(3)}}
        _, s1 = adam_step(params, grads, AdamState(AdamConfig(lr=0.0)))
        _, s2 = adam_step(params, grads, s1)
        m, v = s2.m[("d", "weights")], s2.v[("d", "weights")]
        assert np.allclose(m, 0.1 * g + 0.9 * 0.1 * g)
        assert np.allclose(v, 0.001 * g**2 + 0.999 * 0.001 * g**2)
        assert np.all(v >= 0) and m.shape == g.shape

    def test_inputs_not_modified(self):
        params = self._params()
        before = params["d"].weights.copy()
        state = AdamState()
        adam_step(params, {"d": {"weights": np.ones((4, 3)), "bias": np.ones(3)}}, state)
        assert np.array_equal(params["d"].weights, before) and state.t == 0


class TestTrain:
    def test_two_epochs_loss_drops(self):
        spec = small_net()
        params = init_parameters(spec, 0)
        cfg = TrainConfig(epochs=2, batch_size=4, adam=AdamConfig(lr=1e-2), seed=0)
        _, hist = train(spec, params, small_data(), cfg)
        assert len(hist) == 2
        assert hist[0].train_loss > hist[1].train_loss
        assert math.isnan(hist[0].val_loss)

    def test_zero_epochs(self):
        spec = small_net()
        params = init_parameters(spec, 0)
        out, hist = train(spec, params, small_data(), TrainConfig(epochs=0))
        assert len(hist) == 0
        for (_, a), (_, b) in zip(out.tensors(), params.tensors()):
            assert np.array_equal(a, b)

    def test_deterministic(self):
        spec = small_net()
        cfg = TrainConfig(epochs=3, batch_size=3, seed=9)
        runs = [train(spec, init_parameters(spec, 1), small_data(), cfg, val=small_data(seed=5)) for _ in range(2)]
        (pa, ha), (pb, hb) = runs
        assert ha.to_csv() == hb.to_csv()
        for (na, ta), (nb, tb) in zip(pa.tensors(), pb.tensors()):
            assert na == nb and ta.tobytes() == tb.tobytes()

    def test_bce_mode(self):
        spec = small_net()
        _, hist = train(spec, init_parameters(spec, 0), small_data(), TrainConfig(epochs=1, loss="bce"))
        assert hist[0].train_loss > 0

    def test_bce_needs_two_classes(self):
        spec = small_net(k=3)
        with pytest.raises(ValueError, match="two-class"):
            train(spec, init_parameters(spec, 0), small_data(k=3), TrainConfig(epochs=1, loss="bce"))

    def test_empty(self):
        spec = small_net()
        with pytest.raises(ValueError, match="empty"):
            train(spec, init_parameters(spec, 0), (np.zeros((0, 8, 8, 3)), np.zeros(0)), TrainConfig(epochs=1))

    def test_divergence_keeps_history(self):
        spec = small_net()
        x, y = small_data().arrays()
        x = x.copy()
        x[-1, 0, 0, 0] = np.inf
        cfg = TrainConfig(epochs=3, batch_size=len(x))
        with pytest.raises(TrainingDiverged) as info:
            train(spec, init_parameters(spec, 0), (x, y), cfg)
        assert len(info.value.history) == 0

    def test_frozen_survive_training(self):
        spec = small_net()
        params = init_parameters(spec, 0)
        set_trainable(params, "c1", False)
        before = params["c1"].weights.tobytes()
        out, _ = train(spec, params, small_data(), TrainConfig(epochs=2, batch_size=2))
        assert out["c1"].weights.tobytes() == before
        assert out["d1"].weights.tobytes() != params["d1"].weights.tobytes()


class TestHistory:
    def test_csv_round_trip(self):
        h = TrainHistory()
        h.append(EpochRecord(1, 0.9, 0.5, 1.1, 0.4))
        h.append(EpochRecord(2, 0.123456789012345, 0.75))
        text = h.to_csv()
        assert text.splitlines()[0] == "epoch,train_loss,train_acc,val_loss,val_acc"
        back = TrainHistory.from_csv(text)
        assert back[1].train_loss == 0.123456789012345
        assert math.isnan(back[1].val_acc)

    def test_contiguous(self):
        h = TrainHistory()
        with pytest.raises(ValueError, match="contiguous"):
            h.append(EpochRecord(2, 0.1, 0.1))
        with pytest.raises(ValueError, match="line 3"):
            TrainHistory.from_csv("epoch,train_loss,train_acc,val_loss,val_acc\n1,1,1,1,1\n3,1,1,1,1\n")
