import numpy as np
import pytest

import faust_adapt.tensor as T
from faust_adapt.layers import Dense, Dropout
from faust_adapt.models import (
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    Model,
    build_model,
    head_digest,
    load_checkpoint,
    mc_forward,
    predict_proba,
    save_checkpoint,
)
from faust_adapt.optim import Adam, CosineDecay, OptimizerError, SGD
from faust_adapt.rng import derive_rng
from faust_adapt.tensor import ShapeMismatchError, Tensor


def tiny_model(seed=0, g_drop=0.0, h_drop=0.0):
    return build_model((3,), 2, generator_dropout=g_drop, head_dropout=h_drop, seed=seed)


class TestForward:
    def test_zero_weight_generator_gives_zero_features(self):
        m = tiny_model()
        for layer in m.generator:
            for _, p in layer.parameters():
                p.data[:] = 0.0
        z = m.features(Tensor(np.random.default_rng(0).normal(size=(4, 3))))
        np.testing.assert_array_equal(z.data, np.zeros((4, 32)))

    def test_eval_forward_deterministic(self):
        m = tiny_model(seed=3)
        x = Tensor(np.random.default_rng(1).normal(size=(5, 3)))
        a = m.logits(x).data
        b = m.logits(x).data
        np.testing.assert_array_equal(a, b)

    def test_input_shape_checked(self):
        m = tiny_model()
        with pytest.raises(ShapeMismatchError):
            m.features(Tensor(np.zeros((2, 4))))

    def test_dense_head_identity_passthrough(self):
        m = Model(
            generator=[],
            head=[Dense(3, 3)],
            input_shape=(3,),
            n_classes=3,
        )
        m.head[0].weight.data[:] = np.eye(3)
        x = np.random.default_rng(2).normal(size=(2, 3))
        np.testing.assert_allclose(m.logits(Tensor(x)).data, x, atol=1e-12)

    def test_hand_computed_two_layer_logits(self):
        m = Model(
            generator=[Dense(2, 2)],
            head=[Dense(2, 2)],
            input_shape=(2,),
            n_classes=2,
        )
        m.generator[0].weight.data[:] = [[1.0, 2.0], [3.0, 4.0]]
        m.generator[0].bias.data[:] = [0.5, -0.5]
        m.head[0].weight.data[:] = [[1.0, -1.0], [0.0, 2.0]]
        m.head[0].bias.data[:] = [0.0, 1.0]
        x = np.array([[1.0, 1.0]])
        z = x @ m.generator[0].weight.data.T + m.generator[0].bias.data
        expected = z @ m.head[0].weight.data.T + m.head[0].bias.data
        np.testing.assert_allclose(m.logits(Tensor(x)).data, expected, atol=1e-12)

    def test_train_dropout_matches_scripted_mask_oracle(self):
        m = Model(generator=[Dropout(0.5)], head=[], input_shape=(6,), n_classes=2)
        x = np.random.default_rng(4).normal(size=(3, 6))
        out = m.features(Tensor(x), train=True, rng=derive_rng(77, "mask")).data
        oracle_rng = derive_rng(77, "mask")
        keep = oracle_rng.random((3, 6)) >= 0.5
        np.testing.assert_array_equal(out, x * keep / 0.5)

    def test_dropout_requires_rng_in_train_mode(self):
        m = tiny_model(g_drop=0.3)
        with pytest.raises(ValueError, match="rng"):
            m.features(Tensor(np.zeros((2, 3))), train=True)


class TestMCForward:
    def test_zero_rates_collapse_to_identical_passes(self):
        m = tiny_model(seed=5)
        x = Tensor(np.random.default_rng(0).normal(size=(4, 3)))
        stack = mc_forward(m, x, n_samples=4, seed=9).data
        for i in range(1, 4):
            np.testing.assert_array_equal(stack[i], stack[0])

    def test_ten_sample_stack_shape(self):
        m = tiny_model(seed=5, g_drop=0.1, h_drop=0.4)
        x = Tensor(np.random.default_rng(0).normal(size=(6, 3)))
        stack = mc_forward(m, x, n_samples=10, seed=1)
        assert stack.shape == (10, 6, 2)
        np.testing.assert_allclose(stack.data.sum(axis=-1), 1.0, atol=1e-9)

    def test_fixed_seed_bitwise_identical(self):
        m = tiny_model(seed=5, g_drop=0.1, h_drop=0.4)
        x = Tensor(np.random.default_rng(0).normal(size=(4, 3)))
        a = mc_forward(m, x, 5, seed=42).data
        b = mc_forward(m, x, 5, seed=42).data
        np.testing.assert_array_equal(a, b)

    def test_fewer_than_two_rejected(self):
        m = tiny_model()
        with pytest.raises(ValueError, match="at least 2"):
            mc_forward(m, Tensor(np.zeros((2, 3))), 1, seed=0)


class TestOptimizers:
    def test_zero_grad_zero_decay_is_noop(self):
        p = Tensor([1.0, -2.0], requires_grad=True)
        p.grad = np.zeros(2)
        SGD([p], lr=0.1, momentum=0.9).step()
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_plain_sgd_definition(self):
        p = Tensor([1.0], requires_grad=True)
        p.grad = np.array([1.0])
        SGD([p], lr=0.1, momentum=0.0).step()
        np.testing.assert_allclose(p.data, [0.9], atol=1e-12)

    def test_momentum_trace_matches_recurrence_oracle(self):
        # minimize 0.5*theta^2 (grad = theta) with momentum and weight decay
        lr, mom, wd = 0.1, 0.9, 0.01
        p = Tensor([2.0], requires_grad=True)
        opt = SGD([p], lr=lr, momentum=mom, weight_decay=wd)
        theta, vel = 2.0, 0.0
        for _ in range(5):
            p.grad = p.data.copy()
            opt.step()
            g = theta + wd * theta
            vel = mom * vel + g
            theta = theta - lr * vel
            np.testing.assert_allclose(p.data, [theta], atol=1e-12)

    def test_adam_trace_matches_recurrence_oracle(self):
        lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
        p = Tensor([1.5], requires_grad=True)
        opt = Adam([p], lr=lr)
        theta, m, v = 1.5, 0.0, 0.0
        for t in range(1, 6):
            p.grad = p.data.copy()
            opt.step()
            g = theta
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mh = m / (1 - b1**t)
            vh = v / (1 - b2**t)
            theta = theta - lr * mh / (np.sqrt(vh) + eps)
            np.testing.assert_allclose(p.data, [theta], atol=1e-12)

    def test_step_before_backward_rejected(self):
        p = Tensor([1.0], requires_grad=True)
        with pytest.raises(OptimizerError, match="before backward"):
            SGD([p], lr=0.1).step()

    def test_cosine_schedule_endpoints_and_monotone(self):
        sched = CosineDecay(0.01, 100)
        assert sched.rate(0) == 0.01
        assert sched.rate(100) <= 1e-12 * 0.01
        rates = [sched.rate(t) for t in range(101)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))


class TestFreeze:
    def test_frozen_head_unchanged_by_generator_steps(self):
        m = tiny_model(seed=7)
        m.head_trainable = False
        digest = head_digest(m)
        opt = SGD(m.generator_parameters(), lr=0.05, momentum=0.9)
        x = Tensor(np.random.default_rng(3).normal(size=(8, 3)))
        for _ in range(3):
            loss = T.tmean(T.mul(m.logits(x), m.logits(x)))
            opt.zero_grad()
            loss.backward()
            opt.step()
        assert head_digest(m) == digest

    def test_trainable_parameters_respect_flag(self):
        m = tiny_model()
        n_all = len(m.trainable_parameters())
        m.head_trainable = False
        assert len(m.trainable_parameters()) < n_all
        assert len(m.trainable_parameters()) == len(m.generator_parameters())


class TestCheckpoint:
    def test_roundtrip_bitwise(self, tmp_path):
        m = build_model((1, 16, 16), 4, generator_dropout=0.1, head_dropout=0.4, seed=2)
        path = tmp_path / "model.fckpt"
        save_checkpoint(m, path, meta={"seed": 2, "epoch": 10, "source_dataset": "blobs"})
        loaded, meta = load_checkpoint(path)
        assert meta["epoch"] == 10
        for (na, a), (nb, b) in zip(m.named_parameters(), loaded.named_parameters()):
            assert na == nb
            np.testing.assert_array_equal(a.data, b.data)
        assert loaded.dropout_rates() == (0.1, 0.4)

    def test_loaded_model_same_logits(self, tmp_path):
        m = build_model((5,), 3, seed=4)
        x = Tensor(np.random.default_rng(8).normal(size=(6, 5)))
        before = m.logits(x).data.copy()
        save_checkpoint(m, tmp_path / "m.fckpt")
        loaded, _ = load_checkpoint(tmp_path / "m.fckpt")
        np.testing.assert_array_equal(loaded.logits(x).data, before)

    def test_save_load_save_stable_bytes(self, tmp_path):
        m = build_model((5,), 3, seed=4)
        p1, p2 = tmp_path / "a.fckpt", tmp_path / "b.fckpt"
        save_checkpoint(m, p1)
        loaded, _ = load_checkpoint(p1)
        save_checkpoint(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.fckpt"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
        with pytest.raises(CheckpointFormatError, match="magic"):
            load_checkpoint(path)

    def test_bad_version(self, tmp_path):
        m = build_model((5,), 3, seed=4)
        path = tmp_path / "m.fckpt"
        save_checkpoint(m, path)
        raw = bytearray(path.read_bytes())
        raw[8:12] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointVersionError, match="version"):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        m = build_model((5,), 3, seed=4)
        path = tmp_path / "m.fckpt"
        save_checkpoint(m, path)
        path.write_bytes(path.read_bytes()[:-20])
        with pytest.raises(CheckpointTruncatedError, match="cut short"):
            load_checkpoint(path)


def test_predict_proba_batches_consistent():
    m = tiny_model(seed=1)
    x = np.random.default_rng(2).normal(size=(10, 3))
    full = predict_proba(m, x, batch_size=256)
    chunked = predict_proba(m, x, batch_size=3)
    np.testing.assert_allclose(full, chunked, atol=1e-12)
    np.testing.assert_allclose(full.sum(axis=1), 1.0, atol=1e-9)


def test_raster_model_shapes():
    m = build_model((1, 16, 16), 4, seed=0)
    x = Tensor(np.random.default_rng(0).random((2, 1, 16, 16)))
    assert m.features(x).shape == (2, 32)
    assert m.logits(x).shape == (2, 4)
