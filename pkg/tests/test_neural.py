import math

import numpy as np
import pytest
import torch

from hanabi_coord import neural as N
from hanabi_coord.neural import (
    LossSpec,
    OptimizerState,
    ParameterSet,
    PolicySpec,
    ScheduleConfig,
    adam_step,
    backward,
    forward,
    init_params,
    manifest,
)

TINY = PolicySpec(
    input_width=7,
    embed_widths=(8,),
    lstm_widths=(6,),
    decoder_widths=(5,),
    output_size=4,
    activation="gelu",
    dropout=0.0,
)


def make_batch(spec, rng, num_traj=3, max_len=5):
    batch = []
    for _ in range(num_traj):
        T = int(rng.integers(2, max_len + 1))
        feats = rng.normal(size=(T, spec.input_width)).astype(np.float32)
        masks = np.ones((T, spec.output_size), dtype=bool)
        for t in range(T):
            off = int(rng.integers(0, spec.output_size))
            masks[t, off] = False if masks[t].sum() > 1 else True
        labels = np.array(
            [rng.choice(np.flatnonzero(masks[t])) for t in range(T)], dtype=np.int64
        )
        batch.append((feats, masks, labels))
    return batch


class TestManifest:
    def test_total_length(self):
        p = init_params(TINY, seed=0)
        assert p.flat.shape[0] == N.num_params(TINY)
        assert p.flat.dtype == np.float32

    def test_nonfinite_rejected(self):
        p = init_params(TINY, seed=0)
        p.flat[3] = np.nan
        with pytest.raises(N.NeuralError):
            ParameterSet(TINY, p.flat)

    def test_checkpoint_roundtrip(self, tmp_path):
        p = init_params(TINY, seed=5)
        path = tmp_path / "ckpt.npz"
        N.save_checkpoint(p, path)
        q = N.load_checkpoint(path)
        assert q.spec == TINY
        assert np.array_equal(q.flat, p.flat)


class TestForward:
    def test_distribution_sums_to_one(self):
        rng = np.random.default_rng(0)
        p = init_params(TINY, seed=1)
        feats = rng.normal(size=(6, TINY.input_width)).astype(np.float32)
        masks = np.ones((6, TINY.output_size), dtype=bool)
        probs, state = forward(TINY, p, feats, masks)
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-6)
        assert len(state.layers) == 1

    def test_single_legal_action_gets_probability_one(self):
        rng = np.random.default_rng(1)
        p = init_params(TINY, seed=1)
        feats = rng.normal(size=(3, TINY.input_width)).astype(np.float32)
        masks = np.zeros((3, TINY.output_size), dtype=bool)
        masks[:, 2] = True
        probs, _ = forward(TINY, p, feats, masks)
        np.testing.assert_allclose(probs[:, 2], 1.0)
        assert np.all(probs[:, [0, 1, 3]] == 0.0)

    def test_masked_actions_zero(self):
        rng = np.random.default_rng(2)
        p = init_params(TINY, seed=2)
        feats = rng.normal(size=(4, TINY.input_width)).astype(np.float32)
        masks = np.ones((4, TINY.output_size), dtype=bool)
        masks[:, 0] = False
        probs, _ = forward(TINY, p, feats, masks)
        assert np.all(probs[:, 0] == 0.0)

    def test_all_masked_rejected(self):
        p = init_params(TINY, seed=2)
        feats = np.zeros((2, TINY.input_width), dtype=np.float32)
        masks = np.zeros((2, TINY.output_size), dtype=bool)
        with pytest.raises(N.NeuralError, match="masked"):
            forward(TINY, p, feats, masks)

    def test_near_uniform_at_tiny_weights(self):
        p = init_params(TINY, seed=3)
        p.flat *= 1e-3
        feats = np.random.default_rng(3).normal(
            size=(5, TINY.input_width)).astype(np.float32)
        probs, _ = forward(TINY, p, feats,
                           np.ones((5, TINY.output_size), dtype=bool))
        assert float(probs.max() - probs.min()) < 0.05

    def test_deterministic_across_runs(self):
        rng = np.random.default_rng(4)
        spec = PolicySpec(7, (8,), (6,), (5,), 4, dropout=0.3)
        p = init_params(spec, seed=4)
        feats = rng.normal(size=(6, spec.input_width)).astype(np.float32)
        masks = np.ones((6, spec.output_size), dtype=bool)
        a, _ = forward(spec, p, feats, masks, mode="train", dropout_seed=9)
        b, _ = forward(spec, p, feats, masks, mode="train", dropout_seed=9)
        assert np.array_equal(a, b)

    def test_dropout_eval_is_identity(self):
        rng = np.random.default_rng(5)
        base = PolicySpec(7, (8,), (6,), (5,), 4, dropout=0.0)
        dropped = PolicySpec(7, (8,), (6,), (5,), 4, dropout=0.5)
        p = init_params(base, seed=5)
        feats = rng.normal(size=(4, 7)).astype(np.float32)
        masks = np.ones((4, 4), dtype=bool)
        a, _ = forward(base, p, feats, masks, mode="eval")
        b, _ = forward(dropped, ParameterSet(dropped, p.flat), feats, masks,
                       mode="eval")
        assert np.array_equal(a, b)

    def test_recurrent_state_carry(self):
        # split a sequence in two; carrying state must match one-shot run
        rng = np.random.default_rng(6)
        p = init_params(TINY, seed=6)
        feats = rng.normal(size=(8, TINY.input_width)).astype(np.float32)
        masks = np.ones((8, TINY.output_size), dtype=bool)
        full, _ = forward(TINY, p, feats, masks)
        first, state = forward(TINY, p, feats[:3], masks[:3])
        second, _ = forward(TINY, p, feats[3:], masks[3:], initial_state=state)
        np.testing.assert_allclose(np.vstack([first, second]), full, atol=1e-6)

    def test_batch_order_invariance(self):
        # per-trajectory outputs identical regardless of batch company
        rng = np.random.default_rng(7)
        p = init_params(TINY, seed=7)
        b = make_batch(TINY, rng, num_traj=4)
        solo = [forward(TINY, p, f, m)[0] for f, m, _ in b]
        for i, (f, m, _) in enumerate(b):
            again, _ = forward(TINY, p, f, m)
            np.testing.assert_array_equal(again, solo[i])


class TestBackward:
    def test_uniform_ce_closed_form(self):
        # zero decoder output layer -> uniform distribution; CE = ln A and
        # d loss / d out.bias = p - onehot averaged over steps
        spec = TINY
        p = init_params(spec, seed=8)
        names = manifest(spec)
        pos = 0
        slices = {}
        for name, shape in names:
            size = int(np.prod(shape))
            slices[name] = slice(pos, pos + size)
            pos += size
        p.flat[slices["out.weight"]] = 0.0
        p.flat[slices["out.bias"]] = 0.0
        T, A = 6, spec.output_size
        feats = np.random.default_rng(8).normal(size=(T, spec.input_width)
                                                ).astype(np.float32)
        masks = np.ones((T, A), dtype=bool)
        labels = np.zeros(T, dtype=np.int64)
        loss, grads = backward(spec, p, [(feats, masks, labels)], mode="eval")
        assert loss == pytest.approx(math.log(A), abs=1e-6)
        bias_grad = grads.flat[slices["out.bias"]]
        expected = np.full(A, 1 / A)
        expected[0] -= 1.0
        np.testing.assert_allclose(bias_grad, expected, atol=1e-6)

    def test_gradient_matches_central_differences(self):
        rng = np.random.default_rng(9)
        spec = TINY
        p = init_params(spec, seed=9)
        batch = make_batch(spec, rng)

        def loss_at(flat):
            return backward(spec, ParameterSet(spec, flat.astype(np.float32)),
                            batch, mode="eval", dtype=torch.float64)[0]

        _, grads = backward(spec, p, batch, mode="eval", dtype=torch.float64)
        eps = 1e-4
        coords = rng.choice(p.flat.shape[0], size=200, replace=False)
        worst = 0.0
        for c in coords:
            up = p.flat.copy(); up[c] = np.float32(float(p.flat[c]) + eps)
            dn = p.flat.copy(); dn[c] = np.float32(float(p.flat[c]) - eps)
            # divide by the delta that float32 storage actually realized
            fd = (loss_at(up) - loss_at(dn)) / (float(up[c]) - float(dn[c]))
            denom = max(abs(fd), abs(grads.flat[c]), 1e-3)
            worst = max(worst, abs(fd - grads.flat[c]) / denom)
        assert worst < 1e-4, f"max relative error {worst}"

    def test_duplicate_sample_doubles_sum_gradient(self):
        rng = np.random.default_rng(10)
        p = init_params(TINY, seed=10)
        traj = make_batch(TINY, rng, num_traj=1)[0]
        _, g1 = backward(TINY, p, [traj], LossSpec(reduction="sum"),
                         mode="eval", dtype=torch.float64)
        _, g2 = backward(TINY, p, [traj, traj], LossSpec(reduction="sum"),
                         mode="eval", dtype=torch.float64)
        np.testing.assert_allclose(g2.flat, 2 * g1.flat, atol=1e-5)

    def test_illegal_label_hard_error(self):
        rng = np.random.default_rng(11)
        p = init_params(TINY, seed=11)
        feats, masks, labels = make_batch(TINY, rng, num_traj=1)[0]
        masks[0, labels[0]] = False
        if masks[0].sum() == 0:
            masks[0, (labels[0] + 1) % TINY.output_size] = True
        with pytest.raises(N.NeuralError, match="illegal"):
            backward(TINY, p, [(feats, masks, labels)])

    def test_masked_action_gets_no_gradient_signal(self):
        # perturbing a logit row of a permanently-masked action leaves the
        # loss unchanged, so its weight-row gradient is exactly zero
        rng = np.random.default_rng(12)
        spec = TINY
        p = init_params(spec, seed=12)
        batch = []
        feats, masks, labels = make_batch(spec, rng, num_traj=1)[0]
        masks[:, 3] = False
        labels = np.where(labels == 3, 0, labels)
        batch.append((feats, masks, labels))
        _, grads = backward(spec, p, batch, mode="eval")
        pos = 0
        for name, shape in manifest(spec):
            size = int(np.prod(shape))
            if name == "out.weight":
                w = grads.flat[pos:pos + size].reshape(shape)
                assert np.all(w[3] == 0.0)
            if name == "out.bias":
                b = grads.flat[pos:pos + size]
                assert b[3] == 0.0
            pos += size


class TestAdam:
    def test_zero_gradient_no_change(self):
        p = init_params(TINY, seed=13)
        opt = OptimizerState(ScheduleConfig(initial_lr=1e-3))
        zero = ParameterSet(TINY, np.zeros_like(p.flat))
        p2, _ = adam_step(opt, p, zero)
        assert np.array_equal(p2.flat, p.flat)

    def test_schedule_floor_after_decay(self):
        sched = ScheduleConfig(initial_lr=0.005, final_lr=5e-5, total_steps=1000)
        assert sched.lr_at(0) == 0.005
        assert sched.lr_at(950) == pytest.approx(5e-5)
        assert sched.lr_at(900) == pytest.approx(5e-5)
        assert sched.lr_at(450) == pytest.approx((0.005 + 5e-5) / 2)

    def test_bias_correction_gives_exact_first_step(self):
        # scalar closed form: with bias correction m-hat/sqrt(v-hat) == 1 on
        # step one, so the first update moves by exactly lr regardless of
        # gradient magnitude; a zero-gradient follow-up coasts on momentum
        # and must move strictly less
        spec = PolicySpec(1, (), (), (), 1)
        p = ParameterSet(spec, np.zeros(2, dtype=np.float32))
        g = ParameterSet(spec, np.array([0.5, 0.002], dtype=np.float32))
        opt = OptimizerState(ScheduleConfig(initial_lr=0.1))
        p1, opt = adam_step(opt, p, g)
        delta1 = np.abs(p1.flat - p.flat)
        np.testing.assert_allclose(delta1, 0.1, rtol=1e-4)
        zero = ParameterSet(spec, np.zeros(2, dtype=np.float32))
        p2, opt = adam_step(opt, p1, zero)
        delta2 = np.abs(p2.flat - p1.flat)
        assert np.all(delta2 < delta1)

    def test_shape_mismatch(self):
        p = init_params(TINY, seed=14)
        other = PolicySpec(3, (), (), (), 2)
        g = init_params(other, seed=14)
        with pytest.raises(N.NeuralError):
            adam_step(OptimizerState(ScheduleConfig(1e-3)), p, g)

    def test_clip_grad_norm(self):
        g = ParameterSet(TINY, np.ones(N.num_params(TINY), dtype=np.float32))
        clipped, norm = N.clip_grad_norm(g, 1.0)
        assert norm == pytest.approx(math.sqrt(N.num_params(TINY)))
        assert np.linalg.norm(clipped.flat) == pytest.approx(1.0, rel=1e-5)
