import math

import numpy as np
import pytest

from hanabi_coord import neural, rl
from hanabi_coord.encoding import action_space_size, feature_length
from hanabi_coord.engine import GameConfig
from hanabi_coord.neural import ParameterSet, PolicySpec
from hanabi_coord.rl import (
    BRBCConfig,
    HDRConfig,
    Population,
    RLConfig,
    bc_partner_probability,
    build_fcp_population,
    collect_rollouts,
    collect_rollouts_vs_partners,
    critic_spec_for,
    gae,
    hdr_update,
    kl_term,
    ppo_loss,
    sample_partner_count,
    train_br_bc,
    train_hdr,
    train_ippo,
)

REDUCED = GameConfig(
    num_players=2, hand_size=3, num_colors=2, max_rank=3, max_lives=1, seed=0
)
TINY_CFG = RLConfig(num_envs=2, num_env_steps=16, total_updates=2, seed=5)


def reduced_spec():
    return PolicySpec(
        input_width=feature_length(REDUCED),
        embed_widths=(32,),
        lstm_widths=(),
        decoder_widths=(),
        output_size=action_space_size(REDUCED),
    )


def gae_brute_force(rewards, values, dones, bootstrap, gamma, lam):
    """O(T^2) direct evaluation of the advantage definition."""
    E, T = rewards.shape
    adv = np.zeros((E, T), np.float64)
    for e in range(E):
        for t in range(T):
            total = 0.0
            discount = 1.0
            for k in range(t, T):
                v_next = bootstrap[e] if k == T - 1 else values[e, k + 1]
                if dones[e, k]:
                    v_next = 0.0
                delta = rewards[e, k] + gamma * v_next - values[e, k]
                total += discount * delta
                if dones[e, k]:
                    break
                discount *= gamma * lam
            adv[e, t] = total
    return adv


class TestGAE:
    def test_matches_brute_force_on_random_buffers(self):
        rng = np.random.default_rng(0)
        for trial in range(20):
            E, T = 3, 12
            rewards = rng.normal(size=(E, T))
            values = rng.normal(size=(E, T))
            dones = rng.random((E, T)) < 0.15
            bootstrap = rng.normal(size=E)
            gamma, lam = rng.uniform(0.5, 1.0, size=2)
            adv, ret = gae(rewards, values, dones, bootstrap, gamma, lam)
            expected = gae_brute_force(rewards, values, dones, bootstrap, gamma, lam)
            np.testing.assert_allclose(adv, expected, atol=1e-10)
            np.testing.assert_allclose(ret, expected + values, atol=1e-10)

    def test_gamma_one_lambda_one_zero_values(self):
        rewards = np.array([[1.0, 2.0, 3.0, 4.0]])
        values = np.zeros((1, 4))
        dones = np.array([[False, False, False, True]])
        adv, _ = gae(rewards, values, dones, np.zeros(1), 1.0, 1.0)
        np.testing.assert_allclose(adv[0], [10.0, 9.0, 7.0, 4.0], atol=1e-12)

    def test_single_step_episode(self):
        adv, ret = gae(
            np.array([[2.5]]),
            np.array([[1.0]]),
            np.array([[True]]),
            np.array([9.0]),
            0.99,
            0.95,
        )
        assert adv[0, 0] == pytest.approx(1.5, abs=1e-12)
        assert ret[0, 0] == pytest.approx(2.5, abs=1e-12)


def states_batch(num_states=30, seed=3):
    """Encoded observations from random playouts of the reduced game."""
    from hanabi_coord.encoding import encode, legal_action_mask
    from hanabi_coord.engine import random_playout

    feats, masks = [], []
    from hanabi_coord.engine import observe

    s = seed
    while len(feats) < num_states:
        for state, action in random_playout(REDUCED, seed=s):
            if action is None:
                break
            obs = observe(state, state.current_player)
            feats.append(encode(obs))
            masks.append(legal_action_mask(obs.legal_actions(), REDUCED))
        s += 1
    return np.stack(feats[:num_states]), np.stack(masks[:num_states])


class TestKL:
    def test_identical_params_zero(self):
        spec = reduced_spec()
        params = neural.init_params(spec, seed=1)
        feats, masks = states_batch()
        assert abs(kl_term(spec, params, params, feats, masks)) <= 1e-9

    def test_onehot_vs_uniform_is_log_a(self):
        spec = PolicySpec(4, (), (), (), 20)
        n = neural.num_params(spec)
        uniform = ParameterSet(spec, np.zeros(n, np.float32))
        onehot = ParameterSet(spec, np.zeros(n, np.float32))
        onehot.flat[-20] = 1000.0  # out.bias[0]
        feats = np.random.default_rng(0).normal(size=(8, 4)).astype(np.float32)
        masks = np.ones((8, 20), bool)
        kl = kl_term(spec, onehot, uniform, feats, masks)
        assert kl == pytest.approx(math.log(20), abs=1e-9)

    def test_matches_direct_sum(self):
        spec = reduced_spec()
        p_ref = neural.init_params(spec, seed=2)
        p_lrn = neural.init_params(spec, seed=3)
        feats, masks = states_batch()
        got = kl_term(spec, p_ref, p_lrn, feats, masks)
        import torch

        from hanabi_coord.rl import _policy_step

        p = _policy_step(spec, p_ref, feats, masks, dtype=torch.float64)
        q = _policy_step(spec, p_lrn, feats, masks, dtype=torch.float64)
        expected = 0.0
        for i in range(len(feats)):
            for a in range(masks.shape[1]):
                if masks[i, a] and p[i, a] > 0:
                    expected += p[i, a] * (np.log(p[i, a]) - np.log(q[i, a]))
        expected /= len(feats)
        assert got == pytest.approx(expected, abs=1e-10)

    def test_nonnegative_on_random_pairs(self):
        spec = reduced_spec()
        feats, masks = states_batch(20)
        for s in range(5):
            a = neural.init_params(spec, seed=s)
            b = neural.init_params(spec, seed=s + 50)
            assert kl_term(spec, a, b, feats, masks) >= 0.0


class TestPPOLoss:
    def test_ratio_one_gives_negative_mean_advantage(self):
        spec = reduced_spec()
        params = neural.init_params(spec, seed=4)
        feats, masks = states_batch(16)
        from hanabi_coord.rl import _policy_step

        probs = _policy_step(spec, params, feats, masks)
        rng = np.random.default_rng(1)
        actions = np.array(
            [rng.choice(len(p), p=p / p.sum()) for p in probs], np.int64
        )
        old_lp = np.log(probs[np.arange(len(actions)), actions])
        adv = rng.normal(size=len(actions))
        loss, comp = ppo_loss(spec, params, feats, masks, actions, old_lp, adv, 0.2)
        assert loss == pytest.approx(-adv.mean(), abs=1e-5)
        assert comp["clip_fraction"] == 0.0

    def test_clipped_branch_closed_form(self):
        # single state, 2 actions, engineered ratio = 1 + 2*eps > clip bound
        spec = PolicySpec(1, (), (), (), 2)
        n = neural.num_params(spec)
        params = ParameterSet(spec, np.zeros(n, np.float32))
        feats = np.zeros((1, 1), np.float32)
        masks = np.ones((1, 2), bool)
        actions = np.array([0], np.int64)
        eps = 0.2
        # uniform policy gives new prob 0.5; choose old prob so the ratio
        # overshoots the clip window
        old_prob = 0.5 / (1 + 2 * eps)
        adv = np.array([2.0])
        loss, _ = ppo_loss(
            spec, params, feats, masks, actions, np.log([old_prob]), adv, eps
        )
        assert loss == pytest.approx(-(1 + eps) * 2.0, abs=1e-6)

    def test_negative_advantage_clip_lower_bound(self):
        spec = PolicySpec(1, (), (), (), 2)
        params = ParameterSet(
            spec, np.zeros(neural.num_params(spec), np.float32)
        )
        feats = np.zeros((1, 1), np.float32)
        masks = np.ones((1, 2), bool)
        eps = 0.2
        old_prob = 0.5 / (1 - 2 * eps)  # ratio below 1 - eps
        adv = np.array([-3.0])
        loss, _ = ppo_loss(
            spec, params, feats, masks, np.array([0]), np.log([old_prob]), adv, eps
        )
        # maximization takes the unclipped (worse) branch for negative adv
        ratio = 0.5 / old_prob
        assert loss == pytest.approx(-min(ratio * -3.0, (1 - eps) * -3.0), abs=1e-6)


class TestRollouts:
    def test_shapes_and_determinism(self):
        spec = reduced_spec()
        params = neural.init_params(spec, seed=0)
        cspec = critic_spec_for(spec)
        cparams = neural.init_params(cspec, seed=1)
        buf1, _, _ = collect_rollouts(
            spec, params, cspec, cparams, TINY_CFG, REDUCED
        )
        buf2, _, _ = collect_rollouts(
            spec, params, cspec, cparams, TINY_CFG, REDUCED
        )
        E, T = TINY_CFG.num_envs, TINY_CFG.num_env_steps
        assert buf1.features.shape == (E, T, feature_length(REDUCED))
        assert buf1.masks.shape == (E, T, action_space_size(REDUCED))
        np.testing.assert_array_equal(buf1.features, buf2.features)
        np.testing.assert_array_equal(buf1.rewards, buf2.rewards)

    def test_episode_returns_equal_scores(self):
        spec = reduced_spec()
        params = neural.init_params(spec, seed=0)
        cspec = critic_spec_for(spec)
        cparams = neural.init_params(cspec, seed=1)
        cfg = RLConfig(num_envs=4, num_env_steps=80, total_updates=1, seed=9)
        buf, _, _ = collect_rollouts(spec, params, cspec, cparams, cfg, REDUCED)
        assert buf.episode_scores, "no episodes completed; lengthen the segment"
        # reconstruct per-episode reward sums in collection order (t, then env)
        starts = [0] * cfg.num_envs
        idx = 0
        for t in range(cfg.num_env_steps):
            for e in range(cfg.num_envs):
                if buf.dones[e, t]:
                    total = buf.rewards[e, starts[e] : t + 1].sum()
                    assert total == pytest.approx(buf.episode_scores[idx])
                    starts[e] = t + 1
                    idx += 1
        assert idx == len(buf.episode_scores)

    def test_actions_always_legal(self):
        spec = reduced_spec()
        params = neural.init_params(spec, seed=0)
        cspec = critic_spec_for(spec)
        cparams = neural.init_params(cspec, seed=1)
        buf, _, _ = collect_rollouts(spec, params, cspec, cparams, TINY_CFG, REDUCED)
        E, T = buf.actions.shape
        for e in range(E):
            for t in range(T):
                assert buf.masks[e, t, buf.actions[e, t]]

    def test_recurrent_actor_rejected(self):
        spec = PolicySpec(
            feature_length(REDUCED), (8,), (8,), (), action_space_size(REDUCED)
        )
        params = neural.init_params(spec, seed=0)
        cspec = critic_spec_for(spec)
        cparams = neural.init_params(cspec, seed=1)
        with pytest.raises(rl.RLError):
            collect_rollouts(spec, params, cspec, cparams, TINY_CFG, REDUCED)


class TestHDRUpdate:
    def _setup(self, seed=0):
        spec = reduced_spec()
        params = neural.init_params(spec, seed=seed)
        cspec = critic_spec_for(spec)
        cparams = neural.init_params(cspec, seed=seed + 1)
        buf, _, _ = collect_rollouts(spec, params, cspec, cparams, TINY_CFG, REDUCED)
        return spec, params, cspec, cparams, buf

    def test_lambda_zero_matches_plain_ippo_bitwise(self):
        # both paths run through the same function; verify determinism of
        # the full update given identical inputs and seeds
        spec, params, cspec, cparams, buf = self._setup()
        from hanabi_coord.neural import OptimizerState, ScheduleConfig

        outs = []
        for _ in range(2):
            a_opt = OptimizerState(ScheduleConfig(1e-3))
            c_opt = OptimizerState(ScheduleConfig(1e-3))
            p, c, _, _, _ = hdr_update(
                spec, params.copy(), cspec, cparams.copy(), a_opt, c_opt, buf,
                HDRConfig(rl=TINY_CFG, kl_weight=0.0),
            )
            outs.append((p.flat, c.flat))
        np.testing.assert_array_equal(outs[0][0], outs[1][0])
        np.testing.assert_array_equal(outs[0][1], outs[1][1])

    def test_lambda_one_leaves_critic_unchanged(self):
        spec, params, cspec, cparams, buf = self._setup()
        ref = neural.init_params(spec, seed=77)
        from hanabi_coord.neural import OptimizerState, ScheduleConfig

        p, c, _, _, m = hdr_update(
            spec, params, cspec, cparams.copy(), OptimizerState(ScheduleConfig(1e-3)),
            OptimizerState(ScheduleConfig(1e-3)), buf,
            HDRConfig(rl=TINY_CFG, kl_weight=1.0, ref_params=ref),
        )
        np.testing.assert_array_equal(c.flat, cparams.flat)
        assert m.value_loss == 0.0
        assert m.kl > 0

    def test_lambda_one_distillation_reduces_kl(self):
        spec, params, cspec, cparams, buf = self._setup()
        ref = neural.init_params(spec, seed=77)
        from hanabi_coord.neural import OptimizerState, ScheduleConfig

        feats = buf.features.reshape(-1, buf.features.shape[-1])
        masks = buf.masks.reshape(-1, buf.masks.shape[-1])
        before = kl_term(spec, ref, params, feats, masks)
        a_opt = OptimizerState(ScheduleConfig(5e-3))
        c_opt = OptimizerState(ScheduleConfig(5e-3))
        hdr = HDRConfig(rl=TINY_CFG, kl_weight=1.0, ref_params=ref)
        for _ in range(20):
            params, cparams, a_opt, c_opt, _ = hdr_update(
                spec, params, cspec, cparams, a_opt, c_opt, buf, hdr
            )
        after = kl_term(spec, ref, params, feats, masks)
        assert after < before * 0.2

    def test_invalid_lambda_rejected(self):
        with pytest.raises(ValueError):
            HDRConfig(rl=TINY_CFG, kl_weight=1.5)
        with pytest.raises(ValueError):
            HDRConfig(rl=TINY_CFG, kl_weight=0.5)  # no reference supplied


class TestTrainLoops:
    def test_ippo_log_schema(self):
        spec = reduced_spec()
        params, log = train_ippo(spec, TINY_CFG, REDUCED)
        assert len(log) == TINY_CFG.total_updates
        for e in log:
            assert {"update", "loss", "kl", "entropy", "sp_score"} <= set(e)

    def test_hdr_starts_from_reference(self):
        spec = reduced_spec()
        ref = neural.init_params(spec, seed=123)
        cfg = RLConfig(num_envs=2, num_env_steps=8, total_updates=1, seed=5)
        params, log = train_hdr(
            spec, HDRConfig(rl=cfg, kl_weight=1.0, ref_params=ref), REDUCED
        )
        assert len(log) == 1
        assert log[0]["kl"] >= 0


class TestAnnealing:
    def test_endpoints_and_midpoint(self):
        assert bc_partner_probability(0, 100, 200) == 0.0
        assert bc_partner_probability(100, 100, 200) == 0.0
        assert bc_partner_probability(200, 100, 200) == 1.0
        assert bc_partner_probability(10**12, 100, 200) == 1.0
        assert bc_partner_probability(150, 100, 200) == pytest.approx(0.5)

    def test_full_scale_anneal_bounds(self):
        assert rl.BR_BC_ANNEAL_START == 1_000_000_000
        assert rl.BR_BC_ANNEAL_END == 6_000_000_000

    def test_midpoint_sampler_statistics(self):
        rng = np.random.Generator(np.random.Philox(0))
        draws = [sample_partner_count(1, 0.5, rng) for _ in range(10_000)]
        assert np.mean(draws) == pytest.approx(0.5, abs=0.015)

    def test_three_player_counts_cover_zero_one_two(self):
        rng = np.random.Generator(np.random.Philox(1))
        draws = {sample_partner_count(2, 0.5, rng) for _ in range(200)}
        assert draws == {0, 1, 2}

    def test_invalid_bounds(self):
        with pytest.raises(ValueError):
            bc_partner_probability(0, 200, 100)


class TestBRBC:
    def test_runs_and_logs_partner_probability(self):
        spec = reduced_spec()
        bc_params = neural.init_params(spec, seed=88)
        cfg = RLConfig(num_envs=2, num_env_steps=12, total_updates=2, seed=6)
        config = BRBCConfig(rl=cfg, anneal_start=0, anneal_end=24)
        params, log = train_br_bc(spec, config, REDUCED, spec, bc_params)
        assert len(log) == 2
        assert log[0]["bc_partner_probability"] == 0.0
        assert log[1]["bc_partner_probability"] == pytest.approx(1.0)

    def test_partner_rollouts_buffer_valid(self):
        spec = reduced_spec()
        params = neural.init_params(spec, seed=0)
        cspec = critic_spec_for(spec)
        cparams = neural.init_params(cspec, seed=1)
        bc_params = neural.init_params(spec, seed=3)
        cfg = RLConfig(num_envs=2, num_env_steps=10, total_updates=1, seed=7)

        def factory(rng):
            if rng.random() < 0.5:
                return rl._FrozenSeat(spec, bc_params, rng)
            return None

        buf, _ = collect_rollouts_vs_partners(
            spec, params, cspec, cparams, cfg, REDUCED, factory
        )
        E, T = buf.actions.shape
        assert E == 2 and T >= cfg.num_env_steps
        for e in range(E):
            for t in range(T):
                assert buf.masks[e, t, buf.actions[e, t]]


class TestFCP:
    def test_population_sizes(self):
        spec = reduced_spec()
        cfg = RLConfig(num_envs=2, num_env_steps=8, total_updates=2, seed=2)
        pop = build_fcp_population(spec, 2, 2, cfg, REDUCED)
        assert len(pop.members) == 4
        assert len({t for t, _ in pop.members}) == 4

    def test_full_and_desk_presets(self):
        assert rl.FCP_FULL_SEEDS * rl.FCP_FULL_CHECKPOINTS == 144
        assert rl.FCP_DESK_SEEDS * rl.FCP_DESK_CHECKPOINTS == 8

    def test_duplicate_tags_rejected(self):
        spec = reduced_spec()
        p = neural.init_params(spec, seed=0)
        with pytest.raises(ValueError):
            Population([("a", p), ("a", p)])

    def test_uniform_partner_sampling(self):
        rng = np.random.Generator(np.random.Philox(3))
        members = [(f"m{i}", None) for i in range(8)]
        counts = np.zeros(8)
        for _ in range(10_000):
            counts[int(rng.integers(8))] += 1
        freq = counts / counts.sum()
        sigma = math.sqrt((1 / 8) * (7 / 8) / 10_000)
        assert np.all(np.abs(freq - 1 / 8) < 3 * sigma + 1e-9)

    def test_br_training_runs(self):
        spec = reduced_spec()
        cfg = RLConfig(num_envs=2, num_env_steps=8, total_updates=1, seed=4)
        pop = build_fcp_population(spec, 1, 1, cfg, REDUCED)
        params, log = rl.train_fcp_br(spec, pop, cfg, REDUCED)
        assert len(log) == 1
