"""Self-play policy-gradient training.

Plain IPPO (clipped surrogate + GAE) with parameter sharing across seats,
the KL-regularized variant that pulls the learner toward a frozen cloned
reference, linear self-play annealing toward frozen partners, and
checkpoint-population construction with a best response trained against it.

Transitions are collected at turn granularity: every turn is one agent step
taken from the acting seat's local observation, and all seats share one set
of parameters. Rewards are per-turn score increments with a terminal
correction when the team loses all lives, so episode returns always equal
the official final score.

The actor and the critic are two separate networks. Actor specs must be
feedforward here (no recurrent layers); the per-step observation plus the
last-action features carry the context at desk scale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from . import neural
from .encoding import (
    action_space_size,
    encode,
    feature_length,
    index_to_action,
    legal_action_mask,
)
from .engine import GameConfig, apply, is_terminal, new_game, observe, score
from .neural import (
    OptimizerState,
    ParameterSet,
    PolicySpec,
    ScheduleConfig,
    _forward_torch,
    _views,
)


class RLError(Exception):
    pass


@dataclass(frozen=True)
class RLConfig:
    learning_rate: float = 2.5e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    update_epochs: int = 4
    minibatches: int = 4
    num_envs: int = 8
    num_env_steps: int = 64
    total_updates: int = 50
    normalize_advantages: bool = True
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0) or not (0.0 < self.gae_lambda <= 1.0):
            raise ValueError("gamma and gae_lambda must be in (0, 1]")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")


@dataclass(frozen=True)
class HDRConfig:
    rl: RLConfig
    kl_weight: float = 0.25
    # frozen reference; None only makes sense with kl_weight == 0
    ref_params: Optional[ParameterSet] = None
    ref_spec: Optional[PolicySpec] = None

    def __post_init__(self):
        if not (0.0 <= self.kl_weight <= 1.0):
            raise ValueError("kl_weight must be in [0, 1]")
        if self.kl_weight > 0 and self.ref_params is None:
            raise ValueError("kl_weight > 0 requires a reference policy")


# full-scale baseline hyperparameters
BASELINE_1K = RLConfig(
    learning_rate=2.5e-4,
    gamma=0.99,
    gae_lambda=0.95,
    clip_eps=0.2,
    value_coef=0.5,
    max_grad_norm=0.5,
    update_epochs=4,
    minibatches=4,
)
HDR_KL_WEIGHT_DEFAULT = 0.25
BR_BC_ANNEAL_START = 1_000_000_000
BR_BC_ANNEAL_END = 6_000_000_000
FCP_FULL_SEEDS = 36
FCP_FULL_CHECKPOINTS = 4
FCP_DESK_SEEDS = 4
FCP_DESK_CHECKPOINTS = 2

ABLATION_KL_GRID = (0.00, 0.01, 0.08, 0.13, 0.20, 0.30, 0.50, 0.70)


@dataclass
class RolloutBuffer:
    """[num_envs, num_steps] transition arrays plus bootstrap values."""

    features: np.ndarray  # [E, T, F] float32
    masks: np.ndarray  # [E, T, A] bool
    actions: np.ndarray  # [E, T] int64
    log_probs: np.ndarray  # [E, T] float32
    values: np.ndarray  # [E, T] float32
    rewards: np.ndarray  # [E, T] float32
    dones: np.ndarray  # [E, T] bool; True when step t ended an episode
    bootstrap_values: np.ndarray  # [E] float32; value after the last step
    episode_scores: list[int]  # scores of episodes completed in this segment


def _value_forward(
    spec: PolicySpec, params: ParameterSet, feats: np.ndarray
) -> np.ndarray:
    """Raw scalar outputs (no softmax) for a [T, F] feature batch."""
    flat = torch.from_numpy(params.flat)
    x = torch.from_numpy(np.asarray(feats, dtype=np.float32)).unsqueeze(0)
    with torch.no_grad():
        _, logits, _ = _forward_torch(spec, _views(flat, spec), x, None, "eval", 0)
    return logits[0, :, 0].numpy()


def _policy_step(
    spec: PolicySpec,
    params: ParameterSet,
    feats: np.ndarray,
    masks: np.ndarray,
    dtype: torch.dtype = torch.float32,
) -> np.ndarray:
    """Action probabilities for a [T, F] batch of independent states."""
    flat = torch.from_numpy(params.flat).to(dtype)
    x = torch.from_numpy(np.asarray(feats, dtype=np.float32)).to(dtype).unsqueeze(0)
    m = torch.from_numpy(np.asarray(masks, dtype=bool)).unsqueeze(0)
    with torch.no_grad():
        log_probs, _, _ = _forward_torch(spec, _views(flat, spec), x, m, "eval", 0)
    return torch.exp(log_probs)[0].numpy()


def critic_spec_for(actor_spec: PolicySpec) -> PolicySpec:
    """Value network with the actor's trunk widths and a scalar head."""
    return PolicySpec(
        input_width=actor_spec.input_width,
        embed_widths=actor_spec.embed_widths,
        lstm_widths=(),
        decoder_widths=actor_spec.decoder_widths,
        output_size=1,
        activation=actor_spec.activation,
    )


class _Env:
    """One self-resetting game used by the vectorized collector."""

    def __init__(self, game_config: GameConfig, rng: np.random.Generator):
        self.base = game_config
        self.rng = rng
        self.state = None
        self.reset()

    def reset(self) -> None:
        cfg = replace(self.base, seed=int(self.rng.integers(0, 2**62)))
        self.state = new_game(cfg)

    def observation(self):
        return observe(self.state, self.state.current_player)

    def step(self, action) -> tuple[float, bool, Optional[int]]:
        """Returns (reward, done, final_score if done)."""
        before = score(self.state)
        self.state, _ = apply(self.state, action)
        reward = float(score(self.state) - before)
        reason = is_terminal(self.state)
        if reason is None:
            return reward, False, None
        final = score(self.state)
        # losing every life zeroes the official score; fold that into the
        # last reward so the episode return matches it
        reward = float(final - before)
        self.reset()
        return reward, True, final


PartnerPicker = Callable[[int, np.random.Generator], Optional[object]]


def collect_rollouts(
    spec: PolicySpec,
    params: ParameterSet,
    critic_spec: PolicySpec,
    critic_params: ParameterSet,
    config: RLConfig,
    game_config: GameConfig,
    envs: Optional[list[_Env]] = None,
    rng: Optional[np.random.Generator] = None,
) -> tuple[RolloutBuffer, list[_Env], np.random.Generator]:
    """Vectorized self-play for num_env_steps turns per environment."""
    if spec.lstm_widths:
        raise RLError("rollout collection requires a feedforward actor spec")
    if rng is None:
        rng = np.random.Generator(np.random.Philox(config.seed))
    if envs is None:
        envs = [_Env(game_config, rng) for _ in range(config.num_envs)]
    E, T = config.num_envs, config.num_env_steps
    F = feature_length(game_config)
    A = action_space_size(game_config)
    buf = RolloutBuffer(
        features=np.zeros((E, T, F), np.float32),
        masks=np.zeros((E, T, A), bool),
        actions=np.zeros((E, T), np.int64),
        log_probs=np.zeros((E, T), np.float32),
        values=np.zeros((E, T), np.float32),
        rewards=np.zeros((E, T), np.float32),
        dones=np.zeros((E, T), bool),
        bootstrap_values=np.zeros(E, np.float32),
        episode_scores=[],
    )
    for t in range(T):
        feats = np.stack([encode(e.observation()) for e in envs])
        masks = np.stack(
            [
                legal_action_mask(e.observation().legal_actions(), e.state.config)
                for e in envs
            ]
        )
        probs = _policy_step(spec, params, feats, masks)
        values = _value_forward(critic_spec, critic_params, feats)
        for i, env in enumerate(envs):
            p = probs[i] / probs[i].sum()
            a = int(rng.choice(A, p=p))
            reward, done, final = env.step(index_to_action(a, env.state.config))
            buf.features[i, t] = feats[i]
            buf.masks[i, t] = masks[i]
            buf.actions[i, t] = a
            buf.log_probs[i, t] = np.log(max(p[a], 1e-30))
            buf.values[i, t] = values[i]
            buf.rewards[i, t] = reward
            buf.dones[i, t] = done
            if done:
                buf.episode_scores.append(final)
    feats = np.stack([encode(e.observation()) for e in envs])
    buf.bootstrap_values = _value_forward(critic_spec, critic_params, feats).astype(
        np.float32
    )
    return buf, envs, rng


def gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    bootstrap_values: np.ndarray,
    gamma: float,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation with episode-boundary masking."""
    E, T = rewards.shape
    adv = np.zeros((E, T), np.float64)
    last = np.zeros(E, np.float64)
    next_value = bootstrap_values.astype(np.float64)
    for t in range(T - 1, -1, -1):
        not_done = 1.0 - dones[:, t].astype(np.float64)
        delta = rewards[:, t] + gamma * next_value * not_done - values[:, t]
        last = delta + gamma * lam * not_done * last
        adv[:, t] = last
        next_value = values[:, t].astype(np.float64)
    returns = adv + values
    return adv, returns


def kl_term(
    spec: PolicySpec,
    ref_params: ParameterSet,
    params: ParameterSet,
    features: np.ndarray,
    masks: np.ndarray,
) -> float:
    """Mean D_KL(reference || learner) over legal actions, no gradients."""
    p = _policy_step(spec, ref_params, features, masks, dtype=torch.float64)
    q = _policy_step(spec, params, features, masks, dtype=torch.float64)
    legal = np.asarray(masks, dtype=bool)
    ratio = np.zeros_like(p, dtype=np.float64)
    nz = legal & (p > 0)
    ratio[nz] = p[nz] * (np.log(p[nz]) - np.log(np.maximum(q[nz], 1e-30)))
    kl = ratio.sum(axis=-1).mean()
    assert kl >= -1e-9, f"negative KL {kl}"
    return float(max(kl, 0.0))


def ppo_loss(
    spec: PolicySpec,
    params: ParameterSet,
    features: np.ndarray,
    masks: np.ndarray,
    actions: np.ndarray,
    old_log_probs: np.ndarray,
    advantages: np.ndarray,
    clip_eps: float,
) -> tuple[float, dict]:
    """Clipped-surrogate diagnostic on a flat state batch (no gradients)."""
    probs = _policy_step(spec, params, features, masks)
    new_lp = np.log(np.maximum(probs[np.arange(len(actions)), actions], 1e-30))
    ratio = np.exp(new_lp - np.asarray(old_log_probs, np.float64))
    if not np.all(np.isfinite(ratio)):
        raise RLError("non-finite probability ratio")
    adv = np.asarray(advantages, np.float64)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1 - clip_eps, 1 + clip_eps) * adv
    policy = -np.minimum(surr1, surr2).mean()
    legal = np.asarray(masks, bool)
    ent_terms = np.where(legal & (probs > 0), probs * np.log(np.maximum(probs, 1e-30)), 0.0)
    entropy = float(-ent_terms.sum(axis=-1).mean())
    return float(policy), {
        "policy": float(policy),
        "entropy": entropy,
        "clip_fraction": float((np.abs(ratio - 1.0) > clip_eps).mean()),
    }


@dataclass
class UpdateMetrics:
    loss: float
    policy_loss: float
    value_loss: float
    entropy: float
    kl: float
    clip_fraction: float


def hdr_update(
    spec: PolicySpec,
    params: ParameterSet,
    critic_spec: PolicySpec,
    critic_params: ParameterSet,
    actor_opt: OptimizerState,
    critic_opt: OptimizerState,
    buffer: RolloutBuffer,
    hdr: HDRConfig,
) -> tuple[ParameterSet, ParameterSet, OptimizerState, OptimizerState, UpdateMetrics]:
    """One full update: minimizes (1 - w) * clipped-ppo + w * reference KL.

    With kl_weight 0 this is exactly the plain IPPO update; train_ippo calls
    straight into this code path so the two cannot drift apart.
    """
    cfg = hdr.rl
    lam_w = hdr.kl_weight
    E, T = buffer.rewards.shape
    adv, returns = gae(
        buffer.rewards,
        buffer.values,
        buffer.dones,
        buffer.bootstrap_values,
        cfg.gamma,
        cfg.gae_lambda,
    )
    flat_feats = buffer.features.reshape(E * T, -1)
    flat_masks = buffer.masks.reshape(E * T, -1)
    flat_actions = buffer.actions.reshape(E * T)
    flat_old_lp = buffer.log_probs.reshape(E * T).astype(np.float64)
    flat_adv = adv.reshape(E * T)
    flat_ret = returns.reshape(E * T)
    if cfg.normalize_advantages:
        flat_adv = (flat_adv - flat_adv.mean()) / (flat_adv.std() + 1e-8)

    ref_log_probs = None
    if lam_w > 0:
        ref_spec = hdr.ref_spec or spec
        rp = _policy_step(ref_spec, hdr.ref_params, flat_feats, flat_masks)
        ref_log_probs = np.log(np.maximum(rp, 1e-30))
        ref_log_probs[~flat_masks] = -np.inf
        ref_probs = np.where(flat_masks, rp, 0.0)

    order_rng = np.random.Generator(np.random.Philox(cfg.seed + actor_opt.step))
    N = E * T
    metrics = []
    for _ in range(cfg.update_epochs):
        perm = order_rng.permutation(N)
        for mb in np.array_split(perm, cfg.minibatches):
            feats_t = torch.from_numpy(flat_feats[mb]).unsqueeze(0)
            masks_t = torch.from_numpy(flat_masks[mb]).unsqueeze(0)
            acts_t = torch.from_numpy(flat_actions[mb])
            adv_t = torch.from_numpy(flat_adv[mb])
            old_lp_t = torch.from_numpy(flat_old_lp[mb])

            actor_flat = torch.tensor(
                params.flat, dtype=torch.float64, requires_grad=True
            )
            log_probs, _, _ = _forward_torch(
                spec, _views(actor_flat, spec), feats_t.double(), masks_t,
                "eval", 0,
            )
            lp = log_probs[0]
            new_lp = lp.gather(-1, acts_t.unsqueeze(-1)).squeeze(-1)
            ratio = torch.exp(new_lp - old_lp_t)
            surr1 = ratio * adv_t
            surr2 = torch.clamp(ratio, 1 - cfg.clip_eps, 1 + cfg.clip_eps) * adv_t
            policy_loss = -torch.min(surr1, surr2).mean()
            probs = torch.exp(lp)
            ent = -(probs * torch.where(masks_t[0], lp, torch.zeros_like(lp))).sum(
                -1
            ).mean()
            actor_loss = (1.0 - lam_w) * (policy_loss - cfg.entropy_coef * ent)
            kl_val = 0.0
            if lam_w > 0:
                ref_p = torch.from_numpy(ref_probs[mb])
                ref_lp = torch.from_numpy(ref_log_probs[mb])
                per_state = (
                    ref_p * (torch.where(ref_p > 0, ref_lp, torch.zeros_like(ref_lp)) - torch.where(ref_p > 0, lp, torch.zeros_like(lp)))
                ).sum(-1)
                kl = per_state.mean()
                actor_loss = actor_loss + lam_w * kl
                kl_val = float(kl.item())
            if not torch.isfinite(actor_loss):
                raise RLError(f"non-finite actor loss {actor_loss.item()}")
            (a_grad,) = torch.autograd.grad(actor_loss, actor_flat)
            grads = ParameterSet(
                spec, a_grad.detach().to(torch.float32).numpy().copy()
            )
            grads, _ = neural.clip_grad_norm(grads, cfg.max_grad_norm)
            params, actor_opt = neural.adam_step(actor_opt, params, grads)

            value_loss_val = 0.0
            if lam_w < 1.0:
                critic_flat = torch.tensor(
                    critic_params.flat, dtype=torch.float64, requires_grad=True
                )
                _, v_logits, _ = _forward_torch(
                    critic_spec, _views(critic_flat, critic_spec),
                    feats_t.double(), None, "eval", 0,
                )
                v = v_logits[0, :, 0]
                ret_t = torch.from_numpy(flat_ret[mb])
                value_loss = ((v - ret_t) ** 2).mean()
                critic_loss = (1.0 - lam_w) * cfg.value_coef * value_loss
                (c_grad,) = torch.autograd.grad(critic_loss, critic_flat)
                c_grads = ParameterSet(
                    critic_spec, c_grad.detach().to(torch.float32).numpy().copy()
                )
                c_grads, _ = neural.clip_grad_norm(c_grads, cfg.max_grad_norm)
                critic_params, critic_opt = neural.adam_step(
                    critic_opt, critic_params, c_grads
                )
                value_loss_val = float(value_loss.item())

            with torch.no_grad():
                clip_frac = float(
                    ((ratio - 1.0).abs() > cfg.clip_eps).float().mean().item()
                )
            metrics.append(
                (
                    float(actor_loss.item())
                    + (1.0 - lam_w) * cfg.value_coef * value_loss_val,
                    float(policy_loss.item()),
                    value_loss_val,
                    float(ent.item()),
                    kl_val,
                    clip_frac,
                )
            )
    agg = np.mean(np.array(metrics, dtype=np.float64), axis=0)
    return (
        params,
        critic_params,
        actor_opt,
        critic_opt,
        UpdateMetrics(
            loss=float(agg[0]),
            policy_loss=float(agg[1]),
            value_loss=float(agg[2]),
            entropy=float(agg[3]),
            kl=float(agg[4]),
            clip_fraction=float(agg[5]),
        ),
    )


def _train_loop(
    spec: PolicySpec,
    game_config: GameConfig,
    hdr: HDRConfig,
    log_path: Optional[str | Path] = None,
    init_params: Optional[ParameterSet] = None,
    checkpoint_updates: Optional[Sequence[int]] = None,
) -> tuple[ParameterSet, list[dict], list[tuple[int, ParameterSet]]]:
    cfg = hdr.rl
    params = init_params.copy() if init_params is not None else neural.init_params(
        spec, seed=cfg.seed
    )
    critic_spec = critic_spec_for(spec)
    critic_params = neural.init_params(critic_spec, seed=cfg.seed + 1)
    schedule = ScheduleConfig(cfg.learning_rate)
    actor_opt = OptimizerState(schedule)
    critic_opt = OptimizerState(schedule)
    envs = None
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    log: list[dict] = []
    snapshots: list[tuple[int, ParameterSet]] = []
    recent_scores: list[int] = []
    for update in range(cfg.total_updates):
        buf, envs, rng = collect_rollouts(
            spec, params, critic_spec, critic_params, cfg, game_config, envs, rng
        )
        recent_scores.extend(buf.episode_scores)
        recent_scores = recent_scores[-100:]
        params, critic_params, actor_opt, critic_opt, m = hdr_update(
            spec, params, critic_spec, critic_params, actor_opt, critic_opt,
            buf, hdr,
        )
        log.append(
            {
                "update": update,
                "loss": m.loss,
                "kl": m.kl,
                "entropy": m.entropy,
                "sp_score": float(np.mean(recent_scores)) if recent_scores else 0.0,
            }
        )
        if checkpoint_updates and update in checkpoint_updates:
            snapshots.append((update, params.copy()))
    if log_path is not None:
        with open(log_path, "w") as fh:
            for entry in log:
                fh.write(json.dumps(entry) + "\n")
    return params, log, snapshots


def train_ippo(
    spec: PolicySpec,
    config: RLConfig,
    game_config: GameConfig,
    log_path: Optional[str | Path] = None,
) -> tuple[ParameterSet, list[dict]]:
    params, log, _ = _train_loop(
        spec, game_config, HDRConfig(rl=config, kl_weight=0.0), log_path
    )
    return params, log


def train_hdr(
    spec: PolicySpec,
    hdr: HDRConfig,
    game_config: GameConfig,
    log_path: Optional[str | Path] = None,
    init_from_reference: bool = True,
) -> tuple[ParameterSet, list[dict]]:
    """KL-regularized self-play; the actor starts from the reference."""
    init = None
    if init_from_reference and hdr.ref_params is not None:
        init = hdr.ref_params
    params, log, _ = _train_loop(spec, game_config, hdr, log_path, init_params=init)
    return params, log


# --- training against frozen partners ------------------------------------------


def bc_partner_probability(
    timestep: int, anneal_start: int, anneal_end: int
) -> float:
    """Linear ramp from all-self-play to all-frozen-partner."""
    if anneal_end <= anneal_start or anneal_start < 0:
        raise ValueError("need 0 <= anneal_start < anneal_end")
    if timestep <= anneal_start:
        return 0.0
    if timestep >= anneal_end:
        return 1.0
    return (timestep - anneal_start) / (anneal_end - anneal_start)


def sample_partner_count(
    num_partners: int, p_bc: float, rng: np.random.Generator
) -> int:
    """How many seats play the frozen policy this episode (0..num_partners)."""
    return int(rng.binomial(num_partners, p_bc))


@dataclass
class _FrozenSeat:
    """Partner seat driven by a frozen feedforward policy, greedy-free."""

    spec: PolicySpec
    params: ParameterSet
    rng: np.random.Generator

    def act(self, obs):
        mask = legal_action_mask(obs.legal_actions(), obs.config)
        probs = _policy_step(self.spec, self.params, encode(obs)[None], mask[None])[0]
        probs = probs / probs.sum()
        return index_to_action(int(self.rng.choice(len(probs), p=probs)), obs.config)


def collect_rollouts_vs_partners(
    spec: PolicySpec,
    params: ParameterSet,
    critic_spec: PolicySpec,
    critic_params: ParameterSet,
    config: RLConfig,
    game_config: GameConfig,
    partner_factory: Callable[[np.random.Generator], Optional[object]],
    state: Optional[dict] = None,
) -> tuple[RolloutBuffer, dict]:
    """Learner transitions only; other seats may be driven by frozen policies.

    partner_factory(rng) returns a policy for one partner seat or None for a
    self-play seat (shared learner parameters). Sampled once per episode.
    Rewards between two learner turns accumulate onto the learner's pending
    transition so returns still telescope to the final score.
    """
    if state is None:
        rng = np.random.Generator(np.random.Philox(config.seed))
        state = {"rng": rng, "envs": None}
    rng = state["rng"]
    E = config.num_envs
    F = feature_length(game_config)
    A = action_space_size(game_config)
    n = game_config.num_players

    def assign(env):
        seats = {}
        learner_seat = int(rng.integers(n))
        for s in range(n):
            if s == learner_seat:
                seats[s] = None
                continue
            seats[s] = partner_factory(rng)
        # at least the learner seat is shared; others None means self-play
        return seats

    if state["envs"] is None:
        state["envs"] = []
        for _ in range(E):
            env = _Env(game_config, rng)
            state["envs"].append({"env": env, "seats": assign(env), "pending": None,
                                  "carry": 0.0})

    rows = {
        k: [[] for _ in range(E)]
        for k in ("features", "masks", "actions", "log_probs", "values", "rewards",
                  "dones")
    }
    episode_scores: list[int] = []

    def committed(i):
        return len(rows["features"][i])

    while min(committed(i) for i in range(E)) < config.num_env_steps:
        for i, slot in enumerate(state["envs"]):
            if committed(i) >= config.num_env_steps:
                continue
            env = slot["env"]
            obs = env.observation()
            seat_policy = slot["seats"][obs.player]
            if seat_policy is not None:
                reward, done, final = env.step(seat_policy.act(obs))
                slot["carry"] += reward
                if done:
                    episode_scores.append(final)
                    if slot["pending"] is not None:
                        self_commit(rows, i, slot, done=True)
                    slot["carry"] = 0.0
                    slot["seats"] = assign(env)
                continue
            feats = encode(obs)
            mask = legal_action_mask(obs.legal_actions(), env.state.config)
            probs = _policy_step(spec, params, feats[None], mask[None])[0]
            probs = probs / probs.sum()
            a = int(rng.choice(A, p=probs))
            value = float(_value_forward(critic_spec, critic_params, feats[None])[0])
            if slot["pending"] is not None:
                self_commit(rows, i, slot, done=False)
            slot["pending"] = {
                "features": feats,
                "mask": mask,
                "action": a,
                "log_prob": float(np.log(max(probs[a], 1e-30))),
                "value": value,
            }
            reward, done, final = env.step(index_to_action(a, env.state.config))
            slot["carry"] = reward
            if done:
                episode_scores.append(final)
                self_commit(rows, i, slot, done=True)
                slot["carry"] = 0.0
                slot["seats"] = assign(env)

    T = min(len(r) for r in rows["features"])
    if T == 0:
        raise RLError("no learner transitions collected; partners played every turn")
    buf = RolloutBuffer(
        features=np.stack([np.stack(r[:T]) for r in rows["features"]]),
        masks=np.stack([np.stack(r[:T]) for r in rows["masks"]]),
        actions=np.array([r[:T] for r in rows["actions"]], np.int64),
        log_probs=np.array([r[:T] for r in rows["log_probs"]], np.float32),
        values=np.array([r[:T] for r in rows["values"]], np.float32),
        rewards=np.array([r[:T] for r in rows["rewards"]], np.float32),
        dones=np.array([r[:T] for r in rows["dones"]], bool),
        bootstrap_values=np.zeros(E, np.float32),
        episode_scores=episode_scores,
    )
    for i, slot in enumerate(state["envs"]):
        if slot["pending"] is not None:
            # the next learner decision state is already sampled; its value
            # is the correct bootstrap for the last committed transition
            buf.bootstrap_values[i] = slot["pending"]["value"]
        else:
            obs = slot["env"].observation()
            buf.bootstrap_values[i] = float(
                _value_forward(critic_spec, critic_params, encode(obs)[None])[0]
            )
    return buf, state


def self_commit(rows, i, slot, done: bool) -> None:
    p = slot["pending"]
    rows["features"][i].append(p["features"])
    rows["masks"][i].append(p["mask"])
    rows["actions"][i].append(p["action"])
    rows["log_probs"][i].append(p["log_prob"])
    rows["values"][i].append(p["value"])
    rows["rewards"][i].append(slot["carry"])
    rows["dones"][i].append(done)
    slot["pending"] = None
    slot["carry"] = 0.0


@dataclass(frozen=True)
class BRBCConfig:
    rl: RLConfig
    anneal_start: int = BR_BC_ANNEAL_START
    anneal_end: int = BR_BC_ANNEAL_END

    def __post_init__(self):
        if not (0 <= self.anneal_start < self.anneal_end):
            raise ValueError("need 0 <= anneal_start < anneal_end")


def train_br_bc(
    spec: PolicySpec,
    config: BRBCConfig,
    game_config: GameConfig,
    bc_spec: PolicySpec,
    bc_params: ParameterSet,
    log_path: Optional[str | Path] = None,
) -> tuple[ParameterSet, list[dict]]:
    """Best response to a frozen cloned policy with linear self-play anneal."""
    cfg = config.rl
    params = neural.init_params(spec, seed=cfg.seed)
    critic_spec = critic_spec_for(spec)
    critic_params = neural.init_params(critic_spec, seed=cfg.seed + 1)
    actor_opt = OptimizerState(ScheduleConfig(cfg.learning_rate))
    critic_opt = OptimizerState(ScheduleConfig(cfg.learning_rate))
    hdr = HDRConfig(rl=cfg, kl_weight=0.0)
    state = None
    partner_rng = np.random.Generator(np.random.Philox(cfg.seed + 17))
    timesteps = 0
    log: list[dict] = []
    for update in range(cfg.total_updates):
        p_bc = bc_partner_probability(
            timesteps, config.anneal_start, config.anneal_end
        )

        def factory(rng):
            if rng.random() < p_bc:
                return _FrozenSeat(bc_spec, bc_params, partner_rng)
            return None

        buf, state = collect_rollouts_vs_partners(
            spec, params, critic_spec, critic_params, cfg, game_config,
            factory, state,
        )
        timesteps += cfg.num_envs * cfg.num_env_steps
        params, critic_params, actor_opt, critic_opt, m = hdr_update(
            spec, params, critic_spec, critic_params, actor_opt, critic_opt,
            buf, hdr,
        )
        log.append(
            {
                "update": update,
                "loss": m.loss,
                "kl": m.kl,
                "entropy": m.entropy,
                "sp_score": float(np.mean(buf.episode_scores))
                if buf.episode_scores
                else 0.0,
                "bc_partner_probability": p_bc,
            }
        )
    if log_path is not None:
        with open(log_path, "w") as fh:
            for entry in log:
                fh.write(json.dumps(entry) + "\n")
    return params, log


# --- fictitious co-play ---------------------------------------------------------


@dataclass
class Population:
    members: list[tuple[str, ParameterSet]]

    def __post_init__(self):
        if not self.members:
            raise ValueError("population must be non-empty")
        tags = [t for t, _ in self.members]
        if len(set(tags)) != len(tags):
            raise ValueError("population tags must be unique")


def build_fcp_population(
    spec: PolicySpec,
    num_seeds: int,
    checkpoints_per_seed: int,
    config: RLConfig,
    game_config: GameConfig,
) -> Population:
    """Independent self-play runs, evenly spaced snapshots incl. the final."""
    if num_seeds <= 0 or checkpoints_per_seed <= 0:
        raise ValueError("counts must be positive")
    members = []
    for s in range(num_seeds):
        cfg = replace(config, seed=config.seed + 1000 * s)
        if checkpoints_per_seed == 1:
            marks = [cfg.total_updates - 1]
        else:
            marks = [
                round(i * (cfg.total_updates - 1) / (checkpoints_per_seed - 1))
                for i in range(checkpoints_per_seed)
            ]
        final, _, snaps = _train_loop(
            spec, game_config, HDRConfig(rl=cfg, kl_weight=0.0),
            checkpoint_updates=sorted(set(marks)),
        )
        got = {u: p for u, p in snaps}
        got[cfg.total_updates - 1] = final
        for u in sorted(set(marks)):
            members.append((f"seed{s}-ckpt{u}", got[u]))
    return Population(members)


def train_fcp_br(
    spec: PolicySpec,
    population: Population,
    config: RLConfig,
    game_config: GameConfig,
    log_path: Optional[str | Path] = None,
) -> tuple[ParameterSet, list[dict]]:
    """Best response against uniformly sampled population partners."""
    cfg = config
    params = neural.init_params(spec, seed=cfg.seed)
    critic_spec = critic_spec_for(spec)
    critic_params = neural.init_params(critic_spec, seed=cfg.seed + 1)
    actor_opt = OptimizerState(ScheduleConfig(cfg.learning_rate))
    critic_opt = OptimizerState(ScheduleConfig(cfg.learning_rate))
    hdr = HDRConfig(rl=cfg, kl_weight=0.0)
    partner_rng = np.random.Generator(np.random.Philox(cfg.seed + 29))
    state = None
    log: list[dict] = []

    def factory(rng):
        _, member = population.members[int(rng.integers(len(population.members)))]
        return _FrozenSeat(spec, member, partner_rng)

    for update in range(cfg.total_updates):
        buf, state = collect_rollouts_vs_partners(
            spec, params, critic_spec, critic_params, cfg, game_config,
            factory, state,
        )
        params, critic_params, actor_opt, critic_opt, m = hdr_update(
            spec, params, critic_spec, critic_params, actor_opt, critic_opt,
            buf, hdr,
        )
        log.append(
            {
                "update": update,
                "loss": m.loss,
                "kl": m.kl,
                "entropy": m.entropy,
                "sp_score": float(np.mean(buf.episode_scores))
                if buf.episode_scores
                else 0.0,
            }
        )
    if log_path is not None:
        with open(log_path, "w") as fh:
            for entry in log:
                fh.write(json.dumps(entry) + "\n")
    return params, log
