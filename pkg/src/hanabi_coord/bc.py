"""Behavioral cloning: fit a recurrent policy to recorded games.

Each game decomposes into one trajectory per seat (that seat's own-turn
observations and chosen actions). Batches group whole games so the per-game
trajectory sets stay together, with an optional fresh color relabeling per
batch as augmentation. Checkpoint selection runs greedy self-play after
every epoch and keeps the parameters with the best mean score.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import neural
from .encoding import (
    ColorPermutation,
    action_to_index,
    encode,
    index_to_action,
    legal_action_mask,
    permute_colors,
)
from .engine import GameConfig, GameRecord, Observation, play_game, replay
from .neural import (
    BC_REFERENCE_SCHEDULE,
    OptimizerState,
    ParameterSet,
    PolicySpec,
    RecurrentState,
    ScheduleConfig,
    forward,
)


class BCError(Exception):
    pass


@dataclass(frozen=True)
class BCConfig:
    batch_size_games: int = 16
    epochs: int = 10
    permute_colors: bool = True
    sp_eval_games: int = 100
    schedule: ScheduleConfig = field(default_factory=lambda: BC_REFERENCE_SCHEDULE)
    max_grad_norm: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.batch_size_games <= 0 or self.epochs <= 0:
            raise ValueError("batch size and epoch count must be positive")
        if self.sp_eval_games <= 0:
            raise ValueError("sp_eval_games must be positive")


# full-scale evaluation preset: 5000 self-play games per epoch
FULL_SP_EVAL_GAMES = 5000


@dataclass
class Trajectory:
    """One seat's view of one game, encoded for the network."""

    features: np.ndarray  # [T, F] float32
    masks: np.ndarray  # [T, A] bool
    labels: np.ndarray  # [T] int64
    game_index: int
    seat: int


def encode_trajectories(
    record: GameRecord,
    game_index: int = 0,
    perm: Optional[ColorPermutation] = None,
) -> list[Trajectory]:
    """Decompose a game into per-seat (observation, action) sequences."""
    if perm is not None:
        record = permute_colors(record, perm)
    config = record.game_config()
    _, trace = replay(record)
    per_seat: dict[int, list[tuple[np.ndarray, np.ndarray, int]]] = {
        s: [] for s in range(config.num_players)
    }
    for obs, action in zip(trace, record.actions):
        mask = legal_action_mask(obs.legal_actions(), config)
        label = action_to_index(action, config)
        if not mask[label]:
            raise BCError(
                f"game {game_index} turn {obs.turn_count}: "
                "recorded action is illegal in the replayed state"
            )
        per_seat[obs.player].append((encode(obs), mask, label))
    out = []
    for seat in range(config.num_players):
        steps = per_seat[seat]
        if not steps:
            continue
        out.append(
            Trajectory(
                features=np.stack([s[0] for s in steps]),
                masks=np.stack([s[1] for s in steps]),
                labels=np.array([s[2] for s in steps], dtype=np.int64),
                game_index=game_index,
                seat=seat,
            )
        )
    return out


def build_batches(
    corpus: Sequence[GameRecord], batch_size_games: int, seed: int
) -> list[list[int]]:
    """Shuffled game-index groups; every game lands in exactly one batch."""
    if batch_size_games <= 0:
        raise ValueError("batch_size_games must be positive")
    rng = np.random.Generator(np.random.Philox(seed))
    order = rng.permutation(len(corpus))
    return [
        [int(g) for g in order[i : i + batch_size_games]]
        for i in range(0, len(order), batch_size_games)
    ]


def bc_loss(
    spec: PolicySpec,
    params: ParameterSet,
    corpus: Sequence[GameRecord],
    game_indices: Sequence[int],
    permutation_seed: int = 0,
    permute: bool = True,
    dropout_seed: int = 0,
) -> tuple[float, ParameterSet]:
    """Masked cross-entropy (mean over all steps) and its gradient.

    One color permutation is drawn per call and applied to every game in
    the batch before encoding.
    """
    perm = None
    if permute:
        rng = np.random.Generator(np.random.Philox(permutation_seed))
        num_colors = corpus[game_indices[0]].game_config().num_colors
        perm = ColorPermutation.random(rng, num_colors)
    batch = []
    for g in game_indices:
        for traj in encode_trajectories(corpus[g], game_index=g, perm=perm):
            batch.append((traj.features, traj.masks, traj.labels))
    return neural.backward(
        spec, params, batch, neural.LossSpec(reduction="mean"),
        mode="train", dropout_seed=dropout_seed,
    )


class NeuralPolicy:
    """Stateful per-game wrapper exposing the engine's act() interface.

    Greedy mode takes the argmax with ties broken toward the lowest action
    index (np.argmax already picks the first maximal entry).
    """

    def __init__(
        self,
        spec: PolicySpec,
        params: ParameterSet,
        greedy: bool = True,
        rng: Optional[np.random.Generator] = None,
    ):
        self.spec = spec
        self.params = params
        self.greedy = greedy
        self.rng = rng
        self.state: Optional[RecurrentState] = None

    def reset(self) -> None:
        self.state = None

    def distribution(self, obs: Observation) -> np.ndarray:
        """One-step distribution; advances the recurrent state."""
        mask = legal_action_mask(obs.legal_actions(), obs.config)
        probs, self.state = forward(
            self.spec,
            self.params,
            encode(obs)[None, :],
            mask[None, :],
            initial_state=self.state,
        )
        return probs[0]

    def act(self, obs: Observation):
        probs = self.distribution(obs)
        if self.greedy or self.rng is None:
            idx = int(np.argmax(probs))
        else:
            idx = int(self.rng.choice(len(probs), p=probs / probs.sum()))
        return index_to_action(idx, obs.config)


def greedy_selfplay_eval(
    spec: PolicySpec,
    params: ParameterSet,
    config: GameConfig,
    num_games: int,
    seed: int,
) -> float:
    """Mean score with every seat played by the same greedy policy."""
    if num_games <= 0:
        raise ValueError("num_games must be positive")
    total = 0
    for g in range(num_games):
        game_cfg = GameConfig(
            num_players=config.num_players,
            hand_size=config.hand_size,
            max_info_tokens=config.max_info_tokens,
            max_lives=config.max_lives,
            num_colors=config.num_colors,
            max_rank=config.max_rank,
            seed=seed * 1_000_003 + g,
        )
        policies = [
            NeuralPolicy(spec, params) for _ in range(config.num_players)
        ]
        record = play_game(game_cfg, policies)
        total += record.score
    return total / num_games


def train_bc(
    spec: PolicySpec,
    config: BCConfig,
    corpus: Sequence[GameRecord],
    log_path: Optional[str | Path] = None,
) -> tuple[ParameterSet, list[dict]]:
    """Full BC run; returns the best-by-self-play checkpoint and the log."""
    if not corpus:
        raise BCError("empty corpus")
    game_config = corpus[0].game_config()
    num_updates = config.epochs * max(
        1, (len(corpus) + config.batch_size_games - 1) // config.batch_size_games
    )
    schedule = ScheduleConfig(
        initial_lr=config.schedule.initial_lr,
        final_lr=config.schedule.final_lr,
        total_steps=config.schedule.total_steps or num_updates,
        decay_until=config.schedule.decay_until,
    )
    params = neural.init_params(spec, seed=config.seed)
    opt = OptimizerState(schedule)
    log: list[dict] = []
    best: tuple[float, ParameterSet] | None = None
    step = 0
    for epoch in range(config.epochs):
        batches = build_batches(corpus, config.batch_size_games, config.seed + epoch)
        epoch_loss = 0.0
        for indices in batches:
            loss, grads = bc_loss(
                spec, params, corpus, indices,
                permutation_seed=config.seed * 7919 + step,
                permute=config.permute_colors,
                dropout_seed=config.seed * 104729 + step,
            )
            grads, _ = neural.clip_grad_norm(grads, config.max_grad_norm)
            params, opt = neural.adam_step(opt, params, grads)
            epoch_loss += loss
            step += 1
        sp_mean = greedy_selfplay_eval(
            spec, params, game_config, config.sp_eval_games,
            seed=config.seed + 1_000 * (epoch + 1),
        )
        entry = {
            "epoch": epoch,
            "loss": epoch_loss / max(1, len(batches)),
            "sp_mean": sp_mean,
        }
        log.append(entry)
        if best is None or sp_mean > best[0]:
            best = (sp_mean, params.copy())
    if log_path is not None:
        with open(log_path, "w") as fh:
            for entry in log:
                fh.write(json.dumps(entry) + "\n")
    assert best is not None
    return best[1], log
