"""Evaluation protocols: self-play statistics, seat-permuted cross-play
matrices, behavioral metrics, and teacher-forced action prediction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .encoding import action_space_size, action_to_index
from .engine import PLAY, HINT_COLOR, HINT_RANK, GameConfig, GameRecord, play_game, replay


@dataclass(frozen=True)
class EvalStats:
    mean: float
    se: float
    median: float
    perfect_fraction: float
    zero_fraction: float
    num_games: int

    @staticmethod
    def from_scores(scores: Sequence[int], max_score: int) -> "EvalStats":
        if not scores:
            raise ValueError("no scores")
        arr = np.asarray(scores, dtype=np.float64)
        std = float(arr.std())
        return EvalStats(
            mean=float(arr.mean()),
            se=std / math.sqrt(len(arr)),
            median=float(np.median(arr)),
            perfect_fraction=float((arr == max_score).mean()),
            zero_fraction=float((arr == 0).mean()),
            num_games=len(arr),
        )


PolicyFactory = Callable[[int, int], object]  # (seat, game_seed) -> policy


def selfplay_eval(
    policy_factory: PolicyFactory,
    config: GameConfig,
    num_games: int,
    seed: int = 0,
    keep_records: bool = False,
) -> tuple[EvalStats, list[GameRecord]]:
    """Play num_games with fresh per-seat policies; per-game seeds logged."""
    if num_games <= 0:
        raise ValueError("num_games must be positive")
    records: list[GameRecord] = []
    scores: list[int] = []
    from dataclasses import replace

    for g in range(num_games):
        game_seed = seed * 1_000_003 + g
        cfg = replace(config, seed=game_seed)
        policies = [
            policy_factory(seat, game_seed) for seat in range(config.num_players)
        ]
        record = play_game(cfg, policies)
        scores.append(record.score)
        if keep_records:
            records.append(record)
    max_score = config.num_colors * config.max_rank
    return EvalStats.from_scores(scores, max_score), records


@dataclass(frozen=True)
class CrossPlayMatrix:
    labels: tuple[str, ...]
    means: np.ndarray  # [n_agents, n_agents]
    games_per_permutation: int

    def to_csv(self) -> str:
        lines = ["agent," + ",".join(self.labels)]
        for i, label in enumerate(self.labels):
            lines.append(
                label + "," + ",".join(f"{v:.4f}" for v in self.means[i])
            )
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        width = max(8, max(len(l) for l in self.labels) + 2)
        head = " " * width + "".join(f"{l:>{width}}" for l in self.labels)
        rows = [head]
        for i, label in enumerate(self.labels):
            rows.append(
                f"{label:>{width}}"
                + "".join(f"{v:>{width}.2f}" for v in self.means[i])
            )
        return "\n".join(rows) + "\n"


def _team_mean(
    factories: Sequence[PolicyFactory],
    config: GameConfig,
    num_games: int,
    seed: int,
) -> float:
    from dataclasses import replace

    total = 0
    for g in range(num_games):
        game_seed = seed * 1_000_003 + g
        cfg = replace(config, seed=game_seed)
        policies = [
            factories[s](s, game_seed) for s in range(config.num_players)
        ]
        total += play_game(cfg, policies).score
    return total / num_games


def crossplay_matrix(
    agents: Sequence[tuple[str, PolicyFactory]],
    config: GameConfig,
    games_per_permutation: int,
    seed: int = 0,
) -> CrossPlayMatrix:
    """Mean scores over every seat permutation of each team composition.

    Two players: entry (i, j) averages the orders (i, j) and (j, i).
    Three players: entry (i, j) is one copy of agent i plus two copies of
    agent j, averaged over the 3 seats agent i can occupy. Diagonal entries
    are plain self-play.
    """
    if not agents:
        raise ValueError("need at least one agent")
    n = len(agents)
    out = np.zeros((n, n), np.float64)
    for i, (_, fi) in enumerate(agents):
        for j, (_, fj) in enumerate(agents):
            if config.num_players == 2:
                seatings = [(fi, fj), (fj, fi)] if i != j else [(fi, fj)]
            else:
                if i == j:
                    seatings = [(fi, fi, fi)]
                else:
                    seatings = [
                        (fi, fj, fj),
                        (fj, fi, fj),
                        (fj, fj, fi),
                    ]
            means = [
                _team_mean(team, config, games_per_permutation, seed + 31 * k)
                for k, team in enumerate(seatings)
            ]
            out[i, j] = float(np.mean(means))
    return CrossPlayMatrix(
        labels=tuple(label for label, _ in agents),
        means=out,
        games_per_permutation=games_per_permutation,
    )


def ipp(records: Sequence[GameRecord]) -> Optional[float]:
    """Mean hint-known attributes per played card, divided by two.

    Counts only positively hinted knowledge (a known color and/or a known
    rank at the moment of the play), never negative-inference deductions.
    Returns None when the corpus contains no play actions.
    """
    counts: list[int] = []
    for record in records:
        _, trace = replay(record)
        for obs, action in zip(trace, record.actions):
            if action.kind != PLAY:
                continue
            k = obs.own_knowledge[action.slot]
            counts.append(
                int(k.known_color is not None) + int(k.known_rank is not None)
            )
    if not counts:
        return None
    return float(np.mean(counts)) / 2.0


def communicativeness(records: Sequence[GameRecord]) -> Optional[float]:
    """Hints given divided by turns where a hint token was available.

    Computed per seat and averaged over seats with at least one eligible
    turn; None when no seat ever had a token available.
    """
    hints: dict[int, int] = {}
    eligible: dict[int, int] = {}
    for record in records:
        _, trace = replay(record)
        for obs, action in zip(trace, record.actions):
            if obs.info_tokens <= 0:
                continue
            eligible[obs.player] = eligible.get(obs.player, 0) + 1
            if action.kind in (HINT_COLOR, HINT_RANK):
                hints[obs.player] = hints.get(obs.player, 0) + 1
    rates = [
        hints.get(seat, 0) / count for seat, count in eligible.items() if count > 0
    ]
    if not rates:
        return None
    return float(np.mean(rates))


@dataclass(frozen=True)
class PredictionReport:
    cross_entropy: float
    top1: float
    top_10pct: float
    top_20pct: float
    k_10pct: int
    k_20pct: int
    num_steps: int

    def __post_init__(self):
        assert 0.0 <= self.top1 <= 1.0
        assert self.top_10pct <= self.top_20pct <= 1.0


def prediction_ks(config: GameConfig) -> tuple[int, int]:
    """Top-k cutoffs at 10% and 20% of the action space."""
    a = action_space_size(config)
    return math.ceil(0.1 * a), math.ceil(0.2 * a)


class UniformPredictor:
    """Assigns 1/A to every action, legal or not; the scoring floor."""

    def __init__(self, config: GameConfig):
        self.config = config

    def reset(self) -> None:
        pass

    def distribution(self, obs) -> np.ndarray:
        a = action_space_size(self.config)
        return np.full(a, 1.0 / a, dtype=np.float64)


class OraclePredictor:
    """One-hot on the true next action; the scoring ceiling (test fixture)."""

    def __init__(self, config: GameConfig):
        self.config = config
        self._next = None

    def reset(self) -> None:
        self._next = None

    def prime(self, action) -> None:
        self._next = action

    def distribution(self, obs) -> np.ndarray:
        vec = np.zeros(action_space_size(self.config), np.float64)
        vec[action_to_index(self._next, self.config)] = 1.0
        return vec


def action_prediction(
    predictor_factory: Callable[[int], object],
    corpus: Sequence[GameRecord],
    seed: int = 0,
) -> PredictionReport:
    """Teacher-forced scoring of a predictor against recorded human steps.

    predictor_factory(seat) must return an object with reset() and
    distribution(observation) -> [A] probabilities; it is called once per
    (game, seat) and walked along the true trajectory prefix. Ties in the
    top-k ranking are broken by seeded random jitter so a flat distribution
    scores at chance level.
    """
    if not corpus:
        raise ValueError("empty corpus")
    config = corpus[0].game_config()
    k10, k20 = prediction_ks(config)
    a = action_space_size(config)
    rng = np.random.Generator(np.random.Philox(seed))
    ce_sum = 0.0
    hits1 = hits10 = hits20 = steps = 0
    for record in corpus:
        _, trace = replay(record)
        predictors = {
            s: predictor_factory(s) for s in range(config.num_players)
        }
        for p in predictors.values():
            p.reset()
        for obs, action in zip(trace, record.actions):
            predictor = predictors[obs.player]
            if isinstance(predictor, OraclePredictor):
                predictor.prime(action)
            probs = np.asarray(predictor.distribution(obs), np.float64)
            if abs(probs.sum() - 1.0) > 1e-6:
                raise ValueError("predictor distribution is not normalized")
            true_idx = action_to_index(action, config)
            ce_sum += -math.log(max(probs[true_idx], 1e-300))
            order = np.lexsort((rng.random(a), -probs))
            hits1 += int(order[0] == true_idx)
            hits10 += int(true_idx in order[:k10])
            hits20 += int(true_idx in order[:k20])
            steps += 1
    return PredictionReport(
        cross_entropy=ce_sum / steps,
        top1=hits1 / steps,
        top_10pct=hits10 / steps,
        top_20pct=hits20 / steps,
        k_10pct=k10,
        k_20pct=k20,
        num_steps=steps,
    )


def stats_report(stats: EvalStats) -> str:
    return (
        f"games {stats.num_games}\n"
        f"mean {stats.mean:.4f} +- {stats.se:.4f} (SE)\n"
        f"median {stats.median:.1f}\n"
        f"perfect {stats.perfect_fraction:.4f}\n"
        f"zero {stats.zero_fraction:.4f}\n"
    )


def prediction_report_text(report: PredictionReport) -> str:
    return (
        f"steps {report.num_steps}\n"
        f"cross_entropy {report.cross_entropy:.6f}\n"
        f"top1 {report.top1:.4f}\n"
        f"top{report.k_10pct} {report.top_10pct:.4f}\n"
        f"top{report.k_20pct} {report.top_20pct:.4f}\n"
    )
