"""Game-record corpora: loading, validation, splitting, statistics, synthesis.

The canonical corpus format is JSON lines: one record document per line
(see ``engine.GameRecord``). Every loaded record is replay-validated
against the engine; invalid records are collected rather than silently
dropped.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .engine import (
    Action,
    Card,
    EngineError,
    GameConfig,
    GameRecord,
    ReplayError,
    play_game,
    replay,
)

SPLIT_PRESETS = {
    "full-2p": (858, 858),
    "full-3p": (221, 221),
}


@dataclass
class ReplayFailure:
    record_index: int
    reason: str


@dataclass
class LoadResult:
    records: list[GameRecord]
    failures: list[ReplayFailure] = field(default_factory=list)


@dataclass
class DatasetSplit:
    train: list[GameRecord]
    validation: list[GameRecord]
    test: list[GameRecord]
    split_seed: int


@dataclass
class MetricStats:
    min: float
    max: float
    mean: float
    median: float
    std: float  # population std

    @staticmethod
    def of(values: Sequence[float]) -> "MetricStats":
        arr = np.asarray(values, dtype=np.float64)
        return MetricStats(
            min=float(arr.min()),
            max=float(arr.max()),
            mean=float(arr.mean()),
            median=float(np.median(arr)),
            std=float(arr.std()),
        )


@dataclass
class CorpusStats:
    count: int
    scores: MetricStats
    lengths: MetricStats


def load_corpus(path: str | Path, validate: bool = True) -> LoadResult:
    """Load a JSONL corpus file or a directory of record files."""
    path = Path(path)
    texts: list[tuple[int, str]] = []
    if path.is_dir():
        for i, f in enumerate(sorted(path.glob("*.json*"))):
            for line in f.read_text().splitlines():
                if line.strip():
                    texts.append((len(texts), line))
    else:
        content = path.read_text()
        if not content.strip():
            warnings.warn(f"empty corpus file {path}")
            return LoadResult(records=[])
        for line in content.splitlines():
            if line.strip():
                texts.append((len(texts), line))

    records: list[GameRecord] = []
    failures: list[ReplayFailure] = []
    for idx, line in texts:
        try:
            rec = GameRecord.from_text(line)
        except (ValueError, KeyError, ReplayError) as e:
            failures.append(ReplayFailure(idx, f"parse error: {e}"))
            continue
        if validate:
            try:
                replay(rec)
            except ReplayError as e:
                failures.append(ReplayFailure(idx, str(e)))
                continue
        records.append(rec)
    return LoadResult(records=records, failures=failures)


def save_corpus(records: Sequence[GameRecord], path: str | Path) -> None:
    Path(path).write_text("\n".join(r.to_text() for r in records) + "\n")


def split(
    corpus: Sequence[GameRecord],
    val_size: int,
    test_size: int,
    seed: int = 0,
) -> DatasetSplit:
    if val_size + test_size > len(corpus):
        raise ValueError(
            f"val {val_size} + test {test_size} exceeds corpus size {len(corpus)}"
        )
    rng = np.random.Generator(np.random.Philox(seed))
    order = rng.permutation(len(corpus))
    val_idx = order[:val_size]
    test_idx = order[val_size : val_size + test_size]
    train_idx = order[val_size + test_size :]
    pick = lambda idxs: [corpus[int(i)] for i in idxs]
    return DatasetSplit(
        train=pick(train_idx),
        validation=pick(val_idx),
        test=pick(test_idx),
        split_seed=seed,
    )


def split_preset(corpus: Sequence[GameRecord], preset: str, seed: int = 0) -> DatasetSplit:
    if preset not in SPLIT_PRESETS:
        raise ValueError(f"unknown split preset {preset!r}; have {sorted(SPLIT_PRESETS)}")
    val, test = SPLIT_PRESETS[preset]
    return split(corpus, val, test, seed)


def stats(corpus: Sequence[GameRecord]) -> CorpusStats:
    if not corpus:
        raise ValueError("stats of empty corpus")
    scores = [r.score for r in corpus]
    if any(s is None for s in scores):
        raise ValueError("corpus contains records without scores")
    lengths = [len(r.actions) for r in corpus]
    return CorpusStats(
        count=len(corpus),
        scores=MetricStats.of(scores),
        lengths=MetricStats.of(lengths),
    )


def generate_synthetic(
    policy_factory,
    num_games: int,
    config: GameConfig,
    seed: int = 0,
) -> list[GameRecord]:
    """Play ``num_games`` of scripted self-play and return replay-valid records.

    ``policy_factory(seat, game_seed)`` builds one policy per seat per game
    so stochastic policies get independent streams.
    """
    records: list[GameRecord] = []
    for g in range(num_games):
        game_seed = seed * 1_000_003 + g
        cfg = replace(config, seed=game_seed)
        policies = [policy_factory(p, game_seed) for p in range(cfg.num_players)]
        try:
            rec = play_game(cfg, policies)
        except EngineError as e:
            raise EngineError(f"synthetic game {g} (seed {game_seed}) failed: {e}")
        replay(rec)  # generation-time validation
        records.append(rec)
    return records


# --- hanab.live converter (best effort) --------------------------------------

_LIVE_SUITS = {0: 0, 1: 1, 2: 2, 3: 3, 4: 4}


def convert_hanab_live(doc: dict) -> GameRecord:
    """Convert a hanab.live JSON export to the canonical format.

    Only no-variant 2/3-player games are supported; anything else is
    rejected.
    """
    options = doc.get("options", {})
    variant = options.get("variant", "No Variant")
    if variant not in ("No Variant", None):
        raise ValueError(f"unsupported variant {variant!r}")
    players = doc.get("players", [])
    n = len(players)
    if n not in (2, 3):
        raise ValueError(f"unsupported player count {n}")
    deck = [
        Card(_LIVE_SUITS[c["suitIndex"]], int(c["rank"])) for c in doc["deck"]
    ]
    actions: list[Action] = []
    # hanab.live indexes cards by deal order and targets by absolute seat;
    # we track hand composition to recover slots and relative offsets.
    hands: list[list[int]] = [[] for _ in range(n)]
    pos = 0
    for _ in range(5):
        for p in range(n):
            hands[p].append(pos)
            pos += 1
    current = 0
    for a in doc["actions"]:
        t = a["type"]
        if t in (0, 1):  # 0 = play, 1 = discard
            slot = hands[current].index(a["target"])
            actions.append(Action("play" if t == 0 else "discard", slot=slot))
            hands[current].pop(slot)
            if pos < len(deck):
                hands[current].append(pos)
                pos += 1
        elif t == 2:  # color clue
            off = (a["target"] - current) % n
            actions.append(Action("hint_color", target=off, color=int(a["value"])))
        elif t == 3:  # rank clue
            off = (a["target"] - current) % n
            actions.append(Action("hint_rank", target=off, rank=int(a["value"])))
        else:
            raise ValueError(f"unsupported action type {t}")
        current = (current + 1) % n
    rec = GameRecord(num_players=n, deck=deck, actions=actions, players=players)
    final, _ = replay(rec)
    from .engine import score as _score

    rec.score = _score(final)
    return rec
