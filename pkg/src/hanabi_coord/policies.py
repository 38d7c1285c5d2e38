"""Scripted seat policies.

All policies implement ``act(observation) -> Action`` and see only the
acting player's local observation. They serve as synthetic-data teachers,
evaluation baselines, and hosted opponents for the challenge service.
"""

from __future__ import annotations

import numpy as np

from .engine import (
    DISCARD,
    HINT_COLOR,
    HINT_RANK,
    PLAY,
    Action,
    Card,
    GameConfig,
    Observation,
    RANK_COUNTS,
)


class RandomPolicy:
    """Uniformly random legal action."""

    def __init__(self, seed: int = 0):
        self._rng = np.random.Generator(np.random.Philox(seed))

    def act(self, obs: Observation) -> Action:
        acts = obs.legal_actions()
        return acts[int(self._rng.integers(len(acts)))]


class FirstLegalPolicy:
    """Lowest-index legal action; fully deterministic."""

    def act(self, obs: Observation) -> Action:
        return obs.legal_actions()[0]


class NeverPlayPolicy:
    """Discards when possible, hints otherwise; never plays a card."""

    def act(self, obs: Observation) -> Action:
        for a in obs.legal_actions():
            if a.kind == DISCARD:
                return a
        for a in obs.legal_actions():
            if a.kind != PLAY:
                return a
        return obs.legal_actions()[0]


class AlwaysPlaySlot0Policy:
    """Plays the oldest card every turn (scores 25 on rank-major decks)."""

    def act(self, obs: Observation) -> Action:
        return Action(PLAY, slot=0)


class HintRankTeacher:
    """Deterministic heuristic teacher for synthetic corpora.

    Plays cards it positively knows to be playable, otherwise rank-hints a
    teammate's playable card, otherwise discards its chop (oldest unhinted
    slot). Deterministic in the observation, which makes it a clean target
    for behavioral-cloning sanity checks.
    """

    def act(self, obs: Observation) -> Action:
        cfg = obs.config
        legal = obs.legal_actions()
        legal_set = {self._key(a) for a in legal}

        # 1. play a positively known playable card
        for slot, k in enumerate(obs.own_knowledge):
            if k.known_rank is None:
                continue
            if k.known_color is not None:
                if obs.fireworks[k.known_color] == k.known_rank - 1:
                    return Action(PLAY, slot=slot)
            elif all(f == k.known_rank - 1 for f in obs.fireworks):
                # rank alone suffices when every stack needs that rank
                return Action(PLAY, slot=slot)

        # 2. hint the rank of a teammate's playable, not-yet-rank-hinted card
        if obs.info_tokens > 0:
            for off in range(1, cfg.num_players):
                seat = (obs.player + off) % cfg.num_players
                for slot, card in enumerate(obs.other_hands[seat]):
                    playable = obs.fireworks[card.color] == card.rank - 1
                    hinted = obs.card_knowledge[seat][slot].known_rank is not None
                    if playable and not hinted:
                        a = Action(HINT_RANK, target=off, rank=card.rank)
                        if self._key(a) in legal_set:
                            return a

        # 3. discard the chop: oldest slot without positive hints
        if obs.info_tokens < cfg.max_info_tokens:
            for slot, k in enumerate(obs.own_knowledge):
                if k.known_rank is None and k.known_color is None:
                    return Action(DISCARD, slot=slot)
            return Action(DISCARD, slot=0)

        # 4. tokens full: give any legal hint (lowest-index fallback)
        for a in legal:
            if a.kind in (HINT_COLOR, HINT_RANK):
                return a
        return legal[0]

    @staticmethod
    def _key(a: Action):
        return (a.kind, a.slot, a.target, a.color, a.rank)


class CueTeacher:
    """Deterministic teacher whose rules read single observation facts.

    Plays the oldest card whose color and rank are both hinted and playable;
    otherwise hints the next-seat partner the first attribute (color before
    rank, oldest slot first) that partner does not yet know; otherwise
    discards the oldest card. Every branch is a shallow function of directly
    encoded state, which makes the policy easy to clone, and all choices are
    color-equivariant, so color-relabeled copies of its games stay
    self-consistent.
    """

    def act(self, obs: Observation) -> Action:
        cfg = obs.config
        for slot, k in enumerate(obs.own_knowledge):
            if k.known_rank is None or k.known_color is None:
                continue
            if obs.fireworks[k.known_color] == k.known_rank - 1:
                return Action(PLAY, slot=slot)
        if obs.info_tokens > 0:
            seat = (obs.player + 1) % cfg.num_players
            for slot, card in enumerate(obs.other_hands[seat]):
                k = obs.card_knowledge[seat][slot]
                if k.known_color is None:
                    return Action(HINT_COLOR, target=1, color=card.color)
                if k.known_rank is None:
                    return Action(HINT_RANK, target=1, rank=card.rank)
        if obs.info_tokens < cfg.max_info_tokens:
            return Action(DISCARD, slot=0)
        seat = (obs.player + 1) % cfg.num_players
        return Action(HINT_COLOR, target=1, color=obs.other_hands[seat][0].color)


def stacked_deck(config: GameConfig) -> list[Card]:
    """Deck on which always-play-slot-0 achieves a perfect score.

    Rank-major order puts every card after all the cards it stacks on, so
    playing in deal order never misfires; the duplicate copies sit at the
    bottom and are never reached.
    """
    distinct = [
        Card(c, r)
        for r in range(1, config.max_rank + 1)
        for c in range(config.num_colors)
    ]
    dups = [
        Card(c, r)
        for c in range(config.num_colors)
        for r in range(1, config.max_rank + 1)
        for _ in range(RANK_COUNTS[r - 1] - 1)
    ]
    return distinct + dups
