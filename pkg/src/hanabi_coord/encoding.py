"""Observation feature vectors, canonical action indices, color permutation.

The feature layout is our own (documented in docs/encoding.md and enforced
by tests): a flat float32 vector of one-hot sections plus a few normalized
scalar counters. Own-hand identities have no section, so they cannot leak
into the encoding by construction.

Canonical action order: discards < plays < color hints < rank hints, hint
targets in seating order (offset 1 first). This fixes A = 20 for two-player
and A = 30 for three-player standard games.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence, Union

import numpy as np

from .engine import (
    DISCARD,
    HINT_COLOR,
    HINT_RANK,
    PLAY,
    RANK_COUNTS,
    Action,
    Card,
    GameConfig,
    GameRecord,
    Observation,
    ResolvedEvent,
    SlotKnowledge,
)

ENCODING_VERSION = 1


# --- action indexing ---------------------------------------------------------


def action_space_size(config: GameConfig) -> int:
    return config.num_actions


def action_to_index(action: Action, config: GameConfig) -> int:
    H, C, R = config.hand_size, config.num_colors, config.max_rank
    if action.kind == DISCARD:
        return action.slot
    if action.kind == PLAY:
        return H + action.slot
    hints_base = 2 * H
    if action.kind == HINT_COLOR:
        return hints_base + (action.target - 1) * C + action.color
    color_block = (config.num_players - 1) * C
    return hints_base + color_block + (action.target - 1) * R + (action.rank - 1)


def index_to_action(index: int, config: GameConfig) -> Action:
    H, C, R = config.hand_size, config.num_colors, config.max_rank
    if not (0 <= index < config.num_actions):
        raise ValueError(f"action index {index} out of range 0..{config.num_actions - 1}")
    if index < H:
        return Action(DISCARD, slot=index)
    index -= H
    if index < H:
        return Action(PLAY, slot=index)
    index -= H
    color_block = (config.num_players - 1) * C
    if index < color_block:
        return Action(HINT_COLOR, target=index // C + 1, color=index % C)
    index -= color_block
    return Action(HINT_RANK, target=index // R + 1, rank=index % R + 1)


def legal_action_mask(actions: Sequence[Action], config: GameConfig) -> np.ndarray:
    mask = np.zeros(config.num_actions, dtype=bool)
    for a in actions:
        mask[action_to_index(a, config)] = True
    return mask


# --- feature layout ---------------------------------------------------------


def feature_layout(config: GameConfig) -> list[tuple[str, int]]:
    """Named sections and lengths, in vector order."""
    n, H, C, R = config.num_players, config.hand_size, config.num_colors, config.max_rank
    card = C * R
    know = C + R + 2
    return [
        ("other_hands", (n - 1) * H * card),
        ("fireworks", C * R),
        ("info_tokens", 1),
        ("lives", 1),
        ("deck_size", 1),
        ("discards", card),
        ("last_action_actor", n),
        ("last_action_index", config.num_actions),
        ("last_action_success", 1),
        ("last_action_touched", H),
        ("last_action_revealed", card),
        ("own_knowledge", H * know),
        ("own_known_playable", H),
        ("other_knowledge", (n - 1) * H * know),
    ]


def feature_length(config: GameConfig) -> int:
    return sum(size for _, size in feature_layout(config))


def _card_onehot(card: Card, config: GameConfig, out: np.ndarray, base: int) -> None:
    out[base + card.color * config.max_rank + (card.rank - 1)] = 1.0


def _knowledge_block(k: SlotKnowledge, config: GameConfig, out: np.ndarray, base: int) -> None:
    C, R = config.num_colors, config.max_rank
    for c in range(C):
        if k.possible_colors[c]:
            out[base + c] = 1.0
    for r in range(R):
        if k.possible_ranks[r]:
            out[base + C + r] = 1.0
    if k.known_color is not None:
        out[base + C + R] = 1.0
    if k.known_rank is not None:
        out[base + C + R + 1] = 1.0


def encode(obs: Observation) -> np.ndarray:
    cfg = obs.config
    n, H, C, R = cfg.num_players, cfg.hand_size, cfg.num_colors, cfg.max_rank
    card = C * R
    know = C + R + 2
    vec = np.zeros(feature_length(cfg), dtype=np.float32)
    pos = 0

    # other players' hands, in seating order relative to the observer
    for off in range(1, n):
        seat = (obs.player + off) % n
        for slot, c in enumerate(obs.other_hands[seat]):
            _card_onehot(c, cfg, vec, pos + slot * card)
        pos += H * card

    for c in range(C):
        for r in range(R):
            if obs.fireworks[c] >= r + 1:
                vec[pos + c * R + r] = 1.0
    pos += C * R

    vec[pos] = obs.info_tokens / cfg.max_info_tokens
    vec[pos + 1] = obs.lives / cfg.max_lives
    initial_pile = cfg.deck_size - n * H
    vec[pos + 2] = obs.deck_size / initial_pile if initial_pile > 0 else 0.0
    pos += 3

    for c in obs.discard_pile:
        idx = pos + c.color * R + (c.rank - 1)
        vec[idx] += 1.0 / RANK_COUNTS[c.rank - 1]
    pos += card

    ev = obs.last_action
    if ev is not None:
        vec[pos + (ev.actor - obs.player) % n] = 1.0
    pos += n
    if ev is not None:
        vec[pos + action_to_index(ev.action, cfg)] = 1.0
    pos += cfg.num_actions
    if ev is not None and ev.play_successful:
        vec[pos] = 1.0
    pos += 1
    if ev is not None:
        for s in ev.touched_slots:
            vec[pos + s] = 1.0
    pos += H
    if ev is not None and ev.revealed_card is not None:
        _card_onehot(ev.revealed_card, cfg, vec, pos)
    pos += card

    for slot, k in enumerate(obs.own_knowledge):
        _knowledge_block(k, cfg, vec, pos + slot * know)
    pos += H * know
    # hint-derived playability: both attributes known and the stack is ready
    for slot, k in enumerate(obs.own_knowledge):
        if (
            k.known_color is not None
            and k.known_rank is not None
            and obs.fireworks[k.known_color] == k.known_rank - 1
        ):
            vec[pos + slot] = 1.0
    pos += H
    for off in range(1, n):
        seat = (obs.player + off) % n
        for slot, k in enumerate(obs.card_knowledge[seat]):
            _knowledge_block(k, cfg, vec, pos + slot * know)
        pos += H * know

    assert pos == len(vec)
    return vec


# --- AOH buffer ---------------------------------------------------------------


@dataclass
class AOHBuffer:
    """Append-only action-observation history for one player."""

    config: GameConfig
    features: list[np.ndarray]
    prev_actions: list[int]  # own previous ActionIndex, -1 for the first step

    @staticmethod
    def empty(config: GameConfig) -> "AOHBuffer":
        return AOHBuffer(config, [], [])

    def append(self, obs_features: np.ndarray, prev_own_action: int = -1) -> None:
        self.features.append(obs_features)
        self.prev_actions.append(prev_own_action)

    def __len__(self) -> int:
        return len(self.features)


# --- color permutation --------------------------------------------------------


@dataclass(frozen=True)
class ColorPermutation:
    perm: tuple[int, ...]  # perm[old_color] = new_color

    def __post_init__(self):
        if sorted(self.perm) != list(range(len(self.perm))):
            raise ValueError(f"not a permutation: {self.perm}")

    @staticmethod
    def identity(num_colors: int = 5) -> "ColorPermutation":
        return ColorPermutation(tuple(range(num_colors)))

    @staticmethod
    def random(rng: np.random.Generator, num_colors: int = 5) -> "ColorPermutation":
        return ColorPermutation(tuple(int(i) for i in rng.permutation(num_colors)))

    def inverse(self) -> "ColorPermutation":
        inv = [0] * len(self.perm)
        for old, new in enumerate(self.perm):
            inv[new] = old
        return ColorPermutation(tuple(inv))

    def card(self, c: Card) -> Card:
        return Card(self.perm[c.color], c.rank)

    def action(self, a: Action) -> Action:
        if a.kind == HINT_COLOR:
            return replace(a, color=self.perm[a.color])
        return a

    def event(self, ev: ResolvedEvent) -> ResolvedEvent:
        return ResolvedEvent(
            actor=ev.actor,
            action=self.action(ev.action),
            revealed_card=self.card(ev.revealed_card) if ev.revealed_card else None,
            play_successful=ev.play_successful,
            touched_slots=ev.touched_slots,
            drew_card=ev.drew_card,
        )

    def knowledge(self, k: SlotKnowledge) -> SlotKnowledge:
        C = len(k.possible_colors)
        possible = [False] * C
        for old in range(C):
            possible[self.perm[old]] = k.possible_colors[old]
        return SlotKnowledge(
            known_color=self.perm[k.known_color] if k.known_color is not None else None,
            known_rank=k.known_rank,
            possible_colors=possible,
            possible_ranks=list(k.possible_ranks),
        )


def permute_colors(
    value: Union[GameRecord, Observation], perm: ColorPermutation
) -> Union[GameRecord, Observation]:
    """Relabel colors consistently; ranks untouched."""
    if isinstance(value, GameRecord):
        return GameRecord(
            num_players=value.num_players,
            deck=[perm.card(c) for c in value.deck],
            actions=[perm.action(a) for a in value.actions],
            score=value.score,
            players=value.players,
            config=value.config,
        )
    obs = value
    C = obs.config.num_colors
    fireworks = [0] * C
    for old in range(C):
        fireworks[perm.perm[old]] = obs.fireworks[old]
    return Observation(
        config=obs.config,
        player=obs.player,
        other_hands={
            p: tuple(perm.card(c) for c in hand) for p, hand in obs.other_hands.items()
        },
        own_hand_size=obs.own_hand_size,
        card_knowledge={
            p: tuple(perm.knowledge(k) for k in ks)
            for p, ks in obs.card_knowledge.items()
        },
        fireworks=tuple(fireworks),
        discard_pile=tuple(perm.card(c) for c in obs.discard_pile),
        info_tokens=obs.info_tokens,
        lives=obs.lives,
        deck_size=obs.deck_size,
        last_action=perm.event(obs.last_action) if obs.last_action else None,
        current_player=obs.current_player,
        turn_count=obs.turn_count,
    )
