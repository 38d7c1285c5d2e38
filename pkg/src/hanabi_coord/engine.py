"""Deterministic, seedable Hanabi engine for 2- and 3-player games.

State transitions are functional: ``apply`` returns a fresh state, so
independent games can run in parallel without shared mutable data. The
standard game uses 5 colors, ranks 1..5, 8 info tokens and 3 lives, but
reduced configurations (fewer colors / lower max rank) are supported for
cheap training experiments.

Slot convention: slot 0 is the oldest card in hand; removing a card shifts
higher slots down and a drawn card enters the newest (highest) slot. Hint
targets are stored as *seat offsets* (1 .. num_players-1) relative to the
acting player, which keeps the action space seat-independent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterator, Optional, Sequence

import numpy as np

COLOR_CHARS = "RYGWB"
COLOR_NAMES = ["Red", "Yellow", "Green", "White", "Blue"]
RANK_COUNTS = (3, 2, 2, 2, 1)  # copies of ranks 1..5 per color

RECORD_VERSION = 1


class EngineError(Exception):
    """Base class for engine contract violations."""


class IllegalActionError(EngineError):
    pass


class InvalidDeckError(EngineError):
    pass


class ReplayError(EngineError):
    def __init__(self, message: str, turn: Optional[int] = None):
        super().__init__(message)
        self.turn = turn


class TerminalReason(Enum):
    ALL_LIVES_LOST = "all_lives_lost"
    ALL_STACKS_COMPLETE = "all_stacks_complete"
    DECK_DEPLETED_FINAL_ROUND_DONE = "deck_depleted_final_round_done"


@dataclass(frozen=True)
class Card:
    color: int  # 0..num_colors-1
    rank: int  # 1..max_rank

    def __str__(self) -> str:
        return f"{COLOR_CHARS[self.color]}{self.rank}"

    @staticmethod
    def parse(text: str) -> "Card":
        if len(text) != 2 or text[0] not in COLOR_CHARS or not text[1].isdigit():
            raise ValueError(f"bad card literal {text!r}")
        return Card(COLOR_CHARS.index(text[0]), int(text[1]))


@dataclass(frozen=True)
class GameConfig:
    num_players: int = 2
    hand_size: int = 5
    max_info_tokens: int = 8
    max_lives: int = 3
    num_colors: int = 5
    max_rank: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.num_players not in (2, 3):
            raise ValueError("num_players must be 2 or 3")
        if not (1 <= self.num_colors <= 5 and 1 <= self.max_rank <= 5):
            raise ValueError("num_colors and max_rank must be in 1..5")
        if self.hand_size < 1 or self.max_info_tokens < 1 or self.max_lives < 1:
            raise ValueError("hand_size, token and life maxima must be positive")

    @property
    def deck_size(self) -> int:
        return self.num_colors * sum(RANK_COUNTS[: self.max_rank])

    @property
    def num_actions(self) -> int:
        return 2 * self.hand_size + (self.num_players - 1) * (
            self.num_colors + self.max_rank
        )

    def canonical_deck_multiset(self) -> dict[Card, int]:
        return {
            Card(c, r): RANK_COUNTS[r - 1]
            for c in range(self.num_colors)
            for r in range(1, self.max_rank + 1)
        }


# --- actions ----------------------------------------------------------------

PLAY = "play"
DISCARD = "discard"
HINT_COLOR = "hint_color"
HINT_RANK = "hint_rank"


@dataclass(frozen=True)
class Action:
    """One move. ``target`` is a seat offset from the actor for hints."""

    kind: str
    slot: Optional[int] = None  # play / discard
    target: Optional[int] = None  # hint: 1..num_players-1
    color: Optional[int] = None  # hint_color
    rank: Optional[int] = None  # hint_rank

    def __post_init__(self):
        if self.kind not in (PLAY, DISCARD, HINT_COLOR, HINT_RANK):
            raise ValueError(f"unknown action kind {self.kind!r}")

    def to_json(self) -> dict:
        if self.kind in (PLAY, DISCARD):
            return {"type": self.kind, "slot": self.slot}
        if self.kind == HINT_COLOR:
            return {"type": self.kind, "target": self.target,
                    "color": COLOR_CHARS[self.color]}
        return {"type": self.kind, "target": self.target, "rank": self.rank}

    @staticmethod
    def from_json(obj: dict) -> "Action":
        kind = obj["type"]
        if kind in (PLAY, DISCARD):
            return Action(kind, slot=int(obj["slot"]))
        if kind == HINT_COLOR:
            return Action(kind, target=int(obj["target"]),
                          color=COLOR_CHARS.index(obj["color"]))
        if kind == HINT_RANK:
            return Action(kind, target=int(obj["target"]), rank=int(obj["rank"]))
        raise ValueError(f"unknown action type {kind!r}")


@dataclass(frozen=True)
class ResolvedEvent:
    actor: int
    action: Action
    revealed_card: Optional[Card] = None  # play / discard
    play_successful: Optional[bool] = None
    touched_slots: tuple[int, ...] = ()
    drew_card: bool = False


# --- card knowledge ---------------------------------------------------------


@dataclass
class SlotKnowledge:
    """Per-slot hint record: positive hints plus candidate sets."""

    known_color: Optional[int] = None
    known_rank: Optional[int] = None
    possible_colors: list[bool] = field(default_factory=list)
    possible_ranks: list[bool] = field(default_factory=list)

    @staticmethod
    def fresh(config: GameConfig) -> "SlotKnowledge":
        return SlotKnowledge(
            possible_colors=[True] * config.num_colors,
            possible_ranks=[True] * config.max_rank,
        )

    def clone(self) -> "SlotKnowledge":
        return SlotKnowledge(
            self.known_color,
            self.known_rank,
            list(self.possible_colors),
            list(self.possible_ranks),
        )

    def apply_color_hint(self, color: int, matches: bool) -> None:
        if matches:
            self.known_color = color
            self.possible_colors = [i == color for i in range(len(self.possible_colors))]
        else:
            self.possible_colors[color] = False

    def apply_rank_hint(self, rank: int, matches: bool) -> None:
        if matches:
            self.known_rank = rank
            self.possible_ranks = [i == rank - 1 for i in range(len(self.possible_ranks))]
        else:
            self.possible_ranks[rank - 1] = False


# --- state ------------------------------------------------------------------


@dataclass
class GameState:
    config: GameConfig
    draw_pile: list[Card]  # index 0 = next draw
    hands: list[list[Card]]
    card_knowledge: list[list[SlotKnowledge]]
    fireworks: list[int]
    discard_pile: list[Card]
    info_tokens: int
    lives: int
    current_player: int
    turn_count: int = 0
    final_round_turns_remaining: Optional[int] = None
    last_action: Optional[ResolvedEvent] = None

    def clone(self) -> "GameState":
        return GameState(
            config=self.config,
            draw_pile=list(self.draw_pile),
            hands=[list(h) for h in self.hands],
            card_knowledge=[[k.clone() for k in ks] for ks in self.card_knowledge],
            fireworks=list(self.fireworks),
            discard_pile=list(self.discard_pile),
            info_tokens=self.info_tokens,
            lives=self.lives,
            current_player=self.current_player,
            turn_count=self.turn_count,
            final_round_turns_remaining=self.final_round_turns_remaining,
            last_action=self.last_action,
        )


@dataclass(frozen=True)
class Observation:
    """One player's local view: everything except own card identities."""

    config: GameConfig
    player: int
    other_hands: dict[int, tuple[Card, ...]]  # absolute seat -> cards
    own_hand_size: int
    card_knowledge: dict[int, tuple[SlotKnowledge, ...]]  # all seats' knowledge
    fireworks: tuple[int, ...]
    discard_pile: tuple[Card, ...]
    info_tokens: int
    lives: int
    deck_size: int
    last_action: Optional[ResolvedEvent]
    current_player: int
    turn_count: int

    @property
    def own_knowledge(self) -> tuple[SlotKnowledge, ...]:
        return self.card_knowledge[self.player]

    def legal_actions(self) -> list[Action]:
        """Local legal-move reconstruction; only valid on the actor's turn."""
        if self.player != self.current_player:
            raise EngineError("legal_actions requested for non-acting player")
        acts: list[Action] = []
        n = self.config.num_players
        if self.info_tokens < self.config.max_info_tokens:
            for s in range(self.own_hand_size):
                acts.append(Action(DISCARD, slot=s))
        for s in range(self.own_hand_size):
            acts.append(Action(PLAY, slot=s))
        if self.info_tokens > 0:
            for off in range(1, n):
                hand = self.other_hands[(self.player + off) % n]
                for c in range(self.config.num_colors):
                    if any(card.color == c for card in hand):
                        acts.append(Action(HINT_COLOR, target=off, color=c))
            for off in range(1, n):
                hand = self.other_hands[(self.player + off) % n]
                for r in range(1, self.config.max_rank + 1):
                    if any(card.rank == r for card in hand):
                        acts.append(Action(HINT_RANK, target=off, rank=r))
        return acts


# --- construction -----------------------------------------------------------


def build_deck(config: GameConfig, seed: Optional[int] = None) -> list[Card]:
    """Shuffled deck from a Philox stream keyed by the seed (portable)."""
    cards = [
        Card(c, r)
        for c in range(config.num_colors)
        for r in range(1, config.max_rank + 1)
        for _ in range(RANK_COUNTS[r - 1])
    ]
    rng = np.random.Generator(np.random.Philox(config.seed if seed is None else seed))
    order = rng.permutation(len(cards))
    return [cards[i] for i in order]


def _check_deck(config: GameConfig, deck: Sequence[Card]) -> None:
    want = config.canonical_deck_multiset()
    got: dict[Card, int] = {}
    for card in deck:
        got[card] = got.get(card, 0) + 1
    for card in sorted(set(want) | set(got), key=lambda c: (c.color, c.rank)):
        if got.get(card, 0) != want.get(card, 0):
            raise InvalidDeckError(
                f"deck has {got.get(card, 0)} copies of {card}, expected {want.get(card, 0)}"
            )


def new_game(config: GameConfig, deck_override: Optional[Sequence[Card]] = None) -> GameState:
    deck = list(deck_override) if deck_override is not None else build_deck(config)
    _check_deck(config, deck)
    n, h = config.num_players, config.hand_size
    hands: list[list[Card]] = [[] for _ in range(n)]
    pos = 0
    # round-robin deal, player 0 first
    for _ in range(h):
        for p in range(n):
            hands[p].append(deck[pos])
            pos += 1
    return GameState(
        config=config,
        draw_pile=deck[pos:],
        hands=hands,
        card_knowledge=[[SlotKnowledge.fresh(config) for _ in range(h)] for _ in range(n)],
        fireworks=[0] * config.num_colors,
        discard_pile=[],
        info_tokens=config.max_info_tokens,
        lives=config.max_lives,
        current_player=0,
    )


# --- queries ----------------------------------------------------------------


def is_terminal(state: GameState) -> Optional[TerminalReason]:
    if state.lives == 0:
        return TerminalReason.ALL_LIVES_LOST
    if all(f == state.config.max_rank for f in state.fireworks):
        return TerminalReason.ALL_STACKS_COMPLETE
    if state.final_round_turns_remaining == 0:
        return TerminalReason.DECK_DEPLETED_FINAL_ROUND_DONE
    return None


def score(state: GameState) -> int:
    if state.lives == 0:
        return 0
    return sum(state.fireworks)


def legal_actions(state: GameState, player: int) -> list[Action]:
    """Canonical ordering: discards, plays, color hints, rank hints."""
    if player != state.current_player:
        raise EngineError(f"player {player} asked for moves on player "
                          f"{state.current_player}'s turn")
    if is_terminal(state) is not None:
        raise EngineError("legal_actions on terminal state")
    cfg = state.config
    acts: list[Action] = []
    hand_len = len(state.hands[player])
    if state.info_tokens < cfg.max_info_tokens:
        for s in range(hand_len):
            acts.append(Action(DISCARD, slot=s))
    for s in range(hand_len):
        acts.append(Action(PLAY, slot=s))
    if state.info_tokens > 0:
        for off in range(1, cfg.num_players):
            hand = state.hands[(player + off) % cfg.num_players]
            for c in range(cfg.num_colors):
                if any(card.color == c for card in hand):
                    acts.append(Action(HINT_COLOR, target=off, color=c))
        for off in range(1, cfg.num_players):
            hand = state.hands[(player + off) % cfg.num_players]
            for r in range(1, cfg.max_rank + 1):
                if any(card.rank == r for card in hand):
                    acts.append(Action(HINT_RANK, target=off, rank=r))
    return acts


def observe(state: GameState, player: int) -> Observation:
    cfg = state.config
    if not (0 <= player < cfg.num_players):
        raise EngineError(f"invalid player {player}")
    other_hands = {
        p: tuple(state.hands[p])
        for p in range(cfg.num_players)
        if p != player
    }
    knowledge = {
        p: tuple(k.clone() for k in state.card_knowledge[p])
        for p in range(cfg.num_players)
    }
    return Observation(
        config=cfg,
        player=player,
        other_hands=other_hands,
        own_hand_size=len(state.hands[player]),
        card_knowledge=knowledge,
        fireworks=tuple(state.fireworks),
        discard_pile=tuple(state.discard_pile),
        info_tokens=state.info_tokens,
        lives=state.lives,
        deck_size=len(state.draw_pile),
        last_action=state.last_action,
        current_player=state.current_player,
        turn_count=state.turn_count,
    )


# --- transition -------------------------------------------------------------


def _validate(state: GameState, action: Action) -> None:
    cfg = state.config
    if is_terminal(state) is not None:
        raise IllegalActionError("game is over")
    player = state.current_player
    hand_len = len(state.hands[player])
    if action.kind in (PLAY, DISCARD):
        if action.slot is None or not (0 <= action.slot < hand_len):
            raise IllegalActionError(f"slot {action.slot} not occupied")
        if action.kind == DISCARD and state.info_tokens >= cfg.max_info_tokens:
            raise IllegalActionError("discard unavailable at full info tokens")
        return
    # hints
    if state.info_tokens <= 0:
        raise IllegalActionError("no info tokens remain")
    if action.target is None or not (1 <= action.target < cfg.num_players):
        raise IllegalActionError(f"invalid hint target offset {action.target}")
    target_hand = state.hands[(player + action.target) % cfg.num_players]
    if action.kind == HINT_COLOR:
        if action.color is None or not (0 <= action.color < cfg.num_colors):
            raise IllegalActionError(f"invalid color {action.color}")
        if not any(c.color == action.color for c in target_hand):
            raise IllegalActionError("hint touches no card")
    else:
        if action.rank is None or not (1 <= action.rank <= cfg.max_rank):
            raise IllegalActionError(f"invalid rank {action.rank}")
        if not any(c.rank == action.rank for c in target_hand):
            raise IllegalActionError("hint touches no card")


def apply(state: GameState, action: Action) -> tuple[GameState, ResolvedEvent]:
    _validate(state, action)
    cfg = state.config
    s = state.clone()
    player = s.current_player
    deck_was_live = len(s.draw_pile) > 0 and s.final_round_turns_remaining is None

    revealed: Optional[Card] = None
    play_ok: Optional[bool] = None
    touched: tuple[int, ...] = ()
    drew = False

    if action.kind in (PLAY, DISCARD):
        revealed = s.hands[player].pop(action.slot)
        s.card_knowledge[player].pop(action.slot)
        if action.kind == PLAY:
            if s.fireworks[revealed.color] == revealed.rank - 1:
                play_ok = True
                s.fireworks[revealed.color] = revealed.rank
                if revealed.rank == cfg.max_rank:
                    s.info_tokens = min(cfg.max_info_tokens, s.info_tokens + 1)
            else:
                play_ok = False
                s.lives -= 1
                s.discard_pile.append(revealed)
        else:
            s.discard_pile.append(revealed)
            s.info_tokens = min(cfg.max_info_tokens, s.info_tokens + 1)
        if s.draw_pile:
            s.hands[player].append(s.draw_pile.pop(0))
            s.card_knowledge[player].append(SlotKnowledge.fresh(cfg))
            drew = True
    else:
        s.info_tokens -= 1
        target = (player + action.target) % cfg.num_players
        slots = []
        for i, card in enumerate(s.hands[target]):
            if action.kind == HINT_COLOR:
                match = card.color == action.color
                s.card_knowledge[target][i].apply_color_hint(action.color, match)
            else:
                match = card.rank == action.rank
                s.card_knowledge[target][i].apply_rank_hint(action.rank, match)
            if match:
                slots.append(i)
        touched = tuple(slots)

    event = ResolvedEvent(
        actor=player,
        action=action,
        revealed_card=revealed,
        play_successful=play_ok,
        touched_slots=touched,
        drew_card=drew,
    )
    s.last_action = event
    s.turn_count += 1
    if deck_was_live and not s.draw_pile:
        # the player that drew the last card still gets one more turn
        s.final_round_turns_remaining = cfg.num_players
    elif s.final_round_turns_remaining is not None:
        s.final_round_turns_remaining -= 1
    s.current_player = (player + 1) % cfg.num_players
    return s, event


# --- records ----------------------------------------------------------------


@dataclass
class GameRecord:
    """A complete logged game in the canonical text format."""

    num_players: int
    deck: list[Card]  # draw order: deck[0] dealt/drawn first
    actions: list[Action]
    score: Optional[int] = None
    players: Optional[list[str]] = None
    config: Optional[GameConfig] = None  # only for non-standard games

    def game_config(self, seed: int = 0) -> GameConfig:
        if self.config is not None:
            return self.config
        return GameConfig(num_players=self.num_players, seed=seed)

    def to_json(self) -> dict:
        doc = {
            "version": RECORD_VERSION,
            "num_players": self.num_players,
            "deck": "".join(str(c) for c in self.deck),
            "actions": [a.to_json() for a in self.actions],
            "score": self.score,
        }
        if self.players is not None:
            doc["players"] = self.players
        if self.config is not None:
            doc["config"] = {
                "num_players": self.config.num_players,
                "hand_size": self.config.hand_size,
                "max_info_tokens": self.config.max_info_tokens,
                "max_lives": self.config.max_lives,
                "num_colors": self.config.num_colors,
                "max_rank": self.config.max_rank,
            }
        return doc

    def to_text(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"))

    @staticmethod
    def from_json(doc: dict) -> "GameRecord":
        if doc.get("version") != RECORD_VERSION:
            raise ReplayError(f"unsupported record version {doc.get('version')!r}")
        deck_str = doc["deck"]
        deck = [Card.parse(deck_str[i : i + 2]) for i in range(0, len(deck_str), 2)]
        config = None
        if "config" in doc:
            config = GameConfig(**doc["config"])
        return GameRecord(
            num_players=int(doc["num_players"]),
            deck=deck,
            actions=[Action.from_json(a) for a in doc["actions"]],
            score=doc.get("score"),
            players=doc.get("players"),
            config=config,
        )

    @staticmethod
    def from_text(text: str) -> "GameRecord":
        return GameRecord.from_json(json.loads(text))


def replay(record: GameRecord) -> tuple[GameState, list[Observation]]:
    """Re-run a record through the engine; raises on the first illegal step."""
    if not record.actions:
        raise ReplayError("record has no actions")
    state = new_game(record.game_config(), deck_override=record.deck)
    trace: list[Observation] = []
    for turn, action in enumerate(record.actions):
        trace.append(observe(state, state.current_player))
        try:
            state, _ = apply(state, action)
        except EngineError as e:
            raise ReplayError(f"illegal recorded action at turn {turn}: {e}", turn=turn)
    if record.score is not None and score(state) != record.score:
        raise ReplayError(
            f"score mismatch: recorded {record.score}, replayed {score(state)}"
        )
    return state, trace


def play_game(
    config: GameConfig,
    policies: Sequence,
    deck: Optional[Sequence[Card]] = None,
    max_turns: int = 200,
) -> GameRecord:
    """Run a full game with one policy object per seat.

    Policies implement ``act(observation) -> Action``. Returns a
    replay-valid record with the achieved score.
    """
    full_deck = list(deck) if deck is not None else build_deck(config)
    state = new_game(config, deck_override=full_deck)
    actions: list[Action] = []
    while is_terminal(state) is None:
        if len(actions) >= max_turns:
            raise EngineError(f"game exceeded {max_turns} turns")
        obs = observe(state, state.current_player)
        action = policies[state.current_player].act(obs)
        state, _ = apply(state, action)
        actions.append(action)
    cfg = None if config == GameConfig(num_players=config.num_players, seed=config.seed) else config
    return GameRecord(
        num_players=config.num_players,
        deck=full_deck,
        actions=actions,
        score=score(state),
        config=cfg,
    )


def render_record(record: GameRecord) -> str:
    """Human-readable turn-by-turn transcript of a game."""
    state = new_game(record.game_config(), deck_override=record.deck)
    lines = []
    for turn, action in enumerate(record.actions):
        actor = state.current_player
        state, event = apply(state, action)
        if action.kind == PLAY:
            outcome = "ok" if event.play_successful else "MISPLAY"
            desc = f"Play slot {action.slot} ({event.revealed_card}, {outcome})"
        elif action.kind == DISCARD:
            desc = f"Discard slot {action.slot} ({event.revealed_card})"
        elif action.kind == HINT_COLOR:
            desc = (f"Hint {COLOR_NAMES[action.color]} to +{action.target} "
                    f"(slots {list(event.touched_slots)})")
        else:
            desc = (f"Hint rank {action.rank} to +{action.target} "
                    f"(slots {list(event.touched_slots)})")
        lines.append(
            f"Turn {turn}: Player {actor}: {desc} | score {score(state)} "
            f"tokens {state.info_tokens} lives {state.lives}"
        )
    reason = is_terminal(state)
    lines.append(f"Final score: {score(state)} ({reason.value if reason else 'in progress'})")
    return "\n".join(lines)


def random_playout(config: GameConfig, seed: int, max_turns: int = 200) -> Iterator[tuple[GameState, Action]]:
    """Yield (state, chosen action) pairs from a uniformly random legal playout."""
    rng = np.random.Generator(np.random.Philox(seed))
    state = new_game(replace(config, seed=seed))
    turns = 0
    while is_terminal(state) is None:
        if turns >= max_turns:
            raise EngineError(f"playout exceeded {max_turns} turns")
        acts = legal_actions(state, state.current_player)
        action = acts[int(rng.integers(len(acts)))]
        yield state, action
        state, _ = apply(state, action)
        turns += 1
    yield state, None
