"""Natural-language Hanabi agent harness.

Renders engine observations into the chat prompt format (rules text,
optional convention guide, current state with a Valid Actions menu),
parses the four-field JSON reply back into an engine action, and runs
full games through any chat-completion client.

Two rendering modes exist. ``verbatim`` reproduces the historical prompt
text exactly, including its internal mistakes (the clue/life token counts
are swapped and the header always says "three player variant").
``corrected`` fixes those slots from the live game config. Both modes are
pinned by golden files under tests/goldens/.

Prompt-side hands are indexed with slot ``hand_size-1`` leftmost (newest)
and slot 0 rightmost (oldest); drawn cards enter the leftmost slot. The
engine uses the same shift-down removal order, so the slot mapping is the
identity bijection, made explicit in PromptSlotMap.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .encoding import index_to_action, legal_action_mask
from .engine import (
    Action,
    DISCARD,
    GameConfig,
    GameRecord,
    HINT_COLOR,
    HINT_RANK,
    Observation,
    PLAY,
    ResolvedEvent,
    apply,
    build_deck,
    is_terminal,
    new_game,
    observe,
    score,
)
from .evaluation import EvalStats

COLOR_NAMES = ("Red", "Yellow", "Green", "White", "Blue")


class LlmAgentError(Exception):
    pass


class MalformedResponseError(LlmAgentError):
    """Reply is not a single JSON object with the required fields."""


class UnknownActionError(LlmAgentError):
    """best_action does not match any line of the action grammar."""


class IllegalResponseError(LlmAgentError):
    """best_action parses but is not legal in the current state."""


@dataclass(frozen=True)
class LlmResponse:
    game_state: str
    action_options: str
    best_action: str
    rationale: str


@dataclass(frozen=True)
class PromptBundle:
    rules_text: str
    conventions_text: Optional[str]
    state_text: str

    def full_text(self) -> str:
        parts = [self.rules_text]
        if self.conventions_text is not None:
            parts.append(self.conventions_text)
        parts.append(self.state_text)
        return "\n\n".join(parts)


@dataclass(frozen=True)
class PromptSlotMap:
    """Bijection between prompt hand slots and engine slot indices.

    Both sides index the oldest card as 0 and shift down on removal, so
    the map is the identity; keeping it as an object makes the convention
    explicit and testable.
    """

    hand_size: int

    def to_engine(self, prompt_slot: int) -> int:
        if not 0 <= prompt_slot < self.hand_size:
            raise UnknownActionError(f"slot {prompt_slot} out of range")
        return prompt_slot

    def to_prompt(self, engine_slot: int) -> int:
        if not 0 <= engine_slot < self.hand_size:
            raise ValueError(f"engine slot {engine_slot} out of range")
        return engine_slot


# --- teammate naming ----------------------------------------------------------

def teammate_name(viewer: int, seat: int, num_players: int) -> str:
    """Teammates are numbered in seating order after the viewer."""
    if seat == viewer:
        return "You"
    return f"Teammate {(seat - viewer) % num_players - 1}"


def action_line(action: Action, config: GameConfig) -> str:
    if action.kind == DISCARD:
        return f"Discard card in slot {action.slot} from your hand"
    if action.kind == PLAY:
        return f"Play card in slot {action.slot} from your hand"
    mate = action.target - 1
    if action.kind == HINT_COLOR:
        return f"Clue {COLOR_NAMES[action.color]} to Teammate {mate}"
    return f"Clue Rank {action.rank} to Teammate {mate}"


_LINE_PATTERNS = (
    (re.compile(r"^Discard card in slot (\d+) from your hand$"), DISCARD),
    (re.compile(r"^Play card in slot (\d+) from your hand$"), PLAY),
    (re.compile(r"^Clue (Red|Yellow|Green|White|Blue) to Teammate (\d+)$"), HINT_COLOR),
    (re.compile(r"^Clue Rank (\d+) to Teammate (\d+)$"), HINT_RANK),
)


def parse_action_line(line: str, config: GameConfig) -> Action:
    text = line.strip()
    for pattern, kind in _LINE_PATTERNS:
        m = pattern.match(text)
        if m is None:
            continue
        if kind in (DISCARD, PLAY):
            slot = PromptSlotMap(config.hand_size).to_engine(int(m.group(1)))
            return Action(kind, slot=slot)
        target = int(m.group(2)) + 1
        if not 1 <= target < config.num_players:
            raise UnknownActionError(f"no such teammate in line {line!r}")
        if kind == HINT_COLOR:
            return Action(kind, target=target, color=COLOR_NAMES.index(m.group(1)))
        rank = int(m.group(1))
        if not 1 <= rank <= config.max_rank:
            raise UnknownActionError(f"rank out of range in line {line!r}")
        return Action(kind, target=target, rank=rank)
    raise UnknownActionError(f"unrecognized action line {line!r}")


# --- rules prompt ----------------------------------------------------------------

_PLAYER_WORDS = {2: "two", 3: "three"}

_RULES_HEADER = (
    "You are playing the card game Hanabi, the {variant} player variant. Every"
    " turn I will give you the state of the game, the actions that your"
    " teammates just took, your teammates hands, and your hand. You will then"
    " need to choose an action to take based on the state of the game."
)

_RULES_BODY = """# Hanabi Game Rules

## Overview and Objective:
- Hanabi is a cooperative card game in which players take turns working together to build firework card sequences in five colors.
- Each sequence must begin with a rank 1 card and continue in increasing order up to rank 5.
- The goal is to complete as many fireworks stacks as possible; a perfect game scores 25 when every color stack is completed.

## Game Components:
- Deck: The deck consists of cards in five colors (Red, Yellow, Green, White, Blue). For each color there are three copies of rank 1, two copies of rank 2, two copies of rank 3, two copies of rank 4, and only one copy of the rank 5 card.
- Clue Tokens: There are {clue_tokens} clue tokens available. These are spent when giving clues and can be regained by discarding a card or playing a 5.
- Life Tokens: There are {life_tokens} life tokens available. Each misplayed card causes the loss of one life token; if all three are lost, the game ends immediately, and all players lose.
- Firework Stacks: There is one stack for each color. Cards are added to these stacks in ascending order.
- Discard Pile: A common area where discarded or misplayed cards are placed that all players can see.
- Player Hands: Each player’s hand is arranged so that other players can see the cards, but the owner cannot see their own cards. So you can't see the identies of your own cards, but you know the identies of your teammates cards.
- Deck Draw Pile: The remaining deck from which new cards are drawn.

## Game Turn and Actions:
- On each turn, a player must take one of the three following actions (Give a Clue, Discard a Card, or Play a Card).
{turn_order}

## Give a Clue:
- Provide information about either all cards of a specific color or all cards of a specific rank in one of your teammates hands.
- The clue will identify every card in the teammates hands that matches the given clue information (color or rank).
- This action consumes 1 clue token.

## Discard a Card:
- Choose one card from your hand to discard.
- This action will regain 1 clue token (up to a maximum of 8).
- This action will draw a new card from the deck if one is available.

## Play a Card:
- Choose one card from your hand and attempt to play it on the corresponding firework stack.
- If the card is the next rank number in sequence (or a rank 1 card for an empty stack), the play is successful and the card is added to the stack.
- If the card played is of rank 5, 1 clue token is regained for the team (if not already at the maximum).
- If the card does not match the required sequence, it is a misplay: The team loses one life token and the card is discarded.
- The game ends immediately with a score of 0 if all three life tokens are lost (bad).
- This action will draw a new card from the deck if one is available.

## Card Positions:
- Slots: Your hand comprises cards with slots 0, 1, 2, 3, 4, with slot 4 as the leftmost card and slot 0 as the rightmost. The order of all the slots are:
  - slot 4: leftmost, slot 3: second leftmost, slot 2: middle card, slot 1: second rightmost, slot 0: rightmost.
- After play/discard: When a player plays or discards a card from slot X in their hand, the card is removed from the hand, and all cards in higher-numbered slots are shifted down (to the right) one slot.
- New cards: Any drawn card enters into slot 4 (the leftmost position).

## Game End Conditions:
- When the deck is empty, each player gets one final turn, including the player that drew the last card.
- The game ends immediately if all three life tokens are lost, and the players get a score of 0 (very bad).
- After the final round (once the deck is exhausted and all players have taken their last turn), the game ends.
- A perfect game occurs if all five firework stacks are completed up to card rank 5 (score 25).

## Scoring:
- If all three life tokens are lost, the game ends with a score of 0 (very bad).
- Otherwise, the final score is the sum of the highest played rank card on each firework pile.
- The maximum possible score is 25, achieved when every fireworks stack is completed.

## Possible Actions:
When you take an action, here are all of the possible actions you may take:
{possible_actions}"""

_TURN_ORDER_3P = (
    "- The other teammates in the game are Teammate 0 and Teammate 1. After"
    " your turn, Teammate 0 will take their turn, and then Teammate 1 will take"
    " their turn after Teammate 0.\n"
    "- After Teammate 1 takes their turn, you will take your turn again, and"
    " the game continues in this way until the game ends."
)

_TURN_ORDER_2P = (
    "- The other teammate in the game is Teammate 0. After your turn,"
    " Teammate 0 will take their turn.\n"
    "- After Teammate 0 takes their turn, you will take your turn again, and"
    " the game continues in this way until the game ends."
)


def _possible_actions_block(config: GameConfig) -> str:
    lines = []
    for s in range(config.hand_size):
        lines.append(f"- Discard card in slot {s} from your hand")
    for s in range(config.hand_size):
        lines.append(f"- Play card in slot {s} from your hand")
    for mate in range(config.num_players - 1):
        for name in COLOR_NAMES[: config.num_colors]:
            lines.append(f"- Clue {name} to Teammate {mate}")
    for mate in range(config.num_players - 1):
        for r in range(1, config.max_rank + 1):
            lines.append(f"- Clue Rank {r} to Teammate {mate}")
    return "\n".join(lines)


def render_rules_prompt(config: GameConfig, mode: str = "corrected") -> str:
    if mode not in ("verbatim", "corrected"):
        raise ValueError(f"unknown render mode {mode!r}")
    if mode == "verbatim":
        # historical text: always says "three player", swaps the token counts,
        # and enumerates the 3-player action menu
        header = _RULES_HEADER.format(variant="three")
        body = _RULES_BODY.format(
            clue_tokens=3,
            life_tokens=8,
            turn_order=_TURN_ORDER_3P,
            possible_actions=_possible_actions_block(
                GameConfig(num_players=3)
            ),
        )
    else:
        header = _RULES_HEADER.format(variant=_PLAYER_WORDS[config.num_players])
        body = _RULES_BODY.format(
            clue_tokens=config.max_info_tokens,
            life_tokens=config.max_lives,
            turn_order=_TURN_ORDER_3P
            if config.num_players == 3
            else _TURN_ORDER_2P,
            possible_actions=_possible_actions_block(config),
        )
    return header + "\n\n" + body


# --- conventions prompt --------------------------------------------------------------

CONVENTIONS_HEADER = (
    "When you choose an action to take, always use the following convention"
    " rules---so you and your teammate can coordinate discards, saves, and"
    " plays unambiguously. The following rules are written with respect to"
    " you, but the same rules apply to your teammates. The rules are written"
    " in the first person, but they apply to all players."
)

CONVENTIONS_TEXT = """# Conventions Rules

## Chop:
- Definition: Your chop is the rightmost card (smallest slot value) in your hand that has not received any clues.
- Instructions: When forced to discard, always discard your chop. If a card in your hand has been clueed as useless (and you can clearly tell it won't help because it's already been played), you may discard that card instead of the chop.
- Reminder: If the rightmost slots of your hand (0, 1, etc) have received clues, then those slots are NOT your chop, your shop is the rightmost card that has not received any clues.

## Clue Interpretation:
- (Card slot position reminder): Your hand comprises cards with 5 different slots, with slot 4 as the leftmost card and slot 0 as the rightmost. The order of all the slots are:
  - slot 4: leftmost, slot 3: second leftmost, slot 2: middle card, slot 1: second rightmost, slot 0: rightmost.
- Single Card Focus: When a clue touches two or more cards, it conveys information about only one specific card—the focused card; non-focused cards receive no actionable instruction. The focus card must always be either a Save Clue or a Play Clue.
- New Cards: Cards are “new” if they had no clues on them prior to this clue.
- Instructions for determining which card is the focus when a clue touches multiple cards:
  1. One New Card: If exactly one card is newly clued (had no prior clues), that card is the focus of the clue.
  2. Multiple New Cards (chop focus): If more than one card is newly clued and the chop is included in the clue, the chop card is the focus.
  3. Multiple New Cards (not including chop): If more than one card is newly clued and the chop is not included in the clue, the leftmost new card is the focus.
  4. No New Cards: If the clue only touches cards that already had clues, the leftmost re-clued card is the focus.
- Clue Type:
  - If the chop is included in the clue, the chop card is the focus and it is either a playable card (if it’s a Play Clue) or a critical card (if it’s a Save Clue).
  - If the chop card is not touched by the clue, the focus card (leftmost newly clued card) is a Play Clue or a Delayed Play Clue.

## Play Clues:
- Play Clue (Direct):
  - Definition: A clue given to signal that the focused card is immediately playable right now (it is the next needed card on its firework stack).
  - Instructions: If the chop card is not touched by a clue, then the focus card is always the leftmost card, and it is always a Play Clue. When giving a Play Clue, ensure that the focused card will fit directly onto its firework. The Play Clue tells your teammate that their focused card is playable right now.
  - Instructions: If the chop card is touched by a clue, then the focus card can either be a Play Clue or a Save Clue, it's up to the player to figure out which type of clue it is based on what cards are critical.
  - All Play Clues are interpreted as potential Delayed Play Clues.
- Delayed Play Clue:
  - Definition: A clue given to a card that is not immediately playable because an earlier card that has received a Play Clue has not been played yet; however, once that missing card is played, the clued card will become playable.
  - Instructions: When giving a Delayed Play Clue, make sure that the missing card will be played soon by either yourself or your teammate. Interpret any such clue as a promise that, after the necessary preceding card is played, the clued card will be safe to play.

## Critical Cards:
- Definition: A Critical Card is the last copy of a card of a color and rank combination that hast not been discarded yet, where discarding this critical card makes it impossible to achieve a perfect score.
- Examples: A 5 (only one copy in each color), a unique rank 1 card (if both other copies are have been discarded), or any rank 2, 3, or 4 card whose other copy has been discarded.
- Instructions: Always treat critical cards as high priority for saving. If a critical card becomes the chop card, it must receive a Save Clue to ensure it isn't discarded.

## Save Clues:
- Definition: Clues used to protect critical cards from being discarded. Save Clues can only be given to cards on the chop.
- Instructions:
  - Save Clues can only be given to cards on the chop.
  - If a clue touches the chp card, it is either a Save Clue or a (Delayed) Play Clue. It's up to you to figure out which type of clue it is based on what cards are critical.
  - Use Save Clues to safeguard cards that are vital for a perfect score of 25.
  - Critical Save: A clue given to a critical card on the chop to save it from being discarded. You can give a Critical Save clue with eithr a color or a number clue.
  - 5 Save: When saving a 5 card on the chop, you must always give a rank 5 clue to indicate that the clue is a 5 Save, not a color clue because a color clue could be interpreted as a play clue.
  - 2 Save: All rank 2 cards on the chop should be saved with a 2 Save clue if it's the only copy of that card visible in any players hand, even if 2's are not critical. When saving a rank 2 card on the chop, always give a rank 2 clue to indicate that the card is a 2 Save, a because a color clue could be interpreted as a Play Clue.
  - If a clue touches any card that is not on the chop, interpret it as a (Delayed) Play Clue, not a Save Clue.
  - When receiving a Save Clue on your chop, do not discard that card—keep it safe until it becomes playable.
  - All Save Clues, Critical Save Clues, 5 Saves, and 2 Saves can only be given to cards on the chop.

## The Three Main Principles:
1. Good Touch Principle: Only give clues to cards that are have not been played yet; avoid clueing cards that have already been played.
2. Save Principle: Including cards that are saved with Save Clues, do not allow other players to discard playable cards. All cards that are playable need to be "protected" by giving them a Play Clue. The following cards must not be discarded: All rank 5 cards, Unique rank 2 cards with only one copy visible, Critical cards with only one copy left undiscarded, and Unique playable cards that are the only copy currently visible.
3. Minimum Clue Value Principle: Every clue must either make one or more cards safely playable or prevent the discard of a critical card. If a clue does not make a card playable or prevent the discard of a critical card, you should discard instead of wasting a clue.

## The Early Game:
- Definition: The phase before any player has ever discarded their chop card.
- Instructions:
  - During this phase, use every available Play Clues and Save Clues to protect critical cards on chop (including 5 and 2 Saves).
  - Only discard if there are no valid Play or Save Clue available.
  - Discarding for the first time ends the Early Game and begins the Mid-Game.

## General Strategy:
- Check Teammate Chops: Always review the rightmost unclued cards in every player’s hand to identify which ones need protection.
- Clue Selection: Prefer giving Play Clues when possible over Save Clue, as they not only protect critical cards by giving the player something else to do (playing the card) but also facilitate immediate or near-future plays. Use Save Clues only when a critical card on the chop is at risk of being discarded (the player has nothing else to do on their turn).
- Clue Type: Prefer to use color clues over rank clues for precise information about the card’s identity unless a rnak clue can secure additional plays or prevent a vital discard.
- Safe Discards: Discard only cards that are clearly non-critical. Protect any card that might be needed for a perfect score.
- Identify Meaning of Clues: When it's your turn, and you're trying to interpret clue, always follow the follwing algorithm: Identify which card slot in your hand is the focus of the clue, and then decide on if the clue focus card is a Play Clue or a Save Clue.
- Ever clue you give always needs to be a valid Save clue when the card you want to save is on the chop, or a Play/Delayed Play Clue following the rules above.

## Prompts:
- Definition: A Prompt is a clue on a (currently) unplayable card, but it directs a player to immediately play a clued card (which is the card that can be played before the clued card) that they would not normally play right now because they previously didn't have enough information about the cards identity.
- Instructions:
  - The player receiving the prompt to play the connecting card before the clued card can either be the player receiving the Play Clue, or any other player in the team.
  - If more than one card could be interpreted as the card that is being prompted to play, the player being prompted should play the leftmost eligible clued card.
  - When you give a Prompt, the intended action is for the recipient to play the prompted card as soon as possible.
  - Use Prompts sparingly and only when you are confident that the focused card is safe to play without further clues.

## Finesse:
- Definition: A move where a clue to one player implies that another player must blind-play the connecting lower card (one rank below) from their Finesse Position (leftmost unclued slot) even though it has no clues.
- Finesse Position: The card slot containing a player’s leftmost unclued card; this position slides right whenever leftmost cards receive clues
- Trigger: You see an unplayable card clued as a Play Clue. If the required lower-rank card is not visible anywhere with clues (the clue is a prompt), assume the player immediately before the clued card holds it in their Finesse Position and must blind-play it.
- Priority: Prompts override Finesses. If you must choose between playing a prompted card and blind playing a card in finesse position, play the prompted card first.
- Urgency: Blind-play into a Finesse immediately to resynchronise team knowledge; delaying risks desynchronised information.
- Instructions (for the finessed player that needs to blind-play their finessed card):
  1. Identify your current Finesse Position (leftmost unclued slot).
  2. Blind-play that card at once, assuming it is the connecting card 1 rank below the clued card.
- Instructions (for the clue-giver):
  - You can only give a finesse clue to Teammate 1, which would trigger Teammate 0 to blind-play their card in their Finesse Position before Teamamte 1's turn.
  - Ensure the clued higher card is unplayable and that the card 1 rank below should exist in Teammate 0's Finesse Position.
  - Give the higher card a clue (usually its color or rank) that unmistakably marks it as a Play Clue."""


def render_conventions_prompt() -> str:
    return CONVENTIONS_HEADER + "\n\n" + CONVENTIONS_TEXT


# --- state prompt --------------------------------------------------------------------


def _color_list(flags: Sequence[bool], num_colors: int) -> str:
    names = [COLOR_NAMES[i] for i in range(num_colors) if flags[i]]
    return "[" + ", ".join(names) + "]"


def _rank_list(flags: Sequence[bool]) -> str:
    ranks = [str(i + 1) for i, on in enumerate(flags) if on]
    return "[" + ", ".join(ranks) + "]"


def _knowledge_text(k) -> str:
    color = "None" if k.known_color is None else COLOR_NAMES[k.known_color]
    rank = "None" if k.known_rank is None else str(k.known_rank)
    return f"Clues(Color: {color}, Rank: {rank})"


def _card_name(card) -> str:
    return f"{COLOR_NAMES[card.color]} {card.rank}"


def _event_text(event: ResolvedEvent, viewer: int, config: GameConfig) -> str:
    action = event.action
    if action.kind in (PLAY, DISCARD):
        word = "Play" if action.kind == PLAY else "Discard"
        card = "Unknown" if event.revealed_card is None else _card_name(event.revealed_card)
        text = f"Action Type: {word}, Slot: {action.slot}, Card: {card}"
        if action.kind == PLAY:
            text += f", Successful Play: {'Yes' if event.play_successful else 'No'}"
        return text
    recipient_seat = (event.actor + action.target) % config.num_players
    recipient = teammate_name(viewer, recipient_seat, config.num_players)
    slots = "[" + ", ".join(str(s) for s in event.touched_slots) + "]"
    whose = "your" if recipient == "You" else f"{recipient.lower()}'s"
    if action.kind == HINT_COLOR:
        clue = f"Clue Color, Clue: {COLOR_NAMES[action.color]}"
    else:
        clue = f"Clue Rank, Clue: {action.rank}"
    return (
        f"Action Type: {clue}, Clue Recipient: {recipient},"
        f" Affected card slots in {whose} hand: {slots}"
    )


def render_state_prompt(
    obs: Observation,
    variant: str = "plain",
    mode: str = "corrected",
    recent_events: Sequence[ResolvedEvent] = (),
) -> PromptBundle:
    """Serialize one observation into the chat prompt.

    ``recent_events`` holds the resolved events since the viewer's last
    turn, oldest first; each teammate's most recent action is reported
    under its own heading.
    """
    if variant not in ("plain", "h-group"):
        raise ValueError(f"unknown prompt variant {variant!r}")
    if mode not in ("verbatim", "corrected"):
        raise ValueError(f"unknown render mode {mode!r}")
    cfg = obs.config
    n = cfg.num_players
    previous_word = "Prevous" if mode == "verbatim" else "Previous"

    lines = ["# Hanabi Game State", ""]
    lines += [
        "## General Info:",
        f"- Game Turn: {obs.turn_count}",
        f"- Score: {sum(obs.fireworks)}",
        f"- Life Tokens: {obs.lives}",
        f"- Clue Tokens: {obs.info_tokens}",
        f"- Deck Size: {obs.deck_size}",
        "",
        "## Fireworks:",
        "*(Last card played on each stack, 0 means no card has been played"
        " on that stack yet)*",
        "- Current Stacks: "
        + ", ".join(
            f"{COLOR_NAMES[c]}: {obs.fireworks[c]}" for c in range(cfg.num_colors)
        ),
        "",
        "## Discard Pile:",
        "- cards: "
        + (
            ", ".join(_card_name(c) for c in obs.discard_pile)
            if obs.discard_pile
            else "None"
        ),
    ]

    latest: dict[int, ResolvedEvent] = {}
    for event in recent_events:
        latest[event.actor] = event
    for offset in range(1, n):
        seat = (obs.player + offset) % n
        mate = offset - 1
        turns_ago = n - offset
        when = (
            f"On The {previous_word} Turn"
            if turns_ago == 1
            else "Two Turns Ago"
        )
        lines += ["", f"## Teammate {mate}'s Last Action {when}:"]
        event = latest.get(seat)
        if event is None:
            lines.append("- No action taken yet this game")
        else:
            lines.append("- " + _event_text(event, obs.player, cfg))

    lines += [
        "",
        "## Your Hand:",
        "*(Card identities unknown to you)*",
    ]
    for slot, k in enumerate(obs.own_knowledge):
        lines.append(
            f"- Slot {slot}: {_knowledge_text(k)},"
            f" Possible Colors: {_color_list(k.possible_colors, cfg.num_colors)},"
            f" Possible Ranks: {_rank_list(k.possible_ranks)}"
        )

    for offset in range(1, n):
        seat = (obs.player + offset) % n
        mate = offset - 1
        lines += [
            "",
            f"## Teammate {mate}'s Hand:",
            "*(Card identities known to you)*",
        ]
        hand = obs.other_hands[seat]
        knowledge = obs.card_knowledge[seat]
        for slot, card in enumerate(hand):
            k = knowledge[slot]
            lines.append(
                f"- Slot {slot}: Card: *{_card_name(card)}*,"
                f" {_knowledge_text(k)},"
                f" Possible Colors: {_color_list(k.possible_colors, cfg.num_colors)},"
                f" Possible Ranks: {_rank_list(k.possible_ranks)}"
            )

    lines += [
        "",
        "## Valid Actions:",
        "*(Choose one action exactly as written)*",
    ]
    for action in obs.legal_actions():
        lines.append("- " + action_line(action, cfg))

    lines += [
        "",
        "# Your Instruction:",
        "Please consider all of the Rules and the current Game State, and"
        ' decide on the best action to take from the "Valid Actions" list. ',
        "You cannot play or discard cards from your teammate's hand. Only"
        " play a card from your hand if you are certain it is playable based"
        " on hints or deduction based on the rules. Check fireworks status"
        " before playing. When hints are available for your cards (e.g.,"
        " 'Colour Hint: Blue' or 'Number Hint: 3'), use them. Evaluate"
        " possibilities like 'Colours: [Blue]' or 'Ranks: [3]'. When only one"
        " life remains, be extremely cautious about playing cards.",
        "",
        "# Response Format",
        "You MUST output responses strictly in JSON format. Adhere EXACTLY to"
        " the JSON schema and content requirements provided below.",
        "",
        "## JSON Schema:",
        "```json",
        "{",
        '  "game_state": "<str>",',
        '  "action_options": "<str>",',
        '  "best_action": "<str>",',
        '  "rationale": "<str>"',
        "}",
        "```",
        "",
        "## Content Requirements:",
        '- "game_state": Provide a summary of the current game state. Include'
        " teammate actions, your previous actions, and incorporate any"
        " outstanding key reminders from earlier actions, if available, and"
        " any important things to taken into account when choosing an action"
        " to take. How do you interpret the meaning of the other players"
        " previous actions?",
        '- "action_options": List the most promising action options from the'
        " Valid Actions list, along with their pros and cons, and why each of"
        " them are promising actions. Say the actions exactly as they are"
        " written in the Valid Actions list.",
        '- "best_action": Select the best action to play right now. Say the'
        " action exactly as it is written in the Valid Actions list.",
        '- "rationale": Provide an explanation for why the selected action is'
        " the best choice compared to the other options.",
        "",
        "## Instructions:",
        "1. Generate ONLY a single JSON object matching the schema.",
        "2. Do NOT include any text outside the JSON object (e.g.,"
        " explanations, markdown formatting like ```json, apologies, or"
        " status messages).",
        "3. Ensure all required fields from the schema are present in the"
        " JSON.",
    ]

    return PromptBundle(
        rules_text=render_rules_prompt(cfg, mode),
        conventions_text=render_conventions_prompt()
        if variant == "h-group"
        else None,
        state_text="\n".join(lines),
    )


# --- response parsing ------------------------------------------------------------------

_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)

REQUIRED_FIELDS = ("game_state", "action_options", "best_action", "rationale")


def parse_llm_json(raw: str) -> LlmResponse:
    text = raw.strip()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        m = _FENCE.search(text)
        if m is None:
            raise MalformedResponseError("reply is not valid JSON")
        try:
            doc = json.loads(m.group(1).strip())
        except json.JSONDecodeError:
            raise MalformedResponseError("fenced block is not valid JSON")
    if not isinstance(doc, dict):
        raise MalformedResponseError("reply is not a JSON object")
    missing = [f for f in REQUIRED_FIELDS if f not in doc]
    if missing:
        raise MalformedResponseError(f"missing fields: {', '.join(missing)}")
    return LlmResponse(
        game_state=str(doc["game_state"]),
        action_options=str(doc["action_options"]),
        best_action=str(doc["best_action"]),
        rationale=str(doc["rationale"]),
    )


def parse_response(raw: str, obs: Observation) -> Action:
    """Hostile-input path: JSON, grammar, then legality, distinct errors."""
    response = parse_llm_json(raw)
    action = parse_action_line(response.best_action, obs.config)
    legal = obs.legal_actions()
    if action not in legal:
        raise IllegalResponseError(
            f"{response.best_action!r} is not legal in this state"
        )
    return action


def fallback_action(obs: Observation) -> Action:
    """Safe default when the client never produces a usable reply.

    Discards the chop (oldest card with no positive hints) when discarding
    is legal; otherwise takes the legal action with the lowest index.
    """
    cfg = obs.config
    if obs.info_tokens < cfg.max_info_tokens:
        for slot, k in enumerate(obs.own_knowledge):
            if k.known_color is None and k.known_rank is None:
                return Action(DISCARD, slot=slot)
        return Action(DISCARD, slot=0)
    mask = legal_action_mask(obs.legal_actions(), cfg)
    return index_to_action(int(np.argmax(mask)), cfg)


# --- play harness ------------------------------------------------------------------------


class ChatClient(Protocol):
    def complete(self, prompt: str) -> str: ...


@dataclass
class HttpChatClient:
    """OpenAI-style chat-completion client over plain HTTP."""

    base_url: str
    model: str
    api_key: str = ""
    temperature: float = 0.0
    max_tokens: int = 2048
    timeout: float = 120.0
    audit_path: Optional[Path] = None

    def complete(self, prompt: str) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        resp = requests.post(
            self.base_url.rstrip("/") + "/chat/completions",
            json=body,
            headers=headers,
            timeout=self.timeout,
        )
        resp.raise_for_status()
        text = resp.json()["choices"][0]["message"]["content"]
        if self.audit_path is not None:
            with open(self.audit_path, "a") as fh:
                fh.write(
                    json.dumps(
                        {"t": time.time(), "prompt": prompt, "reply": text}
                    )
                    + "\n"
                )
        return text


@dataclass
class LlmPlayConfig:
    game_config: GameConfig = field(default_factory=GameConfig)
    variant: str = "plain"
    mode: str = "corrected"
    num_games: int = 100
    max_retries: int = 3
    llm_seat: int = 0
    seed: int = 0
    partner_factory: Callable[[int], object] = None
    log_path: Optional[Path] = None


@dataclass
class TurnLog:
    game: int
    turn: int
    prompt_chars: int
    raw_reply: str
    outcome: str  # "ok", "retry", "fallback"


def llm_play(
    config: LlmPlayConfig, client: ChatClient
) -> tuple[list[GameRecord], EvalStats, list[TurnLog]]:
    """Full games with the chat client in one seat.

    Each unusable reply is retried up to ``max_retries`` times with the
    same prompt, then the documented fallback action is taken.
    """
    if config.partner_factory is None:
        from .policies import CueTeacher

        partner_factory = lambda seat: CueTeacher()
    else:
        partner_factory = config.partner_factory

    records: list[GameRecord] = []
    scores: list[int] = []
    logs: list[TurnLog] = []
    log_fh = open(config.log_path, "a") if config.log_path else None
    try:
        for g in range(config.num_games):
            cfg = replace(config.game_config, seed=config.seed * 1_000_003 + g)
            deck = build_deck(cfg)
            state = new_game(cfg, deck_override=deck)
            partners = {
                seat: partner_factory(seat)
                for seat in range(cfg.num_players)
                if seat != config.llm_seat
            }
            actions: list[Action] = []
            recent: list[ResolvedEvent] = []
            while is_terminal(state) is None:
                seat = state.current_player
                obs = observe(state, seat)
                if seat != config.llm_seat:
                    action = partners[seat].act(obs)
                else:
                    action, log = _llm_turn(
                        obs, client, config, g, len(actions), recent
                    )
                    logs.append(log)
                    if log_fh is not None:
                        log_fh.write(json.dumps(log.__dict__) + "\n")
                state, event = apply(state, action)
                recent = (recent + [event])[-(cfg.num_players - 1) :]
                actions.append(action)
            records.append(
                GameRecord(
                    num_players=cfg.num_players,
                    deck=deck,
                    actions=actions,
                    score=score(state),
                )
            )
            scores.append(score(state))
    finally:
        if log_fh is not None:
            log_fh.close()
    cfg = config.game_config
    stats = EvalStats.from_scores(scores, cfg.num_colors * cfg.max_rank)
    return records, stats, logs


def _llm_turn(obs, client, config, game, turn, recent):
    bundle = render_state_prompt(obs, config.variant, config.mode, recent)
    prompt = bundle.full_text()
    last_raw = ""
    for _ in range(config.max_retries):
        try:
            last_raw = client.complete(prompt)
            action = parse_response(last_raw, obs)
            return action, TurnLog(game, turn, len(prompt), last_raw, "ok")
        except LlmAgentError:
            continue
    return fallback_action(obs), TurnLog(
        game, turn, len(prompt), last_raw, "fallback"
    )
