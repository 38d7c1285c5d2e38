"""Regenerate the checked-in prompt golden files.

Run from the repository root:

    python3 scripts/make_prompt_goldens.py

The fixture state is a seeded 3-player game advanced by a fixed action
script, so the goldens are fully deterministic. Review diffs by hand
before committing a regeneration.
"""

from pathlib import Path

from hanabi_coord.engine import (
    Action,
    GameConfig,
    apply,
    new_game,
    observe,
)
from hanabi_coord.llm_agent import render_rules_prompt, render_state_prompt

GOLDEN_DIR = Path(__file__).resolve().parent.parent / "tests" / "goldens"

FIXTURE_ACTIONS = [
    Action("hint_color", target=1, color=0),
    Action("hint_rank", target=2, rank=1),
    Action("play", slot=0),
    Action("discard", slot=0),
]


def fixture_observation():
    state = new_game(GameConfig(num_players=3, seed=2024))
    events = []
    for action in FIXTURE_ACTIONS:
        state, event = apply(state, action)
        events.append(event)
    obs = observe(state, state.current_player)
    return obs, events[-(state.config.num_players - 1):]


def main() -> None:
    GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
    obs, recent = fixture_observation()
    files = {
        "rules_verbatim.txt": render_rules_prompt(obs.config, "verbatim"),
        "rules_corrected_2p.txt": render_rules_prompt(
            GameConfig(num_players=2), "corrected"
        ),
        "rules_corrected_3p.txt": render_rules_prompt(obs.config, "corrected"),
        "state_plain_corrected.txt": render_state_prompt(
            obs, "plain", "corrected", recent
        ).state_text,
        "state_plain_verbatim.txt": render_state_prompt(
            obs, "plain", "verbatim", recent
        ).state_text,
        "state_hgroup_corrected.txt": render_state_prompt(
            obs, "h-group", "corrected", recent
        ).full_text(),
    }
    for name, text in files.items():
        path = GOLDEN_DIR / name
        path.write_text(text + "\n")
        print(f"wrote {path} ({len(text)} chars)")


if __name__ == "__main__":
    main()
