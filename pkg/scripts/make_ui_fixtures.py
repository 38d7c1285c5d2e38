#!/usr/bin/env python3
"""Regenerate the web client's test fixtures.

Writes, into the frontend package's test/fixtures directory:
  - records.jsonl: a few replay-valid fixture games
  - render_expected_<i>.txt: the reference turn-by-turn render of each
  - observations.json: fuzzed mid-game observation payloads, each paired
    with the true (never-served) own hand so leak tests can assert absence
"""

import argparse
import json
from pathlib import Path

from hanabi_coord.engine import GameConfig, new_game, observe, apply, is_terminal, render_record
from hanabi_coord.engine import legal_actions, GameRecord
from hanabi_coord.service import observation_payload

import numpy as np

REPO = Path(__file__).resolve().parents[1]
DEFAULT_OUT = REPO.parent / "frontend" / "test" / "fixtures"
NUM_RECORDS = 3
NUM_OBSERVATIONS = 50


def fuzzed_observations(count: int) -> list[dict]:
    out = []
    for seed in range(count):
        rng = np.random.Generator(np.random.Philox(1000 + seed))
        cfg = GameConfig(num_players=2, seed=2000 + seed)
        state = new_game(cfg)
        stop_after = int(rng.integers(0, 40))
        hint_greedy = seed % 5 == 0  # force some zero-clue-token states
        for _ in range(stop_after):
            if is_terminal(state) is not None:
                break
            acts = legal_actions(state, state.current_player)
            if hint_greedy:
                hints = [a for a in acts if a.kind.startswith("hint")]
                acts = hints or acts
            state, _ = apply(state, acts[int(rng.integers(len(acts)))])
        if is_terminal(state) is not None:
            state = new_game(cfg)
        player = state.current_player
        obs = observe(state, player)
        out.append({
            "payload": observation_payload(obs, 3, 0),
            "true_own_hand": [str(c) for c in state.hands[player]],
        })
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default=str(DEFAULT_OUT))
    args = ap.parse_args()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    lines = (REPO / "tests" / "fixtures" / "cue_2p.jsonl").read_text().splitlines()
    picked = [GameRecord.from_text(line) for line in lines[:NUM_RECORDS]]
    with open(out / "records.jsonl", "w") as fh:
        for record in picked:
            fh.write(record.to_text() + "\n")
    for i, record in enumerate(picked):
        (out / f"render_expected_{i}.txt").write_text(render_record(record) + "\n")

    with open(out / "observations.json", "w") as fh:
        json.dump(fuzzed_observations(NUM_OBSERVATIONS), fh)
    print(f"fixtures written to {out}")


if __name__ == "__main__":
    main()
