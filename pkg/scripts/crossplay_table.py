#!/usr/bin/env python3
"""Cross-play score matrix for scripted agents and saved checkpoints.

Each cell is the mean score when the row agent teams up with the column
agent, averaged over both seat orders; the diagonal is self-play. Accepts
any mix of built-in scripted agent names and checkpoint paths.
"""

import argparse
import csv
from pathlib import Path

from hanabi_coord import bc, evaluation, neural
from hanabi_coord.cli import GAME_PRESETS, SCRIPTED_AGENTS
from hanabi_coord.engine import GameConfig


def factory(token: str):
    if token in SCRIPTED_AGENTS:
        return token, lambda seat, game_seed: SCRIPTED_AGENTS[token]()
    params = neural.load_checkpoint(token)
    name = Path(token).stem
    return name, lambda seat, game_seed: bc.NeuralPolicy(params.spec, params)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("agents", nargs="+",
                    help=f"scripted names ({', '.join(sorted(SCRIPTED_AGENTS))}) "
                         "or checkpoint paths")
    ap.add_argument("--game", default="standard-2p", choices=sorted(GAME_PRESETS))
    ap.add_argument("--games", type=int, default=100,
                    help="games per seat permutation")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/crossplay.csv")
    args = ap.parse_args()

    cfg: GameConfig = GAME_PRESETS[args.game]
    pairs = [factory(a) for a in args.agents]
    matrix = evaluation.crossplay_matrix(pairs, cfg, args.games, seed=args.seed)

    width = max(len(lbl) for lbl in matrix.labels) + 2
    print(" " * width + "".join(f"{lbl:>{width}}" for lbl in matrix.labels))
    for i, lbl in enumerate(matrix.labels):
        cells = "".join(f"{matrix.means[i, j]:>{width}.3f}"
                        for j in range(len(matrix.labels)))
        print(f"{lbl:>{width}}{cells}")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([""] + list(matrix.labels))
        for i, lbl in enumerate(matrix.labels):
            writer.writerow([lbl] + [f"{matrix.means[i, j]:.4f}"
                                     for j in range(len(matrix.labels))])
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
