#!/usr/bin/env python3
"""KL-weight ablation on the reduced two-player game.

Trains a self-play reference, then sweeps the regularization weight grid
while distilling toward that reference. Writes per-weight training logs,
a combined kl_curves.csv, and final self-play / cross-play-with-reference
scores. Desk scale: a few minutes on a laptop CPU.
"""

import argparse
import csv
import json
from pathlib import Path

from hanabi_coord import bc, evaluation, neural, rl
from hanabi_coord.encoding import action_space_size, feature_length
from hanabi_coord.engine import GameConfig

REDUCED = GameConfig(num_players=2, hand_size=3, num_colors=2, max_rank=3, max_lives=1)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="results/kl_ablation")
    ap.add_argument("--ref-updates", type=int, default=40)
    ap.add_argument("--sweep-updates", type=int, default=40)
    ap.add_argument("--eval-games", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = neural.PolicySpec(
        feature_length(REDUCED), (64,), (), (32,), action_space_size(REDUCED)
    )

    print("training reference policy ...")
    ref_cfg = rl.RLConfig(
        total_updates=args.ref_updates, num_envs=8, num_env_steps=64,
        learning_rate=1e-3, seed=args.seed,
    )
    ref_params, ref_log = rl.train_ippo(spec, ref_cfg, REDUCED)
    neural.save_checkpoint(ref_params, out / "reference.npz")
    print(f"  reference self-play at end of training: {ref_log[-1]['sp_score']:.3f}")

    ref_policy = lambda seat, game_seed: bc.NeuralPolicy(spec, ref_params)
    rows = []
    curves: dict[float, list[float]] = {}
    for weight in rl.ABLATION_KL_GRID:
        hdr = rl.HDRConfig(
            rl=rl.RLConfig(
                total_updates=args.sweep_updates, num_envs=8, num_env_steps=64,
                learning_rate=1e-3, seed=args.seed + 1,
            ),
            kl_weight=weight,
            ref_params=None if weight == 0.0 else ref_params,
            ref_spec=None if weight == 0.0 else spec,
        )
        params, log = rl.train_hdr(
            spec, hdr, REDUCED, log_path=out / f"kl_{weight:.2f}.jsonl"
        )
        curves[weight] = [entry["kl"] for entry in log]

        learner = lambda seat, game_seed: bc.NeuralPolicy(spec, params)
        sp, _ = evaluation.selfplay_eval(learner, REDUCED, args.eval_games, seed=7)
        xp = evaluation.crossplay_matrix(
            [("learner", learner), ("reference", ref_policy)],
            REDUCED, args.eval_games // 4, seed=7,
        )
        rows.append({
            "kl_weight": weight,
            "final_kl": log[-1]["kl"],
            "selfplay_mean": sp.mean,
            "with_reference": xp.means[0, 1],
        })
        print(f"  weight {weight:.2f}: final KL {log[-1]['kl']:.4f}, "
              f"self-play {sp.mean:.3f}, with reference {xp.means[0, 1]:.3f}")

    with open(out / "kl_curves.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["update"] + [f"{w:.2f}" for w in rl.ABLATION_KL_GRID])
        for u in range(args.sweep_updates):
            writer.writerow([u] + [f"{curves[w][u]:.6f}" for w in rl.ABLATION_KL_GRID])
    with open(out / "summary.json", "w") as fh:
        json.dump(rows, fh, indent=2)
    print(f"wrote {out}/kl_curves.csv and {out}/summary.json")


if __name__ == "__main__":
    main()
