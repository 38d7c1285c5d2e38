#!/usr/bin/env python3
"""Behavioral cloning pipeline on a scripted-teacher corpus.

Generates (or loads) a game corpus, splits it, trains a BC policy, and
reports held-out action-prediction metrics plus self-play strength.
"""

import argparse
import json
from pathlib import Path

from hanabi_coord import bc, dataset, evaluation, neural
from hanabi_coord.encoding import action_space_size, feature_length
from hanabi_coord.engine import GameConfig
from hanabi_coord.policies import CueTeacher


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--corpus", help="existing JSONL corpus; generated if omitted")
    ap.add_argument("--out-dir", default="results/bc_pipeline")
    ap.add_argument("--games", type=int, default=300)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = GameConfig(num_players=2)

    if args.corpus:
        records = dataset.load_corpus(args.corpus).records
    else:
        print(f"generating {args.games} teacher games ...")
        records = dataset.generate_synthetic(
            lambda seat, game_seed: CueTeacher(), args.games, cfg, seed=args.seed
        )
        dataset.save_corpus(records, out / "corpus.jsonl")

    val_size = max(1, len(records) // 10)
    test_size = max(1, len(records) // 5)
    parts = dataset.split(records, val_size, test_size, seed=args.seed)
    print(f"split: {len(parts.train)} train / {len(parts.validation)} val "
          f"/ {len(parts.test)} test")

    spec = neural.PolicySpec(
        feature_length(cfg), (128,), (), (64,), action_space_size(cfg)
    )
    bc_cfg = bc.BCConfig(
        batch_size_games=10, epochs=args.epochs, sp_eval_games=20,
        schedule=neural.ScheduleConfig(2e-3, 1e-4, 0), seed=args.seed,
    )
    params, log = bc.train_bc(spec, bc_cfg, parts.train, log_path=out / "train.jsonl")
    neural.save_checkpoint(params, out / "checkpoint.npz")

    report = evaluation.action_prediction(
        lambda seat: bc.NeuralPolicy(spec, params), parts.test, seed=args.seed
    )
    sp, _ = evaluation.selfplay_eval(
        lambda seat, game_seed: bc.NeuralPolicy(spec, params), cfg, 100, seed=9
    )
    summary = {
        "held_out_cross_entropy": report.cross_entropy,
        "held_out_top1": report.top1,
        "held_out_top_10pct": report.top_10pct,
        "held_out_top_20pct": report.top_20pct,
        "selfplay_mean": sp.mean,
        "selfplay_median": sp.median,
        "prediction_steps": report.num_steps,
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    for k, v in summary.items():
        print(f"  {k}: {v:.4f}" if isinstance(v, float) else f"  {k}: {v}")


if __name__ == "__main__":
    main()
