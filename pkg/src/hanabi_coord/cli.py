"""Command-line entry point.

One tree covers every workflow: corpus stats/convert/split, synthetic
corpus generation, training (bc, ippo, hdr, brbc, fcp), evaluation
(self-play, cross-play, action prediction, behavioral metrics), the
KL-weight ablation sweep, the hosted challenge service and a reference
client for it, chat-model play, and record replay/rendering.

Every artifact-producing command writes a RunManifest JSON next to its
outputs so deterministic runs can be reproduced from the manifest alone.
"""

from __future__ import annotations

import csv as csv_mod
import hashlib
import io
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import click
import numpy as np

from . import bc as bc_mod
from . import dataset, evaluation, neural, rl
from .engine import (
    GameConfig,
    GameRecord,
    render_record,
    replay,
)
from .policies import CueTeacher, FirstLegalPolicy, HintRankTeacher, RandomPolicy

GAME_PRESETS = {
    "standard-2p": GameConfig(num_players=2),
    "standard-3p": GameConfig(num_players=3),
    "reduced-2p": GameConfig(
        num_players=2, hand_size=3, num_colors=2, max_rank=3, max_lives=1
    ),
}

SCRIPTED_AGENTS = {
    "cue": lambda: CueTeacher(),
    "hint-rank": lambda: HintRankTeacher(),
    "random": lambda: RandomPolicy(),
    "first-legal": lambda: FirstLegalPolicy(),
}

HDR_PRESET_KL_WEIGHT = 0.25


# --- manifests -------------------------------------------------------------------


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int
    code_version: str
    artifacts: list[str]
    started: float
    finished: float = 0.0
    config: dict = field(default_factory=dict)


def _code_version() -> str:
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:
        return "unknown"


def _config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_manifest(
    out_dir: Path, command: str, config: dict, seed: int, artifacts: list[Path]
) -> Path:
    manifest = RunManifest(
        command=command,
        config_hash=_config_hash(config),
        seed=seed,
        code_version=_code_version(),
        artifacts=[str(a) for a in artifacts],
        started=time.time(),
        finished=time.time(),
        config=config,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(asdict(manifest), indent=2, default=str) + "\n")
    return path


# --- output formatting ----------------------------------------------------------


def emit(rows: list[dict], fmt: str) -> None:
    """Uniform tabular output: a list of flat dicts in json, csv, or text."""
    if fmt == "json":
        click.echo(json.dumps(rows, indent=2, default=str))
        return
    if not rows:
        return
    headers = list(rows[0].keys())
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv_mod.DictWriter(buf, fieldnames=headers)
        writer.writeheader()
        writer.writerows(rows)
        click.echo(buf.getvalue().rstrip("\n"))
        return
    widths = {
        h: max(len(h), *(len(_cell(r[h])) for r in rows)) for h in headers
    }
    click.echo("  ".join(h.ljust(widths[h]) for h in headers))
    for r in rows:
        click.echo("  ".join(_cell(r[h]).ljust(widths[h]) for h in headers))


def _cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def _game_config(name: str) -> GameConfig:
    if name not in GAME_PRESETS:
        raise click.BadParameter(
            f"unknown game preset {name!r}; have {sorted(GAME_PRESETS)}"
        )
    return GAME_PRESETS[name]


def _parse_widths(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(x) for x in text.split(","))


def _build_spec(game_config: GameConfig, embed, lstm, decoder):
    from .encoding import action_space_size, feature_length

    return neural.PolicySpec(
        input_width=feature_length(game_config),
        embed_widths=_parse_widths(embed),
        lstm_widths=_parse_widths(lstm),
        decoder_widths=_parse_widths(decoder),
        output_size=action_space_size(game_config),
    )


def _load_corpus(path: str) -> list[GameRecord]:
    result = dataset.load_corpus(path)
    if result.failures:
        for f in result.failures:
            click.echo(f"record {f.record_index}: {f.reason}", err=True)
        raise click.ClickException(
            f"{len(result.failures)} records failed validation"
        )
    return result.records


# --- root ------------------------------------------------------------------------


@click.group()
@click.option("--threads", type=int, default=1, show_default=True,
              help="Global worker-thread cap (numeric backends).")
@click.option("--format", "fmt", type=click.Choice(["json", "csv", "text"]),
              default="text", show_default=True)
@click.pass_context
def main(ctx, threads, fmt):
    """Hanabi coordination research toolkit."""
    import torch

    torch.set_num_threads(threads)
    ctx.obj = {"fmt": fmt, "threads": threads}


# --- corpus commands ----------------------------------------------------------------


@main.command()
@click.argument("corpus", type=click.Path(exists=True))
@click.pass_context
def stats(ctx, corpus):
    """Score and length statistics of a record corpus."""
    s = dataset.stats(_load_corpus(corpus))
    rows = [
        {"metric": "score", **asdict(s.scores)},
        {"metric": "length", **asdict(s.lengths)},
    ]
    for r in rows:
        r["count"] = s.count
    emit(rows, ctx.obj["fmt"])


@main.command()
@click.argument("src", type=click.Path(exists=True))
@click.argument("dst", type=click.Path())
def convert(src, dst):
    """Convert hanab.live JSON exports to the canonical record format."""
    docs = json.loads(Path(src).read_text())
    if isinstance(docs, dict):
        docs = [docs]
    records = [dataset.convert_hanab_live(d) for d in docs]
    dataset.save_corpus(records, dst)
    click.echo(f"wrote {len(records)} records to {dst}")


@main.command("split")
@click.argument("corpus", type=click.Path(exists=True))
@click.option("--out-dir", type=click.Path(), required=True)
@click.option("--val", type=int, default=None, help="Validation game count.")
@click.option("--test", type=int, default=None, help="Test game count.")
@click.option("--preset", type=click.Choice(sorted(dataset.SPLIT_PRESETS)))
@click.option("--seed", type=int, default=0, show_default=True)
def split_cmd(corpus, out_dir, val, test, preset, seed):
    """Shuffle-split a corpus into train/validation/test files."""
    records = _load_corpus(corpus)
    if preset is not None:
        result = dataset.split_preset(records, preset, seed)
    elif val is not None and test is not None:
        result = dataset.split(records, val, test, seed)
    else:
        raise click.ClickException("give either --preset or both --val/--test")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, part in (
        ("train", result.train),
        ("validation", result.validation),
        ("test", result.test),
    ):
        path = out / f"{name}.jsonl"
        dataset.save_corpus(part, path)
        paths.append(path)
        click.echo(f"{name}: {len(part)} games -> {path}")
    write_manifest(out, "split", {"corpus": corpus, "seed": seed,
                                  "val": val, "test": test, "preset": preset},
                   seed, paths)


@main.command()
@click.option("--agent", type=click.Choice(sorted(SCRIPTED_AGENTS)),
              default="cue", show_default=True)
@click.option("--games", type=int, default=100, show_default=True)
@click.option("--game", default="standard-2p", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def generate(agent, games, game, seed, out):
    """Generate a replay-valid synthetic corpus from a scripted agent."""
    cfg = _game_config(game)
    records = dataset.generate_synthetic(
        lambda seat, game_seed: SCRIPTED_AGENTS[agent](), games, cfg, seed
    )
    dataset.save_corpus(records, out)
    write_manifest(Path(out).parent, "generate",
                   {"agent": agent, "games": games, "game": game}, seed,
                   [Path(out)])
    click.echo(f"wrote {len(records)} games to {out}")


# --- training -------------------------------------------------------------------------


@main.group()
def train():
    """Train policies (bc, ippo, hdr, brbc, fcp)."""


def _train_common(fn):
    fn = click.option("--out-dir", type=click.Path(), required=True)(fn)
    fn = click.option("--game", default="standard-2p", show_default=True)(fn)
    fn = click.option("--seed", type=int, default=0, show_default=True)(fn)
    fn = click.option("--embed", default="128", show_default=True,
                      help="Comma-separated embed layer widths.")(fn)
    fn = click.option("--lstm", default="", show_default=True,
                      help="Comma-separated LSTM widths (bc only).")(fn)
    fn = click.option("--decoder", default="64", show_default=True,
                      help="Comma-separated decoder widths.")(fn)
    return fn


def _finish_training(out_dir, command, params, log, config, seed):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.npz"
    neural.save_checkpoint(params, ckpt)
    log_path = out / "train_log.jsonl"
    with open(log_path, "w") as fh:
        for entry in log:
            fh.write(json.dumps(entry) + "\n")
    write_manifest(out, command, config, seed, [ckpt, log_path])
    click.echo(f"checkpoint: {ckpt}")
    if log:
        last = log[-1]
        click.echo("final: " + json.dumps(last))


@train.command("bc")
@click.option("--corpus", type=click.Path(exists=True), required=True)
@click.option("--epochs", type=int, default=10, show_default=True)
@click.option("--batch-games", type=int, default=16, show_default=True)
@click.option("--sp-eval-games", type=int, default=100, show_default=True)
@click.option("--lr", type=float, default=None,
              help="Initial learning rate (default: standard schedule).")
@click.option("--no-permute", is_flag=True, help="Disable color augmentation.")
@_train_common
def train_bc_cmd(corpus, epochs, batch_games, sp_eval_games, lr, no_permute,
                 out_dir, game, seed, embed, lstm, decoder):
    """Behavioral cloning from a record corpus."""
    records = _load_corpus(corpus)
    cfg = records[0].game_config()
    spec = _build_spec(cfg, embed, lstm, decoder)
    schedule = neural.BC_REFERENCE_SCHEDULE
    if lr is not None:
        schedule = neural.ScheduleConfig(
            initial_lr=lr, final_lr=schedule.final_lr, total_steps=0
        )
    config = bc_mod.BCConfig(
        batch_size_games=batch_games,
        epochs=epochs,
        permute_colors=not no_permute,
        sp_eval_games=sp_eval_games,
        schedule=schedule,
        seed=seed,
    )
    params, log = bc_mod.train_bc(spec, config, records)
    _finish_training(out_dir, "train bc", params, log,
                     {"corpus": corpus, "epochs": epochs,
                      "batch_games": batch_games, "spec": spec.to_json()},
                     seed)


def _rl_config(preset, updates, envs, env_steps, lr, seed):
    if preset == "baseline-1k":
        config = rl.BASELINE_1K
    else:
        config = rl.RLConfig()
    overrides = {}
    if updates is not None:
        overrides["total_updates"] = updates
    if envs is not None:
        overrides["num_envs"] = envs
    if env_steps is not None:
        overrides["num_env_steps"] = env_steps
    if lr is not None:
        overrides["learning_rate"] = lr
    overrides["seed"] = seed
    return replace(config, **overrides)


def _rl_common(fn):
    fn = click.option("--preset", type=click.Choice(["desk", "baseline-1k"]),
                      default="desk", show_default=True)(fn)
    fn = click.option("--updates", type=int, default=None)(fn)
    fn = click.option("--envs", type=int, default=None)(fn)
    fn = click.option("--env-steps", type=int, default=None)(fn)
    fn = click.option("--lr", type=float, default=None)(fn)
    return fn


@train.command("ippo")
@_rl_common
@_train_common
def train_ippo_cmd(preset, updates, envs, env_steps, lr,
                   out_dir, game, seed, embed, lstm, decoder):
    """Independent PPO self-play."""
    cfg = _game_config(game)
    spec = _build_spec(cfg, embed, lstm, decoder)
    config = _rl_config(preset, updates, envs, env_steps, lr, seed)
    params, log = rl.train_ippo(spec, config, cfg)
    _finish_training(out_dir, "train ippo", params, log,
                     {"game": game, "rl": asdict(config),
                      "spec": spec.to_json()}, seed)


@train.command("hdr")
@click.option("--ref", type=click.Path(exists=True), required=True,
              help="Reference (cloned) policy checkpoint.")
@click.option("--kl-weight", type=float, default=HDR_PRESET_KL_WEIGHT,
              show_default=True)
@_rl_common
@_train_common
def train_hdr_cmd(ref, kl_weight, preset, updates, envs, env_steps, lr,
                  out_dir, game, seed, embed, lstm, decoder):
    """KL-regularized self-play around a reference policy."""
    cfg = _game_config(game)
    ref_params = neural.load_checkpoint(ref)
    config = _rl_config(preset, updates, envs, env_steps, lr, seed)
    hdr = rl.HDRConfig(
        rl=config, kl_weight=kl_weight,
        ref_params=ref_params, ref_spec=ref_params.spec,
    )
    params, log = rl.train_hdr(ref_params.spec, hdr, cfg)
    _finish_training(out_dir, "train hdr", params, log,
                     {"game": game, "ref": ref, "kl_weight": kl_weight,
                      "rl": asdict(config)}, seed)


@train.command("brbc")
@click.option("--bc-ckpt", type=click.Path(exists=True), required=True)
@click.option("--anneal-start", type=int, default=rl.BR_BC_ANNEAL_START,
              show_default=True)
@click.option("--anneal-end", type=int, default=rl.BR_BC_ANNEAL_END,
              show_default=True)
@_rl_common
@_train_common
def train_brbc_cmd(bc_ckpt, anneal_start, anneal_end, preset, updates, envs,
                   env_steps, lr, out_dir, game, seed, embed, lstm, decoder):
    """Best response to a frozen cloned policy with self-play annealing."""
    cfg = _game_config(game)
    spec = _build_spec(cfg, embed, lstm, decoder)
    bc_params = neural.load_checkpoint(bc_ckpt)
    config = rl.BRBCConfig(
        rl=_rl_config(preset, updates, envs, env_steps, lr, seed),
        anneal_start=anneal_start,
        anneal_end=anneal_end,
    )
    params, log = rl.train_br_bc(spec, config, cfg, bc_params.spec, bc_params)
    _finish_training(out_dir, "train brbc", params, log,
                     {"game": game, "bc_ckpt": bc_ckpt,
                      "anneal": [anneal_start, anneal_end]}, seed)


@train.command("fcp")
@click.option("--pool", type=click.Choice(["full", "desk"]), default="desk",
              show_default=True,
              help="Population size preset: 36x4 snapshots or 4x2.")
@click.option("--pool-seeds", type=int, default=None)
@click.option("--pool-checkpoints", type=int, default=None)
@_rl_common
@_train_common
def train_fcp_cmd(pool, pool_seeds, pool_checkpoints, preset, updates, envs,
                  env_steps, lr, out_dir, game, seed, embed, lstm, decoder):
    """Fictitious co-play: best response to a self-play population."""
    cfg = _game_config(game)
    spec = _build_spec(cfg, embed, lstm, decoder)
    config = _rl_config(preset, updates, envs, env_steps, lr, seed)
    if pool_seeds is None:
        pool_seeds = rl.FCP_FULL_SEEDS if pool == "full" else rl.FCP_DESK_SEEDS
    if pool_checkpoints is None:
        pool_checkpoints = (
            rl.FCP_FULL_CHECKPOINTS if pool == "full" else rl.FCP_DESK_CHECKPOINTS
        )
    population = rl.build_fcp_population(
        spec, pool_seeds, pool_checkpoints, config, cfg
    )
    params, log = rl.train_fcp_br(spec, population, config, cfg)
    _finish_training(out_dir, "train fcp", params, log,
                     {"game": game, "pool_seeds": pool_seeds,
                      "pool_checkpoints": pool_checkpoints}, seed)


# --- evaluation ----------------------------------------------------------------------


@main.group(name="eval")
def eval_group():
    """Evaluate policies (sp, xp, predict, metrics)."""


def _agent_factory(token: str):
    """An --agent value is a scripted name or a checkpoint path."""
    if token in SCRIPTED_AGENTS:
        make = SCRIPTED_AGENTS[token]
        return token, lambda seat, game_seed: make()
    params = neural.load_checkpoint(token)
    return Path(token).stem, (
        lambda seat, game_seed: bc_mod.NeuralPolicy(params.spec, params)
    )


@eval_group.command("sp")
@click.option("--agent", required=True,
              help="Scripted agent name or checkpoint path.")
@click.option("--games", type=int, default=100, show_default=True)
@click.option("--game", default="standard-2p", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.pass_context
def eval_sp(ctx, agent, games, game, seed):
    """Self-play evaluation."""
    cfg = _game_config(game)
    label, factory = _agent_factory(agent)
    stats_, _ = evaluation.selfplay_eval(factory, cfg, games, seed)
    emit([{"agent": label, **asdict(stats_)}], ctx.obj["fmt"])


@eval_group.command("xp")
@click.option("--agent", "agents", multiple=True, required=True)
@click.option("--games", type=int, default=20, show_default=True)
@click.option("--game", default="standard-2p", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None,
              help="Also write the matrix as CSV.")
@click.pass_context
def eval_xp(ctx, agents, games, game, seed, out):
    """Cross-play matrix over two or more agents."""
    cfg = _game_config(game)
    matrix = evaluation.crossplay_matrix(
        [_agent_factory(a) for a in agents], cfg, games, seed
    )
    if ctx.obj["fmt"] == "csv":
        click.echo(matrix.to_csv().rstrip("\n"))
    elif ctx.obj["fmt"] == "json":
        click.echo(json.dumps(
            {"labels": list(matrix.labels), "means": matrix.means.tolist()}
        ))
    else:
        click.echo(matrix.to_text())
    if out is not None:
        Path(out).write_text(matrix.to_csv())


@eval_group.command("predict")
@click.option("--agent", required=True)
@click.option("--corpus", type=click.Path(exists=True), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.pass_context
def eval_predict(ctx, agent, corpus, seed):
    """Teacher-forced action prediction against a corpus."""
    records = _load_corpus(corpus)
    cfg = records[0].game_config()
    if agent == "uniform":
        factory = lambda seat: evaluation.UniformPredictor(cfg)
    else:
        params = neural.load_checkpoint(agent)
        factory = lambda seat: bc_mod.NeuralPolicy(params.spec, params)
    report = evaluation.action_prediction(factory, records, seed)
    emit([asdict(report)], ctx.obj["fmt"])


@eval_group.command("metrics")
@click.option("--corpus", type=click.Path(exists=True), required=True)
@click.pass_context
def eval_metrics(ctx, corpus):
    """Behavioral metrics (hint usefulness, hint rate) of a corpus."""
    records = _load_corpus(corpus)
    emit(
        [
            {
                "games": len(records),
                "ipp": evaluation.ipp(records),
                "communicativeness": evaluation.communicativeness(records),
            }
        ],
        ctx.obj["fmt"],
    )


# --- ablation -------------------------------------------------------------------------


@main.command()
@click.option("--ref", type=click.Path(exists=True), required=True,
              help="Reference policy checkpoint for the KL term.")
@click.option("--game", default="reduced-2p", show_default=True)
@click.option("--updates", type=int, default=30, show_default=True)
@click.option("--envs", type=int, default=8, show_default=True)
@click.option("--env-steps", type=int, default=32, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", type=click.Path(), required=True)
def ablate(ref, game, updates, envs, env_steps, seed, out_dir):
    """Sweep the KL-weight grid and emit KL-vs-update curves."""
    cfg = _game_config(game)
    ref_params = neural.load_checkpoint(ref)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = rl.RLConfig(
        total_updates=updates, num_envs=envs, num_env_steps=env_steps, seed=seed
    )
    curves: dict[float, list[float]] = {}
    artifacts = []
    for lam in rl.ABLATION_KL_GRID:
        hdr = rl.HDRConfig(
            rl=base, kl_weight=lam,
            ref_params=ref_params, ref_spec=ref_params.spec,
        )
        log_path = out / f"kl_{lam:.2f}.jsonl"
        _, log = rl.train_hdr(ref_params.spec, hdr, cfg, log_path=log_path)
        curves[lam] = [entry["kl"] for entry in log]
        artifacts.append(log_path)
        click.echo(f"lambda={lam:.2f} final kl={curves[lam][-1]:.6f}")
    csv_path = out / "kl_curves.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv_mod.writer(fh)
        writer.writerow(["update"] + [f"{l:.2f}" for l in rl.ABLATION_KL_GRID])
        for u in range(updates):
            writer.writerow([u] + [curves[l][u] for l in rl.ABLATION_KL_GRID])
    artifacts.append(csv_path)
    write_manifest(out, "ablate",
                   {"ref": ref, "game": game, "updates": updates,
                    "grid": list(rl.ABLATION_KL_GRID)}, seed, artifacts)
    click.echo(f"curves: {csv_path}")


# --- service ---------------------------------------------------------------------------


@main.command()
@click.option("--storage", type=click.Path(), required=True)
@click.option("--secret", required=True, help="Server schedule secret.")
@click.option("--admin-token", required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--games", type=int, default=1000, show_default=True)
@click.option("--players", type=int, default=2, show_default=True)
@click.option("--test-corpus", type=click.Path(exists=True), default=None)
@click.option("--static-dir", type=click.Path(exists=True), default=None,
              help="Serve a web client bundle under /app.")
def serve(storage, secret, admin_token, host, port, games, players, test_corpus,
          static_dir):
    """Run the hosted challenge service."""
    import uvicorn

    from .service import ChallengeService, ServiceConfig, build_app

    service = ChallengeService(
        ServiceConfig(
            storage_path=Path(storage),
            server_secret=secret,
            games_allowed=games,
            num_players=players,
            test_corpus_path=Path(test_corpus) if test_corpus else None,
        )
    )
    app = build_app(
        service, admin_token,
        static_dir=Path(static_dir) if static_dir else None,
    )
    uvicorn.run(app, host=host, port=port)


@main.command("challenge-client")
@click.option("--url", required=True)
@click.option("--api-key", required=True)
@click.option("--max-games", type=int, default=None,
              help="Stop early after this many games (session stays open).")
def challenge_client(url, api_key, max_games):
    """Reference client: play a hosted session to completion.

    Plays the lowest-index legal action each turn; candidates with real
    agents replace choose() with their own payload-to-action mapping.
    """
    import httpx

    def choose(payload):
        return payload["legal_actions"][0]

    with httpx.Client(base_url=url, timeout=60.0) as client:
        out = client.post("/session/start", json={"api_key": api_key})
        out.raise_for_status()
        doc = out.json()
        payload = doc["observation"]
        played = 0
        while True:
            r = client.post(
                "/session/step",
                json={"api_key": api_key, "action": choose(payload)},
            )
            r.raise_for_status()
            doc = r.json()
            if "game_result" in doc:
                played += 1
                click.echo(json.dumps(doc["game_result"]))
                if max_games is not None and played >= max_games:
                    break
            if doc.get("session_complete"):
                click.echo(json.dumps(doc["results"]))
                break
            payload = doc["observation"]


# --- chat-model play ---------------------------------------------------------------------


@main.command("llm-play")
@click.option("--endpoint", default=None, help="Chat-completions base URL.")
@click.option("--model", default="", help="Model id at the endpoint.")
@click.option("--mock", type=click.Choice(["scripted", "garbage"]), default=None,
              help="Use a local mock client instead of a real endpoint.")
@click.option("--variant", type=click.Choice(["plain", "h-group"]),
              default="plain", show_default=True)
@click.option("--verbatim", is_flag=True,
              help="Render the historical prompt text unmodified.")
@click.option("--games", type=int, default=100, show_default=True)
@click.option("--game", default="standard-2p", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", type=click.Path(), required=True)
@click.pass_context
def llm_play_cmd(ctx, endpoint, model, mock, variant, verbatim, games, game,
                 seed, out_dir):
    """Play full games through a chat-completion client."""
    import os

    from . import llm_agent

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if mock == "scripted":
        client = _ScriptedChatClient()
    elif mock == "garbage":
        client = _GarbageChatClient()
    elif endpoint:
        client = llm_agent.HttpChatClient(
            base_url=endpoint,
            model=model,
            api_key=os.environ.get("CHAT_API_KEY", ""),
            audit_path=out / "audit.jsonl",
        )
    else:
        raise click.ClickException("give --endpoint or --mock")
    config = llm_agent.LlmPlayConfig(
        game_config=_game_config(game),
        variant=variant,
        mode="verbatim" if verbatim else "corrected",
        num_games=games,
        seed=seed,
        log_path=out / "turns.jsonl",
    )
    records, stats_, _ = llm_agent.llm_play(config, client)
    corpus_path = out / "games.jsonl"
    dataset.save_corpus(records, corpus_path)
    write_manifest(out, "llm-play",
                   {"variant": variant, "verbatim": verbatim, "games": games,
                    "game": game, "mock": mock, "endpoint": endpoint},
                   seed, [corpus_path])
    emit([asdict(stats_)], ctx.obj["fmt"])


class _ScriptedChatClient:
    def complete(self, prompt: str) -> str:
        section = prompt.split("## Valid Actions:")[1]
        section = section.split("# Your Instruction:")[0]
        lines = [l[2:] for l in section.splitlines() if l.startswith("- ")]
        pick = lines[0]
        for prefix in ("Discard", "Play"):
            hits = [l for l in lines if l.startswith(prefix)]
            if hits:
                pick = hits[0]
                break
        return json.dumps(
            {"game_state": "", "action_options": "", "best_action": pick,
             "rationale": ""}
        )


class _GarbageChatClient:
    def complete(self, prompt: str) -> str:
        return "not json"


# --- replay / render -------------------------------------------------------------------


@main.command("replay")
@click.argument("corpus", type=click.Path(exists=True))
@click.pass_context
def replay_cmd(ctx, corpus):
    """Validate every record in a corpus by exact engine replay."""
    records = _load_corpus(corpus)
    rows = []
    for i, record in enumerate(records):
        state, _ = replay(record)
        from .engine import score as score_fn

        rows.append({"game": i, "turns": len(record.actions),
                     "score": score_fn(state)})
    emit(rows, ctx.obj["fmt"])
    click.echo(f"{len(records)} records replay-valid", err=True)


@main.command("render")
@click.argument("corpus", type=click.Path(exists=True))
@click.option("--index", type=int, default=0, show_default=True)
def render_cmd(corpus, index):
    """Human-readable turn-by-turn transcript of one recorded game."""
    records = _load_corpus(corpus)
    if not 0 <= index < len(records):
        raise click.ClickException(f"index {index} out of range")
    click.echo(render_record(records[index]))


if __name__ == "__main__":
    main()
