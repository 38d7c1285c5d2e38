"""Networked evaluation service.

Teams register for single-use API keys, play a fixed schedule of games
against hosted partner policies while seeing only their own seat's local
observation, and land on a leaderboard computed from persisted transcripts.
After finishing, a team may fetch the held-out test corpus and submit
per-step action distributions for cross-entropy scoring.

Human-play sessions are a separate non-leaderboard session type: no API
key, no quota, same observation schema, optionally streamed over a
websocket. The web client under frontend/ talks to these endpoints.

Core logic lives in ChallengeService (plain Python over sqlite plus
append-only per-game transcript files); build_app wraps it in a FastAPI
application. Schedules are derived from sha256(server secret, key) so
reissuing results is reproducible, and candidate seats are balanced across
the schedule by construction.
"""

from __future__ import annotations

import hashlib
import json
import secrets
import sqlite3
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from fastapi import Request, WebSocket

from .encoding import action_space_size, action_to_index, index_to_action, legal_action_mask
from .engine import (
    Action,
    GameConfig,
    GameRecord,
    GameState,
    apply,
    build_deck,
    is_terminal,
    new_game,
    observe,
    score,
)
from .policies import CueTeacher

MAX_ILLEGAL_RETRIES = 3
DEFAULT_GAMES_ALLOWED = 1000


class ServiceError(Exception):
    def __init__(self, message: str, status: int = 400):
        super().__init__(message)
        self.status = status


@dataclass
class ServiceConfig:
    storage_path: Path
    server_secret: str
    games_allowed: int = DEFAULT_GAMES_ALLOWED
    num_players: int = 2
    partner_factory: Callable[[int], object] = field(
        default=lambda seat: CueTeacher()
    )
    test_corpus_path: Optional[Path] = None


def observation_payload(obs, retries_left: int, game_index: int) -> dict:
    """The candidate-visible slice of the game; never their own cards."""
    cfg = obs.config
    legal = [action_to_index(a, cfg) for a in obs.legal_actions()]
    return {
        "schema_version": 1,
        "game_index": game_index,
        "current_player": obs.current_player,
        "your_seat": obs.player,
        "turn_count": obs.turn_count,
        "fireworks": list(obs.fireworks),
        "info_tokens": obs.info_tokens,
        "lives": obs.lives,
        "deck_size": obs.deck_size,
        "discard_pile": [str(c) for c in obs.discard_pile],
        "other_hands": {
            str(seat): [str(c) for c in hand]
            for seat, hand in obs.other_hands.items()
        },
        "own_hand_size": obs.own_hand_size,
        "card_knowledge": {
            str(seat): [
                {
                    "known_color": k.known_color,
                    "known_rank": k.known_rank,
                    "possible_colors": list(k.possible_colors),
                    "possible_ranks": list(k.possible_ranks),
                }
                for k in ks
            ]
            for seat, ks in obs.card_knowledge.items()
        },
        "last_action": None
        if obs.last_action is None
        else {
            "actor": obs.last_action.actor,
            "action": obs.last_action.action.to_json(),
            "revealed_card": None
            if obs.last_action.revealed_card is None
            else str(obs.last_action.revealed_card),
            "play_successful": obs.last_action.play_successful,
            "touched_slots": list(obs.last_action.touched_slots),
        },
        "legal_actions": legal,
        "retries_left": retries_left,
    }


@dataclass
class _LiveGame:
    state: GameState
    candidate_seat: int
    retries_left: int = MAX_ILLEGAL_RETRIES
    actions: list = field(default_factory=list)
    forfeited: bool = False


class ChallengeService:
    def __init__(self, config: ServiceConfig):
        self.config = config
        self.lock = threading.RLock()
        config.storage_path.mkdir(parents=True, exist_ok=True)
        self.transcript_dir = config.storage_path / "transcripts"
        self.transcript_dir.mkdir(exist_ok=True)
        self.db = sqlite3.connect(
            config.storage_path / "service.sqlite", check_same_thread=False
        )
        self.db.execute("PRAGMA journal_mode=WAL")
        self._init_schema()
        self._live: dict[str, _LiveGame] = {}
        self._human: dict[str, _LiveGame] = {}

    def _init_schema(self) -> None:
        with self.db:
            self.db.executescript(
                """
                CREATE TABLE IF NOT EXISTS keys (
                    token TEXT PRIMARY KEY,
                    team TEXT UNIQUE NOT NULL,
                    status TEXT NOT NULL DEFAULT 'unused',
                    games_allowed INTEGER NOT NULL,
                    games_played INTEGER NOT NULL DEFAULT 0,
                    num_players INTEGER NOT NULL
                );
                CREATE TABLE IF NOT EXISTS game_results (
                    token TEXT NOT NULL,
                    game_index INTEGER NOT NULL,
                    score INTEGER NOT NULL,
                    forfeited INTEGER NOT NULL DEFAULT 0,
                    PRIMARY KEY (token, game_index)
                );
                CREATE TABLE IF NOT EXISTS leaderboard (
                    team TEXT PRIMARY KEY,
                    players INTEGER NOT NULL,
                    method TEXT NOT NULL DEFAULT '',
                    mean REAL NOT NULL,
                    median REAL NOT NULL,
                    ce REAL
                );
                CREATE TABLE IF NOT EXISTS grants (
                    token TEXT PRIMARY KEY
                );
                CREATE TABLE IF NOT EXISTS human_sessions (
                    session_id TEXT PRIMARY KEY,
                    num_players INTEGER NOT NULL,
                    deck_seed INTEGER NOT NULL,
                    human_seat INTEGER NOT NULL,
                    status TEXT NOT NULL DEFAULT 'playing',
                    score INTEGER
                );
                """
            )

    # --- registration ----------------------------------------------------------

    def register(self, team: str, num_players: Optional[int] = None) -> str:
        n = num_players or self.config.num_players
        if n not in (2, 3):
            raise ServiceError("num_players must be 2 or 3")
        token = secrets.token_urlsafe(32)
        with self.lock, self.db:
            exists = self.db.execute(
                "SELECT 1 FROM keys WHERE team = ?", (team,)
            ).fetchone()
            if exists:
                raise ServiceError(f"team {team!r} already registered", 409)
            self.db.execute(
                "INSERT INTO keys (token, team, games_allowed, num_players)"
                " VALUES (?, ?, ?, ?)",
                (token, team, self.config.games_allowed, n),
            )
        return token

    def _key_row(self, token: str) -> sqlite3.Row:
        row = self.db.execute(
            "SELECT token, team, status, games_allowed, games_played,"
            " num_players FROM keys WHERE token = ?",
            (token,),
        ).fetchone()
        if row is None:
            raise ServiceError("unknown key", 401)
        return row

    # --- scheduling -------------------------------------------------------------

    def schedule(self, token: str) -> list[dict]:
        """Deterministic (deck seed, candidate seat) list for a key."""
        row = self._key_row(token)
        games, n = row[3], row[5]
        digest = hashlib.sha256(
            (self.config.server_secret + ":" + token).encode()
        ).digest()
        rng = np.random.Generator(
            np.random.Philox(int.from_bytes(digest[:8], "big"))
        )
        seats = np.array([i % n for i in range(games)])
        rng.shuffle(seats)
        seeds = rng.integers(0, 2**62, size=games)
        return [
            {"deck_seed": int(seeds[i]), "candidate_seat": int(seats[i])}
            for i in range(games)
        ]

    # --- session lifecycle ------------------------------------------------------

    def start_session(self, token: str) -> dict:
        with self.lock:
            row = self._key_row(token)
            if row[2] != "unused":
                raise ServiceError("key already used", 403)
            with self.db:
                cur = self.db.execute(
                    "UPDATE keys SET status = 'in-progress'"
                    " WHERE token = ? AND status = 'unused'",
                    (token,),
                )
            if cur.rowcount != 1:
                raise ServiceError("key already used", 403)
            payload = self._begin_game(token, 0)
        return {"games_scheduled": row[3], "observation": payload}

    def _game_config(self, num_players: int, deck_seed: int) -> GameConfig:
        return GameConfig(num_players=num_players, seed=deck_seed)

    def _begin_game(self, token: str, game_index: int) -> dict:
        row = self._key_row(token)
        entry = self.schedule(token)[game_index]
        cfg = self._game_config(row[5], entry["deck_seed"])
        state = new_game(cfg)
        live = _LiveGame(state=state, candidate_seat=entry["candidate_seat"])
        self._live[token] = live
        self._advance_partners(token, live)
        if is_terminal(live.state) is not None:
            return self._finish_game(token, live, game_index)
        obs = observe(live.state, live.candidate_seat)
        return observation_payload(obs, live.retries_left, game_index)

    def _partner(self, seat: int):
        return self.config.partner_factory(seat)

    def _advance_partners(self, token: str, live: _LiveGame) -> None:
        while (
            is_terminal(live.state) is None
            and live.state.current_player != live.candidate_seat
        ):
            obs = observe(live.state, live.state.current_player)
            action = self._partner(live.state.current_player).act(obs)
            self._apply_and_log(token, live, action)

    def _apply_and_log(self, token: str, live: _LiveGame, action: Action) -> None:
        game_index = self._games_played(token)
        path = self.transcript_dir / f"{token}.{game_index}.jsonl"
        self._log_to(path, live, action)

    def _log_to(self, path: Path, live: _LiveGame, action: Action) -> None:
        line = json.dumps(
            {"actor": live.state.current_player, "action": action.to_json()}
        )
        live.state, _ = apply(live.state, action)
        live.actions.append(action)
        with open(path, "a") as fh:
            fh.write(line + "\n")

    def _games_played(self, token: str) -> int:
        return int(
            self.db.execute(
                "SELECT games_played FROM keys WHERE token = ?", (token,)
            ).fetchone()[0]
        )

    def step(self, token: str, action_index: int) -> dict:
        with self.lock:
            row = self._key_row(token)
            if row[2] != "in-progress":
                raise ServiceError("no active session for this key", 403)
            live = self._live.get(token)
            game_index = self._games_played(token)
            if live is None:
                live = self._resume_game(token, game_index)
            if live.state.current_player != live.candidate_seat:
                raise ServiceError("not your turn", 409)
            cfg = live.state.config
            try:
                action = index_to_action(int(action_index), cfg)
            except Exception:
                raise ServiceError("action index out of range", 422)
            obs = observe(live.state, live.candidate_seat)
            mask = legal_action_mask(obs.legal_actions(), cfg)
            if not mask[int(action_index)]:
                live.retries_left -= 1
                if live.retries_left <= 0:
                    live.forfeited = True
                    return self._finish_game(token, live, game_index)
                return {
                    "error": "illegal action",
                    "retries_left": live.retries_left,
                    "observation": observation_payload(
                        obs, live.retries_left, game_index
                    ),
                }
            live.retries_left = MAX_ILLEGAL_RETRIES
            self._apply_and_log(token, live, action)
            self._advance_partners(token, live)
            if is_terminal(live.state) is not None:
                return self._finish_game(token, live, game_index)
            nxt = observe(live.state, live.candidate_seat)
            return {
                "observation": observation_payload(
                    nxt, live.retries_left, game_index
                )
            }

    def _resume_game(self, token: str, game_index: int) -> _LiveGame:
        """Rebuild in-memory state from the transcript after a crash."""
        row = self._key_row(token)
        entry = self.schedule(token)[game_index]
        cfg = self._game_config(row[5], entry["deck_seed"])
        state = new_game(cfg)
        live = _LiveGame(state=state, candidate_seat=entry["candidate_seat"])
        path = self.transcript_dir / f"{token}.{game_index}.jsonl"
        if path.exists():
            with open(path) as fh:
                for line in fh:
                    doc = json.loads(line)
                    action = Action.from_json(doc["action"])
                    live.state, _ = apply(live.state, action)
                    live.actions.append(action)
        self._live[token] = live
        self._advance_partners(token, live)
        return live

    def _finish_game(self, token: str, live: _LiveGame, game_index: int) -> dict:
        final = 0 if live.forfeited else score(live.state)
        with self.db:
            row = self.db.execute(
                "SELECT games_played, games_allowed FROM keys"
                " WHERE token = ?",
                (token,),
            ).fetchone()
            played, allowed = row
            if played >= allowed:
                raise ServiceError("game quota already exhausted", 403)
            self.db.execute(
                "INSERT OR REPLACE INTO game_results"
                " (token, game_index, score, forfeited) VALUES (?, ?, ?, ?)",
                (token, game_index, final, int(live.forfeited)),
            )
            self.db.execute(
                "UPDATE keys SET games_played = games_played + 1"
                " WHERE token = ?",
                (token,),
            )
        self._live.pop(token, None)
        played += 1
        if played >= allowed:
            self._complete_session(token)
            return {
                "game_result": {"game_index": game_index, "score": final},
                "session_complete": True,
                "results": self.results(token),
            }
        payload = self._begin_game(token, played)
        return {
            "game_result": {"game_index": game_index, "score": final},
            "session_complete": False,
            "observation": payload,
        }

    def _complete_session(self, token: str) -> None:
        row = self._key_row(token)
        scores = self._scores(token)
        with self.db:
            self.db.execute(
                "UPDATE keys SET status = 'exhausted' WHERE token = ?", (token,)
            )
            self.db.execute(
                "INSERT OR REPLACE INTO leaderboard"
                " (team, players, mean, median, ce) VALUES (?, ?, ?, ?, NULL)",
                (row[1], row[5], float(np.mean(scores)), float(np.median(scores))),
            )

    def _scores(self, token: str) -> list[int]:
        return [
            int(r[0])
            for r in self.db.execute(
                "SELECT score FROM game_results WHERE token = ?"
                " ORDER BY game_index",
                (token,),
            )
        ]

    # --- results / leaderboard / test set ----------------------------------------

    def results(self, token: str) -> dict:
        row = self._key_row(token)
        scores = self._scores(token)
        out = {
            "team": row[1],
            "status": row[2],
            "games_played": row[4],
            "games_allowed": row[3],
        }
        if scores:
            out.update(
                {
                    "mean": float(np.mean(scores)),
                    "median": float(np.median(scores)),
                    "zero_fraction": float(np.mean([s == 0 for s in scores])),
                }
            )
        return out

    def leaderboard(self) -> list[dict]:
        rows = self.db.execute(
            "SELECT team, players, method, mean, median, ce FROM leaderboard"
            " ORDER BY mean DESC"
        ).fetchall()
        return [
            {
                "team": r[0],
                "players": r[1],
                "method": r[2],
                "mean": r[3],
                "median": r[4],
                "ce": r[5],
            }
            for r in rows
        ]

    def grant_test_set(self, token: str) -> dict:
        with self.lock:
            row = self._key_row(token)
            if row[2] != "exhausted":
                raise ServiceError("session not complete", 403)
            with self.db:
                self.db.execute(
                    "INSERT OR IGNORE INTO grants (token) VALUES (?)", (token,)
                )
            if self.config.test_corpus_path is None:
                raise ServiceError("no test corpus configured", 503)
            return {"test_corpus": self.config.test_corpus_path.read_text()}

    def submit_prediction(self, token: str, step_log_probs: list[list[float]]) -> dict:
        """Scores per-step distributions against the held-out corpus labels."""
        from .engine import GameRecord, replay

        with self.lock:
            row = self._key_row(token)
            granted = self.db.execute(
                "SELECT 1 FROM grants WHERE token = ?", (token,)
            ).fetchone()
            if granted is None:
                raise ServiceError("test-set grant required first", 403)
            records = [
                GameRecord.from_text(line)
                for line in self.config.test_corpus_path.read_text().splitlines()
                if line.strip()
            ]
            labels: list[int] = []
            config = records[0].game_config()
            for record in records:
                _, trace = replay(record)
                for obs, action in zip(trace, record.actions):
                    labels.append(action_to_index(action, config))
            if len(step_log_probs) != len(labels):
                raise ServiceError(
                    f"submission covers {len(step_log_probs)} steps,"
                    f" {len(labels)} required"
                    f" (missing {len(labels) - len(step_log_probs)})",
                    422,
                )
            a = action_space_size(config)
            ce = 0.0
            for i, dist in enumerate(step_log_probs):
                probs = np.asarray(dist, np.float64)
                if probs.shape != (a,):
                    raise ServiceError(f"step {i}: expected {a} probabilities", 422)
                if abs(probs.sum() - 1.0) > 1e-6:
                    raise ServiceError(f"step {i}: distribution not normalized", 422)
                ce += -float(np.log(max(probs[labels[i]], 1e-300)))
            ce /= len(labels)
            with self.db:
                self.db.execute(
                    "UPDATE leaderboard SET ce = ? WHERE team = ?", (ce, row[1])
                )
            return {"cross_entropy": ce, "steps": len(labels)}

    # --- human play (non-leaderboard, no quota) ----------------------------------

    def _human_path(self, session_id: str) -> Path:
        return self.transcript_dir / f"human.{session_id}.jsonl"

    def _human_advance(self, session_id: str, live: _LiveGame) -> None:
        while (
            is_terminal(live.state) is None
            and live.state.current_player != live.candidate_seat
        ):
            obs = observe(live.state, live.state.current_player)
            action = self._partner(live.state.current_player).act(obs)
            self._log_to(self._human_path(session_id), live, action)

    def _human_row(self, session_id: str) -> sqlite3.Row:
        row = self.db.execute(
            "SELECT session_id, num_players, deck_seed, human_seat, status, score"
            " FROM human_sessions WHERE session_id = ?",
            (session_id,),
        ).fetchone()
        if row is None:
            raise ServiceError("unknown session", 401)
        return row

    def _human_live(self, session_id: str) -> _LiveGame:
        live = self._human.get(session_id)
        if live is not None:
            return live
        row = self._human_row(session_id)
        cfg = self._game_config(row[1], row[2])
        live = _LiveGame(state=new_game(cfg), candidate_seat=row[3])
        path = self._human_path(session_id)
        if path.exists():
            with open(path) as fh:
                for line in fh:
                    action = Action.from_json(json.loads(line)["action"])
                    live.state, _ = apply(live.state, action)
                    live.actions.append(action)
        self._human[session_id] = live
        self._human_advance(session_id, live)
        return live

    def _human_payload(self, session_id: str, live: _LiveGame) -> dict:
        if is_terminal(live.state) is not None:
            return self._human_finish(session_id, live)
        obs = observe(live.state, live.candidate_seat)
        return {
            "session_id": session_id,
            "done": False,
            "observation": observation_payload(obs, MAX_ILLEGAL_RETRIES, 0),
        }

    def _human_finish(self, session_id: str, live: _LiveGame) -> dict:
        final = score(live.state)
        cfg = live.state.config
        record = GameRecord(
            num_players=cfg.num_players,
            deck=build_deck(cfg),
            actions=list(live.actions),
            score=final,
        )
        with self.db:
            self.db.execute(
                "UPDATE human_sessions SET status = 'finished', score = ?"
                " WHERE session_id = ?",
                (final, session_id),
            )
        self._human.pop(session_id, None)
        return {
            "session_id": session_id,
            "done": True,
            "score": final,
            "record": record.to_json(),
        }

    def human_start(
        self,
        num_players: Optional[int] = None,
        seat: Optional[int] = None,
        seed: Optional[int] = None,
    ) -> dict:
        n = num_players or self.config.num_players
        if n not in (2, 3):
            raise ServiceError("num_players must be 2 or 3")
        human_seat = 0 if seat is None else int(seat)
        if not 0 <= human_seat < n:
            raise ServiceError("seat out of range", 422)
        deck_seed = int(secrets.randbits(60)) if seed is None else int(seed)
        session_id = secrets.token_urlsafe(16)
        with self.lock:
            with self.db:
                self.db.execute(
                    "INSERT INTO human_sessions"
                    " (session_id, num_players, deck_seed, human_seat)"
                    " VALUES (?, ?, ?, ?)",
                    (session_id, n, deck_seed, human_seat),
                )
            live = _LiveGame(
                state=new_game(self._game_config(n, deck_seed)),
                candidate_seat=human_seat,
            )
            self._human[session_id] = live
            self._human_advance(session_id, live)
            return self._human_payload(session_id, live)

    def human_state(self, session_id: str) -> dict:
        """Current view; a disconnected client resumes from here."""
        with self.lock:
            row = self._human_row(session_id)
            if row[4] == "finished":
                live = self._human_live(session_id)
                return self._human_finish(session_id, live)
            return self._human_payload(session_id, self._human_live(session_id))

    def human_step(self, session_id: str, action_index: int) -> dict:
        with self.lock:
            row = self._human_row(session_id)
            if row[4] != "playing":
                raise ServiceError("session already finished", 409)
            live = self._human_live(session_id)
            if live.state.current_player != live.candidate_seat:
                raise ServiceError("not your turn", 409)
            cfg = live.state.config
            try:
                action = index_to_action(int(action_index), cfg)
            except Exception:
                raise ServiceError("action index out of range", 422)
            obs = observe(live.state, live.candidate_seat)
            mask = legal_action_mask(obs.legal_actions(), cfg)
            if not mask[int(action_index)]:
                raise ServiceError(f"illegal action {int(action_index)}", 422)
            self._log_to(self._human_path(session_id), live, action)
            self._human_advance(session_id, live)
            return self._human_payload(session_id, live)


# --- web wrapper -----------------------------------------------------------------


def build_app(
    service: ChallengeService,
    admin_token: str,
    static_dir: Optional[Path] = None,
):
    from fastapi import FastAPI, HTTPException, WebSocketDisconnect

    app = FastAPI(title="hanabi challenge service")

    def run(fn, *args):
        try:
            return fn(*args)
        except ServiceError as e:
            raise HTTPException(status_code=e.status, detail=str(e))

    @app.post("/admin/register")
    async def register(request: Request):
        body = await request.json()
        if body.get("admin_token") != admin_token:
            raise HTTPException(status_code=401, detail="admin credential required")
        token = run(service.register, body["team"], body.get("num_players"))
        return {"api_key": token}

    @app.post("/session/start")
    async def start(request: Request):
        body = await request.json()
        return run(service.start_session, body["api_key"])

    @app.post("/session/step")
    async def step(request: Request):
        body = await request.json()
        return run(service.step, body["api_key"], body["action"])

    @app.get("/session/results")
    async def results(api_key: str):
        return run(service.results, api_key)

    @app.post("/testset/grant")
    async def grant(request: Request):
        body = await request.json()
        return run(service.grant_test_set, body["api_key"])

    @app.post("/testset/predict")
    async def predict(request: Request):
        body = await request.json()
        return run(service.submit_prediction, body["api_key"], body["distributions"])

    @app.get("/leaderboard")
    async def leaderboard():
        return {"entries": service.leaderboard()}

    @app.post("/human/start")
    async def human_start(request: Request):
        body = await request.json()
        return run(
            service.human_start,
            body.get("num_players"),
            body.get("seat"),
            body.get("seed"),
        )

    @app.get("/human/state")
    async def human_state(session_id: str):
        return run(service.human_state, session_id)

    @app.post("/human/step")
    async def human_step(request: Request):
        body = await request.json()
        return run(service.human_step, body["session_id"], body["action"])

    @app.websocket("/human/ws")
    async def human_ws(websocket: WebSocket, session_id: str):
        # streaming transport: push the view on connect, then once per action
        await websocket.accept()
        try:
            await websocket.send_json(service.human_state(session_id))
            while True:
                msg = await websocket.receive_json()
                try:
                    out = service.human_step(session_id, msg["action"])
                except ServiceError as e:
                    out = {"error": str(e), "status": e.status}
                await websocket.send_json(out)
                if out.get("done"):
                    break
        except WebSocketDisconnect:
            return

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/app", StaticFiles(directory=static_dir, html=True), name="app")

    return app
