"""HTTP session service for live dialogs and user studies.

Serves a trained policy to human users through a small JSON API. Each session
(keyed by a salted hash of the supplied username, so re-logging resumes it)
runs three dialogs whose study goals rotate through the categories
open / easy / hard, collects a post-dialog survey after each (perceived length
1-5, answer satisfaction 1-4) and a post-interaction usability/trust survey at
the end. Every mutation is appended exactly once to a JSON-lines event log.

Endpoints (all JSON):
    POST /api/sessions                      {username} -> session state
    GET  /api/sessions/{sid}                -> session state
    POST /api/sessions/{sid}/message        {text} -> agent turns
    POST /api/sessions/{sid}/found-answer   -> opens the post-dialog survey
    POST /api/sessions/{sid}/survey         post-dialog or post-interaction form
    GET  /api/sessions/{sid}/transcript     -> full transcript
"""

from __future__ import annotations

import hashlib
import json
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .encoding import TextEncoder
from .graph import (
    DialogGraph,
    GraphError,
    NodeKind,
    evaluate_branch,
    goal_candidates,
    parse_variable_value,
    shortest_trajectory,
)
from .policy import QNetwork, greedy_action
from .simulator import SimulatorConfig, build_observation

__all__ = ["create_app", "GOAL_CATEGORIES", "default_goal_texts"]

GOAL_CATEGORIES = ("open", "easy", "hard")
DIALOGS_PER_SESSION = 3


def default_goal_texts() -> dict[str, str]:
    from importlib.resources import files

    raw = files("ctskit.data").joinpath("goal_texts.json").read_text(encoding="utf-8")
    return json.loads(raw)


@dataclass
class DialogState:
    category: str
    goal: str
    goal_text: str
    assignments: dict[str, object]
    node: str
    initial_utterance: str = ""
    last_utterance: str = ""
    turns: int = 0
    shown: int = 0
    collected: dict[str, object] = field(default_factory=dict)
    awaiting_input: bool = False
    completed: bool = False


@dataclass
class Session:
    id: str
    dialog_index: int = 0
    stage: str = "dialog"  # dialog | post_dialog_survey | post_interaction_survey | done
    categories: tuple[str, ...] = GOAL_CATEGORIES
    dialog: DialogState | None = None
    transcript: list[dict] = field(default_factory=list)
    surveys: list[dict] = field(default_factory=list)


class CreateSession(BaseModel):
    username: str


class UserMessage(BaseModel):
    text: str


class SurveyBody(BaseModel):
    kind: str
    perceived_length: int | None = None
    answer_satisfaction: int | None = None
    usability: list[int] | None = None
    trust: list[int] | None = None


def _goal_pools(graph: DialogGraph) -> dict[str, list[str]]:
    """Split goal candidates by whether their trajectory crosses a variable node."""
    easy, hard = [], []
    for nid in goal_candidates(graph):
        try:
            steps = shortest_trajectory(graph, nid)
        except GraphError:
            continue
        crosses = any(
            graph.nodes[s.node].kind == NodeKind.VARIABLE for s in steps
        ) or graph.nodes[nid].kind == NodeKind.VARIABLE
        (hard if crosses else easy).append(nid)
    return {"open": easy + hard, "easy": easy, "hard": hard}


def create_app(
    graph: DialogGraph,
    net: QNetwork,
    encoder: TextEncoder,
    sim_config: SimulatorConfig | None = None,
    salt: str = "ctskit",
    log_path=None,
    goal_texts: dict[str, str] | None = None,
    static_dir=None,
    goal_seed: int = 0,
) -> FastAPI:
    sim_config = sim_config or SimulatorConfig()
    goal_texts = goal_texts or default_goal_texts()
    turn_norm = 1.0 / sim_config.max_turns
    pools = _goal_pools(graph)
    if not pools["hard"]:
        # graphs without variable nodes cannot produce personalized goals;
        # the hard slot falls back to concrete-question goals
        pools["hard"] = list(pools["easy"])

    app = FastAPI(title="ctskit session service")
    sessions: dict[str, Session] = {}
    locks: dict[str, threading.Lock] = {}
    registry_lock = threading.Lock()
    counter = {"sessions": 0}
    log_file = Path(log_path) if log_path else None
    log_lock = threading.Lock()
    goal_rng = random.Random(goal_seed)

    def log_event(event: str, session_id: str, payload: dict) -> None:
        if log_file is None:
            return
        record = {"event": event, "session": session_id, "ts": time.time(), **payload}
        with log_lock:
            with open(log_file, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")

    def get_session(session_id: str) -> Session:
        session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session id {session_id}")
        return session

    def sample_assignments() -> dict[str, object]:
        assignments: dict[str, object] = {}
        for spec in graph.variables.values():
            if spec.value_type == "boolean":
                assignments[spec.name] = goal_rng.random() < 0.5
            elif spec.value_type == "enumeration":
                assignments[spec.name] = goal_rng.choice(list(spec.values))
            else:
                constants = sorted(
                    {
                        c.constant
                        for node in graph.nodes.values()
                        for c in node.branches
                        if c.variable == spec.name and isinstance(c.constant, (int, float))
                    }
                )
                pool = [v for c in constants for v in (c - 1, c, c + 1)] or [0, 1]
                assignments[spec.name] = goal_rng.choice(sorted(set(pool)))
        return assignments

    def start_dialog(session: Session) -> None:
        category = session.categories[session.dialog_index]
        goal = goal_rng.choice(pools[category])
        assignments = sample_assignments()
        node = graph.nodes[goal]
        described = goal_texts[category].format(
            goal_text=node.text,
            assignments=", ".join(f"{k} = {v}" for k, v in assignments.items()) or "none",
        )
        session.dialog = DialogState(
            category=category,
            goal=goal,
            goal_text=described,
            assignments=assignments,
            node=graph.start,
        )
        session.stage = "dialog"
        log_event(
            "dialog_started",
            session.id,
            {"dialog_index": session.dialog_index, "category": category, "goal": goal},
        )

    def session_view(session: Session) -> dict:
        dialog = session.dialog
        return {
            "session_id": session.id,
            "stage": session.stage,
            "dialog_index": session.dialog_index,
            "dialogs_total": DIALOGS_PER_SESSION,
            "goal": None
            if dialog is None
            else {"category": dialog.category, "text": dialog.goal_text},
            "awaiting_input": dialog.awaiting_input if dialog else False,
            "transcript": session.transcript,
        }

    def agent_burst(session: Session) -> list[dict]:
        """Let the policy act until it needs user input or shows a leaf."""
        dialog = session.dialog
        turns: list[dict] = []
        for _ in range(2 * sim_config.max_turns):
            if dialog.turns >= sim_config.max_turns:
                break
            node = graph.nodes[dialog.node]
            obs = build_observation(
                encoder,
                dialog.initial_utterance,
                dialog.last_utterance,
                node,
                dialog.turns,
                dialog.shown,
            )
            action, _ = greedy_action(net, obs, turn_norm)
            dialog.turns += 1
            if action == 0:
                dialog.shown += 1
                turn = {
                    "speaker": "agent",
                    "text": node.text,
                    "node": node.id,
                    "prompt": node.requires_input,
                }
                turns.append(turn)
                session.transcript.append(turn)
                log_event("agent_turn", session.id, {"node": node.id, "text": node.text})
                if node.requires_input:
                    dialog.awaiting_input = True
                    return turns
                if not node.answers:
                    dialog.awaiting_input = True  # leaf: nothing left to traverse
                    return turns
            else:
                target = graph.nodes[node.answers[action - 1].target]
                seen = set()
                while target.kind == NodeKind.LOGIC and target.id not in seen:
                    seen.add(target.id)
                    target = graph.nodes[evaluate_branch(target, dialog.collected)]
                dialog.node = target.id
        dialog.awaiting_input = True
        return turns

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok"}

    @app.get("/api/study-config")
    def study_config() -> dict:
        # all user-facing text ships from the backend so the client stays
        # domain-agnostic
        from importlib.resources import files

        raw = files("ctskit.data").joinpath("study_texts.json").read_text(encoding="utf-8")
        config = json.loads(raw)
        config["dialogs_per_session"] = DIALOGS_PER_SESSION
        return config

    @app.post("/api/sessions")
    def create_session(body: CreateSession) -> dict:
        username = body.username.strip()
        if not username:
            raise HTTPException(status_code=422, detail="username must be non-empty")
        session_id = hashlib.sha256((salt + username).encode("utf-8")).hexdigest()
        with registry_lock:
            session = sessions.get(session_id)
            if session is None:
                rotation = counter["sessions"] % len(GOAL_CATEGORIES)
                categories = GOAL_CATEGORIES[rotation:] + GOAL_CATEGORIES[:rotation]
                session = Session(id=session_id, categories=categories)
                sessions[session_id] = session
                locks[session_id] = threading.Lock()
                counter["sessions"] += 1
                log_event("session_created", session_id, {"categories": list(categories)})
                start_dialog(session)
        return session_view(session)

    @app.get("/api/sessions/{session_id}")
    def read_session(session_id: str) -> dict:
        return session_view(get_session(session_id))

    @app.post("/api/sessions/{session_id}/message")
    def post_message(session_id: str, body: UserMessage) -> dict:
        session = get_session(session_id)
        with locks[session_id]:
            if session.stage != "dialog" or session.dialog is None:
                raise HTTPException(status_code=409, detail="session is not in a dialog stage")
            text = body.text.strip()
            if not text:
                raise HTTPException(status_code=422, detail="message text must be non-empty")
            dialog = session.dialog
            entry = {"speaker": "user", "text": text}
            session.transcript.append(entry)
            log_event("user_message", session_id, {"text": text})

            node = graph.nodes[dialog.node]
            if not dialog.initial_utterance:
                dialog.initial_utterance = text
            dialog.last_utterance = text
            if dialog.awaiting_input and node.kind == NodeKind.VARIABLE and node.variable:
                try:
                    value = parse_variable_value(text, node.variable, encoder)
                    dialog.collected[node.variable.name] = value
                except GraphError:
                    pass  # unparseable reply: leave the variable uncollected
            dialog.awaiting_input = False
            turns = agent_burst(session)
            return {
                "turns": turns,
                "awaiting_input": dialog.awaiting_input,
                "dialog_index": session.dialog_index,
                "stage": session.stage,
            }

    @app.post("/api/sessions/{session_id}/found-answer")
    def found_answer(session_id: str) -> dict:
        session = get_session(session_id)
        with locks[session_id]:
            if session.stage != "dialog" or session.dialog is None:
                raise HTTPException(status_code=409, detail="no dialog in progress")
            session.dialog.completed = True
            session.stage = "post_dialog_survey"
            log_event(
                "dialog_completed",
                session_id,
                {
                    "dialog_index": session.dialog_index,
                    "category": session.dialog.category,
                    "perceived_length": session.dialog.shown,
                },
            )
        return session_view(session)

    @app.post("/api/sessions/{session_id}/survey")
    def post_survey(session_id: str, body: SurveyBody) -> dict:
        session = get_session(session_id)
        with locks[session_id]:
            if body.kind == "post_dialog":
                if session.stage != "post_dialog_survey":
                    raise HTTPException(
                        status_code=409, detail="post-dialog survey is not open yet"
                    )
                if body.perceived_length is None or not 1 <= body.perceived_length <= 5:
                    raise HTTPException(
                        status_code=422, detail="perceived_length must be in 1..5"
                    )
                if body.answer_satisfaction is None or not 1 <= body.answer_satisfaction <= 4:
                    raise HTTPException(
                        status_code=422, detail="answer_satisfaction must be in 1..4"
                    )
                record = {
                    "kind": "post_dialog",
                    "dialog_index": session.dialog_index,
                    "perceived_length": body.perceived_length,
                    "answer_satisfaction": body.answer_satisfaction,
                }
                session.surveys.append(record)
                log_event("survey_submitted", session_id, record)
                session.dialog_index += 1
                if session.dialog_index < DIALOGS_PER_SESSION:
                    start_dialog(session)
                else:
                    session.dialog = None
                    session.stage = "post_interaction_survey"
                return session_view(session)

            if body.kind == "post_interaction":
                if session.stage != "post_interaction_survey":
                    raise HTTPException(
                        status_code=409, detail="post-interaction survey is not open yet"
                    )
                if not body.usability or not body.trust:
                    raise HTTPException(
                        status_code=422, detail="usability and trust item arrays are required"
                    )
                record = {
                    "kind": "post_interaction",
                    "usability": body.usability,
                    "trust": body.trust,
                }
                session.surveys.append(record)
                log_event("survey_submitted", session_id, record)
                session.stage = "done"
                log_event("session_completed", session_id, {})
                return session_view(session)

            raise HTTPException(status_code=422, detail=f"unknown survey kind {body.kind!r}")

    @app.get("/api/sessions/{session_id}/transcript")
    def transcript(session_id: str) -> dict:
        session = get_session(session_id)
        return {
            "session_id": session.id,
            "transcript": session.transcript,
            "surveys": session.surveys,
            "stage": session.stage,
        }

    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")
    return app
