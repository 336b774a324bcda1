"""Simulated user and dialog environment.

Each episode samples a hidden goal node and an interaction mode. In free mode
the opener is a concrete question from the goal node's bank; in guided mode it
is a vague request and the user instead steers the agent by answering the
questions it asks. The agent acts with ASK (show the current node, possibly
eliciting a reply) or SKIP(i) (move silently along answer edge i). Success
means the goal node's text was actually shown.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

import numpy as np

from .encoding import TextEncoder
from .graph import (
    Answer,
    DialogGraph,
    DatasetSplit,
    GraphError,
    NodeKind,
    TrajectoryStep,
    UnreachableGoalError,
    evaluate_branch,
    goal_candidates,
    shortest_trajectory,
)

__all__ = [
    "DialogMode",
    "SimulatorConfig",
    "UserGoal",
    "Observation",
    "StepResult",
    "UtteranceBank",
    "DialogEnv",
    "ACTION_ASK",
    "build_observation",
    "default_guided_openers",
    "perceived_length",
    "episode_to_jsonl",
]

ACTION_ASK = 0


class DialogMode:
    GUIDED = "guided"
    FREE = "free"


@dataclass(frozen=True)
class SimulatorConfig:
    r_goal: float = 30.0
    r_correct_step: float = 1.0
    r_wrong_step: float = -1.0
    r_ask_free_nongoal: float = -0.5
    max_turns: int = 50
    free_mode_probability: float = 0.5
    keyword_response_probability: float = 0.3

    def __post_init__(self):
        if self.r_goal <= 0:
            raise ValueError("r_goal must be positive")
        if self.r_wrong_step >= 0:
            raise ValueError("r_wrong_step must be negative")
        if self.max_turns <= 0:
            raise ValueError("max_turns must be positive")


@dataclass
class UserGoal:
    goal: str
    mode: str
    assignments: dict[str, object]
    trajectory: list[TrajectoryStep]
    initial_utterance: str
    response_source: dict[str, str] = field(default_factory=dict)


@dataclass(eq=False)
class Observation:
    """Agent-visible dialog state. A pure function of the utterances, the
    current node's texts, and the turn counters; the goal never appears."""

    initial_vec: np.ndarray
    last_vec: np.ndarray
    node_vec: np.ndarray
    action_vecs: tuple[np.ndarray, ...]
    mask: tuple[bool, ...]
    turn_index: int
    nodes_shown: int
    _row_cache: tuple | None = field(default=None, repr=False)

    def state_row(self, turn_norm: float, np_dtype) -> np.ndarray:
        """Concatenated state vector (3d + 2 scalars), cached per observation."""
        if self._row_cache is not None:
            cached_norm, cached_dtype, row = self._row_cache
            if cached_norm == turn_norm and cached_dtype == np_dtype:
                return row
        d = self.initial_vec.shape[0]
        row = np.empty(3 * d + 2, dtype=np_dtype)
        row[:d] = self.initial_vec
        row[d : 2 * d] = self.last_vec
        row[2 * d : 3 * d] = self.node_vec
        row[3 * d] = self.turn_index * turn_norm
        row[3 * d + 1] = self.nodes_shown * turn_norm
        self._row_cache = (turn_norm, np_dtype, row)
        return row


@dataclass(frozen=True)
class StepResult:
    observation: Observation | None
    reward: float
    done: bool
    info: dict


def build_observation(
    encoder: TextEncoder,
    initial_utterance: str,
    last_utterance: str,
    node,
    turn_index: int,
    nodes_shown: int,
) -> Observation:
    """Encode the visible dialog state; one mask slot for ASK plus one per answer."""
    action_vecs = tuple(encoder.encode(a.prototype_text) for a in node.answers)
    return Observation(
        initial_vec=encoder.encode(initial_utterance),
        last_vec=encoder.encode(last_utterance),
        node_vec=encoder.encode(node.text),
        action_vecs=action_vecs,
        mask=tuple([True] * (1 + len(node.answers))),
        turn_index=turn_index,
        nodes_shown=nodes_shown,
    )


def default_guided_openers() -> list[str]:
    from importlib.resources import files

    data = files("ctskit.data").joinpath("guided_openers.json").read_text(encoding="utf-8")
    return json.loads(data)


class UtteranceBank:
    """Per-node question pools and per-answer response pools.

    Built from the banks inlined in the graph file; a split file, when given,
    replaces them entirely (e.g. to train on generated data only).
    """

    def __init__(self, graph: DialogGraph, split: DatasetSplit | None = None):
        self._questions: dict[str, list[str]] = {}
        self._responses: dict[str, list[str]] = {}
        self._keyword_responses: dict[str, list[str]] = {}
        if split is None:
            for node in graph.nodes.values():
                if node.questions:
                    self._questions[node.id] = list(node.questions)
                for answer in node.answers:
                    if answer.paraphrases:
                        self._responses[answer.id] = list(answer.paraphrases)
        else:
            self._questions = {k: list(v) for k, v in split.questions.items() if v}
            self._responses = {k: list(v) for k, v in split.paraphrases.items() if v}
            self._keyword_responses = {
                k: list(v) for k, v in split.keyword_paraphrases.items() if v
            }
        self._graph = graph

    def questions_for(self, node_id: str) -> list[str]:
        return self._questions.get(node_id, [])

    def responses_for(self, answer: Answer, keyword: bool = False) -> list[str]:
        if keyword:
            pool = self._keyword_responses.get(answer.id)
            if pool:
                return pool
        pool = self._responses.get(answer.id)
        return pool if pool else [answer.prototype_text]

    def has_keyword_pool(self, answer: Answer) -> bool:
        return bool(self._keyword_responses.get(answer.id))


def _render_value(value: object) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    return str(value)


class DialogEnv:
    """Single-threaded dialog episode environment with a seeded RNG."""

    def __init__(
        self,
        graph: DialogGraph,
        encoder: TextEncoder,
        config: SimulatorConfig | None = None,
        bank: UtteranceBank | None = None,
        seed: int = 0,
        guided_openers: list[str] | None = None,
        mode_override: str | None = None,
    ):
        self.graph = graph
        self.encoder = encoder
        self.config = config or SimulatorConfig()
        self.bank = bank or UtteranceBank(graph)
        self.rng = random.Random(seed)
        self.guided_openers = guided_openers or default_guided_openers()
        self.mode_override = mode_override
        self._candidates = goal_candidates(graph)

        self.user_goal: UserGoal | None = None
        self.done = True
        self.current: str = graph.start
        self.turn_index = 0
        self.nodes_shown = 0
        self.goal_was_shown = False
        self.last_utterance = ""
        self.collected: dict[str, object] = {}
        self.plan: list[TrajectoryStep] = []
        self.episode_log: list[dict] = []

    # -- episode lifecycle ---------------------------------------------------

    def _sample_assignments(self) -> dict[str, object]:
        assignments: dict[str, object] = {}
        for spec in self.graph.variables.values():
            if spec.value_type == "boolean":
                assignments[spec.name] = self.rng.random() < 0.5
            elif spec.value_type == "enumeration":
                assignments[spec.name] = self.rng.choice(list(spec.values))
            else:
                # numbers have no declared range: sample around the constants
                # the graph actually tests so every branch stays reachable
                constants = sorted(
                    {
                        c.constant
                        for node in self.graph.nodes.values()
                        for c in node.branches
                        if c.variable == spec.name and isinstance(c.constant, (int, float))
                    }
                )
                pool: list[float] = []
                for const in constants:
                    pool.extend([const - 1, const, const + 1])
                if not pool:
                    pool = [0, 1]
                assignments[spec.name] = self.rng.choice(sorted(set(pool)))
        return assignments

    def reset(self) -> Observation:
        mode = self.mode_override or (
            DialogMode.FREE
            if self.rng.random() < self.config.free_mode_probability
            else DialogMode.GUIDED
        )
        if mode == DialogMode.FREE:
            eligible = [nid for nid in self._candidates if self.bank.questions_for(nid)]
            if not eligible:
                raise GraphError("free mode needs at least one goal candidate with questions")
        else:
            eligible = self._candidates
        goal = self.rng.choice(eligible)
        # the simulated user's attributes must make their own goal reachable;
        # goals behind logic branches need compatible variable values
        trajectory = None
        for _ in range(100):
            assignments = self._sample_assignments()
            try:
                trajectory = shortest_trajectory(self.graph, goal, assignments)
                break
            except UnreachableGoalError:
                continue
        if trajectory is None:
            raise GraphError(
                f"goal {goal!r} is unreachable under every sampled variable assignment"
            )
        if mode == DialogMode.FREE:
            opener = self.rng.choice(self.bank.questions_for(goal))
        else:
            opener = self.rng.choice(self.guided_openers)

        self.user_goal = UserGoal(
            goal=goal,
            mode=mode,
            assignments=assignments,
            trajectory=trajectory,
            initial_utterance=opener,
        )
        for step in trajectory:
            node = self.graph.nodes[step.node]
            if node.requires_input:
                self.user_goal.response_source[node.id] = self._pick_source(step.answer)

        self.done = False
        self.current = self.graph.start
        self.turn_index = 0
        self.nodes_shown = 0
        self.goal_was_shown = False
        self.last_utterance = opener
        self.collected = {}
        self.plan = list(trajectory)
        self.episode_log = []
        return self._observe()

    def _pick_source(self, answer: Answer | None) -> str:
        use_keyword = (
            answer is not None
            and self.bank.has_keyword_pool(answer)
            and self.rng.random() < self.config.keyword_response_probability
        )
        return "keyword" if use_keyword else "standard"

    def _observe(self) -> Observation:
        assert self.user_goal is not None
        return build_observation(
            self.encoder,
            self.user_goal.initial_utterance,
            self.last_utterance,
            self.graph.nodes[self.current],
            self.turn_index,
            self.nodes_shown,
        )

    @property
    def mode(self) -> str:
        assert self.user_goal is not None
        return self.user_goal.mode

    @property
    def action_count(self) -> int:
        return 1 + len(self.graph.nodes[self.current].answers)

    def get_state(self) -> dict:
        """Snapshot of the mutable episode state (for resumable training)."""
        return {
            "rng": self.rng.getstate(),
            "user_goal": self.user_goal,
            "done": self.done,
            "current": self.current,
            "turn_index": self.turn_index,
            "nodes_shown": self.nodes_shown,
            "goal_was_shown": self.goal_was_shown,
            "last_utterance": self.last_utterance,
            "collected": dict(self.collected),
            "plan": list(self.plan),
            "episode_log": list(self.episode_log),
        }

    def set_state(self, state: dict) -> None:
        self.rng.setstate(state["rng"])
        self.user_goal = state["user_goal"]
        self.done = state["done"]
        self.current = state["current"]
        self.turn_index = state["turn_index"]
        self.nodes_shown = state["nodes_shown"]
        self.goal_was_shown = state["goal_was_shown"]
        self.last_utterance = state["last_utterance"]
        self.collected = dict(state["collected"])
        self.plan = list(state["plan"])
        self.episode_log = list(state["episode_log"])

    # -- stepping ------------------------------------------------------------

    def _reply_for(self, node, answer: Answer) -> str:
        source = self.user_goal.response_source.get(node.id)
        if source is None:
            source = self._pick_source(answer)
            self.user_goal.response_source[node.id] = source
        pool = self.bank.responses_for(answer, keyword=source == "keyword")
        return self.rng.choice(pool)

    def _advance_through_logic(self, node_id: str) -> str:
        node = self.graph.nodes[node_id]
        visited = set()
        while node.kind == NodeKind.LOGIC:
            if node.id in visited:
                raise GraphError(f"logic nodes form a cycle at {node.id!r}")
            visited.add(node.id)
            node = self.graph.nodes[evaluate_branch(node, self.collected)]
        return node.id

    def step(self, action: int) -> StepResult:
        if self.done or self.user_goal is None:
            raise RuntimeError("episode is finished; call reset() first")
        node = self.graph.nodes[self.current]
        if not 0 <= action <= len(node.answers):
            raise IndexError(f"action {action} is masked at node {node.id!r}")

        goal = self.user_goal.goal
        mode = self.user_goal.mode
        reward = 0.0
        utterance: str | None = None
        asked = action == ACTION_ASK
        correct_transition = True
        reached_goal = False

        if asked:
            self.nodes_shown += 1
            if node.id == goal:
                reward += self.config.r_goal
                reached_goal = True
                self.goal_was_shown = True
                self.done = True
            else:
                if mode == DialogMode.FREE:
                    reward += self.config.r_ask_free_nongoal
                if node.kind == NodeKind.VARIABLE:
                    value = self.user_goal.assignments[node.variable.name]
                    self.collected[node.variable.name] = value
                    utterance = _render_value(value)
                    self.last_utterance = utterance
                elif node.kind == NodeKind.QUESTION and self.plan and self.plan[0].node == node.id:
                    answer = self.plan[0].answer
                    if answer is not None:
                        utterance = self._reply_for(node, answer)
                        self.last_utterance = utterance
        else:
            landing = self._advance_through_logic(node.answers[action - 1].target)
            self.current = landing
            on_plan = next(
                (k for k, step in enumerate(self.plan) if step.target == landing), None
            )
            if on_plan is not None:
                reward += self.config.r_correct_step
                self.plan = self.plan[on_plan + 1 :]
            else:
                reward += self.config.r_wrong_step
                correct_transition = False
                try:
                    self.plan = shortest_trajectory(
                        self.graph, goal, self.user_goal.assignments, source=landing
                    )
                except GraphError:
                    self.done = True  # goal can no longer be reached

        self.turn_index += 1
        if not self.done and self.turn_index >= self.config.max_turns:
            self.done = True

        self.episode_log.append(
            {
                "mode": mode,
                "node": node.id,
                "action": "ask" if asked else f"skip:{action - 1}",
                "utterance": utterance,
                "reward": reward,
                "shown": asked,
            }
        )
        return StepResult(
            observation=None if self.done else self._observe(),
            reward=reward,
            done=self.done,
            info={
                "reached_goal": reached_goal,
                "asked": asked,
                "correct_transition": correct_transition,
            },
        )


def perceived_length(records: list[dict]) -> int:
    """Number of nodes actually shown to the user (ASK count)."""
    return sum(1 for r in records if r["action"] == "ask" and r.get("shown", True))


def episode_to_jsonl(records: list[dict]) -> str:
    """One JSON line per turn: {mode, node, action, utterance, reward, shown}."""
    return "\n".join(json.dumps(r, ensure_ascii=False) for r in records)
