"""Dialog tree model: parsing, validation, statistics, and path planning.

A dialog graph is an expert-authored tree (general digraphs are tolerated) of
typed nodes. ``info`` and ``question`` nodes carry a system utterance and a
bank of user questions answerable by that utterance; ``question`` and
``variable`` nodes expect user input; ``logic`` nodes branch silently on
collected variable values. Graphs are immutable after parsing and safe to
share across threads.
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field

__all__ = [
    "NodeKind",
    "VariableSpec",
    "Condition",
    "Answer",
    "DialogNode",
    "DialogGraph",
    "GraphStats",
    "DatasetSplit",
    "TrajectoryStep",
    "GraphError",
    "GraphParseError",
    "UnreachableGoalError",
    "parse_graph",
    "load_graph",
    "serialize_graph",
    "compute_stats",
    "shortest_trajectory",
    "goal_candidates",
    "evaluate_branch",
    "parse_variable_value",
    "load_split",
    "serialize_split",
]

NODE_KINDS = ("start", "info", "question", "variable", "logic")
INPUT_KINDS = ("question", "variable")
COMPARATORS = ("==", "!=", "<", "<=", ">", ">=")
VALUE_TYPES = ("boolean", "number", "enumeration")


class GraphError(ValueError):
    """Structural problem in a dialog graph or split file."""


class GraphParseError(GraphError):
    """Document is not valid JSON or violates the dataset schema."""


class UnreachableGoalError(GraphError):
    """Requested goal cannot be reached under the given variable assignments."""


class NodeKind:
    START = "start"
    INFO = "info"
    QUESTION = "question"
    VARIABLE = "variable"
    LOGIC = "logic"


@dataclass(frozen=True)
class VariableSpec:
    name: str
    value_type: str
    values: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.name:
            raise GraphError("variable name must be non-empty")
        if self.value_type not in VALUE_TYPES:
            raise GraphError(f"variable {self.name!r}: unknown type {self.value_type!r}")
        if self.value_type == "enumeration" and not self.values:
            raise GraphError(f"variable {self.name!r}: enumeration needs at least one value")


@dataclass(frozen=True)
class Condition:
    variable: str
    comparator: str
    constant: object
    target: str

    def __post_init__(self):
        if self.comparator not in COMPARATORS:
            raise GraphError(f"unknown comparator {self.comparator!r}")

    def matches(self, value: object) -> bool:
        if value is None:
            return False
        op = self.comparator
        if op == "==":
            return value == self.constant
        if op == "!=":
            return value != self.constant
        return {
            "<": value < self.constant,
            "<=": value <= self.constant,
            ">": value > self.constant,
            ">=": value >= self.constant,
        }[op]


@dataclass(frozen=True)
class Answer:
    id: str
    prototype_text: str
    target: str
    paraphrases: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.prototype_text:
            raise GraphError(f"answer {self.id!r}: prototype text must be non-empty")


@dataclass(frozen=True)
class DialogNode:
    id: str
    kind: str
    text: str = ""
    answers: tuple[Answer, ...] = ()
    questions: tuple[str, ...] = ()
    variable: VariableSpec | None = None
    branches: tuple[Condition, ...] = ()
    default_target: str | None = None

    @property
    def requires_input(self) -> bool:
        return self.kind in INPUT_KINDS


@dataclass(frozen=True)
class GraphStats:
    node_count: int
    tree_depth: int
    max_node_degree: int
    question_count: int
    avg_questions_per_answerable_node: float
    paraphrase_count: int
    avg_paraphrases_per_answer: float

    def as_dict(self) -> dict:
        return {
            "node_count": self.node_count,
            "tree_depth": self.tree_depth,
            "max_node_degree": self.max_node_degree,
            "question_count": self.question_count,
            "avg_questions_per_answerable_node": self.avg_questions_per_answerable_node,
            "paraphrase_count": self.paraphrase_count,
            "avg_paraphrases_per_answer": self.avg_paraphrases_per_answer,
        }


@dataclass(frozen=True)
class TrajectoryStep:
    """One hop of a planned path: the node left and the edge taken.

    ``answer`` is None for logic hops, where the branch is picked by the
    variable assignments rather than by an agent action.
    """

    node: str
    target: str
    answer: Answer | None = None


@dataclass
class DatasetSplit:
    """Question/paraphrase banks keyed by node/answer id, separate from the graph."""

    questions: dict[str, list[str]] = field(default_factory=dict)
    paraphrases: dict[str, list[str]] = field(default_factory=dict)
    keyword_paraphrases: dict[str, list[str]] = field(default_factory=dict)

    def question_count(self) -> int:
        return sum(len(v) for v in self.questions.values())

    def paraphrase_count(self) -> int:
        return sum(len(v) for v in self.paraphrases.values()) + sum(
            len(v) for v in self.keyword_paraphrases.values()
        )


class DialogGraph:
    """Validated dialog tree. Immutable after construction."""

    def __init__(self, nodes: list[DialogNode], start: str, variables: list[VariableSpec]):
        self.nodes: dict[str, DialogNode] = {}
        for node in nodes:
            if node.id in self.nodes:
                raise GraphError(f"duplicate node id {node.id!r}")
            self.nodes[node.id] = node
        self.start = start
        self.variables = {spec.name: spec for spec in variables}
        self._validate()

    def node(self, node_id: str) -> DialogNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise GraphError(f"unknown node id {node_id!r}") from None

    def successors(self, node: DialogNode) -> list[str]:
        """All edge targets, ignoring variable assignments."""
        if node.kind == NodeKind.LOGIC:
            targets = [c.target for c in node.branches]
            if node.default_target:
                targets.append(node.default_target)
            return targets
        return [a.target for a in node.answers]

    def _validate(self):
        if self.start not in self.nodes:
            raise GraphError(f"start node {self.start!r} does not exist")
        start_kinds = [n.id for n in self.nodes.values() if n.kind == NodeKind.START]
        if start_kinds != [self.start]:
            raise GraphError(
                f"exactly one start-kind node matching the start id is required, found {start_kinds}"
            )

        seen_answer_ids: set[str] = set()
        for node in self.nodes.values():
            self._validate_node(node, seen_answer_ids)

        reachable = self.reachable_from(self.start)
        unreachable = [nid for nid in self.nodes if nid not in reachable]
        if unreachable:
            warnings.warn(f"unreachable nodes: {sorted(unreachable)}", stacklevel=3)

        self._validate_variable_collection(reachable)

    def _validate_node(self, node: DialogNode, seen_answer_ids: set[str]):
        if not node.id:
            raise GraphError("node id must be non-empty")
        if node.kind not in NODE_KINDS:
            raise GraphError(f"node {node.id!r}: unknown kind {node.kind!r}")
        if node.kind == NodeKind.START and node.questions:
            raise GraphError(f"start node {node.id!r} must not carry questions")
        if node.kind == NodeKind.LOGIC:
            if node.text:
                raise GraphError(f"logic node {node.id!r} must have empty text")
            if node.answers:
                raise GraphError(f"logic node {node.id!r} must not have answers")
            if not node.branches or not node.default_target:
                raise GraphError(f"logic node {node.id!r} needs >=1 branch and a default target")
        if node.kind == NodeKind.VARIABLE:
            if len(node.answers) != 1:
                raise GraphError(f"variable node {node.id!r} must have exactly one outgoing edge")
            if node.variable is None:
                raise GraphError(f"variable node {node.id!r} is missing its variable spec")
        if node.kind in (NodeKind.INFO, NodeKind.QUESTION) and not node.text:
            raise GraphError(f"{node.kind} node {node.id!r} must have non-empty text")

        for answer in node.answers:
            if answer.id in seen_answer_ids:
                raise GraphError(f"duplicate answer id {answer.id!r}")
            seen_answer_ids.add(answer.id)
            if answer.target not in self.nodes:
                raise GraphError(
                    f"node {node.id!r}: answer {answer.id!r} targets missing node {answer.target!r}"
                )
        for cond in node.branches:
            if cond.target not in self.nodes:
                raise GraphError(
                    f"logic node {node.id!r}: branch targets missing node {cond.target!r}"
                )
            spec = self.variables.get(cond.variable)
            if spec is None:
                raise GraphError(
                    f"logic node {node.id!r}: condition uses undeclared variable {cond.variable!r}"
                )
            if cond.comparator in ("<", "<=", ">", ">=") and spec.value_type != "number":
                raise GraphError(
                    f"logic node {node.id!r}: ordering comparator on non-number variable {cond.variable!r}"
                )
        if node.default_target and node.default_target not in self.nodes:
            raise GraphError(
                f"logic node {node.id!r}: default targets missing node {node.default_target!r}"
            )

    def reachable_from(self, node_id: str, *, skip: set[str] | None = None) -> set[str]:
        seen = set()
        frontier = [node_id]
        while frontier:
            current = frontier.pop()
            if current in seen or (skip and current in skip):
                continue
            seen.add(current)
            frontier.extend(self.successors(self.nodes[current]))
        return seen

    def _validate_variable_collection(self, reachable: set[str]):
        # A logic node must not be hittable before its variables could have
        # been collected: removing all collectors of v must cut the node off.
        for node in self.nodes.values():
            if node.kind != NodeKind.LOGIC or node.id not in reachable:
                continue
            for var in {c.variable for c in node.branches}:
                collectors = {
                    n.id
                    for n in self.nodes.values()
                    if n.kind == NodeKind.VARIABLE and n.variable and n.variable.name == var
                }
                if node.id in self.reachable_from(self.start, skip=collectors):
                    raise GraphError(
                        f"logic node {node.id!r} is reachable before variable {var!r} is collected"
                    )


def _dedupe_casefold(items: list[str]) -> tuple[str, ...]:
    seen = set()
    out = []
    for item in items:
        key = item.casefold().strip()
        if key and key not in seen:
            seen.add(key)
            out.append(item)
    return tuple(out)


def parse_graph(document: str) -> DialogGraph:
    """Parse and validate a dataset JSON document into a :class:`DialogGraph`."""
    try:
        data = json.loads(document)
    except json.JSONDecodeError as exc:
        raise GraphParseError(
            f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(data, dict):
        raise GraphParseError("top level must be a JSON object")
    for key in ("nodes", "start"):
        if key not in data:
            raise GraphParseError(f"missing top-level key {key!r}")

    variables: dict[str, VariableSpec] = {}
    for raw in data.get("variables", []):
        spec = VariableSpec(
            name=raw.get("name", ""),
            value_type=raw.get("type", ""),
            values=tuple(raw.get("values", ())),
        )
        if spec.name in variables:
            raise GraphParseError(f"duplicate variable declaration {spec.name!r}")
        variables[spec.name] = spec

    nodes: list[DialogNode] = []
    for raw in data["nodes"]:
        node_id = raw.get("id", "")
        var_spec = None
        if "variable" in raw and raw["variable"] is not None:
            rv = raw["variable"]
            var_spec = VariableSpec(
                name=rv.get("name", ""),
                value_type=rv.get("type", ""),
                values=tuple(rv.get("values", ())),
            )
            declared = variables.get(var_spec.name)
            if declared is None:
                variables[var_spec.name] = var_spec
            elif declared != var_spec:
                raise GraphParseError(
                    f"node {node_id!r}: variable {var_spec.name!r} conflicts with its declaration"
                )
        branches = tuple(
            Condition(
                variable=rb.get("var", ""),
                comparator=rb.get("op", ""),
                constant=rb.get("const"),
                target=rb.get("target", ""),
            )
            for rb in raw.get("branches", ())
        )
        answers = tuple(
            Answer(
                id=ra.get("id", ""),
                prototype_text=ra.get("text", ""),
                target=ra.get("target", ""),
                paraphrases=tuple(ra.get("paraphrases", ())),
            )
            for ra in raw.get("answers", ())
        )
        nodes.append(
            DialogNode(
                id=node_id,
                kind=raw.get("kind", ""),
                text=raw.get("text", ""),
                answers=answers,
                questions=_dedupe_casefold(list(raw.get("questions", ()))),
                variable=var_spec,
                branches=branches,
                default_target=raw.get("default"),
            )
        )

    return DialogGraph(nodes, start=data["start"], variables=list(variables.values()))


def load_graph(path) -> DialogGraph:
    with open(path, encoding="utf-8") as fh:
        return parse_graph(fh.read())


def serialize_graph(graph: DialogGraph) -> str:
    """Canonical JSON for a graph; inverse of :func:`parse_graph` up to formatting."""
    nodes = []
    for node in graph.nodes.values():
        raw: dict = {"id": node.id, "kind": node.kind, "text": node.text}
        raw["answers"] = [
            {
                "id": a.id,
                "text": a.prototype_text,
                "target": a.target,
                "paraphrases": list(a.paraphrases),
            }
            for a in node.answers
        ]
        raw["questions"] = list(node.questions)
        if node.variable is not None:
            raw["variable"] = {
                "name": node.variable.name,
                "type": node.variable.value_type,
                "values": list(node.variable.values),
            }
        if node.branches:
            raw["branches"] = [
                {"var": c.variable, "op": c.comparator, "const": c.constant, "target": c.target}
                for c in node.branches
            ]
            raw["default"] = node.default_target
        nodes.append(raw)
    payload = {
        "nodes": nodes,
        "start": graph.start,
        "variables": [
            {"name": s.name, "type": s.value_type, "values": list(s.values)}
            for s in graph.variables.values()
        ],
    }
    return json.dumps(payload, indent=2, ensure_ascii=False)


def evaluate_branch(node: DialogNode, assignments: dict[str, object]) -> str:
    """Resolve a logic node to its target under the given variable values.

    Branches are tried in declaration order; a missing variable matches
    nothing, so collection gaps fall through to the default branch.
    """
    if node.kind != NodeKind.LOGIC:
        raise GraphError(f"node {node.id!r} is not a logic node")
    for cond in node.branches:
        if cond.matches(assignments.get(cond.variable)):
            return cond.target
    assert node.default_target is not None
    return node.default_target


def _planning_successors(
    graph: DialogGraph, node: DialogNode, assignments: dict[str, object]
) -> list[tuple[str, Answer | None]]:
    if node.kind == NodeKind.LOGIC:
        return [(evaluate_branch(node, assignments), None)]
    return [(a.target, a) for a in node.answers]


def shortest_trajectory(
    graph: DialogGraph,
    goal: str,
    assignments: dict[str, object] | None = None,
    source: str | None = None,
) -> list[TrajectoryStep]:
    """Breadth-first shortest path from the start node (or ``source``) to ``goal``.

    Ties break toward earlier-declared answers. Logic nodes contribute the
    single branch selected by ``assignments``.
    """
    assignments = assignments or {}
    graph.node(goal)
    origin = source if source is not None else graph.start
    graph.node(origin)
    if goal == origin:
        return []
    parents: dict[str, tuple[str, Answer | None]] = {}
    frontier = [origin]
    seen = {origin}
    while frontier:
        nxt = []
        for current in frontier:
            for target, answer in _planning_successors(graph, graph.nodes[current], assignments):
                if target in seen:
                    continue
                seen.add(target)
                parents[target] = (current, answer)
                if target == goal:
                    steps = []
                    walk = goal
                    while walk != origin:
                        parent, ans = parents[walk]
                        steps.append(TrajectoryStep(node=parent, target=walk, answer=ans))
                        walk = parent
                    return list(reversed(steps))
                nxt.append(target)
        frontier = nxt
    raise UnreachableGoalError(f"goal {goal!r} is unreachable under assignments {assignments}")


def goal_candidates(graph: DialogGraph) -> list[str]:
    """Nodes eligible as dialog goals.

    Start and logic nodes are excluded (they carry no user-facing answer
    text); any other node with non-empty text qualifies.
    """
    candidates = [
        n.id
        for n in graph.nodes.values()
        if n.kind not in (NodeKind.START, NodeKind.LOGIC) and n.text
    ]
    if not candidates:
        raise GraphError("graph has no goal candidates")
    return candidates


def _is_dag_order(graph: DialogGraph) -> list[str] | None:
    indegree = {nid: 0 for nid in graph.nodes}
    for node in graph.nodes.values():
        for target in graph.successors(node):
            indegree[target] += 1
    order = [nid for nid, deg in indegree.items() if deg == 0]
    queue = list(order)
    while queue:
        current = queue.pop()
        for target in graph.successors(graph.nodes[current]):
            indegree[target] -= 1
            if indegree[target] == 0:
                order.append(target)
                queue.append(target)
    return order if len(order) == len(graph.nodes) else None


def _tree_depth(graph: DialogGraph) -> int:
    order = _is_dag_order(graph)
    if order is not None:
        depth = {nid: None for nid in graph.nodes}
        depth[graph.start] = 0
        for nid in order:
            if depth[nid] is None:
                continue
            for target in graph.successors(graph.nodes[nid]):
                cand = depth[nid] + 1
                if depth[target] is None or cand > depth[target]:
                    depth[target] = cand
        return max(d for d in depth.values() if d is not None)

    # cyclic graph: longest simple path by DFS, cutting cycles at first revisit
    best = 0
    stack = [(graph.start, 0, {graph.start})]
    while stack:
        current, dist, on_path = stack.pop()
        best = max(best, dist)
        for target in graph.successors(graph.nodes[current]):
            if target not in on_path:
                stack.append((target, dist + 1, on_path | {target}))
    return best


def compute_stats(graph: DialogGraph, split: DatasetSplit | None = None) -> GraphStats:
    """Deterministic corpus statistics for a graph and an optional utterance split.

    When no split is given, the banks inlined in the graph file are counted.
    """
    if split is None:
        questions = {n.id: list(n.questions) for n in graph.nodes.values() if n.questions}
        paraphrase_counts = [
            len(a.paraphrases)
            for n in graph.nodes.values()
            for a in n.answers
            if a.paraphrases
        ]
        question_count = sum(len(q) for q in questions.values())
        paraphrase_count = sum(paraphrase_counts)
    else:
        questions = {nid: qs for nid, qs in split.questions.items() if qs}
        question_count = split.question_count()
        per_answer: dict[str, int] = {}
        for aid, items in split.paraphrases.items():
            per_answer[aid] = per_answer.get(aid, 0) + len(items)
        for aid, items in split.keyword_paraphrases.items():
            per_answer[aid] = per_answer.get(aid, 0) + len(items)
        paraphrase_counts = [c for c in per_answer.values() if c]
        paraphrase_count = sum(paraphrase_counts)

    answerable = len(questions)
    return GraphStats(
        node_count=len(graph.nodes),
        tree_depth=_tree_depth(graph),
        max_node_degree=max((len(n.answers) for n in graph.nodes.values()), default=0),
        question_count=question_count,
        avg_questions_per_answerable_node=(question_count / answerable) if answerable else 0.0,
        paraphrase_count=paraphrase_count,
        avg_paraphrases_per_answer=(
            paraphrase_count / len(paraphrase_counts) if paraphrase_counts else 0.0
        ),
    )


_BOOL_YES = frozenset({"yes", "y", "yeah", "yep", "sure", "true", "correct", "of course", "ok"})
_BOOL_NO = frozenset({"no", "n", "nope", "nah", "false", "not", "never"})
_NUMBER_RE = re.compile(r"[-+]?\d+(?:\.\d+)?")


def parse_variable_value(text: str, spec: VariableSpec, encoder=None) -> object:
    """Interpret a free-text user reply as a typed variable value.

    Booleans match a yes/no synonym list, numbers take the first numeral token
    (units stripped), enumerations pick the exact match or, with an encoder,
    the highest-similarity declared value.
    """
    folded = text.casefold().strip()
    if spec.value_type == "boolean":
        if folded in _BOOL_YES or folded in _BOOL_NO:
            return folded in _BOOL_YES
        tokens = set(re.findall(r"[a-z']+", folded))
        if tokens & _BOOL_YES:
            return True
        if tokens & _BOOL_NO:
            return False
        raise GraphError(f"cannot read a yes/no value from {text!r}")
    if spec.value_type == "number":
        match = _NUMBER_RE.search(folded)
        if not match:
            raise GraphError(f"cannot read a number from {text!r}")
        value = float(match.group())
        return int(value) if value.is_integer() else value
    # enumeration
    for value in spec.values:
        if value.casefold() == folded:
            return value
    for value in spec.values:
        if value.casefold() in folded:
            return value
    if encoder is not None:
        from .encoding import cosine

        query = encoder.encode(text)
        scored = [(cosine(query, encoder.encode(v)), i, v) for i, v in enumerate(spec.values)]
        best = max(scored, key=lambda t: (t[0], -t[1]))
        return best[2]
    raise GraphError(f"cannot match {text!r} to one of {list(spec.values)}")


def load_split(document: str, graph: DialogGraph | None = None) -> DatasetSplit:
    """Parse a split file; with a graph, every key must resolve to a known id."""
    try:
        data = json.loads(document)
    except json.JSONDecodeError as exc:
        raise GraphParseError(
            f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc
    split = DatasetSplit(
        questions={k: list(v) for k, v in data.get("questions", {}).items()},
        paraphrases={k: list(v) for k, v in data.get("paraphrases", {}).items()},
        keyword_paraphrases={k: list(v) for k, v in data.get("keyword_paraphrases", {}).items()},
    )
    if graph is not None:
        answer_ids = {a.id for n in graph.nodes.values() for a in n.answers}
        for nid in split.questions:
            if nid not in graph.nodes:
                raise GraphError(f"split references unknown node id {nid!r}")
        for aid in list(split.paraphrases) + list(split.keyword_paraphrases):
            if aid not in answer_ids:
                raise GraphError(f"split references unknown answer id {aid!r}")
    return split


def serialize_split(split: DatasetSplit) -> str:
    payload: dict = {"questions": split.questions, "paraphrases": split.paraphrases}
    if split.keyword_paraphrases:
        payload["keyword_paraphrases"] = split.keyword_paraphrases
    return json.dumps(payload, indent=2, ensure_ascii=False)
