"""Synthetic training-data generation from a dialog graph via LLM prompting.

Question methods: V1 asks for diverse FAQ-style questions about a node's
text; V2 additionally demands short outputs; V3 first covers the whole node
(3 questions via the V2 prompt), then asks for 3 questions per named entity,
topping up with V2 if the total stays under 10. Response methods: A generates
5 natural paraphrases per answer prototype, B generates 5 keyword-style
shortenings that mimic terse users.

Clients: an OpenAI-compatible chat-completions client (API key from the
environment) and a scripted client replaying a fixture that maps rendered
prompt hashes to completions, for offline and test runs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Protocol

from .graph import DatasetSplit, DialogGraph, DialogNode, goal_candidates

__all__ = [
    "ChatMessage",
    "PromptTemplate",
    "TEMPLATES",
    "GenerationParams",
    "GenerationError",
    "EmptyCompletionError",
    "LLMClient",
    "OpenAIChatClient",
    "ScriptedLLMClient",
    "prompt_hash",
    "NERProvider",
    "HeuristicNER",
    "render_prompt",
    "parse_numbered_list",
    "generate_questions",
    "generate_questions_v3",
    "generate_responses",
    "generate_question_bank",
    "GeneratedEntry",
    "GeneratedBank",
]

logger = logging.getLogger("ctskit.generation")


class GenerationError(RuntimeError):
    """Generation failed for one prompt after retries."""


class EmptyCompletionError(GenerationError):
    """The completion parsed to zero items, twice."""


@dataclass(frozen=True)
class ChatMessage:
    role: str  # "system" | "user"
    content: str

    def __post_init__(self):
        if not self.content:
            raise ValueError("message content must be non-empty")


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.7
    max_tokens: int = 512
    model: str = "gpt-3.5-turbo"


@dataclass(frozen=True)
class PromptTemplate:
    method_id: str
    system: str
    user: str
    default_count: int


_QUESTION_SYSTEM_V1 = (
    "You are a truthful assistant, generating diverse FAQ-style questions given some facts. "
    "The generated questions should be answerable using the given fact only, without "
    "additional knowledge. The questions should also be human-like. Try to vary the "
    "amount of information between questions. Present the results in a numbered list."
)
_QUESTION_SYSTEM_V2 = (
    "You are a truthful assistant, generating diverse FAQ-style questions given some facts. "
    "The generated questions should be answerable using the given fact only, without "
    "additional knowledge. The questions should also be short and human-like. Try to vary "
    "the amount of information between questions. Present the results in a numbered list."
)
_QUESTION_USER = 'Generate {N} FAQ-style questions about the given facts: "{NODE TEXT}".'
_ENTITY_USER = 'Generate {N} questions about the entity "{NER}" from the fact: "{NODE TEXT}"'
_PARAPHRASE_SYSTEM = (
    "You are generating semantically similar paraphrases for a given response to some "
    "question. The generated response paraphrases should be human-like and short, using "
    "frequently used words and phrases only. Present the results in a numbered list."
)
_PARAPHRASE_USER = (
    'Generate {N} paraphrases for the response "{RESPONSE TEXT}" to the question "{NODE TEXT}"'
)
_KEYWORD_SYSTEM = (
    "You are shortening a given response to some question into a keyword-like prompt. "
    "Present the results in a numbered list."
)
_KEYWORD_USER = (
    'Generate {N} options for shortening the response "{RESPONSE TEXT}" to the question "{NODE TEXT}"'
)

TEMPLATES: dict[str, PromptTemplate] = {
    "V1": PromptTemplate("V1", _QUESTION_SYSTEM_V1, _QUESTION_USER, 10),
    "V2": PromptTemplate("V2", _QUESTION_SYSTEM_V2, _QUESTION_USER, 10),
    "V3-base": PromptTemplate("V3-base", _QUESTION_SYSTEM_V2, _QUESTION_USER, 3),
    "V3-entity": PromptTemplate("V3-entity", _QUESTION_SYSTEM_V2, _ENTITY_USER, 3),
    "A": PromptTemplate("A", _PARAPHRASE_SYSTEM, _PARAPHRASE_USER, 5),
    "B": PromptTemplate("B", _KEYWORD_SYSTEM, _KEYWORD_USER, 5),
}

_PLACEHOLDERS = ("{NODE TEXT}", "{NER}", "{RESPONSE TEXT}", "{N}")


def render_prompt(template: PromptTemplate, bindings: dict[str, object]) -> list[ChatMessage]:
    """Substitute placeholders into a template's system/user strings.

    ``bindings`` keys are the bare placeholder names ("NODE TEXT", "NER",
    "RESPONSE TEXT", "N"); "N" defaults to the template's count.
    """
    bindings = dict(bindings)
    bindings.setdefault("N", template.default_count)
    rendered = []
    for text in (template.system, template.user):
        for placeholder in _PLACEHOLDERS:
            name = placeholder[1:-1]
            if placeholder in text:
                if name not in bindings:
                    raise KeyError(f"missing binding {name!r} for template {template.method_id}")
                text = text.replace(placeholder, str(bindings[name]))
        rendered.append(text)
    return [ChatMessage("system", rendered[0]), ChatMessage("user", rendered[1])]


_ITEM_RE = re.compile(r"^\s*\d+\s*[.)]\s*(.*?)\s*$")
_QUOTE_PAIRS = {('"', '"'), ("'", "'"), ("“", "”"), ("‘", "’"), ("`", "`")}


def _strip_quotes(text: str) -> str:
    while len(text) >= 2 and (text[0], text[-1]) in _QUOTE_PAIRS:
        text = text[1:-1].strip()
    return text


def parse_numbered_list(completion: str) -> list[str]:
    """Extract the items of a numbered list, ignoring any prose preamble."""
    items = []
    for line in completion.splitlines():
        match = _ITEM_RE.match(line)
        if not match:
            continue
        text = _strip_quotes(match.group(1).strip())
        if text:
            items.append(text)
    return items


def prompt_hash(messages: list[ChatMessage]) -> str:
    payload = json.dumps([[m.role, m.content] for m in messages], ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class LLMClient(Protocol):
    def complete(self, messages: list[ChatMessage], params: GenerationParams) -> str: ...


class OpenAIChatClient:
    """Minimal OpenAI-compatible chat-completions client with retries."""

    def __init__(
        self,
        endpoint: str = "https://api.openai.com/v1/chat/completions",
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 60.0,
        max_retries: int = 3,
    ):
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_retries = max_retries

    def complete(self, messages: list[ChatMessage], params: GenerationParams) -> str:
        import os

        import requests

        headers = {}
        api_key = os.environ.get(self.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {
            "model": params.model,
            "messages": [{"role": m.role, "content": m.content} for m in messages],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                resp = requests.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout
                )
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except Exception as exc:  # noqa: BLE001
                last_error = exc
                if attempt + 1 < self.max_retries:
                    time.sleep(0.5 * 2**attempt)
        raise GenerationError(
            f"chat endpoint {self.endpoint} failed after {self.max_retries} attempts: {last_error}"
        )


class ScriptedLLMClient:
    """Replays completions from a fixture mapping prompt hash -> completion."""

    def __init__(self, fixture: dict[str, str] | str):
        if isinstance(fixture, dict):
            self.fixture = dict(fixture)
        else:
            with open(fixture, encoding="utf-8") as fh:
                self.fixture = json.load(fh)

    def complete(self, messages: list[ChatMessage], params: GenerationParams) -> str:
        key = prompt_hash(messages)
        if key not in self.fixture:
            raise GenerationError(
                f"no scripted completion for prompt hash {key} "
                f"(user message: {messages[-1].content[:80]!r})"
            )
        return self.fixture[key]


class NERProvider(Protocol):
    def entities(self, text: str) -> list[str]: ...


class HeuristicNER:
    """Dependency-free entity extractor: capitalized multi-word spans,
    bracketed foreign terms, and number+unit tokens. Every entity is a
    substring of the whitespace-normalized input, ordered and unique."""

    _CAPS = re.compile(r"\b(?:[A-Z][\w'À-ſ-]*)(?:\s+[A-Z][\w'À-ſ-]*)*\b")
    _BRACKETED = re.compile(r"\[([^\]]+)\]")
    _NUMBER_UNIT = re.compile(r"\b\d+(?:\.\d+)?\s*[a-zA-Z€$%£]+\b")

    def entities(self, text: str) -> list[str]:
        normalized = " ".join(text.split())
        found: list[str] = []
        for match in self._BRACKETED.finditer(normalized):
            found.append(match.group(1).strip())
        for match in self._CAPS.finditer(normalized):
            span = match.group(0)
            # skip bare sentence-initial words: single capitalized tokens that
            # begin the text or follow terminal punctuation
            if " " not in span:
                start = match.start()
                if start == 0 or normalized[max(0, start - 2) : start].strip() in (".", "!", "?", ":", ";"):
                    continue
                if span.casefold() in ("i", "the", "a", "an"):
                    continue
            found.append(span)
        for match in self._NUMBER_UNIT.finditer(normalized):
            found.append(match.group(0))
        unique = []
        seen = set()
        for entity in found:
            key = entity.casefold()
            if key not in seen and entity in normalized:
                seen.add(key)
                unique.append(entity)
        return unique


def _dedupe(items: list[str]) -> list[str]:
    seen = set()
    out = []
    for item in items:
        key = item.casefold().strip()
        if key and key not in seen:
            seen.add(key)
            out.append(item.strip())
    return out


def _complete_list(
    client: LLMClient, messages: list[ChatMessage], params: GenerationParams
) -> list[str]:
    items = parse_numbered_list(client.complete(messages, params))
    if not items:
        items = parse_numbered_list(client.complete(messages, params))
    if not items:
        raise EmptyCompletionError(
            f"completion parsed to zero items for prompt {messages[-1].content[:80]!r}"
        )
    return items


def generate_questions(
    node: DialogNode,
    method: str,
    client: LLMClient,
    n: int = 10,
    params: GenerationParams | None = None,
) -> list[str]:
    """Up to ``n`` deduplicated questions about a node's text (methods V1/V2)."""
    if method not in ("V1", "V2"):
        raise ValueError(f"unknown question method {method!r}")
    if not node.text:
        raise ValueError(f"node {node.id!r} has no text to generate from")
    params = params or GenerationParams()
    template = TEMPLATES[method]
    messages = render_prompt(template, {"NODE TEXT": node.text, "N": n})
    return _dedupe(_complete_list(client, messages, params))[:n]


def generate_questions_v3(
    node: DialogNode,
    client: LLMClient,
    ner: NERProvider | None = None,
    params: GenerationParams | None = None,
    target_total: int = 10,
) -> list[str]:
    """Two-step entity-steered question generation.

    3 questions about the whole node text, 3 per extracted entity, and a
    final top-up batch when the total falls short of ``target_total``.
    """
    if not node.text:
        raise ValueError(f"node {node.id!r} has no text to generate from")
    params = params or GenerationParams()
    ner = ner or HeuristicNER()

    base = render_prompt(TEMPLATES["V3-base"], {"NODE TEXT": node.text})
    items = _complete_list(client, base, params)
    for entity in ner.entities(node.text):
        prompt = render_prompt(TEMPLATES["V3-entity"], {"NODE TEXT": node.text, "NER": entity})
        items.extend(_complete_list(client, prompt, params))
    questions = _dedupe(items)
    if len(questions) < target_total:
        deficit = target_total - len(questions)
        top_up = render_prompt(TEMPLATES["V2"], {"NODE TEXT": node.text, "N": deficit})
        questions = _dedupe(questions + _complete_list(client, top_up, params))
    return questions


@dataclass(frozen=True)
class GeneratedEntry:
    text: str
    method: str
    model: str
    timestamp: str


@dataclass
class GeneratedBank:
    """Generated utterances with per-entry provenance, convertible to the
    split-file schema consumed by the simulator."""

    questions: dict[str, list[GeneratedEntry]] = field(default_factory=dict)
    paraphrases: dict[str, list[GeneratedEntry]] = field(default_factory=dict)
    keyword_paraphrases: dict[str, list[GeneratedEntry]] = field(default_factory=dict)
    failures: list[dict] = field(default_factory=list)

    def _add(self, bucket: dict, key: str, texts: list[str], method: str, model: str) -> None:
        stamp = datetime.now(timezone.utc).isoformat()
        existing = {e.text.casefold() for e in bucket.get(key, [])}
        for text in texts:
            folded = text.casefold()
            if text and folded not in existing:
                existing.add(folded)
                bucket.setdefault(key, []).append(GeneratedEntry(text, method, model, stamp))

    def to_split(self) -> DatasetSplit:
        return DatasetSplit(
            questions={k: [e.text for e in v] for k, v in self.questions.items()},
            paraphrases={k: [e.text for e in v] for k, v in self.paraphrases.items()},
            keyword_paraphrases={
                k: [e.text for e in v] for k, v in self.keyword_paraphrases.items()
            },
        )

    def provenance(self) -> dict:
        def dump(bucket: dict[str, list[GeneratedEntry]]) -> dict:
            return {
                key: [
                    {"text": e.text, "method": e.method, "model": e.model, "timestamp": e.timestamp}
                    for e in entries
                ]
                for key, entries in bucket.items()
            }

        return {
            "questions": dump(self.questions),
            "paraphrases": dump(self.paraphrases),
            "keyword_paraphrases": dump(self.keyword_paraphrases),
            "failures": self.failures,
        }


def generate_question_bank(
    graph: DialogGraph,
    method: str,
    client: LLMClient,
    ner: NERProvider | None = None,
    params: GenerationParams | None = None,
    n: int = 10,
    parallelism: int = 1,
) -> GeneratedBank:
    """Generate questions for every goal-candidate node of the graph.

    Per-node failures are logged and recorded, never fatal. Assembly order is
    deterministic (graph declaration order) regardless of completion order.
    """
    params = params or GenerationParams()
    bank = GeneratedBank()
    node_ids = goal_candidates(graph)

    def produce(node_id: str) -> tuple[str, list[str] | None, str | None]:
        node = graph.nodes[node_id]
        try:
            if method == "V3":
                return node_id, generate_questions_v3(node, client, ner, params, n), None
            return node_id, generate_questions(node, method, client, n, params), None
        except GenerationError as exc:
            logger.warning("question generation failed for node %s: %s", node_id, exc)
            return node_id, None, str(exc)

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = {r[0]: r for r in pool.map(produce, node_ids)}
    else:
        results = {nid: produce(nid) for nid in node_ids}

    for node_id in node_ids:  # declaration order
        _, questions, error = results[node_id]
        if error is not None:
            bank.failures.append({"node": node_id, "error": error})
        elif questions:
            bank._add(bank.questions, node_id, questions, method, params.model)
    return bank


def generate_responses(
    graph: DialogGraph,
    client: LLMClient,
    params: GenerationParams | None = None,
    n: int = 5,
    parallelism: int = 1,
    bank: GeneratedBank | None = None,
) -> GeneratedBank:
    """5 natural (A) plus 5 keyword-style (B) paraphrases for every answer of
    every node requiring user input."""
    params = params or GenerationParams()
    bank = bank or GeneratedBank()
    work = [
        (node, answer)
        for node in graph.nodes.values()
        if node.requires_input
        for answer in node.answers
    ]
    if not work:
        warnings.warn("graph has no nodes requiring user input; response bank is empty")
        return bank

    def produce(item) -> tuple[str, list[str] | None, list[str] | None, str | None]:
        node, answer = item
        bindings = {"RESPONSE TEXT": answer.prototype_text, "NODE TEXT": node.text}
        try:
            natural = _complete_list(client, render_prompt(TEMPLATES["A"], bindings), params)
            keyword = _complete_list(client, render_prompt(TEMPLATES["B"], bindings), params)
            return answer.id, _dedupe(natural)[:n], _dedupe(keyword)[:n], None
        except GenerationError as exc:
            logger.warning("response generation failed for answer %s: %s", answer.id, exc)
            return answer.id, None, None, str(exc)

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = {r[0]: r for r in pool.map(produce, work)}
    else:
        results = {item[1].id: produce(item) for item in work}

    for node, answer in work:
        _, natural, keyword, error = results[answer.id]
        if error is not None:
            bank.failures.append({"answer": answer.id, "error": error})
            continue
        bank._add(bank.paraphrases, answer.id, natural, "A", params.model)
        bank._add(bank.keyword_paraphrases, answer.id, keyword, "B", params.model)
    return bank
