import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path

import pytest

from ctskit.generation import (
    ChatMessage,
    EmptyCompletionError,
    GenerationError,
    GenerationParams,
    HeuristicNER,
    OpenAIChatClient,
    ScriptedLLMClient,
    TEMPLATES,
    generate_question_bank,
    generate_questions,
    generate_questions_v3,
    generate_responses,
    parse_numbered_list,
    prompt_hash,
    render_prompt,
)
from ctskit.graph import load_split, serialize_split

DATA = Path(__file__).parent / "data"


def numbered(items):
    return "\n".join(f"{i + 1}. {item}" for i, item in enumerate(items))


def fixture_for(template_id, bindings, completion):
    """Build a scripted-client fixture entry for one rendered prompt."""
    messages = render_prompt(TEMPLATES[template_id], bindings)
    return {prompt_hash(messages): completion}


# ---------------------------------------------------------------------------
# prompt templates
# ---------------------------------------------------------------------------


def test_rendered_prompts_byte_match_fixtures():
    fixtures = json.loads((DATA / "prompt_fixtures.json").read_text(encoding="utf-8"))
    for method_id, entry in fixtures.items():
        messages = render_prompt(TEMPLATES[method_id], entry["bindings"])
        assert messages[0] == ChatMessage("system", entry["system"]), method_id
        assert messages[1] == ChatMessage("user", entry["user"]), method_id


def test_render_v1_example():
    messages = render_prompt(TEMPLATES["V1"], {"NODE TEXT": "X"})
    assert messages[1].content == 'Generate 10 FAQ-style questions about the given facts: "X".'


def test_render_v3_entity_example():
    messages = render_prompt(TEMPLATES["V3-entity"], {"NODE TEXT": "Y", "NER": "anemia"})
    assert messages[1].content == 'Generate 3 questions about the entity "anemia" from the fact: "Y"'


def test_render_paraphrase_example():
    messages = render_prompt(TEMPLATES["A"], {"RESPONSE TEXT": "R", "NODE TEXT": "Q"})
    assert messages[1].content == 'Generate 5 paraphrases for the response "R" to the question "Q"'


def test_render_missing_binding():
    with pytest.raises(KeyError, match="NER"):
        render_prompt(TEMPLATES["V3-entity"], {"NODE TEXT": "Y"})


# ---------------------------------------------------------------------------
# numbered-list parsing
# ---------------------------------------------------------------------------


def test_parse_simple_list():
    assert parse_numbered_list("1. A?\n2. B?") == ["A?", "B?"]


def test_parse_preamble_quotes_blanks():
    assert parse_numbered_list('Sure!\n1) "C?"\n\n2) D?') == ["C?", "D?"]


def test_parse_fixture_corpus():
    fixtures = json.loads((DATA / "numbered_list_fixtures.json").read_text(encoding="utf-8"))
    assert len(fixtures) == 10
    for entry in fixtures:
        assert parse_numbered_list(entry["completion"]) == entry["expected"]


# ---------------------------------------------------------------------------
# question generation
# ---------------------------------------------------------------------------


def test_generate_questions_pass_through(trips_graph):
    node = trips_graph.nodes["i3"]
    items = [f"Question number {i}?" for i in range(10)]
    client = ScriptedLLMClient(
        fixture_for("V1", {"NODE TEXT": node.text, "N": 10}, numbered(items))
    )
    assert generate_questions(node, "V1", client) == items


def test_generate_questions_dedupes(trips_graph):
    node = trips_graph.nodes["i3"]
    client = ScriptedLLMClient(
        fixture_for("V1", {"NODE TEXT": node.text, "N": 10}, "1. A?\n2. A?")
    )
    assert generate_questions(node, "V1", client) == ["A?"]


def test_generate_questions_lexical_overlap(trips_graph):
    node = trips_graph.nodes["i3"]
    completion = numbered(
        ["Who approves trips longer than two weeks?", "Is there a director form?"]
    )
    client = ScriptedLLMClient(fixture_for("V2", {"NODE TEXT": node.text, "N": 10}, completion))
    questions = generate_questions(node, "V2", client)
    node_tokens = set(node.text.casefold().split())
    assert any(set(q.casefold().split()) & node_tokens for q in questions)


def test_generate_questions_rejects_unknown_method(trips_graph):
    with pytest.raises(ValueError):
        generate_questions(trips_graph.nodes["i3"], "V9", ScriptedLLMClient({}))


class FixedNER:
    def __init__(self, entities):
        self._entities = entities

    def entities(self, text):
        return list(self._entities)


def v3_fixture(node, entities, base_items, entity_items, topup_items=None):
    fixture = {}
    fixture.update(fixture_for("V3-base", {"NODE TEXT": node.text}, numbered(base_items)))
    for entity, items in zip(entities, entity_items):
        fixture.update(
            fixture_for("V3-entity", {"NODE TEXT": node.text, "NER": entity}, numbered(items))
        )
    if topup_items is not None:
        fixture.update(
            fixture_for(
                "V2", {"NODE TEXT": node.text, "N": len(topup_items)}, numbered(topup_items)
            )
        )
    return ScriptedLLMClient(fixture)


def test_v3_two_entities_tops_up_to_ten(trips_graph):
    node = trips_graph.nodes["i3"]
    entities = ["director approval", "long-trip form"]
    base = [f"Base {i}?" for i in range(3)]
    per_entity = [[f"{e} q{i}?" for i in range(3)] for e in entities]
    client = v3_fixture(node, entities, base, per_entity, topup_items=["Top up one?"])
    questions = generate_questions_v3(node, client, ner=FixedNER(entities))
    assert len(questions) == 10
    assert questions[:3] == base  # first-occurrence order preserved
    assert questions[-1] == "Top up one?"


def test_v3_zero_entities_tops_up_seven(trips_graph):
    node = trips_graph.nodes["i4"]
    base = [f"Base {i}?" for i in range(3)]
    topup = [f"Extra {i}?" for i in range(7)]
    client = v3_fixture(node, [], base, [], topup_items=topup)
    questions = generate_questions_v3(node, client, ner=FixedNER([]))
    assert questions == base + topup


def test_v3_four_entities_no_topup(trips_graph):
    node = trips_graph.nodes["i5"]
    entities = ["portal", "journeys tab", "login", "requests"]
    base = [f"Base {i}?" for i in range(3)]
    per_entity = [[f"{e} q{i}?" for i in range(3)] for e in entities]
    client = v3_fixture(node, entities, base, per_entity)
    questions = generate_questions_v3(node, client, ner=FixedNER(entities))
    assert len(questions) == 15  # 3 + 4*3, no top-up call scripted or needed


def test_empty_completion_retries_once_then_fails(trips_graph):
    node = trips_graph.nodes["i3"]

    class CountingClient:
        def __init__(self):
            self.calls = 0

        def complete(self, messages, params):
            self.calls += 1
            return "no list here"

    client = CountingClient()
    with pytest.raises(EmptyCompletionError):
        generate_questions(node, "V1", client)
    assert client.calls == 2


def test_transport_failure_then_success(trips_graph):
    node = trips_graph.nodes["i3"]
    good = numbered(["Works now?"])

    class FlakyClient:
        def __init__(self):
            self.calls = 0

        def complete(self, messages, params):
            self.calls += 1
            if self.calls == 1:
                raise GenerationError("boom")
            return good

    with pytest.raises(GenerationError):
        generate_questions(node, "V1", FlakyClient())  # single op propagates

    bank = generate_question_bank(trips_graph, "V1", FlakyClient())
    assert bank.failures  # first node failed, run continued
    assert bank.questions  # later nodes succeeded


# ---------------------------------------------------------------------------
# response generation
# ---------------------------------------------------------------------------


def response_fixture(graph, n_a=5, n_b=5):
    fixture = {}
    for node in graph.nodes.values():
        if not node.requires_input:
            continue
        for answer in node.answers:
            bindings = {"RESPONSE TEXT": answer.prototype_text, "NODE TEXT": node.text}
            fixture.update(
                fixture_for("A", bindings, numbered([f"{answer.id} natural {i}" for i in range(n_a)]))
            )
            fixture.update(
                fixture_for("B", bindings, numbered([f"{answer.id} kw {i}" for i in range(n_b)]))
            )
    return ScriptedLLMClient(fixture)


def test_generate_responses_counts(trips_graph):
    client = response_fixture(trips_graph)
    bank = generate_responses(trips_graph, client)
    input_answers = [
        a.id
        for n in trips_graph.nodes.values()
        if n.requires_input
        for a in n.answers
    ]
    assert sorted(bank.paraphrases) == sorted(input_answers)
    for aid in input_answers:
        assert len(bank.paraphrases[aid]) == 5
        assert len(bank.keyword_paraphrases[aid]) == 5
    total = sum(len(v) for v in bank.paraphrases.values()) + sum(
        len(v) for v in bank.keyword_paraphrases.values()
    )
    assert total == len(input_answers) * 10


def test_generate_responses_truncates_excess(trips_graph):
    client = response_fixture(trips_graph, n_a=7, n_b=7)
    bank = generate_responses(trips_graph, client)
    for entries in bank.paraphrases.values():
        assert len(entries) == 5


def test_generate_responses_no_input_nodes_warns():
    from ctskit.graph import parse_graph

    doc = {
        "start": "s",
        "nodes": [
            {"id": "s", "kind": "start", "text": "hi",
             "answers": [{"id": "a", "text": "go", "target": "n"}]},
            {"id": "n", "kind": "info", "text": "leaf", "questions": ["?"]},
        ],
    }
    graph = parse_graph(json.dumps(doc))
    with pytest.warns(UserWarning, match="no nodes requiring user input"):
        bank = generate_responses(graph, ScriptedLLMClient({}))
    assert not bank.paraphrases


def test_generation_idempotent_with_scripted_client(trips_graph):
    client = response_fixture(trips_graph)
    first = generate_responses(trips_graph, client).to_split()
    second = generate_responses(trips_graph, client).to_split()
    assert serialize_split(first) == serialize_split(second)


def test_bank_round_trips_through_split_loader(trips_graph):
    client = response_fixture(trips_graph)
    bank = generate_responses(trips_graph, client)
    text = serialize_split(bank.to_split())
    loaded = load_split(text, trips_graph)  # validates every answer id
    assert loaded.paraphrases == bank.to_split().paraphrases


def test_provenance_completeness(trips_graph):
    params = GenerationParams(model="test-model")
    bank = generate_responses(trips_graph, response_fixture(trips_graph), params=params)
    provenance = bank.provenance()
    for bucket in ("paraphrases", "keyword_paraphrases"):
        for entries in provenance[bucket].values():
            for entry in entries:
                assert entry["method"] in ("A", "B")
                assert entry["model"] == "test-model"
                assert entry["timestamp"]


def test_question_bank_parallel_matches_serial(trips_graph):
    fixture = {}
    for nid in ("q1", "v1", "i3", "i4", "i5", "q2", "i7", "i8"):
        node = trips_graph.nodes[nid]
        fixture.update(
            fixture_for(
                "V1",
                {"NODE TEXT": node.text, "N": 10},
                numbered([f"{nid} question {i}?" for i in range(4)]),
            )
        )
    serial = generate_question_bank(trips_graph, "V1", ScriptedLLMClient(fixture))
    parallel = generate_question_bank(
        trips_graph, "V1", ScriptedLLMClient(fixture), parallelism=4
    )
    assert serialize_split(serial.to_split()) == serialize_split(parallel.to_split())
    assert list(serial.questions) == list(parallel.questions)


# ---------------------------------------------------------------------------
# NER heuristics
# ---------------------------------------------------------------------------


def test_ner_bracketed_and_capitalized_and_units():
    ner = HeuristicNER()
    text = (
        "The registration office gives you a confirmation [Meldebestaetigung] "
        "within 14 days; bring it to Deutsche Bank for your account."
    )
    entities = ner.entities(text)
    assert "Meldebestaetigung" in entities
    assert "Deutsche Bank" in entities
    assert any("14" in e for e in entities)
    normalized = " ".join(text.split())
    for entity in entities:
        assert entity in normalized
    assert len(entities) == len({e.casefold() for e in entities})


def test_ner_skips_sentence_initial_capital():
    entities = HeuristicNER().entities("The form is short. Submit it early.")
    assert entities == []


# ---------------------------------------------------------------------------
# HTTP client
# ---------------------------------------------------------------------------


class _ChatHandler(BaseHTTPRequestHandler):
    fail_next = 0
    seen_payloads = []

    def do_POST(self):
        cls = type(self)
        if cls.fail_next > 0:
            cls.fail_next -= 1
            self.send_response(500)
            self.end_headers()
            return
        length = int(self.headers["Content-Length"])
        payload = json.loads(self.rfile.read(length))
        cls.seen_payloads.append(payload)
        body = json.dumps(
            {"choices": [{"message": {"role": "assistant", "content": "1. scripted reply?"}}]}
        ).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture()
def chat_server():
    server = HTTPServer(("127.0.0.1", 0), _ChatHandler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    _ChatHandler.fail_next = 0
    _ChatHandler.seen_payloads = []
    yield f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
    server.shutdown()


def test_openai_client_roundtrip(chat_server, monkeypatch):
    monkeypatch.setenv("TEST_LLM_KEY", "sk-fixture")
    client = OpenAIChatClient(endpoint=chat_server, api_key_env="TEST_LLM_KEY")
    messages = render_prompt(TEMPLATES["V1"], {"NODE TEXT": "X"})
    reply = client.complete(messages, GenerationParams(model="test-model", temperature=0.7))
    assert reply == "1. scripted reply?"
    payload = _ChatHandler.seen_payloads[-1]
    assert payload["model"] == "test-model"
    assert payload["temperature"] == 0.7
    assert payload["messages"][0]["role"] == "system"


def test_openai_client_retries(chat_server):
    _ChatHandler.fail_next = 2
    client = OpenAIChatClient(endpoint=chat_server, max_retries=3)
    reply = client.complete([ChatMessage("user", "hi")], GenerationParams())
    assert reply == "1. scripted reply?"
    _ChatHandler.fail_next = 5
    client_fast = OpenAIChatClient(endpoint=chat_server, max_retries=2)
    with pytest.raises(GenerationError, match="after 2 attempts"):
        client_fast.complete([ChatMessage("user", "hi")], GenerationParams())


def test_scripted_client_unknown_prompt():
    client = ScriptedLLMClient({})
    with pytest.raises(GenerationError, match="no scripted completion"):
        client.complete([ChatMessage("user", "mystery")], GenerationParams())
