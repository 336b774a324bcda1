import json

import pytest

from ctskit.encoding import HashedNGramEncoder
from ctskit.graph import parse_graph

# 10-node fixture: start + logic + variable + 7 textual nodes, 21 questions
# spread over 7 of the 8 goal-eligible nodes, one number variable feeding the
# logic branch. Used across graph, simulator, server, and CLI tests.
TRIPS_GRAPH = {
    "start": "s0",
    "variables": [{"name": "trip_length", "type": "number", "values": []}],
    "nodes": [
        {
            "id": "s0",
            "kind": "start",
            "text": "Hi! I can help with your business trips.",
            "questions": [],
            "answers": [{"id": "t0", "text": "get started", "target": "q1", "paraphrases": ["hello"]}],
        },
        {
            "id": "q1",
            "kind": "question",
            "text": "Do you want trip length rules, office contacts, or travel portal help?",
            "questions": [
                "What can you help me with?",
                "Which topics do you cover?",
                "What kind of trip help is there?",
            ],
            "answers": [
                {
                    "id": "t1",
                    "text": "trip length rules",
                    "target": "v1",
                    "paraphrases": ["rules about trip length", "how long trips work"],
                },
                {
                    "id": "t2",
                    "text": "office contacts",
                    "target": "q2",
                    "paraphrases": ["contact info", "who do I call"],
                },
                {
                    "id": "t3",
                    "text": "travel portal help",
                    "target": "i5",
                    "paraphrases": ["the portal", "portal help"],
                },
            ],
        },
        {
            "id": "v1",
            "kind": "variable",
            "text": "How many days does your trip last?",
            "questions": [],
            "variable": {"name": "trip_length", "type": "number", "values": []},
            "answers": [{"id": "t4", "text": "14 days", "target": "L1", "paraphrases": ["two weeks"]}],
        },
        {
            "id": "L1",
            "kind": "logic",
            "text": "",
            "questions": [],
            "answers": [],
            "branches": [{"var": "trip_length", "op": ">", "const": 14, "target": "i3"}],
            "default": "i4",
        },
        {
            "id": "i3",
            "kind": "info",
            "text": "Trips longer than two weeks need director approval and the long-trip form.",
            "questions": [
                "Who approves long trips?",
                "Is there a form for long trips?",
                "What happens if my trip is longer than two weeks?",
            ],
            "answers": [],
        },
        {
            "id": "i4",
            "kind": "info",
            "text": "Short trips are approved by your team lead directly in the portal.",
            "questions": [
                "Who approves short trips?",
                "How fast are short trips approved?",
                "Do short trips need extra forms?",
            ],
            "answers": [],
        },
        {
            "id": "i5",
            "kind": "info",
            "text": "The travel portal shows your requests under the journeys tab after login.",
            "questions": [
                "Where do I see my travel requests?",
                "How do I log into the travel portal?",
                "Which tab lists my journeys?",
            ],
            "answers": [],
        },
        {
            "id": "q2",
            "kind": "question",
            "text": "Office contacts: do you need facilities, or IT support?",
            "questions": [
                "How do I reach the office teams?",
                "Who do I contact in the office?",
                "Where is the office contact list?",
            ],
            "answers": [
                {"id": "t5", "text": "facilities", "target": "i7", "paraphrases": ["the facilities team"]},
                {"id": "t6", "text": "IT support", "target": "i8", "paraphrases": ["tech support", "IT"]},
            ],
        },
        {
            "id": "i7",
            "kind": "info",
            "text": "Facilities sits in building B, room 101; call extension 4242.",
            "questions": [
                "Where does facilities sit?",
                "What is the facilities phone extension?",
                "Which building is facilities in?",
            ],
            "answers": [],
        },
        {
            "id": "i8",
            "kind": "info",
            "text": "IT support answers tickets within one business day; urgent issues call 9000.",
            "questions": [
                "How fast does IT support answer?",
                "What is the urgent IT number?",
                "How do I file an IT ticket?",
            ],
            "answers": [],
        },
    ],
}


def toy_tree_text() -> str:
    from importlib.resources import files

    return files("ctskit.data").joinpath("toy_tree.json").read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def toy_graph():
    return parse_graph(toy_tree_text())


@pytest.fixture()
def trips_graph():
    return parse_graph(json.dumps(TRIPS_GRAPH))


@pytest.fixture(scope="session")
def encoder():
    return HashedNGramEncoder(dim=64, seed=0)
