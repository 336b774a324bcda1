import json
from collections import Counter

import numpy as np
import pytest

from ctskit.graph import DatasetSplit, GraphError, parse_graph, shortest_trajectory
from ctskit.simulator import (
    DialogEnv,
    DialogMode,
    SimulatorConfig,
    UtteranceBank,
    build_observation,
    episode_to_jsonl,
    perceived_length,
)

OPENERS = ["I need help.", "Can you guide me?"]


def make_env(graph, encoder, **kwargs):
    kwargs.setdefault("guided_openers", OPENERS)
    return DialogEnv(graph, encoder, **kwargs)


def skip_to(env, target):
    node = env.graph.nodes[env.current]
    for i, answer in enumerate(node.answers):
        if answer.target == target:
            return env.step(i + 1)
    raise AssertionError(f"no edge from {env.current} to {target}")


def follow_plan(env):
    """Skip along the planned trajectory without ever asking."""
    rewards = []
    while env.plan and not env.done:
        result = skip_to(env, env.plan[0].target)
        rewards.append(result.reward)
    return rewards


def test_reset_deterministic(toy_graph, encoder):
    logs = []
    for _ in range(2):
        env = make_env(toy_graph, encoder, seed=11)
        env.reset()
        goal_a = env.user_goal.goal
        opener = env.user_goal.initial_utterance
        logs.append((goal_a, opener, env.mode))
    assert logs[0] == logs[1]


def test_single_candidate_graph_always_that_goal(encoder):
    doc = {
        "start": "s",
        "nodes": [
            {"id": "s", "kind": "start", "text": "hi",
             "answers": [{"id": "a", "text": "go", "target": "n"}]},
            {"id": "n", "kind": "info", "text": "the only info", "questions": ["what?"]},
        ],
    }
    env = make_env(parse_graph(json.dumps(doc)), encoder, seed=0)
    for _ in range(5):
        env.reset()
        assert env.user_goal.goal == "n"


def test_goal_sampling_uniform(encoder):
    doc = {
        "start": "s",
        "nodes": [
            {
                "id": "s",
                "kind": "start",
                "text": "hub",
                "answers": [
                    {"id": f"a{i}", "text": f"go {i}", "target": f"n{i}"} for i in range(4)
                ],
            }
        ]
        + [
            {"id": f"n{i}", "kind": "info", "text": f"leaf {i}", "questions": [f"about {i}?"]}
            for i in range(4)
        ],
    }
    env = make_env(parse_graph(json.dumps(doc)), encoder, seed=123)
    counts = Counter()
    modes = Counter()
    for _ in range(10_000):
        env.reset()
        counts[env.user_goal.goal] += 1
        modes[env.mode] += 1
    for goal in ("n0", "n1", "n2", "n3"):
        assert abs(counts[goal] / 10_000 - 0.25) <= 0.02
    assert abs(modes[DialogMode.FREE] / 10_000 - 0.5) <= 0.02


def test_free_opener_from_goal_bank_guided_from_openers(toy_graph, encoder):
    free = make_env(toy_graph, encoder, seed=5, mode_override=DialogMode.FREE)
    free.reset()
    goal_node = toy_graph.nodes[free.user_goal.goal]
    assert free.user_goal.initial_utterance in goal_node.questions

    guided = make_env(toy_graph, encoder, seed=5, mode_override=DialogMode.GUIDED)
    guided.reset()
    assert guided.user_goal.initial_utterance in OPENERS


def test_free_mode_without_questions_is_config_error(encoder):
    doc = {
        "start": "s",
        "nodes": [
            {"id": "s", "kind": "start", "text": "hi",
             "answers": [{"id": "a", "text": "go", "target": "n"}]},
            {"id": "n", "kind": "info", "text": "no questions here"},
        ],
    }
    env = make_env(parse_graph(json.dumps(doc)), encoder, seed=0, mode_override=DialogMode.FREE)
    with pytest.raises(GraphError, match="questions"):
        env.reset()


def test_ask_at_goal_ends_with_goal_reward(toy_graph, encoder):
    env = make_env(toy_graph, encoder, seed=2, mode_override=DialogMode.GUIDED)
    env.reset()
    follow_plan(env)
    assert env.current == env.user_goal.goal and not env.done
    result = env.step(0)
    assert result.done and result.info["reached_goal"]
    assert result.reward == pytest.approx(env.config.r_goal)
    assert env.goal_was_shown


def test_skip_to_next_trajectory_node_rewards_one(toy_graph, encoder):
    env = make_env(toy_graph, encoder, seed=2, mode_override=DialogMode.GUIDED)
    env.reset()
    result = skip_to(env, env.user_goal.trajectory[0].target)
    assert result.reward == pytest.approx(1.0)
    assert not result.done


def test_wrong_branch_unreachable_goal_fails(toy_graph, encoder):
    env = make_env(toy_graph, encoder, seed=4, mode_override=DialogMode.FREE)
    while True:
        env.reset()
        if env.user_goal.goal == "n06":  # refund leaf (billing branch)
            break
    skip_to(env, "n01")
    result = skip_to(env, "n03")  # device branch: refund leaf now unreachable
    assert result.done
    assert result.reward == pytest.approx(env.config.r_wrong_step)
    assert not env.goal_was_shown
    assert not result.info["correct_transition"]


def test_correct_trajectory_without_goal_ask_scores_zero(toy_graph, encoder):
    env = make_env(toy_graph, encoder, seed=3, mode_override=DialogMode.FREE)
    while True:
        env.reset()
        if env.user_goal.goal == "n05":  # interior question node
            break
    rewards = follow_plan(env)
    assert rewards == [1.0, 1.0, 1.0]
    assert env.current == "n05" and not env.done
    result = env.step(1)  # leave the goal instead of showing it
    assert result.done
    assert not env.goal_was_shown
    assert perceived_length(env.episode_log) == 0


def test_ask_start_until_max_turns(toy_graph, encoder):
    config = SimulatorConfig(max_turns=12)
    env = make_env(toy_graph, encoder, seed=6, config=config, mode_override=DialogMode.GUIDED)
    env.reset()
    done = False
    while not done:
        done = env.step(0).done
    assert not env.goal_was_shown
    assert perceived_length(env.episode_log) == 12


def test_reward_telescoping_guided(toy_graph, encoder):
    env = make_env(toy_graph, encoder, seed=9, mode_override=DialogMode.GUIDED)
    env.reset()
    length = len(env.user_goal.trajectory)
    total = sum(follow_plan(env))
    total += env.step(0).reward
    assert total == pytest.approx(length * env.config.r_correct_step + env.config.r_goal)


def test_reward_telescoping_free_with_ask_penalty(toy_graph, encoder):
    env = make_env(toy_graph, encoder, seed=10, mode_override=DialogMode.FREE)
    while True:
        env.reset()
        if len(env.user_goal.trajectory) >= 2:
            break
    length = len(env.user_goal.trajectory)
    total = env.step(0).reward  # one non-goal ASK at the start node
    total += sum(follow_plan(env))
    total += env.step(0).reward
    expected = (
        length * env.config.r_correct_step
        + env.config.r_goal
        + env.config.r_ask_free_nongoal
    )
    assert total == pytest.approx(expected)


def test_ask_at_question_node_elicits_consistent_reply(toy_graph, encoder):
    env = make_env(toy_graph, encoder, seed=12, mode_override=DialogMode.GUIDED)
    while True:
        env.reset()
        if len(env.user_goal.trajectory) >= 3:
            break
    skip_to(env, "n01")
    plan_answer = env.plan[0].answer
    env.step(0)  # ask the hub question
    reply = env.episode_log[-1]["utterance"]
    pool = [plan_answer.prototype_text, *plan_answer.paraphrases]
    assert reply in pool
    assert env.last_utterance == reply


def test_variable_node_collects_value(trips_graph, encoder):
    env = make_env(trips_graph, encoder, seed=1, mode_override=DialogMode.FREE)
    while True:
        env.reset()
        if env.user_goal.goal in ("i3", "i4"):
            break
    skip_to(env, "q1")
    skip_to(env, "v1")
    env.step(0)  # ask for the trip length
    value = env.user_goal.assignments["trip_length"]
    assert env.collected["trip_length"] == value
    assert env.episode_log[-1]["utterance"] == str(value)
    result = env.step(1)  # continue through the logic node
    assert result.info["correct_transition"]
    assert env.current == env.user_goal.goal


def test_skipping_variable_takes_default_branch(trips_graph, encoder):
    env = make_env(trips_graph, encoder, seed=2, mode_override=DialogMode.FREE)
    while True:
        env.reset()
        if env.user_goal.goal == "i3":  # long-trip info needs trip_length > 14
            break
    skip_to(env, "q1")
    skip_to(env, "v1")
    result = env.step(1)  # skip without collecting: logic falls to default i4
    assert env.current == "i4"
    assert result.done  # tree: i3 is no longer reachable
    assert not env.goal_was_shown


def test_perceived_length_counts_only_asks(toy_graph, encoder):
    env = make_env(toy_graph, encoder, seed=13, mode_override=DialogMode.GUIDED)
    env.reset()
    asks = 0
    while not env.done:
        if env.plan:
            node = env.graph.nodes[env.current]
            if node.kind == "question" and asks < 3:
                env.step(0)
                asks += 1
            else:
                skip_to(env, env.plan[0].target)
        else:
            env.step(0)
    assert perceived_length(env.episode_log) == asks + 1  # plus the goal ask


def test_observation_is_pure_function_of_visible_state(toy_graph, encoder):
    env = make_env(toy_graph, encoder, seed=14, mode_override=DialogMode.FREE)
    obs = env.reset()
    rebuilt = build_observation(
        encoder,
        env.user_goal.initial_utterance,
        env.last_utterance,
        toy_graph.nodes[env.current],
        env.turn_index,
        env.nodes_shown,
    )
    assert np.array_equal(obs.initial_vec, rebuilt.initial_vec)
    assert np.array_equal(obs.last_vec, rebuilt.last_vec)
    assert np.array_equal(obs.node_vec, rebuilt.node_vec)
    assert obs.mask == rebuilt.mask
    assert obs.turn_index == rebuilt.turn_index
    # no goal-bearing fields exist on the observation
    assert not any("goal" in f for f in obs.__dataclass_fields__)


def test_identical_seeds_identical_transcripts(toy_graph, encoder):
    import random

    transcripts = []
    for _ in range(2):
        env = make_env(toy_graph, encoder, seed=77)
        rng = random.Random(5)
        records = []
        for _ in range(4):
            env.reset()
            while not env.done:
                action = rng.randrange(env.action_count)
                env.step(action)
            records.extend(env.episode_log)
        transcripts.append(json.dumps(records))
    assert transcripts[0] == transcripts[1]


def test_mask_shape_and_errors(toy_graph, encoder):
    env = make_env(toy_graph, encoder, seed=15)
    obs = env.reset()
    node = toy_graph.nodes[env.current]
    assert len(obs.mask) == 1 + len(node.answers)
    with pytest.raises(IndexError):
        env.step(len(node.answers) + 1)


def test_step_after_done_rejected(toy_graph, encoder):
    env = make_env(toy_graph, encoder, seed=16, config=SimulatorConfig(max_turns=1))
    env.reset()
    env.step(0)
    assert env.done
    with pytest.raises(RuntimeError, match="finished"):
        env.step(0)


def test_keyword_pool_probability(toy_graph, encoder):
    split = DatasetSplit(
        questions={n.id: list(n.questions) for n in toy_graph.nodes.values() if n.questions},
        paraphrases={"a10": ["billing and invoices please"]},
        keyword_paraphrases={"a10": ["billing"]},
    )
    bank = UtteranceBank(toy_graph, split)

    def reply_for_a10(prob, seed):
        config = SimulatorConfig(keyword_response_probability=prob)
        env = make_env(
            toy_graph, encoder, seed=seed, config=config,
            bank=bank, mode_override=DialogMode.FREE,
        )
        while True:
            env.reset()
            if env.user_goal.goal in ("n02", "n05", "n06", "n11", "n12"):
                break
        skip_to(env, "n01")
        env.step(0)
        return env.episode_log[-1]["utterance"]

    assert reply_for_a10(1.0, seed=21) == "billing"
    assert reply_for_a10(0.0, seed=21) == "billing and invoices please"


def test_episode_jsonl_schema(toy_graph, encoder):
    env = make_env(toy_graph, encoder, seed=17)
    env.reset()
    env.step(0)
    env.step(1)
    lines = episode_to_jsonl(env.episode_log).splitlines()
    assert len(lines) == 2
    for line in lines:
        record = json.loads(line)
        assert set(record) == {"mode", "node", "action", "utterance", "reward", "shown"}


def test_split_bank_replaces_inline_banks(toy_graph, encoder):
    split = DatasetSplit(questions={"n06": ["only question left?"]}, paraphrases={})
    bank = UtteranceBank(toy_graph, split)
    assert bank.questions_for("n06") == ["only question left?"]
    assert bank.questions_for("n01") == []
    answer = toy_graph.nodes["n01"].answers[0]
    assert bank.responses_for(answer) == [answer.prototype_text]  # prototype fallback
