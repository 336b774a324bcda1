"""Dialog-success evaluation harness.

Runs greedy episodes half in guided and half in free mode and aggregates the
headline metrics: per-mode success, their mean (combined success), the
perceived dialog length (nodes actually shown), and the mode-prediction
quality of the policy's dialog-mode head.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .graph import NodeKind
from .policy import QNetwork, greedy_action
from .simulator import DialogEnv, DialogMode, Observation

__all__ = [
    "EvalReport",
    "PolicyFn",
    "net_policy",
    "OraclePolicy",
    "evaluate_policy",
    "evaluate_checkpoint",
]

# (observation, env) -> (action index, mode prediction or None)
PolicyFn = Callable[[Observation, DialogEnv], tuple[int, int | None]]


@dataclass(frozen=True)
class EvalReport:
    success_guided: float
    success_free: float
    success_combined: float
    avg_perceived_length_guided: float
    avg_perceived_length_free: float
    mode_f1: float | None
    mode_consistency: float | None
    dialog_count: int

    def as_dict(self) -> dict:
        return {
            "success_guided": self.success_guided,
            "success_free": self.success_free,
            "success_combined": self.success_combined,
            "avg_perceived_length_guided": self.avg_perceived_length_guided,
            "avg_perceived_length_free": self.avg_perceived_length_free,
            "mode_f1": self.mode_f1,
            "mode_consistency": self.mode_consistency,
            "dialog_count": self.dialog_count,
        }


def net_policy(net: QNetwork, turn_norm: float) -> PolicyFn:
    """Greedy policy over the network's Q-values, with mode predictions."""

    def policy(obs: Observation, env: DialogEnv) -> tuple[int, int | None]:
        return greedy_action(net, obs, turn_norm)

    return policy


class OraclePolicy:
    """Reference policy that reads the hidden goal: follows the planned
    trajectory, collects variables it passes, and asks the goal node."""

    def __call__(self, obs: Observation, env: DialogEnv) -> tuple[int, int | None]:
        node = env.graph.nodes[env.current]
        if env.current == env.user_goal.goal:
            return 0, None
        if (
            node.kind == NodeKind.VARIABLE
            and node.variable is not None
            and node.variable.name not in env.collected
        ):
            return 0, None  # collect the value before moving on
        if env.plan:
            step = env.plan[0]
            for i, answer in enumerate(node.answers):
                if step.answer is not None and answer.id == step.answer.id:
                    return i + 1, None
        return 0, None


def _run_mode(
    env: DialogEnv, policy: PolicyFn, episodes: int, max_steps: int
) -> tuple[list[bool], list[int], list[list[int]]]:
    successes: list[bool] = []
    lengths: list[int] = []
    predictions: list[list[int]] = []
    for _ in range(episodes):
        obs = env.reset()
        preds: list[int] = []
        for _ in range(max_steps):
            action, mode_pred = policy(obs, env)
            if mode_pred is not None:
                preds.append(mode_pred)
            result = env.step(action)
            if result.done:
                break
            obs = result.observation
        successes.append(env.goal_was_shown)
        lengths.append(env.nodes_shown)
        predictions.append(preds)
    return successes, lengths, predictions


def evaluate_policy(
    env_factory: Callable[..., DialogEnv],
    policy: PolicyFn,
    n_dialogs: int = 500,
    seed: int = 0,
) -> EvalReport:
    """Greedy evaluation: n/2 guided and n/2 free episodes under a fixed seed."""
    n_guided = n_dialogs // 2
    n_free = n_dialogs - n_guided
    guided_env = env_factory(seed=seed, mode_override=DialogMode.GUIDED)
    free_env = env_factory(seed=seed + 1, mode_override=DialogMode.FREE)
    max_steps = guided_env.config.max_turns + 1

    g_succ, g_len, g_preds = _run_mode(guided_env, policy, n_guided, max_steps)
    f_succ, f_len, f_preds = _run_mode(free_env, policy, n_free, max_steps)

    episodes = [(0, p) for p in g_preds if p] + [(1, p) for p in f_preds if p]
    if episodes and len(episodes) == len(g_preds) + len(f_preds):
        from .training import mode_prediction_metrics

        mode_f1, mode_consistency = mode_prediction_metrics(episodes)
    else:
        mode_f1 = mode_consistency = None

    success_guided = sum(g_succ) / len(g_succ) if g_succ else 0.0
    success_free = sum(f_succ) / len(f_succ) if f_succ else 0.0
    return EvalReport(
        success_guided=success_guided,
        success_free=success_free,
        success_combined=(success_guided + success_free) / 2.0,
        avg_perceived_length_guided=sum(g_len) / len(g_len) if g_len else 0.0,
        avg_perceived_length_free=sum(f_len) / len(f_len) if f_len else 0.0,
        mode_f1=mode_f1,
        mode_consistency=mode_consistency,
        dialog_count=n_dialogs,
    )


def evaluate_checkpoint(
    checkpoint,
    env_factory: Callable[..., DialogEnv],
    n_dialogs: int = 500,
    seed: int = 0,
) -> EvalReport:
    """Evaluate a trained checkpoint's greedy policy."""
    net = checkpoint.build_net()
    probe = env_factory(seed=seed)
    if net.encoder_dim != probe.encoder.dim:
        raise ValueError(
            f"checkpoint encoder dimension {net.encoder_dim} does not match "
            f"environment encoder dimension {probe.encoder.dim}"
        )
    turn_norm = 1.0 / probe.config.max_turns
    return evaluate_policy(env_factory, net_policy(net, turn_norm), n_dialogs, seed)
