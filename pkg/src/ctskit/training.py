"""Munchausen double-DQN training for the dialog policy.

The regression target adds the clipped scaled log-policy bonus to the reward
and bootstraps with the entropy-regularized soft backup, both computed from
the frozen target network:

    target = r + alpha * clip(tau * ln pi(a|s), clip_lo, 0)
             + (1 - done) * gamma * sum_a' pi(a'|s') * (Q_t(s',a') - tau * ln pi(a'|s'))

with pi = softmax(Q_t / tau) over unmasked actions, clamped to +-q_clip.
The total loss is Huber(Q(s,a), target) plus a down-weighted cross-entropy on
the dialog-mode head.
"""

from __future__ import annotations

import math
import random
from copy import deepcopy
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from .evaluation import EvalReport, evaluate_policy, net_policy
from .policy import EncodedBatch, QNetwork, batchify, greedy_action
from .replay import ReplayBuffer, Transition
from .simulator import DialogEnv, DialogMode

__all__ = [
    "TrainerConfig",
    "PreparedBatch",
    "prepare_batch",
    "munchausen_target",
    "compute_loss",
    "mode_prediction_metrics",
    "epsilon_at",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "TrainResult",
    "train",
]


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 1e-4
    mode_loss_weight: float = 0.1
    total_turns: int = 2_000_000
    grad_clip_norm: float = 1.0
    batch_size: int = 256
    gamma: float = 0.99
    exploration_fraction: float = 0.99
    epsilon_start: float = 0.6
    epsilon_end: float = 0.0
    train_frequency: int = 3
    training_start: int = 1280
    target_update_interval: int = 15
    q_clip: float = 10.0
    munchausen_tau: float = 0.03
    munchausen_alpha: float = 0.9
    munchausen_clip: float = -1.0
    eval_frequency: int = 10_000
    eval_dialogs: int = 500
    buffer_capacity: int = 100_000
    hidden_sizes: tuple[int, ...] = (512, 512)
    score_dim: int = 128
    huber_delta: float = 1.0

    def __post_init__(self):
        if self.epsilon_end > self.epsilon_start:
            raise ValueError("epsilon_end must not exceed epsilon_start")
        for name in (
            "learning_rate",
            "total_turns",
            "batch_size",
            "gamma",
            "train_frequency",
            "target_update_interval",
            "eval_frequency",
            "eval_dialogs",
            "buffer_capacity",
            "munchausen_tau",
            "q_clip",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def as_dict(self) -> dict:
        raw = asdict(self)
        raw["hidden_sizes"] = list(self.hidden_sizes)
        return raw

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainerConfig":
        raw = dict(raw)
        if "hidden_sizes" in raw:
            raw["hidden_sizes"] = tuple(raw["hidden_sizes"])
        return cls(**raw)


def epsilon_at(turn: int, config: TrainerConfig) -> float:
    """Linear schedule from epsilon_start at turn 0 to epsilon_end at
    exploration_fraction * total_turns, constant afterwards."""
    duration = config.exploration_fraction * config.total_turns
    slope = (config.epsilon_end - config.epsilon_start) / duration
    return max(config.epsilon_start + slope * turn, config.epsilon_end)


@dataclass
class PreparedBatch:
    current: EncodedBatch
    next: EncodedBatch
    actions: torch.Tensor      # (B,) long
    rewards: torch.Tensor      # (B,)
    dones: torch.Tensor        # (B,)
    mode_labels: torch.Tensor  # (B,) long


def prepare_batch(
    transitions: list[Transition], turn_norm: float, dtype=torch.float32
) -> PreparedBatch:
    np_dtype = np.float64 if dtype == torch.float64 else np.float32
    return PreparedBatch(
        current=batchify([t.obs for t in transitions], turn_norm, dtype),
        next=batchify([t.next_obs for t in transitions], turn_norm, dtype),
        actions=torch.from_numpy(np.fromiter((t.action for t in transitions), np.int64)),
        rewards=torch.from_numpy(np.fromiter((t.reward for t in transitions), np_dtype)),
        dones=torch.from_numpy(np.fromiter((float(t.done) for t in transitions), np_dtype)),
        mode_labels=torch.from_numpy(np.fromiter((t.mode_label for t in transitions), np.int64)),
    )


@torch.no_grad()
def munchausen_target(batch: PreparedBatch, target_net, config: TrainerConfig) -> torch.Tensor:
    """Per-sample regression targets; see module docstring for the formula."""
    q_curr, _ = target_net(batch.current)
    q_next, _ = target_net(batch.next)
    tau = config.munchausen_tau

    log_pi_curr = tau * torch.log_softmax(q_curr / tau, dim=1)
    taken = log_pi_curr.gather(1, batch.actions.unsqueeze(1)).squeeze(1)
    bonus = config.munchausen_alpha * taken.clamp(min=config.munchausen_clip, max=0.0)

    pi_next = torch.softmax(q_next / tau, dim=1)
    log_pi_next = tau * torch.log_softmax(q_next / tau, dim=1)
    soft = (pi_next * (q_next - log_pi_next)).masked_fill(~batch.next.mask, 0.0).sum(dim=1)

    target = batch.rewards + bonus + (1.0 - batch.dones) * config.gamma * soft
    if not torch.isfinite(target).all():
        bad = torch.nonzero(~torch.isfinite(target)).flatten().tolist()
        raise FloatingPointError(f"non-finite target for batch samples {bad}")
    return target.clamp(-config.q_clip, config.q_clip)


def compute_loss(
    batch: PreparedBatch, net: QNetwork, target_net: QNetwork, config: TrainerConfig
) -> tuple[torch.Tensor, float, float]:
    """Joint loss: Huber value regression plus weighted mode cross-entropy."""
    q, mode_logits = net(batch.current)
    q_taken = q.gather(1, batch.actions.unsqueeze(1)).squeeze(1)
    target = munchausen_target(batch, target_net, config)
    value_loss = F.huber_loss(q_taken, target, delta=config.huber_delta)
    mode_loss = F.cross_entropy(mode_logits, batch.mode_labels)
    total = value_loss + config.mode_loss_weight * mode_loss
    return total, float(value_loss.detach()), float(mode_loss.detach())


def mode_prediction_metrics(episodes: list[tuple[int, list[int]]]) -> tuple[float, float]:
    """Macro-F1 of per-episode majority mode predictions, and the fraction of
    episodes whose per-turn predictions never change.

    Each episode is (true_mode, per-turn predictions); majority ties resolve
    to guided (label 0).
    """
    if not episodes:
        raise ValueError("no episodes")
    consistent = 0
    majorities = []
    truths = []
    for true_mode, preds in episodes:
        if not preds:
            raise ValueError("episode without mode predictions")
        if len(set(preds)) == 1:
            consistent += 1
        majorities.append(1 if sum(preds) * 2 > len(preds) else 0)
        truths.append(true_mode)
    f1_per_class = []
    for cls in (0, 1):
        tp = sum(1 for t, m in zip(truths, majorities) if t == cls and m == cls)
        fp = sum(1 for t, m in zip(truths, majorities) if t != cls and m == cls)
        fn = sum(1 for t, m in zip(truths, majorities) if t == cls and m != cls)
        denom = 2 * tp + fp + fn
        f1_per_class.append(2 * tp / denom if denom else 0.0)
    return sum(f1_per_class) / 2, consistent / len(episodes)


@dataclass
class Checkpoint:
    net_state: dict
    target_state: dict
    optimizer_state: dict
    net_config: dict
    trainer_config: dict
    turn: int
    train_steps: int
    meta: dict = field(default_factory=dict)
    resume: dict | None = None

    def build_net(self) -> QNetwork:
        net = QNetwork(**self.net_config)
        net.load_state_dict(self.net_state)
        net.eval()
        return net


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    torch.save(
        {
            "format": 1,
            "net_state": checkpoint.net_state,
            "target_state": checkpoint.target_state,
            "optimizer_state": checkpoint.optimizer_state,
            "net_config": checkpoint.net_config,
            "trainer_config": checkpoint.trainer_config,
            "turn": checkpoint.turn,
            "train_steps": checkpoint.train_steps,
            "meta": checkpoint.meta,
            "resume": checkpoint.resume,
        },
        path,
    )


def load_checkpoint(path) -> Checkpoint:
    raw = torch.load(path, map_location="cpu", weights_only=False)
    if raw.get("format") != 1:
        raise ValueError(f"unsupported checkpoint format {raw.get('format')!r}")
    return Checkpoint(
        net_state=raw["net_state"],
        target_state=raw["target_state"],
        optimizer_state=raw["optimizer_state"],
        net_config=raw["net_config"],
        trainer_config=raw["trainer_config"],
        turn=raw["turn"],
        train_steps=raw["train_steps"],
        meta=raw.get("meta", {}),
        resume=raw.get("resume"),
    )


@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    curve: list[dict]
    best_report: EvalReport | None


def _snapshot(net: QNetwork) -> dict:
    return {k: v.detach().clone() for k, v in net.state_dict().items()}


def train(
    env_factory: Callable[..., DialogEnv],
    config: TrainerConfig,
    seed: int,
    meta: dict | None = None,
    stop_after_turns: int | None = None,
    resume_from: Checkpoint | None = None,
    on_eval: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Run the training loop and return the best checkpoint by combined success.

    ``env_factory(seed=..., mode_override=...)`` must build independent
    environments. ``stop_after_turns`` ends the run early with a resumable
    checkpoint (replay buffer and environment snapshot included);
    ``resume_from`` continues such a run bit-identically on the same platform.
    """
    torch.manual_seed(seed)
    env = env_factory(seed=seed)
    turn_norm = 1.0 / env.config.max_turns

    obs = env.reset()
    net = QNetwork(env.encoder.dim, config.hidden_sizes, config.score_dim)
    target_net = QNetwork(env.encoder.dim, config.hidden_sizes, config.score_dim)
    target_net.load_state_dict(net.state_dict())
    target_net.eval()
    optimizer = torch.optim.Adam(net.parameters(), lr=config.learning_rate, foreach=True)
    buffer = ReplayBuffer(config.buffer_capacity)
    explore_rng = random.Random(seed + 101)
    sample_rng = random.Random(seed + 202)

    start_turn = 0
    train_steps = 0
    curve: list[dict] = []
    best_state: dict | None = None
    best_report: EvalReport | None = None
    best_score = -math.inf

    if resume_from is not None:
        if resume_from.resume is None:
            raise ValueError("checkpoint does not carry a resume payload")
        net.load_state_dict(resume_from.net_state)
        target_net.load_state_dict(resume_from.target_state)
        optimizer.load_state_dict(resume_from.optimizer_state)
        payload = resume_from.resume
        explore_rng.setstate(payload["explore_rng"])
        sample_rng.setstate(payload["sample_rng"])
        torch.set_rng_state(payload["torch_rng"])
        env.set_state(payload["env_state"])
        obs = payload["env_obs"]
        buffer = payload["buffer"]
        start_turn = resume_from.turn
        train_steps = resume_from.train_steps
        curve = list(payload.get("curve", []))

    nonfinite_streak = 0
    losses: list[float] = [] if resume_from is None else list(resume_from.resume["losses"])

    def make_checkpoint(turn: int, with_resume: bool) -> Checkpoint:
        ckpt = Checkpoint(
            net_state=_snapshot(net),
            target_state=_snapshot(target_net),
            optimizer_state=deepcopy(optimizer.state_dict()),
            net_config=net.config(),
            trainer_config=config.as_dict(),
            turn=turn,
            train_steps=train_steps,
            meta=dict(meta or {}),
        )
        if with_resume:
            ckpt.resume = {
                "explore_rng": explore_rng.getstate(),
                "sample_rng": sample_rng.getstate(),
                "torch_rng": torch.get_rng_state(),
                "env_state": env.get_state(),
                "env_obs": obs,
                "buffer": buffer,
                "curve": curve,
                "losses": losses,
            }
        return ckpt

    def run_eval(turn: int) -> None:
        nonlocal best_state, best_report, best_score
        report = evaluate_policy(
            env_factory,
            net_policy(net, turn_norm),
            n_dialogs=config.eval_dialogs,
            seed=seed + 9001,
        )
        point = {
            "turn": turn,
            "loss": sum(losses[-50:]) / len(losses[-50:]) if losses else math.nan,
            "success_guided": report.success_guided,
            "success_free": report.success_free,
            "success_combined": report.success_combined,
            "mode_f1": report.mode_f1,
            "mode_consistency": report.mode_consistency,
        }
        curve.append(point)
        if on_eval is not None:
            on_eval(point)
        if report.success_combined > best_score:
            best_score = report.success_combined
            best_state = {
                "net": _snapshot(net),
                "target": _snapshot(target_net),
                "optimizer": deepcopy(optimizer.state_dict()),
                "turn": turn,
                "train_steps": train_steps,
            }
            best_report = report

    for turn in range(start_turn, config.total_turns):
        if stop_after_turns is not None and turn >= stop_after_turns:
            last = make_checkpoint(turn, with_resume=True)
            return TrainResult(best=last, last=last, curve=curve, best_report=best_report)

        eps = epsilon_at(turn, config)
        if explore_rng.random() < eps:
            action = explore_rng.randrange(env.action_count)
        else:
            action, _ = greedy_action(net, obs, turn_norm)
        result = env.step(action)
        mode_label = 0 if env.mode == DialogMode.GUIDED else 1
        buffer.add(
            Transition(
                obs=obs,
                action=action,
                reward=result.reward,
                next_obs=result.observation if result.observation is not None else obs,
                done=result.done,
                mode_label=mode_label,
            )
        )
        obs = result.observation if result.observation is not None else env.reset()

        completed = turn + 1
        if completed >= config.training_start and completed % config.train_frequency == 0:
            if len(buffer) >= config.batch_size:
                batch = prepare_batch(buffer.sample(config.batch_size, sample_rng), turn_norm)
                loss, _, _ = compute_loss(batch, net, target_net, config)
                if not torch.isfinite(loss):
                    nonfinite_streak += 1
                    if nonfinite_streak >= 10:
                        raise RuntimeError(
                            f"training diverged: {nonfinite_streak} consecutive non-finite losses"
                        )
                else:
                    nonfinite_streak = 0
                    optimizer.zero_grad()
                    loss.backward()
                    torch.nn.utils.clip_grad_norm_(net.parameters(), config.grad_clip_norm)
                    optimizer.step()
                    losses.append(float(loss.detach()))
                train_steps += 1
                if train_steps % config.target_update_interval == 0:
                    target_net.load_state_dict(net.state_dict())

        if completed % config.eval_frequency == 0:
            run_eval(completed)

    if config.total_turns % config.eval_frequency != 0 or not curve:
        run_eval(config.total_turns)

    last = make_checkpoint(config.total_turns, with_resume=False)
    best = make_checkpoint(config.total_turns, with_resume=False)
    if best_state is not None:
        best.net_state = best_state["net"]
        best.target_state = best_state["target"]
        best.optimizer_state = best_state["optimizer"]
        best.turn = best_state["turn"]
        best.train_steps = best_state["train_steps"]
    return TrainResult(best=best, last=last, curve=curve, best_report=best_report)
