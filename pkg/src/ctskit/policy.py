"""Q-network with per-action text scoring and a dialog-mode head.

The state trunk is an MLP over the concatenated observation vectors (initial
utterance, last utterance, current node text, plus turn counters). Actions are
scored bilinearly against their encoded answer texts so the action set can
vary per node; ASK carries a learned embedding instead of text. Unique action
texts are deduplicated per batch, which keeps the scorer cheap on small
domains where the same answers recur constantly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .simulator import Observation

__all__ = ["QNetwork", "EncodedBatch", "batchify", "greedy_action", "q_values"]


@dataclass
class EncodedBatch:
    states: torch.Tensor        # (B, 3d+2)
    answer_index: torch.Tensor  # (B, A-1) indices into uniq_emb, -1 = padding
    uniq_emb: torch.Tensor      # (U, d) deduplicated answer-text embeddings
    mask: torch.Tensor          # (B, A) bool; column 0 is ASK

    @property
    def batch_size(self) -> int:
        return self.states.shape[0]


# Content interning for action vectors. Deduplication must be value-based,
# not identity-based: a replay buffer restored from a checkpoint holds copies
# of arrays the live encoder also caches, and mixing the two must not change
# batch shapes (and with them low-order matmul rounding). Each distinct array
# object pays one tobytes() then resolves by id; entries pin their arrays so
# ids cannot be recycled.
_VEC_SLOT_BY_ID: dict[int, tuple[np.ndarray, int]] = {}
_VEC_SLOT_BY_CONTENT: dict[bytes, int] = {}


def _vec_slot(vec: np.ndarray) -> int:
    entry = _VEC_SLOT_BY_ID.get(id(vec))
    if entry is None:
        content = vec.tobytes()
        slot = _VEC_SLOT_BY_CONTENT.setdefault(content, len(_VEC_SLOT_BY_CONTENT))
        _VEC_SLOT_BY_ID[id(vec)] = (vec, slot)
        return slot
    return entry[1]


# per-action-set cache used by the single-observation fast path
_ACTION_STRUCT_CACHE: dict[tuple[int, ...], tuple[torch.Tensor, torch.Tensor, torch.Tensor]] = {}


def _single_observation_batch(obs: Observation, turn_norm: float, np_dtype) -> EncodedBatch:
    key = (obs.initial_vec.shape[0], *(_vec_slot(v) for v in obs.action_vecs))
    cached = _ACTION_STRUCT_CACHE.get(key)
    if cached is None:
        n = len(obs.action_vecs)
        if n:
            uniq = torch.from_numpy(np.stack(obs.action_vecs).astype(np.float32))
        else:
            uniq = torch.zeros((1, obs.initial_vec.shape[0]), dtype=torch.float32)
        answer_index = torch.arange(n, dtype=torch.long).unsqueeze(0)
        mask = torch.ones((1, n + 1), dtype=torch.bool)
        cached = (uniq, answer_index, mask)
        _ACTION_STRUCT_CACHE[key] = cached
    uniq, answer_index, mask = cached
    states = torch.from_numpy(obs.state_row(turn_norm, np_dtype)).unsqueeze(0)
    return EncodedBatch(states=states, answer_index=answer_index, uniq_emb=uniq, mask=mask)


def batchify(
    observations: list[Observation], turn_norm: float, dtype=torch.float32
) -> EncodedBatch:
    """Assemble observations into tensors, deduplicating shared action vectors."""
    b = len(observations)
    d = observations[0].initial_vec.shape[0]
    np_dtype = np.float64 if dtype == torch.float64 else np.float32
    if b == 1 and dtype == torch.float32:
        return _single_observation_batch(observations[0], turn_norm, np_dtype)

    a_max = max(len(o.action_vecs) for o in observations)
    states = np.empty((b, 3 * d + 2), dtype=np_dtype)
    answer_index = np.full((b, a_max), -1, dtype=np.int64)
    mask = np.zeros((b, a_max + 1), dtype=bool)
    mask[:, 0] = True
    uniq_pos: dict[int, int] = {}
    uniq_vecs: list[np.ndarray] = []
    for i, obs in enumerate(observations):
        states[i] = obs.state_row(turn_norm, np_dtype)
        for j, vec in enumerate(obs.action_vecs):
            slot = _vec_slot(vec)
            pos = uniq_pos.get(slot)
            if pos is None:
                pos = len(uniq_vecs)
                uniq_pos[slot] = pos
                uniq_vecs.append(vec)
            answer_index[i, j] = pos
            mask[i, j + 1] = True
    if uniq_vecs:
        uniq = np.stack(uniq_vecs).astype(np_dtype)
    else:
        uniq = np.zeros((1, d), dtype=np_dtype)
    return EncodedBatch(
        states=torch.from_numpy(states),
        answer_index=torch.from_numpy(answer_index),
        uniq_emb=torch.from_numpy(uniq),
        mask=torch.from_numpy(mask),
    )


class QNetwork(nn.Module):
    def __init__(
        self,
        encoder_dim: int,
        hidden_sizes: tuple[int, ...] = (512, 512),
        score_dim: int = 128,
    ):
        super().__init__()
        self.encoder_dim = encoder_dim
        self.hidden_sizes = tuple(hidden_sizes)
        self.score_dim = score_dim
        layers: list[nn.Module] = []
        in_dim = 3 * encoder_dim + 2
        for width in hidden_sizes:
            layers.append(nn.Linear(in_dim, width))
            layers.append(nn.ReLU())
            in_dim = width
        self.trunk = nn.Sequential(*layers)
        self.state_proj = nn.Linear(in_dim, score_dim)
        self.action_proj = nn.Linear(encoder_dim, score_dim)
        self.value_head = nn.Linear(in_dim, 1)
        self.mode_head = nn.Linear(in_dim, 2)
        self.ask_embedding = nn.Parameter(torch.randn(encoder_dim) * 0.1)

    def forward(self, batch: EncodedBatch) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (q, mode_logits); masked action slots are -inf."""
        features = self.trunk(batch.states)
        p = self.state_proj(features)                      # (B, k)
        qa = self.action_proj(batch.uniq_emb)              # (U, k)
        ask = self.action_proj(self.ask_embedding)         # (k,)
        skip_scores = (p @ qa.T).gather(1, batch.answer_index.clamp(min=0))
        ask_score = p @ ask
        q = torch.cat([ask_score.unsqueeze(1), skip_scores], dim=1)
        q = q + self.value_head(features)
        q = q.masked_fill(~batch.mask, float("-inf"))
        return q, self.mode_head(features)

    def config(self) -> dict:
        return {
            "encoder_dim": self.encoder_dim,
            "hidden_sizes": list(self.hidden_sizes),
            "score_dim": self.score_dim,
        }


@torch.no_grad()
def q_values(net: QNetwork, obs: Observation, turn_norm: float) -> list[tuple[int, float]]:
    """Per-action Q for the unmasked actions of one observation."""
    if not any(obs.mask):
        raise ValueError("observation has no unmasked action")
    batch = batchify([obs], turn_norm, dtype=next(net.parameters()).dtype)
    q, _ = net(batch)
    row = q[0]
    return [(a, float(row[a])) for a, ok in enumerate(obs.mask) if ok]


@torch.no_grad()
def greedy_action(net: QNetwork, obs: Observation, turn_norm: float) -> tuple[int, int]:
    """Argmax action and the mode head's per-turn prediction (0=guided, 1=free)."""
    batch = batchify([obs], turn_norm, dtype=next(net.parameters()).dtype)
    q, mode_logits = net(batch)
    return int(q[0].argmax()), int(mode_logits[0].argmax())
