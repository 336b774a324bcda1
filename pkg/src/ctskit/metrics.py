"""Automatic quality metrics for utterance corpora.

Covers n-gram diversity (BLEU / self-BLEU), embedding-based cross-set
similarity, question answerability scoring, two-sample t-tests, and kernel
density export for length distributions.

BLEU convention used throughout: case-folded whitespace tokens with
punctuation detached, modified n-gram precisions with uniform weights,
a 1e-9 floor on zero precisions, and the closest-reference-length brevity
penalty (ties resolved toward the shorter reference). Orders for which the
candidate has no n-grams at all are left out of the geometric mean.
"""

from __future__ import annotations

import csv
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy.special import betainc

from .encoding import TextEncoder, cosine

__all__ = [
    "tokenize",
    "bleu",
    "self_bleu",
    "cross_similarity",
    "answerability",
    "OverlapScorer",
    "RemoteQAScorer",
    "t_test",
    "TTestResult",
    "silverman_bandwidth",
    "gaussian_kde_grid",
    "export_density",
    "QualityReport",
]

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")
_EPSILON = 1e-9


def tokenize(text: str) -> list[str]:
    """Case-fold, detach punctuation, split on whitespace."""
    return _TOKEN_RE.findall(text.casefold())


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: str, references: list[str], n: int = 4) -> float:
    """Sentence BLEU of ``candidate`` against ``references`` for orders 1..n."""
    if not candidate:
        raise ValueError("candidate must be non-empty")
    if not references:
        raise ValueError("reference set must be non-empty")
    cand = tokenize(candidate)
    refs = [tokenize(r) for r in references]

    log_sum = 0.0
    orders = 0
    for order in range(1, n + 1):
        cand_counts = _ngrams(cand, order)
        total = sum(cand_counts.values())
        if total == 0:
            continue
        max_ref = Counter()
        for ref in refs:
            for gram, count in _ngrams(ref, order).items():
                if count > max_ref[gram]:
                    max_ref[gram] = count
        clipped = sum(min(count, max_ref[gram]) for gram, count in cand_counts.items())
        precision = clipped / total
        log_sum += math.log(max(precision, _EPSILON))
        orders += 1
    if orders == 0:
        raise ValueError("candidate produced no tokens")
    score = math.exp(log_sum / orders)

    c = len(cand)
    r = min((len(ref) for ref in refs), key=lambda rl: (abs(rl - c), rl))
    if c < r:
        score *= math.exp(1.0 - r / c)
    return score


def self_bleu(corpus: list[str], n: int = 4) -> float:
    """Mean BLEU of each corpus item against the rest; lower = more diverse."""
    if len(corpus) < 2:
        raise ValueError("self-BLEU needs at least two corpus items")
    scores = []
    for i, item in enumerate(corpus):
        rest = corpus[:i] + corpus[i + 1 :]
        scores.append(bleu(item, rest, n))
    return sum(scores) / len(scores)


def cross_similarity(
    human: dict[str, list[str]],
    generated: dict[str, list[str]],
    encoder: TextEncoder,
) -> tuple[float, list[tuple[str, float]]]:
    """Mean pairwise cosine between human and generated items, per shared node.

    The overall value is the unweighted mean over nodes, so nodes with big
    banks do not dominate.
    """
    shared = sorted(set(human) & set(generated))
    shared = [nid for nid in shared if human[nid] and generated[nid]]
    if not shared:
        raise ValueError("no node occurs in both banks")
    per_node = []
    for nid in shared:
        h_vecs = [encoder.encode(t) for t in human[nid]]
        g_vecs = [encoder.encode(t) for t in generated[nid]]
        sims = [cosine(h, g) for h in h_vecs for g in g_vecs]
        per_node.append((nid, sum(sims) / len(sims)))
    avg = sum(v for _, v in per_node) / len(per_node)
    return avg, per_node


class QAScorer(Protocol):
    def score(self, question: str, context: str) -> float: ...


_STOPWORDS = frozenset(
    """a an the and or but if of to in on at for from by with about as is are was
    were be been being am do does did can could should would may might will shall
    what which who whom whose when where why how this that these those it its i
    you he she we they them his her their my your our me us not no nor so than
    then there here have has had get got""".split()
)


class OverlapScorer:
    """Lexical stand-in for a reading-comprehension model: the fraction of a
    question's content tokens that occur in the context."""

    def score(self, question: str, context: str) -> float:
        q_tokens = [t for t in tokenize(question) if t not in _STOPWORDS and t.isalnum()]
        if not q_tokens:
            return 0.0
        ctx = set(tokenize(context))
        return sum(1 for t in q_tokens if t in ctx) / len(q_tokens)


class RemoteQAScorer:
    """Scorer backed by an HTTP QA endpoint.

    Protocol: ``POST endpoint`` with ``{"question": ..., "context": ...}``
    returning ``{"score": <float in [0,1]>}``.
    """

    def __init__(self, endpoint: str, timeout: float = 10.0, max_retries: int = 3):
        self.endpoint = endpoint
        self.timeout = timeout
        self.max_retries = max_retries
        self._cache: dict[tuple[str, str], float] = {}

    def score(self, question: str, context: str) -> float:
        key = (question, context)
        if key in self._cache:
            return self._cache[key]
        import requests

        last_error = None
        for attempt in range(self.max_retries):
            try:
                resp = requests.post(
                    self.endpoint,
                    json={"question": question, "context": context},
                    timeout=self.timeout,
                )
                resp.raise_for_status()
                value = float(resp.json()["score"])
                self._cache[key] = value
                return value
            except Exception as exc:  # noqa: BLE001
                last_error = exc
                if attempt + 1 < self.max_retries:
                    import time

                    time.sleep(0.2 * 2**attempt)
        raise RuntimeError(f"QA endpoint {self.endpoint} failed: {last_error}")


def answerability(questions: list[str], context: str, scorer: QAScorer) -> float:
    """Mean scorer confidence that ``context`` answers each question."""
    if not questions:
        raise ValueError("question corpus must be non-empty")
    return sum(scorer.score(q, context) for q in questions) / len(questions)


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: float
    p: float

    def as_dict(self) -> dict:
        return {"t": self.t, "df": self.df, "p": self.p}


def _t_sf_two_sided(t: float, df: float) -> float:
    # two-sided p via the regularized incomplete beta function
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return float(betainc(df / 2.0, 0.5, x))


def t_test(a: list[float], b: list[float], variant: str = "welch") -> TTestResult:
    """Two-sample t-test, Student (pooled) or Welch (unequal variance)."""
    if variant not in ("student", "welch"):
        raise ValueError(f"unknown variant {variant!r}")
    if len(a) < 2 or len(b) < 2:
        raise ValueError("both samples need at least two observations")
    xa = np.asarray(a, dtype=np.float64)
    xb = np.asarray(b, dtype=np.float64)
    na, nb = len(xa), len(xb)
    va = float(xa.var(ddof=1))
    vb = float(xb.var(ddof=1))
    diff = float(xa.mean() - xb.mean())
    if variant == "student":
        pooled = ((na - 1) * va + (nb - 1) * vb) / (na + nb - 2)
        if pooled == 0.0:
            raise ValueError("degenerate variance: both samples are constant")
        se = math.sqrt(pooled * (1.0 / na + 1.0 / nb))
        df = float(na + nb - 2)
    else:
        sa, sb = va / na, vb / nb
        if sa + sb == 0.0:
            raise ValueError("degenerate variance: both samples are constant")
        se = math.sqrt(sa + sb)
        df = (sa + sb) ** 2 / (sa**2 / (na - 1) + sb**2 / (nb - 1))
    t = diff / se
    return TTestResult(t=t, df=df, p=_t_sf_two_sided(t, df))


def silverman_bandwidth(values: np.ndarray) -> float:
    """Rule-of-thumb Gaussian bandwidth 0.9 * min(sd, IQR/1.34) * n^(-1/5).

    Falls back to whichever scale estimate is positive; 1.0 when the sample is
    constant so a degenerate sample still renders as a peak.
    """
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    sd = float(values.std(ddof=1)) if n > 1 else 0.0
    q75, q25 = np.percentile(values, [75.0, 25.0])
    iqr_scale = float(q75 - q25) / 1.34
    if sd > 0 and iqr_scale > 0:
        scale = min(sd, iqr_scale)
    else:
        scale = max(sd, iqr_scale)
    if scale <= 0:
        return 1.0
    return 0.9 * scale * n ** (-0.2)


def gaussian_kde_grid(
    values: list[float], grid_points: int = 200
) -> tuple[np.ndarray, np.ndarray, float]:
    """Evaluate a Gaussian KDE on an evenly spaced grid spanning the sample.

    Returns (grid, density, bandwidth); the grid extends 3 bandwidths past the
    sample range.
    """
    if not len(values):
        raise ValueError("sample must be non-empty")
    data = np.asarray(values, dtype=np.float64)
    h = silverman_bandwidth(data)
    lo = data.min() - 3.0 * h
    hi = data.max() + 3.0 * h
    grid = np.linspace(lo, hi, grid_points)
    z = (grid[:, None] - data[None, :]) / h
    density = np.exp(-0.5 * z**2).sum(axis=1) / (len(data) * h * math.sqrt(2.0 * math.pi))
    return grid, density, h


def export_density(values: list[float], path, grid_points: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Write a two-column density CSV: 200 grid rows (x, density) followed by
    the raw sample values with an empty density field."""
    grid, density, _ = gaussian_kde_grid(values, grid_points)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "density"])
        for x, d in zip(grid, density):
            writer.writerow([repr(float(x)), repr(float(d))])
        for v in values:
            writer.writerow([repr(float(v)), ""])
    return grid, density


@dataclass
class QualityReport:
    """Summary of a generated bank's diversity, similarity, and answerability."""

    self_bleu: dict[int, float]
    avg_answerability: float
    length_histogram: dict[int, int]
    avg_cross_similarity: float | None = None
    per_node_cross_similarity: list[tuple[str, float]] = field(default_factory=list)
    tests: list[dict] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "self_bleu": {str(k): v for k, v in self.self_bleu.items()},
            "avg_cross_similarity": self.avg_cross_similarity,
            "per_node_cross_similarity": [
                {"node": nid, "similarity": val} for nid, val in self.per_node_cross_similarity
            ],
            "avg_answerability": self.avg_answerability,
            "length_histogram": {str(k): v for k, v in sorted(self.length_histogram.items())},
            "tests": self.tests,
        }
