"""Quality-report assembly and rendering.

Builds a :class:`~ctskit.metrics.QualityReport` for a generated question bank
(optionally against a human reference bank), renders an aligned self-BLEU
text table, and writes density CSVs plus matplotlib figures next to the JSON
report so report directories are self-contained.
"""

from __future__ import annotations

import json
from collections import Counter
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .encoding import TextEncoder, cosine
from .graph import DialogGraph
from .metrics import (
    OverlapScorer,
    QAScorer,
    QualityReport,
    export_density,
    self_bleu,
    t_test,
    tokenize,
)

__all__ = [
    "build_quality_report",
    "render_self_bleu_table",
    "write_quality_artifacts",
]


def _question_lengths(bank: dict[str, list[str]]) -> list[int]:
    return [len(tokenize(q)) for questions in bank.values() for q in questions]


def _answerability_scores(
    bank: dict[str, list[str]], graph: DialogGraph, scorer: QAScorer
) -> list[float]:
    scores = []
    for node_id, questions in bank.items():
        node = graph.nodes.get(node_id)
        if node is None or not node.text or not questions:
            continue
        scores.extend(scorer.score(q, node.text) for q in questions)
    return scores


def build_quality_report(
    generated: dict[str, list[str]],
    graph: DialogGraph,
    encoder: TextEncoder,
    human: dict[str, list[str]] | None = None,
    scorer: QAScorer | None = None,
    bleu_orders: tuple[int, ...] = (1, 2, 3, 4, 5),
) -> QualityReport:
    """Diversity, answerability, and (with a reference bank) similarity and
    significance tests for a generated question bank."""
    scorer = scorer or OverlapScorer()
    corpus = [q for questions in generated.values() for q in questions]
    if len(corpus) < 2:
        raise ValueError("generated bank needs at least two questions")

    gen_scores = _answerability_scores(generated, graph, scorer)
    report = QualityReport(
        self_bleu={n: self_bleu(corpus, n) for n in bleu_orders},
        avg_answerability=sum(gen_scores) / len(gen_scores) if gen_scores else 0.0,
        length_histogram=dict(Counter(_question_lengths(generated))),
    )

    if human:
        from .metrics import cross_similarity

        avg, per_node = cross_similarity(human, generated, encoder)
        report.avg_cross_similarity = avg
        report.per_node_cross_similarity = per_node

        gen_lengths = [float(v) for v in _question_lengths(generated)]
        human_lengths = [float(v) for v in _question_lengths(human)]
        human_scores = _answerability_scores(human, graph, scorer)
        for metric, a, b in (
            ("question_length", human_lengths, gen_lengths),
            ("answerability", human_scores, gen_scores),
        ):
            if len(a) >= 2 and len(b) >= 2:
                try:
                    result = t_test(a, b, "welch")
                except ValueError:
                    continue
                report.tests.append(
                    {"metric": metric, "statistic": result.t, "df": result.df, "p": result.p}
                )
    return report


def render_self_bleu_table(rows: dict[str, dict[int, float]]) -> str:
    """Aligned text table of self-BLEU scores, one row per bank."""
    orders = sorted({n for scores in rows.values() for n in scores})
    header = ["Bank"] + [f"n-{n}" for n in orders]
    body = [
        [name] + [f"{scores.get(n, float('nan')):.2f}" for n in orders]
        for name, scores in rows.items()
    ]
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = []
    for row in [header] + body:
        lines.append("  ".join(cell.ljust(width) for cell, width in zip(row, widths)))
    return "\n".join(lines) + "\n"


def _pairwise_similarities(
    human: dict[str, list[str]], generated: dict[str, list[str]], encoder: TextEncoder
) -> list[float]:
    sims = []
    for node_id in sorted(set(human) & set(generated)):
        h_vecs = [encoder.encode(t) for t in human[node_id]]
        g_vecs = [encoder.encode(t) for t in generated[node_id]]
        sims.extend(cosine(h, g) for h in h_vecs for g in g_vecs)
    return sims


def _density_figure(series: dict[str, list[float]], xlabel: str, path: Path) -> None:
    from .metrics import gaussian_kde_grid

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, values in series.items():
        if not values:
            continue
        grid, density, _ = gaussian_kde_grid(values)
        ax.plot(grid, density, label=label)
        ax.fill_between(grid, density, alpha=0.2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("density")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_quality_artifacts(
    out_dir,
    report: QualityReport,
    generated: dict[str, list[str]],
    graph: DialogGraph,
    encoder: TextEncoder,
    human: dict[str, list[str]] | None = None,
    human_self_bleu: dict[int, float] | None = None,
) -> list[Path]:
    """Write the report JSON, the self-BLEU table, density CSVs, and figures.

    Returns the list of files written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    report_path = out / "quality_report.json"
    report_path.write_text(json.dumps(report.as_dict(), indent=2), encoding="utf-8")
    written.append(report_path)

    rows = {"generated": report.self_bleu}
    if human_self_bleu:
        rows = {"human": human_self_bleu, "generated": report.self_bleu}
    table_path = out / "self_bleu_table.txt"
    table_path.write_text(render_self_bleu_table(rows), encoding="utf-8")
    written.append(table_path)

    gen_lengths = [float(v) for v in _question_lengths(generated)]
    length_series = {"generated": gen_lengths}
    csv_path = out / "question_length_density.csv"
    export_density(gen_lengths, csv_path)
    written.append(csv_path)
    if human:
        human_lengths = [float(v) for v in _question_lengths(human)]
        length_series["human"] = human_lengths
        human_csv = out / "question_length_density_human.csv"
        export_density(human_lengths, human_csv)
        written.append(human_csv)
    fig_path = out / "question_lengths.png"
    _density_figure(length_series, "question length (tokens)", fig_path)
    written.append(fig_path)

    if human:
        sims = _pairwise_similarities(human, generated, encoder)
        if sims:
            sim_csv = out / "question_similarity_density.csv"
            export_density(sims, sim_csv)
            written.append(sim_csv)
            sim_fig = out / "question_similarities.png"
            _density_figure({"human vs generated": sims}, "cosine similarity", sim_fig)
            written.append(sim_fig)
    return written
