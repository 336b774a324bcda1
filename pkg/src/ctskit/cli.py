"""Command line interface.

Every subcommand reads a run-config JSON file and writes its artifacts under
the config's output directory (one subdirectory per run id). Offline runs can
point ``generation.fixtures`` at a scripted-completion file instead of a live
LLM endpoint.
"""

from __future__ import annotations

import csv
import json
import time
from pathlib import Path

import click

from . import config as cfg
from . import graph as graphmod
from .generation import (
    GenerationParams,
    HeuristicNER,
    OpenAIChatClient,
    ScriptedLLMClient,
    generate_question_bank,
    generate_responses,
)
from .metrics import self_bleu
from .reporting import build_quality_report, render_self_bleu_table, write_quality_artifacts

__all__ = ["main"]


@click.group()
def main() -> None:
    """Conversational tree search toolkit."""


def _load_config(path: str) -> cfg.RunConfig:
    try:
        return cfg.load_run_config(path)
    except cfg.ConfigError as exc:
        raise click.ClickException(f"invalid config: {exc}") from exc


def _run_dir(run_config: cfg.RunConfig, run_id: str | None, command: str) -> Path:
    run_id = run_id or f"{command}-{time.strftime('%Y%m%d-%H%M%S')}"
    out = Path(run_config.output_dir) / run_id
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps(run_config.as_dict(), indent=2), encoding="utf-8"
    )
    return out


def _load_graph(path: str) -> graphmod.DialogGraph:
    try:
        return graphmod.load_graph(path)
    except graphmod.GraphError as exc:
        raise click.ClickException(str(exc)) from exc


def _make_client(run_config: cfg.RunConfig):
    gen = run_config.generation
    if gen.fixtures:
        return ScriptedLLMClient(gen.fixtures)
    return OpenAIChatClient(endpoint=gen.endpoint, api_key_env=gen.api_key_env)


@main.group()
def dataset() -> None:
    """Inspect and validate dialog tree files."""


@dataset.command("stats")
@click.option("--config", "config_path", type=click.Path(exists=True), help="Run config file.")
@click.option("--graph", "graph_path", type=click.Path(exists=True), help="Graph file override.")
@click.option("--split", "split_path", type=click.Path(exists=True), help="Question/paraphrase split.")
@click.option("--json", "json_out", type=click.Path(), help="Also write the stats as JSON.")
def dataset_stats(config_path, graph_path, split_path, json_out) -> None:
    """Print corpus statistics for a graph (and optional split)."""
    if not graph_path:
        if not config_path:
            raise click.UsageError("provide --graph or --config")
        graph_path = _load_config(config_path).graph_path
    graph = _load_graph(graph_path)
    split = None
    if split_path:
        split = graphmod.load_split(Path(split_path).read_text(encoding="utf-8"), graph)
    stats = graphmod.compute_stats(graph, split)
    rows = list(stats.as_dict().items())
    width = max(len(k) for k, _ in rows)
    for key, value in rows:
        rendered = f"{value:.2f}" if isinstance(value, float) else str(value)
        click.echo(f"{key.ljust(width)}  {rendered}")
    if json_out:
        Path(json_out).write_text(json.dumps(stats.as_dict(), indent=2), encoding="utf-8")


@dataset.command("validate")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--graph", "graph_path", type=click.Path(exists=True))
@click.option(
    "--strict-unreachable/--warn-unreachable",
    default=False,
    help="Treat unreachable nodes as an error instead of a warning.",
)
def dataset_validate(config_path, graph_path, strict_unreachable) -> None:
    """Parse a graph file and report validation problems."""
    import warnings

    if not graph_path:
        if not config_path:
            raise click.UsageError("provide --graph or --config")
        graph_path = _load_config(config_path).graph_path
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            graph = _load_graph(graph_path)
    except click.ClickException:
        raise
    for warning in caught:
        if strict_unreachable:
            raise click.ClickException(str(warning.message))
        click.echo(f"warning: {warning.message}")
    click.echo(f"OK: {len(graph.nodes)} nodes, start node {graph.start!r}")


@main.group()
def generate() -> None:
    """Generate synthetic utterances from a dialog graph."""


@generate.command("questions")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option(
    "--method",
    type=click.Choice(["v1", "v2", "v3"], case_sensitive=False),
    required=True,
)
@click.option("--run-id", default=None)
def generate_questions_cmd(config_path, method, run_id) -> None:
    """Generate per-node user questions (methods V1/V2/V3)."""
    run_config = _load_config(config_path)
    graph = _load_graph(run_config.graph_path)
    out = _run_dir(run_config, run_id, f"questions-{method.lower()}")
    gen = run_config.generation
    params = GenerationParams(
        temperature=gen.temperature, max_tokens=gen.max_tokens, model=gen.model
    )
    bank = generate_question_bank(
        graph,
        method.upper(),
        _make_client(run_config),
        ner=HeuristicNER(),
        params=params,
        n=gen.questions_per_node,
        parallelism=gen.parallelism,
    )
    split_path = out / f"generated_questions_{method.lower()}.json"
    split_path.write_text(graphmod.serialize_split(bank.to_split()), encoding="utf-8")
    (out / "provenance.json").write_text(
        json.dumps(bank.provenance(), indent=2), encoding="utf-8"
    )
    total = sum(len(v) for v in bank.questions.values())
    click.echo(f"wrote {total} questions for {len(bank.questions)} nodes to {split_path}")
    if bank.failures:
        click.echo(f"{len(bank.failures)} nodes failed; see provenance.json")


@generate.command("responses")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--run-id", default=None)
def generate_responses_cmd(config_path, run_id) -> None:
    """Generate answer paraphrases (5 natural + 5 keyword-style per answer)."""
    run_config = _load_config(config_path)
    graph = _load_graph(run_config.graph_path)
    out = _run_dir(run_config, run_id, "responses")
    gen = run_config.generation
    params = GenerationParams(
        temperature=gen.temperature, max_tokens=gen.max_tokens, model=gen.model
    )
    bank = generate_responses(
        graph, _make_client(run_config), params=params, parallelism=gen.parallelism
    )
    split_path = out / "generated_responses.json"
    split_path.write_text(graphmod.serialize_split(bank.to_split()), encoding="utf-8")
    (out / "provenance.json").write_text(
        json.dumps(bank.provenance(), indent=2), encoding="utf-8"
    )
    total = sum(len(v) for v in bank.paraphrases.values())
    click.echo(f"wrote {total} paraphrases (plus keyword variants) to {split_path}")


@main.group()
def quality() -> None:
    """Data-quality analysis of utterance banks."""


@quality.command("report")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--generated", "generated_path", type=click.Path(exists=True), required=True)
@click.option("--human", "human_path", type=click.Path(exists=True))
@click.option("--run-id", default=None)
def quality_report_cmd(config_path, generated_path, human_path, run_id) -> None:
    """Diversity/similarity/answerability report with density CSVs and figures."""
    run_config = _load_config(config_path)
    graph = _load_graph(run_config.graph_path)
    encoder = cfg.build_encoder(run_config.encoder)
    out = _run_dir(run_config, run_id, "quality") / "reports"

    generated = graphmod.load_split(
        Path(generated_path).read_text(encoding="utf-8"), graph
    ).questions
    human = None
    if human_path:
        human = graphmod.load_split(Path(human_path).read_text(encoding="utf-8"), graph).questions

    report = build_quality_report(generated, graph, encoder, human=human)
    human_bleu = None
    if human:
        human_corpus = [q for qs in human.values() for q in qs]
        if len(human_corpus) >= 2:
            human_bleu = {n: self_bleu(human_corpus, n) for n in (1, 2, 3, 4, 5)}
    written = write_quality_artifacts(
        out, report, generated, graph, encoder, human=human, human_self_bleu=human_bleu
    )
    rows = {"generated": report.self_bleu}
    if human_bleu:
        rows = {"human": human_bleu, "generated": report.self_bleu}
    click.echo(render_self_bleu_table(rows), nl=False)
    click.echo(f"avg answerability: {report.avg_answerability:.3f}")
    if report.avg_cross_similarity is not None:
        click.echo(f"avg cross similarity: {report.avg_cross_similarity:.3f}")
    for path in written:
        click.echo(f"wrote {path}")


@main.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--run-id", default=None)
@click.option("--threads", type=int, default=1, show_default=True, help="Torch CPU threads.")
def train_cmd(config_path, run_id, threads) -> None:
    """Train a dialog policy against the simulated user."""
    import torch

    from .training import save_checkpoint, train

    torch.set_num_threads(threads)
    run_config = _load_config(config_path)
    graph, train_split, _ = cfg.load_graph_and_splits(run_config)
    encoder = cfg.build_encoder(run_config.encoder)
    factory = cfg.build_env_factory(graph, encoder, run_config.simulator, train_split)
    out = _run_dir(run_config, run_id, "train")
    (out / "checkpoints").mkdir(exist_ok=True)
    (out / "logs").mkdir(exist_ok=True)
    (out / "reports").mkdir(exist_ok=True)

    def on_eval(point: dict) -> None:
        click.echo(
            f"turn {point['turn']}: combined {point['success_combined']:.3f} "
            f"(guided {point['success_guided']:.3f}, free {point['success_free']:.3f}), "
            f"F1 {point['mode_f1']:.3f}, consistency {point['mode_consistency']:.3f}"
        )

    result = train(
        factory,
        run_config.trainer,
        seed=run_config.seed,
        meta={"run_config": run_config.as_dict()},
        on_eval=on_eval,
    )
    save_checkpoint(result.best, out / "checkpoints" / "best.pt")
    save_checkpoint(result.last, out / "checkpoints" / "last.pt")
    with open(out / "logs" / "train_curve.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["turn", "loss", "success_guided", "success_free", "success_combined", "f1", "consistency"]
        )
        for point in result.curve:
            writer.writerow(
                [
                    point["turn"],
                    point["loss"],
                    point["success_guided"],
                    point["success_free"],
                    point["success_combined"],
                    point["mode_f1"],
                    point["mode_consistency"],
                ]
            )
    if result.best_report is not None:
        (out / "reports" / "best_eval.json").write_text(
            json.dumps(result.best_report.as_dict(), indent=2), encoding="utf-8"
        )
        click.echo(f"best combined success: {result.best_report.success_combined:.3f}")
    click.echo(f"checkpoints written to {out / 'checkpoints'}")


@main.command("evaluate")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True), required=True)
@click.option("--dialogs", type=int, default=None, help="Override the eval dialog count.")
@click.option("--run-id", default=None)
def evaluate_cmd(config_path, checkpoint_path, dialogs, run_id) -> None:
    """Evaluate a trained checkpoint on the configured graph and test split."""
    from .evaluation import evaluate_checkpoint
    from .training import load_checkpoint

    run_config = _load_config(config_path)
    graph, _, test_split = cfg.load_graph_and_splits(run_config)
    encoder = cfg.build_encoder(run_config.encoder)
    factory = cfg.build_env_factory(graph, encoder, run_config.simulator, test_split)
    checkpoint = load_checkpoint(checkpoint_path)
    n = dialogs or run_config.trainer.eval_dialogs
    try:
        report = evaluate_checkpoint(checkpoint, factory, n_dialogs=n, seed=run_config.seed)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    out = _run_dir(run_config, run_id, "evaluate") / "reports"
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.json").write_text(json.dumps(report.as_dict(), indent=2), encoding="utf-8")
    for key, value in report.as_dict().items():
        rendered = f"{value:.4f}" if isinstance(value, float) else str(value)
        click.echo(f"{key}: {rendered}")


@main.command("serve")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True), required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--salt", default="ctskit", help="Salt for anonymous session hashing.")
@click.option("--static-dir", type=click.Path(), default=None, help="Chat UI build directory.")
@click.option("--run-id", default=None)
def serve_cmd(config_path, checkpoint_path, host, port, salt, static_dir, run_id) -> None:
    """Serve a trained agent to human users over the session API."""
    import uvicorn

    from .server import create_app
    from .training import load_checkpoint

    run_config = _load_config(config_path)
    graph = _load_graph(run_config.graph_path)
    encoder = cfg.build_encoder(run_config.encoder)
    checkpoint = load_checkpoint(checkpoint_path)
    out = _run_dir(run_config, run_id, "serve")
    (out / "logs").mkdir(exist_ok=True)
    app = create_app(
        graph,
        checkpoint.build_net(),
        encoder,
        sim_config=run_config.simulator,
        salt=salt,
        log_path=out / "logs" / "events.jsonl",
        static_dir=static_dir,
    )
    click.echo(f"serving on http://{host}:{port} (events: {out / 'logs' / 'events.jsonl'})")
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
