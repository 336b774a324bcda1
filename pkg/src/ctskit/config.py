"""Run configuration: one JSON file drives the CLI.

Validation reports the JSON path of the offending field (e.g.
``simulator.max_turns``) so config mistakes are quick to find.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .encoding import HashedNGramEncoder, RemoteEncoder, TextEncoder
from .graph import DatasetSplit, DialogGraph, load_graph, load_split
from .simulator import DialogEnv, SimulatorConfig, UtteranceBank
from .training import TrainerConfig

__all__ = [
    "ConfigError",
    "EncoderConfig",
    "GenerationConfig",
    "RunConfig",
    "load_run_config",
    "build_encoder",
    "build_env_factory",
]


class ConfigError(ValueError):
    """Invalid run configuration; the message carries the field path."""


@dataclass(frozen=True)
class EncoderConfig:
    type: str = "hashed"  # "hashed" | "remote"
    dim: int = 256
    seed: int = 0
    ngram_low: int = 3
    ngram_high: int = 5
    endpoint: str | None = None
    timeout: float = 10.0
    batch_size: int = 32


@dataclass(frozen=True)
class GenerationConfig:
    method: str = "V3"
    model: str = "gpt-3.5-turbo"
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    api_key_env: str = "OPENAI_API_KEY"
    temperature: float = 0.7
    max_tokens: int = 512
    parallelism: int = 1
    fixtures: str | None = None  # path to a scripted-client fixture for offline runs
    questions_per_node: int = 10


@dataclass
class RunConfig:
    graph_path: str
    output_dir: str = "runs"
    seed: int = 0
    train_split: str | None = None
    test_split: str | None = None
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    simulator: SimulatorConfig = field(default_factory=SimulatorConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)

    def as_dict(self) -> dict:
        from dataclasses import asdict

        raw = asdict(self)
        raw["trainer"]["hidden_sizes"] = list(self.trainer.hidden_sizes)
        return raw


def _build_section(cls, raw: dict, path: str):
    from dataclasses import fields as dc_fields

    known = {f.name: f for f in dc_fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{path}.{key}: unknown field")
    coerced = {}
    for key, value in raw.items():
        expected = known[key].type
        if key == "hidden_sizes":
            if not isinstance(value, list) or not all(isinstance(v, int) for v in value):
                raise ConfigError(f"{path}.{key}: expected a list of integers")
            value = tuple(value)
        elif isinstance(value, bool) and "bool" not in str(expected):
            raise ConfigError(f"{path}.{key}: expected {expected}, got a boolean")
        elif isinstance(value, int) and "float" in str(expected):
            value = float(value)
        coerced[key] = value
    try:
        return cls(**coerced)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_run_config(path) -> RunConfig:
    """Load and validate a run config file; all paths resolve relative to it."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")

    sections = {
        "encoder": EncoderConfig,
        "simulator": SimulatorConfig,
        "trainer": TrainerConfig,
        "generation": GenerationConfig,
    }
    known_scalars = {"graph_path", "output_dir", "seed", "train_split", "test_split"}
    for key in raw:
        if key not in sections and key not in known_scalars:
            raise ConfigError(f"{key}: unknown field")
    if "graph_path" not in raw:
        raise ConfigError("graph_path: required field is missing")

    kwargs: dict = {}
    base = path.parent
    for key in known_scalars:
        if key in raw:
            kwargs[key] = raw[key]
    for name, cls in sections.items():
        if name in raw:
            if not isinstance(raw[name], dict):
                raise ConfigError(f"{name}: expected an object")
            kwargs[name] = _build_section(cls, raw[name], name)

    config = RunConfig(**kwargs)
    config.graph_path = str((base / config.graph_path).resolve())
    if not Path(config.graph_path).exists():
        raise ConfigError(f"graph_path: {config.graph_path} does not exist")
    for attr in ("train_split", "test_split"):
        value = getattr(config, attr)
        if value is not None:
            resolved = str((base / value).resolve())
            if not Path(resolved).exists():
                raise ConfigError(f"{attr}: {resolved} does not exist")
            setattr(config, attr, resolved)
    if config.generation.fixtures is not None:
        resolved = str((base / config.generation.fixtures).resolve())
        if not Path(resolved).exists():
            raise ConfigError(f"generation.fixtures: {resolved} does not exist")
        object.__setattr__(config.generation, "fixtures", resolved)
    config.output_dir = str((base / config.output_dir).resolve())
    return config


def build_encoder(config: EncoderConfig) -> TextEncoder:
    if config.type == "hashed":
        return HashedNGramEncoder(
            dim=config.dim, ngram_range=(config.ngram_low, config.ngram_high), seed=config.seed
        )
    if config.type == "remote":
        if not config.endpoint:
            raise ConfigError("encoder.endpoint: required for the remote encoder")
        return RemoteEncoder(
            config.endpoint,
            dim=config.dim,
            timeout=config.timeout,
            batch_size=config.batch_size,
        )
    raise ConfigError(f"encoder.type: unknown encoder type {config.type!r}")


def build_env_factory(
    graph: DialogGraph,
    encoder: TextEncoder,
    sim_config: SimulatorConfig,
    split: DatasetSplit | None = None,
):
    """Environment factory with the signature the trainer/evaluator expect."""
    bank = UtteranceBank(graph, split)

    def factory(seed: int = 0, mode_override: str | None = None) -> DialogEnv:
        return DialogEnv(
            graph,
            encoder,
            config=sim_config,
            bank=bank,
            seed=seed,
            mode_override=mode_override,
        )

    return factory


def load_graph_and_splits(
    config: RunConfig,
) -> tuple[DialogGraph, DatasetSplit | None, DatasetSplit | None]:
    graph = load_graph(config.graph_path)
    train = test = None
    if config.train_split:
        train = load_split(Path(config.train_split).read_text(encoding="utf-8"), graph)
    if config.test_split:
        test = load_split(Path(config.test_split).read_text(encoding="utf-8"), graph)
    return graph, train, test
