import json

import pytest

from conftest import TRIPS_GRAPH
from ctskit.config import (
    ConfigError,
    build_encoder,
    build_env_factory,
    load_run_config,
)
from ctskit.encoding import HashedNGramEncoder, RemoteEncoder
from ctskit.graph import parse_graph
from ctskit.simulator import SimulatorConfig


@pytest.fixture()
def config_dir(tmp_path):
    (tmp_path / "graph.json").write_text(json.dumps(TRIPS_GRAPH), encoding="utf-8")
    return tmp_path


def write_config(config_dir, payload):
    path = config_dir / "run.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


def test_minimal_config(config_dir):
    path = write_config(config_dir, {"graph_path": "graph.json"})
    config = load_run_config(path)
    assert config.graph_path.endswith("graph.json")
    assert config.trainer.batch_size == 256  # published defaults
    assert config.trainer.learning_rate == 1e-4
    assert config.trainer.gamma == 0.99
    assert config.trainer.munchausen_tau == 0.03
    assert config.simulator.max_turns == 50
    assert config.encoder.dim == 256


def test_unknown_field_path(config_dir):
    path = write_config(config_dir, {"graph_path": "graph.json", "simulator": {"max_turn": 5}})
    with pytest.raises(ConfigError, match="simulator.max_turn"):
        load_run_config(path)


def test_invalid_value_reports_section(config_dir):
    path = write_config(
        config_dir, {"graph_path": "graph.json", "trainer": {"batch_size": -1}}
    )
    with pytest.raises(ConfigError, match="trainer"):
        load_run_config(path)


def test_missing_graph_path(config_dir):
    path = write_config(config_dir, {"output_dir": "runs"})
    with pytest.raises(ConfigError, match="graph_path"):
        load_run_config(path)


def test_nonexistent_graph_file(config_dir):
    path = write_config(config_dir, {"graph_path": "missing.json"})
    with pytest.raises(ConfigError, match="does not exist"):
        load_run_config(path)


def test_split_paths_resolve_relative(config_dir):
    (config_dir / "train.json").write_text(json.dumps({"questions": {"i3": ["?"]}}))
    path = write_config(
        config_dir, {"graph_path": "graph.json", "train_split": "train.json"}
    )
    config = load_run_config(path)
    assert config.train_split.endswith("train.json")


def test_build_encoder_variants():
    from ctskit.config import EncoderConfig

    hashed = build_encoder(EncoderConfig(type="hashed", dim=32, seed=4))
    assert isinstance(hashed, HashedNGramEncoder) and hashed.dim == 32
    remote = build_encoder(EncoderConfig(type="remote", dim=16, endpoint="http://x/embed"))
    assert isinstance(remote, RemoteEncoder)
    with pytest.raises(ConfigError, match="endpoint"):
        build_encoder(EncoderConfig(type="remote"))
    with pytest.raises(ConfigError, match="unknown encoder type"):
        build_encoder(EncoderConfig(type="bert"))


def test_env_factory_modes(encoder):
    graph = parse_graph(json.dumps(TRIPS_GRAPH))
    factory = build_env_factory(graph, encoder, SimulatorConfig(max_turns=10))
    guided = factory(seed=1, mode_override="guided")
    guided.reset()
    assert guided.mode == "guided"
    assert guided.config.max_turns == 10
    free = factory(seed=1, mode_override="free")
    free.reset()
    assert free.mode == "free"
