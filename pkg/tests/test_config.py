import pytest

from mamkit.config import SCHEMA, RunConfig, parse_config_text
from mamkit.dataset import Task
from mamkit.dsp import FeatureKind
from mamkit.errors import ConfigError
from mamkit.training import Technique


def test_defaults_follow_module_configs():
    rc = RunConfig()
    assert rc["dsp.hop"] == 200 and rc["model.d_model"] == 512
    assert rc["mask.time.chunk_size"] == 7
    assert rc["finetune.repetitions"] == 10 and rc["pretrain.epochs"] == 3
    assert rc["preprocess.features"] is FeatureKind.MFCC
    assert "pretrain.seed" not in SCHEMA and "run.seed" in SCHEMA


def test_parse_text_with_comments():
    text = "# header\n dsp.hop = 160  # inline\n\nmodel.n_layers=2\n"
    assert parse_config_text(text) == {"dsp.hop": "160", "model.n_layers": "2"}
    with pytest.raises(ConfigError):
        parse_config_text("no equals sign")


def test_resolution_order(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("model.n_layers = 2\nmodel.d_model = 64\npretrain.technique = channel\n")
    rc = RunConfig.resolve(path, {"model.n_layers": "4", "run.seed": None})
    assert rc["model.n_layers"] == 4
    assert rc["model.d_model"] == 64
    assert rc["pretrain.technique"] is Technique.CHANNEL
    assert rc.model().n_layers == 4
    assert rc.pretrain().technique is Technique.CHANNEL and rc.pretrain().seed == 0


def test_unknown_and_bad_values():
    with pytest.raises(ConfigError):
        RunConfig.resolve(overrides={"model.depth": "3"})
    with pytest.raises(ConfigError):
        RunConfig.resolve(overrides={"dsp.hop": "fast"})
    with pytest.raises(ConfigError):
        RunConfig.resolve(overrides={"finetune.task": "height"})
    with pytest.raises(ConfigError):
        RunConfig.resolve(overrides={"model.d_model": "100", "model.n_heads": "8"})
    with pytest.raises(ConfigError):
        RunConfig.resolve(overrides={"mask.time.p_zero": "0.5"})
    with pytest.raises(ConfigError):
        RunConfig.resolve(overrides={"noise.inject": "sometimes"})
    with pytest.raises(ConfigError):
        RunConfig.resolve("/nonexistent/run.cfg")


def test_snapshot_round_trip(tmp_path):
    rc = RunConfig.resolve(overrides={"finetune.task": "age", "preprocess.features": "mel", "finetune.freeze_encoder": "yes"})
    path = tmp_path / "config.txt"
    rc.write_snapshot(path)
    again = RunConfig.resolve(path)
    assert again.values == rc.values
    assert again["finetune.task"] is Task.AGE_GROUP
    assert again["finetune.freeze_encoder"] is True
    assert len(path.read_text().splitlines()) == len(SCHEMA)


def test_builders():
    rc = RunConfig.resolve(overrides={"mask.channel.max_width_fraction": "0.2", "run.seed": "7"})
    assert rc.masking().channel.max_width(128) == 25
    assert rc.finetune().seed == 7
    assert rc.model(input_dim=13).input_dim == 13
    assert rc.dsp().frame_rate == 80.0
