import pytest

from domshift.camsim import DegradationConfig
from domshift.classify import ClassifierTrainConfig
from domshift.config import SCHEMA, RunConfig
from domshift.errors import ConfigError
from domshift.shiftnet import ShifterTrainConfig


def test_defaults_build_typed_configs():
    cfg = RunConfig.defaults()
    assert cfg.camera() == DegradationConfig.virtual_cozmo()
    assert cfg.shifter() == ShifterTrainConfig()
    assert cfg.classifier() == ClassifierTrainConfig()
    assert cfg.split_spec(0).fractions == (0.6, 0.2, 0.2)
    assert cfg["experiment.seeds"] == (0, 1, 2)


def test_every_key_documented():
    assert all(spec.doc for spec in SCHEMA.values())
    assert {k.split(".")[0] for k in SCHEMA if "." in k} == {"experiment", "data", "shifter", "classifier", "camera"}


def test_text_round_trip():
    cfg = RunConfig.defaults().with_values(shifter__epochs=7, camera__gamma=2.5, out_dir="somewhere")
    again = RunConfig.parse(cfg.to_text())
    assert again.values == cfg.values


def test_parse_comments_and_blank_lines():
    text = """
    # a comment
    shifter.epochs = 12   # trailing comment
    camera.color_matrix = 1 0 0, 0 1 0, 0 0 1
    experiment.seeds = 4, 5
    """
    cfg = RunConfig.parse(text)
    assert cfg["shifter.epochs"] == 12
    assert cfg.camera().color_matrix == DegradationConfig.identity().color_matrix
    assert cfg["experiment.seeds"] == (4, 5)


def test_empty_file_is_all_defaults():
    assert RunConfig.parse("").values == RunConfig.defaults().values


@pytest.mark.parametrize("text, match", [
    ("shifter.epoch = 3", "unknown key"),
    ("bogus", "expected 'key = value'"),
    ("shifter.epochs = many", "bad value"),
    ("camera.gamma = -1", "gamma"),
    ("camera.color_matrix = 1 2 3", "9 numbers"),
    ("data.size = 30", "multiple of 4"),
    ("data.split = 0.5, 0.5, 0.5", "fractions"),
    ("experiment.seeds = ", "at least one seed"),
    ("classifier.freeze_prefix = -1", "freeze_prefix"),
])
def test_invalid_config_rejected(text, match):
    with pytest.raises(ConfigError, match=match):
        RunConfig.parse(text)


def test_error_reports_line_number():
    with pytest.raises(ConfigError, match=r"cfg.txt:3"):
        RunConfig.parse("\n\nnope = 1\n", "cfg.txt")


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        RunConfig.load(tmp_path / "missing.txt")


def test_with_values_rejects_unknown():
    with pytest.raises(ConfigError):
        RunConfig.defaults().with_values(shifter__nope=1)
