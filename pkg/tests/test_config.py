import pytest

from noisebench.config import SCHEMA, ExperimentConfig
from noisebench.errors import ConfigError, IoError


def test_defaults_cover_schema():
    cfg = ExperimentConfig.defaults()
    assert set(cfg.values) == set(SCHEMA)
    assert cfg.get("train", "learning_rate") == 0.01 and cfg.get("noise", "n") == 1_000_000


def test_parse_and_types():
    cfg = ExperimentConfig.from_text("[train]\nepochs = 3\nlearning_rate = 0.05\n[noise]\nsource = gabor\n")
    assert cfg.get("train", "epochs") == 3 and cfg.get("train", "learning_rate") == 0.05
    assert cfg.get("noise", "source") == "gabor"


@pytest.mark.parametrize("text", ["[train]\nepoch = 3\n", "[nope]\nx = 1\n", "[train]\nepochs = three\n",
                                  "epochs = 3\n"])
def test_rejects_bad_documents(text):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text(text)


def test_hash_tracks_resolved_values():
    a = ExperimentConfig.defaults()
    b = ExperimentConfig.from_text("[train]\nepochs = 10\n")
    c = a.override({("train", "epochs"): 11})
    assert a.hash == b.hash != c.hash
    assert len(a.hash) == 12
    assert a.override({("train", "epochs"): None}).hash == a.hash


def test_text_round_trip():
    cfg = ExperimentConfig.defaults().override({("noise", "sigma"): 0.2, ("analysis", "layer"): "fc"})
    again = ExperimentConfig.from_text(cfg.to_text())
    assert again.values == cfg.values and again.hash == cfg.hash


def test_lists_and_missing_file(tmp_path):
    cfg = ExperimentConfig.defaults()
    assert cfg.ints("noise", "scales") == [2, 4, 10]
    assert len(cfg.floats("analysis", "gammas")) == 11
    with pytest.raises(IoError):
        ExperimentConfig.load(tmp_path / "missing.cfg")
    with pytest.raises(ConfigError):
        cfg.get("train", "nope")
