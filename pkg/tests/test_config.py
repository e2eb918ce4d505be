import dataclasses

import pytest

from attnssm.config import ModelConfig, TrainConfig, dump_config, load_config, preset
from attnssm.tensor import ConfigError


def test_roundtrip(tmp_path):
    m = preset("light", scale=3)
    t = TrainConfig(steps=10, milestones=(4, 8), augment=False)
    dump_config(tmp_path / "c.ini", m, t)
    m2, t2 = load_config(tmp_path / "c.ini")
    assert m2 == m and t2 == t


def test_preset_key_and_overrides(tmp_path):
    (tmp_path / "c.ini").write_text("[model]\npreset = small\nscale = 4\n\n[train]\nsteps = 50\n",
                                    encoding="utf-8")
    m, t = load_config(tmp_path / "c.ini")
    assert m == preset("small", scale=4) and t.steps == 50


def test_defaults_when_sections_missing(tmp_path):
    (tmp_path / "c.ini").write_text("", encoding="utf-8")
    assert load_config(tmp_path / "c.ini") == (ModelConfig(), TrainConfig())


@pytest.mark.parametrize("text", [
    "[model]\nwidth = 3\n",
    "[extra]\na = 1\n",
    "[train]\nsteps = many\n",
    "[train]\naugment = maybe\n",
    "[model]\nscale = 5\n",
    "[train]\nmilestones = 5, 3\n",
    "not an ini",
])
def test_errors(tmp_path, text):
    (tmp_path / "c.ini").write_text(text, encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.ini")


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr=0)
    with pytest.raises(ConfigError):
        TrainConfig(loss="l2")
    assert dataclasses.replace(TrainConfig(), steps=100).effective_milestones() == (60, 80)
