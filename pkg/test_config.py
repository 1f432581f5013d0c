#!/usr/bin/env python3
"""Tests for config loading and the default config writer."""

import pytest

from config.loader import Config, coerce, load_config
from engine.errors import ConfigError
from setup import config_text, write_default_config


def test_defaults():
    config = Config()
    assert config.render.uv_resolution == 128
    assert config.trainer.beta1 == 0.0
    assert config.loss.lambda_c == 10.0
    assert config.synth.occluder_area == (0.05, 0.20)


def test_override_coerces_strings():
    config = Config().override({"trainer.steps": "7", "trainer.fam_off": "yes"},
                               render__uv_resolution="64", synth__shadow_strength="0.2, 0.4")
    assert config.trainer.steps == 7
    assert config.trainer.fam_off is True
    assert config.render.uv_resolution == 64
    assert config.synth.shadow_strength == (0.2, 0.4)
    # the original is untouched
    assert Config().trainer.steps == 2000


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="trainer.stepz"):
        Config().override({"trainer.stepz": 3})
    with pytest.raises(ConfigError, match="nosuch.key"):
        Config().override({"nosuch.key": 1})


def test_bad_values_are_named():
    with pytest.raises(ConfigError, match="trainer.steps"):
        coerce("trainer.steps", "many", 10)
    with pytest.raises(ConfigError, match="trainer.fam_off"):
        coerce("trainer.fam_off", "maybe", False)
    with pytest.raises(ConfigError):
        coerce("synth.occluder_area", "0.1", (0.05, 0.2))


def test_file_overrides_defaults(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text("# tiny run\ntrainer.steps = 12\nloss.generator_form = minimax\n", encoding="utf-8")
    config = load_config(path, trainer__seed=5)
    assert config.trainer.steps == 12
    assert config.trainer.seed == 5
    assert config.loss.generator_form == "minimax"


def test_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/run.conf")


def test_written_lines_load_back(tmp_path):
    config = Config().override({"trainer.fam_off": True, "synth.occluder_area": (0.1, 0.3),
                                "trainer.out_dir": "runs/x"})
    path = tmp_path / "saved.conf"
    path.write_text("\n".join(config.to_lines()) + "\n", encoding="utf-8")
    assert load_config(path) == config


def test_default_config_file(tmp_path):
    path = tmp_path / "default.conf"
    assert write_default_config(path)
    assert not write_default_config(path)
    assert load_config(path) == Config()
    assert "# training loop" in config_text()


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
