"""Flat config parsing/rendering, preset layering, and loud unknown-key
rejection."""

import pytest

from mscr.autodiff import ContractError
from mscr.config import (
    PRESETS,
    ScoreConfig,
    TrainConfig,
    config_to_flat,
    flat_to_configs,
    parse_config_text,
    render_config_text,
    resolve_config,
)
from mscr.model import ModelConfig


def test_parse_handles_comments_blanks_and_spacing():
    text = """
# a comment
train.epochs = 7   # trailing comment

model.D=128
"""
    flat = parse_config_text(text)
    assert flat == {"train.epochs": "7", "model.D": "128"}


def test_parse_rejects_lines_without_equals():
    with pytest.raises(ContractError, match="line 2"):
        parse_config_text("train.epochs = 3\nbroken line\n")


def test_render_parse_round_trip():
    flat = config_to_flat({"train": TrainConfig(epochs=9, lr0=2.5e-4)})
    again = parse_config_text(render_config_text(flat))
    assert again == flat
    cfgs = flat_to_configs(again)
    assert cfgs["train"].epochs == 9
    assert cfgs["train"].lr0 == 2.5e-4


def test_flat_to_configs_builds_all_sections_with_defaults():
    cfgs = flat_to_configs({})
    assert cfgs["train"] == TrainConfig()
    assert cfgs["score"] == ScoreConfig()
    assert cfgs["model"] == ModelConfig()


def test_tuple_fields_round_trip_for_ints_and_strings():
    flat = config_to_flat({"model": ModelConfig(channels_g=(8, 16), kernels_g=(5, 3, 3))})
    assert flat["model.channels_g"] == "8,16"
    cfgs = flat_to_configs(
        {
            "model.channels_g": "8,16",
            "model.kernels_g": "5,3,3",
            "synth.anomaly_types": "st_shift,premature_beat",
        }
    )
    assert cfgs["model"].channels_g == (8, 16)
    assert cfgs["synth"].anomaly_types == ("st_shift", "premature_beat")


def test_bool_parsing_accepts_words_and_rejects_garbage():
    assert flat_to_configs({"score.normalize_by_beats": "true"})["score"].normalize_by_beats
    assert not flat_to_configs({"score.normalize_by_beats": "false"})["score"].normalize_by_beats
    with pytest.raises(ContractError):
        flat_to_configs({"score.normalize_by_beats": "maybe"})


def test_unknown_keys_and_sections_are_rejected():
    with pytest.raises(ContractError, match="unknown config key"):
        flat_to_configs({"train.eposh": "3"})
    with pytest.raises(ContractError, match="unknown config section"):
        flat_to_configs({"nope.epochs": "3"})
    with pytest.raises(ContractError, match="section.field"):
        flat_to_configs({"epochs": "3"})


def test_bad_value_errors_name_the_key():
    with pytest.raises(ContractError, match="train.epochs"):
        flat_to_configs({"train.epochs": "three"})


def test_presets_resolve_and_layering_order(tmp_path):
    assert set(PRESETS) == {"paper", "desk"}
    desk = resolve_config(preset="desk")
    assert desk["train"].epochs == 30
    assert desk["synth"].n_train == 256
    paper = resolve_config(preset="paper")
    assert paper["train"].epochs == 50
    assert paper["train"].lr0 == 1e-4

    cfg_file = tmp_path / "o.txt"
    cfg_file.write_text("train.epochs = 11\ntrain.lr0 = 0.5\n")
    merged = resolve_config(preset="desk", config_path=str(cfg_file),
                            overrides={"train.lr0": "0.25"})
    assert merged["train"].epochs == 11  # file beats preset
    assert merged["train"].lr0 == 0.25  # override beats file
    assert merged["flat"]["train.epochs"] == "11"


def test_unknown_preset_is_rejected():
    with pytest.raises(ContractError, match="preset"):
        resolve_config(preset="huge")
