"""Strict JSON config: defaults, unknown keys, hashing, provenance."""

import json

import pytest

from eslm.config import (
    ExperimentConfig,
    config_from_dict,
    config_hash,
    config_to_dict,
    load_config,
    provenance,
)
from eslm.errors import ConfigError
from eslm.training import VARIANTS


def test_empty_document_gives_validated_defaults():
    cfg = config_from_dict({})
    cfg.validate()
    assert cfg.world.users == 2000 and cfg.world.items == 5000
    assert cfg.world.scenes == 3
    assert cfg.optim.lr == 0.01
    assert cfg.loss.alpha == 0.1
    assert cfg.train.variants == VARIANTS
    assert cfg.seeds == (0,)


def test_unknown_keys_are_named():
    with pytest.raises(ConfigError, match="unknown config key worlds"):
        config_from_dict({"worlds": {}})
    with pytest.raises(ConfigError, match="unknown config key world.userz"):
        config_from_dict({"world": {"userz": 5}})
    with pytest.raises(ConfigError, match="unknown config key optim.momentum"):
        config_from_dict({"optim": {"momentum": 0.9}})


def test_section_validation_still_applies():
    with pytest.raises(ConfigError):
        config_from_dict({"world": {"users": 2000, "items": 5000, "scenes": 1}})
    with pytest.raises(ConfigError):
        config_from_dict({"optim": {"lr": 0.0}})
    with pytest.raises(ConfigError):
        config_from_dict({"train": {"variants": ["eslm", "esm2"]}})
    with pytest.raises(ConfigError):
        config_from_dict({"train": {"variants": "eslm"}})
    with pytest.raises(ConfigError):
        config_from_dict({"seeds": []})
    with pytest.raises(ConfigError):
        config_from_dict({"seeds": [-1]})
    with pytest.raises(ConfigError):
        config_from_dict({"funnel": {"ps_size": 4, "impression_size": 9}})


def test_hash_ignores_seeds_but_sees_everything_else():
    base = config_from_dict({})
    h = config_hash(base)
    assert len(h) == 12 and all(c in "0123456789abcdef" for c in h)
    assert config_hash(config_from_dict({"seeds": [3, 4, 5]})) == h
    assert config_hash(config_from_dict({"optim": {"lr": 0.02}})) != h
    assert config_hash(config_from_dict({"world": {"users": 2001,
                                                   "items": 5000}})) != h


def test_round_trip_preserves_hash():
    doc = {"world": {"users": 100, "items": 300, "own_scene_pay_scale": 0.2},
           "train": {"steps": 10, "variants": ["eslm", "ps2pay_g"]},
           "seeds": [7, 8]}
    cfg = config_from_dict(doc)
    again = config_from_dict(config_to_dict(cfg))
    assert config_hash(cfg) == config_hash(again)
    assert again.train.variants == ("eslm", "ps2pay_g")
    assert again.seeds == (7, 8)


def test_provenance_marks_reported_settings():
    marks = provenance(ExperimentConfig())
    assert marks["optim.lr"] == "reported"
    assert marks["loss.alpha"] == "reported"
    assert marks["world.users"] == "assumed"
    assert marks["train.steps"] == "assumed"
    reported = [k for k, v in marks.items() if v == "reported"]
    assert sorted(reported) == ["loss.alpha", "optim.lr"]
    # one marker per config key
    doc = config_to_dict(ExperimentConfig())
    doc.pop("seeds")
    n_keys = sum(len(v) for v in doc.values())
    assert len(marks) == n_keys


def test_load_config_errors(tmp_path):
    missing = tmp_path / "nope.json"
    with pytest.raises(ConfigError):
        load_config(missing)
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(bad)
    listy = tmp_path / "list.json"
    listy.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="JSON object"):
        load_config(listy)
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"world": {"users": 10, "items": 50}}))
    assert load_config(good).world.users == 10
