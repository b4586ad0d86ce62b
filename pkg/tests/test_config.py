import json

import pytest

from ssdm.config import RunConfig, config_hash, from_dict, load_config, resolve_seed, to_dict
from ssdm.errors import ConfigError
from ssdm.segnet import Variant


def test_defaults_round_trip():
    cfg = RunConfig()
    assert from_dict(to_dict(cfg)) == cfg
    assert config_hash(from_dict(to_dict(cfg))) == cfg.hash()


def test_hash_is_64_bit_hex_and_sensitive():
    a = RunConfig()
    b = from_dict({"train": {"epochs": 3}})
    assert len(a.hash()) == 16 and int(a.hash(), 16) >= 0
    assert a.hash() != b.hash()


@pytest.mark.parametrize("raw", [
    {"bogus": 1},
    {"model": {"widthz": [1]}},
    {"scene": {"texture": 0.4, "colour": 1}},
    {"schema": 2},
    {"seed": -1},
    {"seed": 1, "train": {"seed": 2}},
    {"eval": {"split": "val"}},
    {"model": {"variant": "half"}},
    {"scene": {"drift": 2.0}},
    {"model": []},
])
def test_invalid_configs_rejected(raw):
    with pytest.raises(ConfigError):
        from_dict(raw)


def test_seed_propagates_to_blocks():
    cfg = from_dict({"seed": 5})
    assert cfg.scene.seed == cfg.model.seed == cfg.train.seed == 5


def test_seed_precedence():
    cfg = from_dict({"seed": 1})
    assert resolve_seed(cfg, None, {}).seed == 1
    assert resolve_seed(cfg, None, {"SSDM_SEED": "9"}).seed == 9
    assert resolve_seed(cfg, 4, {"SSDM_SEED": "9"}).seed == 4
    with pytest.raises(ConfigError):
        resolve_seed(cfg, None, {"SSDM_SEED": "x"})


def test_variant_override():
    assert RunConfig().with_variant("struct").model.variant is Variant.StructOnly


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")
    (tmp_path / "ok.json").write_text(json.dumps({"seed": 2, "data": {"count": 4}}))
    assert load_config(tmp_path / "ok.json").data.count == 4
