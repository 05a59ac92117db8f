"""Config schema: strict parsing, overrides, render round trip, and the
dataclass conversions."""

import pytest

from freqadapt import config as cf
from freqadapt.synth import DEFAULT_SOURCE, DEFAULT_TARGET


def test_defaults_cover_whole_schema():
    cfg = cf.default_config()
    assert set(cfg) == set(cf.SCHEMA)
    for sec in cf.SCHEMA:
        assert set(cfg[sec]) == set(cf.SCHEMA[sec])
    assert cfg["run"]["lr"] == 1e-4
    assert cfg["model"]["widths"] == (8, 16, 32, 32)
    assert cfg["target_domain"]["gamma"] == DEFAULT_TARGET.gamma
    assert cfg["source_domain"]["bias_order"] == DEFAULT_SOURCE.bias_field.order


def test_load_none_gives_defaults():
    assert cf.load_config(None) == cf.default_config()


def test_load_config_overlays_file(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text("[run]\nseed = 9\nlr = 0.001\n\n[dymix]\ntau = 0.05\n")
    cfg = cf.load_config(p)
    assert cfg["run"]["seed"] == 9
    assert cfg["run"]["lr"] == 0.001
    assert cfg["dymix"]["tau"] == 0.05
    assert cfg["run"]["batch_size"] == 4  # untouched default


def test_missing_file_rejected(tmp_path):
    with pytest.raises(cf.ConfigError, match="does not exist"):
        cf.load_config(tmp_path / "absent.ini")


def test_unknown_section_rejected(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text("[runn]\nseed = 1\n")
    with pytest.raises(cf.ConfigError, match=r"unknown section \[runn\]"):
        cf.load_config(p)


def test_unknown_key_rejected(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text("[run]\nlearning_rate = 0.001\n")
    with pytest.raises(cf.ConfigError, match="unknown key 'learning_rate'"):
        cf.load_config(p)


def test_bad_value_rejected(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text("[run]\nseed = fast\n")
    with pytest.raises(cf.ConfigError, match="bad value for run.seed"):
        cf.load_config(p)


def test_unparseable_file_rejected(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text("seed = 1\n")  # key before any section header
    with pytest.raises(cf.ConfigError, match="cannot parse"):
        cf.load_config(p)


def test_tuple_values_parse(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text("[model]\nwidths = 4,8\nhead_hidden = 16\n\n[classes]\nradius_means = 0.3,0.6\n")
    cfg = cf.load_config(p)
    assert cfg["model"]["widths"] == (4, 8)
    assert cfg["model"]["head_hidden"] == (16,)
    assert cfg["classes"]["radius_means"] == (0.3, 0.6)


def test_apply_overrides():
    cfg = cf.default_config()
    cf.apply_overrides(cfg, {("run", "seed"): 5, ("run", "lr"): None, ("dymix", "tau"): "0.2"})
    assert cfg["run"]["seed"] == 5
    assert cfg["run"]["lr"] == 1e-4  # None skipped
    assert cfg["dymix"]["tau"] == 0.2  # string routed through the parser
    with pytest.raises(cf.ConfigError, match="unknown config target"):
        cf.apply_overrides(cfg, {("run", "nope"): 1})


def test_render_round_trip(tmp_path):
    cfg = cf.default_config()
    cf.apply_overrides(cfg, {("run", "seed"): 3, ("model", "widths"): (4, 8, 8)})
    text = cf.render_config(cfg)
    p = tmp_path / "echo.ini"
    p.write_text(text)
    again = cf.load_config(p)
    assert again == cfg
    assert "widths = 4,8,8" in text


def test_to_run_config_maps_fields():
    cfg = cf.default_config()
    cf.apply_overrides(
        cfg,
        {
            ("run", "data_dir"): "/x",
            ("run", "out_dir"): "/y",
            ("run", "lambda1"): 0.3,
            ("dymix", "patience"): 4,
            ("model", "dropout"): 0.25,
        },
    )
    rc = cf.to_run_config(cfg)
    assert rc.data_dir == "/x"
    assert rc.lambda1 == 0.3
    assert rc.dymix.patience == 4
    assert rc.arch.dropout == 0.25
    assert rc.dymix.tau == cfg["dymix"]["tau"]


def test_to_run_config_surfaces_validation():
    cfg = cf.default_config()
    cfg["model"]["kernel"] = 4  # even kernels are invalid downstream
    with pytest.raises(cf.ConfigError, match="odd"):
        cf.to_run_config(cfg)


def test_to_data_config_builds_domains():
    cfg = cf.default_config()
    dc = cf.to_data_config(cfg)
    assert dc["source"] == DEFAULT_SOURCE
    assert dc["target"] == DEFAULT_TARGET
    assert dc["dims"] == (32, 32)
    assert dc["n_per_class"] == 400
    assert dc["fractions"] == {"train": 0.5, "val": 0.25, "test": 0.25}


def test_to_data_config_bias_off():
    cfg = cf.default_config()
    cfg["source_domain"]["bias_order"] = 0
    dc = cf.to_data_config(cfg)
    assert dc["source"].bias_field is None


def test_to_data_config_surfaces_validation():
    cfg = cf.default_config()
    cfg["target_domain"]["gamma"] = -1.0
    with pytest.raises(cf.ConfigError):
        cf.to_data_config(cfg)
