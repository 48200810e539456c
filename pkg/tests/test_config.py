import logging

import pytest

from granet.config import ConfigError, RunConfig, load_config, make_config


def _write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_empty_file_gives_full_scale_defaults(tmp_path):
    cfg = load_config(_write(tmp_path, ""))
    assert cfg.profile == "paper"
    assert (cfg.num_points, cfg.knn_k, cfg.hops, cfg.embed_dim) == (12000, 32, 4, 64)
    assert (cfg.resample, cfg.n_obj, cfg.n_val, cfg.dov_levels) == (7000, 2048, 512, 10)
    assert (cfg.lambda_gps, cfg.lambda_view, cfg.lambda_grasp) == (0.5, 0.3, 0.2)
    assert (cfg.epochs, cfg.batch_size, cfg.lr, cfg.lr_decayed, cfg.lr_decay_after) == (10, 2, 1e-3, 5e-4, 8)
    assert cfg == RunConfig()


def test_desk_profile():
    cfg = make_config(profile="desk")
    assert (cfg.num_points, cfg.resample, cfg.n_obj, cfg.n_val) == (2048, 1024, 512, 128)
    assert make_config({"profile": "desk"}).num_points == 2048


def test_range_error_names_key(tmp_path):
    with pytest.raises(ConfigError, match="hops"):
        load_config(_write(tmp_path, "hops = 0\n"))


def test_unknown_key_names_key(tmp_path):
    with pytest.raises(ConfigError, match="'foo'"):
        load_config(_write(tmp_path, "foo = 1\n"))


def test_parse_error_and_missing_file_are_distinct(tmp_path):
    with pytest.raises(ConfigError, match="parse error") as parse:
        load_config(_write(tmp_path, "hops = = 3\n"))
    with pytest.raises(ConfigError, match="not found") as missing:
        load_config(tmp_path / "nope.toml")
    assert str(parse.value) != str(missing.value)


def test_type_errors_name_key():
    with pytest.raises(ConfigError, match="knn_k"):
        make_config({"knn_k": 2.5})
    with pytest.raises(ConfigError, match="depth_bins"):
        make_config({"depth_bins": "0.01"})
    with pytest.raises(ConfigError, match="resample"):
        make_config({"num_points": 100})


def test_echo_round_trip(tmp_path, caplog):
    src = _write(tmp_path, 'profile = "desk"\nseed = 7\nlr = 0.002\ndepth_bins = [0.01, 0.03]\n')
    with caplog.at_level(logging.INFO, logger="granet"):
        cfg = load_config(src)
    assert "effective config" in caplog.text and "seed = 7" in caplog.text
    again = load_config(_write(tmp_path, cfg.dumps(), "echo.toml"))
    assert again == cfg
    assert again.depth_bins == (0.01, 0.03)


def test_explicit_profile_overrides_file(tmp_path):
    cfg = load_config(_write(tmp_path, 'profile = "desk"\n'), profile="paper")
    assert cfg.profile == "paper" and cfg.num_points == 12000
