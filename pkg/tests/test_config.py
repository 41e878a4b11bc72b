from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from virtualbid.config import FLAG_KEYS, RunConfig, config_echo, load_config, resolve_config
from virtualbid.errors import ConfigError

VALUES = {
    "seed": st.integers(0, 2**63),
    "paths": st.integers(1, 10_000),
    "gamma": st.floats(1e-6, 10),
    "z": st.floats(-1e3, 1e3),
    "hour": st.integers(0, 23),
    "out": st.sampled_from(["o1", "runs/o2", "/tmp/o3"]),
    "method": st.sampled_from(["ols", "grad"]),
}


def lookup(cfg: RunConfig, flag):
    section, key = FLAG_KEYS[flag]
    return getattr(cfg if section is None else getattr(cfg, section), key)


def default_of(flag):
    return lookup(resolve_config({}, {}, check_files=False), flag)


@pytest.mark.parametrize("flag", sorted(FLAG_KEYS))
@given(data=st.data())
def test_flag_over_file_over_default(flag, data):
    file_val = data.draw(st.none() | VALUES[flag])
    flag_val = data.draw(st.none() | VALUES[flag])
    section, key = FLAG_KEYS[flag]
    raw = {}
    if file_val is not None:
        if section is None:
            raw[key] = file_val
        else:
            raw[section] = {key: file_val}
    cfg = resolve_config(raw, {flag: flag_val}, base_dir=None, check_files=False)
    expected = flag_val if flag_val is not None else file_val if file_val is not None else default_of(flag)
    got = lookup(cfg, flag)
    if flag == "out":
        assert got == Path(expected)
    else:
        assert got == expected


def test_defaults():
    cfg = resolve_config({}, {})
    assert cfg.mode == "simulation"
    assert (cfg.objective.z, cfg.objective.gamma, cfg.objective.x0) == (105.0, 0.001, 100.0)
    assert cfg.estimator.window == 60


def test_file_loading_resolves_paths(tmp_path):
    for name in ("da.csv", "rt.csv", "wx.csv"):
        (tmp_path / name).write_text("")
    (tmp_path / "run.toml").write_text(
        'seed = 3\nout = "res"\n[data]\nda_lmp = "da.csv"\nrt_lmp = "rt.csv"\nweather = "wx.csv"\n'
    )
    cfg = load_config(tmp_path / "run.toml", {"seed": 9})
    assert cfg.seed == 9
    assert cfg.data.da_lmp == tmp_path / "da.csv"
    assert cfg.out == tmp_path / "res"


def test_flag_out_is_relative_to_cwd(tmp_path):
    (tmp_path / "run.toml").write_text('out = "res"\n')
    assert load_config(tmp_path / "run.toml", {"out": Path("elsewhere")}).out == Path("elsewhere")


@pytest.mark.parametrize(
    "raw",
    [
        {"data": {"da_lmp": "a", "rt_lmp": "b", "weather": "c"}, "simulation": {}},
        {"bogus": 1},
        {"objective": {"gama": 0.1}},
        {"objective": {"gamma": -1.0}},
        {"estimator": {"method": "newton"}},
        {"backtest": {"paths": 0}},
        {"hour": 24},
        {"seed": "seven"},
        {"nodes": ["A", "A"]},
        {"data": {"da_lmp": "a"}},
    ],
)
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        resolve_config(raw, {}, check_files=False)


def test_missing_data_file(tmp_path):
    raw = {"data": {"da_lmp": "a.csv", "rt_lmp": "b.csv", "weather": "c.csv"}}
    with pytest.raises(ConfigError, match="a.csv"):
        resolve_config(raw, {}, base_dir=tmp_path)


def test_bad_toml(tmp_path):
    (tmp_path / "run.toml").write_text("seed = \n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "run.toml")


def test_echo_is_plain_json():
    import json

    json.dumps(config_echo(resolve_config({}, {})))
