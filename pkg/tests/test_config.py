"""Run configuration: schema defaults, parsing, canonical emission, hashing."""

import pytest

from clvpb.config import (SCHEMA, ConfigError, build_domain, config_hash,
                          emit, parse_config, parse_vector)


def cfg(tmp_path, text="", overrides=(), env=None):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return parse_config(str(path), overrides=overrides,
                        env={} if env is None else env)


# --- defaults and precedence ---------------------------------------------------


def test_empty_file_is_a_complete_configuration(tmp_path):
    c = cfg(tmp_path)
    assert c.mode == "verify"
    assert c.seed == 42
    assert c["domain.shape"] == "ball"
    assert c["scatter.r_perp"] == 0.5
    assert c["field.enabled"] is False
    assert set(c.values) == set(SCHEMA)


def test_no_file_at_all_gives_defaults():
    c = parse_config(None, env={})
    assert c.mode == "verify" and c.seed == 42


def test_override_beats_file_and_env_beats_both(tmp_path):
    c = cfg(tmp_path, "seed = 7\n")
    assert c.seed == 7
    c = cfg(tmp_path, "seed = 7\n", overrides=["seed=9"])
    assert c.seed == 9
    c = cfg(tmp_path, "seed = 7\n", overrides=["seed=9"],
            env={"CLVPB_SEED": "13"})
    assert c.seed == 13


def test_comments_and_blank_lines_ignored(tmp_path):
    c = cfg(tmp_path, "# a comment\n\n  seed=5\n")
    assert c.seed == 5


# --- canonical emission and hashing --------------------------------------------


def test_emit_parse_round_trip(tmp_path):
    c = cfg(tmp_path, overrides=["time.dt=0.0012500000000000002",
                                 "field.enabled=true", "mode=forward",
                                 "wall.T_value=1.3"])
    path = tmp_path / "emitted.cfg"
    path.write_text(emit(c))
    c2 = parse_config(str(path), env={})
    assert c2.values == c.values
    assert emit(c2) == emit(c)


def test_emit_is_sorted_and_complete(tmp_path):
    lines = emit(cfg(tmp_path)).splitlines()
    assert len(lines) == len(SCHEMA)
    assert lines == sorted(lines)
    assert all("=" in ln for ln in lines)


def test_hash_ignores_formatting_but_sees_values(tmp_path):
    h_default = config_hash(cfg(tmp_path))
    # restating a default, reordering, comments: same hash
    assert config_hash(cfg(tmp_path, "# hi\nseed=42\n")) == h_default
    assert config_hash(cfg(tmp_path, "seed  =  42\nworkers=1\n")) == h_default
    # any effective change: different hash
    assert config_hash(cfg(tmp_path, "seed=43\n")) != h_default
    assert config_hash(cfg(tmp_path, "time.dt=0.002\n")) != h_default


# --- rejection paths -------------------------------------------------------------


def test_unknown_key_is_named(tmp_path):
    with pytest.raises(ConfigError, match="grid.cells: unknown key"):
        cfg(tmp_path, "grid.cells=9\n")


def test_malformed_line_reports_location(tmp_path):
    with pytest.raises(ConfigError, match=r"run\.cfg:2"):
        cfg(tmp_path, "seed=1\nnot a key value line\n")


def test_missing_file_is_a_config_error():
    with pytest.raises(ConfigError, match="no_such_file"):
        parse_config("/definitely/no_such_file.cfg", env={})


def test_accommodation_bounds(tmp_path):
    with pytest.raises(ConfigError, match="scatter.r_perp"):
        cfg(tmp_path, "scatter.r_perp=0\n")
    with pytest.raises(ConfigError, match="scatter.r_perp"):
        cfg(tmp_path, "scatter.r_perp=1.5\n")
    with pytest.raises(ConfigError, match="scatter.r_par"):
        cfg(tmp_path, "scatter.r_par=2.0\n")
    cfg(tmp_path, "scatter.r_perp=1.0\n")  # closed upper end is fine


def test_typed_value_errors(tmp_path):
    with pytest.raises(ConfigError, match="time.steps"):
        cfg(tmp_path, "time.steps=ten\n")
    with pytest.raises(ConfigError, match="field.enabled"):
        cfg(tmp_path, "field.enabled=maybe\n")
    with pytest.raises(ConfigError, match="mode"):
        cfg(tmp_path, "mode=sideways\n")
    with pytest.raises(ConfigError, match="time.dt"):
        cfg(tmp_path, "time.dt=inf\n")


# --- cross-field validation -------------------------------------------------------


def test_domain_shape_dimension_consistency(tmp_path):
    with pytest.raises(ConfigError, match="domain.dimension"):
        cfg(tmp_path, "domain.dimension=2\n")  # ball is 3D
    with pytest.raises(ConfigError, match="domain.dimension"):
        cfg(tmp_path, "domain.shape=disk\n")   # default dimension is 3
    c = cfg(tmp_path, "domain.shape=disk\ndomain.dimension=2\n")
    assert build_domain(c).dimension == 2
    c = cfg(tmp_path, "domain.shape=ellipsoid\ndomain.semi_axes=1.0,0.8,0.6\n")
    assert build_domain(c).dimension == 3
    with pytest.raises(ConfigError, match="domain.semi_axes"):
        cfg(tmp_path, "domain.shape=ellipsoid\ndomain.semi_axes=1.0,0.8\n")


def test_wall_kind_cross_checks(tmp_path):
    with pytest.raises(ConfigError, match="wall.T_expression"):
        cfg(tmp_path, "wall.T_expression=1.0+0.2*x\n")  # kind still constant
    with pytest.raises(ConfigError, match="wall.T_expression"):
        cfg(tmp_path, "wall.T_kind=expression\n")       # no expression given
    c = cfg(tmp_path,
            "wall.T_kind=expression\nwall.T_expression=1.0+0.2*x\n")
    assert c["wall.T_expression"] == "1.0+0.2*x"


def test_wall_temperature_floor_enforced_outside_verify(tmp_path):
    hot_cold = ("mode=forward\nwall.T_kind=expression\n"
                "wall.T_expression=1.0+0.5*x\n")
    with pytest.raises(ConfigError, match="T_min/T_max"):
        cfg(tmp_path, hot_cold)
    # verify mode runs oracles only, so the run-mode constraint is waived
    cfg(tmp_path, hot_cold.replace("mode=forward", "mode=verify"))
    # a gentler profile clears the floor for the default accommodation
    cfg(tmp_path, hot_cold.replace("0.5*x", "0.2*x"))


def test_picard_mode_needs_disk(tmp_path):
    with pytest.raises(ConfigError, match="disk"):
        cfg(tmp_path, "mode=picard\n")
    cfg(tmp_path, "mode=picard\ndomain.shape=disk\ndomain.dimension=2\n")


def test_probe_vectors_checked_in_trace_modes(tmp_path):
    with pytest.raises(ConfigError, match="probe.x"):
        cfg(tmp_path, "mode=backtrace\nprobe.x=0.1,0.2\n")
    cfg(tmp_path, "mode=backtrace\nprobe.x=0.1,0.2,0.0\n")
    with pytest.raises(ConfigError, match="probe.v"):
        cfg(tmp_path, "mode=duhamel\nprobe.v=a,b,c\n")


def test_parse_vector():
    assert parse_vector("k", "1.0,2.5,-3", 3) == (1.0, 2.5, -3.0)
    with pytest.raises(ConfigError, match="components"):
        parse_vector("k", "1.0,2.5", 3)
    with pytest.raises(ConfigError, match="comma-separated"):
        parse_vector("k", "one,two,three", 3)


def test_replace(tmp_path):
    c = cfg(tmp_path)
    c2 = c.replace(seed=7, time__dt=2e-3)
    assert (c2.seed, c2["time.dt"]) == (7, 2e-3)
    assert c.seed == 42
    with pytest.raises(ConfigError, match="unknown key"):
        c.replace(no__such__key=1)
