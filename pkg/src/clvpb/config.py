"""Flat key=value run configuration: schema, parsing, canonical emission.

Every key has a typed schema entry with a default, so an empty file is a
complete configuration.  parse -> emit -> parse is the identity (floats are
emitted with repr, which round-trips exactly), and the canonical emission
is what gets hashed into run manifests: reordering or reformatting a file
never changes the hash, changing any effective value always does.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Optional, Tuple

from .geometry import (DomainGeometry, WallTemperature,
                       temperature_ratio_floor)

MODES = ("verify", "forward", "picard", "backtrace", "sample-kernel",
         "duhamel")


class ConfigError(ValueError):
    """A config key failed validation; the message names the key path."""


def _enum(*options):
    def check(key, s):
        if s not in options:
            raise ConfigError(
                f"{key}: expected one of {', '.join(options)}, got {s!r}")
        return s
    return check


def _bool(key, s):
    if s in ("true", "1", "yes"):
        return True
    if s in ("false", "0", "no"):
        return False
    raise ConfigError(f"{key}: expected true/false, got {s!r}")


def _int(lo=None, hi=None):
    def check(key, s):
        try:
            n = int(s)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {s!r}")
        if lo is not None and n < lo:
            raise ConfigError(f"{key}: must be >= {lo}, got {n}")
        if hi is not None and n > hi:
            raise ConfigError(f"{key}: must be <= {hi}, got {n}")
        return n
    return check


def _float(lo=None, hi=None, open_lo=False, open_hi=False):
    def check(key, s):
        try:
            x = float(s)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {s!r}")
        if not math.isfinite(x):
            raise ConfigError(f"{key}: must be finite")
        if lo is not None and (x < lo or (open_lo and x == lo)):
            raise ConfigError(
                f"{key}: must be {'>' if open_lo else '>='} {lo}, got {x}")
        if hi is not None and (x > hi or (open_hi and x == hi)):
            raise ConfigError(
                f"{key}: must be {'<' if open_hi else '<='} {hi}, got {x}")
        return x
    return check


def _str(key, s):
    return s


# key -> (parser, default).  Defaults are the typed values.
SCHEMA: Dict[str, Tuple[object, object]] = {
    "mode": (_enum(*MODES), "verify"),
    "seed": (_int(lo=0), 42),
    "workers": (_int(lo=1), 1),
    "out": (_str, "."),
    "verify.suite": (_str, "all"),

    "domain.shape": (_enum("ball", "disk", "ellipsoid"), "ball"),
    "domain.dimension": (_int(lo=2, hi=3), 3),
    "domain.radius": (_float(lo=0.0, open_lo=True), 1.0),
    "domain.semi_axes": (_str, ""),

    "wall.T_kind": (_enum("constant", "expression"), "constant"),
    "wall.T_value": (_float(lo=0.0, open_lo=True), 1.0),
    "wall.T_expression": (_str, ""),

    "scatter.r_perp": (_float(lo=0.0, hi=1.0, open_lo=True), 0.5),
    "scatter.r_par": (_float(lo=0.0, hi=2.0, open_lo=True, open_hi=True),
                      0.8),

    "time.dt": (_float(lo=0.0, open_lo=True), 1e-3),
    "time.steps": (_int(lo=0), 1000),

    "particles.n": (_int(lo=0), 100000),
    "particles.temperature": (_float(lo=0.0, open_lo=True), 1.0),

    "field.enabled": (_bool, False),
    "field.nodes": (_int(lo=8), 32),
    "field.coupling": (_float(), 1.0),

    "grid.cells_per_axis": (_int(lo=1), 8),
    "collision.enabled": (_bool, False),
    "collision.kappa": (_float(lo=0.0, hi=1.0, open_lo=True), 1.0),
    "collision.q0_c": (_float(lo=0.0, open_lo=True), 1.0),

    "picard.t_bar": (_float(lo=0.0, open_lo=True), 0.08),
    "picard.substeps": (_int(lo=1), 16),
    "picard.nr": (_int(lo=8), 64),
    "picard.nphi": (_int(lo=8), 64),
    "picard.nv": (_int(lo=8), 64),
    "picard.iterates": (_int(lo=1), 8),
    "picard.quad_normal": (_int(lo=8), 48),
    "picard.quad_tangent": (_int(lo=8), 64),
    "picard.poisson_coupling": (_bool, False),

    "diagnostics.every": (_int(lo=1), 1),
    "diagnostics.bins": (_int(lo=2), 6),
    "diagnostics.c_frak": (_float(lo=0.0), 0.0),
    "diagnostics.lambda": (_float(lo=0.0), 0.0),
    "diagnostics.delta": (_float(lo=0.0, hi=1.0, open_lo=True, open_hi=True),
                          0.1),

    "probe.t": (_float(lo=0.0), 0.5),
    "probe.x": (_str, "0.2,0.0,0.0"),
    "probe.v": (_str, "0.5,0.0,0.0"),
    "duhamel.n_traces": (_int(lo=1), 2000),
    "duhamel.k_max": (_int(lo=1), 64),
    "sample.count": (_int(lo=1), 100000),
}


@dataclass(frozen=True, eq=True)
class RunConfig:
    """Validated, fully-defaulted configuration (schema-typed values)."""

    values: Mapping[str, object]

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    @property
    def mode(self) -> str:
        return self.values["mode"]

    @property
    def seed(self) -> int:
        return self.values["seed"]

    def replace(self, **flat) -> "RunConfig":
        """New config with dotted keys (dots written as __) overridden."""
        vals = dict(self.values)
        for k, v in flat.items():
            key = k.replace("__", ".")
            if key not in SCHEMA:
                raise ConfigError(f"{key}: unknown key")
            vals[key] = v
        return _validated(vals)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit(config: RunConfig) -> str:
    """Canonical text form: every key, sorted, one `key=value` per line."""
    return "".join(f"{k}={_format(config.values[k])}\n"
                   for k in sorted(config.values))


def config_hash(config: RunConfig) -> str:
    return hashlib.sha256(emit(config).encode()).hexdigest()


def parse_vector(key: str, s: str, dimension: int) -> Tuple[float, ...]:
    """A comma-separated float list of the required length."""
    try:
        vec = tuple(float(p) for p in s.split(","))
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated numbers, "
                          f"got {s!r}")
    if len(vec) != dimension:
        raise ConfigError(f"{key}: expected {dimension} components, "
                          f"got {len(vec)}")
    return vec


def build_domain(config: RunConfig) -> DomainGeometry:
    shape = config["domain.shape"]
    dim = config["domain.dimension"]
    if shape == "ball":
        if dim != 3:
            raise ConfigError("domain.dimension: ball is 3D (use disk)")
        return DomainGeometry.ball(config["domain.radius"])
    if shape == "disk":
        if dim != 2:
            raise ConfigError("domain.dimension: disk is 2D")
        return DomainGeometry.disk(config["domain.radius"])
    axes = parse_vector("domain.semi_axes", config["domain.semi_axes"], dim)
    return DomainGeometry.ellipsoid(axes)


def build_wall(config: RunConfig, domain: DomainGeometry) -> WallTemperature:
    if config["wall.T_kind"] == "constant":
        if config["wall.T_expression"]:
            raise ConfigError("wall.T_expression: set although "
                              "wall.T_kind=constant")
        return WallTemperature(domain, value=config["wall.T_value"])
    if not config["wall.T_expression"]:
        raise ConfigError("wall.T_expression: required when "
                          "wall.T_kind=expression")
    try:
        return WallTemperature(domain,
                               expression=config["wall.T_expression"])
    except ValueError as e:
        raise ConfigError(f"wall.T_expression: {e}")


def _check_temperature_constraint(config: RunConfig):
    domain = build_domain(config)
    wall = build_wall(config, domain)
    r_perp = config["scatter.r_perp"]
    r_par = config["scatter.r_par"]
    floor = temperature_ratio_floor(r_perp, r_par)
    ratio = wall.t_min / wall.t_max
    if ratio <= floor:
        raise ConfigError(
            "wall temperature constraint violated: T_min/T_max = "
            f"{ratio:.6g} <= {floor:.6g} = max((1-r_par)/(2-r_par), "
            "(sqrt(1-r_perp)-(1-r_perp))/r_perp); the wall must satisfy "
            "T_min/T_max > this floor")


def _validated(vals: Dict[str, object]) -> RunConfig:
    config = RunConfig(values=dict(vals))
    domain = build_domain(config)          # shape/dimension consistency
    build_wall(config, domain)             # kind/value/expression
    mode = config.mode
    if mode != "verify":
        _check_temperature_constraint(config)
    if mode == "picard" and config["domain.shape"] != "disk":
        raise ConfigError("domain.shape: mode=picard needs a disk domain")
    if mode in ("backtrace", "duhamel", "sample-kernel"):
        parse_vector("probe.x", config["probe.x"], domain.dimension)
        parse_vector("probe.v", config["probe.v"], domain.dimension)
    return config


def parse_config(path: Optional[str] = None,
                 overrides: Iterable[str] = (),
                 env: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Read a config file plus `key=value` overrides into a RunConfig.

    Precedence: schema defaults < file < overrides < CLVPB_SEED.  Unknown
    keys and malformed lines raise ConfigError naming the key.
    """
    raw: Dict[str, str] = {}

    def absorb(line: str, where: str):
        line = line.strip()
        if not line or line.startswith("#"):
            return
        if "=" not in line:
            raise ConfigError(f"{where}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{key}: unknown key")
        raw[key] = value

    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as e:
            raise ConfigError(f"config file {path!r}: {e.strerror or e}")
        for i, line in enumerate(text.splitlines(), 1):
            absorb(line, f"{path}:{i}")
    for item in overrides:
        absorb(item, "--set")

    environment = os.environ if env is None else env
    if "CLVPB_SEED" in environment:
        raw["seed"] = environment["CLVPB_SEED"].strip()

    vals = {}
    for key, (parser, default) in SCHEMA.items():
        vals[key] = parser(key, raw[key]) if key in raw else default
    return _validated(vals)
