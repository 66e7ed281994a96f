"""The ``clvpb`` command line: config parsing, mode dispatch, verify suites.

    clvpb <mode> [--config path] [--set key=value ...] [--out dir]

Modes: verify (oracle identity suites), forward (particle simulation with
diagnostics), picard (disk fixed-point iteration), backtrace (one backward
wall-hit chain), sample-kernel (wall-kernel draws at a boundary point),
duhamel (backward path-integral estimate at a probe point).

Every run writes a ``run_manifest.txt`` with the canonical config hash, so
reruns are attributable; all numeric CSV output uses %.17g and a fixed seed
makes reruns byte-identical.  Exit codes: 0 success, 2 config error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import platform
import sys
from pathlib import Path
from typing import List, NamedTuple, Optional

import numpy as np
import scipy

from . import __version__
from .characteristics import (KineticWeightParams, PhasePoint,
                              alpha_invariance_defect, backward_cycles)
from .collision import (CollisionGrid, CollisionParams, MajorantBreachError,
                        collide, dsmc_step)
from .config import (ConfigError, RunConfig, build_domain, build_wall,
                     config_hash, emit, parse_config, parse_vector)
from .field import (DepositionError, FieldState, Grid,
                    PoissonConvergenceError, ZeroField, compute_rho0,
                    deposit_density, eval_field)
from .geometry import DomainGeometry
from .integrals import (ABEW, halfline_bessel_closed, halfline_bessel_quad,
                        plane_gaussian_closed, plane_gaussian_quad)
from .picard import (BoundaryQuadratureError, PicardParams, SubstepError,
                     _Grid, _kernel_matrix, picard_iterate,
                     poisson_disk_field)
from .scattering import (ScatterParams, normalization_defect,
                         reciprocity_defect, sample_outgoing)
from .simulator import (CSV_HEADER, DiagnosticWeights, EscapeError,
                        ParticleEnsemble, SurfaceTally,
                        backward_duhamel_estimate, diagnostics, forward_step)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_G = "%.17g"


def _scatter_from(config: RunConfig) -> ScatterParams:
    domain = build_domain(config)
    wall = build_wall(config, domain)
    return ScatterParams(r_perp=config["scatter.r_perp"],
                         r_par=config["scatter.r_par"], wall=wall)


def _write(out_dir: Path, name: str, text: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / name).write_text(text)


def write_manifest(config: RunConfig, out_dir: Path):
    lines = [
        f"config_hash={config_hash(config)}",
        f"mode={config.mode}",
        f"seed={config.seed}",
        f"clvpb={__version__}",
        f"numpy={np.__version__}",
        f"scipy={scipy.__version__}",
        f"python={platform.python_version()}",
        "",
        "# effective configuration",
        emit(config).rstrip(),
    ]
    _write(out_dir, "run_manifest.txt", "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# verify suites


class CheckRow(NamedTuple):
    suite: str
    name: str
    defect: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.defect <= self.tol


def _suite_integrals(rows: List[CheckRow]):
    plane = [ABEW(a=0.3, b=1.2, eps=0.1, w=(-0.3, 0.4)),
             ABEW(a=0.0, b=0.8, eps=0.2, w=(0.9, -0.6)),
             ABEW(a=1.0, b=2.0, eps=0.0, w=(0.0, 1.1))]
    half = [ABEW(a=0.3, b=1.2, eps=0.1, w=0.4),
            ABEW(a=0.0, b=0.8, eps=0.2, w=0.9),
            ABEW(a=1.0, b=2.0, eps=0.0, w=1.1)]
    for i, p in enumerate(plane):
        rows.append(CheckRow("integrals", f"plane-gaussian-{i}",
                             abs(plane_gaussian_quad(p)
                                 - plane_gaussian_closed(p)), 1e-9))
    for i, p in enumerate(half):
        rows.append(CheckRow("integrals", f"halfline-bessel-{i}",
                             abs(halfline_bessel_quad(p)
                                 - halfline_bessel_closed(p)), 1e-9))


def _suite_scattering(rows: List[CheckRow]):
    dom = DomainGeometry.ball(1.0)
    from .geometry import WallTemperature
    sc = ScatterParams(0.55, 0.7, WallTemperature(dom, value=1.3))
    x_b = np.array([0.0, 0.0, 1.0])
    for i, u in enumerate([(0.2, -0.3, 0.8), (1.5, 0.0, 0.4),
                           (-0.7, 1.1, 2.0)]):
        rows.append(CheckRow("scattering", f"normalization-{i}",
                             abs(normalization_defect(np.array(u), x_b, sc)),
                             1e-8))
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(200):
        u = rng.normal(size=3)
        v = rng.normal(size=3)
        u[2] = abs(u[2]) + 1e-3        # outgoing
        v[2] = -abs(v[2]) - 1e-3       # incoming
        worst = max(worst, abs(reciprocity_defect(u, v, x_b, sc)))
    rows.append(CheckRow("scattering", "reciprocity-200", worst, 1e-12))


def _suite_characteristics(rows: List[CheckRow]):
    dom = DomainGeometry.ball(1.0)
    kw = KineticWeightParams(eps=5e-2)
    p = PhasePoint(t=0.8, x=np.array([0.25, -0.1, 0.3]),
                   v=np.array([0.7, 0.4, -0.9]))
    field = ZeroField(3)
    rows.append(CheckRow("characteristics", "alpha-invariance",
                         alpha_invariance_defect(p, 0.15, kw, field, dom,
                                                 step=1e-3), 1e-6))


def _suite_collision(rows: List[CheckRow]):
    rng = np.random.default_rng(5)
    vel = rng.normal(size=(400, 3))
    mom0, en0 = vel.sum(axis=0), (vel**2).sum()
    dsmc_step(vel, 0.05, 1.0, CollisionParams(), rng)
    rows.append(CheckRow("collision", "momentum-exact",
                         float(np.abs(vel.sum(axis=0) - mom0).max()), 1e-12))
    rows.append(CheckRow("collision", "energy-exact",
                         abs((vel**2).sum() - en0) / en0, 1e-12))
    w = np.array([0.0, 0.0, 1.0])
    pair = collide(np.array([1.0, 0.0, 0.0]), np.array([-1.0, 0.0, 0.5]), w)
    rows.append(CheckRow("collision", "pair-energy",
                         abs((pair.u_prime**2).sum() + (pair.v_prime**2).sum()
                             - 1.0 - 1.25), 1e-12))


def _suite_field(rows: List[CheckRow]):
    dom = DomainGeometry.ball(1.0)
    grid = Grid.cover(dom, 48)
    rho0 = 1.0
    rho = np.full(grid.shape, rho0)
    state = FieldState.from_density(grid, rho, rho0)
    pts = grid.node_points().reshape(-1, 3)[grid.inside.ravel()]
    rows.append(CheckRow("field", "uniform-source-zero-E",
                         float(np.abs(eval_field(state.E, grid,
                                                 pts[::17])).max()), 1e-8))


def _suite_picard(rows: List[CheckRow]):
    dom = DomainGeometry.disk(1.0)
    from .geometry import WallTemperature
    sc = ScatterParams(0.5, 0.8, WallTemperature(dom, value=1.0))
    p = PicardParams(scatter=sc, nr=16, nphi=16, nv=16, substeps=8)
    g = _Grid(p)
    _, _, _, _, defect = _kernel_matrix(p, g)
    rows.append(CheckRow("picard", "wall-quadrature-mass", defect, 1e-6))
    # manufactured disk Poisson: phi = (1 - r^2)^2, lap = -8 + 16 r^2
    p64 = PicardParams(scatter=sc, nr=64, nphi=32, nv=16, substeps=8)
    g64 = _Grid(p64)
    rho = (-8.0 + 16.0 * g64.r[:, None]**2) * np.ones(g64.nphi)
    E = poisson_disk_field(rho, g64)
    q = 1.0 - g64.x**2 - g64.y**2
    ex = -(2.0 * q * (-2.0 * g64.x))
    ey = -(2.0 * q * (-2.0 * g64.y))
    err = max(np.abs(E[..., 0] - ex).max(), np.abs(E[..., 1] - ey).max())
    rows.append(CheckRow("picard", "disk-poisson-manufactured", err, 1e-3))


SUITES = {
    "integrals": _suite_integrals,
    "scattering": _suite_scattering,
    "characteristics": _suite_characteristics,
    "collision": _suite_collision,
    "field": _suite_field,
    "picard": _suite_picard,
}


def run_verify(config: RunConfig, out_dir: Path) -> int:
    which = config["verify.suite"]
    if which != "all" and which not in SUITES:
        raise ConfigError(f"verify.suite: unknown suite {which!r} "
                          f"(have: all, {', '.join(sorted(SUITES))})")
    rows: List[CheckRow] = []
    for name, fn in SUITES.items():
        if which in ("all", name):
            fn(rows)
    width = max(len(f"{r.suite}/{r.name}") for r in rows) + 2
    lines = []
    for r in rows:
        status = "pass" if r.passed else "FAIL"
        lines.append(f"{(r.suite + '/' + r.name).ljust(width)}"
                     f"defect {r.defect:.3e}  tol {r.tol:.1e}  {status}")
    n_fail = sum(not r.passed for r in rows)
    lines.append(f"{len(rows)} checks, {n_fail} failed")
    report = "\n".join(lines)
    print(report)
    _write(out_dir, "verify_report.txt", report + "\n")
    return EXIT_OK if n_fail == 0 else EXIT_NUMERICAL


# ---------------------------------------------------------------------------
# forward mode


def run_forward(config: RunConfig, out_dir: Path) -> int:
    scatter = _scatter_from(config)
    domain = scatter.domain
    rng = np.random.default_rng(config.seed)
    state = ParticleEnsemble.equilibrium(
        domain, config["particles.n"], config["particles.temperature"], rng)
    dt, steps = config["time.dt"], config["time.steps"]
    weights = DiagnosticWeights.default(scatter.wall.t_max)
    weights = dataclasses.replace(
        weights, c_frak=config["diagnostics.c_frak"],
        lam=config["diagnostics.lambda"], delta=config["diagnostics.delta"])
    tally = SurfaceTally(domain)
    tally.reset(state.t)

    collisions = None
    if config["collision.enabled"]:
        collisions = (CollisionParams(kappa=config["collision.kappa"],
                                      q0_c=config["collision.q0_c"]),
                      CollisionGrid(domain, config["grid.cells_per_axis"]))
    field_grid = None
    if config["field.enabled"]:
        field_grid = Grid.cover(domain, config["field.nodes"])
        rho0 = compute_rho0(state.mass, domain)

    def current_field():
        if field_grid is None:
            return None
        rho = deposit_density(state.x, state.w, field_grid)
        fs = FieldState.from_density(field_grid, rho, rho0)
        if config["field.coupling"] != 1.0:
            scale = config["field.coupling"]
            return lambda x: scale * fs.acceleration(x)
        return fs

    every = config["diagnostics.every"]
    bins = config["diagnostics.bins"]
    out = [CSV_HEADER]
    out.append(diagnostics(state, weights, tally, bins=bins).csv_row())
    for s in range(1, steps + 1):
        forward_step(state, dt, scatter, rng, field=current_field(),
                     collisions=collisions, tally=tally)
        if s % every == 0 or s == steps:
            out.append(diagnostics(state, weights, tally, bins=bins)
                       .csv_row())
    _write(out_dir, "diagnostics.csv", "\n".join(out) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# picard mode


def run_picard(config: RunConfig, out_dir: Path) -> int:
    scatter = _scatter_from(config)
    params = PicardParams(
        scatter=scatter, t_bar=config["picard.t_bar"],
        substeps=config["picard.substeps"], nr=config["picard.nr"],
        nphi=config["picard.nphi"], nv=config["picard.nv"],
        quad_normal=config["picard.quad_normal"],
        quad_tangent=config["picard.quad_tangent"],
        poisson_coupling=config["picard.poisson_coupling"],
        coupling_strength=config["field.coupling"],
        lam=config["diagnostics.lambda"], delta=config["diagnostics.delta"])
    result = picard_iterate(params, n_iterates=config["picard.iterates"])
    lines = ["m,d_m,ratio"]
    for s in result.stats:
        lines.append(f"{s.m},{_G % s.d_m},{_G % s.ratio}")
    _write(out_dir, "picard_ratios.csv", "\n".join(lines) + "\n")
    print(f"wall-quadrature defect {result.quadrature_defect:.3e}; "
          f"final ratio {result.stats[-1].ratio:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# probe modes


def _probe_point(config: RunConfig, domain) -> PhasePoint:
    x = np.array(parse_vector("probe.x", config["probe.x"],
                              domain.dimension))
    v = np.array(parse_vector("probe.v", config["probe.v"],
                              domain.dimension))
    if domain.signed_distance(x) > 0:
        raise ConfigError("probe.x: outside the domain")
    return PhasePoint(t=config["probe.t"], x=x, v=v)


def run_backtrace(config: RunConfig, out_dir: Path) -> int:
    scatter = _scatter_from(config)
    p = _probe_point(config, scatter.domain)
    rng = np.random.default_rng(config.seed)
    rec = backward_cycles(p, ZeroField(scatter.domain.dimension), scatter,
                          rng, k_max=config["duhamel.k_max"])
    d = scatter.domain.dimension
    xcols = ",".join(f"x{i+1}" for i in range(d))
    vcols = ",".join(f"v{i+1}" for i in range(d))
    lines = [f"k,t_k,{xcols},{vcols},log_weight"]
    for k, hit in enumerate(rec.hits, 1):
        coords = ",".join(_G % c for c in hit.x)
        vels = ",".join(_G % c for c in hit.v_sampled)
        lines.append(f"{k},{_G % hit.t},{coords},{vels},"
                     f"{_G % rec.log_weight}")
    _write(out_dir, "backtrace.csv", "\n".join(lines) + "\n")
    print(f"{len(rec.hits)} wall hits, terminated: {rec.terminated}, "
          f"log weight {rec.log_weight:.6g}")
    return EXIT_OK


def run_sample_kernel(config: RunConfig, out_dir: Path) -> int:
    scatter = _scatter_from(config)
    domain = scatter.domain
    x = np.array(parse_vector("probe.x", config["probe.x"],
                              domain.dimension))
    rel = x - domain.center
    if not np.any(rel):
        rel = np.eye(domain.dimension)[0]
    x_b = domain.project(domain.center + rel)
    n = domain.outward_normal(x_b)
    u = np.array(parse_vector("probe.v", config["probe.v"],
                              domain.dimension))
    if u @ n <= 0:
        raise ConfigError("probe.v: must point out of the domain at the "
                          "boundary point (n.v > 0)")
    rng = np.random.default_rng(config.seed)
    sample = sample_outgoing(u, x_b, scatter, rng,
                             size=config["sample.count"])
    v = sample.v_out
    v3 = v[:, 2] if domain.dimension == 3 else np.zeros(len(v))
    v_perp = sample.decomposition.v_perp
    v_par = np.linalg.norm(np.atleast_2d(sample.decomposition.v_par),
                           axis=-1)
    lines = ["v1,v2,v3,v_perp,v_par_norm"]
    for i in range(len(v)):
        lines.append(",".join(_G % c for c in
                              (v[i, 0], v[i, 1], v3[i], v_perp[i], v_par[i])))
    _write(out_dir, "samples.csv", "\n".join(lines) + "\n")
    return EXIT_OK


def run_duhamel(config: RunConfig, out_dir: Path) -> int:
    scatter = _scatter_from(config)
    p = _probe_point(config, scatter.domain)
    t_m = scatter.wall.t_max

    def f0(x, v):
        return math.exp(-float(np.dot(v, v)) / (4.0 * t_m))

    rng = np.random.default_rng(config.seed)
    est = backward_duhamel_estimate(
        p, ZeroField(scatter.domain.dimension), scatter, f0, rng,
        n_traces=config["duhamel.n_traces"], k_max=config["duhamel.k_max"])
    lines = ["mean,stderr,truncated_fraction",
             f"{_G % est.mean},{_G % est.stderr},"
             f"{_G % est.truncated_fraction}"]
    _write(out_dir, "duhamel.csv", "\n".join(lines) + "\n")
    print(f"estimate {est.mean:.8g} +- {est.stderr:.2g} "
          f"(truncated fraction {est.truncated_fraction:.3g})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# dispatch


RUNNERS: dict = {
    "verify": run_verify,
    "forward": run_forward,
    "picard": run_picard,
    "backtrace": run_backtrace,
    "sample-kernel": run_sample_kernel,
    "duhamel": run_duhamel,
}

NUMERICAL_ERRORS = (EscapeError, BoundaryQuadratureError, SubstepError,
                    PoissonConvergenceError, MajorantBreachError,
                    DepositionError)


def dispatch(config: RunConfig) -> int:
    """Run the configured mode; returns the process exit code."""
    out_dir = Path(config["out"])
    write_manifest(config, out_dir)
    try:
        return RUNNERS[config.mode](config, out_dir)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as e:
        print(f"numerical failure: {type(e).__name__}: {e}",
              file=sys.stderr)
        return EXIT_NUMERICAL


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="clvpb",
        description="Kinetic wall-scattering simulator and verifier")
    parser.add_argument("mode", choices=sorted(RUNNERS))
    parser.add_argument("--config", metavar="PATH")
    parser.add_argument("--set", dest="overrides", action="append",
                        default=[], metavar="KEY=VALUE")
    parser.add_argument("--out", metavar="DIR")
    parser.add_argument("--suite", metavar="NAME",
                        help="verify mode: run one suite instead of all")
    args = parser.parse_args(argv)

    overrides = list(args.overrides)
    overrides.append(f"mode={args.mode}")
    if args.out is not None:
        overrides.append(f"out={args.out}")
    if args.suite is not None:
        overrides.append(f"verify.suite={args.suite}")
    try:
        config = parse_config(args.config, overrides)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return dispatch(config)


if __name__ == "__main__":
    sys.exit(main())
