"""Forward particle transport with wall scattering, plus diagnostics and
the backward Duhamel estimator.

The forward state is an empirical measure for F: positions, velocities, and
immutable statistical weights.  Transport is exact chords while the field is
zero and RK4 substeps otherwise; every wall impact redraws the velocity from
the wall kernel.  Diagnostics view the same particles as f = F / sqrt(mu)
through reweighting, never by mutating weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Tuple

import numpy as np
from scipy.special import erf

from .characteristics import PhasePoint, backward_cycles
from .collision import CollisionGrid, CollisionParams, dsmc_apply
from .field import as_field
from .geometry import DomainGeometry
from .scattering import ScatterParams, sample_outgoing_batch

MAX_BOUNCES_PER_STEP = 10_000
ESCAPE_TOL = 1e-9


class EscapeError(RuntimeError):
    """A particle ended a step strictly outside the domain (tunneling)."""


@dataclass
class ParticleEnsemble:
    """Empirical measure sum_i w_i delta(x_i, v_i) at time t."""

    x: np.ndarray
    v: np.ndarray
    w: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.v = np.atleast_2d(np.asarray(self.v, dtype=float))
        self.w = np.atleast_1d(np.asarray(self.w, dtype=float))
        if self.x.shape != self.v.shape or self.w.shape != self.x.shape[:1]:
            raise ValueError("x, v must be (n, d) with matching weights (n,)")
        if np.any(self.w < 0):
            raise ValueError("weights must be nonnegative")

    def __len__(self):
        return self.x.shape[0]

    @property
    def dimension(self):
        return self.x.shape[1]

    @property
    def mass(self):
        return float(self.w.sum())

    def copy(self):
        return ParticleEnsemble(self.x.copy(), self.v.copy(),
                                self.w.copy(), self.t)

    @classmethod
    def equilibrium(cls, domain: DomainGeometry, n: int, temperature: float,
                    rng: np.random.Generator, total_mass: Optional[float] = None):
        """Uniform positions, Maxwellian velocities at the given temperature.

        Weights sum to ``total_mass`` (default: the physical mass of a unit
        density, i.e. the domain volume).
        """
        x = domain.sample_interior(n, rng)
        v = math.sqrt(temperature) * rng.standard_normal((n, domain.dimension))
        mass = domain.volume() if total_mass is None else float(total_mass)
        return cls(x, v, np.full(n, mass / n))


@dataclass(frozen=True)
class DiagnosticWeights:
    """Exponents for the weighted-norm diagnostics.

    The Gaussian weight w_theta = e^{theta |v|^2} must stay integrable
    against the reference Maxwellian of temperature t_max, which pins
    0 < theta_tilde < theta < 1/(4 t_max).  c_frak and lam set the
    time-decay rates of the h-weight and the L^p weight; delta is the
    L^{1+delta} exponent offset.
    """

    t_max: float
    theta: float
    theta_tilde: float
    c_frak: float = 0.0
    lam: float = 0.0
    delta: float = 0.1

    def __post_init__(self):
        if self.t_max <= 0:
            raise ValueError("t_max must be positive")
        cap = 1.0 / (4.0 * self.t_max)
        if not 0.0 < self.theta_tilde < self.theta < cap:
            raise ValueError(
                f"need 0 < theta_tilde < theta < 1/(4 t_max) = {cap:.6g}")
        if self.c_frak < 0 or self.lam < 0:
            raise ValueError("rates must be nonnegative")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")

    @classmethod
    def default(cls, t_max: float):
        cap = 1.0 / (4.0 * t_max)
        return cls(t_max=t_max, theta=0.8 * cap, theta_tilde=0.4 * cap)


class SurfaceTally:
    """Weighted crossing counts through an inward offset of the boundary.

    The wall itself has exactly balanced arrival/emission counts by
    construction, so the statistical null-flux check watches a surface just
    inside: outward minus inward crossing weight is the windowed net flux,
    total crossing weight the gross flux.  Wall impacts are tallied too.
    """

    def __init__(self, domain: DomainGeometry, margin_fraction: float = 0.02):
        if not 0.0 < margin_fraction < 1.0:
            raise ValueError("margin_fraction must lie in (0, 1)")
        self.domain = domain
        self.margin = margin_fraction * 0.5 * domain.diameter
        self.reset(0.0)

    def reset(self, t: float):
        self.window_start = t
        self.net = 0.0
        self.gross = 0.0
        self.crossings = 0
        self.impacts = 0
        self.impact_weight = 0.0

    def record_move(self, sd_old, sd_new, w):
        inner_old = sd_old <= -self.margin
        inner_new = sd_new <= -self.margin
        out = inner_old & ~inner_new
        inn = ~inner_old & inner_new
        self.net += float(w[out].sum()) - float(w[inn].sum())
        self.gross += float(w[out].sum()) + float(w[inn].sum())
        self.crossings += int(out.sum()) + int(inn.sum())

    def record_impacts(self, count, weight):
        self.impacts += int(count)
        self.impact_weight += float(weight)

    def rates(self, t_now: float) -> Tuple[float, float]:
        dt = t_now - self.window_start
        if dt <= 0 or self.crossings == 0:
            return 0.0, 0.0
        return self.net / dt, self.gross / dt


def _transport_free(state: ParticleEnsemble, dt: float,
                    scatter: ScatterParams, rng: np.random.Generator) -> int:
    """Exact straight-chord transport with wall redraws; returns impacts."""
    domain = scatter.domain
    x, v = state.x, state.v
    remaining = np.full(len(state), dt)
    impacts = 0
    # optimistic full move, then peel off the escapees
    trial = x + v * remaining[:, None]
    outside = domain.signed_distance(trial) > 0.0
    x[~outside] = trial[~outside]
    remaining[~outside] = 0.0
    active = np.flatnonzero(outside)
    for _ in range(MAX_BOUNCES_PER_STEP):
        if active.size == 0:
            return impacts
        s, x_b = domain.ray_exit(x[active], v[active])
        s = np.minimum(s, remaining[active])
        u = v[active]
        v[active] = sample_outgoing_batch(u, x_b, scatter, rng)
        x[active] = x_b
        remaining[active] -= s
        impacts += active.size
        trial = x[active] + v[active] * remaining[active][:, None]
        outside = (domain.signed_distance(trial) > 0.0) \
            & (remaining[active] > 0.0)
        done = active[~outside]
        x[done] = trial[~outside]
        remaining[done] = 0.0
        active = active[outside]
    raise EscapeError("bounce iteration exceeded MAX_BOUNCES_PER_STEP")


def _transport_field(state: ParticleEnsemble, dt: float,
                     scatter: ScatterParams, accel: Callable,
                     rng: np.random.Generator,
                     substep: Optional[float]) -> int:
    """RK4 transport under a force field, one particle at a time."""
    from .characteristics import _rk4_step, _step_ceiling, BISECT_TOL

    domain = scatter.domain
    tol = domain.boundary_tol
    impacts = 0
    for i in range(len(state)):
        x = state.x[i].copy()
        v = state.v[i].copy()
        remaining = dt
        speed = float(np.linalg.norm(v))
        for _ in range(MAX_BOUNCES_PER_STEP):
            if remaining <= 0:
                break
            h = min(_step_ceiling(domain, speed + 1e-12, substep), remaining)
            x_new, v_new = _rk4_step(x, v, h, accel)
            if domain.signed_distance(x_new) <= 0.0:
                x, v = x_new, v_new
                remaining -= h
                continue
            # bracketed crossing inside (0, h]: bisect to the wall
            lo, hi = 0.0, h
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                xm, _ = _rk4_step(x, v, mid, accel)
                if domain.signed_distance(xm) > 0.0:
                    hi = mid
                else:
                    lo = mid
                if hi - lo <= BISECT_TOL:
                    break
            s = 0.5 * (lo + hi)
            x_hit, v_hit = _rk4_step(x, v, s, accel)
            x_hit = domain.project(x_hit)
            n = domain.outward_normal(x_hit)
            if v_hit @ n <= 0:  # grazing round-off: nudge along the normal
                v_hit = v_hit + (1e-12 - float(v_hit @ n)) * n
            v = sample_outgoing_batch(v_hit, x_hit, scatter, rng)[0]
            x = x_hit
            remaining -= s
            speed = float(np.linalg.norm(v))
            impacts += 1
        else:
            raise EscapeError("bounce iteration exceeded MAX_BOUNCES_PER_STEP")
        if domain.signed_distance(x) > tol + ESCAPE_TOL:
            raise EscapeError("particle ended the step outside the domain")
        state.x[i] = x
        state.v[i] = v
    return impacts


def forward_step(state: ParticleEnsemble, dt: float, scatter: ScatterParams,
                 rng: np.random.Generator, field=None,
                 collisions: Optional[Tuple[CollisionParams, CollisionGrid]] = None,
                 tally: Optional[SurfaceTally] = None,
                 substep: Optional[float] = None) -> int:
    """Advance every particle by dt; returns the wall-impact count.

    Transport under ``field`` (anything as_field accepts), wall redraws at
    each impact, then an optional DSMC sweep.  Weights are never touched, so
    total mass is conserved exactly by construction.
    """
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    domain = scatter.domain
    if len(state) == 0:
        state.t += dt
        return 0
    sd_before = np.atleast_1d(domain.signed_distance(state.x)) \
        if tally is not None else None

    f = as_field(field, domain.dimension)
    if getattr(f, "is_zero", False):
        impacts = _transport_free(state, dt, scatter, rng)
    else:
        impacts = _transport_field(state, dt, scatter, f.acceleration, rng,
                                   substep)

    if collisions is not None:
        params, grid = collisions
        dsmc_apply(state.x, state.v, dt, grid, params, rng)

    sd_after = np.atleast_1d(domain.signed_distance(state.x))
    worst = float(sd_after.max(initial=-math.inf))
    if worst > domain.boundary_tol + ESCAPE_TOL:
        raise EscapeError(f"particle ended the step {worst:.3e} outside")
    if tally is not None:
        tally.record_move(sd_before, sd_after, state.w)
        tally.record_impacts(impacts, 0.0)
    state.t += dt
    return impacts


# ---------------------------------------------------------------------------
# diagnostics


class DiagnosticsRecord(NamedTuple):
    t: float
    mass: float
    net_flux: float
    gross_flux: float
    h_sup: float
    l2_wnorm: float

    def csv_row(self) -> str:
        return ",".join(f"{v:.17g}" for v in self)


CSV_HEADER = "t,mass,net_flux,gross_flux,h_sup,l2_wnorm"


def _adaptive_bins(z: np.ndarray, bins: int):
    """Per-axis quantile bin edges and each sample's flat bin index."""
    n, dims = z.shape
    qs = np.linspace(0.0, 1.0, bins + 1)
    idx = np.zeros(n, dtype=np.int64)
    widths = np.ones(n)
    for k in range(dims):
        edges = np.quantile(z[:, k], qs)
        edges[0] -= 1e-12
        edges[-1] += 1e-12
        # collapse empty quantile ranges (ties) to keep volumes positive
        keep = np.concatenate([[True], np.diff(edges) > 1e-12])
        edges = edges[keep]
        cells = len(edges) - 1
        j = np.clip(np.searchsorted(edges, z[:, k], side="right") - 1,
                    0, cells - 1)
        idx = idx * cells + j
        widths *= np.diff(edges)[j]
    return idx, widths


def diagnostics(state: ParticleEnsemble, weights: DiagnosticWeights,
                tally: Optional[SurfaceTally] = None,
                bins: int = 6) -> DiagnosticsRecord:
    """Mass, windowed flux rates, and weighted-norm estimates of f.

    f is estimated on an adaptive (quantile) phase-space binning of the
    particles; the h-weight w_theta e^{-c t <v>^2} and the sqrt(mu)
    reweighting are applied per particle before binning, so h_sup and the
    weighted L^2 norm come from the same pass.
    """
    net, gross = tally.rates(state.t) if tally is not None else (0.0, 0.0)
    if len(state) == 0 or state.mass == 0.0:
        return DiagnosticsRecord(state.t, state.mass if len(state) else 0.0,
                                 net, gross, 0.0, 0.0)

    vv = (state.v**2).sum(axis=1)
    bracket = 1.0 + vv  # <v>^2
    inv_sqrt_mu = np.exp(vv / (4.0 * weights.t_max))
    h_factor = np.exp(weights.theta * vv
                      - weights.c_frak * state.t * bracket) * inv_sqrt_mu
    lp_factor = np.exp(-weights.lam * state.t * np.sqrt(bracket)) \
        * inv_sqrt_mu

    z = np.concatenate([state.x, state.v], axis=1)
    idx, width = _adaptive_bins(z, bins)
    order = np.argsort(idx, kind="stable")
    cuts = np.flatnonzero(np.diff(idx[order])) + 1
    h_sup = 0.0
    l2_sq = 0.0
    for members in np.split(order, cuts):
        vol = float(width[members[0]])
        if vol <= 0:
            continue
        wm = state.w[members]
        h_bin = float((wm * h_factor[members]).sum()) / vol
        g_bin = float((wm * lp_factor[members]).sum()) / vol
        h_sup = max(h_sup, h_bin)
        l2_sq += g_bin * g_bin * vol
    return DiagnosticsRecord(state.t, state.mass, net, gross,
                             h_sup, math.sqrt(l2_sq))


def maxwell_speed_cdf(s, temperature: float, dimension: int = 3):
    """CDF of |v| under the Maxwellian of the given temperature."""
    s = np.asarray(s, dtype=float) / math.sqrt(temperature)
    if dimension == 3:
        return erf(s / math.sqrt(2.0)) \
            - np.sqrt(2.0 / math.pi) * s * np.exp(-s * s / 2.0)
    if dimension == 2:
        return 1.0 - np.exp(-s * s / 2.0)
    raise ValueError("dimension must be 2 or 3")


def speed_ks_statistic(velocities: np.ndarray, temperature: float) -> float:
    """One-sample KS distance of particle speeds from the Maxwell law."""
    v = np.atleast_2d(np.asarray(velocities, dtype=float))
    speeds = np.sort(np.linalg.norm(v, axis=1))
    n = len(speeds)
    cdf = maxwell_speed_cdf(speeds, temperature, v.shape[1])
    grid = np.arange(1, n + 1) / n
    return float(np.max(np.maximum(np.abs(grid - cdf),
                                   np.abs(grid - 1.0 / n - cdf))))


def ks_critical_value(n: int, significance: float = 0.01) -> float:
    """Asymptotic one-sample Kolmogorov-Smirnov critical distance."""
    return math.sqrt(-0.5 * math.log(significance / 2.0)) / math.sqrt(n)


def maxwellian_wall_flux(density: float, temperature: float) -> float:
    """Impacts per unit wall area per unit time for a resting Maxwellian."""
    return density * math.sqrt(temperature / (2.0 * math.pi))


# ---------------------------------------------------------------------------
# backward Duhamel estimator


class DuhamelEstimate(NamedTuple):
    mean: float
    stderr: float
    truncated_fraction: float


def backward_duhamel_estimate(p: PhasePoint, field, scatter: ScatterParams,
                              f0: Callable, rng: np.random.Generator,
                              n_traces: int, k_max: int = 64) -> DuhamelEstimate:
    """Average of e^{log_weight} f0(X(0), V(0)) over backward traces.

    Unbiased for the collisionless weighted solution f(t, x, v); traces that
    exhaust k_max wall hits before reaching t = 0 contribute zero and are
    reported in truncated_fraction.
    """
    if n_traces < 1:
        raise ValueError("n_traces must be positive")
    vals = np.zeros(n_traces)
    truncated = 0
    for k in range(n_traces):
        rec = backward_cycles(p, field, scatter, rng, k_max=k_max)
        if rec.terminated != "reached_t0":
            truncated += 1
            continue
        foot = rec.foot
        vals[k] = math.exp(rec.log_weight) * float(f0(foot.x, foot.v))
    mean = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(n_traces)) if n_traces > 1 \
        else 0.0
    return DuhamelEstimate(mean, stderr, truncated / n_traces)


def forward_observable_estimate(state: ParticleEnsemble, phi: Callable,
                                t_max: float) -> Tuple[float, float]:
    """(estimate, stderr) of int phi f dx dv from the F-ensemble.

    f = F / sqrt(mu), so each particle contributes w phi(x, v) e^{|v|^2/4T}.
    """
    vv = (state.v**2).sum(axis=1)
    terms = state.w * phi(state.x, state.v) * np.exp(vv / (4.0 * t_max))
    n = len(terms)
    mean = float(terms.sum())
    stderr = float(np.std(terms * n, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, stderr
