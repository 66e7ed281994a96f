"""Trajectories, backward exit times, the kinetic weight, and back-time cycles.

The dynamics is Hamiltonian transport

    dx/dt = v,   dv/dt = E(x),

integrated with classical RK4 (exact for free streaming and for a constant
field).  Tracing a phase point backward either reaches the initial time or
exits through the wall; the exit is located by a sign change of the signed
distance across an integration substep followed by bisection.  On top of the
backtrace sit the mollified weight alpha — which interpolates between 1 in
the interior and |n.v| at the incoming wall — and the backward scattering
cycles used by the dual stochastic representation.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from typing import Callable, List, NamedTuple, Optional, Tuple

import numpy as np

from .field import as_field
from .geometry import DomainGeometry
from .scattering import ScatterParams, sample_outgoing

GRAZING_TOL = 1e-10
BISECT_TOL = 1e-12
SUBSTEP_FRACTION = 0.1  # anti-tunneling: substep <= fraction * diam / (speed + 1)
ACCURACY_FRACTION = 0.005  # default accuracy: substep <= fraction * diam
MAX_RESAMPLES = 1000


class TrajectoryExitError(RuntimeError):
    """An integration substep left the domain; use the exit-aware routines."""


def smooth_ramp(tau):
    """Quintic smoothstep: 0 below 0, 1 above 1, slope <= 15/8 in between."""
    t = np.clip(tau, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


@dataclass(frozen=True)
class PhasePoint:
    """Time, position (in the closed domain) and velocity."""

    t: float
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        if self.x.shape != self.v.shape or self.x.ndim != 1:
            raise ValueError("x and v must be vectors of equal dimension")
        if self.t < 0:
            raise ValueError("time must be nonnegative")


@dataclass(frozen=True)
class BacktraceResult:
    """Outcome of tracing a phase point backward in time.

    ``t_b`` is the elapsed backward time at which the trace stopped.  When
    ``hit_boundary`` is true, (x_b, v_b) is the wall state — x_b on the wall
    with n(x_b).v_b <= 0 — otherwise the trace ran out of horizon (reached
    the initial time) and (x_b, v_b) is simply the final state.
    """

    t_b: float
    x_b: np.ndarray
    v_b: np.ndarray
    hit_boundary: bool
    grazing: bool = False


@dataclass(frozen=True)
class KineticWeightParams:
    """Mollification width and ramp for the kinetic weight."""

    eps: float
    chi: Callable = smooth_ramp

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        c0, c1 = float(self.chi(0.0)), float(self.chi(1.0))
        if abs(c0) > 1e-12 or abs(c1 - 1.0) > 1e-12:
            raise ValueError("ramp must run from 0 at 0 to 1 at 1")
        tau = np.linspace(0.0, 1.0, 257)
        slope = np.diff(self.chi(tau)) / np.diff(tau)
        if slope.min() < -1e-12 or slope.max() > 4.0 + 1e-9:
            raise ValueError("ramp slope must stay within [0, 4]")


class CycleHit(NamedTuple):
    t: float
    x: np.ndarray
    v_sampled: np.ndarray
    v_at_hit: np.ndarray


@dataclass(frozen=True)
class CycleRecord:
    """Backward boundary-hit chain with its accumulated log weight.

    Hit times strictly decrease; every sampled velocity points out of the
    domain (n.v > 0) at its wall point, so the next backward leg re-enters.
    ``terminated`` is "reached_t0" or "max_cycles"; in the former case
    ``foot`` is the traced state at the initial time.
    """

    hits: Tuple[CycleHit, ...]
    log_weight: float
    terminated: str
    grazing_hits: int = 0
    grazing_resamples: int = 0
    foot: Optional[PhasePoint] = None


# ---------------------------------------------------------------------------
# integration


def _rk4_step(x, v, h, accel):
    k1x = v
    k1v = accel(x)
    k2x = v + 0.5 * h * k1v
    k2v = accel(x + 0.5 * h * k1x)
    k3x = v + 0.5 * h * k2v
    k3v = accel(x + 0.5 * h * k2x)
    k4x = v + h * k3v
    k4v = accel(x + h * k3x)
    xn = x + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    vn = v + (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return xn, vn


def _step_ceiling(domain: DomainGeometry, speed: float, step: Optional[float]) -> float:
    cap = SUBSTEP_FRACTION * domain.diameter / (speed + 1.0)
    if step is not None:
        return min(cap, step)
    return min(cap, ACCURACY_FRACTION * domain.diameter)


def integrate_trajectory(
    p: PhasePoint,
    t_target: float,
    field,
    domain: DomainGeometry,
    step: Optional[float] = None,
) -> PhasePoint:
    """RK4 transport of a phase point to ``t_target`` (either direction).

    The substep is capped by 0.1 * diameter / (speed + 1) so a fast particle
    cannot tunnel through the wall unnoticed.  Raises TrajectoryExitError if
    any substep lands outside the closed domain; crossing trajectories belong
    to backward_exit or the exit-aware forward push.
    """
    fld = as_field(field, p.x.size)
    tol = domain.boundary_tol
    if getattr(fld, "is_zero", False):
        # free streaming: RK4 is exact, and in a convex domain a chord with
        # both endpoints inside never leaves, so one jump suffices
        x = p.x + (float(t_target) - p.t) * p.v
        if domain.signed_distance(x) > tol:
            raise TrajectoryExitError(
                "trajectory left the domain; handle the crossing explicitly"
            )
        return PhasePoint(t=float(t_target), x=x, v=p.v.copy())
    accel = fld.acceleration
    x, v = p.x.copy(), p.v.copy()
    remaining = float(t_target) - p.t
    sign = 1.0 if remaining >= 0 else -1.0
    remaining = abs(remaining)
    while remaining > 0.0:
        h = min(remaining, _step_ceiling(domain, float(np.linalg.norm(v)), step))
        x, v = _rk4_step(x, v, sign * h, accel)
        remaining -= h
        if domain.signed_distance(x) > tol:
            raise TrajectoryExitError(
                "trajectory left the domain; handle the crossing explicitly"
            )
    return PhasePoint(t=float(t_target), x=x, v=v)


# ---------------------------------------------------------------------------
# backward exit


def _backward_exit_ray(p, domain, horizon):
    """Free-streaming exit: straight backward ray, analytic crossing."""
    speed = float(np.linalg.norm(p.v))
    if speed == 0.0:
        return BacktraceResult(horizon, p.x.copy(), p.v.copy(), False)
    s_exit, x_hit = domain.ray_exit(p.x, -p.v)
    if s_exit <= horizon:
        n = domain.outward_normal(x_hit)
        grazing = abs(float(n @ p.v)) < GRAZING_TOL
        return BacktraceResult(float(s_exit), x_hit, p.v.copy(), True, grazing)
    return BacktraceResult(horizon, p.x - horizon * p.v, p.v.copy(), False)


def backward_exit(
    p: PhasePoint,
    field,
    domain: DomainGeometry,
    horizon: Optional[float] = None,
    step: Optional[float] = None,
    bisect_tol: float = BISECT_TOL,
    use_analytic_ray: bool = True,
) -> BacktraceResult:
    """Largest backward time s with the trajectory inside the domain.

    By default the search is capped at s = t (the trace stops at the initial
    time, ``hit_boundary`` false); pass ``horizon`` to look further.  With a
    zero field the crossing is solved in closed form; otherwise the backward
    RK4 march brackets the sign change of the signed distance and bisection
    narrows it to ``bisect_tol`` in time.
    """
    if horizon is None:
        horizon = p.t
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    fld = as_field(field, p.x.size)
    tol = domain.boundary_tol

    sd0 = float(domain.signed_distance(p.x))
    if sd0 > tol:
        raise ValueError("phase point starts outside the domain")
    if abs(sd0) <= tol:
        n = domain.outward_normal(domain.project(p.x))
        if float(n @ p.v) <= 0.0:
            raise ValueError(
                "degenerate start: boundary point with incoming or tangent "
                "velocity exits immediately under the backward trace"
            )

    if getattr(fld, "is_zero", False) and use_analytic_ray:
        return _backward_exit_ray(p, domain, horizon)

    accel = fld.acceleration
    s = 0.0
    x, v = p.x.copy(), p.v.copy()
    while s < horizon:
        h = min(horizon - s, _step_ceiling(domain, float(np.linalg.norm(v)), step))
        xn, vn = _rk4_step(x, v, -h, accel)
        if float(domain.signed_distance(xn)) > 0.0:
            lo, hi = 0.0, h
            while hi - lo > bisect_tol:
                mid = 0.5 * (lo + hi)
                xm, _ = _rk4_step(x, v, -mid, accel)
                if float(domain.signed_distance(xm)) > 0.0:
                    hi = mid
                else:
                    lo = mid
            tau = 0.5 * (lo + hi)
            x_b, v_b = _rk4_step(x, v, -tau, accel)
            x_b = domain.project(x_b)
            n = domain.outward_normal(x_b)
            grazing = abs(float(n @ v_b)) < GRAZING_TOL
            return BacktraceResult(s + tau, x_b, v_b, True, grazing)
        x, v = xn, vn
        s += h
    return BacktraceResult(horizon, x, v, False)


# ---------------------------------------------------------------------------
# kinetic weight


def kinetic_weight_alpha(
    p: PhasePoint,
    params: KineticWeightParams,
    field,
    domain: DomainGeometry,
    step: Optional[float] = None,
) -> float:
    """Mollified boundary weight chi((t - t_b + eps)/eps) |n.v_b| + (1 - chi).

    Equals 1 when the backtrace survives past t + eps without touching the
    wall, and |n.v| in the boundary limit on incoming wall states (there the
    backward exit is instantaneous, t_b = 0).
    """
    eps = params.eps
    sd0 = float(domain.signed_distance(p.x))
    if abs(sd0) <= domain.boundary_tol:
        n = domain.outward_normal(domain.project(p.x))
        nv = float(n @ p.v)
        if nv <= 0.0:
            # incoming (or tangent) wall state: t_b = 0, ramp saturated
            c = float(params.chi((p.t + eps) / eps))
            return c * abs(nv) + (1.0 - c)

    res = backward_exit(p, field, domain, horizon=p.t + 3.0 * eps, step=step)
    if not res.hit_boundary:
        return 1.0
    c = float(params.chi((p.t - res.t_b + eps) / eps))
    if c == 0.0:
        return 1.0
    n = domain.outward_normal(res.x_b)
    return c * abs(float(n @ res.v_b)) + (1.0 - c)


def alpha_invariance_defect(
    p: PhasePoint,
    s: float,
    params: KineticWeightParams,
    field,
    domain: DomainGeometry,
    step: Optional[float] = None,
) -> float:
    """|alpha(t,x,v) - alpha(s, X(s), V(s))| along the same trajectory.

    Zero in exact arithmetic; numerically it measures the integrator error,
    shrinking as O(step^4).
    """
    if not (s <= p.t):
        raise ValueError("s must not exceed the phase point's time")
    q = integrate_trajectory(p, s, field, domain, step=step)
    a_t = kinetic_weight_alpha(p, params, field, domain, step=step)
    a_s = kinetic_weight_alpha(q, params, field, domain, step=step)
    return abs(a_t - a_s)


# ---------------------------------------------------------------------------
# backward cycles


def theta_hat(x, wall, t_max: float):
    """Boundary weight exponent rate: 1/(4 T_M) - 1/(2 T_w(x))."""
    return 0.25 / t_max - 0.5 / wall(x)


def backward_cycles(
    p: PhasePoint,
    field,
    scatter: ScatterParams,
    rng: np.random.Generator,
    k_max: int = 64,
) -> CycleRecord:
    """Chain of backward wall hits with freshly sampled pre-collision states.

    Each backward leg ends at a wall point x_k with arrival velocity V(t_k)
    (pointing inward, since forward transport left the wall there).  The
    pre-collision velocity v_k is drawn from the reversed kernel — a draw of
    the outgoing law at -V(t_k), negated — and the weighted-measure boundary
    factor contributes theta_hat(x_k) (|V(t_k)|^2 - |v_k|^2) to the log
    weight.  The chain stops on reaching the initial time, or is flagged
    "max_cycles" after k_max hits.

    Near-grazing draws (|n.v| below round-off scale) are rejected and
    redrawn; near-grazing arrivals are only counted.
    """
    domain = scatter.domain
    t_m = scatter.wall.t_max
    cur = p
    hits: List[CycleHit] = []
    log_weight = 0.0
    grazing_hits = 0
    grazing_resamples = 0
    terminated = "max_cycles"

    foot = None
    for _ in range(k_max):
        res = backward_exit(cur, field, domain)
        if not res.hit_boundary:
            terminated = "reached_t0"
            foot = PhasePoint(t=cur.t - res.t_b, x=res.x_b, v=res.v_b)
            break
        t_k = cur.t - res.t_b
        x_k = res.x_b
        v_hit = res.v_b
        if res.grazing:
            grazing_hits += 1

        n = domain.outward_normal(x_k)
        u_in = -v_hit
        nu_in = float(n @ u_in)
        if nu_in < GRAZING_TOL:
            # round-off grazing arrival: lift the normal component to the
            # grazing floor so the kernel draw stays well posed
            u_in = u_in + (GRAZING_TOL - nu_in) * n
        for attempt in range(MAX_RESAMPLES):
            v_k = -sample_outgoing(u_in, x_k, scatter, rng).v_out
            if abs(float(n @ v_k)) >= GRAZING_TOL:
                break
            grazing_resamples += 1
        else:
            raise RuntimeError("kernel kept producing grazing draws")

        log_weight += theta_hat(x_k, scatter.wall, t_m) * (
            float(v_hit @ v_hit) - float(v_k @ v_k)
        )
        hits.append(CycleHit(t=t_k, x=x_k, v_sampled=v_k, v_at_hit=v_hit))
        if t_k <= 0.0:
            terminated = "reached_t0"
            foot = PhasePoint(t=0.0, x=x_k, v=v_k)
            break
        cur = PhasePoint(t=t_k, x=x_k, v=v_k)

    return CycleRecord(
        hits=tuple(hits),
        log_weight=log_weight,
        terminated=terminated,
        grazing_hits=grazing_hits,
        grazing_resamples=grazing_resamples,
        foot=foot,
    )
