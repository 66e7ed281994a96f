"""Hard-potential binary collisions.

Kernel B(v-u, omega) = |v-u|^kappa * q0(c_hat . omega) with q0(c) = C|c|,
the elastic post-collision map, the loss frequency nu, a majorant DSMC step
with breach detection, and a Monte Carlo evaluator for the pointwise gain
term of the weighted collision operator.

Velocities here are three-dimensional (the angular variable lives on S^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np

from .geometry import DomainGeometry, clipped_cell_volume

ANGULAR_INTEGRAL = 2.0 * math.pi  # int_{S^2} |c_hat . omega| domega


class MajorantBreachError(RuntimeError):
    """The per-cell majorant kept being exceeded after several retries."""


@dataclass(frozen=True)
class CollisionParams:
    """Hard-potential exponent and angular-law constant.

    kappa in (0, 1]; q0(c) = q0_c * |c| (the sharpest admissible angular
    factor).  ``b_max_safety`` pads the per-cell majorant above the largest
    observed relative speed.
    """

    kappa: float = 1.0
    q0_c: float = 1.0
    b_max_safety: float = 1.2

    def __post_init__(self):
        if not 0.0 < self.kappa <= 1.0:
            raise ValueError("kappa must lie in (0, 1]")
        if self.q0_c <= 0.0:
            raise ValueError("q0_c must be positive")
        if self.b_max_safety < 1.0:
            raise ValueError("b_max_safety must be at least 1")


@dataclass(frozen=True)
class Maxwellian:
    """Analytic velocity distribution prefactor * exp(-|u|^2 / (2 T))."""

    prefactor: float = 1.0
    temperature: float = 1.0

    def __post_init__(self):
        if self.prefactor < 0 or self.temperature <= 0:
            raise ValueError("need prefactor >= 0 and temperature > 0")


class CollisionPair(NamedTuple):
    u: np.ndarray
    v: np.ndarray
    omega: np.ndarray
    u_prime: np.ndarray
    v_prime: np.ndarray


class FrequencyEstimate(NamedTuple):
    value: float
    error: float  # standard error (ensemble) or quadrature residual

    @property
    def relative_error(self) -> float:
        return self.error / abs(self.value) if self.value != 0.0 else math.inf


class GainEstimate(NamedTuple):
    value: float
    stderr: float


def _check_unit(omega):
    omega = np.asarray(omega, dtype=float)
    nrm = np.linalg.norm(omega, axis=-1)
    if np.any(np.abs(nrm - 1.0) > 1e-12):
        raise ValueError("omega must be a unit vector")
    return omega


def post_collision(u, v, omega):
    """Elastic impulse exchange along omega.

    u' = u - ((u-v).omega) omega,  v' = v + ((u-v).omega) omega.
    Momentum is conserved to round-off (the shared impulse is computed once)
    and energy follows from |omega| = 1.  Applying the map twice with the
    same omega returns the original pair.
    """
    omega = _check_unit(omega)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    p = np.sum((u - v) * omega, axis=-1)
    impulse = p[..., None] * omega if u.ndim > 1 else p * omega
    return u - impulse, v + impulse


def collide(u, v, omega) -> CollisionPair:
    up, vp = post_collision(u, v, omega)
    return CollisionPair(np.asarray(u, float), np.asarray(v, float),
                         np.asarray(omega, float), up, vp)


def kernel_B(u, v, omega, params: CollisionParams):
    """|v-u|^kappa  q0(c_hat . omega), zero at zero relative speed."""
    omega = _check_unit(omega)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    rel = v - u
    c = np.linalg.norm(rel, axis=-1)
    scalar = c.ndim == 0
    c = np.atleast_1d(c)
    rel = np.atleast_2d(rel)
    om = np.broadcast_to(np.atleast_2d(omega), rel.shape)
    out = np.zeros(c.shape)
    nz = c > 0.0
    cos = np.abs(np.sum(rel[nz] * om[nz], axis=-1)) / c[nz]
    out[nz] = c[nz] ** params.kappa * params.q0_c * cos
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# loss frequency


def _nu_maxwellian(v, dist: Maxwellian, params: CollisionParams,
                   nodes: int = 128) -> float:
    """nu(v) = 2 pi C int |v-u|^kappa F(u) du by stable radial quadrature.

    In spherical shells around v the angular integral closes to sinh, and
    combining it with the Gaussian gives two shifted bumps:

      nu = 2 pi C n (2 pi T / a) int_0^inf r^{kappa+1}
             [e^{-(r-a)^2/2T} - e^{-(r+a)^2/2T}] dr,   a = |v|,

    with the a -> 0 limit  8 pi^2 C n int r^{kappa+2} e^{-r^2/2T} dr.
    """
    from numpy.polynomial.legendre import leggauss
    a = float(np.linalg.norm(v))
    T = dist.temperature
    n0 = dist.prefactor
    s = math.sqrt(T)
    t, w = leggauss(nodes)

    def integrate(fn, lo, hi):
        if hi <= lo:
            return 0.0
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        return half * float(np.dot(w, fn(mid + half * t)))

    if a < 1e-10:
        fn = lambda r: r ** (params.kappa + 2.0) * np.exp(-r * r / (2.0 * T))
        cuts = [0.0, 2.0 * s, 16.0 * s]
        val = sum(integrate(fn, lo, hi) for lo, hi in zip(cuts, cuts[1:]))
        return 8.0 * math.pi**2 * params.q0_c * n0 * val

    fn = lambda r: r ** (params.kappa + 1.0) * (
        np.exp(-((r - a) ** 2) / (2.0 * T)) - np.exp(-((r + a) ** 2) / (2.0 * T))
    )
    cuts = sorted({0.0, max(0.0, a - 12.0 * s), max(0.0, 2.0 * s), a, a + 12.0 * s})
    val = sum(integrate(fn, lo, hi) for lo, hi in zip(cuts, cuts[1:]))
    return ANGULAR_INTEGRAL * params.q0_c * n0 * (2.0 * math.pi * T / a) * val


def loss_frequency(v, dist, params: CollisionParams,
                   method: str = "auto") -> FrequencyEstimate:
    """Collision frequency nu(v) = int int B(v-u, omega) F(u) domega du.

    ``dist`` is either a Maxwellian (resolved by radial quadrature, the
    reported error being the difference between two node counts) or a tuple
    (velocities, weights) of ensemble samples, where weights carry the
    velocity-space normalisation of F (sum of w phi(u_j) estimates
    int phi F du); then the value is the exact weighted sum and the error
    its sampling standard error.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (3,):
        raise ValueError("loss_frequency expects a single 3D velocity")

    if isinstance(dist, Maxwellian):
        if method not in ("auto", "quadrature"):
            raise ValueError("analytic distributions use method='quadrature'")
        coarse = _nu_maxwellian(v, dist, params, nodes=96)
        fine = _nu_maxwellian(v, dist, params, nodes=160)
        return FrequencyEstimate(fine, abs(fine - coarse))

    samples, weights = dist
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    weights = np.broadcast_to(np.asarray(weights, dtype=float),
                              samples.shape[:1])
    if samples.shape[0] == 0:
        raise ValueError("empty ensemble")
    if method not in ("auto", "monte_carlo"):
        raise ValueError("ensembles use method='monte_carlo'")
    c = np.linalg.norm(v - samples, axis=1)
    terms = ANGULAR_INTEGRAL * params.q0_c * weights * c ** params.kappa
    value = float(terms.sum())
    n = samples.shape[0]
    stderr = float(np.std(terms * n, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return FrequencyEstimate(value, stderr)


# ---------------------------------------------------------------------------
# DSMC


class DsmcStats(NamedTuple):
    collisions: int
    candidates: int
    retries: int
    b_max: float


def _max_pair_speed(vel: np.ndarray) -> float:
    """Largest pairwise relative speed (exact; cells are small)."""
    diff = vel[:, None, :] - vel[None, :, :]
    return float(np.sqrt((diff * diff).sum(axis=-1)).max())


def _uniform_sphere(rng, size):
    g = rng.standard_normal((size, 3))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def dsmc_step(velocities: np.ndarray, dt: float, cell_volume: float,
              params: CollisionParams, rng: np.random.Generator,
              return_stats: bool = False):
    """Majorant (no-time-counter) DSMC step for one spatial cell, in place.

    The majorant is the angle-integrated kernel bound
    B_max = 4 pi C (safety * max observed relative speed)^kappa; candidates
    number ceil(N(N-1) B_max dt / (2 V_cell)), each drawing a uniform pair
    and a uniform omega on S^2 and accepting with 4 pi B / B_max.  If a
    mid-step pair exceeds the majorant (collisions can re-point energy), the
    step restores the snapshot, doubles B_max and retries rather than bias
    the rates.
    """
    n = velocities.shape[0]
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if cell_volume <= 0:
        raise ValueError("cell volume must be positive")
    if n < 2 or dt == 0.0:
        stats = DsmcStats(0, 0, 0, 0.0)
        return stats if return_stats else 0

    c_ref = _max_pair_speed(velocities)
    if c_ref == 0.0:
        stats = DsmcStats(0, 0, 0, 0.0)
        return stats if return_stats else 0
    c_maj = params.b_max_safety * c_ref

    snapshot = velocities.copy()
    state = rng.bit_generator.state
    for retry in range(8):
        b_max = 4.0 * math.pi * params.q0_c * c_maj ** params.kappa
        n_cand = math.ceil(n * (n - 1) * b_max * dt / (2.0 * cell_volume))
        pairs_i = rng.integers(0, n, size=n_cand)
        shift = rng.integers(1, n, size=n_cand)
        pairs_j = (pairs_i + shift) % n
        omegas = _uniform_sphere(rng, n_cand)
        accept_u = rng.uniform(size=n_cand)

        count = 0
        breach = False
        for i, j, omega, uacc in zip(pairs_i, pairs_j, omegas, accept_u):
            rel = velocities[i] - velocities[j]
            c = math.sqrt(float(rel @ rel))
            if c == 0.0:
                continue
            ratio = (c / c_maj) ** params.kappa
            if ratio > 1.0:
                breach = True
                break
            cos = abs(float(rel @ omega)) / c
            if uacc < ratio * cos:
                impulse = float(rel @ omega) * omega
                velocities[i] -= impulse
                velocities[j] += impulse
                count += 1
        if not breach:
            stats = DsmcStats(count, n_cand, retry, b_max)
            return stats if return_stats else count
        velocities[:] = snapshot
        rng.bit_generator.state = state
        c_maj *= 2.0
    raise MajorantBreachError("majorant exceeded on every retry")


class CollisionGrid:
    """Uniform Cartesian cells over the bounding box, clipped to the domain.

    Partial cells carry their exact clipped volume so pair rates stay
    unbiased near the wall.
    """

    def __init__(self, domain: DomainGeometry, cells_per_axis: int = 8):
        if cells_per_axis < 1:
            raise ValueError("cells_per_axis must be positive")
        if domain.dimension != 3:
            raise ValueError("collision cells require a 3D domain")
        self.domain = domain
        self.m = int(cells_per_axis)
        ext = np.asarray(domain.semi_axes, dtype=float)
        self.lo = np.asarray(domain.center, dtype=float) - ext
        self.h = 2.0 * ext / self.m
        self._volumes: Dict[Tuple[int, int, int], float] = {}

    def cell_index(self, positions: np.ndarray) -> np.ndarray:
        idx = np.floor((np.atleast_2d(positions) - self.lo) / self.h).astype(int)
        return np.clip(idx, 0, self.m - 1)

    def cell_volume(self, idx: Tuple[int, int, int]) -> float:
        key = tuple(int(k) for k in idx)
        if key not in self._volumes:
            lo = self.lo + self.h * np.array(key)
            self._volumes[key] = clipped_cell_volume(self.domain, lo, lo + self.h)
        return self._volumes[key]


def dsmc_apply(positions: np.ndarray, velocities: np.ndarray, dt: float,
               grid: CollisionGrid, params: CollisionParams,
               rng: np.random.Generator) -> int:
    """One DSMC sweep over all cells (sequential, fixed cell order).

    Each occupied cell gets its own child random stream, so the result is
    reproducible under a fixed seed regardless of how many cells are hit.
    """
    idx = grid.cell_index(positions)
    keys = idx[:, 0] * grid.m * grid.m + idx[:, 1] * grid.m + idx[:, 2]
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    boundaries = np.flatnonzero(np.diff(sorted_keys)) + 1
    groups = np.split(order, boundaries)
    total = 0
    streams = rng.spawn(len(groups))
    for members, stream in zip(groups, streams):
        if members.size < 2:
            continue
        key = int(sorted_keys[members[0]])
        cell = (key // (grid.m * grid.m), (key // grid.m) % grid.m, key % grid.m)
        vol = grid.cell_volume(cell)
        if vol <= 0.0:
            continue
        local = velocities[members]
        total += dsmc_step(local, dt, vol, params, stream)
        velocities[members] = local
    return total


# ---------------------------------------------------------------------------
# pointwise gain


def _kde_eval(points: np.ndarray, samples: np.ndarray, weights: np.ndarray,
              bandwidth: float) -> np.ndarray:
    """Weighted Gaussian KDE sum_j w_j K_h(x - u_j) at the query points."""
    d = samples.shape[1]
    norm = (2.0 * math.pi * bandwidth**2) ** (d / 2.0)
    out = np.empty(points.shape[0])
    chunk = max(1, int(4e6 // max(samples.shape[0], 1)))
    for start in range(0, points.shape[0], chunk):
        block = points[start:start + chunk]
        d2 = ((block[:, None, :] - samples[None, :, :]) ** 2).sum(axis=-1)
        out[start:start + chunk] = (
            np.exp(-d2 / (2.0 * bandwidth**2)) @ weights
        ) / norm
    return out


def silverman_bandwidth(samples: np.ndarray) -> float:
    n, d = samples.shape
    sigma = float(np.std(samples, axis=0).mean())
    return sigma * (4.0 / (d + 2.0)) ** (1.0 / (d + 4.0)) * n ** (-1.0 / (d + 4.0))


def gamma_gain_pointwise(v, ensemble, params: CollisionParams, n_mc: int,
                         rng: np.random.Generator,
                         mu_temperature: float = 1.0,
                         bandwidth: Optional[float] = None,
                         defensive_fraction: float = 0.25,
                         jackknife_groups: int = 8) -> GainEstimate:
    """Monte Carlo gain term of the weighted operator at velocity v.

    ``ensemble`` is (samples, weights) representing G = sqrt(mu) f in
    velocity space (sum of w phi(u_j) estimates int phi G du).  The estimator
    draws u from a defensive mixture of the kernel density G_h / |G| and a
    wide Gaussian (post-collision points migrate into regions the ensemble
    itself undersamples, and a pure-KDE proposal leaves heavy-tailed
    importance ratios there), draws omega uniformly on the sphere, forms the
    post-collision pair (v', u') of (v, u), and averages

        4 pi B(v - u, omega) G_h(v') G_h(u') / q(u) / sqrt(mu(v)).

    The proposal density q is known exactly, so the reported standard error
    combines the draw-to-draw spread with a delete-group jackknife over the
    kernel-density samples feeding the numerator fields.
    """
    v = np.asarray(v, dtype=float)
    samples, weights = ensemble
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    weights = np.broadcast_to(
        np.asarray(weights, dtype=float), samples.shape[:1]
    ).astype(float)
    total = float(weights.sum())
    if samples.shape[0] == 0 or total == 0.0:
        return GainEstimate(0.0, 0.0)
    if n_mc < 2:
        raise ValueError("n_mc must be at least 2")
    if not 0.0 <= defensive_fraction < 1.0:
        raise ValueError("defensive_fraction must lie in [0, 1)")
    h = silverman_bandwidth(samples) if bandwidth is None else float(bandwidth)

    mean_u = (weights @ samples) / total
    spread2 = float(weights @ ((samples - mean_u) ** 2).sum(axis=1)) \
        / (3.0 * total) + h * h
    wide_var = 3.0 * spread2

    beta = defensive_fraction
    from_wide = rng.uniform(size=n_mc) < beta
    j = rng.choice(samples.shape[0], size=n_mc, p=weights / total)
    u = samples[j] + h * rng.standard_normal((n_mc, 3))
    n_wide = int(from_wide.sum())
    if n_wide:
        u[from_wide] = mean_u + math.sqrt(wide_var) * \
            rng.standard_normal((n_wide, 3))
    omega = _uniform_sphere(rng, n_mc)

    rel = v[None, :] - u
    c = np.linalg.norm(rel, axis=1)
    dot = (rel * omega).sum(axis=1)
    b_vals = np.where(c > 0, c ** params.kappa * params.q0_c * np.abs(dot)
                      / np.where(c > 0, c, 1.0), 0.0)
    v_post = v[None, :] - dot[:, None] * omega
    u_post = u + dot[:, None] * omega

    d2 = ((u - mean_u) ** 2).sum(axis=1)
    wide_dens = np.exp(-d2 / (2.0 * wide_var)) \
        / (2.0 * math.pi * wide_var) ** 1.5
    kde_dens = _kde_eval(u, samples, weights, h) / total
    q = np.maximum(beta * wide_dens + (1.0 - beta) * kde_dens, 1e-300)
    sqrt_mu = math.exp(-float(v @ v) / (4.0 * mu_temperature))
    base = 4.0 * math.pi * b_vals / q / sqrt_mu

    # numerator fields chunk by chunk, so delete-one-group versions are free
    n_groups = max(1, min(jackknife_groups, samples.shape[0]))
    bounds = np.linspace(0, samples.shape[0], n_groups + 1).astype(int)
    gv = np.zeros((n_groups, n_mc))
    gu = np.zeros((n_groups, n_mc))
    wsum = np.zeros(n_groups)
    for g, (lo, hi) in enumerate(zip(bounds, bounds[1:])):
        gv[g] = _kde_eval(v_post, samples[lo:hi], weights[lo:hi], h)
        gu[g] = _kde_eval(u_post, samples[lo:hi], weights[lo:hi], h)
        wsum[g] = weights[lo:hi].sum()
    full = base * gv.sum(axis=0) * gu.sum(axis=0)
    value = float(full.mean())
    se_draw = float(full.std(ddof=1) / math.sqrt(n_mc))
    se_kde = 0.0
    if n_groups > 1:
        thetas = np.empty(n_groups)
        for g in range(n_groups):
            scale = total / max(total - wsum[g], 1e-300)
            gv_d = (gv.sum(axis=0) - gv[g]) * scale
            gu_d = (gu.sum(axis=0) - gu[g]) * scale
            thetas[g] = float((base * gv_d * gu_d).mean())
        se_kde = math.sqrt((n_groups - 1) / n_groups
                           * float(((thetas - thetas.mean()) ** 2).sum()))
    return GainEstimate(value, math.hypot(se_draw, se_kde))
