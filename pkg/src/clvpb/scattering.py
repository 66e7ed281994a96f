"""Cercignani-Lampis wall scattering: evaluation, sampling, identities.

The kernel R(u -> v; x) gives the probability density (per unit velocity
volume) that a molecule striking the wall at x with velocity u (n.u > 0)
re-enters with velocity v (n.v < 0):

    R = |n.v| / (2 pi T^2 r_perp rho)
        * exp(-[v_perp^2 + (1-r_perp) u_perp^2] / (2 T r_perp)
              - |v_par - (1-r_par) u_par|^2 / (2 T rho))
        * I0(sqrt(1-r_perp) |v_perp u_perp| / (T r_perp)),

with rho = r_par (2 - r_par) and T = T_w(x).  The density factorizes
exactly into a Rice flux law for |v_perp| (scale T r_perp, noncentrality
sqrt(1-r_perp)|u_perp|) times a Gaussian for v_par (mean (1-r_par) u_par,
variance T rho per coordinate), which is what both the exact sampler and
the normalization identity exploit.  In 2D the tangential factor is a 1D
Gaussian; the normal factor is unchanged.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .bessel import bessel_i0_scaled
from .quadrature import QuadratureSpec, gauss_hermite, integrate_halfline

LIMIT_THRESHOLD = 1e-4  # classification aid for near-degenerate parameters


@dataclass(frozen=True)
class ScatterParams:
    """Accommodation coefficients plus the wall-temperature field."""
    r_perp: float
    r_par: float
    wall: object  # WallTemperature

    def __post_init__(self):
        if not 0.0 < self.r_perp <= 1.0:
            raise ValueError("r_perp must lie in (0, 1]")
        if not 0.0 < self.r_par < 2.0:
            raise ValueError("r_par must lie in (0, 2)")

    @property
    def domain(self):
        return self.wall.domain


class VelocityDecomposition(NamedTuple):
    v_perp: float        # v . n(x)
    v_par: np.ndarray    # tangential coordinates in the frame at x


class ScatterSample(NamedTuple):
    v_out: np.ndarray
    decomposition: VelocityDecomposition


def decompose(v, x_b, domain):
    """Split v into (v.n, tangential coordinates) at the boundary point."""
    n = domain.outward_normal(x_b)
    frame = domain.tangent_frame(x_b)
    v = np.asarray(v, dtype=float)
    return VelocityDecomposition(float(v @ n), frame @ v)


def reconstruct(dec, x_b, domain):
    n = domain.outward_normal(x_b)
    frame = domain.tangent_frame(x_b)
    return dec.v_perp * n + dec.v_par @ frame


def _log_kernel(u, v, n, T, params):
    """log R(u -> v) for ambient-frame velocities; v may be a batch."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    d = u.shape[-1]
    rp, rl = params.r_perp, params.r_par
    rho = rl * (2.0 - rl)
    u_perp = np.asarray(u @ n)
    v_perp = np.asarray(v @ n)
    u_par = u - u_perp[..., None] * n
    v_par = v - v_perp[..., None] * n
    dpar = v_par - (1.0 - rl) * u_par
    dpar2 = np.sum(dpar * dpar, axis=-1)
    y = math.sqrt(1.0 - rp) * np.abs(v_perp * u_perp) / (T * rp)
    log_pref = np.log(np.abs(v_perp)) - math.log(T * rp) \
        - 0.5 * (d - 1) * math.log(2.0 * math.pi * T * rho)
    expo = -(v_perp ** 2 + (1.0 - rp) * u_perp ** 2) / (2.0 * T * rp) \
        - dpar2 / (2.0 * T * rho)
    # e^{-...} I0(y) handled as e^{-... + y} [e^{-y} I0(y)] to dodge overflow
    return log_pref + expo + y + np.log(bessel_i0_scaled(y))


def eval_R(u, v, x_b, params):
    """Kernel density R(u -> v; x_b); v may carry leading batch axes."""
    domain = params.domain
    n = domain.outward_normal(x_b)
    T = float(params.wall(np.asarray(x_b, dtype=float)))
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u @ n <= 0:
        raise ValueError("u must point out of the domain (n.u > 0)")
    if np.any(v @ n >= 0):
        raise ValueError("v must point into the domain (n.v < 0)")
    out = np.exp(_log_kernel(u, v, n, T, params))
    return float(out) if out.ndim == 0 else out


def reciprocity_defect(u, v, x_b, params):
    """Relative defect of R(u->v) = R(-v->-u) e^{(|u|^2-|v|^2)/2T} |n.v|/|n.u|."""
    domain = params.domain
    n = domain.outward_normal(x_b)
    T = float(params.wall(np.asarray(x_b, dtype=float)))
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u @ n <= 0 or v @ n >= 0:
        raise ValueError("need n.u > 0 and n.v < 0")
    log_lhs = _log_kernel(u, v, n, T, params)
    log_rhs = _log_kernel(-v, -u, n, T, params) \
        + (u @ u - v @ v) / (2.0 * T) \
        + np.log(np.abs(v @ n)) - np.log(np.abs(u @ n))
    return float(np.abs(np.expm1(log_rhs - log_lhs)))


def _tangential_rule(params, u_par_coords, T, nodes):
    """Gauss-Hermite nodes/weights unfolded to plain quadrature of dv_par."""
    rho = params.r_par * (2.0 - params.r_par)
    scale = math.sqrt(2.0 * T * rho)
    shift = (1.0 - params.r_par) * u_par_coords
    t, wt = gauss_hermite(nodes)
    # sum w e^{t^2} g(shift + scale t) * scale integrates g over the line
    plain_w = wt * np.exp(t * t) * scale
    d_par = len(u_par_coords)
    if d_par == 1:
        pts = shift[0] + scale * t
        return pts[:, None], plain_w
    p1 = shift[0] + scale * t
    p2 = shift[1] + scale * t
    pts = np.stack(np.meshgrid(p1, p2, indexing="ij"), axis=-1).reshape(-1, 2)
    w2 = np.outer(plain_w, plain_w).reshape(-1)
    return pts, w2


def normalization_defect(u, x_b, params, quad=QuadratureSpec(), gh_nodes=48):
    """|int_{n.v<0} R(u -> v) dv - 1| by direct quadrature of eval_R.

    Tangential directions use Gauss-Hermite unfolded to a plain rule (the
    integrand keeps its own Gaussian; nothing is cancelled analytically),
    and the normal direction uses the half-line rule with refinement.
    Raises QuadratureConvergenceError when refinements stall.
    """
    domain = params.domain
    n = domain.outward_normal(x_b)
    frame = domain.tangent_frame(x_b)
    T = float(params.wall(np.asarray(x_b, dtype=float)))
    u = np.asarray(u, dtype=float)
    if u @ n <= 0:
        raise ValueError("u must point out of the domain")
    u_par_coords = frame @ (u - (u @ n) * n)
    pts_par, w_par = _tangential_rule(params, u_par_coords, T, gh_nodes)
    # ambient velocities: v = -s n + sum_k (pts_par)_k frame_k
    v_tang = pts_par @ frame  # (m, d)

    def g(s):
        v = -s[:, None, None] * n + v_tang[None, :, :]
        vals = np.exp(_log_kernel(u, v, n, T, params))
        return vals @ w_par

    val, _ = integrate_halfline(g, quad)
    return abs(val - 1.0)


def detailed_balance_defect(v, x_b, params, quad=QuadratureSpec(), gh_nodes=48):
    """Defect of the wall-Maxwellian fixed point at an incoming velocity v.

    Reciprocity plus normalization give, exactly,

        int_{n.u>0} R(u -> v) e^{-|u|^2/(2T)} (n.u) du
            = e^{-|v|^2/(2T)} |n.v|,

    so the half-space Maxwellian flux at the wall temperature is invariant
    under the scattering.  Returns the relative quadrature defect.
    """
    domain = params.domain
    n = domain.outward_normal(x_b)
    frame = domain.tangent_frame(x_b)
    T = float(params.wall(np.asarray(x_b, dtype=float)))
    v = np.asarray(v, dtype=float)
    if v @ n >= 0:
        raise ValueError("v must point into the domain")
    # integrate over u in the outgoing half-space; the tangential rule is
    # centered on the kernel's preferred tangential mean for u, which by
    # reciprocity sits at v_par/(1 - r_par) — but a plain wide Gaussian
    # window centered at v_par is adequate and avoids the 1/(1-r_par) pole
    v_par_coords = frame @ (v - (v @ n) * n)
    rho = params.r_par * (2.0 - params.r_par)
    scale = math.sqrt(2.0 * T * (1.0 + rho))
    t, wt = gauss_hermite(gh_nodes)
    plain_w = wt * np.exp(t * t) * scale
    if domain.dimension == 2:
        pts = (v_par_coords[0] + scale * t)[:, None]
        w_par = plain_w
    else:
        p1 = v_par_coords[0] + scale * t
        p2 = v_par_coords[1] + scale * t
        pts = np.stack(np.meshgrid(p1, p2, indexing="ij"), axis=-1).reshape(-1, 2)
        w_par = np.outer(plain_w, plain_w).reshape(-1)
    u_tang = pts @ frame

    def g(s):
        u = s[:, None, None] * n + u_tang[None, :, :]
        uu = np.sum(u * u, axis=-1)
        vals = np.exp(_log_kernel(u, v, n, T, params)
                      - uu / (2.0 * T)) * s[:, None]
        return vals @ w_par

    val, _ = integrate_halfline(g, quad)
    rhs = math.exp(-(v @ v) / (2.0 * T)) * abs(v @ n)
    return abs(val - rhs) / rhs


def sample_outgoing(u, x_b, params, rng, size=None):
    """Exact draw(s) from R(u -> .; x_b).

    v_par is Gaussian with mean (1-r_par) u_par and variance T rho per
    coordinate; |v_perp| is Rice-distributed, realized as the norm of a 2D
    Gaussian with mean (sqrt(1-r_perp)|u_perp|, 0) and variance T r_perp,
    then oriented into the domain.  With size=None returns a single
    ScatterSample; otherwise arrays of shape (size, d).
    """
    domain = params.domain
    n = domain.outward_normal(x_b)
    frame = domain.tangent_frame(x_b)
    T = float(params.wall(np.asarray(x_b, dtype=float)))
    u = np.asarray(u, dtype=float)
    u_perp = u @ n
    if u_perp <= 0:
        raise ValueError("u must point out of the domain")
    u_par_coords = frame @ (u - u_perp * n)
    rho = params.r_par * (2.0 - params.r_par)
    m = 1 if size is None else int(size)
    d_par = domain.dimension - 1

    nu = math.sqrt(1.0 - params.r_perp) * u_perp
    sig_perp = math.sqrt(T * params.r_perp)
    g = rng.standard_normal((m, 2))
    v_perp_mag = np.hypot(nu + sig_perp * g[:, 0], sig_perp * g[:, 1])

    v_par = (1.0 - params.r_par) * u_par_coords \
        + math.sqrt(T * rho) * rng.standard_normal((m, d_par))
    v = -v_perp_mag[:, None] * n + v_par @ frame
    if size is None:
        return ScatterSample(v[0], VelocityDecomposition(-float(v_perp_mag[0]),
                                                         v_par[0]))
    return ScatterSample(v, VelocityDecomposition(-v_perp_mag, v_par))


def sample_outgoing_batch(u, x_b, params, rng):
    """One outgoing draw per impact, for k impacts at distinct wall points.

    Same law as sample_outgoing, but frame-free: the tangential Gaussian is
    realized by projecting an ambient standard normal onto the tangent plane,
    so no per-point basis is built.  Returns a (k, d) velocity array.
    """
    domain = params.domain
    u = np.atleast_2d(np.asarray(u, dtype=float))
    x_b = np.atleast_2d(np.asarray(x_b, dtype=float))
    n = domain.outward_normal(x_b)
    T = np.atleast_1d(params.wall(x_b)).astype(float)
    u_perp = np.sum(u * n, axis=-1)
    if np.any(u_perp <= 0):
        raise ValueError("u must point out of the domain")
    u_tan = u - u_perp[:, None] * n
    rho = params.r_par * (2.0 - params.r_par)

    nu = math.sqrt(1.0 - params.r_perp) * u_perp
    sig_perp = np.sqrt(T * params.r_perp)
    g = rng.standard_normal((len(u), 2))
    v_perp_mag = np.hypot(nu + sig_perp * g[:, 0], sig_perp * g[:, 1])

    g_tan = rng.standard_normal(u.shape)
    g_tan -= np.sum(g_tan * n, axis=-1, keepdims=True) * n
    return -v_perp_mag[:, None] * n + (1.0 - params.r_par) * u_tan \
        + np.sqrt(T * rho)[:, None] * g_tan


def limiting_case(params, threshold=LIMIT_THRESHOLD):
    """Classify the accommodation pair for documentation purposes."""
    rp, rl = params.r_perp, params.r_par
    if rp == 1.0 and rl == 1.0:
        return "diffuse"
    if rp <= threshold and rl <= threshold:
        return "near_specular"
    if rp <= threshold and 2.0 - rl <= threshold:
        return "near_bounce_back"
    return "general"


def diffuse_kernel(v, n, T):
    """The (1,1) reduction: (2/pi) (2T)^{-2} e^{-|v|^2/(2T)} |n.v| (3D)."""
    v = np.asarray(v, dtype=float)
    vv = np.sum(v * v, axis=-1)
    return (2.0 / math.pi) * (2.0 * T) ** -2 * np.exp(-vv / (2.0 * T)) \
        * np.abs(v @ n)
