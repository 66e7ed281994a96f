"""Closed-form Gaussian and Gaussian-Bessel integrals with quadrature twins.

Every identity here has two independent routes: an exact closed form and a
numerical quadrature of the raw integrand.  The pair acts as an oracle for
the probabilistic machinery (kernel normalization, sampling laws, boundary
weights), so the two routes are deliberately kept separate — do not
"simplify" the quadrature side using the closed form.

Conventions: c := b - a - eps > 0 throughout, and the common closed form is

    b/c * exp((a+eps) * b / c * |w|^2)

which is the value of both the plane integral

    (b/pi) * int_{R^2} e^{(a+eps)|v|^2} e^{-b|v-w|^2} dv

and the half-line Bessel integral

    2b * int_0^inf v e^{(a+eps)v^2} e^{-b v^2} e^{-b w^2} I0(2 b v w) dv.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .bessel import bessel_i0_scaled
from .quadrature import (GAUSS_HERMITE_MAX_NODES, QuadratureSpec,
                         QuadratureConvergenceError, gauss_hermite,
                         gauss_legendre, integrate_finite, integrate_halfline)


@dataclass(frozen=True)
class ABEW:
    """Parameters (a, b, eps, w) of the Gaussian integral lemmas.

    w is a scalar (half-line lemmas, w >= 0) or a 2-vector (plane lemma).
    Validity requires a + eps < b with a, eps >= 0 and b > 0.
    """
    a: float
    b: float
    eps: float = 0.0
    w: object = 0.0

    def __post_init__(self):
        if self.b <= 0:
            raise ValueError("b must be positive")
        if self.a < 0 or self.eps < 0:
            raise ValueError("a and eps must be nonnegative")
        if self.a + self.eps >= self.b:
            raise ValueError(
                f"a + eps = {self.a + self.eps} must be < b = {self.b}")

    @property
    def c(self):
        return self.b - self.a - self.eps

    def w_plane(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim == 0:
            w = np.array([float(w), 0.0])
        if w.shape != (2,):
            raise ValueError("plane lemma needs a 2-vector w")
        return w

    def w_scalar(self):
        w = float(np.asarray(self.w, dtype=float).reshape(()))
        if w < 0:
            raise ValueError("half-line lemma needs scalar w >= 0")
        return w


class TailCheck(NamedTuple):
    mass: float       # quadrature of the windowed integral
    bound: float      # the lemma's upper bound
    satisfied: bool   # mass <= bound (with a hair of quadrature slack)


def _closed_form(b, c, ae, w2):
    return b / c * np.exp(ae * b / c * w2)


# ---------------------------------------------------------------------------
# plane lemma


def plane_gaussian_closed(p: ABEW) -> float:
    w = p.w_plane()
    return float(_closed_form(p.b, p.c, p.a + p.eps, w @ w))


def _plane_integrand(p, v1, v2):
    w = p.w_plane()
    ae = p.a + p.eps
    expo = ae * (v1 ** 2 + v2 ** 2) - p.b * ((v1 - w[0]) ** 2 + (v2 - w[1]) ** 2)
    return (p.b / np.pi) * np.exp(expo)


def plane_gaussian_quad(p: ABEW, spec=QuadratureSpec(scheme="gauss_hermite", nodes=48)) -> float:
    """Tensor quadrature of the raw plane integrand over R^2.

    Gauss-Hermite absorbs the e^{-b|v-w|^2} envelope; the residual
    e^{ae|v|^2} factors across axes so the tensor rule collapses to a
    product of two 1D sums.  Its geometric rate degrades as (a+eps)/b -> 1,
    so if the node cap is reached without two levels agreeing we fall back
    to Gauss-Legendre on a window around the completed-square center.
    """
    w = p.w_plane()
    ae = p.a + p.eps

    def gh_level(n):
        t, wt = gauss_hermite(n)
        v1 = w[0] + t / np.sqrt(p.b)
        v2 = w[1] + t / np.sqrt(p.b)
        return (1.0 / np.pi) * np.dot(wt, np.exp(ae * v1 ** 2)) \
            * np.dot(wt, np.exp(ae * v2 ** 2))

    def gl_level(n):
        center = p.b / p.c * w
        half = np.sqrt(45.0 / p.c) + 2.0
        x1, w1 = gauss_legendre(n, center[0] - half, center[0] + half)
        x2, w2 = gauss_legendre(n, center[1] - half, center[1] + half)
        vals = _plane_integrand(p, x1[:, None], x2[None, :])
        return float(w1 @ vals @ w2)

    if spec.scheme == "gauss_hermite":
        prev, n = None, min(max(spec.nodes // 2, 24), GAUSS_HERMITE_MAX_NODES)
        while n <= GAUSS_HERMITE_MAX_NODES:
            cur = gh_level(n)
            if prev is not None and abs(cur - prev) <= spec.rel_tol * max(abs(cur), abs(prev)):
                return float(cur)
            prev, n = cur, 2 * n
        gl_nodes = 96
    elif spec.scheme == "gauss_legendre_mapped":
        gl_nodes = spec.nodes
    else:
        raise ValueError(f"scheme {spec.scheme!r} not supported for the plane lemma")

    prev, n = None, gl_nodes
    for _ in range(spec.refinement + 1):
        cur = gl_level(n)
        if prev is not None:
            scale = max(abs(cur), abs(prev))
            if abs(cur - prev) <= spec.rel_tol * scale:
                return float(cur)
        prev, n = cur, 2 * n
    raise QuadratureConvergenceError("plane quadrature did not settle")


def plane_gaussian_tail(p: ABEW, radius: float, n_r=200, n_theta=256) -> float:
    """Quadrature of the plane integrand over |v - (b/c) w| > radius."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    w = p.w_plane()
    center = p.b / p.c * w
    # radial decay is e^{-c r^2} around the completed-square center
    span = radius + np.sqrt(120.0 / p.c)
    theta = 2 * np.pi * np.arange(n_theta) / n_theta
    ct, st = np.cos(theta), np.sin(theta)

    def ring(r):
        # r: (nr,) -> integrate over angle, weight r dr dtheta
        v1 = center[0] + r[:, None] * ct[None, :]
        v2 = center[1] + r[:, None] * st[None, :]
        vals = _plane_integrand(p, v1, v2)
        return r * vals.sum(axis=1) * (2 * np.pi / n_theta)

    val, _ = integrate_finite(ring, radius, span,
                              QuadratureSpec(nodes=n_r, rel_tol=1e-11), strict=False)
    return float(val)


def plane_gaussian_tail_bound(p: ABEW, radius: float) -> float:
    """e^{-c/delta^2} * closed form, with radius playing 1/delta."""
    return float(np.exp(-p.c * radius ** 2) * plane_gaussian_closed(p))


# ---------------------------------------------------------------------------
# half-line Bessel lemma


def halfline_bessel_closed(p: ABEW) -> float:
    w = p.w_scalar()
    return float(_closed_form(p.b, p.c, p.a + p.eps, w * w))


def _halfline_integrand(p, v):
    """2b v e^{(a+eps)v^2} e^{-b v^2} e^{-b w^2} I0(2 b v w), overflow-safe."""
    w = p.w_scalar()
    ae = p.a + p.eps
    y = 2.0 * p.b * v * w
    # e^{-b v^2 - b w^2} I0(2bvw) = e^{-b(v-w)^2} * [e^{-y} I0(y)] for v,w >= 0
    expo = ae * v ** 2 - p.b * (v - w) ** 2
    return 2.0 * p.b * v * np.exp(expo) * bessel_i0_scaled(y)


def halfline_bessel_quad(p: ABEW, spec=QuadratureSpec()) -> float:
    val, _ = integrate_halfline(lambda v: _halfline_integrand(p, v), spec)
    return float(val)


def halfline_bessel_window(p: ABEW, lo: float, hi: float) -> float:
    """Quadrature of the half-line integrand over a finite window."""
    if not 0 <= lo < hi:
        raise ValueError("need 0 <= lo < hi")
    val, _ = integrate_finite(lambda v: _halfline_integrand(p, v), lo, hi,
                              QuadratureSpec(nodes=256, rel_tol=1e-11), strict=False)
    return float(val)


def halfline_bessel_tails(p: ABEW, window) -> TailCheck:
    """Windowed mass checks for the half-line lemma.

    window is one of
      ("small", delta)  — mass over (0, delta)            <= delta * closed form
      ("far", delta)    — mass over ((b/c) w + 1/delta, oo) <= e^{-c/(4 delta^2)} * closed
      ("far_i0", m, n, u_perp, delta, C) — the free-scaling variant, ignores p;
                           mass <= C e^{-m^2/(4 delta^2)} with an empirical C
      ("full",)         — mass over (0, oo) recovers the closed form itself
    """
    closed = halfline_bessel_closed(p)
    kind = window[0]
    if kind == "small":
        delta = float(window[1])
        mass = halfline_bessel_window(p, 0.0, delta)
        bound = delta * closed
    elif kind == "far":
        delta = float(window[1])
        lo = p.b / p.c * p.w_scalar() + 1.0 / delta
        hi = lo + np.sqrt(200.0 / p.c)
        mass = halfline_bessel_window(p, lo, hi)
        bound = np.exp(-p.c / (4.0 * delta ** 2)) * closed
    elif kind == "far_i0":
        m, n, u_perp, delta = (float(x) for x in window[1:5])
        constant = float(window[5]) if len(window) > 5 else 1.0
        mass = far_tail_i0_mass(m, n, u_perp, delta)
        bound = far_tail_i0_bound(m, delta, constant)
    elif kind == "full":
        mass = halfline_bessel_quad(p)
        bound = closed
    else:
        raise ValueError(f"unknown window kind {kind!r}")
    slack = 1.0 + 1e-9
    return TailCheck(float(mass), float(bound), bool(mass <= bound * slack))


# ---------------------------------------------------------------------------
# far tail with free (m, n) scaling


def far_tail_i0_mass(m: float, n: float, u_perp: float, delta: float) -> float:
    """Quadrature of 2 m^2 int_{(n/m)u+1/delta}^inf v e^{-m^2 v^2} I0(2mnvu) e^{-n^2 u^2} dv."""
    if min(m, n, u_perp, delta) <= 0:
        raise ValueError("m, n, u_perp, delta must be positive")
    lo = (n / m) * u_perp + 1.0 / delta

    def g(v):
        y = 2.0 * m * n * v * u_perp
        expo = -(m * v - n * u_perp) ** 2
        return 2.0 * m * m * v * np.exp(expo) * bessel_i0_scaled(y)

    hi = lo + 30.0 / m
    val, _ = integrate_finite(g, lo, hi, QuadratureSpec(nodes=256, rel_tol=1e-11),
                              strict=False)
    return float(val)


def far_tail_i0_bound(m: float, delta: float, constant: float = 1.0) -> float:
    """constant * e^{-m^2/(4 delta^2)}; the lemma hides the constant, tests fit it."""
    return float(constant * np.exp(-m * m / (4.0 * delta ** 2)))
