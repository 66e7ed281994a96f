"""Modified Bessel function of the first kind, order zero.

I0 shows up inside the wall-scattering kernel and in the half-line
Gaussian-Bessel integral identities, always multiplied by a Gaussian that
nearly cancels its exponential growth.  Besides the plain value we therefore
provide the scaled form e^{-|y|} I0(y), which stays bounded for any argument.
"""

import numpy as np

# The defining power series sum_k (y^2/4)^k / (k!)^2 has all-positive terms,
# so it is stable at any argument; the only reason to leave it is cost and,
# for the scaled variant, overflow of the unscaled sum near y ~ 709.  The
# asymptotic expansion reaches full double precision once its optimally
# truncated error ~ e^{-2y} drops below 1e-14, which happens by y = 35.
SERIES_CUTOFF = 8.0
ASYMPTOTIC_CUTOFF = 35.0
_EXP_OVERFLOW = 709.0

_SERIES_TERMS = 96
_ASYMPTOTIC_TERMS = 15


def _i0_series(y):
    """Power series for I0, valid (and positive-term stable) for |y| < ~700."""
    q = 0.25 * y * y
    term = np.ones_like(y)
    acc = np.ones_like(y)
    for k in range(1, _SERIES_TERMS):
        term = term * q / (k * k)
        acc = acc + term
    return acc


def _i0e_asymptotic(y):
    """Asymptotic expansion of e^{-y} I0(y) for y >= ASYMPTOTIC_CUTOFF.

    e^{-y} I0(y) ~ (2 pi y)^{-1/2} * sum_k a_k / y^k with a_0 = 1 and
    a_k = a_{k-1} (2k-1)^2 / (8k).  Fifteen terms leave a relative error
    below 1e-15 at y = 35 and far less beyond.
    """
    inv = 1.0 / y
    coeff = np.ones_like(y)
    acc = np.ones_like(y)
    for k in range(1, _ASYMPTOTIC_TERMS):
        coeff = coeff * ((2 * k - 1) ** 2 / (8.0 * k)) * inv
        acc = acc + coeff
    return acc / np.sqrt(2.0 * np.pi * y)


def bessel_i0_scaled(y):
    """e^{-|y|} I0(y), overflow-free for all finite arguments."""
    y = np.asarray(y, dtype=float)
    scalar = y.ndim == 0
    a = np.abs(np.atleast_1d(y))
    out = np.empty_like(a)
    small = a < ASYMPTOTIC_CUTOFF
    if np.any(small):
        out[small] = np.exp(-a[small]) * _i0_series(a[small])
    if np.any(~small):
        out[~small] = _i0e_asymptotic(a[~small])
    return out[0] if scalar else out


def bessel_i0(y):
    """I0(y) via the series below |y| = 8 and the scaled form beyond.

    Monotone in |y|; overflows to inf past y ~ 713 like exp itself, at which
    point callers should already be working with bessel_i0_scaled.
    """
    y = np.asarray(y, dtype=float)
    scalar = y.ndim == 0
    a = np.abs(np.atleast_1d(y))
    out = np.empty_like(a)
    small = a < SERIES_CUTOFF
    if np.any(small):
        out[small] = _i0_series(a[small])
    if np.any(~small):
        big = a[~small]
        with np.errstate(over="ignore"):
            out[~small] = np.exp(np.minimum(big, _EXP_OVERFLOW + 5.0)) * bessel_i0_scaled(big)
    return out[0] if scalar else out
