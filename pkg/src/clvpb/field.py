"""Self-consistent electrostatics on a Cartesian lattice.

Charge is deposited onto the nodes of a box-covering grid with
cloud-in-cell weights, the potential solves a masked Neumann problem

    -lap(phi) = rho - rho0   inside the domain,   d(phi)/dn = 0 on the wall,

and the field E = -grad(phi) is recovered with centred stencils (one-sided
next to the cut boundary) and interpolated multilinearly.  The wall is
represented by node masks on the lattice: cut faces simply carry zero flux,
which enforces the homogeneous Neumann condition by construction.

Potentials are only defined up to a constant here, so everything is pinned
to the zero-mean gauge over the inside nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .geometry import DomainGeometry

NODE_OUTSIDE = 0
NODE_INSIDE = 1
NODE_CUT = 2  # inside node with at least one outside lattice neighbour

DEFAULT_GRID_NODES = 64
DEFAULT_CG_TOL = 1e-10


class PoissonConvergenceError(RuntimeError):
    """Conjugate gradients failed to reach the requested residual."""


class DepositionError(ValueError):
    """A particle fell outside the grid's bounding box."""


@dataclass(frozen=True)
class Grid:
    """Node-centred lattice covering the domain's bounding box.

    ``axes[k]`` holds the node coordinates along axis k; ``flags`` marks each
    node outside (0), interior (1) or in the cut layer (2).  The cut layer is
    the set of inside nodes that own at least one zero-flux face.
    """

    domain: DomainGeometry
    axes: Tuple[np.ndarray, ...]
    flags: np.ndarray

    @classmethod
    def cover(cls, domain: DomainGeometry, nodes: int = DEFAULT_GRID_NODES) -> "Grid":
        if nodes < 8:
            raise ValueError("grid needs at least 8 nodes per axis")
        d = domain.dimension
        if domain.shape == "ellipsoid":
            ext = np.asarray(domain.semi_axes, dtype=float)
        else:
            ext = np.full(d, float(domain.radius))
        center = np.asarray(domain.center, dtype=float)
        axes = tuple(
            np.linspace(center[k] - ext[k], center[k] + ext[k], nodes) for k in range(d)
        )
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        sd = domain.signed_distance(pts).reshape(mesh[0].shape)
        inside = sd <= 0.0
        flags = np.where(inside, NODE_INSIDE, NODE_OUTSIDE).astype(np.int8)
        # cut layer: inside with an outside face neighbour (or a box edge)
        cut = np.zeros_like(inside)
        for ax in range(d):
            lo = _axslice(d, ax, slice(None, -1))
            hi = _axslice(d, ax, slice(1, None))
            cut[lo] |= inside[lo] & ~inside[hi]
            cut[hi] |= inside[hi] & ~inside[lo]
            cut[_axslice(d, ax, 0)] |= inside[_axslice(d, ax, 0)]
            cut[_axslice(d, ax, -1)] |= inside[_axslice(d, ax, -1)]
        flags[cut] = NODE_CUT
        return cls(domain=domain, axes=axes, flags=flags)

    @property
    def dimension(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(a.size for a in self.axes)

    @property
    def origin(self) -> np.ndarray:
        return np.array([a[0] for a in self.axes])

    @property
    def spacing(self) -> np.ndarray:
        return np.array([a[1] - a[0] for a in self.axes])

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def inside(self) -> np.ndarray:
        return self.flags != NODE_OUTSIDE

    def node_points(self) -> np.ndarray:
        """All node coordinates, shape (*grid shape, d)."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1)


def _axslice(d: int, ax: int, sl) -> Tuple:
    out = [slice(None)] * d
    out[ax] = sl
    return tuple(out)


# ---------------------------------------------------------------------------
# deposition


def deposit_density(
    positions: np.ndarray, weights: np.ndarray, grid: Grid
) -> np.ndarray:
    """Cloud-in-cell deposition of weighted particles onto grid nodes.

    Returns a density (mass per unit volume) per node.  The total deposited
    mass reproduces sum(weights) to round-off; a particle at a node puts its
    whole weight there, one at a cell centre spreads it equally over the 2^d
    corners.
    """
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    w = np.broadcast_to(np.asarray(weights, dtype=float), pos.shape[:1])
    d = grid.dimension
    if pos.shape[1] != d:
        raise ValueError(f"positions must have dimension {d}")
    origin = grid.origin
    h = grid.spacing
    n = np.array(grid.shape)

    u = (pos - origin) / h
    tol = 1e-9
    if np.any(u < -tol) or np.any(u > (n - 1) + tol):
        raise DepositionError("particle outside the grid bounding box")
    u = np.clip(u, 0.0, n - 1)
    base = np.minimum(u.astype(np.int64), n - 2)
    frac = u - base

    rho = np.zeros(grid.shape)
    for corner in range(1 << d):
        idx = []
        shares = w.copy()
        for ax in range(d):
            bit = (corner >> ax) & 1
            idx.append(base[:, ax] + bit)
            shares = shares * (frac[:, ax] if bit else (1.0 - frac[:, ax]))
        np.add.at(rho, tuple(idx), shares)
    return rho / grid.cell_volume


def compute_rho0(mass: float, domain: DomainGeometry) -> float:
    """Background density: initial mass averaged over the exact volume."""
    if mass < 0:
        raise ValueError("mass must be nonnegative")
    return float(mass) / domain.volume()


# ---------------------------------------------------------------------------
# Poisson solve


def _face_masks(grid: Grid) -> list:
    """Per axis, boolean arrays marking faces whose two end nodes are inside."""
    inside = grid.inside
    d = grid.dimension
    masks = []
    for ax in range(d):
        lo = inside[_axslice(d, ax, slice(None, -1))]
        hi = inside[_axslice(d, ax, slice(1, None))]
        masks.append(lo & hi)
    return masks


def _neg_laplacian(phi: np.ndarray, grid: Grid, faces: list) -> np.ndarray:
    """Masked five/seven-point -lap with zero-flux cut faces."""
    d = grid.dimension
    h2 = grid.spacing ** 2
    out = np.zeros_like(phi)
    for ax in range(d):
        lo = _axslice(d, ax, slice(None, -1))
        hi = _axslice(d, ax, slice(1, None))
        diff = np.where(faces[ax], (phi[hi] - phi[lo]) / h2[ax], 0.0)
        out[lo] -= diff
        out[hi] += diff
    return out


def solve_poisson(
    rho: np.ndarray,
    rho0: float,
    grid: Grid,
    tol: float = DEFAULT_CG_TOL,
    max_iter: Optional[int] = None,
) -> np.ndarray:
    """Solve -lap(phi) = rho - rho0 with zero-flux walls, zero-mean gauge.

    The source is projected to zero mean over the inside nodes first (the
    Neumann problem is only solvable for compatible data), then conjugate
    gradients run matrix-free to a relative residual of ``tol``.
    """
    inside = grid.inside
    n_in = int(inside.sum())
    if n_in == 0:
        raise ValueError("grid has no inside nodes")
    faces = _face_masks(grid)

    b = np.where(inside, rho - rho0, 0.0)
    b[inside] -= b[inside].mean()

    bnorm = np.linalg.norm(b[inside])
    phi = np.zeros_like(b)
    if bnorm == 0.0:
        return phi

    if max_iter is None:
        max_iter = 40 * max(grid.shape) + 200

    r = b.copy()
    p = r.copy()
    rs = float(np.dot(r[inside], r[inside]))
    for _ in range(max_iter):
        ap = _neg_laplacian(p, grid, faces)
        alpha = rs / float(np.dot(p[inside], ap[inside]))
        phi += alpha * p
        r -= alpha * ap
        # keep the iterate orthogonal to the constant null vector
        r[inside] -= r[inside].mean()
        rs_new = float(np.dot(r[inside], r[inside]))
        if np.sqrt(rs_new) <= tol * bnorm:
            phi[~inside] = 0.0
            phi[inside] -= phi[inside].mean()
            return phi
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise PoissonConvergenceError(
        f"CG stalled at relative residual {np.sqrt(rs) / bnorm:.3e} "
        f"after {max_iter} iterations"
    )


def _extend_outward(values: np.ndarray, filled: np.ndarray, sweeps: int = 4) -> np.ndarray:
    """Fill unfilled nodes with the mean of filled face neighbours.

    A few sweeps are enough to cover every lattice cell that touches the
    domain, which is all the interpolator ever reads.
    """
    d = values.ndim
    vals = np.where(filled, values, 0.0)
    have = filled.copy()
    for _ in range(sweeps):
        acc = np.zeros_like(vals)
        cnt = np.zeros(vals.shape)
        for ax in range(d):
            lo = _axslice(d, ax, slice(None, -1))
            hi = _axslice(d, ax, slice(1, None))
            acc[lo] += np.where(have[hi], vals[hi], 0.0)
            cnt[lo] += have[hi]
            acc[hi] += np.where(have[lo], vals[lo], 0.0)
            cnt[hi] += have[lo]
        new = ~have & (cnt > 0)
        vals[new] = acc[new] / cnt[new]
        have |= new
        if have.all():
            break
    return vals


def _gradient_component(phi: np.ndarray, ok: np.ndarray, ax: int, h: float) -> np.ndarray:
    """d(phi)/dx_ax using centred stencils, falling back to one-sided ones.

    ``ok`` marks nodes whose value is trustworthy; a node uses its neighbours
    only when they are trustworthy too.  Three-point one-sided differences
    keep second order at the cut layer; isolated nodes get zero.
    """
    d = phi.ndim
    grad = np.zeros_like(phi)
    done = np.zeros(phi.shape, dtype=bool)

    pad_phi = np.pad(phi, 2)
    pad_ok = np.pad(ok, 2, constant_values=False)

    def nb(step: int, arr):
        sl = [slice(2, -2)] * d
        sl[ax] = slice(2 + step, arr.shape[ax] - 2 + step)
        return arr[tuple(sl)]

    p_m2, p_m1 = nb(-2, pad_phi), nb(-1, pad_phi)
    p_p1, p_p2 = nb(1, pad_phi), nb(2, pad_phi)
    o_m2, o_m1 = nb(-2, pad_ok), nb(-1, pad_ok)
    o_p1, o_p2 = nb(1, pad_ok), nb(2, pad_ok)

    sel = ok & o_m1 & o_p1
    grad[sel] = (p_p1[sel] - p_m1[sel]) / (2.0 * h)
    done |= sel

    sel = ok & ~done & o_p1 & o_p2
    grad[sel] = (-3.0 * phi[sel] + 4.0 * p_p1[sel] - p_p2[sel]) / (2.0 * h)
    done |= sel

    sel = ok & ~done & o_m1 & o_m2
    grad[sel] = (3.0 * phi[sel] - 4.0 * p_m1[sel] + p_m2[sel]) / (2.0 * h)
    done |= sel

    sel = ok & ~done & o_p1
    grad[sel] = (p_p1[sel] - phi[sel]) / h
    done |= sel

    sel = ok & ~done & o_m1
    grad[sel] = (phi[sel] - p_m1[sel]) / h
    return grad


def negative_gradient(phi: np.ndarray, grid: Grid) -> np.ndarray:
    """E = -grad(phi) per node, shape (*grid shape, d).

    Gradients are formed on the inside nodes and then continued outward so
    that every interpolation cell touching the domain has data; the
    continuation is consistent because the solved potential has vanishing
    normal derivative at the wall.
    """
    inside = grid.inside
    h = grid.spacing
    comps = []
    for ax in range(grid.dimension):
        g = _gradient_component(phi, inside, ax, h[ax])
        comps.append(_extend_outward(-g, inside))
    return np.stack(comps, axis=-1)


def eval_field(E: np.ndarray, grid: Grid, x: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of the node field at point(s) x."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    single = np.asarray(x).ndim == 1
    d = grid.dimension
    n = np.array(grid.shape)
    u = (pts - grid.origin) / grid.spacing
    u = np.clip(u, 0.0, n - 1)
    base = np.minimum(u.astype(np.int64), n - 2)
    frac = u - base

    out = np.zeros((pts.shape[0], d))
    for corner in range(1 << d):
        idx = []
        wgt = np.ones(pts.shape[0])
        for ax in range(d):
            bit = (corner >> ax) & 1
            idx.append(base[:, ax] + bit)
            wgt = wgt * (frac[:, ax] if bit else (1.0 - frac[:, ax]))
        out += wgt[:, None] * E[tuple(idx)]
    return out[0] if single else out


# ---------------------------------------------------------------------------
# bundled state and the simple analytic field wrappers


@dataclass(frozen=True)
class FieldState:
    """Grid, density, potential (zero-mean gauge), field and background.

    ``source_shift`` is the constant removed from rho - rho0 to make the
    Neumann data compatible on the lattice; it absorbs the O(h^2) mismatch
    between the lattice volume of the inside nodes and the exact domain
    volume behind rho0.
    """

    grid: Grid
    rho: np.ndarray
    phi: np.ndarray
    E: np.ndarray
    rho0: float
    source_shift: float = 0.0

    @classmethod
    def from_density(
        cls,
        grid: Grid,
        rho: np.ndarray,
        rho0: float,
        tol: float = DEFAULT_CG_TOL,
    ) -> "FieldState":
        inside = grid.inside
        shift = float((rho[inside] - rho0).mean())
        phi = solve_poisson(rho, rho0, grid, tol=tol)
        E = negative_gradient(phi, grid)
        return cls(grid=grid, rho=rho, phi=phi, E=E, rho0=rho0,
                   source_shift=shift)

    def compatibility_defect(self) -> float:
        """Relative net mass of the effective source (round-off when solvable)."""
        inside = self.grid.inside
        src = (self.rho[inside] - self.rho0 - self.source_shift) * self.grid.cell_volume
        denom = np.abs(src).sum()
        return float(abs(src.sum()) / denom) if denom > 0 else 0.0

    def gauge_defect(self) -> float:
        return float(abs(self.phi[self.grid.inside].mean()))

    def boundary_normal_defect(self) -> float:
        """sup |n . E| over the cut layer — recorded, not asserted.

        The cut-cell construction satisfies the zero-flux condition on lattice
        faces exactly, but the pointwise normal derivative at the curved wall
        is only O(h).  This measures that gap.
        """
        cut = self.grid.flags == NODE_CUT
        if not cut.any():
            return 0.0
        pts = self.grid.node_points()[cut]
        proj = self.domain.project(pts)
        normals = self.domain.outward_normal(proj)
        return float(np.abs(np.sum(self.E[cut] * normals, axis=1)).max())

    @property
    def domain(self) -> DomainGeometry:
        return self.grid.domain

    def acceleration(self, x: np.ndarray) -> np.ndarray:
        return eval_field(self.E, self.grid, x)


class ZeroField:
    """No field: free transport."""

    is_zero = True

    def __init__(self, dimension: int):
        self.dimension = dimension

    def acceleration(self, x: np.ndarray) -> np.ndarray:
        return np.zeros_like(np.asarray(x, dtype=float))


class ConstantField:
    """Spatially uniform field vector."""

    is_zero = False

    def __init__(self, E0: Sequence[float]):
        self.E0 = np.asarray(E0, dtype=float)
        self.dimension = self.E0.size

    def acceleration(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self.E0.copy()
        return np.broadcast_to(self.E0, x.shape).copy()


class AnalyticField:
    """Field given by a callable x -> E(x) (vectorised over rows)."""

    is_zero = False

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], dimension: int):
        self.fn = fn
        self.dimension = dimension

    def acceleration(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float)


def as_field(field, dimension: int):
    """Normalise None / vector / callable / field object to the protocol."""
    if field is None:
        return ZeroField(dimension)
    if hasattr(field, "acceleration"):
        return field
    if callable(field):
        return AnalyticField(field, dimension)
    try:
        arr = np.asarray(field, dtype=float)
    except (TypeError, ValueError):
        raise TypeError("cannot interpret object as a field") from None
    if arr.ndim == 1 and arr.size == dimension:
        if np.all(arr == 0.0):
            return ZeroField(dimension)
        return ConstantField(arr)
    raise TypeError("cannot interpret object as a field")
