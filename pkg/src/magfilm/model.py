"""Material laws, rescaled differential operators, and the state types.

The elastic density is

    W(F, lambda) = c_elastic |F|^p + c_coupling (|F^T lambda|^2 - 1)^2

which is coercive with constant min(c_elastic, 1), frame indifferent,
and even in lambda by construction.  The determinant barrier is the
equality case of its lower bound,

    Phi(F) = (det F)^(-q)  for det F > 0,   Phi(F) = +inf otherwise,

with exponents constrained by p > 3 and q > 3p/(p - 3).  Infinite
barrier values propagate as an inf sentinel, never as an exception.

The rescaled operators act on fields over the unit-thickness domain:
grad_h divides the transverse derivative by the thickness h, hess_h
weights second derivatives with 1, 1/h, 1/h^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError
from .grids import (
    Field,
    Grid2,
    Grid3,
    apply_along,
    cell_average2,
    cell_gradient2,
    cell_gradient3,
    d1_matrix,
    d2_matrix,
)


@dataclass(frozen=True)
class MaterialParams:
    p: float = 4.0
    q: float = 13.0
    alpha: float = 1.0
    mu0: float = 1.0
    c_elastic: float = 1.0
    c_coupling: float = 1.0

    def __post_init__(self):
        if not self.p > 3:
            raise InvalidParameterError(f"need p > 3, got p={self.p}")
        bound = 3 * self.p / (self.p - 3)
        if not self.q > bound:
            raise InvalidParameterError(
                f"need q > 3p/(p-3) = {bound:g}, got q={self.q}"
            )
        for name in ("alpha", "mu0", "c_elastic"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"need {name} > 0")
        if self.c_coupling < 0:
            raise InvalidParameterError("need c_coupling >= 0")


# ---------------------------------------------------------------------------
# Material laws
# ---------------------------------------------------------------------------

def elastic_W(F, lam, params: MaterialParams):
    """Elastic density at one or many states; F is (..., 3, 3), lam (..., 3)."""
    F = np.asarray(F, dtype=float)
    lam = np.asarray(lam, dtype=float)
    norm = np.linalg.norm(lam, axis=-1)
    if np.any(np.abs(norm - 1.0) > 1e-9):
        raise InvalidParameterError("lambda must be a unit vector (|lam| = 1 within 1e-9)")
    F2 = np.sum(F * F, axis=(-2, -1))
    Ftl = np.einsum("...ji,...j->...i", F, lam)
    coupling = np.sum(Ftl * Ftl, axis=-1) - 1.0
    return params.c_elastic * F2 ** (params.p / 2) + params.c_coupling * coupling**2


def elastic_W_grad(F, lam, params: MaterialParams):
    """(dW/dF, dW/dlambda) for the default law."""
    F = np.asarray(F, dtype=float)
    lam = np.asarray(lam, dtype=float)
    F2 = np.sum(F * F, axis=(-2, -1))
    Ftl = np.einsum("...ji,...j->...i", F, lam)
    c = np.sum(Ftl * Ftl, axis=-1) - 1.0
    dF = params.c_elastic * params.p * F2[..., None, None] ** ((params.p - 2) / 2) * F
    dF = dF + 4.0 * params.c_coupling * c[..., None, None] * np.einsum(
        "...i,...j->...ij", lam, Ftl
    )
    dlam = 4.0 * params.c_coupling * c[..., None] * np.einsum("...ij,...j->...i", F, Ftl)
    return dF, dlam


def cofactor3(A):
    """cof(A) = det(A) A^{-T}; columns are cross products of A's columns."""
    a1, a2, a3 = A[..., :, 0], A[..., :, 1], A[..., :, 2]
    return np.stack(
        [np.cross(a2, a3), np.cross(a3, a1), np.cross(a1, a2)], axis=-1
    )


def det3(A):
    """Closed-form 3x3 determinant (exact on the diagonal test matrices,
    unlike the LU route)."""
    A = np.asarray(A, dtype=float)
    return (A[..., 0, 0] * (A[..., 1, 1] * A[..., 2, 2] - A[..., 1, 2] * A[..., 2, 1])
            - A[..., 0, 1] * (A[..., 1, 0] * A[..., 2, 2] - A[..., 1, 2] * A[..., 2, 0])
            + A[..., 0, 2] * (A[..., 1, 0] * A[..., 2, 1] - A[..., 1, 1] * A[..., 2, 0]))


def phi(F, params: MaterialParams):
    """Determinant barrier; returns +inf where det F <= 0."""
    det = det3(F)
    out = np.full(np.shape(det), np.inf)
    pos = det > 0
    if np.isscalar(det) or det.ndim == 0:
        return float(det) ** (-params.q) if det > 0 else np.inf
    out[pos] = det[pos] ** (-params.q)
    return out


def phi_grad(F, params: MaterialParams):
    """dPhi/dF on det > 0 (zero filled where the sentinel is infinite)."""
    F = np.asarray(F, dtype=float)
    det = det3(F)
    cof = cofactor3(F)
    g = np.zeros_like(F)
    pos = det > 0
    g[pos] = -params.q * det[pos, None, None] ** (-params.q - 1) * cof[pos]
    return g


# ---------------------------------------------------------------------------
# Rescaled differential operators
# ---------------------------------------------------------------------------

def grad_h(v: Field, h):
    """(d1 v | d2 v | d3 v / h) at cell centers of a Grid3 field."""
    if h <= 0:
        raise InvalidParameterError(f"thickness must be positive, got h={h}")
    if not isinstance(v.grid, Grid3):
        raise InvalidParameterError("grad_h expects a Grid3 field")
    G = cell_gradient3(v.values, v.grid)
    G = G.copy()
    G[..., 2] /= h
    return G


def hess_h(v: Field, h):
    """Nodal rescaled Hessian, shape (nz, ny, nx, ncomp, 3, 3).

    Entry (i, j) is the (d_i d_j) second difference weighted by 1/h for
    one transverse index and 1/h^2 for two.  Mixed derivatives compose
    the 1D first-derivative stencils, so the result is exactly symmetric.
    """
    if h <= 0:
        raise InvalidParameterError(f"thickness must be positive, got h={h}")
    if not isinstance(v.grid, Grid3):
        raise InvalidParameterError("hess_h expects a Grid3 field")
    g = v.grid
    vals = v.values
    spac = [g.plane.hx, g.plane.hy, g.hz]
    axes = [2, 1, 0]  # coordinate index -> array axis
    d1 = [d1_matrix(n, s) for n, s in zip((g.plane.nx, g.plane.ny, g.nz), spac)]
    d2 = [d2_matrix(n, s) for n, s in zip((g.plane.nx, g.plane.ny, g.nz), spac)]
    weights = np.array([[1.0, 1.0, 1.0 / h], [1.0, 1.0, 1.0 / h],
                        [1.0 / h, 1.0 / h, 1.0 / h**2]])
    H = np.empty(vals.shape[:-1] + (vals.shape[-1], 3, 3))
    for i in range(3):
        H[..., i, i] = apply_along(vals, d2[i], axes[i]) * weights[i, i]
    for i in range(3):
        for j in range(i + 1, 3):
            mixed = apply_along(apply_along(vals, d1[i], axes[i]), d1[j], axes[j])
            H[..., i, j] = mixed * weights[i, j]
            H[..., j, i] = mixed * weights[j, i]
    return H


def planar_hessian(v: Field):
    """Nodal (2x2 per component) Hessian of a Grid2 field."""
    g = v.grid
    d1x, d1y = d1_matrix(g.nx, g.hx), d1_matrix(g.ny, g.hy)
    d2x, d2y = d2_matrix(g.nx, g.hx), d2_matrix(g.ny, g.hy)
    H = np.empty(v.values.shape + (2, 2))
    H[..., 0, 0] = apply_along(v.values, d2x, 1)
    H[..., 1, 1] = apply_along(v.values, d2y, 0)
    mixed = apply_along(apply_along(v.values, d1x, 1), d1y, 0)
    H[..., 0, 1] = mixed
    H[..., 1, 0] = mixed
    return H


def planar_gradient_nodal(v: Field):
    """Nodal first derivatives of a Grid2 field, shape (ny, nx, ncomp, 2)."""
    g = v.grid
    d1x, d1y = d1_matrix(g.nx, g.hx), d1_matrix(g.ny, g.hy)
    return np.stack(
        [apply_along(v.values, d1x, 1), apply_along(v.values, d1y, 0)], axis=-1
    )


# ---------------------------------------------------------------------------
# States
# ---------------------------------------------------------------------------

def limit_gradient_cells(y: Field, b: Field):
    """(grad' y | b) at cell centers, shape (ny-1, nx-1, 3, 3)."""
    gy = cell_gradient2(y.values, y.grid)           # (..., 3, 2)
    bc = cell_average2(b.values)                    # (..., 3)
    return np.concatenate([gy, bc[..., None]], axis=-1)


@dataclass
class AdmissibleTriple:
    """Limit film state (y, b, M) on omega.

    ``validate`` checks membership in the admissible set: unit
    magnetization, clamped boundary (y = id and (grad' y | b) = Id on
    the boundary nodes), and a positive determinant floor at every
    quadrature point.  The discrete gradient part of the boundary
    condition is checked with the one-sided nodal stencils, hence the
    separate tolerance.
    """

    y: Field
    b: Field
    M: Field

    def __post_init__(self):
        if not (isinstance(self.y.grid, Grid2) and self.y.grid == self.b.grid == self.M.grid):
            raise InvalidParameterError("triple fields must share one Grid2")
        for f, name in ((self.y, "y"), (self.b, "b"), (self.M, "M")):
            if f.ncomp != 3:
                raise InvalidParameterError(f"{name} must have 3 components")

    @property
    def grid(self) -> Grid2:
        return self.y.grid

    def det_cells(self):
        return det3(limit_gradient_cells(self.y, self.b))

    def min_det(self):
        return float(self.det_cells().min())

    def validate(self, det_floor=0.0, sat_tol=1e-12, bc_tol=1e-9, bc_grad_tol=0.1):
        # bc_grad_tol absorbs the one-sided stencil's truncation error on
        # coarse grids; it is a sanity bound, not a continuum certificate.
        g = self.grid
        norms = np.linalg.norm(self.M.values, axis=-1)
        if np.max(np.abs(norms - 1.0)) > sat_tol:
            raise InvalidParameterError(
                f"saturation violated: max | |M|-1 | = {np.max(np.abs(norms-1.0)):.3e}"
            )
        bd = g.boundary_mask()
        idref = g.nodes()
        ydev = np.abs(self.y.values[bd][:, :2] - idref[bd]).max(initial=0.0)
        ydev = max(ydev, np.abs(self.y.values[bd][:, 2]).max(initial=0.0))
        if ydev > bc_tol:
            raise InvalidParameterError(f"boundary condition y = id violated by {ydev:.3e}")
        bdev = np.abs(self.b.values[bd] - np.array([0.0, 0.0, 1.0])).max(initial=0.0)
        if bdev > bc_tol:
            raise InvalidParameterError(f"boundary condition b = e3 violated by {bdev:.3e}")
        gy = planar_gradient_nodal(self.y)
        ref = np.zeros((3, 2))
        ref[0, 0] = ref[1, 1] = 1.0
        gdev = np.abs(gy[bd] - ref).max(initial=0.0)
        if gdev > bc_grad_tol:
            raise InvalidParameterError(
                f"boundary condition grad' y = (e1|e2) violated by {gdev:.3e}"
            )
        eps = self.min_det()
        if eps <= det_floor:
            raise InvalidParameterError(
                f"det(grad' y | b) = {eps:.3e} not above floor {det_floor:g}"
            )
        return eps


@dataclass
class Configuration3D:
    """Rescaled 3D state: deformation yh and Lagrangian magnetization Mh."""

    yh: Field
    Mh: Field
    h: float

    def __post_init__(self):
        if self.h <= 0:
            raise InvalidParameterError(f"thickness must be positive, got h={self.h}")
        if not (isinstance(self.yh.grid, Grid3) and self.yh.grid == self.Mh.grid):
            raise InvalidParameterError("configuration fields must share one Grid3")
        if self.yh.ncomp != 3 or self.Mh.ncomp != 3:
            raise InvalidParameterError("yh and Mh must have 3 components")

    @property
    def grid(self) -> Grid3:
        return self.yh.grid

    def validate(self, sat_tol=1e-12, bc_tol=1e-9):
        norms = np.linalg.norm(self.Mh.values, axis=-1)
        if np.max(np.abs(norms - 1.0)) > sat_tol:
            raise InvalidParameterError(
                f"saturation violated: max | |Mh|-1 | = {np.max(np.abs(norms-1.0)):.3e}"
            )
        g = self.grid
        bd = g.boundary_mask_lateral()
        nodes = g.nodes()
        ref = nodes[bd].copy()
        ref[:, 2] *= self.h
        dev = np.abs(self.yh.values[bd] - ref).max(initial=0.0)
        if dev > bc_tol:
            raise InvalidParameterError(
                f"rescaled boundary condition yh = (x', h x3) violated by {dev:.3e}"
            )
