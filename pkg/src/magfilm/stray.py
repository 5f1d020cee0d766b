"""Magnetostatic solvers: the reduced planar system and the full 3D potential.

Reduced system.  On a padded extension of omega (coefficients Id / 0
outside the film) the transverse flux unknown V is eliminated pointwise
from the algebraic equation, leaving a scalar divergence-form problem for
the potential U with the 2x2 Schur-complement conductivity

    B' = B_2x2 - beta beta^T / B33,      B = det(A) A^{-1} A^{-T},

driven by g' = g_12 - (g3/B33) beta with g = det(A) A^{-1} Mbar.  The
potential is discretized with bilinear elements; the B-hat block is
integrated exactly per cell (coefficients are piecewise constant at cell
centers) while the eliminated-V coupling enters through center gradients.
That combination keeps the operator symmetric positive definite -- no
hourglass mode -- and makes the discrete Galerkin identity

    mu0 sum B (dU,V).(dU,V) = sum det(A) A^{-1} Mbar . (dU,V)

hold to solver precision.  The linear solve is Jacobi-preconditioned
conjugate gradients with a relative-residual stop.

Full 3D problem.  div(-mu0 grad u + chi m) = 0 is posed on a padded box
around the rasterized deformed body with u = 0 on the truncation
boundary.  The voxel grid snaps to the body's bounding box so that
axis-aligned bodies are captured exactly.  Trilinear elements on the
uniform box give a tensor-product stiffness K x M x M + ... whose
Dirichlet eigenbasis is the 3D discrete sine basis, so the system is
solved directly by DST-I diagonalization; the reported residual is the
true algebraic residual of the assembled operator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.fft import dstn, idstn
from scipy.ndimage import correlate1d

from .errors import (
    ConvergenceError,
    InvalidParameterError,
    NonEllipticError,
    RasterizationError,
)
from .grids import sample2, sample_gradient2, trapezoid_weights
from .model import AdmissibleTriple, Configuration3D, det3


@dataclass(frozen=True)
class StrayOptions:
    """Knobs shared by the stray-field solves."""

    padding: float = 1.0          # truncation margin around the body
    resolution: int | None = None  # 2D: cells across omega (None = match grid)
    tol: float = 1e-10            # relative residual target
    max_iter: int = 100000
    voxels_per_unit: int = 64     # 3D: target voxel density


# ---------------------------------------------------------------------------
# Extended planar coefficients
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExtendedGrid:
    """Uniform extension of omega's cell grid by whole padding cells."""

    x0: float
    y0: float
    hx: float
    hy: float
    ncx: int           # cells in x (total, including padding)
    ncy: int
    pad_x: int         # padding cells on each side
    pad_y: int
    in_x: int          # cells across omega
    in_y: int

    @property
    def nnx(self):
        return self.ncx + 1

    @property
    def nny(self):
        return self.ncy + 1

    @property
    def cell_area(self):
        return self.hx * self.hy

    def cell_centers(self):
        xc = self.x0 + self.hx * (np.arange(self.ncx) + 0.5)
        yc = self.y0 + self.hy * (np.arange(self.ncy) + 0.5)
        X, Y = np.meshgrid(xc, yc, indexing="xy")
        return np.stack([X, Y], axis=-1)

    def omega_cell_slice(self):
        return (slice(self.pad_y, self.pad_y + self.in_y),
                slice(self.pad_x, self.pad_x + self.in_x))


@dataclass
class ExtendedCoefficients:
    """Per-cell coefficient fields of the reduced planar system."""

    grid: ExtendedGrid
    A: np.ndarray        # (ncy, ncx, 3, 3), Id outside omega
    Mbar: np.ndarray     # (ncy, ncx, 3), 0 outside omega
    B: np.ndarray        # det(A) A^{-1} A^{-T}
    lambda_eigen: float  # min eigenvalue of A^{-1}A^{-T} over all cells
    det: np.ndarray = field(repr=False, default=None)
    g: np.ndarray = field(repr=False, default=None)        # det(A) A^{-1} Mbar
    omega_mask: np.ndarray = field(repr=False, default=None)


def assemble_reduced(triple: AdmissibleTriple, padding=1.0, resolution=None):
    """Build the extended coefficient fields for the reduced stray system.

    ``resolution`` is the number of solver cells across omega (default:
    the triple's own cell count, in which case omega's quadrature points
    coincide with the solver's).  Padding is rounded up to whole cells.
    """
    if padding <= 0:
        raise InvalidParameterError("padding must be positive")
    g2 = triple.grid
    in_x = resolution if resolution is not None else g2.nx - 1
    in_y = resolution if resolution is not None else g2.ny - 1
    if in_x < 1 or in_y < 1:
        raise InvalidParameterError("resolution must be at least 1 cell")
    hx = (g2.x1 - g2.x0) / in_x
    hy = (g2.y1 - g2.y0) / in_y
    pad_x = int(np.ceil(padding / hx))
    pad_y = int(np.ceil(padding / hy))
    ext = ExtendedGrid(
        x0=g2.x0 - pad_x * hx, y0=g2.y0 - pad_y * hy,
        hx=hx, hy=hy,
        ncx=in_x + 2 * pad_x, ncy=in_y + 2 * pad_y,
        pad_x=pad_x, pad_y=pad_y, in_x=in_x, in_y=in_y,
    )
    centers = ext.cell_centers()
    inside = ((centers[..., 0] > g2.x0) & (centers[..., 0] < g2.x1)
              & (centers[..., 1] > g2.y0) & (centers[..., 1] < g2.y1))

    A = np.broadcast_to(np.eye(3), (ext.ncy, ext.ncx, 3, 3)).copy()
    Mbar = np.zeros((ext.ncy, ext.ncx, 3))
    pts = centers[inside]
    gy = sample_gradient2(triple.y, pts)        # (n, 3, 2)
    bc = sample2(triple.b, pts)                 # (n, 3)
    A[inside] = np.concatenate([gy, bc[..., None]], axis=-1)
    Mbar[inside] = sample2(triple.M, pts)

    det = det3(A)
    if np.any(det <= 0):
        bad = np.argwhere(det <= 0)[0]
        raise NonEllipticError(
            f"det(A) = {det[tuple(bad)]:.3e} <= 0 at extended cell {tuple(bad)}",
            node=tuple(int(k) for k in bad),
        )
    Ainv = np.linalg.inv(A)
    B = det[..., None, None] * np.einsum("...ik,...jk->...ij", Ainv, Ainv)
    AiAit = np.einsum("...ik,...jk->...ij", Ainv, Ainv)
    lam = float(np.linalg.eigvalsh(AiAit).min())
    gvec = det[..., None] * np.einsum("...ij,...j->...i", Ainv, Mbar)
    return ExtendedCoefficients(
        grid=ext, A=A, Mbar=Mbar, B=B, lambda_eigen=lam,
        det=det, g=gvec, omega_mask=inside,
    )


def schur_conductivity(coeffs: ExtendedCoefficients):
    """(B', g') of the condensed scalar problem, per cell."""
    B = coeffs.B
    B33 = B[..., 2, 2]
    beta = B[..., :2, 2]
    Bhat = B[..., :2, :2]
    Bp = Bhat - np.einsum("...i,...j->...ij", beta, beta) / B33[..., None, None]
    gp = coeffs.g[..., :2] - beta * (coeffs.g[..., 2] / B33)[..., None]
    return Bp, gp


# Element matrices for bilinear quads; local node order (a, b) -> a*2 + b,
# node (i+a, j+b) of cell (i, j) with i along x.

def _element_matrices(hx, hy):
    K1x = np.array([[1.0, -1.0], [-1.0, 1.0]]) / hx
    M1x = np.array([[2.0, 1.0], [1.0, 2.0]]) * hx / 6.0
    K1y = np.array([[1.0, -1.0], [-1.0, 1.0]]) / hy
    M1y = np.array([[2.0, 1.0], [1.0, 2.0]]) * hy / 6.0
    D1 = np.array([[-0.5, -0.5], [0.5, 0.5]])  # int l_a' l_c
    Exx = np.einsum("ac,bd->abcd", K1x, M1y).reshape(4, 4)
    Eyy = np.einsum("ac,bd->abcd", M1x, K1y).reshape(4, 4)
    Exy = np.einsum("ac,db->abcd", D1, D1).reshape(4, 4)
    gx = np.array([-1.0, -1.0, 1.0, 1.0]) / (2 * hx)
    gy = np.array([-1.0, 1.0, -1.0, 1.0]) / (2 * hy)
    return Exx, Eyy, Exy, gx, gy


def _cell_node_indices(ext: ExtendedGrid):
    nn = ext.nnx
    ii, jj = np.meshgrid(np.arange(ext.ncx), np.arange(ext.ncy), indexing="ij")
    n00 = (ii * ext.nny + jj).ravel()
    # local order (a, b): [ (0,0), (0,1), (1,0), (1,1) ]
    return np.stack([n00, n00 + 1, n00 + ext.nny, n00 + ext.nny + 1], axis=1)


@dataclass
class StraySolution2D:
    """Solution of the condensed reduced system on the extended grid."""

    grid: ExtendedGrid
    U: np.ndarray              # nodal, (nnx, nny) indexed [i, j] (x, y)
    V: np.ndarray              # per cell, (ncy, ncx)
    gradU: np.ndarray          # center gradients, (ncy, ncx, 2)
    residual: float
    iterations: int
    mean_check: float
    energy_quadratic: np.ndarray = field(repr=False, default=None)
    # per-cell exact integrals int_c dU_k dU_l, shape (ncy, ncx, 2, 2)


def _pcg(Afree, f, tol, max_iter):
    x = np.zeros_like(f)
    nf = float(np.linalg.norm(f))
    if nf == 0.0:
        return x, 0.0, 0
    dinv = 1.0 / Afree.diagonal()
    r = f.copy()
    z = dinv * r
    p = z.copy()
    rz = float(r @ z)
    it = 0
    res = float(np.linalg.norm(r)) / nf
    while res > tol:
        if it >= max_iter:
            raise ConvergenceError(
                f"PCG failed to reach {tol:g} in {max_iter} iterations "
                f"(final relative residual {res:.3e})",
                residual=res, iterations=it,
            )
        Ap = Afree @ p
        alpha = rz / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        z = dinv * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
        res = float(np.linalg.norm(r)) / nf
    return x, res, it


def reduced_system(coeffs: ExtendedCoefficients, mu0):
    """Assemble (A_free, f_free, free_index) of the condensed SPD system."""
    if mu0 <= 0:
        raise InvalidParameterError("mu0 must be positive")
    ext = coeffs.grid
    Bp, gp = schur_conductivity(coeffs)
    B = coeffs.B
    B33 = B[..., 2, 2].T.ravel()           # cell-major [i, j]: transpose (ncy,ncx)->(ncx,ncy)
    beta = np.transpose(B[..., :2, 2], (1, 0, 2)).reshape(-1, 2)
    Bhat = np.transpose(B[..., :2, :2], (1, 0, 2, 3)).reshape(-1, 2, 2)
    gpf = np.transpose(gp, (1, 0, 2)).reshape(-1, 2)

    Exx, Eyy, Exy, gx, gy = _element_matrices(ext.hx, ext.hy)
    area = ext.cell_area
    Ke = (Bhat[:, 0, 0, None, None] * Exx[None]
          + Bhat[:, 1, 1, None, None] * Eyy[None]
          + Bhat[:, 0, 1, None, None] * (Exy + Exy.T)[None])
    tvec = beta[:, 0, None] * gx[None] + beta[:, 1, None] * gy[None]
    Ke = Ke - (area / B33)[:, None, None] * np.einsum("ci,cj->cij", tvec, tvec)
    Ke = Ke * mu0
    fe = area * (gpf[:, 0, None] * gx[None] + gpf[:, 1, None] * gy[None])

    loc = _cell_node_indices(ext)
    nglob = ext.nnx * ext.nny
    rows = np.repeat(loc, 4, axis=1).ravel()
    cols = np.tile(loc, (1, 4)).ravel()
    K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(nglob, nglob)).tocsr()
    f = np.zeros(nglob)
    np.add.at(f, loc.ravel(), fe.ravel())

    interior = np.ones((ext.nnx, ext.nny), dtype=bool)
    interior[0, :] = interior[-1, :] = False
    interior[:, 0] = interior[:, -1] = False
    free = np.flatnonzero(interior.ravel())
    return K[free][:, free].tocsr(), f[free], free


def solve_reduced(coeffs: ExtendedCoefficients, mu0=1.0, tol=1e-10, max_iter=100000):
    """Solve the condensed system, reconstruct V, and zero-mean U over omega."""
    ext = coeffs.grid
    Afree, ffree, free = reduced_system(coeffs, mu0)
    x, res, it = _pcg(Afree, ffree, tol, max_iter)
    U = np.zeros(ext.nnx * ext.nny)
    U[free] = x
    U = U.reshape(ext.nnx, ext.nny)

    # zero mean over omega (trapezoid on the omega node window)
    sl_i = slice(ext.pad_x, ext.pad_x + ext.in_x + 1)
    sl_j = slice(ext.pad_y, ext.pad_y + ext.in_y + 1)
    wx = trapezoid_weights(ext.in_x + 1, ext.hx)
    wy = trapezoid_weights(ext.in_y + 1, ext.hy)
    w = np.outer(wx, wy)
    omega_area = float(w.sum())
    mean = float(np.sum(U[sl_i, sl_j] * w)) / omega_area
    U = U - mean
    mean_check = abs(float(np.sum(U[sl_i, sl_j] * w)))

    gradx = (U[1:, :-1] + U[1:, 1:] - U[:-1, :-1] - U[:-1, 1:]) / (2 * ext.hx)
    grady = (U[:-1, 1:] + U[1:, 1:] - U[:-1, :-1] - U[1:, :-1]) / (2 * ext.hy)
    gradU = np.stack([gradx.T, grady.T], axis=-1)      # back to (ncy, ncx, 2)

    B = coeffs.B
    beta = B[..., :2, 2]
    B33 = B[..., 2, 2]
    V = (coeffs.g[..., 2] - mu0 * np.einsum("...k,...k->...", beta, gradU)) / (mu0 * B33)

    # exact per-cell integrals of gradient products, for the Galerkin identity
    Exx, Eyy, Exy, _, _ = _element_matrices(ext.hx, ext.hy)
    loc = _cell_node_indices(ext)
    Uloc = U.ravel()[loc]
    Qxx = np.einsum("ci,ij,cj->c", Uloc, Exx, Uloc)
    Qyy = np.einsum("ci,ij,cj->c", Uloc, Eyy, Uloc)
    Qxy = np.einsum("ci,ij,cj->c", Uloc, 0.5 * (Exy + Exy.T), Uloc)
    Q = np.empty((ext.ncx * ext.ncy, 2, 2))
    Q[:, 0, 0], Q[:, 1, 1] = Qxx, Qyy
    Q[:, 0, 1] = Q[:, 1, 0] = Qxy
    Q = np.transpose(Q.reshape(ext.ncx, ext.ncy, 2, 2), (1, 0, 2, 3))

    return StraySolution2D(
        grid=ext, U=U, V=V, gradU=gradU, residual=res, iterations=it,
        mean_check=mean_check, energy_quadratic=Q,
    )


def galerkin_identity(coeffs: ExtendedCoefficients, sol: StraySolution2D, mu0=1.0):
    """Both sides of the discrete weak-form identity, summed over the plane.

    lhs = mu0 sum_c int_c B (gradU, V).(gradU, V)
    rhs = sum_c int_c det(A) A^{-1} Mbar . (gradU, V)
    """
    ext = coeffs.grid
    B = coeffs.B
    area = ext.cell_area
    beta = B[..., :2, 2]
    B33 = B[..., 2, 2]
    Bhat_quad = np.einsum("...kl,...kl->...", B[..., :2, :2], sol.energy_quadratic)
    cross = 2.0 * sol.V * np.einsum("...k,...k->...", beta, sol.gradU) * area
    lhs = mu0 * float(np.sum(Bhat_quad + cross + B33 * sol.V**2 * area))
    rhs = float(np.sum(
        area * (np.einsum("...k,...k->...", coeffs.g[..., :2], sol.gradU)
                + coeffs.g[..., 2] * sol.V)
    ))
    return lhs, rhs


def magnetostatic_limit_term(coeffs: ExtendedCoefficients, sol: StraySolution2D, mu0=1.0):
    """(mu0/2) int_omega cof(A^T) M . (grad'U, V): per-cell over the film."""
    area = coeffs.grid.cell_area
    integrand = (np.einsum("...k,...k->...", coeffs.g[..., :2], sol.gradU)
                 + coeffs.g[..., 2] * sol.V)
    return 0.5 * mu0 * float(np.sum(integrand[coeffs.omega_mask]) * area)


def stray2d_diagnostics(coeffs: ExtendedCoefficients, sol: StraySolution2D, mu0=1.0):
    lhs, rhs = galerkin_identity(coeffs, sol, mu0)
    denom = max(abs(lhs), abs(rhs), 1e-300)
    return {
        "iterations": sol.iterations,
        "residual": sol.residual,
        "lambda_eigen": coeffs.lambda_eigen,
        "mean_check": sol.mean_check,
        "galerkin_lhs": lhs,
        "galerkin_rhs": rhs,
        "galerkin_rel_err": abs(lhs - rhs) / denom,
        "magnetostatic": magnetostatic_limit_term(coeffs, sol, mu0),
    }


# ---------------------------------------------------------------------------
# Rasterization of the deformed body
# ---------------------------------------------------------------------------

@dataclass
class Raster3D:
    """Voxelization of the deformed plate over a snapped, padded box."""

    origin: np.ndarray          # (3,)
    spacing: np.ndarray         # (3,)
    shape: tuple                # voxels per axis (nx, ny, nz)
    inside: np.ndarray          # bool, (nx, ny, nz)
    cell_of_voxel: np.ndarray   # int, flat cell index claiming each voxel (-1 outside)
    local_coords: np.ndarray    # (nx, ny, nz, 3) reference coords in the claiming cell
    covered_volume: float
    body_box: np.ndarray        # (2, 3) bounding box of the deformed body
    pinched_cells: int          # cells skipped for |det| ~ 0 at center

    @property
    def voxel_volume(self):
        return float(np.prod(self.spacing))

    def voxel_centers_axis(self, axis):
        return self.origin[axis] + self.spacing[axis] * (np.arange(self.shape[axis]) + 0.5)


def _deformed_cell_corners(config: Configuration3D):
    """Corner coordinates of every deformed cell, (ncell, 8, 3); corner
    order (dz, dy, dx) binary with dx fastest."""
    v = config.yh.values
    corners = []
    for dz in (0, 1):
        for dy in (0, 1):
            for dx in (0, 1):
                nz, ny, nx = v.shape[:3]
                corners.append(v[dz:nz - 1 + dz, dy:ny - 1 + dy, dx:nx - 1 + dx])
    return np.stack(corners, axis=3).reshape(-1, 8, 3)


# trilinear shape functions on [-1,1]^3, corner signs matching the order above
_CORNER_SIGNS = np.array(
    [[dx * 2 - 1, dy * 2 - 1, dz * 2 - 1]
     for dz in (0, 1) for dy in (0, 1) for dx in (0, 1)], dtype=float,
)


def _trilinear_weights(xi):
    """Shape weights (n, 8) at reference coordinates xi (n, 3)."""
    n = len(xi)
    w = np.empty((n, 8))
    for c in range(8):
        s0, s1, s2 = _CORNER_SIGNS[c]
        w[:, c] = 0.125 * (1 + s0 * xi[:, 0]) * (1 + s1 * xi[:, 1]) * (1 + s2 * xi[:, 2])
    return w


def _trilinear_eval(corners, xi):
    """corners (n, 8, 3), xi (n, 3) -> points (n, 3) and Jacobians (n, 3, 3)
    with J[:, j, k] = d point_j / d xi_k."""
    n = len(xi)
    w = np.empty((n, 8))
    d0 = np.empty((n, 8))
    d1 = np.empty((n, 8))
    d2 = np.empty((n, 8))
    x0, x1, x2 = xi[:, 0], xi[:, 1], xi[:, 2]
    for c in range(8):
        s0, s1, s2 = _CORNER_SIGNS[c]
        a = 1.0 + s0 * x0
        b = 1.0 + s1 * x1
        g = 1.0 + s2 * x2
        bg = b * g
        w[:, c] = 0.125 * a * bg
        d0[:, c] = 0.125 * s0 * bg
        d1[:, c] = (0.125 * s1) * a * g
        d2[:, c] = (0.125 * s2) * a * b
    pts = np.einsum("nc,ncj->nj", w, corners)
    J = np.empty((n, 3, 3))
    J[:, :, 0] = np.einsum("nc,ncj->nj", d0, corners)
    J[:, :, 1] = np.einsum("nc,ncj->nj", d1, corners)
    J[:, :, 2] = np.einsum("nc,ncj->nj", d2, corners)
    return pts, J


def _solve3(J, r):
    """Batched 3x3 solve by explicit cofactors (regularized if singular)."""
    c00 = J[:, 1, 1] * J[:, 2, 2] - J[:, 1, 2] * J[:, 2, 1]
    c01 = J[:, 1, 2] * J[:, 2, 0] - J[:, 1, 0] * J[:, 2, 2]
    c02 = J[:, 1, 0] * J[:, 2, 1] - J[:, 1, 1] * J[:, 2, 0]
    det = J[:, 0, 0] * c00 + J[:, 0, 1] * c01 + J[:, 0, 2] * c02
    det = np.where(np.abs(det) > 1e-300, det, 1e-300)
    c10 = J[:, 0, 2] * J[:, 2, 1] - J[:, 0, 1] * J[:, 2, 2]
    c11 = J[:, 0, 0] * J[:, 2, 2] - J[:, 0, 2] * J[:, 2, 0]
    c12 = J[:, 0, 1] * J[:, 2, 0] - J[:, 0, 0] * J[:, 2, 1]
    c20 = J[:, 0, 1] * J[:, 1, 2] - J[:, 0, 2] * J[:, 1, 1]
    c21 = J[:, 0, 2] * J[:, 1, 0] - J[:, 0, 0] * J[:, 1, 2]
    c22 = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    x0 = (c00 * r[:, 0] + c10 * r[:, 1] + c20 * r[:, 2]) / det
    x1 = (c01 * r[:, 0] + c11 * r[:, 1] + c21 * r[:, 2]) / det
    x2 = (c02 * r[:, 0] + c12 * r[:, 1] + c22 * r[:, 2]) / det
    return np.stack([x0, x1, x2], axis=1)


def invert_trilinear(corners, targets, iters=25, tol=1e-13):
    """Newton inversion of the trilinear map; returns (xi, residual norms).

    Runs on a shrinking active set: points whose update stalls below the
    tolerance are frozen.  Residuals are only evaluated for points that
    ended near the reference cube; far points report +inf (they cannot be
    containment hits)."""
    n = len(targets)
    xi = np.zeros((n, 3))
    resid = np.full(n, np.inf)
    if n == 0:
        return xi, resid
    cur = np.arange(n)
    cor, tgt = corners, targets
    for _ in range(iters):
        pts, J = _trilinear_eval(cor, xi[cur])
        step = _solve3(J, pts - tgt)
        xi[cur] = np.clip(xi[cur] - step, -4.0, 4.0)
        live = np.abs(step).max(axis=1) >= tol
        if not live.any():
            break
        keep = np.flatnonzero(live)
        cur, cor, tgt = cur[keep], cor[keep], tgt[keep]
    near = np.flatnonzero(np.abs(xi).max(axis=1) <= 1.5)
    if len(near):
        pts, _ = _trilinear_eval(corners[near], xi[near])
        resid[near] = np.linalg.norm(pts - targets[near], axis=-1)
    return xi, resid


def _snapped_axis(lo, hi, resolution, padding):
    extent = hi - lo
    if extent <= 0:
        # zero-measure image along this axis (every cell pinched flat)
        return lo - padding, 2, padding
    nb = max(1, int(round(extent * resolution)))
    d = extent / nb
    npad = max(1, int(np.ceil(padding / d)))
    return lo - npad * d, nb + 2 * npad, d


def rasterize_deformed(config: Configuration3D, resolution=64, padding=0.25,
                       strict=True, pinch_tol=1e-12):
    """Voxel indicator of the deformed body by point-in-hexahedron tests.

    A voxel belongs to the body iff its center lies in the image of at
    least one deformed trilinear cell (inverse trilinear iteration); the
    lowest claiming cell index wins, deterministically.  Cells whose
    center Jacobian is negative raise ``RasterizationError`` when
    ``strict``; cells pinched flat (|det| <= pinch_tol relative) carry no
    volume and are skipped but counted.
    """
    from .model import grad_h  # local import to avoid cycle at module load

    g3 = config.grid
    corners = _deformed_cell_corners(config)
    dets = det3(grad_h(config.yh, config.h).reshape(-1, 3, 3))
    scale = float(np.max(np.abs(dets))) or 1.0
    pinched = np.abs(dets) <= pinch_tol * scale
    inverted = dets < -pinch_tol * scale
    if strict and np.any(inverted):
        idx = int(np.argmax(inverted))
        raise RasterizationError(
            f"deformed cell {idx} is inverted (det = {dets[idx]:.3e})", cell=idx
        )
    active = ~pinched & ~inverted if strict else ~pinched

    lo = corners.min(axis=(0, 1))
    hi = corners.max(axis=(0, 1))
    ox, nx, dx = _snapped_axis(lo[0], hi[0], resolution, padding)
    oy, ny, dy = _snapped_axis(lo[1], hi[1], resolution, padding)
    oz, nz, dz = _snapped_axis(lo[2], hi[2], resolution, padding)
    origin = np.array([ox, oy, oz])
    spacing = np.array([dx, dy, dz])
    shape = (nx, ny, nz)

    # broad phase: integer voxel ranges per active cell
    act_idx = np.flatnonzero(active)
    c_lo = corners[act_idx].min(axis=1)
    c_hi = corners[act_idx].max(axis=1)
    i_lo = np.floor((c_lo - origin) / spacing - 0.5).astype(int)
    i_hi = np.ceil((c_hi - origin) / spacing - 0.5).astype(int)
    i_lo = np.clip(i_lo, 0, np.array(shape) - 1)
    i_hi = np.clip(i_hi, 0, np.array(shape) - 1)

    spans = i_hi - i_lo + 1
    # batch cells by identical span shape so candidate triples vectorize
    pair_cell_chunks = []
    vox_chunks = []
    shape_keys = spans[:, 0] * 1000000 + spans[:, 1] * 1000 + spans[:, 2]
    for key in np.unique(shape_keys):
        sel = np.flatnonzero(shape_keys == key)
        s = spans[sel[0]]
        off = np.stack(np.meshgrid(np.arange(s[0]), np.arange(s[1]),
                                   np.arange(s[2]), indexing="ij"),
                       axis=-1).reshape(-1, 3)
        vox_chunks.append((i_lo[sel][:, None, :] + off[None, :, :]).reshape(-1, 3))
        pair_cell_chunks.append(np.repeat(act_idx[sel], len(off)))
    pair_cell = (np.concatenate(pair_cell_chunks)
                 if pair_cell_chunks else np.empty(0, dtype=int))
    vox = (np.concatenate(vox_chunks)
           if vox_chunks else np.empty((0, 3), dtype=int))

    targets = origin + spacing * (vox + 0.5)
    xi, resid = invert_trilinear(corners[pair_cell], targets)
    diam = float(np.linalg.norm(spacing))
    hit = (np.max(np.abs(xi), axis=1) <= 1.0 + 1e-9) & (resid <= 1e-9 * (1.0 + diam))

    inside = np.zeros(shape, dtype=bool)
    cell_of_voxel = np.full(shape, -1, dtype=int)
    local = np.zeros(shape + (3,))
    if np.any(hit):
        hv = vox[hit]
        hc = pair_cell[hit]
        hx_ = xi[hit]
        flat = (hv[:, 0] * ny + hv[:, 1]) * nz + hv[:, 2]
        order = np.lexsort((hc, flat))
        flat_s, hc_s, hx_s = flat[order], hc[order], hx_[order]
        first = np.ones(len(flat_s), dtype=bool)
        first[1:] = flat_s[1:] != flat_s[:-1]
        fsel = np.flatnonzero(first)
        iv = np.unravel_index(flat_s[fsel], shape)
        inside[iv] = True
        cell_of_voxel[iv] = hc_s[fsel]
        local[iv] = hx_s[fsel]

    covered = float(inside.sum()) * float(np.prod(spacing))
    return Raster3D(
        origin=origin, spacing=spacing, shape=shape, inside=inside,
        cell_of_voxel=cell_of_voxel, local_coords=local,
        covered_volume=covered, body_box=np.stack([lo, hi]),
        pinched_cells=int(pinched.sum()),
    )


# ---------------------------------------------------------------------------
# Full 3D Maxwell potential on the truncated box
# ---------------------------------------------------------------------------

@dataclass
class StraySolution3D:
    """Truncated-box Maxwell potential and its energy."""

    origin: np.ndarray
    spacing: np.ndarray
    u: np.ndarray            # nodal potential, shape (nx+1, ny+1, nz+1)
    chi: np.ndarray          # voxel indicator
    residual: float
    energy: float            # mu0 int |grad u|^2 over the box
    raster: Raster3D


def _voxel_magnetization(config: Configuration3D, raster: Raster3D):
    """Unit magnetization per inside voxel, transported via the cell map."""
    g3 = config.grid
    npl = g3.plane
    Mv = config.Mh.values.reshape(-1, 3)
    nzc, nyc, nxc = g3.nz - 1, npl.ny - 1, npl.nx - 1
    cell = raster.cell_of_voxel[raster.inside]
    kz, ky, kx = np.unravel_index(cell, (nzc, nyc, nxc))
    xi = raster.local_coords[raster.inside]
    w = _trilinear_weights(xi)
    # gather corner values in the corner order of _deformed_cell_corners
    m = np.zeros((len(cell), 3))
    c = 0
    for dz in (0, 1):
        for dy in (0, 1):
            for dx in (0, 1):
                idx = ((kz + dz) * npl.ny + (ky + dy)) * npl.nx + (kx + dx)
                m += w[:, c, None] * Mv[idx]
                c += 1
    norms = np.linalg.norm(m, axis=-1)
    norms = np.where(norms > 0, norms, 1.0)
    return m / norms[:, None]


def solve_full3d(config: Configuration3D, mu0=1.0, padding=1.0, resolution=64,
                 tol=1e-8, raster=None):
    """Solve div(-mu0 grad u + chi m) = 0 on the padded box, u = 0 on its
    boundary, by DST diagonalization of the trilinear stiffness."""
    if mu0 <= 0:
        raise InvalidParameterError("mu0 must be positive")
    if padding < config.h:
        raise InvalidParameterError(
            f"padding {padding:g} must be at least the thickness {config.h:g}"
        )
    if raster is None:
        raster = rasterize_deformed(config, resolution=resolution, padding=padding)
    nx, ny, nz = raster.shape
    dx, dy, dz = (float(s) for s in raster.spacing)
    m = np.zeros(raster.shape + (3,))
    m[raster.inside] = _voxel_magnetization(config, raster)

    # RHS: f_i = sum_vox m . int_vox grad phi_i ; exact for voxelwise-constant m
    f = np.zeros((nx + 1, ny + 1, nz + 1))
    wx = m[..., 0] * (dy * dz / 4.0)
    wy = m[..., 1] * (dx * dz / 4.0)
    wz = m[..., 2] * (dx * dy / 4.0)
    for di in (0, 1):
        si = 1.0 if di else -1.0
        for dj in (0, 1):
            sj = 1.0 if dj else -1.0
            for dk in (0, 1):
                sk = 1.0 if dk else -1.0
                f[di:nx + di, dj:ny + dj, dk:nz + dk] += si * wx + sj * wy + sk * wz

    fi = f[1:-1, 1:-1, 1:-1]

    def modal(n, d):
        theta = np.arange(1, n + 1) * np.pi / (n + 1)
        return ((2.0 - 2.0 * np.cos(theta)) / d,
                (4.0 + 2.0 * np.cos(theta)) * d / 6.0)

    Kx, Mx = modal(nx - 1, dx)
    Ky, My = modal(ny - 1, dy)
    Kz, Mz = modal(nz - 1, dz)
    lam = (Kx[:, None, None] * My[None, :, None] * Mz[None, None, :]
           + Mx[:, None, None] * Ky[None, :, None] * Mz[None, None, :]
           + Mx[:, None, None] * My[None, :, None] * Kz[None, None, :])
    ui = idstn(dstn(fi, type=1) / (mu0 * lam), type=1)

    u = np.zeros((nx + 1, ny + 1, nz + 1))
    u[1:-1, 1:-1, 1:-1] = ui

    # true algebraic residual of the tensor-product operator
    def K1d(a, d, axis):
        return correlate1d(a, np.array([-1.0, 2.0, -1.0]) / d, axis=axis, mode="constant")

    def M1d(a, d, axis):
        return correlate1d(a, np.array([1.0, 4.0, 1.0]) * d / 6.0, axis=axis, mode="constant")

    Ku = (K1d(M1d(M1d(ui, dz, 2), dy, 1), dx, 0)
          + M1d(K1d(M1d(ui, dz, 2), dy, 1), dx, 0)
          + M1d(M1d(K1d(ui, dz, 2), dy, 1), dx, 0))
    nf = float(np.linalg.norm(fi))
    res = float(np.linalg.norm(mu0 * Ku - fi)) / nf if nf > 0 else 0.0
    if res > tol:
        raise ConvergenceError(
            f"3D solve residual {res:.3e} above tolerance {tol:g}", residual=res
        )
    energy = float(np.sum(fi * ui))  # = mu0 u^T K u = mu0 int |grad u|^2
    return StraySolution3D(
        origin=raster.origin, spacing=raster.spacing, u=u,
        chi=raster.inside.astype(float), residual=res, energy=energy,
        raster=raster,
    )
