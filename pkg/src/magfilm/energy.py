"""Energy evaluators for the rescaled plate functional and its thin-film limit.

Both evaluators share the quadrature conventions of the model module:
one-point (cell-center) rules for first-gradient integrands, nodal
trapezoid for the second-gradient term.  The limit magnetostatic term is
evaluated through the reduced stray solution in the form

    (mu0/2) sum_{cells in omega} |c| det(A) A^{-1} M . (grad'U, V)

which by the discrete Galerkin identity equals (mu0^2/2) int B p.p and is
therefore nonnegative.  (The transposed-cofactor convention: cof(A^T) M =
det(A) A^{-1} M.)

``grad_limit`` returns the exact gradient of the discrete limit energy.
The magnetostatic part exploits self-adjointness of the stray system: for
m(a) = (mu0/2) l_a(q_a) with a_B(q, q') = l(q'), one has

    dm = mu0 dl(q) - (mu0/2) da(q, q),

so the solution is its own adjoint state and no second solve is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError
from .grids import (
    apply_along,
    cell_average2,
    cell_average2_adjoint,
    cell_gradient2,
    cell_gradient2_adjoint,
    d1_matrix,
    d2_matrix,
    nodal_weights2,
    nodal_weights3,
)
from .model import (
    AdmissibleTriple,
    det3,
    Configuration3D,
    MaterialParams,
    elastic_W,
    elastic_W_grad,
    grad_h,
    hess_h,
    limit_gradient_cells,
    phi,
    phi_grad,
    planar_gradient_nodal,
    planar_hessian,
)
from .stray import (
    StrayOptions,
    assemble_reduced,
    magnetostatic_limit_term,
    solve_full3d,
    solve_reduced,
)

CSV_HEADER = "h,elastic,exchange,second_gradient,barrier,magnetostatic,total,finite"


@dataclass
class EnergyBreakdown:
    """Per-term energy values; infinite sentinel terms poison the total."""

    elastic: float
    exchange: float
    second_gradient: float
    barrier: float
    magnetostatic: float

    @property
    def total(self):
        terms = (self.elastic, self.exchange, self.second_gradient,
                 self.barrier, self.magnetostatic)
        return float(sum(terms)) if all(np.isfinite(t) for t in terms) else np.inf

    @property
    def finite(self):
        return bool(np.isfinite(self.total))

    def csv_row(self, h=None):
        cells = [] if h is None else [f"{h:.17g}"]
        for t in (self.elastic, self.exchange, self.second_gradient,
                  self.barrier, self.magnetostatic, self.total):
            cells.append(f"{t:.17g}")
        cells.append("1" if self.finite else "0")
        return ",".join(cells)

    def key_values(self):
        return {
            "elastic": self.elastic,
            "exchange": self.exchange,
            "second_gradient": self.second_gradient,
            "barrier": self.barrier,
            "magnetostatic": self.magnetostatic,
            "total": self.total,
            "finite": int(self.finite),
        }


def _second_gradient_limit(triple: AdmissibleTriple, params: MaterialParams):
    Hy = planar_hessian(triple.y)                  # (ny, nx, 3, 2, 2)
    Db = planar_gradient_nodal(triple.b)           # (ny, nx, 3, 2)
    E = np.sum(Hy**2, axis=(-3, -2, -1)) + 2.0 * np.sum(Db**2, axis=(-2, -1))
    w = nodal_weights2(triple.grid)
    return float(np.sum(w * E ** (params.p / 2))), (Hy, Db, E, w)


def energy_limit(triple: AdmissibleTriple, params: MaterialParams,
                 stray: StrayOptions | None = None):
    """Evaluate the limit functional on an admissible film state."""
    stray = stray or StrayOptions()
    g2 = triple.grid
    w = g2.cell_area
    A = limit_gradient_cells(triple.y, triple.b)
    det = det3(A)
    Mc = cell_average2(triple.M.values)
    Gc = np.zeros(A.shape)
    Gc[..., :2] = cell_gradient2(triple.M.values, g2)

    lam = Mc / np.linalg.norm(Mc, axis=-1, keepdims=True)
    elastic = float(np.sum(elastic_W(A, lam, params)) * w)
    second_gradient, _ = _second_gradient_limit(triple, params)
    barrier = float(np.sum(phi(A, params)) * w)

    if np.any(det <= 0):
        return EnergyBreakdown(elastic, np.inf, second_gradient, np.inf, np.inf)

    H = np.linalg.solve(np.swapaxes(A, -1, -2), Gc)
    exchange = params.alpha * float(np.sum(np.sum(H * H, axis=(-2, -1)) * det) * w)

    coeffs = assemble_reduced(triple, padding=stray.padding, resolution=stray.resolution)
    sol = solve_reduced(coeffs, mu0=params.mu0, tol=stray.tol, max_iter=stray.max_iter)
    magnetostatic = magnetostatic_limit_term(coeffs, sol, mu0=params.mu0)
    return EnergyBreakdown(elastic, exchange, second_gradient, barrier, magnetostatic)


def energy_3d(config: Configuration3D, params: MaterialParams,
              stray: StrayOptions | None = None):
    """Evaluate the rescaled plate energy on a 3D configuration."""
    stray = stray or StrayOptions()
    norms = np.linalg.norm(config.Mh.values, axis=-1)
    if np.max(np.abs(norms - 1.0)) > 1e-12:
        raise InvalidParameterError("configuration magnetization must be unit length")
    g3 = config.grid
    w = g3.cell_volume
    F = grad_h(config.yh, config.h)
    det = det3(F)
    v = config.Mh.values
    Mc = 0.125 * (v[:-1, :-1, :-1] + v[:-1, :-1, 1:] + v[:-1, 1:, :-1] + v[:-1, 1:, 1:]
                  + v[1:, :-1, :-1] + v[1:, :-1, 1:] + v[1:, 1:, :-1] + v[1:, 1:, 1:])
    lam = Mc / np.linalg.norm(Mc, axis=-1, keepdims=True)
    elastic = float(np.sum(elastic_W(F, lam, params)) * w)

    H3 = hess_h(config.yh, config.h)
    wn = nodal_weights3(g3)
    sg = float(np.sum(wn * np.sum(H3**2, axis=(-3, -2, -1)) ** (params.p / 2)))

    if np.any(det <= 0):
        return EnergyBreakdown(elastic, np.inf, sg, np.inf, np.inf)

    barrier = float(np.sum(phi(F, params)) * w)
    GM = grad_h(config.Mh, config.h)
    HM = np.linalg.solve(np.swapaxes(F, -1, -2), GM)
    exchange = params.alpha * float(np.sum(np.sum(HM * HM, axis=(-2, -1)) * det) * w)

    sol3 = solve_full3d(
        config, mu0=params.mu0, padding=stray.padding,
        resolution=stray.voxels_per_unit, tol=max(stray.tol, 1e-8),
    )
    magnetostatic = sol3.energy / (2.0 * config.h)
    return EnergyBreakdown(elastic, exchange, sg, barrier, magnetostatic)


# ---------------------------------------------------------------------------
# Gradient of the discrete limit functional
# ---------------------------------------------------------------------------

@dataclass
class LimitGradient:
    dy: np.ndarray             # (ny, nx, 3), zero on boundary nodes
    db: np.ndarray             # (ny, nx, 3), zero on boundary nodes
    dM: np.ndarray             # (ny, nx, 3), tangent to the sphere nodewise
    min_det: float
    barrier_dominated: bool    # min_det fell below the requested floor

    def norm(self):
        return float(np.sqrt(np.sum(self.dy**2) + np.sum(self.db**2)
                             + np.sum(self.dM**2)))


def grad_limit(triple: AdmissibleTriple, params: MaterialParams,
               stray: StrayOptions | None = None, det_floor=0.0):
    """Nodal gradient of the discrete limit energy (delta y, delta b,
    tangential delta M); boundary rows of y and b are zeroed."""
    stray = stray or StrayOptions()
    g2 = triple.grid
    if stray.resolution is not None and stray.resolution != g2.nx - 1:
        raise InvalidParameterError(
            "grad_limit requires the stray resolution to match the film grid"
        )
    w = g2.cell_area
    A = limit_gradient_cells(triple.y, triple.b)
    det = det3(A)
    min_det = float(det.min())
    if min_det <= 0:
        raise InvalidParameterError("gradient undefined: det(grad'y|b) <= 0 somewhere")
    Ainv = np.linalg.inv(A)
    Ait = np.swapaxes(Ainv, -1, -2)
    Mc = cell_average2(triple.M.values)
    Mn = np.linalg.norm(Mc, axis=-1, keepdims=True)
    lam = Mc / Mn
    Gc = np.zeros(A.shape)
    Gc[..., :2] = cell_gradient2(triple.M.values, g2)

    dA = np.zeros_like(A)
    dM_cells = np.zeros_like(Mc)
    dG_cells = np.zeros(A.shape[:-2] + (3, 2))

    # elastic; the interpolated magnetization is normalized at the
    # quadrature point, so the chain rule carries a tangential projection
    dWdF, dWdl = elastic_W_grad(A, lam, params)
    dA += w * dWdF
    proj = dWdl - np.sum(dWdl * lam, axis=-1, keepdims=True) * lam
    dM_cells += w * proj / Mn

    # barrier
    dA += w * phi_grad(A, params)

    # exchange: alpha |A^{-T} G|^2 det(A)
    H = np.linalg.solve(np.swapaxes(A, -1, -2), Gc)
    H2 = np.sum(H * H, axis=(-2, -1))
    cof = det[..., None, None] * Ait
    HHt = np.einsum("...ik,...jk->...ij", H, H)
    dA += params.alpha * w * (H2[..., None, None] * cof
                              - 2.0 * det[..., None, None] * HHt @ Ait)
    dG = 2.0 * params.alpha * w * det[..., None, None] * np.einsum(
        "...ij,...jk->...ik", Ainv, H
    )
    dG_cells += dG[..., :2]

    # magnetostatic (self-adjoint stray structure); use the solver's own
    # coefficient arrays so the chain matches the assembled system exactly
    coeffs = assemble_reduced(triple, padding=stray.padding, resolution=None)
    sol = solve_reduced(coeffs, mu0=params.mu0, tol=stray.tol, max_iter=stray.max_iter)
    mu0 = params.mu0
    sl = coeffs.grid.omega_cell_slice()
    area = coeffs.grid.cell_area
    gradU = sol.gradU[sl]
    V = sol.V[sl]
    q = np.concatenate([gradU, V[..., None]], axis=-1)
    As = coeffs.A[sl]
    dets = coeffs.det[sl]
    Ainv_s = np.linalg.inv(As)
    Ait_s = np.swapaxes(Ainv_s, -1, -2)
    gvec = coeffs.g[sl]
    Mbar = coeffs.Mbar[sl]
    # S couples the exactly-integrated U block with center-value V couplings
    S = np.empty(As.shape)
    S[..., :2, :2] = sol.energy_quadratic[sl]
    S[..., :2, 2] = area * gradU * V[..., None]
    S[..., 2, :2] = S[..., :2, 2]
    S[..., 2, 2] = area * V**2
    P = -(mu0**2 / 2.0) * S
    trPB = np.einsum("...ij,...ij->...", P, coeffs.B[sl])
    dA += trPB[..., None, None] * Ait_s
    dA += -2.0 * dets[..., None, None] * np.einsum(
        "...ij,...jk,...kl,...lm->...im", Ait_s, P, Ainv_s, Ait_s
    )
    qg = np.einsum("...k,...k->...", q, gvec)
    r = np.einsum("...ij,...j->...i", Ait_s, q)
    AiM = np.einsum("...ij,...j->...i", Ainv_s, Mbar)
    dA += mu0 * area * (qg[..., None, None] * Ait_s
                        - dets[..., None, None] * np.einsum("...i,...j->...ij", r, AiM))
    dM_cells += mu0 * area * dets[..., None] * r

    gy = cell_gradient2_adjoint(dA[..., :2], g2, triple.y.values.shape)
    gb = cell_average2_adjoint(dA[..., 2], triple.b.values.shape)
    gM = cell_average2_adjoint(dM_cells, triple.M.values.shape)
    gM += cell_gradient2_adjoint(dG_cells, g2, triple.M.values.shape)

    # second-gradient term (nodal trapezoid)
    _, (Hy, Db, E, wn) = _second_gradient_limit(triple, params)
    p = params.p
    fac = wn * (p / 2.0) * np.where(E > 0, E, 1.0) ** ((p - 2) / 2)
    fac = np.where(E > 0, fac, 0.0)
    dHy = 2.0 * fac[..., None, None, None] * Hy
    dDb = 4.0 * fac[..., None, None] * Db
    d1x, d1y = d1_matrix(g2.nx, g2.hx), d1_matrix(g2.ny, g2.hy)
    d2x, d2y = d2_matrix(g2.nx, g2.hx), d2_matrix(g2.ny, g2.hy)
    gy += apply_along(dHy[..., 0, 0], d2x.T, 1)
    gy += apply_along(dHy[..., 1, 1], d2y.T, 0)
    mixed = dHy[..., 0, 1] + dHy[..., 1, 0]
    gy += apply_along(apply_along(mixed, d1y.T, 0), d1x.T, 1)
    gb += apply_along(dDb[..., 0], d1x.T, 1)
    gb += apply_along(dDb[..., 1], d1y.T, 0)

    bd = g2.boundary_mask()
    gy[bd] = 0.0
    gb[bd] = 0.0
    Mv = triple.M.values
    gM = gM - np.sum(gM * Mv, axis=-1, keepdims=True) * Mv

    return LimitGradient(
        dy=gy, db=gb, dM=gM, min_det=min_det,
        barrier_dominated=bool(min_det < det_floor),
    )
