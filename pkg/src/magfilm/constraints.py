"""Audits of the global-injectivity and admissibility conditions.

Each check reports evidence, not proof: measured image volumes and areas
come from rasterization with an explicit slack of half a boundary layer,
constants are minimized over a fixed low-discrepancy pair sample, and
self-intersection is a budgeted sampling of deformed-cell overlaps.  The
canonical corpus (identity / fold / crossing / stretch) reproduces the
three classes of the constraint discussion: injective, folded (volume
check fails), and self-crossing (volume check passes while overlap
sampling fires).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, MagfilmError
from .grids import Field, Grid2, cell_gradient2, sample2, trapezoid_weights
from .model import Configuration3D, MaterialParams, det3, grad_h, phi
from .stray import (
    Raster3D,
    _deformed_cell_corners,
    _trilinear_eval,
    invert_trilinear,
    rasterize_deformed,
)

CSV_HEADER = ("scenario,cn_integral,cn_measured,cn_slack,cn_satisfied,"
              "area_lhs,area_rhs,area_slack,area_satisfied,"
              "avg_inv_constant,bilip_constant,min_det,self_intersects")


class DegenerateSurfaceError(MagfilmError):
    """The deformed surface has an (almost) everywhere-degenerate normal."""


@dataclass
class ConstraintReport:
    cn_integral: float = np.nan
    cn_measured: float = np.nan
    cn_slack: float = np.nan
    cn_satisfied: bool = False
    area_lhs: float = np.nan
    area_rhs: float = np.nan
    area_slack: float = np.nan
    area_satisfied: bool = False
    avg_inv_constant: float = np.nan
    bilip_constant: float = np.nan
    min_det: float = np.nan
    self_intersects: bool = False

    def csv_row(self, scenario=""):
        vals = [scenario]
        for v in (self.cn_integral, self.cn_measured, self.cn_slack):
            vals.append(f"{v:.17g}")
        vals.append("1" if self.cn_satisfied else "0")
        for v in (self.area_lhs, self.area_rhs, self.area_slack):
            vals.append(f"{v:.17g}")
        vals.append("1" if self.area_satisfied else "0")
        for v in (self.avg_inv_constant, self.bilip_constant, self.min_det):
            vals.append(f"{v:.17g}")
        vals.append("1" if self.self_intersects else "0")
        return ",".join(vals)

    def key_values(self):
        return {
            "cn_integral": self.cn_integral,
            "cn_measured": self.cn_measured,
            "cn_slack": self.cn_slack,
            "cn_satisfied": int(self.cn_satisfied),
            "area_lhs": self.area_lhs,
            "area_rhs": self.area_rhs,
            "area_slack": self.area_slack,
            "area_satisfied": int(self.area_satisfied),
            "avg_inv_constant": self.avg_inv_constant,
            "bilip_constant": self.bilip_constant,
            "min_det": self.min_det,
            "self_intersects": int(self.self_intersects),
        }


# ---------------------------------------------------------------------------
# Volume (Ciarlet-Necas) check, rescaled
# ---------------------------------------------------------------------------

def _surface_voxel_count(inside):
    pad = np.pad(inside, 1, constant_values=False)
    core = pad[1:-1, 1:-1, 1:-1]
    surf = np.zeros_like(core)
    for axis in range(3):
        lo = np.roll(pad, 1, axis=axis)[1:-1, 1:-1, 1:-1]
        hi = np.roll(pad, -1, axis=axis)[1:-1, 1:-1, 1:-1]
        surf |= core & (~lo | ~hi)
    return int(np.count_nonzero(surf))


def check_cn_3d(config: Configuration3D, resolution=64, padding=0.25,
                raster: Raster3D | None = None):
    """Rescaled volume inequality: int det grad_h y  vs  |image| / h.

    The geometric slack is half a voxel layer over the measured surface,
    the uncertainty of voxel-center membership.
    """
    if raster is None:
        raster = rasterize_deformed(config, resolution=resolution, padding=padding)
    dets = det3(grad_h(config.yh, config.h))
    cn_integral = float(np.sum(dets)) * config.grid.cell_volume
    cn_measured = raster.covered_volume / config.h
    slack = 0.5 * _surface_voxel_count(raster.inside) * raster.voxel_volume / config.h
    return cn_integral, cn_measured, bool(cn_integral <= cn_measured + slack), slack


# ---------------------------------------------------------------------------
# Film area check
# ---------------------------------------------------------------------------

def check_area_2d(y: Field, dedup_eps=None, normal_tol=0.9):
    """Deformed-film area: change-of-variables value vs measured image area.

    The measured side integrates one representative per cluster of
    coincident, parallel surface samples from non-adjacent cells (a
    spatial-hash grid at a quarter cell diameter), so folded sheets count
    once while transversal crossings keep their full area.
    """
    if not isinstance(y.grid, Grid2) or y.ncomp != 3:
        raise InvalidParameterError("check_area_2d expects a 3-component Grid2 field")
    g = y.grid
    G = cell_gradient2(y.values, g)               # (ncy, ncx, 3, 2)
    cross = np.cross(G[..., 0], G[..., 1])
    crossn = np.linalg.norm(cross, axis=-1)
    if float(crossn.max()) <= 1e-14:
        raise DegenerateSurfaceError("deformed surface has degenerate normals everywhere")
    area_lhs = float(np.sum(crossn)) * g.cell_area

    centers01 = g.cell_centers()
    pts = sample2(y, centers01)                   # deformed cell centers (ncy, ncx, 3)
    w = crossn * g.cell_area
    safe = np.where(crossn > 0, crossn, 1.0)
    normals = cross / safe[..., None]

    ncy, ncx = crossn.shape
    jj, ii = np.meshgrid(np.arange(ncy), np.arange(ncx), indexing="ij")
    P = pts.reshape(-1, 3)
    N = normals.reshape(-1, 3)
    W = w.ravel()
    IJ = np.stack([jj.ravel(), ii.ravel()], axis=1)
    eps = dedup_eps if dedup_eps is not None else 0.25 * float(np.hypot(g.hx, g.hy))

    keys = np.floor(P / eps).astype(np.int64)
    buckets = {}
    for k in range(len(P)):
        buckets.setdefault(tuple(keys[k]), []).append(k)

    canonical = np.full(len(P), -1, dtype=int)
    for k in range(len(P)):
        if canonical[k] >= 0:
            continue
        canonical[k] = k
        kk = keys[k]
        for dz in (-1, 0, 1):
            for dyb in (-1, 0, 1):
                for dxb in (-1, 0, 1):
                    group = buckets.get((kk[0] + dz, kk[1] + dyb, kk[2] + dxb))
                    if not group:
                        continue
                    for m in group:
                        if m <= k or canonical[m] >= 0:
                            continue
                        if max(abs(IJ[m, 0] - IJ[k, 0]), abs(IJ[m, 1] - IJ[k, 1])) < 2:
                            continue
                        if np.linalg.norm(P[m] - P[k]) > eps:
                            continue
                        if abs(float(N[m] @ N[k])) < normal_tol:
                            continue
                        canonical[m] = k
    first = canonical == np.arange(len(P))
    area_rhs = float(np.sum(W[first]))
    slack = 0.5 * (2.0 * (g.x1 - g.x0) + 2.0 * (g.y1 - g.y0)) * max(g.hx, g.hy)
    return area_lhs, area_rhs, bool(area_lhs <= area_rhs + slack), slack


# ---------------------------------------------------------------------------
# Averaged invertibility and bi-Lipschitz constants
# ---------------------------------------------------------------------------

_PLASTIC = 1.324717957244746


def r2_points(n, lo=(0.0, 0.0), hi=(1.0, 1.0), margin=0.02):
    """Deterministic low-discrepancy sample of the rectangle (R2 sequence)."""
    g1 = 1.0 / _PLASTIC
    g2 = 1.0 / _PLASTIC**2
    k = np.arange(1, n + 1)
    u = np.stack([np.mod(0.5 + g1 * k, 1.0), np.mod(0.5 + g2 * k, 1.0)], axis=1)
    u = margin + (1 - 2 * margin) * u
    return np.stack([lo[0] + (hi[0] - lo[0]) * u[:, 0],
                     lo[1] + (hi[1] - lo[1]) * u[:, 1]], axis=1)


def _min_pair_ratio(images, points):
    d_img = np.linalg.norm(images[:, None, :] - images[None, :, :], axis=-1)
    d_pts = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
    iu = np.triu_indices(len(points), k=1)
    return float(np.min(d_img[iu] / d_pts[iu]))


def check_avg_inv(config: Configuration3D, n_samples=1024):
    """Best constant C with |avg_z y(x') - avg_z y(z')| >= C |x' - z'|
    over a deterministic low-discrepancy pair sample."""
    if n_samples < 2:
        raise InvalidParameterError("need at least 2 sample columns")
    g3 = config.grid
    g2 = g3.plane
    pts = r2_points(n_samples, (g2.x0, g2.y0), (g2.x1, g2.y1))
    wz = trapezoid_weights(g3.nz, g3.hz)
    avg = np.zeros((n_samples, 3))
    for k in range(g3.nz):
        slice_field = Field(g2, config.yh.values[k])
        avg += wz[k] * sample2(slice_field, pts)
    return _min_pair_ratio(avg, pts)


def check_bilip(y: Field, n_samples=1024):
    """Best constant C with |y(x') - y(z')| >= C |x' - z'| on the film map."""
    if not isinstance(y.grid, Grid2) or y.ncomp != 3:
        raise InvalidParameterError("check_bilip expects a 3-component Grid2 field")
    if n_samples < 2:
        raise InvalidParameterError("need at least 2 sample points")
    g = y.grid
    pts = r2_points(n_samples, (g.x0, g.y0), (g.x1, g.y1))
    return _min_pair_ratio(sample2(y, pts), pts)


# ---------------------------------------------------------------------------
# Determinant floor under a second-gradient + barrier budget
# ---------------------------------------------------------------------------

def calibrate_det_floor(params: MaterialParams, gammas=None, area=1.0):
    """Monotone table (budget, det floor) from uniaxial compressions.

    diag(1, 1, gamma) carries zero second-gradient energy and barrier
    gamma^(-q) * |omega|, so a budget lam admits determinants down to
    (lam / |omega|)^(-1/q); larger budgets allow smaller determinants.
    """
    if gammas is None:
        gammas = np.array([0.9, 0.75, 0.5, 0.25, 0.1, 0.05])
    gammas = np.sort(np.asarray(gammas, dtype=float))[::-1]
    budgets = area * gammas ** (-params.q)
    return np.stack([budgets, gammas], axis=1)  # ascending budget, descending det


def det_floor_of_budget(table, budget):
    """Conservative floor: the det of the smallest tabulated budget >= budget."""
    idx = np.searchsorted(table[:, 0], budget, side="left")
    if idx >= len(table):
        return 0.0
    return float(table[idx, 1])


def check_det_floor(F_cells, params: MaterialParams, budget,
                    second_gradient=0.0, table=None, cell_measure=1.0):
    """Report min det over quadrature points and the determinant-floor flag:
    if second-gradient + barrier energy stays within the budget, the
    determinant must stay above the calibrated floor."""
    F = np.asarray(F_cells, dtype=float)
    dets = det3(F)
    min_det = float(dets.min())
    barrier = float(np.sum(phi(F, params))) * cell_measure
    energy = second_gradient + barrier
    if table is None:
        table = calibrate_det_floor(params)
    if not np.isfinite(energy) or energy > budget:
        return min_det, True  # implication is vacuous above the budget
    return min_det, bool(min_det >= det_floor_of_budget(table, budget))


# ---------------------------------------------------------------------------
# Self-intersection sampling
# ---------------------------------------------------------------------------

def _aabb_candidate_pairs(boxes, grid_idx, min_index_dist=2, budget=200000):
    """Bucket-hash broad phase; pairs of non-adjacent cells with
    overlapping boxes, deterministically ordered and budget-capped."""
    ext = boxes[:, 1] - boxes[:, 0]
    size = np.maximum(ext.max(axis=0), 1e-12)
    lo = np.floor(boxes[:, 0] / size).astype(np.int64)
    hi = np.floor(boxes[:, 1] / size).astype(np.int64)
    buckets = {}
    for k in range(len(boxes)):
        for bx in range(lo[k, 0], hi[k, 0] + 1):
            for by in range(lo[k, 1], hi[k, 1] + 1):
                for bz in range(lo[k, 2], hi[k, 2] + 1):
                    buckets.setdefault((bx, by, bz), []).append(k)
    pairs = set()
    for group in buckets.values():
        for a_i in range(len(group)):
            for b_i in range(a_i + 1, len(group)):
                a, b = group[a_i], group[b_i]
                if np.max(np.abs(grid_idx[a] - grid_idx[b])) < min_index_dist:
                    continue
                if np.any(boxes[a, 1] < boxes[b, 0]) or np.any(boxes[b, 1] < boxes[a, 0]):
                    continue
                pairs.add((min(a, b), max(a, b)))
    ordered = sorted(pairs)
    return ordered[:budget]


def _tri_pairs_intersect(T1, T2, shrink=0.05, cop_eps=1e-12):
    """Batched triangle-triangle intersection with a shrink margin.

    Non-coplanar pairs intersect iff some edge of one pierces the other's
    interior; coplanar pairs fall back to a separating-axis test in the
    dominant projection plane.
    """
    def shrunk(T):
        c = T.mean(axis=1, keepdims=True)
        return c + (1.0 - shrink) * (T - c)

    T1 = shrunk(np.asarray(T1, float))
    T2 = shrunk(np.asarray(T2, float))
    n = len(T1)
    out = np.zeros(n, dtype=bool)
    scale = max(float(np.abs(T1).max(initial=0)), float(np.abs(T2).max(initial=0)), 1.0)

    def pierce(A, B):
        nB = np.cross(B[:, 1] - B[:, 0], B[:, 2] - B[:, 0])
        sd = np.einsum("nkj,nj->nk", A - B[:, 0:1], nB)
        hit = np.zeros(len(A), dtype=bool)
        for (ia, ib) in ((0, 1), (1, 2), (2, 0)):
            sa, sb = sd[:, ia], sd[:, ib]
            crossing = (sa * sb) < 0
            if not np.any(crossing):
                continue
            den = np.where(crossing, sa - sb, 1.0)
            t = np.where(crossing, sa / den, 0.0)
            p = A[:, ia] + t[:, None] * (A[:, ib] - A[:, ia])
            # barycentric inside-test in B's plane
            v0 = B[:, 1] - B[:, 0]
            v1 = B[:, 2] - B[:, 0]
            v2 = p - B[:, 0]
            d00 = np.einsum("ni,ni->n", v0, v0)
            d01 = np.einsum("ni,ni->n", v0, v1)
            d11 = np.einsum("ni,ni->n", v1, v1)
            d20 = np.einsum("ni,ni->n", v2, v0)
            d21 = np.einsum("ni,ni->n", v2, v1)
            den = d00 * d11 - d01 * d01
            den = np.where(np.abs(den) > 0, den, 1.0)
            u = (d11 * d20 - d01 * d21) / den
            v = (d00 * d21 - d01 * d20) / den
            inside = (u >= 0) & (v >= 0) & (u + v <= 1)
            hit |= crossing & inside
        return hit

    nB = np.cross(T2[:, 1] - T2[:, 0], T2[:, 2] - T2[:, 0])
    nB_norm = np.linalg.norm(nB, axis=-1)
    sd1 = np.einsum("nkj,nj->nk", T1 - T2[:, 0:1], nB)
    coplanar = np.max(np.abs(sd1), axis=1) <= cop_eps * scale * np.maximum(nB_norm, 1e-30)

    noncop = ~coplanar
    if np.any(noncop):
        out[noncop] = pierce(T1[noncop], T2[noncop]) | pierce(T2[noncop], T1[noncop])

    if np.any(coplanar):
        idx = np.flatnonzero(coplanar)
        for k in idx:
            axis = int(np.argmax(np.abs(nB[k]))) if nB_norm[k] > 0 else 2
            keep = [a for a in range(3) if a != axis]
            P1 = T1[k][:, keep]
            P2 = T2[k][:, keep]
            out[k] = _sat_overlap_2d(P1, P2)
    return out


def _sat_overlap_2d(P1, P2):
    for tri_a, tri_b in ((P1, P2), (P2, P1)):
        for e in range(3):
            edge = tri_a[(e + 1) % 3] - tri_a[e]
            axis = np.array([-edge[1], edge[0]])
            pa = tri_a @ axis
            pb = tri_b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def intersect_sample(obj, pair_budget=200000, margin_local=0.1, shrink=0.05):
    """Best-effort self-intersection detection (semi-decision).

    2D film fields are triangulated and probed pairwise; 3D
    configurations probe interior points of each deformed cell against
    point-in-hexahedron containment in non-adjacent cells.
    """
    if isinstance(obj, Field) and isinstance(obj.grid, Grid2):
        return _intersect_sample_2d(obj, pair_budget, shrink)
    if isinstance(obj, Configuration3D):
        return _intersect_sample_3d(obj, pair_budget, margin_local)
    raise InvalidParameterError("intersect_sample expects a Grid2 field or a Configuration3D")


def _intersect_sample_2d(y: Field, pair_budget, shrink):
    g = y.grid
    v = y.values
    ncy, ncx = g.ny - 1, g.nx - 1
    p00 = v[:-1, :-1].reshape(-1, 3)
    p10 = v[:-1, 1:].reshape(-1, 3)
    p01 = v[1:, :-1].reshape(-1, 3)
    p11 = v[1:, 1:].reshape(-1, 3)
    tris = np.concatenate([
        np.stack([p00, p10, p11], axis=1),
        np.stack([p00, p11, p01], axis=1),
    ])
    jj, ii = np.meshgrid(np.arange(ncy), np.arange(ncx), indexing="ij")
    cell_ij = np.stack([jj.ravel(), ii.ravel()], axis=1)
    tri_ij = np.concatenate([cell_ij, cell_ij])
    lo = tris.min(axis=1)
    hi = tris.max(axis=1)
    boxes = np.stack([lo, hi], axis=1)
    pairs = _aabb_candidate_pairs(boxes, tri_ij, min_index_dist=2, budget=pair_budget)
    if not pairs:
        return False
    pa = np.array([p[0] for p in pairs])
    pb = np.array([p[1] for p in pairs])
    hits = _tri_pairs_intersect(tris[pa], tris[pb], shrink=shrink)
    return bool(np.any(hits))


def _intersect_sample_3d(config: Configuration3D, pair_budget, margin_local):
    corners = _deformed_cell_corners(config)
    dets = det3(grad_h(config.yh, config.h).reshape(-1, 3, 3))
    scale = float(np.max(np.abs(dets))) or 1.0
    ok = np.abs(dets) > 1e-10 * scale
    g3 = config.grid
    nzc, nyc, nxc = g3.nz - 1, g3.plane.ny - 1, g3.plane.nx - 1
    kz, ky, kx = np.unravel_index(np.arange(len(corners)), (nzc, nyc, nxc))
    grid_idx = np.stack([kz, ky, kx], axis=1)
    lo = corners.min(axis=1)
    hi = corners.max(axis=1)
    boxes = np.stack([lo, hi], axis=1)
    pairs = [(a, b) for (a, b) in
             _aabb_candidate_pairs(boxes, grid_idx, min_index_dist=2, budget=pair_budget)
             if ok[a] and ok[b]]
    if not pairs:
        return False
    probes_local = np.array([
        [0.0, 0.0, 0.0],
        [0.5, 0.0, 0.0], [-0.5, 0.0, 0.0],
        [0.0, 0.5, 0.0], [0.0, -0.5, 0.0],
        [0.0, 0.0, 0.5], [0.0, 0.0, -0.5],
    ])
    pa = np.array([p[0] for p in pairs])
    pb = np.array([p[1] for p in pairs])
    for direction in ((pa, pb), (pb, pa)):
        src, dst = direction
        for xi0 in probes_local:
            xi = np.broadcast_to(xi0, (len(src), 3)).copy()
            pts, _ = _trilinear_eval(corners[src], xi)
            xi_inv, resid = invert_trilinear(corners[dst], pts)
            diam = float(np.linalg.norm(config.yh.values.max(axis=(0, 1, 2))
                                        - config.yh.values.min(axis=(0, 1, 2))))
            inside = (np.max(np.abs(xi_inv), axis=1) <= 1.0 - margin_local) \
                & (resid <= 1e-9 * (1.0 + diam))
            if bool(np.any(inside)):
                return True
    return False
