"""Structured grids, nodal fields, and the discrete calculus used everywhere.

Node storage follows the canonical traversal order (x fastest, then y,
then z): a planar field has shape (ny, nx, ncomp), a volumetric one
(nz, ny, nx, ncomp), so that ``values.reshape(-1, ncomp)`` enumerates
nodes canonically.  All reductions below run in that fixed order, which
makes every integral bitwise reproducible.

Cell quantities (averages, gradients) live at cell centers and come from
bilinear/trilinear interpolation; their adjoints are the exact transposes
of the linear scatter/gather maps and are used by the energy gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError


@dataclass(frozen=True)
class Grid2:
    """Uniform rectangular grid over the film domain."""

    x0: float = 0.0
    x1: float = 1.0
    y0: float = 0.0
    y1: float = 1.0
    nx: int = 65
    ny: int = 65

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise InvalidParameterError("Grid2 needs at least 3 nodes per direction")
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise InvalidParameterError("Grid2 bounds must be increasing")

    @property
    def hx(self):
        return (self.x1 - self.x0) / (self.nx - 1)

    @property
    def hy(self):
        return (self.y1 - self.y0) / (self.ny - 1)

    @property
    def n_nodes(self):
        return self.nx * self.ny

    @property
    def n_cells(self):
        return (self.nx - 1) * (self.ny - 1)

    @property
    def cell_area(self):
        return self.hx * self.hy

    @property
    def area(self):
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def xs(self):
        return self.x0 + self.hx * np.arange(self.nx)

    def ys(self):
        return self.y0 + self.hy * np.arange(self.ny)

    def nodes(self):
        """Node coordinates, shape (ny, nx, 2)."""
        X, Y = np.meshgrid(self.xs(), self.ys(), indexing="xy")
        return np.stack([X, Y], axis=-1)

    def cell_centers(self):
        xc = self.x0 + self.hx * (np.arange(self.nx - 1) + 0.5)
        yc = self.y0 + self.hy * (np.arange(self.ny - 1) + 0.5)
        X, Y = np.meshgrid(xc, yc, indexing="xy")
        return np.stack([X, Y], axis=-1)

    def boundary_mask(self):
        m = np.zeros((self.ny, self.nx), dtype=bool)
        m[0, :] = m[-1, :] = True
        m[:, 0] = m[:, -1] = True
        return m


@dataclass(frozen=True)
class Grid3:
    """Rescaled plate domain: a Grid2 times the fixed interval [-1/2, 1/2]."""

    plane: Grid2 = field(default_factory=Grid2)
    nz: int = 9

    def __post_init__(self):
        if self.nz < 3:
            raise InvalidParameterError("Grid3 needs at least 3 transverse nodes")

    @property
    def hz(self):
        return 1.0 / (self.nz - 1)

    @property
    def n_nodes(self):
        return self.plane.n_nodes * self.nz

    @property
    def n_cells(self):
        return self.plane.n_cells * (self.nz - 1)

    @property
    def cell_volume(self):
        return self.plane.cell_area * self.hz

    def zs(self):
        return -0.5 + self.hz * np.arange(self.nz)

    def nodes(self):
        xs, ys, zs = self.plane.xs(), self.plane.ys(), self.zs()
        Z, Y, X = np.meshgrid(zs, ys, xs, indexing="ij")
        return np.stack([X, Y, Z], axis=-1)

    def boundary_mask_lateral(self):
        """Nodes on the lateral boundary (above boundary nodes of omega)."""
        m2 = self.plane.boundary_mask()
        return np.broadcast_to(m2, (self.nz, self.plane.ny, self.plane.nx)).copy()


@dataclass
class Field:
    """Nodal field on a Grid2 or Grid3 with a fixed number of components."""

    grid: Grid2 | Grid3
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if isinstance(self.grid, Grid2):
            want = (self.grid.ny, self.grid.nx)
        else:
            want = (self.grid.nz, self.grid.plane.ny, self.grid.plane.nx)
        if self.values.ndim != len(want) + 1 or self.values.shape[:-1] != want:
            raise InvalidParameterError(
                f"field shape {self.values.shape} does not match grid {want} + (ncomp,)"
            )
        if not np.all(np.isfinite(self.values)):
            raise InvalidParameterError("field values must be finite")

    @property
    def ncomp(self):
        return self.values.shape[-1]

    def copy(self):
        return Field(self.grid, self.values.copy())

    @staticmethod
    def zeros(grid, ncomp):
        if isinstance(grid, Grid2):
            return Field(grid, np.zeros((grid.ny, grid.nx, ncomp)))
        return Field(grid, np.zeros((grid.nz, grid.plane.ny, grid.plane.nx, ncomp)))

    @staticmethod
    def from_function(grid, fn, ncomp=None):
        """Sample ``fn(points) -> (..., ncomp)`` at the grid nodes."""
        vals = np.asarray(fn(grid.nodes()), dtype=float)
        if ncomp is not None and vals.shape[-1] != ncomp:
            raise InvalidParameterError("from_function produced wrong component count")
        return Field(grid, vals)


# ---------------------------------------------------------------------------
# Field file format
# ---------------------------------------------------------------------------

def write_field(fld: Field, path):
    """Write `FIELD <tag> <nx> <ny> [<nz>] <ncomp>` plus one node per line."""
    vals = fld.values.reshape(-1, fld.ncomp)
    with open(path, "w", encoding="utf-8") as fh:
        if isinstance(fld.grid, Grid2):
            fh.write(f"FIELD G2 {fld.grid.nx} {fld.grid.ny} {fld.ncomp}\n")
        else:
            g = fld.grid
            fh.write(f"FIELD G3 {g.plane.nx} {g.plane.ny} {g.nz} {fld.ncomp}\n")
        for row in vals:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def read_field(path, domain=(0.0, 1.0, 0.0, 1.0)):
    """Read a field file; the planar domain is not stored and defaults to
    the unit square."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if not header or header[0] != "FIELD" or len(header) < 5:
            raise InvalidParameterError(f"{path}: malformed FIELD header")
        tag = header[1]
        if tag == "G2":
            nx, ny, ncomp = (int(t) for t in header[2:5])
            grid = Grid2(domain[0], domain[1], domain[2], domain[3], nx, ny)
            n_nodes = nx * ny
            shape = (ny, nx, ncomp)
        elif tag == "G3":
            if len(header) != 6:
                raise InvalidParameterError(f"{path}: G3 header needs nz")
            nx, ny, nz, ncomp = (int(t) for t in header[2:6])
            grid = Grid3(Grid2(domain[0], domain[1], domain[2], domain[3], nx, ny), nz)
            n_nodes = nx * ny * nz
            shape = (nz, ny, nx, ncomp)
        else:
            raise InvalidParameterError(f"{path}: unknown grid tag {tag!r}")
        data = np.loadtxt(fh, ndmin=2)
    if data.shape != (n_nodes, ncomp):
        raise InvalidParameterError(
            f"{path}: expected {n_nodes} nodes x {ncomp} comps, got {data.shape}"
        )
    return Field(grid, data.reshape(shape))


# ---------------------------------------------------------------------------
# Cell-center interpolation / gradients and their adjoints (2D)
# ---------------------------------------------------------------------------

def cell_average2(values):
    """Average of the 4 cell corners: (ny, nx, c) -> (ny-1, nx-1, c)."""
    return 0.25 * (values[:-1, :-1] + values[:-1, 1:] + values[1:, :-1] + values[1:, 1:])


def cell_average2_adjoint(cell_vals, shape):
    out = np.zeros(shape)
    q = 0.25 * cell_vals
    out[:-1, :-1] += q
    out[:-1, 1:] += q
    out[1:, :-1] += q
    out[1:, 1:] += q
    return out


def cell_gradient2(values, grid: Grid2):
    """Bilinear gradient at cell centers: (ny, nx, c) -> (ny-1, nx-1, c, 2)."""
    dx = 0.5 * ((values[:-1, 1:] - values[:-1, :-1]) + (values[1:, 1:] - values[1:, :-1])) / grid.hx
    dy = 0.5 * ((values[1:, :-1] - values[:-1, :-1]) + (values[1:, 1:] - values[:-1, 1:])) / grid.hy
    return np.stack([dx, dy], axis=-1)


def cell_gradient2_adjoint(cell_grads, grid: Grid2, shape):
    out = np.zeros(shape)
    gx = 0.5 * cell_grads[..., 0] / grid.hx
    gy = 0.5 * cell_grads[..., 1] / grid.hy
    out[:-1, 1:] += gx
    out[1:, 1:] += gx
    out[:-1, :-1] -= gx
    out[1:, :-1] -= gx
    out[1:, :-1] += gy
    out[1:, 1:] += gy
    out[:-1, :-1] -= gy
    out[:-1, 1:] -= gy
    return out


# ---------------------------------------------------------------------------
# Cell-center interpolation / gradients (3D)
# ---------------------------------------------------------------------------

def cell_average3(values):
    v = values
    return 0.125 * (
        v[:-1, :-1, :-1] + v[:-1, :-1, 1:] + v[:-1, 1:, :-1] + v[:-1, 1:, 1:]
        + v[1:, :-1, :-1] + v[1:, :-1, 1:] + v[1:, 1:, :-1] + v[1:, 1:, 1:]
    )


def cell_gradient3(values, grid: Grid3):
    """Trilinear gradient at cell centers: (nz, ny, nx, c) -> (..., c, 3).

    The third component is the geometric z-derivative on [-1/2, 1/2];
    ``grad_h`` rescales it by the thickness.
    """
    v = values
    hx, hy, hz = grid.plane.hx, grid.plane.hy, grid.hz
    dx = 0.25 * (
        (v[:-1, :-1, 1:] - v[:-1, :-1, :-1]) + (v[:-1, 1:, 1:] - v[:-1, 1:, :-1])
        + (v[1:, :-1, 1:] - v[1:, :-1, :-1]) + (v[1:, 1:, 1:] - v[1:, 1:, :-1])
    ) / hx
    dy = 0.25 * (
        (v[:-1, 1:, :-1] - v[:-1, :-1, :-1]) + (v[:-1, 1:, 1:] - v[:-1, :-1, 1:])
        + (v[1:, 1:, :-1] - v[1:, :-1, :-1]) + (v[1:, 1:, 1:] - v[1:, :-1, 1:])
    ) / hy
    dz = 0.25 * (
        (v[1:, :-1, :-1] - v[:-1, :-1, :-1]) + (v[1:, :-1, 1:] - v[:-1, :-1, 1:])
        + (v[1:, 1:, :-1] - v[:-1, 1:, :-1]) + (v[1:, 1:, 1:] - v[:-1, 1:, 1:])
    ) / hz
    return np.stack([dx, dy, dz], axis=-1)


# ---------------------------------------------------------------------------
# Nodal derivative operators (1D matrices applied along axes)
# ---------------------------------------------------------------------------

def d1_matrix(n, spacing):
    """First derivative, second-order: central inside, one-sided at ends."""
    D = np.zeros((n, n))
    for i in range(1, n - 1):
        D[i, i - 1] = -0.5
        D[i, i + 1] = 0.5
    D[0, 0], D[0, 1], D[0, 2] = -1.5, 2.0, -0.5
    D[-1, -1], D[-1, -2], D[-1, -3] = 1.5, -2.0, 0.5
    return D / spacing


def d2_matrix(n, spacing):
    """Second derivative: 3-point central inside, one-sided at the ends
    (4-point second-order when enough nodes exist, 3-point otherwise)."""
    D = np.zeros((n, n))
    for i in range(1, n - 1):
        D[i, i - 1], D[i, i], D[i, i + 1] = 1.0, -2.0, 1.0
    if n >= 4:
        D[0, 0], D[0, 1], D[0, 2], D[0, 3] = 2.0, -5.0, 4.0, -1.0
        D[-1, -1], D[-1, -2], D[-1, -3], D[-1, -4] = 2.0, -5.0, 4.0, -1.0
    else:
        D[0, 0], D[0, 1], D[0, 2] = 1.0, -2.0, 1.0
        D[-1, -1], D[-1, -2], D[-1, -3] = 1.0, -2.0, 1.0
    return D / spacing**2


def apply_along(values, mat, axis):
    """Apply a 1D operator matrix along one array axis."""
    moved = np.moveaxis(values, axis, -1)
    out = moved @ mat.T
    return np.moveaxis(out, -1, axis)


# ---------------------------------------------------------------------------
# Quadrature weights
# ---------------------------------------------------------------------------

def trapezoid_weights(n, spacing):
    w = np.full(n, spacing)
    w[0] = w[-1] = 0.5 * spacing
    return w


def nodal_weights2(grid: Grid2):
    wx = trapezoid_weights(grid.nx, grid.hx)
    wy = trapezoid_weights(grid.ny, grid.hy)
    return np.outer(wy, wx)


def nodal_weights3(grid: Grid3):
    wx = trapezoid_weights(grid.plane.nx, grid.plane.hx)
    wy = trapezoid_weights(grid.plane.ny, grid.plane.hy)
    wz = trapezoid_weights(grid.nz, grid.hz)
    return wz[:, None, None] * wy[None, :, None] * wx[None, None, :]


# ---------------------------------------------------------------------------
# Point sampling (bilinear) on Grid2 fields
# ---------------------------------------------------------------------------

def _locate(coord, origin, spacing, ncells):
    t = (coord - origin) / spacing
    idx = np.clip(np.floor(t).astype(int), 0, ncells - 1)
    return idx, t - idx


def sample2(fld: Field, points):
    """Bilinear interpolation of a Grid2 field at points (..., 2)."""
    g = fld.grid
    pts = np.asarray(points, dtype=float)
    i, fx = _locate(pts[..., 0], g.x0, g.hx, g.nx - 1)
    j, fy = _locate(pts[..., 1], g.y0, g.hy, g.ny - 1)
    v = fld.values
    v00 = v[j, i]
    v10 = v[j, i + 1]
    v01 = v[j + 1, i]
    v11 = v[j + 1, i + 1]
    fx = fx[..., None]
    fy = fy[..., None]
    return ((1 - fx) * (1 - fy) * v00 + fx * (1 - fy) * v10
            + (1 - fx) * fy * v01 + fx * fy * v11)


def sample_gradient2(fld: Field, points):
    """Gradient of the bilinear interpolant at points: (..., ncomp, 2)."""
    g = fld.grid
    pts = np.asarray(points, dtype=float)
    i, fx = _locate(pts[..., 0], g.x0, g.hx, g.nx - 1)
    j, fy = _locate(pts[..., 1], g.y0, g.hy, g.ny - 1)
    v = fld.values
    v00 = v[j, i]
    v10 = v[j, i + 1]
    v01 = v[j + 1, i]
    v11 = v[j + 1, i + 1]
    fx = fx[..., None]
    fy = fy[..., None]
    ddx = ((1 - fy) * (v10 - v00) + fy * (v11 - v01)) / g.hx
    ddy = ((1 - fx) * (v01 - v00) + fx * (v11 - v10)) / g.hy
    return np.stack([ddx, ddy], axis=-1)
