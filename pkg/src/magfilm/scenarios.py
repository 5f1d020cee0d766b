"""Canonical deformation corpus: identity, fold, crossing, stretch.

The fold is the flat reflected sheet y = (min(x1, 1-x1), x2, 0) with the
director following the flipped unit normal, so the deformation gradient
stays orientation-preserving on both halves and the two sheets coincide
exactly.  The crossing scenario sweeps a nodal-cubic planar curve whose
two branches pass through one point at right angles: the film crosses
itself transversally without any coincident area.  The stretch is the
uniform planar map diag(2, 1).

Only the identity is admissible (clamped boundary); the others exist to
exercise the constraint audits and ship as field-file fixtures.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidParameterError
from .grids import Field, Grid2
from .model import AdmissibleTriple

SCENARIOS = ("identity", "fold", "crossing", "stretch")

_M_DIRECTIONS = {
    "e1": np.array([1.0, 0.0, 0.0]),
    "e2": np.array([0.0, 1.0, 0.0]),
    "e3": np.array([0.0, 0.0, 1.0]),
}


def _uniform_M(grid: Grid2, direction="e3"):
    if isinstance(direction, str):
        if direction not in _M_DIRECTIONS:
            raise InvalidParameterError(f"unknown magnetization direction {direction!r}")
        d = _M_DIRECTIONS[direction]
    else:
        d = np.asarray(direction, dtype=float)
        n = np.linalg.norm(d)
        if n == 0:
            raise InvalidParameterError("magnetization direction must be nonzero")
        d = d / n
    vals = np.tile(d, (grid.ny, grid.nx, 1))
    return Field(grid, vals)


def identity_triple(grid: Grid2 | None = None, m_direction="e3"):
    grid = grid or Grid2()
    nodes = grid.nodes()
    y = np.zeros((grid.ny, grid.nx, 3))
    y[..., :2] = nodes
    b = np.tile(np.array([0.0, 0.0, 1.0]), (grid.ny, grid.nx, 1))
    return AdmissibleTriple(Field(grid, y), Field(grid, b), _uniform_M(grid, m_direction))


def fold_triple(grid: Grid2 | None = None, m_direction="e3"):
    """Flat fold across x1 = 1/2 with the director following the normal."""
    grid = grid or Grid2()
    nodes = grid.nodes()
    x1 = nodes[..., 0]
    y = np.zeros((grid.ny, grid.nx, 3))
    y[..., 0] = np.minimum(x1, 1.0 - x1)
    y[..., 1] = nodes[..., 1]
    b = np.zeros((grid.ny, grid.nx, 3))
    b[..., 2] = np.where(x1 <= 0.5, 1.0, -1.0)
    return AdmissibleTriple(Field(grid, y), Field(grid, b), _uniform_M(grid, m_direction))


def _nodal_cubic(t):
    """Planar curve (t^2 - 1, t (t^2 - 1)): one transversal self-crossing."""
    return np.stack([t**2 - 1.0, t * (t**2 - 1.0)], axis=-1)


def crossing_triple(grid: Grid2 | None = None, m_direction="e3",
                    t_span=1.4, scale=0.5):
    """Film swept along a self-crossing curve in the (x1, x3) plane."""
    grid = grid or Grid2()
    nodes = grid.nodes()
    t = -t_span + 2.0 * t_span * nodes[..., 0]
    curve = scale * _nodal_cubic(t)
    y = np.zeros((grid.ny, grid.nx, 3))
    y[..., 0] = curve[..., 0]
    y[..., 1] = nodes[..., 1]
    y[..., 2] = curve[..., 1]
    # unit normal of the swept curve in the (x1, x3) plane
    dt = 2.0 * t_span * scale
    tang = np.stack([2.0 * t, 3.0 * t**2 - 1.0], axis=-1) * dt
    speed = np.linalg.norm(tang, axis=-1)
    b = np.zeros((grid.ny, grid.nx, 3))
    b[..., 0] = -tang[..., 1] / speed
    b[..., 2] = tang[..., 0] / speed
    return AdmissibleTriple(Field(grid, y), Field(grid, b), _uniform_M(grid, m_direction))


def stretch_triple(grid: Grid2 | None = None, m_direction="e3", factor=2.0):
    grid = grid or Grid2()
    nodes = grid.nodes()
    y = np.zeros((grid.ny, grid.nx, 3))
    y[..., 0] = factor * nodes[..., 0]
    y[..., 1] = nodes[..., 1]
    b = np.tile(np.array([0.0, 0.0, 1.0]), (grid.ny, grid.nx, 1))
    return AdmissibleTriple(Field(grid, y), Field(grid, b), _uniform_M(grid, m_direction))


def make_scenario(name, grid: Grid2 | None = None, m_direction="e3"):
    if name == "identity":
        return identity_triple(grid, m_direction)
    if name == "fold":
        return fold_triple(grid, m_direction)
    if name == "crossing":
        return crossing_triple(grid, m_direction)
    if name == "stretch":
        return stretch_triple(grid, m_direction)
    raise InvalidParameterError(f"unknown scenario {name!r}; pick one of {SCENARIOS}")


def bump_envelope(grid: Grid2):
    """Envelope vanishing with its gradient on the boundary of omega."""
    nodes = grid.nodes()
    sx = (nodes[..., 0] - grid.x0) / (grid.x1 - grid.x0)
    sy = (nodes[..., 1] - grid.y0) / (grid.y1 - grid.y0)
    return (16.0 * sx * (1 - sx) * sy * (1 - sy)) ** 2


def random_smooth_field(grid: Grid2, rng, n_modes=2):
    """Low-mode random 3-component field: bounded discrete Hessians, so it
    doubles as a finite-difference probe direction."""
    nodes = grid.nodes()
    sx = (nodes[..., 0] - grid.x0) / (grid.x1 - grid.x0)
    sy = (nodes[..., 1] - grid.y0) / (grid.y1 - grid.y0)
    out = np.zeros((grid.ny, grid.nx, 3))
    for _ in range(n_modes):
        kx, ky = rng.integers(1, 4, size=2)
        phase = rng.uniform(0, 2 * np.pi, size=2)
        amp = rng.uniform(-1.0, 1.0, size=3)
        wave = np.sin(np.pi * kx * sx + phase[0]) * np.sin(np.pi * ky * sy + phase[1])
        out += amp * wave[..., None]
    return out


def random_admissible_triple(grid: Grid2 | None = None, seed=0, amplitude=0.1,
                             det_floor=0.2, m_modes=2):
    """Seeded smooth admissible state: identity plus clamped perturbations,
    shrunk until the determinant stays above the requested floor."""
    grid = grid or Grid2()
    rng = np.random.default_rng(seed)
    env = bump_envelope(grid)

    dy = env[..., None] * random_smooth_field(grid, rng, m_modes)
    db = env[..., None] * random_smooth_field(grid, rng, m_modes)
    dm = random_smooth_field(grid, rng, m_modes)

    base = identity_triple(grid)
    a = amplitude
    for _ in range(40):
        yv = base.y.values + a * dy
        bv = base.b.values + a * db
        mv = base.M.values + 0.5 * a * dm
        mv = mv / np.linalg.norm(mv, axis=-1, keepdims=True)
        triple = AdmissibleTriple(Field(grid, yv), Field(grid, bv), Field(grid, mv))
        if triple.min_det() > det_floor:
            return triple
        a *= 0.5
    raise InvalidParameterError("could not build an admissible random triple")

