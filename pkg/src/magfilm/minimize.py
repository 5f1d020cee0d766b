"""Projected gradient descent for the limit energy over admissible states.

The magnetization is kept on the sphere by nodewise renormalization after
every trial step, the clamped boundary rows of (y, b) are reset exactly,
and trial states whose determinant dips below the safeguard are rejected
by halving the step.  Descent alternates two blocks per sweep -- the
magnetization and the deformation pair -- each with its own backtracking
step size, because the barrier term makes the deformation block far
stiffer than the magnetization block.  Directions are mass-scaled
gradients smoothed by a symmetric positive definite averaging filter
(a Sobolev-gradient step; the raw nodal gradient carries boundary-layer
spikes with huge curvature along them).

The energy landscape has symmetric critical points (a uniform normal
magnetization is one), so when the gradient vanishes or progress
plateaus, the loop probes a fixed, seeded set of tangential directions
and continues only on a strict energy decrease; probing preserves the
monotone-energy invariant.  Termination reasons: ``gradient-tolerance``,
``line-search-stalled``, ``plateau``, ``iteration-cap``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .energy import energy_limit, grad_limit
from .errors import InvalidParameterError
from .grids import Field, nodal_weights2
from .model import AdmissibleTriple
from .stray import StrayOptions

TRACE_CSV_HEADER = "iter,total,grad_norm,step,min_det"


@dataclass(frozen=True)
class MinimizeOptions:
    max_iter: int = 300
    step_init: float = 0.25
    backtrack: float = 0.5
    sufficient_decrease: float = 1e-4
    grad_tol: float = 1e-6
    det_safeguard: float | None = None   # None: half the initial det floor
    stray_resolve: str = "every-step"
    saddle_probes: int = 8
    step_grow: float = 1.5
    max_backtracks: int = 40
    direction_smoothing: int = 30        # SPD smoothing passes on descent directions
    plateau_tol: float = 1e-8            # relative per-sweep decrease counted as stalled
    plateau_sweeps: int = 2

    def __post_init__(self):
        if self.max_iter < 0 or self.step_init <= 0 or self.grad_tol <= 0:
            raise InvalidParameterError("minimize options must be positive")
        if not (0 < self.backtrack < 1):
            raise InvalidParameterError("backtracking factor must lie in (0, 1)")
        if not (0 < self.sufficient_decrease < 1):
            raise InvalidParameterError("sufficient-decrease constant must lie in (0, 1)")
        if self.det_safeguard is not None and not (0 < self.det_safeguard < 1):
            raise InvalidParameterError("det safeguard must lie in (0, 1)")
        if self.stray_resolve != "every-step":
            raise InvalidParameterError("only the every-step stray re-solve policy exists")


@dataclass
class TraceRow:
    iteration: int
    total: float
    grad_norm: float
    step: float
    min_det: float


@dataclass
class MinimizeTrace:
    rows: list
    termination: str
    rejections: int
    probes_used: int

    @property
    def iterations(self):
        return max(0, len(self.rows) - 1)

    def csv(self):
        lines = [TRACE_CSV_HEADER]
        for r in self.rows:
            lines.append(",".join([
                str(r.iteration), f"{r.total:.17g}", f"{r.grad_norm:.17g}",
                f"{r.step:.17g}", f"{r.min_det:.17g}",
            ]))
        return "\n".join(lines) + "\n"


def _normalize_rows(M):
    return M / np.linalg.norm(M, axis=-1, keepdims=True)


def _smooth_field(d, passes, boundary_mask=None):
    """Averaged-Jacobi passes: blend each node with its 4-neighbor mean.

    The map is symmetric positive definite, so smoothed gradients remain
    descent directions."""
    for _ in range(passes):
        acc = np.zeros_like(d)
        cnt = np.zeros(d.shape[:2] + (1,))
        acc[1:, :] += d[:-1, :]
        cnt[1:, :] += 1
        acc[:-1, :] += d[1:, :]
        cnt[:-1, :] += 1
        acc[:, 1:] += d[:, :-1]
        cnt[:, 1:] += 1
        acc[:, :-1] += d[:, 1:]
        cnt[:, :-1] += 1
        d = 0.5 * d + 0.5 * acc / cnt
        if boundary_mask is not None:
            d[boundary_mask] = 0.0
    return d


def _probe_directions(M, count, seed=20240915):
    """Deterministic tangential probe fields at the current magnetization."""
    dirs = []
    for e in (np.array([1.0, 0, 0]), np.array([0, 1.0, 0])):
        d = np.broadcast_to(e, M.shape) - np.sum(M * e, axis=-1, keepdims=True) * M
        dirs.append(d)
        dirs.append(-d)
    rng = np.random.default_rng(seed)
    while len(dirs) < count:
        d = rng.standard_normal(M.shape)
        d = d - np.sum(M * d, axis=-1, keepdims=True) * M
        dirs.append(d)
    out = []
    for d in dirs[:count]:
        n = float(np.abs(d).max())
        out.append(d / n if n > 0 else d)
    return out


def minimize_limit(initial: AdmissibleTriple, params, options: MinimizeOptions | None = None,
                   stray: StrayOptions | None = None, on_step=None):
    """Descend the limit energy from a strictly admissible start.

    ``on_step(row, triple)`` is called after every accepted step with the
    new trace row and the current state (observer only)."""
    options = options or MinimizeOptions()
    stray = stray or StrayOptions()
    eps0 = initial.validate(det_floor=0.0)
    safeguard = options.det_safeguard if options.det_safeguard is not None else 0.5 * eps0
    grid = initial.grid
    w2 = nodal_weights2(grid)[..., None]
    bd = grid.boundary_mask()

    y = initial.y.values.copy()
    b = initial.b.values.copy()
    M = _normalize_rows(initial.M.values.copy())

    def as_triple(yv, bv, mv):
        return AdmissibleTriple(Field(grid, yv), Field(grid, bv), Field(grid, mv))

    def total_energy(yv, bv, mv):
        return energy_limit(as_triple(yv, bv, mv), params, stray).total

    def min_det_of(yv, bv):
        return AdmissibleTriple(Field(grid, yv), Field(grid, bv),
                                Field(grid, M)).min_det()

    state = {
        "energy": total_energy(y, b, M),
        "accepted": 0,
        "rejections": 0,
        "probes_used": 0,
    }
    rows = [TraceRow(0, state["energy"], np.nan, 0.0, min_det_of(y, b))]
    step_m = options.step_init
    step_yb = options.step_init
    plateau_count = 0
    termination = None
    prev_m = None   # (M, gM) at the last accepted M-step, for the BB step guess
    prev_yb = None  # ((y, b), (gy, gb)) likewise

    def bb_step(diff_x, diff_g, fallback):
        """Barzilai-Borwein initial trial step, clamped near the previous
        accepted step; monotone Armijo still rules."""
        num = float(sum(np.sum(dx * dx) for dx in diff_x))
        den = float(sum(np.sum(dx * dg) for dx, dg in zip(diff_x, diff_g)))
        if den <= 0 or not np.isfinite(den):
            return fallback
        return min(max(num / den, 0.25 * fallback), 4.0 * fallback)

    def record(step, gnorm):
        rows.append(TraceRow(state["accepted"], state["energy"], gnorm, step,
                             min_det_of(y, b)))
        if on_step is not None:
            on_step(rows[-1], as_triple(y, b, M))

    def try_probes(gnorm):
        nonlocal M
        if options.saddle_probes <= 0:
            return False
        for d in _probe_directions(M, options.saddle_probes):
            for t in (step_m, step_m / 4.0, step_m / 16.0):
                trial = _normalize_rows(M + t * d)
                e_new = total_energy(y, b, trial)
                if np.isfinite(e_new) and \
                        e_new < state["energy"] - 1e-14 * max(1.0, abs(state["energy"])):
                    M = trial
                    state["energy"] = e_new
                    state["accepted"] += 1
                    state["probes_used"] += 1
                    record(t, gnorm)
                    return True
        return False

    while state["accepted"] < options.max_iter and termination is None:
        g = grad_limit(as_triple(y, b, M), params, stray)
        dy = _smooth_field(g.dy / w2, options.direction_smoothing, bd)
        db = _smooth_field(g.db / w2, options.direction_smoothing, bd)
        dM = _smooth_field(g.dM / w2, options.direction_smoothing)
        dM = dM - np.sum(dM * M, axis=-1, keepdims=True) * M
        slope_yb = float(np.sum(g.dy * dy) + np.sum(g.db * db))
        if slope_yb <= 0.0:
            dy, db = g.dy / w2, g.db / w2
            slope_yb = float(np.sum(g.dy * dy) + np.sum(g.db * db))
        slope_m = float(np.sum(g.dM * dM))
        if slope_m < 0.0:
            dM = g.dM / w2
            slope_m = float(np.sum(g.dM * dM))
        gnorm = float(np.sqrt(max(slope_m, 0.0) + max(slope_yb, 0.0)))
        if np.isnan(rows[-1].grad_norm):
            rows[-1].grad_norm = gnorm

        if gnorm <= options.grad_tol:
            if not try_probes(gnorm):
                termination = "gradient-tolerance"
            continue

        sweep_decrease = 0.0
        moved = False

        if slope_m > 0.0 and state["accepted"] < options.max_iter:
            t = step_m
            if prev_m is not None:
                t = bb_step((M - prev_m[0],), (g.dM - prev_m[1],), step_m)
            old_M, old_g = M.copy(), g.dM.copy()
            for _ in range(options.max_backtracks):
                trial = _normalize_rows(M - t * dM)
                e_new = total_energy(y, b, trial)
                if np.isfinite(e_new) and \
                        e_new <= state["energy"] - options.sufficient_decrease * t * slope_m:
                    sweep_decrease += state["energy"] - e_new
                    M = trial
                    prev_m = (old_M, old_g)
                    state["energy"] = e_new
                    state["accepted"] += 1
                    record(t, gnorm)
                    step_m = t * options.step_grow
                    moved = True
                    break
                state["rejections"] += 1
                t *= options.backtrack
            else:
                step_m = max(t, 1e-16)

        if slope_yb > 0.0 and state["accepted"] < options.max_iter:
            t = step_yb
            if prev_yb is not None:
                t = bb_step(
                    (y - prev_yb[0][0], b - prev_yb[0][1]),
                    (g.dy - prev_yb[1][0], g.db - prev_yb[1][1]),
                    step_yb,
                )
            old = ((y.copy(), b.copy()), (g.dy.copy(), g.db.copy()))
            for _ in range(options.max_backtracks):
                trial_y = y - t * dy
                trial_b = b - t * db
                trial_y[bd] = initial.y.values[bd]
                trial_b[bd] = initial.b.values[bd]
                md = min_det_of(trial_y, trial_b)
                if md < safeguard:
                    state["rejections"] += 1
                    t *= options.backtrack
                    continue
                e_new = total_energy(trial_y, trial_b, M)
                if np.isfinite(e_new) and \
                        e_new <= state["energy"] - options.sufficient_decrease * t * slope_yb:
                    sweep_decrease += state["energy"] - e_new
                    y, b = trial_y, trial_b
                    prev_yb = old
                    state["energy"] = e_new
                    state["accepted"] += 1
                    record(t, gnorm)
                    step_yb = t * options.step_grow
                    moved = True
                    break
                state["rejections"] += 1
                t *= options.backtrack
            else:
                step_yb = max(t, 1e-16)

        if not moved:
            if not try_probes(gnorm):
                termination = "line-search-stalled"
            continue

        if sweep_decrease <= options.plateau_tol * max(1.0, abs(state["energy"])):
            plateau_count += 1
            if plateau_count >= options.plateau_sweeps:
                plateau_count = 0
                if not try_probes(gnorm):
                    termination = "plateau"
        else:
            plateau_count = 0

    trace = MinimizeTrace(
        rows=rows, termination=termination or "iteration-cap",
        rejections=state["rejections"], probes_used=state["probes_used"],
    )
    return as_triple(y, b, M), trace
