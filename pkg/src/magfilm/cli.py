"""Command-line entry point: flat key=value configs, experiment dispatch.

Subcommands: eval2d, eval3d, stray2d, stray3d, recover, sweep, minimize,
check.  Each writes CSV reports (deterministic bytes for identical
configs), a key=value diagnostics block, field files for state output,
and rendered figures alongside the delimited output.

Exit codes: 0 success, 1 numerical failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, fields, replace

import numpy as np

from .constraints import (
    CSV_HEADER as CHECK_CSV_HEADER,
    ConstraintReport,
    check_area_2d,
    check_avg_inv,
    check_bilip,
    check_cn_3d,
    intersect_sample,
)
from .energy import CSV_HEADER as ENERGY_CSV_HEADER, energy_3d, energy_limit
from .errors import ConfigError, MagfilmError
from .gamma import build_recovery, sweep, transverse_diagnostics
from .grids import Field, Grid2, Grid3, read_field, write_field
from .minimize import MinimizeOptions, minimize_limit
from .model import AdmissibleTriple, MaterialParams
from .reports import (
    ensure_dir,
    fig_breakdown,
    fig_constraints,
    fig_surface,
    fig_sweep,
    fig_trace,
    write_csv,
    write_keyvalues,
    write_text,
)
from .scenarios import SCENARIOS, make_scenario
from .stray import (
    StrayOptions,
    assemble_reduced,
    rasterize_deformed,
    solve_full3d,
    solve_reduced,
    stray2d_diagnostics,
)

COMMANDS = ("eval2d", "eval3d", "stray2d", "stray3d", "recover", "sweep",
            "minimize", "check")


@dataclass
class RunConfig:
    p: float = 4.0
    q: float = 13.0
    alpha: float = 1.0
    mu0: float = 1.0
    c_elastic: float = 1.0
    c_coupling: float = 1.0
    grid_n: int = 65
    nz: int = 9
    padding: float = 1.0
    stray_tol: float = 1e-10
    stray_maxiter: int = 100000
    voxel_resolution: int = 64
    h: float = 0.1
    h_list: tuple = (0.4, 0.2, 0.1, 0.05)
    scenario: str = "identity"
    m_init: str = "e3"
    y_file: str = ""
    b_file: str = ""
    m_file: str = ""
    gap_tol: float = 0.1
    samples: int = 1024
    figures: bool = True
    minimize_max_iter: int = 300
    minimize_step_init: float = 0.25
    minimize_grad_tol: float = 1e-6
    minimize_det_safeguard: float = 0.0   # 0: default to half the initial floor
    minimize_saddle_probes: int = 8

    def material(self):
        return MaterialParams(p=self.p, q=self.q, alpha=self.alpha, mu0=self.mu0,
                              c_elastic=self.c_elastic, c_coupling=self.c_coupling)

    def stray(self):
        return StrayOptions(padding=self.padding, resolution=None,
                            tol=self.stray_tol, max_iter=self.stray_maxiter,
                            voxels_per_unit=self.voxel_resolution)


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _convert(name, kind, raw, lineno):
    try:
        if kind is float:
            return float(raw)
        if kind is int:
            return int(raw)
        if kind is bool:
            low = raw.strip().lower()
            if low in _BOOL_TRUE:
                return True
            if low in _BOOL_FALSE:
                return False
            raise ValueError(raw)
        if kind is tuple:
            return tuple(float(t) for t in raw.split(",") if t.strip() != "")
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(
            f"line {lineno}: cannot parse {name} = {raw!r}", line=lineno
        ) from exc


def parse_config(text):
    """Parse flat `key = value` lines (# comments) into a validated RunConfig."""
    schema = {f.name: type(getattr(RunConfig(), f.name)) for f in fields(RunConfig)}
    values = {}
    unknown = []
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {raw_line!r}",
                              line=lineno)
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in schema:
            unknown.append((lineno, key))
            continue
        values[key] = _convert(key, schema[key], raw, lineno)
    if unknown:
        listing = ", ".join(f"{k} (line {n})" for n, k in unknown)
        raise ConfigError(f"unknown configuration keys: {listing}", line=unknown[0][0])
    cfg = replace(RunConfig(), **values)
    if cfg.scenario not in SCENARIOS + ("custom",):
        raise ConfigError(f"unknown scenario {cfg.scenario!r}")
    if cfg.grid_n < 3 or cfg.nz < 3:
        raise ConfigError("grid_n and nz must be at least 3")
    if not cfg.h_list or any(h <= 0 for h in cfg.h_list):
        raise ConfigError("h_list must be positive")
    if cfg.scenario == "custom":
        for name in ("y_file", "b_file", "m_file"):
            path = getattr(cfg, name)
            if not path:
                raise ConfigError(f"custom scenario requires {name}")
            if not os.path.exists(path):
                raise ConfigError(f"{name} = {path!r} does not resolve to a file")
    try:
        cfg.material()
    except MagfilmError as exc:
        raise ConfigError(f"material parameters invalid: {exc}") from exc
    return cfg


def load_triple(cfg: RunConfig):
    if cfg.scenario == "custom":
        y = read_field(cfg.y_file)
        b = read_field(cfg.b_file)
        m = read_field(cfg.m_file)
        return AdmissibleTriple(y, b, m)
    grid = Grid2(nx=cfg.grid_n, ny=cfg.grid_n)
    return make_scenario(cfg.scenario, grid, m_direction=cfg.m_init)


def _admissible_or_fail(cfg, triple):
    # fold/crossing/stretch fail here with a clear message
    triple.validate()


def _energy_csv(path, breakdown, h=None):
    write_csv(path, ENERGY_CSV_HEADER, [breakdown.csv_row(h=h if h is not None else 0.0)])


def run(cfg: RunConfig, command, out_dir="out"):
    """Execute one subcommand; returns the artifact directory."""
    out = ensure_dir(out_dir)
    params = cfg.material()
    stray = cfg.stray()

    if command == "eval2d":
        triple = load_triple(cfg)
        _admissible_or_fail(cfg, triple)
        bd = energy_limit(triple, params, stray)
        _energy_csv(os.path.join(out, "eval2d.csv"), bd, h=0.0)
        write_keyvalues(os.path.join(out, "eval2d.kv"), bd.key_values())
        if cfg.figures:
            fig_breakdown(bd, os.path.join(out, "eval2d.png"), title="limit energy")
        return out

    if command == "eval3d":
        triple = load_triple(cfg)
        _admissible_or_fail(cfg, triple)
        config = build_recovery(triple, cfg.h, nz=cfg.nz)
        bd = energy_3d(config, params, stray)
        _energy_csv(os.path.join(out, "eval3d.csv"), bd, h=cfg.h)
        write_keyvalues(os.path.join(out, "eval3d.kv"), bd.key_values())
        if cfg.figures:
            fig_breakdown(bd, os.path.join(out, "eval3d.png"),
                          title=f"plate energy, h = {cfg.h:g}")
        return out

    if command == "stray2d":
        triple = load_triple(cfg)
        _admissible_or_fail(cfg, triple)
        coeffs = assemble_reduced(triple, padding=cfg.padding)
        sol = solve_reduced(coeffs, mu0=params.mu0, tol=cfg.stray_tol,
                            max_iter=cfg.stray_maxiter)
        diag = stray2d_diagnostics(coeffs, sol, mu0=params.mu0)
        write_keyvalues(os.path.join(out, "stray2d.kv"), diag)
        header = ",".join(diag.keys())
        row = ",".join(f"{v:.17g}" if isinstance(v, float) else str(v)
                       for v in diag.values())
        write_csv(os.path.join(out, "stray2d.csv"), header, [row])
        ext = coeffs.grid
        Ugrid = Grid2(ext.x0, ext.x0 + ext.ncx * ext.hx,
                      ext.y0, ext.y0 + ext.ncy * ext.hy, ext.nnx, ext.nny)
        write_field(Field(Ugrid, np.ascontiguousarray(sol.U.T)[..., None]),
                    os.path.join(out, "stray2d_U.field"))
        if ext.ncx >= 3 and ext.ncy >= 3:
            Vgrid = Grid2(ext.x0 + ext.hx / 2, ext.x0 + (ext.ncx - 0.5) * ext.hx,
                          ext.y0 + ext.hy / 2, ext.y0 + (ext.ncy - 0.5) * ext.hy,
                          ext.ncx, ext.ncy)
            write_field(Field(Vgrid, sol.V[..., None]),
                        os.path.join(out, "stray2d_V.field"))
        return out

    if command == "stray3d":
        triple = load_triple(cfg)
        _admissible_or_fail(cfg, triple)
        config = build_recovery(triple, cfg.h, nz=cfg.nz)
        sol = solve_full3d(config, mu0=params.mu0, padding=cfg.padding,
                           resolution=cfg.voxel_resolution)
        diag = {
            "h": cfg.h,
            "energy": sol.energy,
            "magnetostatic": sol.energy / (2 * cfg.h),
            "residual": sol.residual,
            "covered_volume": sol.raster.covered_volume,
            "voxels": int(np.prod(sol.raster.shape)),
            "pinched_cells": sol.raster.pinched_cells,
            "box_origin_x": float(sol.origin[0]),
            "box_origin_y": float(sol.origin[1]),
            "box_origin_z": float(sol.origin[2]),
            "box_spacing_x": float(sol.spacing[0]),
            "box_spacing_y": float(sol.spacing[1]),
            "box_spacing_z": float(sol.spacing[2]),
        }
        write_keyvalues(os.path.join(out, "stray3d.kv"), diag)
        header = ",".join(diag.keys())
        row = ",".join(f"{v:.17g}" if isinstance(v, float) else str(v)
                       for v in diag.values())
        write_csv(os.path.join(out, "stray3d.csv"), header, [row])
        nodes = int(np.prod([n + 1 for n in sol.raster.shape]))
        if nodes <= 2_000_000:
            # box geometry travels in the kv block; the field format only
            # carries node counts
            nx, ny, nz = (n + 1 for n in sol.raster.shape)
            ug = Grid3(Grid2(nx=nx, ny=ny), nz)
            u_zyx = np.ascontiguousarray(np.transpose(sol.u, (2, 1, 0)))
            write_field(Field(ug, u_zyx[..., None]),
                        os.path.join(out, "stray3d_u.field"))
        return out

    if command == "recover":
        triple = load_triple(cfg)
        _admissible_or_fail(cfg, triple)
        rows = []
        for h in cfg.h_list:
            config = build_recovery(triple, h, nz=cfg.nz)
            d_norm, eta_norm = transverse_diagnostics(config)
            tag = f"{h:g}".replace(".", "p")
            write_field(config.yh, os.path.join(out, f"recover_yh_{tag}.field"))
            write_field(config.Mh, os.path.join(out, f"recover_Mh_{tag}.field"))
            rows.append(f"{h:.17g},{d_norm:.17g},{eta_norm:.17g}")
        write_csv(os.path.join(out, "recover.csv"), "h,d_norm,eta_norm", rows)
        return out

    if command == "sweep":
        triple = load_triple(cfg)
        _admissible_or_fail(cfg, triple)
        report = sweep(triple, cfg.h_list, params, stray, nz=cfg.nz,
                       gap_tol=cfg.gap_tol)
        write_text(os.path.join(out, "sweep.csv"), report.csv())
        write_keyvalues(os.path.join(out, "sweep.kv"), {
            "limsup_witness": report.limsup_witness,
            "liminf_witness": report.liminf_witness,
            "gap_tol": report.gap_tol,
            "F_total": report.limit.total,
        })
        if cfg.figures:
            fig_sweep(report, os.path.join(out, "sweep.png"))
        return out

    if command == "minimize":
        triple = load_triple(cfg)
        _admissible_or_fail(cfg, triple)
        opts = MinimizeOptions(
            max_iter=cfg.minimize_max_iter,
            step_init=cfg.minimize_step_init,
            grad_tol=cfg.minimize_grad_tol,
            det_safeguard=cfg.minimize_det_safeguard or None,
            saddle_probes=cfg.minimize_saddle_probes,
        )
        final, trace = minimize_limit(triple, params, opts, stray)
        write_text(os.path.join(out, "minimize_trace.csv"), trace.csv())
        write_field(final.y, os.path.join(out, "minimize_y.field"))
        write_field(final.b, os.path.join(out, "minimize_b.field"))
        write_field(final.M, os.path.join(out, "minimize_M.field"))
        write_keyvalues(os.path.join(out, "minimize.kv"), {
            "termination": trace.termination,
            "iterations": trace.iterations,
            "rejections": trace.rejections,
            "probes_used": trace.probes_used,
            "final_total": trace.rows[-1].total,
        })
        if cfg.figures:
            fig_trace(trace, os.path.join(out, "minimize_trace.png"))
        return out

    if command == "check":
        triple = load_triple(cfg)
        config = build_recovery(triple, cfg.h, nz=cfg.nz, admissible=False)
        raster = rasterize_deformed(config, resolution=cfg.voxel_resolution,
                                    padding=0.25)
        cn_i, cn_m, cn_ok, cn_slack = check_cn_3d(config, raster=raster)
        lhs, rhs, area_ok, area_slack = check_area_2d(triple.y)
        report = ConstraintReport(
            cn_integral=cn_i, cn_measured=cn_m, cn_slack=cn_slack,
            cn_satisfied=cn_ok,
            area_lhs=lhs, area_rhs=rhs, area_slack=area_slack,
            area_satisfied=area_ok,
            avg_inv_constant=check_avg_inv(config, n_samples=cfg.samples),
            bilip_constant=check_bilip(triple.y, n_samples=cfg.samples),
            min_det=triple.min_det(),
            self_intersects=intersect_sample(triple.y),
        )
        write_csv(os.path.join(out, "check.csv"), CHECK_CSV_HEADER,
                  [report.csv_row(scenario=cfg.scenario)])
        write_keyvalues(os.path.join(out, "check.kv"), report.key_values())
        # ship the audited deformation as field files next to the report
        write_field(triple.y, os.path.join(out, f"{cfg.scenario}_y.field"))
        write_field(triple.b, os.path.join(out, f"{cfg.scenario}_b.field"))
        write_field(triple.M, os.path.join(out, f"{cfg.scenario}_M.field"))
        if cfg.figures:
            fig_constraints(report, os.path.join(out, "check.png"),
                            scenario=cfg.scenario)
            fig_surface(triple.y, os.path.join(out, "check_surface.png"),
                        title=cfg.scenario)
        return out

    raise ConfigError(f"unknown command {command!r}; pick one of {COMMANDS}")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="magfilm",
        description="Thin magnetoelastic film energies, stray fields, "
                    "dimension-limit sweeps, and injectivity audits.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", default=None, help="flat key=value config file")
    parser.add_argument("--out", default="out", help="artifact directory")
    parser.add_argument("--resolution", type=int, default=None,
                        help="override grid_n (film nodes per side)")
    parser.add_argument("--h-list", default=None,
                        help="override h_list, comma separated")
    args = parser.parse_args(argv)

    try:
        text = ""
        if args.config is not None:
            with open(args.config, "r", encoding="utf-8") as fh:
                text = fh.read()
        cfg = parse_config(text)
        if args.resolution is not None:
            cfg = replace(cfg, grid_n=args.resolution)
        if args.h_list is not None:
            hs = tuple(float(t) for t in args.h_list.split(",") if t.strip())
            cfg = replace(cfg, h_list=hs, h=hs[0] if hs else cfg.h)
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MagfilmError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        out = run(cfg, args.command, out_dir=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MagfilmError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    print(f"{args.command}: artifacts written to {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
