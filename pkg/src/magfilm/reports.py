"""Report persistence: delimited output, key=value blocks, and figures.

Every numeric CSV cell is written with 17 significant digits, so equal
runs produce byte-identical delimited files.  Figures are rendered next
to the CSVs on the report paths (thickness sweeps, descent traces,
constraint audits); they are presentation artifacts and carry no
determinism contract.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def write_text(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def write_csv(path, header, rows):
    lines = [header]
    lines.extend(rows)
    write_text(path, "\n".join(lines) + "\n")


def format_value(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float) or isinstance(v, np.floating):
        return f"{float(v):.17g}"
    return str(v)


def write_keyvalues(path, mapping):
    lines = [f"{k}={format_value(v)}" for k, v in mapping.items()]
    write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def fig_sweep(report, path):
    """Gap versus thickness (log-log) plus per-term bars at the smallest h."""
    hs = [r.h for r in report.rows]
    gaps = [abs(r.gap) for r in report.rows]
    mags3 = [r.breakdown_3d.magnetostatic for r in report.rows]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    ax = axes[0]
    ax.loglog(hs, gaps, "o-", label="|E_h - F|")
    ax.axhline(report.gap_tol, color="gray", ls="--", lw=0.8, label="tolerance")
    ax.set_xlabel("thickness h")
    ax.set_ylabel("energy gap")
    ax.invert_xaxis()
    ax.legend(fontsize=8)
    ax = axes[1]
    ax.plot(hs, mags3, "s-", label="magnetostatic (plate)")
    ax.axhline(report.limit.magnetostatic, color="C3", ls="--",
               label="magnetostatic (limit)")
    ax.set_xlabel("thickness h")
    ax.set_ylabel("energy")
    ax.invert_xaxis()
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def fig_trace(trace, path):
    rows = trace.rows
    its = [r.iteration for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
    axes[0].plot(its, [r.total for r in rows], "-")
    axes[0].set_xlabel("accepted step")
    axes[0].set_ylabel("total energy")
    g = [(r.iteration, r.grad_norm) for r in rows if np.isfinite(r.grad_norm)]
    if g:
        axes[1].semilogy([a for a, _ in g], [max(b, 1e-300) for _, b in g], "-")
    axes[1].set_xlabel("accepted step")
    axes[1].set_ylabel("gradient norm")
    axes[2].plot(its, [r.min_det for r in rows], "-")
    axes[2].set_xlabel("accepted step")
    axes[2].set_ylabel("min det")
    fig.suptitle(f"termination: {trace.termination}", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def fig_breakdown(breakdown, path, title=""):
    kv = breakdown.key_values()
    names = ["elastic", "exchange", "second_gradient", "barrier", "magnetostatic"]
    vals = [kv[n] for n in names]
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    finite_vals = [v if np.isfinite(v) else 0.0 for v in vals]
    ax.bar(range(len(names)), finite_vals, color="C0")
    for i, v in enumerate(vals):
        if not np.isfinite(v):
            ax.text(i, 0.5, "inf", ha="center", color="C3")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=20, fontsize=8)
    ax.set_ylabel("energy")
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def fig_surface(y_field, path, title=""):
    """Wireframe of the deformed film."""
    v = y_field.values
    step = max(1, v.shape[0] // 33)
    X = v[::step, ::step, 0]
    Y = v[::step, ::step, 1]
    Z = v[::step, ::step, 2]
    fig = plt.figure(figsize=(5.5, 4.2))
    ax = fig.add_subplot(projection="3d")
    ax.plot_wireframe(X, Y, Z, linewidth=0.4, color="C0")
    span = max(np.ptp(X), np.ptp(Y), np.ptp(Z), 1e-3)
    mid = [(X.max() + X.min()) / 2, (Y.max() + Y.min()) / 2, (Z.max() + Z.min()) / 2]
    ax.set_xlim(mid[0] - span / 2, mid[0] + span / 2)
    ax.set_ylim(mid[1] - span / 2, mid[1] + span / 2)
    ax.set_zlim(mid[2] - span / 2, mid[2] + span / 2)
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def fig_constraints(report, path, scenario=""):
    kv = report.key_values()
    fig, axes = plt.subplots(1, 2, figsize=(8.5, 3.2))
    ax = axes[0]
    pairs = [("volume", kv["cn_integral"], kv["cn_measured"]),
             ("area", kv["area_lhs"], kv["area_rhs"])]
    x = np.arange(len(pairs))
    ax.bar(x - 0.17, [p[1] for p in pairs], width=0.34, label="change of variables")
    ax.bar(x + 0.17, [p[2] for p in pairs], width=0.34, label="measured")
    ax.set_xticks(x)
    ax.set_xticklabels([p[0] for p in pairs])
    ax.legend(fontsize=8)
    ax = axes[1]
    names = ["avg_inv", "bilip", "min_det"]
    vals = [kv["avg_inv_constant"], kv["bilip_constant"], kv["min_det"]]
    vals = [v if np.isfinite(v) else 0.0 for v in vals]
    ax.bar(names, vals, color="C2")
    ax.set_title(
        f"cn {'ok' if kv['cn_satisfied'] else 'violated'} / "
        f"area {'ok' if kv['area_satisfied'] else 'violated'} / "
        f"{'self-intersecting' if kv['self_intersects'] else 'no intersection found'}",
        fontsize=8,
    )
    if scenario:
        fig.suptitle(scenario, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
