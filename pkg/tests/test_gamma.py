import numpy as np
import pytest

from magfilm import (
    Field,
    Grid2,
    InadmissibleRecoveryError,
    InvalidParameterError,
    MaterialParams,
    StrayOptions,
    build_recovery,
    classify_AID,
    energy_limit,
    grad_h,
    sweep,
)
from magfilm.gamma import transverse_diagnostics
from magfilm.grids import cell_gradient2
from magfilm.model import AdmissibleTriple
from magfilm.scenarios import (
    bump_envelope,
    crossing_triple,
    fold_triple,
    identity_triple,
    random_admissible_triple,
)

PARAMS = MaterialParams()


def _bump_field(grid, scale):
    return Field(grid, scale * bump_envelope(grid)[..., None] * np.ones(3))


# ---------------------------------------------------------------------------
# recovery construction
# ---------------------------------------------------------------------------

def test_recovery_identity_is_identity_configuration():
    grid = Grid2(nx=17, ny=17)
    config = build_recovery(identity_triple(grid), 0.25, nz=5)
    ref = config.grid.nodes()
    ref[..., 2] *= 0.25
    assert np.max(np.abs(config.yh.values - ref)) == 0.0
    config.validate()


def test_recovery_scaled_director_gradient():
    grid = Grid2(nx=17, ny=17)
    t = identity_triple(grid)
    b = t.b.values.copy()
    b[..., 2] = 2.0
    triple = AdmissibleTriple(t.y, Field(grid, b), t.M)
    config = build_recovery(triple, 0.1, nz=5, admissible=False)
    G = grad_h(config.yh, 0.1)
    assert np.max(np.abs(G - np.diag([1.0, 1.0, 2.0]))) < 1e-12


def test_recovery_fh_gate():
    grid = Grid2(nx=17, ny=17)
    triple = identity_triple(grid)
    h = 0.1
    accepted = build_recovery(triple, h, fh=_bump_field(grid, h**3), nz=3)
    assert accepted.h == h
    with pytest.raises(InvalidParameterError):
        build_recovery(triple, h, fh=_bump_field(grid, h), nz=3)


def test_recovery_rejects_zero_thickness():
    with pytest.raises(InvalidParameterError):
        build_recovery(identity_triple(Grid2(nx=9, ny=9)), 0.0)


def test_recovery_rejects_orientation_loss():
    # a strongly varying director inverts inner fibers at large thickness;
    # shrinking h restores orientation
    grid = Grid2(nx=33, ny=33)
    t = identity_triple(grid)
    nodes = grid.nodes()
    b = t.b.values.copy()
    b[..., 0] += 2.0 * bump_envelope(grid) * np.sin(2 * np.pi * nodes[..., 0])
    triple = AdmissibleTriple(t.y, Field(grid, b), t.M)
    triple.validate()
    with pytest.raises(InadmissibleRecoveryError):
        build_recovery(triple, 1.0, nz=5)
    config = build_recovery(triple, 0.0625, nz=5)
    from magfilm.model import det3
    assert det3(grad_h(config.yh, 0.0625)).min() > 0


# ---------------------------------------------------------------------------
# recovery exactness
# ---------------------------------------------------------------------------

def test_recovery_magnetization_gradient_identity():
    grid = Grid2(nx=17, ny=17)
    triple = random_admissible_triple(grid, seed=2, det_floor=0.3)
    for h in (0.5, 0.25, 0.125):   # dyadic thicknesses: exact transverse zeros
        config = build_recovery(triple, h, nz=5)
        GM = grad_h(config.Mh, h)
        assert np.max(np.abs(GM[..., 2])) == 0.0
        G2 = cell_gradient2(triple.M.values, grid)
        scale = max(1.0, np.abs(G2).max())
        for k in range(config.grid.nz - 1):
            assert np.max(np.abs(GM[k][..., :2] - G2)) <= 1e-13 * scale


def test_recovery_d_diagnostic_zero():
    grid = Grid2(nx=17, ny=17)
    config = build_recovery(identity_triple(grid), 0.25, nz=5)
    d_norm, eta_norm = transverse_diagnostics(config)
    assert d_norm == 0.0
    assert eta_norm == 0.0
    triple = random_admissible_triple(grid, seed=5, det_floor=0.3)
    config = build_recovery(triple, 0.25, nz=5)
    d_norm, eta_norm = transverse_diagnostics(config)
    assert d_norm <= 1e-12
    assert eta_norm == 0.0


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def test_sweep_identity_witnesses_limit():
    triple = identity_triple(Grid2(nx=17, ny=17))
    stray = StrayOptions(voxels_per_unit=16)
    report = sweep(triple, (0.4, 0.2, 0.1), PARAMS, stray, nz=5, gap_tol=0.25)
    gaps = [abs(r.gap) for r in report.rows]
    assert all(r.gap < 0 for r in report.rows)          # energy below the limit
    assert gaps[0] > gaps[1] > gaps[2]
    for r in report.rows:
        for term in ("elastic", "exchange", "second_gradient", "barrier"):
            assert abs(r.per_term_gaps[term]) <= 1e-10
    assert report.limsup_witness and report.liminf_witness
    assert report.limit.total == pytest.approx(10.5, abs=1e-11)


def test_perturbed_recovery_stays_near_limit():
    # o(h^2) corrections leave the energy within the same witness envelope
    grid = Grid2(nx=17, ny=17)
    triple = identity_triple(grid)
    stray = StrayOptions(voxels_per_unit=16)
    from magfilm import energy_3d

    limit = energy_limit(triple, PARAMS, stray)
    h = 0.1
    plain = energy_3d(build_recovery(triple, h, nz=5), PARAMS, stray)
    pert = energy_3d(build_recovery(triple, h, fh=_bump_field(grid, h**3), nz=5),
                     PARAMS, stray)
    assert pert.total >= limit.total - 0.25
    assert pert.total == pytest.approx(plain.total, abs=0.02)


def test_sweep_rejects_nonmonotone_h():
    triple = identity_triple(Grid2(nx=9, ny=9))
    with pytest.raises(InvalidParameterError):
        sweep(triple, (0.1, 0.2), PARAMS, StrayOptions(voxels_per_unit=8))
    with pytest.raises(InvalidParameterError):
        sweep(triple, (0.2, 0.0), PARAMS, StrayOptions(voxels_per_unit=8))


def test_sweep_cross_resolution_error_bar():
    triple = identity_triple(Grid2(nx=9, ny=9))
    report = sweep(triple, (0.4, 0.2), PARAMS, StrayOptions(voxels_per_unit=8),
                   nz=3, cross_resolution=True)
    assert report.cross_resolution_error is not None
    assert 0.0 <= report.cross_resolution_error < 0.1


def test_sweep_csv_shape():
    triple = identity_triple(Grid2(nx=9, ny=9))
    report = sweep(triple, (0.4, 0.2), PARAMS, StrayOptions(voxels_per_unit=8), nz=3)
    lines = report.csv().strip().split("\n")
    assert lines[0].startswith("h,elastic,exchange")
    assert len(lines) == 3
    assert len(lines[1].split(",")) == len(lines[0].split(","))


# ---------------------------------------------------------------------------
# approximate injectivity classification
# ---------------------------------------------------------------------------

def test_classify_identity_witnessed():
    report = classify_AID(identity_triple(Grid2(nx=17, ny=17)),
                          (0.2, 0.1), nz=3, resolution=16)
    assert report.witnessed
    assert report.anomaly == ""
    assert all(r.fh_ratio == 0.0 for r in report.rows)


def test_classify_identity_with_cubic_correction():
    grid = Grid2(nx=17, ny=17)

    def fh(h):
        return _bump_field(grid, h**3)

    report = classify_AID(identity_triple(grid), (0.2, 0.1, 0.05),
                          fh_generator=fh, nz=3, resolution=16)
    ratios = [r.fh_ratio for r in report.rows]
    assert ratios == sorted(ratios, reverse=True)
    assert report.witnessed


def test_classify_fold_not_witnessed():
    report = classify_AID(fold_triple(Grid2(nx=33, ny=33)), (0.1, 0.05),
                          nz=3, resolution=32)
    assert not report.witnessed
    assert not any(r.cn_satisfied for r in report.rows)


def test_classify_crossing_records_anomaly():
    report = classify_AID(crossing_triple(Grid2(nx=33, ny=33)), (0.05,),
                          nz=3, resolution=24)
    assert report.witnessed
    assert "crossing" in report.anomaly
    assert all(r.self_intersects for r in report.rows)
