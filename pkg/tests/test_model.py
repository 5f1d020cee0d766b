import numpy as np
import pytest

from magfilm import (
    Field,
    Grid2,
    Grid3,
    InvalidParameterError,
    MaterialParams,
    elastic_W,
    grad_h,
    hess_h,
    phi,
    read_field,
    write_field,
)
from magfilm.model import AdmissibleTriple, phi_grad
from magfilm.scenarios import identity_triple, random_admissible_triple


def _grid3(n=9, nz=5):
    return Grid3(Grid2(nx=n, ny=n), nz)


def _field3(grid, fn):
    return Field.from_function(grid, fn)


# ---------------------------------------------------------------------------
# material parameters
# ---------------------------------------------------------------------------

def test_params_defaults_valid():
    p = MaterialParams()
    assert p.p == 4 and p.q == 13


def test_params_reject_small_p():
    with pytest.raises(InvalidParameterError):
        MaterialParams(p=3.0)


def test_params_reject_q_at_bound():
    # 3p/(p-3) = 12 for p = 4; q must be strictly above
    with pytest.raises(InvalidParameterError):
        MaterialParams(p=4.0, q=12.0)


def test_params_reject_nonpositive_constants():
    with pytest.raises(InvalidParameterError):
        MaterialParams(alpha=0.0)
    with pytest.raises(InvalidParameterError):
        MaterialParams(c_coupling=-1.0)


# ---------------------------------------------------------------------------
# rescaled gradient
# ---------------------------------------------------------------------------

def test_grad_h_affine_identity():
    g = _grid3()
    for h in (0.5, 0.1, 0.025):
        v = _field3(g, lambda x: np.stack(
            [x[..., 0], x[..., 1], h * x[..., 2]], axis=-1))
        G = grad_h(v, h)
        assert np.max(np.abs(G - np.eye(3))) < 1e-14


def test_grad_h_transverse_scaling():
    g = _grid3()
    v = _field3(g, lambda x: x.copy())
    G = grad_h(v, 0.5)
    assert np.max(np.abs(G - np.diag([1.0, 1.0, 2.0]))) < 1e-14


def test_grad_h_exact_on_quadratic():
    # entry (1,1) of grad_h of (x1^2, 0, 0) matches 2 x1 at cell centers
    g = Grid3(Grid2(nx=65, ny=65), 65)
    v = _field3(g, lambda x: np.stack(
        [x[..., 0] ** 2, np.zeros_like(x[..., 0]), np.zeros_like(x[..., 0])], axis=-1))
    G = grad_h(v, 1.0)
    xc = g.plane.x0 + g.plane.hx * (np.arange(g.plane.nx - 1) + 0.5)
    expect = 2.0 * xc[None, None, :]
    assert np.max(np.abs(G[..., 0, 0] - expect)) <= 1e-12


def test_grad_h_rejects_bad_thickness():
    g = _grid3()
    v = Field.zeros(g, 3)
    with pytest.raises(InvalidParameterError):
        grad_h(v, 0.0)
    with pytest.raises(InvalidParameterError):
        grad_h(v, -0.1)


# ---------------------------------------------------------------------------
# rescaled Hessian
# ---------------------------------------------------------------------------

def test_hess_h_affine_is_zero():
    g = _grid3()
    v = _field3(g, lambda x: np.stack(
        [1.0 + 2 * x[..., 0] - x[..., 1], x[..., 2], x[..., 0] + x[..., 2]], axis=-1))
    H = hess_h(v, 0.25)
    assert np.max(np.abs(H)) < 1e-11


def test_hess_h_transverse_weight():
    g = _grid3()
    v = _field3(g, lambda x: np.stack(
        [x[..., 2] ** 2, np.zeros_like(x[..., 0]), np.zeros_like(x[..., 0])], axis=-1))
    H = hess_h(v, 0.1)
    assert np.max(np.abs(H[..., 0, 2, 2] - 200.0)) < 1e-9
    assert np.max(np.abs(H[..., 0, 0, 0])) < 1e-10


def test_hess_h_mixed_weight():
    g = _grid3()
    v = _field3(g, lambda x: np.stack(
        [x[..., 0] * x[..., 2], np.zeros_like(x[..., 0]), np.zeros_like(x[..., 0])],
        axis=-1))
    H = hess_h(v, 0.5)
    assert np.max(np.abs(H[..., 0, 0, 2] - 2.0)) < 1e-12
    assert np.max(np.abs(H[..., 0, 2, 0] - 2.0)) < 1e-12


def test_hess_h_exact_on_quadratics_with_boundary_stencils():
    g = _grid3(n=9, nz=5)
    v = _field3(g, lambda x: np.stack(
        [x[..., 0] ** 2 + x[..., 0] * x[..., 1],
         x[..., 1] ** 2 - 2 * x[..., 1] * x[..., 2],
         x[..., 2] ** 2], axis=-1))
    h = 0.5
    H = hess_h(v, h)
    assert np.max(np.abs(H[..., 0, 0, 0] - 2.0)) < 1e-11
    assert np.max(np.abs(H[..., 0, 0, 1] - 1.0)) < 1e-11
    assert np.max(np.abs(H[..., 1, 1, 1] - 2.0)) < 1e-11
    assert np.max(np.abs(H[..., 1, 1, 2] + 2.0 / h)) < 1e-11
    assert np.max(np.abs(H[..., 2, 2, 2] - 2.0 / h**2)) < 1e-10


# ---------------------------------------------------------------------------
# material laws
# ---------------------------------------------------------------------------

def _random_rotations(rng, n):
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    R = np.empty((n, 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def test_elastic_identity_value():
    params = MaterialParams()
    w = elastic_W(np.eye(3), np.array([0.0, 0.0, 1.0]), params)
    assert w == pytest.approx(9.0, abs=1e-14)


def test_elastic_frame_indifference():
    params = MaterialParams()
    rng = np.random.default_rng(7)
    n = 1000
    F = rng.standard_normal((n, 3, 3))
    lam = rng.standard_normal((n, 3))
    lam /= np.linalg.norm(lam, axis=1, keepdims=True)
    R = _random_rotations(rng, n)
    w0 = elastic_W(F, lam, params)
    w1 = elastic_W(R @ F, np.einsum("nij,nj->ni", R, lam), params)
    assert np.max(np.abs(w1 - w0) / np.abs(w0)) < 1e-12


def test_elastic_magnetic_parity():
    params = MaterialParams()
    rng = np.random.default_rng(8)
    n = 1000
    F = rng.standard_normal((n, 3, 3))
    lam = rng.standard_normal((n, 3))
    lam /= np.linalg.norm(lam, axis=1, keepdims=True)
    assert np.array_equal(elastic_W(F, lam, params), elastic_W(F, -lam, params))


def test_elastic_coercivity():
    params = MaterialParams(c_elastic=0.7)
    c = min(params.c_elastic, 1.0)
    rng = np.random.default_rng(9)
    F = rng.standard_normal((500, 3, 3))
    lam = rng.standard_normal((500, 3))
    lam /= np.linalg.norm(lam, axis=1, keepdims=True)
    w = elastic_W(F, lam, params)
    bound = c * np.sum(F * F, axis=(1, 2)) ** (params.p / 2) - 1.0 / c
    assert np.all(w >= bound)


def test_elastic_rejects_non_unit_lambda():
    with pytest.raises(InvalidParameterError):
        elastic_W(np.eye(3), np.array([0.0, 0.0, 1.1]), MaterialParams())


def test_phi_values_and_sentinel():
    params = MaterialParams()
    assert phi(np.eye(3), params) == pytest.approx(1.0)
    assert phi(2.0 * np.eye(3), params) == pytest.approx(8.0 ** -13.0, rel=1e-13)
    F = np.diag([1.0, 1.0, -1.0])
    assert np.isinf(phi(F, params))


def test_phi_lower_bound_and_uniaxial_exactness():
    params = MaterialParams()
    for gamma in (0.9, 0.5, 0.25, 0.1):
        F = np.diag([1.0, 1.0, gamma])
        assert phi(F, params) == gamma ** (-params.q)
    rng = np.random.default_rng(10)
    F = rng.standard_normal((300, 3, 3))
    det = np.linalg.det(F)
    pos = det > 0
    vals = phi(F[pos], params)
    assert np.all(vals >= det[pos] ** (-params.q) * (1 - 1e-12))


def test_phi_grad_matches_fd():
    params = MaterialParams()
    rng = np.random.default_rng(11)
    F = np.eye(3) + 0.2 * rng.standard_normal((3, 3))
    assert np.linalg.det(F) > 0
    G = phi_grad(F[None], params)[0]
    eps = 1e-6
    for i in range(3):
        for j in range(3):
            Fp = F.copy(); Fp[i, j] += eps
            Fm = F.copy(); Fm[i, j] -= eps
            fd = (phi(Fp, params) - phi(Fm, params)) / (2 * eps)
            assert G[i, j] == pytest.approx(fd, rel=1e-5)


# ---------------------------------------------------------------------------
# state types
# ---------------------------------------------------------------------------

def test_identity_triple_is_admissible():
    t = identity_triple(Grid2(nx=17, ny=17))
    eps = t.validate()
    assert eps == pytest.approx(1.0)


def test_random_triple_measures_det_floor():
    t = random_admissible_triple(Grid2(nx=17, ny=17), seed=3, det_floor=0.2)
    eps = t.validate(det_floor=0.2)
    assert eps > 0.2


def test_triple_rejects_unsaturated_magnetization():
    t = identity_triple(Grid2(nx=9, ny=9))
    bad = t.M.values.copy()
    bad[3, 3] *= 1.0 + 1e-6
    with pytest.raises(InvalidParameterError):
        AdmissibleTriple(t.y, t.b, Field(t.grid, bad)).validate()


def test_triple_rejects_boundary_violation():
    t = identity_triple(Grid2(nx=9, ny=9))
    bad = t.y.values.copy()
    bad[0, 4, 0] += 0.01
    with pytest.raises(InvalidParameterError):
        AdmissibleTriple(Field(t.grid, bad), t.b, t.M).validate()


def test_grid_invariants():
    with pytest.raises(InvalidParameterError):
        Grid2(nx=2, ny=9)
    with pytest.raises(InvalidParameterError):
        Grid3(Grid2(), nz=2)
    g = Grid3(Grid2(nx=5, ny=5), nz=5)
    assert g.zs()[0] == -0.5 and g.zs()[-1] == 0.5
    assert Grid2(nx=5, ny=9).hx == pytest.approx(0.25)


# ---------------------------------------------------------------------------
# field file format
# ---------------------------------------------------------------------------

def test_field_roundtrip_2d(tmp_path):
    g = Grid2(nx=5, ny=7)
    rng = np.random.default_rng(1)
    f = Field(g, rng.standard_normal((7, 5, 3)))
    path = tmp_path / "f.field"
    write_field(f, path)
    back = read_field(path)
    assert back.grid == g
    assert np.allclose(back.values, f.values, rtol=0, atol=1e-15)


def test_field_roundtrip_3d(tmp_path):
    g = Grid3(Grid2(nx=4, ny=5), 3)
    rng = np.random.default_rng(2)
    f = Field(g, rng.standard_normal((3, 5, 4, 2)))
    path = tmp_path / "f3.field"
    write_field(f, path)
    back = read_field(path)
    assert back.grid == g
    assert np.allclose(back.values, f.values, rtol=0, atol=1e-15)


def test_field_reader_rejects_mismatched_counts(tmp_path):
    path = tmp_path / "bad.field"
    with open(path, "w") as fh:
        fh.write("FIELD G2 3 3 1\n")
        for _ in range(8):   # one node short
            fh.write("0.0\n")
    with pytest.raises(InvalidParameterError):
        read_field(path)


def test_field_reader_rejects_bad_header(tmp_path):
    path = tmp_path / "bad2.field"
    path.write_text("NOTAFIELD 3 3 1\n")
    with pytest.raises(InvalidParameterError):
        read_field(path)
