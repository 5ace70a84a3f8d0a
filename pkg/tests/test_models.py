import numpy as np
import pytest

from oracles import central_gradient
from vaisman_cy import exterior as ext
from vaisman_cy import models as md

RNG_SEED = 11


@pytest.fixture(scope="module")
def hopf2():
    return md.HopfModel(2)


@pytest.fixture(scope="module")
def nil():
    return md.NilmanifoldModel()


def pts(model, count=200, seed=RNG_SEED):
    return model.sample_points(np.random.default_rng(seed), count)


# -- construction and closed forms ---------------------------------------------

def test_model_factory_and_validation():
    assert md.make_model("hopf3").n == 3
    assert md.make_model("nil3").name == "nil3"
    with pytest.raises(ValueError):
        md.make_model("kodaira")
    with pytest.raises(ValueError):
        md.HopfModel(2, alpha=1.0)
    with pytest.raises(ValueError):
        md.HopfModel(4)


def test_hopf_rejects_points_near_origin(hopf2):
    with pytest.raises(ValueError):
        hopf2.structure(np.array([1e-4, 0.0, 0.0, 0.0]))


def test_hopf_lee_form_has_unit_length(hopf2):
    s = hopf2.structure(np.array([1.0, 0.0, 0.0, 0.0]))
    assert ext.form_norm(s.g, s.theta) == pytest.approx(1.0, abs=1e-10)
    s = hopf2.structure(pts(hopf2))
    assert np.max(np.abs(ext.form_norm(s.g, s.theta) - 1.0)) < 1e-10


def test_hopf_lee_form_is_minus_dlog_r2(hopf2):
    x = np.array([1.0, 0.0, 0.0, 0.0])
    fd = -central_gradient(lambda q: np.log(np.sum(q ** 2, axis=-1)), x, 1e-5)
    assert np.allclose(hopf2.structure(x).theta.coeffs, fd, atol=1e-8)
    p = pts(hopf2, 20)
    fd = -central_gradient(lambda q: np.log(np.sum(q ** 2, axis=-1)), p, 1e-5)
    assert np.allclose(hopf2.structure(p).theta.coeffs, fd, atol=1e-8)


def test_structure_tensor_invariants(hopf2, nil):
    for model in (hopf2, md.HopfModel(3), nil):
        p = pts(model, 50)
        s = model.structure(p)
        # omega(X, Y) = g(IX, Y)
        W = ext.two_form_matrix(s.omega)
        assert np.allclose(W, np.swapaxes(s.I.matrix, -1, -2) @ s.g.matrix, atol=1e-12)
        assert np.allclose(s.theta_c.coeffs, ext.apply_complex_structure(s.I, s.theta).coeffs)
        assert np.allclose(s.lee_field.components, ext.sharp(s.g, s.theta).components, atol=1e-12)
        assert np.min(md.omega0_spectrum(s)) >= -1e-10


def test_nil_frame_tensors(nil):
    s = nil.structure(np.zeros(6))
    expected = ext.basis_form(6, 0, 1) + ext.basis_form(6, 2, 3) + ext.basis_form(6, 4, 5)
    assert np.array_equal(s.omega.coeffs, expected.coeffs)
    assert np.max(np.abs(nil.jacobi_residual())) == 0.0
    assert np.array_equal(nil._dc_theta().coeffs, (ext.basis_form(6, 0, 1) + ext.basis_form(6, 2, 3)).coeffs)


def test_nil_frame_dual_to_coframe(nil):
    p = pts(nil, 5)
    F = nil.frame(p)
    e6 = np.einsum("...i,...ij->...j", np.array([0, 0, 0, 0, 0, 1.0]), np.linalg.inv(F))
    # e^6 = dx6 - (x1 dx2 - x2 dx1 + x3 dx4 - x4 dx3) / 2
    x = p
    ref = np.stack([x[:, 1] / 2, -x[:, 0] / 2, x[:, 3] / 2, -x[:, 2] / 2, 0 * x[:, 0], 1 + 0 * x[:, 0]], -1)
    assert np.allclose(e6, ref, atol=1e-14)


# -- numerical exterior derivative ----------------------------------------------

def test_d_of_constant_form_vanishes():
    p = np.random.default_rng(0).standard_normal((10, 3))
    out = md.numerical_exterior_derivative(lambda q: ext.one_form(np.ones(q.shape)), p, 1e-4)
    assert out.sup() < 1e-12


def test_d_of_x_dy():
    p = np.random.default_rng(1).standard_normal((10, 2))
    out = md.numerical_exterior_derivative(lambda q: ext.one_form(np.stack([0 * q[..., 0], q[..., 0]], -1)), p, 1e-4)
    assert np.allclose(out.coeffs, 1.0, atol=1e-8)


def test_d_squared_vanishes():
    p = np.random.default_rng(2).standard_normal((10, 4)) + 3.0

    def a(q):
        return ext.one_form(np.stack([np.sin(q[..., 1]) * q[..., 2], q[..., 0] ** 2 * q[..., 3],
                                      np.exp(0.1 * q[..., 0]), np.cos(q[..., 2])], -1))

    dd = md.numerical_exterior_derivative(lambda q: md.numerical_exterior_derivative(a, q, 1e-3), p, 1e-3)
    assert dd.sup() < 1e-6


def test_ce_differential_matches_structure_constants(nil):
    T = md.ce_differential_table(nil.structure_constants, 1)
    de6 = ext.AlternatingForm(6, 2, ext.basis_form(6, 5).coeffs @ T)
    assert np.array_equal(de6.coeffs, -(ext.basis_form(6, 0, 1) + ext.basis_form(6, 2, 3)).coeffs)
    # d^2 = 0 on the Chevalley-Eilenberg complex
    for k in range(1, 5):
        assert np.max(np.abs(md.ce_differential_table(nil.structure_constants, k - 1)
                             @ md.ce_differential_table(nil.structure_constants, k))) == 0.0


# -- identity checks -----------------------------------------------------------

@pytest.mark.parametrize("n", [2, 3])
def test_hopf_identities(n):
    model = md.HopfModel(n)
    p = pts(model, 150)
    assert np.max(md.check_lck(model, p)) <= 1e-6
    assert np.max(md.check_lee_closed(model, p)) <= 1e-6
    assert np.max(md.check_structure_identity(model, p)) <= 1e-6
    assert np.max(md.check_contraction(model, p)) <= 1e-6
    assert np.max(md.check_parallel_lee(model, p)) <= 1e-5
    k = md.check_killing_commuting(model, p)
    assert max(np.max(v) for v in k) <= 1e-6
    fk = md.check_foliation_kernel(model, p)
    assert np.all(fk.kernel_dim == 2) and np.max(fk.angles) <= 1e-6


def test_nil_identities_exact(nil):
    p = pts(nil, 100)
    for fn in (md.check_lck, md.check_lee_closed, md.check_structure_identity, md.check_contraction):
        assert np.max(fn(nil, p)) <= 1e-12
    assert np.max(md.check_parallel_lee(nil, p)) <= 1e-12
    assert max(np.max(v) for v in md.check_killing_commuting(nil, p)) <= 1e-12
    fk = md.check_foliation_kernel(nil, p)
    assert np.all(fk.kernel_dim == 2) and np.max(fk.angles) <= 1e-12


@pytest.mark.parametrize("check", [md.check_lck, md.check_structure_identity, md.check_lee_closed])
def test_fd_convergence_order(hopf2, check):
    p = pts(hopf2, 100)
    h = 4 * hopf2.default_step(p)
    ratio = np.max(check(hopf2, p, h)) / np.max(check(hopf2, p, h / 2))
    assert 3.5 <= ratio <= 4.5


def test_negative_control_scaled_lee(hopf2, nil):
    assert np.min(md.check_lck(hopf2, pts(hopf2, 50), theta_scale=1.1)) > 0.01
    assert np.min(md.check_lck(nil, pts(nil, 10), theta_scale=1.1)) > 0.01


def test_negative_control_opposite_dc(hopf2):
    assert np.min(md.check_structure_identity(hopf2, pts(hopf2, 20), dc_sign=-1.0)) > 0.01


def test_negative_control_euclidean_metric(hopf2, nil):
    p = pts(hopf2, 50)
    eu = lambda q: np.broadcast_to(np.eye(4), q.shape[:-1] + (4, 4))  # noqa: E731
    assert np.min(md.check_parallel_lee(hopf2, p, metric_fn=eu, tol=np.inf)) > 0.01
    # on the nilmanifold e^5 = dx5 is parallel for the flat coordinate metric, so use a conformal change
    q = pts(nil, 20)
    conf = lambda y: np.exp(0.5 * y[..., 0])[..., None, None] * np.eye(6)  # noqa: E731
    assert np.min(md.check_parallel_lee(nil, q, metric_fn=conf, tol=np.inf)) > 0.01


def test_negative_control_nondegenerate_kernel(hopf2):
    p = pts(hopf2, 20)
    w = md.euclidean_kahler_form(2) * np.ones(len(p))
    assert np.all(md.check_foliation_kernel(hopf2, p, omega0=w).kernel_dim == 0)


def test_parallel_check_refuses_large_steps(hopf2):
    with pytest.raises(ValueError):
        md.check_parallel_lee(hopf2, pts(hopf2, 20), h=0.3)


def test_kernel_intersection(hopf2):
    s = hopf2.structure(pts(hopf2, 30))
    rep = md.kernel_intersection(s.omega0, s.omega0, md.lee_span(s))
    assert np.all(rep.kernel_dim == 2) and np.max(rep.angles) < 1e-12
    rep = md.kernel_intersection(s.omega0, md.euclidean_kahler_form(2) * np.ones(30), md.lee_span(s))
    assert np.all(rep.kernel_dim == 0)


# -- deck group and leaf space -------------------------------------------------

@pytest.mark.parametrize("alpha,expected", [(2.0, 4.0), (1.5, 2.25), (3.0, 9.0), (1 + 1e-6, 1.0)])
def test_homothety_character(alpha, expected):
    hc = md.homothety_character(md.HopfModel(2, alpha))
    assert hc.value == pytest.approx(expected, abs=1e-5 if alpha < 1.1 else 1e-10)
    assert hc.spread <= 1e-10


def test_homothety_requires_hopf(nil):
    with pytest.raises(ValueError):
        md.homothety_character(nil)


def test_structure_descends_to_quotient(hopf2):
    p = pts(hopf2, 40)
    a = hopf2.alpha
    s, sg = hopf2.structure(p), hopf2.structure(hopf2.deck(p))
    L = a * np.eye(4)
    for name in ("omega", "theta", "omega0"):
        pulled = ext.pullback_linear(L, getattr(sg, name))
        assert np.allclose(pulled.coeffs, getattr(s, name).coeffs, atol=1e-12)
    assert np.allclose(a * a * sg.g.matrix, s.g.matrix, atol=1e-12)


def test_leaf_projection_examples(hopf2):
    assert np.allclose(hopf2.leaf_project(np.array([1.0, 0, 0, 0])), [0, 0, 1])
    p = pts(hopf2, 30)
    assert np.allclose(hopf2.leaf_project(p), hopf2.leaf_project(2 * p), atol=1e-14)
    u = hopf2.leaf_project(p)
    assert np.allclose(hopf2.leaf_project(hopf2.leaf_lift(u)), u, atol=1e-12)


@pytest.mark.parametrize("model_id", ["hopf2", "hopf3", "nil3"])
def test_leaf_projection_constant_along_flows(model_id):
    model = md.make_model(model_id)
    d_lee, d_anti = md.leaf_drift(model, pts(model, 8), time=1.0)
    assert d_lee <= 1e-6 and d_anti <= 1e-6


def test_flow_of_lee_field_is_radial_contraction(hopf2):
    p = pts(hopf2, 4)
    q = md.flow(hopf2, lambda x: hopf2.structure(x).lee_field.components, p, time=1.0)
    assert np.allclose(q, p * np.exp(-0.5), atol=1e-10)
