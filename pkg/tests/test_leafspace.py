import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate as sint

from oracles import central_gradient, central_hessian
from vaisman_cy import leafspace as ls
from vaisman_cy.leafspace import BasicField, SphereGrid, TorusGrid


# spherical transforms are accurate to ~3e-14 per coefficient; derivatives amplify by up to L(L+1)
SPHERE_DERIV_TOL = 1e-13 * 32 * 33


@pytest.fixture(scope="module")
def sphere():
    return SphereGrid(32)


@pytest.fixture(scope="module")
def sphere8():
    return SphereGrid(8)


@pytest.fixture(scope="module")
def torus():
    return TorusGrid(8)


def trig_poly(x):
    return (0.1 * np.cos(x[..., 0]) * np.cos(x[..., 2]) + 0.05 * np.sin(x[..., 1] + x[..., 3])
            + 0.02 * np.cos(2 * x[..., 0] - x[..., 3]))


def random_band_limited_sphere(grid, rng, lmax=6, amp=0.05):
    c = np.zeros(grid.degrees.size)
    sel = (grid.degrees > 0) & (grid.degrees <= lmax)
    c[sel] = amp * rng.standard_normal(sel.sum())
    return BasicField(grid, grid.synthesize(c))


def random_band_limited_torus(grid, rng, kmax=2, amp=0.02):
    fhat = np.zeros(grid.shape, dtype=complex)
    k = np.fft.fftfreq(grid.N, 1.0 / grid.N)
    K = np.meshgrid(k, k, k, k, indexing="ij")
    sel = (np.max(np.abs(K), axis=0) <= kmax) & (np.max(np.abs(K), axis=0) > 0)
    fhat[sel] = rng.standard_normal(sel.sum()) + 1j * rng.standard_normal(sel.sum())
    v = np.fft.ifftn(fhat).real
    return BasicField(grid, amp * v / np.max(np.abs(v)))


# -- grids ---------------------------------------------------------------------

def test_sphere_weights_total_area(sphere):
    assert np.sum(sphere.weights) == pytest.approx(4 * np.pi, abs=1e-10)


def test_sphere_quadrature_exact_to_degree_2L(sphere8):
    Y = sphere8._Y
    gram = Y.T @ (sphere8.weights.ravel()[:, None] * Y)
    assert np.max(np.abs(gram - np.eye(gram.shape[0]))) < 1e-12


def test_grid_validation():
    with pytest.raises(ValueError):
        TorusGrid(9)
    with pytest.raises(ValueError):
        TorusGrid(6)
    with pytest.raises(ValueError):
        SphereGrid(1)


def test_real_harmonic_matches_scipy_complex():
    from scipy.special import sph_harm_y
    th, ph = 0.7, 1.9
    for l, m in ((2, 0), (3, 2), (3, -2), (5, 4)):
        Yc = sph_harm_y(l, abs(m), th, ph)
        ref = Yc.real * (1 if m == 0 else (-1) ** m * np.sqrt(2)) if m >= 0 else (-1) ** m * np.sqrt(2) * Yc.imag
        assert ls.real_sph_harm_single(l, m, th, ph) == pytest.approx(ref, abs=1e-13)


# -- dd^c -----------------------------------------------------------------------

def test_ddc_of_constant_is_zero(sphere, torus):
    A = ls.ddc_basic(BasicField(sphere, np.full(sphere.shape, 3.0))).matrices
    assert np.max(np.abs(A)) < 3.0 * SPHERE_DERIV_TOL
    A = ls.ddc_basic(BasicField(torus, np.full(torus.shape, 3.0))).matrices
    assert np.max(np.abs(A)) < 1e-12


def test_ddc_sphere_eigenvalue(sphere):
    Y10 = sphere.harmonic(1, 0)
    A = ls.ddc_basic(Y10).matrices[..., 0, 0].real
    assert np.max(np.abs(A - ls.C_DELTA * (-2.0) * Y10.values)) < SPHERE_DERIV_TOL


def test_ddc_torus_cos_single_entry(torus):
    f = torus.from_function(lambda x: np.cos(x[..., 0]))
    A = ls.ddc_basic(f).matrices
    # FD-Hessian oracle: A_11 = f_11 + f_22, other entries vanish
    H = central_hessian(lambda x: np.cos(x[..., 0]), torus.coordinates.reshape(-1, 4)[:50])
    ref = H[:, 0, 0] + H[:, 1, 1]
    assert np.allclose(A.reshape(-1, 2, 2)[:50, 0, 0].real, ls.C_DELTA * ref, atol=1e-8)
    assert np.max(np.abs(A[..., 1, 1])) < 1e-12 and np.max(np.abs(A[..., 0, 1])) < 1e-12
    assert np.allclose(A[..., 0, 0].real, -np.cos(torus.coordinates[..., 0]), atol=1e-12)


def test_ddc_torus_full_matrix_against_fd_hessian(torus):
    f = torus.from_function(trig_poly)
    A = ls.ddc_basic(f).matrices.reshape(-1, 2, 2)
    x = torus.coordinates.reshape(-1, 4)[::97]
    H = central_hessian(trig_poly, x)
    a11 = H[:, 0, 0] + H[:, 1, 1]
    a22 = H[:, 2, 2] + H[:, 3, 3]
    a12 = H[:, 0, 2] + H[:, 1, 3] + 1j * (H[:, 0, 3] - H[:, 1, 2])
    sub = A[::97]
    assert np.allclose(sub[:, 0, 0], a11, atol=1e-8)
    assert np.allclose(sub[:, 1, 1], a22, atol=1e-8)
    assert np.allclose(sub[:, 0, 1], a12, atol=1e-8)


def test_aliasing_guard(sphere, torus):
    noisy = BasicField(torus, np.random.default_rng(0).standard_normal(torus.shape))
    with pytest.raises(ls.AliasingError):
        ls.ddc_basic(noisy)
    Y = sphere.harmonic(30, 3)
    with pytest.raises(ls.AliasingError):
        ls.ma_ratio(Y)
    ls.ma_ratio(Y, check_alias=False)


def test_convention_constant_selftest():
    out = ls.ddc_convention_selftest()
    assert out["sphere"] == pytest.approx(ls.C_DELTA, abs=1e-5)
    assert out["torus"] == pytest.approx(ls.C_DELTA, abs=1e-5)
    assert out["torus_det_mismatch"] < 1e-6


# -- quadrature ------------------------------------------------------------------

def test_integrate_examples(sphere):
    assert ls.integrate(BasicField(sphere, np.ones(sphere.shape))) == pytest.approx(4 * np.pi, abs=1e-12)
    assert abs(ls.integrate(sphere.harmonic(1, 0))) < 1e-12


def test_integrate_sphere_against_scipy_quad(sphere):
    fn = lambda u: u[..., 0] ** 2 * u[..., 2] + 0.3 * u[..., 1] ** 4 + np.exp(0.0) * u[..., 0] * u[..., 1]  # noqa: E731
    ref, _ = sint.dblquad(lambda th, ph: fn(np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph),
                                                       np.cos(th)])) * np.sin(th),
                          0, 2 * np.pi, 0, np.pi, epsabs=1e-13, epsrel=1e-13)
    assert ls.integrate(sphere.from_function(fn)) == pytest.approx(ref, abs=1e-8)


def test_integrate_torus_against_dense_sum(torus):
    f = torus.from_function(lambda x: 1.0 + trig_poly(x) + 0.3 * np.cos(x[..., 1]) ** 2)
    fine = TorusGrid(24).from_function(lambda x: 1.0 + trig_poly(x) + 0.3 * np.cos(x[..., 1]) ** 2)
    dense = np.sum(fine.values) * (2 * np.pi / 24) ** 4
    assert ls.integrate(f) == pytest.approx(dense, rel=1e-12)
    assert ls.integrate(f) == pytest.approx((2 * np.pi) ** 4 * 1.15, rel=1e-12)


# -- Poisson --------------------------------------------------------------------

def test_poisson_examples(sphere):
    assert ls.poisson_solve(ls.zeros(sphere)).sup() == 0.0
    Y20 = sphere.harmonic(2, 0)
    f = ls.poisson_solve(Y20)
    assert np.max(np.abs(f.values - Y20.values / (ls.C_DELTA * -6.0))) < 1e-12
    with pytest.raises(ls.CompatibilityError):
        ls.poisson_solve(BasicField(sphere, np.ones(sphere.shape)))


def test_poisson_residual(sphere):
    rho = random_band_limited_sphere(sphere, np.random.default_rng(3), lmax=20, amp=0.3)
    f = ls.poisson_solve(rho)
    res = ls.ddc_basic(f).matrices[..., 0, 0].real - rho.values
    assert np.max(np.abs(res)) <= 1e-10
    assert abs(f.mean()) < 1e-14


# -- Monge-Ampere ratio --------------------------------------------------------------

def test_ma_ratio_of_zero(sphere, torus):
    for g in (sphere, torus):
        assert np.array_equal(ls.ma_ratio(ls.zeros(g)).values, np.ones(g.shape))
        assert ls.positivity_margin(ls.zeros(g)) == 1.0


def test_ma_ratio_torus_fd_determinant(torus):
    fn = lambda x: 0.1 * np.cos(x[..., 0]) * np.cos(x[..., 2])  # noqa: E731
    d = ls.ma_ratio(torus.from_function(fn)).values.reshape(-1)
    x = torus.coordinates.reshape(-1, 4)[::37]
    H = central_hessian(fn, x)
    a11 = 1 + H[:, 0, 0] + H[:, 1, 1]
    a22 = 1 + H[:, 2, 2] + H[:, 3, 3]
    a12 = H[:, 0, 2] + H[:, 1, 3] + 1j * (H[:, 0, 3] - H[:, 1, 2])
    assert np.allclose(d[::37], a11 * a22 - np.abs(a12) ** 2, atol=1e-8)


@pytest.mark.parametrize("which", ["sphere", "torus"])
def test_ma_ratio_linearization(which, sphere, torus):
    g = sphere if which == "sphere" else torus
    rng = np.random.default_rng(5)
    f = random_band_limited_sphere(g, rng, amp=1.0) if which == "sphere" else random_band_limited_torus(g, rng, amp=1.0)
    lin = ls.C_DELTA * ls.laplacian(f).values
    rem = []
    for eps in (1e-4, 5e-5):
        rem.append(np.max(np.abs(ls.ma_ratio(f * eps).values - 1 - eps * lin)))
    if which == "sphere":
        assert max(rem) < 1e-12  # linear in complex dimension one
    else:
        assert rem[0] < 1e-6 and rem[0] / rem[1] == pytest.approx(4.0, rel=1e-3)


def test_positivity_margin_negative_for_large_potential(sphere):
    Y20 = sphere.harmonic(2, 0)
    assert ls.positivity_margin(Y20 * 2.0) < 0
    assert ls.positivity_margin(Y20 * 0.05) > 0


def test_spectral_refinement_invariance():
    coarse, fine = TorusGrid(8), TorusGrid(16)
    dc = ls.ma_ratio(coarse.from_function(trig_poly)).values
    df = ls.ma_ratio(fine.from_function(trig_poly)).values[::2, ::2, ::2, ::2]
    assert np.max(np.abs(dc - df)) <= 1e-10


# -- D_P ---------------------------------------------------------------------------

def test_apply_dp_examples(sphere):
    bg = ls.background(ls.zeros(sphere))
    const = BasicField(sphere, np.full(sphere.shape, 2.0))
    assert np.max(np.abs(ls.apply_dp(const, bg, bg).values)) < 2.0 * SPHERE_DERIV_TOL
    f = sphere.harmonic(3, 1)
    assert np.allclose(ls.apply_dp(f, bg, bg).values, ls.C_DELTA * ls.laplacian(f).values, atol=1e-14)


def test_apply_dp_rejects_nonpositive_background(sphere):
    bad = ls.background(sphere.harmonic(2, 0) * 2.0)
    with pytest.raises(ValueError):
        ls.apply_dp(sphere.harmonic(1, 0), bad, bad)


@pytest.mark.parametrize("which", ["sphere", "torus"])
def test_dp_factorization(which, sphere, torus):
    rng = np.random.default_rng(8)
    if which == "sphere":
        f1, f2 = (random_band_limited_sphere(sphere, rng, lmax=3, amp=0.01) for _ in range(2))
    else:
        f1, f2 = random_band_limited_torus(torus, rng, amp=0.05), random_band_limited_torus(torus, rng, amp=0.05)
    b1, b2 = ls.background(f1), ls.background(f2)
    lhs = ls.ma_ratio(f1).values - ls.ma_ratio(f2).values
    rhs = ls.apply_dp(f1 - f2, b1, b2, over="omega0").values
    assert np.max(np.abs(lhs - rhs)) <= 1e-10
    # dividing by eta1^(n-1) gives the relative difference quotient
    quot = ls.apply_dp(f1 - f2, b1, b2).values
    assert np.max(np.abs(quot - lhs / b1.determinant())) <= 1e-10


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 3))
def test_dp_linear_and_elliptic(seed, s):
    torus = TorusGrid(8)
    rng = np.random.default_rng(seed)
    f1, f2 = random_band_limited_torus(torus, rng, amp=0.05), random_band_limited_torus(torus, rng, amp=0.05)
    b1, b2 = ls.background(f1), ls.background(f2)
    u, v = random_band_limited_torus(torus, rng, amp=1.0), random_band_limited_torus(torus, rng, amp=1.0)
    lhs = ls.apply_dp(u + v * s, b1, b2).values
    rhs = ls.apply_dp(u, b1, b2).values + s * ls.apply_dp(v, b1, b2).values
    assert np.max(np.abs(lhs - rhs)) < 1e-12
    # <u, D_P u> weighted by eta1^(n-1) is negative for nonconstant u
    du = ls.apply_dp(u, b1, b2, over="omega0").values
    assert np.sum(u.values * du) < 0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_laplacian_integrates_to_zero(seed):
    g = SphereGrid(12)
    f = random_band_limited_sphere(g, np.random.default_rng(seed), lmax=8, amp=1.0)
    assert abs(ls.integrate(ls.laplacian(f))) < 1e-12


# -- off-grid evaluation --------------------------------------------------------------

def test_interpolant_reproduces_sphere_nodes_and_gradient(sphere):
    f = random_band_limited_sphere(sphere, np.random.default_rng(9), lmax=10, amp=0.2)
    it = ls.SpectralInterpolant(f)
    assert np.max(np.abs(it.sphere_value(sphere.points) - f.values)) < 1e-12
    assert np.max(np.abs(it.sphere_laplacian(sphere.points) - ls.laplacian(f).values)) < 1e-10
    u = np.random.default_rng(1).standard_normal((20, 3))
    u /= np.linalg.norm(u, axis=-1, keepdims=True)
    # extend radially (degree-0 homogeneous) so the ambient FD gradient is tangential
    ext_fn = lambda q: it.sphere_value(q / np.linalg.norm(q, axis=-1, keepdims=True))  # noqa: E731
    assert np.allclose(it.sphere_gradient(u), central_gradient(ext_fn, u, 1e-6), atol=1e-7)


def test_interpolant_torus_jet(torus):
    f = torus.from_function(trig_poly)
    it = ls.SpectralInterpolant(f)
    x = np.random.default_rng(2).uniform(0, 2 * np.pi, (30, 4))
    val, grad, hess = it.torus_jet(x)
    assert np.allclose(val, trig_poly(x), atol=1e-13)
    assert np.allclose(grad, central_gradient(trig_poly, x, 1e-6), atol=1e-9)
    assert np.allclose(hess, central_hessian(trig_poly, x), atol=1e-8)
    assert np.allclose(it.torus_derivative(x, 0, 2), hess[:, 0, 2], atol=1e-13)


def test_torus_ma_ratio_matches_symbolic_oracle():
    import sympy as sp

    from oracles import torus_ma_oracle

    f_fn, d_fn = torus_ma_oracle(lambda x1, x2, x3, x4: sp.cos(x1 + 2 * x4) / 5 + sp.sin(x2) * sp.cos(x3) / 4
                                 + sp.cos(x1 - x3) / 10)
    g = TorusGrid(12)
    f = BasicField(g, f_fn(g.coordinates))
    assert np.max(np.abs(ls.ma_ratio(f).values - d_fn(g.coordinates))) <= 1e-12
