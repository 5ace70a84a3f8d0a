"""Explicit Vaisman models and the pointwise identity checks run on them.

Two models are provided:

``HopfModel``
    The diagonal Hopf manifold (C^n minus 0) / <z -> alpha z>.  Points are
    real chart coordinates (x1, y1, ..., xn, yn) with I d/dx_k = d/dy_k and
    every tensor is given in the coordinate frame by closed formulas.

``NilmanifoldModel``
    A 6-dimensional Heisenberg-type nilmanifold with a left-invariant Vaisman
    structure.  Tensors are constant in the left-invariant frame e_1..e_6, and
    the frame is realised in coordinates x1..x6 via
    e^6 = dx6 - (x1 dx2 - x2 dx1 + x3 dx4 - x4 dx3) / 2.

Both models expose a frame (coordinate components of the frame vector fields)
and constant structure constants, so one exterior derivative serves both: the
frame part is taken by central finite differences along frame directions and
the Chevalley-Eilenberg part comes from the structure constants.  For the
nilmanifold the finite-difference part of a constant field is exactly zero.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from math import comb
from typing import Callable, NamedTuple

import numpy as np
from scipy.integrate import solve_ivp

from . import exterior as ext
from .exterior import AlternatingForm, LinearComplexStructure, MetricTensor, Vector

FD_WEIGHTS = {
    2: ((1, 0.5), (-1, -0.5)),
    4: ((1, 2 / 3), (-1, -2 / 3), (2, -1 / 12), (-2, 1 / 12)),
    6: ((1, 0.75), (-1, -0.75), (2, -0.15), (-2, 0.15), (3, 1 / 60), (-3, -1 / 60)),
}
HOPF_MIN_R2 = 1e-6


@dataclass(frozen=True)
class StructureTensors:
    """The Vaisman package at a batch of points, in the model's frame."""

    g: MetricTensor
    I: LinearComplexStructure
    theta: AlternatingForm
    theta_c: AlternatingForm
    lee_field: Vector
    omega: AlternatingForm
    omega0: AlternatingForm

    @property
    def anti_lee_field(self) -> Vector:
        return Vector(self.lee_field.dim, np.einsum("...ij,...j->...i", self.I.matrix, self.lee_field.components))


def complex_structure_matrix(n: int) -> np.ndarray:
    """Standard J on R^{2n} with J e_{2k} = e_{2k+1}."""
    J = np.zeros((2 * n, 2 * n))
    for k in range(n):
        J[2 * k + 1, 2 * k] = 1.0
        J[2 * k, 2 * k + 1] = -1.0
    return J


def euclidean_kahler_form(n: int) -> AlternatingForm:
    out = ext.zero_form(2 * n, 2)
    for k in range(n):
        out = out + ext.basis_form(2 * n, 2 * k, 2 * k + 1)
    return out


def ce_differential_table(c: np.ndarray, degree: int) -> np.ndarray:
    """Matrix of d on constant-coefficient k-forms in a frame with structure constants c.

    ``c[k, i, j]`` are defined by ``[e_i, e_j] = c[k, i, j] e_k``, so that
    ``de^k = -sum_{i<j} c[k, i, j] e^i ^ e^j``.
    """
    m = c.shape[0]
    de = []
    for k in range(m):
        coeffs = np.array([-c[k, i, j] for i, j in ext.basis(m, 2)])
        de.append(AlternatingForm(m, 2, coeffs))
    rows = []
    for I in ext.basis(m, degree):
        acc = ext.zero_form(m, degree + 1)
        for pos, i in enumerate(I):
            left = ext.basis_form(m, *I[:pos]) if pos else ext.scalar_form(m, 1.0)
            right = ext.basis_form(m, *I[pos + 1:]) if pos + 1 < len(I) else ext.scalar_form(m, 1.0)
            acc = acc + (-1) ** pos * ext.wedge(ext.wedge(left, de[i]), right)
        rows.append(acc.coeffs)
    return np.array(rows).reshape(comb(m, degree), comb(m, degree + 1))


def _as_step(h, points: np.ndarray) -> np.ndarray:
    if h is None:
        h = 1e-4 * (1.0 + np.linalg.norm(points, axis=-1))
    return np.broadcast_to(np.asarray(h, dtype=float), points.shape[:-1])


def frame_derivative(fn: Callable, points, frame, h=None, order: int = 2) -> np.ndarray:
    """``D[..., i, *v] = e_i(fn)`` by central differences along frame vectors.

    ``fn`` maps points of shape (..., m) to arrays of shape (..., *v) and must
    accept extra leading axes.  ``frame[..., :, i]`` holds the coordinate
    components of e_i.
    """
    points = np.asarray(points, dtype=float)
    hh = _as_step(h, points)
    dirs = np.swapaxes(np.asarray(frame, dtype=float), -1, -2) * hh[..., None, None]
    out = 0.0
    for shift, w in FD_WEIGHTS[order]:
        vals = np.asarray(fn(points[..., None, :] + shift * dirs))
        out = out + w * vals
    extra = out.ndim - points.ndim
    return out / hh.reshape(hh.shape + (1,) * (extra + 1))


def numerical_exterior_derivative(field_fn: Callable[[np.ndarray], AlternatingForm], points, h=None,
                                  frame=None, structure_constants=None, order: int = 2) -> AlternatingForm:
    """Exterior derivative of a form field given by frame coefficients.

    With the default coordinate frame this is plain central differencing of the
    coefficient functions: ``d a = sum_i dx^i ^ d_i a``.
    """
    points = np.asarray(points, dtype=float)
    m = points.shape[-1]
    if frame is None:
        frame = np.broadcast_to(np.eye(m), points.shape[:-1] + (m, m))
    centre = field_fn(points)
    D = frame_derivative(lambda q: field_fn(q).coeffs, points, frame, h, order)
    out = ext.zero_form(m, centre.degree + 1, points.shape[:-1])
    for i in range(m):
        out = out + ext.wedge(ext.basis_form(m, i), AlternatingForm(m, centre.degree, D[..., i, :]))
    if structure_constants is not None and np.any(structure_constants):
        T = ce_differential_table(np.asarray(structure_constants), centre.degree)
        out = out + AlternatingForm(m, centre.degree + 1, centre.coeffs @ T)
    return out


class _Model:
    """Shared machinery; subclasses supply the geometry."""

    n: int
    name: str

    @property
    def dim(self) -> int:
        return 2 * self.n

    @cached_property
    def structure_constants(self) -> np.ndarray:
        return np.zeros((self.dim,) * 3)

    def frame(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return np.broadcast_to(np.eye(self.dim), points.shape[:-1] + (self.dim, self.dim))

    def structure(self, points) -> StructureTensors:
        raise NotImplementedError

    def d(self, field_fn, points, h=None, order: int = 2) -> AlternatingForm:
        return numerical_exterior_derivative(field_fn, points, h, self.frame(points),
                                             self.structure_constants, order)

    def default_step(self, points) -> np.ndarray:
        return _as_step(None, np.asarray(points, dtype=float))

    def coordinate_vector(self, points, v: Vector) -> np.ndarray:
        """Coordinate components of a vector given in the frame."""
        return np.einsum("...ij,...j->...i", self.frame(points), v.components)

    def check_point(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float)


@dataclass(frozen=True)
class HopfModel(_Model):
    """Diagonal Hopf manifold of complex dimension ``n`` with real deck factor ``alpha``."""

    n: int = 2
    alpha: float = 2.0

    def __post_init__(self):
        if self.n not in (2, 3):
            raise ValueError("Hopf model supports complex dimension 2 or 3")
        if not self.alpha > 1:
            raise ValueError("deck factor alpha must exceed 1")

    @property
    def name(self) -> str:
        return f"hopf{self.n}"

    def check_point(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if points.shape[-1] != self.dim:
            raise ValueError(f"points must have {self.dim} coordinates")
        if np.any(np.sum(points ** 2, axis=-1) < HOPF_MIN_R2):
            raise ValueError("point too close to the origin (outside the chart)")
        return points

    def structure(self, points) -> StructureTensors:
        x = self.check_point(points)
        m = self.dim
        r2 = np.sum(x ** 2, axis=-1)
        J = np.broadcast_to(complex_structure_matrix(self.n), x.shape[:-1] + (m, m))
        I = LinearComplexStructure(m, J)
        g = MetricTensor(m, (4.0 / r2)[..., None, None] * np.eye(m))
        theta = ext.one_form(-2.0 * x / r2[..., None])
        theta_c = ext.apply_complex_structure(I, theta)
        w_euc = euclidean_kahler_form(self.n)
        omega = w_euc * (4.0 / r2)
        dr2 = ext.one_form(2.0 * x)
        dcr2 = ext.apply_complex_structure(I, dr2)
        omega0 = w_euc * (4.0 / r2) - ext.wedge(dr2, dcr2) / r2 ** 2
        lee = Vector(m, -0.5 * x)
        return StructureTensors(g, I, theta, theta_c, lee, omega, omega0)

    def sample_points(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Uniform directions with radius in a fundamental annulus [1, alpha)."""
        v = rng.standard_normal((count, self.dim))
        v /= np.linalg.norm(v, axis=-1, keepdims=True)
        r = self.alpha ** rng.uniform(0.0, 1.0, count)
        return v * r[:, None]

    def deck(self, points) -> np.ndarray:
        return self.alpha * np.asarray(points, dtype=float)

    def leaf_project(self, points) -> np.ndarray:
        """n = 2: unit vector in R^3 ((1, 0) maps to the north pole).
        n = 3: the Hermitian projector z z* / |z|^2 (complex 3x3)."""
        x = self.check_point(points)
        z = x[..., 0::2] + 1j * x[..., 1::2]
        r2 = np.sum(np.abs(z) ** 2, axis=-1)
        if self.n == 2:
            w = np.conj(z[..., 0]) * z[..., 1]
            return np.stack([2 * w.real, 2 * w.imag, np.abs(z[..., 0]) ** 2 - np.abs(z[..., 1]) ** 2],
                            axis=-1) / r2[..., None]
        return z[..., :, None] * np.conj(z[..., None, :]) / r2[..., None, None]

    def leaf_lift(self, unit_vectors) -> np.ndarray:
        """A section of the n = 2 leaf projection: a point with r = 1 over each sphere point."""
        if self.n != 2:
            raise ValueError("leaf lift is only provided for n = 2")
        u = np.asarray(unit_vectors, dtype=float)
        th = np.arccos(np.clip(u[..., 2], -1.0, 1.0))
        ph = np.arctan2(u[..., 1], u[..., 0])
        z1 = np.cos(th / 2)
        z2 = np.sin(th / 2) * np.exp(1j * ph)
        return np.stack([z1, np.zeros_like(z1), z2.real, z2.imag], axis=-1)


def _heisenberg_constants() -> np.ndarray:
    c = np.zeros((6, 6, 6))
    for i, j in ((0, 1), (2, 3)):
        c[5, i, j] = 1.0
        c[5, j, i] = -1.0
    return c


@dataclass(frozen=True)
class NilmanifoldModel(_Model):
    """Left-invariant Vaisman structure on a Heisenberg-type nilmanifold (n = 3).

    Metric sum e^i (x) e^i, Lee form e^5, complex structure pairing (e1, e2),
    (e3, e4), (e5, e6).  The orientation of I on (e5, e6) is chosen at
    construction so that d^c theta = +(e^12 + e^34).
    """

    n: int = 3
    i_sign: int = field(init=False, default=0)

    def __post_init__(self):
        if self.n != 3:
            raise ValueError("nilmanifold model has complex dimension 3")
        if np.max(np.abs(self.jacobi_residual())) > 0:
            raise ValueError("structure constants violate the Jacobi identity")
        target = ext.basis_form(6, 0, 1) + ext.basis_form(6, 2, 3)
        for s in (1, -1):
            object.__setattr__(self, "i_sign", s)
            if np.max(np.abs((self._dc_theta() - target).coeffs)) < 1e-14:
                return
        raise RuntimeError("no orientation of I on (e5, e6) gives a positive d^c theta")

    @property
    def name(self) -> str:
        return "nil3"

    @cached_property
    def structure_constants(self) -> np.ndarray:
        return _heisenberg_constants()

    def jacobi_residual(self) -> np.ndarray:
        c = _heisenberg_constants()
        # sum over cyclic (i, j, k) of [[e_i, e_j], e_k]
        t = np.einsum("lij,mlk->mijk", c, c)
        return t + t.transpose(0, 2, 3, 1) + t.transpose(0, 3, 1, 2)

    def _J(self) -> np.ndarray:
        J = complex_structure_matrix(3)
        J[4:, 4:] *= self.i_sign
        return J

    def _dc_theta(self) -> AlternatingForm:
        I = LinearComplexStructure(6, self._J())
        theta = ext.basis_form(6, 4)
        pre = ext.apply_inverse_complex_structure(I, theta)
        d_pre = AlternatingForm(6, 2, pre.coeffs @ ce_differential_table(self.structure_constants, 1))
        return ext.apply_complex_structure(I, d_pre)

    def frame(self, points) -> np.ndarray:
        x = np.asarray(points, dtype=float)
        E = np.zeros(x.shape[:-1] + (6, 6))
        E[..., range(6), range(6)] = 1.0
        # e_i = d_i - c_i d_6 with e^6 = dx6 + sum_i c_i dx^i
        c = np.stack([0.5 * x[..., 1], -0.5 * x[..., 0], 0.5 * x[..., 3], -0.5 * x[..., 2]], axis=-1)
        E[..., 5, :4] = -c
        return E

    def coframe(self, points) -> np.ndarray:
        return np.linalg.inv(self.frame(points))

    def structure(self, points) -> StructureTensors:
        x = self.check_point(points)
        if x.shape[-1] != 6:
            raise ValueError("nilmanifold points have 6 coordinates")
        batch = x.shape[:-1]
        I = LinearComplexStructure(6, np.broadcast_to(self._J(), batch + (6, 6)))
        g = MetricTensor(6, np.broadcast_to(np.eye(6), batch + (6, 6)))
        theta = ext.basis_form(6, 4, coeff=np.ones(batch))
        theta_c = ext.apply_complex_structure(I, theta)
        omega0 = ext.basis_form(6, 0, 1, coeff=np.ones(batch)) + ext.basis_form(6, 2, 3, coeff=np.ones(batch))
        omega = omega0 + ext.wedge(theta, theta_c)
        lee = ext.sharp(g, theta)
        return StructureTensors(g, I, theta, theta_c, lee, omega, omega0)

    def sample_points(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.uniform(0.0, 2 * np.pi, (count, 6))

    def default_step(self, points) -> np.ndarray:
        return np.full(np.asarray(points).shape[:-1], 1e-4)

    def leaf_project(self, points) -> np.ndarray:
        return np.mod(np.asarray(points, dtype=float)[..., :4], 2 * np.pi)

    def leaf_lift(self, torus_points) -> np.ndarray:
        t = np.asarray(torus_points, dtype=float)
        return np.concatenate([t, np.zeros(t.shape[:-1] + (2,))], axis=-1)


def make_model(model_id: str):
    if model_id == "hopf2":
        return HopfModel(2)
    if model_id == "hopf3":
        return HopfModel(3)
    if model_id == "nil3":
        return NilmanifoldModel()
    raise ValueError(f"unknown model {model_id!r}")


# -- identity checks ---------------------------------------------------------

StructureFn = Callable[[np.ndarray], StructureTensors]


def _frame_norm(a: AlternatingForm) -> np.ndarray:
    return np.linalg.norm(a.coeffs, axis=-1)


def eval_structure(model, points) -> StructureTensors:
    return model.structure(points)


def check_lck(model, points, h=None, structure: StructureFn | None = None, theta_scale: float = 1.0,
              order: int = 2) -> np.ndarray:
    """Per-point ``|d omega - theta ^ omega|``."""
    st = structure or model.structure
    points = np.asarray(points, dtype=float)
    h = model.default_step(points) if h is None else h
    s = st(points)
    d_omega = model.d(lambda q: st(q).omega, points, h, order)
    return _frame_norm(d_omega - ext.wedge(s.theta * theta_scale, s.omega))


def check_lee_closed(model, points, h=None, structure: StructureFn | None = None) -> np.ndarray:
    st = structure or model.structure
    points = np.asarray(points, dtype=float)
    h = model.default_step(points) if h is None else h
    return _frame_norm(model.d(lambda q: st(q).theta, points, h))


def check_structure_identity(model, points, h=None, structure: StructureFn | None = None,
                             order: int = 2, dc_sign: float = 1.0) -> np.ndarray:
    """Per-point ``|omega - d^c theta - theta ^ theta^c|``.

    ``dc_sign = -1`` evaluates the identity under the opposite d^c convention
    (a negative control: it must fail).
    """
    st = structure or model.structure
    points = np.asarray(points, dtype=float)
    h = model.default_step(points) if h is None else h
    s = st(points)
    dc_theta = _dc(model, st, lambda q: st(q).theta, points, h, order)
    return _frame_norm(s.omega - dc_theta * dc_sign - ext.wedge(s.theta, s.theta_c))


def _dc(model, st, field_fn, points, h, order=2) -> AlternatingForm:
    I = st(points).I

    def pre(q):
        return ext.apply_inverse_complex_structure(st(q).I, field_fn(q))

    return ext.apply_complex_structure(I, model.d(pre, points, h, order))


def _principal_angles(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Principal angles between column spans of A and B (batched), via sines."""
    Qa, _ = np.linalg.qr(A)
    Qb, _ = np.linalg.qr(B)
    resid = Qb - Qa @ (np.swapaxes(Qa, -1, -2) @ Qb)
    s = np.linalg.svd(resid, compute_uv=False)
    return np.arcsin(np.clip(s, 0.0, 1.0))


class KernelReport(NamedTuple):
    kernel_dim: np.ndarray
    angles: np.ndarray  # largest principal angle per point, nan when dims differ


def kernel_of_two_form(form: AlternatingForm, rel_tol: float = 1e-8):
    M = ext.two_form_matrix(form)
    _, s, Vt = np.linalg.svd(M)
    small = s < rel_tol * s[..., :1]
    return small.sum(axis=-1), np.swapaxes(Vt, -1, -2), small


def _kernel_vs_span(form: AlternatingForm, span: np.ndarray, rel_tol: float = 1e-8) -> KernelReport:
    dims, V, small = kernel_of_two_form(form, rel_tol)
    k = span.shape[-1]
    angles = np.full(dims.shape, np.nan)
    ok = dims == k
    if np.any(ok):
        null = V[ok][..., -k:]
        angles[ok] = _principal_angles(null, span[ok]).max(axis=-1)
    return KernelReport(dims, angles)


def lee_span(s: StructureTensors) -> np.ndarray:
    return np.stack([s.lee_field.components, s.anti_lee_field.components], axis=-1)


def check_foliation_kernel(model, points, h=None, structure: StructureFn | None = None,
                           omega0: AlternatingForm | None = None) -> KernelReport:
    """Kernel dimension of omega_0 and its largest principal angle to span(theta#, I theta#)."""
    st = structure or model.structure
    s = st(np.asarray(points, dtype=float))
    return _kernel_vs_span(s.omega0 if omega0 is None else omega0, lee_span(s))


def kernel_intersection(omega0_a: AlternatingForm, omega0_b: AlternatingForm, span: np.ndarray) -> KernelReport:
    """Kernel of ``omega0_a + omega0_b`` compared with the given 2-plane."""
    return _kernel_vs_span(omega0_a + omega0_b, span)


def omega0_spectrum(s: StructureTensors) -> np.ndarray:
    """Eigenvalues of ``X -> omega_0(X, I Y)`` relative to g (semi-positivity test)."""
    W = ext.two_form_matrix(s.omega0)
    H = W @ s.I.matrix  # H[i, j] = omega0(e_i, I e_j)
    H = 0.5 * (H + np.swapaxes(H, -1, -2))
    Linv = np.linalg.inv(np.linalg.cholesky(s.g.matrix))
    return np.linalg.eigvalsh(Linv @ H @ np.swapaxes(Linv, -1, -2))


def check_contraction(model, points, h=None, structure: StructureFn | None = None) -> np.ndarray:
    """Per-point ``|i_{I theta#} i_{theta#} omega^n - n omega_0^{n-1}|``."""
    st = structure or model.structure
    s = st(np.asarray(points, dtype=float))
    n = model.n
    lhs = ext.interior(s.anti_lee_field, ext.interior(s.lee_field, ext.wedge_power(s.omega, n)))
    return _frame_norm(lhs - ext.wedge_power(s.omega0, n - 1) * n)


def christoffel(model, points, h=None, metric_fn=None, structure: StructureFn | None = None) -> np.ndarray:
    """``Gamma[..., i, j, k]`` with ``nabla_{e_i} e_j = Gamma[i, j, k] e_k`` (Koszul formula)."""
    st = structure or model.structure
    points = np.asarray(points, dtype=float)
    h = model.default_step(points) if h is None else h
    gfun = metric_fn or (lambda q: st(q).g.matrix)
    g = gfun(points)
    dg = frame_derivative(gfun, points, model.frame(points), h)  # dg[..., a, j, k] = e_a g_jk
    c = model.structure_constants
    ck = np.einsum("lij,...lk->...ijk", c, g)  # g([e_i, e_j], e_k)
    low = 0.5 * (dg + np.swapaxes(dg, -3, -2) - np.moveaxis(dg, -3, -1)
                 + ck - np.moveaxis(ck, -1, -3) + np.moveaxis(ck, -3, -1))
    # low[i, j, l] = g(nabla_i e_j, e_l)
    return np.einsum("...ijl,...lk->...ijk", low, np.linalg.inv(g))


def covariant_derivative_theta(model, points, h=None, metric_fn=None,
                               structure: StructureFn | None = None) -> np.ndarray:
    st = structure or model.structure
    points = np.asarray(points, dtype=float)
    h = model.default_step(points) if h is None else h
    theta = st(points).theta.coeffs
    dtheta = frame_derivative(lambda q: st(q).theta.coeffs, points, model.frame(points), h)
    G = christoffel(model, points, h, metric_fn, st)
    return dtheta - np.einsum("...ijk,...k->...ij", G, theta)


def check_parallel_lee(model, points, h=None, metric_fn=None, structure: StructureFn | None = None,
                       tol: float = 1e-5) -> np.ndarray:
    """Per-point ``max |nabla theta|``; refuses steps that are visibly too large.

    The residual is recomputed at h/2.  If it exceeds ``tol`` at h but falls
    by more than half at h/2, the residual is truncation dominated and the
    step is rejected.
    """
    points = np.asarray(points, dtype=float)
    h = model.default_step(points) if h is None else np.broadcast_to(h, points.shape[:-1])
    res = np.abs(covariant_derivative_theta(model, points, h, metric_fn, structure)).max(axis=(-1, -2))
    res_half = np.abs(covariant_derivative_theta(model, points, h / 2, metric_fn, structure)).max(axis=(-1, -2))
    bad = (res > tol) & (res_half < 0.5 * res)
    if np.any(bad):
        raise ValueError("finite-difference step too large for second derivatives")
    return res


def _vector_derivs(model, fn, points, h):
    return frame_derivative(fn, points, model.frame(points), h)  # [..., a, b] = e_a(X^b)


def lie_derivative_metric(model, X_fn, points, h=None, structure: StructureFn | None = None) -> np.ndarray:
    st = structure or model.structure
    points = np.asarray(points, dtype=float)
    h = model.default_step(points) if h is None else h
    g = st(points).g.matrix
    X = X_fn(points)
    dg = frame_derivative(lambda q: st(q).g.matrix, points, model.frame(points), h)
    dX = _vector_derivs(model, X_fn, points, h)
    c = model.structure_constants
    # [X, e_j]^b = X^a c[b, a, j] - e_j(X^b)
    br = np.einsum("...a,baj->...jb", X, c) - dX
    term = np.einsum("...jb,...bk->...jk", br, g)
    return np.einsum("...a,...ajk->...jk", X, dg) - term - np.swapaxes(term, -1, -2)


def lie_bracket(model, X_fn, Y_fn, points, h=None) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    h = model.default_step(points) if h is None else h
    X, Y = X_fn(points), Y_fn(points)
    dX = _vector_derivs(model, X_fn, points, h)
    dY = _vector_derivs(model, Y_fn, points, h)
    return (np.einsum("...a,...ab->...b", X, dY) - np.einsum("...a,...ab->...b", Y, dX)
            + np.einsum("...a,...c,bac->...b", X, Y, model.structure_constants))


def lie_derivative_complex_structure(model, X_fn, points, h=None, structure: StructureFn | None = None) -> np.ndarray:
    st = structure or model.structure
    points = np.asarray(points, dtype=float)
    h = model.default_step(points) if h is None else h
    X = X_fn(points)
    Jm = st(points).I.matrix
    dJ = frame_derivative(lambda q: st(q).I.matrix, points, model.frame(points), h)
    dX = _vector_derivs(model, X_fn, points, h)
    c = model.structure_constants
    br = np.einsum("...a,baj->...jb", X, c) - dX  # [X, e_j]^b
    return (np.einsum("...a,...adj->...dj", X, dJ)
            + np.einsum("...bj,...bd->...dj", Jm, br)
            - np.einsum("...db,...jb->...dj", Jm, br))


class KillingReport(NamedTuple):
    lie_g_lee: np.ndarray
    lie_g_anti_lee: np.ndarray
    bracket: np.ndarray
    lie_I_lee: np.ndarray
    lie_I_anti_lee: np.ndarray


def check_killing_commuting(model, points, h=None, structure: StructureFn | None = None) -> KillingReport:
    """Killing, holomorphic and commuting residuals of theta# and I theta#."""
    st = structure or model.structure
    lee = lambda q: st(q).lee_field.components  # noqa: E731
    anti = lambda q: st(q).anti_lee_field.components  # noqa: E731
    mx = lambda a: np.abs(a).reshape(a.shape[:1] + (-1,)).max(axis=-1)  # noqa: E731
    return KillingReport(
        mx(lie_derivative_metric(model, lee, points, h, st)),
        mx(lie_derivative_metric(model, anti, points, h, st)),
        mx(lie_bracket(model, lee, anti, points, h)),
        mx(lie_derivative_complex_structure(model, lee, points, h, st)),
        mx(lie_derivative_complex_structure(model, anti, points, h, st)),
    )


class HomothetyCharacter(NamedTuple):
    value: float
    spread: float


def homothety_character(model: HopfModel, points=None, h=None, seed: int = 0) -> HomothetyCharacter:
    """Scale factor ``gamma* w~ / w~`` of the deck map on the Kahler cover form ``w~ = dd^c r^2``.

    ``w~`` is produced numerically (finite-difference d of ``d^c r^2``) at p and
    at gamma(p), then pulled back through gamma.
    """
    if not isinstance(model, HopfModel):
        raise ValueError("homothety character is defined for the Hopf model")
    if points is None:
        points = model.sample_points(np.random.default_rng(seed), 200)
    points = model.check_point(points)
    m = model.dim
    I = LinearComplexStructure(m, complex_structure_matrix(model.n))

    def dc_r2(q):
        return ext.apply_complex_structure(I, ext.one_form(2.0 * np.asarray(q)))

    def kahler(q):
        return numerical_exterior_derivative(dc_r2, q, h)

    w_p = kahler(points)
    w_gp = kahler(model.deck(points))
    pulled = ext.pullback_linear(model.alpha * np.eye(m), w_gp)
    ratio = np.einsum("...i,...i->...", pulled.coeffs, w_p.coeffs) / np.einsum("...i,...i->...", w_p.coeffs, w_p.coeffs)
    mismatch = _frame_norm(pulled - w_p * ratio) / _frame_norm(w_p)
    spread = float(max(ratio.max() - ratio.min(), mismatch.max()))
    return HomothetyCharacter(float(np.mean(ratio)), spread)


def leaf_project(model, points) -> np.ndarray:
    return model.leaf_project(points)


def flow(model, vector_fn, points, time: float = 1.0, rtol: float = 1e-12, atol: float = 1e-12) -> np.ndarray:
    """Integrate the frame-valued vector field ``vector_fn`` from ``points`` (RK45)."""
    points = np.asarray(points, dtype=float)
    shape = points.shape

    def rhs(_, y):
        q = y.reshape(shape)
        return model.coordinate_vector(q, Vector(model.dim, vector_fn(q))).ravel()

    sol = solve_ivp(rhs, (0.0, time), points.ravel(), method="RK45", rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(sol.message)
    return sol.y[:, -1].reshape(shape)


def leaf_drift(model, points, time: float = 1.0) -> tuple[float, float]:
    """Maximum change of the leaf projection along the Lee and anti-Lee flows."""
    p0 = model.leaf_project(points)
    out = []
    for fn in (lambda q: model.structure(q).lee_field.components,
               lambda q: model.structure(q).anti_lee_field.components):
        q = flow(model, fn, points, time)
        diff = model.leaf_project(q) - p0
        if isinstance(model, NilmanifoldModel):
            diff = (diff + np.pi) % (2 * np.pi) - np.pi
        out.append(float(np.max(np.abs(diff))))
    return out[0], out[1]
