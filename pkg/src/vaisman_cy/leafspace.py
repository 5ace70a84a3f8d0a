"""Basic functions on the two leaf spaces: the round 2-sphere and the flat 4-torus.

A basic function is stored by its values on a grid.  Differentiation is
spectral: real spherical harmonics on a Gauss-Legendre x uniform-longitude
sphere grid, discrete Fourier series on an N^4 torus grid.

For a basic potential f, ``dd^c f`` is described relative to the background
transversal Kahler form omega_0 by the Hermitian matrix ``A(f)`` with
``(omega_0 + dd^c f)^k / omega_0^k = det(Id + A(f))`` (k = n - 1).  On the
sphere A is 1x1 and equals ``C_DELTA * Laplacian(f)``; on the torus, with
complex coordinates z1 = x1 + i x2, z2 = x3 + i x4,
``A_jk = 4 d^2 f / dz_j dzbar_k`` and ``trace A = C_DELTA * Laplacian(f)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import sph_legendre_p, sph_legendre_p_all

# dd^c f = C_DELTA * Laplacian(f) * omega_0 on the sphere; fixed by ddc_convention_selftest()
C_DELTA = 1.0
ALIAS_FRACTION = 0.01
MEAN_TOL = 1e-10


class AliasingError(ValueError):
    """The field carries too much energy in the top third of the resolved spectrum."""


class CompatibilityError(ValueError):
    """A solvability condition (zero mean / matched volume) is violated."""


class SphereGrid:
    """Gauss-Legendre colatitudes x uniform longitudes, band limit ``L``."""

    complex_dim = 1
    kind = "sphere"

    def __init__(self, L: int = 32):
        if L < 2:
            raise ValueError("band limit must be at least 2")
        self.L = L
        self.nlat = L + 1
        self.nlon = 2 * L + 2
        x, wx = np.polynomial.legendre.leggauss(self.nlat)
        self.theta = np.arccos(x[::-1])
        self.phi = 2 * np.pi * np.arange(self.nlon) / self.nlon
        self.shape = (self.nlat, self.nlon)
        self.weights = np.outer(wx[::-1], np.full(self.nlon, 2 * np.pi / self.nlon))
        self.degrees = np.concatenate([np.full(2 * l + 1, l) for l in range(L + 1)])
        self.orders = np.concatenate([np.arange(-l, l + 1) for l in range(L + 1)])

    @property
    def label(self) -> str:
        return f"sphere(L={self.L})"

    @property
    def area(self) -> float:
        return 4 * np.pi

    @cached_property
    def points(self) -> np.ndarray:
        """Unit vectors of the nodes, shape (nlat, nlon, 3)."""
        T, P = np.meshgrid(self.theta, self.phi, indexing="ij")
        return np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1)

    @property
    def coordinates(self) -> np.ndarray:
        """(colatitude, longitude) per node, shape (nlat, nlon, 2)."""
        T, P = np.meshgrid(self.theta, self.phi, indexing="ij")
        return np.stack([T, P], axis=-1)

    @cached_property
    def _Y(self) -> np.ndarray:
        return real_sph_harm(self.L, self.theta[:, None], self.phi[None, :]).reshape(-1, self.degrees.size)

    @property
    def eigenvalues(self) -> np.ndarray:
        return -self.degrees * (self.degrees + 1.0)

    def analyze(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return self._Y.T @ (self.weights * values).ravel()

    def synthesize(self, coeffs) -> np.ndarray:
        return (self._Y @ np.asarray(coeffs)).reshape(self.shape)

    def top_fraction(self, coeffs) -> float:
        c2 = np.asarray(coeffs) ** 2
        total = c2[self.degrees > 0].sum()
        if np.sqrt(total / (4 * np.pi)) < 1e-10:
            return 0.0
        return float(c2[self.degrees > 2 * self.L / 3].sum() / total)

    def harmonic(self, l: int, m: int) -> "BasicField":
        return BasicField(self, real_sph_harm_single(l, m, self.theta[:, None], self.phi[None, :]))

    def from_function(self, fn) -> "BasicField":
        """Sample ``fn(unit_vectors)`` at the nodes."""
        return BasicField(self, np.asarray(fn(self.points), dtype=float))


class TorusGrid:
    """Uniform N^4 grid on the flat torus R^4 / (2 pi Z)^4 with omega_0 = dx1^dx2 + dx3^dx4."""

    complex_dim = 2
    kind = "torus"

    def __init__(self, N: int = 16):
        if N % 2 or N < 8:
            raise ValueError("torus grid needs even N >= 8")
        self.N = N
        self.shape = (N,) * 4
        self.x = 2 * np.pi * np.arange(N) / N
        k = np.fft.fftfreq(N, 1.0 / N)
        k[N // 2] = 0.0  # Nyquist modes are not differentiated
        self.k1d = k
        self.ks = np.meshgrid(k, k, k, k, indexing="ij", sparse=True)
        self.cell = (2 * np.pi / N) ** 4

    @property
    def label(self) -> str:
        return f"torus(N={self.N})"

    @property
    def area(self) -> float:
        return (2 * np.pi) ** 4

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.shape, self.cell)

    @cached_property
    def coordinates(self) -> np.ndarray:
        X = np.meshgrid(self.x, self.x, self.x, self.x, indexing="ij")
        return np.stack(X, axis=-1)

    @property
    def points(self) -> np.ndarray:
        return self.coordinates

    @cached_property
    def nyquist_mask(self) -> np.ndarray:
        idx = np.arange(self.N) == self.N // 2
        m = np.zeros(self.shape, dtype=bool)
        for ax in range(4):
            m |= idx.reshape([-1 if a == ax else 1 for a in range(4)])
        return m

    @cached_property
    def laplacian_symbol(self) -> np.ndarray:
        return -(self.ks[0] ** 2 + self.ks[1] ** 2 + self.ks[2] ** 2 + self.ks[3] ** 2)

    def fft(self, values) -> np.ndarray:
        return np.fft.fftn(np.asarray(values, dtype=float))

    def ifft(self, coeffs) -> np.ndarray:
        return np.fft.ifftn(coeffs).real

    def derivative(self, fhat, *axes: int) -> np.ndarray:
        sym = 1.0
        for a in axes:
            sym = sym * (1j * self.ks[a])
        return self.ifft(fhat * sym)

    def top_fraction(self, coeffs) -> float:
        c2 = np.abs(coeffs) ** 2
        c2 = c2.copy()
        c2[0, 0, 0, 0] = 0.0
        total = c2.sum()
        if np.sqrt(total) / c2.size < 1e-10:
            return 0.0
        kmax = np.max(np.abs(np.meshgrid(*([np.fft.fftfreq(self.N, 1.0 / self.N)] * 4), indexing="ij")), axis=0)
        return float(c2[kmax > self.N / 3].sum() / total)

    def project(self, values) -> np.ndarray:
        """Remove Nyquist content (not representable by the derivative symbols)."""
        fhat = self.fft(values)
        fhat[self.nyquist_mask] = 0.0
        return self.ifft(fhat)

    def from_function(self, fn) -> "BasicField":
        """Sample ``fn(coords)`` at the nodes (coords shape (..., 4))."""
        return BasicField(self, np.asarray(fn(self.coordinates), dtype=float))


def real_sph_harm_single(l: int, m: int, theta, phi):
    p = sph_legendre_p(l, abs(m), theta)[0]
    if m == 0:
        return np.broadcast_to(p, np.broadcast_shapes(np.shape(p), np.shape(phi))).copy()
    trig = np.cos(m * phi) if m > 0 else np.sin(-m * phi)
    return np.sqrt(2.0) * p * trig


def real_sph_harm(L: int, theta, phi) -> np.ndarray:
    """Orthonormal real spherical harmonics up to degree L, last axis ordered (l, m=-l..l)."""
    theta, phi = np.broadcast_arrays(np.asarray(theta, dtype=float), np.asarray(phi, dtype=float))
    P = sph_legendre_p_all(L, L, theta)[0]  # P[l, m] (negative m wraps)
    cols = []
    for l in range(L + 1):
        for m in range(-l, l + 1):
            if m == 0:
                cols.append(P[l, 0])
            elif m > 0:
                cols.append(np.sqrt(2.0) * P[l, m] * np.cos(m * phi))
            else:
                cols.append(np.sqrt(2.0) * P[l, -m] * np.sin(-m * phi))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class BasicField:
    """Values of a basic function at the nodes of a leaf-space grid."""

    grid: object
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        v = np.broadcast_to(v, self.grid.shape).copy() if v.shape != self.grid.shape else v
        if not np.all(np.isfinite(v)):
            raise ValueError("basic field has non-finite values")
        object.__setattr__(self, "values", v)

    def _other(self, other):
        return other.values if isinstance(other, BasicField) else other

    def __add__(self, other):
        return BasicField(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return BasicField(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return BasicField(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return BasicField(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return BasicField(self.grid, self.values / self._other(other))

    def __neg__(self):
        return BasicField(self.grid, -self.values)

    def mean(self) -> float:
        return integrate(self) / self.grid.area

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True)
class HermitianField:
    """Per-node (n-1)x(n-1) Hermitian matrices, relative to omega_0."""

    grid: object
    matrices: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.matrices)
        if np.max(np.abs(M - np.conj(np.swapaxes(M, -1, -2))), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(M))):
            raise ValueError("matrix field is not Hermitian")
        object.__setattr__(self, "matrices", M)

    def __add__(self, other: "HermitianField") -> "HermitianField":
        return HermitianField(self.grid, self.matrices + other.matrices)

    def determinant(self) -> np.ndarray:
        return np.linalg.det(self.matrices).real

    def min_eigenvalue(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrices)[..., 0]


def zeros(grid) -> BasicField:
    return BasicField(grid, np.zeros(grid.shape))


def integrate(f: BasicField) -> float:
    """Quadrature of a basic function against omega_0^(n-1)."""
    return float(np.sum(f.grid.weights * f.values))


def spectrum(f: BasicField, check_alias: bool = True):
    coeffs = f.grid.analyze(f.values) if f.grid.kind == "sphere" else f.grid.fft(f.values)
    if check_alias:
        frac = f.grid.top_fraction(coeffs)
        if frac > ALIAS_FRACTION:
            raise AliasingError(f"{frac:.2%} of the energy sits in the top third of the spectrum")
    return coeffs


def laplacian(f: BasicField, check_alias: bool = True) -> BasicField:
    c = spectrum(f, check_alias)
    g = f.grid
    if g.kind == "sphere":
        return BasicField(g, g.synthesize(g.eigenvalues * c))
    return BasicField(g, g.ifft(c * g.laplacian_symbol))


def _torus_matrices(grid: TorusGrid, fhat) -> np.ndarray:
    d = grid.derivative
    a11 = d(fhat, 0, 0) + d(fhat, 1, 1)
    a22 = d(fhat, 2, 2) + d(fhat, 3, 3)
    a12 = d(fhat, 0, 2) + d(fhat, 1, 3) + 1j * (d(fhat, 0, 3) - d(fhat, 1, 2))
    A = np.empty(grid.shape + (2, 2), dtype=complex)
    A[..., 0, 0] = a11
    A[..., 1, 1] = a22
    A[..., 0, 1] = a12
    A[..., 1, 0] = np.conj(a12)
    return A


def ddc_basic(f: BasicField, check_alias: bool = True) -> HermitianField:
    """Matrix field A(f) of dd^c f relative to omega_0."""
    g = f.grid
    if g.kind == "sphere":
        lap = laplacian(f, check_alias).values
        return HermitianField(g, (C_DELTA * lap)[..., None, None].astype(complex))
    fhat = spectrum(f, check_alias)
    return HermitianField(g, C_DELTA * _torus_matrices(g, fhat))


def background(f: BasicField, check_alias: bool = True) -> HermitianField:
    """Relative matrix of eta = omega_0 + dd^c f, i.e. Id + A(f)."""
    A = ddc_basic(f, check_alias)
    k = A.matrices.shape[-1]
    return HermitianField(f.grid, A.matrices + np.eye(k))


def poisson_solve(rho: BasicField) -> BasicField:
    """Mean-zero f with ``C_DELTA * Laplacian(f) = rho`` (``dd^c f = rho omega_0`` on the sphere)."""
    g = rho.grid
    mean = rho.mean()
    if abs(mean) > MEAN_TOL:
        raise CompatibilityError(f"source has mean {mean:.3e}; total volumes do not match")
    c = spectrum(rho, check_alias=False)
    if g.kind == "sphere":
        ev = g.eigenvalues
        out = np.zeros_like(c)
        out[ev != 0] = c[ev != 0] / (C_DELTA * ev[ev != 0])
        return BasicField(g, g.synthesize(out))
    sym = g.laplacian_symbol * C_DELTA
    safe = np.where(sym == 0, 1.0, sym)
    fhat = np.where(sym == 0, 0.0, c / safe)
    return BasicField(g, g.ifft(fhat))


def ma_ratio(f: BasicField, check_alias: bool = True) -> BasicField:
    """Density ``(omega_0 + dd^c f)^(n-1) / omega_0^(n-1) = det(Id + A(f))``."""
    return BasicField(f.grid, background(f, check_alias).determinant())


def positivity_margin(f: BasicField, check_alias: bool = True) -> float:
    """Smallest eigenvalue of Id + A(f) over all nodes."""
    return float(np.min(background(f, check_alias).min_eigenvalue()))


def _mixed(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Polarised determinant: coefficient of the bilinear X^Y... term, ``tr(adj(Y) X)`` for 2x2."""
    if X.shape[-1] == 1:
        return X[..., 0, 0].real
    adjY = np.empty_like(Y)
    adjY[..., 0, 0] = Y[..., 1, 1]
    adjY[..., 1, 1] = Y[..., 0, 0]
    adjY[..., 0, 1] = -Y[..., 0, 1]
    adjY[..., 1, 0] = -Y[..., 1, 0]
    return np.einsum("...ij,...ji->...", adjY, X).real


def apply_dp(f: BasicField, eta1: HermitianField, eta2: HermitianField, over: str = "eta1",
             check_alias: bool = True) -> BasicField:
    """``dd^c f ^ P / eta1^(n-1)`` with ``P = sum_i eta1^i ^ eta2^(n-2-i)``.

    ``eta1`` and ``eta2`` are relative matrices (Id + A) of positive transversal
    forms.  ``over="omega0"`` divides by omega_0^(n-1) instead, which turns
    the operator into the exact difference ``maRatio(f1) - maRatio(f2)`` when
    f = f1 - f2.
    """
    for eta in (eta1, eta2):
        if np.min(eta.min_eigenvalue()) <= 0:
            raise ValueError("background forms must be positive")
    A = ddc_basic(f, check_alias).matrices
    k = A.shape[-1]
    if k == 1:
        num = A[..., 0, 0].real
    else:
        # f ^ (eta1 + eta2) / omega0^2 = tr(adj(eta1 + eta2) A) / 2
        num = 0.5 * _mixed(A, eta1.matrices + eta2.matrices)
    if over == "omega0":
        return BasicField(f.grid, num)
    if over != "eta1":
        raise ValueError("over must be 'eta1' or 'omega0'")
    return BasicField(f.grid, num / eta1.determinant())


# -- evaluation at arbitrary leaf points --------------------------------------

class SpectralInterpolant:
    """Exact evaluation (with derivatives) of a resolved basic field off the grid."""

    def __init__(self, f: BasicField, rel_cut: float = 1e-17):
        self.grid = f.grid
        g = f.grid
        if g.kind == "sphere":
            c = g.analyze(f.values)
            c = np.where(np.abs(c) > rel_cut * max(np.max(np.abs(c)), 1e-300), c, 0.0)
            L = g.L
            # cos / sin tables C[l, m], S[l, m] with the sqrt(2) of the real harmonics folded in
            self.C = np.zeros((L + 1, L + 1))
            self.S = np.zeros((L + 1, L + 1))
            for cl, l, m in zip(c, g.degrees, g.orders):
                if m == 0:
                    self.C[l, 0] = cl
                elif m > 0:
                    self.C[l, m] = np.sqrt(2.0) * cl
                else:
                    self.S[l, -m] = np.sqrt(2.0) * cl
            top = int(g.degrees[c != 0].max(initial=0))
            self.C, self.S = self.C[:top + 1, :top + 1], self.S[:top + 1, :top + 1]
            self.coeffs = c[c != 0]
        else:
            fhat = g.fft(f.values) / g.N ** 4
            fhat[g.nyquist_mask] = 0.0
            keep = np.abs(fhat) > rel_cut * max(np.max(np.abs(fhat)), 1e-300)
            idx = np.argwhere(keep)
            self.coeffs = fhat[keep]
            self.k = g.k1d[idx]  # (K, 4) integer wavenumbers

    # sphere -------------------------------------------------------------
    def _sphere_eval(self, u, kind: str) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        shape = u.shape[:-1]
        flat = u.reshape(-1, 3)
        L = self.C.shape[0] - 1
        ms = np.arange(L + 1)
        ell = ms[:, None] * (ms[:, None] + 1.0)
        out = np.zeros((flat.shape[0], 3) if kind == "gradient" else flat.shape[0])
        for chunk in np.array_split(np.arange(flat.shape[0]), max(1, flat.shape[0] // 2048)):
            q = flat[chunk]
            th = np.arccos(np.clip(q[:, 2], -1.0, 1.0))
            ph = np.arctan2(q[:, 1], q[:, 0])
            P = sph_legendre_p_all(L, L, th, diff_n=1)[:, :, :L + 1]  # (2, l, m, point)
            cos, sin = np.cos(np.outer(ms, ph)), np.sin(np.outer(ms, ph))
            if kind == "value":
                out[chunk] = np.einsum("lmp,lm,mp->p", P[0], self.C, cos) + np.einsum("lmp,lm,mp->p", P[0], self.S, sin)
            elif kind == "laplacian":
                out[chunk] = -(np.einsum("lmp,lm,mp->p", P[0], ell * self.C, cos)
                               + np.einsum("lmp,lm,mp->p", P[0], ell * self.S, sin))
            else:
                dth = np.einsum("lmp,lm,mp->p", P[1], self.C, cos) + np.einsum("lmp,lm,mp->p", P[1], self.S, sin)
                dph = (np.einsum("lmp,lm,mp->p", P[0], self.S * ms, cos)
                       - np.einsum("lmp,lm,mp->p", P[0], self.C * ms, sin))
                st = np.sin(th)
                e_th = np.stack([np.cos(th) * np.cos(ph), np.cos(th) * np.sin(ph), -st], axis=-1)
                e_ph = np.stack([-np.sin(ph), np.cos(ph), np.zeros_like(ph)], axis=-1)
                out[chunk] = dth[:, None] * e_th + (dph / st)[:, None] * e_ph
        return out.reshape(shape + out.shape[1:])

    def sphere_value(self, u) -> np.ndarray:
        return self._sphere_eval(u, "value")

    def sphere_laplacian(self, u) -> np.ndarray:
        return self._sphere_eval(u, "laplacian")

    def sphere_gradient(self, u) -> np.ndarray:
        """Tangential gradient as an R^3 vector (valid away from the poles)."""
        return self._sphere_eval(u, "gradient")

    # torus --------------------------------------------------------------
    def torus_derivative(self, x, *axes: int) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        phase = np.exp(1j * np.einsum("...a,ka->...k", x, self.k))
        sym = np.ones(len(self.coeffs), dtype=complex)
        for a in axes:
            sym = sym * (1j * self.k[:, a])
        return (phase @ (self.coeffs * sym)).real

    def torus_jet(self, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Value, gradient (..., 4) and Hessian (..., 4, 4) sharing one phase evaluation."""
        x = np.asarray(x, dtype=float)
        phase = np.exp(1j * np.einsum("...a,ka->...k", x, self.k)) * self.coeffs
        ik = 1j * self.k
        val = phase.sum(axis=-1).real
        grad = (phase @ ik).real
        hess = np.einsum("...k,ka,kb->...ab", phase, ik, ik).real
        return val, grad, hess


def ddc_convention_selftest(seed: int = 0, count: int = 20) -> dict:
    """Measure the constant relating dd^c (exterior-module convention) to the spectral operators.

    Sphere: dd^c(f o pi) is differentiated numerically on the Hopf surface and
    compared with ``Laplacian(f) omega_0``.  Torus: dd^c f on the nilmanifold
    frame is compared with the spectral matrix A(f) through the density
    ``(omega_0 + dd^c f)^2 / omega_0^2``.  Both ratios should equal C_DELTA.
    """
    from . import exterior as ext
    from .models import HopfModel, NilmanifoldModel

    rng = np.random.default_rng(seed)
    out = {}

    hopf = HopfModel(2)
    p = hopf.sample_points(rng, count)
    s = hopf.structure(p)
    f = lambda q: hopf.leaf_project(q)[..., 2]  # sqrt(4 pi / 3) Y_10, Laplacian = -2 f  # noqa: E731
    df = lambda q: ext.one_form(_fd_gradient(f, q))  # noqa: E731
    ddc = hopf.d(lambda q: ext.apply_complex_structure(hopf.structure(q).I, df(q)), p, 1e-3)
    tt = ext.wedge(s.theta, s.theta_c)
    ratio = ext.top_ratio(ext.wedge(ddc, tt), ext.wedge(s.omega0, tt)) / (-2.0 * f(p))
    out["sphere"] = float(np.median(ratio))
    out["sphere_spread"] = float(np.ptp(ratio))

    nil = NilmanifoldModel()
    grid = TorusGrid(8)
    fx = lambda x: 0.1 * np.cos(x[..., 0]) * np.cos(x[..., 2]) + 0.05 * np.sin(x[..., 1] + x[..., 3])  # noqa: E731
    q = nil.sample_points(rng, count)
    sn = nil.structure(q)
    dfn = lambda y: ext.one_form(np.einsum("...ij,...i->...j", nil.frame(y), _fd_gradient(fx, y)))  # noqa: E731
    ddcn = nil.d(lambda y: ext.apply_complex_structure(nil.structure(y).I, dfn(y)), q, 1e-3)
    tt = ext.wedge(sn.theta, sn.theta_c)
    vol = ext.wedge(ext.wedge(sn.omega0, sn.omega0), tt)
    trace_ext = 2 * ext.top_ratio(ext.wedge(ext.wedge(ddcn, sn.omega0), tt), vol)
    det_ext = ext.top_ratio(ext.wedge(ext.wedge(ddcn, ddcn), tt), vol)
    interp = SpectralInterpolant(grid.from_function(fx))
    d = interp.torus_derivative
    x = nil.leaf_project(q)
    a11 = d(x, 0, 0) + d(x, 1, 1)
    a22 = d(x, 2, 2) + d(x, 3, 3)
    a12 = d(x, 0, 2) + d(x, 1, 3) + 1j * (d(x, 0, 3) - d(x, 1, 2))
    c = trace_ext / (a11 + a22)
    out["torus"] = float(np.median(c))
    out["torus_spread"] = float(np.ptp(c))
    out["torus_det_mismatch"] = float(np.max(np.abs(det_ext - C_DELTA ** 2 * (a11 * a22 - np.abs(a12) ** 2))))
    return out


def _fd_gradient(fn, q, h: float = 1e-4) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    m = q.shape[-1]
    E = np.eye(m) * h
    return np.stack([(fn(q + E[i]) - fn(q - E[i])) / (2 * h) for i in range(m)], axis=-1)
