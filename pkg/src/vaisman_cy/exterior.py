"""Pointwise real exterior algebra in dimension at most 8.

Forms are stored densely: a degree-k form in dimension m carries C(m, k)
coefficients against the basis e^{i1} ^ ... ^ e^{ik}, i1 < ... < ik, in
lexicographic order.  Every object may carry leading batch axes, so a
single ``AlternatingForm`` can hold the value of a form field at many points
at once; all operations broadcast over those axes.

Sign conventions (fixed here, used everywhere else):

* ``(e^1 ^ e^2)(e_1, e_2) = 1`` (determinant convention).
* A complex structure J acts on a k-form by
  ``(J a)(X1, ..., Xk) = a(J^-1 X1, ..., J^-1 Xk)``; on 1-forms this is
  ``a -> -a o J``.
* ``d^c = J d J^-1`` so that ``d^c f = -df o J`` and ``dd^c = 2i del delbar``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from math import comb

import numpy as np

MAX_DIM = 8
CS_TOL = 1e-12


@lru_cache(maxsize=None)
def basis(dim: int, degree: int) -> tuple[tuple[int, ...], ...]:
    """Lexicographically ordered multi-indices of a degree-``degree`` basis."""
    return tuple(combinations(range(dim), degree))


@lru_cache(maxsize=None)
def _index(dim: int, degree: int) -> dict[tuple[int, ...], int]:
    return {I: n for n, I in enumerate(basis(dim, degree))}


def _perm_sign(seq) -> int:
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


@lru_cache(maxsize=None)
def _wedge_table(dim: int, p: int, q: int) -> np.ndarray:
    T = np.zeros((comb(dim, p), comb(dim, q), comb(dim, p + q)))
    out = _index(dim, p + q)
    for a, I in enumerate(basis(dim, p)):
        for b, J in enumerate(basis(dim, q)):
            if set(I) & set(J):
                continue
            K = tuple(sorted(I + J))
            T[a, b, out[K]] = _perm_sign(I + J)
    return T.reshape(-1, comb(dim, p + q))


@lru_cache(maxsize=None)
def _interior_table(dim: int, k: int) -> np.ndarray:
    # (i_v a)_J = sum_{v, I} T[v, I, J] v^v a_I
    T = np.zeros((dim, comb(dim, k), comb(dim, k - 1)))
    out = _index(dim, k - 1)
    for a, I in enumerate(basis(dim, k)):
        for pos, i in enumerate(I):
            J = I[:pos] + I[pos + 1:]
            T[i, a, out[J]] = (-1) ** pos
    return T


def _check_dim(dim: int) -> None:
    if not 1 <= dim <= MAX_DIM:
        raise ValueError(f"dimension {dim} outside 1..{MAX_DIM}")


@dataclass(frozen=True)
class Vector:
    """Tangent vector (or batch of vectors) given by frame components."""

    dim: int
    components: np.ndarray

    def __post_init__(self):
        comps = np.asarray(self.components, dtype=float)
        if comps.shape[-1:] != (self.dim,):
            raise ValueError(f"expected {self.dim} components, got shape {comps.shape}")
        if not np.all(np.isfinite(comps)):
            raise ValueError("vector components must be finite")
        object.__setattr__(self, "components", comps)

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.components.shape[:-1]


@dataclass(frozen=True)
class AlternatingForm:
    """Degree-k alternating form with dense lexicographic coefficients."""

    dim: int
    degree: int
    coeffs: np.ndarray

    def __post_init__(self):
        _check_dim(self.dim)
        if not 0 <= self.degree <= self.dim:
            raise ValueError(f"degree {self.degree} invalid in dimension {self.dim}")
        c = np.asarray(self.coeffs, dtype=float)
        n = comb(self.dim, self.degree)
        if c.ndim == 0 and n == 1:
            c = c[None]
        if c.shape[-1:] != (n,):
            raise ValueError(
                f"degree-{self.degree} form in dimension {self.dim} needs {n} "
                f"coefficients, got shape {c.shape}"
            )
        object.__setattr__(self, "coeffs", c)

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.coeffs.shape[:-1]

    def _like(self, coeffs) -> "AlternatingForm":
        return AlternatingForm(self.dim, self.degree, coeffs)

    def _same_space(self, other: "AlternatingForm") -> None:
        if (self.dim, self.degree) != (other.dim, other.degree):
            raise ValueError("forms live in different spaces")

    def __add__(self, other):
        self._same_space(other)
        return self._like(self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._same_space(other)
        return self._like(self.coeffs - other.coeffs)

    def __neg__(self):
        return self._like(-self.coeffs)

    def __mul__(self, s):
        s = np.asarray(s, dtype=float)
        return self._like(self.coeffs * s[..., None])

    __rmul__ = __mul__

    def __truediv__(self, s):
        return self * (1.0 / np.asarray(s, dtype=float))

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        return self._like(self.coeffs[idx + (slice(None),)])

    def component(self, *indices: int) -> np.ndarray:
        """Coefficient of ``e^{i1} ^ ... ^ e^{ik}`` (indices in any order)."""
        key = tuple(sorted(indices))
        return _perm_sign(indices) * self.coeffs[..., _index(self.dim, self.degree)[key]]

    def sup(self) -> float:
        return float(np.max(np.abs(self.coeffs))) if self.coeffs.size else 0.0


@dataclass(frozen=True)
class LinearComplexStructure:
    dim: int
    matrix: np.ndarray

    def __post_init__(self):
        J = np.asarray(self.matrix, dtype=float)
        if self.dim % 2 or J.shape[-2:] != (self.dim, self.dim):
            raise ValueError("complex structure needs an even-dimensional square matrix")
        err = np.max(np.abs(J @ J + np.eye(self.dim)))
        if err > CS_TOL:
            raise ValueError(f"J^2 != -Id (error {err:.2e})")
        object.__setattr__(self, "matrix", J)

    @property
    def inverse(self) -> np.ndarray:
        return -self.matrix


@dataclass(frozen=True)
class MetricTensor:
    dim: int
    matrix: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.matrix, dtype=float)
        if g.shape[-2:] != (self.dim, self.dim):
            raise ValueError("metric must be a square matrix of the ambient dimension")
        if np.max(np.abs(g - np.swapaxes(g, -1, -2)), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(g))):
            raise ValueError("metric is not symmetric")
        if np.min(np.linalg.eigvalsh(g)) <= 0:
            raise ValueError("metric is not positive definite")
        object.__setattr__(self, "matrix", g)

    @property
    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.matrix)


# -- constructors -----------------------------------------------------------

def zero_form(dim: int, degree: int, batch_shape=()) -> AlternatingForm:
    return AlternatingForm(dim, degree, np.zeros(tuple(batch_shape) + (comb(dim, degree),)))


def scalar_form(dim: int, value) -> AlternatingForm:
    value = np.asarray(value, dtype=float)
    return AlternatingForm(dim, 0, value[..., None])


def basis_form(dim: int, *indices: int, coeff=1.0) -> AlternatingForm:
    """``coeff * e^{i1} ^ ... ^ e^{ik}`` with 0-based indices in any order."""
    if len(set(indices)) != len(indices):
        return zero_form(dim, len(indices))
    coeff = np.asarray(coeff, dtype=float)
    out = np.zeros(coeff.shape + (comb(dim, len(indices)),))
    out[..., _index(dim, len(indices))[tuple(sorted(indices))]] = _perm_sign(indices) * coeff
    return AlternatingForm(dim, len(indices), out)


def one_form(coeffs) -> AlternatingForm:
    coeffs = np.asarray(coeffs, dtype=float)
    return AlternatingForm(coeffs.shape[-1], 1, coeffs)


def two_form_matrix(a: AlternatingForm) -> np.ndarray:
    """Skew matrix ``M[i, j] = a(e_i, e_j)`` of a 2-form."""
    if a.degree != 2:
        raise ValueError("two_form_matrix needs a 2-form")
    m = a.dim
    M = np.zeros(a.batch_shape + (m, m))
    for n, (i, j) in enumerate(basis(m, 2)):
        M[..., i, j] = a.coeffs[..., n]
        M[..., j, i] = -a.coeffs[..., n]
    return M


def two_form_from_matrix(M) -> AlternatingForm:
    M = np.asarray(M, dtype=float)
    m = M.shape[-1]
    A = 0.5 * (M - np.swapaxes(M, -1, -2))
    coeffs = np.stack([A[..., i, j] for i, j in basis(m, 2)], axis=-1)
    return AlternatingForm(m, 2, coeffs)


# -- algebra ----------------------------------------------------------------

def _broadcast(x: np.ndarray, y: np.ndarray):
    batch = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
    return (np.broadcast_to(x, batch + x.shape[-1:]),
            np.broadcast_to(y, batch + y.shape[-1:]), batch)


def wedge(a: AlternatingForm, b: AlternatingForm) -> AlternatingForm:
    """Exterior product ``a ^ b``."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.degree + b.degree > a.dim:
        raise ValueError(f"degree overflow: {a.degree} + {b.degree} > {a.dim}")
    x, y, batch = _broadcast(a.coeffs, b.coeffs)
    outer = (x[..., :, None] * y[..., None, :]).reshape(batch + (-1,))
    return AlternatingForm(a.dim, a.degree + b.degree, outer @ _wedge_table(a.dim, a.degree, b.degree))


def wedge_power(a: AlternatingForm, k: int) -> AlternatingForm:
    out = scalar_form(a.dim, np.ones(a.batch_shape))
    for _ in range(k):
        out = wedge(out, a)
    return out


def interior(v: Vector, a: AlternatingForm) -> AlternatingForm:
    """Contraction ``i_v a = a(v, ...)``."""
    if v.dim != a.dim:
        raise ValueError(f"dimension mismatch: {v.dim} vs {a.dim}")
    if a.degree == 0:
        raise ValueError("cannot contract a degree-0 form")
    T = _interior_table(a.dim, a.degree)
    vv, aa, _ = _broadcast(v.components, a.coeffs)
    return AlternatingForm(a.dim, a.degree - 1, np.einsum("...v,...i,vij->...j", vv, aa, T))


@lru_cache(maxsize=None)
def _minor_index(dim: int, k: int):
    B = np.array(basis(dim, k), dtype=int).reshape(-1, k)
    return B


def compound(L: np.ndarray, k: int) -> np.ndarray:
    """k-th compound matrix: ``C[..., I, J] = det L[I, J]`` over sorted multi-indices."""
    L = np.asarray(L, dtype=float)
    m = L.shape[-1]
    if k == 0:
        return np.ones(L.shape[:-2] + (1, 1))
    B = _minor_index(m, k)
    batch = L.shape[:-2]
    flat = L.reshape(-1, m, m)
    if flat.shape[0] > 1 and np.array_equal(flat, np.broadcast_to(flat[0], flat.shape)):
        # complex structures are usually the same matrix at every point
        C = np.linalg.det(flat[0][B[:, None, :, None], B[None, :, None, :]])
        return np.broadcast_to(C, batch + C.shape)
    return np.linalg.det(L[..., B[:, None, :, None], B[None, :, None, :]])


def pullback_linear(L, a: AlternatingForm) -> AlternatingForm:
    """``(L* a)(X1, ..., Xk) = a(L X1, ..., L Xk)``."""
    L = np.asarray(L, dtype=float)
    if L.shape[-2:] != (a.dim, a.dim):
        raise ValueError("pullback matrix has the wrong shape")
    if np.any(np.abs(np.linalg.det(L)) < 1e-14):
        raise ValueError("pullback matrix is singular")
    C = compound(L, a.degree)
    return AlternatingForm(a.dim, a.degree, np.einsum("...j,...ji->...i", a.coeffs, C))


def evaluate(a: AlternatingForm, *vectors: Vector) -> np.ndarray:
    """Value ``a(X1, ..., Xk)``."""
    if len(vectors) != a.degree:
        raise ValueError(f"a degree-{a.degree} form takes {a.degree} vectors")
    out = a
    for v in vectors:
        out = interior(v, out)
    return out.coeffs[..., 0]


def _cs_matrix(J) -> np.ndarray:
    if isinstance(J, LinearComplexStructure):
        return J.matrix
    return LinearComplexStructure(np.asarray(J).shape[-1], J).matrix


def apply_complex_structure(J, a: AlternatingForm) -> AlternatingForm:
    """``(J a)(X1, ..., Xk) = a(J^-1 X1, ..., J^-1 Xk)``."""
    Jm = _cs_matrix(J)
    if Jm.shape[-1] != a.dim:
        raise ValueError("complex structure and form dimensions differ")
    return pullback_linear(-Jm, a)


def apply_inverse_complex_structure(J, a: AlternatingForm) -> AlternatingForm:
    return pullback_linear(_cs_matrix(J), a)


def _metric_matrix(g) -> np.ndarray:
    if isinstance(g, MetricTensor):
        return g.matrix
    return MetricTensor(np.asarray(g).shape[-1], g).matrix


def sharp(g, a: AlternatingForm) -> Vector:
    if a.degree != 1:
        raise ValueError("sharp needs a 1-form")
    G = _metric_matrix(g)
    return Vector(a.dim, np.linalg.solve(G, a.coeffs[..., None])[..., 0])


def flat(g, v: Vector) -> AlternatingForm:
    G = _metric_matrix(g)
    return AlternatingForm(v.dim, 1, np.einsum("...ij,...j->...i", G, v.components))


def form_inner(g, a: AlternatingForm, b: AlternatingForm) -> np.ndarray:
    """Induced inner product on k-forms: ``sum a_I b_J det(g^-1)[I, J]``."""
    a._same_space(b)
    Ginv = np.linalg.inv(_metric_matrix(g))
    C = compound(Ginv, a.degree)
    return np.einsum("...i,...ij,...j->...", a.coeffs, C, b.coeffs)


def form_norm(g, a: AlternatingForm) -> np.ndarray:
    return np.sqrt(np.maximum(form_inner(g, a, a), 0.0))


def top_ratio(a: AlternatingForm, b: AlternatingForm) -> np.ndarray:
    """The scalar c with ``a = c b`` for top-degree forms."""
    if a.degree != a.dim or b.degree != b.dim or a.dim != b.dim:
        raise ValueError("top_ratio needs two top-degree forms of the same dimension")
    den = b.coeffs[..., 0]
    if np.any(den == 0):
        raise ValueError("division by the zero top form")
    return a.coeffs[..., 0] / den
