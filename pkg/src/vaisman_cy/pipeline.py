"""From a prescribed invariant volume form to the Vaisman metric that realises it.

The volume form is ``V' = e^psi omega_ref^n`` with psi basic, and the Lee class
is ``c [theta_ref]`` with ``c = lee_scale > 0``.  The run is

1. ``transversal_volume``: the basic density ``e^psi`` on the leaf grid,
   cross-checked against the contraction ``i_{I theta#} i_{theta#} V' / n``;
2. ``normalize_volume``: rescale so the density integrates to the background;
3. ``solve_transversal_ma``: the basic potential f;
4. ``reconstruct``: ``theta' = c (theta - df)``, ``omega_0' = c (omega_0 + dd^c f)``,
   ``omega' = omega_0' + theta' ^ theta'^c`` and ``g'(X, Y) = omega'(X, I Y)``;
5. verification of the volume, the Vaisman identities and the Lee class.

Scaling both theta and omega_0 by c multiplies ``(omega')^n`` by ``c^(n+1)``, so the
target volume is ``c^(n+1) kappa e^psi omega_ref^n`` where kappa is the
normalization constant.
"""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

from . import exterior as ext
from . import leafspace as ls
from . import models as md
from . import solver as so
from .exterior import MetricTensor
from .leafspace import BasicField, SphereGrid, SpectralInterpolant, TorusGrid
from .models import HopfModel, NilmanifoldModel, StructureTensors

AmbientFn = Callable[[np.ndarray], np.ndarray]


class PipelineError(RuntimeError):
    """A stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class BasicnessError(ValueError):
    pass


# -- grids and volume specifications -------------------------------------------

def grid_for(model, size: int | None = None):
    """Leaf-space grid of a model: sphere for hopf2, torus for nil3."""
    if isinstance(model, HopfModel) and model.n == 2:
        return SphereGrid(32 if size is None else size)
    if isinstance(model, NilmanifoldModel):
        return TorusGrid(16 if size is None else size)
    raise ValueError(f"no leaf-space solver grid for model {model.name}")


def lift_nodes(model, grid, rng: np.random.Generator | None = None) -> np.ndarray:
    """Ambient points over the grid nodes (random fibre coordinates when rng is given)."""
    if isinstance(model, NilmanifoldModel):
        p = model.leaf_lift(grid.coordinates)
        if rng is not None:
            p[..., 4:] = rng.uniform(0.0, 2 * np.pi, p.shape[:-1] + (2,))
        return p
    p = model.leaf_lift(grid.points)
    if rng is not None:
        p = p * (model.alpha ** rng.uniform(0.0, 1.0, p.shape[:-1]))[..., None]
    return p


def basic_from_field(model, f: BasicField) -> AmbientFn:
    """Ambient function ``f o pi`` of a resolved grid field."""
    interp = SpectralInterpolant(f)
    if f.grid.kind == "sphere":
        return lambda q: interp.sphere_value(model.leaf_project(q))
    return lambda q: interp.torus_derivative(np.asarray(q)[..., :4])


@dataclass(frozen=True)
class VolumeSpec:
    """``V' = e^psi omega_ref^n`` with target Lee class ``lee_scale [theta_ref]``."""

    model: object
    psi: AmbientFn
    lee_scale: float = 1.0
    label: str = "custom"

    def __post_init__(self):
        if not (np.isfinite(self.lee_scale) and self.lee_scale > 0):
            raise ValueError("lee_scale must be positive (Lee classes lie on the positive ray)")


def _hopf_harmonic(l: int, m: int, amp: float, model) -> AmbientFn:
    def psi(q):
        u = model.leaf_project(q)
        th = np.arccos(np.clip(u[..., 2], -1.0, 1.0))
        return amp * ls.real_sph_harm_single(l, m, th, np.arctan2(u[..., 1], u[..., 0]))
    return psi


def psi_from_spec(model, spec: str, grid=None) -> AmbientFn:
    """Builtin psi library.

    ``zero``; ``y<l><m>:<amp>`` (signed order, e.g. ``y2-1:0.1``, sphere models);
    ``cc<i><j>:<amp>`` = amp cos(x_i) cos(x_j) (torus model, 1-based axes);
    ``fiber:<amp>`` a deliberately non-basic function;
    ``file:<path>`` psi values at the grid nodes in field-dump CSV format.
    """
    spec = spec.strip()
    if spec == "zero":
        return lambda q: np.zeros(np.asarray(q).shape[:-1])
    if spec.startswith("file:"):
        if grid is None:
            raise ValueError("file psi needs a grid")
        return basic_from_field(model, read_field_csv(spec[5:], grid))
    name, _, amp_s = spec.partition(":")
    try:
        amp = float(amp_s)
    except ValueError:
        raise ValueError(f"psi spec {spec!r} needs a numeric amplitude after ':'") from None
    if m := re.fullmatch(r"y(\d)(-?\d)", name):
        l, order = int(m.group(1)), int(m.group(2))
        if not isinstance(model, HopfModel) or model.n != 2 or abs(order) > l:
            raise ValueError(f"psi {name!r} needs the hopf2 model and |m| <= l")
        return _hopf_harmonic(l, order, amp, model)
    if m := re.fullmatch(r"cc([1-4])([1-4])", name):
        if not isinstance(model, NilmanifoldModel):
            raise ValueError(f"psi {name!r} needs the nil3 model")
        i, j = int(m.group(1)) - 1, int(m.group(2)) - 1
        return lambda q: amp * np.cos(np.asarray(q)[..., i]) * np.cos(np.asarray(q)[..., j])
    if name == "fiber":
        if isinstance(model, NilmanifoldModel):
            return lambda q: amp * np.cos(np.asarray(q)[..., 4])
        return lambda q: amp * np.asarray(q)[..., 0] / np.linalg.norm(q, axis=-1)
    raise ValueError(f"unknown psi spec {spec!r}")


# -- field files -----------------------------------------------------------------

def write_field_csv(path, f: BasicField) -> None:
    """One node per row in lexicographic grid order; header ``index,coord1..coordd,value``."""
    coords = f.grid.coordinates.reshape(-1, f.grid.coordinates.shape[-1])
    d = coords.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["index"] + [f"coord{k + 1}" for k in range(d)] + ["value"])
        for i, (c, v) in enumerate(zip(coords, f.values.ravel())):
            w.writerow([i] + [f"{x:.17g}" for x in c] + [f"{v:.17g}"])


def read_field_csv(path, grid) -> BasicField:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "index" or rows[0][-1] != "value":
        raise ValueError("field file needs the header index,coord1..coordd,value")
    vals = np.array([float(r[-1]) for r in rows[1:]])
    if vals.size != np.prod(grid.shape):
        raise ValueError(f"field file has {vals.size} rows, grid has {np.prod(grid.shape)} nodes")
    coords = np.array([[float(x) for x in r[1:-1]] for r in rows[1:]])
    if np.max(np.abs(coords - grid.coordinates.reshape(coords.shape))) > 1e-12:
        raise ValueError("field file nodes do not match the grid")
    return BasicField(grid, vals.reshape(grid.shape))


# -- stage 1: the transversal volume ------------------------------------------------

def basic_drift(model, psi: AmbientFn, count: int = 16, time: float = 1.0, seed: int = 0) -> float:
    """Largest change of psi along the Lee and anti-Lee flows from sample points."""
    p = model.sample_points(np.random.default_rng(seed), count)
    v0 = psi(p)
    out = 0.0
    for fn in (lambda q: model.structure(q).lee_field.components,
               lambda q: model.structure(q).anti_lee_field.components):
        out = max(out, float(np.max(np.abs(psi(md.flow(model, fn, p, time)) - v0))))
    return out


def contraction_density(model, psi: AmbientFn, points) -> np.ndarray:
    """``i_{I theta#} i_{theta#}(e^psi omega^n) / (n omega_0^(n-1))`` evaluated pointwise."""
    s = model.structure(points)
    n = model.n
    vol = ext.wedge_power(s.omega, n) * np.exp(psi(points))
    v0 = ext.interior(s.anti_lee_field, ext.interior(s.lee_field, vol)) / n
    tt = ext.wedge(s.theta, s.theta_c)
    return ext.top_ratio(ext.wedge(v0, tt), ext.wedge(ext.wedge_power(s.omega0, n - 1), tt))


class TransversalVolume(NamedTuple):
    density: BasicField
    oracle_mismatch: float
    drift: float


def transversal_volume(spec: VolumeSpec, grid, basic_tol: float = 1e-6, seed: int = 0) -> TransversalVolume:
    """Density ``V_0 / omega_0^(n-1) = e^psi`` at the grid nodes."""
    drift = basic_drift(spec.model, spec.psi, seed=seed)
    if drift > basic_tol:
        raise BasicnessError(f"psi is not basic: drift {drift:.3e} along the Lee/anti-Lee flows")
    nodes = lift_nodes(spec.model, grid, np.random.default_rng(seed))
    dens = np.exp(spec.psi(nodes))
    mismatch = 0.0
    for chunk in np.array_split(np.arange(dens.size), max(1, dens.size // 8192)):
        q = nodes.reshape(-1, nodes.shape[-1])[chunk]
        mismatch = max(mismatch, float(np.max(np.abs(contraction_density(spec.model, spec.psi, q)
                                                     - dens.ravel()[chunk]))))
    return TransversalVolume(BasicField(grid, dens), mismatch, drift)


def normalize_volume(density: BasicField) -> tuple[BasicField, float]:
    """Rescale so that ``int density omega_0^(n-1) = int omega_0^(n-1)``; return the constant."""
    mean = density.mean()
    if not mean > 0:
        raise ValueError("density must have positive integral")
    kappa = 1.0 / mean
    return density * kappa, kappa


# -- stage 4: reconstruction ------------------------------------------------------------

def _hopf_projection_jacobian(x: np.ndarray) -> np.ndarray:
    """d pi for pi(z) = (2 Re(conj z1 z2), 2 Im(conj z1 z2), |z1|^2 - |z2|^2) / |z|^2."""
    x1, y1, x2, y2 = np.moveaxis(x, -1, 0)
    r2 = np.sum(x ** 2, axis=-1)
    q = np.stack([2 * (x1 * x2 + y1 * y2), 2 * (x1 * y2 - y1 * x2), x1 ** 2 + y1 ** 2 - x2 ** 2 - y2 ** 2], -1)
    dq = 2 * np.stack([np.stack([x2, y2, x1, y1], -1),
                       np.stack([y2, -x2, -y1, x1], -1),
                       np.stack([x1, y1, -x2, -y2], -1)], -2)
    return dq / r2[..., None, None] - 2 * q[..., :, None] * x[..., None, :] / (r2 ** 2)[..., None, None]


@dataclass
class VaismanStructureNumeric:
    """The reconstructed Vaisman structure; ``structure(points)`` evaluates it.

    ``nonbasic_gradient`` (coordinate gradient of an ambient function u) is a
    negative-control hook: it adds ``-c du`` to theta' while omega_0' keeps the
    transversal formula, as if u had been accepted as a basic potential.
    """

    model: object
    f: BasicField
    lee_scale: float = 1.0
    nonbasic_gradient: AmbientFn | None = None
    interp: SpectralInterpolant = field(init=False, repr=False)

    def __post_init__(self):
        self.interp = SpectralInterpolant(self.f)

    def potential(self, points) -> np.ndarray:
        x = np.asarray(points, dtype=float)
        if isinstance(self.model, HopfModel):
            return self.interp.sphere_value(self.model.leaf_project(x))
        return self.interp.torus_derivative(x[..., :4])

    def _jets(self, x: np.ndarray, ref: StructureTensors):
        """Frame coefficients of d(f o pi) and the 2-form dd^c(f o pi)."""
        m = self.model.dim
        if isinstance(self.model, HopfModel):
            u = self.model.leaf_project(x)
            grad = self.interp.sphere_gradient(u)
            df = np.einsum("...a,...ai->...i", grad, _hopf_projection_jacobian(x))
            ddc = ref.omega0 * (ls.C_DELTA * self.interp.sphere_laplacian(u))
            return df, ddc
        _, grad, hess = self.interp.torus_jet(x[..., :4])
        df = np.zeros(x.shape[:-1] + (m,))
        H = np.zeros(x.shape[:-1] + (m, m))
        df[..., :4] = grad
        H[..., :4, :4] = hess
        # d^c f = -df o I has coefficients b_i = -sum_k df_k I[k, i]; d of it is sum e_j(b_i) e^j ^ e^i
        Mji = -np.einsum("...jk,...ki->...ji", H, ref.I.matrix)
        return df, ext.two_form_from_matrix(Mji - np.swapaxes(Mji, -1, -2))

    def structure(self, points) -> StructureTensors:
        x = self.model.check_point(points)
        ref = self.model.structure(x)
        df, ddc = self._jets(x, ref)
        if self.nonbasic_gradient is not None:
            E = self.model.frame(x)
            df = df + np.einsum("...ai,...a->...i", E, self.nonbasic_gradient(x))
        c = self.lee_scale
        theta = (ref.theta - ext.one_form(df)) * c
        theta_c = ext.apply_complex_structure(ref.I, theta)
        omega0 = (ref.omega0 + ddc) * c
        omega = omega0 + ext.wedge(theta, theta_c)
        G = ext.two_form_matrix(omega) @ ref.I.matrix  # g'(e_i, e_j) = omega'(e_i, I e_j)
        g = MetricTensor(self.model.dim, 0.5 * (G + np.swapaxes(G, -1, -2)))
        return StructureTensors(g, ref.I, theta, theta_c, ext.sharp(g, theta), omega, omega0)

    __call__ = structure


def sample_points(model, count: int, seed: int) -> np.ndarray:
    return model.sample_points(np.random.default_rng(seed), count)


def metric_min_eigenvalue(s: VaismanStructureNumeric, points) -> np.ndarray:
    ref = s.model.structure(points)
    df, ddc = s._jets(np.asarray(points, dtype=float), ref)
    c = s.lee_scale
    theta = (ref.theta - ext.one_form(df)) * c
    omega = (ref.omega0 + ddc) * c + ext.wedge(theta, ext.apply_complex_structure(ref.I, theta))
    G = ext.two_form_matrix(omega) @ ref.I.matrix
    return np.linalg.eigvalsh(0.5 * (G + np.swapaxes(G, -1, -2)))[..., 0]


def reconstruct(model, f: BasicField, lee_scale: float = 1.0, check_points: int = 1000,
                seed: int = 0) -> VaismanStructureNumeric:
    """Assemble theta', omega_0', omega', g' from a solved potential; g' is checked at sample points."""
    margin = ls.positivity_margin(f, check_alias=False)
    if margin <= 0:
        raise ValueError(f"omega_0 + dd^c f is not positive (margin {margin:.3e})")
    s = VaismanStructureNumeric(model, f, float(lee_scale))
    lam = metric_min_eigenvalue(s, sample_points(model, check_points, seed))
    if np.min(lam) <= 0:
        raise ValueError("reconstructed metric is indefinite at a sample point")
    return s


# -- stage 5: verification ---------------------------------------------------------------

def volume_ratio(s: VaismanStructureNumeric, psi: AmbientFn, kappa: float, points) -> np.ndarray:
    """``(omega')^n / V'`` with ``V' = c^(n+1) kappa e^psi omega_ref^n``."""
    n = s.model.n
    st = s.structure(points)
    ref = s.model.structure(points)
    r = ext.top_ratio(ext.wedge_power(st.omega, n), ext.wedge_power(ref.omega, n))
    return r / (s.lee_scale ** (n + 1) * kappa * np.exp(psi(points)))


def verify_volume_match(s: VaismanStructureNumeric, spec: VolumeSpec, kappa: float, grid=None,
                        points=None, seed: int = 0) -> np.ndarray:
    """``|(omega')^n / V' - 1|`` at the given points, or at lifted grid nodes."""
    if points is None:
        points = lift_nodes(s.model, grid, np.random.default_rng(seed)).reshape(-1, s.model.dim)
    points = np.asarray(points, dtype=float)
    out = np.empty(points.shape[0])
    for chunk in np.array_split(np.arange(points.shape[0]), max(1, points.shape[0] // 4096)):
        out[chunk] = np.abs(volume_ratio(s, spec.psi, kappa, points[chunk]) - 1.0)
    return out


def lie_derivative_form(model, structure, X_fn: AmbientFn, points, h=None) -> np.ndarray:
    """``|L_X omega'|`` per point via Cartan's formula ``i_X d omega' + d(i_X omega')``."""
    points = np.asarray(points, dtype=float)
    h = model.default_step(points) if h is None else h
    m = model.dim
    X = ext.Vector(m, X_fn(points))
    d_omega = model.d(lambda q: structure(q).omega, points, h)
    d_ix = model.d(lambda q: ext.interior(ext.Vector(m, X_fn(q)), structure(q).omega), points, h)
    return np.linalg.norm((ext.interior(X, d_omega) + d_ix).coeffs, axis=-1)


def verify_vaisman(s: VaismanStructureNumeric, points, h=None) -> dict[str, np.ndarray]:
    """Per-point residuals of the LCK identity, Lie invariance of omega' and ``nabla' theta' = 0``."""
    model = s.model
    lee = lambda q: model.structure(q).lee_field.components  # noqa: E731
    anti = lambda q: model.structure(q).anti_lee_field.components  # noqa: E731
    return {
        "lck": md.check_lck(model, points, h, structure=s.structure),
        "lie_lee": lie_derivative_form(model, s.structure, lee, points, h),
        "lie_anti_lee": lie_derivative_form(model, s.structure, anti, points, h),
        "parallel_lee": md.check_parallel_lee(model, points, h, structure=s.structure, tol=1e-5),
    }


def dc_lee_residual(s: VaismanStructureNumeric, points, h=None) -> np.ndarray:
    """``|d^c theta' - omega_0'|`` per point."""
    points = np.asarray(points, dtype=float)
    h = s.model.default_step(points) if h is None else h
    dc = md._dc(s.model, s.structure, lambda q: s.structure(q).theta, points, h)
    return np.linalg.norm((dc - s.structure(points).omega0).coeffs, axis=-1)


def _loop_integral(structure, reference_scale: float, model, path, velocity, t, w) -> float:
    q = path(t)
    st = structure(q)
    ref = model.structure(q)
    a = st.theta.coeffs - reference_scale * ref.theta.coeffs
    v = np.einsum("...ij,...j->...i", np.linalg.inv(model.frame(q)), velocity(t))
    return float(np.sum(w * np.einsum("...i,...i->...", a, v)))


def lee_class_loops(s, reference_scale: float | None = None, seed: int = 0) -> np.ndarray:
    """Loop integrals of ``theta' - c theta`` over generating loops.

    Hopf: deck loops ``t -> alpha^t p`` from a few base points (Gauss-Legendre).
    Nilmanifold: the six frame circles ``t -> exp(2 pi t e_i)`` from the identity
    (trapezoid rule on the periodic integrand).
    """
    model = s.model
    c = s.lee_scale if reference_scale is None else reference_scale
    out = []
    if isinstance(model, HopfModel):
        t, w = np.polynomial.legendre.leggauss(32)
        t, w = 0.5 * (t + 1), 0.5 * w
        la = np.log(model.alpha)
        for p in sample_points(model, 4, seed):
            out.append(_loop_integral(s.structure, c, model,
                                      lambda t: model.alpha ** t[:, None] * p,
                                      lambda t: la * model.alpha ** t[:, None] * p, t, w))
    else:
        k = 64
        t = np.arange(k) / k
        w = np.full(k, 1.0 / k)
        for i in range(model.dim):
            e = np.zeros(model.dim)
            e[i] = 2 * np.pi
            out.append(_loop_integral(s.structure, c, model, lambda t: t[:, None] * e,
                                      lambda t: np.broadcast_to(e, (t.size, model.dim)), t, w))
    return np.abs(np.array(out))


def verify_lee_class(s, reference_scale: float | None = None, seed: int = 0) -> float:
    return float(np.max(lee_class_loops(s, reference_scale, seed)))


def scaled_lee_structure(model, factor: float):
    """Negative control: theta replaced by ``factor * theta``, all else unchanged."""
    def st(points):
        s = model.structure(points)
        return replace(s, theta=s.theta * factor)
    return st


def kernel_rigidity(model, s_a, s_b, points) -> md.KernelReport:
    """Kernel of ``omega_0^a + omega_0^b`` compared with span(theta#, I theta#)."""
    ref = model.structure(points)
    return md.kernel_intersection(s_a(points).omega0, s_b(points).omega0, md.lee_span(ref))


# -- the run ---------------------------------------------------------------------------------

@dataclass(frozen=True)
class Tolerances:
    basic: float = 1e-6
    density_oracle: float = 1e-8
    volume: float = 1e-6
    vaisman: float = 1e-5
    dc_lee: float = 1e-6
    lee_class: float = 1e-8
    uniqueness_torus: float = 1e-8
    uniqueness_sphere: float = 1e-12
    metric_agreement: float = 1e-7
    rigidity: float = 1e-6


@dataclass
class CheckRecord:
    name: str
    max_residual: float
    mean_residual: float
    tolerance: float
    passed: bool

    @classmethod
    def of(cls, name: str, values, tol: float) -> "CheckRecord":
        v = np.abs(np.atleast_1d(np.asarray(values, dtype=float)))
        mx = float(np.max(v))
        return cls(name, mx, float(np.mean(v)), float(tol), bool(np.isfinite(mx) and mx <= tol))

    def to_dict(self) -> dict:
        return {"name": self.name, "max_residual": self.max_residual, "mean_residual": self.mean_residual,
                "tolerance": self.tolerance, "pass": self.passed}


@dataclass
class VerificationReport:
    checks: list[CheckRecord]
    solver: dict
    normalization: float
    config_hash: str = ""

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> CheckRecord:
        return next(c for c in self.checks if c.name == name)


def default_inits(grid, seed: int = 0, count: int = 3) -> list[BasicField]:
    """Zero, one fixed smooth potential and seeded random band-limited ones, all with margin >= 1/2."""
    rng = np.random.default_rng(seed)
    if grid.kind == "sphere":
        fixed = grid.harmonic(1, 1) * 0.05 + grid.harmonic(2, 0) * 0.02
    else:
        fixed = grid.from_function(lambda x: 0.2 * np.cos(x[..., 0]))
    out = [ls.zeros(grid), so.project(fixed)]
    while len(out) < count:
        if grid.kind == "sphere":
            c = np.where((grid.degrees >= 1) & (grid.degrees <= 4), rng.standard_normal(grid.degrees.size), 0.0)
            f = BasicField(grid, grid.synthesize(c))
        else:
            k = np.fft.fftfreq(grid.N, 1.0 / grid.N)
            low = np.max(np.abs(np.meshgrid(k, k, k, k, indexing="ij")), axis=0) <= 2
            fh = np.where(low, rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape), 0.0)
            f = BasicField(grid, np.fft.ifftn(fh).real)
        f = so.project(f)
        f = f * (0.5 / max(np.max(np.abs(ls.ddc_basic(f).matrices)) * grid.complex_dim, 1e-300))
        out.append(f)
    return out


def run_pipeline(spec: VolumeSpec, grid, cfg: so.SolverConfig | None = None, samples: int = 500,
                 seed: int = 0, tol: Tolerances | None = None, uniqueness_inits: int = 3):
    """Volume -> normalization -> transversal Monge-Ampere -> reconstruction -> verification."""
    cfg = cfg or so.SolverConfig()
    tol = tol or Tolerances()
    model = spec.model
    checks: list[CheckRecord] = []

    try:
        vol = transversal_volume(spec, grid, tol.basic, seed)
    except BasicnessError as exc:
        raise PipelineError("volume", str(exc)) from exc
    checks.append(CheckRecord.of("psi_basic", vol.drift, tol.basic))
    checks.append(CheckRecord.of("density_oracle", vol.oracle_mismatch, tol.density_oracle))

    try:
        density, kappa = normalize_volume(vol.density)
        res = so.solve_transversal_ma(grid, density, cfg)
    except (ValueError, ls.AliasingError) as exc:
        raise PipelineError("solve", str(exc)) from exc
    solver_summary = {"converged": res.converged, "iterations": res.iterations,
                      "residual_history": [float(r) for r in res.residual_history],
                      "positivity_margin": res.positivity_margin, "message": res.message}
    checks.append(CheckRecord.of("solver_residual", res.residual, cfg.tol_residual))
    if not res.converged:
        return None, VerificationReport(checks, solver_summary, kappa)

    try:
        s = reconstruct(model, res.f, spec.lee_scale, seed=seed)
    except ValueError as exc:
        raise PipelineError("reconstruct", str(exc)) from exc
    pts = sample_points(model, samples, seed + 1)
    lam = metric_min_eigenvalue(s, sample_points(model, 1000, seed))
    checks.append(CheckRecord("metric_positivity", float(max(0.0, -lam.min())), float(np.mean(np.maximum(0.0, -lam))),
                              0.0, bool(lam.min() > 0)))

    vol_pts = pts if grid.kind == "sphere" else None
    checks.append(CheckRecord.of("volume_match", verify_volume_match(s, spec, kappa, grid, vol_pts, seed), tol.volume))
    checks.append(CheckRecord.of("dc_lee", dc_lee_residual(s, pts), tol.dc_lee))
    try:
        for name, vals in verify_vaisman(s, pts).items():
            checks.append(CheckRecord.of(name, vals, tol.vaisman))
    except ValueError as exc:
        raise PipelineError("verify", str(exc)) from exc
    checks.append(CheckRecord.of("lee_class", lee_class_loops(s, seed=seed), tol.lee_class))

    ref = reconstruct(model, ls.zeros(grid), 1.0, check_points=1, seed=seed)
    rig = kernel_rigidity(model, ref, s, pts)
    checks.append(CheckRecord("kernel_dim", float(np.max(np.abs(rig.kernel_dim - 2))), 0.0, 0.0,
                              bool(np.all(rig.kernel_dim == 2))))
    checks.append(CheckRecord.of("kernel_rigidity", np.nan_to_num(rig.angles, nan=np.inf), tol.rigidity))

    if uniqueness_inits >= 2:
        u = so.uniqueness_experiment(grid, density, cfg, default_inits(grid, seed, uniqueness_inits))
        utol = tol.uniqueness_sphere if grid.kind == "sphere" else tol.uniqueness_torus
        checks.append(CheckRecord.of("uniqueness_potential", u.distance, utol))
        gs = [reconstruct(model, r.f, spec.lee_scale, check_points=1).structure(pts).g.matrix for r in u.results]
        checks.append(CheckRecord.of("uniqueness_metric", max(np.max(np.abs(a - b)) for a in gs for b in gs),
                                     tol.metric_agreement))
        solver_summary["uniqueness_distance"] = u.distance
    return s, VerificationReport(checks, solver_summary, kappa)


def spec_from_structure(s: VaismanStructureNumeric, label: str = "round-trip") -> VolumeSpec:
    """``psi = log((omega')^n / omega_ref^n)``, i.e. the volume that s realises."""
    n = s.model.n

    def psi(points):
        pts = np.asarray(points, dtype=float)
        flat = pts.reshape(-1, pts.shape[-1])
        r = ext.top_ratio(ext.wedge_power(s.structure(flat).omega, n), ext.wedge_power(s.model.structure(flat).omega, n))
        return np.log(r / s.lee_scale ** (n + 1)).reshape(pts.shape[:-1])

    return VolumeSpec(s.model, psi, s.lee_scale, label)
