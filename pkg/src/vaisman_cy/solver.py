"""Damped Newton solver for the transversal Monge-Ampere equation.

The unknown is a mean-zero basic potential f; the equation is
``det(Id + A(f)) = density`` on the leaf-space grid, solved in log form

    residual(f) = log maRatio(f) - log density.

On the sphere (one transversal complex dimension) the equation is linear,
``1 + Laplacian(f) = density``, and is solved by a single exact step.  On the
torus each Newton direction solves the exact discrete linearization

    P tr((Id + A(f))^-1 A(delta)) + c = -P residual

where P removes the Nyquist modes (which the derivative symbols cannot
represent) and the scalar c is an extra unknown absorbing the volume
constraint.  GMRES with the inverse flat Laplacian as preconditioner solves
it; convergence is quadratic whenever the target is resolved by the grid.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np
from scipy.linalg import eigh
from scipy.sparse import diags
from scipy.sparse.linalg import LinearOperator, gmres, lobpcg

from . import leafspace as ls
from .leafspace import BasicField, CompatibilityError

log = logging.getLogger(__name__)

NYQUIST_PENALTY = 1e4
HOMOTOPY_T = 0.5
HOMOTOPY_STAGE_TOL = 1e-6


@dataclass(frozen=True)
class SolverConfig:
    tol_residual: float = 1e-10
    max_iters: int = 50
    damping_floor: float = 2.0 ** -20
    linear_solve_tol: float = 1e-12
    compat_tol: float = 1e-8
    homotopy: bool = True

    def __post_init__(self):
        if not 0 < self.tol_residual < 1:
            raise ValueError("tol_residual must lie in (0, 1)")
        if self.max_iters <= 0 or self.damping_floor <= 0 or self.linear_solve_tol <= 0:
            raise ValueError("solver settings must be positive")


@dataclass
class SolveResult:
    f: BasicField
    residual_history: list[float]
    iterations: int
    positivity_margin: float
    converged: bool
    trace: list[dict] = field(default_factory=list)
    message: str = ""

    @property
    def residual(self) -> float:
        return self.residual_history[-1]


class DampingFloorError(RuntimeError):
    """Line search failed; carries the last accepted iterate."""

    def __init__(self, message: str, f: BasicField, history: list, accepted: int):
        super().__init__(message)
        self.f, self.history, self.accepted = f, history, accepted


def project(f: BasicField) -> BasicField:
    """Resolved, mean-zero representative of a potential."""
    g = f.grid
    if g.kind == "sphere":
        vals = g.synthesize(g.analyze(f.values))
    else:
        vals = g.project(f.values)
    out = BasicField(g, vals)
    return out - out.mean()


def log_residual(f: BasicField, density: BasicField) -> BasicField:
    ratio = ls.ma_ratio(f)
    if np.min(ratio.values) <= 0:
        raise ValueError("maRatio is not positive")
    return BasicField(f.grid, np.log(ratio.values) - np.log(density.values))


def unresolved_fraction(f: BasicField, density: BasicField) -> float:
    """Share (L2 norm) of the log residual that sits in modes the grid cannot differentiate.

    Newton drives the resolved part of the residual to zero, so a share near 1 at
    a stalled iterate means the target itself is not resolved by the grid.
    """
    if f.grid.kind == "sphere":
        return 0.0
    r = log_residual(f, density).values
    total = np.linalg.norm(r)
    return float(np.linalg.norm(r - f.grid.project(r)) / total) if total > 0 else 0.0


def linearization(f: BasicField, direction: BasicField) -> BasicField:
    """Exact derivative of ``log maRatio`` at f along ``direction``: ``tr(M^-1 A(direction))``."""
    M = ls.background(f).matrices
    A = ls.ddc_basic(direction, check_alias=False).matrices
    return BasicField(f.grid, np.einsum("...ij,...ji->...", np.linalg.inv(M), A).real)


def _torus_divergence_operator(grid, C: np.ndarray):
    """v -> Re sum_jk Dbar_j (C_kj D_k v); equals tr(C A(v)) when C is divergence free."""
    kx = [grid.ks[0], grid.ks[2]]
    ky = [grid.ks[1], grid.ks[3]]
    D = [1j * kx[j] - ky[j] for j in range(2)]       # d/dx + i d/dy
    Dbar = [1j * kx[j] + ky[j] for j in range(2)]    # d/dx - i d/dy

    def apply(v: np.ndarray) -> np.ndarray:
        vhat = np.fft.fftn(v.reshape(grid.shape))
        Dv = [np.fft.ifftn(D[k] * vhat) for k in range(2)]
        acc = 0.0
        for j in range(2):
            flux = C[..., 0, j] * Dv[0] + C[..., 1, j] * Dv[1]
            acc = acc + Dbar[j] * np.fft.fftn(flux)
        return np.fft.ifftn(acc).real.ravel()

    return apply


def _adjugate(M: np.ndarray) -> np.ndarray:
    adj = np.empty_like(M)
    adj[..., 0, 0] = M[..., 1, 1]
    adj[..., 1, 1] = M[..., 0, 0]
    adj[..., 0, 1] = -M[..., 0, 1]
    adj[..., 1, 0] = -M[..., 1, 0]
    return adj


def _laplacian_preconditioner(grid, shift: float = 0.0, nyquist: float = 0.0) -> LinearOperator:
    sym = -grid.laplacian_symbol + shift + nyquist * grid.nyquist_mask
    inv = np.where(sym == 0, 0.0, 1.0 / np.where(sym == 0, 1.0, sym))
    n = int(np.prod(grid.shape))
    return LinearOperator((n, n), matvec=lambda r: np.fft.ifftn(inv * np.fft.fftn(r.reshape(grid.shape))).real.ravel(),
                          dtype=float)


def _newton_operator(f: BasicField) -> LinearOperator:
    """Bordered Jacobian of the projected log equation on the torus.

    The unknown v carries the mean-zero, Nyquist-free direction delta plus the
    constant c in its mean; Nyquist modes of v are passed through unchanged, so
    the map ``v -> P tr(M^-1 A(delta)) + c + (Id - P) v`` is square and nonsingular.
    """
    g = f.grid
    Minv = np.linalg.inv(ls.background(f).matrices)
    mask = g.nyquist_mask
    n = int(np.prod(g.shape))

    def apply(y):
        vhat = g.fft(y.reshape(g.shape))
        dhat = np.where(mask, 0.0, vhat)
        dhat[0, 0, 0, 0] = 0.0
        out = g.fft(np.einsum("...ij,...ji->...", Minv, ls._torus_matrices(g, dhat)).real)
        out[mask] = vhat[mask]
        out[0, 0, 0, 0] += vhat[0, 0, 0, 0]
        return g.ifft(out).ravel()

    return LinearOperator((n, n), matvec=apply, dtype=float)


def _bordered_preconditioner(grid) -> LinearOperator:
    sym = np.where(grid.nyquist_mask, 1.0, grid.laplacian_symbol)
    sym[0, 0, 0, 0] = 1.0
    n = int(np.prod(grid.shape))
    return LinearOperator((n, n), matvec=lambda r: grid.ifft(grid.fft(r.reshape(grid.shape)) / sym).ravel(),
                          dtype=float)


def newton_direction(f: BasicField, residual: BasicField, cfg: SolverConfig) -> BasicField:
    """Solve the linearized log equation on the torus by preconditioned GMRES."""
    g = f.grid
    rhs = -g.project(residual.values)
    v, info = gmres(_newton_operator(f), rhs.ravel(), rtol=cfg.linear_solve_tol, atol=0.0, restart=60,
                    maxiter=40, M=_bordered_preconditioner(g))
    if info > 0:
        log.warning("GMRES stopped after %d restarts without reaching tolerance", info)
    return project(BasicField(g, v.reshape(g.shape)))


def _check_inputs(grid, density: BasicField, cfg: SolverConfig) -> None:
    if density.grid is not grid:
        raise ValueError("density lives on a different grid")
    if np.min(density.values) <= 0:
        raise ValueError("target density must be positive")
    mean = density.mean()
    if abs(mean - 1.0) > cfg.compat_tol:
        raise CompatibilityError(f"density integrates to {mean:.12g} x the background volume")


def _record(trace, it, res, step, margin, mean=0.0):
    rec = {"iteration": it, "residual": res, "damping": step, "margin": margin, "mean": mean}
    trace.append(rec)
    log.info("iter=%d residual=%.3e damping=%.3e margin=%.6f", it, res, step, margin)


def _newton(f: BasicField, density: BasicField, cfg: SolverConfig, trace: list) -> tuple[BasicField, list, int]:
    res = log_residual(f, density)
    history = [res.sup()]
    _record(trace, 0, history[-1], 0.0, ls.positivity_margin(f), f.mean())
    accepted = 0
    while history[-1] > cfg.tol_residual and accepted < cfg.max_iters:
        delta = newton_direction(f, res, cfg)
        step = 1.0
        while True:
            trial = project(f + delta * step)
            margin = ls.positivity_margin(trial)
            if margin > 0:
                trial_res = log_residual(trial, density)
                if trial_res.sup() < history[-1]:
                    break
            step *= 0.5
            if step < cfg.damping_floor:
                raise DampingFloorError(f"damping floor reached at iteration {accepted + 1}", f, history, accepted)
        f, res = trial, trial_res
        accepted += 1
        history.append(res.sup())
        _record(trace, accepted, history[-1], step, margin, f.mean())
    return f, history, accepted


def solve_transversal_ma(grid, density: BasicField, cfg: SolverConfig | None = None,
                         init: BasicField | None = None) -> SolveResult:
    """Find mean-zero f with ``(omega_0 + dd^c f)^(n-1) = density * omega_0^(n-1)``."""
    cfg = cfg or SolverConfig()
    _check_inputs(grid, density, cfg)
    f0 = project(init if init is not None else ls.zeros(grid))
    if ls.positivity_margin(f0) <= 0:
        raise ValueError("initial potential does not give a positive transversal form")
    trace: list[dict] = []

    if grid.complex_dim == 1:
        res0 = log_residual(f0, density).sup()
        _record(trace, 0, res0, 0.0, ls.positivity_margin(f0), f0.mean())
        if res0 <= cfg.tol_residual:
            return SolveResult(f0, [res0], 0, ls.positivity_margin(f0), True, trace)
        source = density - ls.ma_ratio(f0)
        f = project(f0 + ls.poisson_solve(source - source.mean()))
        margin = ls.positivity_margin(f)
        res = log_residual(f, density).sup() if margin > 0 else np.inf
        _record(trace, 1, res, 1.0, margin, f.mean())
        ok = res <= cfg.tol_residual and margin > 0
        return SolveResult(f, [res0, res], 1, margin, ok, trace,
                           "" if ok else "linear solve did not reach the residual tolerance")

    try:
        f, history, its = _newton(f0, density, cfg, trace)
        message = ""
    except DampingFloorError as exc:
        share = unresolved_fraction(exc.f, density)
        if share >= 0.5:
            # Newton can no longer act on what is left: it lives in Nyquist modes
            msg = (f"target density is not resolved by the grid: residual floor {exc.history[-1]:.3e}, "
                   f"{share:.0%} of the residual is Nyquist content")
            return SolveResult(exc.f, exc.history, exc.accepted, ls.positivity_margin(exc.f), False, trace, msg)
        if not cfg.homotopy:
            return SolveResult(exc.f, exc.history, exc.accepted, ls.positivity_margin(exc.f), False, trace, str(exc))
        log.info("%s; switching to two-stage homotopy", exc)
        f, history, its = f0, [], 0
        try:
            # the intermediate target only has to bring f into the basin of the final one
            stage = BasicField(grid, 1.0 + HOMOTOPY_T * (density.values - 1.0))
            loose = replace(cfg, tol_residual=max(cfg.tol_residual, HOMOTOPY_STAGE_TOL))
            try:
                f, h, k = _newton(f, stage, loose, trace)
            except DampingFloorError as exc_stage:
                f, h, k = exc_stage.f, exc_stage.history, exc_stage.accepted
            history += h
            its += k
            f, h, k = _newton(f, density, cfg, trace)
            history += h
            its += k
            message = "converged via homotopy"
        except DampingFloorError as exc2:
            return SolveResult(exc2.f, history + exc2.history, its + exc2.accepted,
                               ls.positivity_margin(exc2.f), False, trace, f"homotopy failed: {exc2}")
    margin = ls.positivity_margin(f)
    converged = history[-1] <= cfg.tol_residual and margin > 0
    if not converged and not message:
        message = "maximum iterations reached"
    return SolveResult(f, history, its, margin, converged, trace, message)


@dataclass
class UniquenessResult:
    distance: float
    results: list[SolveResult]


def uniqueness_experiment(grid, density: BasicField, cfg: SolverConfig | None = None,
                          inits: list[BasicField] | None = None) -> UniquenessResult:
    """Solve from several starting potentials; report the largest pairwise sup-distance."""
    if inits is None or len(inits) < 2:
        raise ValueError("uniqueness experiment needs at least two initializations")
    results = [solve_transversal_ma(grid, density, cfg, init) for init in inits]
    if not all(r.converged for r in results):
        raise RuntimeError("a uniqueness run did not converge")
    dist = max(((a.f - a.f.mean()) - (b.f - b.f.mean())).sup() for a, b in combinations(results, 2))
    return UniquenessResult(dist, results)


@dataclass
class DPSpectrum:
    eigenvalues: np.ndarray      # smallest-magnitude eigenvalues of D_P, descending (0 first)
    kernel_angle: float          # angle between the first eigenvector and the constants
    gap: float                   # |second eigenvalue|


def discretized_dp(grid, f1: BasicField, f2: BasicField):
    """Return (stiffness apply, mass weights) with ``D_P v = -stiffness(v) / mass``."""
    eta1, eta2 = ls.background(f1), ls.background(f2)
    for eta in (eta1, eta2):
        if np.min(eta.min_eigenvalue()) <= 0:
            raise ValueError("D_P needs positive background forms")
    mass = eta1.determinant()
    if grid.kind == "sphere":
        return None, mass
    K = _torus_divergence_operator(grid, 0.5 * _adjugate(eta1.matrices + eta2.matrices))
    return (lambda v: -K(v)), mass


def dp_kernel_check(grid, f1: BasicField, f2: BasicField, k: int = 3, seed: int = 0) -> DPSpectrum:
    """Smallest eigenpairs of the discretized D_P (backgrounds eta_i = omega_0 + dd^c f_i)."""
    stiff, mass = discretized_dp(grid, f1, f2)
    if grid.kind == "sphere":
        Y = grid._Y
        w = (grid.weights * mass).ravel()
        G = Y.T @ (w[:, None] * Y)
        vals, vecs = eigh(np.diag(-grid.eigenvalues), G, subset_by_index=[0, k - 1])
        first = Y @ vecs[:, 0]
    else:
        n = mass.size
        # Nyquist modes have zeroed derivative symbols; lift them out of the kernel
        mask = grid.nyquist_mask

        def op(v):
            v = v.ravel()
            nyq = np.fft.ifftn(np.where(mask, np.fft.fftn(v.reshape(grid.shape)), 0.0)).real.ravel()
            return stiff(v) + NYQUIST_PENALTY * nyq

        A = LinearOperator((n, n), matvec=op, dtype=float)
        B = diags(mass.ravel())
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((n, k + 8))
        with warnings.catch_warnings():
            # the padding columns of the block may lag; the wanted pairs are checked below
            warnings.simplefilter("ignore", UserWarning)
            vals, vecs = lobpcg(A, X, B=B, M=_laplacian_preconditioner(grid, 1.0, NYQUIST_PENALTY), largest=False,
                                tol=1e-9, maxiter=300)
        order = np.argsort(vals)
        vals, vecs = vals[order][:k], vecs[:, order][:, :k]
        for j in range(k):
            r = op(vecs[:, j]) - vals[j] * (B @ vecs[:, j])
            rel = np.linalg.norm(r) / np.linalg.norm(B @ vecs[:, j])
            if rel > 1e-6:
                log.warning("D_P eigenpair %d has relative residual %.2e", j, rel)
        first = vecs[:, 0]
    ones = np.ones_like(first) / np.sqrt(first.size)
    v = first / np.linalg.norm(first)
    angle = float(np.arcsin(min(1.0, np.linalg.norm(v - ones * (ones @ v)))))
    return DPSpectrum(-vals, angle, float(abs(vals[1])))
