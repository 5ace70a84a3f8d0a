"""Command-line front end: ``vaisman-cy verify|solve|uniqueness|report``.

Exit codes: 0 all checks pass, 1 a verification failed, 2 usage or
configuration error (including a rejected volume specification), 3 the
solver did not converge.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import leafspace as ls
from . import models as md
from . import pipeline as pl
from . import solver as so
from .pipeline import CheckRecord

SCHEMA = "vaisman-cy/1"
EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_NONCONVERGED = 0, 1, 2, 3
MODELS = ("hopf2", "hopf3", "nil3")


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    model: str = "hopf2"
    grid: int | None = None          # L for the sphere, N for the torus
    psi: str = "zero"
    lee_scale: float = 1.0
    seed: int = 0
    samples: int = 1000
    out: str = "out"
    inits: int = 3
    flip_dc_sign: bool = False
    tol_identity: float | None = None  # default 1e-6 (Hopf, finite differences), 1e-12 (nilmanifold)
    tol_residual: float = 1e-10
    max_iters: int = 50
    linear_solve_tol: float = 1e-12
    tol_basic: float = 1e-6
    tol_density_oracle: float = 1e-8
    tol_volume: float = 1e-6
    tol_vaisman: float = 1e-5
    tol_dc_lee: float = 1e-6
    tol_lee_class: float = 1e-8
    tol_uniqueness_torus: float = 1e-8
    tol_uniqueness_sphere: float = 1e-12
    tol_metric_agreement: float = 1e-7
    tol_rigidity: float = 1e-6

    def validate(self, command: str) -> None:
        if self.model not in MODELS:
            raise UsageError(f"unknown model {self.model!r}; choose from {', '.join(MODELS)}")
        if command in ("solve", "uniqueness") and self.model == "hopf3":
            raise UsageError("hopf3 has no leaf-space solver grid; use hopf2 (sphere) or nil3 (torus)")
        if self.grid is not None:
            if self.model == "nil3" and (self.grid < 8 or self.grid % 2):
                raise UsageError("nil3 grid size N must be even and >= 8")
            if self.model == "hopf2" and self.grid < 2:
                raise UsageError("hopf2 band limit L must be >= 2")
        if not self.lee_scale > 0:
            raise UsageError("lee-scale must be positive")
        if self.samples < 1:
            raise UsageError("samples must be positive")
        if command == "uniqueness" and self.inits < 2:
            raise UsageError("uniqueness needs at least 2 initializations (3 recommended)")
        for f in dataclasses.fields(self):
            if f.name.startswith("tol_") and getattr(self, f.name) is not None and not getattr(self, f.name) > 0:
                raise UsageError(f"{f.name} must be positive")

    def solver_config(self) -> so.SolverConfig:
        return so.SolverConfig(tol_residual=self.tol_residual, max_iters=self.max_iters,
                               linear_solve_tol=self.linear_solve_tol)

    def tolerances(self) -> pl.Tolerances:
        return pl.Tolerances(basic=self.tol_basic, density_oracle=self.tol_density_oracle, volume=self.tol_volume,
                             vaisman=self.tol_vaisman, dc_lee=self.tol_dc_lee, lee_class=self.tol_lee_class,
                             uniqueness_torus=self.tol_uniqueness_torus,
                             uniqueness_sphere=self.tol_uniqueness_sphere,
                             metric_agreement=self.tol_metric_agreement, rigidity=self.tol_rigidity)

    def echo(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, raw: str):
    default = RunConfig().__getattribute__(name)
    kind = _FIELDS[name].type
    try:
        if "bool" in str(kind):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if "int" in str(kind):
            return int(raw)
        if "float" in str(kind):
            return float(raw)
    except ValueError:
        raise UsageError(f"config key {name!r}: cannot parse {raw!r}") from None
    return raw.strip() if isinstance(default, str) or default is None else raw


def read_config_file(path) -> dict:
    """``key = value`` lines (UTF-8), ``#`` starts a comment; keys may use dashes."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise UsageError(f"config line {lineno}: expected 'key = value'")
        if key not in _FIELDS:
            raise UsageError(f"config line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value.strip())
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vaisman-cy", description="Transversal Calabi-Yau solver for Vaisman manifolds")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("verify", "run the identity suite on a model"),
                        ("solve", "prescribe a volume form and reconstruct the Vaisman metric"),
                        ("uniqueness", "solve from several initializations and compare"),
                        ("report", "summarize an existing report.json")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--out", help="output directory (report.json, field CSVs)")
        sp.add_argument("-v", "--verbose", action="store_true", help="stream solver diagnostics to stderr")
        if name == "report":
            sp.add_argument("path", nargs="?", help="report file (default: <out>/report.json)")
            continue
        sp.add_argument("--model", choices=MODELS)
        sp.add_argument("--grid", type=int, help="band limit L (hopf2) or grid size N (nil3)")
        sp.add_argument("--psi", help="zero | y<l><m>:<amp> | cc<i><j>:<amp> | fiber:<amp> | file:<csv>")
        sp.add_argument("--lee-scale", type=float, dest="lee_scale")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--samples", type=int)
        sp.add_argument("--inits", type=int, help="number of solver initializations (uniqueness)")
        sp.add_argument("--max-iters", type=int, dest="max_iters")
        sp.add_argument("--flip-dc-sign", action="store_const", const=True, dest="flip_dc_sign",
                        help="negative control: evaluate identities under the opposite d^c sign")
        for f in dataclasses.fields(RunConfig):
            if f.name.startswith("tol_"):
                sp.add_argument("--" + f.name.replace("_", "-"), type=float, dest=f.name)
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for name in _FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    cfg = RunConfig(**values)
    cfg.validate(args.command)
    return cfg


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(json.dumps(cfg.echo(), sort_keys=True).encode()).hexdigest()


# -- commands -----------------------------------------------------------------------

def identity_checks(model, points, tol: float, dc_sign: float = 1.0) -> list[CheckRecord]:
    """Pointwise identity suite; Hopf models add the FD order and homothety character."""
    out = [
        CheckRecord.of("lck", md.check_lck(model, points), tol),
        CheckRecord.of("lee_closed", md.check_lee_closed(model, points), tol),
        CheckRecord.of("structure_identity", md.check_structure_identity(model, points, dc_sign=dc_sign), tol),
        CheckRecord.of("contraction", md.check_contraction(model, points), tol),
        CheckRecord.of("parallel_lee", md.check_parallel_lee(model, points, tol=max(tol, 1e-5)), tol),
    ]
    fk = md.check_foliation_kernel(model, points)
    out.append(CheckRecord("foliation_kernel_dim", float(np.max(np.abs(fk.kernel_dim - 2))), 0.0, 0.0,
                           bool(np.all(fk.kernel_dim == 2))))
    out.append(CheckRecord.of("foliation_kernel_angle", np.nan_to_num(fk.angles, nan=np.inf), tol))
    spec = md.omega0_spectrum(model.structure(points))
    out.append(CheckRecord.of("omega0_semipositive", np.maximum(0.0, -spec.min(axis=-1)), tol))
    for name, vals in md.check_killing_commuting(model, points)._asdict().items():
        out.append(CheckRecord.of(name, vals, tol))
    if isinstance(model, md.HopfModel):
        sub = points[: min(100, len(points))]
        h = model.default_step(sub)
        r1 = np.max(md.check_lck(model, sub, h))
        r2 = np.max(md.check_lck(model, sub, h / 2))
        out.append(CheckRecord.of("fd_order", abs(np.log2(r1 / r2) - 2.0), 0.5))
        for alpha in (1.5, 2.0, 3.0):
            hc = md.homothety_character(md.HopfModel(model.n, alpha))
            out.append(CheckRecord.of(f"homothety_alpha_{alpha:g}", [abs(hc.value - alpha ** 2), hc.spread], 1e-10))
    return out


def _report(command: str, cfg: RunConfig, checks: list[CheckRecord], solver: dict | None = None,
            extra: dict | None = None, error: dict | None = None) -> dict:
    rep = {
        "schema": SCHEMA,
        "command": command,
        "config": cfg.echo(),
        "config_hash": config_hash(cfg),
        "checks": [c.to_dict() for c in checks],
        "solver": solver or {},
        "pass": error is None and all(c.passed for c in checks),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    if extra:
        rep.update(extra)
    if error:
        rep["error"] = error
    return rep


def _write_report(cfg: RunConfig, rep: dict) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "report.json"
    path.write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _print_checks(checks) -> None:
    for c in checks:
        c = c if isinstance(c, dict) else c.to_dict()
        print(f"{'PASS' if c['pass'] else 'FAIL'}  {c['name']:<26} max={c['max_residual']:.3e} "
              f"mean={c['mean_residual']:.3e} tol={c['tolerance']:.1e}")


def cmd_verify(cfg: RunConfig) -> int:
    model = md.make_model(cfg.model)
    points = model.sample_points(np.random.default_rng(cfg.seed), cfg.samples)
    tol = cfg.tol_identity or (1e-12 if cfg.model == "nil3" else 1e-6)
    checks = identity_checks(model, points, tol, -1.0 if cfg.flip_dc_sign else 1.0)
    rep = _report("verify", cfg, checks)
    _print_checks(checks)
    print(f"report: {_write_report(cfg, rep)}")
    return EXIT_PASS if rep["pass"] else EXIT_FAIL


def _spec(cfg: RunConfig):
    model = md.make_model(cfg.model)
    grid = pl.grid_for(model, cfg.grid)
    psi = pl.psi_from_spec(model, cfg.psi, grid)
    return model, grid, pl.VolumeSpec(model, psi, cfg.lee_scale, cfg.psi)


def cmd_solve(cfg: RunConfig) -> int:
    model, grid, spec = _spec(cfg)
    try:
        s, report = pl.run_pipeline(spec, grid, cfg.solver_config(), cfg.samples, cfg.seed, cfg.tolerances(),
                                    uniqueness_inits=0)
    except pl.PipelineError as exc:
        rep = _report("solve", cfg, [], error={"stage": exc.stage, "message": str(exc)})
        _write_report(cfg, rep)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE if exc.stage == "volume" else EXIT_FAIL
    extra = {"normalization": report.normalization}
    rep = _report("solve", cfg, report.checks, report.solver, extra)
    _print_checks(report.checks)
    path = _write_report(cfg, rep)
    if s is not None:
        pl.write_field_csv(path.parent / "f.csv", s.f)
        dens = ls.ma_ratio(s.f)
        pl.write_field_csv(path.parent / "density.csv", dens)
    print(f"report: {path}")
    if not report.solver.get("converged", False):
        return EXIT_NONCONVERGED
    return EXIT_PASS if rep["pass"] else EXIT_FAIL


def cmd_uniqueness(cfg: RunConfig) -> int:
    model, grid, spec = _spec(cfg)
    try:
        vol = pl.transversal_volume(spec, grid, cfg.tol_basic, cfg.seed)
    except pl.BasicnessError as exc:
        rep = _report("uniqueness", cfg, [], error={"stage": "volume", "message": str(exc)})
        _write_report(cfg, rep)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    density, kappa = pl.normalize_volume(vol.density)
    inits = pl.default_inits(grid, cfg.seed, cfg.inits)
    try:
        u = so.uniqueness_experiment(grid, density, cfg.solver_config(), inits)
    except RuntimeError as exc:
        rep = _report("uniqueness", cfg, [], error={"stage": "solve", "message": str(exc)})
        _write_report(cfg, rep)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    utol = cfg.tol_uniqueness_sphere if grid.kind == "sphere" else cfg.tol_uniqueness_torus
    pts = pl.sample_points(model, min(cfg.samples, 200), cfg.seed)
    gs = [pl.reconstruct(model, r.f, cfg.lee_scale, check_points=1).structure(pts).g.matrix for r in u.results]
    checks = [CheckRecord.of("uniqueness_potential", u.distance, utol),
              CheckRecord.of("uniqueness_metric", max(np.max(np.abs(a - b)) for a in gs for b in gs),
                             cfg.tol_metric_agreement)]
    solver = {"runs": [{"iterations": r.iterations, "residual": r.residual, "converged": r.converged}
                       for r in u.results], "distance": u.distance}
    rep = _report("uniqueness", cfg, checks, solver, {"normalization": kappa})
    _print_checks(checks)
    print(f"report: {_write_report(cfg, rep)}")
    return EXIT_PASS if rep["pass"] else EXIT_FAIL


def cmd_report(args) -> int:
    path = Path(args.path) if args.path else Path(args.out or "out") / "report.json"
    try:
        rep = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read report: {exc}") from None
    if rep.get("schema") != SCHEMA:
        raise UsageError(f"unsupported report schema {rep.get('schema')!r}")
    cfg = rep.get("config", {})
    print(f"{rep['command']} model={cfg.get('model')} psi={cfg.get('psi')} seed={cfg.get('seed')} "
          f"hash={rep['config_hash'][:12]}")
    _print_checks(rep["checks"])
    if "error" in rep:
        print(f"error [{rep['error']['stage']}]: {rep['error']['message']}")
    print("overall:", "PASS" if rep["pass"] else "FAIL")
    return EXIT_PASS if rep["pass"] else EXIT_FAIL


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(name)s %(message)s")
    try:
        if args.command == "report":
            return cmd_report(args)
        cfg = resolve_config(args)
        return {"verify": cmd_verify, "solve": cmd_solve, "uniqueness": cmd_uniqueness}[args.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:  # bad psi spec, field file, model/grid mismatch
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
