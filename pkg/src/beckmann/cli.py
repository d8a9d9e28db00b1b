"""Command-line driver: ``beckmann lemmas | solve | verify``.

Every run writes ``manifest.json`` (the full configuration, thresholds and
library versions) into ``--out`` before doing any work, and rewrites it with
the outcome at the end.  Exit codes are 0 on success, 2 when a
mathematical check fails, 3 when the solver does not converge and 4 for
configuration or I/O errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import platform
import sys
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from . import __version__
from .besov import (BRANCHES, EXPONENT_SLACK, Window, check_branch, ladder,
                    sigma_estimate_check, verify_estimate, write_curves_csv)
from .grid import GridDomain, ScalarField, read_fields, write_fields
from .lemmas import GAP_TOL, default_sweeps, write_sweep_csv
from .maps import Exponents
from .problems import (KINDS, NULL_KINDS, ProblemSpec, make_besov_source, make_lipschitz_null,
                       make_radial, make_smooth_source)
from .solver import (METHODS, ConvergenceError, Solution, SolverConfig, divergence_residual,
                     dual_energy, duality_gap, energy_gradient, primal_value,
                     project_feasible, recover_flux, solve_dual, write_diagnostics)

EXIT_OK, EXIT_MATH, EXIT_NOCONV, EXIT_CONFIG = 0, 2, 3, 4
GAP_FLOOR = -1e-10
GAP_REL = 1e-4

log = logging.getLogger("beckmann")


class ConfigError(ValueError):
    """Invalid command-line configuration."""


@dataclass
class RunConfig:
    command: str
    q: float = 2.0
    alpha: Optional[float] = None
    grid: int = 128
    dim: int = 2
    boundary: str = "periodic"
    problem: str = "radial"
    a: float = 4.0
    modes: int = 3
    J: Optional[int] = None
    amplitude: float = 10.0
    null_kind: str = "cone"
    tol: float = 1e-6
    max_iter: int = 20000
    method: str = "auto"
    window: Optional[tuple] = None
    hladder: Optional[list] = None
    branch: str = "auto"
    slack: float = EXPONENT_SLACK
    samples: int = 1_000_000
    seed: int = 0
    source: Optional[str] = None
    out: str = "beckmann-out"

    def validate(self) -> None:
        if not 1.0 < self.q <= 8.0:
            raise ConfigError(f"--q must lie in (1, 8], got {self.q}")
        if self.alpha is not None and not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"--alpha must lie in (0, 1), got {self.alpha}")
        if self.grid < 16 or self.dim not in (2, 3):
            raise ConfigError("--grid must be at least 16 and --dim 2 or 3")
        if self.tol < 0 or self.max_iter < 0:
            raise ConfigError("--tol and --max-iter must be nonnegative")
        if self.samples < 100_000:
            raise ConfigError("--samples must be at least 100000")
        if self.window is not None:
            R, r0 = self.window
            if not (R > 0 and 0 < r0 < R / 2):
                raise ConfigError(f"--window needs R > 0 and 0 < r0 < R/2, got {R},{r0}")
        if self.hladder is not None and (not self.hladder or min(self.hladder) < 1):
            raise ConfigError("--hladder needs positive whole-cell steps")
        if self.problem == "besov" and self.alpha is None:
            raise ConfigError("--problem besov needs --alpha")
        if self.slack < 0:
            raise ConfigError("--slack must be nonnegative")


# ---------------------------------------------------------------- parsing

def _pair(text: str) -> tuple:
    try:
        R, r0 = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected R,r0, got {text!r}") from None
    return (R, r0)


def _steps(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected k1,k2,..., got {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--out", default="beckmann-out", help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--verbose", action="store_true")

    prob = _Parser(add_help=False)
    prob.add_argument("--q", type=float, default=2.0, help="exponent q in (1, 8]")
    prob.add_argument("--alpha", type=float, default=None, help="Besov smoothness of f")
    prob.add_argument("--grid", type=int, default=128, help="cells per axis")
    prob.add_argument("--dim", type=int, default=2, choices=(2, 3))
    prob.add_argument("--boundary", choices=("periodic", "neumann"), default="periodic")
    prob.add_argument("--problem", choices=KINDS, default="radial")
    prob.add_argument("--a", type=float, default=4.0, help="radial slope (free boundary at 1/a)")
    prob.add_argument("--modes", type=int, default=3, help="smooth source terms")
    prob.add_argument("--J", type=int, default=None, help="Weierstrass terms (default: finest resolved)")
    prob.add_argument("--amplitude", type=float, default=10.0)
    prob.add_argument("--null-kind", choices=NULL_KINDS, default="cone")
    prob.add_argument("--tol", type=float, default=1e-6)
    prob.add_argument("--max-iter", type=int, default=20000)
    prob.add_argument("--method", choices=METHODS, default="auto")

    p = _Parser(prog="beckmann", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    lem = sub.add_parser("lemmas", parents=[common], help="randomized inequality sweeps")
    lem.add_argument("--samples", type=int, default=1_000_000)
    sub.add_parser("solve", parents=[common, prob], help="solve the dual problem")
    ver = sub.add_parser("verify", parents=[common, prob], help="solve and measure regularity")
    ver.add_argument("--window", type=_pair, default=None, help="R,r0 (default: box/4, box/20)")
    ver.add_argument("--hladder", type=_steps, default=None, help="whole-cell steps k1,k2,...")
    ver.add_argument("--branch", choices=("auto",) + BRANCHES, default="auto")
    ver.add_argument("--slack", type=float, default=EXPONENT_SLACK,
                     help="allowed shortfall of the fitted exponent")
    ver.add_argument("--from", dest="source", default=None,
                     help="reuse the fields of an earlier solve run in this directory")
    return p


def parse_config(argv) -> RunConfig:
    ns = vars(build_parser().parse_args(argv))
    ns.pop("verbose", None)
    cfg = RunConfig(**ns)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------- building blocks

def build_problem(cfg: RunConfig) -> ProblemSpec:
    try:
        return _build_problem(cfg)
    except ValueError as ex:
        raise ConfigError(str(ex)) from None


def _build_problem(cfg: RunConfig) -> ProblemSpec:
    dom = GridDomain((cfg.grid,) * cfg.dim, 1.0 / cfg.grid, cfg.boundary)
    e = Exponents(cfg.q, cfg.alpha)
    if cfg.problem == "radial":
        spec = make_radial(e, cfg.a, dom)
    elif cfg.problem == "lipschitz":
        spec = make_lipschitz_null(dom, cfg.null_kind, cfg.q, cfg.seed)
    elif cfg.problem == "besov":
        J = cfg.J if cfg.J is not None else int(math.log2(cfg.grid // 2))
        spec = make_besov_source(cfg.alpha, J, dom, cfg.seed, cfg.q, cfg.amplitude)
    else:
        spec = make_smooth_source(dom, cfg.modes, cfg.seed, cfg.q, cfg.amplitude)
    spec.exponents = e
    return spec


def resolve_branch(cfg: RunConfig, spec: ProblemSpec) -> str:
    branch = cfg.branch
    if branch == "auto":
        if cfg.q < 2.0:
            branch = "besov_q_lt_2" if spec.data_class == "besov" else "sobolev_q_lt_2"
        else:
            branch = "besov_q_ge_2"
    check_branch(branch, spec.exponents, spec.data_class)
    return branch


def make_window(cfg: RunConfig, dom: GridDomain) -> Window:
    side = min(dom.extent)
    R, r0 = cfg.window if cfg.window is not None else (0.25 * side, 0.05 * side)
    w = Window.centered(dom, R, r0)
    w.check(dom)
    return w


def _atomic_text(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _atomic(path: Path, writer) -> None:
    """Run ``writer(tmp_path)`` and move the result into place."""
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_json(path: Path, data: dict) -> None:
    _atomic_text(path, json.dumps(_json_safe(data), indent=2) + "\n")


def _thresholds(cfg: RunConfig) -> dict:
    return {"exponent_slack": cfg.slack, "gap_floor": GAP_FLOOR, "gap_relative": GAP_REL,
            "lemma_gap_tol": GAP_TOL, "solver_tol": cfg.tol}


def _manifest(cfg: RunConfig, out: Path, status: dict, spec: Optional[ProblemSpec] = None) -> None:
    data = {"command": cfg.command, "config": asdict(cfg), "seed": cfg.seed,
            "thresholds": _thresholds(cfg),
            "versions": {"beckmann": __version__, "numpy": np.__version__,
                         "scipy": scipy.__version__, "python": platform.python_version()},
            "status": status}
    if spec is not None:
        meta = spec.metadata()
        meta["params"] = {k: v for k, v in meta["params"].items() if k != "terms"}
        data["problem"] = meta
    _write_json(out / "manifest.json", data)


def _duality(sol: Solution, spec: ProblemSpec, tol: float) -> dict:
    f, e = spec.f, spec.exponents
    res = divergence_residual(sol.sigma0, f)
    sig = project_feasible(sol.sigma0, f)
    dual = -dual_energy(sol.u, f, e)
    gap = duality_gap(sol.u, sig, f, e, tol=max(tol, 1e-10))
    ok = GAP_FLOOR <= gap <= GAP_REL * abs(dual) + 1e-14
    return {"primal_value": primal_value(sig, e), "dual_value": dual, "gap": gap,
            "divergence_residual": res, "projected_residual": divergence_residual(sig, f),
            "gap_ok": bool(ok), "residual_ok": bool(res <= tol)}


def _solve(cfg: RunConfig, spec: ProblemSpec, out: Path):
    scfg = SolverConfig(max_iter=cfg.max_iter, tol=cfg.tol, method=cfg.method, seed=cfg.seed)
    try:
        sol = solve_dual(spec, scfg)
    except ConvergenceError as ex:
        sol = ex.solution
    _atomic(out / "fields.bin", lambda p: write_fields(p, sol.u, sol.sigma0))
    _atomic(out / "diagnostics.csv", lambda p: write_diagnostics(sol, p))
    return sol


def _load_solution(cfg: RunConfig, spec: ProblemSpec) -> Solution:
    src = Path(cfg.source)
    manifest = json.loads((src / "manifest.json").read_text())
    prev = manifest["config"]
    keys = ("q", "grid", "dim", "boundary", "problem", "a", "modes", "J", "amplitude",
            "null_kind", "seed")
    clash = [k for k in keys if prev.get(k) != getattr(cfg, k)]
    if clash:
        raise ConfigError(f"--from run differs in {', '.join(clash)}")
    u = read_fields(src / "fields.bin")[0]
    if u.domain != spec.domain:
        raise ConfigError("--from fields live on a different grid")
    r = energy_gradient(u, spec.f, spec.exponents).values
    res = float(np.sqrt(spec.domain.inner(r, r)))
    E = dual_energy(u, spec.f, spec.exponents)
    return Solution(ScalarField(u.values, spec.domain), recover_flux(u, spec.exponents), [E], res, 0,
                    [res], [0.0], res <= cfg.tol, 0.0, "loaded")


# ---------------------------------------------------------------- commands

def cmd_lemmas(cfg: RunConfig, out: Path) -> int:
    rows = default_sweeps(cfg.samples, cfg.seed)
    _atomic(out / "lemmas.csv", lambda p: write_sweep_csv(rows, p))
    failed = [r for r in rows if r.failed]
    for r in rows:
        log.info("%-10s %-40s min_gap=%s", r.lemma, r.params, r.min_gap)
    _manifest(cfg, out, {"rows": len(rows), "failed": len(failed),
                         "exit": EXIT_MATH if failed else EXIT_OK})
    return EXIT_MATH if failed else EXIT_OK


def cmd_solve(cfg: RunConfig, out: Path) -> int:
    spec = build_problem(cfg)
    _manifest(cfg, out, {"stage": "started"}, spec)
    sol = _solve(cfg, spec, out)
    dual = _duality(sol, spec, cfg.tol)
    dual.update({"converged": sol.converged, "iterations": sol.iterations,
                 "residual": sol.residual, "method": sol.method, "seconds": sol.seconds})
    _write_json(out / "duality.json", dual)
    code = EXIT_NOCONV if not sol.converged else (EXIT_OK if dual["gap_ok"] else EXIT_MATH)
    _manifest(cfg, out, {"stage": "done", "exit": code}, spec)
    log.info("%s after %d iterations, residual %.3e, gap %.3e", sol.method, sol.iterations,
             sol.residual, dual["gap"])
    return code


def cmd_verify(cfg: RunConfig, out: Path) -> int:
    spec = build_problem(cfg)
    try:
        branch = resolve_branch(cfg, spec)
        w = make_window(cfg, spec.domain)
    except ValueError as ex:
        raise ConfigError(str(ex)) from None
    steps = cfg.hladder if cfg.hladder is not None else ladder(spec.domain, w)
    if not steps or max(steps) * spec.domain.spacing > w.margin * (1 + 1e-12):
        raise ConfigError(f"step ladder {steps} does not fit the margin {w.margin}")
    _manifest(cfg, out, {"stage": "started", "branch": branch, "steps": steps}, spec)
    if cfg.source is not None:
        sol = _load_solution(cfg, spec)
    else:
        sol = _solve(cfg, spec, out)
    dual = _duality(sol, spec, cfg.tol)
    dual.update({"converged": sol.converged, "iterations": sol.iterations, "residual": sol.residual})
    _write_json(out / "duality.json", dual)
    if not sol.converged:
        _manifest(cfg, out, {"stage": "done", "exit": EXIT_NOCONV}, spec)
        return EXIT_NOCONV
    rep = verify_estimate(sol, spec, w, branch, steps, slack=cfg.slack)
    curves = [("M", rep.curves)]
    flux = None
    if cfg.q < 2.0:
        flux = sigma_estimate_check(sol, w, spec.exponents, h_set=steps, slack=cfg.slack)
        curves.append(("sigma_p", flux.curves))

    def write(p):
        write_curves_csv(p, curves[0][1], curves[0][0])
        if len(curves) > 1:
            with open(p, "a", newline="") as fh:
                for c in curves[1][1]:
                    for h, m in c.steps:
                        fh.write(f"{curves[1][0]},{c.direction},{h!r},{m!r}\n")

    _atomic(out / "besov_curves.csv", write)
    passed = rep.passed and (flux is None or flux.passed) and dual["gap_ok"]
    _write_json(out / "verdict.json", {"branch": branch, "passed": passed,
                                       "estimate": rep.to_json(),
                                       "flux": None if flux is None else flux.to_json(),
                                       "duality_ok": dual["gap_ok"]})
    code = EXIT_OK if passed else EXIT_MATH
    _manifest(cfg, out, {"stage": "done", "branch": branch, "steps": steps, "exit": code}, spec)
    for i, f in enumerate(rep.fits):
        log.info("direction %d: exponent %.3f slope %.3f (threshold %.3f on %s), C = %.3g",
                 i, f.exponent, f.slope, rep.threshold, rep.measure, rep.constants[i])
    return code


COMMANDS = {"lemmas": cmd_lemmas, "solve": cmd_solve, "verify": cmd_verify}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    logging.basicConfig(level=logging.INFO if "--verbose" in argv else logging.WARNING,
                        format="%(message)s")
    try:
        cfg = parse_config(argv)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[cfg.command](cfg, out)
    except SystemExit as ex:
        return int(ex.code or 0)
    except ConfigError as ex:
        print(f"beckmann: configuration error: {ex}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as ex:
        print(f"beckmann: I/O error: {ex}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
