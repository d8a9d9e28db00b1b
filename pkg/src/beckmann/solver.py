"""Discrete dual problem: energy, weak-form gradient, minimisation, flux
recovery and the primal/dual audit.

The discrete dual energy of a cell field ``u`` is

    E(u) = |cell| * ( mean_k sum_cells H*(g_k(u)) - sum_cells u f ),

where ``g_k`` are the ``2**n`` one-sided stencil reconstructions of ``grad u``
(see :mod:`beckmann.grid`).  Its L2 gradient is ``-div(sigma) - f`` with the
face flux ``sigma`` obtained by averaging ``grad H*(g_k)`` back onto faces,
so the discrete Euler-Lagrange equation is exactly the discrete divergence
constraint of the primal problem.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.fft

from .grid import (FluxField, GridDomain, ScalarField, div_cells, grad_faces,
                   stencil_average_adjoint, stencil_vectors)
from .maps import Exponents, conjugate_h_star, cost_h, grad_h_star

log = logging.getLogger(__name__)

METHODS = ("auto", "admm", "accelerated", "bb")


class ConvergenceError(RuntimeError):
    """Raised when the solver exhausts its iteration budget.

    The partial :class:`Solution` (with its full trace) is attached as
    ``solution``.
    """

    def __init__(self, message, solution):
        super().__init__(message)
        self.solution = solution


@dataclass
class SolverConfig:
    """``method`` is one of ``auto`` (default), ``admm``, ``accelerated`` or
    ``bb``.  ``auto`` picks ``accelerated`` at ``q = 2``, where the
    gradient is Lipschitz with a constant independent of the iterate, and
    ``admm`` otherwise: for ``q < 2`` the gradient is only Hoelder and for
    ``q > 2`` its Lipschitz constant grows with the iterate, and gradient
    steps stall in both cases.  ``penalty`` is the
    augmented-Lagrangian weight used by ``admm``; ``None`` means 1.0 for
    ``q < 2`` and 0.3 otherwise, the fastest values in our sweeps."""

    max_iter: int = 20000
    tol: float = 1e-6
    method: str = "auto"
    penalty: Optional[float] = None
    seed: Optional[int] = None
    init_noise: float = 0.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.tol < 0 or self.max_iter < 0:
            raise ValueError("tol and max_iter must be nonnegative")


@dataclass
class Solution:
    u: ScalarField
    sigma0: FluxField
    energy_trace: list
    residual: float
    iterations: int
    residual_trace: list = field(default_factory=list)
    step_trace: list = field(default_factory=list)
    converged: bool = True
    seconds: float = 0.0
    method: str = ""

    @property
    def energy(self) -> float:
        return self.energy_trace[-1]


# ---------------------------------------------------------------- checks

def _check_f(f: ScalarField) -> None:
    scale = max(1.0, float(np.abs(f.values).max()))
    if abs(f.mean()) > 1e-12 * scale:
        raise ValueError(f"source must have zero mean, got mean {f.mean():.3e}")


def _same_domain(*fields) -> GridDomain:
    dom = fields[0].domain
    for fld in fields[1:]:
        if fld.domain != dom:
            raise ValueError("fields live on different grids")
    return dom


# ---------------------------------------------------------------- kernels

def _cell_grads(u: np.ndarray, dom: GridDomain) -> np.ndarray:
    return stencil_vectors(grad_faces(u, dom.spacing, dom.periodic), dom.periodic)


def _energy_raw(u, f, dom, e, g=None):
    if g is None:
        g = _cell_grads(u, dom)
    k = g.shape[0]
    return dom.cell_volume * (conjugate_h_star(g, e).sum() / k - np.sum(u * f))


def _flux_raw(g, dom, e):
    cells = grad_h_star(g, e)
    return cells, stencil_average_adjoint(cells, dom.periodic)


def _gradient_raw(u, f, dom, e, g=None):
    if g is None:
        g = _cell_grads(u, dom)
    cells, faces = _flux_raw(g, dom, e)
    r = -div_cells(faces, dom.spacing, dom.periodic) - f
    return r - r.mean(), cells, faces


# ---------------------------------------------------------------- public ops

def dual_energy(u: ScalarField, f: ScalarField, e: Exponents) -> float:
    """Negated discrete dual objective (the quantity the solver minimises)."""
    dom = _same_domain(u, f)
    _check_f(f)
    return float(_energy_raw(u.values, f.values, dom, e))


def energy_gradient(u: ScalarField, f: ScalarField, e: Exponents) -> ScalarField:
    """L2 gradient ``-div(sigma(u)) - f``, projected to zero mean."""
    dom = _same_domain(u, f)
    _check_f(f)
    r, _, _ = _gradient_raw(u.values, f.values, dom, e)
    return ScalarField(r, dom)


def recover_flux(u: ScalarField, e: Exponents) -> FluxField:
    """Optimal flux ``grad H*(grad u)`` on every stencil, averaged onto faces."""
    dom = u.domain
    cells, faces = _flux_raw(_cell_grads(u.values, dom), dom, e)
    return FluxField(tuple(faces), dom, cells=cells)


def divergence_residual(sigma: FluxField, f: ScalarField) -> float:
    """L2 norm of ``-div(sigma) - f``."""
    dom = _same_domain(sigma, f)
    r = -div_cells(sigma.components, dom.spacing, dom.periodic) - f.values
    return float(np.sqrt(dom.inner(r, r)))


def primal_value(sigma: FluxField, e: Exponents) -> float:
    """Discrete primal cost of a flux.

    Uses the cell-wise stencil fluxes when the field carries them, otherwise
    the stencil lift of the face values; either choice averages back to the
    face field, which is what makes weak duality exact.
    """
    dom = sigma.domain
    cells = sigma.cells
    if cells is None:
        cells = stencil_vectors(sigma.components, dom.periodic)
    return float(dom.cell_volume * cost_h(cells, e).sum() / cells.shape[0])


def duality_gap(u: ScalarField, sigma: FluxField, f: ScalarField, e: Exponents,
                tol: float = 1e-6) -> float:
    """Primal value of ``sigma`` minus dual value of ``u``.

    ``sigma`` must satisfy the divergence constraint to within ``10 * tol``.
    """
    _same_domain(u, sigma, f)
    res = divergence_residual(sigma, f)
    if res > 10.0 * tol:
        raise ValueError(f"flux violates the divergence constraint (residual {res:.3e})")
    return primal_value(sigma, e) + dual_energy(u, f, e)


def dual_value(u: ScalarField, f: ScalarField, e: Exponents) -> float:
    return -dual_energy(u, f, e)


# ---------------------------------------------------------------- Poisson

def _laplace_eigs(dom: GridDomain) -> np.ndarray:
    h = dom.spacing
    lam = 0.0
    for d, m in enumerate(dom.dims):
        k = np.arange(m)
        if dom.periodic:
            ev = (2.0 - 2.0 * np.cos(2.0 * np.pi * k / m)) / h ** 2
        else:
            ev = (2.0 - 2.0 * np.cos(np.pi * k / m)) / h ** 2
        shape = [1] * dom.ndim
        shape[d] = m
        lam = lam + ev.reshape(shape)
    return np.asarray(lam)


def solve_poisson(rhs: np.ndarray, dom: GridDomain, eigs: Optional[np.ndarray] = None) -> np.ndarray:
    """Zero-mean solution of ``-div(grad phi) = rhs`` for a zero-mean ``rhs``."""
    if eigs is None:
        eigs = _laplace_eigs(dom)
    safe = eigs.copy()
    safe.flat[0] = 1.0
    if dom.periodic:
        hat = scipy.fft.fftn(rhs) / safe
        hat.flat[0] = 0.0
        return np.real(scipy.fft.ifftn(hat))
    hat = scipy.fft.dctn(rhs, type=2, norm="ortho") / safe
    hat.flat[0] = 0.0
    return scipy.fft.idctn(hat, type=2, norm="ortho")


def project_feasible(sigma: FluxField, f: ScalarField) -> FluxField:
    """Smallest gradient correction making ``-div(sigma) = f`` hold exactly.

    The correction is added to every stencil flux too, so the result stays a
    consistent primal candidate.
    """
    dom = _same_domain(sigma, f)
    r = -div_cells(sigma.components, dom.spacing, dom.periodic) - f.values
    phi = solve_poisson(r.mean() - r, dom)
    corr = grad_faces(phi, dom.spacing, dom.periodic)
    faces = tuple(c + d for c, d in zip(sigma.components, corr))
    cells = None
    if sigma.cells is not None:
        cells = sigma.cells + stencil_vectors(corr, dom.periodic)
    return FluxField(faces, dom, cells=cells)


# ---------------------------------------------------------------- prox

def prox_h_star(v: np.ndarray, e: Exponents, r: float) -> np.ndarray:
    """``argmin_w H*(w) + r/2 |w - v|^2``, applied along the last axis.

    The minimiser is radial; its excess ``t = |w| - 1`` solves
    ``t^(q-1) = r (|v| - 1 - t)``.
    """
    nrm = np.sqrt(np.sum(v * v, axis=-1))
    c = np.maximum(nrm - 1.0, 0.0)
    q = e.q
    if q == 2.0:
        t = r * c / (1.0 + r)
    elif q == 1.5:
        # sqrt(t) solves r s^2 + s - r c = 0
        s = 2.0 * r * c / (1.0 + np.sqrt(1.0 + 4.0 * r * r * c))
        t = s * s
    elif q < 2.0:
        # Newton on w = t^(q-1): w + r w^m - r c, convex and increasing
        m = 1.0 / (q - 1.0)
        w = np.minimum(c ** (q - 1.0), r * c)
        for _ in range(100):
            wm1 = w ** (m - 1.0)
            step = (w + r * w * wm1 - r * c) / (1.0 + r * m * wm1)
            w = np.maximum(w - step, 0.0)
            if np.all(np.abs(step) <= 1e-15 * (1.0 + w)):
                break
        t = w ** m
    else:
        # Newton on t^(q-1) + r t - r c, convex and increasing, from the right
        t = np.minimum(c, (r * c) ** (1.0 / (q - 1.0)))
        for _ in range(100):
            tq = t ** (q - 2.0)
            step = (t * tq + r * t - r * c) / ((q - 1.0) * tq + r)
            t = np.maximum(t - step, 0.0)
            if np.all(np.abs(step) <= 1e-15 * (1.0 + t)):
                break
    out = nrm > 1.0
    scale = np.ones_like(nrm)
    scale[out] = (1.0 + t[out]) / nrm[out]
    return v * scale[..., None]


# ---------------------------------------------------------------- solver

class _Trace:
    def __init__(self):
        self.energy, self.residual, self.step = [], [], []

    def add(self, energy, residual, step):
        self.energy.append(float(energy))
        self.residual.append(float(residual))
        self.step.append(float(step))


def solve_dual(problem, cfg: Optional[SolverConfig] = None) -> Solution:
    """Minimise the discrete dual energy for ``problem`` (a ProblemSpec).

    Stops when the L2 norm of :func:`energy_gradient` is at most ``cfg.tol``.
    Raises :class:`ConvergenceError` after ``cfg.max_iter`` iterations.
    """
    cfg = cfg or SolverConfig()
    f, e = problem.f, problem.exponents
    _check_f(f)
    dom = f.domain
    u0 = np.zeros(dom.dims)
    if cfg.init_noise > 0:
        rng = np.random.default_rng(cfg.seed)
        u0 = cfg.init_noise * rng.standard_normal(dom.dims)
        u0 -= u0.mean()
    start = time.perf_counter()
    method = cfg.method
    if method == "auto":
        method = "accelerated" if e.q == 2.0 else "admm"
    run = {"admm": _run_admm, "accelerated": _run_accelerated, "bb": _run_bb}[method]
    u, trace, iters, converged = run(u0, f.values, dom, e, cfg)
    uf = ScalarField(u, dom)
    sol = Solution(uf, recover_flux(uf, e), trace.energy, trace.residual[-1], iters,
                   trace.residual, trace.step, converged, time.perf_counter() - start)
    sol.method = method
    log.info("%s: %d iterations, residual %.3e, %.1fs", method, iters, sol.residual, sol.seconds)
    if not converged:
        raise ConvergenceError(
            f"no convergence after {iters} iterations (residual {sol.residual:.3e} > {cfg.tol:.1e})", sol)
    return sol


def _state(u, f, dom, e):
    g = _cell_grads(u, dom)
    E = _energy_raw(u, f, dom, e, g)
    r, _, _ = _gradient_raw(u, f, dom, e, g)
    return E, r, float(np.sqrt(dom.inner(r, r)))


def _run_admm(u, f, dom, e, cfg):
    """Augmented-Lagrangian splitting with ``w_k = g_k(u)`` as the split
    variable.  Because the stencils average back to the identity, the
    ``u``-update is an exact 5-point Poisson solve.  The reported iterate is
    the lowest-energy ``u`` seen so far, so the energy trace is monotone."""
    r = cfg.penalty if cfg.penalty is not None else (1.0 if e.q < 2.0 else 0.3)
    eigs = _laplace_eigs(dom)
    g = _cell_grads(u, dom)
    w = g.copy()
    lam = grad_h_star(g, e)
    trace = _Trace()
    best_u, best_E, best_res = u, *_state(u, f, dom, e)[::2]
    trace.add(best_E, best_res, 0.0)
    it = 0
    while best_res > cfg.tol and it < cfg.max_iter:
        it += 1
        rhs = f + div_cells(stencil_average_adjoint(lam - r * w, dom.periodic), dom.spacing, dom.periodic)
        u = solve_poisson(rhs - rhs.mean(), dom, eigs) / r
        g = _cell_grads(u, dom)
        w = prox_h_star(g + lam / r, e, r)
        lam = lam + r * (g - w)
        E, _, res = _state(u, f, dom, e)
        if E <= best_E:
            best_u, best_E, best_res = u, E, res
        trace.add(best_E, best_res, r)
    return best_u, trace, it, best_res <= cfg.tol


def _run_accelerated(u, f, dom, e, cfg):
    """Accelerated gradient with adaptive step and gradient restart.

    The step test compares gradient differences rather than energy
    decreases, which stay resolvable in floating point long after the
    energy decrease per step has dropped below roundoff.  The reported
    iterate is the lowest-energy one seen, so the trace is monotone."""
    vol = dom.cell_volume
    L = 4.0 * dom.ndim / dom.spacing ** 2
    E, gr, res = _state(u, f, dom, e)
    trace = _Trace()
    trace.add(E, res, 0.0)
    best_u, best_E, best_res = u, E, res
    y, gy = u, gr
    tk, it = 1.0, 0
    while best_res > cfg.tol and it < cfg.max_iter:
        while True:
            un = y - gy / L
            gn, _, _ = _gradient_raw(un, f, dom, e, _cell_grads(un, dom))
            d = un - y
            if np.sum((gn - gy) ** 2) <= L * L * np.sum(d * d) * (1.0 + 1e-10):
                break
            L *= 2.0
        it += 1
        En = _energy_raw(un, f, dom, e)
        resn = float(np.sqrt(dom.inner(gn, gn)))
        if vol * np.sum(gy * (un - u)) > 0.0:
            tk, tn = 1.0, 1.0
        else:
            tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
        y = un + (tk - 1.0) / tn * (un - u)
        u, tk = un, tn
        gy, _, _ = _gradient_raw(y, f, dom, e, _cell_grads(y, dom))
        if En <= best_E:
            best_u, best_E, best_res = un, En, resn
        trace.add(best_E, best_res, 1.0 / L)
        L *= 0.9
    return best_u, trace, it, best_res <= cfg.tol


def _run_bb(u, f, dom, e, cfg):
    """Gradient descent with Barzilai-Borwein steps and Armijo backtracking."""
    vol = dom.cell_volume
    t = dom.spacing ** 2 / (4.0 * dom.ndim)
    E, gr, res = _state(u, f, dom, e)
    trace = _Trace()
    trace.add(E, res, 0.0)
    it = 0
    while res > cfg.tol and it < cfg.max_iter:
        gg = vol * np.sum(gr * gr)
        while True:
            un = u - t * gr
            En, gn, resn = _state(un, f, dom, e)
            if En <= E - 1e-4 * t * gg:
                break
            t *= 0.5
            if t < 1e-300:
                break
        it += 1
        trace.add(En, resn, t)
        s, y = un - u, gn - gr
        sy = vol * np.sum(s * y)
        t = vol * np.sum(s * s) / sy if sy > 0 else 2.0 * t
        u, E, gr, res = un, En, gn, resn
    return u, trace, it, res <= cfg.tol


def write_diagnostics(sol: Solution, path) -> None:
    """Per-iteration CSV: iteration, energy, residual, step."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "energy", "residual", "step"])
        for i, (E, r, s) in enumerate(zip(sol.energy_trace, sol.residual_trace, sol.step_trace)):
            w.writerow([i, repr(E), repr(r), repr(s)])
