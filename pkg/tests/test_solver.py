import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from beckmann.grid import (FluxField, GridDomain, ScalarField, cell_gradients,
                           discrete_divergence, discrete_gradient)
from beckmann.maps import Exponents, h_map
from beckmann.problems import ProblemSpec, make_lipschitz_null, make_radial, make_smooth_source
from beckmann.solver import (ConvergenceError, SolverConfig, divergence_residual, dual_energy,
                             duality_gap, energy_gradient, primal_value, project_feasible,
                             prox_h_star, recover_flux, solve_dual, solve_poisson,
                             write_diagnostics)

BOUNDARIES = ["periodic", "neumann"]


def rand_field(dom, seed, scale=1.0):
    v = np.random.default_rng(seed).standard_normal(dom.dims) * scale
    return ScalarField(v - v.mean(), dom)


def smooth_u(dom, amp):
    x, y = dom.centers()[:2]
    L = dom.extent
    return ScalarField(amp * np.cos(2 * np.pi * x / L[0]) * np.sin(2 * np.pi * y / L[1] + 0.4)
                       + 0.3 * amp * np.sin(4 * np.pi * (x / L[0] + y / L[1])), dom)


def smooth_direction(dom, seed, kmax=3):
    """Random low-frequency field (wave numbers up to ``kmax``)."""
    rng = np.random.default_rng(seed)
    xs = dom.centers()
    v = np.zeros(dom.dims)
    for _ in range(5):
        k = rng.integers(-kmax, kmax + 1, size=dom.ndim)
        arg = sum(2 * np.pi * kk * x / L for kk, x, L in zip(k, xs, dom.extent))
        v += rng.standard_normal() * np.cos(arg + rng.uniform(0, 2 * np.pi))
    return ScalarField(v - v.mean(), dom)


def zero(dom):
    return ScalarField(np.zeros(dom.dims), dom)


def test_energy_trivial_cases():
    dom = GridDomain.unit(16)
    e = Exponents(1.5)
    assert dual_energy(zero(dom), zero(dom), e) == 0.0
    null = make_lipschitz_null(dom, "cone")
    assert dual_energy(null.exact.u, null.f, e) == 0.0


def test_energy_of_steep_ramp():
    """u = 2 x1 in a walled box, q = 2: H* = 1/2 except on stencils that
    touch a wall face, which see a zero slope."""
    N = 64
    dom = GridDomain.unit(N, boundary="neumann")
    u = ScalarField(2.0 * dom.centers()[0], dom)
    E = dual_energy(u, zero(dom), Exponents(2.0))
    expect = 0.5 * dom.volume * (1.0 - 1.0 / N)
    assert E == pytest.approx(expect, rel=1e-12)


def test_energy_rejects_nonzero_mean_source():
    dom = GridDomain.unit(16)
    f = ScalarField(np.ones(dom.dims), dom)
    with pytest.raises(ValueError):
        dual_energy(zero(dom), f, Exponents(2.0))
    with pytest.raises(ValueError):
        energy_gradient(zero(dom), f, Exponents(2.0))


@pytest.mark.parametrize("kind", ["cone", "plane", "random_clipped"])
@pytest.mark.parametrize("b", BOUNDARIES)
def test_gradient_vanishes_on_lipschitz_fields(kind, b):
    dom = GridDomain.unit(32, boundary=b)
    p = make_lipschitz_null(dom, kind, seed=4)
    for q in (1.5, 2.0, 3.0):
        g = energy_gradient(p.exact.u, p.f, Exponents(q))
        assert np.abs(g.values).max() <= 1e-14


@pytest.mark.parametrize("b", BOUNDARIES)
@pytest.mark.parametrize("q", [1.5, 2.0, 3.0])
def test_gradient_matches_directional_derivative(b, q):
    dom = GridDomain.unit(32, boundary=b)
    e = Exponents(q)
    u = smooth_u(dom, 0.5)
    f = rand_field(dom, 3)
    phi = smooth_direction(dom, 4, kmax=1)
    t = 1e-6
    fd = (dual_energy(ScalarField(u.values + t * phi.values, dom), f, e) - dual_energy(u, f, e)) / t
    an = dom.inner(energy_gradient(u, f, e).values, phi.values)
    assert abs(fd - an) <= 1e-4 * abs(an)


@pytest.mark.parametrize("q", [1.5, 2.0, 3.0])
def test_central_quotient_matches_gradient(q):
    """The symmetric quotient cancels the curvature term, so even a
    higher-frequency direction agrees far below the forward tolerance."""
    dom = GridDomain.unit(32, boundary="neumann")
    e = Exponents(q)
    u, f = smooth_u(dom, 0.5), rand_field(dom, 3)
    phi = smooth_direction(dom, 4)
    t = 1e-6
    plus = dual_energy(ScalarField(u.values + t * phi.values, dom), f, e)
    minus = dual_energy(ScalarField(u.values - t * phi.values, dom), f, e)
    an = dom.inner(energy_gradient(u, f, e).values, phi.values)
    assert abs((plus - minus) / (2 * t) - an) <= 1e-6 * abs(an)


@pytest.mark.parametrize("q", [1.5, 3.0])
def test_rough_direction_error_is_first_order(q):
    """White-noise directions carry |grad phi| ~ 1/h, which inflates the
    O(t) remainder but must not change its order."""
    dom = GridDomain.unit(32)
    e = Exponents(q)
    u, f, phi = smooth_u(dom, 0.5), rand_field(dom, 3), rand_field(dom, 4)
    an = dom.inner(energy_gradient(u, f, e).values, phi.values)
    errs = []
    for t in (1e-5, 1e-6, 1e-7):
        fd = (dual_energy(ScalarField(u.values + t * phi.values, dom), f, e) - dual_energy(u, f, e)) / t
        errs.append(abs(fd - an))
    assert 7 < errs[0] / errs[1] < 13 and 7 < errs[1] / errs[2] < 13


@given(st.integers(0, 10_000), st.sampled_from([1.3, 2.0, 3.5]))
@settings(max_examples=30, deadline=None)
def test_energy_is_convex(seed, q):
    dom = GridDomain.unit(16)
    e = Exponents(q)
    f = rand_field(dom, seed + 1)
    u, v = rand_field(dom, seed, 0.2), rand_field(dom, seed + 2, 0.2)
    mid = ScalarField(0.5 * (u.values + v.values), dom)
    assert dual_energy(mid, f, e) <= 0.5 * (dual_energy(u, f, e) + dual_energy(v, f, e)) + 1e-12


def test_recover_flux_cases():
    dom = GridDomain.unit(32, boundary="neumann")
    slow = ScalarField(0.4 * dom.centers()[0], dom)
    sig = recover_flux(slow, Exponents(1.5))
    assert all(np.all(c == 0) for c in sig.components)
    ramp = ScalarField(2.0 * dom.centers()[0], dom)
    sig = recover_flux(ramp, Exponents(2.0))
    assert np.allclose(sig.components[0][1:-1], 1.0, atol=1e-12)
    assert np.all(sig.components[1] == 0)
    assert sig.boundary_normal_max() == 0.0


@pytest.mark.parametrize("q", [1.3, 1.5, 2.0, 3.0])
def test_flux_magnitude_identity(q):
    dom = GridDomain.unit(32)
    e = Exponents(q)
    u = smooth_u(dom, 0.6)
    sig = recover_flux(u, e)
    half = h_map(cell_gradients(u), q / 2.0)
    lhs = np.linalg.norm(sig.cells, axis=-1)
    rhs = np.linalg.norm(half, axis=-1) ** (2.0 / e.p)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-14)


def test_divergence_residual_cases():
    dom = GridDomain.unit(16)
    assert divergence_residual(FluxField.zeros(dom), zero(dom)) == 0.0
    rng = np.random.default_rng(0)
    sig = FluxField(tuple(rng.standard_normal(dom.dims) for _ in range(2)), dom)
    f = ScalarField(-discrete_divergence(sig).values, dom)
    assert divergence_residual(sig, f) <= 1e-13


@pytest.mark.parametrize("b", BOUNDARIES)
def test_poisson_solver(b):
    dom = GridDomain((32, 40), 1 / 32, b)
    rhs = rand_field(dom, 1).values
    phi = solve_poisson(rhs, dom)
    back = -discrete_divergence(discrete_gradient(ScalarField(phi, dom))).values
    assert np.abs(back - rhs).max() <= 1e-9 * np.abs(rhs).max()
    assert abs(phi.mean()) < 1e-12


@pytest.mark.parametrize("b", BOUNDARIES)
def test_projection_makes_flux_feasible(b):
    dom = GridDomain.unit(32, boundary=b)
    f = rand_field(dom, 2)
    sig = recover_flux(smooth_u(dom, 0.5), Exponents(2.0))
    fixed = project_feasible(sig, f)
    assert divergence_residual(fixed, f) <= 1e-10
    assert fixed.cells is not None


def test_duality_gap_trivial():
    dom = GridDomain.unit(16)
    assert duality_gap(zero(dom), FluxField.zeros(dom), zero(dom), Exponents(2.0)) == 0.0


@given(st.integers(0, 10_000), st.sampled_from(BOUNDARIES), st.sampled_from([1.5, 2.0, 3.0]))
@settings(max_examples=25, deadline=None)
def test_weak_duality_on_random_feasible_pairs(seed, b, q):
    dom = GridDomain.unit(16, boundary=b)
    e = Exponents(q)
    f = rand_field(dom, seed, 3.0)
    u = rand_field(dom, seed + 1, 0.3)
    rng = np.random.default_rng(seed + 2)
    cells = rng.standard_normal((4,) + dom.dims + (2,))
    from beckmann.grid import stencil_average_adjoint
    sig = FluxField(tuple(stencil_average_adjoint(cells, dom.periodic)), dom, cells=cells)
    sig = project_feasible(sig, f)
    assert duality_gap(u, sig, f, e) >= -1e-10
    # the face lift is an equally valid primal candidate
    bare = FluxField(sig.components, dom)
    assert duality_gap(u, bare, f, e) >= -1e-10


def test_duality_gap_rejects_infeasible_flux():
    dom = GridDomain.unit(16)
    f = rand_field(dom, 0)
    with pytest.raises(ValueError):
        duality_gap(zero(dom), FluxField.zeros(dom), f, Exponents(2.0))


def test_primal_value_of_uniform_flux():
    dom = GridDomain.unit(16)
    sig = FluxField((np.full(dom.dims, 2.0), np.zeros(dom.dims)), dom)
    # p = 2: |s|^2/2 + |s| = 4 on the unit box
    assert primal_value(sig, Exponents(2.0)) == pytest.approx(4.0)


@pytest.mark.parametrize("q", [1.2, 1.5, 1.8, 2.0, 2.5, 3.0, 4.0])
def test_prox_matches_scalar_minimisation(q):
    rng = np.random.default_rng(int(q * 10))
    e = Exponents(q)
    for r in (0.1, 1.0, 10.0):
        v = rng.uniform(-20, 20, size=(40, 2))
        w = prox_h_star(v, e, r)
        for vi, wi in zip(v, w):
            n = np.linalg.norm(vi)
            best = minimize_scalar(lambda s: max(s - 1, 0) ** q / q + r / 2 * (s - n) ** 2,
                                   bounds=(0, n), method="bounded", options={"xatol": 1e-12}).x
            assert abs(np.linalg.norm(wi) - best) <= 1e-6 * max(1.0, n)
            assert np.dot(wi, vi) >= 0


def test_solver_zero_source_takes_no_iterations():
    dom = GridDomain.unit(16)
    p = make_lipschitz_null(dom, "plane")
    sol = solve_dual(p)
    assert sol.iterations == 0 and sol.residual == 0.0
    assert np.all(sol.u.values == 0)


@pytest.mark.parametrize("method", ["admm", "accelerated", "bb"])
def test_every_method_converges(method):
    dom = GridDomain.unit(16)
    p = make_smooth_source(dom, 2, seed=1, q=2.0, amplitude=4.0)
    sol = solve_dual(p, SolverConfig(tol=1e-7, method=method, max_iter=50_000))
    assert sol.residual <= 1e-7
    assert sol.method == method
    tr = np.array(sol.energy_trace)
    assert np.all(np.diff(tr) <= 1e-12)
    assert abs(sol.u.mean()) < 1e-12


@pytest.mark.parametrize("q", [1.5, 3.0])
def test_auto_solves_both_branches_and_closes_the_gap(q):
    dom = GridDomain.unit(32, boundary="neumann")
    p = make_smooth_source(dom, 3, seed=2, q=q)
    sol = solve_dual(p, SolverConfig(tol=1e-7))
    assert sol.method == ("accelerated" if q == 2 else "admm")
    tr = np.array(sol.energy_trace)
    assert np.all(np.diff(tr) <= 1e-12)
    assert divergence_residual(sol.sigma0, p.f) <= 1e-7
    sig = project_feasible(sol.sigma0, p.f)
    dual = -dual_energy(sol.u, p.f, p.exponents)
    gap = duality_gap(sol.u, sig, p.f, p.exponents, tol=1e-7)
    assert -1e-10 <= gap <= 1e-4 * abs(dual)
    assert sol.sigma0.boundary_normal_max() == 0.0
    # perturbing the optimal potential can only widen the gap
    noisy = ScalarField(sol.u.values + 1e-2 * rand_field(dom, 0).values, dom)
    assert duality_gap(noisy, sig, p.f, p.exponents, tol=1e-7) > gap


def test_nonconvergence_carries_trace(tmp_path):
    dom = GridDomain.unit(16)
    p = make_smooth_source(dom, 1, seed=0, q=2.0)
    with pytest.raises(ConvergenceError) as info:
        solve_dual(p, SolverConfig(tol=0.0, max_iter=25))
    sol = info.value.solution
    assert sol.iterations == 25 and len(sol.energy_trace) == 26 and not sol.converged
    write_diagnostics(sol, tmp_path / "d.csv")
    rows = (tmp_path / "d.csv").read_text().splitlines()
    assert rows[0] == "iteration,energy,residual,step" and len(rows) == 27


def test_solver_is_deterministic():
    dom = GridDomain.unit(16)
    p = make_smooth_source(dom, 2, seed=5, q=1.5)
    cfg = SolverConfig(tol=1e-6, seed=7, init_noise=1e-3)
    a, b = solve_dual(p, cfg), solve_dual(p, cfg)
    assert a.energy_trace == b.energy_trace
    assert np.array_equal(a.u.values, b.u.values)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(method="newton")
    with pytest.raises(ValueError):
        SolverConfig(tol=-1.0)


def test_radial_refinement_reduces_flux_error():
    errs = []
    for N in (16, 32, 64):
        dom = GridDomain.unit(N)
        p = make_radial(Exponents(2.0), 4.0, dom)
        sol = solve_dual(p, SolverConfig(tol=1e-7, max_iter=50_000))
        ex = p.exact.sigma
        num = sum(np.sum((a - c) ** 2) for a, c in zip(sol.sigma0.components, ex.components))
        den = sum(np.sum(c ** 2) for c in ex.components)
        errs.append(np.sqrt(num / den))
    assert errs[0] > errs[1] > errs[2]
    assert all(a / b >= 1.6 for a, b in zip(errs, errs[1:]))
