"""
The discrete weak form
======================

Potentials live at cell centres and fluxes on cell faces.  The face
gradient and the cell divergence are exact negative adjoints, so the
discrete weak formulation and weak duality hold as identities rather than
approximations.  This script checks the identity, the energy gradient and
the degenerate null space.
"""
import numpy as np

from beckmann import (Exponents, FluxField, GridDomain, ScalarField, discrete_divergence,
                      discrete_gradient, dual_energy, energy_gradient, make_lipschitz_null)

rng = np.random.default_rng(0)

# %%
# Summation by parts on random data, in both boundary modes.
for boundary in ("periodic", "neumann"):
    dom = GridDomain.unit(128, boundary=boundary)
    u = ScalarField(rng.standard_normal(dom.dims), dom)
    comps = [rng.standard_normal(dom.dims) for _ in range(2)]
    if boundary == "neumann":
        for axis, c in enumerate(comps):
            np.moveaxis(c, axis, 0)[-1] = 0.0  # no flux through the walls
    w = FluxField(tuple(comps), dom)
    lhs = dom.cell_volume * sum(np.sum(a * b) for a, b in zip(discrete_gradient(u).components, comps))
    rhs = -dom.inner(u.values, discrete_divergence(w).values)
    print(f"{boundary:>9}: <grad u, w> = {lhs:+.15f}, -<u, div w> = {rhs:+.15f}")

# %%
# The energy gradient against a forward difference quotient, whose error
# shrinks linearly in the step.
dom = GridDomain.unit(64)
x, y = dom.centers()
u = ScalarField(0.5 * np.cos(2 * np.pi * x) * np.sin(2 * np.pi * y + 0.4), dom)
f = rng.standard_normal(dom.dims)
f = ScalarField(f - f.mean(), dom)
phi = np.cos(2 * np.pi * (x - y) + 1.0)
phi -= phi.mean()
e = Exponents(1.5)
exact = dom.inner(energy_gradient(u, f, e).values, phi)
for t in (1e-3, 1e-4, 1e-5, 1e-6):
    fd = (dual_energy(ScalarField(u.values + t * phi, dom), f, e) - dual_energy(u, f, e)) / t
    print(f"t = {t:.0e}: relative error {abs(fd - exact) / abs(exact):.2e}")

# %%
# With f = 0 every potential whose reconstructed gradients stay in the
# unit ball is a minimiser: energy and gradient vanish identically.
for kind in ("cone", "plane", "random_clipped"):
    spec = make_lipschitz_null(GridDomain.unit(64, boundary="neumann"), kind, q=1.5)
    g = energy_gradient(spec.exact.u, spec.f, spec.exponents).values
    print(f"{kind:>15}: energy {dual_energy(spec.exact.u, spec.f, spec.exponents)}, "
          f"max |gradient| {np.abs(g).max()}")
