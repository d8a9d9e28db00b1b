"""
Besov data in the degenerate range
==================================

For ``q >= 2`` and data of fractional smoothness ``alpha`` the field
``H_{q/2}(grad u)`` gains ``(alpha + 1)/2`` derivatives in the L2 scale.
The source here is a lacunary cosine series with smoothness exactly
``alpha = 0.5``.
"""
from beckmann import GridDomain, SolverConfig, make_besov_source, solve_dual
from beckmann.besov import Window, verify_estimate

dom = GridDomain.unit(128)
spec = make_besov_source(0.5, 6, dom, seed=0, q=3.0)
sol = solve_dual(spec, SolverConfig(tol=1e-6))
print(f"solved with {sol.method} in {sol.iterations} iterations ({sol.seconds:.1f}s)")

w = Window.centered(dom, 0.25, 0.05)
rep = verify_estimate(sol, spec, w, "besov_q_ge_2", h_set=[2, 3, 4, 5, 6])
for s, fit in enumerate(rep.fits):
    label = "field is constant along this axis" if fit.infinite else f"r2 {fit.r_squared:.5f}"
    print(f"direction {s}: exponent {fit.exponent} (need >= {rep.threshold:.2f}), {label}")
