"""
Randomized inequality sweeps
============================

The regularity argument rests on a handful of vector inequalities for the
maps ``H_a(xi) = (|xi| - 1)_+^a xi/|xi|`` and ``V_gamma``.  Here we sample
random pairs, report the worst gap of each inequality family and show the
one pair where the degenerate bound is attained exactly.
"""
import numpy as np

from beckmann.lemmas import brasco_gaps, brasco_tight_row, default_sweeps
from beckmann.maps import Exponents

# %%
# A reduced battery (200k pairs per setting) runs in a few seconds; the
# command ``beckmann lemmas`` runs the full one at 10^6 pairs.
rows = default_sweeps(samples=200_000, seed=0)
print(f"{'family':<10} {'parameters':<42} {'min gap':>12} {'constant range':>24}")
for r in rows:
    params = ", ".join(f"{k}={v}" for k, v in r.params.items())
    gap = "" if r.min_gap is None else f"{r.min_gap:.2e}"
    rng = ("" if r.constant_low is None
           else f"[{r.constant_low:.4f}, {r.constant_high:.4f}]")
    print(f"{r.lemma:<10} {params:<42} {gap:>12} {rng:>24}")

# %%
# No gap is negative beyond rounding.  The degenerate inequality at q = 2 is
# sharp: for xi = (2, 0), eta = (1, 0) both sides agree to the last bit.
print("tight pair gap:", brasco_tight_row().min_gap)
first, second = brasco_gaps(np.array([2.0, 0.0]), np.array([1.1, 0.0]), Exponents(2.0))
print("a nearby pair is strictly inside:", first, second)
