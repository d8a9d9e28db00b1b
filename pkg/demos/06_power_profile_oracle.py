"""
Calibrating the exponent fit on a power profile
===============================================

``|x - c|^theta`` has L2 translation increments of size
``h^(theta + 1/2)`` for ``theta < 1/2``.  Past that, first differences
cannot see more than one derivative and the fitted exponent saturates
near 1.
"""
import numpy as np

from beckmann import GridDomain
from beckmann.besov import SeminormCurve, Window, fit_exponent, second_moment

N = 2 ** 16
dom = GridDomain((N, 16), 1.0 / N)  # a thin periodic strip: 2^16 samples along x1
x = dom.centers()[0]
slab = np.abs(x - 0.5) <= 0.125
w = Window((0.5, 8.0 / N), 0.25, 0.1)
for theta in (0.1, 0.25, 0.4, 0.5, 0.75, 1.5):
    v = np.abs(x - 0.5) ** theta
    curve = SeminormCurve(0, [(m / N, second_moment(v, 0, m, w, dom, slab))
                              for m in (4, 8, 16, 32, 64, 128, 256)])
    fit = fit_exponent(curve)
    print(f"theta {theta:<4}: fitted {fit.exponent:.4f}, theta + 1/2 = {theta + 0.5:.2f}")
