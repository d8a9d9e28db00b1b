"""Closed-form nonlinear maps of the congested transport problem.

All maps act on arrays whose *last* axis holds the vector components, so a
single vector ``(n,)`` and a whole field ``(..., n)`` go through the same code.
The cost is fixed at ``H(s) = |s|^p / p + |s|`` (unit congestion threshold).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class Exponents:
    """Growth exponent ``q`` of the equation, its conjugate ``p`` and the data
    smoothness ``alpha``.

    ``p`` is always derived from ``q`` so that ``1/p + 1/q = 1`` holds.
    """

    q: float
    alpha: Optional[float] = None

    def __post_init__(self):
        if not np.isfinite(self.q) or self.q <= 1.0:
            raise ValueError(f"q must lie in (1, inf), got {self.q}")
        if self.alpha is not None and not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")

    @property
    def p(self) -> float:
        return self.q / (self.q - 1.0)

    @property
    def singular(self) -> bool:
        """True on the subquadratic branch ``1 < q < 2``."""
        return self.q < 2.0

    @property
    def degenerate(self) -> bool:
        return self.q >= 2.0


def _norm(v: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.square(v), axis=-1))


def cost_h(sigma, e: Exponents) -> np.ndarray:
    """Primal cost ``|sigma|^p / p + |sigma|``."""
    r = _norm(np.asarray(sigma, dtype=float))
    return r ** e.p / e.p + r


def conjugate_h_star(z, e: Exponents) -> np.ndarray:
    """Legendre transform of :func:`cost_h`, ``(|z| - 1)_+^q / q``."""
    r = _norm(np.asarray(z, dtype=float))
    return np.maximum(r - 1.0, 0.0) ** e.q / e.q


def h_map(xi, a: float) -> np.ndarray:
    """``H_a(xi) = (|xi| - 1)_+^a xi / |xi|``, with ``H_a(0) = 0``."""
    if a <= 0:
        raise ValueError(f"exponent must be positive, got {a}")
    xi = np.asarray(xi, dtype=float)
    r = _norm(xi)
    excess = np.maximum(r - 1.0, 0.0)
    # the positive part already vanishes on the closed unit ball, so the
    # division is only carried out where r > 1
    scale = np.zeros_like(r)
    out = r > 1.0
    scale[out] = excess[out] ** a / r[out]
    return scale[..., None] * xi


def grad_h_star(z, e: Exponents) -> np.ndarray:
    """Gradient of :func:`conjugate_h_star`; this is the flux map ``H_{q-1}``."""
    return h_map(z, e.q - 1.0)


def v_gamma(xi, gamma: float, mu: float = 0.0) -> np.ndarray:
    """``V_gamma(xi) = (mu^2 + |xi|^2)^(gamma/2) xi``."""
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if mu < 0:
        raise ValueError(f"mu must be nonnegative, got {mu}")
    xi = np.asarray(xi, dtype=float)
    w = (mu * mu + np.sum(xi * xi, axis=-1)) ** (gamma / 2.0)
    return w[..., None] * xi


def f_potential(zeta, gamma: float, mu: float = 0.0) -> np.ndarray:
    """``F(zeta) = (mu^2 + |zeta|^2)^(gamma+1) / (2 (gamma+1))`` for
    ``gamma`` in ``(-1/2, 0)``.

    Its gradient is ``(mu^2 + |zeta|^2)^gamma zeta``, see
    :func:`f_potential_grad`.
    """
    _check_fusco_gamma(gamma)
    if mu < 0:
        raise ValueError(f"mu must be nonnegative, got {mu}")
    zeta = np.asarray(zeta, dtype=float)
    base = mu * mu + np.sum(zeta * zeta, axis=-1)
    return base ** (gamma + 1.0) / (2.0 * (gamma + 1.0))


def f_potential_grad(zeta, gamma: float, mu: float = 0.0) -> np.ndarray:
    # only defined off the origin when mu == 0, since gamma < 0
    zeta = np.asarray(zeta, dtype=float)
    base = mu * mu + np.sum(zeta * zeta, axis=-1)
    return (base ** gamma)[..., None] * zeta


def _check_fusco_gamma(gamma: float) -> None:
    if not -0.5 < gamma < 0.0:
        raise ValueError(f"gamma must lie in (-1/2, 0), got {gamma}")


def legendre_bruteforce(z, e: Exponents, steps: int = 4096) -> np.ndarray:
    """Brute-force ``sup_s <z, s> - H(s)``.

    The maximiser is parallel to ``z`` because ``H`` is radial, so the sup
    reduces to a search over the radius ``t`` on the grid ``[0, 4|z|]``.
    Independent of :func:`conjugate_h_star`; used as its oracle.
    """
    r = np.atleast_1d(_norm(np.asarray(z, dtype=float)))
    frac = np.linspace(0.0, 4.0, steps + 1)
    t = r[..., None] * frac
    vals = r[..., None] * t - (t ** e.p / e.p + t)
    best = vals.max(axis=-1)
    return best.reshape(_norm(np.asarray(z, dtype=float)).shape)
