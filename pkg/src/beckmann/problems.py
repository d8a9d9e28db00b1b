"""Manufactured and synthetic problem instances.

Every constructor returns a :class:`ProblemSpec` whose source has zero mean.
Fluxes with a known closed form are sampled at face centres and the source
is defined as their *discrete* divergence, so the discrete constraint holds
exactly and solver error is separated from discretization error.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from numpy.polynomial import Polynomial
from scipy.special import gamma as gamma_fn

from .grid import (FluxField, GridDomain, ScalarField, div_cells, grad_faces,
                   read_fields, stencil_vectors, write_fields)
from .maps import Exponents

DATA_CLASSES = ("sobolev", "besov", "none")
KINDS = ("radial", "lipschitz", "besov", "smooth")
NULL_KINDS = ("cone", "plane", "random_clipped")

# radial profile geometry, as fractions of the shortest box side
_RADIAL_CENTER = (0.503, 0.497, 0.501)
_RADIAL_R1 = 0.30
_RADIAL_R2 = 0.45


@dataclass
class ExactSolution:
    u: ScalarField
    sigma: FluxField


@dataclass
class ProblemSpec:
    """A source term on a grid together with its metadata.

    ``data_class`` is ``"sobolev"`` for smooth data, ``"besov"`` for data of
    fractional smoothness ``exponents.alpha`` and ``"none"`` when ``f = 0``.
    """

    domain: GridDomain
    f: ScalarField
    exponents: Exponents
    data_class: str = "sobolev"
    exact: Optional[ExactSolution] = None
    kind: str = "custom"
    params: dict = field(default_factory=dict)
    seed: Optional[int] = None

    def __post_init__(self):
        if self.f.domain != self.domain:
            raise ValueError("source lives on a different grid")
        if self.data_class not in DATA_CLASSES:
            raise ValueError(f"data_class must be one of {DATA_CLASSES}")
        if self.data_class == "besov" and self.exponents.alpha is None:
            raise ValueError("besov data needs exponents.alpha")
        scale = max(1.0, float(np.abs(self.f.values).max()))
        if abs(self.f.mean()) > 1e-14 * scale:
            raise ValueError(f"source mean {self.f.mean():.3e} is not zero")

    def metadata(self) -> dict:
        return {"kind": self.kind, "params": self.params, "seed": self.seed,
                "data_class": self.data_class, "q": self.exponents.q,
                "alpha": self.exponents.alpha, "dims": list(self.domain.dims),
                "spacing": self.domain.spacing, "boundary": self.domain.boundary,
                "has_exact": self.exact is not None}

    def save(self, directory) -> None:
        """Write ``problem.bin`` (f, then u and sigma if known) and ``problem.json``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        fields = [self.f]
        if self.exact is not None:
            fields += [self.exact.u, self.exact.sigma]
        write_fields(d / "problem.bin", *fields)
        (d / "problem.json").write_text(json.dumps(self.metadata(), indent=2))

    @classmethod
    def load(cls, directory) -> "ProblemSpec":
        d = Path(directory)
        meta = json.loads((d / "problem.json").read_text())
        fields = read_fields(d / "problem.bin")
        exact = ExactSolution(fields[1], fields[2]) if meta["has_exact"] else None
        return cls(fields[0].domain, fields[0], Exponents(meta["q"], meta["alpha"]),
                   meta["data_class"], exact, meta["kind"], meta["params"], meta["seed"])


def _zero_mean(v: np.ndarray) -> np.ndarray:
    v = v - v.mean()
    # a second pass removes the rounding left by the first
    return v - v.mean()


# ---------------------------------------------------------------- radial

def _smootherstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t ** 4 * (35.0 - 84.0 * t + 70.0 * t * t - 20.0 * t ** 3)


@dataclass(frozen=True)
class RadialProfile:
    """Gradient magnitude ``g(r) = a r (1 - S((r - r1)/(r2 - r1)))``.

    ``S`` is the C^3 smootherstep, so ``g`` grows like ``a r`` near the
    centre and vanishes beyond ``r2``.  The potential is ``u = G(r)`` with
    ``G' = g`` and the exact flux is ``(g - 1)_+^(q-1)`` in the radial
    direction.
    """

    a: float
    r1: float
    r2: float

    def gmag(self, r):
        return self.a * r * (1.0 - _smootherstep((r - self.r1) / (self.r2 - self.r1)))

    def _taper_poly(self) -> Polynomial:
        d = self.r2 - self.r1
        t = Polynomial([-self.r1 / d, 1.0 / d])
        s = t ** 4 * (35.0 - 84.0 * t + 70.0 * t ** 2 - 20.0 * t ** 3)
        return self.a * Polynomial([0.0, 1.0]) * (1.0 - s)

    def potential(self, r):
        """``G(r) = int_0^r g``, exact piecewise polynomial."""
        r = np.asarray(r, dtype=float)
        anti = self._taper_poly().integ()
        g1 = 0.5 * self.a * self.r1 ** 2
        mid = g1 + anti(np.clip(r, self.r1, self.r2)) - anti(self.r1)
        return np.where(r <= self.r1, 0.5 * self.a * r * r, mid)

    def flux_magnitude(self, r, q):
        return np.maximum(self.gmag(r) - 1.0, 0.0) ** (q - 1.0)

    def continuum_source(self, r, q, n=2, dr=1e-6):
        """``-(s' + (n-1) s / r)`` with ``s`` the flux magnitude (central
        difference for ``s'``)."""
        r = np.asarray(r, dtype=float)
        s = self.flux_magnitude(r, q)
        ds = (self.flux_magnitude(r + dr, q) - self.flux_magnitude(r - dr, q)) / (2 * dr)
        rr = np.where(r > 0, r, 1.0)
        return -(ds + (n - 1) * s / rr)


def radial_geometry(domain: GridDomain, a: float) -> tuple:
    """Centre and :class:`RadialProfile` used by :func:`make_radial`."""
    side = min(domain.extent)
    center = tuple(_RADIAL_CENTER[d] * domain.extent[d] for d in range(domain.ndim))
    return center, RadialProfile(a, _RADIAL_R1 * side, _RADIAL_R2 * side)


def make_radial(e: Exponents, a: float, domain: GridDomain) -> ProblemSpec:
    """Manufactured radial solution with a free boundary at ``|x - c| = 1/a``.

    The centre sits off the grid nodes.  Inside radius ``r1`` the potential is
    ``a |x - c|^2 / 2``; it is tapered to a constant by ``r2`` so the same
    instance is valid for periodic and Neumann boxes.  When ``a r < 1`` on the
    whole support the problem is fully degenerate (``f = 0``).
    """
    if not a > 0:
        raise ValueError("a must be positive")
    if 1.0 / a < 2.0 * domain.spacing:
        raise ValueError(f"free boundary radius 1/a = {1 / a:.3g} is below two grid cells")
    center, prof = radial_geometry(domain, a)
    if float(np.max(prof.gmag(np.linspace(0, prof.r2, 4001)))) > 1.0 and 1.0 / a >= prof.r1:
        raise ValueError(f"free boundary radius 1/a = {1 / a:.3g} must lie inside r1 = {prof.r1:.3g}")

    def radius(xs):
        dx = [x - c for x, c in zip(xs, center)]
        return dx, np.sqrt(sum(d * d for d in dx))

    comps = []
    for axis in range(domain.ndim):
        dx, r = radius(domain.face_centers(axis))
        rr = np.where(r > 0, r, 1.0)
        comps.append(prof.flux_magnitude(r, e.q) * dx[axis] / rr)
    sigma = FluxField(tuple(comps), domain)
    if not domain.periodic:
        # the support stays away from the walls, so this only clears rounding
        for axis, c in enumerate(sigma.components):
            np.moveaxis(c, axis, 0)[-1] = 0.0
    f = -div_cells(sigma.components, domain.spacing, domain.periodic)
    _, r = radius(domain.centers())
    u = _zero_mean(prof.potential(r))
    exact = ExactSolution(ScalarField(u, domain), sigma)
    data_class = "sobolev" if np.any(f != 0) else "none"
    return ProblemSpec(domain, ScalarField(_zero_mean(f), domain), e, data_class, exact,
                       "radial", {"a": a, "center": list(center), "r1": prof.r1, "r2": prof.r2})


# ---------------------------------------------------------------- null data

def _max_stencil_norm(u: np.ndarray, domain: GridDomain) -> float:
    g = stencil_vectors(grad_faces(u, domain.spacing, domain.periodic), domain.periodic)
    return float(np.sqrt(np.max(np.sum(g * g, axis=-1))))


def _rescale_lipschitz(u: np.ndarray, domain: GridDomain, target: float = 0.99) -> np.ndarray:
    m = _max_stencil_norm(u, domain)
    return u * (target / m) if m > target else u


def make_lipschitz_null(domain: GridDomain, kind: str, q: float = 2.0, seed: int = 0) -> ProblemSpec:
    """``f = 0`` with a potential whose reconstructed gradients never exceed 1.

    Such a potential is a minimiser, since ``grad H*`` vanishes on the unit
    ball.  ``plane`` is a slope-0.5 ramp (a tent of slope 0.5 when periodic),
    ``cone`` the clipped distance to the centre and ``random_clipped`` a
    seeded random field, clipped and rescaled to gradient norm 0.99.
    """
    if kind not in NULL_KINDS:
        raise ValueError(f"kind must be one of {NULL_KINDS}, got {kind!r}")
    xs = domain.centers()
    L = domain.extent
    if kind == "plane":
        if domain.periodic:
            u = 0.5 * np.minimum(xs[0], L[0] - xs[0])
        else:
            u = 0.5 * xs[0]
    elif kind == "cone":
        c = [0.5 * l for l in L]
        r = np.sqrt(sum((x - cc) ** 2 for x, cc in zip(xs, c)))
        u = np.minimum(r, 0.4 * min(L))
    else:
        rng = np.random.default_rng(seed)
        u = np.zeros(domain.dims)
        for _ in range(6):
            k = rng.integers(-3, 4, size=domain.ndim)
            ph = rng.uniform(0, 2 * np.pi)
            u += rng.standard_normal() * np.cos(sum(2 * np.pi * kk * x / l for kk, x, l in zip(k, xs, L)) + ph)
        lo, hi = np.quantile(u, [0.2, 0.8])
        u = np.clip(u, lo, hi)
    if kind == "random_clipped":
        u = u * (0.99 / max(_max_stencil_norm(u, domain), 1e-300))
    u = _rescale_lipschitz(u - u.mean(), domain)
    f = ScalarField(np.zeros(domain.dims), domain)
    exact = ExactSolution(ScalarField(u - u.mean(), domain), FluxField.zeros(domain))
    return ProblemSpec(domain, f, Exponents(q), "none", exact, "lipschitz",
                       {"null_kind": kind}, seed if kind == "random_clipped" else None)


# ---------------------------------------------------------------- Besov data

def make_besov_source(alpha: float, J: int, domain: GridDomain, seed: int = 0,
                      q: float = 3.0, amplitude: float = 10.0) -> ProblemSpec:
    """Lacunary Weierstrass source ``A sum_j 2^(-alpha j) cos(2^j 2 pi x1/L + phi_j)``.

    ``j`` runs over ``0..J``; the phases are seeded.  Frequencies above the
    grid's Nyquist limit (``2^J > cells/2``) are rejected.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if J < 0:
        raise ValueError("J must be nonnegative")
    if 2 ** J > domain.dims[0] // 2:
        raise ValueError(f"frequency 2^{J} is not resolved by {domain.dims[0]} cells")
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=J + 1)
    x = domain.centers()[0] / domain.extent[0]
    f = np.zeros(domain.dims)
    for j in range(J + 1):
        f += 2.0 ** (-alpha * j) * np.cos(2.0 ** j * 2.0 * np.pi * x + phases[j])
    f = amplitude * f
    return ProblemSpec(domain, ScalarField(_zero_mean(f), domain), Exponents(q, alpha), "besov",
                       None, "besov", {"J": J, "amplitude": amplitude}, seed)


# ---------------------------------------------------------------- smooth data

@dataclass(frozen=True)
class TrigMode:
    coef: float
    wave: tuple  # integer wave numbers per axis
    phase: float


def _mean_abs_sin_pow(p: float) -> float:
    """Average of ``|sin|^p`` over a period."""
    return float(gamma_fn((p + 1) / 2) / (math.sqrt(math.pi) * gamma_fn(p / 2 + 1)))


def smooth_modes(ndim: int, modes: int, seed: int) -> list:
    rng = np.random.default_rng(seed)
    out, seen = [], set()
    while len(out) < modes:
        k = tuple(int(v) for v in rng.integers(-2, 3, size=ndim))
        if not any(k) or k in seen or tuple(-v for v in k) in seen:
            continue
        seen.add(k)
        out.append(TrigMode(float(rng.uniform(0.5, 1.0)), k, float(rng.uniform(0, 2 * np.pi))))
    return out


def eval_trig(modes, xs, extent, deriv: Optional[int] = None):
    """Value (or partial derivative along ``deriv``) of ``sum c cos(2 pi k.x/L + phi)``."""
    out = np.zeros(np.shape(xs[0]))
    for m in modes:
        arg = sum(2 * np.pi * k * x / l for k, x, l in zip(m.wave, xs, extent)) + m.phase
        if deriv is None:
            out += m.coef * np.cos(arg)
        else:
            out -= m.coef * 2 * np.pi * m.wave[deriv] / extent[deriv] * np.sin(arg)
    return out


def trig_grad_lp(modes, extent, p: float, amplitude: float = 1.0, samples: int = 2048) -> float:
    """``||grad f||_{L^p}`` over the box for ``f = amplitude * sum modes``.

    Exact for one mode or ``p = 2`` (Parseval, the wave vectors are distinct
    up to sign); otherwise a midpoint rule with ``samples`` points per axis,
    which converges fast because the integrand is periodic.
    """
    if not modes:
        return 0.0
    vol = float(np.prod(extent))
    kk = [np.sqrt(sum((2 * np.pi * k / l) ** 2 for k, l in zip(m.wave, extent))) for m in modes]
    if len(modes) == 1:
        amp = abs(amplitude * modes[0].coef) * kk[0]
        return float((amp ** p * _mean_abs_sin_pow(p) * vol) ** (1 / p))
    if p == 2.0:
        return float(math.sqrt(vol * sum(0.5 * (amplitude * m.coef * k) ** 2 for m, k in zip(modes, kk))))
    n = len(extent)
    per = max(64, int(round(samples ** (2.0 / n))) if n == 3 else samples)
    axes = [(np.arange(per) + 0.5) / per * l for l in extent]
    xs = np.meshgrid(*axes, indexing="ij")
    mag2 = sum(eval_trig(modes, xs, extent, d) ** 2 for d in range(n))
    return float((np.mean(np.abs(amplitude) ** p * mag2 ** (p / 2)) * vol) ** (1 / p))


def make_smooth_source(domain: GridDomain, modes: int, seed: int = 0, q: float = 1.5,
                       amplitude: float = 10.0) -> ProblemSpec:
    """Zero-mean trigonometric polynomial with ``modes`` seeded terms.

    Wave numbers are at most 2 per axis.  ``params["grad_lp"]`` holds the
    exact ``||grad f||_{L^p}`` computed from the coefficients.
    """
    if modes < 0:
        raise ValueError("modes must be nonnegative")
    if min(domain.dims) < 8:
        raise ValueError("grid too coarse for the modes")
    ms = smooth_modes(domain.ndim, modes, seed)
    e = Exponents(q)
    f = amplitude * eval_trig(ms, domain.centers(), domain.extent)
    return ProblemSpec(domain, ScalarField(_zero_mean(f), domain), e,
                       "sobolev" if modes else "none", None, "smooth",
                       {"modes": modes, "amplitude": amplitude,
                        "grad_lp": trig_grad_lp(ms, domain.extent, e.p, amplitude),
                        "terms": [[m.coef, list(m.wave), m.phase] for m in ms]}, seed)
