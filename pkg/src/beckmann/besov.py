"""Difference-quotient moments, discrete Besov seminorms and scaling fits
on interior windows.

Measured fields are arrays whose leading axes are the grid axes; any
trailing axes are treated as vector components and summed in quadrature.
Shifts are whole cells, so ``tau_h`` is exact.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .grid import GridDomain, cell_gradients, grad_faces, stencil_vectors
from .maps import Exponents, h_map
from .solver import Solution

BRANCHES = ("sobolev_q_lt_2", "besov_q_lt_2", "besov_q_ge_2")
FLOOR = 1e-14
EXPONENT_SLACK = 0.15


@dataclass(frozen=True)
class Window:
    """Ball ``B_R(center)``; moments are taken over ``B_{R/2}`` and shifts
    may not exceed ``margin``."""

    center: tuple
    radius: float
    margin: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.radius > 0 or not self.margin > 0:
            raise ValueError("radius and margin must be positive")

    @classmethod
    def centered(cls, domain: GridDomain, radius: float, margin: float) -> "Window":
        return cls(tuple(0.5 * e for e in domain.extent), radius, margin)

    def check(self, domain: GridDomain) -> None:
        """In a walled box ``B_R`` plus the margin must stay inside."""
        if len(self.center) != domain.ndim:
            raise ValueError("window centre has the wrong dimension")
        if domain.periodic:
            if 2 * (self.radius + self.margin) > min(domain.extent):
                raise ValueError("window plus margin wraps onto itself")
            return
        gap = min(min(c, e - c) for c, e in zip(self.center, domain.extent)) - self.radius
        if not self.margin < gap / 2:
            raise ValueError(f"margin {self.margin:.3g} must be below half the distance "
                             f"{gap:.3g} from the window to the wall")

    def mask(self, domain: GridDomain, radius: Optional[float] = None) -> np.ndarray:
        """Cells whose centres lie in the ball of ``radius`` (default ``R/2``)."""
        rad = 0.5 * self.radius if radius is None else radius
        d2 = 0.0
        for x, c, e in zip(domain.centers(), self.center, domain.extent):
            dx = x - c
            if domain.periodic:
                dx = dx - e * np.round(dx / e)
            d2 = d2 + dx * dx
        return d2 <= rad * rad

    def outer_mask(self, domain: GridDomain) -> np.ndarray:
        """``B' = B_R + B(0, margin)``."""
        return self.mask(domain, self.radius + self.margin)


@dataclass
class SeminormCurve:
    direction: int
    steps: list  # (h, M) pairs

    def __post_init__(self):
        hs = [h for h, _ in self.steps]
        if any(b <= a for a, b in zip(hs, hs[1:])):
            raise ValueError("steps must be strictly increasing in h")
        if any(m < 0 for _, m in self.steps):
            raise ValueError("moments must be nonnegative")

    @property
    def h(self) -> np.ndarray:
        return np.array([h for h, _ in self.steps])

    @property
    def M(self) -> np.ndarray:
        return np.array([m for _, m in self.steps])


@dataclass
class FitResult:
    """``M(h) ~ constant * h^slope``; ``exponent`` is ``slope / 2``.

    A curve that is identically zero yields ``infinite=True`` and
    ``exponent = slope = inf``.
    """

    exponent: float
    constant: float
    r_squared: float
    slope: float
    infinite: bool = False


def ladder(domain: GridDomain, w: Window, top: Optional[float] = None) -> list:
    """Whole-cell shifts ``2, 3, 4, 6, 8, 12, ...`` with ``m * spacing <= min(margin, R/8)``.

    One-cell shifts are left out because they are dominated by
    discretization noise.
    """
    top = min(w.margin, w.radius / 8.0) if top is None else top
    out, k = [], 0
    while True:
        for m in (2 ** (k + 1), 3 * 2 ** k):
            if m * domain.spacing <= top * (1 + 1e-12):
                out.append(m)
            else:
                return sorted(set(out))
        k += 1


# ---------------------------------------------------------------- moments

def translate(v: np.ndarray, s: int, m: int, domain: GridDomain,
              w: Optional[Window] = None) -> np.ndarray:
    """``tau v(x) = v(x + m * spacing * e_s)``.

    In a walled box the shift must stay within the window margin, which
    guarantees the wrapped values never reach the measured ball.
    """
    if not 0 <= s < domain.ndim:
        raise ValueError(f"axis {s} out of range")
    if not domain.periodic:
        if w is None or abs(m) * domain.spacing > w.margin * (1 + 1e-12):
            raise ValueError(f"shift of {m} cells exceeds the window margin")
    return np.roll(v, -m, axis=s)


def _increment_sq(v, s, m, domain, w):
    d = translate(v, s, m, domain, w) - v
    d2 = d * d
    while d2.ndim > domain.ndim:
        d2 = d2.sum(axis=-1)
    return d2


def second_moment(v: np.ndarray, s: int, m: int, w: Window, domain: GridDomain,
                  mask: Optional[np.ndarray] = None) -> float:
    """``int_{B_{R/2}} |tau_{s,h} v - v|^2`` with ``h = m * spacing``."""
    if abs(m) * domain.spacing > w.margin * (1 + 1e-12):
        raise ValueError(f"shift of {m} cells exceeds the margin {w.margin}")
    mask = w.mask(domain) if mask is None else mask
    return float(domain.cell_volume * np.sum(_increment_sq(v, s, m, domain, w)[mask]))


def p_moment(v: np.ndarray, s: int, m: int, w: Window, domain: GridDomain, p: float,
             mask: Optional[np.ndarray] = None) -> float:
    """``int |tau_{s,h} v - v|^p`` over the inner ball."""
    if abs(m) * domain.spacing > w.margin * (1 + 1e-12):
        raise ValueError(f"shift of {m} cells exceeds the margin {w.margin}")
    mask = w.mask(domain) if mask is None else mask
    d = _increment_sq(v, s, m, domain, w)[mask]
    return float(domain.cell_volume * np.sum(d ** (p / 2.0)))


def _seminorm(v, alpha, p, domain, w, h_set, mask):
    if len(h_set) == 0:
        raise ValueError("empty step set")
    best = 0.0
    for s in range(domain.ndim):
        for m in h_set:
            h = abs(m) * domain.spacing
            val = p_moment(v, s, m, w, domain, p, mask) ** (1.0 / p) / h ** alpha
            best = max(best, val)
    return best


def besov_seminorm(v: np.ndarray, alpha: float, p: float, w: Window, domain: GridDomain,
                   h_set: Sequence[int]) -> float:
    """``max_{s, h} (int_{B_{R/2}} |Delta_h v|^p)^(1/p) / |h|^alpha`` over the
    given whole-cell steps."""
    return _seminorm(v, alpha, p, domain, w, h_set, w.mask(domain))


def besov_norm(v: np.ndarray, alpha: float, p: float, w: Window, domain: GridDomain,
               h_set: Sequence[int], mask: np.ndarray) -> float:
    """``||v||_{L^p} + [v]`` over an arbitrary cell mask."""
    lp = (domain.cell_volume * np.sum(np.abs(v[mask]) ** p)) ** (1.0 / p)
    return float(lp + _seminorm(v, alpha, p, domain, w, h_set, mask))


def moment_curve(v: np.ndarray, s: int, w: Window, domain: GridDomain,
                 h_set: Sequence[int], p: float = 2.0) -> SeminormCurve:
    mask = w.mask(domain)
    steps = [(m * domain.spacing, p_moment(v, s, m, w, domain, p, mask)) for m in sorted(h_set)]
    return SeminormCurve(s, steps)


def fit_exponent(curve: SeminormCurve, scale: float = 2.0) -> FitResult:
    """Least-squares slope of ``log M`` against ``log h``.

    ``exponent`` is the slope divided by ``scale`` (2 for second moments).
    """
    h, M = curve.h, curve.M
    if len(h) < 5:
        raise ValueError(f"need at least 5 steps, got {len(h)}")
    if np.all(M < FLOOR):
        return FitResult(math.inf, 0.0, 1.0, math.inf, True)
    if np.any(M <= 0):
        raise ValueError("curve mixes zero and positive moments")
    x, y = np.log(h), np.log(M)
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else max(0.0, 1.0 - float(np.sum(resid ** 2)) / ss_tot)
    return FitResult(float(slope / scale), float(np.exp(icpt)), r2, float(slope))


# ---------------------------------------------------------------- solved fields

def stencil_stack(cells: np.ndarray) -> np.ndarray:
    """``(K, *dims, n)`` stencil vectors as a ``(*dims, K, n)`` field scaled
    by ``K^(-1/2)``, so squared increments sum to the stencil mean."""
    K = cells.shape[0]
    return np.moveaxis(cells, 0, -2) / math.sqrt(K)


def half_field(sol: Solution, e: Exponents) -> np.ndarray:
    """``H_{q/2}`` of the reconstructed gradients of ``sol.u``, as a stack."""
    return stencil_stack(h_map(cell_gradients(sol.u), e.q / 2.0))


def _lq_grad(values: np.ndarray, domain: GridDomain, mask: np.ndarray, p: float) -> float:
    g = stencil_vectors(grad_faces(values, domain.spacing, domain.periodic), domain.periodic)
    mag = np.sqrt(np.sum(g * g, axis=-1))  # (K, *dims)
    return float((domain.cell_volume * np.sum(np.mean(mag ** p, axis=0)[mask])) ** (1.0 / p))


def grad_lp(values: np.ndarray, domain: GridDomain, p: float,
            mask: Optional[np.ndarray] = None) -> float:
    """Discrete ``||grad v||_{L^p}`` from the stencil reconstruction."""
    mask = np.ones(domain.dims, bool) if mask is None else mask
    return _lq_grad(values, domain, mask, p)


@dataclass
class Report:
    branch: str
    exponents: tuple  # (e1, e2) of the bound
    threshold: float
    norms: dict
    window: dict
    curves: list
    fits: list
    constants: list
    passed: bool
    measure: str = "slope"

    def to_json(self) -> dict:
        return {"branch": self.branch, "bound_exponents": list(self.exponents),
                "threshold": self.threshold, "measure": self.measure,
                "norms": self.norms, "window": self.window,
                "fits": [_fit_json(f) for f in self.fits],
                "constants": self.constants, "passed": self.passed}


def _fit_json(f: FitResult) -> dict:
    d = asdict(f)
    for k in ("exponent", "slope"):
        if math.isinf(d[k]):
            d[k] = "inf"
    return d


def _branch_setup(branch: str, e: Exponents, data_class: str, slack: float = EXPONENT_SLACK):
    q = e.q
    if branch not in BRANCHES:
        raise ValueError(f"branch must be one of {BRANCHES}")
    if branch.endswith("lt_2") and not q < 2:
        raise ValueError(f"branch {branch} needs q < 2, got {q}")
    if branch.endswith("ge_2") and q < 2:
        raise ValueError(f"branch {branch} needs q >= 2, got {q}")
    if branch.startswith("besov"):
        if e.alpha is None:
            raise ValueError("besov branches need alpha")
    elif data_class == "besov":
        raise ValueError("Sobolev branch requested for Besov data")
    if branch == "sobolev_q_lt_2":
        # threshold on the raw slope of M
        return (2.0, 2.0 / (3.0 - q)), 2.0 / (3.0 - q) - slack, "slope"
    a = e.alpha
    if branch == "besov_q_lt_2":
        return (a + 1.0, 2.0 / (3.0 - q)), min((a + 1) / 2, 1 / (3 - q)) - slack, "exponent"
    return (a + 1.0, 2.0), (a + 1.0) / 2.0 - slack, "exponent"


def check_branch(branch: str, e: Exponents, data_class: str) -> float:
    """Validate ``branch`` against ``q``, ``alpha`` and the data class.

    Returns the default exponent threshold; raises ``ValueError`` on a
    mismatch.
    """
    return _branch_setup(branch, e, data_class)[1]


def verify_estimate(sol: Solution, spec, w: Window, branch: str,
                    h_set: Optional[Sequence[int]] = None, min_fit_points: int = 5,
                    slack: float = EXPONENT_SLACK) -> Report:
    """Measure ``M(h)`` for ``H_{q/2}(grad u)`` per direction and compare with
    the bound ``C (A B h^e1 + B^q h^e2)``.

    ``A`` is ``||grad f||_{L^p(B')}`` on the Sobolev branch and the discrete
    ``B^alpha_{p,inf}(B')`` norm of ``f`` otherwise; ``B = ||grad u||_{L^q(B')}``.
    The minimal ``C`` is reported per direction.  When fewer than
    ``min_fit_points`` steps fit the ladder only the constants are computed.
    """
    e = spec.exponents
    dom = sol.u.domain
    w.check(dom)
    (e1, e2), thr, measure = _branch_setup(branch, e, spec.data_class, slack)
    h_set = ladder(dom, w) if h_set is None else list(h_set)
    if not h_set:
        raise ValueError("no admissible step fits the window margin")
    outer = w.outer_mask(dom)
    if branch == "sobolev_q_lt_2":
        A = _lq_grad(spec.f.values, dom, outer, e.p)
    else:
        A = besov_norm(spec.f.values, e.alpha, e.p, w, dom, h_set, outer)
    B = _lq_grad(sol.u.values, dom, outer, e.q)
    v = half_field(sol, e)
    curves, fits, consts = [], [], []
    passed = True
    for s in range(dom.ndim):
        c = moment_curve(v, s, w, dom, h_set)
        curves.append(c)
        bound = A * B * c.h ** e1 + B ** e.q * c.h ** e2
        consts.append(float(np.max(c.M / bound)) if np.all(bound > 0) else (0.0 if np.all(c.M == 0) else math.inf))
        if np.all(c.M < FLOOR):
            fits.append(FitResult(math.inf, 0.0, 1.0, math.inf, True))
        elif len(h_set) >= min_fit_points:
            fit = fit_exponent(c)
            fits.append(fit)
            val = fit.slope if measure == "slope" else fit.exponent
            passed &= bool(val >= thr)
        else:
            passed = False
    return Report(branch, (e1, e2), thr, {"A": A, "B": B},
                  {"center": list(w.center), "R": w.radius, "r0": w.margin, "steps": h_set},
                  curves, fits, consts, passed, measure)


@dataclass
class SigmaReport:
    kappa: float
    threshold: float
    curves: list
    fits: list
    p_exponents: list
    max_domination: float
    domination_ok: bool
    passed: bool

    def to_json(self) -> dict:
        return {"kappa": self.kappa, "threshold": self.threshold,
                "fits": [_fit_json(f) for f in self.fits],
                "p_exponents": self.p_exponents, "max_domination": self.max_domination,
                "domination_ok": self.domination_ok, "passed": self.passed}


def flux_kappa(e: Exponents, samples: int = 1_000_000, seed: int = 0) -> float:
    """Domination constant ``beta_2^p`` from the calibrated ``H_{q-1}`` /
    ``H_{q/2}`` comparison."""
    from .lemmas import calibrate_jolly
    cal = calibrate_jolly(e.q - 1.0, e.q / 2.0, samples, seed)
    return float(cal.constant_high ** e.p)


def sigma_estimate_check(sol: Solution, w: Window, e: Exponents, kappa: Optional[float] = None,
                         h_set: Optional[Sequence[int]] = None,
                         slack: float = EXPONENT_SLACK) -> SigmaReport:
    """``int |tau_h sigma_0 - sigma_0|^p`` per direction plus the cellwise
    domination ``|Delta sigma_0|^p <= kappa |Delta H_{q/2}(grad u)|^2``.

    Both sides use the per-stencil cell fluxes carried by ``sol.sigma0``.
    The fitted exponent is the slope of the ``p``-moment divided by ``p``.
    """
    if not 1.0 < e.q < 2.0:
        raise ValueError(f"needs 1 < q < 2, got {e.q}")
    dom = sol.u.domain
    w.check(dom)
    if sol.sigma0.cells is None:
        raise ValueError("solution flux carries no stencil cells")
    kappa = flux_kappa(e) if kappa is None else kappa
    h_set = ladder(dom, w) if h_set is None else list(h_set)
    sig = np.moveaxis(sol.sigma0.cells, 0, -2)   # (*dims, K, n)
    half = np.moveaxis(h_map(cell_gradients(sol.u), e.q / 2.0), 0, -2)
    K = sig.shape[-2]
    mask = w.mask(dom)
    thr = 2.0 / (e.p * (3.0 - e.q)) - slack
    curves, fits, expo = [], [], []
    worst = 0.0
    for s in range(dom.ndim):
        steps = []
        for m in sorted(h_set):
            ds = translate(sig, s, m, dom, w) - sig
            dv = translate(half, s, m, dom, w) - half
            lhs = np.sum(ds * ds, axis=-1) ** (e.p / 2.0)   # (*dims, K)
            rhs = kappa * np.sum(dv * dv, axis=-1)
            lm, rm = lhs[mask], rhs[mask]
            pos = lm > 0
            if np.any(pos):
                with np.errstate(divide="ignore"):
                    worst = max(worst, float(np.max(lm[pos] / rm[pos])))
            steps.append((m * dom.spacing, float(dom.cell_volume * np.sum(lm) / K)))
        c = SeminormCurve(s, steps)
        curves.append(c)
        if np.all(c.M < FLOOR):
            fits.append(FitResult(math.inf, 0.0, 1.0, math.inf, True))
            expo.append(math.inf)
        elif len(steps) >= 5:
            fit = fit_exponent(c, scale=e.p)
            fits.append(fit)
            expo.append(fit.exponent)
    dom_ok = worst <= 1.0
    passed = dom_ok and len(expo) == dom.ndim and all(x >= thr for x in expo)
    return SigmaReport(kappa, thr, curves, fits, expo, worst, dom_ok, passed)


# ---------------------------------------------------------------- export

def write_curves_csv(path, curves: Sequence[SeminormCurve], label: str = "M") -> None:
    """Columns ``quantity, direction, h, M``."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["quantity", "direction", "h", "M"])
        for c in curves:
            for h, m in c.steps:
                wr.writerow([label, c.direction, repr(h), repr(m)])


def write_report_json(path, report) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_json(), fh, indent=2)
