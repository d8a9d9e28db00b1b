"""Samplable forms of the pointwise vector inequalities behind the
regularity estimates, plus randomized sweeps that check them and calibrate
the constants that are only known to exist.

Every pair operation accepts either one pair of vectors ``(n,)`` or a batch
``(m, n)`` and is fully vectorized over the batch.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from .maps import Exponents, f_potential_grad, h_map, v_gamma

GAP_TOL = 1e-12
DENOM_FLOOR = 1e-10


@dataclass
class GapReport:
    """Slack of an inequality over one or many pairs.

    ``gap`` is the smallest slack seen, ``witness`` the pair attaining it and
    ``ratio`` the largest value of the comparison quotient (used to calibrate
    the upper constant).
    """

    gap: float
    ratio: float
    witness: tuple

    @property
    def ok(self) -> bool:
        return self.gap >= -GAP_TOL


@dataclass
class CalibrationResult:
    constant_low: float
    constant_high: float
    sample_count: int
    seed: int

    def __post_init__(self):
        if not self.constant_low <= self.constant_high:
            raise ValueError("calibration produced an empty interval")


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def _norm(a):
    return np.sqrt(np.sum(a * a, axis=-1))


def _pair(xi, eta):
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if xi.shape != eta.shape:
        raise ValueError(f"shape mismatch {xi.shape} vs {eta.shape}")
    return xi, eta


def _scalar(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


# ---------------------------------------------------------------- V_gamma ratio

def giaquinta_ratio(xi, eta, gamma: float, mu: float = 0.0):
    """``|V(xi) - V(eta)| / ((mu^2 + |xi|^2 + |eta|^2)^(gamma/2) |xi - eta|)``."""
    xi, eta = _pair(xi, eta)
    diff = _norm(xi - eta)
    if np.any(diff == 0):
        raise ValueError("ratio undefined for xi == eta")
    num = _norm(v_gamma(xi, gamma, mu) - v_gamma(eta, gamma, mu))
    den = (mu * mu + _dot(xi, xi) + _dot(eta, eta)) ** (gamma / 2.0) * diff
    return _scalar(num / den)


# ---------------------------------------------------------------- F potential bounds

def _fusco_check(xi, eta, gamma, mu):
    # the ratio itself makes sense on all of (-1, 0); only the potential
    # F needs gamma > -1/2
    if not -1.0 < gamma < 0.0:
        raise ValueError(f"gamma must lie in (-1, 0), got {gamma}")
    if mu == 0 and (np.any(_norm(xi) == 0) or np.any(_norm(eta) == 0)):
        raise ValueError("mu = 0 with a zero vector makes the quotient singular")


def fusco_quotient(xi, eta, gamma: float, mu: float = 0.0):
    """Middle quantity of the two-sided bound divided by ``|xi - eta|``."""
    xi, eta = _pair(xi, eta)
    _fusco_check(xi, eta, gamma, mu)
    diff = _norm(xi - eta)
    if np.any(diff == 0):
        raise ValueError("quotient undefined for xi == eta")
    mid = _norm(f_potential_grad(xi, gamma, mu) - f_potential_grad(eta, gamma, mu))
    mid = mid / (mu * mu + _dot(xi, xi) + _dot(eta, eta)) ** gamma
    return _scalar(mid / diff)


def fusco_bounds(xi, eta, gamma: float, mu: float = 0.0) -> GapReport:
    """Lower bound ``(2 gamma + 1) |xi - eta|`` against the middle quantity.

    The gap is the middle quantity minus the lower bound; the ratio is the
    quotient by ``|xi - eta|`` that the upper constant ``c(n) / (2 gamma + 1)``
    must dominate.
    """
    xi, eta = _pair(xi, eta)
    quot = np.atleast_1d(fusco_quotient(xi, eta, gamma, mu))
    diff = np.atleast_1d(_norm(xi - eta))
    gaps = (quot - (2.0 * gamma + 1.0)) * diff
    i = int(np.argmin(gaps))
    xs = xi.reshape(-1, xi.shape[-1])
    es = eta.reshape(-1, eta.shape[-1])
    return GapReport(float(gaps[i]), float(quot.max()), (xs[i].copy(), es[i].copy()))


def fusco_monotonicity_gap(xi, eta, gamma: float, mu: float = 0.0):
    """``<grad F(xi) - grad F(eta), xi - eta> - (2g+1)(mu^2+|xi|^2+|eta|^2)^g |xi-eta|^2``."""
    xi, eta = _pair(xi, eta)
    _fusco_check(xi, eta, gamma, mu)
    d = xi - eta
    lhs = _dot(f_potential_grad(xi, gamma, mu) - f_potential_grad(eta, gamma, mu), d)
    rhs = (2.0 * gamma + 1.0) * (mu * mu + _dot(xi, xi) + _dot(eta, eta)) ** gamma * _dot(d, d)
    return _scalar(lhs - rhs)


# ---------------------------------------------------------------- H_a vs H_eps comparison

def jolly_ratio(xi, eta, a: float, eps: float):
    """Comparison quotient between ``H_a`` and ``H_eps`` increments.

    Returns NaN (the undefined marker) where both vectors lie in the closed
    unit ball or where ``H_eps(xi) == H_eps(eta)``.
    """
    if not 0.0 < a < eps:
        raise ValueError(f"need 0 < a < eps, got a={a}, eps={eps}")
    xi, eta = _pair(xi, eta)
    num = _norm(h_map(xi, a) - h_map(eta, a))
    d_eps = _norm(h_map(xi, eps) - h_map(eta, eps))
    weight = np.maximum(_norm(xi) - 1.0, 0.0) ** eps + np.maximum(_norm(eta) - 1.0, 0.0) ** eps
    valid = (weight > 0) & (d_eps > 0)
    out = np.full(np.shape(num), np.nan)
    w = weight[valid] if np.ndim(weight) else weight
    if np.ndim(num) == 0:
        if valid:
            out = np.asarray(num / (w ** ((a - eps) / eps) * d_eps))
    else:
        out[valid] = num[valid] / (w ** ((a - eps) / eps) * d_eps[valid])
    return _scalar(out)


# ---------------------------------------------------------------- degenerate monotonicity

def brasco_gaps(xi, eta, e: Exponents):
    """Slacks of the two degenerate-branch inequalities (``q >= 2``).

    ``first = <H_{q-1}(xi) - H_{q-1}(eta), xi - eta> - (4/q^2)|dH|^2`` and
    ``second = (q-1)(|H_{q/2}(xi)|^k + |H_{q/2}(eta)|^k)|dH| - |H_{q-1}(xi) - H_{q-1}(eta)|``
    with ``dH`` the ``H_{q/2}`` increment and ``k = (q-2)/q``.
    """
    if e.q < 2.0:
        raise ValueError(f"requires q >= 2, got {e.q}")
    xi, eta = _pair(xi, eta)
    q = e.q
    dflux = h_map(xi, q - 1.0) - h_map(eta, q - 1.0)
    hx, he = h_map(xi, q / 2.0), h_map(eta, q / 2.0)
    dhalf = _norm(hx - he)
    first = _dot(dflux, xi - eta) - (4.0 / q ** 2) * dhalf ** 2
    expo = (q - 2.0) / q
    if expo == 0.0:
        weight = 2.0  # 0^0 = 1 on both terms
    else:
        weight = _norm(hx) ** expo + _norm(he) ** expo
    second = (q - 1.0) * weight * dhalf - _norm(dflux)
    return _scalar(first), _scalar(second)


# ---------------------------------------------------------------- singular monotonicity

def _check_singular(e: Exponents):
    if not 1.0 < e.q < 2.0:
        raise ValueError(f"requires 1 < q < 2, got {e.q}")


def monotonicity_lhs(xi, eta, e: Exponents):
    """``<H_{q-1}(xi) - H_{q-1}(eta), xi - eta>``."""
    xi, eta = _pair(xi, eta)
    return _scalar(_dot(h_map(xi, e.q - 1.0) - h_map(eta, e.q - 1.0), xi - eta))


def half_increment_sq(xi, eta, e: Exponents):
    """``|H_{q/2}(xi) - H_{q/2}(eta)|^2``."""
    xi, eta = _pair(xi, eta)
    d = h_map(xi, e.q / 2.0) - h_map(eta, e.q / 2.0)
    return _scalar(_dot(d, d))


def singular_monotonicity_gap(xi, eta, e: Exponents, beta: float):
    _check_singular(e)
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    return _scalar(np.asarray(monotonicity_lhs(xi, eta, e))
                   - beta * np.asarray(half_increment_sq(xi, eta, e)))


def singular_b_term(xi, eta, e: Exponents):
    """``<H_{q-1}(xi) - H_{q-1}(eta), xi/|xi| - eta/|eta|>``; nonnegative
    when both vectors lie outside the unit ball."""
    xi, eta = _pair(xi, eta)
    u = xi / _norm(xi)[..., None]
    v = eta / _norm(eta)[..., None]
    return _scalar(_dot(h_map(xi, e.q - 1.0) - h_map(eta, e.q - 1.0), u - v))


# ---------------------------------------------------------------- sampling

def _directions(rng, m, n):
    d = rng.standard_normal((m, n))
    return d / _norm(d)[:, None]


def sample_pairs(rng: np.random.Generator, m: int, n: int = 2, kind: str = "mixture"):
    """Random pairs concentrated on the regimes where the inequalities are tight.

    ``mixture``: half uniform components in [-10, 10], a quarter straddling the
    unit sphere (norms in [0.5, 1.5]) and a quarter near-collinear pairs
    ``eta = xi + 1e-3 * noise``.  ``outside``: the same layout with every norm
    drawn from (1, 10].
    """
    n_uni = m // 2
    n_sph = m // 4
    n_col = m - n_uni - n_sph
    if kind == "mixture":
        uni = rng.uniform(-10.0, 10.0, size=(2, n_uni, n))
        sph = rng.uniform(0.5, 1.5, size=(2, n_sph, 1)) * np.stack(
            [_directions(rng, n_sph, n), _directions(rng, n_sph, n)])
        base = rng.uniform(-10.0, 10.0, size=(n_col, n))
    elif kind == "outside":
        def shell(k):
            return rng.uniform(1.0, 10.0, size=(k, 1)) * _directions(rng, k, n)
        uni = np.stack([shell(n_uni), shell(n_uni)])
        sph = np.stack([shell(n_sph), shell(n_sph)])
        base = shell(n_col)
    else:
        raise ValueError(f"unknown sampling kind {kind!r}")
    col = np.stack([base, base + 1e-3 * rng.uniform(-1.0, 1.0, size=(n_col, n))])
    if kind == "outside":
        # keep the perturbed partner outside the ball as well
        r = _norm(col[1])
        col[1] = np.where((r <= 1.0)[:, None], col[1] / r[:, None] * 1.0001, col[1])
    pairs = np.concatenate([uni, sph, col], axis=1)
    return pairs[0], pairs[1]


def _chunks(total: int, size: int) -> Iterable[int]:
    while total > 0:
        k = min(size, total)
        yield k
        total -= k


def _sweep_min(fn: Callable, samples: int, seed: int, n: int = 2, kind: str = "mixture",
               chunk: int = 250_000):
    """Minimum of ``fn(xi, eta)`` over seeded sample shards, with witness."""
    best, witness = np.inf, None
    shards = list(_chunks(samples, chunk))
    for ss, k in zip(np.random.SeedSequence(seed).spawn(len(shards)), shards):
        xi, eta = sample_pairs(np.random.default_rng(ss), k, n, kind)
        vals = np.asarray(fn(xi, eta), dtype=float)
        i = int(np.nanargmin(vals))
        if vals[i] < best:
            best, witness = float(vals[i]), (xi[i].copy(), eta[i].copy())
    return best, witness


def _sweep_range(fn: Callable, samples: int, seed: int, n: int = 2, kind: str = "mixture",
                 chunk: int = 250_000):
    lo, hi, used = np.inf, -np.inf, 0
    shards = list(_chunks(samples, chunk))
    for ss, k in zip(np.random.SeedSequence(seed).spawn(len(shards)), shards):
        xi, eta = sample_pairs(np.random.default_rng(ss), k, n, kind)
        vals = np.asarray(fn(xi, eta), dtype=float)
        vals = vals[np.isfinite(vals)]
        used += vals.size
        if vals.size:
            lo, hi = min(lo, vals.min()), max(hi, vals.max())
    return lo, hi, used


def calibrate_ratio(fn: Callable, samples: int, seed: int, n: int = 2,
                    kind: str = "mixture") -> CalibrationResult:
    """Empirical range of a ratio that the lemmas bound above and below."""
    lo, hi, used = _sweep_range(fn, samples, seed, n, kind)
    if used == 0:
        raise RuntimeError("no sample produced a defined ratio")
    return CalibrationResult(float(lo), float(hi), int(used), seed)


def calibrate_beta(e: Exponents, samples: int = 1_000_000, seed: int = 0,
                   n: int = 2, safety: float = 0.99) -> CalibrationResult:
    """Empirical constant for the singular monotonicity inequality.

    ``constant_low`` is ``safety`` times the smallest observed ratio of
    ``<H_{q-1}(xi) - H_{q-1}(eta), xi - eta>`` to
    ``|H_{q/2}(xi) - H_{q/2}(eta)|^2`` over pairs whose denominator exceeds
    the floor; ``constant_high`` is the largest observed ratio.
    """
    _check_singular(e)
    if samples < 100_000:
        raise ValueError("calibration needs at least 1e5 samples")

    def ratio(xi, eta):
        den = half_increment_sq(xi, eta, e)
        out = np.full(den.shape, np.nan)
        ok = den > DENOM_FLOOR
        out[ok] = monotonicity_lhs(xi[ok], eta[ok], e) / den[ok]
        return out

    lo, hi, used = _sweep_range(ratio, samples, seed, n)
    if used < 0.01 * samples:
        raise RuntimeError(f"only {used} of {samples} samples had a usable denominator")
    return CalibrationResult(float(safety * lo), float(hi), int(used), seed)


def calibrate_jolly(a: float, eps: float, samples: int = 1_000_000, seed: int = 0,
                    n: int = 2, safety: float = 1.01) -> CalibrationResult:
    """Empirical ``beta_1, beta_2`` for the ``H_a`` / ``H_eps`` comparison,
    sampled with both norms in (1, 10].  The upper constant is inflated by
    ``safety`` and the lower one deflated by it."""
    res = calibrate_ratio(lambda x, y: jolly_ratio(x, y, a, eps), samples, seed, n, "outside")
    return CalibrationResult(res.constant_low / safety, res.constant_high * safety,
                             res.sample_count, seed)


# ---------------------------------------------------------------- sweeps

@dataclass
class SweepRow:
    lemma: str
    params: dict
    samples: int
    seed: int
    min_gap: Optional[float] = None
    constant_low: Optional[float] = None
    constant_high: Optional[float] = None
    witness: Optional[tuple] = field(default=None, repr=False)

    @property
    def failed(self) -> bool:
        return self.min_gap is not None and self.min_gap < -GAP_TOL


CSV_COLUMNS = ["lemma", "params", "samples", "seed", "min_gap", "constant_low", "constant_high"]


def sweep_giaquinta(gamma: float, mu: float, samples: int, seed: int, n: int = 2) -> SweepRow:
    cal = calibrate_ratio(lambda x, y: giaquinta_ratio(x, y, gamma, mu), samples, seed, n)
    return SweepRow("giaquinta", {"gamma": gamma, "mu": mu}, samples, seed,
                    None, cal.constant_low, cal.constant_high)


def sweep_fusco(gamma: float, mu: float, samples: int, seed: int, n: int = 2) -> SweepRow:
    """Lower-bound gap of the two-sided bound and the monotonicity gap; the
    reported minimum is the worse of the two."""
    def lower_gap(x, y):
        return (fusco_quotient(x, y, gamma, mu) - (2 * gamma + 1)) * _norm(x - y)

    g1, w1 = _sweep_min(lower_gap, samples, seed, n)
    g2, w2 = _sweep_min(lambda x, y: fusco_monotonicity_gap(x, y, gamma, mu), samples, seed, n)
    lo, hi, _ = _sweep_range(lambda x, y: fusco_quotient(x, y, gamma, mu), samples, seed, n)
    gap, wit = (g1, w1) if g1 <= g2 else (g2, w2)
    return SweepRow("fusco", {"gamma": gamma, "mu": mu}, samples, seed, gap, lo, hi, wit)


def sweep_jolly(a: float, eps: float, samples: int, seed: int, n: int = 2) -> SweepRow:
    cal = calibrate_jolly(a, eps, samples, seed, n)
    return SweepRow("jolly", {"a": a, "eps": eps}, samples, seed,
                    None, cal.constant_low, cal.constant_high)


def sweep_brasco(e: Exponents, samples: int, seed: int, n: int = 2) -> SweepRow:
    def worst(x, y):
        g1, g2 = brasco_gaps(x, y, e)
        return np.minimum(g1, g2)

    gap, wit = _sweep_min(worst, samples, seed, n)
    return SweepRow("brasco", {"q": e.q}, samples, seed, gap, None, None, wit)


def sweep_singular(e: Exponents, samples: int, seed: int, holdout_seed: int,
                   n: int = 2) -> SweepRow:
    """Calibrate beta on one seed, then check the monotonicity LHS and the
    gap with that beta on an independent seed."""
    cal = calibrate_beta(e, samples, seed, n)
    lhs_min, w1 = _sweep_min(lambda x, y: monotonicity_lhs(x, y, e), samples, holdout_seed, n)
    gap_min, w2 = _sweep_min(
        lambda x, y: singular_monotonicity_gap(x, y, e, cal.constant_low), samples, holdout_seed, n)
    gap, wit = (lhs_min, w1) if lhs_min <= gap_min else (gap_min, w2)
    return SweepRow("singular", {"q": e.q, "holdout_seed": holdout_seed}, samples, seed,
                    gap, cal.constant_low, cal.constant_high, wit)


def brasco_tight_row() -> SweepRow:
    """The exact equality case of the first degenerate inequality at q = 2."""
    xi, eta = np.array([2.0, 0.0]), np.array([1.0, 0.0])
    g1, _ = brasco_gaps(xi, eta, Exponents(2.0))
    return SweepRow("brasco", {"q": 2.0, "witness": "xi=(2,0),eta=(1,0)"}, 1, 0,
                    float(g1), None, None, (xi, eta))


def default_sweeps(samples: int = 1_000_000, seed: int = 0) -> list[SweepRow]:
    """The full battery over all five inequality families at the default parameter grid."""
    rows = []
    for gamma in (0.5, 1.0, 2.0):
        rows.append(sweep_giaquinta(gamma, 0.0, samples, seed))
    for gamma in (-0.45, -0.25, -0.05):
        for mu in (0.0, 0.5):
            rows.append(sweep_fusco(gamma, mu, samples, seed))
    for q in (1.2, 1.5, 1.8):
        rows.append(sweep_jolly(round(q - 1.0, 12), q / 2.0, samples, seed))
    for q in (2.0, 2.5, 3.0, 4.0):
        rows.append(sweep_brasco(Exponents(q), samples, seed))
    rows.append(brasco_tight_row())
    for q in (1.2, 1.5, 1.8):
        rows.append(sweep_singular(Exponents(q), samples, seed, seed + 1))
    return rows


def write_sweep_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            params = ";".join(f"{k}={v}" for k, v in r.params.items())
            w.writerow([r.lemma, params, r.samples, r.seed,
                        "" if r.min_gap is None else repr(r.min_gap),
                        "" if r.constant_low is None else repr(r.constant_low),
                        "" if r.constant_high is None else repr(r.constant_high)])
