"""Growth factors r_u(m_u), r_s(m_s) by finite-horizon sampling.

For every sample point x and horizon t the log of the weighted cocycle

    F(x, t) = 1/2 log|det dphi^t(x)| + log||T^t(x)|| - m log||dphi^t(x)|E_s||   (side u)
    F(x, t) = 1/2 log|det dphi^t(x)| + log||T^t(x)|| + m log||dphi^t(x)^-1|E_u||  (side s)

is computed, the supremum of F/t over the samples is taken for each horizon,
and the rate is extrapolated with the model sup_rate(t) = r + c/t.

The stable factor is evaluated through the backward flow from the endpoint
(||dphi^t|E_s(x)|| = 1 / sigma_min(dphi^-t|E_s(phi^t x))) so that no vector
is ever iterated in its contracting direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .errors import NonConvergence
from .flows import PhasePoint, orbit_pieces, splitting_arrays
from .lifts import parallel_transport

DEFAULT_HORIZONS = (5.0, 10.0, 20.0, 40.0)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def sample_points(sys, samples=64, fiber_samples=4, seed=0):
    """Halton base points (the seed skips into the sequence) times a uniform
    fiber grid s_j = tau(x) j / fiber_samples."""
    if samples < 1 or fiber_samples < 1:
        raise ValueError("need at least one base and one fiber sample")
    hal = qmc.Halton(d=2, scramble=False)
    if seed:
        hal.fast_forward(int(seed))
    bases = hal.random(samples)
    pts = []
    for b in bases:
        tau = float(sys.roof_at(b)) if sys.is_cat else 1.0
        for j in range(fiber_samples):
            pts.append(PhasePoint(b, tau * j / fiber_samples))
    return pts


# ---------------------------------------------------------------------------
# per-orbit logarithms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OrbitLogs:
    """The four logarithms entering both growth functionals at one (x, t)."""

    half_log_det: float
    log_transport: float
    log_stable: float  # log ||dphi^t(x)|E_s||
    log_unstable_inv: float  # log ||dphi^t(x)^-1|E_u||


def _sigma_min(M, basis):
    q, _ = np.linalg.qr(basis)
    return float(np.linalg.svd(M @ q, compute_uv=False).min())


def _forward_backward(sys, x, t):
    """(dphi^t(x), dphi^-t(phi^t x), phi^t x, log|det dphi^t(x)|) from one walk."""
    pieces, y = orbit_pieces(sys, x, t)
    if not sys.is_cat:
        lam = np.diag(sys.generator_linearization())
        return np.diag(np.exp(lam * t)), np.diag(np.exp(-lam * t)), y, float(lam.sum() * t)
    Jf = np.eye(3)
    Jb = np.eye(3)
    logdet = 0.0
    for p in pieces:
        if p.jac is not None:
            Jf = p.jac @ Jf
            Jb = Jb @ np.linalg.inv(p.jac)
            logdet += math.log(abs(np.linalg.det(p.jac)))
    return Jf, Jb, y, logdet


def _metric_factor(fiber_metric):
    if fiber_metric is None:
        return None
    G = np.asarray(fiber_metric, dtype=complex)
    R = np.linalg.cholesky(G).conj().T  # |v|_G = |R v|
    return R, np.linalg.inv(R)


def orbit_logs(sys, lift, x, t, split_x=None, split_y=None, fiber_metric=None, horizon=20.0):
    """Logarithms of the cocycle factors at (x, t).

    ``split_x``/``split_y`` are optional precomputed splitting arrays (one
    row) at x and at phi^t x.
    """
    Jf, Jb, y, logdet = _forward_backward(sys, x, t)
    if split_x is None:
        split_x = {k: v[0] for k, v in splitting_arrays(sys, [x.base_array], horizon).items()}
    if split_y is None:
        split_y = {k: v[0] for k, v in splitting_arrays(sys, [y.base_array], horizon).items()}
    T = parallel_transport(lift, sys, x, t).matrix
    mf = _metric_factor(fiber_metric)
    if mf is not None:
        T = mf[0] @ T @ mf[1]
    log_T = math.log(np.linalg.norm(T, 2))
    log_stable = -math.log(_sigma_min(Jb, split_y["es"]))
    log_unstable_inv = -math.log(_sigma_min(Jf, split_x["eu"]))
    return OrbitLogs(0.5 * logdet, log_T, log_stable, log_unstable_inv)


def _check_side(side, m):
    if side == "u" and m > 0:
        raise ValueError("side u requires m <= 0")
    if side == "s" and m < 0:
        raise ValueError("side s requires m >= 0")
    if side not in ("u", "s"):
        raise ValueError("side must be 'u' or 's'")


def log_growth_functional(sys, lift, x, t, side, m, splitting=None, fiber_metric=None, horizon=20.0):
    """F(x, t) for the given side and weight.

    ``splitting`` (a :class:`~ruelle_lab.flows.Splitting` at x) is optional;
    the endpoint splitting is always computed here.
    """
    _check_side(side, m)
    if t <= 0:
        raise ValueError("t must be positive")
    split_x = None
    if splitting is not None:
        split_x = {"eu": splitting.eu_basis, "es": splitting.es_basis}
    logs = orbit_logs(sys, lift, x, t, split_x, None, fiber_metric, horizon)
    return _combine(logs, side, m)


def _combine(logs, side, m):
    base = logs.half_log_det + logs.log_transport
    if side == "u":
        return base - m * logs.log_stable
    return base + m * logs.log_unstable_inv


# ---------------------------------------------------------------------------
# extrapolation
# ---------------------------------------------------------------------------


def fit_rate(horizons, values):
    """Fit values = r + c/t over the top max(3, ceil(n/2)) horizons.

    Returns (r, c, residual) with residual the spread of r over
    leave-one-out refits.
    """
    h = np.asarray(horizons, dtype=float)
    v = np.asarray(values, dtype=float)
    if h.size < 3:
        raise ValueError("need at least three horizons")
    if np.any(np.diff(h) <= 0):
        raise ValueError("horizons must be strictly increasing")
    top = max(3, math.ceil(h.size / 2))
    h, v = h[-top:], v[-top:]

    def lsq(hh, vv):
        M = np.column_stack([np.ones_like(hh), 1.0 / hh])
        return np.linalg.lstsq(M, vv, rcond=None)[0]

    r, c = lsq(h, v)
    loo = [lsq(np.delete(h, i), np.delete(v, i))[0] for i in range(h.size)]
    return float(r), float(c), float(max(loo) - min(loo))


@dataclass(frozen=True)
class GrowthFactorEstimate:
    side: str
    m: float
    horizons: tuple
    sup_rates: tuple
    extrapolated_rate: float
    residual: float
    sample_count: int
    seed: int = 0
    slope: float = 0.0

    def to_dict(self):
        return {
            "side": self.side,
            "m": self.m,
            "horizons": list(self.horizons),
            "sup_rates": list(self.sup_rates),
            "extrapolated_rate": self.extrapolated_rate,
            "residual": self.residual,
            "samples": self.sample_count,
            "seed": self.seed,
        }


@dataclass
class _LogTable:
    """OrbitLogs for every (horizon, sample) pair, shared between estimators."""

    horizons: tuple
    logs: list = field(default_factory=list)  # logs[i][j] for horizon i, sample j


def collect_logs(sys, lift, horizons=DEFAULT_HORIZONS, samples=64, fiber_samples=4, seed=0,
                 fiber_metric=None, horizon=20.0, points=None):
    pts = points if points is not None else sample_points(sys, samples, fiber_samples, seed)
    bases = np.array([p.base_array for p in pts])
    sx = splitting_arrays(sys, bases, horizon)
    table = _LogTable(tuple(float(h) for h in horizons))
    for t in table.horizons:
        walks = [orbit_pieces(sys, p, t)[1] for p in pts]
        sy = splitting_arrays(sys, np.array([w.base_array for w in walks]), horizon)
        row = []
        for j, p in enumerate(pts):
            row.append(
                orbit_logs(
                    sys, lift, p, t,
                    {k: v[j] for k, v in sx.items()},
                    {k: v[j] for k, v in sy.items()},
                    fiber_metric,
                )
            )
        table.logs.append(row)
    return table, len(pts)


def _estimate_from_table(table, count, side, m, seed, ceiling):
    sup_rates = tuple(
        max(_combine(lg, side, m) for lg in row) / t for t, row in zip(table.horizons, table.logs)
    )
    if not all(np.isfinite(sup_rates)):
        raise NonConvergence("non-finite sup rate")
    r, c, res = fit_rate(table.horizons, sup_rates)
    if ceiling is not None and res > ceiling:
        raise NonConvergence(f"extrapolation residual {res:.3e} exceeds ceiling {ceiling:.3e}")
    return GrowthFactorEstimate(side, float(m), table.horizons, sup_rates, r, res, count, seed, c)


def estimate_growth_factor(sys, lift, side, m, horizons=DEFAULT_HORIZONS, samples=64, seed=0,
                           fiber_samples=4, residual_ceiling=0.05, fiber_metric=None):
    _check_side(side, m)
    if len(horizons) < 3:
        raise ValueError("need at least three horizons")
    table, count = collect_logs(sys, lift, horizons, samples, fiber_samples, seed, fiber_metric)
    return _estimate_from_table(table, count, side, m, seed, residual_ceiling)


@dataclass(frozen=True)
class ThresholdResult:
    threshold: float
    estimate_u: GrowthFactorEstimate
    estimate_s: GrowthFactorEstimate

    def to_dict(self):
        return {
            "threshold": self.threshold,
            "estimate_u": self.estimate_u.to_dict(),
            "estimate_s": self.estimate_s.to_dict(),
        }


def threshold_halfplane(sys, lift, m_u, m_s, horizons=DEFAULT_HORIZONS, samples=64, seed=0,
                        fiber_samples=4, residual_ceiling=0.05):
    """max(r_u(m_u), r_s(m_s)) with both underlying estimates."""
    if not m_u <= 0 <= m_s:
        raise ValueError("need m_u <= 0 <= m_s")
    table, count = collect_logs(sys, lift, horizons, samples, fiber_samples, seed)
    eu = _estimate_from_table(table, count, "u", m_u, seed, residual_ceiling)
    es = _estimate_from_table(table, count, "s", m_s, seed, residual_ceiling)
    return ThresholdResult(max(eu.extrapolated_rate, es.extrapolated_rate), eu, es)


# ---------------------------------------------------------------------------
# contraction and transport growth
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContractionRates:
    theta_u: float
    theta_s: float
    residual_u: float
    residual_s: float

    def to_dict(self):
        return {
            "theta_u": self.theta_u,
            "theta_s": self.theta_s,
            "residual_u": self.residual_u,
            "residual_s": self.residual_s,
        }


def _rates_from_table(table):
    hs = table.horizons
    sup_s = [max(lg.log_stable for lg in row) / t for t, row in zip(hs, table.logs)]
    sup_u = [max(lg.log_unstable_inv for lg in row) / t for t, row in zip(hs, table.logs)]
    rs, _, res_s = fit_rate(hs, sup_s)
    ru, _, res_u = fit_rate(hs, sup_u)
    return ContractionRates(-ru, -rs, res_u, res_s)


def contraction_rates(sys, horizons=DEFAULT_HORIZONS, samples=64, seed=0, fiber_samples=4,
                      residual_ceiling=0.05):
    """Fitted decay rates of ||dphi^t|E_s|| and ||dphi^-t|E_u||."""
    from .lifts import BundleLift

    table, _ = collect_logs(sys, BundleLift.scalar(0.0), horizons, samples, fiber_samples, seed)
    rates = _rates_from_table(table)
    if residual_ceiling is not None and max(rates.residual_u, rates.residual_s) > residual_ceiling:
        raise NonConvergence("contraction-rate extrapolation did not settle")
    return rates


@dataclass(frozen=True)
class TransportGrowth:
    """||T^t(x)|| <= prefactor * exp(rate * t) on the sampled (x, t)."""

    rate: float
    prefactor: float
    residual: float

    def tail_bound(self, re_lambda, t_max):
        gap = re_lambda - self.rate
        if gap <= 0:
            return math.inf
        return self.prefactor * math.exp(-gap * t_max) / gap

    def to_dict(self):
        return {"rate": self.rate, "prefactor": self.prefactor, "residual": self.residual}


def _growth_from_table(table):
    hs = table.horizons
    sup = [max(lg.half_log_det + lg.log_transport for lg in row) / t for t, row in zip(hs, table.logs)]
    r, _, res = fit_rate(hs, sup)
    rate = r + res
    pref = max(
        1.0,
        max(
            math.exp(lg.half_log_det + lg.log_transport - rate * t)
            for t, row in zip(hs, table.logs)
            for lg in row
        ),
    )
    return TransportGrowth(rate, pref, res)


def transport_growth(sys, lift, horizons=DEFAULT_HORIZONS, samples=64, seed=0, fiber_samples=4):
    """Fitted C_X (rate) and the smallest prefactor valid on the samples."""
    table, _ = collect_logs(sys, lift, horizons, samples, fiber_samples, seed)
    return _growth_from_table(table)


@dataclass(frozen=True)
class BoundCheck:
    side: str
    m: float
    rate: float
    bound: float
    residual: float
    holds: bool

    def to_dict(self):
        return dict(self.__dict__)


def check_rus_bound(sys, lift, ms=(0.0, -1.0, -2.0), horizons=DEFAULT_HORIZONS, samples=64, seed=0,
                    fiber_samples=4, side="u", slack=1e-12):
    """r_u(m) <= C_1 + theta_s m (side u) or r_s(m) <= C_1 - theta_u m (side s),
    with C_1 the fitted transport growth rate, checked up to residuals."""
    table, count = collect_logs(sys, lift, horizons, samples, fiber_samples, seed)
    growth = _growth_from_table(table)
    rates = _rates_from_table(table)
    c1 = growth.rate - growth.residual
    out = []
    for m in ms:
        mm = m if side == "u" else abs(m)
        est = _estimate_from_table(table, count, side, mm, seed, None)
        bound = c1 + rates.theta_s * mm if side == "u" else c1 - rates.theta_u * mm
        res = est.residual + growth.residual + abs(mm) * max(rates.residual_u, rates.residual_s)
        out.append(BoundCheck(side, mm, est.extrapolated_rate, bound, res,
                              est.extrapolated_rate <= bound + res + slack))
    return out


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------


def cat_expansion_rate(matrix=((2, 1), (1, 1)), tau=1.0):
    """log |lambda_+| / tau for a constant roof."""
    ev = np.linalg.eigvals(np.asarray(matrix, dtype=float))
    return float(math.log(np.abs(ev).max()) / tau)


def scalar_threshold(theta_u, theta_s, m_u, m_s):
    """Volume-preserving scalar case: max(theta_s m_u, -theta_u m_s)."""
    return max(theta_s * m_u, -theta_u * m_s)


def perp_forms_threshold(n, k, m_u, m_s):
    """Constant-curvature model on perpendicular k-forms."""
    return max(m_u, -m_s) + min(k, 2 * n - k)


def perp_forms_transport_rate(n, k):
    return float(min(k, 2 * n - k))
