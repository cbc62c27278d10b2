"""Correlations, the resolvent in its convergent half-plane, and pole scans.

Observables are trigonometric polynomials on a constant-roof suspension.
Pulling back by the flow sends base frequency m to (A^-n)^T m and shifts the
fiber phase, so correlations reduce to finite frequency bookkeeping:

    rho(t) = (1/vol) int <e^{-tX} f, g>

with t = n tau + r.  On s in [r, tau) the orbit has crossed n roofs, on
s in [0, r) it has crossed n + 1.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import AAA
from scipy.linalg import expm

from .errors import FitDiverged, OutsideConvergence, UnsupportedObservable
from .flows import PhasePoint, orbit_pieces
from .lifts import BundleLift, LiftKind, _base_coords
from .thresholds import sample_points, transport_growth
from .trig import TWO_PI, TrigField, continuous_on_suspension

TIME_CEILING = 1e3


# ---------------------------------------------------------------------------
# observables and correlations
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ObservablePair:
    f: TrigField
    g: TrigField
    lift: BundleLift = field(default_factory=BundleLift.scalar)

    def __post_init__(self):
        if not isinstance(self.f, TrigField) or not isinstance(self.g, TrigField):
            raise UnsupportedObservable("observables must be trigonometric polynomials")
        if self.f.shape != self.g.shape:
            raise UnsupportedObservable("f and g take values in different fibers")


def _require_bookkeeping(sys, lift):
    if not sys.is_cat or not sys.roof.is_constant:
        raise UnsupportedObservable("exact correlations need a constant-roof suspension")
    if sys.time_sign != 1:
        raise UnsupportedObservable("exact correlations are implemented for the forward flow")
    A = lift.connection_field(sys)
    if lift.gluing.mode != "identity" or not A.is_constant():
        raise UnsupportedObservable("exact correlations need a constant connection with trivial gluing")
    return A.constant_term() if A.n_terms else np.zeros(A.shape, dtype=complex)


def _as_vectors(F):
    """Coefficients as (J, n) arrays (scalars become n = 1)."""
    return F.coeffs.reshape(F.n_terms, -1)


def _fiber_integral(dk, a, b, tau):
    """(1/tau) int_a^b exp(2 pi i dk s / tau) ds, vectorized in dk."""
    dk = np.asarray(dk)
    out = np.empty(dk.shape, dtype=complex)
    zero = dk == 0
    out[zero] = (b - a) / tau
    nz = ~zero
    w = TWO_PI * dk[nz] / tau
    out[nz] = (np.exp(1j * w * b) - np.exp(1j * w * a)) / (1j * w * tau)
    return out


def _pullback_freqs(sys, m, n):
    """(A^-n)^T m, the base frequency of f o (base map)^-n, in exact integers."""
    B = sys._eigen["A_inv"].astype(object)
    out = np.asarray(m).astype(object)
    for _ in range(n):
        out = out @ B  # row form of (A^-1)^T m
    return out


def correlation(pair, sys, t):
    """Exact rho_{f,g}(t) by frequency bookkeeping."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    A = _require_bookkeeping(sys, pair.lift)
    tau = sys.roof.tau0
    n, r = divmod(float(t), tau)
    n = int(n)
    E = expm(-t * A) if A.size else np.ones((1, 1))
    cf = _as_vectors(pair.f) @ E.T  # e^{-tA} applied to each coefficient
    cg = _as_vectors(pair.g)
    fk, gk = pair.f.freqs[:, 2], pair.g.freqs[:, 2]
    total = 0.0 + 0.0j
    for crossings, (a, b) in ((n, (r, tau)), (n + 1, (0.0, r))):
        if b <= a:
            continue
        mf = _pullback_freqs(sys, pair.f.freqs[:, :2], crossings)
        match = np.all(mf[:, None, :] == pair.g.freqs[None, :, :2], axis=2)
        i, j = np.nonzero(match)
        if i.size == 0:
            continue
        phase = np.exp(-1j * TWO_PI * fk[i] * r / tau)
        fib = _fiber_integral(fk[i] - gk[j], a, b, tau)
        inner = np.einsum("pn,pn->p", cf[i], cg[j].conj())
        total += np.sum(inner * phase * fib)
    return complex(total)


def _next_prime(n):
    def is_prime(k):
        return k > 1 and all(k % p for p in range(2, int(k**0.5) + 1))

    while not is_prime(n):
        n += 1
    return n


def _aliasing_free(sys, pair, n_max, N):
    fm, gm = pair.f.freqs[:, :2], pair.g.freqs[:, :2]
    for crossings in range(n_max + 2):
        diff = _pullback_freqs(sys, fm, crossings)[:, None, :] - gm[None, :, :]
        aliased = np.all(diff % N == 0, axis=2) & np.any(diff != 0, axis=2)
        if aliased.any():
            return False
    return True


def correlation_quadrature(pair, sys, t, N=101, fiber_nodes=16):
    """rho(t) by direct quadrature over an N x N base grid evolved exactly
    (integer arithmetic mod N) times Gauss-Legendre nodes on [0, r) and
    [r, tau).  N is bumped to the next prime whenever a nonzero frequency
    difference aliases to zero on the grid."""
    A = _require_bookkeeping(sys, pair.lift)
    tau = sys.roof.tau0
    n, r = divmod(float(t), tau)
    n = int(n)
    N = _next_prime(N)
    while not _aliasing_free(sys, pair, n, N):
        N = _next_prime(N + 1)
    E = expm(-t * A) if A.size else np.ones((1, 1))
    ij = np.stack(np.meshgrid(np.arange(N), np.arange(N), indexing="ij"), -1).reshape(-1, 2)
    x = ij / N
    Ainv = sys._eigen["A_inv"]
    gl_x, gl_w = np.polynomial.legendre.leggauss(fiber_nodes)
    total = 0.0 + 0.0j
    for crossings, (a, b) in ((n, (r, tau)), (n + 1, (0.0, r))):
        if b <= a:
            continue
        back = ij.copy()
        for _ in range(crossings):
            back = back @ Ainv.T % N
        xb = back / N
        s = a + (b - a) * (gl_x + 1) / 2
        w = gl_w * (b - a) / 2
        P = x.shape[0]
        sv = np.repeat(s, P)
        shift = -r + (tau if crossings == n + 1 else 0.0)
        fv = pair.f(np.tile(xb, (s.size, 1)), sv + shift, tau).reshape(s.size, P, -1) @ E.T
        gv = pair.g(np.tile(x, (s.size, 1)), sv, tau).reshape(s.size, P, -1)
        total += np.sum(w[:, None, None] * fv * gv.conj()) / N**2
    return complex(total / tau)


def correlation_trace(pair, sys, times):
    return np.array([correlation(pair, sys, t) for t in times])


def write_trace_csv(path, times, values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "re", "im"])
        for t, v in zip(times, values):
            w.writerow([repr(float(t)), repr(float(v.real)), repr(float(v.imag))])


# ---------------------------------------------------------------------------
# Laplace transform of correlations
# ---------------------------------------------------------------------------


def _support_window(sys, pair, max_crossings=200):
    """Largest crossing count at which some nonzero base frequency of f still
    pulls back onto a frequency of g."""
    fm = pair.f.freqs[:, :2]
    nz = np.any(fm != 0, axis=1)
    if not nz.any():
        return -1
    last = -1
    bound = int(np.abs(pair.g.freqs[:, :2]).max(initial=0))
    prev = None
    for crossings in range(max_crossings + 1):
        pf = _pullback_freqs(sys, fm[nz], crossings)
        size = np.array([max(abs(int(v)) for v in row) for row in pf])
        norm2 = np.array([sum(int(v) ** 2 for v in row) for row in pf])
        if prev is not None and np.all(size > bound) and np.all(norm2 > prev):
            # the norm along a hyperbolic orbit is unimodal, so once every
            # frequency is growing and outside g's support it never returns
            break
        prev = norm2
        match = np.all(pf[:, None, :] == pair.g.freqs[None, :, :2], axis=2)
        if match.any():
            last = crossings
    return last


def laplace_transform(pair, sys, lam, nodes=32):
    """F(lambda) = int_0^inf e^{-lambda t} rho(t) dt.

    The part of rho coming from zero base frequency is a finite sum of
    exponentials and is transformed in closed form; the remainder vanishes
    after finitely many roof crossings and is integrated by Gauss-Legendre
    on each roof interval.
    """
    A = _require_bookkeeping(sys, pair.lift)
    tau = sys.roof.tau0
    n = pair.f.shape[0] if pair.f.shape else 1
    Amat = A if A.size else np.zeros((1, 1))
    lam = complex(lam)
    cf, cg = _as_vectors(pair.f), _as_vectors(pair.g)
    f0 = np.all(pair.f.freqs[:, :2] == 0, axis=1)
    g0 = np.all(pair.g.freqs[:, :2] == 0, axis=1)
    total = 0.0 + 0.0j
    for i in np.nonzero(f0)[0]:
        k = pair.f.freqs[i, 2]
        for j in np.nonzero(g0)[0]:
            if pair.g.freqs[j, 2] != k:
                continue
            M = (lam + 1j * TWO_PI * k / tau) * np.eye(n) + Amat
            total += cg[j].conj() @ np.linalg.solve(M, cf[i])
    last = _support_window(sys, pair)
    if last >= 0:
        fnz = TrigField(pair.f.freqs[~f0], pair.f.coeffs[~f0], pair.f.shape)
        sub = ObservablePair(fnz, pair.g, pair.lift)
        x, w = np.polynomial.legendre.leggauss(nodes)
        for c in range(last + 1):
            ts = c * tau + tau * (x + 1) / 2
            vals = np.array([correlation(sub, sys, t) for t in ts])
            total += np.sum(w * tau / 2 * np.exp(-lam * ts) * vals)
    return complex(total)


# ---------------------------------------------------------------------------
# resolvent
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ResolventResult:
    points: list
    values: np.ndarray  # (P, n)
    lam: complex
    T_max: float
    tail_bound: float
    growth_rate: float


def _section_values(f, sys, bases, s):
    tau = sys.roof(bases) if sys.is_cat else np.ones(len(s))
    return f(bases, s, tau).reshape(len(s), -1)


def _koopman_along(lift, sys, f, x, T_max, nodes):
    """GL nodes/weights on [0, T_max] split at roof crossings of the backward
    orbit, with (e^{-tX} f)(x) at every node."""
    field_ = lift.connection_field(sys)
    n = lift.rank
    gl_x, gl_w = np.polynomial.legendre.leggauss(nodes)
    pieces, _ = orbit_pieces(sys, x, -T_max)
    U = np.eye(n, dtype=complex)  # T^t(phi^-t x) at the start of the current piece
    t_acc = 0.0
    all_t, all_w, all_v = [], [], []
    generic = field_.has_fiber_dependence()
    for p in pieces:
        if p.jac is not None:
            G = lift.gluing.matrix(np.linalg.inv(p.jac))
            if G is not None:
                U = U @ G
            continue
        dur = -p.ds * sys.time_sign
        if dur <= 0:
            continue
        taus = dur * (gl_x + 1) / 2
        wts = gl_w * dur / 2
        base = p.base
        svals = p.s0 - sys.time_sign * taus
        coords = np.repeat(_base_coords(sys, base), nodes, axis=0)
        fv = _section_values(f, sys, coords, svals) if sys.is_cat else f(coords, svals, 1.0).reshape(nodes, -1)
        if field_.n_terms == 0:
            vals = fv @ U.T
            U_end = U
        elif not generic:
            tau_roof = sys.roof_at(base) if sys.is_cat else 1.0
            Aj = field_(_base_coords(sys, base), [p.s0], tau_roof)[0]
            P = expm(-taus[:, None, None] * Aj[None])
            vals = np.einsum("ij,pjk,pk->pi", U, P, fv)
            U_end = U @ expm(-dur * Aj)
        else:
            from .lifts import parallel_transport

            vals = np.empty_like(fv)
            for q, (tq, sq) in enumerate(zip(taus, svals)):
                y = PhasePoint(base, sq)
                vals[q] = U @ parallel_transport(lift, sys, y, tq).matrix @ fv[q]
            U_end = U @ parallel_transport(lift, sys, PhasePoint(base, p.s0 + p.ds), dur).matrix
        all_t.append(t_acc + taus)
        all_w.append(wts)
        all_v.append(vals)
        U = U_end
        t_acc += dur
    return np.concatenate(all_t), np.concatenate(all_w), np.concatenate(all_v)


def choose_T_max(growth, re_lam, tol, scale=1.0, ceiling=TIME_CEILING):
    gap = re_lam - growth.rate
    t = math.log(max(growth.prefactor * scale / (tol * gap), 1.0)) / gap
    return min(max(t, 1.0), ceiling)


def resolvent_apply(lift, sys, f, lam, points=None, T_max=None, nodes=32, tol=1e-12, margin=0.0,
                    growth=None):
    """R(lambda) f = int_0^T_max e^{-lambda t} e^{-tX} f dt at the given points,
    with the analytic tail bound C_1 |f|_inf e^{(C_X - Re lambda) T_max} / (Re lambda - C_X)."""
    lam = complex(lam)
    growth = growth or transport_growth(sys, lift, samples=8, fiber_samples=2)
    if lam.real <= growth.rate + margin:
        raise OutsideConvergence(
            f"Re(lambda) = {lam.real:g} is not above the transport growth rate {growth.rate:g} + {margin:g}"
        )
    points = points if points is not None else sample_points(sys, 16, 4, 0)
    fsup = max(f.coefficient_bound(), 1e-300)
    if T_max is None:
        T_max = choose_T_max(growth, lam.real, tol, fsup)
    T_max = min(float(T_max), TIME_CEILING)
    out = []
    for x in points:
        ts, ws, vals = _koopman_along(lift, sys, f, x, T_max, nodes)
        out.append(np.sum((ws * np.exp(-lam * ts))[:, None] * vals, axis=0))
    tail = fsup * growth.tail_bound(lam.real, T_max)
    return ResolventResult(points, np.array(out), lam, T_max, tail, growth.rate)


def generator_on_section(lift, sys, f):
    """(X + A) f for constant-roof suspensions, as a trigonometric field."""
    if sys.is_cat and not sys.roof.is_constant:
        raise UnsupportedObservable("closed-form X f needs a constant roof")
    tau = sys.roof.tau0 if sys.is_cat else 1.0
    Xf = f.fiber_derivative(tau).scale(sys.time_sign)
    A = lift.connection_field(sys)
    if lift.kind is LiftKind.SCALAR:
        Af = TrigField(lift.potential.freqs, lift.potential.coeffs, ()).apply(f)
    else:
        Af = A.apply(f)
    return Xf + Af


def check_resolvent_identity(lift, sys, f, lam, points=None, nodes=32, tol=1e-12, growth=None,
                             require_continuous=True):
    """sup over the points of |R(lambda)(X + lambda) f - f|."""
    if lift.gluing.mode != "identity":
        raise UnsupportedObservable("the identity is checked for lifts with trivial gluing")
    if require_continuous and not continuous_on_suspension(f):
        raise UnsupportedObservable("section does not glue continuously across the roof")
    g = generator_on_section(lift, sys, f) + f.scale(complex(lam))
    res = resolvent_apply(lift, sys, g, lam, points, nodes=nodes, tol=tol, growth=growth)
    bases = np.array([p.base_array for p in res.points])
    s = np.array([p.s for p in res.points])
    fv = _section_values(f, sys, bases, s)
    return float(np.abs(res.values - fv).max()), res


# ---------------------------------------------------------------------------
# pole scans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContourSpec:
    re: float = 0.5
    im_max: float = 12.0
    n: int = 121
    re_min: float = -1.0  # scanned strip is re_min <= Re(lambda) < re

    def samples(self, shift=0.0):
        return (self.re + shift) + 1j * np.linspace(-self.im_max, self.im_max, self.n)


@dataclass(eq=False)
class ResonanceReport:
    lambda_samples: np.ndarray
    values: np.ndarray
    poles: list
    residues: list
    fit_error: float
    method_params: dict

    def to_dict(self):
        return {
            "poles": [[p.real, p.imag] for p in self.poles],
            "residues": [[r.real, r.imag] for r in self.residues],
            "fit_error": self.fit_error,
            "method_params": self.method_params,
            "lambda_samples": [[z.real, z.imag, v.real, v.imag] for z, v in zip(self.lambda_samples, self.values)],
        }


def pole_scan(pair, sys, contour=None, degree=12, residue_floor=1e-6, fit_ceiling=1e-6, shift=0.0):
    """Rational (AAA) fit of the Laplace transform on a vertical line and the
    poles it finds in the strip; every third sample is held out."""
    contour = contour or ContourSpec()
    z = contour.samples(shift)
    F = np.array([laplace_transform(pair, sys, lam) for lam in z])
    params = {
        "degree": degree,
        "contour": {"re": contour.re + shift, "im_max": contour.im_max, "n": contour.n,
                    "re_min": contour.re_min},
        "residue_floor": residue_floor,
        "holdout": "every third sample",
    }
    scale = float(np.abs(F).max())
    if scale == 0.0:
        return ResonanceReport(z, F, [], [], 0.0, params)
    hold = np.zeros(z.size, dtype=bool)
    hold[1::3] = True
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = AAA(z[~hold], F[~hold], max_terms=degree + 1, rtol=1e-13)
    params["aaa_converged"] = not any("converge" in str(c.message) for c in caught)
    err = float(np.abs(fit(z[hold]) - F[hold]).max() / scale)
    if err > fit_ceiling:
        raise FitDiverged(f"held-out relative error {err:.3e} exceeds {fit_ceiling:.1e}")
    poles, residues = [], []
    for p, r in zip(fit.poles(), fit.residues()):
        inside = contour.re_min <= p.real < contour.re + shift and abs(p.imag) <= contour.im_max
        if inside and abs(r) > residue_floor:
            poles.append(complex(p))
            residues.append(complex(r))
    order = np.argsort([abs(p.imag) for p in poles], kind="stable")
    return ResonanceReport(
        z, F, [poles[i] for i in order], [residues[i] for i in order], err, params
    )
