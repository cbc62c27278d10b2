"""Symbol-level constructions: the lifted transport group on matrix symbols,
the escape weight and the threshold multipliers.

The lifted group acts on End-valued functions on the cotangent bundle by

    e^{tH_X} w (x, xi) = |det dphi^t(x)| T^t(x)^* w(e^{tH_p}(x, xi)) T^t(x)

and its generator is H_X w = H_p w + (Div X) w - A^* w - w A.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.stats import qmc

from .errors import BracketInvalid, MonotonicityViolation, ThresholdViolated
from .flows import (
    CotangentPoint,
    PhasePoint,
    cotangent_flow,
    log_abs_det_jacobian,
    orbit_pieces,
    splitting_arrays,
    subspace_distance,
)
from .lifts import _base_coords, _segment_propagator, parallel_transport
from .thresholds import sample_points
from .trig import TrigField, _complex_to_json


# ---------------------------------------------------------------------------
# matrix symbols and the lifted group
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MatrixSymbol:
    """w(x, xi) = |xi|^{2m} F(x), F a matrix-valued trigonometric field.

    Homogeneity holds by the evaluation rule, not by storage.
    """

    field: TrigField
    m: float = 0.0

    @classmethod
    def identity(cls, n, m=0.0):
        return cls(TrigField.constant(np.eye(n, dtype=complex)), m)

    def _F(self, sys, x):
        tau = sys.roof_at(x.base_array) if sys.is_cat else 1.0
        return self.field(_base_coords(sys, x.base_array), [x.s], tau)[0]

    def evaluate(self, sys, q):
        return math.exp(2 * self.m * q.log_norm) * self._F(sys, q.x)

    def hp(self, sys, q):
        """H_p w at q, in closed form."""
        x = q.x
        tau = sys.roof_at(x.base_array) if sys.is_cat else 1.0
        coords = _base_coords(sys, x.base_array)
        F = self.field(coords, [x.s], tau)[0]
        dF = sys.time_sign * self.field.d_fiber(coords, [x.s], tau)[0]
        xi = math.exp(q.log_scale) * q.xi
        L = sys.generator_linearization()
        nrm2 = float(xi @ xi)
        rate = -2.0 * self.m * nrm2 ** (self.m - 1) * float(xi @ L @ xi)
        return nrm2**self.m * dF + rate * F


def lifted_transport(lift, sys, w, q, t):
    """e^{tH_X} w evaluated at q."""
    T = parallel_transport(lift, sys, q.x, t).matrix
    qt = cotangent_flow(sys, q, t)
    det = math.exp(log_abs_det_jacobian(sys, q.x, t))
    return det * T.conj().T @ w.evaluate(sys, qt) @ T


def generator_apply(lift, sys, w, q):
    """H_X w (q) = H_p w + (Div X) w - A^* w - w A."""
    A = lift.connection_at(sys, q.x)
    W = w.evaluate(sys, q)
    return w.hp(sys, q) + sys.divergence() * W - A.conj().T @ W - W @ A


def generator_check(lift, sys, w, q, h_fd=1e-4):
    """Entrywise max deviation between the central difference of the lifted
    group at t = 0 and the closed-form generator."""
    fd = (lifted_transport(lift, sys, w, q, h_fd) - lifted_transport(lift, sys, w, q, -h_fd)) / (2 * h_fd)
    return float(np.abs(fd - generator_apply(lift, sys, w, q)).max())


# ---------------------------------------------------------------------------
# weight
# ---------------------------------------------------------------------------


def smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)


def bump(r, r1, r2):
    """1 on [0, r1], 0 on [r2, inf), quintic C^2 transition in between."""
    return 1.0 - smoothstep((np.asarray(r) - r1) / (r2 - r1))


@dataclass(frozen=True)
class BumpSpec:
    r_inner: float = 0.1
    r_outer: float = 0.2

    def __post_init__(self):
        if not 0 < self.r_inner < self.r_outer:
            raise ValueError("need 0 < r_inner < r_outer")


@dataclass(frozen=True)
class GridSpec:
    n_base: int = 16
    n_fiber: int = 4
    n_dir: int = 152
    include_exact: bool = True
    seed: int = 0

    @property
    def size(self):
        return self.n_base * self.n_fiber * (self.n_dir + (6 if self.include_exact else 0))


def sphere_directions(n, d, seed=0):
    """Deterministic, roughly uniform unit vectors in R^d."""
    if n == 0:
        return np.zeros((0, d))
    if d == 3:
        i = np.arange(n) + 0.5
        z = 1 - 2 * i / n
        phi = i * math.pi * (3 - math.sqrt(5))
        r = np.sqrt(1 - z * z)
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    v = np.random.default_rng(seed).standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@dataclass(eq=False)
class WeightField:
    bases: np.ndarray  # (P, 2)
    s: np.ndarray  # (P,)
    xi: np.ndarray  # (P, d) unit covectors
    values: np.ndarray  # (P,)
    hp_values: np.ndarray  # (P,)
    params: tuple
    bump: BumpSpec
    T_avg: float
    max_Hp_m: float
    dist_u: np.ndarray
    dist_s: np.ndarray
    inner_radius_u: float
    inner_radius_s: float
    checks: dict = field(default_factory=dict)

    @property
    def size(self):
        return self.values.size

    @property
    def grid(self):
        return [
            CotangentPoint(PhasePoint(b, s), x, True)
            for b, s, x in zip(self.bases, self.s, self.xi)
        ]

    def to_dict(self):
        m_u, m_0, m_s = self.params
        return {
            "params": {"m_u": m_u, "m_0": m_0, "m_s": m_s},
            "bump": {"r_inner": self.bump.r_inner, "r_outer": self.bump.r_outer},
            "T_avg": self.T_avg,
            "max_Hp_m": self.max_Hp_m,
            "inner_radius_u": self.inner_radius_u,
            "inner_radius_s": self.inner_radius_s,
            "checks": self.checks,
            "grid_size": int(self.size),
        }

    def rows(self):
        for i in range(self.size):
            yield [*self.bases[i], self.s[i], *self.xi[i], self.values[i], self.hp_values[i]]


def _cat_orbit_data(sys, x, n_cross, direction, split_fn):
    """Dual-coordinate crossing factors and dual frames along an orbit.

    Returns (roofs, dual_rows, factors) where the orbit bases are
    y_0 = x, y_j = A^{-j} x (backward) or A^j x (forward); ``dual_rows[j]``
    is the (3, 3) matrix with rows e_u*, e_s*, e_0* at y_j and
    ``factors[j]`` (j >= 1) the diagonal factor mapping dual coordinates at
    y_{j-1} to those at y_j.
    """
    A = sys.base_matrix.astype(float)
    A_inv = sys._eigen["A_inv"].astype(float)
    ys = [np.asarray(x, dtype=float)]
    for _ in range(n_cross):
        ys.append(np.mod((A_inv if direction < 0 else A) @ ys[-1], 1.0))
    ys = np.array(ys)
    sp = split_fn(ys)
    duals = np.concatenate([sp["dual_u"], sp["dual_s"], sp["dual_0"]], axis=1)  # (K, 3, 3)
    vecs = np.concatenate([sp["es"], sp["eu"], sp["e0"]], axis=2)  # pairing partners
    factors = np.ones((n_cross + 1, 3))
    for j in range(1, n_cross + 1):
        if direction < 0:
            M = sys.crossing_jacobian(ys[j]).T
        else:
            M = np.linalg.inv(sys.crossing_jacobian(ys[j - 1])).T
        for a in range(3):
            img = M @ duals[j - 1, a]
            factors[j, a] = (img @ vecs[j, :, a]) / (duals[j, a] @ vecs[j, :, a])
    return sys.roof(ys), duals, factors


def _interval_integral(starts, ends, vals, lo, hi):
    """sum_j vals_j |[starts_j, ends_j) cap [lo, hi)|, vectorized over points."""
    ov = np.clip(np.minimum(ends, hi[:, None]) - np.maximum(starts, lo[:, None]), 0.0, None)
    return np.sum(ov * vals, axis=1)


def _cat_weight_terms(sys, base, s, coeffs, bump_spec, T, h, split_fn):
    """chi_u, chi_s and their flow derivatives (central differences) at the
    points (base, s_i, coeffs_i) sharing one base point, integrated exactly."""
    roof_x = float(sys.roof(base))
    n_cross = int(math.ceil((2 * T + 2 * h + roof_x) / sys.roof.lower_bound)) + 2
    out = {}
    for key, direction, target in (("u", -1, 0), ("s", 1, 1)):
        roofs, duals, factors = _cat_orbit_data(sys, base, n_cross, direction, split_fn)
        cum = np.cumprod(factors, axis=0)  # (K+1, 3)
        # interval endpoints for each point: first piece, then full roofs
        first = s if direction < 0 else roof_x - s
        tail = np.concatenate([[0.0], np.cumsum(roofs[1:] if direction < 0 else roofs[1:])])
        starts = np.empty((s.size, n_cross + 1))
        starts[:, 0] = 0.0
        starts[:, 1:] = first[:, None] + tail[None, :-1]
        ends = np.empty_like(starts)
        ends[:, :-1] = starts[:, 1:]
        ends[:, -1] = np.inf
        # bump values on each interval
        c = coeffs[:, None, :] * cum[None, :, :]  # (P, K+1, 3)
        xi = np.einsum("pka,kad->pkd", c, duals)
        tgt = duals[:, target, :]  # (K+1, 3)
        nrm = np.linalg.norm(xi, axis=2)
        along = np.einsum("pkd,kd->pk", xi, tgt)
        dist = np.linalg.norm(xi - along[..., None] * tgt[None], axis=2) / nrm
        psi = bump(dist, bump_spec.r_inner, bump_spec.r_outer)
        P = s.size
        full = lambda a, b: _interval_integral(starts, ends, psi, np.full(P, a), np.full(P, b))
        chi = full(T, 2 * T) / T
        g_near, g_far = full(T - h, T + h), full(2 * T - h, 2 * T + h)
        if direction < 0:
            hp = (g_near - g_far) / (2 * h * T)
        else:
            hp = (g_far - g_near) / (2 * h * T)
        growth = np.max(np.abs(cum[:, [1 - target, 2]]) / np.abs(cum[:, [target]]))
        dist0 = dist[:, 0].copy()
        dist0[np.all(coeffs[:, [1 - target, 2]] == 0, axis=1)] = 0.0  # exact dual directions
        out[key] = (chi, hp, dist0, growth)
    return out


def _hyperbolic_weight_terms(sys, xi, bump_spec, T, h, panels):
    lam = np.diag(sys.generator_linearization())
    sp = splitting_arrays(sys, np.zeros((1, 2)))
    out = {}
    for key, sign, rows in (("u", -1.0, sp["dual_u"][0]), ("s", 1.0, sp["dual_s"][0])):

        def psi_at(t):
            # covector flow scales coordinate i by exp(-t lam_i)
            scale = np.exp(-sign * np.multiply.outer(t, lam))
            v = xi[:, None, :] * scale[None, :, :]
            return bump(subspace_distance(v, rows[None, None]), bump_spec.r_inner, bump_spec.r_outer)

        def simpson(a, b, n):
            n += n % 2
            t = np.linspace(a, b, n + 1)
            wts = np.ones(n + 1)
            wts[1:-1:2], wts[2:-1:2] = 4, 2
            return (psi_at(t) @ wts) * (b - a) / (3 * n)

        chi = simpson(T, 2 * T, int(panels * T)) / T
        g_near, g_far = simpson(T - h, T + h, 8), simpson(2 * T - h, 2 * T + h, 8)
        hp = (g_near - g_far) / (2 * h * T) if sign < 0 else (g_far - g_near) / (2 * h * T)
        dist0 = subspace_distance(xi, rows[None])
        out[key] = (chi, hp, dist0, math.exp(4 * T))
    return out


def build_weight(sys, params=(-2.0, 0.0, 2.0), bump_spec=None, T_avg=8.0, grid_spec=None,
                 h_fd=1e-3, tol=1e-8, panels_per_unit=128, horizon=20.0):
    """The escape weight m = (m_u - m_0) chi_u + (m_s - m_0) chi_s + m_0 on a
    cosphere grid, with H_p m from central differences along the flow.

    On suspensions the chart covector is constant between roof crossings, so
    the time averages are integrated exactly as piecewise-constant sums; the
    rate model uses composite Simpson.
    """
    m_u, m_0, m_s = (float(v) for v in params)
    if not m_u <= m_0 <= m_s:
        raise ValueError("need m_u <= m_0 <= m_s")
    bump_spec = bump_spec or BumpSpec()
    grid_spec = grid_spec or GridSpec()
    if T_avg <= h_fd:
        raise ValueError("T_avg must exceed the difference step")
    d = sys.dim
    hal = qmc.Halton(d=2, scramble=False)
    if grid_spec.seed:
        hal.fast_forward(grid_spec.seed)
    bases = hal.random(grid_spec.n_base)
    dirs = sphere_directions(grid_spec.n_dir, d, grid_spec.seed)
    split_fn = lambda ys: splitting_arrays(sys, ys, horizon)

    B, S, XI, CHI_U, CHI_S, HP_U, HP_S, DU, DS = ([] for _ in range(9))
    growth_u = growth_s = 1.0
    cond = 1.0
    for b in bases:
        sp = split_fn(b[None])
        D = np.concatenate([sp["dual_u"][0], sp["dual_s"][0], sp["dual_0"][0]], axis=0)
        cond = max(cond, np.linalg.cond(D))
        if sys.is_cat:
            gap_u = subspace_distance(D[0], D[1:][None])
            gap_s = subspace_distance(D[1], D[[0, 2]][None])
            if min(gap_u, gap_s) <= bump_spec.r_outer:
                raise ValueError("bump support reaches the opposite dual subspace")
        coeffs = np.linalg.solve(D.T, dirs.T).T if sys.is_cat else dirs.copy()
        ex = []
        if grid_spec.include_exact:
            k = sys.stable_dim
            if sys.is_cat:
                ex = [np.eye(3)[i] * sg for i in range(3) for sg in (1.0, -1.0)]
            else:
                ex = [D[i] * sg for i in (0, k, 2 * k) for sg in (1.0, -1.0)]
        if ex:
            coeffs = np.vstack([coeffs, np.array(ex)])
        tau = float(sys.roof(b)) if sys.is_cat else 1.0
        s_vals = tau * (np.arange(grid_spec.n_fiber) + 0.5) / grid_spec.n_fiber
        for s in s_vals:
            s_arr = np.full(coeffs.shape[0], s)
            if sys.is_cat:
                terms = _cat_weight_terms(sys, b, s_arr, coeffs, bump_spec, T_avg, h_fd, split_fn)
                xi = coeffs @ D
            else:
                xi = coeffs
                terms = _hyperbolic_weight_terms(sys, xi, bump_spec, T_avg, h_fd, panels_per_unit)
            xi = xi / np.linalg.norm(xi, axis=1, keepdims=True)
            B.append(np.repeat(b[None], xi.shape[0], axis=0))
            S.append(s_arr)
            XI.append(xi)
            CHI_U.append(terms["u"][0])
            HP_U.append(terms["u"][1])
            DU.append(terms["u"][2])
            CHI_S.append(terms["s"][0])
            HP_S.append(terms["s"][1])
            DS.append(terms["s"][2])
            growth_u = max(growth_u, terms["u"][3])
            growth_s = max(growth_s, terms["s"][3])

    chi_u, chi_s = np.concatenate(CHI_U), np.concatenate(CHI_S)
    values = (m_u - m_0) * chi_u + (m_s - m_0) * chi_s + m_0
    hp = (m_u - m_0) * np.concatenate(HP_U) + (m_s - m_0) * np.concatenate(HP_S)
    dist_u, dist_s = np.concatenate(DU), np.concatenate(DS)
    inner_u = bump_spec.r_inner / (cond**2 * growth_u)
    inner_s = bump_spec.r_inner / (cond**2 * growth_s)
    in_u, in_s = dist_u <= inner_u, dist_s <= inner_s
    outside = (dist_u >= bump_spec.r_outer) & (dist_s >= bump_spec.r_outer)
    atol = 1e-12 * max(1.0, abs(m_u), abs(m_s))
    checks = {
        "bounds": bool(np.all((values >= m_u - atol) & (values <= m_s + atol))),
        "inner_u_count": int(in_u.sum()),
        "inner_u": bool(np.all(np.abs(values[in_u] - m_u) <= atol)),
        "inner_s_count": int(in_s.sum()),
        "inner_s": bool(np.all(np.abs(values[in_s] - m_s) <= atol)),
        "outside_count": int(outside.sum()),
        "outside": bool(np.all(np.abs(values[outside] - m_0) <= atol)),
    }
    field_ = WeightField(
        np.concatenate(B), np.concatenate(S), np.vstack(XI), values, hp, (m_u, m_0, m_s),
        bump_spec, float(T_avg), float(hp.max()), dist_u, dist_s, inner_u, inner_s, checks,
    )
    checks["monotone"] = field_.max_Hp_m <= tol
    if not checks["monotone"]:
        raise MonotonicityViolation(
            f"max H_p m = {field_.max_Hp_m:.3e} exceeds {tol:.1e}; increase T_avg"
        )
    return field_


# ---------------------------------------------------------------------------
# multipliers
# ---------------------------------------------------------------------------


def dual_subspace_samples(sys, side, samples=16, fiber_samples=2, seed=0, horizon=20.0):
    """Unit covectors on E_u* (side u) or E_s* (side s) over Halton bases."""
    key = "dual_u" if side == "u" else "dual_s"
    pts = sample_points(sys, samples, fiber_samples, seed)
    sp = splitting_arrays(sys, np.array([p.base_array for p in pts]), horizon)
    out = []
    for p, rows in zip(pts, sp[key]):
        for r in rows:
            out.append(CotangentPoint(p, r, True))
    return out


def _check_conditioning(sys, side, points, horizon, min_component=1e-8):
    key = "dual_u" if side == "u" else "dual_s"
    sp = splitting_arrays(sys, np.array([q.x.base_array for q in points]), horizon)
    for q, rows in zip(points, sp[key]):
        u = q.xi / np.linalg.norm(q.xi)
        if np.linalg.norm(rows @ u) < min_component:
            raise ValueError(f"sample covector has no {key} component; rejected as degenerate")


def _lifted_identity_at(lift, sys, q, t, m):
    """e^{tH_X}(|xi|^{2m} I) at the unit covector q."""
    T = parallel_transport(lift, sys, q.x, t).matrix
    qt = cotangent_flow(sys, q, t)
    logdet = log_abs_det_jacobian(sys, q.x, t)
    return math.exp(logdet + 2 * m * (qt.log_norm - q.log_norm)) * (T.conj().T @ T)


def _dyadic_times(t_min, t_max):
    t = t_min
    while t <= t_max * (1 + 1e-12):
        yield t
        t *= 2


def _max_eig(M):
    return float(np.linalg.eigvalsh(0.5 * (M + M.conj().T)).max())


def find_t0(lift, sys, side, m, lambda_re, points, t_min=0.125, t_max=64.0):
    """Smallest dyadic t with e^{-2 Re(lambda) t} e^{tH_X} w0 < w0 strictly at
    every sample; returns (t0, differences) or raises ThresholdViolated."""
    for t in _dyadic_times(t_min, t_max):
        diffs = []
        ok = True
        for q in points:
            D = math.exp(-2 * lambda_re * t) * _lifted_identity_at(lift, sys, q, t, m) - np.eye(lift.rank)
            diffs.append(D)
            if _max_eig(D) >= 0:
                ok = False
                break
        if ok:
            return t, np.array(diffs)
    raise ThresholdViolated(
        f"no dyadic t0 <= {t_max:g} satisfies the strict multiplier inequality at Re(lambda)={lambda_re:g}"
    )


def _simpson_nodes(length, panels_per_unit):
    n = max(2, int(math.ceil(length * panels_per_unit)))
    n += n % 2
    w = np.ones(n + 1)
    w[1:-1:2], w[2:-1:2] = 4, 2
    return np.linspace(0.0, length, n + 1), w * (length / (3 * n))


def _multiplier_integral(lift, sys, q, m, lambda_re, t0, panels_per_unit):
    """int_0^t0 e^{-2 Re(lambda) t} e^{tH_X}(|xi|^{2m} I) dt by composite Simpson
    on each smooth orbit piece (crossings are split points)."""
    n = lift.rank
    field_ = lift.connection_field(sys)
    lam = np.diag(sys.generator_linearization())
    pieces, _ = orbit_pieces(sys, q.x, t0)
    T = np.eye(n, dtype=complex)
    xi = q.xi.copy()
    log_xi0 = math.log(np.linalg.norm(xi))
    logdet = 0.0
    t_acc = 0.0
    total = np.zeros((n, n), dtype=complex)
    for p in pieces:
        if p.jac is not None:
            G = lift.gluing.matrix(p.jac)
            if G is not None:
                T = G @ T
            xi = np.linalg.solve(p.jac.T, xi)
            logdet += math.log(abs(np.linalg.det(p.jac)))
            continue
        dur = abs(p.ds)
        if dur == 0.0:
            continue
        nodes, wts = _simpson_nodes(dur, panels_per_unit)
        step = nodes[1] - nodes[0]
        const = not field_.has_fiber_dependence()
        if const and field_.n_terms:
            tau_roof = sys.roof_at(p.base) if sys.is_cat else 1.0
            A = field_(_base_coords(sys, p.base), [p.s0], tau_roof)[0]
            E = expm(-step * A)
        Tn = T.copy()
        for i, (tn, wn) in enumerate(zip(nodes, wts)):
            if i:
                if field_.n_terms == 0:
                    pass
                elif const:
                    Tn = E @ Tn
                else:
                    s_prev = p.s0 + sys.time_sign * nodes[i - 1]
                    P = _segment_propagator(field_, sys, p.base, s_prev, step, "auto", 1e-3, 1e-9, 1e-7)
                    Tn = P @ Tn
            xin = xi * np.exp(-lam * tn) if not sys.is_cat else xi
            lx = math.log(np.linalg.norm(xin))
            scal = math.exp(logdet + 2 * m * (lx - log_xi0) - 2 * lambda_re * (t_acc + tn))
            total += wn * scal * (Tn.conj().T @ Tn)
        T = Tn
        if not sys.is_cat:
            xi = xi * np.exp(-lam * dur)
        t_acc += dur
    return total


@dataclass(eq=False)
class MultiplierField:
    side: str
    m: float
    lambda_re: float
    t0: float
    sample_points: list
    matrices: np.ndarray  # at unit covectors
    diff_matrices: np.ndarray  # (H_X - 2 Re lambda) w at the samples
    pos_margin: float
    neg_margin: float
    hermitian_defect: float
    panels_per_unit: int

    @property
    def degree(self):
        return 2 * self.m

    def evaluate(self, i, xi):
        """w(x_i, xi) for any positive multiple xi of the i-th sample covector."""
        scale = np.linalg.norm(xi) / np.linalg.norm(self.sample_points[i].xi)
        return scale ** (2 * self.m) * self.matrices[i]

    def to_dict(self):
        return {
            "side": self.side,
            "m": self.m,
            "degree": self.degree,
            "lambda_re": self.lambda_re,
            "t0": self.t0,
            "pos_margin": self.pos_margin,
            "neg_margin": self.neg_margin,
            "hermitian_defect": self.hermitian_defect,
            "panels_per_unit": self.panels_per_unit,
            "samples": [
                {
                    "base": list(q.x.base),
                    "s": q.x.s,
                    "xi": q.xi.tolist(),
                    "w": _complex_to_json(W),
                    "generator_w": _complex_to_json(Dm),
                }
                for q, W, Dm in zip(self.sample_points, self.matrices, self.diff_matrices)
            ],
        }


def build_multiplier(lift, sys, side, m, lambda_re, sample_points=None, panels_per_unit=128,
                     t_min=0.125, t_max=64.0, max_doublings=3, horizon=20.0):
    """w = int_0^t0 e^{-2 Re(lambda) t} e^{tH_X}(|xi|^{2m} I) dt at dual-subspace samples."""
    if side == "u" and m > 0 or side == "s" and m < 0 or side not in ("u", "s"):
        raise ValueError("side u needs m <= 0, side s needs m >= 0")
    pts = sample_points if sample_points is not None else dual_subspace_samples(sys, side)
    pts = [q if q.normalized else CotangentPoint(q.x, q.xi, True) for q in pts]
    _check_conditioning(sys, side, pts, horizon)
    t0, diffs = find_t0(lift, sys, side, m, lambda_re, pts, t_min, t_max)

    panels = panels_per_unit
    mats = np.array([_multiplier_integral(lift, sys, q, m, lambda_re, t0, panels) for q in pts])
    pos = min(float(np.linalg.eigvalsh(0.5 * (W + W.conj().T)).min()) for W in mats)
    for _ in range(max_doublings):
        panels *= 2
        new = np.array([_multiplier_integral(lift, sys, q, m, lambda_re, t0, panels) for q in pts])
        new_pos = min(float(np.linalg.eigvalsh(0.5 * (W + W.conj().T)).min()) for W in new)
        mats, settled = new, abs(new_pos - pos) <= 0.01 * abs(new_pos)
        pos = new_pos
        if settled:
            break
    herm = max(
        float(np.abs(mats - np.swapaxes(mats.conj(), 1, 2)).max()),
        float(np.abs(diffs - np.swapaxes(diffs.conj(), 1, 2)).max()),
    )
    neg = max(_max_eig(D) for D in diffs)
    return MultiplierField(side, float(m), float(lambda_re), t0, pts, mats, diffs, pos, neg, herm, panels)


def multiplier_succeeds(lift, sys, side, m, lambda_re, points, t_min=0.125, t_max=64.0):
    """Whether build_multiplier would succeed: its only failure mode on
    valid input is the absence of t0."""
    try:
        find_t0(lift, sys, side, m, lambda_re, points, t_min, t_max)
        return True
    except ThresholdViolated:
        return False


def threshold_by_bisection(lift, sys, side, m, bracket=(-2.0, 0.0), tol=1e-3, sample_points=None,
                           t_max=64.0, horizon=20.0):
    """Critical Re(lambda) separating failure from success of the multiplier."""
    lo, hi = (float(v) for v in bracket)
    if not lo < hi:
        raise BracketInvalid("bracket must be increasing")
    pts = sample_points if sample_points is not None else dual_subspace_samples(sys, side)
    pts = [q if q.normalized else CotangentPoint(q.x, q.xi, True) for q in pts]
    _check_conditioning(sys, side, pts, horizon)
    ok_lo = multiplier_succeeds(lift, sys, side, m, lo, pts, t_max=t_max)
    ok_hi = multiplier_succeeds(lift, sys, side, m, hi, pts, t_max=t_max)
    if ok_lo == ok_hi:
        raise BracketInvalid(
            f"bracket [{lo:g}, {hi:g}] does not straddle the transition (both {'succeed' if ok_lo else 'fail'})"
        )
    if ok_lo:
        raise BracketInvalid("success below failure: bracket orientation is inverted")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if multiplier_succeeds(lift, sys, side, m, mid, pts, t_max=t_max):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)
