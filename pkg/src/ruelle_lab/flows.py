"""Model Anosov flows, their differentials, the lifted cotangent flow and
the flow/unstable/stable splitting.

Two model families are supported:

* ``cat_suspension``: the suspension of a hyperbolic toral automorphism
  ``A`` under a roof function ``tau``.  Chart coordinates are
  ``(x1, x2, s)`` with ``0 <= s < tau(x)`` and the flow is ``d/ds``.
  Trajectories are computed exactly (unit fiber speed plus integer base
  steps); only the splitting requires iteration.
* ``hyperbolic_geodesic_model``: an analytic rate model of the geodesic flow
  of a hyperbolic ``n+1``-manifold.  Chart coordinates are
  ``(u_1..u_n, s_1..s_n, flow)`` and the differential is exactly
  ``diag(e^t I_n, e^-t I_n, 1)``.

In both cases the generator is the last coordinate vector.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .errors import NonConvergence, NotDispersed


class SystemKind(str, enum.Enum):
    CAT = "cat_suspension"
    HYPERBOLIC = "hyperbolic_geodesic_model"


@dataclass(frozen=True)
class Roof:
    """tau(x) = tau0 + sum_j c_j cos(2 pi <m_j, x> + phase_j)."""

    tau0: float
    terms: tuple = ()  # of (m1, m2, amplitude, phase)

    @classmethod
    def from_spec(cls, spec):
        if isinstance(spec, Roof):
            return spec
        if isinstance(spec, (int, float)):
            return cls(float(spec))
        terms = tuple(
            (int(t["freq"][0]), int(t["freq"][1]), float(t["amp"]), float(t.get("phase", 0.0)))
            for t in spec.get("terms", [])
        )
        return cls(float(spec["tau0"]), terms)

    @property
    def is_constant(self):
        return all(c == 0.0 for _, _, c, _ in self.terms)

    @property
    def lower_bound(self):
        return self.tau0 - sum(abs(c) for _, _, c, _ in self.terms)

    @property
    def upper_bound(self):
        return self.tau0 + sum(abs(c) for _, _, c, _ in self.terms)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        val = np.full(x.shape[:-1], self.tau0)
        for m1, m2, c, ph in self.terms:
            val = val + c * np.cos(2 * np.pi * (m1 * x[..., 0] + m2 * x[..., 1]) + ph)
        return val

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        g = np.zeros(x.shape)
        for m1, m2, c, ph in self.terms:
            sn = -c * np.sin(2 * np.pi * (m1 * x[..., 0] + m2 * x[..., 1]) + ph) * 2 * np.pi
            g[..., 0] += sn * m1
            g[..., 1] += sn * m2
        return g

    def to_dict(self):
        return {
            "tau0": self.tau0,
            "terms": [{"freq": [m1, m2], "amp": c, "phase": ph} for m1, m2, c, ph in self.terms],
        }


@dataclass(frozen=True)
class PhasePoint:
    base: tuple
    s: float

    def __post_init__(self):
        object.__setattr__(self, "base", tuple(float(v) for v in np.atleast_1d(self.base)))
        object.__setattr__(self, "s", float(self.s))

    @property
    def base_array(self):
        return np.asarray(self.base, dtype=float)


@dataclass(frozen=True, eq=False)
class CotangentPoint:
    """A covector over ``x``.  With ``normalized`` set, ``xi`` is a unit
    representative of the ray and ``log_scale`` records log of the
    discarded length, so the actual covector is ``exp(log_scale) * xi``."""

    x: PhasePoint
    xi: np.ndarray
    normalized: bool = False
    log_scale: float = 0.0

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        nrm = np.linalg.norm(xi)
        if nrm == 0.0:
            raise ValueError("covector must be nonzero")
        if self.normalized and abs(nrm - 1.0) > 1e-12:
            object.__setattr__(self, "log_scale", self.log_scale + math.log(nrm))
            xi = xi / nrm
        object.__setattr__(self, "xi", xi)

    @property
    def log_norm(self):
        return self.log_scale + math.log(np.linalg.norm(self.xi))

    def scaled(self, tau):
        return CotangentPoint(self.x, self.xi * tau, False)


@dataclass(frozen=True, eq=False)
class ModelSystem:
    kind: SystemKind
    base_matrix: np.ndarray | None = None
    roof: Roof | None = None
    n: int = 1
    time_sign: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", SystemKind(self.kind))
        if self.time_sign not in (1, -1):
            raise ValueError("time_sign must be +1 or -1")
        if self.kind is SystemKind.CAT:
            if self.base_matrix is None or self.roof is None:
                raise ValueError("cat_suspension needs base_matrix and roof")
            A = np.asarray(self.base_matrix)
            if A.shape != (2, 2) or not np.all(A == np.round(A)):
                raise ValueError("base_matrix must be a 2x2 integer matrix")
            A = A.astype(np.int64)
            object.__setattr__(self, "base_matrix", A)
            det = int(round(np.linalg.det(A)))
            if abs(det) != 1:
                raise ValueError(f"|det A| must be 1, got {det}")
            if np.any(np.abs(np.abs(np.linalg.eigvals(A)) - 1.0) < 1e-9):
                raise ValueError("A has an eigenvalue of modulus 1")
            roof = Roof.from_spec(self.roof)
            object.__setattr__(self, "roof", roof)
            if roof.lower_bound <= 0:
                raise ValueError("roof coefficient bound tau0 - sum|c| must be positive")
            g = np.linspace(0.0, 1.0, 65)
            grid = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1)
            if roof(grid).min() <= 0:
                raise ValueError("roof is not strictly positive")
        else:
            if int(self.n) < 1:
                raise ValueError("hyperbolic model needs n >= 1")
            object.__setattr__(self, "n", int(self.n))

    # -- constructors -----------------------------------------------------
    @classmethod
    def cat(cls, matrix=((2, 1), (1, 1)), roof=1.0):
        return cls(SystemKind.CAT, np.asarray(matrix), Roof.from_spec(roof))

    @classmethod
    def hyperbolic(cls, n=1):
        return cls(SystemKind.HYPERBOLIC, n=n)

    def reversed(self):
        """The same manifold with generator -X."""
        return replace(self, time_sign=-self.time_sign)

    # -- geometry ---------------------------------------------------------
    @property
    def is_cat(self):
        return self.kind is SystemKind.CAT

    @property
    def dim(self):
        return 3 if self.is_cat else 2 * self.n + 1

    @property
    def stable_dim(self):
        return 1 if self.is_cat else self.n

    @property
    def has_constant_roof(self):
        return (not self.is_cat) or self.roof.is_constant

    @property
    def mean_roof(self):
        return self.roof.tau0 if self.is_cat else 1.0

    def flow_vector(self):
        e = np.zeros(self.dim)
        e[-1] = 1.0
        return e

    def divergence(self, x=None):
        # both families preserve the chart Lebesgue density
        return 0.0

    def generator_linearization(self):
        """Constant matrix L with d(phi^t) = exp(t L) off roof crossings."""
        L = np.zeros((self.dim, self.dim))
        if not self.is_cat:
            idx = np.arange(self.n)
            L[idx, idx] = self.time_sign
            L[idx + self.n, idx + self.n] = -self.time_sign
        return L

    def roof_at(self, base):
        if not self.is_cat:
            return np.ones(np.shape(base)[:-1]) if np.ndim(base) > 1 else 1.0
        return self.roof(base)

    @cached_property
    def _eigen(self):
        A = self.base_matrix.astype(float)
        vals, vecs = np.linalg.eig(A)
        vals, vecs = vals.real, vecs.real
        iu = int(np.argmax(np.abs(vals)))
        is_ = 1 - iu
        return {
            "lam_u": vals[iu],
            "lam_s": vals[is_],
            "v_u": _orient(vecs[:, iu] / np.linalg.norm(vecs[:, iu])),
            "v_s": _orient(vecs[:, is_] / np.linalg.norm(vecs[:, is_])),
            "A_inv": np.round(np.linalg.inv(A)).astype(np.int64),
        }

    @property
    def expansion_rate(self):
        """log|lambda_u| per unit time for constant roofs (cat), 1 otherwise."""
        if self.is_cat:
            return math.log(abs(self._eigen["lam_u"])) / self.roof.tau0
        return 1.0

    def crossing_jacobian(self, y):
        """d(new)/d(old) for the forward crossing (y, tau(y)) -> (A y, 0)."""
        y = np.asarray(y, dtype=float)
        J = np.zeros(y.shape[:-1] + (3, 3))
        J[..., :2, :2] = self.base_matrix
        J[..., 2, :2] = -self.roof.gradient(y)
        J[..., 2, 2] = 1.0
        return J

    def to_dict(self):
        if self.is_cat:
            return {
                "kind": self.kind.value,
                "base_matrix": self.base_matrix.tolist(),
                "roof": self.roof.to_dict(),
                "time_sign": self.time_sign,
            }
        return {"kind": self.kind.value, "n": self.n, "time_sign": self.time_sign}


def _orient(v, axis=-1):
    """Flip sign so that the first nonzero coordinate is positive."""
    v = np.array(v, dtype=float)
    flat = v.reshape(-1, v.shape[-1])
    for row in flat:
        nz = np.flatnonzero(np.abs(row) > 1e-14)
        if nz.size and row[nz[0]] < 0:
            row *= -1
    return flat.reshape(v.shape)


# ---------------------------------------------------------------------------
# exact trajectories
# ---------------------------------------------------------------------------


@dataclass
class OrbitPiece:
    """Either a fiber segment (``jac is None``) or a roof crossing."""

    base: np.ndarray
    s0: float = 0.0
    ds: float = 0.0
    jac: np.ndarray | None = None
    base_after: np.ndarray | None = None


def orbit_pieces(sys, x, t):
    """Decompose the orbit of ``x`` over flow time ``t`` into pieces.

    Returns ``(pieces, endpoint)``.  Fiber segments record the physical
    displacement ``ds`` (negative when moving backwards in chart time);
    crossings record the traversed chart Jacobian.
    """
    base = x.base_array
    s = x.s
    tp = sys.time_sign * float(t)
    pieces = []
    if not sys.is_cat:
        pieces.append(OrbitPiece(base, s, tp))
        return pieces, PhasePoint(base, s + tp)
    A = sys.base_matrix
    A_inv = sys._eigen["A_inv"]
    remaining = abs(tp)
    if tp >= 0:
        while True:
            tau = float(sys.roof(base))
            if s + remaining < tau:
                pieces.append(OrbitPiece(base, s, remaining))
                s += remaining
                break
            step = tau - s
            pieces.append(OrbitPiece(base, s, step))
            new_base = np.mod(A @ base, 1.0)
            pieces.append(OrbitPiece(base, jac=sys.crossing_jacobian(base), base_after=new_base))
            base, s = new_base, 0.0
            remaining -= step
    else:
        while True:
            if s - remaining >= 0:
                pieces.append(OrbitPiece(base, s, -remaining))
                s -= remaining
                break
            pieces.append(OrbitPiece(base, s, -s))
            remaining -= s
            prev = np.mod(A_inv @ base, 1.0)
            pieces.append(OrbitPiece(base, jac=np.linalg.inv(sys.crossing_jacobian(prev)), base_after=prev))
            base, s = prev, float(sys.roof(prev))
    tau = float(sys.roof(base))
    if s >= tau:  # rounding at the identification
        s = math.nextafter(tau, 0.0)
    return pieces, PhasePoint(base, s)


def evolve(sys, x, t):
    """phi^t(x)."""
    return orbit_pieces(sys, x, t)[1]


def jacobian(sys, x, t):
    """d(phi^t)(x) in chart coordinates."""
    if not sys.is_cat:
        return np.diag(np.exp(np.diag(sys.generator_linearization()) * t))
    J = np.eye(3)
    for p in orbit_pieces(sys, x, t)[0]:
        if p.jac is not None:
            J = p.jac @ J
    return J


def log_abs_det_jacobian(sys, x, t):
    if not sys.is_cat:
        return float(np.trace(sys.generator_linearization()) * t)
    total = 0.0
    for p in orbit_pieces(sys, x, t)[0]:
        if p.jac is not None:
            total += math.log(abs(np.linalg.det(p.jac)))
    return total


def cotangent_flow(sys, q, t):
    """e^{t H_p}(x, xi) = (phi^t x, d(phi^t)(x)^{-T} xi).

    Normalized points are renormalized after every crossing and the log of
    the expansion is accumulated in ``log_scale``.
    """
    pieces, end = orbit_pieces(sys, q.x, t)
    xi = q.xi.copy()
    log_scale = q.log_scale
    if not sys.is_cat:
        xi = xi * np.exp(-np.diag(sys.generator_linearization()) * t)
    else:
        for p in pieces:
            if p.jac is None:
                continue
            xi = np.linalg.solve(p.jac.T, xi)
            if q.normalized:
                nrm = np.linalg.norm(xi)
                log_scale += math.log(nrm)
                xi = xi / nrm
    if q.normalized:
        nrm = np.linalg.norm(xi)
        log_scale += math.log(nrm)
        xi = xi / nrm
    return CotangentPoint(end, xi, q.normalized, log_scale)


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Splitting:
    x: PhasePoint
    e0: np.ndarray
    eu_basis: np.ndarray  # (d, du) columns
    es_basis: np.ndarray  # (d, ds) columns
    dual_e0: np.ndarray  # (1, d) rows
    dual_eu: np.ndarray  # (du, d) rows, annihilate E_0 + E_u
    dual_es: np.ndarray  # (ds, d) rows, annihilate E_0 + E_s
    invariance_residual: float = 0.0
    horizon: float = 0.0

    def duality_defect(self):
        e0 = self.e0[:, None]
        checks = [
            self.dual_eu @ np.hstack([e0, self.eu_basis]),
            self.dual_es @ np.hstack([e0, self.es_basis]),
            self.dual_e0 @ np.hstack([self.eu_basis, self.es_basis]),
        ]
        return float(max(np.abs(c).max() for c in checks))


def _cat_physical_directions(sys, bases, n_cross):
    """Physical-time unstable and stable directions at an array of bases.

    Cone iteration: a vector complementing E_0 + (guessed E_s) is pushed
    forward from A^{-n} x along the orbit, renormalizing at every crossing;
    E_s is obtained by the time-reversed procedure.
    """
    bases = np.atleast_2d(np.asarray(bases, dtype=float))
    eig = sys._eigen
    A = sys.base_matrix.astype(float)
    A_inv = eig["A_inv"].astype(float)
    e0 = np.array([0.0, 0.0, 1.0])
    gu = np.cross(np.append(eig["v_s"], 0.0), e0)
    gs = np.cross(np.append(eig["v_u"], 0.0), e0)

    past = [bases]
    for _ in range(n_cross):
        past.append(np.mod(past[-1] @ A_inv.T, 1.0))
    w = np.tile(gu / np.linalg.norm(gu), (bases.shape[0], 1))
    for j in range(n_cross, 0, -1):
        y = past[j]
        wb = w[:, :2] @ A.T
        wf = -np.einsum("ij,ij->i", sys.roof.gradient(y), w[:, :2]) + w[:, 2]
        w = np.column_stack([wb, wf])
        w /= np.linalg.norm(w, axis=1, keepdims=True)
    eu = w

    future = [bases]
    for _ in range(n_cross):
        future.append(np.mod(future[-1] @ A.T, 1.0))
    w = np.tile(gs / np.linalg.norm(gs), (bases.shape[0], 1))
    for j in range(n_cross - 1, -1, -1):
        z = future[j]
        wb = w[:, :2] @ A_inv.T
        wf = np.einsum("ij,ij->i", sys.roof.gradient(z), wb) + w[:, 2]
        w = np.column_stack([wb, wf])
        w /= np.linalg.norm(w, axis=1, keepdims=True)
    es = w
    return _orient(eu), _orient(es)


def _crossings_for(sys, horizon):
    return max(1, int(math.ceil(horizon / sys.roof.lower_bound)))


def splitting_arrays(sys, bases, horizon=20.0):
    """Vectorized splitting for an array of base points.

    Returns a dict with ``eu``, ``es``, ``e0`` of shape (N, d, k) and the
    dual covector bases ``dual_u`` (annihilating E_0+E_u), ``dual_s`` and
    ``dual_0`` of shape (N, k, d).
    """
    bases = np.atleast_2d(np.asarray(bases, dtype=float))
    N = bases.shape[0]
    d = sys.dim
    if sys.is_cat:
        eu, es = _cat_physical_directions(sys, bases, _crossings_for(sys, horizon))
        if sys.time_sign < 0:
            eu, es = es, eu
        eu, es = eu[:, :, None], es[:, :, None]
        k = 1
    else:
        k = sys.n
        I = np.eye(d)
        ucols, scols = I[:, :k], I[:, k : 2 * k]
        if sys.time_sign < 0:
            ucols, scols = scols, ucols
        eu = np.broadcast_to(ucols, (N, d, k)).copy()
        es = np.broadcast_to(scols, (N, d, k)).copy()
    e0 = np.broadcast_to(sys.flow_vector()[:, None], (N, d, 1)).copy()
    B = np.concatenate([eu, es, e0], axis=2)
    Binv = np.linalg.inv(B)
    dual_s = _orthonormal_rows(Binv[:, :k, :])
    dual_u = _orthonormal_rows(Binv[:, k : 2 * k, :])
    dual_0 = _orthonormal_rows(Binv[:, 2 * k :, :])
    return {"eu": eu, "es": es, "e0": e0, "dual_u": dual_u, "dual_s": dual_s, "dual_0": dual_0}


def _orthonormal_rows(M):
    Q, _ = np.linalg.qr(np.swapaxes(M, -1, -2))
    return _orient(np.swapaxes(Q, -1, -2))


def _angle(a, b):
    """Largest principal angle between column spans."""
    qa, _ = np.linalg.qr(a)
    qb, _ = np.linalg.qr(b)
    s = np.linalg.svd(qa.T @ qb, compute_uv=False)
    return float(np.arccos(np.clip(s.min(), -1.0, 1.0))) if s.min() < 1 - 1e-8 else float(
        np.linalg.norm(qa - qb @ (qb.T @ qa), 2)
    )


def invariance_residual(sys, x, test_time=1.0, horizon=20.0):
    """max angle between d(phi^t) E(x) and E(phi^t x) for E = E_u, E_s."""
    y = evolve(sys, x, test_time)
    J = jacobian(sys, x, test_time)
    sx = splitting_arrays(sys, [x.base_array], horizon)
    sy = splitting_arrays(sys, [y.base_array], horizon)
    ru = _angle(J @ sx["eu"][0], sy["eu"][0])
    rs = _angle(J @ sx["es"][0], sy["es"][0])
    return max(ru, rs)


def compute_splitting(sys, x, horizon=20.0, tol=1e-8, test_time=1.0, max_doublings=4):
    """The splitting at ``x`` with its invariance residual.

    The horizon is doubled until the residual drops below ``tol``; a residual
    that stops improving (within 10%) above ``tol`` raises NonConvergence.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if not sys.is_cat:
        h = horizon
        res = 0.0
    else:
        h = horizon
        prev = None
        for _ in range(max_doublings + 1):
            res = max(invariance_residual(sys, x, t, h) for t in np.atleast_1d(test_time))
            if res <= tol:
                break
            if prev is not None and abs(res - prev) <= 0.1 * prev:
                break
            prev = res
            h *= 2
        if res > tol:
            raise NonConvergence(f"splitting residual {res:.3e} > tol {tol:.1e} at horizon {h}")
    arr = splitting_arrays(sys, [x.base_array], h)
    return Splitting(
        x=x,
        e0=arr["e0"][0][:, 0],
        eu_basis=arr["eu"][0],
        es_basis=arr["es"][0],
        dual_e0=arr["dual_0"][0],
        dual_eu=arr["dual_u"][0],
        dual_es=arr["dual_s"][0],
        invariance_residual=res,
        horizon=h,
    )


def subspace_distance(xi, rows):
    """Distance from the unit vector xi/|xi| to the span of orthonormal ``rows``.

    Works batched: ``xi`` (..., d), ``rows`` (..., k, d).
    """
    xi = np.asarray(xi, dtype=float)
    u = xi / np.linalg.norm(xi, axis=-1, keepdims=True)
    coeff = np.einsum("...kd,...d->...k", rows, u)
    proj = np.einsum("...k,...kd->...d", coeff, rows)
    return np.linalg.norm(u - proj, axis=-1)


# ---------------------------------------------------------------------------
# dispersal on the characteristic set
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DispersalResult:
    entered_at: float
    region: str


def check_char_set_dispersal(
    sys,
    q,
    radius_u=0.1,
    radius_s=0.1,
    radius_0=0.1,
    t_max=20.0,
    dt=0.01,
    direction="forward",
    horizon=20.0,
):
    """First sampled time at which the lifted flow enters V_u or V_0
    (forward), or V_s or V_0 (backward).

    V_u, V_s are normalized-coordinate balls of the given radii around the
    dual subspaces.  V_0 = {|xi| < radius_0} applies to unnormalized points
    only; a normalized point lives at fiber infinity.
    """
    sign = 1.0 if direction == "forward" else -1.0
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    xi = q.xi
    if abs(xi @ sys.flow_vector()) > 1e-10 * np.linalg.norm(xi):
        raise ValueError("point is not on the characteristic set <xi, X> = 0")
    key_target, key_avoid = ("dual_u", "dual_s") if sign > 0 else ("dual_s", "dual_u")
    split = splitting_arrays(sys, [q.x.base_array], horizon)
    if q.normalized and subspace_distance(xi, split[key_avoid][0]) < 1e-12:
        raise ValueError("point lies on the excluded dual subspace")
    radius = radius_u if sign > 0 else radius_s
    region = "V_u" if sign > 0 else "V_s"

    cache = {}

    def inside(p):
        key = p.x.base
        if key not in cache:
            cache[key] = splitting_arrays(sys, [p.x.base_array], horizon)[key_target][0]
        if subspace_distance(p.xi, cache[key]) < radius:
            return region
        if not p.normalized and np.linalg.norm(p.xi) < radius_0:
            return "V_0"
        return None

    p = q
    n_steps = int(math.ceil(t_max / dt))
    for i in range(n_steps + 1):
        hit = inside(p)
        if hit:
            return DispersalResult(i * dt, hit)
        p = cotangent_flow(sys, p, sign * dt)
    raise NotDispersed(f"no entry into {region} or V_0 by t={t_max}")
