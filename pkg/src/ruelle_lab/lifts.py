"""Bundle lifts of the generator, parallel transport and the transfer group.

A lift is ``X + A(x)`` in a fixed global frame.  On a suspension the frame
of the chart is glued to itself across the roof by a matrix depending on
the crossing Jacobian: the identity for scalar and custom lifts, the
exterior power of the inverse transpose for differential forms.  Transport
over an orbit is therefore the ordered product of segment propagators
``exp(-int A)`` and gluing matrices.
"""

from __future__ import annotations

import csv
import enum
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import IntegratorStep
from .flows import PhasePoint, evolve, jacobian, orbit_pieces
from .trig import TrigField


class LiftKind(str, enum.Enum):
    SCALAR = "scalar_potential"
    FORMS = "forms"
    PERP_FORMS = "perp_forms"
    CUSTOM = "custom"


# ---------------------------------------------------------------------------
# exterior algebra
# ---------------------------------------------------------------------------


def combinations(d, k):
    return list(itertools.combinations(range(d), k))


def exterior_power(M, k):
    """Matrix of the k-th exterior power in the lexicographic basis
    e_I = e_{i1} ^ ... ^ e_{ik}, i1 < ... < ik."""
    M = np.asarray(M)
    d = M.shape[0]
    idx = combinations(d, k)
    if k == 0:
        return np.ones((1, 1), dtype=M.dtype)
    out = np.empty((len(idx), len(idx)), dtype=M.dtype)
    for a, I in enumerate(idx):
        rows = M[list(I)]
        for b, J in enumerate(idx):
            out[a, b] = np.linalg.det(rows[:, list(J)]) if k > 1 else rows[0, J[0]]
    return out


def _perm_sign(seq):
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


def exterior_derivation(L, k):
    """Derivation induced by L on the k-th exterior power.

    This is d/de of exterior_power(I + e L, k) at e = 0, so that
    exterior_power(expm(t L), k) == expm(t * exterior_derivation(L, k)).
    """
    L = np.asarray(L)
    d = L.shape[0]
    idx = combinations(d, k)
    pos = {I: a for a, I in enumerate(idx)}
    out = np.zeros((len(idx), len(idx)), dtype=L.dtype)
    for b, J in enumerate(idx):
        for p, j in enumerate(J):
            for i in range(d):
                if L[i, j] == 0:
                    continue
                new = list(J)
                new[p] = i
                if len(set(new)) < k:
                    continue
                out[pos[tuple(sorted(new))], b] += _perm_sign(new) * L[i, j]
    return out


# ---------------------------------------------------------------------------
# lifts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Gluing:
    """How the chart frame is identified with itself across a roof crossing.

    ``covariant`` acts on forms by the exterior power of the inverse
    transpose of the traversed Jacobian; ``contravariant`` by the exterior
    power of the traversed Jacobian itself (the adjoint of the former,
    read along the reversed flow).  ``perp`` restricts to the annihilator of
    the flow direction, spanned by the first d-1 coordinate covectors.
    """

    mode: str = "identity"
    k: int = 0
    perp: bool = False

    def matrix(self, jac):
        if self.mode == "identity":
            return None
        M = jac if self.mode == "contravariant" else np.linalg.inv(jac).T
        if self.perp:
            M = M[:-1, :-1]
        return exterior_power(M, self.k)


@dataclass(frozen=True, eq=False)
class BundleLift:
    kind: LiftKind
    rank: int
    k: int = 0
    potential: TrigField | None = None
    connection: TrigField | None = None
    gluing: Gluing = field(default_factory=Gluing)
    dim: int | None = None  # phase dimension for form kinds

    # -- constructors -----------------------------------------------------
    @classmethod
    def scalar(cls, potential=0.0):
        if not isinstance(potential, TrigField):
            potential = TrigField.constant(potential)
        return cls(LiftKind.SCALAR, 1, potential=potential)

    @classmethod
    def forms(cls, sys, k):
        d = sys.dim
        if not 0 <= k <= d:
            raise ValueError(f"form degree {k} outside [0, {d}]")
        return cls(LiftKind.FORMS, math.comb(d, k), k=k, gluing=Gluing("covariant", k), dim=d)

    @classmethod
    def perp_forms(cls, sys, k):
        d = sys.dim
        if not 0 <= k <= d - 1:
            raise ValueError(f"form degree {k} outside [0, {d - 1}]")
        return cls(
            LiftKind.PERP_FORMS, math.comb(d - 1, k), k=k, gluing=Gluing("covariant", k, True), dim=d
        )

    @classmethod
    def custom(cls, connection, gluing=None):
        if not isinstance(connection, TrigField):
            connection = TrigField.constant(np.asarray(connection, dtype=complex))
        if len(connection.shape) != 2 or connection.shape[0] != connection.shape[1]:
            raise ValueError("connection field must be square-matrix valued")
        return cls(LiftKind.CUSTOM, connection.shape[0], connection=connection, gluing=gluing or Gluing())

    # -- structure --------------------------------------------------------
    def validate(self, sys):
        if self.kind is LiftKind.SCALAR and self.rank != 1:
            raise ValueError("scalar lift must have rank 1")
        if self.kind in (LiftKind.FORMS, LiftKind.PERP_FORMS):
            if self.dim != sys.dim:
                raise ValueError(f"lift built for dimension {self.dim}, system has {sys.dim}")
            d = sys.dim - (self.kind is LiftKind.PERP_FORMS)
            if self.rank != math.comb(d, self.k):
                raise ValueError("rank does not match form degree")
            if self.kind is LiftKind.PERP_FORMS and self.annihilator_defect(sys) > 1e-12:
                raise ValueError("perp frame does not annihilate the generator")
        return self

    def annihilator_defect(self, sys):
        """max |iota_X e_I| over the perp frame, embedded as full k-forms."""
        X = sys.flow_vector()
        frame = np.eye(sys.dim)[:-1]
        return float(np.abs(frame @ X).max()) if frame.size else 0.0

    def connection_field(self, sys):
        """The connection matrix field A(x) as an (n, n) TrigField."""
        n = self.rank
        if self.kind is LiftKind.SCALAR:
            return TrigField(self.potential.freqs, self.potential.coeffs.reshape(-1, 1, 1), (1, 1))
        if self.kind is LiftKind.CUSTOM:
            return self.connection
        L = sys.generator_linearization()
        if self.kind is LiftKind.PERP_FORMS:
            L = L[:-1, :-1]
        A = exterior_derivation(L.T, self.k)
        if not np.any(A):
            return TrigField.zero((n, n))
        return TrigField.constant(A.astype(complex))

    def connection_at(self, sys, x):
        field_ = self.connection_field(sys)
        tau = sys.roof_at(x.base_array) if sys.is_cat else 1.0
        return field_(_base_coords(sys, x.base_array), [x.s], tau)[0]

    def to_dict(self):
        out = {"kind": self.kind.value, "rank": self.rank}
        if self.kind in (LiftKind.FORMS, LiftKind.PERP_FORMS):
            out["k"] = self.k
        if self.potential is not None:
            out["potential"] = self.potential.to_dict()
        if self.connection is not None:
            out["connection"] = self.connection.to_dict()
        if self.gluing.mode != "identity":
            out["gluing"] = {"mode": self.gluing.mode, "k": self.gluing.k, "perp": self.gluing.perp}
        return out


def _base_coords(sys, base):
    """Base coordinates fed to trig fields (hyperbolic orbits sit at 0)."""
    return base[None, :2] if sys.is_cat else np.zeros((1, 2))


# ---------------------------------------------------------------------------
# transport
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TransportResult:
    x: PhasePoint
    t: float
    matrix: np.ndarray
    op_norm: float


def _rk4_segment(field_, sys, base, s0, duration, h):
    """Propagator of dV/dtau = -A(base, s0 + sign*tau) V over [0, duration]."""
    n = field_.shape[0]
    steps = max(1, int(math.ceil(abs(duration) / h)))
    hh = duration / steps
    sign = sys.time_sign
    taus = np.arange(2 * steps + 1) * (hh / 2)
    s = s0 + sign * taus
    tau_roof = sys.roof_at(base) if sys.is_cat else 1.0
    A = field_(np.repeat(_base_coords(sys, base), s.size, axis=0), s, tau_roof)
    V = np.eye(n, dtype=complex)
    for j in range(steps):
        A0, Am, A1 = A[2 * j], A[2 * j + 1], A[2 * j + 2]
        k1 = -A0 @ V
        k2 = -Am @ (V + 0.5 * hh * k1)
        k3 = -Am @ (V + 0.5 * hh * k2)
        k4 = -A1 @ (V + hh * k3)
        V = V + (hh / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return V


def _segment_propagator(field_, sys, base, s0, duration, method, h0, agree, h_min):
    n = field_.shape[0]
    if duration == 0.0 or field_.n_terms == 0:
        return np.eye(n, dtype=complex)
    if method != "rk4" and not field_.has_fiber_dependence():
        tau_roof = sys.roof_at(base) if sys.is_cat else 1.0
        A = field_(_base_coords(sys, base), [s0], tau_roof)[0]
        return expm(-duration * A)
    h = h0
    prev = _rk4_segment(field_, sys, base, s0, duration, h)
    while True:
        h /= 2
        if h < h_min:
            raise IntegratorStep(f"step size fell below {h_min:g} without agreement")
        cur = _rk4_segment(field_, sys, base, s0, duration, h)
        if np.abs(cur - prev).max() <= agree:
            return cur
        prev = cur


def parallel_transport(lift, sys, x, t, method="auto", h0=1e-3, agree=1e-9, h_min=1e-7):
    """Transport T^t(x) along the orbit of x, with V(0) = I.

    ``method`` is ``auto`` (matrix exponential on segments where the
    connection is constant, RK4 otherwise), ``rk4`` (always integrate), or
    ``closed_form`` (form kinds only: exterior power of the inverse
    transpose of the flow Jacobian).
    """
    t = float(t)
    if method == "closed_form":
        if lift.kind not in (LiftKind.FORMS, LiftKind.PERP_FORMS):
            raise ValueError("closed_form transport is defined for form lifts only")
        M = np.linalg.inv(jacobian(sys, x, t)).T
        if lift.kind is LiftKind.PERP_FORMS:
            M = M[:-1, :-1]
        T = exterior_power(M, lift.k).astype(complex)
        return TransportResult(x, t, T, float(np.linalg.norm(T, 2)))
    field_ = lift.connection_field(sys)
    pieces, _ = orbit_pieces(sys, x, t)
    T = np.eye(lift.rank, dtype=complex)
    for p in pieces:
        if p.jac is None:
            dur = p.ds * sys.time_sign
            T = _segment_propagator(field_, sys, p.base, p.s0, dur, method, h0, agree, h_min) @ T
        else:
            G = lift.gluing.matrix(p.jac)
            if G is not None:
                T = G @ T
    return TransportResult(x, t, T, float(np.linalg.norm(T, 2)))


def _eval_section(u, sys, y):
    tau = sys.roof_at(y.base_array) if sys.is_cat else 1.0
    val = u(_base_coords(sys, y.base_array), [y.s], tau)[0]
    return np.atleast_1d(val)


def koopman_apply(lift, sys, u, t, x, **kw):
    """(e^{-tX} u)(x) = T^t(phi^{-t} x) u(phi^{-t} x)."""
    y = evolve(sys, x, -t)
    T = parallel_transport(lift, sys, y, t, **kw).matrix
    return T @ _eval_section(u, sys, y)


def adjoint_lift(lift, sys):
    """The formal adjoint, a lift of -X: pair it with ``sys.reversed()``.

    Its connection is A^* - (Div X) I and its gluing is the adjoint of the
    original gluing read along the reversed orbit.
    """
    A = lift.connection_field(sys)
    div = sys.divergence()
    Astar = A.adjoint()
    if div:
        Astar = Astar - TrigField.constant(div * np.eye(lift.rank))
    if lift.kind is LiftKind.SCALAR:
        pot = TrigField(Astar.freqs, Astar.coeffs.reshape(-1), ())
        return BundleLift.scalar(pot)
    mode = {"identity": "identity", "covariant": "contravariant", "contravariant": "covariant"}[
        lift.gluing.mode
    ]
    return BundleLift.custom(Astar, Gluing(mode, lift.gluing.k, lift.gluing.perp))


def transport_to_csv(result, path):
    """Row-major matrix, each complex entry written as a (re, im) pair."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        n = result.matrix.shape[1]
        w.writerow([f"{p}{j}" for j in range(n) for p in ("re", "im")])
        for row in result.matrix:
            w.writerow([repr(float(v)) for z in row for v in (z.real, z.imag)])


def pairing_defect(lift, sys, u, v, t, N=17, fiber_nodes=12):
    """Relative deviation between <e^{-tX} u, v> and <u, e^{-tX*} v>.

    Both integrals run over the suspension (constant roof) with an N x N
    periodic base grid and Gauss-Legendre fiber nodes split where the number
    of roof crossings changes; the adjoint group is evaluated on the
    reversed system.
    """
    if not sys.is_cat or not sys.roof.is_constant:
        raise ValueError("pairing check needs a constant-roof suspension")
    tau = sys.roof.tau0
    r = math.fmod(t, tau)
    adj = adjoint_lift(lift, sys)
    rev = sys.reversed()
    g = np.arange(N) / N
    grid = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    gl_x, gl_w = np.polynomial.legendre.leggauss(fiber_nodes)

    def integrate(split, fn):
        total = 0.0 + 0.0j
        for a, b in ((0.0, split), (split, tau)):
            if b <= a:
                continue
            for sx, sw in zip(a + (b - a) * (gl_x + 1) / 2, gl_w * (b - a) / 2):
                for base in grid:
                    total += sw * fn(PhasePoint(base, sx))
        return total / (tau * N * N)

    lhs = integrate(r, lambda x: np.vdot(_eval_section(v, sys, x), koopman_apply(lift, sys, u, t, x)))
    rhs = integrate(
        tau - r if r else 0.0,
        lambda x: np.vdot(koopman_apply(adj, rev, v, t, x), _eval_section(u, sys, x)),
    )
    return float(abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)), complex(lhs), complex(rhs)
