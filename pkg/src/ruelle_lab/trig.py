"""Finite Fourier sums on the suspension chart.

A :class:`TrigField` is

    F(x, s) = sum_j C_j exp(2 pi i (<m_j, x> + k_j s / tau(x)))

with integer base frequencies ``m_j``, integer fiber harmonics ``k_j`` and
array-valued coefficients ``C_j`` (scalars, vectors or matrices).  The same
class represents potentials, connection fields, sections and the
x-dependent part of matrix symbols.
"""

from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi


class TrigField:
    def __init__(self, freqs, coeffs, shape=None):
        freqs = np.asarray(freqs, dtype=np.int64).reshape(-1, 3)
        coeffs = np.asarray(coeffs, dtype=complex)
        if shape is None:
            shape = coeffs.shape[1:]
        coeffs = coeffs.reshape((freqs.shape[0],) + tuple(shape))
        # merge duplicate frequencies so equality of fields is structural
        if freqs.shape[0]:
            uniq, inv = np.unique(freqs, axis=0, return_inverse=True)
            merged = np.zeros((uniq.shape[0],) + tuple(shape), dtype=complex)
            np.add.at(merged, inv.ravel(), coeffs)
            keep = np.abs(merged.reshape(uniq.shape[0], -1)).max(axis=1) > 0
            freqs, coeffs = uniq[keep], merged[keep]
        self.freqs = freqs
        self.coeffs = coeffs
        self.shape = tuple(shape)

    # -- constructors -----------------------------------------------------
    @classmethod
    def constant(cls, value, shape=None):
        value = np.asarray(value, dtype=complex)
        shape = value.shape if shape is None else tuple(shape)
        return cls([[0, 0, 0]], np.broadcast_to(value, shape)[None], shape)

    @classmethod
    def zero(cls, shape=()):
        return cls(np.zeros((0, 3)), np.zeros((0,) + tuple(shape)), shape)

    @classmethod
    def from_terms(cls, terms, shape=()):
        """``terms`` is an iterable of ``((m1, m2, k), coeff)`` pairs."""
        terms = list(terms)
        if not terms:
            return cls.zero(shape)
        freqs = [t[0] for t in terms]
        coeffs = [np.broadcast_to(np.asarray(t[1], dtype=complex), shape) for t in terms]
        return cls(freqs, np.array(coeffs), shape)

    @classmethod
    def random(cls, rng, n_terms=4, max_base=2, max_fiber=2, shape=(), scale=1.0):
        freqs = np.column_stack(
            [
                rng.integers(-max_base, max_base + 1, size=n_terms),
                rng.integers(-max_base, max_base + 1, size=n_terms),
                rng.integers(-max_fiber, max_fiber + 1, size=n_terms),
            ]
        )
        size = (n_terms,) + tuple(shape)
        coeffs = scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))
        return cls(freqs, coeffs, shape)

    # -- structure --------------------------------------------------------
    @property
    def n_terms(self):
        return self.freqs.shape[0]

    def is_constant(self):
        return bool(np.all(self.freqs == 0))

    def has_fiber_dependence(self):
        return bool(np.any(self.freqs[:, 2] != 0))

    def constant_term(self):
        mask = np.all(self.freqs == 0, axis=1)
        if not mask.any():
            return np.zeros(self.shape, dtype=complex)
        return self.coeffs[mask][0]

    def coefficient_bound(self):
        """Upper bound on sup |F| (operator 2-norm for matrix fields)."""
        if self.n_terms == 0:
            return 0.0
        if len(self.shape) == 2:
            return float(sum(np.linalg.norm(c, 2) for c in self.coeffs))
        return float(sum(np.linalg.norm(np.atleast_1d(c)) for c in self.coeffs))

    # -- evaluation -------------------------------------------------------
    def _phases(self, x, s, tau):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        s = np.atleast_1d(np.asarray(s, dtype=float))
        tau = np.broadcast_to(np.asarray(tau, dtype=float), s.shape)
        fib = s / tau
        ph = x @ self.freqs[:, :2].T + fib[:, None] * self.freqs[:, 2][None, :]
        return ph

    def __call__(self, x, s, tau=1.0):
        """Evaluate at points ``x`` (N, 2), fiber coordinates ``s`` (N,)."""
        ph = self._phases(x, s, tau)
        e = np.exp(1j * TWO_PI * ph)
        return np.tensordot(e, self.coeffs, axes=(1, 0))

    def d_fiber(self, x, s, tau=1.0):
        """Derivative in the fiber coordinate s."""
        ph = self._phases(x, s, tau)
        tau = np.broadcast_to(np.asarray(tau, dtype=float), ph.shape[:1])
        e = np.exp(1j * TWO_PI * ph) * (1j * TWO_PI * self.freqs[:, 2][None, :] / tau[:, None])
        return np.tensordot(e, self.coeffs, axes=(1, 0))

    # -- algebra ----------------------------------------------------------
    def __add__(self, other):
        if not isinstance(other, TrigField):
            other = TrigField.constant(other, self.shape)
        return TrigField(
            np.vstack([self.freqs, other.freqs]),
            np.concatenate([self.coeffs, other.coeffs]),
            self.shape,
        )

    def __neg__(self):
        return TrigField(self.freqs, -self.coeffs, self.shape)

    def __sub__(self, other):
        return self + (-other)

    def scale(self, c):
        return TrigField(self.freqs, self.coeffs * c, self.shape)

    def conj(self):
        """Pointwise complex conjugate (frequencies flip sign)."""
        return TrigField(-self.freqs, np.conj(self.coeffs), self.shape)

    def adjoint(self):
        """Pointwise conjugate transpose of a matrix field."""
        return TrigField(-self.freqs, np.conj(np.swapaxes(self.coeffs, -1, -2)), self.shape[::-1])

    def hermitian_part(self):
        return TrigField(
            np.vstack([self.freqs, -self.freqs]),
            0.5 * np.concatenate([self.coeffs, np.conj(np.swapaxes(self.coeffs, -1, -2))]),
            self.shape,
        )

    def fiber_derivative(self, tau):
        """d/ds as a field; requires a constant roof ``tau``."""
        factor = 1j * TWO_PI * self.freqs[:, 2] / tau
        return TrigField(self.freqs, self.coeffs * factor.reshape((-1,) + (1,) * len(self.shape)), self.shape)

    def apply(self, other):
        """Pointwise product ``self(x) @ other(x)`` (or scalar times) as a field."""
        if self.n_terms == 0 or other.n_terms == 0:
            if self.shape == () or other.shape == ():
                shape = other.shape if self.shape == () else self.shape
            else:
                shape = np.empty(self.shape) @ np.empty(other.shape)
                shape = np.shape(shape)
            return TrigField.zero(shape)
        freqs, coeffs = [], []
        for fa, ca in zip(self.freqs, self.coeffs):
            for fb, cb in zip(other.freqs, other.coeffs):
                freqs.append(fa + fb)
                coeffs.append(ca * cb if ca.ndim == 0 or cb.ndim == 0 else ca @ cb)
        coeffs = np.array(coeffs)
        return TrigField(freqs, coeffs, coeffs.shape[1:])

    # -- serialization ----------------------------------------------------
    def to_dict(self):
        return {
            "shape": list(self.shape),
            "terms": [
                {"freq": [int(v) for v in f], "coeff": _complex_to_json(c)}
                for f, c in zip(self.freqs, self.coeffs)
            ],
        }

    @classmethod
    def from_dict(cls, d, shape=None):
        shape = tuple(d.get("shape", shape or ()))
        terms = [(t["freq"], _complex_from_json(t["coeff"])) for t in d.get("terms", [])]
        return cls.from_terms(terms, shape)

    def __repr__(self):
        return f"TrigField(n_terms={self.n_terms}, shape={self.shape})"


def _complex_to_json(c):
    c = np.asarray(c, dtype=complex)
    if c.ndim == 0:
        return [float(c.real), float(c.imag)]
    return [_complex_to_json(v) for v in c]


def _complex_from_json(v):
    """Accept a real number, a [re, im] pair, or nested lists of those."""
    if isinstance(v, (int, float)):
        return complex(v)
    if len(v) == 2 and all(isinstance(e, (int, float)) for e in v):
        return complex(v[0], v[1])
    return np.array([_complex_from_json(e) for e in v])


def continuous_on_suspension(f, atol=1e-12):
    """True when ``f`` glues continuously across the roof identification.

    For a base map without invariant nonzero frequencies this holds exactly
    when every nonzero base frequency carries a fiber profile vanishing at s=0.
    """
    base = f.freqs[:, :2]
    nonzero = np.any(base != 0, axis=1)
    if not nonzero.any():
        return True
    uniq, inv = np.unique(base[nonzero], axis=0, return_inverse=True)
    sums = np.zeros((uniq.shape[0],) + f.shape, dtype=complex)
    np.add.at(sums, inv.ravel(), f.coeffs[nonzero])
    return bool(np.abs(sums).max() <= atol)


def make_continuous(f):
    """Project ``f`` onto sections gluing continuously across the roof.

    The k=0 coefficient of each nonzero base frequency absorbs the value at
    s=0 so that the fiber profile vanishes there.
    """
    freqs = [tuple(v) for v in f.freqs]
    coeffs = list(f.coeffs)
    base_groups = {}
    for (m1, m2, k), c in zip(freqs, coeffs):
        if (m1, m2) != (0, 0):
            base_groups[(m1, m2)] = base_groups.get((m1, m2), 0) + c
    extra = [((m1, m2, 0), -total) for (m1, m2), total in base_groups.items()]
    return TrigField(
        np.array(freqs + [e[0] for e in extra]).reshape(-1, 3),
        np.array(coeffs + [e[1] for e in extra]).reshape((-1,) + f.shape),
        f.shape,
    )
