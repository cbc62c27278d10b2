"""Shared oracle constants and small constructors for the test modules."""

import numpy as np

from ruelle_lab.flows import PhasePoint
from ruelle_lab.trig import TrigField

# Frozen oracle values, evaluated once at 30 digits with mpmath:
#   LAMBDA_PLUS = (3 + sqrt 5) / 2, LOG_LAMBDA = log LAMBDA_PLUS
LAMBDA_PLUS = 2.6180339887498948482
LOG_LAMBDA = 0.96242365011920689500

CAT_MATRIX = ((2, 1), (1, 1))
WAVY_ROOF = {"tau0": 1.0, "terms": [{"freq": [1, 0], "amp": 0.1, "phase": 0.0}]}


def torus_dist(a, b):
    d = (np.asarray(a) - np.asarray(b) + 0.5) % 1.0 - 0.5
    return float(np.abs(d).max())


def point(b1, b2, s):
    return PhasePoint(np.array([b1, b2]), s)


def fiber_harmonic(k=1, with_constant=False, both_signs=False):
    terms = [((0, 0, k), 1.0)]
    if both_signs:
        terms.append(((0, 0, -k), 1.0))
    if with_constant:
        terms.append(((0, 0, 0), 1.0))
    return TrigField.from_terms(terms)


def base_potential(c=0.1, a=0.15):
    """Real potential c + 2a cos(2 pi x1)."""
    return TrigField.from_terms([((1, 0, 0), a), ((-1, 0, 0), a), ((0, 0, 0), c)])


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)
