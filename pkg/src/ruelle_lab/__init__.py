"""Numerical lab for Anosov flows: growth factors, escape weights,
multipliers, resolvents and Pollicott-Ruelle resonances on exact models."""

from .errors import (
    BracketInvalid,
    ConfigInvalid,
    FitDiverged,
    IntegratorStep,
    IoFailure,
    MonotonicityViolation,
    NonConvergence,
    NotDispersed,
    OutsideConvergence,
    RuelleLabError,
    ThresholdViolated,
    UnsupportedObservable,
    VerificationFailed,
)
from .flows import CotangentPoint, ModelSystem, PhasePoint, Roof
from .lifts import BundleLift
from .trig import TrigField

__version__ = "0.1.0"

__all__ = [
    "BracketInvalid",
    "BundleLift",
    "ConfigInvalid",
    "CotangentPoint",
    "FitDiverged",
    "IntegratorStep",
    "IoFailure",
    "ModelSystem",
    "MonotonicityViolation",
    "NonConvergence",
    "NotDispersed",
    "OutsideConvergence",
    "PhasePoint",
    "Roof",
    "RuelleLabError",
    "ThresholdViolated",
    "TrigField",
    "UnsupportedObservable",
    "VerificationFailed",
]
