"""Invariant suite run by the ``verify`` task.

Every check works on the two model families with exact answers and returns
an observed deviation and the tolerance it must stay under.  Checks are
independent, so the orchestrator may run them concurrently; results are
always reported in suite order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .flows import (
    CotangentPoint,
    ModelSystem,
    PhasePoint,
    compute_splitting,
    evolve,
    jacobian,
    log_abs_det_jacobian,
)
from .lifts import BundleLift, pairing_defect, parallel_transport
from .resolvent import (
    ContourSpec,
    ObservablePair,
    check_resolvent_identity,
    correlation,
    correlation_quadrature,
    pole_scan,
)
from .symbols import (
    GridSpec,
    MatrixSymbol,
    build_multiplier,
    build_weight,
    dual_subspace_samples,
    generator_check,
)
from .thresholds import (
    check_rus_bound,
    estimate_growth_factor,
    perp_forms_threshold,
    threshold_halfplane,
)
from .trig import TrigField, make_continuous

LOG_LAMBDA = math.log((3 + math.sqrt(5)) / 2)


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""

    def to_dict(self):
        return {"name": self.name, "value": self.value, "tolerance": self.tolerance,
                "passed": self.passed, "detail": self.detail}


def _cat():
    return ModelSystem.cat()


def _wavy():
    return ModelSystem.cat(roof={"tau0": 1.0, "terms": [{"freq": [1, 0], "amp": 0.2, "phase": 0.3}]})


def _point(base=(0.3, 0.7), s=0.25):
    return PhasePoint(np.array(base), s)


def _potential():
    return TrigField.from_terms([((1, 0, 0), 0.15), ((-1, 0, 0), 0.15), ((0, 0, 0), 0.1)])


def check_group_law():
    sys, x = _wavy(), _point()
    a = evolve(sys, evolve(sys, x, 1.3), 0.9)
    b = evolve(sys, x, 2.2)
    d = np.abs(((a.base_array - b.base_array + 0.5) % 1.0) - 0.5).max()
    return max(d, abs(a.s - b.s)), 1e-10


def check_jacobian_cocycle():
    sys, x = _wavy(), _point()
    lhs = jacobian(sys, x, 2.2)
    rhs = jacobian(sys, evolve(sys, x, 1.3), 0.9) @ jacobian(sys, x, 1.3)
    return float(np.abs(lhs - rhs).max() / np.abs(lhs).max()), 1e-10


def check_volume():
    return abs(log_abs_det_jacobian(_wavy(), _point(), 3.7)), 1e-10


def check_splitting():
    sp = compute_splitting(_wavy(), _point())
    return max(sp.invariance_residual, sp.duality_defect()), 1e-8


def check_transport_cocycle():
    sys, x = _cat(), _point()
    rng = np.random.default_rng(3)
    conn = TrigField.random(rng, 3, 1, 1, (2, 2), scale=0.3)
    lift = BundleLift.custom(conn)
    lhs = parallel_transport(lift, sys, x, 1.1).matrix
    rhs = parallel_transport(lift, sys, evolve(sys, x, 0.6), 0.5).matrix @ parallel_transport(lift, sys, x, 0.6).matrix
    return float(np.abs(lhs - rhs).max()), 1e-7


def check_forms_closed_form():
    sys, x = _wavy(), _point()
    lift = BundleLift.forms(sys, 1)
    a = parallel_transport(lift, sys, x, 1.7, method="closed_form").matrix
    b = parallel_transport(lift, sys, x, 1.7, method="rk4").matrix
    return float(np.abs(a - b).max() / np.abs(a).max()), 1e-8


def check_adjoint_pairing():
    sys = _cat()
    rng = np.random.default_rng(5)
    u, v = TrigField.random(rng, 3, 1, 1), TrigField.random(rng, 3, 1, 1)
    rel, _, _ = pairing_defect(BundleLift.scalar(_potential()), sys, u, v, 0.8, N=11, fiber_nodes=8)
    return rel, 1e-6


def check_growth_factor():
    est = estimate_growth_factor(_cat(), BundleLift.scalar(), "u", -1.0, samples=8, fiber_samples=2)
    return abs(est.extrapolated_rate + LOG_LAMBDA) / LOG_LAMBDA, 0.02


def check_hyperbolic_thresholds():
    sys = ModelSystem.hyperbolic(1)
    worst = 0.0
    for k in range(3):
        got = threshold_halfplane(sys, BundleLift.perp_forms(sys, k), -2.0, 2.0, samples=4, fiber_samples=1)
        exact = perp_forms_threshold(1, k, -2.0, 2.0)
        worst = max(worst, abs(got.threshold - exact) / abs(exact))
    return worst, 0.02


def check_rus():
    out = check_rus_bound(_cat(), BundleLift.scalar(), samples=8, fiber_samples=2)
    return max(b.rate - b.bound - b.residual for b in out), 1e-12


def check_weight():
    w = build_weight(_cat(), grid_spec=GridSpec(n_base=4, n_fiber=2, n_dir=8))
    bad = sum(not v for k, v in w.checks.items() if isinstance(v, bool))
    return max(w.max_Hp_m, float(bad)), 1e-8


def check_multiplier():
    sys = _cat()
    pts = dual_subspace_samples(sys, "u", samples=4, fiber_samples=1)
    mf = build_multiplier(BundleLift.scalar(), sys, "u", -1.0, -LOG_LAMBDA + 0.2, pts)
    # both margins must have the right sign: report the worst violation as a nonpositive number
    return max(-mf.pos_margin, mf.neg_margin), 0.0


def check_generator():
    sys = _cat()
    q = CotangentPoint(_point(s=0.4), np.array([0.6, -0.8, 0.0]), True)
    w = MatrixSymbol.identity(1, -1.0)
    return generator_check(BundleLift.scalar(_potential()), sys, w, q, 1e-4), 1e-8


def check_resolvent():
    sys = _cat()
    rng = np.random.default_rng(7)
    f = make_continuous(TrigField.random(rng, 3, 1, 1))
    defect, _ = check_resolvent_identity(BundleLift.scalar(_potential()), sys, f, 1.0 + 0.5j)
    return defect, 1e-6


def check_correlation():
    sys = _cat()
    rng = np.random.default_rng(11)
    pair = ObservablePair(TrigField.random(rng, 3, 1, 2), TrigField.random(rng, 3, 1, 2))
    worst = max(abs(correlation(pair, sys, t) - correlation_quadrature(pair, sys, t)) for t in (0.0, 1.5, 3.0))
    return worst, 1e-8


def check_poles():
    one = TrigField.from_terms([((0, 0, 0), 1.0), ((0, 0, 1), 1.0), ((0, 0, -1), 1.0)])
    rep = pole_scan(ObservablePair(one, one), _cat(), ContourSpec(n=61))
    expected = [0.0, 2j * math.pi, -2j * math.pi]
    if len(rep.poles) != 3:
        return math.inf, 1e-3
    return max(min(abs(p - e) for p in rep.poles) for e in expected), 1e-3


SUITE = {
    "flow_group_law": check_group_law,
    "jacobian_cocycle": check_jacobian_cocycle,
    "volume_preservation": check_volume,
    "splitting_invariance": check_splitting,
    "transport_cocycle": check_transport_cocycle,
    "forms_closed_form": check_forms_closed_form,
    "adjoint_pairing": check_adjoint_pairing,
    "growth_factor_cat": check_growth_factor,
    "hyperbolic_thresholds": check_hyperbolic_thresholds,
    "rus_bound": check_rus,
    "weight_construction": check_weight,
    "multiplier_margins": check_multiplier,
    "generator_identity": check_generator,
    "resolvent_identity": check_resolvent,
    "correlation_bookkeeping": check_correlation,
    "pole_ground_truth": check_poles,
}


def _run_one(name, tolerance_scale):
    try:
        value, tol = SUITE[name]()
    except Exception as exc:  # a crashing check is a failed check, not an abort
        return CheckResult(name, math.inf, 0.0, False, f"{type(exc).__name__}: {exc}")
    tol = tol * tolerance_scale
    value = float(value)
    return CheckResult(name, value, tol, bool(value <= tol))


def run_suite(names=None, threads=1, tolerance_scale=1.0):
    names = list(names) if names else list(SUITE)
    unknown = [n for n in names if n not in SUITE]
    if unknown:
        raise KeyError(unknown[0])
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda n: _run_one(n, tolerance_scale), names))
    return [_run_one(n, tolerance_scale) for n in names]
