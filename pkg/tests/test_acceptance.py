"""Acceptance criteria 1-9.

Each criterion prints exactly one line of the form

    CRITERION <n> PASS|FAIL  <title>: <measured values>

The lines are also repeated in the pytest terminal summary.  Run this file
directly (``python3 tests/test_acceptance.py``) to print them without pytest.
"""

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from helpers import LOG_LAMBDA, WAVY_ROOF, base_potential  # noqa: E402
from ruelle_lab.errors import ThresholdViolated  # noqa: E402
from ruelle_lab.flows import CotangentPoint, ModelSystem, PhasePoint  # noqa: E402
from ruelle_lab.lifts import BundleLift  # noqa: E402
from ruelle_lab.resolvent import (  # noqa: E402
    ObservablePair,
    check_resolvent_identity,
    correlation,
    correlation_quadrature,
    pole_scan,
)
from ruelle_lab.symbols import (  # noqa: E402
    MatrixSymbol,
    build_multiplier,
    build_weight,
    dual_subspace_samples,
    generator_check,
    threshold_by_bisection,
)
from ruelle_lab.thresholds import (  # noqa: E402
    check_rus_bound,
    estimate_growth_factor,
    perp_forms_threshold,
    threshold_halfplane,
    transport_growth,
)
from ruelle_lab.trig import TrigField, make_continuous  # noqa: E402

RESULTS = {}


def record(n, title, passed, detail):
    line = f"CRITERION {n} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    RESULTS[n] = line
    print(line)
    return passed


def within(value, target, tol):
    return abs(value - target) <= tol * abs(target)


# ---------------------------------------------------------------------------


def criterion_1():
    start = time.perf_counter()
    cat, lift = ModelSystem.cat(), BundleLift.scalar()
    res = threshold_halfplane(cat, lift, -1.0, 1.0)
    bis_u = threshold_by_bisection(lift, cat, "u", -1.0, (-2.0, 0.0))
    bis_s = threshold_by_bisection(lift, cat, "s", 1.0, (-2.0, 0.0))
    elapsed = time.perf_counter() - start
    target = -LOG_LAMBDA
    r_u, r_s = res.estimate_u.extrapolated_rate, res.estimate_s.extrapolated_rate
    ok = all(within(v, target, 0.05) for v in (r_u, r_s, res.threshold, bis_u, bis_s, max(bis_u, bis_s)))
    ok = ok and elapsed <= 60
    return record(1, "scalar threshold on the cat suspension", ok,
                  f"r_u={r_u:.6f} r_s={r_s:.6f} threshold={res.threshold:.6f} "
                  f"bisection_u={bis_u:.4f} bisection_s={bis_s:.4f} target={target:.6f} ({elapsed:.1f} s)")


def criterion_2():
    hyp = ModelSystem.hyperbolic(1)
    parts, ok = [], True
    for k in (0, 1, 2):
        got = threshold_halfplane(hyp, BundleLift.perp_forms(hyp, k), -2.0, 2.0).threshold
        exact = perp_forms_threshold(1, k, -2.0, 2.0)
        ok &= within(got, exact, 0.02)
        parts.append(f"k={k}: {got:.6f} vs {exact:g}")
    return record(2, "perpendicular k-form thresholds on the constant-curvature model", ok, "; ".join(parts))


def criterion_3():
    start = time.perf_counter()
    w = build_weight(ModelSystem.cat(), params=(-2.0, 0.0, 2.0), T_avg=8.0)
    elapsed = time.perf_counter() - start
    c = w.checks
    ok = (w.size >= 10_000 and w.max_Hp_m <= 1e-8 and c["inner_u"] and c["inner_s"] and c["outside"]
          and c["bounds"] and min(c["inner_u_count"], c["inner_s_count"], c["outside_count"]) > 0
          and elapsed <= 120)
    return record(3, "escape weight on a cosphere grid", ok,
                  f"grid={w.size} max_Hp_m={w.max_Hp_m:.2e} inner_u={c['inner_u_count']} "
                  f"inner_s={c['inner_s_count']} outside={c['outside_count']} ({elapsed:.1f} s)")


def _multiplier_case(sys, lift, m):
    est = estimate_growth_factor(sys, lift, "u", m, residual_ceiling=None).extrapolated_rate
    pts = dual_subspace_samples(sys, "u")
    mf = build_multiplier(lift, sys, "u", m, est + 0.2, pts)
    above = mf.pos_margin > 0 and mf.neg_margin < 0
    try:
        build_multiplier(lift, sys, "u", m, est - 0.2, pts)
        below = False
    except ThresholdViolated:
        below = True
    crit = threshold_by_bisection(lift, sys, "u", m, (est - 1.0, est + 1.0), sample_points=pts)
    close = within(crit, est, 0.05)
    return above and below and close, f"r_u={est:.4f} bisection={crit:.4f} pos={mf.pos_margin:.3f} neg={mf.neg_margin:.3f}"


def criterion_4():
    cases = {
        "cat": (ModelSystem.cat(), BundleLift.scalar(), -1.0),
        "cat wavy roof": (ModelSystem.cat(roof=WAVY_ROOF), BundleLift.scalar(), -1.0),
        "model k=1": (ModelSystem.hyperbolic(1), BundleLift.perp_forms(ModelSystem.hyperbolic(1), 1), -2.0),
    }
    ok, parts = True, []
    for name, (sys, lift, m) in cases.items():
        good, text = _multiplier_case(sys, lift, m)
        ok &= good
        parts.append(f"[{name}] {text}")
    return record(4, "multiplier definiteness and bisection", ok, " ".join(parts))


def _fiber_symbol(n, amp):
    terms = [((0, 0, 0), np.eye(n)), ((0, 0, 1), amp * np.eye(n)), ((0, 0, -1), amp * np.eye(n))]
    return MatrixSymbol(TrigField.from_terms(terms, (n, n)), -1.0)


def criterion_5():
    cat = ModelSystem.cat()
    q = CotangentPoint(PhasePoint(np.array([0.3, 0.7]), 0.4), np.array([0.6, -0.8, 0.0]), True)
    r = np.random.default_rng(1)
    M = r.standard_normal((3, 3)) + 1j * r.standard_normal((3, 3))
    A0 = 0.3 * (M - M.conj().T) + 0.1 * np.eye(3)
    cases = {
        "scalar V(x)": (BundleLift.scalar(base_potential()), MatrixSymbol.identity(1, -1.0)),
        "custom A0": (BundleLift.custom(A0), MatrixSymbol.identity(3, -1.0)),
        "forms k=1": (BundleLift.forms(cat, 1), _fiber_symbol(3, 0.01)),
    }
    ok, parts = True, []
    for name, (lift, w) in cases.items():
        d = generator_check(lift, cat, w, q, 1e-4)
        ratio = generator_check(lift, cat, w, q, 2e-2) / generator_check(lift, cat, w, q, 1e-2)
        ok &= d <= 1e-8 and 3.5 <= ratio <= 4.5
        parts.append(f"{name}: defect={d:.1e} order_ratio={ratio:.3f}")
    return record(5, "generator identity for the lifted group", ok, "; ".join(parts))


def criterion_6():
    cat = ModelSystem.cat()
    rng = np.random.default_rng(6)
    M = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    lifts = [(BundleLift.scalar(base_potential()), ()), (BundleLift.custom(0.3 * (M - M.conj().T) + 0.1), (2,))]
    worst, count = 0.0, 0
    for lift, shape in lifts:
        growth = transport_growth(cat, lift, samples=8, fiber_samples=2)
        c = growth.rate
        grid = [c + 0.5, c + 0.5 + 4j, c + 2.0, c + 2.0 - 3j]
        for _ in range(5):
            f = make_continuous(TrigField.random(rng, 3, 1, 1, shape))
            for lam in grid:
                defect, _ = check_resolvent_identity(lift, cat, f, lam, growth=growth)
                worst = max(worst, defect)
                count += 1
    return record(6, "resolvent identity on random sections", worst <= 1e-6,
                  f"{count} (f, lambda) pairs, sup defect={worst:.2e}")


def criterion_7():
    cat = ModelSystem.cat()
    h = TrigField.from_terms([((0, 0, 0), 1.0), ((0, 0, 1), 1.0), ((0, 0, -1), 1.0)])
    rep = pole_scan(ObservablePair(h, h), cat)
    targets = (0.0, 2j * math.pi, -2j * math.pi)
    err = max(min(abs(p - t) for p in rep.poles) for t in targets) if rep.poles else math.inf
    exact = len(rep.poles) == 3 and err <= 1e-3
    f = TrigField.from_terms([((1, 0, 0), 1.0), ((0, 1, 1), 0.5j), ((2, -1, 0), 0.3)])
    g = TrigField.from_terms([((1, 0, 0), 0.4), ((1, 1, 0), 1.0), ((0, 1, -1), 0.2)])
    free = pole_scan(ObservablePair(f, g), cat)
    ok = exact and not free.poles
    return record(7, "resonances of the constant-roof suspension", ok,
                  f"{len(rep.poles)} poles, max location error={err:.1e}, fit_error={rep.fit_error:.1e}; "
                  f"mean-zero base pair: {len(free.poles)} poles")


def criterion_8():
    cat = ModelSystem.cat()
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(20):
        pair = ObservablePair(TrigField.random(rng, 4, 2, 2), TrigField.random(rng, 4, 2, 2))
        for t in range(11):
            worst = max(worst, abs(correlation(pair, cat, float(t)) - correlation_quadrature(pair, cat, float(t))))
    return record(8, "bookkeeping correlations against grid quadrature", worst <= 1e-8,
                  f"20 pairs x 11 times, max deviation={worst:.2e}")


def criterion_9():
    hyp = ModelSystem.hyperbolic(1)
    cases = {
        "cat scalar": (ModelSystem.cat(), BundleLift.scalar()),
        "cat wavy roof": (ModelSystem.cat(roof=WAVY_ROOF), BundleLift.scalar()),
        "model k=1": (hyp, BundleLift.perp_forms(hyp, 1)),
        "model k=2": (hyp, BundleLift.perp_forms(hyp, 2)),
    }
    ok, parts = True, []
    for name, (sys_, lift) in cases.items():
        checks = check_rus_bound(sys_, lift, ms=(0.0, -1.0, -2.0))
        ok &= all(b.holds for b in checks)
        slack = min(b.bound + b.residual - b.rate for b in checks)
        parts.append(f"{name}: min slack={slack:.2e}")
    return record(9, "growth factor below transport growth plus contraction", ok, "; ".join(parts))


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7,
            criterion_8, criterion_9]


@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"criterion_{i}" for i in range(1, 10)])
def test_acceptance(criterion):
    assert criterion()


if __name__ == "__main__":
    results = [c() for c in CRITERIA]
    raise SystemExit(0 if all(results) else 1)
