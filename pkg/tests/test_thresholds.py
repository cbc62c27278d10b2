import math

import numpy as np
import pytest

from helpers import LOG_LAMBDA, base_potential, point, rel
from ruelle_lab.errors import NonConvergence
from ruelle_lab.flows import ModelSystem
from ruelle_lab.lifts import BundleLift, adjoint_lift
from ruelle_lab.thresholds import (
    cat_expansion_rate,
    check_rus_bound,
    contraction_rates,
    estimate_growth_factor,
    fit_rate,
    log_growth_functional,
    perp_forms_threshold,
    perp_forms_transport_rate,
    sample_points,
    scalar_threshold,
    threshold_halfplane,
    transport_growth,
)

FAST = dict(samples=8, fiber_samples=2)


def test_zero_weight_functional_vanishes(cat):
    assert log_growth_functional(cat, BundleLift.scalar(), point(0.3, 0.4, 0.2), 5.0, "u", 0.0) == pytest.approx(
        0.0, abs=1e-12
    )


@pytest.mark.parametrize("k", [1, 2, 3])
def test_fixed_point_functional(cat, k):
    F = log_growth_functional(cat, BundleLift.scalar(), point(0, 0, 0.5), float(k), "u", -1.0)
    assert F == pytest.approx(-k * LOG_LAMBDA, rel=1e-10)


def test_hyperbolic_perp_functional(hyp):
    F = log_growth_functional(hyp, BundleLift.perp_forms(hyp, 1), point(0.1, 0.2, 0.3), 1.0, "s", 2.0)
    assert F == pytest.approx(-1.0, abs=1e-12)


def test_side_weight_sign_is_checked(cat):
    with pytest.raises(ValueError):
        log_growth_functional(cat, BundleLift.scalar(), point(0, 0, 0), 1.0, "u", 1.0)
    with pytest.raises(ValueError):
        log_growth_functional(cat, BundleLift.scalar(), point(0, 0, 0), 1.0, "s", -1.0)


def test_cat_growth_factor(cat):
    est = estimate_growth_factor(cat, BundleLift.scalar(), "u", -1.0, **FAST)
    assert rel(est.extrapolated_rate, -LOG_LAMBDA) <= 0.02
    assert len(est.sup_rates) == 4 and est.sample_count == 16


def test_hyperbolic_growth_factor_exact(hyp):
    est = estimate_growth_factor(hyp, BundleLift.perp_forms(hyp, 1), "u", -2.0, **FAST)
    assert est.extrapolated_rate == pytest.approx(-1.0, abs=1e-12)


def test_unweighted_growth_is_zero(wavy):
    est = estimate_growth_factor(wavy, BundleLift.scalar(), "u", 0.0, **FAST)
    assert abs(est.extrapolated_rate) <= est.residual + 1e-12


def test_scalar_threshold_closed_form(cat):
    res = threshold_halfplane(cat, BundleLift.scalar(), -1.0, 2.0, **FAST)
    expect = scalar_threshold(LOG_LAMBDA, LOG_LAMBDA, -1.0, 2.0)
    assert rel(res.threshold, expect) <= 0.02
    assert res.threshold == max(res.estimate_u.extrapolated_rate, res.estimate_s.extrapolated_rate)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_hyperbolic_threshold_closed_form(hyp, k):
    res = threshold_halfplane(hyp, BundleLift.perp_forms(hyp, k), -2.0, 1.0, **FAST)
    assert res.threshold == pytest.approx(perp_forms_threshold(1, k, -2.0, 1.0), abs=1e-12)


def test_zero_weights_zero_threshold(cat):
    res = threshold_halfplane(cat, BundleLift.scalar(), 0.0, 0.0, **FAST)
    assert abs(res.threshold) < 1e-12


def test_threshold_rejects_bad_weights(cat):
    with pytest.raises(ValueError):
        threshold_halfplane(cat, BundleLift.scalar(), 1.0, 1.0)


def test_contraction_rates_models(cat, hyp):
    r = contraction_rates(cat, **FAST)
    assert rel(r.theta_u, LOG_LAMBDA) <= 0.02 and rel(r.theta_s, LOG_LAMBDA) <= 0.02
    h = contraction_rates(hyp, **FAST)
    assert h.theta_u == pytest.approx(1.0) and h.theta_s == pytest.approx(1.0)


def test_roof_two_halves_rates():
    r = contraction_rates(ModelSystem.cat(roof=2.0), **FAST)
    assert rel(r.theta_s, LOG_LAMBDA / 2) <= 0.02
    assert cat_expansion_rate(tau=2.0) == pytest.approx(LOG_LAMBDA / 2)


def test_monotone_in_weight(wavy):
    lift = BundleLift.scalar()
    rates = [estimate_growth_factor(wavy, lift, "u", m, **FAST) for m in (0.0, -1.0, -2.0)]
    for a, b in zip(rates, rates[1:]):
        assert b.extrapolated_rate <= a.extrapolated_rate + a.residual + b.residual


def test_metric_independence(cat):
    lift = BundleLift.forms(cat, 1)
    plain = estimate_growth_factor(cat, lift, "u", -1.0, **FAST)
    metric = np.diag([1.0, 4.0, 9.0])
    bent = estimate_growth_factor(cat, lift, "u", -1.0, fiber_metric=metric, **FAST)
    diffs = np.abs(np.array(plain.sup_rates) - np.array(bent.sup_rates)) * np.array(plain.horizons)
    assert diffs.max() <= math.log(3.0) * 2 + 1e-9  # O(1/t): bounded by the log condition number
    assert abs(plain.extrapolated_rate - bent.extrapolated_rate) <= plain.residual + bent.residual + 1e-9


def test_side_symmetry_under_time_reversal(cat):
    lift = BundleLift.scalar(base_potential())
    # a base-dependent potential makes the sup converge slowly, so compare within residuals
    r_s = estimate_growth_factor(cat, lift, "s", 1.0, residual_ceiling=None, **FAST)
    rev = cat.reversed()
    r_u = estimate_growth_factor(rev, adjoint_lift(lift, cat), "u", -1.0, residual_ceiling=None, **FAST)
    assert abs(r_s.extrapolated_rate - r_u.extrapolated_rate) <= r_s.residual + r_u.residual


@pytest.mark.parametrize("family", ["cat", "hyp"])
def test_rus_bound(cat, hyp, family):
    sys = cat if family == "cat" else hyp
    lift = BundleLift.scalar() if family == "cat" else BundleLift.perp_forms(hyp, 1)
    for b in check_rus_bound(sys, lift, **FAST):
        assert b.holds, b


def test_transport_growth_rates(hyp, cat):
    for k in range(3):
        g = transport_growth(hyp, BundleLift.perp_forms(hyp, k), **FAST)
        assert g.rate == pytest.approx(perp_forms_transport_rate(1, k), abs=1e-12)
    g = transport_growth(cat, BundleLift.scalar(0.3), **FAST)
    assert g.rate == pytest.approx(-0.3, abs=1e-12)
    assert g.tail_bound(-0.3, 10) == math.inf


def test_short_horizons_do_not_converge(wavy):
    with pytest.raises(NonConvergence):
        estimate_growth_factor(wavy, BundleLift.scalar(), "u", -1.0, horizons=(0.5, 1.0, 1.5, 2.5),
                               residual_ceiling=0.05, **FAST)


def test_fit_rate_recovers_model():
    h = [5.0, 10.0, 20.0, 40.0]
    r, c, res = fit_rate(h, [-0.5 + 2.0 / t for t in h])
    assert r == pytest.approx(-0.5) and c == pytest.approx(2.0) and res < 1e-12
    with pytest.raises(ValueError):
        fit_rate([1.0, 2.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        fit_rate([1.0, 3.0, 2.0], [0.0, 0.0, 0.0])


def test_sampling_is_deterministic_and_seeded(cat):
    a = sample_points(cat, 5, 2, seed=0)
    b = sample_points(cat, 5, 2, seed=0)
    c = sample_points(cat, 5, 2, seed=3)
    assert all(np.array_equal(p.base_array, q.base_array) and p.s == q.s for p, q in zip(a, b))
    assert not np.array_equal(a[0].base_array, c[0].base_array)
    assert len(a) == 10


def test_estimate_report_fields(cat):
    d = estimate_growth_factor(cat, BundleLift.scalar(), "s", 1.0, seed=2, **FAST).to_dict()
    assert set(d) == {"side", "m", "horizons", "sup_rates", "extrapolated_rate", "residual", "samples", "seed"}
    assert d["seed"] == 2
