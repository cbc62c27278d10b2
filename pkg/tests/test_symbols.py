import math

import numpy as np
import pytest

from helpers import LOG_LAMBDA, base_potential, point, rel
from ruelle_lab.errors import BracketInvalid, MonotonicityViolation, ThresholdViolated
from ruelle_lab.flows import CotangentPoint, compute_splitting
from ruelle_lab.lifts import BundleLift
from ruelle_lab.symbols import (
    BumpSpec,
    GridSpec,
    MatrixSymbol,
    build_multiplier,
    build_weight,
    bump,
    dual_subspace_samples,
    generator_apply,
    generator_check,
    lifted_transport,
    smoothstep,
    sphere_directions,
    threshold_by_bisection,
)
from ruelle_lab.trig import TrigField

SMALL_GRID = GridSpec(n_base=4, n_fiber=2, n_dir=16)


def q_at(s=0.4, xi=(0.6, -0.8, 0.0), base=(0.3, 0.7)):
    return CotangentPoint(point(*base, s), np.array(xi, dtype=float), True)


def skew(seed, n=2, scale=0.15):
    r = np.random.default_rng(seed)
    M = r.standard_normal((n, n)) + 1j * r.standard_normal((n, n))
    return scale * (M - M.conj().T)


# -- lifted group and generator ---------------------------------------------


def test_identity_symbol_trivial_lift(cat):
    w = MatrixSymbol.identity(1)
    for t in (0.0, 0.7, 3.1):
        assert lifted_transport(BundleLift.scalar(), cat, w, q_at(), t) == pytest.approx(np.eye(1))


def test_identity_symbol_constant_potential(cat):
    w = MatrixSymbol.identity(1)
    got = lifted_transport(BundleLift.scalar(0.3), cat, w, q_at(), 1.5)
    assert got[0, 0] == pytest.approx(math.exp(-0.9), rel=1e-13)


def test_lifted_transport_at_zero(cat):
    F = TrigField.from_terms([((1, 0, 0), np.array([[0.5]])), ((0, 0, 1), np.array([[0.25]]))], (1, 1))
    w = MatrixSymbol(F, -1.0)
    q = q_at()
    assert np.allclose(lifted_transport(BundleLift.scalar(), cat, w, q, 0.0), w.evaluate(cat, q))


def test_generator_trivial_case(cat):
    assert generator_check(BundleLift.scalar(), cat, MatrixSymbol.identity(1), q_at(), 1e-4) <= 1e-10


def test_generator_constant_connection(cat):
    A0 = skew(1) + 0.05 * np.eye(2)
    lift = BundleLift.custom(A0)
    w = MatrixSymbol.identity(2)
    q = q_at()
    assert np.allclose(generator_apply(lift, cat, w, q), -A0.conj().T - A0)
    assert generator_check(lift, cat, w, q, 1e-4) <= 1e-8


def test_generator_second_order(cat):
    lift = BundleLift.custom(skew(2, scale=0.4) + 0.2 * np.eye(2))
    w = MatrixSymbol.identity(2, -1.0)
    q = q_at()
    d1 = generator_check(lift, cat, w, q, 2e-2)
    d2 = generator_check(lift, cat, w, q, 1e-2)
    assert 3.5 <= d1 / d2 <= 4.5


def test_generator_weighted_symbol_on_hyperbolic(hyp):
    lift = BundleLift.perp_forms(hyp, 1)
    w = MatrixSymbol.identity(2, 1.0)
    q = CotangentPoint(point(0.1, 0.2, 0.3), np.array([0.6, 0.8, 0.0]), True)
    assert generator_check(lift, hyp, w, q, 1e-4) <= 1e-5


def test_generator_base_dependent_potential(cat):
    assert generator_check(BundleLift.scalar(base_potential()), cat, MatrixSymbol.identity(1, -1.0), q_at()) <= 1e-8


# -- weight ------------------------------------------------------------------


def test_smoothstep_and_bump():
    u = np.linspace(-0.5, 1.5, 41)
    v = smoothstep(u)
    assert v.min() == 0 and v.max() == 1 and np.all(np.diff(v) >= 0)
    r = np.array([0.0, 0.1, 0.15, 0.2, 0.5])
    assert bump(r, 0.1, 0.2).tolist()[:2] == [1.0, 1.0] and bump(r, 0.1, 0.2)[-1] == 0.0
    with pytest.raises(ValueError):
        BumpSpec(0.2, 0.1)


def test_sphere_directions_are_unit():
    d = sphere_directions(50, 3, seed=1)
    assert d.shape == (50, 3) and np.allclose(np.linalg.norm(d, axis=1), 1)


def test_weight_small_grid(cat):
    w = build_weight(cat, grid_spec=SMALL_GRID)
    assert w.size == SMALL_GRID.size
    assert w.max_Hp_m <= 1e-8
    assert all(w.checks[k] for k in ("bounds", "inner_u", "inner_s", "outside", "monotone"))
    assert w.checks["outside_count"] > 0 and w.checks["inner_u_count"] > 0


def test_weight_values_on_exact_duals(cat):
    w = build_weight(cat, params=(-2.0, 0.0, 2.0), grid_spec=SMALL_GRID)
    sp = compute_splitting(cat, point(*w.bases[0], w.s[0]))
    du = sp.dual_eu[0] / np.linalg.norm(sp.dual_eu[0])
    ds = sp.dual_es[0] / np.linalg.norm(sp.dual_es[0])
    idx_u = np.flatnonzero(np.all(np.isclose(np.abs(w.xi @ du)[:, None], 1.0), axis=1) & np.all(w.bases == w.bases[0], axis=1))
    idx_s = np.flatnonzero(np.isclose(np.abs(w.xi @ ds), 1.0) & np.all(w.bases == w.bases[0], axis=1))
    assert idx_u.size and idx_s.size
    assert np.allclose(w.values[idx_u], -2.0) and np.allclose(w.values[idx_s], 2.0)


def test_weight_far_from_duals_is_m0(cat):
    w = build_weight(cat, params=(-1.0, 0.5, 3.0), grid_spec=SMALL_GRID)
    far = (w.dist_u >= 0.2) & (w.dist_s >= 0.2)
    assert far.any() and np.allclose(w.values[far], 0.5)


def test_weight_hyperbolic(hyp):
    w = build_weight(hyp, grid_spec=SMALL_GRID)
    assert w.max_Hp_m <= 1e-8 and w.checks["inner_u"] and w.checks["outside"]


def test_weight_short_average_violates(wavy):
    with pytest.raises(MonotonicityViolation):
        build_weight(wavy, T_avg=0.01, h_fd=1e-3, grid_spec=SMALL_GRID, tol=1e-14)


def test_weight_parameter_order(cat):
    with pytest.raises(ValueError):
        build_weight(cat, params=(1.0, 0.0, 2.0), grid_spec=SMALL_GRID)


# -- multipliers -------------------------------------------------------------


@pytest.fixture
def u_samples(cat):
    return dual_subspace_samples(cat, "u", samples=6, fiber_samples=2)


def test_multiplier_above_threshold(cat, u_samples):
    mf = build_multiplier(BundleLift.scalar(), cat, "u", -1.0, -0.5, u_samples)
    assert mf.pos_margin > 0 and mf.neg_margin < 0
    assert mf.hermitian_defect < 1e-12
    assert mf.degree == -2.0


def test_multiplier_below_threshold(cat, u_samples):
    with pytest.raises(ThresholdViolated):
        build_multiplier(BundleLift.scalar(), cat, "u", -1.0, -1.2, u_samples)


def test_multiplier_zero_weight_closed_form(cat, u_samples):
    mf = build_multiplier(BundleLift.scalar(), cat, "u", 0.0, 0.1, u_samples)
    expect = (1 - math.exp(-0.2 * mf.t0)) / 0.2
    assert np.allclose(mf.matrices[:, 0, 0].real, expect, rtol=1e-8)


def test_multiplier_homogeneity(cat, u_samples):
    mf = build_multiplier(BundleLift.scalar(), cat, "u", -1.0, -0.5, u_samples)
    xi = mf.sample_points[0].xi
    assert np.allclose(mf.evaluate(0, 3.0 * xi), 3.0 ** (-2.0) * mf.matrices[0])


def test_multiplier_stable_side(cat):
    pts = dual_subspace_samples(cat, "s", samples=4, fiber_samples=1)
    mf = build_multiplier(BundleLift.scalar(), cat, "s", 1.0, -0.5, pts)
    assert mf.pos_margin > 0 and mf.neg_margin < 0


def test_multiplier_rejects_wrong_sign(cat, u_samples):
    with pytest.raises(ValueError):
        build_multiplier(BundleLift.scalar(), cat, "u", 1.0, 0.0, u_samples)


def test_multiplier_rejects_degenerate_samples(cat):
    sp = compute_splitting(cat, point(0.2, 0.2, 0.1))
    bad = [CotangentPoint(point(0.2, 0.2, 0.1), sp.dual_es[0], True)]
    with pytest.raises(ValueError):
        build_multiplier(BundleLift.scalar(), cat, "u", -1.0, -0.5, bad)


def test_bisection_cat(cat):
    crit = threshold_by_bisection(BundleLift.scalar(), cat, "u", -1.0, (-2.0, 0.0))
    assert rel(crit, -LOG_LAMBDA) <= 0.05


def test_bisection_hyperbolic(hyp):
    crit = threshold_by_bisection(BundleLift.perp_forms(hyp, 1), hyp, "u", -2.0, (-2.0, 0.0))
    assert rel(crit, -1.0) <= 0.05


def test_bisection_zero_weight(cat):
    crit = threshold_by_bisection(BundleLift.scalar(), cat, "u", 0.0, (-0.5, 0.5), tol=1e-3)
    assert abs(crit) <= 1e-3


def test_bisection_bracket_errors(cat):
    with pytest.raises(BracketInvalid):
        threshold_by_bisection(BundleLift.scalar(), cat, "u", -1.0, (-0.5, 0.0))
    with pytest.raises(BracketInvalid):
        threshold_by_bisection(BundleLift.scalar(), cat, "u", -1.0, (0.0, -2.0))


def test_weight_field_serializes(cat):
    d = build_weight(cat, grid_spec=SMALL_GRID).to_dict()
    assert d["grid_size"] == SMALL_GRID.size and d["checks"]["monotone"]
