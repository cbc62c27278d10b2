import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import WAVY_ROOF, base_potential, point
from ruelle_lab.flows import ModelSystem, evolve, jacobian
from ruelle_lab.lifts import (
    BundleLift,
    Gluing,
    adjoint_lift,
    exterior_derivation,
    exterior_power,
    koopman_apply,
    pairing_defect,
    parallel_transport,
    transport_to_csv,
)
from ruelle_lab.trig import TrigField


def skew(rng, n, scale=0.3):
    M = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * (M - M.conj().T)


def test_constant_potential_transport(cat):
    T = parallel_transport(BundleLift.scalar(0.4), cat, point(0.3, 0.2, 0.1), 2.5)
    assert T.matrix[0, 0] == pytest.approx(math.exp(-1.0), rel=1e-13)


def test_forms_closed_form_matches_integration(wavy):
    x = point(0.21, 0.64, 0.3)
    for k in (1, 2):
        lift = BundleLift.forms(wavy, k)
        a = parallel_transport(lift, wavy, x, 2.3, method="closed_form").matrix
        b = parallel_transport(lift, wavy, x, 2.3, method="rk4").matrix
        assert np.abs(a - b).max() <= 1e-8 * np.abs(a).max()


def test_forms_transport_is_exterior_power_of_inverse_transpose(wavy):
    x = point(0.4, 0.1, 0.7)
    J = jacobian(wavy, x, 1.7)
    T = parallel_transport(BundleLift.forms(wavy, 2), wavy, x, 1.7).matrix
    assert np.allclose(T, exterior_power(np.linalg.inv(J).T, 2), atol=1e-12)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_perp_forms_norm_on_hyperbolic_model(hyp, k):
    t = 1.3
    T = parallel_transport(BundleLift.perp_forms(hyp, k), hyp, point(0, 0, 0), t)
    assert T.op_norm == pytest.approx(math.exp(min(k, 2 - k) * t), rel=1e-12)


def test_perp_frame_annihilates_generator(hyp, cat):
    assert BundleLift.perp_forms(hyp, 1).annihilator_defect(hyp) == 0.0
    assert BundleLift.perp_forms(cat, 1).annihilator_defect(cat) == 0.0


def test_transport_cocycle_exact_kinds(wavy):
    x = point(0.15, 0.85, 0.2)
    for lift in (BundleLift.forms(wavy, 1), BundleLift.scalar(base_potential())):
        y = evolve(wavy, x, 1.0)
        two = parallel_transport(lift, wavy, x, 2.0).matrix
        prod = parallel_transport(lift, wavy, y, 1.0).matrix @ parallel_transport(lift, wavy, x, 1.0).matrix
        assert np.abs(two - prod).max() <= 1e-8


def test_transport_cocycle_integrated_connection(cat, rng):
    conn = TrigField.random(rng, 3, 1, 1, (2, 2), scale=0.3)
    lift = BundleLift.custom(conn)
    x = point(0.3, 0.55, 0.6)
    a, b = 0.8, 1.1
    whole = parallel_transport(lift, cat, x, a + b).matrix
    split = parallel_transport(lift, cat, evolve(cat, x, a), b).matrix @ parallel_transport(lift, cat, x, a).matrix
    assert np.abs(whole - split).max() <= 1e-6


def test_skew_connection_transport_is_unitary(cat, rng):
    lift = BundleLift.custom(skew(rng, 3))
    T = parallel_transport(lift, cat, point(0.1, 0.1, 0.1), 2.0).matrix
    assert np.allclose(T.conj().T @ T, np.eye(3), atol=1e-12)


def test_koopman_pure_composition(cat):
    u = TrigField.from_terms([((1, 2, 0), 1.0)])
    x = point(0.3, 0.8, 0.45)
    t = 1.7
    y = evolve(cat, x, -t)
    expect = np.exp(2j * np.pi * (y.base_array @ [1, 2]))
    assert koopman_apply(BundleLift.scalar(), cat, u, t, x)[0] == pytest.approx(expect, abs=1e-12)


def test_koopman_constant_potential_scales(cat):
    u = TrigField.from_terms([((1, 0, 1), 0.5)])
    x = point(0.3, 0.8, 0.45)
    a = koopman_apply(BundleLift.scalar(0.25), cat, u, 2.0, x)
    b = koopman_apply(BundleLift.scalar(), cat, u, 2.0, x)
    assert a[0] == pytest.approx(math.exp(-0.5) * b[0], abs=1e-13)


def test_koopman_zero_time(cat):
    u = TrigField.from_terms([((1, 1, 1), 0.5 + 0.2j)])
    x = point(0.2, 0.4, 0.5)
    assert koopman_apply(BundleLift.scalar(0.3), cat, u, 0.0, x)[0] == pytest.approx(u([[0.2, 0.4]], [0.5])[0])


def test_koopman_semigroup(cat, rng):
    lift = BundleLift.custom(skew(rng, 2))
    u = TrigField.random(rng, 3, 1, 1, (2,))
    x = point(0.35, 0.65, 0.3)
    y = evolve(cat, x, -0.7)
    T = parallel_transport(lift, cat, y, 0.7).matrix
    inner = koopman_apply(lift, cat, u, 1.1, y)
    assert np.allclose(T @ inner, koopman_apply(lift, cat, u, 1.8, x), atol=1e-10)


def test_adjoint_of_real_potential_is_itself(cat):
    V = base_potential()
    adj = adjoint_lift(BundleLift.scalar(V), cat)
    assert adj.kind.value == "scalar_potential"
    x = point(0.2, 0.3, 0.4)
    a = parallel_transport(BundleLift.scalar(V), cat, x, 1.5).op_norm
    b = parallel_transport(adj, cat, x, 1.5).op_norm
    assert a == pytest.approx(b)


def test_adjoint_of_zero_connection(cat):
    adj = adjoint_lift(BundleLift.custom(np.zeros((2, 2))), cat)
    assert np.all(adj.connection_field(cat).coeffs == 0)


def test_adjoint_pairing_constant_skew_connection(cat, rng):
    lift = BundleLift.custom(skew(rng, 2))
    u = TrigField.random(rng, 3, 1, 1, (2,))
    v = TrigField.random(rng, 3, 1, 1, (2,))
    defect, lhs, _ = pairing_defect(lift, cat, u, v, 0.7, N=13, fiber_nodes=8)
    assert abs(lhs) > 1e-3
    assert defect <= 1e-8


def test_adjoint_pairing_base_dependent_potential(cat, rng):
    u = TrigField.random(rng, 3, 1, 1)
    v = TrigField.random(rng, 3, 1, 1)
    defect, _, _ = pairing_defect(BundleLift.scalar(base_potential()), cat, u, v, 1.3, N=13, fiber_nodes=8)
    assert defect <= 1e-8


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 3), st.integers(0, 2**31))
def test_exterior_power_is_multiplicative(k, seed):
    r = np.random.default_rng(seed)
    A, B = r.standard_normal((3, 3)), r.standard_normal((3, 3))
    assert np.allclose(exterior_power(A @ B, k), exterior_power(A, k) @ exterior_power(B, k), atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 3), st.integers(0, 2**31))
def test_exterior_derivation_generates_power(k, seed):
    L = np.random.default_rng(seed).standard_normal((3, 3)) * 0.5
    h = 1e-6
    from scipy.linalg import expm

    fd = (exterior_power(expm(h * L), k) - exterior_power(expm(-h * L), k)) / (2 * h)
    assert np.allclose(fd, exterior_derivation(L, k), atol=1e-7)


def test_gluing_modes():
    J = np.array([[2.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.3, -0.2, 1.0]])
    assert Gluing().matrix(J) is None
    cov = Gluing("covariant", 1).matrix(J)
    assert np.allclose(cov, np.linalg.inv(J).T)
    assert np.allclose(Gluing("contravariant", 1).matrix(J), J)


def test_form_degree_bounds(hyp):
    with pytest.raises(ValueError):
        BundleLift.forms(hyp, 4)
    with pytest.raises(ValueError):
        BundleLift.perp_forms(hyp, 3)


def test_custom_connection_must_be_square():
    with pytest.raises(ValueError):
        BundleLift.custom(np.zeros((2, 3)))


def test_transport_csv_layout(tmp_path, cat):
    res = parallel_transport(BundleLift.forms(cat, 1), cat, point(0.1, 0.2, 0.9), 0.5)
    path = tmp_path / "T.csv"
    transport_to_csv(res, path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",")[:2] == ["re0", "im0"]
    assert len(lines) == 4 and len(lines[1].split(",")) == 6
    first = [float(v) for v in lines[1].split(",")]
    assert first[0] == pytest.approx(res.matrix[0, 0].real)


def test_reversed_system_time_sign(cat):
    rev = cat.reversed()
    x = point(0.1, 0.2, 0.3)
    a = evolve(rev, x, 0.8)
    b = evolve(cat, x, -0.8)
    assert np.allclose(a.base_array, b.base_array) and a.s == pytest.approx(b.s)


def test_wavy_fixture_uses_nonconstant_roof(wavy):
    assert not wavy.roof.is_constant
    assert ModelSystem.cat(roof=WAVY_ROOF).mean_roof == pytest.approx(1.0)
