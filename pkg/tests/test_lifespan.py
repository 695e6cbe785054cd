import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qwlifespan.data import BumpField, InitialDataSet, ZeroField
from qwlifespan.lifespan import (
    BoundExpired,
    RiccatiProblem,
    TableBoundaryWarning,
    characteristic_curve,
    compute_H,
    default_start_time,
    model_riccati,
    predict_lifespan,
    riccati_blowup_time,
    riccati_bound,
    riccati_integrate,
    riccati_rk4,
    theta_on_cone,
)
from qwlifespan.nullform import CoefficientSet, DomainError, SpeedVector
from qwlifespan.radiation import build_radiation_table, radiation_derivatives

from conftest import CUBIC_KEY

#: max F' F'' of the unit f-bump, from an independent QUADPACK evaluation
UNIT_F_BUMP_H = 0.470469


# ---------------------------------------------------------------------------
# H


def test_theta_on_cone(cubic_model, unit_speed):
    assert np.allclose(theta_on_cone(cubic_model, unit_speed, 1, np.linspace(0, 6, 5)), -1.0)


def test_H_zero_for_zero_data_or_null_form(cubic_model, unit_speed, f_bump):
    zero = InitialDataSet.zero(1)
    assert compute_H(cubic_model, unit_speed, [build_radiation_table(zero, 1, -4, 21, 1)]).H == 0.0
    tab = build_radiation_table(f_bump, 1, -4, 41, 1)
    assert compute_H(CoefficientSet(1), unit_speed, [tab]).H == 0.0


def test_H_matches_dense_grid(cubic_model, unit_speed, f_bump):
    est = compute_H(cubic_model, unit_speed, [build_radiation_table(f_bump, 1, -8, 161, 1)])
    rho = np.linspace(-0.96, -0.90, 601)
    d1, d2 = radiation_derivatives(f_bump, 1, rho, 0.0)
    assert est.H == pytest.approx(np.max(d1 * d2), rel=1e-6)
    assert est.H == pytest.approx(UNIT_F_BUMP_H, rel=1e-5)
    assert est.argmax[0][0] == pytest.approx(-0.9326, abs=2e-3)
    assert est.on_boundary == [False]


def test_H_scales(cubic_model, unit_speed, f_bump):
    tab = build_radiation_table(f_bump, 1, -8, 81, 1)
    H1 = compute_H(cubic_model, unit_speed, [tab]).H
    assert compute_H(cubic_model.scaled(2.0), unit_speed, [tab]).H == pytest.approx(2 * H1, rel=1e-9)
    big = InitialDataSet([BumpField(3.0, 1.0)], [ZeroField()], 1.0)
    H3 = compute_H(cubic_model, unit_speed, [build_radiation_table(big, 1, -8, 81, 1)]).H
    assert H3 == pytest.approx(9 * H1, rel=1e-7)


def test_H_rotation_invariant(unit_speed):
    co = CoefficientSet(1, cq={CUBIC_KEY: -1.0, (1, 1, 1, 1, 0, 0, 1, 1): 0.3})
    a = InitialDataSet([BumpField(1.0, 0.9, strength=0.4, phase=0.0)], [ZeroField()], 1.0)
    b = InitialDataSet([BumpField(1.0, 0.9, strength=0.4, phase=np.pi / 2)], [ZeroField()], 1.0)
    Ha = compute_H(co, unit_speed, [build_radiation_table(a, 1, -3, 41, 8)])
    Hb = compute_H(co, unit_speed, [build_radiation_table(b, 1, -3, 41, 8)])
    # theta contains cos^2: the quarter-turn rotation has to be matched by the data
    assert Ha.H > 0 and Hb.H > 0
    co_rot = CoefficientSet(1, cq={CUBIC_KEY: -1.0, (1, 1, 1, 1, 0, 0, 2, 2): 0.3})
    Hb_rot = compute_H(co_rot, unit_speed, [build_radiation_table(b, 1, -3, 41, 8)])
    assert Hb_rot.H == pytest.approx(Ha.H, rel=1e-6)


def test_H_boundary_warning(cubic_model, unit_speed, f_bump):
    tab = build_radiation_table(f_bump, 1, -0.925, 41, 1)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        est = compute_H(cubic_model, unit_speed, [tab], refine=False)
    assert est.on_boundary == [True]
    assert any(issubclass(w.category, TableBoundaryWarning) for w in rec)


def test_H_rejects_mismatch(cubic_model, f_bump):
    tab = build_radiation_table(f_bump, 1, -4, 21, 1)
    with pytest.raises(DomainError):
        compute_H(cubic_model, SpeedVector([2.0]), [tab])
    with pytest.raises(DomainError):
        compute_H(cubic_model, SpeedVector([1.0]), [])


def test_predict_lifespan():
    est = predict_lifespan(1.0, 1.0)
    assert est.predicted_T == pytest.approx(math.e - 1, rel=1e-15)
    assert predict_lifespan(0.0, 0.3).unbounded
    assert predict_lifespan(1e-6, 1e-3).predicted_T == math.inf
    with pytest.raises(DomainError):
        predict_lifespan(1.0, 0.0)
    with pytest.raises(DomainError):
        predict_lifespan(-1.0, 0.1)


@given(st.floats(0.01, 10), st.floats(0.05, 1.0))
def test_predict_lifespan_inverts(H, eps):
    est = predict_lifespan(H, eps)
    if math.isfinite(est.predicted_T):
        assert eps * eps * math.log1p(est.predicted_T) == pytest.approx(1 / H, rel=1e-12)


# ---------------------------------------------------------------------------
# Riccati


@pytest.mark.parametrize("alpha,w0,T0", [(1.0, 1.0, 0.0), (0.5, 0.8, 2.0), (-2.0, -0.3, 1.0)])
def test_blowup_matches_closed_form(alpha, w0, T0):
    p = RiccatiProblem(alpha, None, T0, w0, 1e6)
    res = riccati_integrate(p)
    assert res.blowup and not res.flagged
    assert res.T_blowup == pytest.approx(riccati_blowup_time(alpha, w0, T0), rel=1e-6)


def test_no_blowup_when_decaying():
    p = RiccatiProblem(1.0, None, 0.0, -1.0, 50.0)
    res = riccati_integrate(p)
    assert not res.blowup
    exact = -1.0 / (1 + math.log1p(50.0))
    assert res.w[-1] == pytest.approx(exact, rel=1e-8)
    assert riccati_blowup_time(1.0, -1.0, 0.0) == math.inf


def test_rk4_reference():
    p = RiccatiProblem(1.0, lambda t: 0.1 / (1 + t) ** 2, 0.0, 0.2, 20.0)
    ts, ws = riccati_rk4(p, 4000)
    res = riccati_integrate(p)
    assert not res.blowup
    assert ws[-1] == pytest.approx(res.w[-1], rel=1e-7)


@given(
    st.floats(0.1, 2.0),
    st.floats(-0.5, 0.5),
    st.floats(0.0, 5.0),
    st.floats(0.0, 0.2),
)
def test_bound_dominates(alpha, w0, T0, amp):
    q = lambda t: amp * math.cos(t) / (1 + t) ** 1.5
    T1 = T0 + 30.0
    p = RiccatiProblem(alpha, q, T0, w0, T1)
    qs = p.q_star()
    if 2 * alpha * qs * (math.log1p(T1) - math.log1p(T0)) >= 1:
        return
    res = riccati_integrate(p)
    for t, w in zip(res.t, res.w):
        try:
            # slack covers the integrator's relative error near blow-up
            assert abs(w) <= riccati_bound(p, float(t), qs) * (1 + 1e-7)
        except BoundExpired:
            break


def test_bound_rejects():
    p = RiccatiProblem(1.0, lambda t: 10.0, 0.0, 0.1, 10.0)
    with pytest.raises(DomainError):
        riccati_bound(p, 1.0)
    p = RiccatiProblem(1.0, None, 0.0, 1.0, 10.0)
    with pytest.raises(BoundExpired):
        riccati_bound(p, 5.0)
    with pytest.raises(DomainError):
        riccati_bound(p, 11.0)
    with pytest.raises(DomainError):
        RiccatiProblem(1.0, None, 2.0, 1.0, 1.0)


# ---------------------------------------------------------------------------
# characteristics


def test_default_start_time():
    assert default_start_time(0.5, 0.01) == 100.0
    assert default_start_time(-5.0, 0.01) == 625.0
    with pytest.raises(DomainError):
        default_start_time(0.0, 0.0)


def test_characteristic_unperturbed(unit_speed):
    cur = characteristic_curve(1, 0.3, 0.0, lambda r, w, t: 1.0, CoefficientSet(1), unit_speed, 10.0, t0=1.0)
    assert np.allclose(cur.offset, 0.3)


def test_characteristic_constant_sampler(cubic_model, unit_speed):
    # dr/dt = 1 - v^2 / 2 with v = 0.2 is exact for RK4
    cur = characteristic_curve(1, 0.0, 0.0, lambda r, w, t: 0.2, cubic_model, unit_speed, 11.0, t0=1.0, n_steps=10)
    assert cur.r[-1] == pytest.approx(1.0 + 10 * 0.98, rel=1e-13)
    with pytest.raises(DomainError):
        characteristic_curve(1, -2.0, 0.0, lambda r, w, t: 0.0, cubic_model, unit_speed, 5.0, t0=1.0)


def test_model_riccati_seeds(cubic_model, unit_speed, f_bump):
    lam = -0.93260
    p = model_riccati(cubic_model, unit_speed, f_bump, 1, lam, 0.0, 0.1, t0=5.0)
    d1, d2 = radiation_derivatives(f_bump, 1, lam, 0.0)
    assert p.w0 == pytest.approx(0.1 * d2)
    assert p.alpha == pytest.approx(0.1 * d1)
    # alpha w0 = epsilon^2 F' F'' links the Riccati blow-up to H
    assert p.alpha * p.w0 == pytest.approx(0.01 * UNIT_F_BUMP_H, rel=1e-5)
