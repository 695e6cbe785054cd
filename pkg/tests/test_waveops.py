import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qwlifespan.data import BumpField, InitialDataSet, ZeroField
from qwlifespan.nullform import DomainError, SpeedVector
from qwlifespan.waveops import (
    GridField,
    apply_gamma,
    apply_gamma_power,
    apply_Z,
    apply_Z_decomposed,
    duhamel,
    linear_solution,
    multi_indices,
    norm_weight,
    pointwise_gamma_sum,
    region_classify,
    weight_z,
    weighted_norm,
)

# ---------------------------------------------------------------------------
# Poisson formula


def test_linear_solution_initial_values(mixed_data):
    x = np.array([0.2, -0.3])
    f, g = mixed_data.component(1)
    assert linear_solution(mixed_data, 1, 1.0, x, 0.0) == (pytest.approx(float(f(*x))), pytest.approx(float(g(*x))))
    u, ut = linear_solution(mixed_data, 1, 1.0, x, 1e-4)
    assert u == pytest.approx(float(f(*x)), abs=1e-4)
    assert ut == pytest.approx(float(g(*x)), abs=1e-3)


def test_linear_solution_refinement(g_bump):
    x = np.array([1.0, 0.0])
    base = linear_solution(g_bump, 1, 1.0, x, 0.7)
    fine = linear_solution(g_bump, 1, 1.0, x, 0.7, n_phi=960, n_psi=960)
    assert base[0] == pytest.approx(fine[0], rel=1e-6)
    assert base[1] == pytest.approx(fine[1], rel=1e-6)


def test_linear_solution_solves_wave_equation(mixed_data):
    c, x, t = 1.3, np.array([0.4, 0.25]), 0.9
    u = lambda y, s: linear_solution(mixed_data, 1, c, y, s)[0]
    ut = lambda y, s: linear_solution(mixed_data, 1, c, y, s)[1]

    def defect(h):
        utt = (ut(x, t + h) - ut(x, t - h)) / (2 * h)
        lap = sum(u(x + e, t) - 2 * u(x, t) + u(x - e, t) for e in ((h, 0), (0, h))) / h**2
        return utt - c * c * lap

    errs = [defect(h) for h in (1e-2, 5e-3, 2.5e-3)]
    # second-order stencils: the residual shrinks fourfold per halving
    for coarse, fine in zip(errs, errs[1:]):
        assert 3.5 < coarse / fine < 4.5
    # u_t is the time derivative of u, up to the h^2 u_ttt / 6 truncation
    h = 1e-3
    assert (u(x, t + h) - u(x, t - h)) / (2 * h) == pytest.approx(ut(x, t), rel=1e-4)


def test_linear_solution_finite_speed(g_bump):
    # the support is the unit disk, so nothing arrives at |x| = 2 before t = 1
    assert linear_solution(g_bump, 1, 1.0, np.array([2.0, 0.0]), 0.95) == (0.0, 0.0)
    assert linear_solution(g_bump, 1, 2.0, np.array([2.0, 0.0]), 0.55)[0] != 0.0
    with pytest.raises(DomainError):
        linear_solution(g_bump, 1, 1.0, np.zeros(2), -1.0)


def test_linear_solution_radial_symmetry(g_bump):
    a = linear_solution(g_bump, 1, 1.0, np.array([0.8, 0.0]), 1.1)
    b = linear_solution(g_bump, 1, 1.0, np.array([0.0, -0.8]), 1.1)
    assert a[0] == pytest.approx(b[0], rel=1e-12) and a[1] == pytest.approx(b[1], rel=1e-12)


# ---------------------------------------------------------------------------
# Duhamel


@given(st.floats(0.05, 3.0), st.floats(0.3, 2.0), st.floats(-2, 2), st.floats(-2, 2))
def test_duhamel_polynomial_sources(t, c, x1, x2):
    x = (x1, x2)
    one = lambda y1, y2, s: np.ones_like(y1)
    lin = lambda y1, y2, s: s
    assert duhamel(one, c, x, t) == pytest.approx(t * t / 2, rel=1e-12)
    assert duhamel(lin, c, x, t) == pytest.approx(t**3 / 6, rel=1e-12)
    # harmonic in space: the source just rides along
    harm = lambda y1, y2, s: y1 * y1 - y2 * y2
    assert duhamel(harm, c, x, t) == pytest.approx((x1 * x1 - x2 * x2) * t * t / 2, rel=1e-10, abs=1e-12)


def test_duhamel_quadratic_source():
    # F = |y|^2: u = |x|^2 t^2 / 2 + c^2 t^4 / 6
    c, t, x = 0.7, 1.3, (0.4, -1.1)
    F = lambda y1, y2, s: y1 * y1 + y2 * y2
    exact = (x[0] ** 2 + x[1] ** 2) * t * t / 2 + c * c * t**4 / 6
    assert duhamel(F, c, x, t) == pytest.approx(exact, rel=1e-12)


def test_duhamel_zero_time():
    assert duhamel(lambda y1, y2, s: np.ones_like(y1), 1.0, (0, 0), 0.0) == 0.0
    with pytest.raises(DomainError):
        duhamel(lambda y1, y2, s: y1, 1.0, (0, 0), -0.1)


# ---------------------------------------------------------------------------
# grid fields and vector fields


def _field(func, h=0.05, n=41, times=None):
    times = np.linspace(0.8, 1.2, 9) if times is None else times
    return GridField.sample(func, h, n, times)


def test_gridfield_bytes_round_trip(tmp_path, rng):
    gf = GridField(rng.standard_normal((7, 5)), 0.1, [2.5], component=2)
    path = tmp_path / "s.bin"
    gf.write(path)
    back = GridField.read(path)
    assert back.shape == (7, 5) and back.h == 0.1 and back.times[0] == 2.5 and back.component == 2
    assert np.array_equal(back.values, gf.values)
    assert path.stat().st_size == 40 + 8 * 35


def test_gridfield_csv(tmp_path):
    gf = _field(lambda x1, x2, t: x1 + 2 * x2, n=3, times=[0.0])
    gf.to_csv(tmp_path / "g.csv")
    rows = (tmp_path / "g.csv").read_text().splitlines()
    assert rows[0] == "x1,x2,value" and len(rows) == 10


def test_gridfield_rejects_time_mismatch():
    with pytest.raises(DomainError):
        GridField(np.zeros((2, 3, 3)), 0.1, [0.0])
    with pytest.raises(DomainError):
        _field(lambda x1, x2, t: x1).level(5.0)


@pytest.mark.parametrize(
    "k,exact",
    [
        (0, lambda x1, x2, t: 3 * t * t * x1 * x2),
        (1, lambda x1, x2, t: t**3 * x2),
        (2, lambda x1, x2, t: t**3 * x1),
        (3, lambda x1, x2, t: t**3 * (x1 * x1 - x2 * x2)),
        (4, lambda x1, x2, t: 5 * t**3 * x1 * x2),
    ],
)
def test_gamma_on_polynomial(k, exact):
    # v = t^3 x1 x2 is a cubic polynomial; fourth-order stencils are exact
    gf = _field(lambda x1, x2, t: t**3 * x1 * x2)
    out = apply_gamma(gf, k)
    X1, X2 = out.coords()
    ref = np.stack([exact(X1, X2, t) for t in out.times])
    assert np.allclose(out.values[:, out.mask], ref[:, out.mask], atol=1e-10)
    # the mask flags exactly the cells a spatial stencil could not reach
    assert np.array_equal(out.mask, np.all(np.isfinite(out.values), axis=0))
    if k > 0:
        assert not out.mask[0].any() or not out.mask[:, 0].any()


def test_rotation_kills_radial_fields():
    out = apply_gamma(_field(lambda x1, x2, t: np.exp(-(x1 * x1 + x2 * x2)) * t), 3)
    assert np.nanmax(np.abs(out.values)) < 1e-5


def test_gamma_power_order():
    gf = _field(lambda x1, x2, t: t**2 * x1)
    both = apply_gamma_power(gf, (1, 1, 0, 0, 0))
    # d_0 d_1 (t^2 x1) = 2 t
    core = both.values[:, both.mask]
    assert np.allclose(core, 2 * both.times[:, None], atol=1e-9)
    with pytest.raises(DomainError):
        apply_gamma(gf, 5)


def test_Z_forms_agree():
    gf = _field(lambda x1, x2, t: np.sin(x1 - 0.7 * t) * np.cos(0.5 * x2 + t), h=0.02, n=61, times=np.linspace(1.0, 1.08, 5))
    for alpha in (1, 2):
        a = apply_Z(gf, 0.9, alpha)
        b = apply_Z_decomposed(gf, 0.9, alpha)
        mask = a.mask & b.mask
        assert mask.any()
        assert np.allclose(a.values[:, mask], b.values[:, mask], atol=1e-10)
    with pytest.raises(DomainError):
        apply_Z(gf, 1.0, 0)


def test_Z_annihilates_outgoing_profile():
    # v = phi(|x| - c t) has Z_alpha v = c (x_alpha/|x|) phi' - c (x_alpha/|x|) phi' = 0
    c = 1.2
    prof = lambda x1, x2, t: np.exp(-4 * (np.hypot(x1, x2) - c * t) ** 2)
    out = apply_Z(_field(prof, h=0.01, n=121, times=np.linspace(0.3, 0.34, 5)), c, 1)
    # |x| has a kink at the origin, so stay clear of it
    X1, X2 = out.coords()
    away = out.mask & (np.hypot(X1, X2) > 0.1)
    # each term is of size c |phi'| ~ 4; only truncation error survives the cancellation
    assert np.abs(out.values[:, away]).max() < 1e-4


def test_multi_indices():
    assert len(multi_indices(0)) == 1
    assert len(multi_indices(1)) == 6
    assert len(multi_indices(2)) == 21


# ---------------------------------------------------------------------------
# regions, weights and norms


def test_region_classify():
    sp = SpeedVector([1.0, 2.0])
    cs = sp.c_star
    assert region_classify((10.0, 0.0), 10.0, sp) == 1
    assert region_classify((20.0 + 0.9 * cs * 10, 0.0), 10.0, sp) == 2
    assert region_classify((15.0, 0.0), 10.0, sp) == 0
    assert region_classify((0.0, 0.0), 0.0, sp) == 0
    with pytest.raises(DomainError):
        region_classify((0.0, 0.0), -1.0, sp)


def test_weight_z():
    sp = SpeedVector([1.0])
    assert weight_z(0, 0.0, 0.0, 2.0, 3.0, sp) == pytest.approx(6 * 3)
    assert weight_z(1, 0.5, 0.2, 2.0, 3.0, sp) == pytest.approx(6**1.5 * 2**1.2)
    with pytest.raises(DomainError):
        weight_z(1, 0.0, 0.0, -1.0, 1.0, sp)


def test_norms_of_constant():
    gf = _field(lambda x1, x2, t: np.full_like(x1, 2.0))
    t = float(gf.times[4])
    assert weighted_norm(gf, "sup", 1.0, 0, t) == pytest.approx(2.0)
    # derivatives of a constant vanish, so higher orders see only the undifferentiated term
    assert weighted_norm(gf, "sup", 1.0, 2, t) == pytest.approx(2.0)
    X1, X2 = gf.coords()
    w = norm_weight("angle", X1, X2, t, 1.0)
    s, mask, _ = pointwise_gamma_sum(gf, 1, t)
    assert weighted_norm(gf, "angle", 1.0, 1, t) == pytest.approx(np.max((w * s)[mask]))
    with pytest.raises(DomainError):
        weighted_norm(gf, "sup", 1.0, 3, t)
    with pytest.raises(DomainError):
        norm_weight("nope", X1, X2, t, 1.0)


def test_L2_norm():
    gf = _field(lambda x1, x2, t: np.exp(-8 * (x1 * x1 + x2 * x2)), h=0.02, n=101)
    # int exp(-16 r^2) = pi / 16
    assert weighted_norm(gf, "L2", 1.0, 0) == pytest.approx(math.sqrt(math.pi / 16), rel=1e-6)
