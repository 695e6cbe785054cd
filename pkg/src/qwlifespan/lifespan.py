"""Blow-up constant ``H``, the lifespan prediction and the Riccati dynamics along characteristics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.optimize import minimize_scalar

from .nullform import CoefficientSet, DomainError, SpeedVector, eval_form
from .radiation import NumericalError, RadiationTable, radiation_derivatives


class BoundExpired(DomainError):
    """The comparison bound for the Riccati equation is undefined at this time."""


class TableBoundaryWarning(UserWarning):
    """The maximiser of the blow-up integrand sits on the edge of the tabulated range."""


@dataclass
class LifespanEstimate:
    """``H = max_i H_i`` and, when ``epsilon`` is known, the predicted lower bound on the lifespan."""

    H: float
    per_component: list[float] = field(default_factory=list)
    epsilon: float | None = None
    predicted_log_horizon: float | None = None
    predicted_T: float | None = None
    argmax: list[tuple[float, float]] = field(default_factory=list)
    on_boundary: list[bool] = field(default_factory=list)

    @property
    def unbounded(self) -> bool:
        return self.predicted_T is not None and math.isinf(self.predicted_T)


def theta_on_cone(coeffs: CoefficientSet, speeds: SpeedVector, i: int, omega) -> np.ndarray:
    """``Theta_i^i(-c_i, cos omega, sin omega)`` (vectorised over ``omega``)."""
    c = speeds[i]
    om = np.asarray(omega, dtype=float)
    X = np.stack([np.full_like(om, -c), np.cos(om), np.sin(om)], axis=-1)
    return np.asarray(eval_form("Theta", coeffs, i, i, X))


def _integrand(coeffs, speeds, i, table: RadiationTable, rho, omega) -> float:
    c = speeds[i]
    d1, d2 = table.derivatives(rho, omega)
    th = float(theta_on_cone(coeffs, speeds, i, omega))
    return -th * d1 * d2 / (c * c)


def compute_H(
    coeffs: CoefficientSet,
    speeds: SpeedVector,
    tables: Sequence[RadiationTable],
    refine: bool = True,
    xatol: float = 1e-9,
) -> LifespanEstimate:
    """``H_i = max_{rho, omega} -(1/c_i^2) Theta_i^i(-c_i, omega) F_rho F_rhorho`` and ``H = max_i H_i``.

    The maximum over the table is refined off-grid with a bounded scalar
    search in ``rho`` (and in ``omega`` for non-radial data) between the
    neighbouring nodes.  A warning is raised when the best node lies on the
    lower end of the tabulated ``rho`` range.
    """
    if len(tables) != speeds.m:
        raise DomainError(f"need one radiation table per component ({speeds.m}), got {len(tables)}")
    per, arg, edge = [], [], []
    for i, tab in enumerate(tables, start=1):
        if tab.F_rho.size == 0:
            raise DomainError(f"radiation table for component {i} is empty")
        if not math.isclose(tab.speed, speeds[i], rel_tol=1e-12):
            raise DomainError(f"table {i} was built for speed {tab.speed}, expected {speeds[i]}")
        c = speeds[i]
        th = theta_on_cone(coeffs, speeds, i, tab.omega_grid)
        vals = -th[None, :] * tab.F_rho * tab.F_rhorho / (c * c)
        a, b = np.unravel_index(int(np.argmax(vals)), vals.shape)
        best = float(vals[a, b]) + 0.0
        rho, om = float(tab.rho_grid[a]), float(tab.omega_grid[b])
        if refine and best > 0 and tab.data is not None:
            rho, om, best = _refine(coeffs, speeds, i, tab, a, b, best, xatol)
        if best < 0:
            raise NumericalError(f"H_{i} = {best} is negative")
        on_edge = a == 0 and best > 0
        if on_edge:
            warnings.warn(
                f"component {i}: maximiser at the lower table edge rho = {tab.rho_grid[0]}",
                TableBoundaryWarning,
                stacklevel=2,
            )
        per.append(best)
        arg.append((rho, om))
        edge.append(bool(on_edge))
    return LifespanEstimate(H=max(per), per_component=per, argmax=arg, on_boundary=edge)


def _refine(coeffs, speeds, i, tab: RadiationTable, a: int, b: int, best: float, xatol: float):
    rg, og = tab.rho_grid, tab.omega_grid
    rho, om = float(rg[a]), float(og[b])

    def search(fun, lo, hi, x0, v0):
        if hi <= lo:
            return x0, v0
        res = minimize_scalar(lambda x: -fun(x), bounds=(lo, hi), method="bounded", options={"xatol": xatol})
        return (float(res.x), -float(res.fun)) if -res.fun > v0 else (x0, v0)

    rlo, rhi = float(rg[max(a - 1, 0)]), float(rg[min(a + 1, len(rg) - 1)])
    rho, best = search(lambda r: _integrand(coeffs, speeds, i, tab, r, om), rlo, rhi, rho, best)
    if len(og) > 1 and not tab.data.radial:
        dw = float(og[1] - og[0])
        om, best = search(lambda w: _integrand(coeffs, speeds, i, tab, rho, w), om - dw, om + dw, om, best)
        rho, best = search(lambda r: _integrand(coeffs, speeds, i, tab, r, om), rlo, rhi, rho, best)
        om = om % (2 * math.pi)
    return rho, om, best


def predict_lifespan(H: float, epsilon: float) -> LifespanEstimate:
    """Lower bound ``T`` with ``epsilon^2 log(1 + T) = 1/H``; unbounded when ``H = 0``."""
    if not epsilon > 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    if H < 0:
        raise DomainError(f"H must be non-negative, got {H}")
    if H == 0:
        return LifespanEstimate(H=0.0, per_component=[0.0], epsilon=epsilon,
                                predicted_log_horizon=math.inf, predicted_T=math.inf)
    L = 1.0 / (H * epsilon * epsilon)
    try:
        T = math.expm1(L)
    except OverflowError:
        T = math.inf
    return LifespanEstimate(H=H, per_component=[H], epsilon=epsilon, predicted_log_horizon=L, predicted_T=T)


# ---------------------------------------------------------------------------
# Riccati comparison equation


@dataclass
class RiccatiProblem:
    """``w' = alpha w^2 / (1 + t) + q(t)`` on ``[T0, T1)`` with ``w(T0) = w0``."""

    alpha: float
    q: Callable[[float], float] | None
    T0: float
    w0: float
    T1: float

    def __post_init__(self):
        if not self.T0 < self.T1:
            raise DomainError("need T0 < T1")
        if self.T0 <= -1:
            raise DomainError("need T0 > -1")

    def forcing(self, t: float) -> float:
        return 0.0 if self.q is None else float(self.q(t))

    def q_star(self) -> float:
        """``int_{T0}^{T1} |q|``."""
        if self.q is None:
            return 0.0
        val, _ = quad(lambda t: abs(self.forcing(t)), self.T0, self.T1, limit=200)
        return float(val)


@dataclass
class RiccatiResult:
    t: np.ndarray
    w: np.ndarray
    blowup: bool
    T_blowup: float | None
    flagged: bool = False
    message: str = ""


def riccati_integrate(p: RiccatiProblem, tol: float = 1e-10, rtol: float = 1e-10, atol: float = 1e-12) -> RiccatiResult:
    """Adaptive Dormand-Prince integration with blow-up detection.

    Integration stops when ``|w|`` reaches ``1/tol``; the blow-up time is then
    extrapolated from the local quadratic dynamics,
    ``T* = (1 + t) exp(1 / (alpha w)) - 1``.  A collapsing step size is
    reported as a flagged blow-up at the time reached.
    """
    cap = 1.0 / tol

    def rhs(t, y):
        return [p.alpha * y[0] * y[0] / (1.0 + t) + p.forcing(t)]

    def hit(t, y):
        return abs(y[0]) - cap

    hit.terminal = True
    with np.errstate(over="ignore", invalid="ignore"):
        sol = solve_ivp(rhs, (p.T0, p.T1), [p.w0], method="RK45", rtol=rtol, atol=atol, events=hit)
    t, w = sol.t, sol.y[0]
    if sol.status == 1:
        te, we = float(sol.t_events[0][0]), float(sol.y_events[0][0][0])
        remaining = (1.0 + te) * math.expm1(1.0 / (p.alpha * we)) if p.alpha * we > 0 else 0.0
        return RiccatiResult(np.append(t, te), np.append(w, we), True, te + remaining)
    if sol.status == -1 or not np.all(np.isfinite(w)):
        good = np.isfinite(w)
        return RiccatiResult(t[good], w[good], True, float(t[good][-1]), flagged=True, message=sol.message)
    return RiccatiResult(t, w, False, None)


def riccati_rk4(p: RiccatiProblem, n_steps: int, t_end: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-step classical RK4 reference for the same equation."""
    t_end = p.T1 if t_end is None else t_end
    ts = np.linspace(p.T0, t_end, n_steps + 1)
    ws = np.empty_like(ts)
    ws[0] = p.w0
    f = lambda t, w: p.alpha * w * w / (1.0 + t) + p.forcing(t)
    for n in range(n_steps):
        t, w, h = ts[n], ws[n], ts[n + 1] - ts[n]
        k1 = f(t, w)
        k2 = f(t + h / 2, w + h / 2 * k1)
        k3 = f(t + h / 2, w + h / 2 * k2)
        k4 = f(t + h, w + h * k3)
        ws[n + 1] = w + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return ts, ws


def riccati_blowup_time(alpha: float, w0: float, T0: float) -> float:
    """Closed-form blow-up time ``(1 + T0) exp(1/(alpha w0)) - 1`` of the unforced equation."""
    if alpha * w0 <= 0:
        return math.inf
    try:
        return (1 + T0) * math.exp(1.0 / (alpha * w0)) - 1
    except OverflowError:
        return math.inf


def riccati_bound(p: RiccatiProblem, t: float, q_star: float | None = None) -> float:
    """Comparison bound ``(1 + 1/(1 - alpha (w0 + q*) log((1+t)/(1+T0)))) (|w0| + q*)``.

    Requires ``2 alpha q* log((1+T1)/(1+T0)) < 1``.  Raises
    :class:`BoundExpired` once the denominator is no longer positive.
    """
    if not p.T0 <= t <= p.T1:
        raise DomainError(f"t = {t} outside [{p.T0}, {p.T1}]")
    qs = p.q_star() if q_star is None else q_star
    if not math.isfinite(qs):
        raise DomainError("forcing is not integrable")
    span = math.log1p(p.T1) - math.log1p(p.T0)
    if 2 * p.alpha * qs * span >= 1:
        raise DomainError("forcing too large for the comparison bound: 2 alpha q* log-span >= 1")
    denom = 1 - p.alpha * (p.w0 + qs) * (math.log1p(t) - math.log1p(p.T0))
    if denom <= 0:
        raise BoundExpired(f"comparison bound expired at t = {t}")
    return (1 + 1 / denom) * (abs(p.w0) + qs)


# ---------------------------------------------------------------------------
# characteristics


@dataclass
class CharCurveState:
    """Sampled trajectory ``r(t)`` of ``dr/dt = c_i + Theta_i(-c_i, omega) (d_0 u)^2 / (2 c_i^3)``."""

    i: int
    lam: float
    omega: float
    t0: float
    t: np.ndarray
    r: np.ndarray
    speed: float = 1.0

    @property
    def offset(self) -> np.ndarray:
        """``r(t) - c_i t``; equals ``lam`` along an unperturbed ray."""
        return self.r - self.speed * self.t


def default_start_time(lam: float, epsilon: float) -> float:
    """``1/epsilon`` for ``|lam| < epsilon^(-1/4)``, otherwise ``lam^4``."""
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    return 1.0 / epsilon if abs(lam) < epsilon ** -0.25 else lam**4


def characteristic_curve(
    i: int,
    lam: float,
    omega: float,
    sampler: Callable[[float, float, float], float],
    coeffs: CoefficientSet,
    speeds: SpeedVector,
    t_end: float,
    epsilon: float | None = None,
    t0: float | None = None,
    n_steps: int = 1000,
) -> CharCurveState:
    """Trace ``r(t)`` from ``r(t0) = c_i t0 + lam`` with classical RK4.

    ``sampler(r, omega, t)`` returns ``d_0 u^i`` at ``(r omega, t)``.
    """
    if t0 is None:
        if epsilon is None:
            raise DomainError("either t0 or epsilon is required")
        t0 = default_start_time(lam, epsilon)
    if not t_end > t0:
        raise DomainError(f"t_end = {t_end} must exceed t0 = {t0}")
    c = speeds[i]
    th = float(theta_on_cone(coeffs, speeds, i, omega))
    k = th / (2 * c**3)

    def rate(t, r):
        if k == 0.0:
            return c
        v = sampler(r, omega, t)
        return c + k * v * v

    ts = np.linspace(t0, t_end, n_steps + 1)
    rs = np.empty_like(ts)
    rs[0] = c * t0 + lam
    if rs[0] <= 0:
        raise DomainError("starting radius must be positive")
    for n in range(n_steps):
        t, r, h = ts[n], rs[n], ts[n + 1] - ts[n]
        k1 = rate(t, r)
        k2 = rate(t + h / 2, r + h / 2 * k1)
        k3 = rate(t + h / 2, r + h / 2 * k2)
        k4 = rate(t + h, r + h * k3)
        rs[n + 1] = r + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not rs[n + 1] > 0:
            raise DomainError(f"trajectory left r > 0 at t = {ts[n + 1]}")
    return CharCurveState(i, lam, omega, t0, ts, rs, c)


def model_riccati(
    coeffs: CoefficientSet,
    speeds: SpeedVector,
    data,
    i: int,
    lam: float,
    omega: float,
    epsilon: float,
    t0: float | None = None,
    T1: float = math.inf,
    q: Callable[[float], float] | None = None,
) -> RiccatiProblem:
    """Riccati problem for ``W = r^(1/2) d_0^2 u^i`` along the characteristic with label ``(lam, omega)``.

    ``alpha = -epsilon Theta_i(-c_i, omega) d_rho F / c_i^4`` and
    ``W(t0) = epsilon c_i^2 d_rho^2 F``, with ``F`` evaluated at ``(lam, omega)``.
    """
    c = speeds[i]
    d1, d2 = radiation_derivatives(data, i, lam, omega, c)
    th = float(theta_on_cone(coeffs, speeds, i, omega))
    t0 = default_start_time(lam, epsilon) if t0 is None else t0
    return RiccatiProblem(alpha=-epsilon * th * d1 / c**4, q=q, T0=t0, w0=epsilon * c * c * d2, T1=T1)
