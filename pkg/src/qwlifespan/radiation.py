"""Radon transforms of the initial data and the Friedlander radiation field.

For speed ``c`` the radiation field of the free solution with data ``(f, g)``
is

    F(rho, w) = 1/(2 sqrt(2) pi) * int_rho^M (s - rho)^(-1/2) G(s, w) ds,
    G(s, w)  = R_g(s, w) / c - d_s R_f(s, w),

i.e. the limit of ``r^(1/2) u_0(r w, t)`` along ``rho = r - c t``.  The
substitution ``s = rho + u^2`` turns the Abel kernel into a smooth integrand
that is integrated with Gauss-Legendre nodes; rho-derivatives act on ``G``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .data import InitialDataSet, ScalarField
from .nullform import DomainError

N_LINE = 128
N_ABEL = 128
H_S_REL = 1e-3

ABEL_CONST = 1.0 / (2.0 * math.sqrt(2.0) * math.pi)

# eighth-order (sixth for the third derivative) central stencils on offsets
# -4..4; with a step of 1e-3 M round-off and truncation stay below 1e-9
_OFFSETS = np.arange(-4, 5, dtype=float)


def _central_weights(k: int) -> np.ndarray:
    vander = np.vander(_OFFSETS, len(_OFFSETS), increasing=True).T
    rhs = np.zeros(len(_OFFSETS))
    rhs[k] = math.factorial(k)
    return np.linalg.solve(vander, rhs)


_STENCILS = {k: _central_weights(k) for k in range(4)}


class NumericalError(FloatingPointError):
    """A quadrature or integrator produced non-finite values."""


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def radon_transform(h: ScalarField, s, omega: float, M: float | None = None, n_line: int = N_LINE) -> np.ndarray:
    """Line integral of ``h`` over ``{y : y . (cos omega, sin omega) = s}``.

    ``s`` may be an array.  Gauss nodes cover the chord cut from the line by
    the field's support disk; the result is exactly zero off that chord and
    for ``|s| >= M`` (default: the field's support radius).
    """
    M = h.support_radius if M is None else M
    s = np.asarray(s, dtype=float)
    x, w = gauss_legendre(n_line)
    (a1, a2), r = h.support_disk()
    e1, e2 = math.cos(omega), math.sin(omega)
    sc = s - (a1 * e1 + a2 * e2)
    mid = -a1 * e2 + a2 * e1
    half = np.sqrt(np.clip(r * r - sc * sc, 0.0, None))
    tau = mid + half[..., None] * x
    y1 = s[..., None] * e1 - tau * e2
    y2 = s[..., None] * e2 + tau * e1
    out = half * (h(y1, y2) @ w)
    return np.where((np.abs(s) < M) & (half > 0), out, 0.0)


def projected_support(fields, omega: float) -> tuple[float, float]:
    """Interval of ``y . omega`` over the union of the fields' support disks."""
    e1, e2 = math.cos(omega), math.sin(omega)
    lo, hi = math.inf, -math.inf
    for fl in fields:
        (a1, a2), r = fl.support_disk()
        if r <= 0:
            continue
        p = a1 * e1 + a2 * e2
        lo, hi = min(lo, p - r), max(hi, p + r)
    return lo, hi


def _radon_derivatives(h: ScalarField, s: np.ndarray, omega: float, M: float, orders, h_s: float, n_line: int):
    """``d^k R_h / ds^k`` at ``s`` for each ``k`` in ``orders`` (central differences)."""
    out = {}
    for k in orders:
        if k == 0:
            out[k] = radon_transform(h, s, omega, M, n_line)
            continue
        pts = s[..., None] + h_s * _OFFSETS
        vals = radon_transform(h, pts, omega, M, n_line)
        out[k] = vals @ _STENCILS[k] / h_s**k
    return out


def _abel_nodes(rho: np.ndarray, s_lo: float, s_hi: float, n_abel: int):
    """Substitution nodes ``u`` and weights covering ``s = rho + u^2`` in ``[s_lo, s_hi]``."""
    x, w = gauss_legendre(n_abel)
    lo = np.sqrt(np.clip(s_lo - rho, 0.0, None))
    hi = np.sqrt(np.clip(s_hi - rho, 0.0, None))
    half = 0.5 * (hi - lo)
    u = 0.5 * (hi + lo)[..., None] + half[..., None] * x
    return u, half[..., None] * w


def _abel(data: InitialDataSet, i: int, rho, omega: float, speed: float, orders, n_abel, n_line, h_s):
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    # bound the (rho, u, stencil, line) work array to about 2M entries
    chunk = max(1, 2_000_000 // (3 * n_abel * n_line * len(_OFFSETS)))
    if rho.size > chunk:
        parts = [_abel(data, i, rho[k : k + chunk], omega, speed, orders, n_abel, n_line, h_s) for k in range(0, rho.size, chunk)]
        return [np.concatenate([p[n] for p in parts]) for n in range(len(orders))]
    f, g = data.component(i)
    M = data.M
    h_s = H_S_REL * M if h_s is None else h_s
    s_lo, s_hi = projected_support([f, g], omega)
    if s_lo >= s_hi:
        return [np.zeros_like(rho) for _ in orders]
    # one Gauss panel between consecutive support edges: the integrand is
    # smooth inside each panel but changes character at every edge
    a, b = max(s_lo, -M), min(s_hi, M)
    edges = {a, b}
    for fl in (f, g):
        edges.update(x for x in projected_support([fl], omega) if a < x < b)
    edges = sorted(edges)
    panels = [_abel_nodes(rho, lo, hi, n_abel) for lo, hi in zip(edges, edges[1:])]
    u = np.concatenate([p[0] for p in panels], axis=-1)
    wts = np.concatenate([p[1] for p in panels], axis=-1)
    s = rho[:, None] + u * u
    need_g = sorted(set(orders))
    need_f = sorted({k + 1 for k in orders})
    Rg = _radon_derivatives(g, s, omega, M, need_g, h_s, n_line)
    Rf = _radon_derivatives(f, s, omega, M, need_f, h_s, n_line)
    res = []
    for k in orders:
        G = Rg[k] / speed - Rf[k + 1]
        val = 2.0 * ABEL_CONST * np.sum(G * wts, axis=-1)
        res.append(np.where(rho < M, val, 0.0))
    return res


def radiation_field(
    data: InitialDataSet,
    i: int,
    rho,
    omega: float,
    speed: float = 1.0,
    n_abel: int = N_ABEL,
    n_line: int = N_LINE,
    h_s: float | None = None,
):
    """Friedlander field ``F^i(rho, omega)`` for propagation speed ``speed``."""
    (val,) = _abel(data, i, rho, omega, speed, (0,), n_abel, n_line, h_s)
    return float(val[0]) if np.ndim(rho) == 0 else val


def radiation_derivatives(
    data: InitialDataSet,
    i: int,
    rho,
    omega: float,
    speed: float = 1.0,
    n_abel: int = N_ABEL,
    n_line: int = N_LINE,
    h_s: float | None = None,
):
    """``(d_rho F^i, d_rho^2 F^i)`` at ``(rho, omega)``."""
    d1, d2 = _abel(data, i, rho, omega, speed, (1, 2), n_abel, n_line, h_s)
    if np.ndim(rho) == 0:
        return float(d1[0]), float(d2[0])
    return d1, d2


@dataclass
class RadiationTable:
    """``F``, ``F_rho`` and ``F_rhorho`` sampled on a uniform ``(rho, omega)`` grid.

    Arrays have shape ``(n_rho, n_omega)``.  ``decay_constants[l]`` is the
    smallest ``C`` with ``|d^l F| <= C (1 + |rho|)^(-1/2 - l)`` on the grid.
    The originating data and speed are kept so that maximisation can be
    refined off-grid.
    """

    i: int
    rho_grid: np.ndarray
    omega_grid: np.ndarray
    F: np.ndarray
    F_rho: np.ndarray
    F_rhorho: np.ndarray
    speed: float = 1.0
    decay_constants: tuple[float, float, float] = (0.0, 0.0, 0.0)
    data: InitialDataSet | None = field(default=None, repr=False)

    def derivatives(self, rho, omega):
        if self.data is None:
            raise DomainError("table carries no initial data for off-grid evaluation")
        return radiation_derivatives(self.data, self.i, rho, omega, self.speed)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["rho", "omega", "F", "F_rho", "F_rhorho"])
            for a, rho in enumerate(self.rho_grid):
                for b, om in enumerate(self.omega_grid):
                    wr.writerow([f"{x:.17g}" for x in (rho, om, self.F[a, b], self.F_rho[a, b], self.F_rhorho[a, b])])


def decay_constant(rho: np.ndarray, values: np.ndarray, order: int) -> float:
    weight = (1.0 + np.abs(rho)) ** (0.5 + order)
    return float(np.max(np.abs(values) * weight[:, None]))


def build_radiation_table(
    data: InitialDataSet,
    i: int,
    rho_min: float,
    n_rho: int,
    n_omega: int,
    speed: float = 1.0,
    **quad,
) -> RadiationTable:
    """Tabulate ``F^i`` and its first two rho-derivatives on ``[rho_min, M] x [0, 2 pi)``."""
    if rho_min >= data.M:
        raise DomainError("rho_min must be smaller than the support radius M")
    if n_rho < 2 or n_omega < 1:
        raise DomainError("need n_rho >= 2 and n_omega >= 1")
    rho = np.linspace(rho_min, data.M, n_rho)
    omega = 2 * np.pi * np.arange(n_omega) / n_omega
    F = np.empty((n_rho, n_omega))
    F1 = np.empty_like(F)
    F2 = np.empty_like(F)
    for b, om in enumerate(omega):
        F[:, b] = radiation_field(data, i, rho, om, speed, **quad)
        F1[:, b], F2[:, b] = radiation_derivatives(data, i, rho, om, speed, **quad)
    for name, arr in (("F", F), ("F_rho", F1), ("F_rhorho", F2)):
        bad = ~np.isfinite(arr)
        if bad.any():
            a, b = np.argwhere(bad)[0]
            raise NumericalError(f"non-finite {name} at rho={rho[a]:.6g}, omega={omega[b]:.6g}")
    consts = tuple(decay_constant(rho, arr, l) for l, arr in enumerate((F, F1, F2)))
    return RadiationTable(i, rho, omega, F, F1, F2, speed, consts, data)
