"""Reference linear solvers, commuting vector fields and weighted norms.

Grid fields are stored as stacks of equally spaced time levels so that the
time derivative inside ``Gamma = (d_0, d_1, d_2, Omega, S)`` can be taken
by central differences without using the equation.
"""

from __future__ import annotations

import csv
import itertools
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Literal

import numpy as np

from . import constants as K
from .data import InitialDataSet, ScalarField
from .nullform import DomainError, SpeedVector
from .radiation import gauss_legendre

N_PHI = 96
N_PSI = 96


# ---------------------------------------------------------------------------
# Poisson formula


def _smooth_map(n: int):
    """Gauss nodes on [0, 1] pushed through ``tau^2 (3 - 2 tau)``.

    The map has vanishing slope at both ends, which removes square-root
    endpoint singularities of the angular integrand.
    """
    x, w = gauss_legendre(n)
    tau = 0.5 * (x + 1.0)
    return tau * tau * (3 - 2 * tau), 0.5 * w * 6 * tau * (1 - tau)


def _angle_breaks(x: np.ndarray, R: float, M: float) -> list[tuple[float, float]]:
    """Angular sub-intervals of rays from ``x`` that hit the disk ``|y| < M``.

    Split where the circle ``|y - x| = R`` crosses ``|y| = M`` so each piece
    has a smooth radial extent.
    """
    d = math.hypot(x[0], x[1])
    phi_x = math.atan2(x[1], x[0])
    if d > M:
        centre = math.atan2(-x[1], -x[0])
        beta = math.asin(M / d)
        lo, hi = centre - beta, centre + beta
    else:
        lo, hi = phi_x, phi_x + 2 * math.pi
    cuts = []
    if d > 0 and R > 0:
        val = (M * M - d * d - R * R) / (2 * R * d)
        if -1 < val < 1:
            a = math.acos(val)
            for phi in (phi_x + a, phi_x - a):
                # wrap into [lo, lo + 2 pi)
                phi = lo + (phi - lo) % (2 * math.pi)
                if lo < phi < hi:
                    cuts.append(phi)
    edges = [lo] + sorted(cuts) + [hi]
    return [(a, b) for a, b in zip(edges, edges[1:]) if b > a]


def _disk_nodes(x: np.ndarray, R: float, M: float, n_phi: int, n_psi: int):
    """Nodes ``y = x + R sin(psi) e(phi)`` and weights for ``int int (.) sin(psi) dpsi dphi``."""
    tau, wt = _smooth_map(n_phi)
    gx, gw = gauss_legendre(n_psi)
    ys1, ys2, ws = [], [], []
    for a, b in _angle_breaks(x, R, M):
        phi = a + (b - a) * tau
        wphi = (b - a) * wt
        e1, e2 = np.cos(phi), np.sin(phi)
        xe = x[0] * e1 + x[1] * e2
        disc = xe * xe - (x[0] ** 2 + x[1] ** 2) + M * M
        root = np.sqrt(np.clip(disc, 0.0, None))
        r1 = np.clip(-xe - root, 0.0, R)
        r2 = np.clip(-xe + root, 0.0, R)
        p1 = np.arcsin(np.clip(r1 / R, 0.0, 1.0))
        p2 = np.arcsin(np.clip(r2 / R, 0.0, 1.0))
        half = 0.5 * (p2 - p1)
        psi = (0.5 * (p1 + p2))[:, None] + half[:, None] * gx
        wpsi = half[:, None] * gw
        rad = R * np.sin(psi)
        ys1.append(x[0] + rad * e1[:, None])
        ys2.append(x[1] + rad * e2[:, None])
        ws.append(wphi[:, None] * wpsi * np.sin(psi))
    if not ws:
        z = np.zeros((0,))
        return z, z, z
    return np.concatenate(ys1).ravel(), np.concatenate(ys2).ravel(), np.concatenate(ws).ravel()


def _field_nodes(h: ScalarField, x: np.ndarray, R: float, n_phi: int, n_psi: int):
    """Disk nodes restricted to the support disk of ``h``."""
    (a, b), M = h.support_disk()
    if M <= 0:
        z = np.zeros((0,))
        return z, z, z
    y1, y2, w = _disk_nodes(x - (a, b), R, M, n_phi, n_psi)
    return y1 + a, y2 + b, w


def poisson_integrals(
    h: ScalarField, x, t: float, c: float, n_phi: int = N_PHI, n_psi: int = N_PSI
) -> tuple[float, float]:
    """``W_h`` and ``d_t W_h`` for the free wave of speed ``c`` with data ``(0, h)``."""
    x = np.asarray(x, dtype=float)
    y1, y2, w = _field_nodes(h, x, c * t, n_phi, n_psi)
    if w.size == 0:
        return 0.0, 0.0
    hv = h(y1, y2)
    g1, g2 = h.gradient(y1, y2)
    radial = (y1 - x[0]) * g1 + (y2 - x[1]) * g2
    W = t / (2 * math.pi) * float(hv @ w)
    dW = 1.0 / (2 * math.pi) * float((hv + radial) @ w)
    return W, dW


def linear_solution(
    data: InitialDataSet, i: int, c: float, x, t: float, n_phi: int = N_PHI, n_psi: int = N_PSI
) -> tuple[float, float]:
    """``(u_0, d_t u_0)`` at ``(x, t)`` for ``u_tt = c^2 Lap u``, ``u = f^i``, ``u_t = g^i`` at ``t = 0``.

    Uses ``u = d_t W_f + W_g`` and ``u_t = W_{c^2 Lap f} + d_t W_g`` with
    ``W_h(x, t) = (t / 2 pi) int int h(x + c t sin(psi) e(phi)) sin(psi)``.
    """
    if t < 0:
        raise DomainError("t must be non-negative")
    f, g = data.component(i)
    x = np.asarray(x, dtype=float)
    if t == 0:
        return float(f(x[0], x[1])), float(g(x[0], x[1]))
    Wg, dWg = poisson_integrals(g, x, t, c, n_phi, n_psi)
    _, dWf = poisson_integrals(f, x, t, c, n_phi, n_psi)
    y1, y2, w = _field_nodes(f, x, c * t, n_phi, n_psi)
    Wlap = c * c * t / (2 * math.pi) * float(f.laplacian(y1, y2) @ w) if w.size else 0.0
    return dWf + Wg, Wlap + dWg


def duhamel(
    F: Callable, c: float, x, t: float, n_tau: int = 24, n_psi: int = 24, n_phi: int = 32
) -> float:
    """``L_c(F)(x, t)``: zero-data solution of ``u_tt - c^2 Lap u = F``.

    ``F(y1, y2, s)`` must accept arrays.  With ``tau = t - s`` and
    ``|x - y| = c tau sin(psi)`` the inner integrand is regular:
    ``L = int_0^t tau/(2 pi) int int F(x + c tau sin(psi) e(phi), t - tau) sin(psi)``.
    """
    if t < 0:
        raise DomainError("t must be non-negative")
    if t == 0:
        return 0.0
    x = np.asarray(x, dtype=float)
    gx_t, gw_t = gauss_legendre(n_tau)
    gx_p, gw_p = gauss_legendre(n_psi)
    tau = 0.5 * t * (gx_t + 1)
    wt = 0.5 * t * gw_t
    psi = 0.25 * np.pi * (gx_p + 1)
    wp = 0.25 * np.pi * gw_p
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    wph = 2 * np.pi / n_phi
    T, P, H = np.meshgrid(tau, psi, phi, indexing="ij")
    rad = c * T * np.sin(P)
    vals = F(x[0] + rad * np.cos(H), x[1] + rad * np.sin(H), t - T)
    vals = np.broadcast_to(vals, T.shape)
    inner = np.einsum("tpf,p->t", vals * np.sin(P), wp) * wph
    return float(np.sum(wt * tau / (2 * np.pi) * inner))


# ---------------------------------------------------------------------------
# grid fields


@dataclass
class GridField:
    """Stack of time levels on a uniform origin-centred grid.

    ``values[n, a, b]`` lives at ``t = times[n]`` and
    ``x = (x1[a], x2[b])`` with ``x1[a] = (a - (nx - 1) / 2) h``.
    ``mask`` marks cells whose stencils were fully supported.
    """

    values: np.ndarray
    h: float
    times: np.ndarray
    component: int = 1
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 2:
            self.values = self.values[None]
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        if self.times.shape[0] != self.values.shape[0]:
            raise DomainError("one time per level is required")
        if self.mask is None:
            self.mask = np.ones(self.values.shape[1:], dtype=bool)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[1:]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        nx, ny = self.shape
        x1 = (np.arange(nx) - (nx - 1) / 2) * self.h
        x2 = (np.arange(ny) - (ny - 1) / 2) * self.h
        return np.meshgrid(x1, x2, indexing="ij")

    def level(self, t: float) -> "GridField":
        n = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[n], t, rel_tol=1e-9, abs_tol=1e-12):
            raise DomainError(f"time {t} is not a stored level")
        return replace(self, values=self.values[n : n + 1], times=self.times[n : n + 1])

    @classmethod
    def sample(cls, func: Callable, h: float, n: int, times, component: int = 1) -> "GridField":
        """Evaluate ``func(x1, x2, t)`` on an ``n x n`` grid at each time."""
        x = (np.arange(n) - (n - 1) / 2) * h
        X1, X2 = np.meshgrid(x, x, indexing="ij")
        times = np.atleast_1d(np.asarray(times, dtype=float))
        return cls(np.stack([func(X1, X2, t) * np.ones_like(X1) for t in times]), h, times, component)

    # serialization -------------------------------------------------------
    _HEADER = struct.Struct("<qqddq")

    def to_bytes(self, level: int = 0) -> bytes:
        nx, ny = self.shape
        head = self._HEADER.pack(nx, ny, self.h, float(self.times[level]), self.component)
        return head + np.ascontiguousarray(self.values[level], dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "GridField":
        nx, ny, h, t, comp = cls._HEADER.unpack_from(raw)
        vals = np.frombuffer(raw, dtype="<f8", offset=cls._HEADER.size, count=nx * ny).reshape(nx, ny)
        return cls(vals.copy(), h, [t], comp)

    def write(self, path: str | Path, level: int = 0) -> None:
        Path(path).write_bytes(self.to_bytes(level))

    @classmethod
    def read(cls, path: str | Path) -> "GridField":
        return cls.from_bytes(Path(path).read_bytes())

    def to_csv(self, path: str | Path, level: int = 0) -> None:
        X1, X2 = self.coords()
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["x1", "x2", "value"])
            for a, b, v in zip(X1.ravel(), X2.ravel(), self.values[level].ravel()):
                wr.writerow([f"{a:.17g}", f"{b:.17g}", f"{v:.17g}"])


_D1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0


def _diff(values: np.ndarray, axis: int, step: float) -> np.ndarray:
    """Fourth-order central first difference; the two outer cells on each side become NaN."""
    out = np.full_like(values, np.nan)
    n = values.shape[axis]
    core = [slice(None)] * values.ndim
    core[axis] = slice(2, n - 2)
    acc = 0.0
    for k, c in zip(range(-2, 3), _D1):
        if c == 0.0:
            continue
        sl = [slice(None)] * values.ndim
        sl[axis] = slice(2 + k, n - 2 + k)
        acc = acc + c * values[tuple(sl)]
    out[tuple(core)] = acc / step
    return out


def _time_derivative(field: GridField) -> GridField:
    if field.values.shape[0] < 5:
        raise DomainError("a time derivative needs at least five stored levels")
    dv = _diff(field.values, 0, field.dt)[2:-2]
    return replace(field, values=dv, times=field.times[2:-2])


def _space_derivative(field: GridField, axis: int) -> GridField:
    dv = _diff(field.values, axis + 1, field.h)
    mask = field.mask & np.all(np.isfinite(dv), axis=0)
    return replace(field, values=np.where(mask, dv, np.nan), mask=mask)


def _align(*fields: GridField) -> list[GridField]:
    """Restrict fields to their common time levels."""
    common = fields[0].times
    for f in fields[1:]:
        common = np.array([t for t in common if np.any(np.isclose(f.times, t, rtol=0, atol=1e-12))])
    out = []
    for f in fields:
        idx = [int(np.argmin(np.abs(f.times - t))) for t in common]
        out.append(replace(f, values=f.values[idx], times=common))
    return out


def apply_gamma(field: GridField, k: int) -> GridField:
    """Apply ``Gamma_k`` from ``(d_0, d_1, d_2, Omega, S)``.

    Spatial stencils invalidate two cells at each boundary (flagged in
    ``mask``); time stencils consume two levels at each end of the stack.
    """
    X1, X2 = field.coords()
    if k == 0:
        return _time_derivative(field)
    if k in (1, 2):
        return _space_derivative(field, k - 1)
    if k == 3:
        d1 = _space_derivative(field, 0)
        d2 = _space_derivative(field, 1)
        return replace(d1, values=X1 * d2.values - X2 * d1.values, mask=d1.mask & d2.mask)
    if k == 4:
        d0 = _time_derivative(field)
        d1, d2, d0 = _align(_space_derivative(field, 0), _space_derivative(field, 1), d0)
        t = d0.times[:, None, None]
        vals = t * d0.values + X1 * d1.values + X2 * d2.values
        return replace(d1, values=vals, mask=d1.mask & d2.mask)
    raise DomainError(f"Gamma index must be in 0..4, got {k}")


def apply_Z(field: GridField, c: float, alpha: int) -> GridField:
    """``Z_alpha = c d_alpha + (x_alpha / |x|) d_0``; cells with ``|x| < 2h`` are masked."""
    if alpha not in (1, 2):
        raise DomainError("alpha must be 1 or 2")
    X1, X2 = field.coords()
    r = np.hypot(X1, X2)
    xa = X1 if alpha == 1 else X2
    ds, d0 = _align(_space_derivative(field, alpha - 1), _time_derivative(field))
    near = r < 2 * field.h
    safe_r = np.where(near, 1.0, r)
    vals = c * ds.values + (xa / safe_r) * d0.values
    mask = ds.mask & ~near
    return replace(ds, values=np.where(mask, vals, np.nan), mask=mask)


def apply_Z_decomposed(field: GridField, c: float, alpha: int) -> GridField:
    """Same operator written as ``((c t - |x|)/t) d_alpha + (x_alpha S -+ x_beta Omega)/(|x| t)``."""
    if alpha not in (1, 2):
        raise DomainError("alpha must be 1 or 2")
    X1, X2 = field.coords()
    r = np.hypot(X1, X2)
    ds, S, Om = _align(_space_derivative(field, alpha - 1), apply_gamma(field, 4), apply_gamma(field, 3))
    t = ds.times[:, None, None]
    if np.any(t <= 0):
        raise DomainError("the decomposed form needs t > 0")
    near = r < 2 * field.h
    safe_r = np.where(near, 1.0, r)
    if alpha == 1:
        ang = X1 * S.values - X2 * Om.values
    else:
        ang = X2 * S.values + X1 * Om.values
    vals = (c * t - r) / t * ds.values + ang / (safe_r * t)
    mask = ds.mask & S.mask & Om.mask & ~near
    return replace(ds, values=np.where(mask, vals, np.nan), mask=mask)


def multi_indices(k: int) -> list[tuple[int, ...]]:
    """All ``a = (a_0, .., a_4)`` with ``|a| <= k``."""
    return [a for a in itertools.product(range(k + 1), repeat=5) if sum(a) <= k]


def apply_gamma_power(field: GridField, a: tuple[int, ...]) -> GridField:
    """``Gamma^a = Gamma_0^a0 Gamma_1^a1 ... Gamma_4^a4`` (rightmost applied first)."""
    out = field
    for k in range(4, -1, -1):
        for _ in range(a[k]):
            out = apply_gamma(out, k)
    return out


# ---------------------------------------------------------------------------
# regions and weights


def region_classify(x, t: float, speeds: SpeedVector) -> int:
    """Index ``i`` with ``||x| - c_i t| <= c_* t``, or 0 outside every slab."""
    if t < 0:
        raise DomainError("t must be non-negative")
    r = math.hypot(float(x[0]), float(x[1]))
    cs = speeds.c_star
    for i, c in enumerate(speeds.c, start=1):
        if abs(r - c * t) <= cs * t and t > 0:
            return i
    return 0


def weight_z(j: int, mu: float, nu: float, lam: float, s: float, speeds: SpeedVector) -> float:
    """``(1 + s + lam)^(1 + mu) (1 + |lam - c_j s|)^(1 + nu)`` with ``c_0 = 0``."""
    if lam < 0 or s < 0:
        raise DomainError("lam and s must be non-negative")
    cj = 0.0 if j == 0 else speeds[j]
    return (1 + s + lam) ** (1 + mu) * (1 + abs(lam - cj * s)) ** (1 + nu)


NormKind = Literal["bracket", "dbl_bracket", "angle", "dbl_angle", "L2", "sup"]


def norm_weight(kind: str, X1, X2, t: float, c: float) -> np.ndarray:
    r = np.hypot(X1, X2)
    cone = 1 + np.abs(r - c * t)
    if kind == "bracket":
        return (1 + r) ** float(K.BRACKET_RADIAL_EXP) * cone ** float(K.BRACKET_CONE_EXP)
    if kind == "dbl_bracket":
        return (1 + r) ** float(K.BRACKET_RADIAL_EXP) * cone ** float(K.DBL_BRACKET_CONE_EXP)
    if kind == "angle":
        return (1 + r + t) ** float(K.ANGLE_EXP)
    if kind == "dbl_angle":
        return (1 + r + t) ** float(K.DBL_ANGLE_EXP)
    if kind in ("L2", "sup"):
        return np.ones_like(r)
    raise DomainError(f"unknown norm kind {kind!r}")


def pointwise_gamma_sum(field: GridField, k: int, t: float) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """``sum_{|a| <= k} |Gamma^a v|`` at level ``t`` plus the validity mask and the individual terms."""
    if k > K.MAX_NORM_ORDER:
        raise DomainError(f"norm order {k} unsupported (max {K.MAX_NORM_ORDER})")
    if k < 0:
        raise DomainError("norm order must be non-negative")
    terms, mask = [], np.ones(field.shape, dtype=bool)
    for a in multi_indices(k):
        g = apply_gamma_power(field, a).level(t)
        terms.append(np.abs(g.values[0]))
        mask &= g.mask
    total = np.sum(terms, axis=0)
    return total, mask, terms


def weighted_norm(field: GridField, kind: NormKind, c: float, k: int, t: float | None = None) -> float:
    """Discrete ``[v]_k``, ``[[v]]_k``, ``<v>_k``, ``<<v>>_k``, ``||v||_k`` or ``|v|_k`` at one time.

    ``t`` defaults to the centre level of the stack.  Suprema and sums run
    over the cells where every ``Gamma^a`` stencil was supported.
    """
    if t is None:
        t = float(field.times[len(field.times) // 2])
    X1, X2 = field.coords()
    if kind == "L2":
        if k > K.MAX_NORM_ORDER or k < 0:
            raise DomainError(f"norm order {k} unsupported (max {K.MAX_NORM_ORDER})")
        total = 0.0
        for a in multi_indices(k):
            g = apply_gamma_power(field, a).level(t)
            vals = np.where(g.mask, g.values[0], 0.0)
            total += math.sqrt(float(np.sum(vals * vals)) * field.h**2)
        return total
    s, mask, _ = pointwise_gamma_sum(field, k, t)
    w = norm_weight(kind, X1, X2, t, c)
    if not mask.any():
        raise DomainError("no grid cell supports the requested stencils")
    return float(np.max((w * s)[mask]))
