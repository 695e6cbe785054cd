"""Explicit time stepping of the quasilinear system, blow-up detection and lifespan sweeps.

Two spatial backends share one driver:

* ``cartesian``: the full 2-D system on an origin-centred square grid with
  second-order central differences;
* ``radial``: rotation-invariant systems with radial data reduced to
  ``r``-profiles on cell-centred nodes, optionally inside a window that
  travels with the wave packet.  This is what makes long lifespans
  reachable.

Both integrate the first-order pair ``(u, v = u_t)`` with classical RK4.
At every node the accelerations solve ``(I - A^{00}(du)) u_tt = rest``.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal

import numba
import numpy as np

from . import constants as K
from .data import InitialDataSet
from .nullform import CoefficientSet, DomainError, SpeedVector
from .waveops import GridField

Outcome = Literal["completed", "blowup", "unstable"]

#: determinant floor for the per-node acceleration system
SINGULAR_TOL = 1e-12


class SingularSystem(FloatingPointError):
    """``I - A^{00}`` lost invertibility at some node."""


@dataclass
class SimConfig:
    """Problem, discretisation and stopping rules for one run.

    ``extent`` is the half-width of the square (cartesian) or the initial
    outer radius (radial).  ``blowup_threshold`` multiplies the initial
    ``sup |du|``; ``curvature_threshold`` multiplies the initial weighted
    second-derivative level ``sup (1 + r)^(1/2) |d^2 u|``.  Either crossing
    ends the run as a blow-up.  ``window`` (radial only) is the trailing
    width kept behind the slowest cone once it exceeds the extent.

    ``band = (lo, hi)`` restricts the curvature level to the cone
    neighbourhoods ``lo <= |x| - c_i t <= hi``; reference levels for both
    thresholds are taken at the first output time ``>= baseline_time``.
    With ``extrapolate`` the blow-up time is continued past the curvature
    crossing by a straight-line fit of ``1/level`` against ``log(1 + t)``
    over the last doubling of the level.  ``log_cadence`` spaces the
    outputs by ``output_every * (1 + t)``.
    """

    coeffs: CoefficientSet
    speeds: SpeedVector
    data: InitialDataSet
    epsilon: float = 1.0
    extent: float = 4.0
    nx: int = 161
    cfl: float = 0.45
    t_max: float = 1.0
    blowup_threshold: float = 1e3
    curvature_threshold: float | None = None
    output_every: float = 0.1
    geometry: Literal["cartesian", "radial"] = "cartesian"
    window: float | None = None
    probes: tuple[float, ...] = ()
    sensitivity: tuple[float, ...] = (1e2, 1e4)
    order: int = 2
    band: tuple[float, float] | None = None
    baseline_time: float = 0.0
    extrapolate: bool = False
    log_cadence: bool = False

    def __post_init__(self):
        if self.coeffs.m != self.speeds.m or self.data.m != self.speeds.m:
            raise DomainError("coefficients, speeds and data disagree on m")
        if not 0 < self.cfl <= 1:
            raise DomainError(f"cfl must lie in (0, 1], got {self.cfl}")
        if not self.t_max > 0:
            raise DomainError("t_max must be positive")
        if not self.epsilon > 0:
            raise DomainError("epsilon must be positive")
        if self.nx < 8:
            raise DomainError("nx must be at least 8")
        if self.geometry not in ("cartesian", "radial"):
            raise DomainError(f"unknown geometry {self.geometry!r}")
        if self.order not in (2, 4, 6) or (self.geometry == "cartesian" and self.order != 2):
            raise DomainError("order must be 2 (cartesian) or one of 2, 4, 6 (radial)")
        if self.blowup_threshold <= 1:
            raise DomainError("blowup_threshold must exceed 1")
        if self.curvature_threshold is not None and self.curvature_threshold <= 1:
            raise DomainError("curvature_threshold must exceed 1")
        if self.band is not None:
            self.band = (float(self.band[0]), float(self.band[1]))
            if not self.band[0] < self.band[1]:
                raise DomainError("band must satisfy lo < hi")
        if not 0 <= self.baseline_time < self.t_max:
            raise DomainError("baseline_time must lie in [0, t_max)")
        if self.extrapolate and self.curvature_threshold is None:
            raise DomainError("extrapolation needs a curvature_threshold")
        if not self.output_every > 0:
            raise DomainError("output_every must be positive")
        need = self.speeds.c[-1] * self.t_max + self.data.M
        if self.geometry == "cartesian" or self.window is None:
            if self.extent < need:
                raise DomainError(
                    f"extent {self.extent} cannot contain the support c_m t_max + M = {need}"
                )
        else:
            if self.window <= 0:
                raise DomainError("window must be positive")
            spread = (self.speeds.c[-1] - self.speeds.c[0]) * self.t_max
            if self.extent <= self.window + self.data.M + spread + 4 * self.h:
                raise DomainError("extent must exceed window + M + (c_m - c_1) t_max")
        if self.geometry == "radial":
            if not self.data.radial:
                raise DomainError("radial geometry needs radial initial data")
            if not rotation_invariant(self.coeffs):
                raise DomainError("radial geometry needs a rotation-invariant nonlinearity")

    @property
    def h(self) -> float:
        if self.geometry == "cartesian":
            return 2 * self.extent / (self.nx - 1)
        return self.extent / self.nx

    @property
    def dt(self) -> float:
        return self.cfl * self.h / (math.sqrt(2) * self.speeds.c[-1])

    def refined(self, factor: int = 2) -> "SimConfig":
        """Same problem with ``factor`` times finer spacing (and time step)."""
        if self.geometry == "cartesian":
            nx = (self.nx - 1) * factor + 1
        else:
            nx = self.nx * factor
        return replace(self, nx=nx)


@dataclass
class WaveState:
    """``u`` and ``v = u_t`` for every component; ``r0`` is the inner edge of a radial window."""

    t: float
    u: np.ndarray
    v: np.ndarray
    r0: float = 0.0
    blown: bool = False

    def copy(self) -> "WaveState":
        return WaveState(self.t, self.u.copy(), self.v.copy(), self.r0, self.blown)


DIAGNOSTIC_COLUMNS = ("t", "sup_du", "energy", "bracket_norm", "angle_norm", "sup_d2u", "cone_d2u")


@dataclass
class RunResult:
    """Outcome of one run.  ``T_emp`` is the last time the solution was
    accepted; ``T_blowup`` the extrapolated blow-up time when requested."""

    outcome: Outcome
    T_emp: float
    diagnostics: dict[str, list[float]]
    region_max: dict[int, float] = field(default_factory=dict)
    probe_W: dict[float, list[tuple[float, float]]] = field(default_factory=dict)
    threshold_times: dict[float, float] = field(default_factory=dict)
    final_state: WaveState | None = None
    message: str = ""
    T_blowup: float | None = None

    def write_diagnostics(self, path: str | Path) -> None:
        cols = list(DIAGNOSTIC_COLUMNS)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(cols)
            for row in zip(*(self.diagnostics[c] for c in cols)):
                wr.writerow([f"{x:.17g}" for x in row])


# ---------------------------------------------------------------------------
# rotation invariance


def _rotate(theta: float) -> np.ndarray:
    R = np.eye(3)
    R[1:, 1:] = [[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]]
    return R


def _nonlinearity(coeffs: CoefficientSet, V: np.ndarray, D: np.ndarray) -> np.ndarray:
    """``sum A_l^{al be}(V) D[l, al, be] + B(V)`` for gradients ``V[j, ga]`` and Hessians ``D[l, al, be]``."""
    A = coeffs.quasilinear(V)
    return np.einsum("ilab,lab->i", A, D) + coeffs.semilinear(V)


def rotation_invariant(coeffs: CoefficientSet, trials: int = 8, tol: float = 1e-10) -> bool:
    """Whether the nonlinearity commutes with spatial rotations.

    Random gradients and Hessians are rotated by random angles; the
    nonlinear term must be unchanged.
    """
    rng = np.random.default_rng(12345)
    m = coeffs.m
    for _ in range(trials):
        V = rng.standard_normal((m, 3))
        D = rng.standard_normal((m, 3, 3))
        D = 0.5 * (D + D.transpose(0, 2, 1))
        R = _rotate(rng.uniform(0, 2 * math.pi))
        base = _nonlinearity(coeffs, V, D)
        rot = _nonlinearity(coeffs, V @ R.T, np.einsum("ab,lbc,dc->lad", R, D, R))
        if np.max(np.abs(rot - base)) > tol * (1 + np.max(np.abs(base))):
            return False
    return True


# ---------------------------------------------------------------------------
# cartesian backend


def _central(u: np.ndarray, axis: int, h: float) -> np.ndarray:
    out = np.zeros_like(u)
    sl = lambda a, b: tuple(slice(a, b) if k == axis else slice(None) for k in range(u.ndim))
    out[sl(1, -1)] = (u[sl(2, None)] - u[sl(None, -2)]) / (2 * h)
    return out


def _second(u: np.ndarray, axis: int, h: float) -> np.ndarray:
    out = np.zeros_like(u)
    sl = lambda a, b: tuple(slice(a, b) if k == axis else slice(None) for k in range(u.ndim))
    out[sl(1, -1)] = (u[sl(2, None)] - 2 * u[sl(1, -1)] + u[sl(None, -2)]) / (h * h)
    return out


class _Cartesian:
    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        n, h = cfg.nx, cfg.h
        x = (np.arange(n) - (n - 1) / 2) * h
        self.X1, self.X2 = np.meshgrid(x, x, indexing="ij")
        self.r = np.hypot(self.X1, self.X2)
        self.c2 = np.asarray(cfg.speeds.c)[:, None, None] ** 2
        t = cfg.coeffs.dense
        self.tensors = {k: v for k, v in t.items() if np.any(v)}

    def initial(self) -> WaveState:
        cfg = self.cfg
        u = np.stack([cfg.epsilon * f(self.X1, self.X2) for f in cfg.data.f])
        v = np.stack([cfg.epsilon * g(self.X1, self.X2) for g in cfg.data.g])
        return WaveState(0.0, u, v)

    def derivatives(self, u, v):
        h = self.cfg.h
        ux, uy = _central(u, 1, h), _central(u, 2, h)
        V = np.stack([v, ux, uy], axis=1)  # (m, 3, nx, ny)
        return V

    def hessian(self, u, v, acc):
        h = self.cfg.h
        D = np.empty((u.shape[0], 3, 3) + u.shape[1:])
        D[:, 0, 0] = acc
        D[:, 0, 1] = D[:, 1, 0] = _central(v, 1, h)
        D[:, 0, 2] = D[:, 2, 0] = _central(v, 2, h)
        D[:, 1, 1] = _second(u, 1, h)
        D[:, 2, 2] = _second(u, 2, h)
        D[:, 1, 2] = D[:, 2, 1] = _central(_central(u, 1, h), 2, h)
        return D

    def acceleration(self, u, v):
        h = self.cfg.h
        lap = _second(u, 1, h) + _second(u, 2, h)
        rhs = self.c2 * lap
        if not self.tensors:
            return rhs
        T = self.tensors
        V = self.derivatives(u, v)
        m = u.shape[0]
        A = np.zeros((m, m, 3, 3) + u.shape[1:])
        if "a" in T:
            A += np.einsum("iljabg,jgxy->ilabxy", T["a"], V, optimize=True)
        if "cq" in T:
            A += np.einsum("iljkabgd,jgxy,kdxy->ilabxy", T["cq"], V, V, optimize=True)
        if "b" in T:
            rhs = rhs + np.einsum("ijkab,jaxy,kbxy->ixy", T["b"], V, V, optimize=True)
        if "d" in T:
            rhs = rhs + np.einsum("ijklabg,jaxy,kbxy,lgxy->ixy", T["d"], V, V, V, optimize=True)
        if "a" in T or "cq" in T:
            D = self.hessian(u, v, np.zeros_like(u))
            rhs = rhs + np.einsum("ilabxy,labxy->ixy", A, D, optimize=True)
            return _solve_nodes(A[:, :, 0, 0], rhs)
        return rhs

    def second_derivatives(self, u, v, acc) -> np.ndarray:
        D = self.hessian(u, v, acc)
        return np.max(np.abs(D), axis=(1, 2))

    def energy(self, u, v) -> float:
        """``sum v^2 h^2 + c^2 sum |forward difference|^2``: conserved by the semi-discrete scheme."""
        h = self.cfg.h
        ex = np.diff(u, axis=1) ** 2
        ey = np.diff(u, axis=2) ** 2
        kin = np.sum(v * v, axis=(1, 2)) * h * h
        pot = self.c2[:, 0, 0] * (np.sum(ex, axis=(1, 2)) + np.sum(ey, axis=(1, 2)))
        return float(np.sum(kin + pot))

    def radius(self, st: WaveState) -> np.ndarray:
        return self.r

    def advance_window(self, st: WaveState) -> WaveState:
        return st


def _solve_nodes(M00: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``(I - M00) x = rhs`` at every node; ``M00`` has shape ``(m, m, ...)``."""
    m = rhs.shape[0]
    if m == 1:
        den = 1.0 - M00[0, 0]
        if np.any(np.abs(den) < SINGULAR_TOL):
            raise SingularSystem("I - A^00 is singular at some node")
        return rhs / den
    mat = np.eye(m)[(...,) + (None,) * (rhs.ndim - 1)] - M00
    mat = np.moveaxis(mat, (0, 1), (-2, -1))
    if np.any(np.abs(np.linalg.det(mat)) < SINGULAR_TOL):
        raise SingularSystem("I - A^00 is singular at some node")
    sol = np.linalg.solve(mat, np.moveaxis(rhs, 0, -1)[..., None])[..., 0]
    return np.moveaxis(sol, -1, 0)


# ---------------------------------------------------------------------------
# radial backend


#: central stencils (first, second derivative) on offsets -p..p
RADIAL_STENCILS = {
    2: (np.array([-0.5, 0.0, 0.5]), np.array([1.0, -2.0, 1.0])),
    4: (
        np.array([1 / 12, -2 / 3, 0.0, 2 / 3, -1 / 12]),
        np.array([-1 / 12, 4 / 3, -5 / 2, 4 / 3, -1 / 12]),
    ),
    6: (
        np.array([-1 / 60, 3 / 20, -3 / 4, 0.0, 3 / 4, -3 / 20, 1 / 60]),
        np.array([1 / 90, -3 / 20, 3 / 2, -49 / 18, 3 / 2, -3 / 20, 1 / 90]),
    ),
}


@numba.njit(cache=True, nogil=True, error_model="numpy")
def _ghost(w, i, k):
    """Value at cell ``k``: mirrored across the inner edge, zero beyond the outer edge."""
    n = w.shape[1]
    if k < 0:
        return w[i, -k - 1]
    if k >= n:
        return 0.0
    return w[i, k]


@numba.njit(cache=True, nogil=True, error_model="numpy")
def _radial_acc(u, v, r, h, s1, s2, c2, qi, qv, si, sv, out):
    """Accelerations for radial profiles; ``out`` receives ``u_tt``.

    On the ray ``omega = (1, 0)`` a radial ``u`` has gradient ``(u_t, u_r, 0)``
    and Hessian entries ``d_11 u = u_rr``, ``d_22 u = u_r / r``,
    ``d_01 u = v_r``; the others vanish.  Cells are mirrored across the
    inner edge: an exact even reflection at ``r = 0`` and a reflecting wall
    for a moving window.  Returns ``False`` on a singular node system.
    """
    m, n = u.shape
    p = s1.shape[0] // 2
    V = np.zeros((m, 2))
    D = np.zeros((m, 3, 3))
    A = np.zeros((m, m, 3, 3))
    rhs = np.zeros(m)
    mat = np.zeros((m, m))
    for j in range(n):
        for i in range(m):
            ur = 0.0
            urr = 0.0
            vr = 0.0
            for q in range(-p, p + 1):
                uq = _ghost(u, i, j + q)
                ur += s1[q + p] * uq
                urr += s2[q + p] * uq
                vr += s1[q + p] * _ghost(v, i, j + q)
            ur /= h
            urr /= h * h
            vr /= h
            V[i, 0] = v[i, j]
            V[i, 1] = ur
            D[i, 0, 1] = vr
            D[i, 1, 0] = vr
            D[i, 1, 1] = urr
            D[i, 2, 2] = ur / r[j]
            rhs[i] = c2[i] * (urr + ur / r[j])
        A[:] = 0.0
        for e in range(qi.shape[0]):
            idx = qi[e]
            val = qv[e] * V[idx[4], idx[5]]
            if idx[3] >= 0:
                val *= V[idx[3], idx[6]]
            A[idx[0], idx[1], idx[2] // 3, idx[2] % 3] += val
        for e in range(si.shape[0]):
            idx = si[e]
            val = sv[e] * V[idx[1], idx[2]] * V[idx[3], idx[4]]
            if idx[5] >= 0:
                val *= V[idx[5], idx[6]]
            rhs[idx[0]] += val
        for i in range(m):
            for l in range(m):
                for ab in range(1, 9):
                    rhs[i] += A[i, l, ab // 3, ab % 3] * D[l, ab // 3, ab % 3]
        for i in range(m):
            for l in range(m):
                mat[i, l] = (1.0 if i == l else 0.0) - A[i, l, 0, 0]
        if m == 1:
            if abs(mat[0, 0]) < 1e-12:
                return False
            out[0, j] = rhs[0] / mat[0, 0]
        else:
            if abs(np.linalg.det(mat)) < 1e-12:
                return False
            sol = np.linalg.solve(mat, rhs)
            for i in range(m):
                out[i, j] = sol[i]
    return True


@numba.njit(cache=True, nogil=True, error_model="numpy")
def _radial_rk4(u, v, r, h, s1, s2, dt, nsteps, c2, qi, qv, si, sv):
    """``nsteps`` RK4 steps in place; returns the number of completed steps."""
    m, n = u.shape
    k1 = np.empty_like(u)
    k2 = np.empty_like(u)
    k3 = np.empty_like(u)
    k4 = np.empty_like(u)
    us = np.empty_like(u)
    vs = np.empty_like(u)
    v1 = np.empty_like(u)
    v2 = np.empty_like(u)
    v3 = np.empty_like(u)
    for s in range(nsteps):
        if not _radial_acc(u, v, r, h, s1, s2, c2, qi, qv, si, sv, k1):
            return s
        us[:] = u + 0.5 * dt * v
        v1[:] = v + 0.5 * dt * k1
        if not _radial_acc(us, v1, r, h, s1, s2, c2, qi, qv, si, sv, k2):
            return s
        us[:] = u + 0.5 * dt * v1
        v2[:] = v + 0.5 * dt * k2
        if not _radial_acc(us, v2, r, h, s1, s2, c2, qi, qv, si, sv, k3):
            return s
        us[:] = u + dt * v2
        v3[:] = v + dt * k3
        if not _radial_acc(us, v3, r, h, s1, s2, c2, qi, qv, si, sv, k4):
            return s
        u += dt / 6.0 * (v + 2 * v1 + 2 * v2 + v3)
        v += dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        for i in range(m):
            for j in range(n):
                if not np.isfinite(v[i, j]):
                    return s + 1
    return nsteps


def _sparse_terms(coeffs: CoefficientSet):
    """Nonzero tensor entries that survive on the sampling ray ``omega = (1, 0)``.

    Quasilinear rows hold ``(i, l, 3 al + be, j | -1, k, ga, de)`` meaning
    ``A[i,l,al,be] += val * V[k,ga] (* V[j,de])``; semilinear rows hold
    ``(i, j, al, k, be, l | -1, ga)``.  Entries that multiply ``d_2 u`` (zero
    for radial fields there) are dropped.
    """
    q_idx, q_val, s_idx, s_val = [], [], [], []
    for key, val in coeffs.a.items():
        i, l, j, al, be, ga = key
        if ga < 2 and val:
            q_idx.append((i - 1, l - 1, 3 * al + be, -1, j - 1, ga, 0))
            q_val.append(val)
    for key, val in coeffs.cq.items():
        i, l, j, k, al, be, ga, de = key
        if ga < 2 and de < 2 and val:
            q_idx.append((i - 1, l - 1, 3 * al + be, j - 1, k - 1, de, ga))
            q_val.append(val)
    for key, val in coeffs.b.items():
        i, j, k, al, be = key
        if al < 2 and be < 2 and val:
            s_idx.append((i - 1, j - 1, al, k - 1, be, -1, 0))
            s_val.append(val)
    for key, val in coeffs.d.items():
        i, j, k, l, al, be, ga = key
        if al < 2 and be < 2 and ga < 2 and val:
            s_idx.append((i - 1, j - 1, al, k - 1, be, l - 1, ga))
            s_val.append(val)
    as_idx = lambda rows: np.array(rows, dtype=np.int64).reshape(-1, 7)
    return as_idx(q_idx), np.array(q_val, dtype=float), as_idx(s_idx), np.array(s_val, dtype=float)


class _Radial:
    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.terms = _sparse_terms(cfg.coeffs)
        self.c2 = np.asarray(cfg.speeds.c) ** 2
        self.s1, self.s2 = RADIAL_STENCILS[cfg.order]
        self.n = cfg.nx

    def nodes(self, r0: float) -> np.ndarray:
        h = self.cfg.h
        return r0 + (np.arange(self.n) + 0.5) * h

    def initial(self) -> WaveState:
        cfg = self.cfg
        r = self.nodes(0.0)
        z = np.zeros_like(r)
        u = np.stack([cfg.epsilon * f(r, z) for f in cfg.data.f])
        v = np.stack([cfg.epsilon * g(r, z) for g in cfg.data.g])
        return WaveState(0.0, u, v, 0.0)

    def _burst(self, dt: float) -> int:
        """Steps that fit before the window must move again."""
        cfg = self.cfg
        if cfg.window is None:
            return 1 << 30
        slack = cfg.extent - cfg.window - cfg.data.M - (cfg.speeds.c[-1] - cfg.speeds.c[0]) * cfg.t_max
        return max(1, int(0.5 * slack / (cfg.speeds.c[-1] * dt)))

    def step_many(self, st: WaveState, dt: float, nsteps: int) -> tuple[WaveState, int]:
        """Advance ``nsteps`` steps, moving the window between bursts; stops early on failure."""
        st = st.copy()
        burst = self._burst(dt)
        total = 0
        while total < nsteps:
            n = min(burst, nsteps - total)
            done = _radial_rk4(
                st.u, st.v, self.nodes(st.r0), self.cfg.h, self.s1, self.s2, dt, n,
                self.c2, *self.terms,
            )
            st.t += done * dt
            total += done
            if done < n:
                break
            st = self.advance_window(st)
        return st, total

    def acceleration(self, st: WaveState) -> np.ndarray:
        out = np.empty_like(st.u)
        ok = _radial_acc(st.u, st.v, self.nodes(st.r0), self.cfg.h, self.s1, self.s2,
                         self.c2, *self.terms, out)
        if not ok:
            raise SingularSystem("I - A^00 is singular at some node")
        return out

    def _apply(self, w: np.ndarray, stencil: np.ndarray) -> np.ndarray:
        p = len(stencil) // 2
        padded = np.concatenate([w[:, p - 1 :: -1], w, np.zeros_like(w[:, :p])], axis=1)
        n = w.shape[1]
        return sum(c * padded[:, k : k + n] for k, c in enumerate(stencil))

    def gradient(self, st: WaveState) -> tuple[np.ndarray, np.ndarray]:
        return st.v, self._apply(st.u, self.s1) / self.cfg.h

    def second_derivatives(self, st: WaveState, acc: np.ndarray) -> np.ndarray:
        h = self.cfg.h
        r = self.nodes(st.r0)
        ur = self._apply(st.u, self.s1) / h
        urr = self._apply(st.u, self.s2) / (h * h)
        vr = self._apply(st.v, self.s1) / h
        return np.max(np.abs(np.stack([acc, vr, urr, ur / r])), axis=0)

    def energy(self, st: WaveState) -> float:
        """Edge-difference energy; conserved exactly by the second-order stencil."""
        h = self.cfg.h
        r = self.nodes(st.r0)
        up = np.concatenate([st.u, np.zeros_like(st.u[:, :1])], axis=1)
        edges = r + 0.5 * h
        kin = np.sum(st.v**2 * r, axis=1) * h
        pot = self.c2 * np.sum(edges * np.diff(up, axis=1) ** 2, axis=1) / h
        return float(2 * np.pi * np.sum(kin + pot))

    def advance_window(self, st: WaveState) -> WaveState:
        cfg = self.cfg
        if cfg.window is None:
            return st
        h = cfg.h
        target = cfg.speeds.c[0] * st.t - cfg.window
        shift = int(math.floor((target - st.r0) / h))
        if shift <= 0:
            return st
        if shift >= st.u.shape[1]:
            raise DomainError("window moved past the whole grid; reduce the step burst")
        st = st.copy()
        pad = np.zeros((st.u.shape[0], shift))
        st.u = np.concatenate([st.u[:, shift:], pad], axis=1)
        st.v = np.concatenate([st.v[:, shift:], pad], axis=1)
        st.r0 += shift * h
        return st


def _backend(cfg: SimConfig):
    return _Radial(cfg) if cfg.geometry == "radial" else _Cartesian(cfg)


# ---------------------------------------------------------------------------
# stepping


def _rk4_cartesian(bk: _Cartesian, st: WaveState, dt: float) -> WaveState:
    u, v = st.u, st.v
    a1 = bk.acceleration(u, v)
    a2 = bk.acceleration(u + 0.5 * dt * v, v + 0.5 * dt * a1)
    v1 = v + 0.5 * dt * a1
    a3 = bk.acceleration(u + 0.5 * dt * v1, v + 0.5 * dt * a2)
    v2 = v + 0.5 * dt * a2
    a4 = bk.acceleration(u + dt * v2, v + dt * a3)
    v3 = v + dt * a3
    un = u + dt / 6 * (v + 2 * v1 + 2 * v2 + v3)
    vn = v + dt / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
    return WaveState(st.t + dt, un, vn, st.r0)


def step(state: WaveState, cfg: SimConfig, dt: float | None = None, backend=None) -> WaveState:
    """One RK4 step.  Raises :class:`SingularSystem` on a singular node system;
    non-finite values are returned with ``blown`` set."""
    bk = backend or _backend(cfg)
    dt = cfg.dt if dt is None else dt
    if isinstance(bk, _Radial):
        new, done = bk.step_many(state, dt, 1)
        if done == 0:
            raise SingularSystem("I - A^00 is singular at some node")
        new = bk.advance_window(new)
    else:
        with np.errstate(over="ignore", invalid="ignore"):
            new = _rk4_cartesian(bk, state, dt)
    if not (np.all(np.isfinite(new.u)) and np.all(np.isfinite(new.v))):
        new.blown = True
    return new


class _Monitor:
    """Diagnostics shared by both backends."""

    def __init__(self, bk, cfg: SimConfig):
        self.bk, self.cfg = bk, cfg

    def fields(self, st: WaveState):
        bk = self.bk
        if isinstance(bk, _Radial):
            r = bk.nodes(st.r0)
            ut, ur = bk.gradient(st)
            du = np.maximum(np.abs(ut), np.abs(ur))
            acc = bk.acceleration(st)
            d2 = bk.second_derivatives(st, acc)
        else:
            r = bk.r
            V = bk.derivatives(st.u, st.v)
            du = np.max(np.abs(V), axis=1)
            acc = bk.acceleration(st.u, st.v)
            d2 = bk.second_derivatives(st.u, st.v, acc)
        return r, du, d2, acc

    def measure(self, st: WaveState) -> dict[str, float]:
        cfg = self.cfg
        r, du, d2, acc = self.fields(st)
        sq = np.sqrt(1 + r)
        bracket = 0.0
        for i, c in enumerate(cfg.speeds.c):
            w = sq * (1 + np.abs(r - c * st.t)) ** float(K.BRACKET_CONE_EXP)
            bracket = max(bracket, float(np.max(w * du[i])))
        angle = float(np.max((1 + r + st.t) ** float(K.ANGLE_EXP) * np.abs(st.u)))
        energy = self.bk.energy(st) if isinstance(self.bk, _Radial) else self.bk.energy(st.u, st.v)
        level = sq * d2
        if cfg.band is not None:
            lo, hi = cfg.band
            off = r[None] - np.asarray(cfg.speeds.c).reshape((-1,) + (1,) * r.ndim) * st.t
            level = np.where((off >= lo) & (off <= hi), level, 0.0)
        return {
            "t": st.t,
            "sup_du": float(np.max(du)),
            "energy": energy,
            "bracket_norm": bracket,
            "angle_norm": angle,
            "sup_d2u": float(np.max(sq * d2)),
            "cone_d2u": float(np.max(level)),
            "_acc": acc,
            "_r": r,
            "_du": du,
        }


def _probe_values(meas, st: WaveState, cfg: SimConfig, i: int = 1) -> dict[float, float]:
    """``W = r^(1/2) d_0^2 u^i`` at ``r = c_i t + lam`` on the ray ``omega = 0``."""
    out = {}
    r, acc = meas["_r"], meas["_acc"][i - 1]
    c = cfg.speeds[i]
    if r.ndim == 2:
        n = r.shape[0]
        mid = (n - 1) // 2
        r, acc = r[mid:, mid], acc[mid:, mid]
    for lam in cfg.probes:
        rp = c * st.t + lam
        if r[0] <= rp <= r[-1] and rp > 0:
            out[lam] = math.sqrt(rp) * float(np.interp(rp, r, acc))
    return out


def _region_max(meas, st: WaveState, cfg: SimConfig) -> dict[int, float]:
    r, du = meas["_r"], meas["_du"]
    out = {}
    cs = cfg.speeds.c_star
    taken = np.zeros(r.shape, dtype=bool)
    for i, c in enumerate(cfg.speeds.c, start=1):
        sel = np.abs(r - c * st.t) <= cs * st.t if st.t > 0 else np.zeros(r.shape, dtype=bool)
        taken |= sel
        out[i] = float(np.max(np.max(du, axis=0)[sel])) if sel.any() else 0.0
    rest = ~taken
    out[0] = float(np.max(np.max(du, axis=0)[rest])) if rest.any() else 0.0
    return out


def run(cfg: SimConfig, refine_crossing: bool = False) -> RunResult:
    """Evolve to ``t_max``, a blow-up proxy crossing, or a singular node system."""
    bk = _backend(cfg)
    mon = _Monitor(bk, cfg)
    st = bk.initial()
    dt = cfg.dt
    n_total = int(math.ceil(cfg.t_max / dt - 1e-9))
    dt = cfg.t_max / n_total
    curv = cfg.curvature_threshold is not None
    diag = {k: [] for k in DIAGNOSTIC_COLUMNS}
    probes: dict[float, list] = {lam: [] for lam in cfg.probes}
    regions: dict[int, float] = {}
    crossed: dict[float, float] = {}
    base: dict[str, float] = {}

    def record(meas, st):
        for k in diag:
            diag[k].append(meas[k])
        for lam, w in _probe_values(meas, st, cfg).items():
            probes[lam].append((st.t, w))
        for j, val in _region_max(meas, st, cfg).items():
            regions[j] = max(regions.get(j, 0.0), val)
        if not base and st.t >= cfg.baseline_time - 1e-12:
            base["du"], base["d2u"] = meas["sup_du"], meas["cone_d2u"]
        if base:
            key, ref = ("cone_d2u", base["d2u"]) if curv else ("sup_du", base["du"])
            for f in cfg.sensitivity:
                if f not in crossed and ref > 0 and meas[key] > f * ref:
                    crossed[f] = st.t

    def over(meas) -> bool:
        if not base:
            return False
        if base["du"] > 0 and meas["sup_du"] > cfg.blowup_threshold * base["du"]:
            return True
        return curv and base["d2u"] > 0 and meas["cone_d2u"] > cfg.curvature_threshold * base["d2u"]

    record(mon.measure(st), st)
    done = 0
    outcome: Outcome = "completed"
    message = ""
    while done < n_total:
        every = cfg.output_every * (1 + st.t) if cfg.log_cadence else cfg.output_every
        n = min(max(1, int(round(every / dt))), n_total - done)
        prev = st
        try:
            st, ok = _advance(bk, st, dt, n)
        except SingularSystem as exc:
            outcome, message = "unstable", str(exc)
            break
        done += ok
        if ok < n or st.blown:
            outcome, message = "blowup", "non-finite values"
            if refine_crossing:
                st = _refine(bk, mon, prev, dt, over)
            break
        meas = mon.measure(st)
        record(meas, st)
        if over(meas):
            outcome, message = "blowup", "blow-up proxy threshold crossed"
            if refine_crossing:
                st = _refine(bk, mon, prev, dt, over)
            break
    T_emp = cfg.t_max if outcome == "completed" else min(st.t, cfg.t_max)
    T_blow = None
    if outcome == "blowup" and cfg.extrapolate and message.startswith("blow-up proxy"):
        T_blow = extrapolate_blowup(diag["t"], diag["cone_d2u"], base["d2u"], cfg.curvature_threshold,
                                    T_emp, cfg.baseline_time)
    return RunResult(outcome, T_emp, diag, regions, probes, crossed, st, message, T_blow)


def extrapolate_blowup(t, level, ref: float, factor: float, t_cross: float, t_start: float = 0.0) -> float:
    """Blow-up time from the last doubling of a growing level.

    Along a characteristic the Riccati dynamics make ``1/level`` affine in
    ``log(1 + t)``; the fitted line is continued to zero.  Only samples
    after the last minimum with ``level >= factor * ref / 2`` enter the
    fit.  Falls back to ``t_cross`` when fewer than three samples qualify
    or the fitted slope does not indicate growth.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(level, dtype=float)
    keep = (t <= t_cross + 1e-12) & (t >= t_start - 1e-12)
    t, y = t[keep], y[keep]
    start = int(np.argmin(y))
    idx = np.arange(len(t))
    sel = (idx >= start) & (y >= 0.5 * factor * ref) & (y > 0)
    if sel.sum() < 3:
        return t_cross
    x = np.log1p(t[sel])
    slope, icpt = np.polyfit(x, 1.0 / y[sel], 1)
    if not slope < 0:
        return t_cross
    L = -icpt / slope
    return max(t_cross, math.expm1(L)) if L < 700 else math.inf


def _advance(bk, st: WaveState, dt: float, n: int) -> tuple[WaveState, int]:
    if isinstance(bk, _Radial):
        new, done = bk.step_many(st, dt, n)
        if done < n and np.all(np.isfinite(new.v)):
            raise SingularSystem("I - A^00 is singular at some node")
        new.blown = not (np.all(np.isfinite(new.u)) and np.all(np.isfinite(new.v)))
        return bk.advance_window(new), done
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            st = _rk4_cartesian(bk, st, dt)
            if not (np.all(np.isfinite(st.u)) and np.all(np.isfinite(st.v))):
                st.blown = True
                return st, k + 1
    return st, n


def _refine(bk, mon: _Monitor, start: WaveState, dt: float, over) -> WaveState:
    """Replay from ``start`` with half the step, checking the proxy after every step."""
    st = start
    h = dt / 2
    for _ in range(10**7):
        try:
            nxt, ok = _advance(bk, st, h, 1)
        except SingularSystem:
            return st
        if ok < 1 or nxt.blown:
            return nxt
        if over(mon.measure(nxt)):
            return nxt
        st = nxt
    return st


# ---------------------------------------------------------------------------
# lifespan sweeps


@dataclass
class LifespanMeasurement:
    epsilon: float
    T_emp: float
    reached_horizon: bool
    outcome: Outcome
    threshold_times: dict[float, float] = field(default_factory=dict)
    result: RunResult | None = field(default=None, repr=False)

    @property
    def eps2_log1pT(self) -> float:
        return self.epsilon**2 * math.log1p(self.T_emp)


def estimate_lifespan(cfg: SimConfig, epsilon: float) -> LifespanMeasurement:
    """First time the blow-up proxy fires, else the horizon.

    The crossing is located by replaying the last output interval with a
    halved step, or replaced by the extrapolated blow-up time when the
    configuration asks for it.
    """
    c = replace(cfg, epsilon=epsilon)
    res = run(c, refine_crossing=not c.extrapolate)
    reached = res.outcome == "completed"
    T = res.T_blowup if res.T_blowup is not None else res.T_emp
    return LifespanMeasurement(epsilon, T, reached, res.outcome, res.threshold_times, res)


@dataclass
class ScalingRow:
    epsilon: float
    T_emp: float
    eps2_log1pT: float
    inv_H: float
    reached_horizon: bool
    flagged: bool
    valid: bool = True
    measurement: LifespanMeasurement | None = field(default=None, repr=False)


def scaling_study(
    cfg: SimConfig, eps_list, H: float, tol_scaling: float = 0.35, workers: int = 1
) -> list[ScalingRow]:
    """``(epsilon, T_emp, epsilon^2 log(1 + T_emp), 1/H)`` for each amplitude.

    Rows whose ``epsilon^2 log(1 + T_emp)`` falls below ``(1 - tol) / H`` are
    flagged; runs that hit a singular node system or end at ``t = 0`` are
    marked invalid.  Amplitudes run concurrently on ``workers`` threads
    (the radial kernels release the interpreter lock); rows keep the input
    order.
    """
    inv_H = math.inf if H == 0 else 1.0 / H
    eps_list = [float(e) for e in eps_list]
    if workers > 1 and len(eps_list) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            measured = list(pool.map(lambda e: estimate_lifespan(cfg, e), eps_list))
    else:
        measured = [estimate_lifespan(cfg, e) for e in eps_list]
    rows = []
    for eps, meas in zip(eps_list, measured):
        val = meas.eps2_log1pT
        valid = meas.outcome != "unstable" and meas.T_emp > 0
        flagged = (not meas.reached_horizon) and math.isfinite(inv_H) and val < (1 - tol_scaling) * inv_H
        rows.append(ScalingRow(eps, meas.T_emp, val, inv_H, meas.reached_horizon, bool(flagged), valid, meas))
    return rows


def write_scaling_csv(rows: list[ScalingRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["epsilon", "T_emp", "eps2_log1pT", "1/H", "reached_horizon", "flagged", "valid"])
        for r in rows:
            wr.writerow([f"{r.epsilon:.17g}", f"{r.T_emp:.17g}", f"{r.eps2_log1pT:.17g}",
                         f"{r.inv_H:.17g}", int(r.reached_horizon), int(r.flagged), int(r.valid)])


def snapshot(state: WaveState, cfg: SimConfig, component: int = 1) -> GridField:
    """Final field of one component as a single-level grid field (cartesian runs)."""
    if cfg.geometry != "cartesian":
        raise DomainError("snapshots are written for cartesian runs only")
    return GridField(state.u[component - 1], cfg.h, [state.t], component)
