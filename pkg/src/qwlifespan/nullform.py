"""Nonlinearity coefficient tensors and the structural / null-condition checks.

Component indices are 1-based (``1..m``) in every public signature and in
coefficient files; Greek indices run over ``0, 1, 2`` with ``0`` the time
direction.  Internally the tensors are densified into 0-based numpy arrays:

    a[i, l, j, al, be, ga]              a_{lj}^{i, al be ga}
    b[i, j, k, al, be]                  b_{jk}^{i, al be}
    cq[i, l, j, k, al, be, ga, de]      c_{ljk}^{i, al be ga de}
    d[i, j, k, l, al, be, ga]           d_{jkl}^{i, al be ga}

so that, for a gradient ``v[j, ga] = d_ga u^j``,

    A_l^{i,al be}(v) = a[i,l,j,al,be,ga] v[j,ga] + cq[i,l,j,k,al,be,ga,de] v[j,ga] v[k,de]
    B^i(v)           = b[i,j,k,al,be] v[j,al] v[k,be] + d[i,j,k,l,al,be,ga] v[j,al] v[k,be] v[l,ga]
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Literal

import numpy as np

from .constants import FORM_DEGREE

FormKind = Literal["Phi", "Psi", "Theta", "Xi"]
NullMode = Literal["strong", "standard"]

# number of component indices and Greek indices per tensor key
_TENSOR_SHAPE = {"a": (3, 3), "b": (3, 2), "cq": (4, 4), "d": (4, 3)}
_FILE_NAMES = {"a": "a", "b": "b", "c": "cq", "d": "d"}

#: relative zero tolerance of the trigonometric-coefficient test
NULL_RTOL = 1e-12


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


@dataclass(frozen=True)
class SpeedVector:
    """Strictly increasing positive propagation speeds ``c_1 < ... < c_m``."""

    c: tuple[float, ...]

    def __post_init__(self):
        c = tuple(float(x) for x in self.c)
        object.__setattr__(self, "c", c)
        if len(c) < 1:
            raise DomainError("at least one propagation speed is required")
        if not all(math.isfinite(x) for x in c):
            raise DomainError("propagation speeds must be finite")
        if c[0] <= 0:
            raise DomainError("propagation speeds must be positive (0 < c_1)")
        if any(b <= a for a, b in zip(c, c[1:])):
            raise DomainError(
                "propagation speeds must be distinct and strictly increasing "
                f"(0 < c_1 < c_2 < ... < c_m), got {c}"
            )

    @property
    def m(self) -> int:
        return len(self.c)

    def __getitem__(self, i: int) -> float:
        """1-based access ``speeds[i] == c_i``."""
        if not 1 <= i <= self.m:
            raise DomainError(f"component index {i} outside 1..{self.m}")
        return self.c[i - 1]

    @property
    def c_star(self) -> float:
        """One third of the smallest gap between consecutive speeds (``c_0 = 0``)."""
        gaps = np.diff((0.0,) + self.c)
        return float(gaps.min()) / 3.0


@dataclass
class CoefficientSet:
    """Sparse storage of the quadratic and cubic nonlinearity tensors.

    Keys are full index tuples (components first, 1-based; then Greek
    indices).  Absent entries are zero.
    """

    m: int
    a: dict[tuple[int, ...], float] = field(default_factory=dict)
    b: dict[tuple[int, ...], float] = field(default_factory=dict)
    cq: dict[tuple[int, ...], float] = field(default_factory=dict)
    d: dict[tuple[int, ...], float] = field(default_factory=dict)

    def __post_init__(self):
        if self.m < 1:
            raise DomainError("m must be at least 1")
        for name in _TENSOR_SHAPE:
            store = {tuple(int(x) for x in k): float(v) for k, v in getattr(self, name).items()}
            for key in store:
                self._validate_key(name, key)
            setattr(self, name, store)

    def _validate_key(self, name: str, key: tuple[int, ...]) -> None:
        n_comp, n_greek = _TENSOR_SHAPE[name]
        if len(key) != n_comp + n_greek:
            raise DomainError(f"tensor {name} needs {n_comp + n_greek} indices, got {key}")
        comps, greek = key[:n_comp], key[n_comp:]
        if any(not 1 <= c <= self.m for c in comps):
            raise DomainError(f"component index out of range 1..{self.m} in {name}{key}")
        if any(not 0 <= g <= 2 for g in greek):
            raise DomainError(f"Greek index out of range 0..2 in {name}{key}")

    def set(self, name: str, key: Iterable[int], value: float) -> "CoefficientSet":
        key = tuple(int(x) for x in key)
        self._validate_key(name, key)
        getattr(self, name)[key] = float(value)
        self.__dict__.pop("dense", None)
        return self

    def scaled(self, factor: float, tensors: Iterable[str] = ("a", "b", "cq", "d")) -> "CoefficientSet":
        out = CoefficientSet(self.m, dict(self.a), dict(self.b), dict(self.cq), dict(self.d))
        for name in tensors:
            setattr(out, name, {k: factor * v for k, v in getattr(out, name).items()})
        return out

    @cached_property
    def dense(self) -> dict[str, np.ndarray]:
        m = self.m
        out = {}
        for name, (n_comp, n_greek) in _TENSOR_SHAPE.items():
            arr = np.zeros((m,) * n_comp + (3,) * n_greek)
            for key, val in getattr(self, name).items():
                idx = tuple(k - 1 for k in key[:n_comp]) + key[n_comp:]
                arr[idx] += val
            out[name] = arr
        return out

    def quasilinear(self, v: np.ndarray) -> np.ndarray:
        """``A[i, l, al, be]`` at gradient ``v[j, ga]`` (truncated at quadratic order)."""
        t = self.dense
        return np.einsum("iljabg,jg->ilab", t["a"], v) + np.einsum(
            "iljkabgd,jg,kd->ilab", t["cq"], v, v
        )

    def semilinear(self, v: np.ndarray) -> np.ndarray:
        """``B[i]`` at gradient ``v[j, ga]`` (truncated at cubic order)."""
        t = self.dense
        return np.einsum("ijkab,ja,kb->i", t["b"], v, v) + np.einsum(
            "ijklabg,ja,kb,lg->i", t["d"], v, v, v
        )

    def is_empty(self) -> bool:
        return not any(getattr(self, n) for n in _TENSOR_SHAPE)

    def to_records(self) -> list[dict]:
        inverse = {v: k for k, v in _FILE_NAMES.items()}
        recs = []
        for name in ("a", "b", "cq", "d"):
            for key in sorted(getattr(self, name)):
                recs.append({"tensor": inverse[name], "indices": list(key), "value": getattr(self, name)[key]})
        return recs


def coefficients_from_records(records: list[dict], m: int) -> CoefficientSet:
    """Build a :class:`CoefficientSet` from ``{"tensor", "indices", "value"}`` records.

    Tensor names are ``a``, ``b``, ``c`` and ``d``; anything else is rejected.
    Repeated keys accumulate.
    """
    coeffs = CoefficientSet(m)
    for n, rec in enumerate(records):
        if not isinstance(rec, dict) or set(rec) != {"tensor", "indices", "value"}:
            raise DomainError(f"coefficient record {n} must have exactly the keys tensor, indices, value")
        name = _FILE_NAMES.get(rec["tensor"])
        if name is None:
            raise DomainError(f"coefficient record {n}: unknown tensor name {rec['tensor']!r}")
        key = tuple(int(x) for x in rec["indices"])
        coeffs._validate_key(name, key)
        store = getattr(coeffs, name)
        store[key] = store.get(key, 0.0) + float(rec["value"])
    return coeffs


def load_coefficients(path: str | Path, m: int | None = None) -> CoefficientSet:
    """Read a coefficient file: either a bare list of records or ``{"m": .., "records": [..]}``."""
    raw = json.loads(Path(path).read_text())
    if isinstance(raw, dict):
        unknown = set(raw) - {"m", "records"}
        if unknown:
            raise DomainError(f"unknown keys in coefficient file: {sorted(unknown)}")
        file_m = raw.get("m")
        if m is not None and file_m is not None and int(file_m) != m:
            raise DomainError(f"coefficient file declares m={file_m}, expected {m}")
        m = int(file_m) if file_m is not None else m
        records = raw.get("records", [])
    else:
        records = raw
    if m is None:
        raise DomainError("component count m is neither given nor declared in the coefficient file")
    return coefficients_from_records(records, m)


def save_coefficients(coeffs: CoefficientSet, path: str | Path) -> None:
    Path(path).write_text(json.dumps({"m": coeffs.m, "records": coeffs.to_records()}, indent=1))


# ---------------------------------------------------------------------------
# forms


def _check_component(coeffs: CoefficientSet, *idx: int) -> None:
    for k in idx:
        if not 1 <= k <= coeffs.m:
            raise DomainError(f"component index {k} outside 1..{coeffs.m}")


def form_tensor(kind: FormKind, coeffs: CoefficientSet, i: int, l: int) -> np.ndarray:
    """Diagonal slice of the tensor defining the form ``kind`` for ``(i, l)``."""
    _check_component(coeffs, i, l)
    t = coeffs.dense
    i0, l0 = i - 1, l - 1
    if kind == "Phi":
        return t["a"][i0, l0, l0]
    if kind == "Psi":
        return t["b"][i0, l0, l0]
    if kind == "Theta":
        return t["cq"][i0, l0, l0, l0]
    if kind == "Xi":
        return t["d"][i0, l0, l0, l0]
    raise DomainError(f"unknown form kind {kind!r}")


def eval_form(kind: FormKind, coeffs: CoefficientSet, i: int, l: int, X) -> float | np.ndarray:
    """Homogeneous polynomial ``Phi_l^i``, ``Psi_l^i``, ``Theta_l^i`` or ``Xi_l^i`` at ``X``.

    ``X`` has shape ``(3,)`` or ``(..., 3)``.
    """
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != 3:
        raise DomainError("X must have a trailing axis of length 3")
    if not np.all(np.isfinite(X)):
        raise DomainError("X must be finite")
    tensor = form_tensor(kind, coeffs, i, l)
    letters = "abcd"[: tensor.ndim]
    spec = letters + "," + ",".join("..." + c for c in letters) + "->..."
    val = np.einsum(spec, tensor, *([X] * tensor.ndim))
    return float(val) if val.ndim == 0 else val


@dataclass
class NullReport:
    form: str
    mode: str
    holds: bool
    witnesses: list[tuple[int, int, float, int, float]]

    def __post_init__(self):
        assert self.holds == (len(self.witnesses) == 0)


def cone_points(c: float, sign: int, theta: np.ndarray) -> np.ndarray:
    """Points ``(sign * c, cos theta, sin theta)`` of the characteristic cone of speed ``c``."""
    theta = np.asarray(theta, dtype=float)
    return np.stack([np.full_like(theta, sign * c), np.cos(theta), np.sin(theta)], axis=-1)


def check_null(
    coeffs: CoefficientSet, speeds: SpeedVector, kind: FormKind, mode: NullMode = "strong"
) -> NullReport:
    """Decide the strong or standard null condition for one form.

    On the cone of speed ``c_l`` the form restricted to ``(+-c_l, cos, sin)``
    is a trigonometric polynomial of degree at most ``deg``; it vanishes
    identically iff all of its ``2 deg + 1`` discrete Fourier coefficients do.
    """
    if coeffs.m != speeds.m:
        raise DomainError(f"coefficients have m={coeffs.m} but {speeds.m} speeds were given")
    if mode not in ("strong", "standard"):
        raise DomainError(f"unknown null mode {mode!r}")
    deg = FORM_DEGREE[kind]
    n = 2 * deg + 1
    theta = 2 * np.pi * np.arange(n) / n
    pairs = [(i, l) for i in range(1, coeffs.m + 1) for l in range(1, coeffs.m + 1)]
    if mode == "standard":
        pairs = [(i, l) for i, l in pairs if i == l]
    witnesses = []
    for i, l in pairs:
        tensor = form_tensor(kind, coeffs, i, l)
        c = speeds[l]
        scale = np.abs(tensor).sum() * max(1.0, c) ** deg
        tol = NULL_RTOL * (scale + 1.0)
        for sign in (1, -1):
            vals = eval_form(kind, coeffs, i, l, cone_points(c, sign, theta))
            fourier = np.fft.fft(vals) / n
            if np.max(np.abs(fourier)) > tol:
                k = int(np.argmax(np.abs(vals)))
                witnesses.append((i, l, float(theta[k]), sign, float(vals[k])))
    return NullReport(kind, mode, not witnesses, witnesses)


# ---------------------------------------------------------------------------
# structural assumptions


def check_symmetry(coeffs: CoefficientSet, tolerance: float = 1e-12) -> bool:
    """Symmetry of ``A_l^{i,al be}`` under ``i <-> l`` and ``al <-> be``.

    The quadratic part is compared as a polynomial in ``v``: ``cq`` is first
    symmetrised in ``(j, ga) <-> (k, de)``.
    """
    t = coeffs.dense
    a = t["a"]
    cq = t["cq"]
    cq = 0.5 * (cq + cq.transpose(0, 1, 3, 2, 4, 5, 7, 6))
    checks = [
        a - a.transpose(1, 0, 2, 3, 4, 5),
        a - a.transpose(0, 1, 2, 4, 3, 5),
        cq - cq.transpose(1, 0, 2, 3, 4, 5, 6, 7),
        cq - cq.transpose(0, 1, 2, 3, 5, 4, 6, 7),
    ]
    return all(np.all(np.abs(x) <= tolerance) for x in checks)


def check_structure(coeffs: CoefficientSet) -> bool:
    """Only ``d u^i d^2 u^i`` in the quadratic quasilinear part and ``d u^j d u^j`` in the semilinear."""
    for (i, l, j, *_), v in coeffs.a.items():
        if v != 0.0 and (j, l) != (i, i):
            return False
    for (i, j, k, *_), v in coeffs.b.items():
        if v != 0.0 and j != k:
            return False
    return True


def smallness_threshold(speeds: SpeedVector) -> float:
    return min(1.0, speeds.c[0]) ** 2 / (2 * speeds.m)


def sup_quasilinear(coeffs: CoefficientSet, gradient_bound: float, n_dirs: int = 64**3, seed: int = 0) -> float:
    """Sampled ``sup_{|v| <= bound} max |A_l^{i,al be}(v)|``.

    Directions are deterministic pseudo-random points of the unit sphere in
    ``R^{3m}`` plus the maximisers of the linear part and the extreme
    eigenvectors of the quadratic part, each taken at four radii.  This is a
    sampled estimate, not a certified bound.
    """
    if gradient_bound < 0:
        raise DomainError("gradient_bound must be non-negative")
    m = coeffs.m
    n = 3 * m
    t = coeffs.dense
    # lin[p, n], quad[p, n, n] with p running over (i, l, al, be)
    lin = t["a"].transpose(0, 1, 3, 4, 2, 5).reshape(9 * m * m, n)
    quad = t["cq"].transpose(0, 1, 4, 5, 2, 6, 3, 7).reshape(9 * m * m, n, n)
    quad = 0.5 * (quad + quad.transpose(0, 2, 1))
    if gradient_bound == 0 or (not lin.any() and not quad.any()):
        return 0.0
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_dirs, n))
    extra = [lin[p] for p in range(lin.shape[0]) if lin[p].any()]
    for p in range(quad.shape[0]):
        if quad[p].any():
            _, vecs = np.linalg.eigh(quad[p])
            extra.extend([vecs[:, 0], vecs[:, -1]])
    if extra:
        extra = np.array(extra)
        dirs = np.vstack([dirs, extra, -extra])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    best = 0.0
    for radius in (0.25, 0.5, 0.75, 1.0):
        for start in range(0, dirs.shape[0], 16384):
            v = radius * gradient_bound * dirs[start : start + 16384]
            vals = v @ lin.T + np.einsum("nk,pkl,nl->np", v, quad, v)
            best = max(best, float(np.abs(vals).max()))
    return best


def check_smallness(coeffs: CoefficientSet, speeds: SpeedVector, gradient_bound: float) -> bool:
    """``|A_l^{i,al be}(v)| < min(1, c_1)^2 / (2m)`` for sampled ``|v| <= gradient_bound``."""
    if coeffs.m != speeds.m:
        raise DomainError(f"coefficients have m={coeffs.m} but {speeds.m} speeds were given")
    return sup_quasilinear(coeffs, gradient_bound) < smallness_threshold(speeds)


def q0_coefficients(m: int, i: int, l: int, speed: float, tensor: str = "b", scale: float = 1.0) -> CoefficientSet:
    """Coefficient set whose ``(i, l)`` form is ``X_0^2 - speed^2 (X_1^2 + X_2^2)`` (times ``X_0`` for cubic tensors)."""
    coeffs = CoefficientSet(m)
    diag = [(0, 1.0), (1, -speed**2), (2, -speed**2)]
    for g, w in diag:
        if tensor == "b":
            coeffs.set("b", (i, l, l, g, g), scale * w)
        elif tensor == "a":
            coeffs.set("a", (i, l, l, g, g, 0), scale * w)
        elif tensor == "d":
            coeffs.set("d", (i, l, l, l, g, g, 0), scale * w)
        elif tensor == "cq":
            coeffs.set("cq", (i, l, l, l, g, g, 0, 0), scale * w)
        else:
            raise DomainError(f"unknown tensor {tensor!r}")
    return coeffs
