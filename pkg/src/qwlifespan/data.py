"""Compactly supported initial data: evaluable scalar fields on the plane.

Fields are vectorised callables ``field(x1, x2)``.  The built-in bump family
``A exp(-1 / (1 - |x - x0|^2 / R^2))`` is C-infinity with support in the
closed disk of radius ``R`` around ``x0`` and supplies exact gradients and
Laplacians; other fields fall back to fourth-order finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .nullform import DomainError

_FD_STEP = 1e-3


class ScalarField:
    """Base class; subclasses implement ``__call__`` and ``support_radius``."""

    support_radius: float = 0.0
    radial: bool = False

    def __call__(self, x1, x2) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def gradient(self, x1, x2) -> tuple[np.ndarray, np.ndarray]:
        h = _FD_STEP * max(self.support_radius, 1.0)
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        g1 = (-self(x1 + 2 * h, x2) + 8 * self(x1 + h, x2) - 8 * self(x1 - h, x2) + self(x1 - 2 * h, x2)) / (12 * h)
        g2 = (-self(x1, x2 + 2 * h) + 8 * self(x1, x2 + h) - 8 * self(x1, x2 - h) + self(x1, x2 - 2 * h)) / (12 * h)
        return g1, g2

    def laplacian(self, x1, x2) -> np.ndarray:
        h = _FD_STEP * max(self.support_radius, 1.0)
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        c = -60 * self(x1, x2)
        for d1, d2 in ((h, 0.0), (0.0, h)):
            c = c + 16 * (self(x1 + d1, x2 + d2) + self(x1 - d1, x2 - d2))
            c = c - (self(x1 + 2 * d1, x2 + 2 * d2) + self(x1 - 2 * d1, x2 - 2 * d2))
        return c / (12 * h * h)

    def support_disk(self) -> tuple[tuple[float, float], float]:
        """Centre and radius of a disk containing the support."""
        return (0.0, 0.0), self.support_radius

    def spec(self) -> dict[str, Any]:
        raise NotImplementedError


class ZeroField(ScalarField):
    radial = True

    def __call__(self, x1, x2):
        return np.zeros(np.broadcast(np.asarray(x1), np.asarray(x2)).shape)

    def gradient(self, x1, x2):
        z = self(x1, x2)
        return z, z.copy()

    def laplacian(self, x1, x2):
        return self(x1, x2)

    def spec(self):
        return {"family": "zero"}


@dataclass
class BumpField(ScalarField):
    """``amplitude * exp(-1/(1 - s)) * (1 + strength * (x - x0).e / radius)``, ``s = |x - x0|^2 / radius^2``.

    ``strength = 0`` gives the plain bump; a nonzero strength modulates it
    linearly along the unit vector ``e = (cos phase, sin phase)``.
    """

    amplitude: float = 1.0
    radius: float = 1.0
    center: tuple[float, float] = (0.0, 0.0)
    strength: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        if self.radius <= 0:
            raise DomainError("bump radius must be positive")
        self.center = (float(self.center[0]), float(self.center[1]))
        self.support_radius = float(np.hypot(*self.center)) + self.radius
        self.radial = self.center == (0.0, 0.0) and self.strength == 0.0

    def support_disk(self):
        return self.center, self.radius

    def _profile(self, x1, x2):
        y1 = np.asarray(x1, dtype=float) - self.center[0]
        y2 = np.asarray(x2, dtype=float) - self.center[1]
        s = (y1 * y1 + y2 * y2) / self.radius**2
        inside = s < 1.0
        q = np.where(inside, 1.0 / np.where(inside, 1.0 - s, 1.0), 0.0)
        phi = np.where(inside, np.exp(-q), 0.0)
        return y1, y2, q, phi

    def _modulation(self, y1, y2):
        e1, e2 = np.cos(self.phase), np.sin(self.phase)
        p = 1.0 + self.strength * (y1 * e1 + y2 * e2) / self.radius
        return p, self.strength * e1 / self.radius, self.strength * e2 / self.radius

    def __call__(self, x1, x2):
        y1, y2, _, phi = self._profile(x1, x2)
        p, _, _ = self._modulation(y1, y2)
        return self.amplitude * phi * p

    def gradient(self, x1, x2):
        y1, y2, q, phi = self._profile(x1, x2)
        # d phi / ds = -phi q^2 ; ds/dy = 2 y / R^2
        dphi = -phi * q * q * 2.0 / self.radius**2
        p, p1, p2 = self._modulation(y1, y2)
        g1 = dphi * y1 * p + phi * p1
        g2 = dphi * y2 * p + phi * p2
        return self.amplitude * g1, self.amplitude * g2

    def laplacian(self, x1, x2):
        y1, y2, q, phi = self._profile(x1, x2)
        R2 = self.radius**2
        s = (y1 * y1 + y2 * y2) / R2
        d1 = -phi * q * q  # phi'(s)
        d2 = phi * (q**4 - 2 * q**3)  # phi''(s)
        lap_phi = d2 * 4.0 * s / R2 + d1 * 4.0 / R2
        p, p1, p2 = self._modulation(y1, y2)
        grad_dot = 2.0 * d1 / R2 * (y1 * p1 + y2 * p2)
        return self.amplitude * (lap_phi * p + 2.0 * grad_dot)

    def spec(self):
        return {
            "family": "bump",
            "amplitude": self.amplitude,
            "radius": self.radius,
            "center": list(self.center),
            "strength": self.strength,
            "phase": self.phase,
        }


@dataclass
class DiskIndicator(ScalarField):
    """Indicator of a centred disk.  Not smooth; used to test line integrals."""

    radius: float = 1.0

    def __post_init__(self):
        self.support_radius = self.radius
        self.radial = True

    def __call__(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        return (x1 * x1 + x2 * x2 < self.radius**2).astype(float)

    def spec(self):
        return {"family": "disk_indicator", "radius": self.radius}


@dataclass
class SumField(ScalarField):
    terms: list[ScalarField] = field(default_factory=list)

    def __post_init__(self):
        self.support_radius = max((t.support_radius for t in self.terms), default=0.0)
        self.radial = all(t.radial for t in self.terms)

    def __call__(self, x1, x2):
        out = ZeroField()(x1, x2)
        for t in self.terms:
            out = out + t(x1, x2)
        return out

    def gradient(self, x1, x2):
        g1, g2 = ZeroField().gradient(x1, x2)
        for t in self.terms:
            a, b = t.gradient(x1, x2)
            g1, g2 = g1 + a, g2 + b
        return g1, g2

    def laplacian(self, x1, x2):
        out = ZeroField()(x1, x2)
        for t in self.terms:
            out = out + t.laplacian(x1, x2)
        return out

    def spec(self):
        return {"family": "sum", "terms": [t.spec() for t in self.terms]}


@dataclass
class ScaledField(ScalarField):
    base: ScalarField
    factor: float

    def __post_init__(self):
        self.support_radius = self.base.support_radius
        self.radial = self.base.radial

    def support_disk(self):
        return self.base.support_disk()

    def __call__(self, x1, x2):
        return self.factor * self.base(x1, x2)

    def gradient(self, x1, x2):
        g1, g2 = self.base.gradient(x1, x2)
        return self.factor * g1, self.factor * g2

    def laplacian(self, x1, x2):
        return self.factor * self.base.laplacian(x1, x2)

    def spec(self):
        return {"family": "scaled", "factor": self.factor, "base": self.base.spec()}


def field_from_spec(spec: dict[str, Any]) -> ScalarField:
    """Instantiate a field from its ``{"family": ..., parameters}`` description."""
    spec = dict(spec)
    family = spec.pop("family", None)
    if family == "zero":
        _no_extra(family, spec)
        return ZeroField()
    if family == "bump":
        allowed = {"amplitude", "radius", "center", "strength", "phase"}
        _no_extra(family, spec, allowed)
        if "center" in spec:
            spec["center"] = tuple(spec["center"])
        return BumpField(**spec)
    if family == "disk_indicator":
        _no_extra(family, spec, {"radius"})
        return DiskIndicator(**spec)
    if family == "sum":
        _no_extra(family, spec, {"terms"})
        return SumField([field_from_spec(t) for t in spec.get("terms", [])])
    if family == "scaled":
        _no_extra(family, spec, {"factor", "base"})
        return ScaledField(field_from_spec(spec["base"]), float(spec["factor"]))
    raise DomainError(f"unknown initial-data family {family!r}")


def _no_extra(family, spec, allowed=frozenset()):
    extra = set(spec) - set(allowed)
    if extra:
        raise DomainError(f"unknown parameters for family {family!r}: {sorted(extra)}")


@dataclass
class InitialDataSet:
    """Data ``(f^i, g^i)`` for ``i = 1..m``, all supported in ``|x| <= M``."""

    f: list[ScalarField]
    g: list[ScalarField]
    M: float

    def __post_init__(self):
        if len(self.f) != len(self.g):
            raise DomainError("f and g must have the same number of components")
        if self.M <= 0:
            raise DomainError("support radius M must be positive")
        for name, fields in (("f", self.f), ("g", self.g)):
            for i, fld in enumerate(fields, start=1):
                if fld.support_radius > self.M * (1 + 1e-12):
                    raise DomainError(
                        f"{name}^{i} has support radius {fld.support_radius} exceeding M={self.M}"
                    )

    @property
    def m(self) -> int:
        return len(self.f)

    def component(self, i: int) -> tuple[ScalarField, ScalarField]:
        if not 1 <= i <= self.m:
            raise DomainError(f"component index {i} outside 1..{self.m}")
        return self.f[i - 1], self.g[i - 1]

    @property
    def radial(self) -> bool:
        return all(fl.radial for fl in self.f + self.g)

    @classmethod
    def zero(cls, m: int, M: float = 1.0) -> "InitialDataSet":
        return cls([ZeroField() for _ in range(m)], [ZeroField() for _ in range(m)], M)

    def spec(self) -> dict[str, Any]:
        return {"M": self.M, "f": [x.spec() for x in self.f], "g": [x.spec() for x in self.g]}

    @classmethod
    def from_spec(cls, spec: dict[str, Any]) -> "InitialDataSet":
        extra = set(spec) - {"M", "f", "g"}
        if extra:
            raise DomainError(f"unknown keys in initial data: {sorted(extra)}")
        f = [field_from_spec(s) for s in spec["f"]]
        g = [field_from_spec(s) for s in spec["g"]]
        M = spec.get("M")
        if M is None:
            M = max(x.support_radius for x in f + g)
        return cls(f, g, float(M))
