"""Constraint profiles Psi and the built-in example problems on the unit square."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

__all__ = [
    "PsiFamily",
    "ProblemSpec",
    "Cross",
    "HalfPlaneSign",
    "CrossSign",
    "Constant",
    "AffineX",
    "BUILTIN_NAMES",
    "builtin_problem",
]


@dataclass(frozen=True)
class PsiFamily:
    """Strictly decreasing profile ``Psi`` entering the constraint ``int Psi(V) dx <= m``.

    ``kind="exponential"`` gives ``Psi(s) = exp(-param * s)``;
    ``kind="power"`` gives ``Psi(s) = s ** -param`` (undefined at ``s = 0``).
    """

    kind: str = "exponential"
    param: float = 3e-4

    def __post_init__(self):
        if self.kind not in ("exponential", "power"):
            raise ValueError(f"unknown Psi family {self.kind!r}")
        if not (np.isfinite(self.param) and self.param > 0):
            raise ValueError(f"Psi parameter must be positive, got {self.param}")

    def _check_domain(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(np.isnan(s)) or np.any(s < 0):
            raise ValueError("Psi is only defined for s >= 0")
        if self.kind == "power" and np.any(s <= 0):
            raise ValueError("power-family Psi is undefined at s = 0")
        return s

    def value(self, s):
        s = self._check_domain(s)
        if self.kind == "exponential":
            return np.exp(-self.param * s)
        return s ** -self.param

    def prime(self, s):
        s = self._check_domain(s)
        if self.kind == "exponential":
            return -self.param * np.exp(-self.param * s)
        return -self.param * s ** (-self.param - 1.0)

    def inverse(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(~(t > 0)):
            raise ValueError("Psi inverse requires t > 0")
        if self.kind == "exponential":
            if np.any(t > 1):
                raise ValueError("exponential Psi inverse requires t <= 1")
            return -np.log(t) / self.param
        return t ** (-1.0 / self.param)

    @property
    def convexity_witness(self) -> float:
        """An exponent ``p > 1`` for which ``s -> Psi^{-1}(s**p)`` is convex."""
        return 2.0 if self.kind == "exponential" else 1.0 + self.param

    def check_decreasing(self, upper: float = 1e4, n: int = 2001) -> bool:
        """Sample ``Psi`` on a log-spaced grid and confirm strict decrease where it is representable."""
        lo = 0.0 if self.kind == "exponential" else 1e-6
        s = np.unique(np.concatenate([[lo], np.geomspace(1e-6, upper, n)]))
        v = self.value(s)
        dv = np.diff(v)
        resolvable = v[1:] > 1e-250
        return bool(np.all(dv[resolvable] < 0) and np.all(dv <= 0))

    def check_convex_inverse(self, n: int = 401) -> bool:
        """Second differences of ``s -> Psi^{-1}(s**p)`` on ``(0, 1)`` must be nonnegative."""
        p = self.convexity_witness
        s = np.linspace(0.05, 0.95, n)
        h = s[1] - s[0]
        w = self.inverse(s ** p)
        second = (w[2:] - 2 * w[1:-1] + w[:-2]) / h**2
        return bool(np.all(second >= -1e-8 * np.abs(w[1:-1]).max() / h**2))


# Data functions are small frozen dataclasses rather than lambdas so problem
# metadata can be serialized and compared.

@dataclass(frozen=True)
class Constant:
    value: float = 1.0

    def __call__(self, x, y):
        return np.full(np.broadcast(x, y).shape, float(self.value))

    def describe(self) -> dict:
        return {"type": "constant", "value": self.value}


@dataclass(frozen=True)
class AffineX:
    """``f(x, y) = offset + slope * x``."""

    offset: float
    slope: float

    def __call__(self, x, y):
        x, _ = np.broadcast_arrays(np.asarray(x, dtype=float), y)
        return self.offset + self.slope * x

    def describe(self) -> dict:
        return {"type": "affine_x", "offset": self.offset, "slope": self.slope}


@dataclass(frozen=True)
class HalfPlaneSign:
    """``inside`` where ``y - slope * x >= offset``, ``outside`` elsewhere."""

    slope: float = 1.4
    offset: float = 0.3
    inside: float = -1.0
    outside: float = 1.0

    def __call__(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return np.where(y - self.slope * x >= self.offset, self.inside, self.outside)

    def describe(self) -> dict:
        return {"type": "half_plane", "slope": self.slope, "offset": self.offset,
                "inside": self.inside, "outside": self.outside}


@dataclass(frozen=True)
class Cross:
    """Union of a horizontal and a vertical closed axis-aligned bar."""

    h_x: tuple[float, float] = (0.10, 0.88)
    h_y: tuple[float, float] = (0.46, 0.58)
    v_x: tuple[float, float] = (0.41, 0.55)
    v_y: tuple[float, float] = (0.08, 0.90)

    def __post_init__(self):
        for name in ("h_x", "h_y", "v_x", "v_y"):
            lo, hi = getattr(self, name)
            if not (0.0 <= lo < hi <= 1.0):
                raise ValueError(f"cross extent {name}={getattr(self, name)} must satisfy 0 <= lo < hi <= 1")

    def contains(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        h = (self.h_x[0] <= x) & (x <= self.h_x[1]) & (self.h_y[0] <= y) & (y <= self.h_y[1])
        v = (self.v_x[0] <= x) & (x <= self.v_x[1]) & (self.v_y[0] <= y) & (y <= self.v_y[1])
        return h | v

    @property
    def area(self) -> float:
        def length(a):
            return a[1] - a[0]

        def overlap(a, b):
            return max(0.0, min(a[1], b[1]) - max(a[0], b[0]))

        both = overlap(self.h_x, self.v_x) * overlap(self.h_y, self.v_y)
        return length(self.h_x) * length(self.h_y) + length(self.v_x) * length(self.v_y) - both

    def describe(self) -> dict:
        return {"h_x": list(self.h_x), "h_y": list(self.h_y), "v_x": list(self.v_x), "v_y": list(self.v_y)}


@dataclass(frozen=True)
class CrossSign:
    cross: Cross = field(default_factory=Cross)
    inside: float = 1.0
    outside: float = -1.0

    def __call__(self, x, y):
        return np.where(self.cross.contains(x, y), self.inside, self.outside)

    def describe(self) -> dict:
        return {"type": "cross", "cross": self.cross.describe(), "inside": self.inside, "outside": self.outside}


@dataclass(frozen=True)
class ProblemSpec:
    """Data of one instance of ``min int g u`` subject to ``-lap u + V u = f`` and ``int Psi(V) <= m``."""

    name: str
    f: Callable
    g: Callable
    psi: PsiFamily
    m: float
    vmax: float = 1e4
    rect: tuple = ((0.0, 1.0), (0.0, 1.0))

    def __post_init__(self):
        if not (self.vmax > 0 and np.isfinite(self.vmax)):
            raise ValueError(f"vmax must be positive and finite, got {self.vmax}")
        if not self.m > 0:
            raise ValueError(f"volume bound m must be positive, got {self.m}")
        floor = float(self.psi.value(self.vmax)) * self.domain_area
        if floor > self.m:
            raise ValueError(
                f"admissible class is empty: Psi(vmax)*|D| = {floor:.6g} exceeds m = {self.m}")

    @property
    def domain_area(self) -> float:
        (x0, x1), (y0, y1) = self.rect
        return (x1 - x0) * (y1 - y0)

    @property
    def constraint_vacuous(self) -> bool:
        """True when even ``V = 0`` (or the smallest representable V) satisfies the bound."""
        if self.psi.kind == "power":
            return False
        return float(self.psi.value(0.0)) * self.domain_area <= self.m

    def with_overrides(self, **kw) -> "ProblemSpec":
        return replace(self, **kw)

    def describe(self) -> dict:
        def desc(fn):
            return fn.describe() if hasattr(fn, "describe") else repr(fn)

        return {
            "name": self.name,
            "f": desc(self.f),
            "g": desc(self.g),
            "psi": {"kind": self.psi.kind, "param": self.psi.param},
            "m": self.m,
            "vmax": self.vmax,
            "rect": [list(self.rect[0]), list(self.rect[1])],
        }


_DEFAULTS = {
    "example1": {"m": 0.2, "alpha": 3e-4},
    "example2": {"m": 0.45, "alpha": 3e-4},
    "example3": {"m": 0.45, "alpha": 3e-4},
    "example4": {"m": 0.5, "alpha": 3e-4},
}
BUILTIN_NAMES = tuple(_DEFAULTS)
_OVERRIDE_KEYS = {"m", "alpha", "vmax", "cross", "psi"}


def builtin_problem(name: str, **overrides) -> ProblemSpec:
    """Return one of the four reference problems, optionally with overrides.

    Accepted overrides: ``m``, ``alpha``, ``vmax``, ``cross`` (a :class:`Cross`,
    examples 3 and 4 only) and ``psi`` (a full :class:`PsiFamily`, replacing
    ``alpha``).
    """
    if name not in _DEFAULTS:
        raise ValueError(f"unknown problem {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
    unknown = set(overrides) - _OVERRIDE_KEYS
    if unknown:
        raise ValueError(f"unsupported override(s) for {name}: {', '.join(sorted(unknown))}")
    opts = {**_DEFAULTS[name], **{k: v for k, v in overrides.items() if v is not None}}
    if "cross" in opts and name not in ("example3", "example4"):
        raise ValueError(f"cross geometry only applies to example3/example4, not {name}")
    psi = opts.get("psi") or PsiFamily("exponential", float(opts["alpha"]))

    cross = opts.get("cross") or Cross()
    if name == "example1":
        f = AffineX(-1.0, -10.0)
    elif name == "example2":
        f = HalfPlaneSign(1.4, 0.3, inside=-1.0, outside=1.0)
    elif name == "example3":
        f = CrossSign(cross, inside=1.0, outside=-1.0)
    else:
        f = CrossSign(cross, inside=-1.0, outside=1.0)
    return ProblemSpec(name=name, f=f, g=Constant(1.0), psi=psi, m=float(opts["m"]),
                       vmax=float(opts.get("vmax", 1e4)))
