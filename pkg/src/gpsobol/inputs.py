"""Independent input distributions, experimental designs and Latin hypercube sampling.

Every distribution exposes a finite support ``[lo, hi]`` so that quadrature
rules and discretization grids can be built on it.  The Weibull law is
truncated at its ``1 - 1e-12`` quantile and renormalized.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate

WEIBULL_TAIL = 1e-12


class InputDistribution:
    """Base class of the one-dimensional input laws.

    Subclasses implement ``density``, ``cdf`` and ``quantile`` on numpy arrays
    and define ``lo``/``hi``.
    """

    kind: str = ""

    @property
    def support(self) -> tuple[float, float]:
        return (self.lo, self.hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def _breakpoints(self) -> list[float]:
        return []

    def kinks(self) -> list[float]:
        """Interior points where the density is not smooth."""
        return []

    def _check_normalization(self) -> None:
        # an integrable singularity (weibull shape < 1) makes quad warn while still converging
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            total, _ = integrate.quad(
                lambda t: float(self.density(t)), self.lo, self.hi,
                points=self._breakpoints() or None, epsabs=1e-13, epsrel=1e-13, limit=200,
            )
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"{self.kind} density integrates to {total!r}, not 1")

    def quantile(self, u):
        u = np.asarray(u, dtype=float)
        if np.any((u < 0.0) | (u > 1.0)) or np.any(np.isnan(u)):
            raise ValueError("probabilities must lie in [0, 1]")
        return self._ppf(u)

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Uniform(InputDistribution):
    a: float
    b: float
    kind = "uniform"

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError(f"uniform requires a < b, got ({self.a}, {self.b})")
        self._check_normalization()

    @property
    def lo(self) -> float:
        return float(self.a)

    @property
    def hi(self) -> float:
        return float(self.b)

    def density(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.a) & (x <= self.b)
        return np.where(inside, 1.0 / (self.b - self.a), 0.0)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.clip((x - self.a) / (self.b - self.a), 0.0, 1.0)

    def _ppf(self, u):
        # endpoints are returned exactly so quantile(0) == lo and quantile(1) == hi
        return np.where(u >= 1.0, self.b, self.a + u * (self.b - self.a))

    def to_dict(self) -> dict:
        return {"kind": "uniform", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Weibull(InputDistribution):
    """Weibull law ``shape`` k, ``scale`` lambda, shifted by ``location``.

    The upper tail beyond the ``1 - 1e-12`` quantile is cut off and the
    density renormalized by ``1 - 1e-12``.
    """

    shape: float
    scale: float
    location: float = 0.0
    kind = "weibull"

    def __post_init__(self):
        if self.shape <= 0 or self.scale <= 0:
            raise ValueError("weibull requires shape > 0 and scale > 0")
        self._check_normalization()

    @property
    def lo(self) -> float:
        return float(self.location)

    @property
    def hi(self) -> float:
        return float(self.location + self.scale * (-math.log(WEIBULL_TAIL)) ** (1.0 / self.shape))

    @property
    def _mass(self) -> float:
        return 1.0 - WEIBULL_TAIL

    def density(self, x):
        x = np.asarray(x, dtype=float)
        z = (x - self.location) / self.scale
        inside = (x >= self.lo) & (x <= self.hi)
        zs = np.where(inside, z, 1.0)
        with np.errstate(divide="ignore"):
            pdf = self.shape / self.scale * zs ** (self.shape - 1.0) * np.exp(-(zs**self.shape))
        return np.where(inside, pdf / self._mass, 0.0)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        z = np.clip((x - self.location) / self.scale, 0.0, None)
        raw = -np.expm1(-(z**self.shape))
        return np.clip(raw / self._mass, 0.0, 1.0)

    def _ppf(self, u):
        x = self.location + self.scale * (-np.log1p(-u * self._mass)) ** (1.0 / self.shape)
        return np.where(u >= 1.0, self.hi, x)

    def _breakpoints(self) -> list[float]:
        # the density peaks at the mode; help quad find the bulk of the mass
        mode = self.location + self.scale * ((self.shape - 1) / self.shape) ** (1 / self.shape) if self.shape > 1 else self.lo
        return [mode, self.location + self.scale] if mode > self.lo else [self.location + self.scale]

    def to_dict(self) -> dict:
        return {"kind": "weibull", "shape": self.shape, "scale": self.scale, "location": self.location}


@dataclass(frozen=True)
class Trapezoidal(InputDistribution):
    """Trapezoidal law rising on ``[a, b]``, flat on ``[b, c]``, falling on ``[c, d]``."""

    a: float
    b: float
    c: float
    d: float
    kind = "trapezoidal"

    def __post_init__(self):
        if not (self.a <= self.b <= self.c <= self.d and self.a < self.d):
            raise ValueError("trapezoidal requires a <= b <= c <= d and a < d")
        self._check_normalization()

    @property
    def lo(self) -> float:
        return float(self.a)

    @property
    def hi(self) -> float:
        return float(self.d)

    @property
    def height(self) -> float:
        return 2.0 / (self.d + self.c - self.b - self.a)

    def density(self, x):
        x = np.asarray(x, dtype=float)
        a, b, c, d, h = self.a, self.b, self.c, self.d, self.height
        out = np.zeros_like(x)
        rise = (x >= a) & (x < b)
        flat = (x >= b) & (x <= c)
        fall = (x > c) & (x <= d)
        if b > a:
            out = np.where(rise, h * (x - a) / (b - a), out)
        out = np.where(flat, h, out)
        if d > c:
            out = np.where(fall, h * (d - x) / (d - c), out)
        return out

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        a, b, c, d, h = self.a, self.b, self.c, self.d, self.height
        xc = np.clip(x, a, d)
        left = h * (b - a) / 2.0
        with np.errstate(divide="ignore", invalid="ignore"):
            f_rise = h * (xc - a) ** 2 / (2.0 * (b - a)) if b > a else np.zeros_like(xc)
            f_fall = 1.0 - h * (d - xc) ** 2 / (2.0 * (d - c)) if d > c else np.ones_like(xc)
        out = np.where(xc < b, f_rise, np.where(xc <= c, left + h * (xc - b), f_fall))
        return np.clip(out, 0.0, 1.0)

    def _ppf(self, u):
        a, b, c, d, h = self.a, self.b, self.c, self.d, self.height
        u_b = h * (b - a) / 2.0
        u_c = u_b + h * (c - b)
        x_rise = a + np.sqrt(np.clip(2.0 * u * (b - a) / h, 0.0, None))
        x_flat = b + (u - u_b) / h
        x_fall = d - np.sqrt(np.clip(2.0 * (1.0 - u) * (d - c) / h, 0.0, None))
        out = np.where(u <= u_b, x_rise, np.where(u <= u_c, x_flat, x_fall))
        return np.clip(out, a, d)

    def _breakpoints(self) -> list[float]:
        return [p for p in (self.b, self.c) if self.a < p < self.d]

    def kinks(self) -> list[float]:
        return self._breakpoints()

    def to_dict(self) -> dict:
        return {"kind": "trapezoidal", "a": self.a, "b": self.b, "c": self.c, "d": self.d}


def density(dist: InputDistribution, x):
    return dist.density(x)


def quantile(dist: InputDistribution, u):
    return dist.quantile(u)


_KINDS = {
    "uniform": (Uniform, ("a", "b"), {}),
    "weibull": (Weibull, ("shape", "scale"), {"location": 0.0}),
    "trapezoidal": (Trapezoidal, ("a", "b", "c", "d"), {}),
}


def distribution_from_dict(spec: dict) -> InputDistribution:
    """Build a distribution from ``{"kind": ..., <params>}``."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in _KINDS:
        raise ValueError(f"unknown distribution kind {kind!r}")
    cls, required, optional = _KINDS[kind]
    missing = [k for k in required if k not in spec]
    unknown = set(spec) - set(required) - set(optional)
    if missing or unknown:
        raise ValueError(f"{kind}: missing {missing}, unknown {sorted(unknown)}")
    kwargs = {**optional, **{k: float(v) for k, v in spec.items()}}
    return cls(**kwargs)


@dataclass(frozen=True)
class InputSpace:
    """A product of independent one-dimensional input laws."""

    dims: tuple[InputDistribution, ...]
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))
        if len(self.dims) < 1:
            raise ValueError("an input space needs at least one dimension")
        names = tuple(self.names) or tuple(f"X{i + 1}" for i in range(len(self.dims)))
        if len(names) != len(self.dims):
            raise ValueError("one name per dimension expected")
        object.__setattr__(self, "names", names)

    @property
    def d(self) -> int:
        return len(self.dims)

    @property
    def lower(self) -> np.ndarray:
        return np.array([dist.lo for dist in self.dims])

    @property
    def upper(self) -> np.ndarray:
        return np.array([dist.hi for dist in self.dims])

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, points) -> bool:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return bool(np.all((pts >= self.lower) & (pts <= self.upper)))

    def transform(self, u) -> np.ndarray:
        """Map points of the unit cube through each dimension's quantile function."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        return np.column_stack([dist.quantile(u[:, k]) for k, dist in enumerate(self.dims)])

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.transform(rng.random((n, self.d)))

    def to_list(self) -> list[dict]:
        out = []
        for name, dist in zip(self.names, self.dims):
            entry = dist.to_dict()
            entry["name"] = name
            out.append(entry)
        return out

    @classmethod
    def from_list(cls, entries: Sequence[dict]) -> "InputSpace":
        dims, names = [], []
        for k, entry in enumerate(entries):
            entry = dict(entry)
            names.append(str(entry.pop("name", f"X{k + 1}")))
            dims.append(distribution_from_dict(entry))
        return cls(tuple(dims), tuple(names))

    @classmethod
    def uniform(cls, d: int, a: float = 0.0, b: float = 1.0) -> "InputSpace":
        return cls(tuple(Uniform(a, b) for _ in range(d)))


def load_space(path) -> InputSpace:
    with open(Path(path), encoding="utf-8") as fh:
        return InputSpace.from_list(json.load(fh))


@dataclass(frozen=True)
class Design:
    """Experimental design ``points`` (n x d) with optional ``responses`` (n,)."""

    points: np.ndarray
    responses: np.ndarray | None = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        object.__setattr__(self, "points", pts)
        if self.responses is not None:
            y = np.asarray(self.responses, dtype=float).reshape(-1)
            if y.shape[0] != pts.shape[0]:
                raise ValueError("responses and points disagree on n")
            object.__setattr__(self, "responses", y)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def with_responses(self, y) -> "Design":
        return Design(self.points, y)


def lhs_sample(space: InputSpace, n: int, seed=None) -> Design:
    """Latin hypercube sample stratified in probability space.

    Each dimension gets an independent random permutation of the ``n``
    equal-probability strata and a uniform draw inside every stratum; the
    unit-cube design is then mapped through the quantile functions.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    u = np.empty((n, space.d))
    for k in range(space.d):
        u[:, k] = (rng.permutation(n) + rng.random(n)) / n
    return Design(space.transform(u))
