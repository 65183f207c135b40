"""Deterministic splittable random streams, discrete white noise, and marked
Poisson point samples.

Streams are identified by (master seed, path of integers). The same pair
always reproduces the same value sequence; distinct paths give statistically
independent streams. Splitting appends path elements, so concurrent workers
can derive their own streams without coordination.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError
from .geometry import Box

# Philox is counter-based; SeedSequence(entropy, spawn_key) keys it so that
# streams are a pure function of (master_seed, path).
ALGORITHM_ID = "philox4x64/seedseq-v1"

_MAX_PATH_ELEMENT = 2**32


@dataclass(frozen=True)
class RngStream:
    master_seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if not isinstance(self.master_seed, (int, np.integer)) or self.master_seed < 0:
            raise ValueError(f"master_seed must be a nonnegative int, got {self.master_seed!r}")
        for el in self.path:
            if not isinstance(el, (int, np.integer)) or not 0 <= el < _MAX_PATH_ELEMENT:
                raise ValueError(f"path elements must be ints in [0, 2^32), got {el!r}")
        object.__setattr__(self, "master_seed", int(self.master_seed))
        object.__setattr__(self, "path", tuple(int(e) for e in self.path))

    def child(self, *elements: int) -> "RngStream":
        """Derived stream with the given elements appended to the path."""
        return RngStream(self.master_seed, self.path + tuple(elements))

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(entropy=self.master_seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))


def make_stream(master_seed: int, path=()) -> RngStream:
    return RngStream(master_seed, tuple(path))


# ---------------------------------------------------------------------------
# white noise


@dataclass(frozen=True)
class WhiteNoiseGrid:
    """Cell-centred discrete white noise.

    Cell (k_1, .., k_d) covers origin + [k, k+1) * spacing per axis and holds
    an independent N(0, spacing^d) value, matching the set-variance law
    W(A) ~ N(0, |A|) at grid resolution.
    """

    spacing: float
    origin: tuple[float, ...]
    values: np.ndarray

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    def cell_centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.spacing * (np.arange(self.shape[axis]) + 0.5)

    def domain(self) -> Box:
        return Box(
            self.origin,
            tuple(o + self.spacing * n for o, n in zip(self.origin, self.shape)),
        )


def sample_white_noise(shape, spacing: float, stream: RngStream, origin=None) -> WhiteNoiseGrid:
    shape = tuple(int(n) for n in shape)
    if any(n <= 0 for n in shape):
        raise GeometryError(f"noise grid shape must be positive, got {shape}")
    if spacing <= 0:
        raise GeometryError(f"spacing must be positive, got {spacing}")
    if origin is None:
        origin = (0.0,) * len(shape)
    origin = tuple(float(v) for v in origin)
    if len(origin) != len(shape):
        raise GeometryError("origin/shape dimension mismatch")
    d = len(shape)
    std = spacing ** (d / 2.0)
    values = stream.generator().standard_normal(shape) * std
    return WhiteNoiseGrid(spacing=float(spacing), origin=origin, values=values)


# ---------------------------------------------------------------------------
# marks and Poisson points


@dataclass(frozen=True)
class MarkDistribution:
    """Mark law with compact support: point mass, uniform[a, b], or a finite
    discrete distribution."""

    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind == "point-mass":
            (v,) = self.params
            if not np.isfinite(v):
                raise ValueError("point-mass mark must be finite")
        elif self.kind == "uniform":
            a, b = self.params
            if not (0 < a < b):
                raise ValueError(f"uniform marks need 0 < a < b, got [{a}, {b}]")
        elif self.kind == "discrete":
            values, probs = self.params
            values = tuple(float(v) for v in values)
            probs = tuple(float(p) for p in probs)
            if len(values) != len(probs) or not values:
                raise ValueError("discrete marks need matching nonempty values/probs")
            if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
                raise ValueError("discrete mark probabilities must be >= 0 and sum to 1")
            object.__setattr__(self, "params", (values, probs))
        else:
            raise ValueError(f"unknown mark distribution kind {self.kind!r}")

    def sample(self, gen: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "point-mass":
            return np.full(n, float(self.params[0]))
        if self.kind == "uniform":
            a, b = self.params
            return gen.uniform(a, b, size=n)
        values, probs = self.params
        return np.asarray(values)[gen.choice(len(values), size=n, p=probs)]

    def mean(self) -> float:
        if self.kind == "point-mass":
            return float(self.params[0])
        if self.kind == "uniform":
            a, b = self.params
            return (a + b) / 2.0
        values, probs = self.params
        return float(np.dot(values, probs))


def point_mass(v: float) -> MarkDistribution:
    return MarkDistribution("point-mass", (float(v),))


def uniform_marks(a: float, b: float) -> MarkDistribution:
    return MarkDistribution("uniform", (float(a), float(b)))


def discrete_marks(values, probs) -> MarkDistribution:
    return MarkDistribution("discrete", (tuple(values), tuple(probs)))


@dataclass(frozen=True)
class PointConfiguration:
    """Poisson points with i.i.d. marks on a sampling window."""

    window: Box
    points: np.ndarray  # (n, d)
    marks: np.ndarray  # (n,)

    @property
    def count(self) -> int:
        return self.points.shape[0]


def sample_poisson_points(
    window: Box, intensity: float, marks: MarkDistribution, stream: RngStream
) -> PointConfiguration:
    """Homogeneous Poisson sample of the given intensity with i.i.d. marks."""
    if intensity < 0:
        raise ValueError(f"intensity must be nonnegative, got {intensity}")
    gen = stream.generator()
    n = int(gen.poisson(intensity * window.volume)) if intensity > 0 else 0
    lo = np.asarray(window.lo)
    hi = np.asarray(window.hi)
    pts = lo + gen.random((n, window.dim)) * (hi - lo)
    mk = marks.sample(gen, n)
    return PointConfiguration(window=window, points=pts, marks=mk)
