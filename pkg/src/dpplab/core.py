"""Windows, point configurations, counting measures and seeded random streams."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SIMPLE_TOL = 1e-12


class ContractViolation(ValueError):
    """Input violates an operation's precondition (bad input, not bad math)."""


class NumericalContractError(ArithmeticError):
    """Two routes that must agree do not, or an iteration failed to converge."""


def _as_vector(v, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(v, dtype=float))
    if arr.ndim != 1:
        raise ContractViolation(f"{name} must be a vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class Window:
    """Axis-aligned box ``[lo, hi)`` in R^d."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = _as_vector(self.lo, "lo")
        hi = _as_vector(self.hi, "hi")
        if lo.shape != hi.shape:
            raise ContractViolation(f"lo and hi differ in length: {lo.size} vs {hi.size}")
        if not np.all(lo < hi):
            raise ContractViolation(f"window needs lo < hi on every axis, got lo={lo}, hi={hi}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def interval(cls, a: float, b: float) -> "Window":
        return cls([a], [b])

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def lengths(self) -> np.ndarray:
        return self.hi - self.lo

    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def contains(self, points) -> np.ndarray:
        """Boolean mask of points inside the half-open box."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        return np.all((pts >= self.lo) & (pts < self.hi), axis=1)

    def contains_closed(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=1)

    def is_subset_of(self, other: "Window") -> bool:
        return bool(np.all(self.lo >= other.lo) and np.all(self.hi <= other.hi))

    def intersects(self, other: "Window") -> bool:
        return bool(np.all(np.maximum(self.lo, other.lo) < np.minimum(self.hi, other.hi)))

    def __eq__(self, other):
        if not isinstance(other, Window):
            return NotImplemented
        return np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    def __hash__(self):
        return hash((tuple(self.lo), tuple(self.hi)))

    def __repr__(self):
        return f"Window(lo={self.lo.tolist()}, hi={self.hi.tolist()})"

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Window":
        return cls(d["lo"], d["hi"])


def partition_complement(window: Window, boxes: Sequence[Window]) -> list[Window]:
    """Cells covering ``window`` minus the union of ``boxes``.

    The cells come from the grid cut by every box face, so each cell lies
    either inside one box or outside all of them.
    """
    cuts = []
    for k in range(window.dim):
        edges = {window.lo[k], window.hi[k]}
        for b in boxes:
            edges.update(np.clip([b.lo[k], b.hi[k]], window.lo[k], window.hi[k]))
        cuts.append(np.array(sorted(edges)))
    cells = []
    for idx in np.ndindex(*[len(c) - 1 for c in cuts]):
        lo = np.array([cuts[k][i] for k, i in enumerate(idx)])
        hi = np.array([cuts[k][i + 1] for k, i in enumerate(idx)])
        if np.any(hi <= lo):
            continue
        centre = 0.5 * (lo + hi)
        if not any(b.contains(centre)[0] for b in boxes):
            cells.append(Window(lo, hi))
    return cells


@dataclass(frozen=True, eq=False)
class PointConfiguration:
    """Finite ordered list of points in R^d (a realization of a point process)."""

    points: np.ndarray
    dim: int = field(default=-1)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        dim = self.dim
        if pts.size == 0:
            if dim < 1:
                raise ContractViolation("empty configuration needs an explicit dim")
            pts = pts.reshape(0, dim)
        else:
            if pts.ndim == 1:
                pts = pts.reshape(-1, 1) if dim in (-1, 1) else pts.reshape(-1, dim)
            if dim == -1:
                dim = pts.shape[1]
            if pts.ndim != 2 or pts.shape[1] != dim:
                raise ContractViolation(f"every point must have length {dim}, got shape {pts.shape}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "dim", int(dim))

    @classmethod
    def empty(cls, dim: int = 1) -> "PointConfiguration":
        return cls(np.empty((0, dim)), dim=dim)

    def __len__(self) -> int:
        return self.points.shape[0]

    def __iter__(self):
        return iter(self.points)

    def __eq__(self, other):
        if not isinstance(other, PointConfiguration):
            return NotImplemented
        return self.dim == other.dim and np.array_equal(self.points, other.points)

    def count(self, box: Window) -> int:
        return count(self, box)

    def simple(self, tol: float = SIMPLE_TOL) -> bool:
        """True when no two points coincide within ``tol``."""
        n = len(self)
        if n < 2:
            return True
        diff = self.points[:, None, :] - self.points[None, :, :]
        dist = np.max(np.abs(diff), axis=-1)
        dist[np.diag_indices(n)] = np.inf
        return bool(np.min(dist) > tol)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"x{k + 1}" for k in range(self.dim)])
        for p in self.points:
            writer.writerow([repr(float(v)) for v in p])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "PointConfiguration":
        rows = list(csv.reader(io.StringIO(text)))
        header = rows[0]
        dim = len(header)
        if header != [f"x{k + 1}" for k in range(dim)]:
            raise ContractViolation(f"unexpected CSV header {header}")
        data = [[float(v) for v in r] for r in rows[1:] if r]
        return cls(np.array(data, dtype=float).reshape(-1, dim), dim=dim)

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path: str | Path) -> "PointConfiguration":
        return cls.from_csv(Path(path).read_text())


def count(config: PointConfiguration, box: Window) -> int:
    """Number of points of ``config`` in the half-open box."""
    if box.dim != config.dim:
        raise ContractViolation(f"box dim {box.dim} != configuration dim {config.dim}")
    if len(config) == 0:
        return 0
    return int(np.count_nonzero(box.contains(config.points)))


def factorial_power(x: float, r: int) -> float:
    """x(x-1)...(x-r+1) when r <= x, else 0; r = 0 gives 1."""
    if r < 0:
        raise ContractViolation("r must be nonnegative")
    if r == 0:
        return 1.0
    if r > x:
        return 0.0
    out = 1.0
    for i in range(r):
        out *= x - i
    return out


class RandomStream:
    """Seeded PCG64 stream; ``split`` hands out independent children."""

    def __init__(self, seed: int | np.random.SeedSequence = 0):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
            self.seed = int(seed.entropy) if isinstance(seed.entropy, int) else 0
        else:
            if seed < 0 or seed >= 2**64:
                raise ContractViolation("seed must be an unsigned 64-bit integer")
            self.seed = int(seed)
            self._seq = np.random.SeedSequence(self.seed)
        self.generator = np.random.Generator(np.random.PCG64(self._seq))

    def split(self, n: int) -> list["RandomStream"]:
        return [RandomStream(s) for s in self._seq.spawn(n)]

    def random(self, size=None):
        return self.generator.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def __repr__(self):
        return f"RandomStream(seed={self.seed})"


def as_points(points, dim: int | None = None) -> np.ndarray:
    """Coerce a point, list of points or configuration to an (n, d) array."""
    if isinstance(points, PointConfiguration):
        return points.points
    arr = np.asarray(points, dtype=float)
    if dim is None:
        dim = 1 if arr.ndim <= 1 else arr.shape[-1]
    return arr.reshape(-1, dim)


def ensure_windows(boxes: Iterable) -> list[Window]:
    return [b if isinstance(b, Window) else Window(*b) for b in boxes]
