"""Finite point sets in R^d, the brick poset and conical partitions."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class Brick:
    """Half-open integer box ``[n_1, m_1) x ... x [n_d, m_d)``.

    The empty brick is represented by ``lower is None`` and is shared by all
    dimensions; use :data:`EMPTY`.
    """

    lower: tuple[int, ...] | None
    upper: tuple[int, ...] | None

    def __post_init__(self) -> None:
        if (self.lower is None) != (self.upper is None):
            raise ValueError("both corners must be given, or neither")
        if self.lower is not None:
            if len(self.lower) != len(self.upper):
                raise ValueError("corner dimensions differ")
            if any(n >= m for n, m in zip(self.lower, self.upper)):
                raise ValueError(f"degenerate brick {self.lower} -> {self.upper}")

    @property
    def is_empty(self) -> bool:
        return self.lower is None

    @property
    def dim(self) -> int | None:
        return None if self.lower is None else len(self.lower)

    def contains_point(self, x: Sequence[float]) -> bool:
        if self.lower is None:
            return False
        return all(n <= xi < m for n, xi, m in zip(self.lower, x, self.upper))

    def contains(self, other: "Brick") -> bool:
        """Inclusion order of the brick poset (the empty brick is the bottom)."""
        if other.is_empty:
            return True
        if self.is_empty:
            return False
        _check_same_dim(self, other)
        return all(
            n <= n2 and m2 <= m
            for n, m, n2, m2 in zip(self.lower, self.upper, other.lower, other.upper)
        )

    def diameter(self) -> float:
        if self.lower is None:
            return 0.0
        return math.sqrt(sum((m - n) ** 2 for n, m in zip(self.lower, self.upper)))

    def sort_key(self) -> tuple:
        if self.lower is None:
            return (0,)
        return (1, self.lower, self.upper)

    def __str__(self) -> str:
        if self.lower is None:
            return "empty"
        if not self.lower:
            return "point"
        return "x".join(f"[{n},{m})" for n, m in zip(self.lower, self.upper))

    @classmethod
    def parse(cls, text: str) -> "Brick":
        text = text.strip()
        if text == "empty":
            return EMPTY
        if text == "point":
            return cls((), ())
        lower, upper = [], []
        for part in text.split("x"):
            part = part.strip()
            if not (part.startswith("[") and part.endswith(")")):
                raise ValueError(f"bad brick axis {part!r}")
            n, m = part[1:-1].split(",")
            lower.append(int(n))
            upper.append(int(m))
        return cls(tuple(lower), tuple(upper))


EMPTY = Brick(None, None)


def _check_same_dim(a: Brick, b: Brick) -> None:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")


def brick_of_point(x: Sequence[float]) -> Brick:
    """Unit brick containing ``x``; integer coordinates go to the upper brick."""
    lower = tuple(int(math.floor(xi)) for xi in x)
    return Brick(lower, tuple(n + 1 for n in lower))


def enclosing_brick(points: Iterable[Sequence[float]]) -> Brick:
    """Smallest brick containing every point (empty for no points)."""
    pts = np.asarray(list(points), dtype=float)
    if pts.size == 0 and pts.ndim < 2:
        return EMPTY
    lo = np.floor(pts.min(axis=0)).astype(int)
    hi = np.floor(pts.max(axis=0)).astype(int) + 1
    return Brick(tuple(int(v) for v in lo), tuple(int(v) for v in hi))


def _mobius_1d(n1: int, m1: int, n: int, m: int) -> int:
    a, b = n1 - n, m - m1
    if a in (0, 1) and b in (0, 1):
        return -1 if (a + b) % 2 else 1
    return 0


def _empty_axis_factor(length: int) -> int:
    # Sum of the 1d Moebius values over non-empty sub-intervals.
    if length == 1:
        return 1
    if length == 2:
        return -1
    return 0


def mobius(y1: Brick, y2: Brick) -> int:
    """Moebius function of the brick poset (with the empty brick at the bottom)."""
    if not y1.is_empty and not y2.is_empty:
        _check_same_dim(y1, y2)
    if y2.is_empty:
        return 1 if y1.is_empty else 0
    if y1.is_empty:
        return -math.prod(_empty_axis_factor(m - n) for n, m in zip(y2.lower, y2.upper))
    if not y2.contains(y1):
        return 0
    return math.prod(
        _mobius_1d(n1, m1, n, m)
        for n1, m1, n, m in zip(y1.lower, y1.upper, y2.lower, y2.upper)
    )


def mobius_support(y: Brick) -> list[tuple[Brick, int]]:
    """Sub-bricks ``Z`` with ``mobius(Z, y) != 0`` together with the coefficient."""
    if y.is_empty:
        raise ValueError("mobius_support needs a non-empty brick")
    per_axis = []
    for n, m in zip(y.lower, y.upper):
        options = []
        for a, b in ((0, 0), (1, 0), (0, 1), (1, 1)):
            if n + a < m - b:
                options.append((n + a, m - b, -1 if (a + b) % 2 else 1))
        per_axis.append(options)
    out: list[tuple[Brick, int]] = []
    for combo in itertools.product(*per_axis):
        coeff = math.prod(c for _, _, c in combo)
        out.append((Brick(tuple(c[0] for c in combo), tuple(c[1] for c in combo)), coeff))
    empty_coeff = mobius(EMPTY, y)
    if empty_coeff:
        out.append((EMPTY, empty_coeff))
    return out


def sub_bricks(w: Brick) -> list[Brick]:
    """All non-empty sub-bricks of ``w`` in a fixed order."""
    axes = [
        [(a, b) for a in range(n, m) for b in range(a + 1, m + 1)]
        for n, m in zip(w.lower, w.upper)
    ]
    return [
        Brick(tuple(c[0] for c in combo), tuple(c[1] for c in combo))
        for combo in itertools.product(*axes)
    ]


@dataclass(frozen=True)
class Lattice:
    """A finite set of labelled sites in R^d with on-site dimensions."""

    dimension: int
    site_ids: tuple[int, ...]
    coords: tuple[tuple[float, ...], ...]
    onsite_dims: tuple[int, ...]
    brick_covering: bool = False

    def __post_init__(self) -> None:
        if len(self.site_ids) != len(self.coords) or len(self.site_ids) != len(self.onsite_dims):
            raise ValueError("site ids, coordinates and dimensions must align")
        if len(set(self.site_ids)) != len(self.site_ids):
            raise ValueError("duplicate site id")
        if any(len(c) != self.dimension for c in self.coords):
            raise ValueError("coordinate dimension mismatch")
        if len(set(self.coords)) != len(self.coords):
            raise ValueError("coordinates must be distinct")
        if any(d < 2 for d in self.onsite_dims):
            raise ValueError("on-site dimension must be at least 2")

    @classmethod
    def from_sites(
        cls,
        sites: Mapping[int, Sequence[float]] | Sequence[tuple[int, Sequence[float]]],
        dimension: int | None = None,
        onsite_dim: int | Mapping[int, int] = 2,
        brick_covering: bool = False,
    ) -> "Lattice":
        items = list(sites.items()) if isinstance(sites, Mapping) else list(sites)
        ids = tuple(int(i) for i, _ in items)
        coords = tuple(tuple(float(v) for v in c) for _, c in items)
        if dimension is None:
            dimension = len(coords[0]) if coords else 0
        if isinstance(onsite_dim, Mapping):
            dims = tuple(int(onsite_dim.get(i, 2)) for i in ids)
        else:
            dims = (int(onsite_dim),) * len(ids)
        return cls(dimension, ids, coords, dims, brick_covering)

    @classmethod
    def chain(cls, n: int, offset: float = 0.0, onsite_dim: int = 2) -> "Lattice":
        """Sites ``0..n-1`` at ``x = j + offset``."""
        return cls.from_sites([(j, (j + offset,)) for j in range(n)], 1, onsite_dim, True)

    @classmethod
    def grid(cls, nx: int, ny: int, offset: float = 0.5, onsite_dim: int = 2) -> "Lattice":
        """Sites at ``(x + offset, y + offset)``, numbered row by row."""
        sites = [(y * nx + x, (x + offset, y + offset)) for y in range(ny) for x in range(nx)]
        return cls.from_sites(sites, 2, onsite_dim, True)

    @classmethod
    def point(cls, onsite_dim: int = 2) -> "Lattice":
        """A single site in R^0."""
        return cls(0, (0,), ((),), (onsite_dim,), True)

    @cached_property
    def index(self) -> dict[int, int]:
        return {s: i for i, s in enumerate(self.site_ids)}

    @cached_property
    def coord_of(self) -> dict[int, tuple[float, ...]]:
        return dict(zip(self.site_ids, self.coords))

    @cached_property
    def dim_of(self) -> dict[int, int]:
        return dict(zip(self.site_ids, self.onsite_dims))

    @property
    def n_sites(self) -> int:
        return len(self.site_ids)

    @cached_property
    def min_distance(self) -> float:
        pts = np.asarray(self.coords, dtype=float).reshape(self.n_sites, self.dimension)
        if self.n_sites < 2:
            return math.inf
        diff = pts[:, None, :] - pts[None, :, :]
        dist = np.sqrt((diff**2).sum(-1))
        return float(dist[~np.eye(self.n_sites, dtype=bool)].min())

    def distance(self, a: int, b: int) -> float:
        return math.dist(self.coord_of[a], self.coord_of[b])

    def brick_of_sites(self, sites: Iterable[int]) -> Brick:
        sites = list(sites)
        if not sites:
            return EMPTY
        return enclosing_brick(self.coord_of[s] for s in sites)

    def sites_in(self, brick: Brick) -> tuple[int, ...]:
        if brick.is_empty:
            return ()
        return tuple(s for s in self.site_ids if brick.contains_point(self.coord_of[s]))

    def hull(self) -> Brick:
        return self.brick_of_sites(self.site_ids)

    def with_coords(self, coords: Mapping[int, Sequence[float]]) -> "Lattice":
        new = tuple(tuple(float(v) for v in coords.get(s, c)) for s, c in zip(self.site_ids, self.coords))
        return Lattice(self.dimension, self.site_ids, new, self.onsite_dims, self.brick_covering)


@dataclass(frozen=True)
class ConicalPartition:
    """Pure-cone partition of R^d (d <= 2) into d + 1 regions at an apex.

    ``sectors`` lists the angular sectors for d = 2 as (start, end) pairs in
    radians, cyclically ordered.  ``orientation = -1`` reverses the cyclic
    order of regions.  ``overrides`` reassigns individual sites.
    """

    dimension: int
    apex: tuple[float, ...] = ()
    sectors: tuple[tuple[float, float], ...] = ()
    orientation: int = 1
    overrides: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self) -> None:
        if self.dimension not in (0, 1, 2):
            raise ValueError("conical partitions are available for d <= 2")
        if len(self.apex) != self.dimension:
            raise ValueError("apex dimension mismatch")
        if self.orientation not in (1, -1):
            raise ValueError("orientation must be +1 or -1")
        if self.dimension == 2:
            if len(self.sectors) != 3:
                raise ValueError("d = 2 partitions have three sectors")
            total = sum(e - s for s, e in self.sectors)
            if not math.isclose(total, 2 * math.pi, rel_tol=0, abs_tol=1e-12):
                raise ValueError("sector angles must sum to 2 pi")
            for (_, e), (s, _) in zip(self.sectors, self.sectors[1:] + self.sectors[:1]):
                if not math.isclose(math.remainder(e - s, 2 * math.pi), 0.0, abs_tol=1e-12):
                    raise ValueError("sectors must be contiguous")

    @classmethod
    def point(cls) -> "ConicalPartition":
        return cls(0)

    @classmethod
    def line(cls, apex: float, orientation: int = 1) -> "ConicalPartition":
        return cls(1, (float(apex),), orientation=orientation)

    @classmethod
    def plane(
        cls,
        apex: Sequence[float],
        start: float = 0.0,
        angles: Sequence[float] = (2 * math.pi / 3,) * 3,
        orientation: int = 1,
    ) -> "ConicalPartition":
        sectors, a = [], float(start)
        for width in angles:
            sectors.append((a, a + float(width)))
            a += float(width)
        return cls(2, tuple(float(v) for v in apex), tuple(sectors), orientation)

    def flipped(self) -> "ConicalPartition":
        return ConicalPartition(self.dimension, self.apex, self.sectors, -self.orientation, self.overrides)

    def with_overrides(self, overrides: Mapping[int, int]) -> "ConicalPartition":
        merged = dict(self.overrides)
        merged.update(overrides)
        return ConicalPartition(
            self.dimension, self.apex, self.sectors, self.orientation, tuple(sorted(merged.items()))
        )

    def _raw_region(self, x: Sequence[float]) -> int:
        if self.dimension == 0:
            return 0
        if self.dimension == 1:
            return 0 if x[0] < self.apex[0] else 1
        theta = math.atan2(x[1] - self.apex[1], x[0] - self.apex[0])
        for a, (s, e) in enumerate(self.sectors):
            offset = (theta - s) % (2 * math.pi)
            if offset < e - s:
                return a
        raise AssertionError("sectors do not cover the circle")

    def region_of(self, x: Sequence[float]) -> int:
        a = self._raw_region(x)
        if self.orientation == -1 and self.dimension >= 1:
            a = (-a) % (self.dimension + 1) if self.dimension == 2 else 1 - a
        return a

    def regions(self, lattice: Lattice) -> tuple[frozenset[int], ...]:
        """Site sets ``(A_0, ..., A_d)`` for the lattice, overrides applied."""
        over = dict(self.overrides)
        buckets: list[set[int]] = [set() for _ in range(self.dimension + 1)]
        for s in lattice.site_ids:
            a = over.get(s)
            if a is None:
                a = self.region_of(lattice.coord_of[s])
            elif self.orientation == -1 and self.dimension >= 1:
                a = (-a) % 3 if self.dimension == 2 else 1 - a
            buckets[a].add(s)
        return tuple(frozenset(b) for b in buckets)
