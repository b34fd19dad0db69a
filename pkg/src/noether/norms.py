"""Localization profiles, the cev/br norm families and reproducing functions."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .lattice import Brick, Lattice
from .pauli import LocalOperator, auto_norm, operator_norm


@dataclass(frozen=True)
class LocalizationProfile:
    """Values ``||A - A|_{B_j(r)}||`` at integer radii; ``B_j(r)`` is the open ball."""

    anchor: int
    radii: tuple[int, ...]
    values: tuple[float, ...]
    mode: str

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["r", "value", "mode"])
        for r, v in zip(self.radii, self.values):
            writer.writerow([r, repr(v), self.mode])
        return buf.getvalue()


def ball_sites(lattice: Lattice, j: int, r: float) -> list[int]:
    x = lattice.coord_of[j]
    return [s for s in lattice.site_ids if math.dist(lattice.coord_of[s], x) < r]


def _reach(a: LocalOperator, lattice: Lattice, j: int) -> float:
    return max((lattice.distance(j, s) for s in a.support), default=0.0)


def profile(a: LocalOperator, j: int, lattice: Lattice, mode: str | None = None) -> LocalizationProfile:
    """Sample the conditional-expectation profile at ``r = 0, 1, ...`` until it vanishes."""
    if mode is None:
        _, mode = auto_norm(a)
    r_max = int(math.floor(_reach(a, lattice, j))) + 1
    radii = tuple(range(r_max + 1))
    values = []
    for r in radii:
        diff = a - a.restrict(ball_sites(lattice, j, r))
        values.append(operator_norm(diff, mode))
    return LocalizationProfile(j, radii, tuple(values), mode)


def norm_cev(a: LocalOperator, j: int, alpha: int, lattice: Lattice, mode: str | None = None) -> float:
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    prof = profile(a, j, lattice, mode)
    return max((1 + r) ** alpha * v for r, v in zip(prof.radii, prof.values))


def brick_diameter_with_point(y: Brick, x: Sequence[float]) -> float:
    """Diameter of ``{x}`` union the closure of ``y``."""
    lo = np.asarray(y.lower, dtype=float)
    hi = np.asarray(y.upper, dtype=float)
    p = np.asarray(x, dtype=float)
    far = np.maximum(np.abs(p - lo), np.abs(p - hi))
    return max(float(np.linalg.norm(hi - lo)), float(np.linalg.norm(far)))


def norm_br(a: LocalOperator, j: int, alpha: int, lattice: Lattice, mode: str | None = None) -> float:
    x = lattice.coord_of[j]
    best = 0.0
    for y, comp in a.brick_components(lattice).items():
        if y.is_empty:
            continue
        value = operator_norm(comp, mode) if mode else auto_norm(comp)[0]
        best = max(best, (1 + brick_diameter_with_point(y, x)) ** alpha * value)
    return best


def chain_norm_cev(chain, alpha: int, mode: str | None = None) -> float:
    """``sup`` over entries and anchors of the cev norm of a sparse chain."""
    best = 0.0
    for t, v in chain.items():
        for j in t:
            best = max(best, norm_cev(v, j, alpha, chain.lattice, mode))
    return best


def chain_norm_br(chain, alpha: int, mode: str | None = None) -> float:
    best = 0.0
    for t, v in chain.items():
        for j in t:
            best = max(best, norm_br(v, j, alpha, chain.lattice, mode))
    return best


# decay functions -----------------------------------------------------------

@dataclass(frozen=True)
class DecayFunction:
    """Non-increasing non-negative function of ``r >= 0``."""

    fn: Callable[[float], float]
    name: str = "f"

    def __call__(self, r: float) -> float:
        return float(self.fn(float(r)))

    def sample(self, radii: Sequence[float]) -> np.ndarray:
        return np.array([self(r) for r in radii])

    def weighted_sup(self, alpha: float, r_max: float, n: int = 4001) -> float:
        """``||f||_alpha = sup (1 + r)^alpha f(r)`` on a sample grid of ``[0, r_max]``."""
        grid = np.linspace(0.0, r_max, n)
        return float(max((1 + r) ** alpha * self(r) for r in grid))


def reproducing_constant(f: DecayFunction, lattice: Lattice) -> float:
    """Brute-force ``C_f = sup_{j,k} sum_l f(|j-l|) f(|l-k|) / f(|j-k|)``."""
    pts = np.asarray(lattice.coords, dtype=float).reshape(lattice.n_sites, lattice.dimension)
    dist = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    fv = np.vectorize(f.__call__)(dist)
    if np.any(fv <= 0):
        return math.inf
    return float(((fv @ fv) / fv).max())


def make_reproducing(f: DecayFunction, lattice: Lattice, r_max: float | None = None, grid: int = 2001) -> DecayFunction:
    """Upper bound of ``f`` that is reproducing on ``lattice``.

    First ``f`` is dominated by ``f'(r) = exp(-r inf_{s<=r} h(s)/s)`` with
    ``h = -log(f / (2 f(0)))``, which satisfies ``f'(r) f'(s) <= A f'(r+s)``;
    then ``f~(r) = B sqrt(f'(r)) / (1+r)^{d+1}`` with ``B^2 = ||f'||_{2d+2}``.
    """
    d = lattice.dimension
    if r_max is None:
        pts = np.asarray(lattice.coords, dtype=float).reshape(lattice.n_sites, d)
        r_max = float(np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1)).max()) + 1.0
    f0 = f(0.0)
    if f0 <= 0:
        raise ValueError("f(0) must be positive")
    scale = 2.0 * f0
    s_grid = np.linspace(r_max / (grid - 1), r_max, grid - 1)
    h = np.array([-math.log(max(f(s) / scale, 1e-300)) for s in s_grid])
    running = np.minimum.accumulate(h / s_grid)

    def f_weak(r: float) -> float:
        if r <= 0:
            return scale
        k = int(np.searchsorted(s_grid, r, side="right")) - 1
        slope = running[k] if k >= 0 else math.inf
        slope = min(slope, -math.log(max(f(r) / scale, 1e-300)) / r)
        return scale * math.exp(-r * slope)

    weak = DecayFunction(f_weak, f"{f.name}'")
    b_sq = weak.weighted_sup(2 * d + 2, r_max)
    b = math.sqrt(b_sq)

    def f_tilde(r: float) -> float:
        return b * math.sqrt(f_weak(r)) / (1 + r) ** (d + 1)

    return DecayFunction(f_tilde, f"{f.name}~")
