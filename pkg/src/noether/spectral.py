"""Exact diagonalization, frequency-domain spectral filters and time evolution.

A self-adjoint ``H_op`` generates the derivation ``A -> [i H_op, A]``.  In
its eigenbasis that derivation multiplies ``A_mn`` by ``i (E_m - E_n)``, so a
filter with response ``f`` multiplies ``A_mn`` by ``f(E_m - E_n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Sequence, Union

import numpy as np

from .dense import DenseOperator, DenseSpace
from .lattice import Lattice
from .pauli import LocalOperator

Operator = Union[LocalOperator, DenseOperator]

DEGENERACY_TOL = 1e-10


class DegenerateGroundState(ValueError):
    """The lowest eigenvalue is degenerate, so no gap is defined."""


class ConvergenceError(RuntimeError):
    """Step halving did not reach the requested tolerance."""


# responses ---------------------------------------------------------------

def bump_response(omega: np.ndarray, cutoff: float) -> np.ndarray:
    """``exp(1 - 1/(1 - (w/c)^2))`` inside ``|w| < c``, zero outside; equals 1 at 0."""
    x = np.asarray(omega, dtype=float) / cutoff
    out = np.zeros_like(x)
    inside = np.abs(x) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - x[inside] ** 2))
    return out


def cosine_response(omega: np.ndarray, cutoff: float) -> np.ndarray:
    """``cos^2(pi w / 2c)`` inside ``|w| < c``; continuous but only once differentiable."""
    x = np.asarray(omega, dtype=float) / cutoff
    return np.where(np.abs(x) < 1, np.cos(0.5 * np.pi * x) ** 2, 0.0)


PROFILES: dict[str, Callable[[np.ndarray, float], np.ndarray]] = {"bump": bump_response, "cosine": cosine_response}


@dataclass(frozen=True)
class FilterResponse:
    """Even pass-band response ``w`` and the odd companion ``W = (1 - w) / (i w)``."""

    cutoff: float
    profile: str = "bump"

    def __post_init__(self) -> None:
        if self.profile not in PROFILES:
            raise ValueError(f"unknown bump profile {self.profile!r}; choose from {sorted(PROFILES)}")
        if not self.cutoff > 0:
            raise ValueError("cutoff must be positive")

    def w(self, omega: np.ndarray) -> np.ndarray:
        return PROFILES[self.profile](omega, self.cutoff)

    def W(self, omega: np.ndarray) -> np.ndarray:
        omega = np.asarray(omega, dtype=float)
        out = np.zeros(omega.shape, dtype=complex)
        nz = omega != 0
        out[nz] = (1.0 - self.w(omega[nz])) / (1j * omega[nz])
        return out


# context -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpectralContext:
    """Full eigendecomposition of ``H_op`` plus filter data."""

    space: DenseSpace
    hamiltonian: np.ndarray
    energies: np.ndarray
    vectors: np.ndarray
    delta_prime: float
    profile: str = "bump"
    sectors: tuple[tuple[np.ndarray, np.ndarray], ...] | None = None

    @property
    def lattice(self) -> Lattice:
        return self.space.lattice

    @property
    def gap(self) -> float:
        return float(self.energies[1] - self.energies[0])

    @property
    def ground_index(self) -> int:
        return 0

    @property
    def psi(self) -> np.ndarray:
        return self.vectors[:, 0]

    @cached_property
    def response(self) -> FilterResponse:
        return FilterResponse(self.delta_prime, self.profile)

    @cached_property
    def bohr(self) -> np.ndarray:
        """``E_m - E_n``."""
        return self.energies[:, None] - self.energies[None, :]

    @cached_property
    def state_coeffs(self) -> np.ndarray:
        return self.space.state_coefficients(self.psi)

    @cached_property
    def ground_projector(self) -> np.ndarray:
        return np.outer(self.psi, self.psi.conj())

    def with_delta_prime(self, delta_prime: float) -> "SpectralContext":
        check_delta_prime(delta_prime, self.gap)
        return SpectralContext(self.space, self.hamiltonian, self.energies, self.vectors, delta_prime, self.profile, self.sectors)

    @cached_property
    def _sector_data(self) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray, np.ndarray]]]:
        """Basis-state sector labels and ``(basis indices, energies, vectors)`` per sector."""
        label = np.empty(self.hamiltonian.shape[0], dtype=int)
        blocks = []
        for k, (idx, pos) in enumerate(self.sectors or ()):
            label[idx] = k
            blocks.append((idx, self.energies[pos], self.vectors[np.ix_(idx, pos)]))
        return label, blocks

    @cached_property
    def _derivative_weights(self) -> dict:
        return {}

    @cached_property
    def _off_sector_mask(self) -> np.ndarray:
        label = self._sector_data[0]
        return label[:, None] != label[None, :]

    def is_sector_diagonal(self, m: np.ndarray, tol: float = 1e-14) -> bool:
        if not self.sectors:
            return False
        off = np.abs(m[self._off_sector_mask])
        return off.size == 0 or float(off.max()) <= tol * max(1.0, float(np.abs(m).max()))

    def apply_response(self, a: Operator, response: Callable[[np.ndarray], np.ndarray]) -> DenseOperator:
        """``V (f(E_m - E_n) * V^* a V) V^*``, sector by sector when ``a`` conserves the charge."""
        m = self.dense(a).matrix
        if self.is_sector_diagonal(m):
            out = np.zeros_like(m)
            for idx, e, v in self._sector_data[1]:
                block = np.ix_(idx, idx)
                inner = v.conj().T @ m[block] @ v
                out[block] = v @ (response(e[:, None] - e[None, :]) * inner) @ v.conj().T
            return DenseOperator(out, self.space)
        return self.from_eigenbasis(response(self.bohr) * self.to_eigenbasis(m))

    def orthonormality_residual(self) -> float:
        v = self.vectors
        return float(np.abs(v.conj().T @ v - np.eye(v.shape[1])).max())

    def reconstruction_residual(self) -> float:
        v = self.vectors
        return float(np.abs(v @ np.diag(self.energies) @ v.conj().T - self.hamiltonian).max())

    def dense(self, a: Operator) -> DenseOperator:
        return self.space.realize(a)

    def to_eigenbasis(self, a: Operator | np.ndarray) -> np.ndarray:
        v = self.vectors
        m = a if isinstance(a, np.ndarray) else self.dense(a).matrix
        return v.conj().T @ m @ v

    def from_eigenbasis(self, m: np.ndarray) -> DenseOperator:
        v = self.vectors
        return DenseOperator(v @ m @ v.conj().T, self.space)

    def commutator(self, a: Operator, b: Operator) -> DenseOperator:
        """``[a, b]``, blockwise when both operators conserve the charge."""
        ma, mb = self.dense(a).matrix, self.dense(b).matrix
        if self.is_sector_diagonal(ma) and self.is_sector_diagonal(mb):
            out = np.zeros_like(ma)
            for idx, _, _ in self._sector_data[1]:
                block = np.ix_(idx, idx)
                x, y = ma[block], mb[block]
                out[block] = x @ y - y @ x
            return DenseOperator(out, self.space)
        return DenseOperator(ma @ mb - mb @ ma, self.space)

    def expectation(self, a: Operator) -> complex:
        return self.dense(a).expectation(self.psi)

    def brick_expectations(self, a: Operator) -> dict:
        """``{Y: <a^Y>_psi}`` for non-empty bricks with a nonzero value."""
        vals = self.dense(a).brick_expectations(self.state_coeffs)
        bricks = self.space.bricks
        return {bricks[i]: complex(vals[i]) for i in np.nonzero(vals)[0] if not bricks[i].is_empty}

    def derivation(self, a: Operator) -> DenseOperator:
        """``[i H_op, a]``."""
        m = self.dense(a).matrix
        h = self.hamiltonian
        return DenseOperator(1j * (h @ m - m @ h), self.space)


def check_delta_prime(delta_prime: float, gap: float) -> None:
    if gap <= 0:
        raise DegenerateGroundState("filters need a positive gap")
    if not 0 < delta_prime < gap:
        raise ValueError(f"filter parameter {delta_prime} must lie in (0, gap={gap})")


def diagonalize(
    h_op: LocalOperator | DenseOperator | np.ndarray,
    lattice: Lattice,
    gap_fraction: float = 0.5,
    profile: str = "bump",
    space: DenseSpace | None = None,
    conserved: np.ndarray | None = None,
) -> SpectralContext:
    """Diagonalize a self-adjoint Hamiltonian; ``delta_prime = gap_fraction * gap``.

    ``conserved`` lists the eigenvalues of a charge that is diagonal in the
    computational basis; the Hamiltonian is then diagonalized sector by sector
    and charge-neutral operators are filtered blockwise.
    """
    space = space if space is not None else DenseSpace(lattice)
    if isinstance(h_op, np.ndarray):
        mat = np.asarray(h_op, dtype=complex)
    else:
        mat = space.realize(h_op).matrix
    herm = float(np.abs(mat - mat.conj().T).max(initial=0.0))
    if herm > 1e-10:
        raise ValueError(f"Hamiltonian is not self-adjoint (residual {herm:.3e})")
    mat = 0.5 * (mat + mat.conj().T)
    if conserved is None:
        energies, vectors = np.linalg.eigh(mat)
        sectors = None
    else:
        energies, vectors, sectors = _sector_eigh(mat, np.asarray(conserved, dtype=float))
    if len(energies) < 2:
        raise DegenerateGroundState("one-dimensional Hilbert space has no gap")
    gap = float(energies[1] - energies[0])
    if gap <= DEGENERACY_TOL:
        raise DegenerateGroundState(f"ground state degenerate (splitting {gap:.3e})")
    if not 0 < gap_fraction < 1:
        raise ValueError("gap_fraction must lie in (0, 1)")
    # fix the phase of the ground vector so cached and fresh runs agree
    psi = vectors[:, 0]
    k = int(np.argmax(np.abs(psi)))
    vectors[:, 0] = psi * (abs(psi[k]) / psi[k])
    return SpectralContext(space, mat, energies, vectors, gap_fraction * gap, profile, sectors)


def _sector_eigh(mat: np.ndarray, charge: np.ndarray, tol: float = 1e-10):
    keys = np.round(charge, 9)
    mixing = np.abs(mat[keys[:, None] != keys[None, :]])
    if mixing.size and float(mixing.max()) > tol:
        raise ValueError(f"Hamiltonian does not conserve the charge (residual {float(mixing.max()):.3e})")
    groups = [np.nonzero(keys == k)[0] for k in np.unique(keys)]
    parts = []
    for idx in groups:
        e, v = np.linalg.eigh(mat[np.ix_(idx, idx)])
        parts.append((idx, e, v))
    energies = np.concatenate([e for _, e, _ in parts])
    order = np.argsort(energies, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    vectors = np.zeros_like(mat)
    sectors = []
    start = 0
    for idx, e, v in parts:
        pos = rank[start:start + len(e)]
        vectors[np.ix_(idx, pos)] = v
        sectors.append((idx, pos))
        start += len(e)
    return energies[order], vectors, tuple(sectors)


# filters and evolution ------------------------------------------------------

def filter_operator(a: Operator, ctx: SpectralContext, which: str = "w") -> DenseOperator:
    """Multiply eigenbasis matrix elements by ``w(E_m - E_n)`` or ``W(E_m - E_n)``."""
    if which == "w":
        fn = ctx.response.w
    elif which == "W":
        fn = ctx.response.W
    else:
        raise ValueError("which must be 'w' or 'W'")
    return ctx.apply_response(a, fn)


def _divided_differences(em: np.ndarray, e: np.ndarray, f: Callable[[np.ndarray], np.ndarray], scale: float, near: float = 1e-8):
    """Weights ``C1[m,k,n]`` and ``C2[m,k,n]`` of the first-order change of ``f(E_m - E_n) a_mn``.

    ``C1 = (f(E_m-E_n) - f(E_k-E_n)) / (E_m-E_k)`` and
    ``C2 = (f(E_m-E_k) - f(E_m-E_n)) / (E_k-E_n)``, with ``+-f'`` at coincident
    energies.  ``em`` holds the energies of the rows ``m`` wanted.
    """
    step = 1e-5 * scale
    mn = em[:, None, None] - e[None, None, :]
    kn = np.broadcast_to(e[None, :, None] - e[None, None, :], (len(em), len(e), len(e)))
    mk = np.broadcast_to(em[:, None, None] - e[None, :, None], kn.shape)
    f_mn = np.broadcast_to(f(mn), kn.shape)
    d = np.broadcast_to((f(mn + step) - f(mn - step)) / (2 * step), kn.shape)
    close1 = np.abs(mk) < near
    close2 = np.abs(kn) < near
    c1 = np.where(close1, d, (f_mn - f(kn)) / np.where(close1, 1.0, mk))
    c2 = np.where(close2, -d, (f(mk) - f_mn) / np.where(close2, 1.0, kn))
    return c1, c2


def filter_derivative(
    a: Operator, dh_op: np.ndarray, ctx: SpectralContext, which: str = "w", near: float = 1e-8
) -> DenseOperator:
    """First-order change of the filtered operator when ``H_op`` moves along ``dh_op``; ``a`` is held fixed."""
    fn = {"w": ctx.response.w, "W": ctx.response.W}.get(which)
    if fn is None:
        raise ValueError("which must be 'w' or 'W'")
    m = ctx.dense(a).matrix
    dh = np.asarray(dh_op, dtype=complex)
    if ctx.is_sector_diagonal(m) and ctx.is_sector_diagonal(dh):
        blocks = ctx._sector_data[1]
    else:
        blocks = [(np.arange(m.shape[0]), ctx.energies, ctx.vectors)]
    weights = ctx._derivative_weights.setdefault((which, near, len(blocks)), {})
    out = np.zeros_like(m)
    for b, (idx, e, v) in enumerate(blocks):
        block = np.ix_(idx, idx)
        x = v.conj().T @ m[block] @ v
        y = v.conj().T @ dh[block] @ v
        inner = np.zeros_like(x)
        rows = max(1, (1 << 21) // max(1, len(e) ** 2))
        for lo in range(0, len(e), rows):
            sl = slice(lo, lo + rows)
            c1, c2 = weights.get((b, lo)) or _divided_differences(e[sl], e, fn, ctx.delta_prime, near)
            if len(blocks) > 1:
                # sector blocks are small enough to keep
                weights[(b, lo)] = (c1, c2)
            inner[sl] = np.einsum("mk,kn,mkn->mn", y[sl], x, c1, optimize=False) + np.einsum(
                "mk,kn,mkn->mn", x[sl], y, c2, optimize=False
            )
        out[block] = v @ inner @ v.conj().T
    return DenseOperator(out, ctx.space)


def filter_with(a: Operator, ctx: SpectralContext, response: Callable[[np.ndarray], np.ndarray]) -> DenseOperator:
    """Filter with an arbitrary response function of the Bohr frequency."""
    return ctx.apply_response(a, response)


def heisenberg_evolve(a: Operator, t: float, ctx: SpectralContext) -> DenseOperator:
    """``e^{i H t} a e^{-i H t}``."""
    if t == 0:
        return ctx.dense(a)
    return ctx.apply_response(a, lambda omega: np.exp(1j * omega * t))


def _local_probes(ctx: SpectralContext, support: Iterable[int], reach: float = 2.0, max_sites: int = 2) -> list[LocalOperator]:
    lat = ctx.lattice
    supp = list(support)
    near = [s for s in lat.site_ids if not supp or min(lat.distance(s, x) for x in supp) <= reach]
    probes: list[LocalOperator] = []
    for s in near:
        for k in range(1, lat.dim_of[s] ** 2):
            probes.append(LocalOperator({((s, k),): 1.0}, {s: lat.dim_of[s]} if lat.dim_of[s] != 2 else {}))
    if max_sites >= 2:
        for i, s in enumerate(near):
            for u in near[i + 1 :]:
                if lat.distance(s, u) > reach:
                    continue
                for k in range(1, lat.dim_of[s] ** 2):
                    for m in range(1, lat.dim_of[u] ** 2):
                        dims = {x: lat.dim_of[x] for x in (s, u) if lat.dim_of[x] != 2}
                        probes.append(LocalOperator({((s, k), (u, m)): 1.0}, dims))
    return probes


def default_probes(a: Operator, ctx: SpectralContext) -> list[LocalOperator]:
    """Basis strings on at most two sites within distance 2 of the support of ``a``."""
    if isinstance(a, LocalOperator):
        supp = a.support
    else:
        supp = ctx.lattice.site_ids
    return _local_probes(ctx, supp)


def does_not_excite(a: Operator, ctx: SpectralContext, probes: Sequence[Operator] | None = None) -> float:
    """``max_B |<[a, B]>_psi|`` over the probes."""
    probes = default_probes(a, ctx) if probes is None else probes
    am = ctx.dense(a).matrix
    psi = ctx.psi
    left = psi.conj() @ am
    right = am @ psi
    worst = 0.0
    for b in probes:
        bm = ctx.dense(b).matrix
        val = left @ (bm @ psi) - (psi.conj() @ bm) @ right
        worst = max(worst, abs(val))
    return float(worst)


def excitation_leakage(a: Operator, ctx: SpectralContext) -> float:
    """``|(1-P) a P| + |P a (1-P)|``: zero exactly when ``a`` preserves the ground line."""
    am = ctx.dense(a).matrix
    psi = ctx.psi
    col = am @ psi
    col = col - psi * (psi.conj() @ col)
    row = psi.conj() @ am
    row = row - (row @ psi) * psi.conj()
    return float(np.linalg.norm(col) + np.linalg.norm(row))


# locally generated paths ------------------------------------------------------

@dataclass(frozen=True)
class LGPSchedule:
    """Generator ``s -> g(s)`` on ``[0, 1]``; ``G(s)`` acts as ``[g(s), .]``."""

    generator: Callable[[float], Operator]
    tolerance: float = 1e-10
    min_step: float = 1.0 / 4096
    initial_steps: int = 8


def _as_matrix(space: DenseSpace, op: Operator) -> np.ndarray:
    return space.realize(op).matrix


def _rk4_unitary(gen: Callable[[float], np.ndarray], steps: int, side: int, s_end: float = 1.0) -> np.ndarray:
    """Integrate ``U' = -g(s) U`` from 0 to ``s_end``."""
    u = np.eye(side, dtype=complex)
    h = s_end / steps
    for n in range(steps):
        s = n * h
        g0, g1, g2 = gen(s), gen(s + 0.5 * h), gen(s + h)
        k1 = -g0 @ u
        k2 = -g1 @ (u + 0.5 * h * k1)
        k3 = -g1 @ (u + 0.5 * h * k2)
        k4 = -g2 @ (u + h * k3)
        u = u + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return u


def lgp_unitary(schedule: LGPSchedule, space: DenseSpace, s_end: float = 1.0) -> np.ndarray:
    """Unitary ``U`` with ``alpha(A) = U^* A U``, refined by step halving."""
    cache: dict[float, np.ndarray] = {}

    def gen(s: float) -> np.ndarray:
        if s not in cache:
            cache[s] = _as_matrix(space, schedule.generator(s))
        return cache[s]

    steps = schedule.initial_steps
    prev = _rk4_unitary(gen, steps, space.side, s_end)
    while True:
        steps *= 2
        cur = _rk4_unitary(gen, steps, space.side, s_end)
        if float(np.abs(cur - prev).max()) <= schedule.tolerance:
            return cur
        if s_end / steps < schedule.min_step:
            raise ConvergenceError(f"no convergence at step {s_end / steps:.2e}")
        prev = cur


def lgp_evolve(a: Operator, schedule: LGPSchedule, space: DenseSpace) -> DenseOperator:
    """Endpoint ``alpha(1)(a)`` of ``d alpha(s)(a)/ds = alpha(s)(G(s)(a))``."""
    u = lgp_unitary(schedule, space)
    m = _as_matrix(space, a)
    return DenseOperator(u.conj().T @ m @ u, space)


def inverse_schedule(schedule: LGPSchedule, space: DenseSpace, resolution: int = 2048) -> LGPSchedule:
    """The inverse path, generated by ``s -> -alpha(s)(g(s))``.

    ``U(s)`` is integrated forward from the nearest already-computed point with
    step at most ``1 / resolution``.
    """
    raw = lambda x: _as_matrix(space, schedule.generator(x))
    known: dict[float, np.ndarray] = {0.0: np.eye(space.side, dtype=complex)}

    def unitary_at(s: float) -> np.ndarray:
        if s in known:
            return known[s]
        start = max(x for x in known if x <= s)
        span = s - start
        steps = max(1, int(math.ceil(span * resolution)))
        shifted = lambda x: raw(start + x)
        u = _rk4_unitary(shifted, steps, space.side, span) @ known[start]
        known[s] = u
        return u

    def gen(s: float) -> DenseOperator:
        u = unitary_at(s)
        return DenseOperator(-(u.conj().T @ raw(s) @ u), space)

    return LGPSchedule(gen, schedule.tolerance, schedule.min_step, schedule.initial_steps)


@dataclass(frozen=True)
class CircuitLayer:
    """Commuting gates ``(sites, unitary)`` applied together."""

    gates: tuple[tuple[tuple[int, ...], np.ndarray], ...]


def _embed_gate(space: DenseSpace, sites: Sequence[int], gate: np.ndarray) -> np.ndarray:
    """Full-space matrix of a gate acting on ``sites`` (in that order)."""
    n = space.n_sites
    pos = [space.order.index(s) for s in sites]
    dims = list(space.dims)
    k = len(pos)
    t = np.eye(space.side, dtype=complex).reshape(dims + dims)
    g = gate.reshape([dims[p] for p in pos] * 2)
    # contract gate columns with the row indices of the identity at positions pos
    t = np.tensordot(g, t, axes=(list(range(k, 2 * k)), pos))
    rest = [i for i in range(n) if i not in pos]
    order = [None] * n
    for i, p in enumerate(pos):
        order[p] = i
    for j, p in enumerate(rest):
        order[p] = k + j
    perm = order + list(range(n, 2 * n))
    return t.transpose(perm).reshape(space.side, space.side)


def circuit_unitary(layers: Sequence[CircuitLayer], space: DenseSpace) -> np.ndarray:
    """Product of layers in the Schroedinger picture, first layer applied first."""
    u = np.eye(space.side, dtype=complex)
    for layer in layers:
        lu = np.eye(space.side, dtype=complex)
        for sites, gate in layer.gates:
            lu = _embed_gate(space, sites, gate) @ lu
        u = lu @ u
    return u


def circuit_evolve(a: Operator, layers: Sequence[CircuitLayer], space: DenseSpace) -> DenseOperator:
    u = circuit_unitary(layers, space)
    m = _as_matrix(space, a)
    return DenseOperator(u.conj().T @ m @ u, space)


# Lieb-Robinson probe -------------------------------------------------------------

@dataclass(frozen=True)
class LRRow:
    t: float
    r: float
    norm: float


def lieb_robinson_probe(
    ctx: SpectralContext,
    a: LocalOperator,
    site: int,
    probe_label: str | int,
    times: Sequence[float],
    radii: Sequence[float] | None = None,
) -> list[LRRow]:
    """``max_{k: |k - site| = r} |[alpha_t(a), B_k]|`` for each ``(t, r)``."""
    lat = ctx.lattice
    by_r: dict[float, list[int]] = {}
    for k in lat.site_ids:
        r = round(lat.distance(site, k), 9)
        by_r.setdefault(r, []).append(k)
    rs = sorted(by_r) if radii is None else list(radii)
    probes = {k: ctx.dense(LocalOperator.single(k, probe_label)).matrix for k in lat.site_ids}
    rows: list[LRRow] = []
    for t in times:
        at = heisenberg_evolve(a, t, ctx).matrix
        for r in rs:
            worst = 0.0
            for k in by_r.get(round(r, 9), []):
                b = probes[k]
                worst = max(worst, float(np.linalg.norm(at @ b - b @ at, 2)))
            rows.append(LRRow(float(t), float(r), worst))
    return rows


def lr_slope(rows: Sequence[LRRow], t: float) -> float:
    """Least-squares slope of norm against r at fixed ``t``."""
    pts = [(row.r, row.norm) for row in rows if row.t == t]
    if len(pts) < 2:
        return 0.0
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])
