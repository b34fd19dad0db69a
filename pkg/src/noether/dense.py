"""Dense realization of operators on a whole finite lattice.

Spectral filters produce operators with support on every site, which a
sparse string map cannot handle at useful sizes.  :class:`DenseOperator`
mirrors the :class:`~noether.pauli.LocalOperator` interface (linear
structure, commutator, conditional expectation, brick components) on a
fixed :class:`DenseSpace`, so chains and derivations can carry either kind
of value.
"""

from __future__ import annotations

import math
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .lattice import EMPTY, Brick, Lattice
from .pauli import DENSE_CAP, PRUNE_TOL, DenseCapExceeded, LocalOperator, dense_realize, onsite_basis


def pauli_coefficients(matrix: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Coefficients ``c_nu = tr(E_nu M) / D`` as an array of shape ``(d_1^2, ..., d_N^2)``."""
    n = len(dims)
    side = math.prod(dims)
    if matrix.shape != (side, side):
        raise ValueError("matrix shape does not match dims")
    t = np.asarray(matrix, dtype=complex).reshape(tuple(dims) + tuple(dims))
    for i, d in enumerate(dims):
        # rows of sites i.. sit at axes 0..n-i-1, their columns at n-i..2(n-i)-1
        t = np.tensordot(t, onsite_basis(d), axes=([0, n - i], [2, 1])) / d
    return t


def from_coefficients(coeffs: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`pauli_coefficients`."""
    n = len(dims)
    t = np.asarray(coeffs, dtype=complex)
    for d in dims:
        t = np.tensordot(t, onsite_basis(d), axes=([0], [0]))
    perm = [2 * i for i in range(n)] + [2 * i + 1 for i in range(n)]
    side = math.prod(dims)
    return t.transpose(perm).reshape(side, side)


class DenseSpace:
    """Ordered site list of a lattice with precomputed brick bookkeeping."""

    def __init__(self, lattice: Lattice) -> None:
        self.lattice = lattice
        self.order = tuple(lattice.site_ids)
        self.dims = tuple(lattice.onsite_dims)
        self.side = math.prod(self.dims)
        if self.side > DENSE_CAP:
            raise DenseCapExceeded(f"Hilbert space side {self.side} exceeds cap {DENSE_CAP}")

    @property
    def n_sites(self) -> int:
        return len(self.order)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, DenseSpace) and other.lattice == self.lattice

    def __hash__(self) -> int:
        return hash(self.lattice)

    @cached_property
    def support_masks(self) -> np.ndarray:
        """Bitmask of non-identity sites for every coefficient index."""
        mask = np.zeros([d * d for d in self.dims], dtype=np.int64)
        for i, d in enumerate(self.dims):
            shape = [1] * self.n_sites
            shape[i] = d * d
            mask = mask | ((np.arange(d * d) != 0).astype(np.int64) << i).reshape(shape)
        return mask

    @cached_property
    def _brick_table(self) -> tuple[list[Brick], np.ndarray]:
        bricks: list[Brick] = [EMPTY]
        ids: dict[Brick, int] = {EMPTY: 0}
        table = np.zeros(1 << self.n_sites, dtype=np.int64)
        for m in range(1, 1 << self.n_sites):
            sites = [self.order[i] for i in range(self.n_sites) if m >> i & 1]
            y = self.lattice.brick_of_sites(sites)
            if y not in ids:
                ids[y] = len(bricks)
                bricks.append(y)
            table[m] = ids[y]
        return bricks, table

    @property
    def bricks(self) -> list[Brick]:
        return self._brick_table[0]

    @cached_property
    def brick_ids(self) -> np.ndarray:
        return self._brick_table[1][self.support_masks]

    @cached_property
    def brick_index(self) -> dict[Brick, int]:
        return {y: i for i, y in enumerate(self.bricks)}

    def identity(self) -> np.ndarray:
        return np.eye(self.side, dtype=complex)

    def realize(self, op: "LocalOperator | DenseOperator") -> "DenseOperator":
        if isinstance(op, DenseOperator):
            return op
        cache = self._realized
        hit = cache.get(op)
        if hit is None:
            hit = dense_realize(op, self.order, dict(zip(self.order, self.dims)))
            hit.setflags(write=False)
            if len(cache) >= 256:
                cache.pop(next(iter(cache)))
            cache[op] = hit
        return DenseOperator(hit, self)

    @cached_property
    def _realized(self) -> dict:
        return {}

    def zero(self) -> "DenseOperator":
        return DenseOperator(np.zeros((self.side, self.side), dtype=complex), self)

    def state_coefficients(self, psi: np.ndarray) -> np.ndarray:
        """``<psi|E_nu|psi>`` for every basis string."""
        rho = np.outer(psi, psi.conj())
        return pauli_coefficients(rho, self.dims) * self.side


class DenseOperator:
    """A matrix acting on the whole lattice of a :class:`DenseSpace`."""

    __slots__ = ("matrix", "space")

    def __init__(self, matrix: np.ndarray, space: DenseSpace) -> None:
        self.matrix = np.asarray(matrix, dtype=complex)
        self.space = space

    def _coerce(self, other) -> "DenseOperator":
        if isinstance(other, DenseOperator):
            return other
        if isinstance(other, LocalOperator):
            return self.space.realize(other)
        raise TypeError(f"cannot combine DenseOperator with {type(other).__name__}")

    def __add__(self, other) -> "DenseOperator":
        return DenseOperator(self.matrix + self._coerce(other).matrix, self.space)

    __radd__ = __add__

    def __sub__(self, other) -> "DenseOperator":
        return DenseOperator(self.matrix - self._coerce(other).matrix, self.space)

    def __rsub__(self, other) -> "DenseOperator":
        return DenseOperator(self._coerce(other).matrix - self.matrix, self.space)

    def __neg__(self) -> "DenseOperator":
        return DenseOperator(-self.matrix, self.space)

    def scale(self, z: complex) -> "DenseOperator":
        return DenseOperator(z * self.matrix, self.space)

    def __mul__(self, other):
        if isinstance(other, (DenseOperator, LocalOperator)):
            return DenseOperator(self.matrix @ self._coerce(other).matrix, self.space)
        return self.scale(other)

    def __rmul__(self, other):
        if isinstance(other, LocalOperator):
            return DenseOperator(self._coerce(other).matrix @ self.matrix, self.space)
        return self.scale(other)

    def __truediv__(self, z) -> "DenseOperator":
        return self.scale(1 / z)

    def __repr__(self) -> str:
        return f"DenseOperator(side={self.space.side}, norm={self.max_abs():.3g})"

    def commutator(self, other) -> "DenseOperator":
        b = self._coerce(other).matrix
        return DenseOperator(self.matrix @ b - b @ self.matrix, self.space)

    def dagger(self) -> "DenseOperator":
        return DenseOperator(self.matrix.conj().T, self.space)

    def is_anti_hermitian(self, tol: float = 1e-12) -> bool:
        return float(np.abs(self.matrix + self.matrix.conj().T).max(initial=0.0)) <= tol

    def trace_state(self) -> complex:
        return complex(np.trace(self.matrix) / self.space.side)

    def is_traceless(self, tol: float = 1e-12) -> bool:
        return abs(self.trace_state()) <= tol

    def traceless_part(self) -> "DenseOperator":
        return DenseOperator(self.matrix - self.trace_state() * np.eye(self.space.side), self.space)

    def is_zero(self, tol: float = 0.0) -> bool:
        return self.max_abs() <= tol

    def max_abs(self) -> float:
        return float(np.abs(self.matrix).max(initial=0.0))

    def norm(self, mode: str = "exact") -> float:
        if mode == "exact":
            return float(np.linalg.norm(self.matrix, 2))
        return float(np.abs(self.coefficients()).sum())

    def expectation(self, psi: np.ndarray) -> complex:
        return complex(np.vdot(psi, self.matrix @ psi))

    def coefficients(self) -> np.ndarray:
        return pauli_coefficients(self.matrix, self.space.dims)

    def to_local(self, tol: float | None = None) -> LocalOperator:
        coeffs = self.coefficients()
        tol = PRUNE_TOL if tol is None else tol
        terms = {}
        order = self.space.order
        for idx in zip(*np.nonzero(np.abs(coeffs) > tol)):
            string = tuple((order[i], int(k)) for i, k in enumerate(idx) if k)
            terms[string] = complex(coeffs[idx])
        dims = {s: d for s, d in zip(order, self.space.dims) if d != 2}
        return LocalOperator(terms, dims, prune=False)

    def restrict(self, sites: Iterable[int]) -> "DenseOperator":
        """Conditional expectation: normalized partial trace, then identity back."""
        keep = set(sites)
        sp = self.space
        n = sp.n_sites
        t = self.matrix.reshape(sp.dims + sp.dims)
        traced = [i for i, s in enumerate(sp.order) if s not in keep]
        if not traced:
            return self
        letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
        rows = list(letters[:n])
        cols = list(letters[n : 2 * n])
        for i in traced:
            cols[i] = rows[i]
        kept_rows = [rows[i] for i in range(n) if i not in traced]
        kept_cols = [cols[i] for i in range(n) if i not in traced]
        reduced = np.einsum("".join(rows + cols) + "->" + "".join(kept_rows + kept_cols), t)
        reduced = reduced / math.prod(sp.dims[i] for i in traced)
        # re-embed with identities on the traced sites
        out_rows = list(letters[:n])
        out_cols = list(letters[n : 2 * n])
        operands = [reduced]
        subs = ["".join(out_rows[i] for i in range(n) if i not in traced) + "".join(out_cols[i] for i in range(n) if i not in traced)]
        for i in traced:
            operands.append(np.eye(sp.dims[i]))
            subs.append(out_rows[i] + out_cols[i])
        full = np.einsum(",".join(subs) + "->" + "".join(out_rows + out_cols), *operands)
        return DenseOperator(full.reshape(sp.side, sp.side), sp)

    def brick_components(self, lattice: Lattice | None = None, tol: float | None = None) -> dict[Brick, "DenseOperator"]:
        """Components grouped by enclosing brick; groups below ``tol`` are dropped."""
        sp = self.space
        if lattice is not None and lattice != sp.lattice:
            raise ValueError("lattice differs from the operator's space")
        tol = PRUNE_TOL if tol is None else tol
        coeffs = self.coefficients()
        ids = sp.brick_ids
        weight = np.bincount(ids.ravel(), weights=np.abs(coeffs).ravel(), minlength=len(sp.bricks))
        out: dict[Brick, DenseOperator] = {}
        for b in np.nonzero(weight > tol)[0]:
            part = np.where(ids == b, coeffs, 0)
            out[sp.bricks[b]] = DenseOperator(from_coefficients(part, sp.dims), sp)
        return out

    def brick_expectations(self, state_coeffs: np.ndarray) -> np.ndarray:
        """``<A^Y>_psi`` for every brick of the space, indexed like ``space.bricks``."""
        sp = self.space
        prod = (self.coefficients() * state_coeffs).ravel()
        ids = sp.brick_ids.ravel()
        n = len(sp.bricks)
        return np.bincount(ids, weights=prod.real, minlength=n) + 1j * np.bincount(ids, weights=prod.imag, minlength=n)
