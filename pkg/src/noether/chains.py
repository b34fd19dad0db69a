"""Chains, derivations and the operations of the Noether complex.

A q-chain assigns an operator to every (q+1)-tuple of sites, skew-symmetric
in the tuple.  Only ascending tuples are stored; lookups in any other order
pick up the permutation sign.  Values may be sparse
:class:`~noether.pauli.LocalOperator` or dense
:class:`~noether.dense.DenseOperator`.
"""

from __future__ import annotations

from itertools import combinations
from typing import Callable, Iterable, Iterator, Mapping, Sequence, Union

import numpy as np

from .dense import DenseOperator
from .lattice import Brick, Lattice
from .pauli import PRUNE_TOL, LocalOperator, commutator as _sparse_commutator, parse_operator, to_text

Operator = Union[LocalOperator, DenseOperator]
MAX_DEGREE = 4


def op_commutator(a: Operator, b: Operator) -> Operator:
    if isinstance(a, LocalOperator) and isinstance(b, LocalOperator):
        return _sparse_commutator(a, b)
    if isinstance(a, DenseOperator):
        return a.commutator(b)
    return (-b.commutator(a)) if isinstance(b, DenseOperator) else _sparse_commutator(a, b)


def op_negligible(a: Operator, tol: float = PRUNE_TOL) -> bool:
    return a.is_zero(tol)


def op_size(a: Operator) -> float:
    """Entry-wise size used for residuals (coefficient max or matrix max)."""
    return a.max_abs()


def sort_with_sign(idx: Sequence[int]) -> tuple[tuple[int, ...], int]:
    """Ascending rearrangement of ``idx`` and its permutation sign (0 on repeats)."""
    items = list(idx)
    if len(set(items)) != len(items):
        return tuple(sorted(items)), 0
    sign = 1
    # insertion sort, counting transpositions
    for i in range(1, len(items)):
        j = i
        while j > 0 and items[j - 1] > items[j]:
            items[j - 1], items[j] = items[j], items[j - 1]
            sign = -sign
            j -= 1
    return tuple(items), sign


def _accumulate(store: dict, key, value: Operator, sign: complex = 1) -> None:
    term = value if sign == 1 else value.scale(sign)
    if key in store:
        store[key] = store[key] + term
    else:
        store[key] = term


def _pruned(store: Mapping, tol: float = PRUNE_TOL) -> dict:
    return {k: v for k, v in store.items() if not op_negligible(v, tol)}


class Chain:
    """Skew-symmetric finitely supported map from (q+1)-tuples to operators."""

    __slots__ = ("degree", "lattice", "_values")

    def __init__(self, degree: int, lattice: Lattice, values: Mapping[tuple[int, ...], Operator] | None = None,
                 canonical: bool = False) -> None:
        if degree < 0:
            raise ValueError("chain degree must be >= 0")
        if degree > MAX_DEGREE:
            raise ValueError(f"chain degree {degree} exceeds cap {MAX_DEGREE}")
        self.degree = degree
        self.lattice = lattice
        store: dict[tuple[int, ...], Operator] = {}
        for idx, v in (values or {}).items():
            idx = tuple(idx)
            if len(idx) != degree + 1:
                raise ValueError(f"index {idx} has wrong length for degree {degree}")
            if canonical:
                key, sign = idx, 1
            else:
                key, sign = sort_with_sign(idx)
                if sign == 0:
                    continue
            _accumulate(store, key, v, sign)
        self._values = _pruned(store)

    @classmethod
    def zero(cls, degree: int, lattice: Lattice) -> "Chain":
        return cls(degree, lattice)

    def items(self) -> Iterator[tuple[tuple[int, ...], Operator]]:
        return iter(sorted(self._values.items(), key=lambda kv: kv[0]))

    @property
    def values(self) -> Mapping[tuple[int, ...], Operator]:
        return self._values

    def get(self, idx: Sequence[int]) -> Operator | None:
        key, sign = sort_with_sign(idx)
        if sign == 0 or key not in self._values:
            return None
        v = self._values[key]
        return v if sign == 1 else -v

    def __getitem__(self, idx: Sequence[int]) -> Operator:
        v = self.get(idx)
        return LocalOperator.zero() if v is None else v

    def __len__(self) -> int:
        return len(self._values)

    def _combine(self, other: "Chain", sign: int) -> "Chain":
        if not isinstance(other, Chain) or other.degree != self.degree:
            raise ValueError("can only combine chains of equal degree")
        store = dict(self._values)
        for k, v in other._values.items():
            _accumulate(store, k, v, sign)
        return Chain(self.degree, self.lattice, store, canonical=True)

    def __add__(self, other: "Chain") -> "Chain":
        return self._combine(other, 1)

    def __sub__(self, other: "Chain") -> "Chain":
        return self._combine(other, -1)

    def __neg__(self) -> "Chain":
        return self.map(lambda v: -v)

    def scale(self, z: complex) -> "Chain":
        return self.map(lambda v: v.scale(z))

    def __mul__(self, z: complex) -> "Chain":
        return self.scale(z)

    __rmul__ = __mul__

    def map(self, fn: Callable[[Operator], Operator]) -> "Chain":
        """Apply a linear operator-valued map to every component."""
        return Chain(self.degree, self.lattice, {k: fn(v) for k, v in self._values.items()}, canonical=True)

    def size(self) -> float:
        return max((op_size(v) for v in self._values.values()), default=0.0)

    def is_valid(self, tol: float = 1e-12) -> bool:
        """Every value traceless and anti-self-adjoint."""
        return all(v.is_traceless(tol) and v.is_anti_hermitian(tol) for v in self._values.values())

    def __repr__(self) -> str:
        return f"Chain(degree={self.degree}, entries={len(self._values)})"


class Derivation:
    """Brick-indexed family of brick-primitive operators ``F^Y``."""

    __slots__ = ("lattice", "_values", "_total")

    degree = -1

    def __init__(self, lattice: Lattice, values: Mapping[Brick, Operator] | None = None) -> None:
        self.lattice = lattice
        store: dict[Brick, Operator] = {}
        for y, v in (values or {}).items():
            if y.is_empty:
                continue
            _accumulate(store, y, v)
        self._values = _pruned(store)
        self._total: Operator | None = None

    @classmethod
    def from_operator(cls, lattice: Lattice, op: Operator) -> "Derivation":
        """Brick decomposition of a (traceless) total operator."""
        return cls(lattice, {y: v for y, v in op.brick_components(lattice).items() if not y.is_empty})

    def items(self) -> Iterator[tuple[Brick, Operator]]:
        return iter(sorted(self._values.items(), key=lambda kv: kv[0].sort_key()))

    @property
    def values(self) -> Mapping[Brick, Operator]:
        return self._values

    def __getitem__(self, y: Brick) -> Operator:
        return self._values.get(y, LocalOperator.zero())

    def __len__(self) -> int:
        return len(self._values)

    def total(self) -> Operator:
        """Summable total ``sum_Y F^Y`` (always defined on a finite lattice)."""
        if self._total is None:
            out: Operator = LocalOperator.zero()
            for _, v in self.items():
                out = v + out if isinstance(v, DenseOperator) else out + v
            self._total = out
        return self._total

    def __add__(self, other: "Derivation") -> "Derivation":
        store = dict(self._values)
        for k, v in other._values.items():
            _accumulate(store, k, v)
        return Derivation(self.lattice, store)

    def __sub__(self, other: "Derivation") -> "Derivation":
        return self + (-other)

    def __neg__(self) -> "Derivation":
        return self.map(lambda v: -v)

    def scale(self, z: complex) -> "Derivation":
        return self.map(lambda v: v.scale(z))

    def __mul__(self, z: complex) -> "Derivation":
        return self.scale(z)

    __rmul__ = __mul__

    def map(self, fn: Callable[[Operator], Operator]) -> "Derivation":
        return Derivation(self.lattice, {k: fn(v) for k, v in self._values.items()})

    def apply(self, a: Operator) -> Operator:
        """Action on an observable: ``F(A) = [F_tot, A]``."""
        return op_commutator(self.total(), a)

    def size(self) -> float:
        return max((op_size(v) for v in self._values.values()), default=0.0)

    def primitivity_residual(self) -> float:
        """Largest deviation of a value from its own brick component."""
        worst = 0.0
        for y, v in self._values.items():
            comps = v.brick_components(self.lattice)
            for z, c in comps.items():
                diff = (c - v) if z == y else c
                worst = max(worst, op_size(diff))
        return worst

    def is_valid(self, tol: float = 1e-12) -> bool:
        return self.primitivity_residual() <= tol and all(
            v.is_traceless(tol) and v.is_anti_hermitian(tol) for v in self._values.values()
        )

    def __repr__(self) -> str:
        return f"Derivation(bricks={len(self._values)})"


ChainLike = Union[Chain, Derivation]


def degree_of(x: ChainLike) -> int:
    return x.degree


def residual(x: ChainLike | None, y: ChainLike | None) -> float:
    """Entry-wise size of ``x - y`` (either may be ``None`` for zero)."""
    if x is None and y is None:
        return 0.0
    if x is None:
        return y.size()
    if y is None:
        return x.size()
    if isinstance(x, Derivation) != isinstance(y, Derivation):
        raise ValueError("cannot compare a chain with a derivation")
    if isinstance(x, Derivation):
        return (x - y).size()
    return (x - y).size()


# boundary ----------------------------------------------------------------

def boundary(a: ChainLike) -> ChainLike:
    """``(da)_{j1..jq} = sum_j0 a_{j0 j1..jq}``; degree 0 gives a derivation."""
    if isinstance(a, Derivation):
        raise ValueError("derivations sit at the bottom of the complex")
    if a.degree == 0:
        store: dict[Brick, Operator] = {}
        for _, v in a.items():
            for y, comp in v.brick_components(a.lattice).items():
                if not y.is_empty:
                    _accumulate(store, y, comp)
        return Derivation(a.lattice, store)
    store2: dict[tuple[int, ...], Operator] = {}
    for t, v in a.items():
        for p in range(len(t)):
            _accumulate(store2, t[:p] + t[p + 1 :], v, -1 if p % 2 else 1)
    return Chain(a.degree - 1, a.lattice, store2, canonical=True)


# homotopy ----------------------------------------------------------------

def _brick_sites(lattice: Lattice, y: Brick) -> tuple[int, ...]:
    sites = lattice.sites_in(y)
    if not sites:
        raise ValueError(f"brick {y} contains no lattice site; cannot distribute its component")
    return sites


def homotopy(a: ChainLike) -> Chain:
    """Contracting homotopy ``h``: derivations map to 0-chains, q-chains to (q+1)-chains."""
    lattice = a.lattice
    if isinstance(a, Derivation):
        store: dict[tuple[int, ...], Operator] = {}
        for y, v in a.items():
            sites = _brick_sites(lattice, y)
            share = v.scale(1.0 / len(sites))
            for s in sites:
                _accumulate(store, (s,), share)
        return Chain(0, lattice, store, canonical=True)
    out: dict[tuple[int, ...], Operator] = {}
    for t, v in a.items():
        members = set(t)
        for y, comp in v.brick_components(lattice).items():
            if y.is_empty:
                continue
            sites = _brick_sites(lattice, y)
            share = comp.scale(1.0 / len(sites))
            for s in sites:
                if s in members:
                    continue
                k = sum(1 for x in t if x < s)
                key = t[:k] + (s,) + t[k:]
                _accumulate(out, key, share, -1 if k % 2 else 1)
    return Chain(a.degree + 1, lattice, out, canonical=True)


# brackets ----------------------------------------------------------------

def _shuffle_sign(s: tuple[int, ...], t: tuple[int, ...]) -> tuple[tuple[int, ...], int]:
    return sort_with_sign(s + t)


def graded_bracket(x: ChainLike, y: ChainLike) -> ChainLike:
    """Graded bracket; derivations have degree -1, q-chains degree q."""
    lattice = x.lattice
    if isinstance(x, Derivation) and isinstance(y, Derivation):
        total = op_commutator(x.total(), y.total())
        return Derivation.from_operator(lattice, total)
    if isinstance(x, Derivation):
        ftot = x.total()
        return y.map(lambda v: op_commutator(ftot, v))
    if isinstance(y, Derivation):
        # {g, F} = -(-1)^{(|g|+1)(|F|+1)} {F, g} = -{F, g}
        return -graded_bracket(y, x)
    degree = x.degree + y.degree + 1
    store: dict[tuple[int, ...], Operator] = {}
    for s, u in x.items():
        ss = set(s)
        for t, v in y.items():
            if ss.intersection(t):
                continue
            key, sign = _shuffle_sign(s, t)
            c = op_commutator(u, v)
            if not op_negligible(c):
                _accumulate(store, key, c, sign)
    return Chain(degree, lattice, store, canonical=True)


def bracket_identity_residuals(x: ChainLike, y: ChainLike, z: ChainLike) -> dict[str, float]:
    """Skew-symmetry, Jacobi and Leibniz residuals in the shifted grading ``p = degree + 1``."""
    px, py = degree_of(x) + 1, degree_of(y) + 1
    b = graded_bracket
    out = {
        "skew": residual(b(x, y), b(y, x).scale(-((-1) ** (px * py)))),
        "jacobi": residual(b(x, b(y, z)), b(b(x, y), z) + b(y, b(x, z)).scale((-1) ** (px * py))),
    }
    if isinstance(x, Chain) and isinstance(y, Chain):
        out["leibniz"] = residual(boundary(b(x, y)), b(boundary(x), y) + b(x, boundary(y)).scale((-1) ** px))
    return out


def derived_bracket(f: Chain, g: Chain) -> Chain:
    """``[f, g}_j = sum_k [f_k, g_j]`` for 0-chains."""
    if f.degree != 0 or g.degree != 0:
        raise ValueError("the derived bracket is defined on 0-chains")
    total: Operator = LocalOperator.zero()
    for _, v in f.items():
        total = v + total if isinstance(v, DenseOperator) else total + v
    return g.map(lambda v: op_commutator(total, v))


# contraction -------------------------------------------------------------

def _check_disjoint(regions: Sequence[Iterable[int]]) -> list[frozenset[int]]:
    sets = [frozenset(r) for r in regions]
    seen: set[int] = set()
    for r in sets:
        if seen & r:
            raise ValueError("contraction regions overlap")
        seen |= r
    return sets


def _region_sign(t: tuple[int, ...], owner: Mapping[int, int], n_regions: int) -> int:
    """Sign of the ordering of ``t`` that puts its k-th entry in region k (0 if none)."""
    slots = [owner.get(s) for s in t]
    if None in slots or len(set(slots)) != n_regions:
        return 0
    order = [None] * n_regions
    for s, a in zip(t, slots):
        order[a] = s
    _, sign = sort_with_sign(order)
    # sort_with_sign gives the sign taking `order` to ascending `t`; the inverse has the same sign
    return sign


def contract_total(b: Chain, regions: Sequence[Iterable[int]]) -> Operator:
    """``b_{A_0..A_q} = sum_{j_k in A_k} b_{j_0..j_q}`` as a single operator."""
    sets = _check_disjoint(regions)
    if len(sets) != b.degree + 1:
        raise ValueError(f"a {b.degree}-chain needs {b.degree + 1} regions")
    owner = {s: a for a, r in enumerate(sets) for s in r}
    out: Operator = LocalOperator.zero()
    for t, v in b.items():
        sign = _region_sign(t, owner, len(sets))
        if sign:
            term = v if sign == 1 else -v
            out = term + out if isinstance(term, DenseOperator) else out + term
    return out


def contract(b: Chain, regions: Sequence[Iterable[int]]) -> Derivation:
    """Contraction as a derivation ``Y -> sum b^Y``; its total is :func:`contract_total`."""
    return Derivation.from_operator(b.lattice, contract_total(b, regions))


def summable_total(f: Derivation) -> Operator:
    return f.total()


def homotopy_contraction_expectation(
    a: Chain, regions: Sequence[Iterable[int]], expectations: Callable[[Operator], Mapping[Brick, complex]]
) -> complex:
    """``<h(a)_{A_0..A_{q+1}}>`` using only brick-wise expectation values of ``a``.

    ``expectations(v)`` returns ``{Y: <v^Y>}``.  This avoids building the
    (q+1)-chain when only its contraction in a state is needed.
    """
    sets = _check_disjoint(regions)
    if len(sets) != a.degree + 2:
        raise ValueError("region count must be degree + 2")
    owner = {s: k for k, r in enumerate(sets) for s in r}
    lattice = a.lattice
    total = 0j
    for t, v in a.items():
        members = set(t)
        for y, e in expectations(v).items():
            if y.is_empty or e == 0:
                continue
            sites = _brick_sites(lattice, y)
            for s in sites:
                if s in members:
                    continue
                k = sum(1 for x in t if x < s)
                key = t[:k] + (s,) + t[k:]
                sign = _region_sign(key, owner, len(sets))
                if sign:
                    total += sign * (-1 if k % 2 else 1) * e / len(sites)
    return total


# text form -----------------------------------------------------------------

def _sparse(v: Operator) -> LocalOperator:
    return v.to_local() if isinstance(v, DenseOperator) else v


def chain_to_text(x: ChainLike) -> str:
    """One line per term: ``j0 .. jq | coeff site:op ..`` or ``brick | coeff site:op ..``."""
    lines = []
    for key, v in x.items():
        label = str(key) if isinstance(x, Derivation) else " ".join(str(j) for j in key)
        for term in to_text(_sparse(v)).splitlines():
            lines.append(f"{label} | {term}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_chain(text: str, lattice: Lattice, degree: int | None = None) -> ChainLike:
    """Inverse of :func:`chain_to_text`; ``degree=-1`` (or brick labels) gives a derivation."""
    groups: dict[str, list[str]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        if not raw.strip():
            continue
        if "|" not in raw:
            raise ValueError(f"line {lineno}: expected 'key | operator term'")
        key, term = raw.split("|", 1)
        groups.setdefault(key.strip(), []).append(term.strip())
    dims = {s: d for s, d in lattice.dim_of.items() if d != 2}
    ops = {k: parse_operator("\n".join(v), dims) for k, v in groups.items()}
    is_derivation = degree == -1 or (degree is None and any(k.startswith(("[", "empty", "point")) for k in ops))
    if is_derivation:
        return Derivation(lattice, {Brick.parse(k): v for k, v in ops.items()})
    values = {tuple(int(j) for j in k.split()): v for k, v in ops.items()}
    if degree is None:
        degree = len(next(iter(values))) - 1 if values else 0
    return Chain(degree, lattice, values)


def random_chain(
    degree: int,
    lattice: Lattice,
    rng: np.random.Generator,
    entries: int = 4,
    terms: int = 3,
    max_span: float | None = 2.0,
) -> Chain:
    """Random chain with anti-self-adjoint traceless sparse values."""
    sites = list(lattice.site_ids)
    store: dict[tuple[int, ...], Operator] = {}
    tuples = list(combinations(sites, degree + 1))
    if not tuples:
        return Chain(degree, lattice)
    for _ in range(entries):
        t = tuples[rng.integers(len(tuples))]
        store[t] = random_operator(lattice, rng, terms, anchor=t[rng.integers(len(t))], max_span=max_span)
    return Chain(degree, lattice, store, canonical=True)


def random_operator(
    lattice: Lattice,
    rng: np.random.Generator,
    terms: int = 3,
    anchor: int | None = None,
    max_span: float | None = 2.0,
    max_sites: int = 3,
) -> LocalOperator:
    """Random anti-self-adjoint traceless operator on nearby sites."""
    sites = list(lattice.site_ids)
    out: dict = {}
    for _ in range(terms):
        centre = anchor if anchor is not None else sites[rng.integers(len(sites))]
        near = [s for s in sites if max_span is None or lattice.distance(s, centre) <= max_span]
        k = int(rng.integers(1, min(max_sites, len(near)) + 1))
        chosen = rng.choice(len(near), size=k, replace=False)
        string = tuple(sorted((near[i], int(rng.integers(1, lattice.dim_of[near[i]] ** 2))) for i in chosen))
        out[string] = out.get(string, 0) + 1j * float(rng.normal())
    dims = {s: d for s, d in lattice.dim_of.items() if d != 2}
    return LocalOperator(out, dims)
