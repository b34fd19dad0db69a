"""Sparse operators in an orthonormal Hermitian on-site basis.

Qubit sites use the Pauli matrices.  Sites of dimension ``d > 2`` use the
generalized Gell-Mann matrices scaled so that ``tr(E^a E^b) / d = delta``.
Index 0 is always the identity and never appears in a stored string.
"""

from __future__ import annotations

import math
import re
from functools import lru_cache
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .lattice import EMPTY, Brick, Lattice, mobius_support

BasisString = tuple[tuple[int, int], ...]

PRUNE_TOL = 1e-14
DENSE_CAP = 2**12

QUBIT_LABELS = {1: "x", 2: "y", 3: "z"}
QUBIT_INDEX = {v: k for k, v in QUBIT_LABELS.items()}


def set_prune_tol(tol: float) -> float:
    """Set the coefficient pruning threshold, returning the previous value."""
    global PRUNE_TOL
    old, PRUNE_TOL = PRUNE_TOL, float(tol)
    return old


class DenseCapExceeded(ValueError):
    pass


@lru_cache(maxsize=None)
def onsite_basis(d: int) -> np.ndarray:
    """Array of shape ``(d*d, d, d)``; element 0 is the identity."""
    if d < 2:
        raise ValueError("on-site dimension must be >= 2")
    if d == 2:
        mats = [
            np.eye(2),
            np.array([[0, 1], [1, 0]]),
            np.array([[0, -1j], [1j, 0]]),
            np.array([[1, 0], [0, -1]]),
        ]
        out = np.array(mats, dtype=complex)
        out.setflags(write=False)
        return out
    mats = [np.eye(d, dtype=complex)]
    scale = math.sqrt(d / 2)
    for j in range(d):
        for k in range(j + 1, d):
            sym = np.zeros((d, d), dtype=complex)
            sym[j, k] = sym[k, j] = 1
            asym = np.zeros((d, d), dtype=complex)
            asym[j, k], asym[k, j] = -1j, 1j
            mats += [scale * sym, scale * asym]
    for l in range(1, d):
        diag = np.zeros(d)
        diag[:l] = 1
        diag[l] = -l
        mats.append(scale * math.sqrt(2 / (l * (l + 1))) * np.diag(diag).astype(complex))
    out = np.array(mats)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def structure_constants(d: int) -> tuple[tuple[tuple[tuple[int, complex], ...], ...], ...]:
    """``table[a][b]`` lists ``(c, s)`` with ``E^a E^b = sum_c s E^c``."""
    basis = onsite_basis(d)
    n = d * d
    table = []
    for a in range(n):
        row = []
        for b in range(n):
            prod = basis[a] @ basis[b]
            coeffs = np.einsum("cij,ji->c", basis, prod) / d
            row.append(tuple((c, complex(v)) for c, v in enumerate(coeffs) if abs(v) > 1e-13))
        table.append(tuple(row))
    return tuple(table)


def _op_label(k: int, d: int) -> str:
    return QUBIT_LABELS[k] if d == 2 else str(k)


def _op_index(label: str, d: int) -> int:
    label = label.strip().lower()
    if label in QUBIT_INDEX:
        if d != 2:
            raise ValueError(f"label {label!r} only valid on qubit sites")
        return QUBIT_INDEX[label]
    k = int(label)
    if not 1 <= k < d * d:
        raise ValueError(f"basis index {k} out of range for dimension {d}")
    return k


@lru_cache(maxsize=1 << 18)
def _mul_strings(s1: BasisString, s2: BasisString, dims: tuple[tuple[int, int], ...]) -> tuple:
    """Product of two basis strings as a tuple of ``(string, coefficient)``."""
    dim = dict(dims)
    results: list[tuple[list[tuple[int, int]], complex]] = [([], 1.0 + 0j)]
    i = j = 0
    while i < len(s1) or j < len(s2):
        if j >= len(s2) or (i < len(s1) and s1[i][0] < s2[j][0]):
            for r in results:
                r[0].append(s1[i])
            i += 1
            continue
        if i >= len(s1) or s2[j][0] < s1[i][0]:
            for r in results:
                r[0].append(s2[j])
            j += 1
            continue
        site, a = s1[i]
        b = s2[j][1]
        table = structure_constants(dim.get(site, 2))[a][b]
        new = []
        for string, coeff in results:
            for c, s in table:
                entry = string + [(site, c)] if c else list(string)
                new.append((entry, coeff * s))
        results = new
        i += 1
        j += 1
    return tuple((tuple(s), c) for s, c in results)


def _dims_key(dims: Mapping[int, int], s1: BasisString, s2: BasisString) -> tuple[tuple[int, int], ...]:
    if not dims:
        return ()
    sites = {x for x, _ in s1} & {x for x, _ in s2}
    return tuple(sorted((x, dims[x]) for x in sites if x in dims))


class LocalOperator:
    """Finite complex combination of basis strings; immutable.

    ``dims`` records on-site dimensions that differ from 2.
    """

    __slots__ = ("_terms", "_dims", "_support")

    def __init__(
        self,
        terms: Mapping[BasisString, complex] | None = None,
        dims: Mapping[int, int] | None = None,
        prune: bool = True,
    ) -> None:
        tol = PRUNE_TOL if prune else -1.0
        clean: dict[BasisString, complex] = {}
        for s, c in (terms or {}).items():
            c = complex(c)
            if abs(c) > tol:
                clean[s] = c
        self._terms = clean
        self._dims = {k: v for k, v in (dims or {}).items() if v != 2}
        self._support: frozenset[int] | None = None

    # construction -----------------------------------------------------
    @classmethod
    def identity(cls, coeff: complex = 1.0) -> "LocalOperator":
        return cls({(): coeff})

    @classmethod
    def zero(cls) -> "LocalOperator":
        return cls()

    @classmethod
    def single(cls, site: int, op: str | int, coeff: complex = 1.0, dim: int = 2) -> "LocalOperator":
        k = op if isinstance(op, int) else _op_index(op, dim)
        return cls({((site, k),): coeff}, {site: dim})

    @classmethod
    def string(cls, ops: Mapping[int, str | int], coeff: complex = 1.0, dims: Mapping[int, int] | None = None) -> "LocalOperator":
        dims = dict(dims or {})
        entries = []
        for site, op in ops.items():
            d = dims.get(site, 2)
            k = op if isinstance(op, int) else _op_index(op, d)
            if k:
                entries.append((site, k))
        return cls({tuple(sorted(entries)): coeff}, dims)

    # accessors --------------------------------------------------------
    @property
    def terms(self) -> Mapping[BasisString, complex]:
        return self._terms

    @property
    def dims(self) -> Mapping[int, int]:
        return self._dims

    def dim_of(self, site: int) -> int:
        return self._dims.get(site, 2)

    @property
    def support(self) -> frozenset[int]:
        if self._support is None:
            self._support = frozenset(x for s in self._terms for x, _ in s)
        return self._support

    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self) -> Iterator[tuple[BasisString, complex]]:
        return iter(self._terms.items())

    def coefficient(self, string: BasisString) -> complex:
        return self._terms.get(string, 0j)

    def is_zero(self, tol: float = 0.0) -> bool:
        return all(abs(c) <= tol for c in self._terms.values())

    # linear structure -------------------------------------------------
    def _merged_dims(self, other: "LocalOperator") -> dict[int, int]:
        if not other._dims:
            return self._dims
        if not self._dims:
            return other._dims
        out = dict(self._dims)
        for k, v in other._dims.items():
            if out.setdefault(k, v) != v:
                raise ValueError(f"site {k} has inconsistent dimensions")
        return out

    def __add__(self, other: "LocalOperator") -> "LocalOperator":
        if not isinstance(other, LocalOperator):
            return NotImplemented
        terms = dict(self._terms)
        for s, c in other._terms.items():
            terms[s] = terms.get(s, 0) + c
        return LocalOperator(terms, self._merged_dims(other))

    def __sub__(self, other: "LocalOperator") -> "LocalOperator":
        if not isinstance(other, LocalOperator):
            return NotImplemented
        terms = dict(self._terms)
        for s, c in other._terms.items():
            terms[s] = terms.get(s, 0) - c
        return LocalOperator(terms, self._merged_dims(other))

    def __neg__(self) -> "LocalOperator":
        return LocalOperator({s: -c for s, c in self._terms.items()}, self._dims, prune=False)

    def scale(self, z: complex) -> "LocalOperator":
        return LocalOperator({s: z * c for s, c in self._terms.items()}, self._dims)

    def __mul__(self, other):
        if isinstance(other, LocalOperator):
            return multiply(self, other)
        if isinstance(other, (int, float, complex, np.number)):
            return self.scale(other)
        return NotImplemented

    def __rmul__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            return self.scale(other)
        return NotImplemented

    def __truediv__(self, z) -> "LocalOperator":
        return self.scale(1 / z)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LocalOperator):
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self) -> int:
        return hash(frozenset(self._terms.items()))

    def __repr__(self) -> str:
        body = to_text(self).strip().replace("\n", "; ")
        return f"LocalOperator({body or '0'})"

    # algebra ------------------------------------------------------------
    def dagger(self) -> "LocalOperator":
        return LocalOperator({s: c.conjugate() for s, c in self._terms.items()}, self._dims, prune=False)

    def is_anti_hermitian(self, tol: float = 1e-12) -> bool:
        return all(abs(c.real) <= tol for c in self._terms.values())

    def is_traceless(self, tol: float = 0.0) -> bool:
        return abs(self._terms.get((), 0)) <= tol

    def trace_state(self) -> complex:
        return self._terms.get((), 0j)

    def traceless_part(self) -> "LocalOperator":
        return LocalOperator({s: c for s, c in self._terms.items() if s}, self._dims, prune=False)

    def restrict(self, sites: Iterable[int]) -> "LocalOperator":
        """Conditional expectation onto the algebra of ``sites``."""
        keep = frozenset(sites)
        return LocalOperator(
            {s: c for s, c in self._terms.items() if all(x in keep for x, _ in s)}, self._dims, prune=False
        )

    def coefficient_norm(self) -> float:
        return float(sum(abs(c) for c in self._terms.values()))

    def norm(self, mode: str = "exact") -> float:
        return operator_norm(self, mode)

    def max_abs(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    # bricks -------------------------------------------------------------
    def brick_components(self, lattice: Lattice) -> dict[Brick, "LocalOperator"]:
        """Components ``A^Y`` keyed by brick (fast path via enclosing bricks)."""
        groups: dict[Brick, dict[BasisString, complex]] = {}
        for s, c in self._terms.items():
            y = _string_brick(lattice, tuple(x for x, _ in s))
            groups.setdefault(y, {})[s] = c
        return {y: LocalOperator(t, self._dims, prune=False) for y, t in groups.items()}

    def brick_component(self, y: Brick, lattice: Lattice) -> "LocalOperator":
        return brick_component(self, y, lattice)

    def dense(self, site_order: Sequence[int], dims: Mapping[int, int] | None = None) -> np.ndarray:
        return dense_realize(self, site_order, dims)


def _string_brick(lattice: Lattice, sites: tuple[int, ...]) -> Brick:
    if not sites:
        return EMPTY
    return _cached_brick(lattice, sites)


@lru_cache(maxsize=1 << 16)
def _cached_brick(lattice: Lattice, sites: tuple[int, ...]) -> Brick:
    return lattice.brick_of_sites(sites)


def multiply(a: LocalOperator, b: LocalOperator) -> LocalOperator:
    dims = a._merged_dims(b)
    out: dict[BasisString, complex] = {}
    for s1, c1 in a._terms.items():
        for s2, c2 in b._terms.items():
            for s, c in _mul_strings(s1, s2, _dims_key(dims, s1, s2)):
                out[s] = out.get(s, 0) + c1 * c2 * c
    return LocalOperator(out, dims)


def commutator(a: LocalOperator, b: LocalOperator) -> LocalOperator:
    """``[a, b] = ab - ba``; only overlapping strings are multiplied."""
    dims = a._merged_dims(b)
    out: dict[BasisString, complex] = {}
    by_site: dict[int, list[tuple[BasisString, complex]]] = {}
    for s2, c2 in b._terms.items():
        for x, _ in s2:
            by_site.setdefault(x, []).append((s2, c2))
    for s1, c1 in a._terms.items():
        seen: set[BasisString] = set()
        for x, _ in s1:
            for s2, c2 in by_site.get(x, ()):
                if s2 in seen:
                    continue
                seen.add(s2)
                key = _dims_key(dims, s1, s2)
                for s, c in _mul_strings(s1, s2, key):
                    out[s] = out.get(s, 0) + c1 * c2 * c
                for s, c in _mul_strings(s2, s1, key):
                    out[s] = out.get(s, 0) - c1 * c2 * c
    return LocalOperator(out, dims)


def trace_state(a: LocalOperator) -> complex:
    return a.trace_state()


def conditional_expectation(a: LocalOperator, sites: Iterable[int]) -> LocalOperator:
    return a.restrict(sites)


def brick_component(a: LocalOperator, y: Brick, lattice: Lattice) -> LocalOperator:
    """``A^Y = sum_{Y' <= Y} mu(Y', Y) A|_{Y'}`` computed by Moebius inversion."""
    if y.is_empty:
        raise ValueError("brick_component needs a non-empty brick")
    out = LocalOperator.zero()
    for sub, coeff in mobius_support(y):
        out = out + a.restrict(lattice.sites_in(sub)).scale(coeff)
    return out


def support_dims(a: LocalOperator, site_order: Sequence[int], dims: Mapping[int, int] | None) -> list[int]:
    dims = dict(dims or {})
    return [dims.get(s, a.dim_of(s)) for s in site_order]


def dense_realize(a: LocalOperator, site_order: Sequence[int], dims: Mapping[int, int] | None = None) -> np.ndarray:
    """Kronecker realization; the first site in ``site_order`` is most significant."""
    order = list(site_order)
    missing = a.support - set(order)
    if missing:
        raise ValueError(f"operator acts on sites {sorted(missing)} outside the site order")
    ds = support_dims(a, order, dims)
    side = math.prod(ds)
    if side > DENSE_CAP:
        raise DenseCapExceeded(f"dense side {side} exceeds cap {DENSE_CAP}; use bound mode")
    pos = {s: i for i, s in enumerate(order)}
    # group strings by the sites they touch; each group is built on its own support
    groups: dict[tuple[int, ...], list[tuple[BasisString, complex]]] = {}
    for string, c in a._terms.items():
        groups.setdefault(tuple(sorted((x for x, _ in string), key=pos.__getitem__)), []).append((string, c))
    out = np.zeros((side, side), dtype=complex)
    for supp, items in groups.items():
        sd = [ds[pos[x]] for x in supp]
        local = np.zeros((math.prod(sd), math.prod(sd)), dtype=complex)
        for string, c in items:
            ks = dict(string)
            mat = np.array([[1.0 + 0j]])
            for x, d in zip(supp, sd):
                mat = np.kron(mat, onsite_basis(d)[ks[x]])
            local += c * mat
        out += _embed(local, [pos[x] for x in supp], ds)
    return out


def _embed(local: np.ndarray, axes_of: Sequence[int], ds: Sequence[int]) -> np.ndarray:
    """Tensor ``local`` (acting on axes ``axes_of``) with the identity on the remaining axes."""
    n = len(ds)
    side = math.prod(ds)
    axes = list(axes_of) + [i for i in range(n) if i not in set(axes_of)]
    rest = side // local.shape[0]
    if axes == list(range(n)):
        return np.kron(local, np.eye(rest))
    sd = [ds[i] for i in axes_of]
    rest_d = [ds[i] for i in axes[len(sd):]]
    big = np.kron(local, np.eye(rest)).reshape(sd + rest_d + sd + rest_d)
    where = {site_axis: k for k, site_axis in enumerate(axes)}
    perm = [where[i] for i in range(n)] + [n + where[i] for i in range(n)]
    return big.transpose(perm).reshape(side, side)


def from_dense(matrix: np.ndarray, site_order: Sequence[int], dims: Mapping[int, int] | None = None) -> LocalOperator:
    """Expand a dense matrix in the basis strings of ``site_order``."""
    from .dense import pauli_coefficients

    order = list(site_order)
    dims = dict(dims or {})
    ds = [dims.get(s, 2) for s in order]
    coeffs = pauli_coefficients(np.asarray(matrix), ds)
    terms: dict[BasisString, complex] = {}
    for idx in zip(*np.nonzero(np.abs(coeffs) > PRUNE_TOL)):
        string = tuple(sorted((order[i], int(k)) for i, k in enumerate(idx) if k))
        terms[string] = complex(coeffs[idx])
    return LocalOperator(terms, {s: d for s, d in zip(order, ds)})


def operator_norm(a: LocalOperator, mode: str = "exact") -> float:
    """Largest singular value (``exact``) or coefficient sum (``bound``)."""
    if mode in ("bound", "upper-bound"):
        return a.coefficient_norm()
    if mode != "exact":
        raise ValueError(f"unknown norm mode {mode!r}")
    if not a._terms:
        return 0.0
    sites = sorted(a.support)
    side = math.prod(a.dim_of(s) for s in sites)
    if side > DENSE_CAP:
        raise DenseCapExceeded(f"support too large for exact norm (side {side}); use mode='bound'")
    return float(np.linalg.norm(dense_realize(a, sites), 2))


def auto_norm(a: LocalOperator) -> tuple[float, str]:
    """Exact norm when the support fits the dense cap, otherwise the bound."""
    try:
        return operator_norm(a, "exact"), "exact"
    except DenseCapExceeded:
        return operator_norm(a, "bound"), "bound"


# text form ---------------------------------------------------------------

def format_coefficient(c: complex) -> str:
    re_, im = float(c.real), float(c.imag)
    if im == 0.0 and not math.copysign(1.0, im) < 0:
        return repr(re_)
    if re_ == 0.0 and not math.copysign(1.0, re_) < 0:
        return repr(im) + "i"
    sign = "+" if (im > 0 or (im == 0 and math.copysign(1.0, im) > 0)) else ""
    return f"{re_!r}{sign}{im!r}i"


def parse_coefficient(text: str) -> complex:
    text = text.strip()
    if text.endswith("i"):
        body = text[:-1]
        if body in ("", "+", "-"):
            body += "1"
        text = body + "j"
        try:
            return complex(text)
        except ValueError:
            pass
        # complex() wants a real part before a signed imaginary part like "1e-3+2j"
    return complex(text)


_TERM = re.compile(r"^\s*(\S+)((?:\s+\S+:\S+)*)\s*$")


def to_text(a: LocalOperator) -> str:
    """One line per term: ``coeff  site:op site:op``; sorted deterministically."""
    lines = []
    for string in sorted(a._terms):
        c = a._terms[string]
        ops = " ".join(f"{x}:{_op_label(k, a.dim_of(x))}" for x, k in string)
        lines.append(f"{format_coefficient(c)}  {ops}".rstrip())
    return "\n".join(lines) + ("\n" if lines else "")


def parse_operator(text: str, dims: Mapping[int, int] | None = None) -> LocalOperator:
    dims = dict(dims or {})
    terms: dict[BasisString, complex] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _TERM.match(line)
        if not m:
            raise ValueError(f"line {lineno}: cannot parse term {raw!r}")
        coeff = parse_coefficient(m.group(1))
        entries = []
        for token in m.group(2).split():
            site_text, op = token.split(":", 1)
            site = int(site_text)
            k = _op_index(op, dims.get(site, 2))
            entries.append((site, k))
        if len({x for x, _ in entries}) != len(entries):
            raise ValueError(f"line {lineno}: repeated site in term")
        string = tuple(sorted(entries))
        terms[string] = terms.get(string, 0) + coeff
    return LocalOperator(terms, dims, prune=False)
