"""Energy and charge currents as solutions of conservation equations.

Densities are 0-chains of anti-self-adjoint operators; the self-adjoint
Hamiltonian is ``H_op = -i sum_j h_j`` so that its derivation acts as
``A -> [sum_j h_j, A]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.linalg import expm

from .chains import Chain, Derivation, Operator, boundary, contract_total, graded_bracket, homotopy, residual
from .lattice import Lattice
from .pauli import LocalOperator, dense_realize, from_dense

INVARIANCE_TOL = 1e-10


class InvarianceError(ValueError):
    """Raised when a symmetry precondition fails; carries the residual."""

    def __init__(self, message: str, residual: float) -> None:
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


def _bound_size(x: Chain | Derivation) -> float:
    """Largest coefficient-norm over entries, the upper-bound norm used for invariance checks."""
    vals = [v.coefficient_norm() if isinstance(v, LocalOperator) else v.norm("bound") for _, v in x.items()]
    return max(vals, default=0.0)


@dataclass(frozen=True)
class HamiltonianDensity:
    """A 0-chain ``h`` together with its derivation ``H = dh``."""

    density: Chain

    def __post_init__(self) -> None:
        if self.density.degree != 0:
            raise ValueError("a Hamiltonian density is a 0-chain")

    @property
    def lattice(self) -> Lattice:
        return self.density.lattice

    @cached_property
    def derivation(self) -> Derivation:
        return boundary(self.density)

    def total(self) -> Operator:
        return self.derivation.total()

    def hamiltonian(self) -> LocalOperator:
        """Self-adjoint ``H_op = -i sum_j h_j``."""
        out = LocalOperator.zero()
        for _, v in self.density.items():
            out = out + v
        return out.scale(-1j)

    @classmethod
    def from_terms(cls, lattice: Lattice, terms: Mapping[int, LocalOperator]) -> "HamiltonianDensity":
        return cls(Chain(0, lattice, {(j,): v for j, v in terms.items()}))

    @classmethod
    def from_hamiltonian(cls, lattice: Lattice, h_op: LocalOperator) -> "HamiltonianDensity":
        """Split a self-adjoint ``H_op`` by assigning each basis string to its smallest site."""
        store: dict[int, dict] = {}
        for string, c in h_op.terms.items():
            if not string:
                continue
            store.setdefault(string[0][0], {})[string] = 1j * c
        dims = dict(h_op.dims)
        return cls.from_terms(lattice, {j: LocalOperator(t, dims) for j, t in store.items()})


@dataclass(frozen=True)
class ChargeDensity:
    """A 0-chain of traceless anti-self-adjoint on-site charges."""

    density: Chain
    group: str = "U1"

    def __post_init__(self) -> None:
        if self.density.degree != 0:
            raise ValueError("a charge density is a 0-chain")
        for _, v in self.density.items():
            if not (v.is_anti_hermitian(1e-12) and v.is_traceless(1e-12)):
                raise ValueError("charge density values must be traceless and anti-self-adjoint")

    @property
    def lattice(self) -> Lattice:
        return self.density.lattice

    @cached_property
    def derivation(self) -> Derivation:
        return boundary(self.density)

    @classmethod
    def spin_z(cls, lattice: Lattice, sites: Iterable[int] | None = None) -> "ChargeDensity":
        """``q_j = (i/2) sigma^z_j``."""
        chosen = lattice.site_ids if sites is None else sites
        return cls(Chain(0, lattice, {(j,): LocalOperator.single(j, "z", 0.5j) for j in chosen}))


def invariance_residual(h: HamiltonianDensity, q: ChargeDensity) -> float:
    """Size of ``{dq, h}``: does the total charge commute with every ``h_j``?"""
    return _bound_size(graded_bracket(q.derivation, h.density))


def energy_current(h: HamiltonianDensity) -> Chain:
    """``j^E = -1/2 {h, h}``, so that ``j^E_{jk} = -[h_j, h_k]``."""
    return graded_bracket(h.density, h.density).scale(-0.5)


def charge_current(h: HamiltonianDensity, q: ChargeDensity, tol: float = INVARIANCE_TOL) -> Chain:
    """``j = -{h, q}``; requires the density to be charge invariant."""
    res = invariance_residual(h, q)
    if res > tol:
        raise InvarianceError("Hamiltonian density is not invariant under the charge", res)
    return -graded_bracket(h.density, q.density)


def conservation_residual(current: Chain, h: HamiltonianDensity, density: Chain) -> float:
    """``|dj + {H, density}|`` entrywise."""
    return residual(boundary(current), -graded_bracket(h.derivation, density))


# group averaging ---------------------------------------------------------

@dataclass(frozen=True)
class OnsiteGroupAction:
    """Finite list of group elements, each a map ``site -> on-site unitary``."""

    elements: tuple[Callable[[int], np.ndarray], ...]
    weights: tuple[float, ...] = field(default=())
    name: str = "group"

    def weight(self, k: int) -> float:
        return self.weights[k] if self.weights else 1.0 / len(self.elements)


def u1_action(q: ChargeDensity, points: int = 64) -> OnsiteGroupAction:
    """Equally spaced circle rule for ``exp(theta q_j)``, ``theta in [0, 4 pi)``.

    Spin-1/2 charges ``(i/2) sigma^z`` close only after ``4 pi``.
    """
    mats = {}
    for (j,), v in q.density.items():
        mats[j] = dense_realize(v, [j])

    def element(theta: float) -> Callable[[int], np.ndarray]:
        def u(site: int) -> np.ndarray:
            if site in mats:
                return expm(theta * mats[site])
            return np.eye(q.lattice.dim_of[site])

        return u

    thetas = 4 * np.pi * np.arange(points) / points
    return OnsiteGroupAction(tuple(element(float(t)) for t in thetas), name="U1")


def z2_flip(lattice: Lattice) -> OnsiteGroupAction:
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    return OnsiteGroupAction((lambda s: np.eye(2, dtype=complex), lambda s: sx), name="Z2")


def conjugate_onsite(a: LocalOperator, u: Callable[[int], np.ndarray]) -> LocalOperator:
    """``U a U^*`` for a product ``U = prod_j u(j)``; only the support matters."""
    order = sorted(a.support)
    if not order:
        return a
    dims = {s: a.dim_of(s) for s in order}
    mat = dense_realize(a, order, dims)
    big = np.eye(1, dtype=complex)
    for s in order:
        big = np.kron(big, u(s))
    return from_dense(big @ mat @ big.conj().T, order, dims)


def symmetrize_density(
    h: HamiltonianDensity,
    action: OnsiteGroupAction,
    charge: ChargeDensity | None = None,
    tol: float = INVARIANCE_TOL,
) -> HamiltonianDensity:
    """Average every ``h_j`` over the group; the total must already be invariant."""
    total = h.hamiltonian()
    worst = 0.0
    for u in action.elements:
        worst = max(worst, (conjugate_onsite(total, u) - total).coefficient_norm())
    if worst > tol:
        raise InvarianceError("Hamiltonian is not invariant under the group action", worst)
    store = {}
    for t, v in h.density.items():
        acc = LocalOperator.zero()
        for k, u in enumerate(action.elements):
            acc = acc + conjugate_onsite(v, u).scale(action.weight(k))
        store[t] = acc
    out = HamiltonianDensity(Chain(0, h.lattice, store))
    if charge is not None:
        res = invariance_residual(out, charge)
        if res > tol:
            raise InvarianceError("averaged density is still not invariant", res)
    return out


# ambiguity -------------------------------------------------------------------

def ambiguity_witness(j1: Chain, j2: Chain, tol: float = INVARIANCE_TOL) -> Chain:
    """2-chain ``m`` with ``dm = j1 - j2``, built with the contracting homotopy."""
    if j1.degree != 1 or j2.degree != 1:
        raise ValueError("currents are 1-chains")
    diff = j1 - j2
    gap = boundary(diff).size()
    if gap > tol:
        raise InvarianceError("currents have different boundaries", gap)
    m = homotopy(diff)
    res = residual(boundary(m), diff)
    if res > tol:
        raise InvarianceError("homotopy witness failed to reproduce the difference", res)
    return m


def homotopy_current(h: HamiltonianDensity, density: Chain) -> Chain:
    """Alternative current ``h(-{H, density})`` from the contracting homotopy."""
    return homotopy(-graded_bracket(h.derivation, density))


def cross_cut_operator(current: Chain, regions: Sequence[Iterable[int]]) -> Operator:
    """Contraction ``j_{A_0 A_1}`` of a current against a two-region partition."""
    return contract_total(current, regions)
