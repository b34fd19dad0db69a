"""The subcomplex of chains that do not excite a gapped ground state.

Componentwise filters give two maps on chains and derivations:
``t(a) = I_w(a)`` and ``I(a) = I_W(a)``, related by ``a - I({H, a}) = t(a)``.
With the filtered (Kitaev) density ``k`` the state homotopy is

    h_psi(a) = t(h(a)) + I({k, a}),

and ``d h_psi(a) = a`` whenever ``a`` is a cycle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

from .chains import Chain, ChainLike, Derivation, Operator, boundary, graded_bracket, homotopy, op_size, residual
from .dense import DenseOperator
from .pauli import LocalOperator
from .spectral import SpectralContext, default_probes, does_not_excite, excitation_leakage, filter_operator

PRECONDITION_TOL = 1e-10
CYCLE_TOL = 1e-8


class NotACycle(ValueError):
    """The input to the state homotopy has a nonzero boundary or excites the state."""


def _total(a: Chain) -> Operator:
    out: Operator = LocalOperator.zero()
    for _, v in a.items():
        out = v + out if isinstance(v, DenseOperator) else out + v
    return out


def filter_chain(a: ChainLike, ctx: SpectralContext, which: str = "w") -> ChainLike:
    """Apply a spectral filter entrywise; a derivation is filtered through its total."""
    if isinstance(a, Derivation):
        return Derivation.from_operator(a.lattice, filter_operator(a.total(), ctx, which))
    return a.map(lambda v: filter_operator(v, ctx, which))


def kitaev_density(h: Chain, ctx: SpectralContext, tol: float = PRECONDITION_TOL) -> Chain:
    """Entrywise ``I_w`` of a Hamiltonian density; its boundary is still ``H``."""
    if h.degree != 0:
        raise ValueError("a density is a 0-chain")
    mismatch = ctx.dense(_total(h)).matrix - 1j * ctx.hamiltonian
    size = float(abs(mismatch).max())
    if size > tol:
        raise ValueError(f"density does not sum to i*H_op (residual {size:.3e})")
    return filter_chain(h, ctx, "w")


@dataclass(frozen=True, eq=False)
class StateHomotopy:
    """Spectral context with its filtered density and probe policy."""

    ctx: SpectralContext
    density: Chain
    probes: Callable[[Operator, SpectralContext], Sequence[Operator]] | None = None

    @classmethod
    def build(cls, h: Chain, ctx: SpectralContext, probes=None) -> "StateHomotopy":
        return cls(ctx, kitaev_density(h, ctx), probes)

    @property
    def lattice(self):
        return self.ctx.lattice

    def t(self, a: ChainLike) -> ChainLike:
        return filter_chain(a, self.ctx, "w")

    def integral(self, a: ChainLike) -> ChainLike:
        return filter_chain(a, self.ctx, "W")

    def s(self, a: ChainLike) -> Chain:
        """``I({k, a})``."""
        return self.integral(graded_bracket(self.density, a))

    def hamiltonian_derivation(self) -> Derivation:
        return boundary(self.density)

    def excitation(self, a: ChainLike, exact: bool = False) -> float:
        """Largest excitation over chain entries; a derivation is judged by its total."""
        values = [a.total()] if isinstance(a, Derivation) else [v for _, v in a.items()]
        worst = 0.0
        for v in values:
            if exact:
                worst = max(worst, excitation_leakage(v, self.ctx))
            else:
                probes = self.probes(v, self.ctx) if self.probes else default_probes(v, self.ctx)
                worst = max(worst, does_not_excite(v, self.ctx, probes))
        return worst

    def expectations(self, v: Operator) -> dict:
        return self.ctx.brick_expectations(v)


def cycle_check(a: ChainLike, sh: StateHomotopy, exact: bool = False) -> tuple[float, float]:
    """``(|da|, excitation)``; both small means ``a`` is a cycle of the state subcomplex."""
    bres = 0.0 if isinstance(a, Derivation) else boundary(a).size()
    return bres, sh.excitation(a, exact)


def psi_homotopy(a: ChainLike, sh: StateHomotopy, tol: float = CYCLE_TOL, check: bool = True, exact: bool = True) -> Chain:
    """Right inverse of the boundary on cycles that do not excite the state."""
    if check:
        bres, exc = cycle_check(a, sh, exact)
        if bres > tol:
            raise NotACycle(f"input is not a cycle (boundary residual {bres:.3e})")
        if exc > tol:
            raise NotACycle(f"input excites the state (residual {exc:.3e})")
    return sh.t(homotopy(a)) + sh.s(a)


def right_inverse_residual(a: ChainLike, sh: StateHomotopy) -> float:
    return residual(boundary(psi_homotopy(a, sh, check=False)), a)


def max_entry(a: ChainLike) -> float:
    return max((op_size(v) for _, v in a.items()), default=0.0)
