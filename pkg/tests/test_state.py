from __future__ import annotations

import numpy as np
import pytest

from noether.chains import Chain, Derivation, boundary, graded_bracket, random_chain, residual
from noether.lattice import Lattice
from noether.pauli import LocalOperator
from noether.spectral import diagonalize
from noether.state import (
    NotACycle,
    StateHomotopy,
    cycle_check,
    filter_chain,
    kitaev_density,
    max_entry,
    psi_homotopy,
    right_inverse_residual,
)

S = LocalOperator.single
P = LocalOperator.string


def tfim_density(n: int, g: float = 1.3) -> Chain:
    lattice = Lattice.chain(n)
    terms = {}
    for j in range(n):
        v = S(j, "z", 1j * g)
        if j + 1 < n:
            v = v + P({j: "x", j + 1: "x"}, 1j)
        terms[(j,)] = v
    return Chain(0, lattice, terms)


def hamiltonian(h: Chain) -> LocalOperator:
    out = LocalOperator.zero()
    for _, v in h.items():
        out = out + v
    return out.scale(-1j)


@pytest.fixture(scope="module")
def tfim():
    h = tfim_density(3)
    ctx = diagonalize(hamiltonian(h), h.lattice)
    return StateHomotopy.build(h, ctx)


def test_commuting_diagonal_density_is_unchanged():
    lattice = Lattice.chain(3)
    h = Chain(0, lattice, {(0,): S(0, "z", 1j), (1,): P({0: "z", 1: "z"}, 0.5j), (2,): S(2, "z", 2j)})
    ctx = diagonalize(hamiltonian(h), lattice)
    k = kitaev_density(h, ctx)
    for t, v in h.items():
        assert np.abs(k[t].matrix - ctx.dense(v).matrix).max() <= 1e-12


def test_kitaev_density_sums_to_the_hamiltonian(tfim):
    ctx = tfim.ctx
    total = sum((v.matrix for _, v in tfim.density.items()), np.zeros_like(ctx.hamiltonian))
    assert np.abs(total - 1j * ctx.hamiltonian).max() <= 1e-12
    for _, v in tfim.density.items():
        assert tfim.excitation(Chain(0, tfim.lattice, {(0,): v}), exact=True) <= 1e-12


def test_kitaev_density_preconditions(tfim):
    h = tfim_density(3)
    with pytest.raises(ValueError):
        kitaev_density(Chain(0, h.lattice, {(0,): S(0, "x", 1j)}), tfim.ctx)
    with pytest.raises(ValueError):
        kitaev_density(random_chain(1, h.lattice, np.random.default_rng(0)), tfim.ctx)


def test_psi_homotopy_of_zero(tfim):
    out = psi_homotopy(Chain(0, tfim.lattice), tfim)
    assert max_entry(out) == 0.0


@pytest.mark.parametrize("degree", [0, 1])
def test_psi_homotopy_inverts_boundary_on_constructed_cycles(tfim, degree, rng):
    for _ in range(3):
        b = filter_chain(random_chain(degree, tfim.lattice, rng, entries=2, terms=2), tfim.ctx, "w")
        a = boundary(b)
        bres, exc = cycle_check(a, tfim, exact=True)
        assert bres <= 1e-12 and exc <= 1e-12
        out = psi_homotopy(a, tfim)
        assert residual(boundary(out), a) <= 1e-8
        assert tfim.excitation(out, exact=True) <= 1e-8
        assert right_inverse_residual(a, tfim) <= 1e-8


def test_psi_homotopy_on_the_hamiltonian_derivation(tfim):
    f = tfim.hamiltonian_derivation()
    assert isinstance(f, Derivation)
    out = psi_homotopy(f, tfim)
    assert residual(boundary(out), f) <= 1e-8


def test_psi_homotopy_rejects_non_cycles(tfim, rng):
    not_closed = random_chain(1, tfim.lattice, rng)
    assert cycle_check(not_closed, tfim)[0] > 1e-3
    with pytest.raises(NotACycle, match="not a cycle"):
        psi_homotopy(not_closed, tfim)
    exciting = boundary(random_chain(1, tfim.lattice, rng))
    assert cycle_check(exciting, tfim)[1] > 1e-3
    with pytest.raises(NotACycle, match="excites"):
        psi_homotopy(exciting, tfim)


def test_probe_and_exact_excitation_agree_in_kind(tfim, rng):
    a = filter_chain(random_chain(0, tfim.lattice, rng), tfim.ctx, "w")
    assert tfim.excitation(a) <= 1e-12 and tfim.excitation(a, exact=True) <= 1e-12
    raw = random_chain(0, tfim.lattice, rng)
    assert tfim.excitation(raw) > 1e-3 and tfim.excitation(raw, exact=True) > 1e-3


def test_brackets_of_non_exciting_chains_do_not_excite(tfim, rng):
    x = filter_chain(random_chain(0, tfim.lattice, rng), tfim.ctx, "w")
    y = filter_chain(random_chain(1, tfim.lattice, rng), tfim.ctx, "w")
    assert tfim.excitation(graded_bracket(x, y), exact=True) <= 1e-12
    assert tfim.excitation(graded_bracket(tfim.hamiltonian_derivation(), x), exact=True) <= 1e-12
