from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from noether.chains import Chain, boundary, graded_bracket, random_chain, residual
from noether.currents import (
    ChargeDensity,
    HamiltonianDensity,
    InvarianceError,
    ambiguity_witness,
    charge_current,
    conservation_residual,
    cross_cut_operator,
    energy_current,
    homotopy_current,
    invariance_residual,
    symmetrize_density,
    u1_action,
    z2_flip,
)
from noether.lattice import ConicalPartition, Lattice
from noether.pauli import LocalOperator, dense_realize

S = LocalOperator.single
P = LocalOperator.string


def density(lattice: Lattice, terms: dict[int, LocalOperator]) -> HamiltonianDensity:
    return HamiltonianDensity.from_terms(lattice, terms)


def tfim(n: int, g: float = 2.0) -> HamiltonianDensity:
    lattice = Lattice.chain(n)
    return density(
        lattice,
        {j: S(j, "z", 1j * g) + (P({j: "x", j + 1: "x"}, 1j) if j + 1 < n else LocalOperator.zero()) for j in range(n)},
    )


def xx(n: int) -> HamiltonianDensity:
    lattice = Lattice.chain(n)
    return density(
        lattice,
        {
            j: S(j, "z", 0.3j * (j + 1))
            + (P({j: "x", j + 1: "x"}, 1j) + P({j: "y", j + 1: "y"}, 1j) if j + 1 < n else LocalOperator.zero())
            for j in range(n)
        },
    )


def test_commuting_density_has_no_energy_current():
    lattice = Lattice.chain(3)
    h = density(lattice, {j: S(j, "z", 0.5j) for j in range(3)})
    assert len(energy_current(h)) == 0


def test_energy_current_entries_match_dense_commutators():
    h = tfim(3)
    je = energy_current(h)
    sites = [0, 1, 2]
    for j in range(3):
        for k in range(3):
            if j == k:
                continue
            hk, hj = (dense_realize(h.density[(x,)], sites) for x in (k, j))
            assert np.abs(dense_realize(je[(k, j)], sites) + (hk @ hj - hj @ hk)).max() <= 1e-12


@given(st.integers(0, 2**31 - 1))
def test_energy_conservation_on_random_densities(seed):
    lattice = Lattice.chain(5)
    h = HamiltonianDensity(random_chain(0, lattice, np.random.default_rng(seed), entries=5))
    assert conservation_residual(energy_current(h), h, h.density) <= 1e-12


def test_zz_density_carries_no_charge_current():
    lattice = Lattice.chain(4)
    h = density(lattice, {j: P({j: "z", j + 1: "z"}, 1j) for j in range(3)})
    assert len(charge_current(h, ChargeDensity.spin_z(lattice))) == 0


def test_xx_charge_current_is_conserved():
    h = xx(6)
    q = ChargeDensity.spin_z(h.lattice)
    j = charge_current(h, q)
    assert len(j) > 0
    assert conservation_residual(j, h, q.density) <= 1e-12


def test_disjoint_charge_gives_zero_current():
    lattice = Lattice.chain(4)
    h = density(lattice, {0: P({0: "x", 1: "x"}, 1j)})
    q = ChargeDensity.spin_z(lattice, [3])
    assert len(charge_current(h, q)) == 0


def test_non_invariant_density_is_rejected():
    h = tfim(3)
    with pytest.raises(InvarianceError) as err:
        charge_current(h, ChargeDensity.spin_z(h.lattice))
    assert err.value.residual > 1e-10


def test_closedness_before_solving():
    h = xx(5)
    q = ChargeDensity.spin_z(h.lattice)
    for rhs in (graded_bracket(h.derivation, h.density), graded_bracket(h.derivation, q.density)):
        assert boundary(rhs).size() <= 1e-12


def test_symmetrize_leaves_diagonal_density_unchanged():
    lattice = Lattice.chain(3)
    h = density(lattice, {0: P({0: "z", 1: "z"}, 1j), 2: S(2, "z", 0.4j)})
    q = ChargeDensity.spin_z(lattice)
    out = symmetrize_density(h, u1_action(q), q)
    assert residual(out.density, h.density) <= 1e-12


def test_symmetrize_ising_under_spin_flip():
    lattice = Lattice.chain(3)
    h = density(lattice, {0: P({0: "z", 1: "z"}, 1j), 1: P({1: "z", 2: "z"}, 1j), 2: S(2, "x", 0.5j)})
    out = symmetrize_density(h, z2_flip(lattice))
    assert residual(out.density, h.density) <= 1e-12


def test_u1_averaging_restores_invariance():
    base = xx(4)
    lattice = base.lattice
    q = ChargeDensity.spin_z(lattice)
    # move a non-invariant piece between neighbouring densities; the total is unchanged
    shift = P({0: "x", 1: "x"}, 0.2j) - P({0: "y", 1: "y"}, 0.2j)
    terms = {j: base.density[(j,)] for j in range(4)}
    terms[0] = terms[0] + shift
    terms[1] = terms[1] - shift
    h = density(lattice, terms)
    assert invariance_residual(h, q) > 1e-3
    out = symmetrize_density(h, u1_action(q), q)
    assert invariance_residual(out, q) <= 1e-10
    assert (out.hamiltonian() - h.hamiltonian()).max_abs() <= 1e-12


def test_symmetrize_rejects_non_invariant_total():
    h = tfim(3)
    with pytest.raises(InvarianceError):
        symmetrize_density(h, u1_action(ChargeDensity.spin_z(h.lattice)))


def test_ambiguity_witness_cases(rng):
    h = xx(4)
    q = ChargeDensity.spin_z(h.lattice)
    j = charge_current(h, q)
    assert len(ambiguity_witness(j, j)) == 0
    shifted = j + boundary(random_chain(2, h.lattice, rng))
    assert residual(boundary(ambiguity_witness(shifted, j)), shifted - j) <= 1e-12
    alt = homotopy_current(h, q.density)
    assert residual(boundary(ambiguity_witness(j, alt)), j - alt) <= 1e-12
    with pytest.raises(InvarianceError):
        ambiguity_witness(j, j + random_chain(1, h.lattice, rng))


def test_cross_cut_current_flips_with_orientation():
    h = xx(6)
    j = charge_current(h, ChargeDensity.spin_z(h.lattice))
    part = ConicalPartition.line(2.5)
    forward = cross_cut_operator(j, part.regions(h.lattice))
    backward = cross_cut_operator(j, part.flipped().regions(h.lattice))
    assert not forward.is_zero()
    assert (forward + backward).is_zero()


def test_density_from_hamiltonian_round_trip():
    lattice = Lattice.chain(3)
    h_op = P({0: "x", 1: "x"}) + S(2, "z", 0.5)
    h = HamiltonianDensity.from_hamiltonian(lattice, h_op)
    assert (h.hamiltonian() - h_op).is_zero()
    assert isinstance(h.density, Chain) and h.density.is_valid()


def test_charge_density_validation():
    lattice = Lattice.chain(2)
    with pytest.raises(ValueError):
        ChargeDensity(Chain(0, lattice, {(0,): S(0, "z")}))
