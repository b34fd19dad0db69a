from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from noether.chains import (
    MAX_DEGREE,
    Chain,
    Derivation,
    boundary,
    bracket_identity_residuals,
    chain_to_text,
    contract,
    contract_total,
    derived_bracket,
    graded_bracket,
    homotopy,
    homotopy_contraction_expectation,
    parse_chain,
    random_chain,
    random_operator,
    residual,
    summable_total,
)
from noether.lattice import Brick, ConicalPartition, Lattice
from noether.pauli import LocalOperator, commutator, dense_realize

S = LocalOperator.single
P = LocalOperator.string
seeds = st.integers(0, 2**31 - 1)


def same(a, b, tol: float = 1e-12) -> bool:
    return (a - b).max_abs() <= tol


def test_boundary_of_a_single_pair():
    lattice = Lattice.chain(3)
    x = S(0, "x", 1j)
    db = boundary(Chain(1, lattice, {(0, 2): x}))
    assert same(db[(2,)], x)
    assert same(db[(0,)], -x)
    assert db.get((1,)) is None


def test_boundary_of_onsite_density_is_unit_brick_derivation():
    lattice = Lattice.chain(2)
    h = Chain(0, lattice, {(j,): S(j, "z", 0.5j) for j in range(2)})
    dh = boundary(h)
    assert isinstance(dh, Derivation)
    assert set(dh.values) == {Brick((0,), (1,)), Brick((1,), (2,))}
    assert same(dh[Brick((1,), (2,))], S(1, "z", 0.5j))
    assert same(summable_total(dh), S(0, "z", 0.5j) + S(1, "z", 0.5j))


def test_homotopy_spreads_a_brick_over_its_sites():
    lattice = Lattice.chain(3)
    value = P({0: "x", 1: "y"}, 1j)
    f = Derivation(lattice, {Brick((0,), (2,)): value})
    h = homotopy(f)
    assert h.degree == 0
    assert same(h[(0,)], value.scale(0.5)) and same(h[(1,)], value.scale(0.5))
    assert h.get((2,)) is None


@pytest.mark.parametrize("lattice", [Lattice.chain(8), Lattice.grid(2, 3), Lattice.grid(3, 3)], ids=["chain8", "grid2x3", "grid3x3"])
@pytest.mark.parametrize("degree", [0, 1, 2])
def test_complex_identities(lattice, degree, rng):
    for _ in range(5):
        a = random_chain(degree, lattice, rng)
        da = boundary(a)
        if degree >= 1:
            assert boundary(da).size() == 0.0
        assert residual(homotopy(da) + boundary(homotopy(a)), a) <= 1e-12
        f = boundary(random_chain(0, lattice, rng))
        assert residual(boundary(homotopy(f)), f) <= 1e-12


@given(seeds)
def test_chain_values_stay_valid(seed):
    rng = np.random.default_rng(seed)
    lattice = Lattice.grid(2, 2)
    a = random_chain(1, lattice, rng)
    assert a.is_valid() and homotopy(a).is_valid() and boundary(a).is_valid()


def test_skew_symmetric_lookup():
    lattice = Lattice.chain(3)
    x = S(1, "z", 1j)
    c = Chain(2, lattice, {(2, 0, 1): x})
    assert same(c[(0, 1, 2)], x)
    assert same(c[(1, 0, 2)], -x)
    assert c[(0, 0, 1)].is_zero()


def test_degree_cap():
    with pytest.raises(ValueError):
        Chain(MAX_DEGREE + 1, Lattice.chain(8))
    with pytest.raises(ValueError):
        Chain(1, Lattice.chain(3), {(0, 1, 2): S(0, "x", 1j)})


def test_bracket_of_density_with_itself():
    lattice = Lattice.chain(3)
    h = Chain(0, lattice, {(0,): S(0, "x", 1j), (1,): P({0: "z", 1: "y"}, 1j), (2,): S(2, "y", 1j)})
    hh = graded_bracket(h, h)
    for j in range(3):
        for k in range(3):
            if j != k:
                assert same(hh[(j, k)], commutator(h[(j,)], h[(k,)]).scale(2))


def test_derivation_on_chain_matches_dense_oracle(rng):
    lattice = Lattice.chain(4)
    f = Derivation(lattice, {Brick((1,), (3,)): P({1: "x", 2: "x"}, 1j)})
    g = random_chain(0, lattice, rng, entries=3)
    out = graded_bracket(f, g)
    sites = list(range(4))
    ftot = dense_realize(f.total(), sites)
    for t, v in g.items():
        gm = dense_realize(v, sites)
        assert np.abs(dense_realize(out[t], sites) - (ftot @ gm - gm @ ftot)).max() <= 1e-12


def test_commuting_derivations_bracket_to_zero():
    lattice = Lattice.chain(3)
    f = Derivation(lattice, {Brick((0,), (1,)): S(0, "z", 1j)})
    g = Derivation(lattice, {Brick((1,), (3,)): P({1: "x", 2: "y"}, 1j)})
    assert len(graded_bracket(f, g)) == 0


def _tfim(lattice: Lattice) -> Chain:
    n = lattice.n_sites
    return Chain(
        0,
        lattice,
        {(j,): S(j, "z", 2j) + (P({j: "x", j + 1: "x"}, 1j) if j + 1 < n else LocalOperator.zero()) for j in range(n)},
    )


def test_derived_bracket_equals_bracket_with_boundary(rng):
    lattice = Lattice.chain(3)
    f = _tfim(lattice)
    g = random_chain(0, lattice, rng)
    assert residual(derived_bracket(f, g), graded_bracket(boundary(f), g)) <= 1e-12
    same_commuting = Chain(0, lattice, {(j,): S(j, "z", 1j) for j in range(3)})
    assert len(derived_bracket(same_commuting, same_commuting)) == 0


def test_antisymmetrized_derived_bracket_boundary(rng):
    lattice = Lattice.chain(3)
    f, g = random_chain(0, lattice, rng), random_chain(0, lattice, rng)
    lhs = boundary(derived_bracket(f, g) - derived_bracket(g, f)).total()
    rhs = graded_bracket(boundary(f), boundary(g)).total().scale(2)
    assert same(lhs, rhs)


@given(seeds)
def test_graded_lie_identities(seed):
    rng = np.random.default_rng(seed)
    lattice = Lattice.chain(5)
    degrees = [(0, 0, 0), (0, 1, 0), (1, 0, 1), (1, 1, 0)][seed % 4]
    x, y, z = (random_chain(d, lattice, rng) for d in degrees)
    assert max(bracket_identity_residuals(x, y, z).values()) <= 1e-12


def test_bracket_identities_with_a_derivation(rng):
    lattice = Lattice.chain(4)
    f = boundary(random_chain(0, lattice, rng))
    x, y = random_chain(0, lattice, rng), random_chain(1, lattice, rng)
    res = bracket_identity_residuals(f, x, y)
    assert set(res) == {"skew", "jacobi"}
    assert max(res.values()) <= 1e-12


def test_injectivity_on_boundaries(rng):
    lattice = Lattice.chain(4)
    a = boundary(random_chain(1, lattice, rng))
    assert len(boundary(a)) == 0
    probe = random_operator(lattice, rng, terms=6, max_span=None)
    action = LocalOperator.zero()
    for _, v in a.items():
        action = action + commutator(v, probe)
    assert action.max_abs() <= 1e-12


def test_contract_single_region():
    lattice = Lattice.chain(3)
    h = Chain(0, lattice, {(j,): S(j, "z", 1j) for j in range(3)})
    d = contract(h, [{1}])
    assert same(summable_total(d), S(1, "z", 1j))


def test_contract_current_across_a_cut():
    lattice = Lattice.chain(4)
    vals = {(0, 1): S(0, "x", 1j), (1, 2): S(1, "y", 1j), (2, 3): S(3, "z", 1j), (0, 3): S(2, "x", 1j)}
    j = Chain(1, lattice, vals)
    left, right = ConicalPartition.line(2.0).regions(lattice)
    by_hand = S(1, "y", 1j) + S(2, "x", 1j)
    assert same(contract_total(j, [left, right]), by_hand)
    assert same(contract_total(j, [right, left]), -by_hand)


def test_contract_rejects_overlap_and_wrong_count():
    lattice = Lattice.chain(3)
    c = Chain(1, lattice, {(0, 1): S(0, "x", 1j)})
    with pytest.raises(ValueError):
        contract_total(c, [{0, 1}, {1, 2}])
    with pytest.raises(ValueError):
        contract_total(c, [{0}])


@given(seeds, st.floats(0.2, 2.8), st.floats(0.2, 2.8), st.floats(0.0, 6.28))
def test_stokes_on_conical_partitions(seed, ax, ay, start):
    rng = np.random.default_rng(seed)
    grid = Lattice.grid(3, 3)
    c = random_chain(3, grid, rng, entries=3)
    regions = ConicalPartition.plane((ax, ay), start).regions(grid)
    assert contract_total(boundary(c), regions).is_zero()
    chain = Lattice.chain(6)
    c1 = random_chain(2, chain, rng, entries=3)
    assert contract_total(boundary(c1), ConicalPartition.line(ax + 1).regions(chain)).is_zero()


def test_homotopy_contraction_expectation_matches_full_chain(rng):
    lattice = Lattice.grid(3, 3)
    regions = ConicalPartition.plane((1.2, 1.3)).regions(lattice)
    a = random_chain(1, lattice, rng, entries=6)
    weights = {}

    def expectations(v):
        # a linear functional: a fixed random weight per basis string
        out = {}
        for y, comp in v.brick_components(lattice).items():
            out[y] = sum(c * weights.setdefault(s, complex(*rng.normal(size=2))) for s, c in comp.terms.items())
        return out

    full = contract_total(homotopy(a), regions)
    direct = sum(c * weights.setdefault(s, complex(*rng.normal(size=2))) for s, c in full.terms.items())
    assert abs(homotopy_contraction_expectation(a, regions, expectations) - direct) <= 1e-12


@pytest.mark.parametrize("degree", [-1, 0, 1, 2])
def test_text_round_trip(degree, rng):
    lattice = Lattice.grid(2, 2)
    x = boundary(random_chain(0, lattice, rng)) if degree == -1 else random_chain(degree, lattice, rng)
    text = chain_to_text(x)
    back = parse_chain(text, lattice, degree)
    assert chain_to_text(back) == text
    assert residual(back, x) == 0.0


def test_text_errors():
    with pytest.raises(ValueError):
        parse_chain("0 1 1.0i 0:x", Lattice.chain(2))
