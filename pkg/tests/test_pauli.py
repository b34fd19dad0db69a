from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from noether.chains import random_operator
from noether.lattice import Brick, Lattice, sub_bricks
from noether.pauli import (
    DenseCapExceeded,
    LocalOperator,
    brick_component,
    commutator,
    conditional_expectation,
    dense_realize,
    from_dense,
    multiply,
    onsite_basis,
    operator_norm,
    parse_operator,
    to_text,
    trace_state,
)

from oracles import I2, SX, SY, SZ, kron_all

S = LocalOperator.single
P = LocalOperator.string
SITES3 = [1, 2, 3]
PAULI = {"x": SX, "y": SY, "z": SZ}


def oracle(ops: dict[int, str], sites=SITES3) -> np.ndarray:
    return kron_all([PAULI[ops[s]] if s in ops else I2 for s in sites])


def chain3() -> Lattice:
    return Lattice.from_sites([(1, (0.5,)), (2, (1.5,)), (3, (2.5,))], brick_covering=True)


def close(a: LocalOperator, b: LocalOperator, tol: float = 1e-12) -> bool:
    return (a - b).max_abs() <= tol


def test_single_site_products():
    assert close(multiply(S(0, "x"), S(0, "y")), S(0, "z", 1j))
    assert close(multiply(S(0, "x"), S(0, "x")), LocalOperator.identity())


def test_string_product_matches_dense_oracle():
    a, b = P({1: "z", 2: "x"}), P({2: "x", 3: "y"})
    prod = multiply(a, b)
    assert close(prod, P({1: "z", 3: "y"}))
    assert np.allclose(dense_realize(prod, SITES3), oracle({1: "z", 2: "x"}) @ oracle({2: "x", 3: "y"}))


@pytest.mark.parametrize(
    "a, b, expected",
    [
        (S(0, "x"), S(0, "y"), S(0, "z", 2j)),
        (S(0, "x"), S(1, "x"), LocalOperator.zero()),
        (P({1: "z", 2: "x"}), P({2: "x", 3: "y"}), LocalOperator.zero()),
    ],
)
def test_commutator_examples(a, b, expected):
    assert close(commutator(a, b), expected)


@pytest.mark.parametrize(
    "op, expected",
    [(LocalOperator.identity(), 1), (S(0, "x"), 0), (LocalOperator.identity(3) + S(1, "z", 2), 3)],
)
def test_trace_state(op, expected):
    assert trace_state(op) == expected


def test_conditional_expectation_examples():
    assert conditional_expectation(P({1: "x", 2: "x"}), {1}).is_zero()
    assert close(conditional_expectation(S(1, "z") + P({1: "x", 2: "x"}), {1}), S(1, "z"))


def _basis_average(matrix: np.ndarray, sites: list[int], average_over: set[int]) -> np.ndarray:
    """Average over conjugation by the on-site basis at each site in ``average_over``."""
    out = matrix
    for s in average_over:
        pos = sites.index(s)
        acc = np.zeros_like(out)
        for u in (I2, SX, SY, SZ):
            full = kron_all([u if k == pos else I2 for k in range(len(sites))])
            acc += full @ out @ full.conj().T
        out = acc / 4
    return out


def test_conditional_expectation_matches_unitary_average(rng):
    lattice = chain3()
    for _ in range(10):
        a = random_operator(lattice, rng, terms=6, max_span=None)
        for keep in ({1}, {2, 3}, {1, 3}):
            ref = _basis_average(dense_realize(a, SITES3), SITES3, set(SITES3) - keep)
            assert np.abs(dense_realize(conditional_expectation(a, keep), SITES3) - ref).max() <= 1e-12


def test_brick_component_single_site():
    lattice = Lattice.chain(3)
    a = S(1, "x")
    assert close(brick_component(a, Brick((1,), (2,)), lattice), a)
    assert brick_component(a, Brick((0,), (2,)), lattice).is_zero()
    assert brick_component(a, Brick((2,), (3,)), lattice).is_zero()


def test_brick_components_reconstruct_and_are_primitive(rng):
    lattice = Lattice.grid(2, 2)
    for _ in range(10):
        a = random_operator(lattice, rng, terms=5, max_span=None, max_sites=4)
        total = LocalOperator.zero()
        for y in sub_bricks(lattice.hull()):
            comp = brick_component(a, y, lattice)
            total = total + comp
            assert close(comp, a.brick_components(lattice).get(y, LocalOperator.zero()), 0.0)
            for z in sub_bricks(y):
                if z != y:
                    assert brick_component(comp, z, lattice).is_zero()
        assert (total - a).is_zero()


@pytest.mark.parametrize(
    "op, mode, expected",
    [
        (S(0, "x"), "exact", 1.0),
        (S(0, "x") + S(0, "z"), "exact", math.sqrt(2)),
        (S(0, "x") + S(0, "z"), "bound", 2.0),
        (LocalOperator.zero(), "exact", 0.0),
    ],
)
def test_operator_norm(op, mode, expected):
    assert operator_norm(op, mode) == pytest.approx(expected, abs=1e-12)


def test_exact_norm_cap():
    big = P({k: "x" for k in range(13)})
    with pytest.raises(DenseCapExceeded):
        operator_norm(big)
    assert operator_norm(big, "bound") == 1.0


def test_dense_realize_examples():
    assert np.array_equal(dense_realize(S(1, "z"), [1]), np.diag([1, -1]).astype(complex))
    assert np.array_equal(dense_realize(LocalOperator.identity(), [0, 1]), np.eye(4))
    with pytest.raises(ValueError):
        dense_realize(S(5, "x"), [1, 2])


def test_dense_realize_site_order():
    m = dense_realize(P({1: "x", 3: "z"}), [3, 1, 2])
    assert np.array_equal(m, kron_all([SZ, SX, I2]))


def test_dense_homomorphism_and_round_trip(rng):
    lattice = chain3()
    for _ in range(20):
        a = random_operator(lattice, rng, terms=4, max_span=None)
        b = random_operator(lattice, rng, terms=4, max_span=None)
        da, db = dense_realize(a, SITES3), dense_realize(b, SITES3)
        assert np.abs(dense_realize(multiply(a, b), SITES3) - da @ db).max() <= 1e-12
        assert close(from_dense(da, SITES3), a)


def test_algebra_identities(rng):
    lattice = Lattice.chain(4)
    for _ in range(15):
        a, b, c = (random_operator(lattice, rng, terms=3, max_span=None) for _ in range(3))
        assert close(multiply(multiply(a, b), c), multiply(a, multiply(b, c)))
        assert close(commutator(a, b), -commutator(b, a))
        jac = commutator(a, commutator(b, c)) + commutator(b, commutator(c, a)) + commutator(c, commutator(a, b))
        assert jac.max_abs() <= 1e-12
        assert abs(trace_state(multiply(a, b)) - trace_state(multiply(b, a))) <= 1e-12


@given(st.sets(st.integers(0, 3)), st.sets(st.integers(0, 3)), st.integers(0, 2**31 - 1))
def test_conditional_expectations_compose(x, y, seed):
    a = random_operator(Lattice.chain(4), np.random.default_rng(seed), terms=5, max_span=None)
    assert conditional_expectation(conditional_expectation(a, x), y).terms == conditional_expectation(a, x & y).terms


@given(st.integers(0, 2**31 - 1))
def test_conditional_expectation_contracts_norm(seed):
    rng = np.random.default_rng(seed)
    a = random_operator(Lattice.chain(4), rng, terms=5, max_span=None)
    keep = set(rng.choice(4, size=2, replace=False).tolist())
    assert conditional_expectation(a, keep).norm() <= a.norm() + 1e-12


def test_anti_hermitian_flag(rng):
    a = random_operator(Lattice.chain(3), rng)
    assert a.is_anti_hermitian() and a.is_traceless()
    assert not S(0, "x").is_anti_hermitian()


@pytest.mark.parametrize("d", [2, 3, 4])
def test_onsite_basis_orthonormal(d):
    basis = onsite_basis(d)
    assert basis.shape == (d * d, d, d)
    gram = np.einsum("aij,bji->ab", basis, basis) / d
    assert np.allclose(gram, np.eye(d * d), atol=1e-12)
    assert all(np.allclose(e, e.conj().T) for e in basis)


def test_qutrit_commutator_matches_dense(rng):
    dims = {0: 3, 1: 3}
    a = LocalOperator({((0, 1), (1, 4)): 0.3j, ((0, 7),): 1.1j}, dims)
    b = LocalOperator({((0, 2),): 0.5j, ((1, 3),): -0.2j}, dims)
    da, db = dense_realize(a, [0, 1]), dense_realize(b, [0, 1])
    assert np.abs(dense_realize(commutator(a, b), [0, 1]) - (da @ db - db @ da)).max() <= 1e-12


@pytest.mark.parametrize(
    "text",
    ["0.5i  1:z 2:x\n", "1.0  0:x\n-2.5  3:y\n", "0.25-1.5i  1:z\n", ""],
)
def test_operator_text_round_trip(text):
    op = parse_operator(text)
    assert to_text(op) == text
    assert to_text(parse_operator(to_text(op))) == to_text(op)


def test_operator_text_errors():
    with pytest.raises(ValueError):
        parse_operator("1.0 1:x 1:y")
    with pytest.raises(ValueError):
        parse_operator("1.0 1:q")
