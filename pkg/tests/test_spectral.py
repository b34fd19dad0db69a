from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.linalg

from noether.chains import random_operator
from noether.dense import DenseSpace
from noether.lattice import Lattice
from noether.pauli import LocalOperator
from noether.spectral import (
    CircuitLayer,
    DegenerateGroundState,
    FilterResponse,
    LGPSchedule,
    circuit_evolve,
    diagonalize,
    does_not_excite,
    excitation_leakage,
    filter_derivative,
    filter_operator,
    filter_with,
    heisenberg_evolve,
    inverse_schedule,
    lgp_evolve,
    lieb_robinson_probe,
    lr_slope,
)

from oracles import SX, SY, SZ

S = LocalOperator.single
P = LocalOperator.string


def tfim_op(n: int, g: float = 1.3) -> LocalOperator:
    h = LocalOperator.zero()
    for j in range(n):
        h = h + S(j, "z", g)
        if j + 1 < n:
            h = h + P({j: "x", j + 1: "x"})
    return h


def xx_op(n: int) -> LocalOperator:
    h = LocalOperator.zero()
    for j in range(n):
        h = h + S(j, "z", 0.4 + 0.3 * j)
        if j + 1 < n:
            h = h + P({j: "x", j + 1: "x"}) + P({j: "y", j + 1: "y"})
    return h


def matrix(op, ctx) -> np.ndarray:
    return ctx.dense(op).matrix


def gap(m: np.ndarray) -> float:
    return float(np.abs(m).max(initial=0.0))


@pytest.fixture(scope="module")
def tfim_ctx():
    return diagonalize(tfim_op(3), Lattice.chain(3))


def test_single_spin_gap():
    ctx = diagonalize(S(0, "z"), Lattice.chain(1))
    assert ctx.gap == pytest.approx(2.0)
    assert ctx.delta_prime == pytest.approx(1.0)


def test_heisenberg_pair_gap():
    # singlet at -3, triplet at +1
    h = P({0: "x", 1: "x"}) + P({0: "y", 1: "y"}) + P({0: "z", 1: "z"})
    ctx = diagonalize(h, Lattice.chain(2))
    assert np.allclose(ctx.energies, [-3, 1, 1, 1])
    assert ctx.gap == pytest.approx(4.0)


def test_eigendecomposition_residuals(tfim_ctx):
    assert tfim_ctx.orthonormality_residual() <= 1e-12
    assert tfim_ctx.reconstruction_residual() <= 1e-12


@pytest.mark.parametrize(
    "h, error",
    [(S(0, "z"), DegenerateGroundState), (S(0, "x", 1j), ValueError)],
    ids=["degenerate", "not-self-adjoint"],
)
def test_diagonalize_rejects(h, error):
    with pytest.raises(error):
        diagonalize(h, Lattice.chain(2))


def test_gap_fraction_bounds(tfim_ctx):
    with pytest.raises(ValueError):
        diagonalize(tfim_op(2), Lattice.chain(2), gap_fraction=1.0)
    with pytest.raises(ValueError):
        tfim_ctx.with_delta_prime(2 * tfim_ctx.gap)


def test_filter_response_shapes():
    r = FilterResponse(1.0)
    omega = np.array([-2.0, -1.0, 0.0, 0.5, 1.0])
    w = r.w(omega)
    assert w[2] == 1.0 and w[0] == w[1] == w[4] == 0.0 and 0 < w[3] < 1
    assert r.W(np.array([0.0]))[0] == 0
    nz = omega[omega != 0]
    assert np.allclose(1j * nz * r.W(nz), 1 - r.w(nz))
    c = FilterResponse(1.0, "cosine").w(np.array([0.5]))
    assert c[0] == pytest.approx(0.5)
    with pytest.raises(ValueError):
        FilterResponse(1.0, "box")
    with pytest.raises(ValueError):
        FilterResponse(0.0)


def test_evolution_closed_form():
    # e^{i Z t} X e^{-i Z t} = cos(2t) X - sin(2t) Y
    ctx = diagonalize(S(0, "z"), Lattice.chain(1))
    for t in (0.0, 0.3, 1.7):
        out = heisenberg_evolve(S(0, "x"), t, ctx).matrix
        assert gap(out - (math.cos(2 * t) * SX - math.sin(2 * t) * SY)) <= 1e-12


def test_evolution_matches_matrix_exponential(tfim_ctx, rng):
    a = random_operator(tfim_ctx.lattice, rng, terms=4)
    u = scipy.linalg.expm(1j * 0.7 * tfim_ctx.hamiltonian)
    out = heisenberg_evolve(a, 0.7, tfim_ctx).matrix
    assert gap(out - u @ matrix(a, tfim_ctx) @ u.conj().T) <= 1e-12
    assert np.linalg.norm(out, 2) == pytest.approx(np.linalg.norm(matrix(a, tfim_ctx), 2), abs=1e-12)
    h = heisenberg_evolve(tfim_op(3), 2.1, tfim_ctx).matrix
    assert gap(h - tfim_ctx.hamiltonian) <= 1e-12


def test_filter_on_single_spin():
    ctx = diagonalize(S(0, "z"), Lattice.chain(1))
    assert gap(filter_operator(S(0, "x"), ctx).matrix) == 0.0
    assert gap(filter_operator(S(0, "z"), ctx).matrix - SZ) <= 1e-15
    with pytest.raises(ValueError):
        filter_operator(S(0, "z"), ctx, "v")


def test_filter_identity_and_algebra(tfim_ctx, rng):
    ctx = tfim_ctx
    for _ in range(5):
        a = random_operator(ctx.lattice, rng, terms=4)
        wa = filter_operator(a, ctx, "w").matrix
        lhs = matrix(a, ctx) - filter_operator(ctx.derivation(a), ctx, "W").matrix
        assert gap(lhs - wa) <= 1e-12
        for which in ("w", "W"):
            fa = filter_operator(a, ctx, which).matrix
            fadj = filter_operator(ctx.dense(a).dagger(), ctx, which).matrix
            assert gap(fa.conj().T - fadj) <= 1e-12
        ww = filter_operator(filter_operator(a, ctx, "w"), ctx, "w").matrix
        squared = filter_with(a, ctx, lambda om: ctx.response.w(om) ** 2).matrix
        assert gap(ww - squared) <= 1e-12


def test_filtered_operators_do_not_excite(tfim_ctx, rng):
    ctx = tfim_ctx
    for _ in range(5):
        a = random_operator(ctx.lattice, rng, terms=4)
        b = random_operator(ctx.lattice, rng, terms=4)
        wa = filter_operator(a, ctx, "w")
        psi = ctx.psi
        lhs = psi.conj() @ wa.matrix @ matrix(b, ctx) @ psi
        assert abs(lhs - ctx.expectation(wa) * ctx.expectation(b)) <= 1e-12
        assert does_not_excite(wa, ctx) <= 1e-12
        assert excitation_leakage(wa, ctx) <= 1e-12
    assert excitation_leakage(S(0, "x"), ctx) > 1e-3


def test_filter_derivative_matches_finite_difference(rng):
    lattice = Lattice.chain(3)
    h = tfim_op(3)
    dh = P({0: "z", 1: "z"}, 0.7) + S(2, "x", 0.4)
    ctx = diagonalize(h, lattice)
    a = random_operator(lattice, rng, terms=4)
    eps = 1e-5
    plus = diagonalize(h + dh.scale(eps), lattice).with_delta_prime(ctx.delta_prime)
    minus = diagonalize(h - dh.scale(eps), lattice).with_delta_prime(ctx.delta_prime)
    for which in ("w", "W"):
        fd = (filter_operator(a, plus, which).matrix - filter_operator(a, minus, which).matrix) / (2 * eps)
        analytic = filter_derivative(a, matrix(dh, ctx), ctx, which).matrix
        assert gap(analytic - fd) <= 1e-6 * max(1.0, gap(fd))


def test_sector_diagonalization_agrees_with_full(rng):
    lattice = Lattice.chain(4)
    space = DenseSpace(lattice)
    charge = np.real(np.diag(space.realize(sum((S(j, "z") for j in range(4)), LocalOperator.zero())).matrix))
    full = diagonalize(xx_op(4), lattice, space=space)
    blocked = diagonalize(xx_op(4), lattice, space=space, conserved=charge)
    assert np.allclose(full.energies, blocked.energies, atol=1e-12)
    for op in (S(1, "z"), P({1: "x", 2: "x"}) + P({1: "y", 2: "y"}), S(0, "x"), random_operator(lattice, rng)):
        for which in ("w", "W"):
            assert gap(filter_operator(op, full, which).matrix - filter_operator(op, blocked, which).matrix) <= 1e-10
    with pytest.raises(ValueError):
        diagonalize(tfim_op(4), lattice, space=space, conserved=charge)


def test_lgp_with_constant_generator(tfim_ctx, rng):
    t = 0.6
    h = tfim_op(3)
    schedule = LGPSchedule(lambda s: h.scale(1j * t))
    a = random_operator(tfim_ctx.lattice, rng, terms=3)
    out = lgp_evolve(a, schedule, tfim_ctx.space).matrix
    assert gap(out - heisenberg_evolve(a, t, tfim_ctx).matrix) <= 1e-8


def test_inverse_path_undoes_the_forward_path(rng):
    lattice = Lattice.chain(2)
    space = DenseSpace(lattice)
    schedule = LGPSchedule(lambda s: S(0, "x", 1j * s) + P({0: "z", 1: "z"}, 1j * (1 - s)))
    back = inverse_schedule(schedule, space)
    a = random_operator(lattice, rng, terms=4)
    there = lgp_evolve(a, schedule, space)
    assert gap(there.matrix - space.realize(a).matrix) > 1e-3
    assert gap(lgp_evolve(there, back, space).matrix - space.realize(a).matrix) <= 1e-8


def _swap() -> np.ndarray:
    m = np.zeros((4, 4), dtype=complex)
    for i in range(2):
        for j in range(2):
            m[2 * j + i, 2 * i + j] = 1
    return m


def test_circuit_matches_generated_path(rng):
    lattice = Lattice.chain(4)
    space = DenseSpace(lattice)
    layer = CircuitLayer((((0, 1), _swap()), ((2, 3), _swap())))
    assert gap(circuit_evolve(S(0, "x"), [layer], space).matrix - space.realize(S(1, "x")).matrix) == 0.0
    # SWAP = exp(-i pi/4 (XX + YY + ZZ)) up to a phase
    gen = LocalOperator.zero()
    for j, k in ((0, 1), (2, 3)):
        for p in "xyz":
            gen = gen + P({j: p, k: p}, -0.25j * math.pi)
    schedule = LGPSchedule(lambda s: gen)
    for _ in range(3):
        a = random_operator(lattice, rng, terms=4)
        ode = lgp_evolve(a, schedule, space).matrix
        assert gap(ode - circuit_evolve(a, [layer], space).matrix) <= 1e-9


def test_lieb_robinson_rows(tfim_ctx):
    rows = lieb_robinson_probe(tfim_ctx, S(0, "z"), 0, "x", [0.0, 0.5])
    assert {r.t for r in rows} == {0.0, 0.5}
    assert all(r.norm == 0.0 for r in rows if r.t == 0 and r.r > 0)
    assert any(r.norm > 0 for r in rows if r.t == 0.5 and r.r > 0)
    assert lr_slope(rows, 0.5) <= 0
    assert lr_slope(rows, 9.0) == 0.0


def test_onsite_hamiltonian_does_not_spread():
    lattice = Lattice.chain(4)
    ctx = diagonalize(S(0, "z", 1.0) + S(1, "z", 1.5) + S(2, "z", 2.0) + S(3, "z", 2.5), lattice)
    rows = lieb_robinson_probe(ctx, S(0, "x"), 0, "x", [0.7, 3.1])
    assert max(r.norm for r in rows if r.r > 0) <= 1e-12
