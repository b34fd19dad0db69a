"""Parameter meshes, families of gapped Hamiltonians and the descent to Berry-type invariants.

Conventions
-----------
* A family assigns a self-adjoint ``H_op(m)`` to each parameter point; its
  derivation is ``[i H_op, .]``.
* The connection is ``G = I_W(i dH_op)``: with filters normalized so that
  ``a - I_W({H, a}) = I_w(a)``, this is the sign for which the state is
  parallel, ``d<A> = <[G, A]>``, i.e. ``psi(m + dm) = exp(-G dm) psi(m)``.
* Curvature ``F = dG + 1/2 {G, G}``; on a mesh face it is ``-log`` of the
  holonomy of the transport around the face.
* Zero-dimensional descent: ``g0 = -h_psi(F)`` and the Berry form on a face is
  ``<g0_{A_0}>``.
* Equivariant data for U(1) with charge density ``q`` and ``Q = dq``:
  ``t0 = -h_psi(Q)``, ``t1 = -h_psi(D t0)`` (pump) and
  ``m2 = h_psi(-1/2 {m0, m0})`` with ``m0 = t0`` (Hall).
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np
from scipy.linalg import expm, logm

from .chains import (
    Chain,
    ChainLike,
    Derivation,
    Operator,
    boundary,
    contract_total,
    graded_bracket,
    homotopy,
    homotopy_contraction_expectation,
    residual,
)
from .dense import DenseOperator, DenseSpace
from .lattice import Lattice
from .pauli import LocalOperator, dense_realize, from_dense
from .spectral import SpectralContext, diagonalize, filter_derivative, filter_operator
from .state import StateHomotopy, cycle_check, filter_chain, psi_homotopy

Point = tuple[float, ...]


# meshes --------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamMesh:
    """Regular cell complex on a parameter manifold.

    ``faces`` list their vertices counterclockwise in the chart; faces at the
    poles of ``sphere2`` are triangles.
    """

    kind: str
    resolution: tuple[int, ...]
    vertices: tuple[Point, ...]
    edges: tuple[tuple[int, int], ...]
    faces: tuple[tuple[int, ...], ...]
    periods: tuple[float | None, ...] = ()

    @property
    def dimension(self) -> int:
        return {"point": 0, "interval": 1, "circle": 1, "torus2": 2, "sphere2": 2}[self.kind]

    @classmethod
    def point(cls) -> "ParamMesh":
        return cls("point", (), ((),), (), ())

    @classmethod
    def interval(cls, n: int) -> "ParamMesh":
        verts = tuple((k / n,) for k in range(n + 1))
        return cls("interval", (n,), verts, tuple((k, k + 1) for k in range(n)), (), (None,))

    @classmethod
    def circle(cls, n: int) -> "ParamMesh":
        verts = tuple((k / n,) for k in range(n))
        return cls("circle", (n,), verts, tuple((k, (k + 1) % n) for k in range(n)), (), (1.0,))

    @classmethod
    def torus2(cls, nx: int, ny: int) -> "ParamMesh":
        vid = lambda i, k: (i % nx) * ny + (k % ny)
        verts = tuple((i / nx, k / ny) for i in range(nx) for k in range(ny))
        edges = [(vid(i, k), vid(i + 1, k)) for i in range(nx) for k in range(ny)]
        edges += [(vid(i, k), vid(i, k + 1)) for i in range(nx) for k in range(ny)]
        faces = tuple((vid(i, k), vid(i + 1, k), vid(i + 1, k + 1), vid(i, k + 1)) for i in range(nx) for k in range(ny))
        return cls("torus2", (nx, ny), verts, tuple(edges), faces, (1.0, 1.0))

    @classmethod
    def sphere2(cls, n_theta: int, n_phi: int) -> "ParamMesh":
        """Latitude-longitude grid in ``(theta, phi)`` with identified poles."""

        def vid(i: int, k: int) -> int:
            if i == 0:
                return 0
            if i == n_theta:
                return 1 + (n_theta - 1) * n_phi
            return 1 + (i - 1) * n_phi + (k % n_phi)

        verts = [(0.0, 0.0)]
        for i in range(1, n_theta):
            verts += [(math.pi * i / n_theta, 2 * math.pi * k / n_phi) for k in range(n_phi)]
        verts.append((math.pi, 0.0))
        edges = []
        for i in range(n_theta):
            for k in range(n_phi):
                edges.append((vid(i, k), vid(i + 1, k)))
        for i in range(1, n_theta):
            for k in range(n_phi):
                edges.append((vid(i, k), vid(i, k + 1)))
        faces = []
        for i in range(n_theta):
            for k in range(n_phi):
                cyc = [vid(i, k), vid(i + 1, k), vid(i + 1, k + 1), vid(i, k + 1)]
                dedup = [v for j, v in enumerate(cyc) if v != cyc[j - 1]]
                faces.append(tuple(dedup))
        return cls("sphere2", (n_theta, n_phi), tuple(verts), tuple(edges), tuple(faces), (None, 2 * math.pi))

    @classmethod
    def parse_resolution(cls, kind: str, res: str | Sequence[int]) -> "ParamMesh":
        dims = [int(x) for x in res.lower().split("x")] if isinstance(res, str) else [int(x) for x in res]
        if kind == "point":
            return cls.point()
        if kind == "interval":
            return cls.interval(dims[0])
        if kind == "circle":
            return cls.circle(dims[0])
        if kind == "torus2":
            return cls.torus2(dims[0], dims[-1])
        if kind == "sphere2":
            return cls.sphere2(dims[0], dims[-1])
        raise ValueError(f"unknown mesh kind {kind!r}")

    @cached_property
    def edge_index(self) -> dict[tuple[int, int], tuple[int, int]]:
        """``(a, b) -> (edge id, orientation sign)``."""
        out = {}
        for e, (a, b) in enumerate(self.edges):
            out[(a, b)] = (e, 1)
            out[(b, a)] = (e, -1)
        return out

    def face_edges(self, f: int) -> list[tuple[int, int]]:
        cyc = self.faces[f]
        return [self.edge_index[(cyc[j], cyc[(j + 1) % len(cyc)])] for j in range(len(cyc))]

    def d0(self) -> np.ndarray:
        """Coboundary from vertex functions to edge values."""
        m = np.zeros((len(self.edges), len(self.vertices)), dtype=int)
        for e, (a, b) in enumerate(self.edges):
            m[e, b] += 1
            m[e, a] -= 1
        return m

    def d1(self) -> np.ndarray:
        """Coboundary from edge values to face values."""
        m = np.zeros((len(self.faces), len(self.edges)), dtype=int)
        for f in range(len(self.faces)):
            for e, s in self.face_edges(f):
                m[f, e] += s
        return m

    def euler_characteristic(self) -> int:
        return len(self.vertices) - len(self.edges) + len(self.faces)

    def is_pole(self, v: int) -> bool:
        return self.kind == "sphere2" and v in (0, len(self.vertices) - 1)

    def edge_endpoints(self, a: int, b: int) -> tuple[np.ndarray, np.ndarray]:
        """Chart coordinates of both ends, unwrapped across periods; a pole takes its neighbour's longitude."""
        va = np.asarray(self.vertices[a], dtype=float)
        vb = np.asarray(self.vertices[b], dtype=float)
        if self.is_pole(a):
            va[1] = vb[1]
        if self.is_pole(b):
            vb[1] = va[1]
        d = vb - va
        for i, p in enumerate(self.periods):
            if p is not None:
                d[i] = (d[i] + 0.5 * p) % p - 0.5 * p
        return va, va + d

    def displacement(self, a: int, b: int) -> np.ndarray:
        va, vb = self.edge_endpoints(a, b)
        return vb - va

    def midpoint(self, a: int, b: int) -> Point:
        va, vb = self.edge_endpoints(a, b)
        return tuple(float(x) for x in 0.5 * (va + vb))


@dataclass
class ChainForm:
    """Values on the ``p``-cells of a mesh; each value is a chain or derivation."""

    mesh: ParamMesh
    form_degree: int
    values: dict[int, ChainLike] = field(default_factory=dict)
    base_points: dict[int, int] = field(default_factory=dict)

    def __getitem__(self, cell: int) -> ChainLike:
        return self.values[cell]

    def items(self):
        return sorted(self.values.items())


# families ---------------------------------------------------------------------------

class Family(Protocol):
    lattice: Lattice

    def hamiltonian(self, m: Point) -> LocalOperator | np.ndarray: ...

    def density(self, m: Point) -> Chain: ...


def density_from_hamiltonian(lattice: Lattice, h_op: LocalOperator) -> Chain:
    """Assign every basis string of ``i H_op`` to its smallest site."""
    store: dict[int, dict] = {}
    for string, c in h_op.terms.items():
        if string:
            store.setdefault(string[0][0], {})[string] = 1j * c
    dims = dict(h_op.dims)
    return Chain(0, lattice, {(j,): LocalOperator(t, dims) for j, t in store.items()})


@dataclass(frozen=True)
class StaticFamily:
    """Constant family."""

    lattice: Lattice
    h_op: LocalOperator

    def hamiltonian(self, m: Point) -> LocalOperator:
        return self.h_op

    def density(self, m: Point) -> Chain:
        return density_from_hamiltonian(self.lattice, self.h_op)


@dataclass(frozen=True)
class SphereSpinFamily:
    """``H(n) = -(n . sigma) / 2`` for one spin-1/2, ``n = n(theta, phi)``."""

    lattice: Lattice = field(default_factory=Lattice.point)
    field_strength: float = 1.0

    def hamiltonian(self, m: Point) -> LocalOperator:
        th, ph = m
        n = (math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph), math.cos(th))
        b = -0.5 * self.field_strength
        return (
            LocalOperator.single(0, "x", b * n[0])
            + LocalOperator.single(0, "y", b * n[1])
            + LocalOperator.single(0, "z", b * n[2])
        )

    def density(self, m: Point) -> Chain:
        return density_from_hamiltonian(self.lattice, self.hamiltonian(m))


def singlet_projector(a: int, b: int) -> LocalOperator:
    """``(1 - sigma_a . sigma_b) / 4``."""
    return (
        LocalOperator.identity()
        - LocalOperator.string({a: "x", b: "x"})
        - LocalOperator.string({a: "y", b: "y"})
        - LocalOperator.string({a: "z", b: "z"})
    ).scale(0.25)


@dataclass(frozen=True)
class SwapPumpFamily:
    """Neel state on a ring carried around by layers of partial swaps.

    Stage ``k`` of ``2 * windings`` rotates pairs ``(2i + k mod 2, 2i + 1 + k mod 2)``
    by ``exp(i pi theta P_singlet)``; a completed stage is a full swap layer,
    which shifts the Neel pattern by one site.  The closed loop moves every
    up spin by ``2 * windings`` sites.
    """

    n_sites: int = 8
    windings: int = 1
    field_strength: float = 1.0

    def __post_init__(self) -> None:
        if self.n_sites % 2 or self.n_sites < 4:
            raise ValueError("the ring needs an even number (>= 4) of sites")

    @cached_property
    def lattice(self) -> Lattice:
        return Lattice.chain(self.n_sites)

    @property
    def stages(self) -> int:
        return 2 * self.windings

    def pairs(self, stage: int) -> list[tuple[int, int]]:
        off = stage % 2
        n = self.n_sites
        return [((2 * i + off) % n, (2 * i + 1 + off) % n) for i in range(n // 2)]

    def _stage(self, s: float) -> tuple[int, float]:
        x = (s % 1.0) * self.stages
        k = min(int(math.floor(x)), self.stages - 1)
        return k, x - k

    @staticmethod
    def _gate(theta: float) -> np.ndarray:
        p = dense_realize(singlet_projector(0, 1), [0, 1])
        return expm(1j * math.pi * theta * p)

    def site_terms(self, s: float) -> dict[int, LocalOperator]:
        """Dressed on-site fields ``c_j V sigma^z_j V^*`` keyed by site."""
        k, theta = self._stage(s)
        g = self._gate(theta)
        sz = np.diag([1.0, -1.0]).astype(complex)
        out: dict[int, LocalOperator] = {}
        for a, b in self.pairs(k):
            for site, local in ((a, np.kron(sz, np.eye(2))), (b, np.kron(np.eye(2), sz))):
                up = (site - k) % 2 == 0
                coeff = -self.field_strength if up else self.field_strength
                out[site] = from_dense(coeff * (g @ local @ g.conj().T), [a, b])
        return out

    def hamiltonian(self, m: Point) -> LocalOperator:
        out = LocalOperator.zero()
        for _, v in sorted(self.site_terms(m[0]).items()):
            out = out + v
        return out

    def density(self, m: Point) -> Chain:
        return Chain(0, self.lattice, {(j,): v.scale(1j) for j, v in self.site_terms(m[0]).items()})


# per-point data -----------------------------------------------------------------------

@dataclass
class FamilyEvaluator:
    """Spectral contexts and state homotopies along a family, kept in a small LRU cache."""

    family: Family
    gap_fraction: float = 0.5
    profile: str = "bump"
    delta_prime: float | None = None
    context_factory: Callable[[Family, Point], SpectralContext] | None = None
    cache_size: int = 64
    conserved: np.ndarray | None = None
    _contexts: OrderedDict = field(default_factory=OrderedDict, repr=False)
    _homotopies: OrderedDict = field(default_factory=OrderedDict, repr=False)
    _space: DenseSpace | None = field(default=None, repr=False)
    diagonalizations: int = 0

    @property
    def lattice(self) -> Lattice:
        return self.family.lattice

    @property
    def space(self) -> DenseSpace:
        if self._space is None:
            self._space = DenseSpace(self.lattice)
        return self._space

    def _key(self, m: Point) -> tuple:
        return tuple(round(float(x), 15) for x in m)

    def _remember(self, store: OrderedDict, key, value) -> None:
        store[key] = value
        while len(store) > self.cache_size:
            store.popitem(last=False)

    def context(self, m: Point) -> SpectralContext:
        key = self._key(m)
        if key in self._contexts:
            self._contexts.move_to_end(key)
        else:
            if self.context_factory is not None:
                ctx = self.context_factory(self.family, m)
            else:
                ctx = diagonalize(
                    self.family.hamiltonian(m), self.lattice, self.gap_fraction, self.profile, self.space, self.conserved
                )
            self.diagonalizations += 1
            if self.delta_prime is not None:
                ctx = ctx.with_delta_prime(self.delta_prime)
            self._remember(self._contexts, key, ctx)
        return self._contexts[key]

    def homotopy(self, m: Point) -> StateHomotopy:
        key = self._key(m)
        if key in self._homotopies:
            self._homotopies.move_to_end(key)
        else:
            self._remember(self._homotopies, key, StateHomotopy.build(self.family.density(m), self.context(m)))
        return self._homotopies[key]

    def hamiltonian_matrix(self, m: Point) -> np.ndarray:
        h = self.family.hamiltonian(m)
        return np.asarray(h, dtype=complex) if isinstance(h, np.ndarray) else self.space.realize(h).matrix

    def min_gap(self, points: Iterable[Point]) -> float:
        return min(self.context(m).gap for m in points)


def derivative_matrix(ev: FamilyEvaluator, m: Point, direction: Sequence[float], eps: float = 1e-5) -> np.ndarray:
    """Central difference of ``H_op`` along ``direction``."""
    m0 = np.asarray(m, dtype=float)
    v = np.asarray(direction, dtype=float)
    plus = tuple(m0 + eps * v)
    minus = tuple(m0 - eps * v)
    return (ev.hamiltonian_matrix(plus) - ev.hamiltonian_matrix(minus)) / (2 * eps)


def connection_at(ev: FamilyEvaluator, m: Point, direction: Sequence[float], eps: float = 1e-5) -> DenseOperator:
    """Total operator of the connection ``G(v) = I_W(i dH_op(v))`` at ``m``."""
    ctx = ev.context(m)
    dh = DenseOperator(1j * derivative_matrix(ev, m, direction, eps), ctx.space)
    return filter_operator(dh, ctx, "W")


def connection_from_family(ev: FamilyEvaluator, mesh: ParamMesh) -> ChainForm:
    """Edge values ``G_e = I_W(i (H(b) - H(a)))`` evaluated at the edge midpoint."""
    form = ChainForm(mesh, 1)
    for e, (a, b) in enumerate(mesh.edges):
        mid = mesh.midpoint(a, b)
        ctx = ev.context(mid)
        ma, mb = mesh.edge_endpoints(a, b)
        dh = DenseOperator(1j * (ev.hamiltonian_matrix(tuple(mb)) - ev.hamiltonian_matrix(tuple(ma))), ctx.space)
        form.values[e] = Derivation.from_operator(ev.lattice, filter_operator(dh, ctx, "W"))
    return form


def parallel_transport_residual(ev: FamilyEvaluator, m: Point, direction: Sequence[float], probes: Sequence[Operator], eps: float = 1e-5) -> float:
    """``max |d<A>/dv - <[G(v), A]>|`` over probes."""
    g = connection_at(ev, m, direction, eps)
    ctx = ev.context(m)
    m0 = np.asarray(m, dtype=float)
    v = np.asarray(direction, dtype=float)
    cp = ev.context(tuple(m0 + eps * v))
    cm = ev.context(tuple(m0 - eps * v))
    worst = 0.0
    for a in probes:
        d = (cp.expectation(a) - cm.expectation(a)) / (2 * eps)
        worst = max(worst, abs(d - ctx.dense(g.commutator(a)).expectation(ctx.psi)))
    return float(worst)


def direct_rotation(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Unitary taking ``range(p)`` to ``range(q)`` with minimal rotation."""
    side = p.shape[0]
    one = np.eye(side)
    x = one - (p - q) @ (p - q)
    vals, vecs = np.linalg.eigh(0.5 * (x + x.conj().T))
    if vals.min() <= 1e-12:
        raise ValueError("projectors are orthogonal; no direct rotation")
    inv_sqrt = (vecs * vals ** -0.5) @ vecs.conj().T
    return (q @ p + (one - q) @ (one - p)) @ inv_sqrt


def _traceless(m: np.ndarray) -> np.ndarray:
    return m - np.trace(m) / m.shape[0] * np.eye(m.shape[0])


def holonomy_curvature(ev: FamilyEvaluator, mesh: ParamMesh) -> ChainForm:
    """Face curvature ``-log`` of the transport holonomy, based at the first face vertex."""
    form = ChainForm(mesh, 2)
    for f, cyc in enumerate(mesh.faces):
        hol = np.eye(ev.space.side, dtype=complex)
        for j in range(len(cyc)):
            a, b = cyc[j], cyc[(j + 1) % len(cyc)]
            hol = direct_rotation(ev.context(mesh.vertices[a]).ground_projector, ev.context(mesh.vertices[b]).ground_projector) @ hol
        curv = _traceless(-logm(hol))
        curv = 0.5 * (curv - curv.conj().T)
        form.values[f] = Derivation.from_operator(ev.lattice, DenseOperator(curv, ev.space))
        form.base_points[f] = cyc[0]
    return form


def curvature(g: ChainForm) -> ChainForm:
    """Discrete ``F = dG + 1/2 {G, G}`` as ``-log`` of the product of ``exp(-G_e)`` around each face."""
    mesh = g.mesh
    form = ChainForm(mesh, 2)
    lattice = mesh_lattice(g)
    space = next((v.total().space for _, v in g.items() if isinstance(v.total(), DenseOperator)), None) or DenseSpace(lattice)
    for f, cyc in enumerate(mesh.faces):
        prod = None
        for e, s in mesh.face_edges(f):
            step = expm(-s * space.realize(g.values[e].total()).matrix)
            prod = step if prod is None else step @ prod
        curv = _traceless(-logm(prod))
        curv = 0.5 * (curv - curv.conj().T)
        form.values[f] = Derivation.from_operator(lattice, DenseOperator(curv, space))
        form.base_points[f] = cyc[0]
    return form


def mesh_lattice(form: ChainForm) -> Lattice:
    return next(iter(form.values.values())).lattice


# descent -------------------------------------------------------------------------------

@dataclass
class DescentResult:
    """Per-face top components with their residual ledger."""

    components: list[ChainForm]
    residuals: dict[str, float]


def mc_descend(ev: FamilyEvaluator, curvature_form: ChainForm, depth: int = 0, check: bool = True) -> DescentResult:
    """Solve ``d g0 = -F`` facewise with the state homotopy at the face base point.

    Only the first step is needed for zero-dimensional lattices; deeper
    non-equivariant steps need forms of degree above the mesh dimension.
    """
    if depth != 0:
        raise NotImplementedError("non-equivariant descent beyond g0 needs a parameter space of dimension > 2")
    out = ChainForm(curvature_form.mesh, 2)
    worst_mc = 0.0
    worst_cycle = 0.0
    for f, fval in curvature_form.items():
        base = curvature_form.base_points[f]
        sh = ev.homotopy(curvature_form.mesh.vertices[base])
        if check:
            _, exc = cycle_check(fval, sh, exact=True)
            worst_cycle = max(worst_cycle, exc)
        g0 = -psi_homotopy(fval, sh, check=False)
        worst_mc = max(worst_mc, residual(boundary(g0), -fval))
        out.values[f] = g0
        out.base_points[f] = base
    return DescentResult([out], {"mc": worst_mc, "cycle": worst_cycle})


def berry_form(top: ChainForm, regions: Sequence[Iterable[int]], ev: FamilyEvaluator) -> dict[int, complex]:
    """Cellwise ``<g_{A_0 .. A_d}>_psi`` at the cell base points."""
    out = {}
    for cell, g in top.items():
        ctx = ev.context(top.mesh.vertices[top.base_points[cell]])
        out[cell] = ctx.expectation(contract_total(g, regions))
    return out


def berry_integral(form_values: Mapping[int, complex]) -> complex:
    """Deterministic cell-ordered sum."""
    total = 0j
    for cell in sorted(form_values):
        total += form_values[cell]
    return total


@dataclass
class ChernResult:
    value: complex
    chern: float
    residuals: dict[str, float]
    form: dict[int, complex]


def chern_integral(ev: FamilyEvaluator, mesh: ParamMesh, regions: Sequence[Iterable[int]] | None = None) -> ChernResult:
    """Integral of the zero-dimensional Berry form; equals ``-2 pi i C``."""
    if regions is None:
        regions = [ev.lattice.site_ids]
    curv = holonomy_curvature(ev, mesh)
    desc = mc_descend(ev, curv)
    form = berry_form(desc.components[0], regions, ev)
    value = berry_integral(form)
    return ChernResult(value, float((value / (-2j * math.pi)).real), desc.residuals, form)


# equivariant descent -----------------------------------------------------------------------

@dataclass(frozen=True)
class EquivariantData:
    """Compact-group data: U(1) with a charge density; the family acts trivially on parameters."""

    charge: Chain
    group: str = "U1"

    @cached_property
    def derivation(self) -> Derivation:
        return boundary(self.charge)


def charge_diagonal(space: DenseSpace, data: EquivariantData, tol: float = 1e-12) -> np.ndarray:
    """Eigenvalues of the self-adjoint total charge ``-i Q_tot`` when it is diagonal in the computational basis."""
    q = -1j * space.realize(data.derivation.total()).matrix
    off = q - np.diag(np.diag(q))
    if float(np.abs(off).max(initial=0.0)) > tol:
        raise ValueError("total charge is not diagonal in the computational basis")
    return np.diag(q).real.copy()


def equivariance_residual(ev: FamilyEvaluator, data: EquivariantData, m: Point) -> float:
    """``|[Q_tot, H_op(m)]|`` entrywise."""
    q = ev.space.realize(data.derivation.total()).matrix
    h = ev.hamiltonian_matrix(m)
    return float(np.abs(q @ h - h @ q).max())


def density_invariance_residual(ev: FamilyEvaluator, data: EquivariantData, m: Point) -> float:
    """Largest coefficient of ``[Q_tot, h_j]`` over the sparse density at ``m``."""
    qtot = data.derivation.total()
    worst = 0.0
    for _, v in ev.family.density(m).items():
        if isinstance(v, LocalOperator) and isinstance(qtot, LocalOperator):
            worst = max(worst, (qtot * v - v * qtot).max_abs())
        else:
            return math.inf
    return worst


def charge_zero_form(ev: FamilyEvaluator, data: EquivariantData, m: Point, tol: float = 1e-12) -> Chain:
    """``t0 = -h_psi(Q)``.

    When every density term commutes with the charge, so does the filtered
    density and the correction ``I({k, Q})`` vanishes; then ``t0 = -I_w(h(Q))``.
    """
    if density_invariance_residual(ev, data, m) <= tol:
        return -filter_chain(homotopy(data.derivation), ev.context(m), "w")
    return -psi_homotopy(data.derivation, ev.homotopy(m), check=False)


def covariant_derivative_t0(
    ev: FamilyEvaluator, data: EquivariantData, s: float, eps: float = 1e-5, method: str = "analytic"
) -> Chain:
    """``D t0 = d t0 / ds + {G, t0}`` at ``s`` on a one-parameter family.

    With ``method="analytic"`` and a charge-invariant density, ``t0 = -I_w(h(Q))``
    with ``h(Q)`` fixed, so ``d t0 / ds`` is the first-order change of the filter
    along ``dH_op / ds``.  Otherwise ``t0`` is differenced at ``s +- eps``.
    """
    if method not in ("analytic", "difference"):
        raise ValueError("method must be 'analytic' or 'difference'")
    m = (s,)
    ctx = ev.context(m)
    dh = derivative_matrix(ev, m, (1.0,), eps)
    g = filter_operator(DenseOperator(1j * dh, ctx.space), ctx, "W")
    t_mid = charge_zero_form(ev, data, m)
    if method == "analytic" and density_invariance_residual(ev, data, m) <= 1e-12:
        deriv = homotopy(data.derivation).map(lambda v: -filter_derivative(v, dh, ctx, "w"))
    else:
        t_plus = charge_zero_form(ev, data, (s + eps,))
        t_minus = charge_zero_form(ev, data, (s - eps,))
        deriv = (t_plus - t_minus).scale(1.0 / (2 * eps))
    # a derivation acts on a 0-chain entrywise through its total
    return deriv + t_mid.map(lambda v: ctx.commutator(g, v))


@dataclass
class PumpResult:
    value: float
    raw: complex
    residuals: dict[str, float]
    samples: list[tuple[float, complex]]


def thouless_charges(
    ev: FamilyEvaluator,
    data: EquivariantData,
    cuts: Sequence[Sequence[Iterable[int]]],
    edges: int = 64,
    order: int = 3,
    eps: float = 1e-5,
    check_points: int = 0,
    method: str = "analytic",
) -> list[PumpResult]:
    """``-i * integral over the circle of <t1_{A_0 A_1}>`` for several region pairs.

    ``t1 = -h_psi(D t0)``.  Gauss-Legendre nodes of the given order sit on each
    of ``edges`` equal edges.  Only brick expectations of ``D t0`` are needed;
    at ``check_points`` evenly spread nodes ``t1`` is also built in full to
    record the descent and cycle residuals.
    """
    nodes, weights = np.polynomial.legendre.leggauss(order)
    cuts = [[frozenset(r) for r in regions] for regions in cuts]
    totals = [0j] * len(cuts)
    samples: list[list[tuple[float, complex]]] = [[] for _ in cuts]
    worst = {"mc": 0.0, "cycle": 0.0, "equivariance": 0.0, "t0": 0.0}
    check_at = set(np.linspace(0, edges - 1, check_points).round().astype(int).tolist()) if check_points else set()
    for e in range(edges):
        a, b = e / edges, (e + 1) / edges
        for n_idx, (x, w) in enumerate(zip(nodes, weights)):
            s = 0.5 * (a + b) + 0.5 * (b - a) * x
            dt0 = covariant_derivative_t0(ev, data, s, eps, method)
            ctx = ev.context((s,))
            worst["equivariance"] = max(worst["equivariance"], equivariance_residual(ev, data, (s,)))
            memo = {id(v): ctx.brick_expectations(v) for _, v in dt0.items()}
            for c, regions in enumerate(cuts):
                val = -homotopy_contraction_expectation(dt0, regions, lambda v: memo[id(v)])
                totals[c] += 0.5 * (b - a) * w * val
                samples[c].append((float(s), complex(val)))
            if e in check_at and n_idx == 0:
                sh = ev.homotopy((s,))
                full_t0 = -psi_homotopy(data.derivation, sh, check=False)
                worst["t0"] = max(worst["t0"], residual(full_t0, charge_zero_form(ev, data, (s,))))
                bres, exc = cycle_check(dt0, sh, exact=True)
                worst["cycle"] = max(worst["cycle"], bres, exc)
                t1 = -psi_homotopy(dt0, sh, check=False)
                worst["mc"] = max(worst["mc"], residual(boundary(t1), -dt0))
    out = []
    for c in range(len(cuts)):
        value = -1j * totals[c]
        res = dict(worst)
        res["imag"] = float(abs(value.imag))
        out.append(PumpResult(float(value.real), complex(value), res, samples[c]))
    return out


def thouless_charge(
    ev: FamilyEvaluator,
    data: EquivariantData,
    regions: Sequence[Iterable[int]],
    edges: int = 64,
    order: int = 3,
    eps: float = 1e-5,
    check_points: int = 0,
    method: str = "analytic",
) -> PumpResult:
    return thouless_charges(ev, data, [regions], edges, order, eps, check_points, method)[0]


def window_regions(cut: int, width: int = 2) -> list[range]:
    """``A_0 = [cut - width, cut)``, ``A_1 = [cut, cut + width)`` on a chain."""
    return [range(cut - width, cut), range(cut, cut + width)]


@dataclass
class HallResult:
    value: float
    raw: complex
    residuals: dict[str, float]


def hall_cycle(m0: Chain) -> Chain:
    """``b = -1/2 {m0, m0}``; entries ``-[m0_j, m0_k]``."""
    return graded_bracket(m0, m0).scale(-0.5)


def equivariant_descend_point(ev: FamilyEvaluator, data: EquivariantData, full: bool = False) -> tuple[Chain, Chain | None, dict[str, float]]:
    """Point manifold: ``m0 = -h_psi(Q)`` and, if ``full``, ``m2 = h_psi(-1/2 {m0, m0})``."""
    m = ()
    sh = ev.homotopy(m)
    m0 = charge_zero_form(ev, data, m)
    res = {"mc0": residual(boundary(m0), -data.derivation), "equivariance": equivariance_residual(ev, data, m)}
    m2 = None
    if full:
        b = hall_cycle(m0)
        bres, exc = cycle_check(b, sh, exact=True)
        res["cycle"] = max(bres, exc)
        m2 = psi_homotopy(b, sh, check=False)
        res["mc2"] = residual(boundary(m2), b)
    return m0, m2, res


def hall_conductance(ev: FamilyEvaluator, data: EquivariantData, regions: Sequence[Iterable[int]], full: bool = False) -> HallResult:
    """``4 pi i <m2_{A_0 A_1 A_2}>``; by default from brick expectations of ``b`` alone."""
    m0, m2, res = equivariant_descend_point(ev, data, full)
    ctx = ev.context(())
    if m2 is not None:
        raw = 4j * math.pi * ctx.expectation(contract_total(m2, regions))
    else:
        b = hall_cycle(m0)
        raw = 4j * math.pi * homotopy_contraction_expectation(b, regions, ctx.brick_expectations)
    res["imag"] = abs(complex(raw).imag)
    return HallResult(float(complex(raw).real), complex(raw), res)
