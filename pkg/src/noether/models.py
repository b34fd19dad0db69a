"""Plain-text model files and the built-in model library.

A model file is a list of ``[section]`` blocks.  Inside a block, lines are
``key = value`` pairs, except in ``[hamiltonian]`` and ``[charge]`` where every
other line is a term: a coefficient expression followed by ``site:op``
tokens.  ``#`` starts a comment.  Coefficient expressions may use numbers,
``pi``, ``i``, the mesh coordinates, ``param`` names and the functions
``sin cos tan exp sqrt log``.

    [lattice]
    kind = chain
    size = 2

    [hamiltonian]
    1.0  0:x 1:x
"""

from __future__ import annotations

import ast
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

from .chains import Chain
from .currents import ChargeDensity
from .descent import Family, ParamMesh, Point, StaticFamily, SwapPumpFamily, density_from_hamiltonian
from .lattice import Lattice
from .pauli import LocalOperator, _op_index, _op_label

SECTIONS = ("model", "lattice", "parameters", "hamiltonian", "charge", "family", "task")
TERM_SECTIONS = ("hamiltonian", "charge")
FUNCTIONS: dict[str, Callable[[float], complex]] = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "exp": math.exp,
    "sqrt": math.sqrt,
    "log": math.log,
}
CONSTANTS = {"pi": math.pi, "i": 1j}


class ModelError(ValueError):
    """A model file problem, with its location."""

    def __init__(self, message: str, line: int = 0, column: int = 0) -> None:
        where = f"line {line}, column {column}: " if line else ""
        super().__init__(where + message)
        self.line = line
        self.column = column


# expressions --------------------------------------------------------------------

_ALLOWED = (
    ast.Expression,
    ast.BinOp,
    ast.UnaryOp,
    ast.Add,
    ast.Sub,
    ast.Mult,
    ast.Div,
    ast.Pow,
    ast.USub,
    ast.UAdd,
    ast.Constant,
    ast.Name,
    ast.Load,
    ast.Call,
)


@dataclass(frozen=True)
class Expression:
    """A validated arithmetic expression kept in canonical text form."""

    text: str

    @classmethod
    def parse(cls, text: str, names: frozenset[str], line: int = 0, column: int = 0) -> "Expression":
        try:
            tree = ast.parse(text.strip(), mode="eval")
        except SyntaxError as exc:
            raise ModelError(f"bad expression {text.strip()!r}", line, column + (exc.offset or 0)) from None
        for node in ast.walk(tree):
            if not isinstance(node, _ALLOWED):
                raise ModelError(f"unsupported syntax in {text.strip()!r}", line, column)
            if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
                raise ModelError(f"unsupported constant in {text.strip()!r}", line, column)
            if isinstance(node, ast.Call):
                if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS or len(node.args) != 1 or node.keywords:
                    raise ModelError(f"unknown function in {text.strip()!r}", line, column)
            if isinstance(node, ast.Name) and node.id not in names | FUNCTIONS.keys() | CONSTANTS.keys():
                raise ModelError(f"unknown name {node.id!r}", line, column)
        return cls(ast.unparse(tree))

    def evaluate(self, env: Mapping[str, complex]) -> complex:
        scope = {**CONSTANTS, **FUNCTIONS, **env}
        return complex(eval(compile(self.text, "<model>", "eval"), {"__builtins__": {}}, scope))

    def is_constant(self) -> bool:
        return not any(isinstance(n, ast.Name) and n.id not in CONSTANTS for n in ast.walk(ast.parse(self.text, mode="eval")))


@dataclass(frozen=True)
class Term:
    coefficient: Expression
    ops: tuple[tuple[int, str], ...]

    def text(self) -> str:
        return f"{self.coefficient.text}  " + " ".join(f"{s}:{o}" for s, o in self.ops)


# model description ----------------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    name: str
    lattice: tuple[tuple[str, str], ...]
    parameters: tuple[tuple[str, Expression], ...] = ()
    hamiltonian: tuple[Term, ...] = ()
    charge: tuple[Term, ...] = ()
    charge_settings: tuple[tuple[str, str], ...] = ()
    family: tuple[tuple[str, str], ...] = ()
    task: tuple[tuple[str, str], ...] = ()
    description: str = ""

    # accessors
    def setting(self, block: str, key: str, default: str | None = None) -> str | None:
        return dict(getattr(self, block)).get(key, default)

    @property
    def coordinates(self) -> tuple[str, ...]:
        names = self.setting("family", "coordinates", "")
        return tuple(n.strip() for n in names.split(",") if n.strip())

    def digest(self) -> str:
        return hashlib.sha256(emit_model(self).encode()).hexdigest()[:16]

    def build_lattice(self) -> Lattice:
        return _build_lattice(dict(self.lattice))

    def mesh(self, resolution: str | None = None) -> ParamMesh:
        kind = self.setting("family", "mesh", "point")
        res = resolution or self.setting("family", "resolution", "")
        if kind == "point":
            return ParamMesh.point()
        return ParamMesh.parse_resolution(kind, res)

    def environment(self, m: Point) -> dict[str, complex]:
        env: dict[str, complex] = dict(zip(self.coordinates, m))
        for name, expr in self.parameters:
            env[name] = expr.evaluate(env)
        return env

    def hamiltonian_at(self, m: Point = ()) -> LocalOperator:
        env = self.environment(m)
        dims = self.build_lattice().dim_of
        out = LocalOperator.zero()
        for t in self.hamiltonian:
            c = t.coefficient.evaluate(env)
            string = {s: _op_index(o, dims[s]) for s, o in t.ops}
            out = out + LocalOperator.string(string, c, {s: dims[s] for s in string})
        return out

    def build_family(self) -> Family:
        lattice = self.build_lattice()
        generator = self.setting("family", "generator", "terms")
        if generator == "swap-pump":
            return SwapPumpFamily(
                lattice.n_sites,
                int(self.setting("family", "windings", "1")),
                float(self.setting("family", "field", "1.0")),
            )
        if generator != "terms":
            raise ModelError(f"unknown family generator {generator!r}")
        if not self.coordinates:
            return StaticFamily(lattice, self.hamiltonian_at(()))
        return TermFamily(self, lattice)

    def build_charge(self) -> ChargeDensity | None:
        lattice = self.build_lattice()
        preset = self.setting("charge_settings", "density")
        group = self.setting("charge_settings", "group", "U1")
        if preset == "spin-z":
            return ChargeDensity(ChargeDensity.spin_z(lattice).density, group)
        if not self.charge:
            return None
        store: dict[tuple[int, ...], LocalOperator] = {}
        dims = lattice.dim_of
        for t in self.charge:
            site = min(s for s, _ in t.ops)
            string = {s: _op_index(o, dims[s]) for s, o in t.ops}
            piece = LocalOperator.string(string, t.coefficient.evaluate({}), {s: dims[s] for s in string})
            store[(site,)] = store.get((site,), LocalOperator.zero()) + piece
        return ChargeDensity(Chain(0, lattice, store), group)


@dataclass(frozen=True)
class TermFamily:
    """Family whose term coefficients are expressions in the mesh coordinates."""

    spec: ModelSpec
    lattice: Lattice

    def hamiltonian(self, m: Point) -> LocalOperator:
        return self.spec.hamiltonian_at(m)

    def density(self, m: Point) -> Chain:
        return density_from_hamiltonian(self.lattice, self.hamiltonian(m))


def _build_lattice(settings: Mapping[str, str]) -> Lattice:
    kind = settings.get("kind", "chain")
    dim = int(settings.get("onsite_dim", "2"))
    if kind == "point":
        return Lattice.point(dim)
    size = settings.get("size", "")
    if kind == "chain":
        return Lattice.chain(int(size), onsite_dim=dim)
    if kind == "grid":
        nx, ny = (int(v) for v in size.lower().split("x"))
        return Lattice.grid(nx, ny, onsite_dim=dim)
    raise ModelError(f"unknown lattice kind {kind!r}")


# parsing -------------------------------------------------------------------------------

def _split_kv(line: str, lineno: int) -> tuple[str, str]:
    key, _, value = line.partition("=")
    key = key.strip()
    if not key or not _:
        raise ModelError("expected 'key = value'", lineno, 1)
    return key, value.strip()


def _parse_term(raw: str, line: str, lineno: int, names: frozenset[str], lattice: Lattice) -> Term:
    tokens = line.split()
    ops_start = len(tokens)
    for k in range(len(tokens) - 1, -1, -1):
        if ":" in tokens[k] and tokens[k].split(":", 1)[0].lstrip("-").isdigit():
            ops_start = k
        else:
            break
    if ops_start == 0:
        raise ModelError("term has no coefficient", lineno, 1)
    coeff_text = " ".join(tokens[:ops_start])
    expr = Expression.parse(coeff_text, names, lineno, raw.find(tokens[0]) + 1)
    ops = []
    for tok in tokens[ops_start:]:
        col = raw.find(tok) + 1
        site_text, op = tok.split(":", 1)
        site = int(site_text)
        if site not in lattice.dim_of:
            raise ModelError(f"term refers to missing site {site}", lineno, col)
        try:
            k = _op_index(op, lattice.dim_of[site])
        except (ValueError, KeyError):
            raise ModelError(f"unknown operator {op!r} on site {site}", lineno, col) from None
        if k == 0:
            continue
        ops.append((site, _op_label(k, lattice.dim_of[site])))
    if len({s for s, _ in ops}) != len(ops):
        raise ModelError("repeated site in term", lineno, 1)
    return Term(expr, tuple(sorted(ops)))


def parse_model(text: str) -> ModelSpec:
    """Parse model text; problems raise :class:`ModelError` with a line and column."""
    blocks: dict[str, list[tuple[int, str, str]]] = {s: [] for s in SECTIONS}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in SECTIONS:
                raise ModelError(f"unknown section [{current}]", lineno, 1)
            continue
        if current is None:
            raise ModelError("content before the first section", lineno, 1)
        blocks[current].append((lineno, raw, line))

    def settings(block: str) -> dict[str, str]:
        out: dict[str, str] = {}
        for lineno, _, line in blocks[block]:
            k, v = _split_kv(line, lineno)
            if k in out:
                raise ModelError(f"duplicate key {k!r}", lineno, 1)
            out[k] = v
        return out

    model = settings("model")
    lat_settings = settings("lattice")
    lattice = _build_lattice(lat_settings)
    family = settings("family")
    coords = frozenset(n.strip() for n in family.get("coordinates", "").split(",") if n.strip())

    params: list[tuple[str, Expression]] = []
    names = set(coords)
    for lineno, raw, line in blocks["parameters"]:
        k, v = _split_kv(line, lineno)
        params.append((k, Expression.parse(v, frozenset(names), lineno, raw.find(v) + 1)))
        names.add(k)

    ham: list[Term] = []
    for lineno, raw, line in blocks["hamiltonian"]:
        ham.append(_parse_term(raw, line, lineno, frozenset(names), lattice))

    charge_terms: list[Term] = []
    charge_settings: dict[str, str] = {}
    for lineno, raw, line in blocks["charge"]:
        if "=" in line:
            k, v = _split_kv(line, lineno)
            charge_settings[k] = v
        else:
            charge_terms.append(_parse_term(raw, line, lineno, frozenset(), lattice))

    spec = ModelSpec(
        name=model.get("name", "unnamed"),
        description=model.get("description", ""),
        lattice=tuple(lat_settings.items()),
        parameters=tuple(params),
        hamiltonian=tuple(ham),
        charge=tuple(charge_terms),
        charge_settings=tuple(charge_settings.items()),
        family=tuple(family.items()),
        task=tuple(settings("task").items()),
    )
    _validate(spec, blocks)
    return spec


def _validate(spec: ModelSpec, blocks: Mapping[str, list[tuple[int, str, str]]]) -> None:
    """Every term must be self-adjoint: basis strings are, so coefficients must be real."""
    mesh = spec.mesh()
    samples = [mesh.vertices[0], mesh.vertices[len(mesh.vertices) // 2]] if mesh.vertices else [()]
    for (lineno, _, _), term in zip(blocks["hamiltonian"], spec.hamiltonian):
        for m in samples:
            try:
                c = term.coefficient.evaluate(spec.environment(m))
            except (ArithmeticError, ValueError) as exc:
                raise ModelError(f"cannot evaluate coefficient: {exc}", lineno, 1) from None
            if abs(c.imag) > 1e-12:
                raise ModelError("term is not self-adjoint (complex coefficient)", lineno, 1)
    charge_lines = [b for b in blocks["charge"] if "=" not in b[2]]
    for (lineno, _, _), term in zip(charge_lines, spec.charge):
        c = term.coefficient.evaluate({})
        if abs(c.real) > 1e-12:
            raise ModelError("charge terms must be anti-self-adjoint (imaginary coefficient)", lineno, 1)


def emit_model(spec: ModelSpec) -> str:
    """Canonical text; ``parse_model(emit_model(s)) == s``."""
    out: list[str] = []

    def block(name: str, lines: list[str]) -> None:
        if lines:
            out.append(f"[{name}]")
            out.extend(lines)
            out.append("")

    head = [f"name = {spec.name}"] + ([f"description = {spec.description}"] if spec.description else [])
    block("model", head)
    block("lattice", [f"{k} = {v}" for k, v in spec.lattice])
    block("parameters", [f"{k} = {e.text}" for k, e in spec.parameters])
    block("hamiltonian", [t.text() for t in spec.hamiltonian])
    block("charge", [f"{k} = {v}" for k, v in spec.charge_settings] + [t.text() for t in spec.charge])
    block("family", [f"{k} = {v}" for k, v in spec.family])
    block("task", [f"{k} = {v}" for k, v in spec.task])
    return "\n".join(out).rstrip("\n") + "\n"


# built-in library -----------------------------------------------------------------------------

def _grid_bonds(nx: int, ny: int) -> list[tuple[int, int]]:
    horiz = [(y * nx + x, y * nx + x + 1) for y in range(ny) for x in range(nx - 1)]
    vert = [(y * nx + x, (y + 1) * nx + x) for y in range(ny - 1) for x in range(nx)]
    return horiz + vert


def _chiral_grid_text() -> str:
    lines = ["[model]", "name = chiral-u1-grid", "description = staggered field, XY hopping and scalar chirality on a 3x3 grid", ""]
    lines += ["[lattice]", "kind = grid", "size = 3x3", "", "[parameters]", "h = 2.0", "J = 0.6", "chi = 0.4", "", "[hamiltonian]"]
    for y in range(3):
        for x in range(3):
            lines.append(f"{'h' if (x + y) % 2 else '-h'}  {3 * y + x}:z")
    for a, b in _grid_bonds(3, 3):
        lines += [f"J  {a}:x {b}:x", f"J  {a}:y {b}:y"]
    for y in range(2):
        for x in range(2):
            a, b, c = 3 * y + x, 3 * y + x + 1, 3 * (y + 1) + x
            for ops, sign in (("xyz", ""), ("yzx", ""), ("zxy", ""), ("xzy", "-"), ("zyx", "-"), ("yxz", "-")):
                lines.append(f"{sign}chi  {a}:{ops[0]} {b}:{ops[1]} {c}:{ops[2]}")
    lines += ["", "[charge]", "density = spin-z", "group = U1", "", "[family]", "mesh = point", ""]
    lines += ["[task]", "invariant = hall", "apex = 1.2,1.3", "apex_alt = 1.9,1.6", "sector_start = 0.1", ""]
    return "\n".join(lines)


def _chain_terms(n: int, pattern: list[tuple[str, str]], periodic: bool = False) -> list[str]:
    lines = []
    bonds = [(j, j + 1) for j in range(n - 1)] + ([(n - 1, 0)] if periodic else [])
    for a, b in bonds:
        for coeff, ops in pattern:
            lines.append(f"{coeff}  {a}:{ops[0]} {b}:{ops[1]}")
    return lines


def _tfim_text(n: int = 8) -> str:
    lines = ["[model]", "name = tfim-chain", "description = open transverse-field Ising chain, paramagnetic", ""]
    lines += ["[lattice]", "kind = chain", f"size = {n}", "", "[parameters]", "J = 1.0", "g = 2.0", "", "[hamiltonian]"]
    lines += _chain_terms(n, [("-J", "zz")])
    lines += [f"-g  {j}:x" for j in range(n)]
    lines += ["", "[family]", "mesh = point", "", "[task]", "invariant = lr", "probe = z", "times = 0,0.5,1.0", ""]
    return "\n".join(lines)


def _xx_text(n: int = 8) -> str:
    lines = ["[model]", "name = xx-chain", "description = open XX chain with an inhomogeneous field", ""]
    lines += ["[lattice]", "kind = chain", f"size = {n}", "", "[hamiltonian]"]
    lines += _chain_terms(n, [("1.0", "xx"), ("1.0", "yy")])
    lines += [f"{0.3 + 0.1 * j!r}  {j}:z" for j in range(n)]
    lines += ["", "[charge]", "density = spin-z", "", "[family]", "mesh = point", "", "[task]", "invariant = currents", ""]
    return "\n".join(lines)


BUILTIN_TEXT: dict[str, str] = {
    "spin-half-sphere": """[model]
name = spin-half-sphere
description = one spin-1/2 aligned with a unit vector on the sphere

[lattice]
kind = point

[parameters]
b = 0.5

[hamiltonian]
-b*sin(theta)*cos(phi)  0:x
-b*sin(theta)*sin(phi)  0:y
-b*cos(theta)  0:z

[family]
mesh = sphere2
resolution = 20x40
coordinates = theta, phi

[task]
invariant = chern
""",
    "translation-pump": """[model]
name = translation-pump
description = Neel state carried around an 8-site ring by partial-swap layers

[lattice]
kind = chain
size = 8

[charge]
density = spin-z
group = U1

[family]
mesh = circle
resolution = 64
coordinates = s
generator = swap-pump
windings = 1
field = 1.0

[task]
invariant = pump
cuts = 3,4,5
width = 2
""",
    "product-2d-u1": """[model]
name = product-2d-u1
description = on-site field on a 3x3 grid; the ground state is a product state

[lattice]
kind = grid
size = 3x3

[hamiltonian]
"""
    + "\n".join(f"-1.0  {j}:z" for j in range(9))
    + """

[charge]
density = spin-z
group = U1

[family]
mesh = point

[task]
invariant = hall
apex = 1.2,1.3
apex_alt = 1.9,1.6
sector_start = 0.1
""",
    "tfim-chain": _tfim_text(),
    "xx-chain": _xx_text(),
    "heisenberg-2site": """[model]
name = heisenberg-2site
description = antiferromagnetic Heisenberg dimer

[lattice]
kind = chain
size = 2

[hamiltonian]
1.0  0:x 1:x
1.0  0:y 1:y
1.0  0:z 1:z

[family]
mesh = point

[task]
invariant = filters
""",
    "chiral-u1-grid": _chiral_grid_text(),
}
BUILTIN_TEXT["translation-pump-double"] = (
    BUILTIN_TEXT["translation-pump"]
    .replace("name = translation-pump", "name = translation-pump-double")
    .replace("windings = 1", "windings = 2")
    .replace("by partial-swap layers", "twice per period by partial-swap layers")
)


def builtin_names() -> list[str]:
    return sorted(BUILTIN_TEXT)


def load_model(name_or_path: str) -> ModelSpec:
    """A built-in model by name, or a model file by path."""
    if name_or_path in BUILTIN_TEXT:
        return parse_model(BUILTIN_TEXT[name_or_path])
    path = Path(name_or_path)
    if not path.exists():
        raise ModelError(f"no built-in model or file named {name_or_path!r}")
    return parse_model(path.read_text(encoding="utf-8"))
