"""Task drivers behind the command line: run a model, collect residuals, emit results."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .chains import (
    MAX_DEGREE,
    Chain,
    boundary,
    bracket_identity_residuals,
    contract_total,
    homotopy,
    random_chain,
    residual,
)
from .currents import (
    HamiltonianDensity,
    ambiguity_witness,
    charge_current,
    conservation_residual,
    energy_current,
    homotopy_current,
)
from .descent import (
    EquivariantData,
    Family,
    FamilyEvaluator,
    Point,
    charge_diagonal,
    chern_integral,
    hall_conductance,
    thouless_charges,
    window_regions,
)
from .dense import DenseSpace
from .lattice import ConicalPartition, Lattice
from .models import ModelSpec
from .pauli import LocalOperator
from .spectral import SpectralContext, diagonalize, lieb_robinson_probe, lr_slope

CACHE_ENV = "NOETHER_CACHE_DIR"

TOLERANCES: dict[str, float] = {
    "d_squared": 0.0,
    "homotopy": 1e-12,
    "augmentation": 1e-12,
    "skew": 1e-12,
    "jacobi": 1e-12,
    "leibniz": 1e-12,
    "energy_conservation": 1e-12,
    "charge_conservation": 1e-12,
    "ambiguity": 1e-12,
    "stokes": 0.0,
    "lr_initial": 1e-12,
    "lr_slope": 0.0,
    "mc": 1e-7,
    "cycle": 1e-8,
    "partition": 1e-6,
    "equivariance": 1e-9,
    "imag": 1e-8,
    "t0": 1e-8,
    "mc0": 1e-8,
}


def software_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


@dataclass
class RunResult:
    """Invariant values with their residual ledger; ``runtime`` holds work counters, not clock time."""

    model: str
    mesh: dict[str, Any]
    invariant: str
    value: Any
    residuals: dict[str, float]
    runtime: dict[str, int] = field(default_factory=dict)
    provenance: dict[str, Any] = field(default_factory=dict)
    details: dict[str, Any] = field(default_factory=dict)
    table: list[dict[str, float]] = field(default_factory=list)
    plot: list[tuple[float, float]] = field(default_factory=list)
    diagnostics: dict[str, int] = field(default_factory=dict)

    def failures(self) -> dict[str, float]:
        out = {}
        for k, v in self.residuals.items():
            tol = TOLERANCES.get(k)
            if tol is not None and not (v <= tol):
                out[k] = v
        return out

    def ok(self) -> bool:
        return not self.failures()

    def as_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "model": self.model,
            "mesh": self.mesh,
            "invariant": self.invariant,
            "value": _jsonable(self.value),
            "residuals": {k: _jsonable(self.residuals[k]) for k in sorted(self.residuals)},
            "runtime": {k: self.runtime[k] for k in sorted(self.runtime)},
            "provenance": self.provenance,
        }
        if self.details:
            out["details"] = {k: _jsonable(self.details[k]) for k in sorted(self.details)}
        return out


def _jsonable(x: Any) -> Any:
    if isinstance(x, complex):
        return [float(x.real), float(x.imag)]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.complexfloating):
        return [float(x.real), float(x.imag)]
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def emit(result: RunResult | None, fmt: str = "json") -> bytes:
    """Serialize a result; field order is fixed so equal runs give equal bytes."""
    if result is None:
        return (json.dumps({"provenance": {"version": software_version()}}, indent=2) + "\n").encode()
    if fmt == "json":
        return (json.dumps(result.as_dict(), indent=2) + "\n").encode()
    if fmt == "csv":
        buf = io.StringIO()
        if result.table:
            cols = list(result.table[0])
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(cols)
            for row in result.table:
                w.writerow([repr(float(row[c])) for c in cols])
        else:
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["key", "value"])
            for k, v in _flatten(result.as_dict()):
                w.writerow([k, v])
        return buf.getvalue().encode()
    if fmt == "plotdata":
        lines = [f"# {result.invariant} {result.model}", "# x y"]
        lines += [f"{x!r} {y!r}" for x, y in result.plot]
        return ("\n".join(lines) + "\n").encode()
    raise ValueError(f"unknown format {fmt!r}")


def _flatten(d: Any, prefix: str = "") -> list[tuple[str, Any]]:
    if isinstance(d, dict):
        out = []
        for k, v in d.items():
            out += _flatten(v, f"{prefix}.{k}" if prefix else str(k))
        return out
    if isinstance(d, list):
        return [(prefix, json.dumps(d))]
    return [(prefix, d)]


# spectral cache ---------------------------------------------------------------------------------------

@dataclass
class CachedDiagonalizer:
    """Context factory that stores eigendecompositions on disk, keyed by model digest and point."""

    directory: Path
    model_digest: str
    space: DenseSpace
    gap_fraction: float = 0.5
    profile: str = "bump"
    conserved: np.ndarray | None = None
    hits: int = 0
    misses: int = 0

    def _path(self, m: Point) -> Path:
        point = ",".join(repr(round(float(x), 15)) for x in m)
        sector = "s" if self.conserved is not None else "f"
        name = f"{self.model_digest}_{sector}_{self.gap_fraction!r}_{self.profile}_{point}"
        return self.directory / (hashlib.sha256(name.encode()).hexdigest()[:32] + ".npz")

    def __call__(self, family: Family, m: Point) -> SpectralContext:
        path = self._path(m)
        if path.exists():
            with np.load(path) as data:
                n_sec = int(data["n_sectors"])
                sectors = tuple((data[f"idx{k}"], data[f"pos{k}"]) for k in range(n_sec)) if n_sec else None
                self.hits += 1
                return SpectralContext(
                    self.space,
                    data["hamiltonian"],
                    data["energies"],
                    data["vectors"],
                    float(data["delta_prime"]),
                    self.profile,
                    sectors,
                )
        ctx = diagonalize(family.hamiltonian(m), family.lattice, self.gap_fraction, self.profile, self.space, self.conserved)
        self.misses += 1
        arrays = {
            "hamiltonian": ctx.hamiltonian,
            "energies": ctx.energies,
            "vectors": ctx.vectors,
            "delta_prime": np.array(ctx.delta_prime),
            "n_sectors": np.array(len(ctx.sectors or ())),
        }
        for k, (idx, pos) in enumerate(ctx.sectors or ()):
            arrays[f"idx{k}"] = idx
            arrays[f"pos{k}"] = pos
        self.directory.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                np.savez(fh, **arrays)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return ctx


def make_evaluator(
    spec: ModelSpec,
    gap_fraction: float = 0.5,
    profile: str = "bump",
    cache_dir: str | os.PathLike | None = None,
    use_sectors: bool = True,
) -> tuple[FamilyEvaluator, EquivariantData | None]:
    family = spec.build_family()
    charge = spec.build_charge()
    data = EquivariantData(charge.density, charge.group) if charge is not None else None
    ev = FamilyEvaluator(family, gap_fraction=gap_fraction, profile=profile)
    if data is not None and use_sectors:
        try:
            ev.conserved = charge_diagonal(ev.space, data)
        except ValueError:
            ev.conserved = None
    cache_dir = cache_dir if cache_dir is not None else os.environ.get(CACHE_ENV)
    if cache_dir:
        ev.context_factory = CachedDiagonalizer(Path(cache_dir), spec.digest(), ev.space, gap_fraction, profile, ev.conserved)
    return ev, data


def _counters(ev: FamilyEvaluator, **extra: int) -> dict[str, int]:
    return {"diagonalizations": ev.diagonalizations, **extra}


def cache_report(ev: FamilyEvaluator) -> dict[str, int]:
    """Cache hits and misses; kept out of the JSON so output does not depend on cache state."""
    cache = ev.context_factory
    if isinstance(cache, CachedDiagonalizer):
        return {"cache_hits": cache.hits, "cache_misses": cache.misses}
    return {}


def _provenance(spec: ModelSpec, seed: int | None, **settings: Any) -> dict[str, Any]:
    out: dict[str, Any] = {"model_hash": spec.digest(), "version": software_version(), "seed": seed}
    out.update(settings)
    return out


def _with_cache(ev: FamilyEvaluator, result: RunResult) -> RunResult:
    result.diagnostics = cache_report(ev)
    return result


# tasks ----------------------------------------------------------------------------------------------------

def bracket_triple_degrees(rng: np.random.Generator) -> tuple[int, int, int]:
    """Degrees in {0, 1} whose nested brackets stay within the chain degree cap."""
    while True:
        degs = tuple(int(d) for d in rng.integers(0, 2, 3))
        if sum(degs) + 2 <= MAX_DEGREE:
            return degs  # type: ignore[return-value]


def complex_identity_residuals(lattice: Lattice, rng: np.random.Generator, cases: int = 20) -> dict[str, float]:
    """Worst residuals of the chain-complex and bracket identities over random chains."""
    worst = {k: 0.0 for k in ("d_squared", "homotopy", "augmentation", "skew", "jacobi", "leibniz")}
    for _ in range(cases):
        q = int(rng.integers(0, 3))
        a = random_chain(q, lattice, rng)
        da = boundary(a)
        if q >= 1:
            worst["d_squared"] = max(worst["d_squared"], boundary(da).size())
        worst["homotopy"] = max(worst["homotopy"], residual(homotopy(da) + boundary(homotopy(a)), a))
        der = boundary(random_chain(0, lattice, rng))
        worst["augmentation"] = max(worst["augmentation"], residual(boundary(homotopy(der)), der))
        x, y, z = (random_chain(d, lattice, rng) for d in bracket_triple_degrees(rng))
        for k, v in bracket_identity_residuals(x, y, z).items():
            worst[k] = max(worst[k], v)
    return worst


def run_check_complex(spec: ModelSpec, seed: int = 0, cases: int = 20) -> RunResult:
    lattice = spec.build_lattice()
    res = complex_identity_residuals(lattice, np.random.default_rng(seed), cases)
    return RunResult(
        spec.name,
        {"kind": "point"},
        "complex",
        None,
        res,
        {"cases": cases},
        _provenance(spec, seed),
    )


def run_currents(spec: ModelSpec, seed: int = 0) -> RunResult:
    lattice = spec.build_lattice()
    h = HamiltonianDensity.from_hamiltonian(lattice, spec.hamiltonian_at(()))
    res: dict[str, float] = {}
    je = energy_current(h)
    res["energy_conservation"] = conservation_residual(je, h, h.density)
    charge = spec.build_charge()
    if charge is not None:
        jq = charge_current(h, charge)
        res["charge_conservation"] = conservation_residual(jq, h, charge.density)
        alt = homotopy_current(h, charge.density)
        m = ambiguity_witness(jq, alt)
        res["ambiguity"] = residual(boundary(m), jq - alt)
    # Stokes: contracting a boundary against a two-region cut gives zero
    rng = np.random.default_rng(seed)
    exact = boundary(random_chain(2, lattice, rng)) if lattice.n_sites >= 3 else Chain(1, lattice)
    cut = sorted(lattice.site_ids)[lattice.n_sites // 2]
    regions = [[s for s in lattice.site_ids if s < cut], [s for s in lattice.site_ids if s >= cut]]
    total = contract_total(exact, regions)
    res["stokes"] = float(total.max_abs()) if isinstance(total, LocalOperator) else float(np.abs(total.matrix).max())
    return RunResult(spec.name, {"kind": "point"}, "currents", None, res, {"entries": len(je)}, _provenance(spec, seed))


def run_lr_probe(
    spec: ModelSpec,
    times: Sequence[float] | None = None,
    gap_fraction: float = 0.5,
    profile: str = "bump",
    seed: int = 0,
    cache_dir: str | None = None,
) -> RunResult:
    ev, _ = make_evaluator(spec, gap_fraction, profile, cache_dir)
    ctx = ev.context(())
    lattice = spec.build_lattice()
    label = spec.setting("task", "probe", "z") or "z"
    if times is None:
        times = [float(t) for t in (spec.setting("task", "times", "0,0.5,1.0") or "0").split(",")]
    site = sorted(lattice.site_ids)[0]
    a = LocalOperator.single(site, label, 1j)
    rows = lieb_robinson_probe(ctx, a, site, label, times)
    initial = max((r.norm for r in rows if r.t == 0 and r.r > 0), default=0.0)
    # the t = 0 row is zero up to rounding; its fit carries no information
    slope = max((lr_slope(rows, t) for t in times if t > 0), default=0.0)
    res = {"lr_initial": initial, "lr_slope": max(0.0, slope)}
    table = [{"t": r.t, "r": r.r, "norm": r.norm} for r in rows]
    last = max(times)
    return _with_cache(ev, RunResult(
        spec.name,
        {"kind": "point"},
        "lr",
        slope,
        res,
        _counters(ev),
        _provenance(spec, seed, gap_fraction=gap_fraction, profile=profile),
        {"times": list(times), "site": site, "probe": label},
        table,
        [(r.r, r.norm) for r in rows if r.t == last],
    ))


def run_berry(
    spec: ModelSpec,
    resolution: str | None = None,
    gap_fraction: float = 0.5,
    profile: str = "bump",
    seed: int = 0,
    cache_dir: str | None = None,
) -> RunResult:
    ev, _ = make_evaluator(spec, gap_fraction, profile, cache_dir)
    mesh = spec.mesh(resolution)
    chern = chern_integral(ev, mesh)
    res = dict(chern.residuals)
    res["partition"] = 0.0
    # latitude bands of the form for plotting along the theta direction
    bands: dict[float, complex] = {}
    for f, val in chern.form.items():
        theta = float(np.mean([mesh.vertices[v][0] for v in mesh.faces[f]]))
        key = round(theta, 12)
        bands[key] = bands.get(key, 0j) + val
    plot = [(t, float(bands[t].imag)) for t in sorted(bands)]
    return _with_cache(ev, RunResult(
        spec.name,
        {"kind": mesh.kind, "resolution": list(mesh.resolution)},
        "chern",
        chern.value,
        res,
        _counters(ev, faces=len(mesh.faces)),
        _provenance(spec, seed, gap_fraction=gap_fraction, profile=profile),
        {"chern_number": chern.chern},
        plot=plot,
    ))


def _apex(text: str | None) -> tuple[float, float]:
    x, y = (float(v) for v in (text or "0,0").split(","))
    return x, y


def run_hall(
    spec: ModelSpec,
    gap_fraction: float = 0.5,
    profile: str = "bump",
    seed: int = 0,
    cache_dir: str | None = None,
    full: bool = False,
) -> RunResult:
    ev, data = make_evaluator(spec, gap_fraction, profile, cache_dir)
    if data is None:
        raise ValueError("the Hall conductance needs a charge block")
    lattice = spec.build_lattice()
    start = float(spec.setting("task", "sector_start", "0.0") or 0.0)
    apexes = [_apex(spec.setting("task", "apex"))]
    if spec.setting("task", "apex_alt"):
        apexes.append(_apex(spec.setting("task", "apex_alt")))
    values = []
    res: dict[str, float] = {}
    for apex in apexes:
        regions = ConicalPartition.plane(apex, start).regions(lattice)
        hr = hall_conductance(ev, data, regions, full)
        values.append(hr.value)
        for k, v in hr.residuals.items():
            res[k] = max(res.get(k, 0.0), v)
    res["partition"] = float(max(values) - min(values))
    return _with_cache(ev, RunResult(
        spec.name,
        {"kind": "point"},
        "hall",
        values[0],
        res,
        _counters(ev),
        _provenance(spec, seed, gap_fraction=gap_fraction, profile=profile),
        {"apexes": [list(a) for a in apexes], "values": values},
    ))


def run_pump(
    spec: ModelSpec,
    period_steps: int | None = None,
    gap_fraction: float = 0.5,
    profile: str = "bump",
    seed: int = 0,
    cache_dir: str | None = None,
    order: int = 3,
    check_points: int = 1,
) -> RunResult:
    ev, data = make_evaluator(spec, gap_fraction, profile, cache_dir)
    if data is None:
        raise ValueError("the pump needs a charge block")
    steps = int(period_steps or int(spec.setting("family", "resolution", "64") or 64))
    width = int(spec.setting("task", "width", "2") or 2)
    cuts = [int(c) for c in (spec.setting("task", "cuts", "4") or "4").split(",")]
    results = thouless_charges(ev, data, [window_regions(c, width) for c in cuts], edges=steps, order=order, check_points=check_points)
    values = [r.value for r in results]
    res: dict[str, float] = {}
    for r in results:
        for k, v in r.residuals.items():
            res[k] = max(res.get(k, 0.0), float(v))
    res["partition"] = float(max(values) - min(values))
    plot = [(s, float((-1j * v).real)) for s, v in results[0].samples]
    return _with_cache(ev, RunResult(
        spec.name,
        {"kind": "circle", "resolution": [steps], "quadrature_order": order},
        "pump",
        values[0],
        res,
        _counters(ev, samples=len(results[0].samples)),
        _provenance(spec, seed, gap_fraction=gap_fraction, profile=profile),
        {"cuts": cuts, "values": values},
        plot=plot,
    ))
