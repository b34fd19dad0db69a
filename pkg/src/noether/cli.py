"""``noether`` command line: one subcommand per task, results on stdout or ``--out``."""

from __future__ import annotations

import sys
import time
from typing import Callable

import click

from . import runner
from .models import ModelError, builtin_names, load_model


def _common(fn: Callable) -> Callable:
    options = [
        click.option("--model", "model", required=True, help=f"Model file or built-in name ({', '.join(builtin_names())})."),
        click.option("--gap-fraction", type=float, default=0.5, show_default=True, help="Filter cutoff as a fraction of the gap."),
        click.option("--bump-profile", type=click.Choice(["bump", "cosine"]), default="bump", show_default=True),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--out", type=click.Path(dir_okay=False, writable=True), default=None, help="Write here instead of stdout."),
        click.option("--format", "fmt", type=click.Choice(["json", "csv", "plotdata"]), default="json", show_default=True),
        click.option("--cache-dir", type=click.Path(file_okay=False), default=None, envvar=runner.CACHE_ENV, help="Spectral cache directory."),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


def _finish(result: runner.RunResult, out: str | None, fmt: str, started: float) -> None:
    data = runner.emit(result, fmt)
    if out:
        with open(out, "wb") as fh:
            fh.write(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    click.echo(f"wall-clock {time.perf_counter() - started:.2f} s", err=True)
    for k, v in result.diagnostics.items():
        click.echo(f"{k} {v}", err=True)
    failures = result.failures()
    for k, v in failures.items():
        click.echo(f"residual {k} = {v:.3e} exceeds {runner.TOLERANCES[k]:.1e}", err=True)
    sys.exit(0 if not failures else 1)


def _load(model: str):
    try:
        return load_model(model)
    except ModelError as exc:
        raise click.BadParameter(str(exc), param_hint="--model") from None


@click.group()
@click.version_option(runner.software_version(), prog_name="noether")
def main() -> None:
    """Noether-complex computations on finite spin lattices."""


@main.command("check-complex")
@_common
@click.option("--cases", type=int, default=20, show_default=True)
def check_complex(model, gap_fraction, bump_profile, seed, out, fmt, cache_dir, cases):
    """Chain-complex and bracket identities on random chains over the model lattice."""
    t = time.perf_counter()
    _finish(runner.run_check_complex(_load(model), seed, cases), out, fmt, t)


@main.command("currents")
@_common
def currents(model, gap_fraction, bump_profile, seed, out, fmt, cache_dir):
    """Energy and charge currents with their conservation residuals."""
    t = time.perf_counter()
    _finish(runner.run_currents(_load(model), seed), out, fmt, t)


@main.command("lr-probe")
@_common
@click.option("--times", default=None, help="Comma-separated times; defaults to the model's task block.")
def lr_probe(model, gap_fraction, bump_profile, seed, out, fmt, cache_dir, times):
    """Commutator norms of an evolved on-site operator against probes at distance r."""
    t = time.perf_counter()
    ts = [float(x) for x in times.split(",")] if times else None
    _finish(runner.run_lr_probe(_load(model), ts, gap_fraction, bump_profile, seed, cache_dir), out, fmt, t)


@main.command("berry")
@_common
@click.option("--res", default=None, help="Mesh resolution, e.g. 20x40.")
def berry(model, gap_fraction, bump_profile, seed, out, fmt, cache_dir, res):
    """Integral of the zero-dimensional higher Berry form over the parameter mesh."""
    t = time.perf_counter()
    _finish(runner.run_berry(_load(model), res, gap_fraction, bump_profile, seed, cache_dir), out, fmt, t)


@main.command("hall")
@_common
@click.option("--full/--expectations-only", default=False, show_default=True, help="Build the full degree-two component.")
def hall(model, gap_fraction, bump_profile, seed, out, fmt, cache_dir, full):
    """Equivariant degree-two invariant at two partition apexes."""
    t = time.perf_counter()
    _finish(runner.run_hall(_load(model), gap_fraction, bump_profile, seed, cache_dir, full), out, fmt, t)


@main.command("pump")
@_common
@click.option("--period-steps", "--res", "period_steps", type=int, default=None, help="Edges of the circle mesh.")
@click.option("--check-points", type=int, default=1, show_default=True, help="Nodes where the full descent is verified.")
def pump(model, gap_fraction, bump_profile, seed, out, fmt, cache_dir, period_steps, check_points):
    """Charge pumped across each cut in one period."""
    t = time.perf_counter()
    result = runner.run_pump(
        _load(model), period_steps, gap_fraction, bump_profile, seed, cache_dir, check_points=check_points
    )
    _finish(result, out, fmt, t)


if __name__ == "__main__":
    main()
