from __future__ import annotations

import math

import pytest

from noether.descent import StaticFamily, SwapPumpFamily
from noether.models import (
    BUILTIN_TEXT,
    Expression,
    ModelError,
    builtin_names,
    emit_model,
    load_model,
    parse_model,
)
from noether.pauli import LocalOperator

MINIMAL = """[model]
name = one-spin

[lattice]
kind = chain
size = 1

[hamiltonian]
1.0  0:z
"""


def test_minimal_model():
    spec = parse_model(MINIMAL)
    assert spec.name == "one-spin"
    assert spec.build_lattice().n_sites == 1
    assert (spec.hamiltonian_at() - LocalOperator.single(0, "z")).is_zero()
    assert isinstance(spec.build_family(), StaticFamily)
    assert spec.build_charge() is None
    assert spec.mesh().kind == "point"


def test_missing_site_is_located():
    text = MINIMAL.replace("1.0  0:z", "1.0  0:x 5:z")
    with pytest.raises(ModelError, match="missing site 5") as err:
        parse_model(text)
    assert (err.value.line, err.value.column) == (9, 10)
    assert "line 9, column 10" in str(err.value)


@pytest.mark.parametrize("name", builtin_names())
def test_builtin_round_trip(name):
    spec = load_model(name)
    text = emit_model(spec)
    assert parse_model(text) == spec
    assert emit_model(parse_model(text)) == text


def test_builtin_library_contents():
    assert {"spin-half-sphere", "translation-pump", "translation-pump-double", "product-2d-u1", "tfim-chain", "heisenberg-2site"} <= set(builtin_names())
    assert builtin_names() == sorted(BUILTIN_TEXT)


@pytest.mark.parametrize(
    "line, message",
    [
        ("__import__('os')  0:z", "unsupported|unknown"),
        ("foo  0:z", "unknown name"),
        ("1.0 +  0:z", "bad expression"),
        ("i  0:z", "not self-adjoint"),
        ("floor(1.0)  0:z", "unknown function"),
        ("'a'  0:z", "unsupported constant"),
        ("1.0  0:q", "unknown operator"),
        ("1.0  0:x 0:z", "repeated site"),
        ("0:z", "no coefficient"),
        ("log(0)  0:z", "cannot evaluate"),
    ],
)
def test_bad_terms(line, message):
    with pytest.raises(ModelError, match=message) as err:
        parse_model(MINIMAL.replace("1.0  0:z", line))
    assert err.value.line == 9


@pytest.mark.parametrize(
    "text, message",
    [
        ("[bogus]\n", "unknown section"),
        ("name = x\n", "before the first section"),
        ("[model]\nname = a\nname = b\n", "duplicate key"),
        ("[model]\njust words\n", "key = value"),
        ("[lattice]\nkind = torus\n", "unknown lattice kind"),
        (MINIMAL + "\n[charge]\n1.0  0:z\n", "anti-self-adjoint"),
        (MINIMAL + "\n[family]\ngenerator = magic\n", None),
    ],
)
def test_bad_files(text, message):
    if message is None:
        with pytest.raises(ModelError, match="generator"):
            parse_model(text).build_family()
        return
    with pytest.raises(ModelError, match=message):
        parse_model(text)


def test_parameters_and_coordinates():
    spec = load_model("spin-half-sphere")
    assert spec.coordinates == ("theta", "phi")
    assert spec.environment((0.0, 0.0))["b"] == 0.5
    north = spec.hamiltonian_at((0.0, 0.0))
    assert (north - LocalOperator.single(0, "z", -0.5)).max_abs() <= 1e-15
    east = spec.hamiltonian_at((math.pi / 2, 0.0))
    assert (east - LocalOperator.single(0, "x", -0.5)).max_abs() <= 1e-15
    assert spec.mesh("4x8").resolution == (4, 8)


def test_pump_family_and_charge():
    spec = load_model("translation-pump-double")
    fam = spec.build_family()
    assert isinstance(fam, SwapPumpFamily) and fam.windings == 2 and fam.n_sites == 8
    charge = spec.build_charge()
    assert charge is not None and charge.group == "U1"


def test_explicit_charge_terms():
    spec = parse_model(MINIMAL.replace("size = 1", "size = 2") + "\n[charge]\n0.5*i  0:z\n0.5*i  1:z\n")
    charge = spec.build_charge()
    assert charge is not None
    assert sorted(charge.density.values) == [(0,), (1,)]


def test_digest_tracks_content():
    a = parse_model(MINIMAL)
    b = parse_model(MINIMAL.replace("1.0  0:z", "2.0  0:z"))
    assert a.digest() == parse_model(emit_model(a)).digest()
    assert a.digest() != b.digest()


def test_expression_canonical_form():
    e = Expression.parse("2*  x + sin( pi/2 )", frozenset({"x"}))
    assert e.text == "2 * x + sin(pi / 2)"
    assert e.evaluate({"x": 1.5}) == pytest.approx(4.0)
    assert not e.is_constant()
    assert Expression.parse("2*i", frozenset()).is_constant()


def test_load_from_path(tmp_path):
    path = tmp_path / "one.model"
    path.write_text(MINIMAL, encoding="utf-8")
    assert load_model(str(path)) == parse_model(MINIMAL)
    with pytest.raises(ModelError, match="no built-in model"):
        load_model(str(tmp_path / "absent.model"))
