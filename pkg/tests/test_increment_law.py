import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rilt.increment_law import (
    IncrementLaw,
    LawError,
    builtin_law,
    characteristic_function,
    one_minus_phi,
    resolve_law,
    validate,
)


def test_default_law_is_compliant(law):
    rep = validate(law)
    assert rep.compliant
    assert rep.mean == (0, 0)
    assert rep.covariance == ((1, 0), (0, 1))
    assert rep.aperiodicity_margin > 0
    assert rep.failures() == []


def test_default_atoms_are_exact_products(law):
    atoms = dict(law.atoms)
    assert atoms[(0, 0)] == Fraction(9, 256)
    assert atoms[(1, -2)] == Fraction(3, 256)
    assert sum(atoms.values()) == 1
    assert len(atoms) == 25


@pytest.mark.parametrize("name", ["srw", "diagonal"])
def test_periodic_laws_fail_aperiodicity(name):
    rep = validate(builtin_law(name))
    assert not rep.compliant
    assert "strong aperiodicity" in rep.failures()


def test_king_law_has_wrong_covariance():
    rep = validate(builtin_law("king"))
    assert "covariance" in rep.failures()


def test_diagonal_law_misses_the_lattice():
    assert not validate(builtin_law("diagonal")).generates_lattice
    assert validate(builtin_law("srw")).generates_lattice


def test_bad_probabilities_rejected():
    with pytest.raises(LawError):
        IncrementLaw(atoms=(((0, 0), Fraction(1, 2)),))
    with pytest.raises(LawError):
        IncrementLaw(atoms=(((0, 0), Fraction(3, 2)), ((1, 0), Fraction(-1, 2))))
    with pytest.raises(LawError):
        builtin_law("nope")


def test_json_roundtrip(law, tmp_path):
    p = tmp_path / "law.json"
    p.write_text(law.to_json())
    back = resolve_law(str(p))
    assert back.atoms == law.atoms
    assert back.digest == law.digest
    assert back.factor == law.factor
    assert len(json.loads(p.read_text())) == 25


def test_one_minus_phi_matches_direct(law, rng):
    th = rng.uniform(-np.pi, np.pi, size=(200, 2))
    np.testing.assert_allclose(one_minus_phi(law, th), 1 - characteristic_function(law, th), atol=1e-14)


@given(st.floats(1e-6, 1e-3), st.floats(0, 2 * np.pi))
def test_one_minus_phi_quadratic_near_origin(r, a):
    law = builtin_law("default")
    th = r * np.array([np.cos(a), np.sin(a)])
    # unit covariance: 1 - phi ~ |theta|^2 / 2
    assert one_minus_phi(law, th) == pytest.approx(0.5 * r * r, rel=1e-5)
