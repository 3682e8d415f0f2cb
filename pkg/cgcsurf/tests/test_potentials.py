"""Tests for potential pairs: schema parsing, domain rules, built-ins, regularity."""
from __future__ import annotations

import json
import logging

import numpy as np
import pytest

from cgcsurf.loop_algebra import E1, E2, E3, evaluate
from cgcsurf.potentials import (
    BUILTINS,
    AlgebraViolation,
    AxisPotential,
    DegreeViolation,
    PotentialError,
    PotentialTerm,
    RegularityViolation,
    SchemaError,
    TwistingViolation,
    UnknownBuiltin,
    builtin,
    check_regular,
    load_potential,
    parse_config,
)

# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------


def _matrix(m) -> list[list[float]]:
    return [[float(z.real), float(z.imag)] for z in np.asarray(m, dtype=complex).ravel()]


@pytest.fixture()
def document() -> dict:
    """JSON form of a u-dependent pair: η₊ = (1 + u)λe₂, η₋ = −λ⁻¹e₁ + e₃."""
    return {
        "eta_plus": [
            {"power": 1, "matrix": _matrix(E2), "coord_degree": 0},
            {"power": 1, "matrix": _matrix(E2), "coord_degree": 1},
        ],
        "eta_minus": [
            {"power": -1, "matrix": _matrix(-E1), "coord_degree": 0},
            {"power": 0, "matrix": _matrix(E3), "coord_degree": 0},
        ],
        "domain": {"u": [0.0, 1.0], "v": [-1.0, 1.0]},
    }


# ---------------------------------------------------------------------------
# Built-ins
# ---------------------------------------------------------------------------


class TestBuiltins:
    def test_catalog(self):
        assert set(BUILTINS) == {"revolution", "amsler"}

    def test_revolution_coefficient(self):
        pair = builtin("revolution")
        lam = 0.5
        expected = np.array([[0, -1 / lam + 1j * lam], [1 / lam + 1j * lam, 0]])
        np.testing.assert_allclose(evaluate(pair.eta_plus.at(0.3), lam), expected)
        np.testing.assert_allclose(evaluate(pair.eta_minus.at(1.7), lam), expected)

    def test_amsler_coefficients(self):
        pair = builtin("amsler")
        lam = 2.0
        np.testing.assert_allclose(evaluate(pair.eta_plus.at(0.0), lam), [[0, 2j], [2j, 0]])
        np.testing.assert_allclose(evaluate(pair.eta_minus.at(0.0), lam), [[0, -0.5], [0.5, 0]])

    def test_regularity_entries(self):
        for name in BUILTINS:
            pair = builtin(name)
            assert abs(pair.eta_plus.regularity_entry(0.0)) == pytest.approx(1.0)
            assert abs(pair.eta_minus.regularity_entry(0.0)) == pytest.approx(1.0)

    def test_builtins_are_regular(self):
        samples = np.linspace(0, 2, 11)
        for name in BUILTINS:
            assert check_regular(builtin(name), samples, samples) == []

    def test_unknown_builtin(self):
        with pytest.raises(UnknownBuiltin, match="revolution"):
            builtin("catenoid")

    def test_constant(self):
        assert builtin("revolution").eta_plus.is_constant

    def test_domain(self):
        assert builtin("amsler").domain == ((0.0, 2.0), (0.0, 2.0))


# ---------------------------------------------------------------------------
# parse_config
# ---------------------------------------------------------------------------


class TestParseConfig:
    def test_roundtrip_builtin(self):
        pair = builtin("revolution")
        assert parse_config(json.dumps(pair.to_document())) == pair

    def test_parses_polynomial_terms(self, document):
        pair = parse_config(document)
        np.testing.assert_allclose(pair.eta_plus.coefficient(1, 2.0), 3 * E2)
        assert not pair.eta_plus.is_constant
        assert pair.domain == ((0.0, 1.0), (-1.0, 1.0))
        assert pair.max_power == 1

    def test_accepts_bytes(self, document):
        assert parse_config(json.dumps(document).encode()) == parse_config(document)

    def test_invalid_json(self):
        with pytest.raises(SchemaError, match="invalid JSON"):
            parse_config("{not json")

    def test_missing_field_reports_path(self, document):
        del document["eta_plus"][0]["power"]
        with pytest.raises(SchemaError, match=r"eta_plus\.0\.power"):
            parse_config(document)

    def test_extra_field_rejected(self, document):
        document["eta_minus"][0]["scale"] = 2
        with pytest.raises(SchemaError):
            parse_config(document)

    def test_matrix_needs_four_entries(self, document):
        document["eta_plus"][0]["matrix"] = document["eta_plus"][0]["matrix"][:3]
        with pytest.raises(SchemaError, match="4"):
            parse_config(document)

    def test_degenerate_domain(self, document):
        document["domain"]["u"] = [1.0, 1.0]
        with pytest.raises(SchemaError, match="domain"):
            parse_config(document)

    def test_eta_plus_degree_bound(self, document):
        document["eta_plus"].append({"power": 3, "matrix": _matrix(E2), "coord_degree": 0})
        with pytest.raises(DegreeViolation, match=r"eta_plus\.2\.power"):
            parse_config(document)

    def test_eta_minus_degree_bound(self, document):
        document["eta_minus"].append({"power": -3, "matrix": _matrix(E1), "coord_degree": 0})
        with pytest.raises(DegreeViolation, match="eta_minus"):
            parse_config(document)

    def test_twisting_violation(self, document):
        document["eta_plus"][0]["matrix"] = _matrix(E3)
        with pytest.raises(TwistingViolation, match="anti-diagonal"):
            parse_config(document)

    def test_algebra_violation(self, document):
        document["eta_minus"][1]["matrix"] = _matrix(np.diag([1.0, -1.0]))
        with pytest.raises(AlgebraViolation, match="skew-Hermitian"):
            parse_config(document)

    def test_trace_violation(self, document):
        document["eta_minus"][1]["matrix"] = _matrix(np.diag([1j, 1j]))
        with pytest.raises(AlgebraViolation, match="trace-free"):
            parse_config(document)

    def test_regularity_identically_zero(self, document):
        document["eta_minus"] = [{"power": 0, "matrix": _matrix(E3), "coord_degree": 0}]
        with pytest.raises(RegularityViolation, match="eta_minus"):
            parse_config(document)

    def test_regularity_root_in_domain_warns(self, document, caplog):
        # (u - 0.5)λe₂ vanishes inside [0, 1]
        document["eta_plus"] = [
            {"power": 1, "matrix": _matrix(-0.5 * E2), "coord_degree": 0},
            {"power": 1, "matrix": _matrix(E2), "coord_degree": 1},
        ]
        with caplog.at_level(logging.WARNING, logger="cgcsurf.potentials"):
            pair = parse_config(document)
        assert "not regular" in caplog.text
        assert check_regular(pair, [0.0, 0.5, 1.0], [0.0]) == [("u", 0.5)]

    def test_errors_are_value_errors(self):
        with pytest.raises(ValueError):
            parse_config("[]")
        assert issubclass(PotentialError, ValueError)


# ---------------------------------------------------------------------------
# AxisPotential
# ---------------------------------------------------------------------------


class TestAxisPotential:
    def test_merges_repeated_terms(self):
        p = AxisPotential("u", (PotentialTerm(1, 0, E2), PotentialTerm(1, 0, E2)))
        assert len(p.terms) == 1
        np.testing.assert_allclose(p.terms[0].matrix, 2 * E2)

    def test_drops_cancelling_terms(self):
        p = AxisPotential("v", (PotentialTerm(-1, 0, E1), PotentialTerm(-1, 0, -E1)))
        assert p.terms == ()
        assert p.at(0.4).max_abs_difference(p.at(0.0)) == 0.0

    def test_bad_axis(self):
        with pytest.raises(SchemaError):
            AxisPotential("w", ())

    def test_degrees(self, document):
        pair = parse_config(document)
        assert pair.eta_minus.bottom_degree == -1
        assert pair.eta_minus.top_degree == 0

    def test_regularity_polynomial(self, document):
        poly = parse_config(document).eta_plus.regularity_polynomial()
        np.testing.assert_allclose(poly, [1j, 1j])


# ---------------------------------------------------------------------------
# load_potential / check_regular
# ---------------------------------------------------------------------------


class TestLoadPotential:
    def test_builtin_name(self):
        assert load_potential("amsler") == builtin("amsler")

    def test_file(self, tmp_path, document):
        path = tmp_path / "pair.json"
        path.write_text(json.dumps(document))
        assert load_potential(path) == parse_config(document)

    def test_missing(self, tmp_path):
        with pytest.raises(UnknownBuiltin, match="neither"):
            load_potential(str(tmp_path / "nope.json"))


class TestCheckRegular:
    def test_entry_vanishing_at_origin_is_reported_not_rejected(self, document, caplog):
        # η₊ = uλe₂: the (1,2) entry of (η₊)₁ is zero at u = 0 only
        document["eta_plus"] = [{"power": 1, "matrix": _matrix(E2), "coord_degree": 1}]
        with caplog.at_level(logging.WARNING, logger="cgcsurf.potentials"):
            pair = parse_config(document)
        assert "not regular" in caplog.text
        assert all(r.levelno == logging.WARNING for r in caplog.records)
        assert check_regular(pair, [0.0, 0.5, 1.0], [-1.0, 0.0, 1.0]) == [("u", 0.0)]

    def test_empty_samples(self):
        with pytest.raises(ValueError):
            check_regular(builtin("revolution"), [], [0.0])
