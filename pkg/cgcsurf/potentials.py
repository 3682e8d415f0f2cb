"""Potential pairs: the input data of the d'Alembert construction.

A potential pair is two loop-algebra valued 1-forms, η₊(u) du and η₋(v) dv.
Coefficient functions are polynomials in the axis coordinate with constant
complex 2×2 matrices, so a term contributes ``matrix · t**coord_degree ·
λ**power``.  Configs are JSON documents validated by pydantic; domain rules
(degree bounds, twisting, su(2) membership, regularity) are enforced on top
and reported with field paths like ``eta_plus.2.power``.
"""
from __future__ import annotations

import json
import logging
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from cgcsurf.loop_algebra import LoopMatrix

log = logging.getLogger(__name__)

# Entry threshold below which a potential counts as non-regular at a point
REGULARITY_THRESHOLD = 1e-12
_ALGEBRA_TOL = 1e-12


class PotentialError(ValueError):
    """Base class for invalid potential data."""


class SchemaError(PotentialError):
    """The document does not match the potential schema."""


class DegreeViolation(PotentialError):
    """A term lies outside the admissible λ-degree range of its axis."""


class TwistingViolation(PotentialError):
    """A coefficient does not have the diagonal / anti-diagonal parity pattern."""


class AlgebraViolation(PotentialError):
    """A coefficient is not in su(2) (not trace-free or not skew-Hermitian)."""


class RegularityViolation(PotentialError):
    """The regularity entry of the pair vanishes identically."""


class UnknownBuiltin(PotentialError):
    """No built-in potential with the requested name."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PotentialTerm:
    power: int
    coord_degree: int
    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=complex, copy=True)
        if m.shape != (2, 2):
            raise SchemaError(f"matrix must be 2x2, got shape {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "power", int(self.power))
        object.__setattr__(self, "coord_degree", int(self.coord_degree))


_AXIS_FIELD = {"u": "eta_plus", "v": "eta_minus"}


def _canonical_terms(terms) -> tuple[PotentialTerm, ...]:
    """Merge repeated (power, coord_degree) keys, drop zero terms, sort."""
    merged: dict[tuple[int, int], np.ndarray] = {}
    for t in terms:
        key = (t.power, t.coord_degree)
        merged[key] = merged.get(key, 0) + t.matrix
    return tuple(
        PotentialTerm(p, d, m) for (p, d), m in sorted(merged.items()) if np.any(m != 0)
    )


@dataclass(frozen=True, eq=False)
class AxisPotential:
    """η₊ (axis ``u``) or η₋ (axis ``v``) as a finite sum of polynomial terms."""

    axis: str
    terms: tuple[PotentialTerm, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.axis not in _AXIS_FIELD:
            raise SchemaError(f"axis must be 'u' or 'v', got {self.axis!r}")
        prefix = _AXIS_FIELD[self.axis]
        for i, t in enumerate(self.terms):
            _validate_term(self.axis, t, f"{prefix}.{i}")
        object.__setattr__(self, "terms", _canonical_terms(self.terms))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AxisPotential):
            return NotImplemented
        if self.axis != other.axis or len(self.terms) != len(other.terms):
            return False
        return all(
            a.power == b.power and a.coord_degree == b.coord_degree
            and np.array_equal(a.matrix, b.matrix)
            for a, b in zip(self.terms, other.terms)
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def top_degree(self) -> int | None:
        return max((t.power for t in self.terms), default=None)

    @property
    def bottom_degree(self) -> int | None:
        return min((t.power for t in self.terms), default=None)

    @property
    def is_constant(self) -> bool:
        return all(t.coord_degree == 0 for t in self.terms)

    def coefficient(self, power: int, t: float) -> np.ndarray:
        """The λ^power coefficient at coordinate ``t``."""
        out = np.zeros((2, 2), dtype=complex)
        for term in self.terms:
            if term.power == power:
                out += term.matrix * t ** term.coord_degree
        return out

    def at(self, t: float) -> LoopMatrix:
        """η(t) as a loop-algebra element."""
        acc: dict[int, np.ndarray] = {}
        for term in self.terms:
            acc[term.power] = acc.get(term.power, 0) + term.matrix * t ** term.coord_degree
        return LoopMatrix.from_terms(acc)

    def regularity_polynomial(self) -> np.ndarray:
        """Coefficients (ascending degree) of the (1,2) entry of the regularity term.

        That is [(η₊)₁]₁₂ for axis ``u`` and [(η₋)₋₁]₁₂ for axis ``v``.
        """
        power = 1 if self.axis == "u" else -1
        degree = max((t.coord_degree for t in self.terms if t.power == power), default=0)
        poly = np.zeros(degree + 1, dtype=complex)
        for t in self.terms:
            if t.power == power:
                poly[t.coord_degree] += t.matrix[0, 1]
        return poly

    def regularity_entry(self, t) -> np.ndarray:
        poly = self.regularity_polynomial()
        return np.polynomial.polynomial.polyval(np.asarray(t, dtype=float), poly)


def _validate_term(axis: str, term: PotentialTerm, path: str) -> None:
    if axis == "u" and term.power > 1:
        raise DegreeViolation(f"{path}.power: eta_plus admits powers <= 1, got {term.power}")
    if axis == "v" and term.power < -1:
        raise DegreeViolation(f"{path}.power: eta_minus admits powers >= -1, got {term.power}")
    if term.coord_degree < 0:
        raise SchemaError(f"{path}.coord_degree: must be >= 0, got {term.coord_degree}")
    m = term.matrix
    if term.power % 2 == 0:
        if m[0, 1] != 0 or m[1, 0] != 0:
            raise TwistingViolation(f"{path}.matrix: even power {term.power} needs a diagonal matrix")
    elif m[0, 0] != 0 or m[1, 1] != 0:
        raise TwistingViolation(f"{path}.matrix: odd power {term.power} needs an anti-diagonal matrix")
    if abs(m[0, 0] + m[1, 1]) > _ALGEBRA_TOL:
        raise AlgebraViolation(f"{path}.matrix: coefficient is not trace-free")
    if np.abs(m + m.conj().T).max() > _ALGEBRA_TOL:
        raise AlgebraViolation(f"{path}.matrix: coefficient is not in su(2) (must be skew-Hermitian)")


@dataclass(frozen=True, eq=False)
class PotentialPair:
    """The d'Alembert data (η₊(u) du, η₋(v) dv) plus an optional rectangle."""

    eta_plus: AxisPotential
    eta_minus: AxisPotential
    domain: tuple[tuple[float, float], tuple[float, float]] | None = None

    def __post_init__(self) -> None:
        if self.eta_plus.axis != "u" or self.eta_minus.axis != "v":
            raise SchemaError("eta_plus must live on axis u and eta_minus on axis v")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PotentialPair):
            return NotImplemented
        return (self.eta_plus == other.eta_plus and self.eta_minus == other.eta_minus
                and self.domain == other.domain)

    __hash__ = None  # type: ignore[assignment]

    @property
    def max_power(self) -> int:
        """Largest |power| appearing in either potential."""
        powers = [abs(t.power) for t in (*self.eta_plus.terms, *self.eta_minus.terms)]
        return max(powers, default=0)

    def to_document(self) -> dict[str, Any]:
        """Serialise back into the JSON schema accepted by :func:`parse_config`."""

        def terms(p: AxisPotential) -> list[dict[str, Any]]:
            return [
                {
                    "power": t.power,
                    "matrix": [[float(z.real), float(z.imag)] for z in t.matrix.ravel()],
                    "coord_degree": t.coord_degree,
                }
                for t in p.terms
            ]

        doc: dict[str, Any] = {"eta_plus": terms(self.eta_plus), "eta_minus": terms(self.eta_minus)}
        if self.domain is not None:
            (a, b), (c, d) = self.domain
            doc["domain"] = {"u": [a, b], "v": [c, d]}
        return doc


# ---------------------------------------------------------------------------
# JSON schema
# ---------------------------------------------------------------------------

class TermModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    power: int
    matrix: list[tuple[float, float]]
    coord_degree: int

    @field_validator("matrix")
    @classmethod
    def matrix_has_four_entries(cls, v: list[tuple[float, float]]) -> list[tuple[float, float]]:
        if len(v) != 4:
            raise ValueError("matrix must list 4 [re, im] entries in row-major order")
        return v

    @field_validator("coord_degree")
    @classmethod
    def degree_nonnegative(cls, v: int) -> int:
        if v < 0:
            raise ValueError("coord_degree must be >= 0")
        return v

    def to_term(self) -> PotentialTerm:
        entries = np.array([complex(re, im) for re, im in self.matrix]).reshape(2, 2)
        return PotentialTerm(self.power, self.coord_degree, entries)


class DomainModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    u: tuple[float, float]
    v: tuple[float, float]

    @model_validator(mode="after")
    def intervals_nondegenerate(self) -> DomainModel:
        for name, (a, b) in (("u", self.u), ("v", self.v)):
            if not a < b:
                raise ValueError(f"domain.{name} must satisfy a < b, got [{a}, {b}]")
        return self


class PotentialDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    eta_plus: list[TermModel]
    eta_minus: list[TermModel]
    domain: DomainModel


def _format_validation_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err.get("loc", ())) or "document"
        parts.append(f"{loc}: {err.get('msg', 'invalid')}")
    return "; ".join(parts)


def parse_config(document: str | bytes | Mapping[str, Any]) -> PotentialPair:
    """Parse and validate a potential document.

    Raises:
        SchemaError: malformed JSON or schema mismatch (message lists field paths).
        DegreeViolation / TwistingViolation / AlgebraViolation: per-term rules.
        RegularityViolation: a regularity entry is identically zero.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"document: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    try:
        model = PotentialDocument.model_validate(document)
    except ValidationError as exc:
        raise SchemaError(_format_validation_error(exc)) from exc

    plus = AxisPotential("u", tuple(t.to_term() for t in model.eta_plus))
    minus = AxisPotential("v", tuple(t.to_term() for t in model.eta_minus))
    pair = PotentialPair(plus, minus, (tuple(model.domain.u), tuple(model.domain.v)))
    _check_regularity_polynomials(pair)
    return pair


def _check_regularity_polynomials(pair: PotentialPair) -> None:
    (a, b), (c, d) = pair.domain or ((-np.inf, np.inf), (-np.inf, np.inf))
    for pot, (lo, hi) in ((pair.eta_plus, (a, b)), (pair.eta_minus, (c, d))):
        name = _AXIS_FIELD[pot.axis]
        which = "(eta_plus)_1" if pot.axis == "u" else "(eta_minus)_-1"
        poly = pot.regularity_polynomial()
        if not np.any(np.abs(poly) > REGULARITY_THRESHOLD):
            raise RegularityViolation(f"{name}: entry (1,2) of {which} vanishes identically")
        trimmed = np.trim_zeros(poly, "b")
        if trimmed.size > 1:
            roots = np.polynomial.polynomial.polyroots(trimmed)
            real = [r.real for r in roots if abs(r.imag) <= 1e-9 and lo <= r.real <= hi]
            if real:
                log.warning("Potential %s is not regular at %s = %s", name, pot.axis,
                            ", ".join(f"{r:.6g}" for r in sorted(real)))


# ---------------------------------------------------------------------------
# Built-in catalog
# ---------------------------------------------------------------------------

def _revolution() -> PotentialPair:
    # A = [[0, -1/λ + iλ], [1/λ + iλ, 0]] on both axes
    a_plus = np.array([[0, 1j], [1j, 0]])
    a_minus = np.array([[0, -1], [1, 0]])
    terms = (PotentialTerm(1, 0, a_plus), PotentialTerm(-1, 0, a_minus))
    return PotentialPair(AxisPotential("u", terms), AxisPotential("v", terms), ((0.0, 2.0), (0.0, 2.0)))


def _amsler() -> PotentialPair:
    plus = AxisPotential("u", (PotentialTerm(1, 0, np.array([[0, 1j], [1j, 0]])),))
    minus = AxisPotential("v", (PotentialTerm(-1, 0, np.array([[0, -1], [1, 0]])),))
    return PotentialPair(plus, minus, ((0.0, 2.0), (0.0, 2.0)))


_BUILTINS = {
    "revolution": _revolution,
    "amsler": _amsler,
}

BUILTINS = tuple(_BUILTINS)


def builtin(name: str) -> PotentialPair:
    """One of the catalogued potential pairs (see ``BUILTINS``)."""
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise UnknownBuiltin(
            f"potential: unknown builtin {name!r} (choose from {', '.join(BUILTINS)})"
        ) from None
    return factory()


def load_potential(source: str | Path) -> PotentialPair:
    """Resolve a builtin name or a path to a JSON potential document."""
    if isinstance(source, str) and source in _BUILTINS:
        return builtin(source)
    path = Path(source)
    if not path.is_file():
        raise UnknownBuiltin(
            f"potential: {str(source)!r} is neither a builtin ({', '.join(BUILTINS)}) nor a file"
        )
    return parse_config(path.read_text())


def check_regular(pair: PotentialPair, u_samples, v_samples) -> list[tuple[str, float]]:
    """Sample points where the pair fails regularity, as ``(axis, coordinate)``."""
    u = np.asarray(u_samples, dtype=float).ravel()
    v = np.asarray(v_samples, dtype=float).ravel()
    if u.size == 0 or v.size == 0:
        raise ValueError("check_regular needs nonempty u and v sample lists")
    report: list[tuple[str, float]] = []
    for axis, pot, samples in (("u", pair.eta_plus, u), ("v", pair.eta_minus, v)):
        entries = np.abs(pot.regularity_entry(samples))
        report.extend((axis, float(t)) for t in samples[entries < REGULARITY_THRESHOLD])
    return report
