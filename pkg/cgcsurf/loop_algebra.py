"""Truncated matrix Laurent series in the loop parameter λ.

A :class:`LoopMatrix` holds 2×2 complex coefficients for a run of consecutive
powers of λ.  Products are truncated to the window ``[-max_degree, max_degree]``
of a :class:`TruncationPolicy`; whatever falls outside the window is recorded
in ``tail`` so callers can tell an under-resolved loop from a converged one.

Architecture:
    Everything is stored as coefficient stacks of shape ``(n, 2, 2)``.  Batch
    helpers (``evaluate_coefficients``, ``convolve``) accept extra leading axes
    so whole grids of loops can be evaluated with one einsum.

    Group elements of the twisted loop group satisfy two conditions that are
    checked here rather than assumed:

    * σ-twisting: even powers are diagonal, odd powers anti-diagonal.  Every
      operation in this module preserves exact zeros, so the pattern survives
      arithmetic bit-for-bit.
    * τ-reality: the value at real λ is in SU(2).
"""
from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Basis of the quaternion algebra (e0 = identity, e1..e3 span su(2))
# ---------------------------------------------------------------------------

E0 = np.array([[1, 0], [0, 1]], dtype=complex)
E1 = np.array([[0, 1], [-1, 0]], dtype=complex)
E2 = np.array([[0, 1j], [1j, 0]], dtype=complex)
E3 = np.array([[1j, 0], [0, -1j]], dtype=complex)

for _m in (E0, E1, E2, E3):
    _m.setflags(write=False)

_OFF_DIAGONAL = np.array([[False, True], [True, False]])


class LoopAlgebraError(Exception):
    """Base class for loop arithmetic failures."""


class SingularLoop(LoopAlgebraError):
    """The normalized factor of a loop cannot be inverted."""


class ZeroLambda(LoopAlgebraError, ValueError):
    """A loop was evaluated (or rescaled) at λ = 0."""


# ---------------------------------------------------------------------------
# Matrix2 helpers
# ---------------------------------------------------------------------------

def det2(m: np.ndarray) -> np.ndarray:
    """Determinant of a 2×2 matrix or of a stack ``(..., 2, 2)``."""
    return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]


def adjugate2(m: np.ndarray) -> np.ndarray:
    """Adjugate of a 2×2 matrix or stack; ``m @ adj(m) = det(m) I``."""
    out = np.empty_like(m)
    out[..., 0, 0] = m[..., 1, 1]
    out[..., 1, 1] = m[..., 0, 0]
    out[..., 0, 1] = -m[..., 0, 1]
    out[..., 1, 0] = -m[..., 1, 0]
    return out


def p_coordinate(m: np.ndarray) -> np.ndarray:
    """Complex coordinate x₁ + i·x₂ of the span(e₁, e₂) part of su(2) matrices."""
    return (m[..., 0, 1] - np.conj(m[..., 1, 0])) / 2


def k_coordinate(m: np.ndarray) -> np.ndarray:
    """Real e₃-coordinate of su(2) matrices."""
    return (m[..., 0, 0].imag - m[..., 1, 1].imag) / 2


def su2_defect(m: np.ndarray) -> np.ndarray:
    """Per-matrix max of |m·m* − I| and |det m − 1| for a stack ``(..., 2, 2)``."""
    m = np.asarray(m, dtype=complex)
    unitary = np.abs(m @ np.conj(np.swapaxes(m, -1, -2)) - E0).max(axis=(-2, -1))
    return np.maximum(unitary, np.abs(det2(m) - 1))


def is_su2(m: np.ndarray, tol: float = 1e-8) -> bool:
    """True if ``m`` is unitary with unit determinant within ``tol``."""
    return bool(np.all(su2_defect(m) <= tol))


# ---------------------------------------------------------------------------
# Truncation policy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TruncationPolicy:
    """Window of retained λ-powers and the tail threshold for convergence."""

    max_degree: int = 24
    tail_tolerance: float = 1e-10

    def __post_init__(self) -> None:
        if int(self.max_degree) != self.max_degree or self.max_degree < 1:
            raise ValueError(f"max_degree must be an integer >= 1, got {self.max_degree!r}")
        if not self.tail_tolerance >= 0:
            raise ValueError(f"tail_tolerance must be nonnegative, got {self.tail_tolerance!r}")


DEFAULT_POLICY = TruncationPolicy()


# ---------------------------------------------------------------------------
# Coefficient-stack primitives
# ---------------------------------------------------------------------------

def convolve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cauchy product of coefficient stacks shaped ``(..., n, 2, 2)``.

    Loops over the shorter operand; leading batch axes broadcast.
    """
    n1, n2 = a.shape[-3], b.shape[-3]
    batch = np.broadcast_shapes(a.shape[:-3], b.shape[:-3])
    out = np.zeros(batch + (n1 + n2 - 1, 2, 2), dtype=complex)
    if n1 <= n2:
        for i in range(n1):
            out[..., i:i + n2, :, :] += a[..., i:i + 1, :, :] @ b
    else:
        for j in range(n2):
            out[..., j:j + n1, :, :] += a @ b[..., j:j + 1, :, :]
    return out


def _coefficient_norms(coeffs: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.abs(coeffs) ** 2, axis=(-2, -1)))


def _trim(coeffs: np.ndarray, low: int) -> tuple[np.ndarray, int]:
    """Drop exactly-zero coefficients at both ends (keeps at least one)."""
    nonzero = np.flatnonzero(np.any(coeffs != 0, axis=(-2, -1)))
    if nonzero.size == 0:
        return np.zeros((1, 2, 2), dtype=complex), 0
    first, last = int(nonzero[0]), int(nonzero[-1])
    return coeffs[first:last + 1], low + first


def _truncate(coeffs: np.ndarray, low: int, max_degree: int) -> tuple[np.ndarray, int, float]:
    """Clip a single stack to ``[-max_degree, max_degree]``; returns the dropped norm."""
    high = low + coeffs.shape[0] - 1
    lo, hi = max(low, -max_degree), min(high, max_degree)
    norms = _coefficient_norms(coeffs)
    keep = np.zeros(coeffs.shape[0], dtype=bool)
    if lo <= hi:
        keep[lo - low:hi - low + 1] = True
    dropped = float(norms[~keep].max()) if (~keep).any() else 0.0
    if lo > hi:
        return np.zeros((1, 2, 2), dtype=complex), 0, dropped
    return coeffs[lo - low:hi - low + 1], lo, dropped


def evaluate_coefficients(coeffs: np.ndarray, low: int, lams) -> np.ndarray:
    """Evaluate stacked loops ``(..., n, 2, 2)`` at one λ or an array of them.

    A scalar ``lams`` gives shape ``(..., 2, 2)``; an array of ``m`` values
    gives ``(..., m, 2, 2)``.
    """
    lam_arr = np.asarray(lams, dtype=complex)
    if np.any(lam_arr == 0):
        raise ZeroLambda("cannot evaluate a Laurent series at lambda = 0")
    degrees = np.arange(low, low + coeffs.shape[-3])
    powers = lam_arr[..., None] ** degrees
    if lam_arr.ndim == 0:
        return np.einsum("n,...nab->...ab", powers, coeffs)
    return np.einsum("mn,...nab->...mab", powers, coeffs)


# ---------------------------------------------------------------------------
# LoopMatrix
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LoopMatrix:
    """Truncated Laurent series Σ coeffs[k] λ^(low + k) with 2×2 coefficients."""

    low: int
    coeffs: np.ndarray
    tail: float = 0.0

    def __post_init__(self) -> None:
        c = np.array(self.coeffs, dtype=complex, copy=True)
        if c.ndim == 2:
            c = c[None]
        if c.ndim != 3 or c.shape[1:] != (2, 2) or c.shape[0] == 0:
            raise ValueError(f"coefficients must have shape (n, 2, 2), got {c.shape}")
        c, low = _trim(c, int(self.low))
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "tail", float(self.tail))

    # -- constructors -------------------------------------------------------

    @classmethod
    def identity(cls) -> LoopMatrix:
        return cls(0, E0[None])

    @classmethod
    def zero(cls) -> LoopMatrix:
        return cls(0, np.zeros((1, 2, 2)))

    @classmethod
    def constant(cls, m) -> LoopMatrix:
        return cls(0, np.asarray(m, dtype=complex)[None])

    @classmethod
    def monomial(cls, power: int, m) -> LoopMatrix:
        return cls(power, np.asarray(m, dtype=complex)[None])

    @classmethod
    def from_terms(cls, terms: Mapping[int, np.ndarray]) -> LoopMatrix:
        """Build from ``{power: matrix}``; repeated powers are not possible."""
        if not terms:
            return cls.zero()
        low, high = min(terms), max(terms)
        coeffs = np.zeros((high - low + 1, 2, 2), dtype=complex)
        for k, m in terms.items():
            coeffs[k - low] = m
        return cls(low, coeffs)

    # -- accessors ----------------------------------------------------------

    @property
    def high(self) -> int:
        return self.low + self.coeffs.shape[0] - 1

    @property
    def degrees(self) -> np.ndarray:
        return np.arange(self.low, self.high + 1)

    def coefficient(self, k: int) -> np.ndarray:
        """Coefficient of λ^k (zero outside the stored range)."""
        if self.low <= k <= self.high:
            return self.coeffs[k - self.low].copy()
        return np.zeros((2, 2), dtype=complex)

    def terms(self) -> dict[int, np.ndarray]:
        return {int(k): c for k, c in zip(self.degrees, self.coeffs) if np.any(c != 0)}

    def nonnegative_part(self) -> LoopMatrix:
        if self.high < 0:
            return LoopMatrix.zero()
        start = max(0, -self.low)
        return LoopMatrix(self.low + start, self.coeffs[start:], self.tail)

    def negative_part(self) -> LoopMatrix:
        if self.low >= 0:
            return LoopMatrix.zero()
        stop = min(self.coeffs.shape[0], -self.low)
        return LoopMatrix(self.low, self.coeffs[:stop], self.tail)

    # -- invariants ---------------------------------------------------------

    def is_twisted(self) -> bool:
        """Exact σ-twisting: even powers diagonal, odd powers anti-diagonal."""
        even = self.degrees % 2 == 0
        off = self.coeffs[:, _OFF_DIAGONAL]
        diag = self.coeffs[:, ~_OFF_DIAGONAL]
        return bool(np.all(off[even] == 0) and np.all(diag[~even] == 0))

    def is_trace_free(self, tol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(self.coeffs[:, 0, 0] + self.coeffs[:, 1, 1]) <= tol))

    def is_unitary_on_reals(self, samples: Iterable[float], tol: float = 1e-8) -> bool:
        return all(is_su2(evaluate(self, lam), tol) for lam in samples)

    def boundary_norm(self, policy: TruncationPolicy) -> float:
        """Largest coefficient norm at |k| = max_degree, or lost to truncation."""
        norms = _coefficient_norms(self.coeffs)
        at_edge = np.abs(self.degrees) >= policy.max_degree
        edge = float(norms[at_edge].max()) if at_edge.any() else 0.0
        return max(edge, self.tail)

    def under_resolved(self, policy: TruncationPolicy) -> bool:
        return self.boundary_norm(policy) > policy.tail_tolerance

    def max_abs_difference(self, other: LoopMatrix) -> float:
        """Largest coefficient-wise Frobenius distance to ``other``."""
        a, b, _ = _align(self, other)
        return float(_coefficient_norms(a - b).max())

    # -- linear structure ---------------------------------------------------

    def __add__(self, other: LoopMatrix) -> LoopMatrix:
        a, b, low = _align(self, other)
        return LoopMatrix(low, a + b, max(self.tail, other.tail))

    def __sub__(self, other: LoopMatrix) -> LoopMatrix:
        a, b, low = _align(self, other)
        return LoopMatrix(low, a - b, max(self.tail, other.tail))

    def __mul__(self, scalar: complex) -> LoopMatrix:
        if isinstance(scalar, LoopMatrix):
            return NotImplemented
        return LoopMatrix(self.low, self.coeffs * scalar, self.tail)

    __rmul__ = __mul__

    def __neg__(self) -> LoopMatrix:
        return LoopMatrix(self.low, -self.coeffs, self.tail)

    def __repr__(self) -> str:
        return f"LoopMatrix(low={self.low}, high={self.high}, tail={self.tail:.1e})"


def _align(a: LoopMatrix, b: LoopMatrix) -> tuple[np.ndarray, np.ndarray, int]:
    """Pad two loops onto a common degree range."""
    low, high = min(a.low, b.low), max(a.high, b.high)
    n = high - low + 1
    pa = np.zeros((n, 2, 2), dtype=complex)
    pb = np.zeros((n, 2, 2), dtype=complex)
    pa[a.low - low:a.high - low + 1] = a.coeffs
    pb[b.low - low:b.high - low + 1] = b.coeffs
    return pa, pb, low


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def mul(a: LoopMatrix, b: LoopMatrix, policy: TruncationPolicy = DEFAULT_POLICY) -> LoopMatrix:
    """Truncated Cauchy product ``a·b``."""
    coeffs, low, dropped = _truncate(convolve(a.coeffs, b.coeffs), a.low + b.low, policy.max_degree)
    return LoopMatrix(low, coeffs, max(a.tail, b.tail, dropped))


def _scalar_mul(x: np.ndarray, xlow: int, y: np.ndarray, ylow: int,
                lo: int, hi: int) -> np.ndarray:
    """Scalar Laurent product restricted to degrees ``lo..hi`` (dense)."""
    full = np.convolve(x, y)
    flow = xlow + ylow
    out = np.zeros(hi - lo + 1, dtype=complex)
    src_lo, src_hi = max(lo, flow), min(hi, flow + full.size - 1)
    if src_lo <= src_hi:
        out[src_lo - lo:src_hi - lo + 1] = full[src_lo - flow:src_hi - flow + 1]
    return out


def _scalar_inverse(d: np.ndarray, dlow: int, window: int) -> tuple[np.ndarray, int]:
    """Invert a scalar Laurent series on the unit circle.

    The dominant monomial ``c λ^m`` is factored out; the normalized factor
    ``n = 1 + r`` must satisfy ``‖r‖₁ < 1`` (then it has no zeros on the
    circle) and is inverted by Newton's iteration ``x ↦ x(2 − n x)`` seeded
    with the inverse of its λ⁰ term.
    """
    mags = np.abs(d)
    m = int(np.argmax(mags))
    lead = d[m]
    if lead == 0:
        raise SingularLoop("determinant series vanishes identically")
    normalized = d / lead
    nlow = -m
    if np.sum(np.abs(normalized)) - 1.0 >= 1.0:
        raise SingularLoop("normalized determinant factor is not invertible on the unit circle")
    x = np.zeros(2 * window + 1, dtype=complex)
    x[window] = 1.0 / normalized[m]
    for _ in range(64):
        nx = _scalar_mul(normalized, nlow, x, -window, -window, window)
        two_minus = -nx
        two_minus[window] += 2.0
        x_new = _scalar_mul(x, -window, two_minus, -window, -window, window)
        step = np.abs(x_new - x).max()
        x = x_new
        if step <= 1e-16 * max(1.0, np.abs(x).max()):
            break
    shift = -(dlow + m)
    return x / lead, -window + shift


def inverse(a: LoopMatrix, policy: TruncationPolicy = DEFAULT_POLICY) -> LoopMatrix:
    """Loop inverse ``a⁻¹`` on the retained degrees.

    Computed as ``adj(a)·det(a)⁻¹``; the scalar determinant is inverted by
    factoring out its dominant monomial and running Newton's iteration on
    the normalized factor.  The matrix result is then polished with
    ``X ↦ X(2I − aX)`` as long as that reduces the defect.
    """
    c = a.coeffs
    det = np.convolve(c[:, 0, 0], c[:, 1, 1]) - np.convolve(c[:, 0, 1], c[:, 1, 0])
    det_low = 2 * a.low
    nz = np.flatnonzero(det != 0)
    if nz.size == 0:
        raise SingularLoop("determinant series vanishes identically")
    det = det[nz[0]:nz[-1] + 1]
    det_low += int(nz[0])
    window = policy.max_degree + abs(det_low) + det.size
    inv_det, inv_low = _scalar_inverse(det, det_low, window)
    scalar = LoopMatrix(inv_low, inv_det[:, None, None] * E0)
    adj = LoopMatrix(a.low, adjugate2(a.coeffs), a.tail)
    x = mul(adj, scalar, policy)
    eye = LoopMatrix.identity()
    defect = (eye - mul(a, x, policy))
    best = defect.max_abs_difference(LoopMatrix.zero())
    for _ in range(3):
        if best <= 1e-15:
            break
        candidate = x + mul(x, defect, policy)
        new_defect = eye - mul(a, candidate, policy)
        err = new_defect.max_abs_difference(LoopMatrix.zero())
        if err >= best:
            break
        x, defect, best = candidate, new_defect, err
    return LoopMatrix(x.low, x.coeffs, max(x.tail, a.tail))


def evaluate(a: LoopMatrix, lam: complex) -> np.ndarray:
    """Value of ``a`` at a nonzero λ."""
    if lam == 0:
        raise ZeroLambda("cannot evaluate a Laurent series at lambda = 0")
    return evaluate_coefficients(a.coeffs, a.low, complex(lam))


def d_lambda(a: LoopMatrix) -> LoopMatrix:
    """Formal derivative with respect to λ."""
    k = a.degrees.astype(float)
    return LoopMatrix(a.low - 1, a.coeffs * k[:, None, None], a.tail)


def reindex_scale(a: LoopMatrix, s: float) -> LoopMatrix:
    """Substitute λ ↦ sλ, i.e. scale the λ^k coefficient by s^k."""
    if s == 0:
        raise ZeroLambda("rescaling by s = 0 is not defined")
    factors = np.power(float(s), a.degrees.astype(float))
    return LoopMatrix(a.low, a.coeffs * factors[:, None, None], a.tail)
