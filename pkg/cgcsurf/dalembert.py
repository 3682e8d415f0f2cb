"""Generalized d'Alembert construction of extended frames.

Pipeline:
    η₊(u), η₋(v)  --integrate_axis-->  F₊(u), F₋(v)
    Φ = F₊(u)⁻¹ F₋(v)  --birkhoff_split-->  Φ = H₋ H₊
    F̂(u, v) = F₊(u) H₋(u, v), normalized so that F̂(base) = I

The Birkhoff split solves a block-Toeplitz least-squares system for the
negative factor G₋ = H₋⁻¹; the unknowns are restricted to the twisting
pattern so that every factor is twisted exactly.

Off the unit circle the truncated series for F̂ loses accuracy like |λ|^±k,
so frames keep their factors and are evaluated there as F₊(u, λ)·H₋(λ) for
|λ| ≥ 1 and F₋(v, λ)·H₊(λ)⁻¹ for |λ| < 1, with F± integrated at the
scalar λ.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from cgcsurf.loop_algebra import (
    DEFAULT_POLICY,
    E0,
    LoopAlgebraError,
    LoopMatrix,
    TruncationPolicy,
    ZeroLambda,
    det2,
    evaluate,
    evaluate_coefficients,
    inverse,
    mul,
    p_coordinate,
)
from cgcsurf.potentials import AxisPotential, PotentialPair
from cgcsurf.utils import MAX_GRID_POINTS, derivative, stencil_mask, worker_count

log = logging.getLogger(__name__)

DEFAULT_MAX_STEP = 5e-3
BIG_CELL_TOLERANCE = 1e-8
RANK_TOLERANCE = 1e-12
REGULARITY_TOLERANCE = 1e-10
UNIT_CIRCLE_TOLERANCE = 1e-12
MAX_SUBSTEP_FACTOR = 256


class ConstructionError(Exception):
    """Base class for failures while building an extended frame."""


class OffBigCell(ConstructionError):
    """The loop has no Birkhoff factorization (or it is numerically lost)."""

    def __init__(self, message: str, point: tuple[float, float] | None = None):
        super().__init__(message)
        self.point = point


class NotInvertible(ConstructionError):
    """The loop's determinant vanishes somewhere on the unit circle."""


class TailOverflow(ConstructionError):
    """Truncation loss exceeds the tail tolerance; raise max_degree."""


class GridError(ValueError):
    """Grid shape or domain is malformed."""


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Tensor-product grid over ``u_range × v_range`` with a base point."""

    u_range: tuple[float, float]
    v_range: tuple[float, float]
    n_u: int
    n_v: int
    base: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        for name, n in (("n_u", self.n_u), ("n_v", self.n_v)):
            if int(n) != n or n < 2:
                raise GridError(f"{name} must be an integer >= 2, got {n!r}")
            if n > MAX_GRID_POINTS:
                raise GridError(f"{name} must be <= {MAX_GRID_POINTS}, got {n}")
        for name, (a, b) in (("u_range", self.u_range), ("v_range", self.v_range)):
            if not (math.isfinite(a) and math.isfinite(b) and a < b):
                raise GridError(f"{name} must satisfy a < b, got ({a}, {b})")
        object.__setattr__(self, "u_range", (float(self.u_range[0]), float(self.u_range[1])))
        object.__setattr__(self, "v_range", (float(self.v_range[0]), float(self.v_range[1])))
        object.__setattr__(self, "n_u", int(self.n_u))
        object.__setattr__(self, "n_v", int(self.n_v))
        if self.base is None:
            base = (int(np.argmin(np.abs(self.u))), int(np.argmin(np.abs(self.v))))
        else:
            base = (int(self.base[0]), int(self.base[1]))
            if not (0 <= base[0] < self.n_u and 0 <= base[1] < self.n_v):
                raise GridError(f"base index {base} outside a {self.n_u}x{self.n_v} grid")
        object.__setattr__(self, "base", base)

    @property
    def u(self) -> np.ndarray:
        return np.linspace(self.u_range[0], self.u_range[1], self.n_u)

    @property
    def v(self) -> np.ndarray:
        return np.linspace(self.v_range[0], self.v_range[1], self.n_v)

    @property
    def hu(self) -> float:
        return (self.u_range[1] - self.u_range[0]) / (self.n_u - 1)

    @property
    def hv(self) -> float:
        return (self.v_range[1] - self.v_range[0]) / (self.n_v - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_u, self.n_v


@dataclass(frozen=True)
class BirkhoffFactors:
    """Φ = H₋·H₊ with H₋ → I at λ = ∞."""

    h_minus: LoopMatrix
    h_plus: LoopMatrix
    residual: float
    order: int


@dataclass(frozen=True, eq=False)
class ExtendedFrame:
    """Grid of extended frames stored as dense coefficient stacks.

    ``coeffs[i, j, k]`` is the coefficient of λ^(low + k) at (uᵢ, vⱼ).
    Invalid points hold the identity and are excluded downstream.

    ``h_minus[i, j, k]`` and ``h_plus[i, j, k]`` are the λ⁻ᵏ and λᵏ
    coefficients of the unnormalized Birkhoff factors; together with
    ``pair`` they let :meth:`evaluate` leave the unit circle without
    summing ``coeffs``.  ``lam_scale`` is the associated-family factor s
    of :func:`associated_frame`: values are those of the built frame at sλ.
    """

    grid: GridSpec
    low: int
    coeffs: np.ndarray
    valid: np.ndarray
    residual: np.ndarray
    h_plus0: np.ndarray
    off_big_cell: list[tuple[int, int, float, float]] = field(default_factory=list)
    policy: TruncationPolicy = DEFAULT_POLICY
    h_minus: np.ndarray | None = None
    h_plus: np.ndarray | None = None
    pair: PotentialPair | None = None
    lam_scale: float = 1.0
    max_step: float = DEFAULT_MAX_STEP

    def value(self, i: int, j: int) -> LoopMatrix:
        return LoopMatrix(self.low, self.coeffs[i, j])

    @property
    def factored(self) -> bool:
        return self.h_minus is not None and self.h_plus is not None and self.pair is not None

    def evaluate(self, lam: complex) -> np.ndarray:
        """F̂(uᵢ, vⱼ) at one λ, shape ``(nU, nV, 2, 2)``.

        Unit-circle values of an unscaled frame sum ``coeffs``; every other
        λ goes through :meth:`evaluate_factored` when the factors are kept.
        """
        lam = complex(lam)
        if lam == 0:
            raise ZeroLambda("cannot evaluate a frame at lambda = 0")
        on_circle = self.lam_scale == 1.0 and abs(abs(lam) - 1.0) <= UNIT_CIRCLE_TOLERANCE
        if on_circle or not self.factored:
            return evaluate_coefficients(self.coeffs, self.low, lam)
        return self.evaluate_factored([lam])[0]

    def evaluate_factored(self, lams) -> np.ndarray:
        """F̂ at each λ in ``lams`` from the Birkhoff factors, shape ``(m, nU, nV, 2, 2)``."""
        if not self.factored:
            raise ValueError("frame was built without its Birkhoff factors")
        lams = self.lam_scale * np.atleast_1d(np.asarray(lams, dtype=complex))
        if np.any(lams == 0):
            raise ZeroLambda("cannot evaluate a frame at lambda = 0")
        grid = self.grid
        out = np.empty((lams.size,) + grid.shape + (2, 2), dtype=complex)
        outer = np.abs(lams) >= 1.0
        if outer.any():
            u_all, u_idx = _with_zero(grid.u)
            f_plus = axis_frames_at(self.pair.eta_plus, u_all, lams[outer], self.max_step)
            h = _power_series(self.h_minus, 1.0 / lams[outer])
            out[outer] = f_plus[:, u_idx, None] @ h
        if not outer.all():
            v_all, v_idx = _with_zero(grid.v)
            f_minus = axis_frames_at(self.pair.eta_minus, v_all, lams[~outer], self.max_step)
            h = _power_series(self.h_plus, lams[~outer])
            out[~outer] = f_minus[:, None, v_idx] @ np.linalg.inv(h)
        bi, bj = grid.base
        out = np.linalg.inv(out[:, bi, bj])[:, None, None] @ out
        out[:, ~self.valid] = E0
        return out

    def d_lambda_at(self, lam: complex) -> np.ndarray:
        """∂F̂/∂λ at one λ, shape ``(nU, nV, 2, 2)``."""
        k = np.arange(self.low, self.low + self.coeffs.shape[2], dtype=float)
        return evaluate_coefficients(self.coeffs * k[:, None, None], self.low - 1, complex(lam))

    @property
    def max_residual(self) -> float:
        r = self.residual[self.valid]
        return float(r.max()) if r.size else math.nan


@dataclass(frozen=True, eq=False)
class MCData:
    """Maurer–Cartan coefficients α = F̂⁻¹dF̂ split by the twisting pattern.

    ``alpha_u``/``alpha_v`` hold the diagonal λ⁰ parts, ``b_plus`` the
    λ¹ coefficient of the u-form and ``b_minus`` the λ⁻¹ coefficient of the
    v-form.  ``off_pattern_*`` is the summed squared modulus of every
    coefficient that the pattern forbids.
    """

    alpha_u: np.ndarray
    alpha_v: np.ndarray
    b_plus: np.ndarray
    b_minus: np.ndarray
    off_pattern_u: np.ndarray
    off_pattern_v: np.ndarray
    hu: float
    hv: float
    valid: np.ndarray


# ---------------------------------------------------------------------------
# Axis integration
# ---------------------------------------------------------------------------

def _rk4_interval(p: AxisPotential, f: LoopMatrix, t0: float, t1: float,
                  policy: TruncationPolicy, max_step: float) -> LoopMatrix:
    n = max(1, math.ceil(abs(t1 - t0) / max_step))
    h = (t1 - t0) / n
    for s in range(n):
        t = t0 + s * h
        eta0, eta_mid, eta1 = p.at(t), p.at(t + h / 2), p.at(t + h)
        k1 = mul(f, eta0, policy)
        k2 = mul(f + (h / 2) * k1, eta_mid, policy)
        k3 = mul(f + (h / 2) * k2, eta_mid, policy)
        k4 = mul(f + h * k3, eta1, policy)
        f = f + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    return f


def _axis_nodes(samples, max_step: float) -> tuple[np.ndarray, int]:
    t = np.asarray(samples, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("samples must be a nonempty 1-D sequence")
    if np.any(np.diff(t) <= 0):
        raise ValueError("samples must be strictly increasing")
    zero = np.flatnonzero(t == 0.0)
    if zero.size == 0:
        raise ValueError("samples must contain 0")
    if not max_step > 0:
        raise ValueError(f"max_step must be positive, got {max_step!r}")
    return t, int(zero[0])


def integrate_axis(p: AxisPotential, samples, policy: TruncationPolicy = DEFAULT_POLICY,
                   max_step: float = DEFAULT_MAX_STEP) -> list[LoopMatrix]:
    """Solve F' = F·η(t), F(0) = I, at each sample.

    Integration steps outward from t = 0 in both directions; every interval
    between consecutive samples gets ⌈|Δ|/max_step⌉ equal RK4 substeps.
    """
    t, k0 = _axis_nodes(samples, max_step)
    out: list[LoopMatrix | None] = [None] * t.size
    out[k0] = LoopMatrix.identity()
    for direction in (1, -1):
        f = LoopMatrix.identity()
        k = k0
        while 0 <= k + direction < t.size:
            f = _rk4_interval(p, f, float(t[k]), float(t[k + direction]), policy, max_step)
            k += direction
            if f.under_resolved(policy):
                raise TailOverflow(
                    f"{p.axis}={t[k]:g}: truncation tail {f.boundary_norm(policy):.2e} exceeds "
                    f"{policy.tail_tolerance:.0e}; increase max_degree (now {policy.max_degree})"
                )
            out[k] = f
    log.debug("Integrated %s-axis over %d samples", p.axis, t.size)
    return out  # type: ignore[return-value]


def axis_exponential(p: AxisPotential, t: float, lam: complex) -> np.ndarray:
    """Closed-form F(t) at λ for a potential that does not depend on t."""
    if not p.is_constant:
        raise ValueError("axis_exponential needs a constant potential")
    return scipy.linalg.expm(t * evaluate(p.at(0.0), lam))


def _eta_values(p: AxisPotential, t: float, lams: np.ndarray) -> np.ndarray:
    out = np.zeros((lams.size, 2, 2), dtype=complex)
    for term in p.terms:
        out += (t ** term.coord_degree) * lams[:, None, None] ** term.power * term.matrix
    return out


def _substep_factor(p: AxisPotential, lams: np.ndarray) -> int:
    """Extra RK4 substeps for λ away from the unit circle, 1 on it."""
    degree = max((abs(term.power) for term in p.terms), default=0)
    reach = float(np.max(np.maximum(np.abs(lams), 1.0 / np.abs(lams))))
    return int(min(MAX_SUBSTEP_FACTOR, max(1, round(reach ** degree))))


def axis_frames_at(p: AxisPotential, samples, lams,
                   max_step: float = DEFAULT_MAX_STEP) -> np.ndarray:
    """F(t) at each scalar λ, shape ``(len(lams), len(samples), 2, 2)``.

    Uses the substep layout of :func:`integrate_axis`, refined by
    ⌈max(|λ|, 1/|λ|)^d⌉ where d is the largest |power| in ``p``.
    """
    t, k0 = _axis_nodes(samples, max_step)
    lams = np.atleast_1d(np.asarray(lams, dtype=complex))
    if np.any(lams == 0):
        raise ZeroLambda("cannot integrate an axis frame at lambda = 0")
    factor = _substep_factor(p, lams)
    constant = _eta_values(p, 0.0, lams) if p.is_constant else None

    def eta(s: float) -> np.ndarray:
        return constant if constant is not None else _eta_values(p, s, lams)

    out = np.empty((lams.size, t.size, 2, 2), dtype=complex)
    out[:, k0] = E0
    for direction in (1, -1):
        f = np.broadcast_to(E0, (lams.size, 2, 2)).copy()
        k = k0
        while 0 <= k + direction < t.size:
            t0, t1 = float(t[k]), float(t[k + direction])
            n = max(1, math.ceil(abs(t1 - t0) / max_step)) * factor
            h = (t1 - t0) / n
            for s in range(n):
                ts = t0 + s * h
                eta0, eta_mid, eta1 = eta(ts), eta(ts + h / 2), eta(ts + h)
                k1 = f @ eta0
                k2 = (f + (h / 2) * k1) @ eta_mid
                k3 = (f + (h / 2) * k2) @ eta_mid
                k4 = (f + h * k3) @ eta1
                f = f + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            k += direction
            out[:, k] = f
    return out


def _power_series(coeffs: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Σₖ coeffs[..., k] zᵏ for stacks ``(nU, nV, n, 2, 2)`` at each z."""
    powers = z[:, None] ** np.arange(coeffs.shape[2])
    return np.einsum("mk,ijkab->mijab", powers, coeffs)


def _with_zero(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Samples with 0 inserted if missing, plus indices of the originals."""
    if np.any(samples == 0.0):
        return samples, np.arange(samples.size)
    merged = np.sort(np.append(samples, 0.0))
    return merged, np.searchsorted(merged, samples)


# ---------------------------------------------------------------------------
# Birkhoff factorization
# ---------------------------------------------------------------------------

def _check_invertible(phi: LoopMatrix, n_samples: int) -> None:
    lams = np.exp(2j * np.pi * np.arange(n_samples) / n_samples)
    dets = det2(evaluate_coefficients(phi.coeffs, phi.low, lams))
    smallest = float(np.abs(dets).min())
    if smallest < RANK_TOLERANCE:
        raise NotInvertible(f"det vanishes on the unit circle (min |det| = {smallest:.2e})")


def birkhoff_split(phi: LoopMatrix, order: int | None = None,
                   policy: TruncationPolicy = DEFAULT_POLICY, *,
                   big_cell_tolerance: float = BIG_CELL_TOLERANCE) -> BirkhoffFactors:
    """Factor Φ = H₋·H₊ with H₋ = I + O(λ⁻¹) and H₊ holomorphic at λ = 0.

    G₋ = H₋⁻¹ = I + Σ_{k=1..M} c_k λ⁻ᵏ is found from the conditions that
    G₋Φ has no powers −1..−(M+d), d = max(0, −low(Φ)).  Row r of c_k is
    nonzero only in column r (k even) or 1 − r (k odd).
    """
    m = policy.max_degree if order is None else int(order)
    if m < 1:
        raise ValueError(f"order must be >= 1, got {order!r}")
    _check_invertible(phi, 4 * (phi.coeffs.shape[0] + m))

    d = max(0, -phi.low)
    n_eq = m + d
    n = phi.coeffs.shape[0]
    k = np.arange(1, m + 1)[:, None]
    j = np.arange(1, n_eq + 1)[None, :]
    idx = k - j - phi.low
    inside = (idx >= 0) & (idx < n)
    blocks = np.zeros((m, n_eq, 2, 2), dtype=complex)
    blocks[inside] = phi.coeffs[idx[inside]]
    toeplitz = blocks.transpose(0, 2, 1, 3).reshape(2 * m, 2 * n_eq)

    ridx = -np.arange(1, n_eq + 1) - phi.low
    rin = (ridx >= 0) & (ridx < n)
    rhs = np.zeros((n_eq, 2, 2), dtype=complex)
    rhs[rin] = -phi.coeffs[ridx[rin]]
    rhs = rhs.transpose(1, 0, 2).reshape(2, 2 * n_eq)

    g = np.zeros((m + 1, 2, 2), dtype=complex)
    g[m] = np.eye(2)
    kk = np.arange(1, m + 1)
    for r in (0, 1):
        cols = np.where(kk % 2 == 0, r, 1 - r)
        sel = 2 * (kk - 1) + cols
        x, _, _, sv = scipy.linalg.lstsq(toeplitz[sel].T, rhs[r])
        if sv.size == 0 or sv[0] == 0 or sv[-1] <= RANK_TOLERANCE * sv[0]:
            raise OffBigCell("Birkhoff system is numerically rank-deficient")
        g[m - kk, r, cols] = x

    g_minus = LoopMatrix(-m, g)
    product = mul(g_minus, phi, policy)
    h_plus = product.nonnegative_part()
    try:
        h_minus = inverse(g_minus, policy)
    except LoopAlgebraError as exc:
        raise OffBigCell(f"negative factor is not invertible: {exc}") from exc
    residual = mul(h_minus, h_plus, policy).max_abs_difference(phi)
    if not residual <= big_cell_tolerance:
        raise OffBigCell(f"Birkhoff residual {residual:.2e} exceeds {big_cell_tolerance:.0e}")
    return BirkhoffFactors(h_minus=h_minus, h_plus=h_plus, residual=residual, order=m)


# ---------------------------------------------------------------------------
# Extended frame
# ---------------------------------------------------------------------------

def _dense(loop: LoopMatrix, max_degree: int) -> np.ndarray:
    out = np.zeros((2 * max_degree + 1, 2, 2), dtype=complex)
    lo, hi = max(loop.low, -max_degree), min(loop.high, max_degree)
    if lo <= hi:
        out[lo + max_degree:hi + max_degree + 1] = loop.coeffs[lo - loop.low:hi - loop.low + 1]
    return out


@dataclass(frozen=True, eq=False)
class SampledSplits:
    """Unnormalized F₊(u)·H₋(u, v) on arbitrary sorted samples.

    ``coeffs`` uses the dense layout of :class:`ExtendedFrame`.  Because 0 is
    always an integration node, F₊(0) = I and the frame is I at (0, 0)
    whenever that point is sampled.
    """

    u: np.ndarray
    v: np.ndarray
    low: int
    coeffs: np.ndarray
    valid: np.ndarray
    residual: np.ndarray
    h_plus0: np.ndarray
    h_minus: np.ndarray
    h_plus: np.ndarray
    failures: list[tuple[int, int, float, float]]


def split_samples(pair: PotentialPair, u_samples, v_samples,
                  policy: TruncationPolicy = DEFAULT_POLICY, *,
                  workers: int | None = None, order: int | None = None,
                  max_step: float = DEFAULT_MAX_STEP) -> SampledSplits:
    """Birkhoff-split F₊(u)⁻¹F₋(v) at every sample pair, one thread task per u."""
    u = np.asarray(u_samples, dtype=float)
    v = np.asarray(v_samples, dtype=float)
    u_all, u_idx = _with_zero(u)
    v_all, v_idx = _with_zero(v)
    f_plus_all = integrate_axis(pair.eta_plus, u_all, policy, max_step)
    f_minus_all = integrate_axis(pair.eta_minus, v_all, policy, max_step)
    f_plus = [f_plus_all[i] for i in u_idx]
    f_minus = [f_minus_all[j] for j in v_idx]
    f_plus_inv = [inverse(f, policy) for f in f_plus]

    md = policy.max_degree
    n_v = v.size

    def build_row(i: int):
        coeffs = np.zeros((n_v, 2 * md + 1, 2, 2), dtype=complex)
        coeffs[:, md] = np.eye(2)
        valid = np.zeros(n_v, dtype=bool)
        residual = np.full(n_v, np.nan)
        h_minus = np.zeros((n_v, md + 1, 2, 2), dtype=complex)
        h_minus[:, 0] = np.eye(2)
        h_plus = h_minus.copy()
        failures = []
        for j in range(n_v):
            phi = mul(f_plus_inv[i], f_minus[j], policy)
            try:
                split = birkhoff_split(phi, order, policy)
            except (OffBigCell, NotInvertible) as exc:
                log.debug("No split at (u=%g, v=%g): %s", u[i], v[j], exc)
                failures.append((i, j, float(u[i]), float(v[j])))
                continue
            coeffs[j] = _dense(mul(f_plus[i], split.h_minus, policy), md)
            h_minus[j] = _dense(split.h_minus, md)[md::-1]
            h_plus[j] = _dense(split.h_plus, md)[md:]
            residual[j] = split.residual
            valid[j] = True
        return coeffs, valid, residual, h_minus, h_plus, failures

    n_workers = max(1, min(workers or worker_count(), u.size))
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        rows = list(pool.map(build_row, range(u.size)))

    return SampledSplits(
        u=u, v=v, low=-md,
        coeffs=np.stack([r[0] for r in rows]),
        valid=np.stack([r[1] for r in rows]),
        residual=np.stack([r[2] for r in rows]),
        h_plus0=np.stack([r[4][:, 0] for r in rows]),
        h_minus=np.stack([r[3] for r in rows]),
        h_plus=np.stack([r[4] for r in rows]),
        failures=[p for r in rows for p in r[5]],
    )


def extended_frame(pair: PotentialPair, grid: GridSpec,
                   policy: TruncationPolicy = DEFAULT_POLICY, *,
                   workers: int | None = None, order: int | None = None,
                   max_step: float = DEFAULT_MAX_STEP) -> ExtendedFrame:
    """Build F̂(u, v) = F₊(u)·H₋(u, v) on ``grid``, normalized at ``grid.base``.

    Points off the big cell are masked and listed in ``off_big_cell``;
    construction fails only when no point (or the base point) splits.
    """
    s = split_samples(pair, grid.u, grid.v, policy, workers=workers, order=order,
                      max_step=max_step)
    if not s.valid.any():
        raise OffBigCell("no grid point admits a Birkhoff split")
    if s.failures:
        log.warning("%d of %d grid points are off the big cell and were masked",
                    len(s.failures), grid.n_u * grid.n_v)

    bi, bj = grid.base
    if not s.valid[bi, bj]:
        raise OffBigCell("base point is off the big cell", point=(float(s.u[bi]), float(s.v[bj])))
    coeffs = _normalize_at_base(s.coeffs, s.valid, s.low, (bi, bj), policy)

    frame = ExtendedFrame(grid=grid, low=s.low, coeffs=coeffs, valid=s.valid,
                          residual=s.residual, h_plus0=s.h_plus0,
                          off_big_cell=s.failures, policy=policy, h_minus=s.h_minus,
                          h_plus=s.h_plus, pair=pair, max_step=max_step)
    log.info("Built %dx%d frame: max Birkhoff residual %.2e, %d off-big-cell points",
             grid.n_u, grid.n_v, frame.max_residual, len(s.failures))
    return frame


def _normalize_at_base(coeffs: np.ndarray, valid: np.ndarray, low: int,
                       base: tuple[int, int], policy: TruncationPolicy) -> np.ndarray:
    md = policy.max_degree
    base_loop = LoopMatrix(low, coeffs[base])
    if base_loop.max_abs_difference(LoopMatrix.identity()) <= 1e-14:
        return coeffs
    base_inv = inverse(base_loop, policy)
    out = coeffs.copy()
    for i, j in zip(*np.nonzero(valid)):
        out[i, j] = _dense(mul(base_inv, LoopMatrix(low, coeffs[i, j]), policy), md)
    return out


def associated_frame(frame: ExtendedFrame, s: float) -> ExtendedFrame:
    """Frame of the associated family member λ ↦ sλ, re-normalized at the base point.

    With kept factors the coefficients are resampled from values at sλ on the
    unit circle; otherwise they are rescaled by sᵏ.
    """
    if s == 0:
        raise ValueError("associated_frame needs s != 0")
    if s == 1:
        return replace(frame)
    if not frame.factored:
        k = np.arange(frame.low, frame.low + frame.coeffs.shape[2], dtype=float)
        scaled = frame.coeffs * np.power(float(s), k)[:, None, None]
        coeffs = _normalize_at_base(scaled, frame.valid, frame.low, frame.grid.base, frame.policy)
        return replace(frame, coeffs=coeffs)

    md = frame.policy.max_degree
    n_samples = 4 * md + 4
    lams = np.exp(2j * np.pi * np.arange(n_samples) / n_samples)
    spectrum = np.fft.fft(frame.evaluate_factored(float(s) * lams), axis=0) / n_samples
    coeffs = np.moveaxis(np.concatenate([spectrum[-md:], spectrum[:md + 1]]), 0, 2)
    even = np.arange(-md, md + 1) % 2 == 0
    coeffs = coeffs * np.where(even[:, None, None], _DIAG, ~_DIAG)
    coeffs[~frame.valid] = 0
    coeffs[~frame.valid, md] = E0
    return replace(frame, coeffs=coeffs, lam_scale=frame.lam_scale * float(s))


# ---------------------------------------------------------------------------
# Maurer–Cartan form
# ---------------------------------------------------------------------------

_DIAG = np.array([[True, False], [False, True]])


def maurer_cartan(frame: ExtendedFrame) -> MCData:
    """Extract α = F̂⁻¹dF̂ by finite differences and an FFT over the unit circle."""
    grid = frame.grid
    n_samples = 4 * frame.policy.max_degree + 4
    lams = np.exp(2j * np.pi * np.arange(n_samples) / n_samples)
    du = derivative(frame.coeffs, grid.hu, axis=0)
    dv = derivative(frame.coeffs, grid.hv, axis=1)

    shape = grid.shape
    alpha_u = np.zeros(shape + (2, 2), dtype=complex)
    alpha_v = np.zeros(shape + (2, 2), dtype=complex)
    b_plus = np.zeros(shape + (2, 2), dtype=complex)
    b_minus = np.zeros(shape + (2, 2), dtype=complex)
    off_u = np.zeros(shape)
    off_v = np.zeros(shape)

    for i in range(grid.n_u):
        f = evaluate_coefficients(frame.coeffs[i], frame.low, lams)
        cu = np.fft.fft(np.linalg.solve(f, evaluate_coefficients(du[i], frame.low, lams)),
                        axis=1) / n_samples
        cv = np.fft.fft(np.linalg.solve(f, evaluate_coefficients(dv[i], frame.low, lams)),
                        axis=1) / n_samples
        alpha_u[i][..., _DIAG] = cu[:, 0][..., _DIAG]
        b_plus[i][..., ~_DIAG] = cu[:, 1][..., ~_DIAG]
        alpha_v[i][..., _DIAG] = cv[:, 0][..., _DIAG]
        b_minus[i][..., ~_DIAG] = cv[:, -1][..., ~_DIAG]

        energy_u = np.sum(np.abs(cu) ** 2, axis=(1, 2, 3))
        energy_v = np.sum(np.abs(cv) ** 2, axis=(1, 2, 3))
        kept_u = (np.sum(np.abs(cu[:, 0][..., _DIAG]) ** 2, axis=-1)
                  + np.sum(np.abs(cu[:, 1][..., ~_DIAG]) ** 2, axis=-1))
        kept_v = (np.sum(np.abs(cv[:, 0][..., _DIAG]) ** 2, axis=-1)
                  + np.sum(np.abs(cv[:, -1][..., ~_DIAG]) ** 2, axis=-1))
        off_u[i] = np.maximum(energy_u - kept_u, 0.0)
        off_v[i] = np.maximum(energy_v - kept_v, 0.0)

    valid = stencil_mask(frame.valid)
    return MCData(alpha_u=alpha_u, alpha_v=alpha_v, b_plus=b_plus, b_minus=b_minus,
                  off_pattern_u=off_u, off_pattern_v=off_v, hu=grid.hu, hv=grid.hv,
                  valid=valid)


def regular_at(mc: MCData) -> np.ndarray:
    """Mask of points where B₁ and B₋₁ are linearly independent."""
    x1 = p_coordinate(mc.b_plus)
    x2 = p_coordinate(mc.b_minus)
    return (np.abs(np.imag(np.conj(x1) * x2)) > REGULARITY_TOLERANCE) & mc.valid
