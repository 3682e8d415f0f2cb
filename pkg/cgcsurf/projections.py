"""Maps from extended frames to surfaces in S³ and E³.

All projections return a :class:`SurfaceGrid`.  S³ surfaces are stored as
R⁴ positions on the sphere |x − center| = |radius|; plain projections use the
unit sphere.  Pointwise failures (off-big-cell points, singular points,
south-pole images) are masked, never raised.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from cgcsurf.dalembert import (
    REGULARITY_TOLERANCE,
    ExtendedFrame,
    GridSpec,
    MCData,
    maurer_cartan,
    regular_at,
    split_samples,
)
from cgcsurf.loop_algebra import (
    DEFAULT_POLICY,
    E3,
    TruncationPolicy,
    det2,
    evaluate_coefficients,
    k_coordinate,
    p_coordinate,
    su2_defect,
)
from cgcsurf.potentials import PotentialPair

log = logging.getLogger(__name__)

SOUTH_POLE_TOLERANCE = 1e-12
NORM_TOLERANCE = 1e-8
FLAT_STEP = 0.025


class ProjectionError(ValueError):
    """Base class for invalid projection requests."""


class DegenerateMu(ProjectionError):
    """Spectral parameter is 0 or 1, or the two evaluation points coincide."""


class NotUnitary(ProjectionError):
    """Matrix is not in SU(2)."""


class NotUnitNorm(ProjectionError):
    """R⁴ vector does not lie on the unit sphere."""


class AtSouthPole(ProjectionError):
    """Stereographic projection of the point (−1, 0, 0, 0)."""


# ---------------------------------------------------------------------------
# Coordinates
# ---------------------------------------------------------------------------

def su2_to_r4(m, check: bool = False, tol: float = 1e-8) -> np.ndarray:
    """[[x₀+ix₃, x₁+ix₂], [−x₁+ix₂, x₀−ix₃]] ↦ (x₀, x₁, x₂, x₃); batches allowed."""
    m = np.asarray(m, dtype=complex)
    if check:
        gram = m @ np.conj(np.swapaxes(m, -1, -2))
        if np.abs(gram - np.eye(2)).max() > tol or np.abs(det2(m) - 1).max() > tol:
            raise NotUnitary("matrix is not in SU(2)")
    a, b = m[..., 0, 0], m[..., 0, 1]
    return np.stack([a.real, b.real, b.imag, a.imag], axis=-1)


def r4_to_su2(x, check: bool = False, tol: float = 1e-8) -> np.ndarray:
    """Inverse of :func:`su2_to_r4`."""
    x = np.asarray(x, dtype=float)
    if check and np.abs(np.linalg.norm(x, axis=-1) - 1).max() > tol:
        raise NotUnitNorm("vector does not have unit length")
    out = np.empty(x.shape[:-1] + (2, 2), dtype=complex)
    out[..., 0, 0] = x[..., 0] + 1j * x[..., 3]
    out[..., 0, 1] = x[..., 1] + 1j * x[..., 2]
    out[..., 1, 0] = -x[..., 1] + 1j * x[..., 2]
    out[..., 1, 1] = x[..., 0] - 1j * x[..., 3]
    return out


def su2_to_r3(m) -> np.ndarray:
    """Coordinates of su(2) elements in the basis (e₁, e₂, e₃)."""
    m = np.asarray(m, dtype=complex)
    p = p_coordinate(m)
    return np.stack([p.real, p.imag, k_coordinate(m)], axis=-1)


def r3_to_su2(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return r4_to_su2(np.concatenate([np.zeros(x.shape[:-1] + (1,)), x], axis=-1))


def _inv(m: np.ndarray) -> np.ndarray:
    return np.linalg.inv(m)


def _adjoint_e3(m: np.ndarray) -> np.ndarray:
    """Ad_m e₃ as R³ coordinates."""
    return su2_to_r3(m @ E3 @ _inv(m))


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProjectionParams:
    """Spectral parameter μ of a projection and the curvature it produces."""

    mu: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.mu):
            raise DegenerateMu(f"mu must be finite, got {self.mu!r}")
        if self.mu == 1:
            raise DegenerateMu("mu=1 degenerates; use --sym")
        if self.mu == 0:
            raise DegenerateMu("mu=0 degenerates; use --flat")
        object.__setattr__(self, "mu", float(self.mu))

    @property
    def rho(self) -> float:
        return (self.mu + 1) / (self.mu - 1)

    @property
    def K(self) -> float:
        return 1 - self.rho ** 2

    @property
    def scaled_K(self) -> float:
        """Curvature after scaling by 2/(1 − μ); always equals −μ."""
        return 0.25 * (1 - self.mu) ** 2 * self.K


@dataclass(frozen=True, eq=False)
class SurfaceGrid:
    """Sampled surface with per-point unit normals and a validity mask.

    For ``target == "S3"`` positions and normals are R⁴ vectors; for ``"E3"``
    they are R³ vectors.  ``frame`` holds the SU(2) frame used to build the
    surface (F̂ at λ = 1).
    """

    grid: GridSpec
    target: str
    position: np.ndarray
    normal: np.ndarray
    frame: np.ndarray
    valid: np.ndarray
    radius: float = 1.0
    center: np.ndarray | None = None
    kind: str = "mu"
    mu: float = math.nan
    trace_defect: float = 0.0
    label: str = ""

    def __post_init__(self) -> None:
        if self.target not in ("S3", "E3"):
            raise ProjectionError(f"target must be 'S3' or 'E3', got {self.target!r}")
        dim = 4 if self.target == "S3" else 3
        if self.position.shape != self.grid.shape + (dim,):
            raise ProjectionError(f"positions must have shape {self.grid.shape + (dim,)}")
        if self.center is None:
            object.__setattr__(self, "center", np.zeros(dim))
        if not self.label:
            object.__setattr__(self, "label", _default_label(self.kind, self.mu))

    def unit_position(self) -> np.ndarray:
        """Positions moved onto the unit sphere (S³) or unchanged (E³)."""
        if self.target == "E3":
            return self.position
        return (self.position - self.center) / self.radius

    def normal_gauss(self) -> np.ndarray:
        """Normal Gauss map ν: f⁻¹n ∈ su(2) ≅ R³ for S³, n for E³."""
        if self.target == "E3":
            return self.normal
        f = r4_to_su2(self.unit_position())
        n = r4_to_su2(self.normal)
        return su2_to_r3(np.conj(np.swapaxes(f, -1, -2)) @ n)


def _default_label(kind: str, mu: float) -> str:
    if kind == "sym" or math.isnan(mu):
        return kind
    return f"{kind}_{mu:g}"


@dataclass(frozen=True, eq=False)
class GaussMaps:
    """Normal (R³), Lagrangian (pair of R³) and Legendrian (pair of R⁴) Gauss maps."""

    normal: np.ndarray
    lagrangian: tuple[np.ndarray, np.ndarray]
    legendrian: tuple[np.ndarray, np.ndarray]


# ---------------------------------------------------------------------------
# Projections
# ---------------------------------------------------------------------------

def _accurate(valid: np.ndarray, position: np.ndarray | None, *frames: np.ndarray,
              what: str) -> np.ndarray:
    """``valid`` minus points whose frames leave SU(2) or whose R⁴ position leaves S³."""
    ok = np.ones(valid.shape, dtype=bool)
    if position is not None:
        ok &= np.abs(np.linalg.norm(position, axis=-1) - 1.0) <= NORM_TOLERANCE
    for f in frames:
        ok &= su2_defect(f) <= NORM_TOLERANCE
    lost = int(np.count_nonzero(valid & ~ok))
    if lost:
        log.warning("%s: masked %d points with unit-norm or SU(2) defect above %.0e",
                    what, lost, NORM_TOLERANCE)
    return valid & ok


def project_two_point(frame: ExtendedFrame, lam_a: float, lam_b: float,
                      mc: MCData | None = None) -> SurfaceGrid:
    """f = F̂|_{λb}·F̂|_{λa}⁻¹ with normal F̂|_{λb} e₃ F̂|_{λa}⁻¹.

    Points where either frame misses SU(2), or f misses the unit sphere, by
    more than ``NORM_TOLERANCE`` are masked.
    """
    if lam_a == 0 or lam_b == 0:
        raise DegenerateMu("evaluation points must be nonzero")
    if lam_a == lam_b:
        raise DegenerateMu("evaluation points coincide")
    fa, fb = frame.evaluate(lam_a), frame.evaluate(lam_b)
    fa_inv = _inv(fa)
    if mc is None:
        mc = maurer_cartan(frame)
    position = su2_to_r4(fb @ fa_inv)
    valid = _accurate(frame.valid & regular_at(mc), position, fa, fb,
                      what=f"lambda={lam_a:g},{lam_b:g}")
    return SurfaceGrid(grid=frame.grid, target="S3", position=position,
                       normal=su2_to_r4(fb @ E3 @ fa_inv), frame=fa, valid=valid,
                       kind="two_point", mu=float(lam_b / lam_a))


def project_mu(frame: ExtendedFrame, params: ProjectionParams,
               mc: MCData | None = None) -> SurfaceGrid:
    """Constant-curvature surface f = F̂|_μ·F̂|₁⁻¹ in S³ with K = 1 − ρ²."""
    s = project_two_point(frame, 1.0, params.mu, mc)
    log.debug("Projected at mu=%g (K=%g)", params.mu, params.K)
    return replace(s, kind="mu", mu=params.mu, label="")


def scaled_projection(frame: ExtendedFrame, mu: float, mc: MCData | None = None) -> SurfaceGrid:
    """(2/(1 − μ))(f_μ − e₀) on the sphere of radius 2/(1 − μ) about −radius·e₀."""
    params = ProjectionParams(mu)
    s = project_mu(frame, params, mc)
    scale = 2.0 / (1.0 - params.mu)
    e0 = np.array([1.0, 0.0, 0.0, 0.0])
    return replace(s, position=scale * (s.position - e0), radius=scale, center=-scale * e0,
                   kind="scaled", label="")


def sym(frame: ExtendedFrame, mc: MCData | None = None) -> SurfaceGrid:
    """Pseudospherical surface 2·∂_λF̂·F̂⁻¹ at λ = 1, in E³ with K = −1."""
    f1 = frame.evaluate(1.0)
    x = 2.0 * frame.d_lambda_at(1.0) @ _inv(f1)
    if mc is None:
        mc = maurer_cartan(frame)
    valid = _accurate(frame.valid & regular_at(mc), None, f1, what="sym")
    defect = np.abs(np.real(x[..., 0, 0] + x[..., 1, 1]) / 2)
    trace_defect = float(defect[frame.valid].max()) if frame.valid.any() else 0.0
    return SurfaceGrid(grid=frame.grid, target="E3", position=su2_to_r3(x),
                       normal=_adjoint_e3(f1), frame=f1, valid=valid, kind="sym",
                       mu=1.0, trace_defect=trace_defect)


def flat_limit(pair: PotentialPair, grid: GridSpec, mu0: float | None = None,
               policy: TruncationPolicy = DEFAULT_POLICY, *,
               workers: int | None = None) -> SurfaceGrid:
    """Flat surface g₀ (``mu0=None``) or the rescaled member g_μ(ũ, ṽ) = f_μ(ũ, μṽ).

    g₀ = H₀(ũ,0)·exp(ṽ·B₋₁(ũ,0))·K₀(ũ)⁻¹ where H₀ is the λ⁰ coefficient and
    K₀ the λ = 1 value of F̂(ũ, 0).  For g_μ the λ = μ factor is obtained by
    integrating ∂_ṽT = T·B₋₁(ũ, μṽ) from ṽ = 0 instead of evaluating the
    frame at small λ.
    """
    if mu0 is not None:
        ProjectionParams(mu0)
    axis = split_samples(pair, grid.u, np.array([0.0]), policy, workers=workers)
    md = policy.max_degree
    row = axis.coeffs[:, 0]
    neg = np.abs(row[:, :md]).max() if axis.valid.any() else 0.0
    if neg > 1e-8:
        log.warning("frame along v=0 has negative powers up to %.2e", neg)
    nonneg = row[:, md:]
    k0 = _evaluate_nonneg(nonneg, 1.0)
    b_plus = np.stack([pair.eta_plus.coefficient(1, t) for t in grid.u])

    if mu0 is None:
        h0 = nonneg[:, 0]
        b_minus = _b_minus(pair, axis.h_plus0[:, 0], np.zeros(grid.n_u))
        rot = scipy.linalg.expm(grid.v[None, :, None, None] * b_minus[:, None])
        h = h0[:, None] @ rot
        position = h @ _inv(k0)[:, None]
        normal = h @ E3 @ _inv(k0)[:, None]
        valid = np.repeat(axis.valid[:, :1], grid.n_v, axis=1)
        regular = _independent(b_plus, b_minus)[:, None]
        position = su2_to_r4(position)
        surface = SurfaceGrid(grid=grid, target="S3", position=position,
                              normal=su2_to_r4(normal),
                              frame=np.repeat(k0[:, None], grid.n_v, axis=1),
                              valid=_accurate(valid & regular, position, what="flat"),
                              kind="flat", mu=0.0, label="flat")
        log.info("Built flat limit on a %dx%d grid", grid.n_u, grid.n_v)
        return surface

    mu = float(mu0)
    h_mu = _evaluate_nonneg(nonneg, mu)
    fine, coarse_idx, zero_idx = _fine_samples(grid.v)
    v_phys = mu * fine
    order = np.argsort(v_phys)
    s = split_samples(pair, grid.u, v_phys[order], policy, workers=workers)
    back = np.empty_like(order)
    back[order] = np.arange(order.size)
    coeffs = s.coeffs[:, back]
    ok = s.valid[:, back]
    b_minus = np.stack([_b_minus(pair, s.h_plus0[i, back], v_phys) for i in range(grid.n_u)])

    transport = _transport(b_minus, fine, zero_idx)
    reach = _reachable(ok, zero_idx)
    k_mu = evaluate_coefficients(coeffs[:, coarse_idx], s.low, 1.0)
    t = transport[:, coarse_idx]
    k_inv = _inv(k_mu)
    position = h_mu[:, None] @ t @ k_inv
    normal = h_mu[:, None] @ t @ E3 @ k_inv
    regular = _independent(b_plus[:, None], b_minus[:, coarse_idx])
    valid = reach[:, coarse_idx] & axis.valid[:, :1] & regular
    log.info("Built rescaled flat-limit member mu=%g on a %dx%d grid", mu, grid.n_u, grid.n_v)
    return SurfaceGrid(grid=grid, target="S3", position=su2_to_r4(position),
                       normal=su2_to_r4(normal), frame=k_mu, valid=valid,
                       kind="flat", mu=mu, label=f"flat_{mu:g}")


def _evaluate_nonneg(coeffs: np.ndarray, lam: float) -> np.ndarray:
    """Σ_{k≥0} coeffs[..., k] λ^k for stacks ``(..., n, 2, 2)``."""
    powers = float(lam) ** np.arange(coeffs.shape[-3])
    return np.einsum("n,...nab->...ab", powers, coeffs)


def _b_minus(pair: PotentialPair, h0: np.ndarray, v: np.ndarray) -> np.ndarray:
    """B₋₁ = h₀·(η₋)₋₁(v)·h₀⁻¹ for stacks of h₀."""
    eta = np.stack([pair.eta_minus.coefficient(-1, t) for t in v])
    return h0 @ eta @ _inv(h0)


def _independent(b1: np.ndarray, b2: np.ndarray) -> np.ndarray:
    x1, x2 = p_coordinate(b1), p_coordinate(b2)
    return np.abs(np.imag(np.conj(x1) * x2)) > REGULARITY_TOLERANCE


def _fine_samples(v: np.ndarray, step: float = FLAT_STEP) -> tuple[np.ndarray, np.ndarray, int]:
    """RK4 nodes (with midpoints) through 0 and every grid sample.

    Returns the nodes, the node index of each grid sample and of ṽ = 0.
    Knots always sit at even offsets, so stepping two nodes at a time goes
    knot to knot through one midpoint.
    """
    knots = np.unique(np.append(v, 0.0))
    nodes = [float(knots[0])]
    knot_idx = [0]
    for a, b in zip(knots[:-1], knots[1:]):
        n = max(1, math.ceil((b - a) / step))
        nodes.extend(a + (b - a) * np.arange(1, 2 * n) / (2 * n))
        nodes.append(float(b))
        knot_idx.append(len(nodes) - 1)
    knot_idx = np.array(knot_idx)
    coarse = knot_idx[np.searchsorted(knots, v)]
    zero = int(knot_idx[np.searchsorted(knots, 0.0)])
    return np.array(nodes), coarse, zero


def _transport(b: np.ndarray, nodes: np.ndarray, zero: int) -> np.ndarray:
    """Solve ∂T = T·b with T = I at ``nodes[zero]``; b is given at every node.

    Only knot entries (even offsets from ``zero``) are filled in.
    """
    n_u, n = b.shape[0], nodes.size
    out = np.tile(np.eye(2, dtype=complex), (n_u, n, 1, 1))
    for direction in (2, -2):
        t = np.tile(np.eye(2, dtype=complex), (n_u, 1, 1))
        k = zero
        while 0 <= k + direction < n:
            h = nodes[k + direction] - nodes[k]
            b0, bm, b1 = b[:, k], b[:, k + direction // 2], b[:, k + direction]
            k1 = t @ b0
            k2 = (t + h / 2 * k1) @ bm
            k3 = (t + h / 2 * k2) @ bm
            k4 = (t + h * k3) @ b1
            t = t + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            k += direction
            out[:, k] = t
    return out


def _reachable(ok: np.ndarray, zero: int) -> np.ndarray:
    """Nodes connected to ṽ = 0 through valid nodes only."""
    out = ok.copy()
    for j in range(zero + 1, ok.shape[1]):
        out[:, j] &= out[:, j - 1]
    for j in range(zero - 1, -1, -1):
        out[:, j] &= out[:, j + 1]
    return out


# ---------------------------------------------------------------------------
# Gauss maps, parallel surfaces, stereographic projection
# ---------------------------------------------------------------------------

def gauss_maps(surface: SurfaceGrid, frame: ExtendedFrame, mu: float) -> GaussMaps:
    """ν = Ad_{F̂|₁}e₃, L = (Ad_{F̂|μ}e₃, Ad_{F̂|₁}e₃), 𝓛 = (f, n)."""
    ProjectionParams(mu)
    f1 = frame.evaluate(1.0)
    fm = frame.evaluate(mu)
    nu = _adjoint_e3(f1)
    return GaussMaps(normal=nu, lagrangian=(_adjoint_e3(fm), nu),
                     legendrian=(surface.unit_position(), surface.normal))


def parallel_surface(surface: SurfaceGrid, r: float, forms=None) -> SurfaceGrid:
    """f^r = cos r·f + sin r·n; points where f^r fails to immerse are masked.

    The immersion test is cos 2r − sin 2r·H + sin²r·K ≠ 0 with H and K of
    the unit-sphere surface estimated by finite differences.
    """
    from cgcsurf.geometry import curvature, fundamental_forms, mean_curvature

    if surface.target != "S3":
        raise ProjectionError("parallel surfaces are defined for S3 targets")
    f, n = surface.unit_position(), surface.normal
    fr = math.cos(r) * f + math.sin(r) * n
    nr = -math.sin(r) * f + math.cos(r) * n
    if forms is None:
        unit = replace(surface, position=f, radius=1.0, center=np.zeros(4))
        forms = fundamental_forms(unit)
    big_k = curvature(forms)
    big_h = mean_curvature(forms)
    test = math.cos(2 * r) - math.sin(2 * r) * big_h + math.sin(r) ** 2 * big_k
    immersed = np.abs(test) > 1e-8
    masked = int(np.count_nonzero(surface.valid & ~immersed))
    if masked:
        log.warning("parallel surface r=%g: %d points fail to immerse", r, masked)
    return replace(surface, position=surface.center + surface.radius * fr, normal=nr,
                   valid=surface.valid & immersed, kind=f"parallel_{r:g}_{surface.kind}",
                   label=f"{surface.label}_r{r:g}")


def stereographic(x) -> np.ndarray:
    """(x₁, x₂, x₃)/(1 + x₀) from the south pole (−1, 0, 0, 0)."""
    x = np.asarray(x, dtype=float)
    den = 1.0 + x[..., 0]
    if np.any(np.abs(den) <= SOUTH_POLE_TOLERANCE):
        raise AtSouthPole("point at the south pole has no stereographic image")
    return x[..., 1:] / den[..., None]


def stereographic_grid(surface: SurfaceGrid) -> tuple[np.ndarray, np.ndarray]:
    """R³ export positions and validity; south-pole points are masked.

    S³ surfaces are projected from their unit-sphere form and scaled by the
    radius, so scaled projections keep their size.  E³ surfaces pass through.
    """
    if surface.target == "E3":
        return surface.position, surface.valid.copy()
    unit = surface.unit_position()
    den = 1.0 + unit[..., 0]
    pole = np.abs(den) <= SOUTH_POLE_TOLERANCE
    safe = np.where(pole, 1.0, den)
    out = surface.radius * unit[..., 1:] / safe[..., None]
    out[pole] = np.nan
    if pole.any():
        log.warning("%d points at the south pole were masked", int(pole.sum()))
    return out, surface.valid & ~pole
