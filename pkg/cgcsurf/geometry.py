"""Finite-difference geometry of sampled surfaces.

These are the independent oracles: nothing here looks at the loop-group
construction except :func:`predicted_forms`, :func:`predicted_flat_forms`
and :func:`frame_gauge_residual`, which exist to be compared against the
finite-difference estimates.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np
from scipy import ndimage

from cgcsurf.loop_algebra import k_coordinate, p_coordinate
from cgcsurf.utils import derivative, interior_mask

if TYPE_CHECKING:
    from cgcsurf.dalembert import GridSpec, MCData
    from cgcsurf.projections import SurfaceGrid

log = logging.getLogger(__name__)

SINGULAR_RATIO = 1e-6

DIAGNOSTIC_COLUMNS = (
    "i", "j", "u", "v", "E", "F", "G", "e", "f", "g", "K_est",
    "res_harmonic", "res_gauss", "res_codazzi_u", "res_codazzi_v", "singular", "valid",
)


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FundamentalForms:
    """First (E, F, G) and second (e, f, g) fundamental forms on a grid."""

    E: np.ndarray
    F: np.ndarray
    G: np.ndarray
    e: np.ndarray
    f: np.ndarray
    g: np.ndarray
    signed_area: np.ndarray
    hu: float
    hv: float
    target: str = "S3"
    radius: float = 1.0

    @property
    def A(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.E, 0.0))

    @property
    def B(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.G, 0.0))

    @property
    def det_I(self) -> np.ndarray:
        return self.E * self.G - self.F ** 2

    @property
    def det_II(self) -> np.ndarray:
        return self.e * self.g - self.f ** 2

    @property
    def cos_phi(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.F / (self.A * self.B)

    @property
    def sin_phi(self) -> np.ndarray:
        """Signed: positive where the coordinate frame agrees with the normal."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.signed_area / (self.A * self.B)


@dataclass(frozen=True, eq=False)
class SingularSet:
    flags: np.ndarray
    polylines: list[np.ndarray]


@dataclass(frozen=True, eq=False)
class DiagnosticsReport:
    """Per-point finite-difference diagnostics of one surface."""

    grid: GridSpec
    forms: FundamentalForms
    K_est: np.ndarray
    res_harmonic: np.ndarray
    k: np.ndarray
    res_gauss: np.ndarray
    res_codazzi_u: np.ndarray
    res_codazzi_v: np.ndarray
    res_asymptotic: np.ndarray
    singular: np.ndarray
    valid: np.ndarray
    K_expected: float | None = None

    @property
    def regular_interior(self) -> np.ndarray:
        """Valid, non-singular points at least two cells from the boundary."""
        return self.valid & ~self.singular & interior_mask(self.grid.shape, margin=2)

    def summary(self) -> dict[str, float]:
        """Medians over :attr:`regular_interior` (NaN entries ignored)."""
        mask = self.regular_interior
        out: dict[str, float] = {"points": float(mask.sum())}
        for name in ("K_est", "res_harmonic", "res_gauss", "res_codazzi_u",
                     "res_codazzi_v", "res_asymptotic"):
            values = getattr(self, name)[mask]
            values = values[np.isfinite(values)]
            out[name] = float(np.median(values)) if values.size else math.nan
        if self.K_expected is not None:
            k = self.K_est[mask]
            k = k[np.isfinite(k)]
            if k.size and self.K_expected != 0:
                out["K_rel_error"] = float(np.median(np.abs(k - self.K_expected)) / abs(self.K_expected))
            elif k.size:
                out["K_abs_error"] = float(np.median(np.abs(k - self.K_expected)))
        return out

    def to_rows(self) -> list[dict[str, Any]]:
        u, v = self.grid.u, self.grid.v
        rows = []
        for i in range(self.grid.n_u):
            for j in range(self.grid.n_v):
                rows.append({
                    "i": i, "j": j, "u": float(u[i]), "v": float(v[j]),
                    "E": self.forms.E[i, j], "F": self.forms.F[i, j], "G": self.forms.G[i, j],
                    "e": self.forms.e[i, j], "f": self.forms.f[i, j], "g": self.forms.g[i, j],
                    "K_est": self.K_est[i, j],
                    "res_harmonic": self.res_harmonic[i, j],
                    "res_gauss": self.res_gauss[i, j],
                    "res_codazzi_u": self.res_codazzi_u[i, j],
                    "res_codazzi_v": self.res_codazzi_v[i, j],
                    "singular": int(self.singular[i, j]),
                    "valid": int(self.valid[i, j]),
                })
        return rows

    def write_csv(self, path: str | Path) -> Path:
        from cgcsurf.exporter import write_table

        return write_table(path, DIAGNOSTIC_COLUMNS, self.to_rows())


# ---------------------------------------------------------------------------
# Forms and curvature
# ---------------------------------------------------------------------------

def fundamental_forms(s: SurfaceGrid) -> FundamentalForms:
    """Fundamental forms from finite differences of positions and the unit normal.

    On S³ the ambient R⁴ inner product of tangent vectors equals the
    left-translated one, so the same formulas serve both targets.
    """
    x, n = s.position, s.normal
    hu, hv = s.grid.hu, s.grid.hv
    xu = derivative(x, hu, axis=0)
    xv = derivative(x, hv, axis=1)
    xuu = derivative(xu, hu, axis=0)
    xuv = derivative(xu, hv, axis=1)
    xvv = derivative(xv, hv, axis=1)

    def dot(a, b):
        return np.sum(a * b, axis=-1)

    if s.target == "S3":
        stack = np.stack([s.unit_position(), xu, xv, n], axis=-1)
        area = np.linalg.det(stack)
    else:
        area = dot(np.cross(xu, xv), n)
    return FundamentalForms(
        E=dot(xu, xu), F=dot(xu, xv), G=dot(xv, xv),
        e=dot(xuu, n), f=dot(xuv, n), g=dot(xvv, n),
        signed_area=area, hu=hu, hv=hv, target=s.target, radius=float(s.radius),
    )


def _degenerate(forms: FundamentalForms) -> np.ndarray:
    det_i = forms.det_I
    finite = det_i[np.isfinite(det_i)]
    top = float(finite.max()) if finite.size else 0.0
    return ~np.isfinite(det_i) | (det_i <= SINGULAR_RATIO * top)


def curvature(forms: FundamentalForms) -> np.ndarray:
    """Gaussian curvature: 1/r² + det II/det I on S³, det II/det I on E³."""
    bad = _degenerate(forms) | singular_set(forms, polylines=False).flags
    with np.errstate(divide="ignore", invalid="ignore"):
        extrinsic = forms.det_II / forms.det_I
    ambient = 1.0 / forms.radius ** 2 if forms.target == "S3" else 0.0
    return np.where(bad, np.nan, ambient + extrinsic)


def mean_curvature(forms: FundamentalForms) -> np.ndarray:
    """H = (eG − 2fF + gE) / (2 det I); NaN where det I vanishes."""
    with np.errstate(divide="ignore", invalid="ignore"):
        h = (forms.e * forms.G - 2 * forms.f * forms.F + forms.g * forms.E) / (2 * forms.det_I)
    return np.where(_degenerate(forms), np.nan, h)


# ---------------------------------------------------------------------------
# Residuals
# ---------------------------------------------------------------------------

def harmonicity_residual(nu: np.ndarray, hu: float, hv: float) -> tuple[np.ndarray, np.ndarray]:
    """‖ν_uv − ⟨ν_uv, ν⟩ν‖ and k = ⟨ν_uv, ν⟩ for a unit vector field ν."""
    nu_uv = derivative(derivative(nu, hu, axis=0), hv, axis=1)
    k = np.sum(nu_uv * nu, axis=-1)
    return np.linalg.norm(nu_uv - k[..., None] * nu, axis=-1), k


def _angle_derivative(w: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Derivative of arg(w) computed as Im(w̄·w')/|w|², free of branch cuts."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.imag(np.conj(w) * derivative(w, h, axis)) / np.abs(w) ** 2


def gauss_codazzi_residuals(forms: FundamentalForms, rho: float,
                            K: float | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Residuals of φ_uv + K·AB·sin φ = 0 and of the Codazzi equations.

    ``K`` defaults to 1 − ρ² and is the curvature of the unit-sphere
    normalization; AB is divided by r² for surfaces on a sphere of radius r.
    The Codazzi residuals are |∂(Aρ)/∂v| and |∂(Bρ)/∂u|.
    """
    if K is None:
        K = 1.0 - rho ** 2
    a, b = forms.A, forms.B
    w = forms.cos_phi + 1j * forms.sin_phi
    phi_uv = derivative(_angle_derivative(w, forms.hu, axis=0), forms.hv, axis=1)
    scale = forms.radius ** 2 if forms.target == "S3" else 1.0
    gauss = np.abs(phi_uv + K * a * b * forms.sin_phi / scale)
    codazzi_u = np.abs(derivative(a * rho, forms.hv, axis=1))
    codazzi_v = np.abs(derivative(b * rho, forms.hu, axis=0))
    return gauss, codazzi_u, codazzi_v


def frame_gauge_residual(mc: MCData) -> tuple[np.ndarray, np.ndarray]:
    """Check the λ⁰ parts of α against the rotation of B₁ and B₋₁.

    Writing z₁ = B₁/|B₁| and z₂ = B₋₁/|B₋₁| as unit complex numbers, the
    zero-curvature equation forces a₃ = −(arg z₂)_u/2 and b₃ = −(arg z₁)_v/2,
    where a₃, b₃ are the e₃-parts of α_u and α_v at λ⁰.
    """
    z1 = p_coordinate(mc.b_plus)
    z2 = p_coordinate(mc.b_minus)
    a3 = k_coordinate(mc.alpha_u)
    b3 = k_coordinate(mc.alpha_v)
    res_u = np.abs(a3 + _angle_derivative(z2, mc.hu, axis=0) / 2)
    res_v = np.abs(b3 + _angle_derivative(z1, mc.hv, axis=1) / 2)
    return res_u, res_v


# ---------------------------------------------------------------------------
# Singular set
# ---------------------------------------------------------------------------

def singular_set(forms: FundamentalForms, polylines: bool = True) -> SingularSet:
    """Degenerate points plus both ends of every edge where the signed area flips sign."""
    flags = _degenerate(forms)
    sign = np.sign(forms.signed_area)
    flip_u = sign[1:, :] * sign[:-1, :] < 0
    flip_v = sign[:, 1:] * sign[:, :-1] < 0
    flags[1:, :] |= flip_u
    flags[:-1, :] |= flip_u
    flags[:, 1:] |= flip_v
    flags[:, :-1] |= flip_v
    if not polylines:
        return SingularSet(flags=flags, polylines=[])

    labels, count = ndimage.label(flags, structure=np.ones((3, 3), dtype=int))
    lines = []
    for component in range(1, count + 1):
        idx = np.argwhere(labels == component)
        spread = idx.max(axis=0) - idx.min(axis=0)
        axis = int(np.argmax(spread))
        idx = idx[np.lexsort((idx[:, 1 - axis], idx[:, axis]))]
        lines.append(idx)
    log.debug("singular set: %d flagged points in %d components", int(flags.sum()), count)
    return SingularSet(flags=flags, polylines=lines)


# ---------------------------------------------------------------------------
# Closed forms predicted by the construction
# ---------------------------------------------------------------------------

def _pairings(b1: np.ndarray, b2: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    x1, x2 = p_coordinate(b1), p_coordinate(b2)
    cross = np.conj(x1) * x2
    return np.abs(x1) ** 2, np.abs(x2) ** 2, cross.real, cross.imag


def predicted_forms(mc: MCData, mu: float) -> FundamentalForms:
    """Fundamental forms of f_μ in closed form from B₁ and B₋₁.

    E = (μ−1)²|B₁|², F = (μ−1)(μ⁻¹−1)⟨B₁,B₋₁⟩, G = (μ⁻¹−1)²|B₋₁|²,
    e = g = 0 and f = ρ(μ−1)(μ⁻¹−1)|B₁||B₋₁| sin φ.
    """
    if mu in (0, 1):
        raise ValueError(f"mu must not be 0 or 1, got {mu!r}")
    rho = (mu + 1) / (mu - 1)
    n1, n2, inner, wedge = _pairings(mc.b_plus, mc.b_minus)
    c = (mu - 1) * (1 / mu - 1)
    zero = np.zeros_like(n1)
    return FundamentalForms(
        E=(mu - 1) ** 2 * n1, F=c * inner, G=(1 / mu - 1) ** 2 * n2,
        e=zero, f=rho * c * wedge, g=zero.copy(),
        signed_area=c * wedge, hu=mc.hu, hv=mc.hv,
    )


def predicted_flat_forms(b_plus: np.ndarray, b_minus: np.ndarray, n_v: int) -> FundamentalForms:
    """Forms of the flat limit from B₁(ũ) and B₋₁(ũ, 0), broadcast along ṽ.

    E = |B₁|², F = −⟨B₁,B₋₁⟩, G = |B₋₁|², e = g = 0, f = |B₁||B₋₁| sin φ.
    """
    n1, n2, inner, wedge = _pairings(b_plus, b_minus)

    def spread(a):
        return np.repeat(np.asarray(a)[:, None], n_v, axis=1)

    zero = np.zeros((n1.shape[0], n_v))
    return FundamentalForms(
        E=spread(n1), F=spread(-inner), G=spread(n2),
        e=zero, f=spread(wedge), g=zero.copy(),
        signed_area=spread(-wedge), hu=math.nan, hv=math.nan,
    )


def geodesic_curvature(curve: np.ndarray) -> np.ndarray:
    """Curvature of a sampled curve; geodesic curvature in S³ for unit R⁴ points.

    Uses the parametrization-free form κ² = (|c'|²|c''|² − ⟨c',c''⟩²)/|c'|⁶;
    on the unit sphere the normal part (which contributes 1) is removed.
    """
    c = np.asarray(curve, dtype=float)
    d1 = np.gradient(c, axis=0, edge_order=2)
    d2 = np.gradient(d1, axis=0, edge_order=2)
    s1 = np.sum(d1 * d1, axis=-1)
    gram = s1 * np.sum(d2 * d2, axis=-1) - np.sum(d1 * d2, axis=-1) ** 2
    kappa2 = np.maximum(gram, 0.0) / s1 ** 3
    if c.shape[-1] == 4:
        kappa2 = np.maximum(kappa2 - 1.0, 0.0)
    return np.sqrt(kappa2)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def expected_curvature(s: SurfaceGrid) -> tuple[float | None, float | None]:
    """(ambient K the surface should have, ρ for the Gauss–Codazzi checks)."""
    if s.kind == "sym":
        return -1.0, None
    if s.kind == "flat":
        return 0.0, 1.0
    if s.kind in ("mu", "scaled", "two_point") and s.mu not in (0.0, 1.0) and math.isfinite(s.mu):
        rho = (s.mu + 1) / (s.mu - 1)
        k_unit = 1 - rho ** 2
        return (-s.mu if s.kind == "scaled" else k_unit), rho
    return None, None


def diagnose(s: SurfaceGrid, rho: float | None = None) -> DiagnosticsReport:
    """Run every finite-difference oracle on one surface."""
    forms = fundamental_forms(s)
    k_est = curvature(forms)
    res_h, k = harmonicity_residual(s.normal_gauss(), s.grid.hu, s.grid.hv)
    k_expected, rho_default = expected_curvature(s)
    if rho is None:
        rho = rho_default
    if s.kind == "sym":
        gauss, cod_u, cod_v = gauss_codazzi_residuals(forms, 1.0, K=-1.0)
    elif rho is not None:
        gauss, cod_u, cod_v = gauss_codazzi_residuals(forms, rho)
    else:
        gauss = cod_u = cod_v = np.full(s.grid.shape, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        asym = np.maximum(np.abs(forms.e) / forms.E, np.abs(forms.g) / forms.G)
    singular = singular_set(forms, polylines=False).flags
    report = DiagnosticsReport(
        grid=s.grid, forms=forms, K_est=k_est, res_harmonic=res_h, k=k, res_gauss=gauss,
        res_codazzi_u=cod_u, res_codazzi_v=cod_v, res_asymptotic=asym,
        singular=singular, valid=s.valid.copy(), K_expected=k_expected,
    )
    log.debug("diagnosed %s: %s", s.label, report.summary())
    return report
