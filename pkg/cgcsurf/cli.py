"""Command-line entry point: ``cgcsurf build|project|verify|sweep``.

Exit codes: 0 ok, 1 verification failure, 2 usage/configuration error,
3 failure while running the command.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from cgcsurf.cache import (
    CacheError,
    frame_path,
    load_frame,
    load_surface,
    save_frame,
    save_surface,
    saved_surfaces,
    surface_path,
)
from cgcsurf.dalembert import ConstructionError, GridError, GridSpec, extended_frame, maurer_cartan
from cgcsurf.exporter import FORMATS, SWEEP_COLUMNS, export_surface, write_sweep_xlsx, write_table
from cgcsurf.geometry import DiagnosticsReport, diagnose
from cgcsurf.loop_algebra import LoopAlgebraError, TruncationPolicy
from cgcsurf.potentials import PotentialError, load_potential
from cgcsurf.projections import (
    DegenerateMu,
    ProjectionParams,
    SurfaceGrid,
    flat_limit,
    parallel_surface,
    project_mu,
    scaled_projection,
    sym,
)
from cgcsurf.utils import MAX_GRID_POINTS, parse_domain, parse_float_list, parse_grid

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_USAGE = 2
EXIT_RUNTIME = 3

# Acceptance thresholds for ``verify``
K_REL_TOLERANCE = 0.01
FLAT_K_TOLERANCE = 1e-3
HARMONIC_TOLERANCE = 1e-2
GAUSS_TOLERANCE = 1e-2
CODAZZI_TOLERANCE = 1e-2
SYM_TRACE_TOLERANCE = 1e-12
GAUSS_CODAZZI_KINDS = ("mu", "scaled", "two_point", "flat", "sym")

DEFAULT_DOMAIN = ((0.0, 1.0), (0.0, 1.0))


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

class ProjectionSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["mu", "sym", "scaled", "flat", "parallel"]
    value: float | None = None

    @model_validator(mode="after")
    def value_fits_kind(self) -> ProjectionSpec:
        if self.kind in ("mu", "scaled", "parallel") and self.value is None:
            raise ValueError(f"{self.kind} projection needs a value")
        if self.kind in ("mu", "scaled") and self.value == 1:
            raise ValueError("mu=1 degenerates; use --sym")
        if self.kind in ("mu", "scaled") and self.value == 0:
            raise ValueError("mu=0 degenerates; use --flat")
        if self.kind == "flat" and self.value in (0, 1):
            raise ValueError(f"flat limit member needs mu0 not in {{0, 1}}, got {self.value}")
        if self.value is not None and not math.isfinite(self.value):
            raise ValueError(f"{self.kind} value must be finite")
        return self


class RunConfig(BaseModel):
    command: Literal["build", "project", "verify", "sweep"]
    potential: str = "revolution"
    grid: tuple[int, int] = (41, 41)
    domain: tuple[tuple[float, float], tuple[float, float]] | None = None
    max_degree: int = 24
    tail_tolerance: float = 1e-10
    projections: list[ProjectionSpec] = []
    out: Path = Path("out")
    formats: list[str] = ["obj"]
    raw_r4: bool = False
    table: str | None = None

    @field_validator("grid")
    @classmethod
    def grid_in_bounds(cls, v: tuple[int, int]) -> tuple[int, int]:
        for n in v:
            if not 2 <= n <= MAX_GRID_POINTS:
                raise ValueError(f"grid sizes must be in [2, {MAX_GRID_POINTS}], got {n}")
        return v

    @field_validator("max_degree")
    @classmethod
    def degree_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("max_degree must be >= 1")
        return v

    @field_validator("formats")
    @classmethod
    def formats_known(cls, v: list[str]) -> list[str]:
        unknown = [f for f in v if f not in FORMATS]
        if unknown:
            raise ValueError(f"unknown formats {unknown} (choose from {', '.join(FORMATS)})")
        return v

    @model_validator(mode="after")
    def projections_present(self) -> RunConfig:
        if self.command in ("project", "sweep") and not self.projections:
            raise ValueError(f"{self.command} needs at least one projection")
        kinds = {p.kind for p in self.projections}
        if "parallel" in kinds and "mu" not in kinds:
            raise ValueError("--parallel is applied to --mu projections; give at least one --mu")
        return self

    @property
    def policy(self) -> TruncationPolicy:
        return TruncationPolicy(self.max_degree, self.tail_tolerance)


def _projection_specs(args: argparse.Namespace) -> list[ProjectionSpec]:
    specs = []
    if args.command == "sweep":
        mus = [m for chunk in args.mu or [] for m in parse_float_list(chunk)]
        return [ProjectionSpec(kind="mu", value=m) for m in mus]
    for mu in getattr(args, "mu", None) or []:
        specs.append(ProjectionSpec(kind="mu", value=mu))
    if getattr(args, "sym", False):
        specs.append(ProjectionSpec(kind="sym"))
    for mu in getattr(args, "scaled", None) or []:
        specs.append(ProjectionSpec(kind="scaled", value=mu))
    for mu0 in getattr(args, "flat", None) or []:
        specs.append(ProjectionSpec(kind="flat", value=None if mu0 == "" else float(mu0)))
    for r in getattr(args, "parallel", None) or []:
        specs.append(ProjectionSpec(kind="parallel", value=r))
    return specs


def _config(args: argparse.Namespace) -> RunConfig:
    formats = [f for chunk in args.format or ["obj"] for f in chunk.split(",") if f]
    return RunConfig(
        command=args.command,
        potential=args.potential,
        grid=parse_grid(args.grid),
        domain=parse_domain(args.domain) if args.domain else None,
        max_degree=args.max_degree,
        tail_tolerance=args.tail_tolerance,
        projections=_projection_specs(args),
        out=Path(args.out),
        formats=formats,
        raw_r4=args.raw_r4,
        table=getattr(args, "table", None),
    )


def _format_validation_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        msg = err["msg"].removeprefix("Value error, ")
        parts.append(f"{loc}: {msg}" if loc else msg)
    return "; ".join(parts)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _build(cfg: RunConfig):
    pair = load_potential(cfg.potential)
    u_range, v_range = cfg.domain or pair.domain or DEFAULT_DOMAIN
    grid = GridSpec(u_range, v_range, *cfg.grid)
    frame = extended_frame(pair, grid, cfg.policy)
    save_frame(frame_path(cfg.out), frame, pair)
    return frame, pair


def cmd_build(cfg: RunConfig) -> int:
    frame, _ = _build(cfg)
    print(f"grid {frame.grid.n_u}x{frame.grid.n_v}  "
          f"max Birkhoff residual {frame.max_residual:.3e}  "
          f"off-big-cell points {len(frame.off_big_cell)}")
    return EXIT_OK


def _surfaces(cfg: RunConfig, frame, pair) -> list[SurfaceGrid]:
    mc = maurer_cartan(frame)
    radii = [p.value for p in cfg.projections if p.kind == "parallel"]
    out: list[SurfaceGrid] = []
    for spec in cfg.projections:
        if spec.kind == "mu":
            s = project_mu(frame, ProjectionParams(spec.value), mc)
            out.append(s)
            out.extend(parallel_surface(s, r) for r in radii)
        elif spec.kind == "sym":
            out.append(sym(frame, mc))
        elif spec.kind == "scaled":
            out.append(scaled_projection(frame, spec.value, mc))
        elif spec.kind == "flat":
            out.append(flat_limit(pair, frame.grid, spec.value, frame.policy))
    return out


def cmd_project(cfg: RunConfig) -> int:
    frame, pair = load_frame(frame_path(cfg.out))
    for s in _surfaces(cfg, frame, pair):
        export_surface(s, cfg.out, cfg.formats, cfg.raw_r4)
        save_surface(surface_path(cfg.out, s.label), s)
        print(f"{s.label}: {int(s.valid.sum())}/{s.valid.size} valid points")
    return EXIT_OK


def check_surface(s: SurfaceGrid, summary: dict[str, float]) -> list[str]:
    """Names of the acceptance criteria ``s`` fails (empty when it passes).

    Harmonicity of the normal Gauss map is required of every surface; the
    Gauss and Codazzi equations only of kinds whose ρ is known.
    """
    failures = []
    if s.kind == "sym" and s.trace_defect > SYM_TRACE_TOLERANCE:
        failures.append(f"sym x0 {s.trace_defect:.3e} > {SYM_TRACE_TOLERANCE:g}")
    if "K_rel_error" in summary and not summary["K_rel_error"] <= K_REL_TOLERANCE:
        failures.append(f"curvature median relative error {summary['K_rel_error']:.3e} > {K_REL_TOLERANCE:g}")
    if "K_abs_error" in summary and not summary["K_abs_error"] <= FLAT_K_TOLERANCE:
        failures.append(f"flat curvature median {summary['K_abs_error']:.3e} > {FLAT_K_TOLERANCE:g}")
    harmonic = summary.get("res_harmonic", math.nan)
    if not harmonic <= HARMONIC_TOLERANCE:
        failures.append(f"harmonicity median {harmonic:.3e} > {HARMONIC_TOLERANCE:g}")
    if s.kind in GAUSS_CODAZZI_KINDS:
        for name, tol in (("res_gauss", GAUSS_TOLERANCE), ("res_codazzi_u", CODAZZI_TOLERANCE),
                          ("res_codazzi_v", CODAZZI_TOLERANCE)):
            value = summary.get(name, math.nan)
            if not value <= tol:
                kind = "gauss" if name == "res_gauss" else "codazzi"
                failures.append(f"{kind} median {name} {value:.3e} > {tol:g}")
    return failures


def check_mirror(s: SurfaceGrid, report: DiagnosticsReport,
                 reports: list[tuple[SurfaceGrid, DiagnosticsReport]]) -> list[str]:
    """Singular flags of a μ < 0 projection against those of −μ, when both were saved."""
    if s.kind != "mu" or not s.mu < 0:
        return []
    for other, other_report in reports:
        if other.kind == "mu" and other.mu == -s.mu:
            both = report.valid & other_report.valid
            n = int(np.count_nonzero((report.singular != other_report.singular) & both))
            return [f"singular set differs from {other.label} at {n} points"] if n else []
    return []


def cmd_verify(cfg: RunConfig) -> int:
    if cfg.projections:
        paths = [surface_path(cfg.out, label) for label in _labels(cfg)]
    else:
        paths = saved_surfaces(cfg.out)
    if not paths:
        raise CacheError(f"no saved surfaces in {cfg.out}; run 'cgcsurf project' first")
    reports = []
    for path in paths:
        s = load_surface(path)
        report = diagnose(s)
        report.write_csv(cfg.out / f"diagnostics_{s.label}.csv")
        reports.append((s, report))
    failed = False
    for s, report in reports:
        summary = report.summary()
        failures = check_surface(s, summary) + check_mirror(s, report, reports)
        if failures:
            failed = True
            for f in failures:
                print(f"FAIL {s.label}: {f}", file=sys.stderr)
        else:
            print(f"ok   {s.label}: {int(summary['points'])} interior points")
    return EXIT_VERIFY if failed else EXIT_OK


def _labels(cfg: RunConfig) -> list[str]:
    """Surface labels that ``project`` writes for the configured projections."""
    radii = [p.value for p in cfg.projections if p.kind == "parallel"]
    out = []
    for spec in cfg.projections:
        if spec.kind == "mu":
            out.append(f"mu_{spec.value:g}")
            out.extend(f"mu_{spec.value:g}_r{r:g}" for r in radii)
        elif spec.kind == "sym":
            out.append("sym")
        elif spec.kind == "scaled":
            out.append(f"scaled_{spec.value:g}")
        elif spec.kind == "flat":
            out.append("flat" if spec.value is None else f"flat_{spec.value:g}")
    return out


def cmd_sweep(cfg: RunConfig) -> int:
    path = frame_path(cfg.out)
    frame, _ = load_frame(path) if path.is_file() else _build(cfg)
    mc = maurer_cartan(frame)
    rows = []
    for spec in cfg.projections:
        params = ProjectionParams(spec.value)
        s = project_mu(frame, params, mc)
        export_surface(s, cfg.out, cfg.formats, cfg.raw_r4)
        summary = diagnose(s).summary()
        rows.append({"mu": params.mu, "K_formula": params.K, "K_est_median": summary["K_est"]})
        print(f"mu={params.mu:g}  K={params.K:.6g}  K_est={summary['K_est']:.6g}")
    write_table(cfg.out / "sweep.csv", SWEEP_COLUMNS, rows)
    if cfg.table == "xlsx":
        try:
            write_sweep_xlsx(cfg.out / "sweep.xlsx", rows)
        except ImportError as exc:
            log.warning("%s", exc)
    return EXIT_OK


_COMMANDS = {"build": cmd_build, "project": cmd_project, "verify": cmd_verify, "sweep": cmd_sweep}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    common.add_argument("--potential", default="revolution",
                        help="builtin name or path to a potential JSON file (default: revolution)")
    common.add_argument("--grid", default="41x41", help="grid size NxM (default: 41x41)")
    common.add_argument("--domain", default=None,
                        help="u0,u1,v0,v1 (default: the potential's domain, else 0,1,0,1)")
    common.add_argument("--max-degree", type=int, default=24, help="retained lambda degree (default: 24)")
    common.add_argument("--tail-tolerance", type=float, default=1e-10,
                        help="truncation tail threshold (default: 1e-10)")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--format", action="append", default=None,
                        help=f"mesh format(s): {', '.join(FORMATS)} (repeatable; default: obj)")
    common.add_argument("--raw-r4", action="store_true", help="also write R4 coordinates of S3 surfaces")

    def projection_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--mu", type=float, action="append", help="spectral parameter (repeatable)")
        p.add_argument("--sym", action="store_true", help="Sym formula surface in E3")
        p.add_argument("--scaled", type=float, action="append", metavar="MU",
                       help="scaled projection with curvature -mu (repeatable)")
        p.add_argument("--flat", nargs="?", const="", action="append", metavar="MU0",
                       help="flat limit; with MU0 the rescaled member g_mu")
        p.add_argument("--parallel", type=float, action="append", metavar="R",
                       help="parallel surface at distance R of each --mu projection")

    parser = argparse.ArgumentParser(prog="cgcsurf")
    parser.add_argument("-V", "--version", action="store_true", help="print version")
    sub = parser.add_subparsers(dest="command")
    sub.add_parser("build", parents=[common], help="build and cache the extended frame")
    projection_flags(sub.add_parser("project", parents=[common], help="project the cached frame"))
    projection_flags(sub.add_parser("verify", parents=[common], help="check saved surfaces"))
    sweep = sub.add_parser("sweep", parents=[common], help="project and tabulate several mu")
    sweep.add_argument("--mu", action="append", help="comma-separated mu values (repeatable)")
    sweep.add_argument("--table", choices=["xlsx"], default=None, help="also write sweep.xlsx")
    return parser


def main(argv: list[str] | None = None) -> None:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.version:
        from cgcsurf import __version__
        print(f"cgcsurf {__version__}")
        return
    if args.command is None:
        parser.print_help(sys.stderr)
        sys.exit(EXIT_USAGE)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        cfg = _config(args)
    except ValidationError as exc:
        print(f"error: {_format_validation_error(exc)}", file=sys.stderr)
        sys.exit(EXIT_USAGE)
    except (PotentialError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(EXIT_USAGE)

    try:
        code = _COMMANDS[cfg.command](cfg)
    except (PotentialError, GridError, DegenerateMu) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_USAGE
    except (ConstructionError, LoopAlgebraError, CacheError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_RUNTIME
    if code != EXIT_OK:
        sys.exit(code)


if __name__ == "__main__":
    main()
