"""Mesh and table export: OBJ, PLY and CSV meshes, diagnostics and sweep tables.

All numbers are written with ``%.17g`` so files are byte-identical across
runs and double precision round-trips.
"""
from __future__ import annotations

import csv
import logging
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path
from typing import Any

import numpy as np

try:
    import openpyxl
    from openpyxl.styles import Alignment, Font, PatternFill
    from openpyxl.utils import get_column_letter
    _OPENPYXL_AVAILABLE = True
except ImportError:
    openpyxl = None  # type: ignore[assignment]
    _OPENPYXL_AVAILABLE = False

from cgcsurf.projections import SurfaceGrid, stereographic_grid

log = logging.getLogger(__name__)

FORMATS = ("obj", "ply", "csv")

MESH_CSV_COLUMNS = ("i", "j", "u", "v", "x", "y", "z", "valid")
RAW_R4_COLUMNS = ("i", "j", "u", "v", "x0", "x1", "x2", "x3", "valid")
SWEEP_COLUMNS = ("mu", "K_formula", "K_est_median")


def fmt(value: Any) -> str:
    """Deterministic text for one table cell."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


# ---------------------------------------------------------------------------
# Meshes
# ---------------------------------------------------------------------------

def _valid_quads(valid: np.ndarray) -> list[tuple[int, int, int, int]]:
    """Quads (row-major vertex indices) whose four corners are all valid."""
    n_u, n_v = valid.shape
    ok = valid[:-1, :-1] & valid[1:, :-1] & valid[1:, 1:] & valid[:-1, 1:]
    quads = []
    for i, j in zip(*np.nonzero(ok)):
        a = i * n_v + j
        quads.append((a, a + n_v, a + n_v + 1, a + 1))
    return quads


def export_points(surface: SurfaceGrid) -> tuple[np.ndarray, np.ndarray]:
    """R³ vertices (stereographic for S³) and the export validity mask."""
    points, valid = stereographic_grid(surface)
    valid = valid & np.all(np.isfinite(points), axis=-1)
    return points, valid


def write_obj(path: str | Path, surface: SurfaceGrid) -> Path:
    points, valid = export_points(surface)
    path = Path(path)
    lines = [f"# {surface.label}"]
    for p in points.reshape(-1, 3):
        x, y, z = (0.0, 0.0, 0.0) if not np.all(np.isfinite(p)) else p
        lines.append(f"v {fmt(x)} {fmt(y)} {fmt(z)}")
    for quad in _valid_quads(valid):
        lines.append("f " + " ".join(str(k + 1) for k in quad))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_ply(path: str | Path, surface: SurfaceGrid) -> Path:
    points, valid = export_points(surface)
    quads = _valid_quads(valid)
    flat = points.reshape(-1, 3)
    path = Path(path)
    lines = [
        "ply",
        "format ascii 1.0",
        f"comment {surface.label}",
        f"element vertex {flat.shape[0]}",
        "property double x",
        "property double y",
        "property double z",
        f"element face {len(quads)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    for p in flat:
        x, y, z = (0.0, 0.0, 0.0) if not np.all(np.isfinite(p)) else p
        lines.append(f"{fmt(x)} {fmt(y)} {fmt(z)}")
    for quad in quads:
        lines.append("4 " + " ".join(str(k) for k in quad))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_mesh_csv(path: str | Path, surface: SurfaceGrid) -> Path:
    points, valid = export_points(surface)
    u, v = surface.grid.u, surface.grid.v
    rows = (
        {"i": i, "j": j, "u": u[i], "v": v[j], "x": points[i, j, 0], "y": points[i, j, 1],
         "z": points[i, j, 2], "valid": bool(valid[i, j])}
        for i in range(surface.grid.n_u) for j in range(surface.grid.n_v)
    )
    return write_table(path, MESH_CSV_COLUMNS, rows)


def write_raw_r4(path: str | Path, surface: SurfaceGrid) -> Path:
    """Ambient R⁴ coordinates of an S³ surface, before stereographic projection."""
    if surface.target != "S3":
        raise ValueError("raw R4 export needs an S3 surface")
    x = surface.position
    u, v = surface.grid.u, surface.grid.v
    rows = (
        {"i": i, "j": j, "u": u[i], "v": v[j], "x0": x[i, j, 0], "x1": x[i, j, 1],
         "x2": x[i, j, 2], "x3": x[i, j, 3], "valid": bool(surface.valid[i, j])}
        for i in range(surface.grid.n_u) for j in range(surface.grid.n_v)
    )
    return write_table(path, RAW_R4_COLUMNS, rows)


_WRITERS = {"obj": write_obj, "ply": write_ply, "csv": write_mesh_csv}


def export_surface(surface: SurfaceGrid, out_dir: str | Path,
                   formats: Iterable[str] = ("obj",), raw_r4: bool = False) -> list[Path]:
    """Write ``<label>.<fmt>`` for each format (plus ``<label>_r4.csv`` on request)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in formats:
        try:
            writer = _WRITERS[name]
        except KeyError:
            raise ValueError(f"unknown format {name!r} (choose from {', '.join(FORMATS)})") from None
        written.append(writer(out / f"{surface.label}.{name}", surface))
    if raw_r4 and surface.target == "S3":
        written.append(write_raw_r4(out / f"{surface.label}_r4.csv", surface))
    log.info("Exported %s → %s", surface.label, ", ".join(p.name for p in written))
    return written


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

def write_table(path: str | Path, columns: Sequence[str],
                rows: Iterable[Mapping[str, Any]]) -> Path:
    """CSV with a header row and ``%.17g`` numbers."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(row[c]) for c in columns])
    return path


# ---------------------------------------------------------------------------
# Sweep workbook
# ---------------------------------------------------------------------------

_HEADER_FILL = PatternFill(start_color="1a1a2e", end_color="1a1a2e", fill_type="solid") if _OPENPYXL_AVAILABLE else None
_HEADER_FONT = Font(bold=True, color="e0e0e0", size=10) if _OPENPYXL_AVAILABLE else None


def write_sweep_xlsx(path: str | Path, rows: Sequence[Mapping[str, Any]]) -> Path:
    """Sweep table as a one-sheet workbook (needs the ``xlsx`` extra)."""
    if not _OPENPYXL_AVAILABLE:
        raise ImportError(
            "openpyxl is required for XLSX export. "
            "Install it with: pip install 'cgcsurf[xlsx]'"
        )
    wb = openpyxl.Workbook()
    ws = wb.active
    ws.title = "Sweep"
    ws.append(list(SWEEP_COLUMNS))
    for col_idx in range(1, len(SWEEP_COLUMNS) + 1):
        cell = ws.cell(row=1, column=col_idx)
        cell.fill = _HEADER_FILL
        cell.font = _HEADER_FONT
        cell.alignment = Alignment(horizontal="left")
        ws.column_dimensions[get_column_letter(col_idx)].width = 18
    for row in rows:
        # NaN is not a valid cell value
        ws.append([None if isinstance(row[c], float) and np.isnan(row[c]) else row[c]
                   for c in SWEEP_COLUMNS])
    ws.freeze_panes = "A2"
    path = Path(path)
    wb.save(path)
    return path
