"""Tests for mesh and table export."""
from __future__ import annotations

import math

import numpy as np
import pytest

from cgcsurf.dalembert import GridSpec
from cgcsurf.exporter import (
    MESH_CSV_COLUMNS,
    RAW_R4_COLUMNS,
    SWEEP_COLUMNS,
    export_points,
    export_surface,
    fmt,
    write_mesh_csv,
    write_obj,
    write_ply,
    write_raw_r4,
    write_sweep_xlsx,
    write_table,
)
from cgcsurf.projections import SurfaceGrid

# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------


@pytest.fixture()
def patch_surface() -> SurfaceGrid:
    """5x5 patch of a great 2-sphere in S³ with the point (1, 1) masked."""
    grid = GridSpec((0.1, 1.0), (0.0, 1.0), 5, 5)
    u, v = np.meshgrid(grid.u, grid.v, indexing="ij")
    x = np.stack([np.cos(u), np.sin(u) * np.cos(v), np.sin(u) * np.sin(v), np.zeros_like(u)], axis=-1)
    valid = np.ones(grid.shape, dtype=bool)
    valid[1, 1] = False
    return SurfaceGrid(grid=grid, target="S3", position=x,
                       normal=np.broadcast_to([0.0, 0.0, 0.0, 1.0], x.shape).copy(),
                       frame=np.zeros(grid.shape + (2, 2), dtype=complex), valid=valid,
                       kind="mu", mu=-1.0)


@pytest.fixture()
def e3_surface(patch_surface) -> SurfaceGrid:
    s = patch_surface
    return SurfaceGrid(grid=s.grid, target="E3", position=s.position[..., 1:],
                       normal=s.normal[..., 1:], frame=s.frame, valid=s.valid, kind="sym")


# ---------------------------------------------------------------------------
# fmt
# ---------------------------------------------------------------------------


class TestFmt:
    def test_float_roundtrips(self):
        assert fmt(0.1) == "0.10000000000000001"
        assert float(fmt(math.pi)) == math.pi

    def test_bools_and_ints(self):
        assert fmt(True) == "1"
        assert fmt(np.bool_(False)) == "0"
        assert fmt(np.int64(7)) == "7"

    def test_other(self):
        assert fmt("sym") == "sym"
        assert fmt(float("nan")) == "nan"


# ---------------------------------------------------------------------------
# Meshes
# ---------------------------------------------------------------------------


class TestMeshes:
    def test_points_are_stereographic(self, patch_surface):
        points, valid = export_points(patch_surface)
        u, v = patch_surface.grid.u[2], patch_surface.grid.v[3]
        r = math.sin(u) / (1 + math.cos(u))
        np.testing.assert_allclose(points[2, 3], [r * math.cos(v), r * math.sin(v), 0.0], atol=1e-14)
        assert not valid[1, 1]
        assert valid.sum() == 24

    def test_obj(self, patch_surface, tmp_path):
        lines = write_obj(tmp_path / "m.obj", patch_surface).read_text().splitlines()
        assert lines[0] == "# mu_-1"
        assert sum(line.startswith("v ") for line in lines) == 25
        faces = [line for line in lines if line.startswith("f ")]
        # the masked vertex touches four of the sixteen quads
        assert len(faces) == 12
        assert faces[0] == "f 3 8 9 4"

    def test_ply(self, patch_surface, tmp_path):
        text = write_ply(tmp_path / "m.ply", patch_surface).read_text()
        assert "element vertex 25" in text
        assert "element face 12" in text
        body = text.split("end_header\n", 1)[1].splitlines()
        assert len(body) == 25 + 12
        assert body[-1].startswith("4 ")

    def test_mesh_csv(self, patch_surface, tmp_path):
        lines = write_mesh_csv(tmp_path / "m.csv", patch_surface).read_text().splitlines()
        assert lines[0] == ",".join(MESH_CSV_COLUMNS)
        assert len(lines) == 26
        masked = lines[1 + 1 * 5 + 1].split(",")
        assert masked[:2] == ["1", "1"]
        assert masked[-1] == "0"

    def test_raw_r4(self, patch_surface, tmp_path):
        lines = write_raw_r4(tmp_path / "r4.csv", patch_surface).read_text().splitlines()
        assert lines[0] == ",".join(RAW_R4_COLUMNS)
        first = lines[1].split(",")
        assert float(first[4]) == math.cos(0.1)
        assert first[-1] == "1"

    def test_raw_r4_needs_s3(self, e3_surface, tmp_path):
        with pytest.raises(ValueError, match="S3"):
            write_raw_r4(tmp_path / "r4.csv", e3_surface)

    def test_e3_passthrough(self, e3_surface):
        points, _ = export_points(e3_surface)
        np.testing.assert_array_equal(points, e3_surface.position)


class TestExportSurface:
    def test_writes_requested_formats(self, patch_surface, tmp_path):
        paths = export_surface(patch_surface, tmp_path / "out", ["obj", "ply", "csv"], raw_r4=True)
        assert [p.name for p in paths] == ["mu_-1.obj", "mu_-1.ply", "mu_-1.csv", "mu_-1_r4.csv"]
        assert all(p.is_file() for p in paths)

    def test_raw_r4_skipped_for_e3(self, e3_surface, tmp_path):
        paths = export_surface(e3_surface, tmp_path, ["obj"], raw_r4=True)
        assert [p.name for p in paths] == ["sym.obj"]

    def test_unknown_format(self, patch_surface, tmp_path):
        with pytest.raises(ValueError, match="unknown format"):
            export_surface(patch_surface, tmp_path, ["stl"])

    def test_deterministic(self, patch_surface, tmp_path):
        a = export_surface(patch_surface, tmp_path / "a", ["obj", "csv"])
        b = export_surface(patch_surface, tmp_path / "b", ["obj", "csv"])
        for p, q in zip(a, b):
            assert p.read_bytes() == q.read_bytes()


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------


class TestTables:
    def test_write_table(self, tmp_path):
        rows = [{"mu": 4.0, "K_formula": -16 / 9, "K_est_median": float("nan")}]
        text = write_table(tmp_path / "t" / "sweep.csv", SWEEP_COLUMNS, rows).read_text()
        assert text == "mu,K_formula,K_est_median\n4,-1.7777777777777777,nan\n"

    def test_sweep_xlsx(self, tmp_path):
        openpyxl = pytest.importorskip("openpyxl")
        rows = [
            {"mu": 4.0, "K_formula": -16 / 9, "K_est_median": -1.776},
            {"mu": -4.0, "K_formula": 16 / 25, "K_est_median": float("nan")},
        ]
        path = write_sweep_xlsx(tmp_path / "sweep.xlsx", rows)
        ws = openpyxl.load_workbook(path)["Sweep"]
        values = list(ws.iter_rows(values_only=True))
        assert values[0] == SWEEP_COLUMNS
        assert values[1] == (4.0, -16 / 9, -1.776)
        assert values[2][2] is None
