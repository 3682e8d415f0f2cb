"""Tests for frame and surface persistence."""
from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from cgcsurf.cache import (
    FRAME_FILE,
    CacheError,
    frame_path,
    load_frame,
    load_surface,
    save_frame,
    save_surface,
    saved_surfaces,
    surface_path,
)
from cgcsurf.dalembert import GridSpec, associated_frame, extended_frame
from cgcsurf.loop_algebra import TruncationPolicy
from cgcsurf.potentials import builtin
from cgcsurf.projections import ProjectionParams, project_mu, scaled_projection, sym


@pytest.fixture(scope="module")
def small():
    pair = builtin("amsler")
    frame = extended_frame(pair, GridSpec((0.0, 0.3), (-0.1, 0.3), 5, 6),
                           TruncationPolicy(max_degree=16, tail_tolerance=1e-9))
    return frame, pair


class TestPaths:
    def test_names(self, tmp_path):
        assert frame_path(tmp_path) == tmp_path / FRAME_FILE
        assert surface_path(tmp_path, "mu_4").name == "surface_mu_4.npz"


class TestFrameCache:
    def test_roundtrip(self, small, tmp_path):
        frame, pair = small
        path = save_frame(frame_path(tmp_path / "run"), frame, pair)
        loaded, loaded_pair = load_frame(path)
        assert loaded_pair == pair
        assert loaded.grid == frame.grid
        assert loaded.policy == frame.policy
        assert loaded.low == frame.low
        np.testing.assert_array_equal(loaded.coeffs, frame.coeffs)
        np.testing.assert_array_equal(loaded.valid, frame.valid)
        assert loaded.off_big_cell == frame.off_big_cell
        np.testing.assert_array_equal(loaded.h_minus, frame.h_minus)
        np.testing.assert_array_equal(loaded.h_plus, frame.h_plus)
        assert loaded.max_step == frame.max_step
        assert loaded.lam_scale == 1.0

    def test_loaded_frame_evaluates_identically(self, small, tmp_path):
        frame, pair = small
        loaded, _ = load_frame(save_frame(tmp_path / "f.npz", frame, pair))
        np.testing.assert_array_equal(loaded.evaluate(4.0), frame.evaluate(4.0))

    def test_associated_frame_keeps_scale(self, small, tmp_path):
        frame, pair = small
        shifted = associated_frame(frame, 2.0)
        loaded, _ = load_frame(save_frame(tmp_path / "f.npz", shifted, pair))
        assert loaded.lam_scale == 2.0
        np.testing.assert_array_equal(loaded.evaluate(1.0), shifted.evaluate(1.0))

    def test_frame_without_factors_is_refused(self, small, tmp_path):
        frame, pair = small
        with pytest.raises(CacheError, match="Birkhoff factors"):
            save_frame(tmp_path / "f.npz", replace(frame, h_minus=None), pair)

    def test_missing(self, tmp_path):
        with pytest.raises(CacheError, match="not found"):
            load_frame(tmp_path / "frame.npz")

    def test_garbage(self, tmp_path):
        path = tmp_path / "frame.npz"
        path.write_bytes(b"not an archive")
        with pytest.raises(CacheError, match="cannot read"):
            load_frame(path)

    def test_missing_field(self, tmp_path):
        path = tmp_path / "frame.npz"
        with path.open("wb") as fh:
            np.savez(fh, version=np.array(2))
        with pytest.raises(CacheError, match="missing field"):
            load_frame(path)

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "frame.npz"
        with path.open("wb") as fh:
            np.savez(fh, version=np.array(99))
        with pytest.raises(CacheError, match="version"):
            load_frame(path)


class TestSurfaceCache:
    def test_roundtrip(self, small, tmp_path):
        frame, _ = small
        s = scaled_projection(frame, -3.0)
        loaded = load_surface(save_surface(surface_path(tmp_path, s.label), s))
        assert loaded.label == "scaled_-3"
        assert loaded.kind == "scaled"
        assert loaded.mu == -3.0
        assert loaded.radius == pytest.approx(0.5)
        assert loaded.grid == s.grid
        np.testing.assert_array_equal(loaded.position, s.position)
        np.testing.assert_array_equal(loaded.center, s.center)
        np.testing.assert_array_equal(loaded.valid, s.valid)

    def test_sym_keeps_trace_defect(self, small, tmp_path):
        frame, _ = small
        s = sym(frame)
        loaded = load_surface(save_surface(tmp_path / "s.npz", s))
        assert loaded.target == "E3"
        assert loaded.trace_defect == s.trace_defect

    def test_listing_is_sorted(self, small, tmp_path):
        frame, _ = small
        for mu in (4.0, -4.0, 2.0):
            s = project_mu(frame, ProjectionParams(mu))
            save_surface(surface_path(tmp_path, s.label), s)
        (tmp_path / "frame.npz").write_bytes(b"")
        names = [p.name for p in saved_surfaces(tmp_path)]
        assert names == ["surface_mu_-4.npz", "surface_mu_2.npz", "surface_mu_4.npz"]

    def test_missing_field(self, tmp_path):
        path = tmp_path / "surface_x.npz"
        with path.open("wb") as fh:
            np.savez(fh, version=np.array(1), target=np.array("S3"))
        with pytest.raises(CacheError, match="missing field"):
            load_surface(path)
