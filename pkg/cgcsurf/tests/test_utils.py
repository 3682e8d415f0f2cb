"""Tests for CLI string parsing, worker sizing and stencil helpers."""
from __future__ import annotations

from unittest.mock import patch

import numpy as np
import pytest

from cgcsurf.utils import (
    MAX_GRID_POINTS,
    derivative,
    interior_mask,
    parse_domain,
    parse_float_list,
    parse_grid,
    stencil_mask,
    worker_count,
)


class TestParsing:
    @pytest.mark.parametrize("value, expected", [("41x41", (41, 41)), ("9X17", (9, 17)), (" 3 x 2 ", (3, 2))])
    def test_grid(self, value, expected):
        assert parse_grid(value) == expected

    @pytest.mark.parametrize("value", ["41", "1x5", "axb", "4x4x4", f"{MAX_GRID_POINTS + 1}x3"])
    def test_bad_grid(self, value):
        with pytest.raises(ValueError, match="grid"):
            parse_grid(value)

    def test_float_list(self):
        assert parse_float_list("-4, 4,0.5") == [-4.0, 4.0, 0.5]
        assert parse_float_list("") == []
        assert parse_float_list(None) == []

    def test_bad_float_list(self):
        with pytest.raises(ValueError, match="comma-separated"):
            parse_float_list("1,two")

    def test_domain(self):
        assert parse_domain("0,0.8,-1,1") == ((0.0, 0.8), (-1.0, 1.0))

    @pytest.mark.parametrize("value", ["0,1,0", "1,0,0,1", "0,1,1,1"])
    def test_bad_domain(self, value):
        with pytest.raises(ValueError, match="domain"):
            parse_domain(value)


class TestWorkerCount:
    def test_env(self):
        with patch.dict("os.environ", {"CGC_THREADS": "3"}):
            assert worker_count() == 3

    @pytest.mark.parametrize("raw", ["", "0", "many"])
    def test_fallback(self, raw):
        with patch.dict("os.environ", {"CGC_THREADS": raw}), patch("os.cpu_count", return_value=6):
            assert worker_count() == 6


class TestStencils:
    def test_derivative_is_exact_for_quadratics(self):
        x = np.linspace(0.0, 1.0, 11)
        np.testing.assert_allclose(derivative(x ** 2, 0.1, axis=0), 2 * x, atol=1e-12)

    def test_stencil_mask(self):
        valid = np.ones((5, 5), dtype=bool)
        valid[2, 2] = False
        out = stencil_mask(valid)
        assert out.sum() == 25 - 5
        assert not out[1, 2] and not out[2, 3]
        assert out[1, 1]

    def test_interior_mask(self):
        mask = interior_mask((6, 7), margin=2)
        assert mask.sum() == 2 * 3
        assert not interior_mask((4, 4), margin=2).any()
