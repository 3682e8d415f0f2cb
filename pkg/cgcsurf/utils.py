"""Shared helpers: CLI string parsing, worker sizing and grid stencils."""
from __future__ import annotations

import os

import numpy as np

# Upper bound on points per grid axis accepted from user input
MAX_GRID_POINTS = 2048


def parse_grid(value: str) -> tuple[int, int]:
    """Parse ``"NxM"`` into point counts; both must be in ``[2, MAX_GRID_POINTS]``."""
    parts = value.lower().replace("×", "x").split("x")
    if len(parts) != 2:
        raise ValueError(f"grid: expected NxM, got {value!r}")
    try:
        n_u, n_v = (int(p.strip()) for p in parts)
    except ValueError:
        raise ValueError(f"grid: expected integers in NxM, got {value!r}") from None
    for name, n in (("nU", n_u), ("nV", n_v)):
        if n < 2:
            raise ValueError(f"grid: {name} must be >= 2, got {n}")
        if n > MAX_GRID_POINTS:
            raise ValueError(f"grid: {name} must be <= {MAX_GRID_POINTS}, got {n}")
    return n_u, n_v


def parse_float_list(value: str | None) -> list[float]:
    """Parse a comma-separated list of floats; blank gives an empty list."""
    if not value:
        return []
    try:
        return [float(s) for s in value.split(",") if s.strip()]
    except ValueError:
        raise ValueError(f"expected comma-separated numbers, got {value!r}") from None


def parse_domain(value: str) -> tuple[tuple[float, float], tuple[float, float]]:
    """Parse ``"a,b,c,d"`` into ``((a, b), (c, d))`` with ``a < b`` and ``c < d``."""
    nums = parse_float_list(value)
    if len(nums) != 4:
        raise ValueError(f"domain: expected a,b,c,d, got {value!r}")
    a, b, c, d = nums
    if not (a < b and c < d):
        raise ValueError(f"domain: need a < b and c < d, got {value!r}")
    return (a, b), (c, d)


def worker_count() -> int:
    """Thread cap from ``CGC_THREADS``; falls back to the CPU count."""
    raw = os.environ.get("CGC_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n >= 1:
        return n
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# Finite differences on tensor-product grids
# ---------------------------------------------------------------------------

def derivative(arr: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Central differences inside, second-order one-sided at the ends."""
    edge = 2 if arr.shape[axis] >= 3 else 1
    return np.gradient(arr, h, axis=axis, edge_order=edge)


def stencil_mask(valid: np.ndarray) -> np.ndarray:
    """Points whose own value and axis neighbours are all valid."""
    out = valid.copy()
    out[1:, :] &= valid[:-1, :]
    out[:-1, :] &= valid[1:, :]
    out[:, 1:] &= valid[:, :-1]
    out[:, :-1] &= valid[:, 1:]
    return out


def interior_mask(shape: tuple[int, int], margin: int = 1) -> np.ndarray:
    """Boolean mask excluding ``margin`` rows/columns at every edge."""
    mask = np.zeros(shape, dtype=bool)
    if shape[0] > 2 * margin and shape[1] > 2 * margin:
        mask[margin:shape[0] - margin, margin:shape[1] - margin] = True
    return mask
