"""Frame and surface persistence as ``.npz`` files in the output directory.

``build`` writes ``frame.npz``; ``project`` reads it and writes one
``surface_<label>.npz`` per projection for ``verify`` to pick up.
"""
from __future__ import annotations

import json
import logging
import zipfile
from pathlib import Path

import numpy as np

from cgcsurf.dalembert import ExtendedFrame, GridSpec
from cgcsurf.loop_algebra import TruncationPolicy
from cgcsurf.potentials import PotentialError, PotentialPair, parse_config
from cgcsurf.projections import SurfaceGrid

log = logging.getLogger(__name__)

FRAME_FILE = "frame.npz"
_FORMAT_VERSION = 1
_FRAME_VERSION = 2


class CacheError(Exception):
    """A cache file is missing, unreadable or inconsistent."""


def frame_path(out_dir: str | Path) -> Path:
    return Path(out_dir) / FRAME_FILE


def surface_path(out_dir: str | Path, label: str) -> Path:
    return Path(out_dir) / f"surface_{label}.npz"


def _grid_arrays(grid: GridSpec) -> dict[str, np.ndarray]:
    return {
        "u_range": np.array(grid.u_range),
        "v_range": np.array(grid.v_range),
        "shape": np.array(grid.shape),
        "base": np.array(grid.base),
    }


def _grid_from(data) -> GridSpec:
    n_u, n_v = (int(n) for n in data["shape"])
    return GridSpec(tuple(data["u_range"]), tuple(data["v_range"]), n_u, n_v,
                    base=tuple(int(b) for b in data["base"]))


def _open(path: Path):
    if not path.is_file():
        raise CacheError(f"cache file not found: {path}")
    try:
        return np.load(path, allow_pickle=False)
    except (OSError, ValueError, EOFError, zipfile.BadZipFile) as exc:
        raise CacheError(f"cannot read cache file {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------

def save_frame(path: str | Path, frame: ExtendedFrame, pair: PotentialPair) -> Path:
    """Write the frame, its policy and the potential document that produced it."""
    if frame.h_minus is None or frame.h_plus is None:
        raise CacheError("frame carries no Birkhoff factors; rebuild it with extended_frame")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    off = np.array(frame.off_big_cell, dtype=float).reshape(-1, 4)
    with path.open("wb") as fh:
        np.savez(
            fh,
            version=np.array(_FRAME_VERSION),
            low=np.array(frame.low),
            coeffs=frame.coeffs,
            valid=frame.valid,
            residual=frame.residual,
            h_plus0=frame.h_plus0,
            h_minus=frame.h_minus,
            h_plus=frame.h_plus,
            lam_scale=np.array(frame.lam_scale),
            max_step=np.array(frame.max_step),
            off_big_cell=off,
            max_degree=np.array(frame.policy.max_degree),
            tail_tolerance=np.array(frame.policy.tail_tolerance),
            potential=np.array(json.dumps(pair.to_document())),
            **_grid_arrays(frame.grid),
        )
    log.info("Saved %dx%d frame → %s", frame.grid.n_u, frame.grid.n_v, path)
    return path


def load_frame(path: str | Path) -> tuple[ExtendedFrame, PotentialPair]:
    path = Path(path)
    with _open(path) as data:
        try:
            if int(data["version"]) != _FRAME_VERSION:
                raise CacheError(f"{path}: unsupported cache version {int(data['version'])}")
            policy = TruncationPolicy(int(data["max_degree"]), float(data["tail_tolerance"]))
            grid = _grid_from(data)
            pair = parse_config(str(data["potential"]))
            off = [(int(i), int(j), float(u), float(v)) for i, j, u, v in data["off_big_cell"]]
            frame = ExtendedFrame(
                grid=grid, low=int(data["low"]), coeffs=data["coeffs"], valid=data["valid"],
                residual=data["residual"], h_plus0=data["h_plus0"], off_big_cell=off,
                policy=policy, h_minus=data["h_minus"], h_plus=data["h_plus"], pair=pair,
                lam_scale=float(data["lam_scale"]), max_step=float(data["max_step"]),
            )
        except KeyError as exc:
            raise CacheError(f"{path}: missing field {exc}") from exc
        except (PotentialError, ValueError) as exc:
            raise CacheError(f"{path}: corrupt frame cache: {exc}") from exc
    if frame.coeffs.shape[:2] != grid.shape:
        raise CacheError(f"{path}: coefficient grid {frame.coeffs.shape[:2]} != {grid.shape}")
    return frame, pair


# ---------------------------------------------------------------------------
# Surfaces
# ---------------------------------------------------------------------------

def save_surface(path: str | Path, surface: SurfaceGrid) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        np.savez(
            fh,
            version=np.array(_FORMAT_VERSION),
            target=np.array(surface.target),
            position=surface.position,
            normal=surface.normal,
            frame=surface.frame,
            valid=surface.valid,
            radius=np.array(surface.radius),
            center=surface.center,
            kind=np.array(surface.kind),
            mu=np.array(surface.mu),
            trace_defect=np.array(surface.trace_defect),
            label=np.array(surface.label),
            **_grid_arrays(surface.grid),
        )
    log.debug("Saved surface %s → %s", surface.label, path)
    return path


def load_surface(path: str | Path) -> SurfaceGrid:
    path = Path(path)
    with _open(path) as data:
        try:
            return SurfaceGrid(
                grid=_grid_from(data),
                target=str(data["target"]),
                position=data["position"],
                normal=data["normal"],
                frame=data["frame"],
                valid=data["valid"].astype(bool),
                radius=float(data["radius"]),
                center=data["center"],
                kind=str(data["kind"]),
                mu=float(data["mu"]),
                trace_defect=float(data["trace_defect"]),
                label=str(data["label"]),
            )
        except KeyError as exc:
            raise CacheError(f"{path}: missing field {exc}") from exc
        except ValueError as exc:
            raise CacheError(f"{path}: corrupt surface cache: {exc}") from exc


def saved_surfaces(out_dir: str | Path) -> list[Path]:
    """Surface caches in ``out_dir``, sorted by name."""
    return sorted(Path(out_dir).glob("surface_*.npz"))
