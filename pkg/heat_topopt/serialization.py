"""
Run artifacts on disk: design files, PGM images, CSV tables and JSON summaries.

Design text format: a header line "N gamma V", then N lines of N
conductivities, the first line being the bottom row of the square. Values
are written with 17 significant digits so a read-back is bit-exact.
"""

from dataclasses import asdict
from datetime import datetime
from typing import Any, Dict, Optional
import json
import logging
import os

import numpy as np
import pandas as pd

from . import __version__
from .config import config
from .design import DesignField
from .estimator import ErrorBreakdown
from .exceptions import DesignError

logger = logging.getLogger(__name__)

SUMMARY_SCHEMA_VERSION = 1


def write_design(field: DesignField, path: str):
    lines = [f"{field.N} {field.gamma:.17g} {field.volume_target:.17g}"]
    lines += [" ".join(f"{v:.17g}" for v in row) for row in field.values]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    logger.debug(f"Saved {field.N}x{field.N} design to {path}")


def read_design(path: str) -> DesignField:
    """Load a design written by write_design."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Design file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        rows = [line.split() for line in fh if line.strip()]
    try:
        N, gamma, V = int(rows[0][0]), float(rows[0][1]), float(rows[0][2])
        values = np.array([[float(v) for v in row] for row in rows[1:]])
    except (IndexError, ValueError) as exc:
        raise DesignError(f"Malformed design file {path}: {exc}") from exc
    if values.shape != (N, N):
        raise DesignError(f"Design file {path} declares N={N} but holds a {values.shape} array")
    field = DesignField(values, gamma, V)
    if not field.in_box(1e-12):
        raise DesignError(f"Design file {path} has conductivities outside [{gamma}, 1]")
    return field


def pixel_values(field: DesignField) -> np.ndarray:
    """
    Gray levels round(255 (k - gamma) / (1 - gamma)), rounding halves up,
    with image row 0 at the top of the domain.
    """
    scaled = 255.0 * (field.values - field.gamma) / (1.0 - field.gamma)
    pixels = np.clip(np.floor(scaled + 0.5 + 1e-9), 0, 255).astype(np.uint8)
    return np.flipud(pixels)


def _write_pgm(pixels: np.ndarray, path: str, scale: int = 1):
    if scale > 1:
        pixels = np.kron(pixels, np.ones((scale, scale), dtype=pixels.dtype))
    height, width = pixels.shape
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"P2\n{width} {height}\n255\n")
        for row in pixels:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")


def read_pgm(path: str) -> np.ndarray:
    """Read a plain (P2) PGM back into a uint8 array."""
    with open(path, "r", encoding="ascii") as fh:
        tokens = [t for line in fh for t in line.split("#")[0].split()]
    if not tokens or tokens[0] != "P2":
        raise DesignError(f"{path} is not a plain PGM file")
    width, height = int(tokens[1]), int(tokens[2])
    return np.array(tokens[4:4 + width * height], dtype=int).astype(np.uint8).reshape(height, width)


def write_design_image(field: DesignField, path: str, scale: int = 1):
    """Grayscale PGM with one pixel (or a scale x scale block) per ground cell."""
    _write_pgm(pixel_values(field), path, scale)
    logger.debug(f"Rendered design to {path}")


def write_heatmap(breakdown: ErrorBreakdown, path: str, scale: int = 1):
    """
    Estimator contributions eta_T^2 per computational element, as a PGM
    normalised to the largest contribution and as a CSV next to it.
    """
    grid = breakdown.as_grid()
    peak = float(grid.max())
    levels = np.zeros_like(grid) if peak <= 0 else 255.0 * grid / peak
    _write_pgm(np.flipud(np.clip(np.floor(levels + 0.5), 0, 255).astype(np.uint8)), path, scale)
    csv_path = os.path.splitext(path)[0] + ".csv"
    pd.DataFrame(grid).to_csv(csv_path, index_label="row", float_format="%.17g")
    logger.debug(f"Rendered estimator heatmap to {path} and {csv_path}")


def write_summary(path: str, payload: Dict[str, Any]):
    document = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "package_version": __version__,
        "created": datetime.now().isoformat(timespec="seconds"),
        "linear_solver": {"cg_rtol": config.CG_RTOL, "direct_solve_max_dofs": config.DIRECT_SOLVE_MAX_DOFS},
        **payload,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(document, fh, indent=2)


def read_summary(path: str) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


class RunRecorder:
    """
    Writes the artifacts of one run into its own directory.

    The optimizer calls on_iteration after every evaluation and on_failure if
    it has to stop; finish writes the final design, history and summary.
    """

    def __init__(self, run_dir: str, run_config=None, snapshot_every: int = 0, image_scale: int = 1):
        self.run_dir = run_dir
        self.run_config = run_config
        self.snapshot_every = snapshot_every
        self.image_scale = image_scale
        os.makedirs(run_dir, exist_ok=True)
        self.history_path = os.path.join(run_dir, "history.csv")
        if os.path.exists(self.history_path):
            os.remove(self.history_path)

    @classmethod
    def for_config(cls, run_dir: str, run_config) -> "RunRecorder":
        outputs = run_config.outputs
        return cls(run_dir, run_config, outputs.snapshot_every, outputs.image_scale)

    def on_iteration(self, record, design: DesignField):
        row = pd.DataFrame([asdict(record)])
        row.to_csv(self.history_path, mode="a", header=not os.path.exists(self.history_path),
                   index=False, float_format="%.17g")
        if self.snapshot_every and record.iter % self.snapshot_every == 0:
            snapshots = os.path.join(self.run_dir, "snapshots")
            os.makedirs(snapshots, exist_ok=True)
            write_design_image(design, os.path.join(snapshots, f"iter_{record.iter:04d}.pgm"), self.image_scale)

    def on_failure(self, history, design: Optional[DesignField]):
        history.to_csv(self.history_path)
        if design is not None:
            write_design(design, os.path.join(self.run_dir, "design_failed.txt"))
        self._summary("failed", history, design, {})
        logger.warning(f"Run failed; partial history saved to {self.history_path}")

    def finish(self, design: DesignField, history, extra: Optional[Dict[str, Any]] = None,
               breakdown: Optional[ErrorBreakdown] = None) -> str:
        write_design(design, os.path.join(self.run_dir, "design.txt"))
        write_design_image(design, os.path.join(self.run_dir, "design.pgm"), self.image_scale)
        if breakdown is not None:
            write_heatmap(breakdown, os.path.join(self.run_dir, "estimator.pgm"), self.image_scale)
        history.to_csv(self.history_path)
        path = self._summary("completed", history, design, extra or {})
        logger.info(f"Saved run artifacts to {self.run_dir}")
        return path

    def _summary(self, status: str, history, design: Optional[DesignField], extra: Dict[str, Any]) -> str:
        last = history.last
        payload = {
            "status": status,
            "iterations": max(len(history) - 1, 0),
            "final": asdict(last) if last is not None else None,
            "volume": design.volume if design is not None else None,
            "config": self.run_config.model_dump(mode="json") if self.run_config is not None else None,
            **extra,
        }
        path = os.path.join(self.run_dir, "summary.json")
        write_summary(path, payload)
        return path
