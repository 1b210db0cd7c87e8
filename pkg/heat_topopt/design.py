"""
Admissible designs and the quasi-monotonicity characteristic function.

A design is a piecewise-constant conductivity on the N x N model grid,
bounded below by the ersatz conductivity gamma and above by 1.
values[row, col] with row 0 at the bottom of the square.
"""

from dataclasses import dataclass, replace
import logging

import numpy as np

from .exceptions import DesignError

logger = logging.getLogger(__name__)

VOLUME_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class DesignField:
    """Conductivity per ground cell together with the bounds it must respect."""
    values: np.ndarray
    gamma: float = 1e-3
    volume_target: float = 0.4

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1] or values.shape[0] < 1:
            raise DesignError(f"Design values must be a non-empty square array, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DesignError("Design values must be finite")
        if not 0.0 < self.gamma < 1.0:
            raise DesignError(f"gamma must lie in (0, 1), got {self.gamma}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def uniform(cls, N: int, value: float = None, gamma: float = 1e-3, volume_target: float = 0.4) -> "DesignField":
        """Uniform design; defaults to k = V, the optimizer's starting point."""
        fill = volume_target if value is None else value
        return cls(np.full((N, N), float(fill)), gamma, volume_target)

    @classmethod
    def checkerboard(cls, N: int, gamma: float = 1e-3, volume_target: float = 0.4,
                     high: float = 1.0, low: float = None) -> "DesignField":
        """Perfect two-phase checkerboard; the cell at (0, 0) holds the high phase."""
        low = gamma if low is None else low
        rows, cols = np.indices((N, N))
        return cls(np.where((rows + cols) % 2 == 0, high, low), gamma, volume_target)

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def volume(self) -> float:
        """Integral of k over the unit square (cells have area 1/N^2)."""
        return float(self.values.mean())

    def with_values(self, values: np.ndarray) -> "DesignField":
        return replace(self, values=np.asarray(values, dtype=float).reshape(self.N, self.N))

    def in_box(self, tol: float = 0.0) -> bool:
        return bool(np.all(self.values >= self.gamma - tol) and np.all(self.values <= 1.0 + tol))

    def is_feasible(self, tol: float = VOLUME_TOL) -> bool:
        return self.in_box(tol) and self.volume <= self.volume_target + tol


def project_to_box(field: DesignField) -> DesignField:
    """Clamp every conductivity into [gamma, 1]."""
    return field.with_values(np.clip(field.values, field.gamma, 1.0))


def _m(a, b, c):
    # Triangle-inequality excess of the path a -> b -> c; zero iff b lies between a and c.
    return np.abs(b - a) + np.abs(c - b) - np.abs(c - a)


def qm_local(a, b, c, d, printed: bool = False):
    """
    Local quasi-monotonicity violation around one interior node.

    a, b, c, d are the cells (i, j), (i+1, j), (i, j+1), (i+1, j+1) around the
    node, so (a, d) and (b, c) are the diagonal pairs. The result is zero when
    one of the monotone three-cell paths between a diagonal pair exists.

    Args:
        a, b, c, d: Conductivities (scalars or equally shaped arrays)
        printed: Use the first factor m(a, b, c) exactly as it appears in the
            published formula; it vanishes on checkerboards, so it is kept only
            for comparison

    Returns:
        Nonnegative violation measure
    """
    first = _m(a, b, c) if printed else _m(a, b, d)
    return first * _m(a, c, d) * _m(b, a, c) * _m(b, d, c)


def qm_value(field: DesignField, printed: bool = False) -> float:
    """Sum of qm_local over the (N-1)^2 interior nodes of the model grid."""
    k = field.values
    if k.shape[0] < 2:
        raise DesignError(f"QM needs at least a 2x2 model grid, got N={k.shape[0]}")
    a = k[:-1, :-1]
    b = k[:-1, 1:]
    c = k[1:, :-1]
    d = k[1:, 1:]
    # Fixed-order reduction keeps the value reproducible.
    return float(np.sum(np.clip(qm_local(a, b, c, d, printed=printed), 0.0, None), dtype=np.float64))
