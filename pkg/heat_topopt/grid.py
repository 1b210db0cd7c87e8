"""
Uniform quadrilateral grids on the unit square.

Builds model grids (where the design lives) and computational grids (where
the temperature is solved), with node/element/edge topology and the boundary
split into the heat sink (Dirichlet) and the insulated rest (Neumann).
Numbering is row-major from the bottom-left corner.
"""

from dataclasses import dataclass, field
from typing import List, Tuple, Union
import logging

import numpy as np

from .exceptions import GridError

logger = logging.getLogger(__name__)

INTERIOR = 0
DIRICHLET = 1
NEUMANN = 2

SIDES = ("bottom", "right", "top", "left")
_SNAP_TOL = 1e-9


@dataclass(frozen=True)
class SinkSegment:
    """A piece of the boundary held at zero temperature."""
    side: str
    center: float
    length: float

    def __post_init__(self):
        if self.side not in SIDES:
            raise GridError(f"Unknown side '{self.side}' (expected one of {', '.join(SIDES)})")
        if not 0.0 < self.length <= 1.0:
            raise GridError(f"Sink length must lie in (0, 1], got {self.length} for {self}")
        lo, hi = self.interval()
        if lo < -_SNAP_TOL or hi > 1.0 + _SNAP_TOL:
            raise GridError(f"Sink segment {self} extends past its side of the square")

    def interval(self) -> Tuple[float, float]:
        return self.center - 0.5 * self.length, self.center + 0.5 * self.length

    def snaps(self, n: int) -> bool:
        lo, hi = self.interval()
        return all(abs(t * n - round(t * n)) <= _SNAP_TOL * max(1, n) for t in (lo, hi))

    def describe(self) -> str:
        lo, hi = self.interval()
        return f"{self.side}[{lo:.6g}, {hi:.6g}]"


@dataclass(frozen=True)
class BoundarySpec:
    """Heat-sink segments defining the Dirichlet boundary; everything else is insulated."""
    segments: Tuple[SinkSegment, ...] = field(default_factory=lambda: (SinkSegment("left", 0.5, 0.2),))

    @classmethod
    def default(cls) -> "BoundarySpec":
        return cls()

    def snaps(self, n: int) -> bool:
        return all(seg.snaps(n) for seg in self.segments)

    def snapped(self, n: int, widen: bool = False) -> "BoundarySpec":
        """
        Move every segment endpoint to the nearest node of an n-grid.

        Args:
            n: Elements per side of the coarsest grid in the run
            widen: Give segments that would collapse one element of length
                instead of rejecting them (very coarse check grids)

        Returns:
            A boundary spec that snaps at n and at every multiple of n
        """
        snapped = []
        for seg in self.segments:
            lo, hi = seg.interval()
            i_lo = int(np.floor(lo * n + 0.5))
            i_hi = int(np.floor(hi * n + 0.5))
            if i_hi <= i_lo and widen:
                i_lo, i_hi = min(i_lo, n - 1), min(i_lo, n - 1) + 1
            if i_hi <= i_lo:
                raise GridError(f"Sink segment {seg.describe()} collapses to zero length on a {n}x{n} grid")
            new = SinkSegment(seg.side, 0.5 * (i_lo + i_hi) / n, (i_hi - i_lo) / n)
            if not seg.snaps(n):
                logger.warning(f"Snapped sink {seg.describe()} to {new.describe()} on the {n}x{n} grid")
            snapped.append(new)
        return BoundarySpec(tuple(snapped))

    def on_sink(self, points: np.ndarray) -> np.ndarray:
        """Mask of points lying on the closed Dirichlet boundary."""
        points = np.atleast_2d(points)
        x, y = points[:, 0], points[:, 1]
        mask = np.zeros(len(points), dtype=bool)
        tol = _SNAP_TOL
        for seg in self.segments:
            lo, hi = seg.interval()
            if seg.side == "left":
                on_side, t = np.abs(x) <= tol, y
            elif seg.side == "right":
                on_side, t = np.abs(x - 1.0) <= tol, y
            elif seg.side == "bottom":
                on_side, t = np.abs(y) <= tol, x
            else:
                on_side, t = np.abs(y - 1.0) <= tol, x
            mask |= on_side & (t >= lo - tol) & (t <= hi + tol)
        return mask


@dataclass(frozen=True, eq=False)
class StructuredGrid:
    """
    Uniform n x n quadrilateral grid of the unit square.

    Elements hold their corners counterclockwise from the bottom-left node.
    Edges are numbered horizontal first (row by row), then vertical.
    edge_elements[e] = (minus, plus) with minus below/left of the edge and
    -1 where the edge lies on the boundary. element_edges lists the
    bottom, right, top and left edge of every element.
    """
    n: int
    boundary: BoundarySpec
    nodes: np.ndarray
    elements: np.ndarray
    edge_nodes: np.ndarray
    edge_elements: np.ndarray
    edge_tags: np.ndarray
    edge_horizontal: np.ndarray
    element_edges: np.ndarray

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def num_elements(self) -> int:
        return self.n * self.n

    @property
    def num_nodes(self) -> int:
        return (self.n + 1) ** 2

    @property
    def num_edges(self) -> int:
        return len(self.edge_nodes)

    @property
    def element_area(self) -> float:
        return self.h * self.h

    @property
    def edge_length(self) -> float:
        return self.h

    def element_centers(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    def edges_with_tag(self, tag: int) -> np.ndarray:
        return np.flatnonzero(self.edge_tags == tag)

    def boundary_length(self, tag: int) -> float:
        return float(len(self.edges_with_tag(tag)) * self.h)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def build_grid(n: int, boundary: BoundarySpec = None) -> StructuredGrid:
    """
    Build the uniform n x n grid with boundary tags.

    Args:
        n: Elements per side
        boundary: Sink segments; must snap to nodes of this grid

    Returns:
        Immutable StructuredGrid
    """
    if boundary is None:
        boundary = BoundarySpec.default()
    if int(n) != n or n < 1:
        raise GridError(f"Grid size must be a positive integer, got {n}")
    n = int(n)
    for seg in boundary.segments:
        if not seg.snaps(n):
            raise GridError(f"Sink segment {seg.describe()} does not snap to the nodes of a {n}x{n} grid")

    xs = np.arange(n + 1) / n
    nodes = np.column_stack([np.tile(xs, n + 1), np.repeat(xs, n + 1)])

    rows, cols = np.divmod(np.arange(n * n), n)
    bl = rows * (n + 1) + cols
    elements = np.column_stack([bl, bl + 1, bl + n + 2, bl + n + 1])

    # Horizontal edges: row j in 0..n, column i in 0..n-1.
    hj, hi = np.divmod(np.arange((n + 1) * n), n)
    h_nodes = np.column_stack([hj * (n + 1) + hi, hj * (n + 1) + hi + 1])
    h_minus = np.where(hj > 0, (hj - 1) * n + hi, -1)
    h_plus = np.where(hj < n, hj * n + hi, -1)
    # Vertical edges: row j in 0..n-1, column i in 0..n.
    vj, vi = np.divmod(np.arange(n * (n + 1)), n + 1)
    v_nodes = np.column_stack([vj * (n + 1) + vi, (vj + 1) * (n + 1) + vi])
    v_minus = np.where(vi > 0, vj * n + vi - 1, -1)
    v_plus = np.where(vi < n, vj * n + vi, -1)

    edge_nodes = np.vstack([h_nodes, v_nodes])
    edge_elements = np.vstack([np.column_stack([h_minus, h_plus]), np.column_stack([v_minus, v_plus])])
    num_h = len(h_nodes)
    edge_horizontal = np.arange(len(edge_nodes)) < num_h

    on_boundary = (edge_elements < 0).any(axis=1)
    ends_on_sink = boundary.on_sink(nodes[edge_nodes[:, 0]]) & boundary.on_sink(nodes[edge_nodes[:, 1]])
    # Both endpoints on a sink of the same side; corner nodes are shared by two sides.
    mid_on_sink = boundary.on_sink(nodes[edge_nodes].mean(axis=1))
    edge_tags = np.full(len(edge_nodes), INTERIOR, dtype=np.int8)
    edge_tags[on_boundary] = NEUMANN
    edge_tags[on_boundary & ends_on_sink & mid_on_sink] = DIRICHLET

    element_edges = np.column_stack([
        rows * n + cols,                        # bottom
        num_h + rows * (n + 1) + cols + 1,      # right
        (rows + 1) * n + cols,                  # top
        num_h + rows * (n + 1) + cols,          # left
    ])

    grid = StructuredGrid(
        n=n,
        boundary=boundary,
        nodes=_frozen(nodes),
        elements=_frozen(elements),
        edge_nodes=_frozen(edge_nodes),
        edge_elements=_frozen(edge_elements),
        edge_tags=_frozen(edge_tags),
        edge_horizontal=_frozen(edge_horizontal),
        element_edges=_frozen(element_edges),
    )
    logger.debug(f"Built {n}x{n} grid with {len(grid.edges_with_tag(DIRICHLET))} Dirichlet edges")
    return grid


def refine(grid: StructuredGrid, factor: int) -> StructuredGrid:
    """Uniformly refine a grid; the sink geometry is inherited unchanged."""
    if int(factor) != factor or factor < 1:
        raise GridError(f"Refinement factor must be a positive integer, got {factor}")
    return build_grid(grid.n * int(factor), grid.boundary)


@dataclass(frozen=True)
class ModelGrid:
    """Model grid of N x N ground cells and its computational refinement ratio r."""
    N: int
    r: int = 1

    def __post_init__(self):
        if self.N < 1 or self.r < 1:
            raise GridError(f"Model grid needs N >= 1 and r >= 1, got N={self.N}, r={self.r}")

    @property
    def H(self) -> float:
        return 1.0 / self.N

    @property
    def n(self) -> int:
        return self.N * self.r

    def cell_of_element(self, element: Union[int, Tuple[int, int]]) -> Union[int, Tuple[int, int]]:
        """Ground cell containing a computational element, as flat index or (row, col)."""
        if isinstance(element, tuple):
            row, col = element
            if not (0 <= row < self.n and 0 <= col < self.n):
                raise GridError(f"Element {element} outside a {self.n}x{self.n} grid")
            return row // self.r, col // self.r
        if not 0 <= element < self.n * self.n:
            raise GridError(f"Element index {element} outside a {self.n}x{self.n} grid")
        row, col = divmod(int(element), self.n)
        return (row // self.r) * self.N + col // self.r

    def element_cells(self) -> np.ndarray:
        """Ground-cell index of every computational element."""
        rows, cols = np.divmod(np.arange(self.n * self.n), self.n)
        return (rows // self.r) * self.N + cols // self.r


def cell_of_element(model: ModelGrid, element_index):
    return model.cell_of_element(element_index)


def element_cell_map(grid: StructuredGrid, N: int) -> np.ndarray:
    """Map elements of a computational grid onto the cells of an N x N model grid."""
    if grid.n % N != 0:
        raise GridError(f"A {grid.n}x{grid.n} grid is not nested in a {N}x{N} model grid")
    return ModelGrid(N, grid.n // N).element_cells()


def check_nested_family(sizes: List[int], N: int = None) -> List[int]:
    """Validate a grid family where each size divides the next (and N divides the first)."""
    if not sizes:
        raise GridError("Empty grid family")
    if N is not None and sizes[0] % N != 0:
        raise GridError(f"Coarsest grid n={sizes[0]} is not nested in the {N}x{N} model grid")
    for coarse, fine in zip(sizes, sizes[1:]):
        if fine % coarse != 0 or fine <= coarse:
            raise GridError(f"Grid family {sizes} is not nested at n={coarse} -> n={fine}")
    return list(sizes)
