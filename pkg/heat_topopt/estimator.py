"""
Residual a posteriori error estimator for piecewise-constant conductivities.

eta_T^2 = (h^2/k_T) ||f + div(k grad u_h)||^2_T
          + sum over edges E of T not on the sink of (h/k_E) ||[k grad u_h]_E||^2_E

with k_E the sum of the coefficients of the elements sharing E. The
coefficient is the penalized k^p that appears in the solved equation.
Interior edges appear in both neighbours' eta_T, exactly as the sum over the
element boundary prescribes.
"""

from dataclasses import dataclass
from typing import Dict, Tuple
import logging

import numpy as np

from .design import DesignField
from .exceptions import GridError
from .fem import FemSolution
from .grid import DIRICHLET, element_cell_map

logger = logging.getLogger(__name__)

# (minus side, plus side) of an edge in element-local side numbering.
_EDGE_SIDES = {True: (2, 0), False: (1, 3)}


@dataclass
class ErrorBreakdown:
    """Per-element estimator contributions and their totals."""
    eta_sq: np.ndarray
    total: float
    interior_part: float
    jump_part: float
    edge_terms: np.ndarray
    total_single_count: float

    def as_grid(self) -> np.ndarray:
        n = int(round(np.sqrt(len(self.eta_sq))))
        return self.eta_sq.reshape(n, n)


@dataclass
class EdgeFluxes:
    """
    Normal fluxes on both sides of every edge, sampled at edge Gauss points.

    g_minus / g_plus are derivatives of u_h across the edge (in +y for
    horizontal, +x for vertical edges) taken inside the element below/left
    and above/right. jump = kappa_minus g_minus - kappa_plus g_plus; on
    boundary edges the missing side contributes nothing.
    """
    jump: np.ndarray
    g_minus: np.ndarray
    g_plus: np.ndarray
    kappa_minus: np.ndarray
    kappa_plus: np.ndarray
    has_minus: np.ndarray
    has_plus: np.ndarray
    active: np.ndarray
    ops: Dict[bool, Tuple[np.ndarray, np.ndarray]]

    @property
    def k_edge(self) -> np.ndarray:
        return self.kappa_minus + self.kappa_plus

    @property
    def multiplicity(self) -> np.ndarray:
        return self.has_minus.astype(float) + self.has_plus.astype(float)


def element_coefficients(design: DesignField, p: float, solution: FemSolution) -> np.ndarray:
    """Penalized coefficient k^p of every computational element."""
    grid = solution.space.grid
    if grid.n % design.N != 0:
        raise GridError(f"Solution grid n={grid.n} is not nested in the N={design.N} model grid")
    if len(solution.u) != solution.space.ndof:
        raise GridError(f"Solution has {len(solution.u)} DOFs, its space has {solution.space.ndof}")
    return design.values.ravel()[element_cell_map(grid, design.N)] ** p


def edge_fluxes(solution: FemSolution, kappa: np.ndarray) -> EdgeFluxes:
    space = solution.space
    grid = space.grid
    ref = space.ref
    h = grid.h
    u_e = solution.u[space.edof]
    minus, plus = grid.edge_elements[:, 0], grid.edge_elements[:, 1]
    has_minus, has_plus = minus >= 0, plus >= 0
    nq = len(ref.edge_points)

    g_minus = np.zeros((grid.num_edges, nq))
    g_plus = np.zeros((grid.num_edges, nq))
    ops = {}
    for horizontal, (side_m, side_p) in _EDGE_SIDES.items():
        D_m = ref.side_derivative(side_m, horizontal) / h
        D_p = ref.side_derivative(side_p, horizontal) / h
        ops[horizontal] = (D_m, D_p)
        sel = grid.edge_horizontal == horizontal
        em, ep = sel & has_minus, sel & has_plus
        g_minus[em] = u_e[minus[em]] @ D_m.T
        g_plus[ep] = u_e[plus[ep]] @ D_p.T

    kappa_minus = np.where(has_minus, kappa[np.maximum(minus, 0)], 0.0)
    kappa_plus = np.where(has_plus, kappa[np.maximum(plus, 0)], 0.0)
    jump = kappa_minus[:, None] * g_minus - kappa_plus[:, None] * g_plus
    return EdgeFluxes(jump, g_minus, g_plus, kappa_minus, kappa_plus, has_minus, has_plus,
                      grid.edge_tags != DIRICHLET, ops)


def interior_residual(solution: FemSolution, kappa: np.ndarray, f: float):
    """
    Strong residual f + k Laplace(u_h) at the element quadrature points.

    Returns:
        (residual, reference Laplacian of u_h / h^2), both (elements, points)
    """
    space = solution.space
    h = space.grid.h
    lap = (solution.u[space.edof] @ space.ref.laplacian.T) / (h * h)
    return f + kappa[:, None] * lap, lap


def edge_jump(edge: int, solution: FemSolution, design: DesignField = None) -> np.ndarray:
    """
    Flux jump [k grad u_h]_E sampled at the edge Gauss points.

    Interior edges: k_T du/dn_T + k_T' du/dn_T'. Insulated boundary edges:
    -k_T du/dn_E with n_E the outward normal. Sink edges are rejected.
    """
    design = design or solution.design
    grid = solution.space.grid
    if not 0 <= edge < grid.num_edges:
        raise GridError(f"Edge {edge} outside the grid ({grid.num_edges} edges)")
    if grid.edge_tags[edge] == DIRICHLET:
        raise GridError(f"Edge {edge} lies on the sink; jumps are only defined off the Dirichlet boundary")
    fluxes = edge_fluxes(solution, element_coefficients(design, solution.p, solution))
    interior = fluxes.has_minus[edge] and fluxes.has_plus[edge]
    return fluxes.jump[edge] if interior else -fluxes.jump[edge]


def estimate(design: DesignField, p: float, solution: FemSolution, f: float) -> ErrorBreakdown:
    """
    Evaluate the estimator E_apost(k; u_h) = sum of eta_T^2.

    Args:
        design: Design the solution was computed for
        p: Penalization used in the solve
        solution: Q1 or Q2 solution
        f: Uniform heat source

    Returns:
        ErrorBreakdown with per-element and per-edge contributions
    """
    space = solution.space
    grid = space.grid
    h = grid.h
    kappa = element_coefficients(design, p, solution)
    weights = space.ref.quad_weights

    residual, _ = interior_residual(solution, kappa, f)
    interior = (h * h / kappa) * (h * h) * (residual ** 2 @ weights)

    fluxes = edge_fluxes(solution, kappa)
    edge_weights = space.ref.edge_weights
    k_edge = np.where(fluxes.active, fluxes.k_edge, 1.0)
    edge_terms = np.where(fluxes.active, (h / k_edge) * h * (fluxes.jump ** 2 @ edge_weights), 0.0)

    minus, plus = grid.edge_elements[:, 0], grid.edge_elements[:, 1]
    jump_per_element = (
        np.bincount(minus[fluxes.has_minus], weights=edge_terms[fluxes.has_minus], minlength=grid.num_elements)
        + np.bincount(plus[fluxes.has_plus], weights=edge_terms[fluxes.has_plus], minlength=grid.num_elements)
    )

    interior_part = float(np.sum(interior))
    jump_part = float(np.sum(edge_terms * fluxes.multiplicity))
    breakdown = ErrorBreakdown(
        eta_sq=interior + jump_per_element,
        total=interior_part + jump_part,
        interior_part=interior_part,
        jump_part=jump_part,
        edge_terms=edge_terms,
        total_single_count=interior_part + float(np.sum(edge_terms)),
    )
    logger.debug(f"E_apost={breakdown.total:.4e} on n={grid.n} (interior {interior_part:.3e}, jumps {jump_part:.3e})")
    return breakdown
