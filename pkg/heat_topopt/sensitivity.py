"""
Design sensitivities of the compliance and of the error estimator.

Compliance is self-adjoint. The estimator depends on the design both
explicitly (coefficients in weights and jumps) and through u_h, so its total
derivative needs one adjoint solve with the primal operator:

    dE/dk = dE/dk|_u - lambda^T (dA/dk) u_h,   A lambda = dE/du_h
"""

from dataclasses import dataclass
from typing import Callable, Tuple
import logging

import numpy as np
from tqdm import tqdm

from .design import DesignField
from .estimator import edge_fluxes, element_coefficients, interior_residual
from .exceptions import GridError
from .fem import FemSolution, assemble, solve_adjoint
from .grid import element_cell_map

logger = logging.getLogger(__name__)


@dataclass
class GradientField:
    """Derivative of an objective with respect to every ground-cell conductivity."""
    values: np.ndarray
    objective: str
    adjoint_residual: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"Non-finite entries in the {self.objective} gradient")

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()


def _to_cells(per_element: np.ndarray, cells: np.ndarray, N: int) -> np.ndarray:
    return np.bincount(cells, weights=per_element, minlength=N * N).reshape(N, N)


def _element_chain(design: DesignField, p: float, solution: FemSolution):
    """Element-to-cell map and dkappa/dk = p k^(p-1) per element."""
    if solution.system is not None and solution.system.design.N == design.N:
        cells = solution.system.element_cells
    else:
        cells = element_cell_map(solution.space.grid, design.N)
    k = design.values.ravel()[cells]
    return cells, p * k ** (p - 1)


def _energy_products(solution: FemSolution, w: np.ndarray) -> np.ndarray:
    """Element-wise w_e^T K0 u_e (the matrix-free dA/dk application)."""
    space = solution.space
    return np.einsum("ei,ij,ej->e", w[space.edof], space.ref.K0, solution.u[space.edof])


def compliance_gradient(design: DesignField, p: float, solution: FemSolution) -> GradientField:
    """-p k^(p-1) sum of u_e^T K0 u_e over the elements of each ground cell; never positive."""
    cells, dkappa = _element_chain(design, p, solution)
    per_element = -dkappa * _energy_products(solution, solution.u)
    return GradientField(_to_cells(per_element, cells, design.N), "compliance")


def estimator_partials(design: DesignField, p: float, solution: FemSolution, f: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Explicit partial derivatives of E_apost.

    Returns:
        (dE/dk at fixed u_h as an N x N array, dE/du_h as a full DOF vector)
    """
    space = solution.space
    grid = space.grid
    h = grid.h
    edof = space.edof
    kappa = element_coefficients(design, p, solution)
    cells, dkappa = _element_chain(design, p, solution)

    # Interior term: (h^2/kappa) h^2 sum_q w (f + kappa L)^2.
    weights = space.ref.quad_weights
    residual, lap = interior_residual(solution, kappa, f)
    h4 = h ** 4
    d_interior = h4 * (-(residual ** 2 @ weights) / kappa ** 2 + 2.0 * ((residual * lap) @ weights) / kappa)
    du = np.bincount(edof.ravel(), weights=(2.0 * h * h * (residual * weights) @ space.ref.laplacian).ravel(),
                     minlength=space.ndof)

    # Edge terms: multiplicity * (h^2 / k_E) sum_q w J^2.
    fluxes = edge_fluxes(solution, kappa)
    active = fluxes.active
    w_e = space.ref.edge_weights
    k_edge = np.where(active, fluxes.k_edge, 1.0)
    scale = np.where(active, fluxes.multiplicity * h * h / k_edge, 0.0)
    S = (fluxes.jump ** 2) @ w_e
    wJ = fluxes.jump * w_e[None, :]
    d_minus = scale * (-S / k_edge + 2.0 * np.sum(wJ * fluxes.g_minus, axis=1))
    d_plus = scale * (-S / k_edge - 2.0 * np.sum(wJ * fluxes.g_plus, axis=1))

    minus, plus = grid.edge_elements[:, 0], grid.edge_elements[:, 1]
    hm, hp = fluxes.has_minus & active, fluxes.has_plus & active
    n_el = grid.num_elements
    d_kappa = (d_interior
               + np.bincount(minus[hm], weights=d_minus[hm], minlength=n_el)
               + np.bincount(plus[hp], weights=d_plus[hp], minlength=n_el))

    for horizontal, (D_m, D_p) in fluxes.ops.items():
        sel = grid.edge_horizontal == horizontal
        em, ep = sel & hm, sel & hp
        coef_m = (2.0 * scale[em] * fluxes.kappa_minus[em])[:, None] * wJ[em]
        coef_p = (-2.0 * scale[ep] * fluxes.kappa_plus[ep])[:, None] * wJ[ep]
        du += np.bincount(edof[minus[em]].ravel(), weights=(coef_m @ D_m).ravel(), minlength=space.ndof)
        du += np.bincount(edof[plus[ep]].ravel(), weights=(coef_p @ D_p).ravel(), minlength=space.ndof)

    return _to_cells(d_kappa * dkappa, cells, design.N), du


def _require_q1(solution: FemSolution):
    if solution.space.order != 1:
        raise GridError(f"Estimator gradients support Q1 only, got Q{solution.space.order}")


def _system_of(design: DesignField, p: float, solution: FemSolution, f: float):
    if solution.system is not None:
        return solution.system
    return assemble(design, p, solution.space, f)


def estimator_gradient(design: DesignField, p: float, solution: FemSolution, f: float) -> GradientField:
    """Total derivative of E_apost via one adjoint solve with the primal operator."""
    _require_q1(solution)
    explicit, du = estimator_partials(design, p, solution, f)
    lam, residual, _ = solve_adjoint(_system_of(design, p, solution, f), du)
    cells, dkappa = _element_chain(design, p, solution)
    implicit = _to_cells(-dkappa * _energy_products(solution, lam), cells, design.N)
    return GradientField(explicit + implicit, "estimator", residual)


def combined_gradient(design: DesignField, p: float, solution: FemSolution, f: float, C: float) -> GradientField:
    """Gradient of Phi_h + C E_apost with one shared adjoint solve."""
    if C < 0:
        raise ValueError(f"Correction parameter C must be >= 0, got {C}")
    if C == 0:
        grad = compliance_gradient(design, p, solution)
        return GradientField(grad.values, "combined(0)")
    _require_q1(solution)
    explicit, du = estimator_partials(design, p, solution, f)
    lam, residual, _ = solve_adjoint(_system_of(design, p, solution, f), du)
    cells, dkappa = _element_chain(design, p, solution)
    # Compliance is self-adjoint: its multiplier is u_h itself.
    per_element = -dkappa * _energy_products(solution, solution.u + C * lam)
    return GradientField(C * explicit + _to_cells(per_element, cells, design.N), f"combined({C:g})", residual)


def default_step(k: float) -> float:
    return max(1e-6 * k, 1e-8)


def finite_difference_oracle(objective: Callable[[DesignField], float], design: DesignField,
                             step_rule: Callable[[float], float] = default_step) -> GradientField:
    """
    Central finite differences per cell, one-sided where a step would leave [gamma, 1].

    Verification only: costs two objective evaluations per ground cell.
    """
    values = design.values.ravel()
    grad = np.zeros_like(values)
    for j in tqdm(range(len(values)), desc="Finite differences", disable=len(values) < 64):
        k = values[j]
        delta = step_rule(k)
        up, down = values.copy(), values.copy()
        can_up, can_down = k + delta <= 1.0, k - delta >= design.gamma
        if can_up and can_down:
            up[j], down[j] = k + delta, k - delta
            grad[j] = (objective(design.with_values(up)) - objective(design.with_values(down))) / (2 * delta)
            continue
        logger.warning(f"Cell {j}: k={k:.6g} too close to a bound, using a one-sided difference")
        base = objective(design)
        if can_up:
            up[j] = k + delta
            grad[j] = (objective(design.with_values(up)) - base) / delta
        else:
            down[j] = k - delta
            grad[j] = (base - objective(design.with_values(down))) / delta
    return GradientField(grad.reshape(design.N, design.N), "finite-difference")


def relative_error(approx: GradientField, reference: GradientField, floor: float = 1e-12) -> float:
    """Largest per-cell relative deviation over cells with |reference| above floor."""
    ref = reference.flat
    mask = np.abs(ref) > floor
    if not np.any(mask):
        return float(np.max(np.abs(approx.flat - ref)))
    return float(np.max(np.abs(approx.flat[mask] - ref[mask]) / np.abs(ref[mask])))
