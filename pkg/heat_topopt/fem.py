"""
Finite element state solver for the penalized heat-conduction problem.

Solves a_k(u_h, v_h) = l(v_h) with a_k(u, v) = int k^p grad u . grad v and
l(v) = int f v on conforming bilinear (Q1) or biquadratic (Q2) spaces over a
StructuredGrid, with u = 0 on the sink. Constrained DOFs are eliminated, so
the reduced operator is symmetric positive definite.
"""

from dataclasses import dataclass, field
from typing import Any, Optional
import logging

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.linalg import LinearOperator, cg, splu

from .config import config
from .design import DesignField
from .exceptions import GridError, SolverError
from .grid import StructuredGrid, element_cell_map

logger = logging.getLogger(__name__)

SOLVER_METHODS = ("auto", "cg", "direct")

# Side order matches StructuredGrid.element_edges: bottom, right, top, left.
_SIDE_POINTS = {
    0: lambda tau: (tau, np.zeros_like(tau)),
    1: lambda tau: (np.ones_like(tau), tau),
    2: lambda tau: (tau, np.ones_like(tau)),
    3: lambda tau: (np.zeros_like(tau), tau),
}


def gauss_points(m: int):
    """Gauss-Legendre points and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (x + 1.0), 0.5 * w


def _lagrange_1d(order: int, s: np.ndarray):
    s = np.asarray(s, dtype=float)
    if order == 1:
        vals = np.stack([1.0 - s, s], axis=-1)
        ders = np.stack([-np.ones_like(s), np.ones_like(s)], axis=-1)
        second = np.zeros_like(vals)
    elif order == 2:
        vals = np.stack([2 * s * s - 3 * s + 1, 4 * s - 4 * s * s, 2 * s * s - s], axis=-1)
        ders = np.stack([4 * s - 3, 4 - 8 * s, 4 * s - 1], axis=-1)
        second = np.stack([4 * np.ones_like(s), -8 * np.ones_like(s), 4 * np.ones_like(s)], axis=-1)
    else:
        raise ValueError(f"Unsupported element order {order} (expected 1 or 2)")
    return vals, ders, second


@dataclass(frozen=True, eq=False)
class ReferenceElement:
    """
    Tensor-product Lagrange element on the unit reference square.

    Q1 local nodes run counterclockwise from the bottom-left corner; Q2 local
    nodes run row by row over the 3 x 3 lattice. Gradients are with respect
    to the reference coordinates (s, t); divide by h for physical ones.
    """
    order: int
    offsets: np.ndarray
    quad_points: np.ndarray
    quad_weights: np.ndarray
    edge_points: np.ndarray
    edge_weights: np.ndarray
    K0: np.ndarray
    load: np.ndarray
    laplacian: np.ndarray

    @classmethod
    def build(cls, order: int) -> "ReferenceElement":
        if order == 1:
            offsets = np.array([(0, 0), (1, 0), (1, 1), (0, 1)])
        elif order == 2:
            offsets = np.array([(ix, iy) for iy in range(3) for ix in range(3)])
        else:
            raise ValueError(f"Unsupported element order {order} (expected 1 or 2)")

        # 2x2 Gauss for Q1, 3x3 for Q2: exact for constant-coefficient integrands.
        g, w = gauss_points(order + 1)
        s, t = np.meshgrid(g, g, indexing="xy")
        s, t = s.ravel(), t.ravel()
        weights = np.outer(w, w).ravel()
        edge_points, edge_weights = gauss_points(order + 1)

        ref = cls(order, offsets, np.column_stack([s, t]), weights, edge_points, edge_weights,
                  np.zeros(0), np.zeros(0), np.zeros(0))
        phi, dphi_ds, dphi_dt, lap = ref.basis(s, t)
        K0 = (dphi_ds.T * weights) @ dphi_ds + (dphi_dt.T * weights) @ dphi_dt
        object.__setattr__(ref, "K0", 0.5 * (K0 + K0.T))
        object.__setattr__(ref, "load", weights @ phi)
        object.__setattr__(ref, "laplacian", lap)
        return ref

    @property
    def nloc(self) -> int:
        return len(self.offsets)

    def basis(self, s, t):
        """Values, reference gradients and reference Laplacians of all local basis functions."""
        ls, ds, ss = _lagrange_1d(self.order, s)
        lt, dt, tt = _lagrange_1d(self.order, t)
        ix, iy = self.offsets[:, 0], self.offsets[:, 1]
        phi = ls[:, ix] * lt[:, iy]
        dphi_ds = ds[:, ix] * lt[:, iy]
        dphi_dt = ls[:, ix] * dt[:, iy]
        lap = ss[:, ix] * lt[:, iy] + ls[:, ix] * tt[:, iy]
        return phi, dphi_ds, dphi_dt, lap

    def side_derivative(self, side: int, horizontal: bool) -> np.ndarray:
        """
        Reference derivative across an edge, sampled at the edge Gauss points.

        Horizontal edges are crossed in +t (d/dt), vertical edges in +s (d/ds).
        """
        s, t = _SIDE_POINTS[side](self.edge_points)
        _, dphi_ds, dphi_dt, _ = self.basis(s, t)
        return dphi_dt if horizontal else dphi_ds


_REFERENCE = {}


def reference_element(order: int) -> ReferenceElement:
    if order not in _REFERENCE:
        _REFERENCE[order] = ReferenceElement.build(order)
    return _REFERENCE[order]


def element_stiffness(order: int, conductivity: float) -> np.ndarray:
    """Local stiffness of a square element; independent of h in 2D."""
    return conductivity * reference_element(order).K0


@dataclass(frozen=True, eq=False)
class FemSpace:
    """Conforming Q1/Q2 space on a grid with the sink DOFs constrained to zero."""
    grid: StructuredGrid
    order: int
    ref: ReferenceElement
    edof: np.ndarray
    dof_coords: np.ndarray
    dirichlet_dofs: np.ndarray
    free_dofs: np.ndarray

    @classmethod
    def build(cls, grid: StructuredGrid, order: int = 1) -> "FemSpace":
        ref = reference_element(order)
        n = grid.n
        m = order * n + 1
        rows, cols = np.divmod(np.arange(n * n), n)
        X = order * cols[:, None] + ref.offsets[None, :, 0]
        Y = order * rows[:, None] + ref.offsets[None, :, 1]
        edof = Y * m + X
        lattice = np.arange(m) / (order * n)
        dof_coords = np.column_stack([np.tile(lattice, m), np.repeat(lattice, m)])
        sink = grid.boundary.on_sink(dof_coords)
        space = cls(grid, order, ref, edof, dof_coords, np.flatnonzero(sink), np.flatnonzero(~sink))
        logger.debug(f"Q{order} space on {n}x{n} grid: {space.ndof} DOFs, {len(space.dirichlet_dofs)} constrained")
        return space

    @property
    def ndof(self) -> int:
        return len(self.dof_coords)


@dataclass
class AssembledSystem:
    """Reduced stiffness system plus the full operators needed for energies and loads."""
    space: FemSpace
    design: DesignField
    p: float
    f: float
    K: csr_matrix
    A: csr_matrix
    b: np.ndarray
    b_full: np.ndarray
    kappa: np.ndarray
    element_cells: np.ndarray
    method: Optional[str] = None
    _factor: Any = field(default=None, repr=False)
    _precond: Any = field(default=None, repr=False)

    def expand(self, free_values: np.ndarray) -> np.ndarray:
        full = np.zeros(self.space.ndof)
        full[self.space.free_dofs] = free_values
        return full

    def energy(self, w: np.ndarray) -> float:
        """a_k(w, w) for a full DOF vector w."""
        return float(w @ (self.K @ w))


@dataclass
class FemSolution:
    """Temperature DOF vector with the space, design and solve metadata it came from."""
    u: np.ndarray
    space: FemSpace
    design: DesignField
    p: float
    f: float
    residual: float = 0.0
    iterations: int = 0
    system: Optional[AssembledSystem] = None


def assemble(design: DesignField, p: float, space: FemSpace, f: float) -> AssembledSystem:
    """
    Assemble the reduced system A u = b.

    Args:
        design: Conductivity on the model grid; the computational grid must nest in it
        p: SIMP penalization, coefficients are k^p
        space: Q1 or Q2 space
        f: Uniform heat source

    Returns:
        AssembledSystem with constrained DOFs eliminated
    """
    grid = space.grid
    if grid.n % design.N != 0:
        raise GridError(f"Computational grid n={grid.n} is not nested in the N={design.N} model grid")
    if p < 1:
        raise ValueError(f"Penalization p must be >= 1, got {p}")
    if f < 0:
        raise ValueError(f"Heat source f must be >= 0, got {f}")

    ref = space.ref
    cells = element_cell_map(grid, design.N)
    kappa = design.values.ravel()[cells] ** p
    nloc, ndof = ref.nloc, space.ndof

    iK = np.repeat(space.edof, nloc, axis=1).ravel()
    jK = np.tile(space.edof, (1, nloc)).ravel()
    sK = (kappa[:, None] * ref.K0.ravel()[None, :]).ravel()
    K = coo_matrix((sK, (iK, jK)), shape=(ndof, ndof)).tocsr()

    h2 = grid.h * grid.h
    b_full = np.bincount(space.edof.ravel(), weights=np.tile(f * h2 * ref.load, grid.num_elements), minlength=ndof)

    free = space.free_dofs
    A = K[free][:, free].tocsr()
    return AssembledSystem(space, design, p, f, K, A, b_full[free], b_full, kappa, cells)


def _choose_method(system: AssembledSystem, method: Optional[str]) -> str:
    method = method or system.method or "auto"
    if method not in SOLVER_METHODS:
        raise ValueError(f"Unknown solver method '{method}' (expected one of {', '.join(SOLVER_METHODS)})")
    if method == "auto":
        method = "direct" if system.space.ndof < config.DIRECT_SOLVE_MAX_DOFS else "cg"
    return method


def _linear_solve(system: AssembledSystem, rhs: np.ndarray, method: Optional[str]):
    """Solve A x = rhs on the free DOFs, reusing any cached factorisation or preconditioner."""
    norm_rhs = np.linalg.norm(rhs)
    if norm_rhs == 0.0:
        return np.zeros_like(rhs), 0.0, 0
    method = _choose_method(system, method)
    A = system.A

    if method == "direct":
        if system._factor is None:
            system._factor = splu(A.tocsc())
        x = system._factor.solve(rhs)
        return x, float(np.linalg.norm(rhs - A @ x) / norm_rhs), 0

    if system._precond is None:
        inv_diag = 1.0 / A.diagonal()
        system._precond = LinearOperator(A.shape, matvec=lambda r: inv_diag * r, dtype=float)
    maxiter = int(config.CG_MAXITER_FACTOR * np.sqrt(system.space.ndof))
    counter = {"it": 0}

    def _count(_):
        counter["it"] += 1

    x, info = cg(A, rhs, rtol=config.CG_RTOL, atol=0.0, maxiter=maxiter, M=system._precond, callback=_count)
    residual = float(np.linalg.norm(rhs - A @ x) / norm_rhs)
    if info != 0 and residual > config.CG_RTOL:
        raise SolverError("Conjugate gradients did not converge", residual, counter["it"])
    logger.debug(f"CG converged in {counter['it']} iterations, residual {residual:.2e}")
    return x, residual, counter["it"]


def solve(system: AssembledSystem, method: Optional[str] = None) -> FemSolution:
    """Solve the state equation; sink DOFs are exactly zero in the result."""
    x, residual, iterations = _linear_solve(system, system.b, method)
    return FemSolution(
        u=system.expand(x),
        space=system.space,
        design=system.design,
        p=system.p,
        f=system.f,
        residual=residual,
        iterations=iterations,
        system=system,
    )


def solve_adjoint(system: AssembledSystem, rhs_full: np.ndarray, method: Optional[str] = None):
    """
    Solve A lambda = rhs with the primal operator (A is symmetric).

    Returns:
        (full-length lambda, relative residual, iterations)
    """
    x, residual, iterations = _linear_solve(system, rhs_full[system.space.free_dofs], method)
    return system.expand(x), residual, iterations


def compliance(solution: FemSolution) -> float:
    """Discrete compliance l(u_h) = b^T u with the un-eliminated load."""
    if solution.system is not None:
        b_full = solution.system.b_full
    else:
        space = solution.space
        h2 = space.grid.h ** 2
        b_full = np.bincount(space.edof.ravel(), weights=np.tile(solution.f * h2 * space.ref.load,
                             space.grid.num_elements), minlength=space.ndof)
    return float(b_full @ solution.u)


def evaluate(solution: FemSolution, points: np.ndarray) -> np.ndarray:
    """Evaluate u_h at points of the unit square."""
    space = solution.space
    n = space.grid.n
    points = np.atleast_2d(points)
    col = np.clip(np.floor(points[:, 0] * n).astype(int), 0, n - 1)
    row = np.clip(np.floor(points[:, 1] * n).astype(int), 0, n - 1)
    s = points[:, 0] * n - col
    t = points[:, 1] * n - row
    phi, _, _, _ = space.ref.basis(s, t)
    return np.einsum("pi,pi->p", phi, solution.u[space.edof[row * n + col]])


def prolongate(solution: FemSolution, fine_space: FemSpace) -> np.ndarray:
    """Interpolate a solution into a nested (finer or higher-order) space; exact for nested spaces."""
    if fine_space.grid.n % solution.space.grid.n != 0:
        raise GridError(f"n={fine_space.grid.n} grid is not nested in n={solution.space.grid.n} grid")
    if fine_space.order < solution.space.order:
        raise GridError("Cannot prolongate into a lower-order space")
    return evaluate(solution, fine_space.dof_coords)


def solve_state(design: DesignField, p: float, grid: StructuredGrid, f: float,
                order: int = 1, method: Optional[str] = None) -> FemSolution:
    """Build the space, assemble and solve in one call."""
    space = FemSpace.build(grid, order)
    system = assemble(design, p, space, f)
    system.method = method
    return solve(system)
