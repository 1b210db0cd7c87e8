"""
Minimization of the error-corrected compliance Phi_h + C E_apost.

A single-constraint Method of Moving Asymptotes drives the design; the
classical sensitivity filter is available as a baseline for comparison.
"""

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple
import logging
import math

import numpy as np
import pandas as pd
from scipy.sparse import coo_matrix

from .design import DesignField, qm_value
from .estimator import ErrorBreakdown, estimate
from .exceptions import OptimizationError, SolverError
from .fem import FemSolution, FemSpace, assemble, compliance, solve
from .grid import BoundarySpec, ModelGrid, build_grid
from .sensitivity import GradientField, combined_gradient

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["iter", "phi_h", "e_apost", "phi_c", "volume", "qm", "change", "cg_iters"]

# MMA parameters
ASYINIT = 0.5
ASYINCR = 1.2
ASYDECR = 0.7
ALBEFA = 0.1
RAA0 = 1e-5


@dataclass
class OptimizerConfig:
    """Settings of one optimization run."""
    C: float = 1.0
    p: float = 4.0
    V: float = 0.4
    gamma: float = 1e-3
    max_iters: int = 400
    move_limit: float = 0.2
    change_tol: float = 0.01
    filter_radius: float = 0.0
    order: int = 1
    linear_solver: str = "auto"

    def __post_init__(self):
        if self.C < 0:
            raise ValueError(f"C must be >= 0, got {self.C}")
        if self.p < 1:
            raise ValueError(f"p must be >= 1, got {self.p}")
        if self.change_tol <= 0:
            raise ValueError(f"change_tol must be > 0, got {self.change_tol}")
        if not 0 < self.move_limit <= 1:
            raise ValueError(f"move_limit must lie in (0, 1], got {self.move_limit}")
        if self.filter_radius < 0:
            raise ValueError(f"filter_radius must be >= 0, got {self.filter_radius}")
        if self.max_iters < 0:
            raise ValueError(f"max_iters must be >= 0, got {self.max_iters}")
        if self.order not in (1, 2):
            raise ValueError(f"order must be 1 or 2, got {self.order}")
        if self.order == 2 and self.C > 0:
            raise ValueError("Estimator gradients are available for Q1 only; use C = 0 with order 2")


@dataclass
class IterationRecord:
    iter: int
    phi_h: float
    e_apost: float
    phi_c: float
    volume: float
    qm: float
    change: float
    cg_iters: int


@dataclass
class OptimizationHistory:
    """Append-only iteration log."""
    records: List[IterationRecord] = field(default_factory=list)

    def append(self, record: IterationRecord):
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def last(self) -> Optional[IterationRecord]:
        return self.records[-1] if self.records else None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.records], columns=HISTORY_COLUMNS)

    def to_csv(self, path: str):
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def from_csv(cls, path: str) -> "OptimizationHistory":
        frame = pd.read_csv(path, float_precision="round_trip")
        return cls([IterationRecord(**{k: (int(v) if k in ("iter", "cg_iters") else float(v))
                                       for k, v in row.items()}) for row in frame.to_dict("records")])


def _filter_matrix(N: int, radius: float):
    """Cone weights max(0, radius - distance) between cell centres, as a sparse matrix."""
    H = 1.0 / N
    reach = int(math.ceil(radius / H))
    rows, cols = np.divmod(np.arange(N * N), N)
    iH, jH, sH = [], [], []
    for di in range(-reach, reach + 1):
        for dj in range(-reach, reach + 1):
            w = radius - H * math.hypot(di, dj)
            if w <= 0:
                continue
            r2, c2 = rows + di, cols + dj
            ok = (r2 >= 0) & (r2 < N) & (c2 >= 0) & (c2 < N)
            iH.append((rows * N + cols)[ok])
            jH.append((r2 * N + c2)[ok])
            sH.append(np.full(int(ok.sum()), w))
    Hm = coo_matrix((np.concatenate(sH), (np.concatenate(iH), np.concatenate(jH))), shape=(N * N, N * N)).tocsr()
    return Hm, np.asarray(Hm.sum(axis=1)).ravel()


def sensitivity_filter(design: DesignField, gradient: GradientField, radius: float) -> GradientField:
    """
    Density-weighted sensitivity filter.

    g_e <- sum_j w_j k_j g_j / (k_e sum_j w_j), w_j = max(0, radius - dist(e, j)),
    with radius in units of the domain side. Radii not exceeding one cell
    leave the gradient untouched.
    """
    if radius <= 1.0 / design.N:
        return GradientField(gradient.values.copy(), gradient.objective, gradient.adjoint_residual)
    Hm, Hs = _filter_matrix(design.N, radius)
    k = design.values.ravel()
    filtered = (Hm @ (k * gradient.flat)) / (k * Hs)
    return GradientField(filtered.reshape(design.N, design.N), f"filtered {gradient.objective}",
                         gradient.adjoint_residual)


@dataclass
class MMAState:
    """Moving asymptotes and the two previous iterates."""
    low: Optional[np.ndarray] = None
    upp: Optional[np.ndarray] = None
    xold1: Optional[np.ndarray] = None
    xold2: Optional[np.ndarray] = None
    iteration: int = 0


def _asymptotes(x, state: MMAState, xmin, xmax):
    span = xmax - xmin
    if state.iteration < 2 or state.xold2 is None:
        return x - ASYINIT * span, x + ASYINIT * span
    trend = (x - state.xold1) * (state.xold1 - state.xold2)
    factor = np.ones_like(x)
    factor[trend > 0] = ASYINCR
    factor[trend < 0] = ASYDECR
    low = x - factor * (state.xold1 - state.low)
    upp = x + factor * (state.upp - state.xold1)
    low = np.clip(low, x - 10.0 * span, x - 0.01 * span)
    upp = np.clip(upp, x + 0.01 * span, x + 10.0 * span)
    return low, upp


def _solve_subproblem(x, df0, a, bound, low, upp, alpha, beta, span):
    """
    Minimize the convex MMA approximation subject to a . x <= bound on [alpha, beta].

    The constraint is kept linear (the volume constraint is exactly linear),
    so the dual reduces to a bisection on its single multiplier.
    Returns None when no point of the box satisfies the constraint.
    """
    ux, xl = upp - x, x - low
    dpos, dneg = np.maximum(df0, 0.0), np.maximum(-df0, 0.0)
    reg = 0.001 * (dpos + dneg) + RAA0 / np.maximum(span, 1e-5)
    p0 = ux * ux * (dpos + reg)
    q0 = xl * xl * (dneg + reg)

    def slope(z, lam, sel=slice(None)):
        return p0[sel] / (upp[sel] - z) ** 2 - q0[sel] / (z - low[sel]) ** 2 + lam * a[sel]

    def primal(lam):
        at_lo, at_hi = slope(alpha, lam) >= 0, slope(beta, lam) <= 0
        z = np.where(at_lo, alpha, beta)
        inner = ~(at_lo | at_hi)
        lo, hi = alpha[inner], beta[inner]
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            rising = slope(mid, lam, inner) >= 0
            hi = np.where(rising, mid, hi)
            lo = np.where(rising, lo, mid)
        z[inner] = 0.5 * (lo + hi)
        return z

    def excess(lam):
        return float(a @ primal(lam) - bound)

    tol = 1e-13 * max(1.0, abs(bound))
    if float(a @ np.where(a > 0, alpha, beta)) - bound > tol:
        return None
    if excess(0.0) <= tol:
        return primal(0.0)
    lam_lo, lam_hi = 0.0, 1.0
    while excess(lam_hi) > 0:
        lam_lo, lam_hi = lam_hi, lam_hi * 10.0
        if lam_hi > 1e40:
            return None
    for _ in range(200):
        lam_mid = 0.5 * (lam_lo + lam_hi)
        if excess(lam_mid) > 0:
            lam_lo = lam_mid
        else:
            lam_hi = lam_mid
        if lam_hi - lam_lo <= 1e-15 * lam_hi:
            break
    return primal(lam_hi)


def mma_step(x: np.ndarray, f0: float, df0: np.ndarray, g: float, dg: np.ndarray, state: MMAState,
             xmin: np.ndarray, xmax: np.ndarray, move_limit: float = 0.2) -> Tuple[np.ndarray, MMAState]:
    """
    One MMA iteration for min f0(x) s.t. g(x) <= 0 with a linear g.

    Args:
        x: Current box-feasible point
        f0: Objective value (only logged; the approximation uses its gradient)
        df0: Objective gradient
        g: Constraint value
        dg: Constraint gradient
        state: Asymptotes and history from the previous step
        xmin, xmax: Box bounds
        move_limit: Largest change of any variable

    Returns:
        (new point, updated state)
    """
    x = np.asarray(x, dtype=float)
    xmin = np.broadcast_to(np.asarray(xmin, dtype=float), x.shape)
    xmax = np.broadcast_to(np.asarray(xmax, dtype=float), x.shape)
    span = xmax - xmin
    bound = float(dg @ x - g)

    attempts = [(state, move_limit), (MMAState(iteration=0), 0.5 * move_limit)]
    for attempt, (asym_state, move) in enumerate(attempts):
        low, upp = _asymptotes(x, asym_state, xmin, xmax)
        alpha = np.maximum.reduce([xmin, low + ALBEFA * (x - low), x - move])
        beta = np.minimum.reduce([xmax, upp - ALBEFA * (upp - x), x + move])
        x_new = _solve_subproblem(x, df0, dg, bound, low, upp, alpha, beta, span)
        if x_new is not None:
            break
        logger.warning(f"Infeasible MMA subproblem (attempt {attempt + 1}); resetting asymptotes, move limit {move / 2:g}")
    else:
        raise OptimizationError("MMA subproblem infeasible after retry")

    x_new = np.clip(x_new, xmin, xmax)
    logger.debug(f"MMA step {state.iteration}: f0={f0:.4e}, g={g:.3e}, max change {np.max(np.abs(x_new - x)):.3e}")
    return x_new, MMAState(low, upp, x.copy(), None if state.xold1 is None else state.xold1.copy(),
                           state.iteration + 1)


@dataclass
class Evaluation:
    """Everything computed from one state solve."""
    solution: FemSolution
    phi_h: float
    breakdown: ErrorBreakdown
    qm: float

    @property
    def e_apost(self) -> float:
        return self.breakdown.total


class TopologyOptimizer:
    """Owns the grids, the loop state and the history of one optimization run."""

    def __init__(self, model: ModelGrid, boundary: BoundarySpec, f: float, config: OptimizerConfig, recorder=None):
        """
        Set up the computational grid and space.

        Args:
            model: Model grid (N) and computational refinement ratio (r)
            boundary: Sink geometry; must snap at n = r N
            f: Uniform heat source
            config: Optimizer settings
            recorder: Optional sink for per-iteration rows and snapshots
        """
        self.model = model
        self.boundary = boundary
        self.f = f
        self.config = config
        self.recorder = recorder
        self.grid = build_grid(model.n, boundary)
        self.space = FemSpace.build(self.grid, config.order)
        self.history = OptimizationHistory()
        self.design: Optional[DesignField] = None

    def initial_design(self) -> DesignField:
        cfg = self.config
        return DesignField.uniform(self.model.N, cfg.V, gamma=cfg.gamma, volume_target=cfg.V)

    def evaluate(self, design: DesignField) -> Evaluation:
        cfg = self.config
        system = assemble(design, cfg.p, self.space, self.f)
        system.method = cfg.linear_solver
        solution = solve(system)
        breakdown = estimate(design, cfg.p, solution, self.f)
        qm = qm_value(design) if design.N >= 2 else 0.0
        return Evaluation(solution, compliance(solution), breakdown, qm)

    def gradient(self, design: DesignField, evaluation: Evaluation) -> GradientField:
        cfg = self.config
        grad = combined_gradient(design, cfg.p, evaluation.solution, self.f, cfg.C)
        if cfg.filter_radius > 0:
            grad = sensitivity_filter(design, grad, cfg.filter_radius)
        return grad

    def run(self, initial: Optional[DesignField] = None) -> Tuple[DesignField, OptimizationHistory]:
        """
        Run MMA from the uniform design k = V until the largest design change
        drops below change_tol or max_iters steps were taken.
        """
        cfg = self.config
        design = initial or self.initial_design()
        N2 = design.N * design.N
        xmin, xmax = np.full(N2, cfg.gamma), np.ones(N2)
        dg = np.full(N2, 1.0 / (cfg.V * N2))
        state = MMAState()
        scale = None
        change = 0.0

        logger.info(f"Optimizing N={self.model.N}, n={self.model.n}, Q{cfg.order}, p={cfg.p:g}, C={cfg.C:g}, "
                    f"filter={cfg.filter_radius:g}")
        for it in range(cfg.max_iters + 1):
            try:
                ev = self.evaluate(design)
            except SolverError as exc:
                self._fail(design)
                raise OptimizationError(f"State solve failed at iteration {it}: {exc}", self.history) from exc

            record = IterationRecord(
                iter=it,
                phi_h=ev.phi_h,
                e_apost=ev.e_apost,
                phi_c=ev.phi_h + cfg.C * ev.e_apost,
                volume=design.volume,
                qm=ev.qm,
                change=change,
                cg_iters=ev.solution.iterations,
            )
            self.history.append(record)
            self.design = design
            if self.recorder is not None:
                self.recorder.on_iteration(record, design)
            logger.info(f"It {it:4d}: phi_h={record.phi_h:.4e} e_apost={record.e_apost:.4e} "
                        f"vol={record.volume:.4f} qm={record.qm:.3e} change={change:.3f}")

            if it == cfg.max_iters or (it > 0 and change < cfg.change_tol):
                break

            try:
                grad = self.gradient(design, ev)
            except SolverError as exc:
                self._fail(design)
                raise OptimizationError(f"Adjoint solve failed at iteration {it}: {exc}", self.history) from exc
            if scale is None:
                peak = float(np.max(np.abs(grad.flat)))
                scale = 1.0 / peak if peak > 0 else 1.0

            x = design.values.ravel()
            constraint = design.volume / cfg.V - 1.0
            x_new, state = mma_step(x, scale * record.phi_c, scale * grad.flat, constraint, dg, state,
                                    xmin, xmax, cfg.move_limit)
            change = float(np.max(np.abs(x_new - x)))
            design = design.with_values(x_new)
            if not design.in_box(1e-12) or design.volume > cfg.V + 1e-6:
                self._fail(design)
                raise OptimizationError(f"Iterate {it + 1} violates the constraints (volume {design.volume:.6f})",
                                        self.history)

        logger.info(f"Finished after {len(self.history) - 1} steps: phi_c={self.history.last.phi_c:.4e}")
        return self.design, self.history

    def _fail(self, design: DesignField):
        if self.recorder is not None:
            self.recorder.on_failure(self.history, design)

    def get_status(self) -> Dict[str, Any]:
        last = self.history.last
        return {
            "N": self.model.N,
            "n": self.model.n,
            "order": self.config.order,
            "iterations": len(self.history) - 1 if last else 0,
            "phi_h": last.phi_h if last else None,
            "e_apost": last.e_apost if last else None,
            "phi_c": last.phi_c if last else None,
            "volume": last.volume if last else None,
            "qm": last.qm if last else None,
        }


def optimize(model: ModelGrid, boundary: BoundarySpec, f: float, config: OptimizerConfig,
             recorder=None) -> Tuple[DesignField, OptimizationHistory]:
    """Minimize Phi_h^C over the admissible designs of the model grid."""
    return TopologyOptimizer(model, boundary, f, config, recorder).run()
