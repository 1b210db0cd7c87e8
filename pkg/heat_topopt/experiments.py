"""
Studies built on top of the optimizer.

- refinement study: one fixed design solved on a nested family of grids
- C sweep: one optimization per correction parameter, each final design
  re-evaluated on a fine verification grid
- model-grid refinement: one optimization per model-grid size at fixed C
- approximation comparison: checkerboard, refined, biquadratic, filtered and
  corrected designs side by side, each followed by a refinement study

Every study returns a report backed by a pandas DataFrame and, given an
output directory, persists the designs it produced so rows can be replayed.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence
import logging
import os

import numpy as np
import pandas as pd
from tqdm import tqdm

from .config import config
from .design import DesignField, qm_value
from .estimator import ErrorBreakdown, estimate
from .exceptions import GridError, SolverError, TopOptError
from .fem import compliance, solve_state
from .grid import BoundarySpec, build_grid, check_nested_family
from .optimizer import OptimizationHistory, TopologyOptimizer
from .run_config import COMPARISON_VARIANTS, PRESETS, RunConfig
from .serialization import RunRecorder, read_design

logger = logging.getLogger(__name__)

MONOTONE_TOL = 1e-6


@dataclass
class Report:
    """Rows of a study; columns are fixed per report type."""
    rows: List[Dict[str, Any]] = field(default_factory=list)
    columns = []

    def __len__(self) -> int:
        return len(self.rows)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=self.columns)

    def to_csv(self, path: str):
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        logger.info(f"Saved {type(self).__name__} with {len(self)} rows to {path}")


@dataclass
class RefinementReport(Report):
    qm: float = 0.0
    columns = ["n", "phi", "phi_ratio", "e_apost", "robustness", "cg_iters"]

    def row(self, n: int) -> Dict[str, Any]:
        for row in self.rows:
            if row["n"] == n:
                return row
        raise KeyError(f"No row for n={n}")


@dataclass
class SweepReport(Report):
    columns = ["C", "status", "iterations", "phi_h", "phi_fine", "e_apost", "e_apost_fine", "qm",
               "design_path", "error"]

    def row(self, C: float) -> Dict[str, Any]:
        for row in self.rows:
            if row["C"] == C:
                return row
        raise KeyError(f"No row for C={C}")


@dataclass
class ModelRefinementReport(Report):
    columns = ["N", "status", "iterations", "phi_h", "e_apost", "qm", "design_path", "error"]


@dataclass
class ComparisonReport(Report):
    columns = ["variant", "status", "phi_h1", "phi_h4", "phi_ratio", "e_apost_h1", "e_apost_h4", "qm",
               "design_path", "error"]


@dataclass
class RunResult:
    """Outcome of one optimization run."""
    config: RunConfig
    design: DesignField
    history: OptimizationHistory
    boundary: BoundarySpec
    breakdown: ErrorBreakdown
    run_dir: Optional[str] = None

    @property
    def design_path(self) -> Optional[str]:
        return os.path.join(self.run_dir, "design.txt") if self.run_dir else None


def evaluate_on_grid(design: DesignField, n: int, boundary: BoundarySpec, f: float, p: float,
                     order: int = 1, solver: Optional[str] = None) -> Dict[str, float]:
    """Compliance and estimator of a fixed design on an n x n computational grid."""
    grid = build_grid(n, boundary)
    try:
        solution = solve_state(design, p, grid, f, order=order, method=solver)
    except SolverError as exc:
        logger.warning(f"Iterative solve failed on n={n} ({exc}); retrying with the direct solver")
        solution = solve_state(design, p, grid, f, order=order, method="direct")
    breakdown = estimate(design, p, solution, f)
    return {"phi": compliance(solution), "e_apost": breakdown.total, "cg_iters": solution.iterations}


def execute_run(run_config: RunConfig, run_dir: Optional[str] = None,
                boundary: Optional[BoundarySpec] = None) -> RunResult:
    """
    Optimize one configuration, writing its artifacts to run_dir when given.

    The configured sink is snapped to the model grid unless a boundary
    (already snapped by the caller) is passed in.
    """
    problem = run_config.problem
    boundary = boundary or run_config.boundary_spec().snapped(problem.N)
    recorder = RunRecorder.for_config(run_dir, run_config) if run_dir else None
    optimizer = TopologyOptimizer(run_config.model_grid(), boundary, problem.f, run_config.optimizer_config(),
                                  recorder)
    design, history = optimizer.run()
    final = optimizer.evaluate(design)
    if recorder is not None:
        extra = {"boundary": [s.describe() for s in boundary.segments], "status_detail": optimizer.get_status()}
        recorder.finish(design, history, extra,
                        final.breakdown if run_config.outputs.write_heatmap else None)
    return RunResult(run_config, design, history, boundary, final.breakdown, run_dir)


def run_refinement_study(design: DesignField, sizes: Sequence[int], boundary: BoundarySpec,
                         f: float = 1e-2, p: float = 4.0, solver: Optional[str] = None) -> RefinementReport:
    """
    Solve a fixed design with Q1 on every grid of a nested family.

    Args:
        design: Design on its model grid; the coarsest size must be a multiple of its N
        sizes: Increasing computational grid sizes, each dividing the next
        boundary: Sink geometry, snapping on the coarsest grid
        f: Heat source
        p: Penalization
        solver: Linear solver method

    Returns:
        RefinementReport with compliance, ratio to the coarsest grid, estimator
        and the robustness ratio (phi_finest - phi_n) / E_apost(n)
    """
    sizes = check_nested_family(list(sizes), design.N)
    if not boundary.snaps(sizes[0]):
        raise GridError(f"Boundary {[s.describe() for s in boundary.segments]} does not snap on the n={sizes[0]} grid")

    results = []
    for n in tqdm(sizes, desc="Refinement study", disable=len(sizes) < 3):
        results.append(evaluate_on_grid(design, n, boundary, f, p, solver=solver))
        logger.debug(f"n={n}: phi={results[-1]['phi']:.6e}, e_apost={results[-1]['e_apost']:.4e}")

    phi0, phi_fine = results[0]["phi"], results[-1]["phi"]
    report = RefinementReport(qm=qm_value(design) if design.N >= 2 else 0.0)
    for n, res in zip(sizes, results):
        ratio = res["phi"] / phi0 if phi0 > 0 else 1.0
        if ratio < 1.0 - MONOTONE_TOL:
            logger.warning(f"Compliance decreased under refinement at n={n} (ratio {ratio:.8f})")
        report.rows.append({
            "n": n,
            "phi": res["phi"],
            "phi_ratio": ratio,
            "e_apost": res["e_apost"],
            "robustness": (phi_fine - res["phi"]) / res["e_apost"] if res["e_apost"] > 0 else 0.0,
            "cg_iters": res["cg_iters"],
        })
    logger.info(f"Refinement n={sizes[0]}..{sizes[-1]}: compliance ratio {report.rows[-1]['phi_ratio']:.4g}, QM={report.qm:.4g}")
    return report


def _sweep_one(run_config: RunConfig, run_dir: Optional[str], boundary: BoundarySpec, fine_grid: int) -> Dict[str, Any]:
    C = run_config.optimizer.C
    row = {"C": C, "status": "failed", "iterations": None, "phi_h": None, "phi_fine": None, "e_apost": None,
           "e_apost_fine": None, "qm": None, "design_path": None, "error": None}
    try:
        result = execute_run(run_config, run_dir, boundary)
        problem = run_config.problem
        fine = evaluate_on_grid(result.design, fine_grid, boundary, problem.f, problem.p,
                                solver=run_config.discretization.linear_solver)
        last = result.history.last
        row.update(status="ok", iterations=len(result.history) - 1, phi_h=last.phi_h, phi_fine=fine["phi"],
                   e_apost=last.e_apost, e_apost_fine=fine["e_apost"], qm=last.qm, design_path=result.design_path)
    except TopOptError as exc:
        logger.warning(f"Sweep run C={C:g} failed: {exc}")
        row["error"] = str(exc)
    return row


def run_c_sweep(C_values: Sequence[float], base: RunConfig, out_dir: Optional[str] = None,
                fine_grid: Optional[int] = None, max_workers: int = 1) -> SweepReport:
    """
    One optimization per correction parameter.

    Runs are independent and deterministic; max_workers > 1 runs them in
    separate processes. A failing run is recorded and the sweep continues.
    """
    if any(C < 0 for C in C_values):
        raise ValueError(f"Correction parameters must be >= 0, got {list(C_values)}")
    fine_grid = fine_grid or config.FINE_GRID
    boundary = base.boundary_spec().snapped(base.problem.N)
    jobs = []
    for C in C_values:
        run_dir = os.path.join(out_dir, f"C_{C:g}") if out_dir else None
        jobs.append((base.with_overrides({"optimizer": {"C": float(C)}}), run_dir, boundary, fine_grid))

    logger.info(f"Sweeping C over {list(C_values)} on N={base.problem.N} (fine grid n={fine_grid})")
    if max_workers > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            futures = [pool.submit(_sweep_one, *job) for job in jobs]
            rows = [fut.result() for fut in tqdm(futures, desc="C sweep")]
    else:
        rows = [_sweep_one(*job) for job in tqdm(jobs, desc="C sweep")]

    report = SweepReport(rows)
    if out_dir:
        report.to_csv(os.path.join(out_dir, "sweep.csv"))
    return report


def run_model_refinement(sizes: Sequence[int], C: float, base: RunConfig,
                         out_dir: Optional[str] = None) -> ModelRefinementReport:
    """One optimization per model-grid size N (multiples of 32) at fixed C."""
    sizes = sorted(int(N) for N in sizes)
    if not sizes or any(N % 32 != 0 for N in sizes):
        raise GridError(f"Model-grid sizes must be positive multiples of 32, got {sizes}")
    boundary = base.boundary_spec().snapped(sizes[0])

    report = ModelRefinementReport()
    for N in tqdm(sizes, desc="Model refinement"):
        run_config = base.with_overrides({"problem": {"N": N}, "optimizer": {"C": float(C)}})
        run_dir = os.path.join(out_dir, f"N_{N}") if out_dir else None
        row = {"N": N, "status": "failed", "iterations": None, "phi_h": None, "e_apost": None, "qm": None,
               "design_path": None, "error": None}
        try:
            result = execute_run(run_config, run_dir, boundary)
            last = result.history.last
            row.update(status="ok", iterations=len(result.history) - 1, phi_h=last.phi_h, e_apost=last.e_apost,
                       qm=last.qm, design_path=result.design_path)
        except TopOptError as exc:
            logger.warning(f"Model refinement run N={N} failed: {exc}")
            row["error"] = str(exc)
        report.rows.append(row)

    if out_dir:
        report.to_csv(os.path.join(out_dir, "model_refinement.csv"))
    return report


def run_approximation_comparison(base: RunConfig, variants: Optional[Sequence[str]] = None,
                                 out_dir: Optional[str] = None, levels: int = 4) -> ComparisonReport:
    """
    Optimize the comparison variants on the base model grid and refine each result.

    Each variant is the base configuration with the variant's preset
    overrides applied. The refinement family is n = N, 2N, ..., 2^(levels-1) N.
    """
    variants = list(variants or COMPARISON_VARIANTS)
    unknown = [v for v in variants if v not in PRESETS]
    if unknown:
        raise ValueError(f"Unknown comparison variants: {unknown}")
    N = base.problem.N
    sizes = [N * 2 ** i for i in range(levels)]
    boundary = base.boundary_spec().snapped(N)

    report = ComparisonReport()
    for name in tqdm(variants, desc="Comparison"):
        run_dir = os.path.join(out_dir, name) if out_dir else None
        row = {"variant": name, "status": "failed", "phi_h1": None, "phi_h4": None, "phi_ratio": None,
               "e_apost_h1": None, "e_apost_h4": None, "qm": None, "design_path": None, "error": None}
        try:
            result = execute_run(base.with_overrides(PRESETS[name]), run_dir, boundary)
            study = run_refinement_study(result.design, sizes, boundary, base.problem.f, base.problem.p,
                                         base.discretization.linear_solver)
            first, last = study.rows[0], study.rows[-1]
            row.update(status="ok", phi_h1=first["phi"], phi_h4=last["phi"], phi_ratio=last["phi_ratio"],
                       e_apost_h1=first["e_apost"], e_apost_h4=last["e_apost"], qm=study.qm,
                       design_path=result.design_path)
            if run_dir:
                study.to_csv(os.path.join(run_dir, "refinement.csv"))
        except TopOptError as exc:
            logger.warning(f"Comparison variant {name} failed: {exc}")
            row["error"] = str(exc)
        report.rows.append(row)

    if out_dir:
        report.to_csv(os.path.join(out_dir, "comparison.csv"))
    return report


def replay_row(design_path: str, run_config: RunConfig, fine_grid: Optional[int] = None) -> Dict[str, float]:
    """
    Recompute a persisted design's coarse and fine compliance and estimator.

    Coarse means the run's own computational grid and element order; fine is
    the Q1 verification grid.
    """
    design = read_design(design_path)
    problem, disc = run_config.problem, run_config.discretization
    if design.N != problem.N:
        raise GridError(f"Design {design_path} has N={design.N}, configuration expects N={problem.N}")
    fine_grid = fine_grid or config.FINE_GRID
    boundary = run_config.boundary_spec().snapped(problem.N)
    coarse = evaluate_on_grid(design, problem.N * disc.r, boundary, problem.f, problem.p,
                              order=disc.order, solver=disc.linear_solver)
    fine = evaluate_on_grid(design, fine_grid, boundary, problem.f, problem.p, solver=disc.linear_solver)
    return {
        "phi_h": coarse["phi"],
        "e_apost": coarse["e_apost"],
        "phi_fine": fine["phi"],
        "e_apost_fine": fine["e_apost"],
        "qm": qm_value(design),
    }


def gradient_check_design(N: int, gamma: float, V: float, seed: int = 0) -> DesignField:
    """Random design in [0.2, 0.9] for gradient verification (away from the bounds)."""
    rng = np.random.default_rng(seed)
    return DesignField(rng.uniform(0.2, 0.9, size=(N, N)), gamma, V)
