"""
Command-line entry point: python -m heat_topopt <subcommand> ...

Exit status 0 on success, 1 on invalid input or a failed run, 2 when a
gradient check exceeds its tolerance.
"""

from datetime import datetime
from typing import List, Optional
import argparse
import logging
import os
import sys

from .config import config
from .design import qm_value
from .estimator import estimate
from .exceptions import TopOptError
from .experiments import (
    execute_run,
    gradient_check_design,
    run_approximation_comparison,
    run_c_sweep,
    run_model_refinement,
    run_refinement_study,
)
from .fem import compliance, solve_state
from .grid import build_grid
from .run_config import COMPARISON_VARIANTS, PRESETS, RunConfig, load_config
from .sensitivity import combined_gradient, compliance_gradient, estimator_gradient, finite_difference_oracle, relative_error
from .serialization import read_design, write_design_image, write_heatmap

logger = logging.getLogger(__name__)

GRADIENT_TOLERANCES = {"compliance": 1e-4, "estimator": 1e-3, "combined": 1e-3}


def _floats(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _config(args) -> RunConfig:
    return load_config(getattr(args, "config", None), getattr(args, "preset", None))


def _run_dir(args, cfg: RunConfig, name: str) -> str:
    if getattr(args, "out", None):
        return args.out
    root = cfg.outputs.directory or config.OUTPUT_DIR
    return os.path.join(root, f"{name}-{datetime.now():%Y%m%d-%H%M%S}")


def cmd_optimize(args) -> int:
    cfg = _config(args)
    if args.max_iters is not None:
        cfg = cfg.with_overrides({"optimizer": {"max_iters": args.max_iters}})
    run_dir = _run_dir(args, cfg, "optimize")
    result = execute_run(cfg, run_dir)
    last = result.history.last
    print(f"phi_h={last.phi_h:.6e} e_apost={last.e_apost:.6e} phi_c={last.phi_c:.6e} "
          f"volume={last.volume:.6f} qm={last.qm:.6e} iterations={len(result.history) - 1}")
    print(f"Artifacts written to {run_dir}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    run_dir = _run_dir(args, cfg, "sweep-c")
    report = run_c_sweep(_floats(args.values), cfg, run_dir, args.fine_grid, args.workers)
    print(report.to_frame().to_string(index=False))
    return 0 if all(row["status"] == "ok" for row in report.rows) else 1


def cmd_refine_study(args) -> int:
    cfg = _config(args)
    design = read_design(args.design)
    boundary = cfg.boundary_spec().snapped(design.N)
    report = run_refinement_study(design, _ints(args.grids), boundary, cfg.problem.f, cfg.problem.p,
                                  cfg.discretization.linear_solver)
    frame = report.to_frame()
    print(frame.to_string(index=False))
    print(f"QM = {report.qm:.6e}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        report.to_csv(os.path.join(args.out, "report.csv"))
    return 0


def cmd_model_refine(args) -> int:
    cfg = _config(args)
    C = cfg.optimizer.C if args.C is None else args.C
    report = run_model_refinement(_ints(args.sizes), C, cfg, _run_dir(args, cfg, "model-refine"))
    print(report.to_frame().to_string(index=False))
    return 0 if all(row["status"] == "ok" for row in report.rows) else 1


def cmd_compare(args) -> int:
    cfg = _config(args)
    variants = args.variants.split(",") if args.variants else None
    report = run_approximation_comparison(cfg, variants, _run_dir(args, cfg, "compare"), args.levels)
    print(report.to_frame().to_string(index=False))
    return 0 if all(row["status"] == "ok" for row in report.rows) else 1


def cmd_qm(args) -> int:
    print(f"{qm_value(read_design(args.design), printed=args.printed):.17g}")
    return 0


def cmd_check_gradients(args) -> int:
    cfg = _config(args)
    problem = cfg.problem
    N, p, f = args.size, problem.p, problem.f
    C = cfg.optimizer.C or 1.0
    design = gradient_check_design(N, problem.gamma, problem.V, args.seed)
    grid = build_grid(N, cfg.boundary_spec().snapped(N, widen=True))

    def state(d):
        return solve_state(d, p, grid, f, method="direct")

    solution = state(design)
    checks = {
        "compliance": (compliance_gradient(design, p, solution), lambda d: compliance(state(d))),
        "estimator": (estimator_gradient(design, p, solution, f), lambda d: estimate(d, p, state(d), f).total),
        "combined": (combined_gradient(design, p, solution, f, C),
                     lambda d: compliance(state(d)) + C * estimate(d, p, state(d), f).total),
    }
    failed = False
    for name, (adjoint, objective) in checks.items():
        reference = finite_difference_oracle(objective, design)
        err = relative_error(adjoint, reference)
        ok = err <= GRADIENT_TOLERANCES[name]
        failed |= not ok
        print(f"{name:<11s} max relative error {err:.3e} (tolerance {GRADIENT_TOLERANCES[name]:.0e}) "
              f"{'ok' if ok else 'FAILED'}")
    return 2 if failed else 0


def cmd_render(args) -> int:
    design = read_design(args.design)
    out = args.out or os.path.splitext(args.design)[0] + ".pgm"
    write_design_image(design, out, args.scale)
    print(f"Design image written to {out}")
    if args.heatmap:
        cfg = _config(args)
        problem = cfg.problem
        n = design.N * cfg.discretization.r
        grid = build_grid(n, cfg.boundary_spec().snapped(design.N))
        solution = solve_state(design, problem.p, grid, problem.f, order=cfg.discretization.order,
                               method=cfg.discretization.linear_solver)
        heat_path = os.path.splitext(out)[0] + "_estimator.pgm"
        write_heatmap(estimate(design, problem.p, solution, problem.f), heat_path, args.scale)
        print(f"Estimator heatmap written to {heat_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heat_topopt",
                                     description="Heat-conduction topology optimization with error-corrected compliance")
    parser.add_argument("--log-level", default=None, help=f"Logging level (default: {config.LOG_LEVEL})")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p: argparse.ArgumentParser, positional: bool = True):
        if positional:
            p.add_argument("config", nargs="?", default=None, help="JSON run configuration (default: built-in defaults)")
        else:
            p.add_argument("--config", default=None, help="JSON run configuration")
        p.add_argument("--preset", choices=sorted(PRESETS), default=None, help="Start from a named preset")

    p = sub.add_parser("optimize", help="Run one optimization")
    with_config(p)
    p.add_argument("--out", help="Run directory (default: timestamped under the output directory)")
    p.add_argument("--max-iters", type=int, default=None, help="Override optimizer.max_iters")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("sweep-c", help="Optimize once per correction parameter C")
    with_config(p)
    p.add_argument("--values", required=True, help="Comma-separated C values, e.g. 0,0.1,0.6,1.0")
    p.add_argument("--fine-grid", type=int, default=None, help=f"Verification grid (default: {config.FINE_GRID})")
    p.add_argument("--workers", type=int, default=1, help="Parallel runs (default: 1)")
    p.add_argument("--out", help="Output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("refine-study", help="Solve a fixed design on a nested grid family")
    p.add_argument("design", help="Design file")
    with_config(p, positional=False)
    p.add_argument("--grids", default="64,128,256,512", help="Comma-separated grid sizes (default: 64,128,256,512)")
    p.add_argument("--out", help="Directory for report.csv")
    p.set_defaults(func=cmd_refine_study)

    p = sub.add_parser("model-refine", help="Optimize on a family of model grids")
    with_config(p)
    p.add_argument("--sizes", required=True, help="Comma-separated model grid sizes (multiples of 32)")
    p.add_argument("--C", type=float, default=None, help="Correction parameter (default: from the configuration)")
    p.add_argument("--out", help="Output directory")
    p.set_defaults(func=cmd_model_refine)

    p = sub.add_parser("compare", help="Compare checkerboard, refined, biquadratic, filtered and corrected designs")
    with_config(p)
    p.add_argument("--variants", default=None, help=f"Comma-separated subset of {','.join(COMPARISON_VARIANTS)}")
    p.add_argument("--levels", type=int, default=4, help="Grids in each refinement study (default: 4)")
    p.add_argument("--out", help="Output directory")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("qm", help="Print the quasi-monotonicity measure of a design")
    p.add_argument("design", help="Design file")
    p.add_argument("--printed", action="store_true", help="Use the uncorrected first factor m(a, b, c)")
    p.set_defaults(func=cmd_qm)

    p = sub.add_parser("check-gradients", help="Compare adjoint gradients with finite differences")
    with_config(p)
    p.add_argument("--size", type=int, default=4, help="Model grid size of the check (default: 4)")
    p.add_argument("--seed", type=int, default=0, help="Random design seed (default: 0)")
    p.set_defaults(func=cmd_check_gradients)

    p = sub.add_parser("render", help="Export a design (and optionally its estimator) as PGM")
    p.add_argument("design", help="Design file")
    with_config(p, positional=False)
    p.add_argument("--out", help="Image path (default: next to the design)")
    p.add_argument("--scale", type=int, default=1, help="Pixels per cell (default: 1)")
    p.add_argument("--heatmap", action="store_true", help="Also render the estimator contributions")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=(args.log_level or config.LOG_LEVEL).upper(),
                        format="%(asctime)s %(name)s %(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (TopOptError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
