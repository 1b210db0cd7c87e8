"""
Heat-conduction topology optimization with an error-corrected objective.

Designs are piecewise-constant conductivities on a model grid; the
temperature is computed with Q1/Q2 finite elements, and the optimizer
minimizes the discrete compliance plus C times a residual a posteriori
error estimate, which removes checkerboards without a filter.
"""

__version__ = "1.0.0"

from .config import config
from .design import DesignField, qm_local, qm_value
from .estimator import ErrorBreakdown, edge_jump, estimate
from .exceptions import (
    ConfigError,
    DesignError,
    GridError,
    OptimizationError,
    SolverError,
    TopOptError,
)
from .experiments import (
    replay_row,
    run_approximation_comparison,
    run_c_sweep,
    run_model_refinement,
    run_refinement_study,
)
from .fem import FemSolution, FemSpace, assemble, compliance, element_stiffness, solve, solve_state
from .grid import BoundarySpec, ModelGrid, SinkSegment, StructuredGrid, build_grid, cell_of_element
from .optimizer import OptimizationHistory, OptimizerConfig, TopologyOptimizer, mma_step, optimize, sensitivity_filter
from .run_config import PRESETS, RunConfig, parse_config
from .sensitivity import (
    GradientField,
    combined_gradient,
    compliance_gradient,
    estimator_gradient,
    finite_difference_oracle,
)
from .serialization import read_design, write_design, write_design_image

__all__ = [
    'config',
    'BoundarySpec',
    'SinkSegment',
    'StructuredGrid',
    'ModelGrid',
    'build_grid',
    'cell_of_element',
    'DesignField',
    'qm_local',
    'qm_value',
    'FemSpace',
    'FemSolution',
    'assemble',
    'solve',
    'solve_state',
    'compliance',
    'element_stiffness',
    'ErrorBreakdown',
    'estimate',
    'edge_jump',
    'GradientField',
    'compliance_gradient',
    'estimator_gradient',
    'combined_gradient',
    'finite_difference_oracle',
    'OptimizerConfig',
    'OptimizationHistory',
    'TopologyOptimizer',
    'mma_step',
    'optimize',
    'sensitivity_filter',
    'RunConfig',
    'PRESETS',
    'parse_config',
    'read_design',
    'write_design',
    'write_design_image',
    'run_refinement_study',
    'run_c_sweep',
    'run_model_refinement',
    'run_approximation_comparison',
    'replay_row',
    'TopOptError',
    'GridError',
    'DesignError',
    'ConfigError',
    'SolverError',
    'OptimizationError',
]
