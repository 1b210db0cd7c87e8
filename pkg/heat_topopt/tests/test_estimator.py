from unittest import TestCase

import numpy as np

from heat_topopt.design import DesignField
from heat_topopt.estimator import edge_jump, estimate
from heat_topopt.exceptions import GridError
from heat_topopt.fem import FemSolution, FemSpace, solve_state
from heat_topopt.grid import DIRICHLET, NEUMANN, BoundarySpec, SinkSegment, build_grid

GAMMA = 1e-3
WHOLE_LEFT = BoundarySpec((SinkSegment("left", 0.5, 1.0),))


def linear_solution(design, p, n, f=0.0):
    """Q1 solution u = x on an n x n grid, sink on the whole left side."""
    space = FemSpace.build(build_grid(n, WHOLE_LEFT), 1)
    return FemSolution(space.dof_coords[:, 0].copy(), space, design, p, f)


class ClosedFormTests(TestCase):
    def test_single_element_interior_term(self):
        design = DesignField(np.ones((1, 1)))
        grid = build_grid(1, WHOLE_LEFT)
        solution = solve_state(design, 1.0, grid, 1e-2, method="direct")
        breakdown = estimate(design, 1.0, solution, 1e-2)
        self.assertAlmostEqual(breakdown.interior_part, 1e-4, delta=1e-16)

    def test_two_element_jump(self):
        design = DesignField(np.array([[1.0, GAMMA], [1.0, GAMMA]]), gamma=GAMMA)
        solution = linear_solution(design, 1.0, 2)
        grid = solution.space.grid
        edge = int(np.flatnonzero((grid.edge_elements[:, 0] == 0) & (grid.edge_elements[:, 1] == 1))[0])

        np.testing.assert_allclose(edge_jump(edge, solution), 1 - GAMMA, rtol=1e-12)
        breakdown = estimate(design, 1.0, solution, 0.0)
        expected = (1 - GAMMA) ** 2 * 0.25 / (1 + GAMMA)
        self.assertAlmostEqual(breakdown.edge_terms[edge], expected, delta=1e-12)
        self.assertAlmostEqual(expected, 0.24925, delta=1e-5)

    def test_boundary_jump_is_outward_flux(self):
        design = DesignField(np.ones((2, 2)))
        solution = linear_solution(design, 1.0, 2)
        grid = solution.space.grid
        right = [e for e in grid.edges_with_tag(NEUMANN) if not grid.edge_horizontal[e] and grid.edge_elements[e, 1] < 0]
        self.assertEqual(len(right), 2)
        np.testing.assert_allclose(edge_jump(right[0], solution), -1.0, rtol=1e-12)
        bottom = [e for e in grid.edges_with_tag(NEUMANN) if grid.edge_horizontal[e] and grid.edge_elements[e, 0] < 0]
        np.testing.assert_allclose(edge_jump(bottom[0], solution), 0.0, atol=1e-14)

    def test_no_source_no_error(self):
        boundary = BoundarySpec.default().snapped(8)
        design = DesignField(np.random.default_rng(0).uniform(0.2, 1.0, size=(8, 8)))
        solution = solve_state(design, 4.0, build_grid(16, boundary), 0.0, method="direct")
        breakdown = estimate(design, 4.0, solution, 0.0)
        self.assertEqual(breakdown.total, 0.0)

    def test_sink_edges_have_no_jump(self):
        boundary = BoundarySpec.default().snapped(8)
        solution = solve_state(DesignField.uniform(8), 4.0, build_grid(8, boundary), 1e-2, method="direct")
        sink_edge = int(solution.space.grid.edges_with_tag(DIRICHLET)[0])
        with self.assertRaises(GridError):
            edge_jump(sink_edge, solution)
        breakdown = estimate(solution.design, 4.0, solution, 1e-2)
        self.assertEqual(breakdown.edge_terms[sink_edge], 0.0)


class EstimatorPropertiesTests(TestCase):
    def setUp(self):
        self.boundary = BoundarySpec.default().snapped(8)

    def test_totals_are_consistent(self):
        design = DesignField(np.random.default_rng(1).uniform(0.2, 1.0, size=(8, 8)))
        solution = solve_state(design, 4.0, build_grid(16, self.boundary), 1e-2, method="direct")
        breakdown = estimate(design, 4.0, solution, 1e-2)
        self.assertAlmostEqual(breakdown.eta_sq.sum() / breakdown.total, 1.0, delta=1e-12)
        self.assertAlmostEqual(breakdown.interior_part + breakdown.jump_part, breakdown.total, delta=1e-12 * breakdown.total)
        self.assertLess(breakdown.total_single_count, breakdown.total)
        self.assertGreater(breakdown.total_single_count, 0.5 * breakdown.total)
        self.assertEqual(breakdown.as_grid().shape, (16, 16))

    def test_decays_on_uniform_design(self):
        design = DesignField.uniform(8)
        totals = []
        for n in (16, 32, 64):
            solution = solve_state(design, 4.0, build_grid(n, self.boundary), 1e-2, method="direct")
            totals.append(estimate(design, 4.0, solution, 1e-2).total)
        self.assertGreater(totals[0], totals[1])
        self.assertGreater(totals[1], totals[2])

    def test_biquadratic_solutions_are_supported(self):
        design = DesignField.uniform(8)
        q1 = solve_state(design, 4.0, build_grid(8, self.boundary), 1e-2, order=1, method="direct")
        q2 = solve_state(design, 4.0, build_grid(8, self.boundary), 1e-2, order=2, method="direct")
        b1, b2 = estimate(design, 4.0, q1, 1e-2), estimate(design, 4.0, q2, 1e-2)
        self.assertGreater(b2.total, 0.0)
        self.assertEqual(b2.eta_sq.shape, b1.eta_sq.shape)
        self.assertTrue(np.isfinite(b2.total))

    def test_mismatched_design_rejected(self):
        solution = solve_state(DesignField.uniform(8), 4.0, build_grid(8, self.boundary), 1e-2, method="direct")
        with self.assertRaises(GridError):
            estimate(DesignField.uniform(3), 4.0, solution, 1e-2)

    def test_source_scaling(self):
        design = DesignField(np.random.default_rng(2).uniform(0.2, 1.0, size=(8, 8)))
        grid = build_grid(16, self.boundary)
        alpha = 10.0
        base = solve_state(design, 4.0, grid, 1e-2, method="direct")
        scaled = solve_state(design, 4.0, grid, alpha * 1e-2, method="direct")
        np.testing.assert_allclose(scaled.u, alpha * base.u, rtol=1e-10, atol=1e-14 * np.max(scaled.u))
        ratio = estimate(design, 4.0, scaled, alpha * 1e-2).total / estimate(design, 4.0, base, 1e-2).total
        self.assertAlmostEqual(ratio, alpha ** 2, delta=1e-8 * alpha ** 2)
