from dataclasses import replace
from unittest import TestCase, mock

import numpy as np

from heat_topopt.config import config
from heat_topopt.design import DesignField
from heat_topopt.exceptions import GridError, SolverError
from heat_topopt.fem import (
    FemSpace,
    assemble,
    compliance,
    element_stiffness,
    evaluate,
    prolongate,
    solve,
    solve_state,
)
from heat_topopt.grid import BoundarySpec, SinkSegment, build_grid

F = 1e-2
P = 4.0


def random_design(N, seed, low=0.2, high=1.0):
    rng = np.random.default_rng(seed)
    return DesignField(rng.uniform(low, high, size=(N, N)))


class ElementTests(TestCase):
    def test_q1_stiffness(self):
        expected = np.array([
            [4, -1, -2, -1],
            [-1, 4, -1, -2],
            [-2, -1, 4, -1],
            [-1, -2, -1, 4],
        ]) / 6.0
        np.testing.assert_allclose(element_stiffness(1, 1.0), expected, atol=1e-14)
        np.testing.assert_allclose(element_stiffness(1, 0.5), 0.5 * expected, atol=1e-14)

    def test_q2_stiffness_annihilates_constants(self):
        K = element_stiffness(2, 1.0)
        self.assertEqual(K.shape, (9, 9))
        np.testing.assert_allclose(K.sum(axis=1), 0.0, atol=1e-13)
        np.testing.assert_allclose(K, K.T)
        self.assertGreater(np.linalg.eigvalsh(K)[1], 0.0)


class StateSolveTests(TestCase):
    def setUp(self):
        self.boundary = BoundarySpec.default().snapped(8)

    def test_galerkin_identity(self):
        design = random_design(8, 0)
        for order, n in ((1, 16), (2, 8)):
            grid = build_grid(n, self.boundary)
            solution = solve_state(design, P, grid, F, order=order, method="direct")
            phi = compliance(solution)
            energy = solution.system.energy(solution.u)
            self.assertLessEqual(abs(phi - energy) / phi, 1e-9)

    def test_sink_dofs_are_zero(self):
        grid = build_grid(16, self.boundary)
        solution = solve_state(DesignField.uniform(8), P, grid, F, method="direct")
        np.testing.assert_array_equal(solution.u[solution.space.dirichlet_dofs], 0.0)
        self.assertTrue(np.all(solution.u >= -1e-15))

    def test_cg_matches_direct(self):
        design = random_design(8, 1, low=0.3)
        grid = build_grid(16, self.boundary)
        direct = solve_state(design, P, grid, F, method="direct")
        iterative = solve_state(design, P, grid, F, method="cg")
        self.assertGreater(iterative.iterations, 0)
        self.assertAlmostEqual(compliance(iterative) / compliance(direct), 1.0, delta=1e-8)
        self.assertLessEqual(np.max(np.abs(iterative.u - direct.u)), 1e-5 * np.max(direct.u))

    def test_cg_failure_raises(self):
        grid = build_grid(16, self.boundary)
        with mock.patch.object(config, "CG_RTOL", 1e-30), mock.patch.object(config, "CG_MAXITER_FACTOR", 1):
            with self.assertRaises(SolverError) as ctx:
                solve_state(random_design(8, 2), P, grid, F, method="cg")
        self.assertGreater(ctx.exception.residual, 0.0)

    def test_biquadratic_compliance_not_below_bilinear(self):
        design = random_design(8, 3)
        grid = build_grid(8, self.boundary)
        q1 = compliance(solve_state(design, P, grid, F, order=1, method="direct"))
        q2 = compliance(solve_state(design, P, grid, F, order=2, method="direct"))
        self.assertGreaterEqual(q2, q1 * (1 - 1e-12))

    def test_evaluate_at_dofs(self):
        grid = build_grid(8, self.boundary)
        solution = solve_state(random_design(8, 4), P, grid, F, order=2, method="direct")
        np.testing.assert_allclose(evaluate(solution, solution.space.dof_coords), solution.u, atol=1e-15)

    def test_assembly_errors(self):
        space = FemSpace.build(build_grid(8, self.boundary))
        with self.assertRaises(GridError):
            assemble(DesignField.uniform(3), P, space, F)
        with self.assertRaises(ValueError):
            assemble(DesignField.uniform(8), 0.5, space, F)
        with self.assertRaises(ValueError):
            solve(assemble(DesignField.uniform(8), P, space, F), method="lu")


class NestedSpaceTests(TestCase):
    """Exact identities between solutions on nested grids."""

    def test_compliance_gap_is_energy_of_difference(self):
        boundary = BoundarySpec.default().snapped(16)
        coarse_grid, fine_grid = build_grid(16, boundary), build_grid(32, boundary)
        for seed in range(10):
            design = random_design(16, seed)
            coarse = solve_state(design, P, coarse_grid, F, method="direct")
            fine = solve_state(design, P, fine_grid, F, method="direct")
            diff = fine.u - prolongate(coarse, fine.space)
            gap = compliance(fine) - compliance(coarse)
            energy = fine.system.energy(diff)
            self.assertAlmostEqual(gap / energy, 1.0, delta=1e-8)

    def test_compliance_increases_under_refinement(self):
        boundary = BoundarySpec.default().snapped(16)
        design = random_design(16, 42)
        phis = [compliance(solve_state(design, P, build_grid(n, boundary), F, method="direct")) for n in (16, 32, 64)]
        self.assertLessEqual(phis[0], phis[1])
        self.assertLessEqual(phis[1], phis[2])

    def test_prolongation_requires_nesting(self):
        boundary = BoundarySpec.default().snapped(16)
        coarse = solve_state(DesignField.uniform(16), P, build_grid(32, boundary), F, method="direct")
        with self.assertRaises(GridError):
            prolongate(coarse, FemSpace.build(build_grid(48, boundary)))


class DenseOracleTests(TestCase):
    def test_two_by_two_matches_dense_solve(self):
        grid = build_grid(2, BoundarySpec((SinkSegment("left", 0.5, 1.0),)))
        solution = solve_state(DesignField(np.ones((2, 2))), 1.0, grid, 1.0, method="direct")

        K0 = np.array([
            [4, -1, -2, -1],
            [-1, 4, -1, -2],
            [-2, -1, 4, -1],
            [-1, -2, -1, 4],
        ]) / 6.0
        K, b = np.zeros((9, 9)), np.zeros(9)
        for ey in range(2):
            for ex in range(2):
                nodes = [ey * 3 + ex, ey * 3 + ex + 1, (ey + 1) * 3 + ex + 1, (ey + 1) * 3 + ex]
                K[np.ix_(nodes, nodes)] += K0
                b[nodes] += 0.25 * 0.25
        free = [1, 2, 4, 5, 7, 8]
        u_free = np.linalg.solve(K[np.ix_(free, free)], b[free])

        np.testing.assert_array_equal(solution.space.free_dofs, free)
        np.testing.assert_allclose(solution.u[free], u_free, rtol=1e-12, atol=1e-15)
        np.testing.assert_array_equal(solution.u[[0, 3, 6]], 0.0)


class ScalingTests(TestCase):
    def setUp(self):
        self.space = FemSpace.build(build_grid(8, BoundarySpec.default().snapped(8)))

    def test_uniform_conductivity_scales_operator(self):
        c0 = 0.5
        unit = assemble(DesignField(np.ones((8, 8))), P, self.space, F)
        scaled = assemble(DesignField(np.full((8, 8), c0)), P, self.space, F)
        np.testing.assert_allclose(scaled.A.toarray(), c0 ** 4 * unit.A.toarray(), rtol=0, atol=1e-15)
        np.testing.assert_array_equal(scaled.b, unit.b)

    def test_scaled_system_has_same_solution(self):
        system = assemble(random_design(8, 5), P, self.space, F)
        direct = solve(system, method="direct").u
        iterative = solve(replace(system, _factor=None, _precond=None), method="cg").u
        for alpha in (1e-3, 10.0):
            scaled = replace(system, A=alpha * system.A, b=alpha * system.b, _factor=None, _precond=None)
            np.testing.assert_allclose(solve(scaled, method="direct").u, direct, rtol=1e-10, atol=1e-14 * np.max(direct))
            np.testing.assert_allclose(solve(scaled, method="cg").u, iterative, rtol=0, atol=1e-5 * np.max(direct))

    def test_no_source_gives_zero_state(self):
        solution = solve(assemble(random_design(8, 6), P, self.space, 0.0))
        np.testing.assert_array_equal(solution.u, 0.0)
