from unittest import TestCase

import numpy as np

from heat_topopt.exceptions import GridError
from heat_topopt.grid import (
    DIRICHLET,
    INTERIOR,
    NEUMANN,
    BoundarySpec,
    ModelGrid,
    SinkSegment,
    build_grid,
    cell_of_element,
    check_nested_family,
    element_cell_map,
    refine,
)


class SinkSnappingTests(TestCase):
    def test_default_sink_does_not_snap_at_64(self):
        with self.assertRaises(GridError) as ctx:
            build_grid(64)
        self.assertIn("left", str(ctx.exception))

    def test_snapped_default_sink(self):
        spec = BoundarySpec.default().snapped(64)
        lo, hi = spec.segments[0].interval()
        self.assertAlmostEqual(lo, 13 / 32, places=12)
        self.assertAlmostEqual(hi, 19 / 32, places=12)
        grid = build_grid(64, spec)
        self.assertEqual(len(grid.edges_with_tag(DIRICHLET)), 12)

    def test_snapping_at_32_matches_64(self):
        a = BoundarySpec.default().snapped(32).segments[0].interval()
        b = BoundarySpec.default().snapped(64).segments[0].interval()
        np.testing.assert_allclose(a, b)

    def test_collapse_rejected_unless_widened(self):
        with self.assertRaises(GridError):
            BoundarySpec.default().snapped(4)
        widened = BoundarySpec.default().snapped(4, widen=True)
        grid = build_grid(4, widened)
        self.assertEqual(len(grid.edges_with_tag(DIRICHLET)), 1)

    def test_invalid_segments(self):
        with self.assertRaises(GridError):
            SinkSegment("front", 0.5, 0.2)
        with self.assertRaises(GridError):
            SinkSegment("left", 0.95, 0.2)
        with self.assertRaises(GridError):
            SinkSegment("left", 0.5, 0.0)


class StructuredGridTests(TestCase):
    def setUp(self):
        self.n = 8
        self.grid = build_grid(self.n, BoundarySpec((SinkSegment("left", 0.5, 0.25),)))

    def test_counts(self):
        n = self.n
        self.assertEqual(self.grid.num_nodes, (n + 1) ** 2)
        self.assertEqual(self.grid.num_elements, n * n)
        self.assertEqual(self.grid.num_edges, 2 * n * (n + 1))
        self.assertEqual(len(self.grid.edges_with_tag(INTERIOR)), 2 * n * (n - 1))
        self.assertEqual(len(self.grid.edges_with_tag(NEUMANN)) + len(self.grid.edges_with_tag(DIRICHLET)), 4 * n)
        self.assertAlmostEqual(self.grid.boundary_length(DIRICHLET), 0.25)

    def test_element_edges_agree_with_edge_elements(self):
        grid = self.grid
        elements = np.arange(grid.num_elements)
        bottom, right, top, left = grid.element_edges.T
        np.testing.assert_array_equal(grid.edge_elements[bottom, 1], elements)
        np.testing.assert_array_equal(grid.edge_elements[top, 0], elements)
        np.testing.assert_array_equal(grid.edge_elements[left, 1], elements)
        np.testing.assert_array_equal(grid.edge_elements[right, 0], elements)
        self.assertTrue(np.all(grid.edge_horizontal[bottom]))
        self.assertFalse(np.any(grid.edge_horizontal[left]))

    def test_elements_counterclockwise(self):
        corners = self.grid.nodes[self.grid.elements[0]]
        h = self.grid.h
        np.testing.assert_allclose(corners, [[0, 0], [h, 0], [h, h], [0, h]])

    def test_dirichlet_edges_on_left_side(self):
        grid = self.grid
        mids = grid.nodes[grid.edge_nodes[grid.edges_with_tag(DIRICHLET)]].mean(axis=1)
        np.testing.assert_allclose(mids[:, 0], 0.0)
        self.assertTrue(np.all((mids[:, 1] > 0.375) & (mids[:, 1] < 0.625)))

    def test_refine_inherits_boundary(self):
        fine = refine(self.grid, 2)
        self.assertEqual(fine.n, 16)
        self.assertAlmostEqual(fine.boundary_length(DIRICHLET), self.grid.boundary_length(DIRICHLET))
        with self.assertRaises(GridError):
            refine(self.grid, 0)


class ModelGridTests(TestCase):
    def test_cell_of_element(self):
        model = ModelGrid(4, 2)
        self.assertEqual(model.n, 8)
        self.assertEqual(model.cell_of_element((3, 5)), (1, 2))
        self.assertEqual(cell_of_element(model, 3 * 8 + 5), 1 * 4 + 2)
        with self.assertRaises(GridError):
            model.cell_of_element(64)

    def test_element_cell_map(self):
        grid = build_grid(8, BoundarySpec((SinkSegment("left", 0.5, 0.25),)))
        cells = element_cell_map(grid, 4)
        self.assertEqual(np.bincount(cells).tolist(), [4] * 16)
        with self.assertRaises(GridError):
            element_cell_map(grid, 3)

    def test_nested_family(self):
        self.assertEqual(check_nested_family([64, 128, 256, 512], 64), [64, 128, 256, 512])
        with self.assertRaises(GridError):
            check_nested_family([64, 96])
        with self.assertRaises(GridError):
            check_nested_family([48, 96], 64)
        with self.assertRaises(GridError):
            check_nested_family([])
