import json
import os
import tempfile
from unittest import TestCase

import numpy as np
import pandas as pd

from heat_topopt.config import config
from heat_topopt.design import DesignField
from heat_topopt.estimator import estimate
from heat_topopt.exceptions import DesignError
from heat_topopt.fem import solve_state
from heat_topopt.grid import BoundarySpec, ModelGrid, build_grid
from heat_topopt.optimizer import HISTORY_COLUMNS, IterationRecord, OptimizationHistory, OptimizerConfig, optimize
from heat_topopt.run_config import RunConfig
from heat_topopt.serialization import (
    SUMMARY_SCHEMA_VERSION,
    RunRecorder,
    pixel_values,
    read_design,
    read_pgm,
    read_summary,
    write_design,
    write_design_image,
    write_heatmap,
)

GAMMA = 1e-3


class DesignFileTests(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def test_bit_exact_read_back(self):
        values = np.random.default_rng(0).uniform(GAMMA, 1.0, size=(6, 6))
        field = DesignField(values, GAMMA, 0.35)
        path = os.path.join(self.tmp.name, "design.txt")
        write_design(field, path)
        loaded = read_design(path)
        np.testing.assert_array_equal(loaded.values, field.values)
        self.assertEqual((loaded.gamma, loaded.volume_target), (GAMMA, 0.35))

    def test_first_line_is_bottom_row(self):
        values = np.full((2, 2), 0.5)
        values[0, :] = 1.0
        path = os.path.join(self.tmp.name, "design.txt")
        write_design(DesignField(values), path)
        with open(path) as fh:
            lines = fh.read().splitlines()
        self.assertEqual(lines[0].split()[0], "2")
        self.assertEqual(lines[1], "1 1")

    def test_malformed_files(self):
        path = os.path.join(self.tmp.name, "bad.txt")
        with open(path, "w") as fh:
            fh.write("3 0.001 0.4\n1 1 1\n1 1 1\n")
        with self.assertRaises(DesignError):
            read_design(path)
        with open(path, "w") as fh:
            fh.write("1 0.001 0.4\n2.0\n")
        with self.assertRaises(DesignError):
            read_design(path)
        with self.assertRaises(FileNotFoundError):
            read_design(os.path.join(self.tmp.name, "missing.txt"))


class ImageTests(TestCase):
    def test_pixel_levels(self):
        self.assertTrue(np.all(pixel_values(DesignField.uniform(4, 1.0, gamma=GAMMA)) == 255))
        self.assertTrue(np.all(pixel_values(DesignField.uniform(4, GAMMA, gamma=GAMMA)) == 0))
        mid = DesignField.uniform(4, (1 + GAMMA) / 2, gamma=GAMMA)
        self.assertTrue(np.all(pixel_values(mid) == 128))

    def test_row_zero_is_top(self):
        values = np.full((3, 3), GAMMA)
        values[2, :] = 1.0
        pixels = pixel_values(DesignField(values, GAMMA))
        self.assertEqual(pixels[0].tolist(), [255, 255, 255])
        self.assertEqual(pixels[2].tolist(), [0, 0, 0])

    def test_pgm_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            field = DesignField.checkerboard(4, gamma=GAMMA)
            path = os.path.join(tmp, "design.pgm")
            write_design_image(field, path, scale=2)
            image = read_pgm(path)
            self.assertEqual(image.shape, (8, 8))
            np.testing.assert_array_equal(image[::2, ::2], pixel_values(field))
            with open(path) as fh:
                self.assertEqual(fh.readline().strip(), "P2")

    def test_heatmap(self):
        boundary = BoundarySpec.default().snapped(8)
        design = DesignField.uniform(8)
        solution = solve_state(design, 4.0, build_grid(8, boundary), 1e-2, method="direct")
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "estimator.pgm")
            write_heatmap(estimate(design, 4.0, solution, 1e-2), path)
            image = read_pgm(path)
            self.assertEqual(image.shape, (8, 8))
            self.assertEqual(int(image.max()), 255)
            table = pd.read_csv(os.path.join(tmp, "estimator.csv"), index_col="row")
            self.assertEqual(table.shape, (8, 8))


class HistoryFileTests(TestCase):
    def test_floats_survive_csv_exactly(self):
        rng = np.random.default_rng(11)
        history = OptimizationHistory()
        for it in range(20):
            phi, e_apost = rng.uniform(1e-6, 1e-4), rng.uniform(1e-8, 1e-2)
            history.append(IterationRecord(it, phi, e_apost, phi + 1.2 * e_apost, rng.uniform(0.3, 0.4),
                                           rng.exponential(10.0), rng.uniform(0.0, 0.2), it % 7))
        history.append(IterationRecord(20, 0.0011052589888465904, 0.1 + 0.2, 1 / 3, 0.4, 0.0, 1e-300, 0))
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "history.csv")
            history.to_csv(path)
            self.assertEqual(OptimizationHistory.from_csv(path).records, history.records)


class RunRecorderTests(TestCase):
    def test_run_directory_contents(self):
        cfg = RunConfig().with_overrides({"problem": {"N": 8}, "optimizer": {"max_iters": 3},
                                          "outputs": {"snapshot_every": 2}})
        with tempfile.TemporaryDirectory() as tmp:
            recorder = RunRecorder.for_config(tmp, cfg)
            design, history = optimize(ModelGrid(8), cfg.boundary_spec().snapped(8), 1e-2,
                                       OptimizerConfig(max_iters=3, linear_solver="direct"), recorder)
            recorder.finish(design, history)

            for name in ("design.txt", "design.pgm", "history.csv", "summary.json"):
                self.assertTrue(os.path.exists(os.path.join(tmp, name)), name)
            self.assertTrue(os.path.exists(os.path.join(tmp, "snapshots", "iter_0000.pgm")))

            frame = pd.read_csv(os.path.join(tmp, "history.csv"))
            self.assertEqual(list(frame.columns), HISTORY_COLUMNS)
            self.assertEqual(len(frame), len(history))
            reloaded = OptimizationHistory.from_csv(os.path.join(tmp, "history.csv"))
            self.assertEqual(reloaded.records, history.records)

            summary = read_summary(os.path.join(tmp, "summary.json"))
            self.assertEqual(summary["schema_version"], SUMMARY_SCHEMA_VERSION)
            self.assertEqual(RunConfig.model_validate(summary["config"]), cfg)
            self.assertAlmostEqual(summary["volume"], design.volume)
            self.assertEqual(summary["linear_solver"]["cg_rtol"], config.CG_RTOL)

    def test_failure_summary(self):
        with tempfile.TemporaryDirectory() as tmp:
            recorder = RunRecorder(tmp, RunConfig())
            recorder.on_failure(OptimizationHistory(), DesignField.uniform(4))
            with open(os.path.join(tmp, "summary.json")) as fh:
                summary = json.load(fh)
            self.assertEqual(summary["status"], "failed")
            self.assertTrue(os.path.exists(os.path.join(tmp, "design_failed.txt")))
