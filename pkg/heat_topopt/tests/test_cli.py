import io
import json
import os
import tempfile
from contextlib import redirect_stderr, redirect_stdout
from unittest import TestCase

from heat_topopt.cli import main
from heat_topopt.design import DesignField
from heat_topopt.serialization import read_pgm, read_summary, write_design


def run_cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = main(["--log-level", "WARNING", *argv])
    return code, out.getvalue(), err.getvalue()


class CliTests(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.config_path = os.path.join(self.tmp.name, "run.json")
        with open(self.config_path, "w") as fh:
            json.dump({"problem": {"N": 8}, "discretization": {"linear_solver": "direct"},
                       "optimizer": {"max_iters": 2}}, fh)

    def _design(self, field, name="design.txt"):
        path = os.path.join(self.tmp.name, name)
        write_design(field, path)
        return path

    def test_qm_of_uniform_design(self):
        code, out, _ = run_cli("qm", self._design(DesignField.uniform(8)))
        self.assertEqual(code, 0)
        self.assertEqual(float(out.strip()), 0.0)

    def test_optimize_without_iterations(self):
        run_dir = os.path.join(self.tmp.name, "run")
        code, out, _ = run_cli("optimize", self.config_path, "--out", run_dir, "--max-iters", "0")
        self.assertEqual(code, 0)
        summary = read_summary(os.path.join(run_dir, "summary.json"))
        self.assertAlmostEqual(summary["volume"], 0.4, delta=1e-12)
        self.assertEqual(summary["config"]["optimizer"]["max_iters"], 0)
        self.assertIn("phi_h=", out)

    def test_refine_study_writes_report(self):
        out_dir = os.path.join(self.tmp.name, "study")
        design = self._design(DesignField.checkerboard(8, high=1.0, low=0.1))
        code, out, _ = run_cli("refine-study", design, "--config", self.config_path, "--grids", "8,16,32",
                               "--out", out_dir)
        self.assertEqual(code, 0)
        self.assertTrue(os.path.exists(os.path.join(out_dir, "report.csv")))
        self.assertIn("QM", out)

    def test_render(self):
        design = self._design(DesignField.checkerboard(8))
        image = os.path.join(self.tmp.name, "design.pgm")
        code, _, _ = run_cli("render", design, "--out", image, "--scale", "3", "--heatmap", "--config", self.config_path)
        self.assertEqual(code, 0)
        self.assertEqual(read_pgm(image).shape, (24, 24))
        self.assertTrue(os.path.exists(os.path.join(self.tmp.name, "design_estimator.pgm")))

    def test_check_gradients(self):
        code, out, _ = run_cli("check-gradients", self.config_path, "--size", "4")
        self.assertEqual(code, 0, out)
        self.assertEqual(out.count(" ok"), 3)

    def test_invalid_config_exits_nonzero(self):
        bad = os.path.join(self.tmp.name, "bad.json")
        with open(bad, "w") as fh:
            json.dump({"problem": {"p": 0.5}}, fh)
        code, _, err = run_cli("optimize", bad, "--out", os.path.join(self.tmp.name, "bad-run"))
        self.assertEqual(code, 1)
        self.assertIn("problem.p", err)

    def test_missing_design_exits_nonzero(self):
        code, _, err = run_cli("qm", os.path.join(self.tmp.name, "missing.txt"))
        self.assertEqual(code, 1)
        self.assertIn("not found", err)
