"""End-to-end checks of the gridtop command line tool.

Usage: test_cli.py <path-to-gridtop> <data-dir>
"""

import json
import os
import subprocess
import sys
import tempfile
import unittest
from pathlib import Path

CLI = None
DATA = None


def run(*args, env=None):
    full_env = dict(os.environ)
    full_env.pop("GRIDTOP_SEED", None)
    full_env.update(env or {})
    return subprocess.run([CLI, *map(str, args)], capture_output=True, text=True, env=full_env)


class CliTest(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.grid = DATA / "fixtures" / "bus_13_3.json"

    def tearDown(self):
        self.tmp.cleanup()

    def test_simulate_then_learn(self):
        samples = self.dir / "s.csv"
        r = run("simulate", "--grid", self.grid, "-m", 5000, "--seed", 3, "-o", samples)
        self.assertEqual(r.returncode, 0, r.stderr)
        lines = samples.read_text().splitlines()
        self.assertEqual(len(lines), 5001)
        self.assertEqual(lines[0], ",".join(str(i) for i in range(1, 14)))

        r = run("--json", "learn", "--grid", self.grid, "--samples", samples, "--tau", 0.1)
        self.assertEqual(r.returncode, 0, r.stderr)
        out = json.loads(r.stdout)
        self.assertTrue(out["ok"])
        self.assertEqual(out["samples"], 5000)
        self.assertLessEqual(len(out["edges"]), 13)
        self.assertGreaterEqual(out["relative_error"], 0.0)
        self.assertLessEqual(out["relative_error"], 1.0)

        r = run("learn", "--grid", self.grid, "--samples", samples, "--tau", 0.1)
        self.assertEqual(r.returncode, 0, r.stderr)
        self.assertTrue(r.stdout.startswith("child,parent\n"))
        self.assertIn("# relative_error:", r.stdout)

    def test_analytic_learn_is_exact(self):
        for name in ("bus_13_3.json", "bus_29_1.json", "bus_83_11.json"):
            r = run("--json", "learn", "--grid", DATA / "fixtures" / name, "--analytic", "--tau", 1e-9)
            self.assertEqual(r.returncode, 0, r.stderr)
            self.assertEqual(json.loads(r.stdout)["relative_error"], 0.0, name)

    def test_seed_from_environment(self):
        a = run("simulate", "--grid", self.grid, "-m", 20, env={"GRIDTOP_SEED": "5"})
        b = run("simulate", "--grid", self.grid, "-m", 20, "--seed", 5)
        c = run("simulate", "--grid", self.grid, "-m", 20, "--seed", 6)
        self.assertEqual(a.stdout, b.stdout)
        self.assertNotEqual(a.stdout, c.stdout)

    def test_validate_warns_on_negative_moments(self):
        n = 13
        mu = [-0.01 if i % 2 else 0.01 for i in range(n)]

        def diag(v):
            return [[v if i == j else 0.0 for j in range(n)] for i in range(n)]

        model = self.dir / "mixed.json"
        model.write_text(json.dumps({"node_ids": list(range(1, n + 1)), "mu_p": mu, "mu_q": [0.3 * m for m in mu],
                                     "cov_p": diag(1e-6), "cov_q": diag(1e-7), "cov_pq": diag(0.0)}))
        r = run("validate", "--grid", self.grid, "--model", model)
        self.assertEqual(r.returncode, 0, r.stderr)
        self.assertRegex(r.stdout + r.stderr, r"warning: pair \(\d+, \d+\)")
        self.assertEqual(run("validate", "--grid", self.grid, "--model", model, "--strict").returncode, 1)
        self.assertEqual(run("validate", "--grid", self.grid, "--strict").returncode, 0)

    def test_experiment_outputs(self):
        plan = self.dir / "plan.json"
        plan.write_text(json.dumps({"name": "bus_13_3", "grid": {"file": str(self.grid)},
                                    "samples": [100, "inf"], "taus": [0.05, 1e-6], "trials": 4, "seed": 3}))
        out = self.dir / "out.csv"
        r = run("experiment", "--plan", plan, "-o", out, "--verbose", "--gnuplot")
        self.assertEqual(r.returncode, 0, r.stderr)
        rows = out.read_text().splitlines()
        self.assertEqual(rows[0], "grid,variant,m,tau,trials,mean_error,std_error,seconds,failed")
        self.assertEqual(len(rows), 5)
        self.assertTrue(rows[4].startswith("bus_13_3,lc,inf,1e-06,4,0,0,,0"), rows[4])
        trials = (self.dir / "out.csv.trials.csv").read_text().splitlines()
        self.assertEqual(trials[0], "m,tau,trial,seed,error,failure")
        self.assertEqual(len(trials), 17)
        self.assertIn("plot", (self.dir / "out.csv.gp").read_text())

        again = run("experiment", "--plan", plan, "-o", "-")
        self.assertEqual(again.stdout, out.read_text())
        other = run("experiment", "--plan", plan, "-o", "-", "--seed", 4)
        self.assertNotEqual(other.stdout, again.stdout)

    def test_usage_errors_exit_2(self):
        self.assertEqual(run("learn").returncode, 2)
        self.assertEqual(run("learn", "--grid", self.grid).returncode, 2)
        self.assertEqual(run("no-such-command").returncode, 2)
        self.assertEqual(run("learn", "--grid", self.grid, "--analytic", "--tau", 2).returncode, 2)

    def test_bad_grid_exits_1_with_line(self):
        bad = self.dir / "bad.json"
        bad.write_text('{"nodes": [\n {"id": 1, "kind": "load"},\n {"id": 1, "kind": "load"}\n], "edges": []}\n')
        r = run("validate", "--grid", bad)
        self.assertEqual(r.returncode, 1)
        self.assertIn("line", r.stderr)

        bad.write_text('{"nodes": [\n')
        r = run("validate", "--grid", bad)
        self.assertEqual(r.returncode, 1)


if __name__ == "__main__":
    CLI = sys.argv[1]
    DATA = Path(sys.argv[2]).resolve()
    unittest.main(argv=sys.argv[:1], verbosity=2)
