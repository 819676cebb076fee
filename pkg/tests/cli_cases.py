"""Small argument sets covering every CLI subcommand, shared by the CLI tests."""

import contextlib
import io

from jme.cli import main

CASES = {
    "calibrate": ["calibrate", "--epsilon", "8", "--delta", "1e-3"],
    "sensitivity": ["sensitivity", "--d", "2", "--nu", "1.5", "--oracle", "--grid", "9"],
    "simulate-moments": ["simulate-moments", "--method", "jme", "--n", "6", "--d", "2",
                         "--sigma", "0.5", "--trials", "40", "--factorization", "sqrt"],
    "error-curves": ["error-curves", "--n", "8", "--d", "2", "--sigmas", "0.5,1",
                     "--trials", "60"],
    "error-curves-covariance": ["error-curves", "--kind", "covariance", "--n", "10",
                                "--sigmas", "1", "--trials", "60"],
    "error-curves-adam": ["error-curves", "--kind", "adam", "--n", "10", "--d", "2",
                          "--sigmas", "1", "--trials", "60"],
    "pareto": ["pareto", "--d", "3", "--n", "10", "--lambda-points", "20",
               "--alphas", "0.25,0.5", "--taus", "0.5,2"],
    "gaussian-density": ["gaussian-density", "--d", "2", "--n", "12", "--runs", "6"],
    "dp-adam-toy": ["dp-adam-toy", "--task", "logreg", "--d", "3", "--steps", "30",
                    "--batch-size", "4", "--sigma", "1"],
}

# subcommands without a worker pool (no --threads flag)
SERIAL = {"calibrate", "sensitivity", "pareto"}

# subcommands that write CSV through --out
WRITES_CSV = [k for k in CASES if k != "calibrate"]


def run_cli(argv, out_path=None, threads=None):
    """Run ``main`` and return (exit code, output bytes, stderr text)."""
    argv = list(argv)
    if threads is not None and argv[0] not in SERIAL:
        argv += ["--threads", str(threads)]
    stdout, stderr = io.StringIO(), io.StringIO()
    if out_path is not None:
        argv += ["--out", str(out_path)]
    with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr):
        code = main(argv)
    data = out_path.read_bytes() if out_path is not None else stdout.getvalue().encode()
    return code, data, stderr.getvalue()
