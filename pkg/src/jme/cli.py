"""Command-line experiments: ``jme <subcommand> [flags]``.

Every subcommand writes CSV (to ``--out`` or stdout) whose contents depend only
on the flags, including ``--seed``; the number of worker threads does not
change a single byte. Exit codes: 0 success, 1 runtime or numerical error,
2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import analysis
from .applications import adam, density
from .calibration import PrivacyParams, calibrate_sigma, classical_sigma
from .mechanisms import DEFAULT_CHUNK, MechanismConfig, simulate
from .methods import DEFAULT_ALPHA, DEFAULT_TAU, Method
from .sensitivity import brute_force_rd, brute_force_rd_diag, c_d, r_d
from .workload import Factorization, WorkloadKind, build_noise_shaping, build_workload

THREADS_ENV = "JME_THREADS"


# --- output -----------------------------------------------------------------------


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.10g}"
    return str(value)


def emit_csv(rows, header, path=None) -> None:
    """Write ``header`` and ``rows``; numbers get 10 significant digits, lines end in '\\n'."""
    out = sys.stdout if path in (None, "-") else open(path, "w", newline="", encoding="ascii")
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    finally:
        if out is not sys.stdout:
            out.close()


def worker_count(flag: int | None) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise SystemExit(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return 1


def ordered_map(fn, items, workers: int) -> list:
    """``[fn(x) for x in items]`` on a thread pool; results keep input order."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --- shared option groups -----------------------------------------------------------


def _workload(text):
    try:
        return WorkloadKind.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _factorization(text):
    try:
        return Factorization.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _add_privacy(p, *, sigma_help="Gaussian-mechanism noise multiplier"):
    g = p.add_argument_group("privacy")
    g.add_argument("--sigma", type=float, help=sigma_help)
    g.add_argument("--epsilon", type=float)
    g.add_argument("--delta", type=float)
    g.add_argument("--zeta", type=float, default=1.0, help="row norm bound (default 1)")


def _privacy(args, parser) -> PrivacyParams:
    if args.sigma is not None:
        if args.epsilon is not None or args.delta is not None:
            parser.error("give either --sigma or --epsilon/--delta, not both")
        return PrivacyParams(args.sigma, args.zeta)
    if args.epsilon is None or args.delta is None:
        parser.error("need --sigma or both --epsilon and --delta")
    return PrivacyParams.from_budget(args.epsilon, args.delta, args.zeta)


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=_positive_int, default=None,
                   help=f"worker threads (default ${THREADS_ENV} or 1)")
    p.add_argument("--out", default="-", help="CSV path (default stdout)")


def _add_matrices(p):
    p.add_argument("--workload", type=_workload, default=WorkloadKind.prefix(),
                   help="prefix | average | exp:<beta> | window:<k>")
    p.add_argument("--factorization", type=_factorization, default=Factorization.IDENTITY,
                   help="identity | sqrt")
    p.add_argument("--n", type=_positive_int, default=50)
    p.add_argument("--d", type=_positive_int, default=1)
    p.add_argument("--form", choices=("full", "diag"), default="full",
                   help="second moment as full matrix or diagonal")


def unit_data(kind: str, n: int, d: int, zeta: float, seed: int) -> np.ndarray:
    """Deterministic test streams with rows of norm ``zeta``.

    ``identical``: every row ``zeta (1, ..., 1) / sqrt(d)`` (attains the PP worst case);
    ``alternating``: ``+-zeta e_1``; ``random``: uniform directions.
    """
    if kind == "identical":
        return np.tile(np.full(d, zeta / math.sqrt(d)), (n, 1))
    if kind == "alternating":
        X = np.zeros((n, d))
        X[:, 0] = zeta * np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
        return X
    if kind == "random":
        gen = density.data_generator(seed, 0)
        X = gen.standard_normal((n, d))
        return zeta * X / np.linalg.norm(X, axis=1, keepdims=True)
    raise ValueError(f"unknown data kind {kind!r}")


def _method_kwargs(args, method: Method) -> dict:
    kw = {"alpha": args.alpha, "tau": args.tau}
    if method is Method.LAMBDA_JME:
        if args.lam is None:
            raise ValueError("lambda-jme needs --lambda")
        kw["lam"] = args.lam
    return kw


def run_trials(config: MechanismConfig, X, trials: int, workers: int):
    """Monte-Carlo errors with trials split into fixed chunks, gathered in order."""
    starts = list(range(0, trials, DEFAULT_CHUNK))

    def job(start):
        return simulate(config, X, min(DEFAULT_CHUNK, trials - start), first_trial=start)

    parts = ordered_map(job, starts, workers)
    return (np.concatenate([p.err_first for p in parts]),
            np.concatenate([p.err_second for p in parts]))


# --- subcommands -------------------------------------------------------------------


def cmd_calibrate(args, parser) -> int:
    sigma = calibrate_sigma(args.epsilon, args.delta)
    print(f"{sigma:.6g}")
    if args.classical:
        print(f"classical {classical_sigma(args.epsilon, args.delta):.6g}")
    return 0


def cmd_sensitivity(args, parser) -> int:
    rows = [["d", "nu", "c_d", "r_d"] + (["oracle"] if args.oracle else [])]
    value = r_d(args.nu, args.d)
    row = [args.d, args.nu, c_d(args.d), value]
    if args.oracle:
        if args.diag:
            row.append(brute_force_rd_diag(args.nu, args.d, args.grid))
        else:
            row.append(brute_force_rd(args.nu, args.d, args.grid))
    rows.append(row)
    emit_csv(rows[1:], rows[0], args.out)
    return 0


def cmd_simulate(args, parser) -> int:
    privacy = _privacy(args, parser)
    method = Method.parse(args.method)
    n, d = args.n, args.d
    A = build_workload(args.workload, n)
    C = build_noise_shaping(args.factorization, args.workload, n)
    cfg = MechanismConfig(method, A, A, C, C, privacy, d, form=args.form, seed=args.seed,
                          **_method_kwargs(args, method))
    X = unit_data(args.data, n, d, privacy.zeta, args.seed)
    e1, e2 = run_trials(cfg, X, args.trials, worker_count(args.threads))
    rows = ([k, t + 1, e1[k, t], e2[k, t]] for k in range(args.trials) for t in range(n))
    emit_csv(rows, ["trial", "t", "err_first_sq", "err_second_sq"], args.out)
    return 0


def _moment_curves(args, sigma, methods, workers):
    n, d = args.n, args.d
    A = build_workload(args.workload, n)
    C = build_noise_shaping(args.factorization, args.workload, n)
    X = unit_data(args.data, n, d, args.zeta, args.seed)
    rows = []
    for name in methods:
        method = Method.parse(name)
        kw = _method_kwargs(args, method)
        rep = analysis.error_formulas(method, A, C, A, C, args.zeta, sigma, d, form=args.form, **kw)
        target = rep.first if args.moment == "first" else rep.second
        mean = se = math.nan
        if args.trials > 0:
            cfg = MechanismConfig(method, A, A, C, C, PrivacyParams(sigma, args.zeta), d,
                                  form=args.form, seed=args.seed, **kw)
            e1, e2 = run_trials(cfg, X, args.trials, workers)
            mean, se = analysis.mc_summary((e1 if args.moment == "first" else e2).sum(axis=1))
        rows.append((method.value, target, mean, se))
    return rows


def _covariance_curves(args, sigma, methods, workers):
    n, d = args.n, args.d
    X = unit_data(args.data, n, d, 1.0, args.seed)
    _, cov_true = density.running_covariance(X)
    rows = []
    for name in methods:
        target = density.covariance_error_formulas(n, d, sigma, name)
        mean = se = math.nan
        if args.trials > 0:
            starts = list(range(0, args.trials, DEFAULT_CHUNK))

            def job(start, name=name):
                m = min(DEFAULT_CHUNK, args.trials - start)
                _, cov = density.raw_covariances(name, X, sigma, args.seed, start, m)
                return np.sum((cov - cov_true[None]) ** 2, axis=(1, 2, 3))

            errs = np.concatenate(ordered_map(job, starts, workers))
            mean, se = analysis.mc_summary(errs)
        rows.append((name, target, mean, se))
    return rows


def _adam_curves(args, sigma, methods, workers):
    n, d = args.n, args.d
    A2 = adam.ema_workload(0.999 if args.beta is None else args.beta, n)
    X = unit_data(args.data, n, d, 1.0, args.seed)
    C = build_noise_shaping(Factorization.IDENTITY, WorkloadKind.prefix(), n)
    rows = []
    for name in methods:
        method = Method.parse(name)
        target = analysis.adam_error_formulas(A2, sigma, d, method, X=X)
        mean = se = math.nan
        if args.trials > 0:
            cfg = MechanismConfig(method, A2, A2, C, C, PrivacyParams(sigma / 2.0, 1.0), d,
                                  form="diag", seed=args.seed)
            _, e2 = run_trials(cfg, X, args.trials, workers)
            mean, se = analysis.mc_summary(e2.sum(axis=1))
        rows.append((method.value, target, mean, se))
    return rows


_DEFAULT_CURVE_METHODS = {
    "moments": "jme,ime,cs,pp,pp-debiased",
    "covariance": "jme-debiased,pp-debiased",
    "adam": "jme,pp,pp-debiased",
}


def cmd_error_curves(args, parser) -> int:
    methods = [m.strip() for m in (args.methods or _DEFAULT_CURVE_METHODS[args.kind]).split(",")]
    if args.kind == "covariance":
        bad = [m for m in methods if m not in ("jme-debiased", "pp-debiased")]
        if bad:
            parser.error(f"covariance curves support jme-debiased and pp-debiased, got {bad}")
    workers = worker_count(args.threads)
    curve = {"moments": _moment_curves, "covariance": _covariance_curves, "adam": _adam_curves}
    rows = []
    for sigma in args.sigmas:
        for name, target, mean, se in curve[args.kind](args, sigma, methods, workers):
            lo, hi = target if isinstance(target, tuple) else (target, target)
            exact = math.nan if isinstance(target, tuple) else target
            rows.append([sigma, name, exact, mean, se, lo, hi])
    emit_csv(rows, ["sigma", "method", "closed_form", "mc_mean", "mc_stderr",
                    "closed_form_lower", "closed_form_upper"], args.out)
    return 0


def cmd_pareto(args, parser) -> int:
    setting = analysis.ParetoSetting(d=args.d, n=args.n, zeta=args.zeta, sigma=args.sigma)
    grids = {
        "lambda-jme": np.logspace(-3, 3, args.lambda_points),
        "ime": np.asarray(args.alphas),
        "cs": np.asarray(args.taus) if args.taus else np.logspace(-2, 2, 25),
        "jme": np.array([math.nan]),
    }
    curves = analysis.pareto_sweep(setting, grids)
    analysis.check_dominance(curves)
    rows = []
    for c in curves:
        for p, (e1, e2), dom in zip(c.params, c.points, c.dominated):
            rows.append([c.method, p, e1, e2, bool(dom)])
    emit_csv(rows, ["method", "param", "err1", "err2", "dominated_flag"], args.out)
    return 0


def cmd_density(args, parser) -> int:
    workers = worker_count(args.threads)

    def job(run):
        return density.density_run(args.method, args.d, args.n, args.sigma, args.seed, run,
                                   scale=args.scale)

    results = ordered_map(job, range(args.runs), workers)
    rows = ([run, t + 1, r.kl[t], r.cov_err_sq[t]]
            for run, r in enumerate(results) for t in range(args.n))
    emit_csv(rows, ["run", "t", "kl", "cov_err_sq"], args.out)
    clipped = sum(r.clipped for r in results)
    print(f"clipped {clipped} of {args.runs * args.n} samples "
          f"({clipped / (args.runs * args.n):.3%})", file=sys.stderr)
    return 0


def cmd_adam(args, parser) -> int:
    task = adam.SyntheticTask(args.task, d=args.d, seed=args.seed)
    clip = args.zeta if args.update_clip is None else args.update_clip
    cfg = adam.AdamConfig(lr=args.lr, zeta=args.zeta, sigma=args.sigma,
                          batch_size=args.batch_size, factorization=args.factorization,
                          tau=args.tau, update_clip=clip if clip > 0 else None, seed=args.seed)
    run = adam.run_dp_adam(task, args.method, cfg, args.steps)
    rows = ([k + 1, run.loss[k], run.grad_err_sq[k], run.v_err_sq[k]] for k in range(args.steps))
    emit_csv(rows, ["step", "loss", "grad_err_sq", "v_err_sq"], args.out)
    return 0


# --- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jme", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="noise multiplier for (epsilon, delta)")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--classical", action="store_true", help="also print the classical bound")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sensitivity", help="r_d(nu) closed form, optionally vs. grid search")
    p.add_argument("--d", type=_positive_int, required=True)
    p.add_argument("--nu", type=float, required=True)
    p.add_argument("--oracle", action="store_true")
    p.add_argument("--diag", action="store_true", help="oracle over the diagonal objective")
    p.add_argument("--grid", type=_positive_int, default=21)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_sensitivity)

    def method_flags(q):
        q.add_argument("--lambda", dest="lam", type=float, default=None)
        q.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
        q.add_argument("--tau", type=float, default=DEFAULT_TAU)
        q.add_argument("--data", choices=("identical", "alternating", "random"),
                       default="identical", help="unit-norm test stream")

    p = sub.add_parser("simulate-moments", help="per-trial, per-step squared errors")
    p.add_argument("--method", required=True, choices=[m.value for m in Method])
    method_flags(p)
    _add_matrices(p)
    _add_privacy(p)
    p.add_argument("--trials", type=_positive_int, default=1000)
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("error-curves", help="closed-form vs Monte-Carlo error against sigma")
    p.add_argument("--kind", choices=("moments", "covariance", "adam"), default="moments")
    p.add_argument("--methods", default=None, help="comma-separated method names")
    p.add_argument("--sigmas", type=_floats, default=[0.25, 0.5, 1.0, 2.0, 4.0])
    p.add_argument("--moment", choices=("first", "second"), default="second")
    p.add_argument("--beta", type=float, default=None, help="Adam beta2 (kind=adam)")
    p.add_argument("--zeta", type=float, default=1.0)
    p.add_argument("--trials", type=int, default=0, help="Monte-Carlo trials (0: closed form only)")
    method_flags(p)
    _add_matrices(p)
    _add_common(p)
    p.set_defaults(func=cmd_error_curves)

    p = sub.add_parser("pareto", help="first/second error trade-off of lambda-JME, IME and CS")
    p.add_argument("--d", type=_positive_int, default=10)
    p.add_argument("--n", type=_positive_int, default=100)
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--zeta", type=float, default=1.0)
    p.add_argument("--lambda-points", type=_positive_int, default=400)
    p.add_argument("--alphas", type=_floats, default=[round(0.05 * k, 2) for k in range(1, 20)])
    p.add_argument("--taus", type=_floats, default=None)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_pareto)

    p = sub.add_parser("gaussian-density", help="KL of private running Gaussian estimates")
    p.add_argument("--method", choices=density.DENSITY_METHODS, default="jme-debiased")
    p.add_argument("--d", type=_positive_int, default=5)
    p.add_argument("--n", type=_positive_int, default=100)
    p.add_argument("--sigma", type=float, default=2.0, help="application noise level (2 x multiplier)")
    p.add_argument("--runs", type=_positive_int, default=100)
    p.add_argument("--scale", type=float, default=2.0,
                   help="data are divided by scale x RMS norm before clipping")
    _add_common(p)
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("dp-adam-toy", help="DP-Adam on a synthetic objective")
    p.add_argument("--task", choices=("quadratic", "logreg"), default="quadratic")
    p.add_argument("--method", choices=adam.ADAM_METHODS, default="jme")
    p.add_argument("--d", type=_positive_int, default=10)
    p.add_argument("--sigma", type=float, default=1.0, help="application noise level (2 x multiplier)")
    p.add_argument("--steps", type=_positive_int, default=1000)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", type=_positive_int, default=1)
    p.add_argument("--zeta", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--factorization", choices=("identity", "sqrt"), default="identity")
    p.add_argument("--update-clip", type=float, default=None,
                   help="norm bound on the Adam direction (default: zeta; 0 disables)")
    _add_common(p)
    p.set_defaults(func=cmd_adam)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except (ValueError, ArithmeticError, RuntimeError, np.linalg.LinAlgError, OSError) as exc:
        print(f"jme {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
