"""Command-line entry point for reproducible batch workflows.

Commands: simulate | fit | predict | benchmark | design.  Every command is
deterministic given its configuration and seed.  Exit codes: 0 success,
1 I/O failure, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings

import numpy as np

from . import dataset, design, fit as fitmod, metrics, predict as predmod, sem
from .kernels import KernelKind
from .level1 import DegenerateData, fit_level1, predict_level1
from .linalg import NotPositiveDefinite
from .predict import NumericalVariance, OutOfRange

EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class _CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfgp",
        description="Multi-fidelity GP emulation with tunable precision.")
    parser.add_argument("--config", help="JSON file of option values; file "
                        "entries win over conflicting flags (with a warning)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_schedule_flags(p):
        p.add_argument("--t-max", type=float, default=2.5,
                       help="largest (coarsest) tuning value")
        p.add_argument("--c", type=float, default=0.7, help="refinement ratio in (0,1)")
        p.add_argument("--gamma", type=float, default=2.0, help="sample-size exponent")
        p.add_argument("--levels", type=int, default=None, help="number of levels")
        p.add_argument("--n-min", type=int, default=None,
                       help="sample size at the finest level")

    p_sim = sub.add_parser("simulate", help="generate a benchmark dataset manifest")
    p_sim.add_argument("--benchmark", required=True,
                       choices=[f.value for f in design.BenchmarkFn])
    add_schedule_flags(p_sim)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--non-nested", action="store_true",
                       help="draw disjoint per-level designs instead of nested ones")

    p_fit = sub.add_parser("fit", help="fit an emulator to a dataset manifest")
    p_fit.add_argument("--data", required=True, help="JSON manifest path")
    p_fit.add_argument("--kernel", default="sqexp",
                       choices=[k.value for k in KernelKind])
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.add_argument("--multistarts", type=int, default=5)
    p_fit.add_argument("--non-nested", action="store_true",
                       help="fit via stochastic EM (required for non-nested data)")
    p_fit.add_argument("--sem-iters", type=int, default=sem.DEFAULT_ITERATIONS)
    p_fit.add_argument("--sem-draws", type=int, default=sem.DEFAULT_PREDICT_DRAWS)
    p_fit.add_argument("--out", required=True)
    p_fit.add_argument("--chain-out", default=None,
                       help="chain diagnostics CSV (default: <out>.chain.csv)")

    p_pred = sub.add_parser("predict", help="predict at a tuning value")
    p_pred.add_argument("--model", required=True)
    p_pred.add_argument("--test", required=True,
                        help="CSV of test inputs with columns x1..xd")
    p_pred.add_argument("--t-target", type=float, default=0.0)
    p_pred.add_argument("--out", required=True)

    p_bench = sub.add_parser("benchmark", help="score the emulator against "
                             "the exact solution over seeded repetitions")
    p_bench.add_argument("--benchmark", required=True,
                         choices=[f.value for f in design.BenchmarkFn])
    add_schedule_flags(p_bench)
    p_bench.add_argument("--kernel", default="sqexp",
                         choices=[k.value for k in KernelKind])
    p_bench.add_argument("--reps", type=int, default=1)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--multistarts", type=int, default=5)
    p_bench.add_argument("--t-target", type=float, default=0.0)
    p_bench.add_argument("--test-points", type=int, default=100)
    p_bench.add_argument("--out", required=True)

    p_des = sub.add_parser("design", help="emit a nested design without outputs")
    p_des.add_argument("--benchmark", default=None,
                       choices=[f.value for f in design.BenchmarkFn])
    p_des.add_argument("--dim", type=int, default=None)
    add_schedule_flags(p_des)
    p_des.add_argument("--seed", type=int, default=0)
    p_des.add_argument("--out", required=True)
    return parser


def _apply_config_file(parser, args, argv):
    """Left-to-right precedence: defaults < flags < config file (file wins)."""
    if not getattr(args, "config", None):
        return args
    try:
        with open(args.config) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise _CliError(f"cannot read config file: {exc}", EXIT_IO)
    except json.JSONDecodeError as exc:
        raise _CliError(f"config file is not valid JSON: {exc}", EXIT_CONFIG)
    provided = {a.lstrip("-").replace("-", "_").split("=")[0]
                for a in argv if a.startswith("--")}
    for key, value in doc.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise _CliError(f"unknown config entry {key!r}", EXIT_CONFIG)
        if attr in provided and getattr(args, attr) != value:
            warnings.warn(f"config file overrides --{key}={getattr(args, attr)!r} "
                          f"with {value!r}")
        setattr(args, attr, value)
    return args


def _schedule_from_args(args, fn: design.BenchmarkFn | None):
    levels = args.levels
    n_min = args.n_min
    if fn is not None:
        levels = levels if levels is not None else fn.default_levels
        n_min = n_min if n_min is not None else fn.default_n_min
    if levels is None or n_min is None:
        raise _CliError("--levels and --n-min are required without a benchmark",
                        EXIT_CONFIG)
    try:
        return design.make_schedule(args.t_max, args.c, args.gamma, n_min, levels)
    except ValueError as exc:
        raise _CliError(str(exc), EXIT_CONFIG)


def _disjoint_designs(fn: design.BenchmarkFn, schedule, seed: int):
    """Independent per-level designs for non-nested simulation."""
    rng_seeds = np.random.SeedSequence(seed).spawn(schedule.n_levels)
    mats = []
    dom = fn.domain
    for size, ss in zip(schedule.n, rng_seeds):
        mats.append(design.nested_design([int(size)], fn.dim, dom,
                                         int(ss.generate_state(1)[0]))[0])
    return mats


def cmd_simulate(args) -> int:
    fn = design.BenchmarkFn(args.benchmark)
    schedule = _schedule_from_args(args, fn)
    if args.non_nested:
        mats = _disjoint_designs(fn, schedule, args.seed)
        levels = []
        for t_l, X_l in zip(schedule.t, mats):
            y_l = np.array([design.eval_benchmark(fn, float(t_l), row) for row in X_l])
            levels.append(dataset.FidelityLevel(t=float(t_l), X=X_l, y=y_l))
        data = dataset.MultiFidelityData(levels)
    else:
        data = design.generate_benchmark_data(fn, schedule, args.seed)
    dataset.save_json(data, args.out)
    print(f"wrote {args.out}: {data.n_levels} levels, "
          f"{sum(lv.n for lv in data.levels)} points, d={data.d}")
    return 0


def cmd_fit(args) -> int:
    data = dataset.load_json(args.data)
    kind = KernelKind(args.kernel)
    opt = fitmod.OptimizerConfig(multistarts=args.multistarts)
    if args.non_nested:
        model, state = sem.sem_fit(data, kind, iterations=args.sem_iters,
                                   seed=args.seed, opt=opt)
        chain_path = args.chain_out or (args.out + ".chain.csv")
        sem.write_chain_csv(chain_path, state)
        print(f"wrote chain diagnostics to {chain_path}")
    else:
        if not dataset.check_nested(data):
            raise _CliError("data is not nested; rerun with --non-nested",
                            EXIT_CONFIG)
        model = fitmod.fit(data, kind, opt, args.seed)
    fitmod.save_model(model, args.out)
    h = model.hyper
    print(f"kernel={kind.value} alpha={model.alpha!r} tau2={model.tau2!r}")
    print("theta_x=" + " ".join(repr(v) for v in h.theta_x))
    print(f"theta_y={h.theta_y!r} theta_t={h.theta_t!r} "
          f"beta={h.beta!r} delta={h.delta!r}")
    return 0


def _read_test_csv(path: str, dim: int) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    expected = [f"x{j + 1}" for j in range(dim)]
    if [h.strip() for h in header[:dim]] != expected:
        raise _CliError(f"test CSV must start with columns {expected}", EXIT_CONFIG)
    return np.array(rows)[:, :dim]


def cmd_predict(args) -> int:
    model = fitmod.load_model(args.model)
    x_test = _read_test_csv(args.test, model.dim)
    preds = predmod.predict_batch(model, x_test, args.t_target)
    predmod.write_predictions_csv(args.out, x_test, preds)
    print(f"wrote {len(preds)} predictions to {args.out}")
    return 0


def cmd_benchmark(args) -> int:
    fn = design.BenchmarkFn(args.benchmark)
    schedule = _schedule_from_args(args, fn)
    kind = KernelKind(args.kernel)
    opt = fitmod.OptimizerConfig(multistarts=args.multistarts)
    rep_seeds = [args.seed + 1000 * r for r in range(args.reps)]
    rows = []
    scores = {"mfgp": [], "baseline": []}
    for rep, rep_seed in enumerate(rep_seeds):
        data = design.generate_benchmark_data(fn, schedule, rep_seed)
        rng = np.random.default_rng(rep_seed + 1)
        dom = fn.domain
        x_test = dom[:, 0] + rng.random((args.test_points, fn.dim)) * (dom[:, 1] - dom[:, 0])
        truth = np.array([design.eval_benchmark(fn, args.t_target, row)
                          for row in x_test])

        model = fitmod.fit(data, kind, opt, rep_seed)
        preds = predmod.predict_batch(model, x_test, args.t_target)
        rep_score = metrics.score([p.mean for p in preds],
                                  [p.variance for p in preds], truth)
        rows.append(("mfgp", rep_seed, rep_score.rmse, rep_score.mean_crps))
        scores["mfgp"].append(rep_score)

        base_mean, base_var = _baseline_predict(data, x_test, opt, rep_seed)
        base_score = metrics.score(base_mean, base_var, truth)
        rows.append(("baseline", rep_seed, base_score.rmse, base_score.mean_crps))
        scores["baseline"].append(base_score)
    for method in ("mfgp", "baseline"):
        rows.append((method, "median",
                     float(np.median([s.rmse for s in scores[method]])),
                     float(np.median([s.mean_crps for s in scores[method]]))))
    metrics.write_scores_csv(args.out, rows)
    for method in ("mfgp", "baseline"):
        print(f"{method}: median rmse={np.median([s.rmse for s in scores[method]])!r} "
              f"median crps={np.median([s.mean_crps for s in scores[method]])!r}")
    return 0


def _baseline_predict(data, x_test, opt, seed):
    """Single-fidelity GP on the finest level only (constant model if one point)."""
    finest = data.levels[-1]
    if finest.n >= 2:
        g = fit_level1(finest.X, finest.y, opt, seed)
        mean, var = predict_level1(g, x_test)
        return np.atleast_1d(mean), np.atleast_1d(var)
    mean = np.full(x_test.shape[0], float(np.mean(finest.y)))
    return mean, np.zeros(x_test.shape[0])


def cmd_design(args) -> int:
    fn = design.BenchmarkFn(args.benchmark) if args.benchmark else None
    dim = fn.dim if fn is not None else args.dim
    if dim is None:
        raise _CliError("--dim (or --benchmark) is required", EXIT_CONFIG)
    schedule = _schedule_from_args(args, fn)
    dom = fn.domain if fn is not None else np.array([[0.0, 1.0]] * dim)
    mats = design.nested_design(schedule.n, dim, dom, args.seed)
    doc = {"t": schedule.t.tolist(), "n": schedule.n.tolist(),
           "designs": [m.tolist() for m in mats]}
    with open(args.out, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    print(f"wrote {args.out}")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "benchmark": cmd_benchmark,
    "design": cmd_design,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        args = _apply_config_file(parser, args, argv)
        return _COMMANDS[args.command](args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OutOfRange as exc:
        print(f"error: requested tuning value rejected: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NotPositiveDefinite, DegenerateData, NumericalVariance) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
