"""Command-line entry point: ``sqnlab bench|run|report``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import yaml

from .experiment import SEED_ENV, ConfigError, ExperimentFailed, bb_fraction_report, run_experiment, spec_from_dict
from .output import read_json
from .presets import table1_preset, svm_preset

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("sqnlab")


def _parse_set(text: str):
    try:
        values = [float(v) for v in text.strip("{}").split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"--set expects comma-separated reals, got {text!r}") from exc
    if not values:
        raise ConfigError("--set is empty")
    return values


def _master_seed(cli_seed):
    if cli_seed is not None:
        return cli_seed
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer") from exc
    return 0


def load_config(path) -> dict:
    """Read a YAML or JSON config file (JSON is valid YAML)."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping at the top level")
    return doc


def _print_stats(result):
    print(f"# {result.spec.name}  (runs={result.spec.n_runs}, seed={result.spec.seed})")
    print(f"{'algo':<10} {'metric':>12} {'mean':>11} {'var':>11} {'N_sfo':>10} {'err':>8} {'bb%':>6} {'div':>4} {'cap':>4} {'fail':>4}")
    for s in result.stats.values():
        mean = "---" if s.mean is None else f"{s.mean:.3e}"
        var = "---" if s.var is None else f"{s.var:.3e}"
        err = "" if s.mean_err is None else f"{100 * s.mean_err:.2f}"
        bb = "" if s.mean_bb_fraction is None else f"{s.mean_bb_fraction:.1f}"
        print(f"{s.algo:<10} {s.metric:>12} {mean:>11} {var:>11} {s.mean_n_sfo:>10.1f} {err:>8} {bb:>6} "
              f"{s.n_divergent:>4} {s.n_capped:>4} {s.n_failed:>4}")


def _execute(spec, out):
    if out:
        spec.out_dir = out
    result = run_experiment(spec)
    _print_stats(result)
    if spec.out_dir:
        print(f"wrote {Path(spec.out_dir) / spec.name}.csv and .json")
    if any(s.n_failed for s in result.stats.values()):
        log.error("some runs failed; see the JSON records")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_bench_quadratic(args):
    spec = table1_preset(args.n, _parse_set(args.set), seed=_master_seed(args.seed), n_runs=args.runs,
                         divergence_threshold=args.divergence_threshold)
    spec.workers = args.workers
    return _execute(spec, args.out)


def cmd_bench_svm(args):
    spec = svm_preset(args.n, args.nsfo, seed=_master_seed(args.seed), n_runs=args.runs,
                      stepsize_scale=args.stepsize_scale)
    spec.workers = args.workers
    return _execute(spec, args.out)


def cmd_run(args):
    spec = spec_from_dict(load_config(args.config), seed_override=args.seed)
    return _execute(spec, args.out)


def cmd_report_bbfrac(args):
    in_dir = Path(args.in_dir)
    files = sorted(in_dir.glob("*.json"))
    if not files:
        raise ConfigError(f"no result JSON files in {in_dir}")
    records = []
    for f in files:
        records.extend(read_json(f).get("records", []))
    report = bb_fraction_report(records)
    print("n,param_set,bb_percent")
    for (n, param_set), pct in report.items():
        print(f"{n},{param_set},{'NA' if pct is None else f'{pct:.2f}'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sqnlab", description="Stochastic quasi-Newton benchmarks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="run a preset benchmark")
    bsub = bench.add_subparsers(dest="problem", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help=f"master seed (else ${SEED_ENV}, else 0)")
        p.add_argument("--runs", type=int, default=20)
        p.add_argument("--out", default=None, help="output directory for CSV/JSON")
        p.add_argument("--workers", type=int, default=1)

    q = bsub.add_parser("quadratic", help="diagonal quadratic with multiplicative noise")
    q.add_argument("--n", type=int, required=True)
    q.add_argument("--set", required=True, help="eigenvalue set, e.g. 0.1,1,10")
    q.add_argument("--divergence-threshold", type=float, default=1e50, help="iterate norm flagged as divergent")
    common(q)
    q.set_defaults(func=cmd_bench_quadratic)

    s = bsub.add_parser("svm", help="nonconvex sigmoid-loss SVM")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--nsfo", type=int, required=True)
    s.add_argument("--stepsize-scale", type=float, default=0.5, help="alpha = scale / L_hat")
    common(s)
    s.set_defaults(func=cmd_bench_svm)

    r = sub.add_parser("run", help="run an experiment from a YAML/JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="summaries of stored results")
    rsub = rep.add_subparsers(dest="report", required=True)
    bb = rsub.add_parser("bbfrac", help="percentage of accepted BB steps per cell")
    bb.add_argument("--in", dest="in_dir", required=True)
    bb.set_defaults(func=cmd_report_bbfrac)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"sqnlab: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ExperimentFailed as exc:
        print(f"sqnlab: {exc} (partial outputs kept)", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, RuntimeError, ArithmeticError) as exc:
        print(f"sqnlab: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
