"""Experiment specs, multi-run execution and aggregation."""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..core import make_rng, stream_key
from ..oracle import SigmoidSvmProblem, StochasticProblem, problem_from_dict
from ..solvers import (
    UPDATERS,
    Constant,
    Harmonic,
    RunConfig,
    RunReport,
    horizon_from_budget,
    run_rsqn,
    run_sqn,
    sfo_per_iterations,
)
from ..updaters import CbbConfig, DampedBfgsConfig, ResConfig

__all__ = [
    "ConfigError",
    "ExperimentFailed",
    "AlgorithmSpec",
    "ExperimentSpec",
    "AggregateStats",
    "ExperimentResult",
    "spec_from_dict",
    "run_seed",
    "resolve_stepsize",
    "run_one",
    "run_experiment",
    "aggregate",
    "bb_fraction_report",
]

log = logging.getLogger(__name__)

SEED_ENV = "SQNLAB_SEED"


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class ExperimentFailed(RuntimeError):
    """Raised after partial outputs have been written."""

    def __init__(self, msg, result=None):
        super().__init__(msg)
        self.result = result


_UPDATER_PARAMS = {
    "sgd": set(),
    "sdbfgs": {"delta", "skip_tol"},
    "res": {"delta_hat", "gamma", "skip_tol"},
    "scbb": {"q", "lam_min", "lam_max", "variant"},
}


@dataclass
class AlgorithmSpec:
    """One column of a results table.

    ``stepsize`` is ``{"kind": "harmonic", "a", "b"}``,
    ``{"kind": "constant", "alpha"}`` or ``{"kind": "lipschitz", "scale"}``
    (``alpha = scale / L_hat`` from the problem's Lipschitz probe).
    """

    name: str
    updater: str
    stepsize: dict
    batch_size: int = 1
    zeta: float | None = None
    mode: str = "sqn"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.updater not in UPDATERS:
            raise ConfigError(f"{self.name}: unknown updater {self.updater!r}")
        if self.mode not in ("sqn", "rsqn"):
            raise ConfigError(f"{self.name}: mode must be 'sqn' or 'rsqn'")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ConfigError(f"{self.name}: batch_size must be a positive integer")
        unknown = set(self.params) - _UPDATER_PARAMS[self.updater]
        if unknown:
            raise ConfigError(f"{self.name}: unknown parameters {sorted(unknown)} for {self.updater}")
        kind = self.stepsize.get("kind")
        allowed = {"harmonic": {"a", "b"}, "constant": {"alpha"}, "lipschitz": {"scale"}}
        if kind not in allowed:
            raise ConfigError(f"{self.name}: stepsize kind must be one of {sorted(allowed)}")
        extra = set(self.stepsize) - allowed[kind] - {"kind"}
        if extra:
            raise ConfigError(f"{self.name}: unknown stepsize keys {sorted(extra)}")

    @property
    def q(self):
        return self.params.get("q", CbbConfig().q)


@dataclass
class ExperimentSpec:
    name: str
    problem: dict
    algorithms: list
    n_runs: int = 20
    seed: int = 0
    max_iter: int = 10_000
    rho: float | None = None
    nsfo: int | None = None
    param_set: str = ""
    out_dir: str | None = None
    workers: int = 1
    divergence_threshold: float = 1e10

    def __post_init__(self):
        self.algorithms = [a if isinstance(a, AlgorithmSpec) else AlgorithmSpec(**_strict(AlgorithmSpec, a))
                           for a in self.algorithms]
        if self.n_runs < 1:
            raise ConfigError("n_runs must be >= 1")
        names = [a.name for a in self.algorithms]
        if len(set(names)) != len(names):
            raise ConfigError(f"algorithm names must be unique: {names}")
        if "kind" not in self.problem:
            raise ConfigError("problem needs a 'kind'")
        if any(a.mode == "rsqn" for a in self.algorithms) and not self.nsfo:
            raise ConfigError("randomized-stopping algorithms need an SFO budget 'nsfo'")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not self.divergence_threshold > 0:
            raise ConfigError("divergence_threshold must be positive")

    def to_dict(self):
        return asdict(self)

    def build_problem(self) -> StochasticProblem:
        d = dict(self.problem)
        d.setdefault("seed", self.seed)
        try:
            return problem_from_dict(d)
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError(f"bad problem spec: {exc}") from exc


def _strict(cls, d):
    if not isinstance(d, dict):
        raise ConfigError(f"expected a mapping for {cls.__name__}, got {type(d).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return d


def spec_from_dict(d: dict, seed_override: int | None = None) -> ExperimentSpec:
    """Build a spec from a parsed config file; unknown keys are errors.

    The ``SQNLAB_SEED`` environment variable, when set, overrides the
    master seed (``seed_override`` wins over both).
    """
    d = dict(_strict(ExperimentSpec, d))
    for key in ("name", "problem", "algorithms"):
        if key not in d:
            raise ConfigError(f"missing required key {key!r}")
    if seed_override is None and os.environ.get(SEED_ENV):
        try:
            seed_override = int(os.environ[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer") from exc
    if seed_override is not None:
        d["seed"] = seed_override
    try:
        return ExperimentSpec(**d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def run_seed(master: int, algo: str, run: int) -> int:
    """Per-run seed, a pure function of (master seed, algorithm name, run)."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(stream_key(algo, run)))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def resolve_stepsize(step: dict, problem: StochasticProblem, master: int):
    kind = step["kind"]
    if kind == "harmonic":
        return Harmonic(float(step["a"]), float(step.get("b", 0.0)))
    if kind == "constant":
        return Constant(float(step["alpha"]))
    if not hasattr(problem, "lipschitz_estimate"):
        raise ConfigError(f"{type(problem).__name__} has no Lipschitz probe")
    L_hat = problem.lipschitz_estimate(make_rng(master, "lipschitz-probe"))
    return Constant(float(step.get("scale", 0.5)) / L_hat)


def _run_config(spec: ExperimentSpec, algo: AlgorithmSpec, stepsize, run: int, x0) -> RunConfig:
    p = algo.params
    return RunConfig(
        updater=algo.updater,
        stepsize=stepsize,
        batch_size=int(algo.batch_size),
        zeta=algo.zeta,
        max_iter=spec.max_iter,
        rho=spec.rho if algo.mode == "sqn" else None,
        seed=run_seed(spec.seed, algo.name, run),
        x0=x0,
        sdbfgs=DampedBfgsConfig(**{k: p[k] for k in ("delta", "skip_tol") if k in p}),
        res=ResConfig(**{k: p[k] for k in ("delta_hat", "gamma", "skip_tol") if k in p}),
        cbb=CbbConfig(**{k: p[k] for k in ("q", "lam_min", "lam_max", "variant") if k in p}),
        stopping="uniform" if algo.mode == "rsqn" else "pr",
        divergence_threshold=float(spec.divergence_threshold),
    )


def run_one(spec: ExperimentSpec, algo: AlgorithmSpec, problem: StochasticProblem, stepsize, run: int) -> dict:
    """Execute one run and flatten it into a record (never raises)."""
    record = {
        "experiment": spec.name,
        "algo": algo.name,
        "updater": algo.updater,
        "n": problem.dim,
        "param_set": spec.param_set,
        "run": run,
        "failed": False,
        "error": None,
    }
    try:
        x0 = problem.initial_point(make_rng(spec.seed, "init", run))
        cfg = _run_config(spec, algo, stepsize, run, x0)
        if algo.mode == "sqn":
            rep = run_sqn(problem, cfg)
        else:
            N = horizon_from_budget(spec.nsfo, algo.updater, cfg.batch_size, cfg.cbb.q)
            rep = run_rsqn(problem, cfg, horizon=N)
    except Exception as exc:  # recorded, flagged, excluded from aggregates
        log.exception("run %s/%s/%d failed", spec.name, algo.name, run)
        record.update(failed=True, error=f"{type(exc).__name__}: {exc}")
        return record
    err = None
    if isinstance(problem, SigmoidSvmProblem) and not rep.divergent:
        err = problem.misclassification_error(rep.x)
    record.update(_report_fields(rep, spec, algo))
    record["err"] = err
    return record


def _report_fields(rep: RunReport, spec: ExperimentSpec, algo: AlgorithmSpec) -> dict:
    return {
        "n_sfo": rep.n_sfo,
        "grad_norm": rep.grad_norm,
        "grad_norm_sq": rep.grad_norm_sq,
        "bb_fraction": rep.bb_fraction,
        "resets": rep.resets,
        "cpu_seconds": rep.wall_seconds,
        "iterations": rep.iterations,
        "converged": rep.converged,
        "divergent": rep.divergent,
        "hit_cap": algo.mode == "sqn" and not rep.converged and not rep.divergent and rep.iterations >= spec.max_iter,
        "stop_index": rep.stop_index,
        "as3_violations": rep.as3_violations,
        "skipped_updates": rep.skipped_updates,
    }


@dataclass
class AggregateStats:
    """Per-algorithm summary over the non-failed runs of one experiment.

    ``metric`` is ``grad_norm`` for rho-terminated experiments and
    ``grad_norm_sq`` for randomized stopping. Variance uses the ``N - 1``
    denominator (0 for a single run). A cell with any divergent run omits
    the metric (``None``) and counts divergent runs at the SFO cap.
    """

    algo: str
    metric: str
    n_runs: int
    n_failed: int
    n_divergent: int
    n_capped: int
    mean: float | None
    var: float | None
    mean_n_sfo: float
    mean_cpu_seconds: float
    mean_err: float | None
    mean_bb_fraction: float | None

    @property
    def divergent(self):
        return self.n_divergent > 0


def _mean_var(values):
    a = np.asarray(values, dtype=float)
    if a.size == 0:
        return None, None
    mean = float(np.mean(a))
    var = float(np.var(a, ddof=1)) if a.size > 1 else 0.0
    return mean, var


def _mean_or_none(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def aggregate(spec: ExperimentSpec, records: list) -> dict:
    stats = {}
    for algo in spec.algorithms:
        recs = [r for r in records if r["algo"] == algo.name]
        ok = [r for r in recs if not r["failed"]]
        n_div = sum(r["divergent"] for r in ok)
        if algo.mode == "sqn":
            metric = "grad_norm"
            cap_sfo = _cap_sfo(spec, algo)
        else:
            metric = "grad_norm_sq"
            cap_sfo = None
        if n_div:
            mean = var = None
        else:
            mean, var = _mean_var([r[metric] for r in ok])
        n_sfo = [cap_sfo if (r["divergent"] and cap_sfo is not None) else r["n_sfo"] for r in ok]
        stats[algo.name] = AggregateStats(
            algo=algo.name,
            metric=metric,
            n_runs=len(ok),
            n_failed=len(recs) - len(ok),
            n_divergent=n_div,
            n_capped=sum(r["hit_cap"] for r in ok),
            mean=mean,
            var=var,
            mean_n_sfo=float(np.mean(n_sfo)) if n_sfo else 0.0,
            mean_cpu_seconds=float(np.mean([r["cpu_seconds"] for r in ok])) if ok else 0.0,
            mean_err=_mean_or_none([r.get("err") for r in ok]),
            mean_bb_fraction=_mean_or_none([r["bb_fraction"] for r in ok]),
        )
    return stats


def _cap_sfo(spec, algo):
    return float(sfo_per_iterations(algo.updater, spec.max_iter, int(algo.batch_size), algo.q))


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    records: list
    stats: dict
    stepsizes: dict = field(default_factory=dict)


def _task(args):
    spec, algo, problem, stepsize, run = args
    return run_one(spec, algo, problem, stepsize, run)


def run_experiment(spec: ExperimentSpec, write: bool = True) -> ExperimentResult:
    """Run ``n_runs`` repetitions of every algorithm and aggregate.

    Records come back in (algorithm, run) order regardless of execution
    order. With ``spec.out_dir`` set and ``write=True`` the CSV and JSON
    outputs are written, partially if execution is interrupted.
    """
    from .output import write_outputs

    problem = spec.build_problem()
    stepsizes = {}
    for algo in spec.algorithms:
        try:
            stepsizes[algo.name] = resolve_stepsize(algo.stepsize, problem, spec.seed)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{algo.name}: bad stepsize: {exc}") from exc
    tasks = [(spec, algo, problem, stepsizes[algo.name], run)
             for algo in spec.algorithms for run in range(spec.n_runs)]
    records = []
    try:
        if spec.workers > 1:
            with ProcessPoolExecutor(max_workers=spec.workers) as pool:
                for rec in pool.map(_task, tasks):
                    records.append(rec)
        else:
            for t in tasks:
                records.append(_task(t))
    except BaseException as exc:
        partial = ExperimentResult(spec, records, aggregate(spec, records), stepsizes)
        if write and spec.out_dir:
            write_outputs(partial, spec.out_dir)
        raise ExperimentFailed(f"experiment {spec.name!r} aborted after {len(records)} runs: {exc}", partial) from exc
    result = ExperimentResult(spec, records, aggregate(spec, records), stepsizes)
    if write and spec.out_dir:
        write_outputs(result, spec.out_dir)
    return result


def bb_fraction_report(records) -> dict:
    """Mean BB-step percentage per ``(n, param_set)`` cell over cyclic-BB runs.

    Cells whose runs never reached a cycle boundary map to ``None``.
    """
    cells = {}
    for r in records:
        if r.get("updater", "scbb") != "scbb" or r.get("failed"):
            continue
        cells.setdefault((int(r["n"]), r["param_set"]), []).append(r.get("bb_fraction"))
    return {key: _mean_or_none(vals) for key, vals in sorted(cells.items())}


def stepsize_echo(stepsizes: dict) -> dict:
    out = {}
    for name, s in stepsizes.items():
        if isinstance(s, Harmonic):
            out[name] = {"kind": "harmonic", "a": s.a, "b": s.b}
        elif isinstance(s, Constant):
            out[name] = {"kind": "constant", "alpha": s.alpha}
        else:
            out[name] = {"kind": "callable"}
    return out


def is_missing(value) -> bool:
    return value is None or (isinstance(value, float) and math.isnan(value))
