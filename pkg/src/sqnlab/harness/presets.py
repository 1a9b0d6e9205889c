"""Ready-made experiment specs for the two benchmark problems."""
from __future__ import annotations

from .experiment import AlgorithmSpec, ConfigError, ExperimentSpec

__all__ = ["SVM_NSFO_GRID", "QUADRATIC_SETS", "table1_preset", "svm_preset", "format_set"]

SVM_NSFO_GRID = (2500, 5000, 10000, 20000)
QUADRATIC_SETS = ((0.1, 1.0), (0.1, 1.0, 10.0), (0.1, 1.0, 10.0, 100.0))

_SLOW = {"kind": "harmonic", "a": 1e2, "b": 1e3}
_FAST = {"kind": "harmonic", "a": 1e4, "b": 1e4}


def format_set(S) -> str:
    return "{" + ",".join(f"{v:g}" for v in S) + "}"


def table1_preset(n: int, S, seed: int = 0, n_runs: int = 20, out_dir: str | None = None,
                  divergence_threshold: float = 1e50) -> ExperimentSpec:
    """Quadratic comparison: two SGD stepsizes, RES, damped BFGS and cyclic BB.

    All methods use batch size 5 and stop once the relative distance to the
    minimizer drops to 0.01, or after 10^4 iterations. Quasi-Newton
    iterates on ill-conditioned sets can grow by many orders of magnitude
    before the curvature estimate catches up, so only norms beyond
    ``divergence_threshold`` (or overflow) count as divergence.
    """
    S = tuple(float(v) for v in S)
    if n < 2:
        raise ConfigError("n must be >= 2")
    if not S or min(S) <= 0:
        raise ConfigError("S must be a nonempty set of positive reals")
    algos = [
        AlgorithmSpec("sgd", "sgd", dict(_SLOW), batch_size=5),
        AlgorithmSpec("sgd-fast", "sgd", dict(_FAST), batch_size=5),
        AlgorithmSpec("res", "res", dict(_SLOW), batch_size=5, params={"delta_hat": 1e-3, "gamma": 1e-4}),
        AlgorithmSpec("sdbfgs", "sdbfgs", dict(_SLOW), batch_size=5, zeta=1e-4, params={"delta": 1e-3}),
        AlgorithmSpec("scbb", "scbb", dict(_SLOW), batch_size=5,
                      params={"q": 5, "lam_min": 1e-6, "lam_max": 1e8, "variant": "B"}),
    ]
    return ExperimentSpec(
        name=f"quadratic_n{n}_S{'-'.join(f'{v:g}' for v in S)}",
        problem={"kind": "quadratic", "n": n, "S": list(S)},
        algorithms=algos,
        n_runs=n_runs,
        seed=seed,
        max_iter=10_000,
        rho=0.01,
        param_set=format_set(S),
        out_dir=out_dir,
        divergence_threshold=divergence_threshold,
    )


def svm_preset(n: int, nsfo: int, seed: int = 0, n_runs: int = 20, out_dir: str | None = None,
               stepsize_scale: float = 0.5) -> ExperimentSpec:
    """Nonconvex SVM comparison under randomized stopping with a shared budget.

    Every method uses batch size 1 and the constant stepsize
    ``stepsize_scale / L_hat``; a constant stepsize makes the stopping law
    uniform over the horizon the budget allows.
    """
    if n < 2:
        raise ConfigError("n must be >= 2")
    if nsfo < 1:
        raise ConfigError("nsfo must be >= 1")
    step = {"kind": "lipschitz", "scale": float(stepsize_scale)}
    algos = [
        AlgorithmSpec("rsg", "sgd", dict(step), batch_size=1, mode="rsqn"),
        AlgorithmSpec("rsdbfgs", "sdbfgs", dict(step), batch_size=1, zeta=1e-4, mode="rsqn",
                      params={"delta": 1e-3}),
        AlgorithmSpec("rscbb", "scbb", dict(step), batch_size=1, mode="rsqn",
                      params={"q": 5, "lam_min": 1e-6, "lam_max": 1e8, "variant": "B"}),
    ]
    return ExperimentSpec(
        name=f"svm_n{n}_nsfo{nsfo}",
        problem={"kind": "svm", "n": n, "lam_reg": 0.01, "test_size": 75_000},
        algorithms=algos,
        n_runs=n_runs,
        seed=seed,
        max_iter=nsfo,
        nsfo=nsfo,
        param_set=str(nsfo),
        out_dir=out_dir,
    )
