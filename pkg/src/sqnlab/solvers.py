"""SQN and randomized-stopping SQN (RSQN) driver loops.

Both drivers share one iteration body::

    G_k     = mean_i G(x_k, xi_{k,i})
    x_{k+1} = x_k - alpha_k (B_k^{-1} + zeta_k I) G_k
    B_{k+1} = update(B_k, s_k, y_k)        # y_k from the same batch

RSQN draws its stopping index ``R`` before iterating and returns ``x_R``.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .core import Dense, FactorizationFailed, ScaledIdentity, apply_inverse_plus_shift, make_rng, min_eigenvalue
from .oracle import OracleCounter, StochasticProblem, gradient_same_batch, minibatch_gradient
from .updaters import (
    CbbConfig,
    CbbState,
    CurvatureBreakdown,
    DampedBfgsConfig,
    ResConfig,
    res_update,
    scbb_update,
    sdbfgs_update,
)

__all__ = [
    "InvalidStepsize",
    "Harmonic",
    "Constant",
    "TheoryConstants",
    "RunConfig",
    "RunReport",
    "RandomizedStopping",
    "UPDATERS",
    "sqn_step",
    "run_sqn",
    "run_rsqn",
    "build_pr",
    "uniform_stopping",
    "sample_stopping_index",
    "complexity_batch_size",
    "sfo_budget",
    "sfo_per_iterations",
    "horizon_from_budget",
    "cbb_constants",
    "sdbfgs_constants",
]

log = logging.getLogger(__name__)

UPDATERS = ("sgd", "sdbfgs", "res", "scbb")


class InvalidStepsize(ValueError):
    pass


@dataclass(frozen=True)
class Harmonic:
    """``alpha_k = a / (b + k)``."""

    a: float
    b: float = 0.0

    def __post_init__(self):
        if not (self.a > 0 and self.b >= 0):
            raise ValueError("Harmonic needs a > 0 and b >= 0")

    def __call__(self, k: int) -> float:
        return self.a / (self.b + k)


@dataclass(frozen=True)
class Constant:
    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("stepsize must be positive")

    def __call__(self, k: int) -> float:
        return self.alpha


Schedule = Union[Harmonic, Constant, Callable[[int], float]]


def _as_schedule(value) -> Callable[[int], float]:
    if callable(value):
        return value
    return lambda k, v=value: v


@dataclass(frozen=True)
class TheoryConstants:
    """Problem constants feeding the stopping law and the batch/budget rules.

    ``m`` and ``M`` bound the spectrum of ``B_k^{-1} + zeta_k I``.
    """

    L: float
    sigma: float
    m: float
    M: float
    D_f: float = 1.0
    D_tilde: float = 1.0

    def __post_init__(self):
        if not (self.L > 0 and self.m > 0 and self.M > 0 and self.D_f > 0 and self.D_tilde > 0):
            raise ValueError("L, m, M, D_f, D_tilde must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.m > self.M:
            raise ValueError("need m <= M")

    @property
    def max_stepsize(self):
        return 2.0 * self.m / (self.L * self.M**2)


def cbb_constants(cfg: CbbConfig, L: float, sigma: float, **kw) -> TheoryConstants:
    lo, hi = cfg.lam_range
    return TheoryConstants(L=L, sigma=sigma, m=lo, M=hi, **kw)


def sdbfgs_constants(zeta: float, delta: float, L: float, sigma: float, **kw) -> TheoryConstants:
    return TheoryConstants(L=L, sigma=sigma, m=zeta, M=zeta + 1.0 / delta, **kw)


@dataclass
class RunConfig:
    """Settings for one SQN/RSQN run.

    ``batch_size`` and ``zeta`` accept a constant or a callable of ``k``.
    ``zeta=None`` picks the updater's customary safeguard: 0 for SGD and
    cyclic BB, ``res.gamma`` for RES and 1e-4 for damped BFGS.
    """

    updater: str = "sgd"
    stepsize: Schedule = field(default_factory=lambda: Harmonic(1e2, 1e3))
    batch_size: int | Callable[[int], int] = 1
    zeta: float | Callable[[int], float] | None = None
    max_iter: int = 10_000
    rho: float | None = None
    seed: int = 0
    x0: np.ndarray | None = None
    B1_scale: float = 1.0
    sdbfgs: DampedBfgsConfig = field(default_factory=DampedBfgsConfig)
    res: ResConfig = field(default_factory=ResConfig)
    cbb: CbbConfig = field(default_factory=CbbConfig)
    stopping: str = "pr"
    divergence_threshold: float = 1e10
    audit_every: int = 100
    trace: bool = False

    def __post_init__(self):
        if self.updater not in UPDATERS:
            raise ValueError(f"unknown updater {self.updater!r}; choose from {UPDATERS}")
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")
        if self.rho is not None and not self.rho > 0:
            raise ValueError("rho must be positive")
        if not self.B1_scale > 0:
            raise ValueError("B1_scale must be positive")
        if self.stopping not in ("pr", "uniform"):
            raise ValueError("stopping must be 'pr' or 'uniform'")

    def zeta_schedule(self) -> Callable[[int], float]:
        if self.zeta is not None:
            return _as_schedule(self.zeta)
        default = {"sgd": 0.0, "scbb": 0.0, "res": self.res.gamma, "sdbfgs": 1e-4}[self.updater]
        return _as_schedule(default)

    def batch_schedule(self) -> Callable[[int], int]:
        return _as_schedule(self.batch_size)


@dataclass
class RunReport:
    iterations: int
    n_sfo: int
    x: np.ndarray
    grad_norm: float
    grad_norm_sq: float
    converged: bool = False
    divergent: bool = False
    stop_index: int | None = None
    bb_steps: int = 0
    fallback_steps: int = 0
    resets: int = 0
    skipped_updates: int = 0
    as3_violations: int = 0
    wall_seconds: float = 0.0
    trace: list = field(default_factory=list)

    @property
    def bb_fraction(self) -> float | None:
        """Percentage of cycle boundaries that accepted a BB value."""
        total = self.bb_steps + self.fallback_steps
        if total == 0:
            return None
        return 100.0 * self.bb_steps / total


def sqn_step(x, B, zeta: float, alpha: float, G) -> np.ndarray:
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return np.asarray(x, dtype=float) - alpha * apply_inverse_plus_shift(B, zeta, G)


def _iterate(p: StochasticProblem, cfg: RunConfig, n_steps: int, x_star=None) -> RunReport:
    t0 = time.perf_counter()
    rng = make_rng(cfg.seed, "sfo")
    counter = OracleCounter()
    step = _as_schedule(cfg.stepsize)
    zeta_of = cfg.zeta_schedule()
    batch_of = cfg.batch_schedule()

    if cfg.x0 is not None:
        x = np.array(cfg.x0, dtype=float)
    else:
        x = p.initial_point(make_rng(cfg.seed, "init"))
    n = x.size

    dense = cfg.updater in ("sdbfgs", "res")
    shift = cfg.sdbfgs.delta if cfg.updater == "sdbfgs" else cfg.res.delta_hat
    B = Dense.identity(n, cfg.B1_scale) if dense else None
    cbb = CbbState()
    lam_lo, lam_hi = cfg.cbb.lam_range

    if x_star is not None:
        x_star_scale = max(1.0, float(np.linalg.norm(x_star)))

    report = RunReport(iterations=0, n_sfo=0, x=x, grad_norm=math.nan, grad_norm_sq=math.nan)
    stride = max(1, math.ceil(n_steps / 1000)) if cfg.trace else 0

    for k in range(1, n_steps + 1):
        if x_star is not None and np.linalg.norm(x - x_star) / x_star_scale <= cfg.rho:
            report.converged = True
            break

        m_k = int(batch_of(k))
        if m_k < 1:
            raise ValueError(f"batch size must be >= 1, got {m_k} at k={k}")
        zeta = float(zeta_of(k))
        if zeta < 0 or (dense and not zeta > 0):
            raise ValueError(f"invalid safeguard zeta_{k} = {zeta} for {cfg.updater}")
        alpha = float(step(k))

        batch = p.draw_batch(rng, m_k)
        G = minibatch_gradient(p, x, batch, counter)

        if dense:
            try:
                d = apply_inverse_plus_shift(B, zeta, G)
            except FactorizationFailed:
                log.warning("curvature reset at k=%d (%s): B := %g I", k, cfg.updater, shift)
                report.resets += 1
                B = Dense.identity(n, shift)
                d = apply_inverse_plus_shift(B, zeta, G)
        elif cfg.updater == "scbb":
            d = apply_inverse_plus_shift(cbb.curvature, zeta, G)
            if not lam_lo + zeta <= cbb.lam + zeta <= lam_hi + zeta:
                report.as3_violations += 1
        else:
            d = apply_inverse_plus_shift(ScaledIdentity(1.0), zeta, G)

        x_new = x - alpha * d
        report.iterations = k
        if not np.all(np.isfinite(x_new)) or np.linalg.norm(x_new) > cfg.divergence_threshold:
            report.divergent = True
            x = x_new
            break
        s = x_new - x

        if dense:
            G_bar = gradient_same_batch(p, x_new, batch, counter)
            y_hat = G_bar - G - shift * s
            x_norm = float(np.linalg.norm(x))
            if cfg.updater == "sdbfgs":
                M_new = sdbfgs_update(B.matrix, s, y_hat, cfg.sdbfgs, x_norm)
            else:
                try:
                    M_new = res_update(B.matrix, s, y_hat, cfg.res, x_norm, check=False)
                except CurvatureBreakdown:
                    log.warning("curvature reset at k=%d (res): s^T y_hat = 0", k)
                    report.resets += 1
                    M_new = np.eye(n) * shift
            if M_new is B.matrix:
                report.skipped_updates += 1
            else:
                B = Dense(M_new)
            if cfg.updater == "sdbfgs" and cfg.audit_every and k % cfg.audit_every == 0:
                if min_eigenvalue(B.matrix) < shift - 1e-9:
                    report.as3_violations += 1
        elif cfg.updater == "scbb":
            if k % cfg.cbb.q == 0:
                G_bar = gradient_same_batch(p, x_new, batch, counter)
                cbb = scbb_update(cbb, s, G_bar - G, cfg.cbb)
            else:
                cbb = scbb_update(cbb, s, None, cfg.cbb)

        x = x_new
        if stride and k % stride == 0:
            lam = cbb.lam if cfg.updater == "scbb" else None
            report.trace.append((k, counter.n_sfo, float(np.linalg.norm(G)), float(np.linalg.norm(x)), lam))

    report.x = x
    report.n_sfo = counter.n_sfo
    report.bb_steps = cbb.bb_steps
    report.fallback_steps = cbb.fallback_steps
    if not report.divergent:
        g = p.reporting_gradient(x)
        report.grad_norm_sq = float(g @ g)
        report.grad_norm = math.sqrt(report.grad_norm_sq)
    else:
        report.grad_norm = report.grad_norm_sq = math.inf
    report.wall_seconds = time.perf_counter() - t0
    return report


def run_sqn(p: StochasticProblem, cfg: RunConfig) -> RunReport:
    """Iterate until ``max_iter`` or, with ``cfg.rho`` set, until
    ``||x_k - x*|| / max(1, ||x*||) <= rho`` for the problem's known
    stationary point.
    """
    x_star = None
    if cfg.rho is not None:
        x_star = p.stationary_point()
        if x_star is None:
            raise ValueError("rho-termination needs a problem with a known stationary point")
    return _iterate(p, cfg, cfg.max_iter, x_star)


@dataclass(frozen=True, eq=False)
class RandomizedStopping:
    weights: np.ndarray
    probabilities: np.ndarray

    @property
    def horizon(self):
        return self.probabilities.size


def build_pr(sched: Schedule, N: int, c: TheoryConstants) -> RandomizedStopping:
    """Stopping law ``P(R = k) ~ m alpha_k - L M^2 alpha_k^2 / 2`` on ``1..N``."""
    if N < 1:
        raise ValueError("horizon N must be >= 1")
    step = _as_schedule(sched)
    alphas = np.array([step(k) for k in range(1, N + 1)], dtype=float)
    if np.any(alphas <= 0):
        raise InvalidStepsize("stepsizes must be positive")
    w = c.m * alphas - 0.5 * c.L * c.M**2 * alphas**2
    if np.any(w < 0):
        k_bad = int(np.argmax(w < 0)) + 1
        raise InvalidStepsize(
            f"alpha_{k_bad} = {alphas[k_bad - 1]:.3g} exceeds 2m/(L M^2) = {c.max_stepsize:.3g}"
        )
    total = math.fsum(w)
    if not total > 0:
        raise InvalidStepsize("all stopping weights vanish")
    return RandomizedStopping(w, w / total)


def uniform_stopping(N: int) -> RandomizedStopping:
    """The stopping law of any constant stepsize schedule."""
    w = np.ones(N)
    return RandomizedStopping(w, w / N)


def sample_stopping_index(rs: RandomizedStopping, rng: np.random.Generator) -> int:
    cdf = np.cumsum(rs.weights)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), rs.horizon - 1)) + 1


def run_rsqn(p: StochasticProblem, cfg: RunConfig, c: TheoryConstants | None = None,
             horizon: int | None = None) -> RunReport:
    """Draw ``R`` from the stopping law on ``1..horizon`` and return ``x_R``.

    ``x_R`` is reached after ``R - 1`` updates; the final loop pass of the
    textbook algorithm only produces ``x_{R+1}``, which is discarded, so it
    is not executed. ``horizon`` defaults to ``cfg.max_iter``.
    """
    N = cfg.max_iter if horizon is None else horizon
    if cfg.stopping == "uniform":
        rs = uniform_stopping(N)
    else:
        if c is None:
            raise ValueError("stopping='pr' needs TheoryConstants")
        rs = build_pr(cfg.stepsize, N, c)
    R = sample_stopping_index(rs, make_rng(cfg.seed, "stopping"))
    report = _iterate(p, cfg, R - 1)
    report.stop_index = R
    return report


def complexity_batch_size(N_bar: int, c: TheoryConstants) -> int:
    if N_bar < 1:
        raise ValueError("N_bar must be >= 1")
    return int(math.ceil(min(N_bar, max(1.0, c.sigma / c.L * math.sqrt(N_bar / c.D_tilde)))))


def sfo_budget(eps: float, c: TheoryConstants) -> int:
    """SFO calls sufficient for ``E||grad f(x_R)||^2 <= eps``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    C1 = 4.0 * c.sigma * c.M**2 * c.D_f / (c.m**2 * math.sqrt(c.D_tilde)) + c.sigma * c.L * math.sqrt(c.D_tilde)
    C2 = 4.0 * c.L * c.M**2 * c.D_f / c.m**2
    return int(math.ceil(max(C1**2 / eps**2 + 4.0 * C2 / eps, c.sigma**2 / (c.L**2 * c.D_tilde))))


def sfo_per_iterations(updater: str, T: int, m: int, q: int | float = 5) -> int:
    """SFO calls consumed by ``T`` iterations at constant batch size ``m``."""
    if updater == "sgd":
        return T * m
    if updater in ("sdbfgs", "res"):
        return 2 * T * m
    if updater == "scbb":
        extra = 0 if q == math.inf else T // int(q)
        return (T + extra) * m
    raise ValueError(f"unknown updater {updater!r}")


def horizon_from_budget(budget: int, updater: str, m: int, q: int | float = 5) -> int:
    """Largest iteration count whose total SFO consumption fits ``budget``."""
    if updater in ("scbb",) and q != math.inf:
        q = int(q)
        N = budget * q // ((q + 1) * m)
        while sfo_per_iterations(updater, N + 1, m, q) <= budget:
            N += 1
        while N > 0 and sfo_per_iterations(updater, N, m, q) > budget:
            N -= 1
        return max(N, 1)
    per = 2 * m if updater in ("sdbfgs", "res") else m
    return max(budget // per, 1)
