"""Stochastic first-order oracles (SFO) and the two benchmark problems.

A problem exposes ``draw_batch(rng, m)`` and ``batch_gradient(x, batch)``;
all SFO accounting goes through :func:`minibatch_gradient` and
:func:`gradient_same_batch`, which advance an :class:`OracleCounter` by the
batch length.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import scipy.sparse

from .core import make_rng

__all__ = [
    "DimensionMismatch",
    "SampleBatch",
    "OracleCounter",
    "StochasticProblem",
    "QuadraticProblem",
    "SigmoidSvmProblem",
    "minibatch_gradient",
    "gradient_same_batch",
    "exact_gradient_quadratic",
    "estimated_gradient_svm",
    "misclassification_error",
    "finite_difference_check",
    "problem_to_dict",
    "problem_from_dict",
    "save_problem",
    "load_problem",
]


class DimensionMismatch(ValueError):
    pass


# max |d^2/dz^2 (1 - tanh z)|, attained at tanh z = 1/sqrt(3)
SIGMOID_CURVATURE_MAX = 4.0 / (3.0 * math.sqrt(3.0))


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """``size`` i.i.d. draws; ``data`` is problem-specific stacked storage."""

    data: Any
    size: int

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("a sample batch must be non-empty")

    def __len__(self):
        return self.size


@dataclass
class OracleCounter:
    n_sfo: int = 0

    def add(self, m: int) -> None:
        if m < 0:
            raise ValueError("SFO count increments must be nonnegative")
        self.n_sfo += int(m)


class StochasticProblem:
    """Interface for ``f(x) = E[F(x, xi)]`` accessed through ``G(x, xi)``.

    Subclasses implement :meth:`draw_sample`, :meth:`stochastic_gradient`
    and :meth:`sample_loss`; the batched methods below fall back to loops
    over single samples and are overridden where vectorization pays off.
    """

    dim: int

    def draw_sample(self, rng: np.random.Generator):
        raise NotImplementedError

    def stochastic_gradient(self, x, sample) -> np.ndarray:
        raise NotImplementedError

    def sample_loss(self, x, sample) -> float:
        raise NotImplementedError

    def draw_batch(self, rng: np.random.Generator, m: int) -> SampleBatch:
        return SampleBatch([self.draw_sample(rng) for _ in range(m)], m)

    def batch_gradient(self, x, batch: SampleBatch) -> np.ndarray:
        g = np.zeros(self.dim)
        for sample in batch.data:
            g += self.stochastic_gradient(x, sample)
        return g / batch.size

    def exact_gradient(self, x) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no closed-form gradient")

    def reporting_gradient(self, x) -> np.ndarray:
        """Gradient used for run reports (exact where available)."""
        return self.exact_gradient(x)

    def initial_point(self, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(self.dim)

    def stationary_point(self) -> np.ndarray | None:
        return None


def _check_dim(p: StochasticProblem, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (p.dim,):
        raise DimensionMismatch(f"expected x of shape ({p.dim},), got {x.shape}")
    return x


def minibatch_gradient(p: StochasticProblem, x, batch: SampleBatch, counter: OracleCounter) -> np.ndarray:
    """Average of ``G(x, xi_i)`` over the batch; charges ``len(batch)`` SFO calls."""
    x = _check_dim(p, x)
    g = p.batch_gradient(x, batch)
    counter.add(batch.size)
    return g


def gradient_same_batch(p: StochasticProblem, x_next, batch: SampleBatch, counter: OracleCounter) -> np.ndarray:
    """Re-evaluate the batch that produced ``G_k`` at ``x_{k+1}``.

    Reusing the batch is what makes the gradient difference a curvature
    measurement rather than a noise measurement.
    """
    return minibatch_gradient(p, x_next, batch, counter)


# --------------------------------------------------------------------------
# Quadratic with multiplicative diagonal noise
# --------------------------------------------------------------------------


@dataclass(eq=False)
class QuadraticProblem(StochasticProblem):
    """``F(x, xi) = 1/2 x^T (A + A diag(xi)) x - b^T x`` with ``A = diag(diag_a)``.

    ``xi`` is uniform on ``[-half_width, half_width]^n``; ``half_width = 0``
    gives the noiseless problem.
    """

    diag_a: np.ndarray
    b: np.ndarray
    half_width: float = 0.1
    S: tuple = ()
    seed: int | None = None

    def __post_init__(self):
        self.diag_a = np.asarray(self.diag_a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.diag_a.shape != self.b.shape or self.diag_a.ndim != 1:
            raise DimensionMismatch("diag_a and b must be vectors of equal length")
        if np.any(self.diag_a <= 0):
            raise ValueError("diagonal of A must be positive")
        if self.half_width < 0:
            raise ValueError("half_width must be nonnegative")
        self.dim = self.diag_a.size

    @classmethod
    def generate(cls, n: int, S: Sequence[float], seed: int, half_width: float = 0.1):
        """Diagonal drawn uniformly from ``S``, ``b`` uniform on ``[0, 1]^n``."""
        S = tuple(float(s) for s in S)
        if not S or min(S) <= 0:
            raise ValueError("S must be a non-empty set of positive reals")
        rng = make_rng(seed, "quadratic-instance")
        diag_a = rng.choice(np.asarray(S), size=n)
        b = rng.random(n)
        return cls(diag_a, b, half_width=half_width, S=S, seed=int(seed))

    @classmethod
    def deterministic(cls, diag_a, b):
        return cls(diag_a, b, half_width=0.0)

    def draw_sample(self, rng):
        return rng.uniform(-self.half_width, self.half_width, size=self.dim)

    def draw_batch(self, rng, m):
        return SampleBatch(rng.uniform(-self.half_width, self.half_width, size=(m, self.dim)), m)

    def stochastic_gradient(self, x, sample):
        return self.diag_a * (1.0 + sample) * x - self.b

    def batch_gradient(self, x, batch):
        xi_bar = batch.data.mean(axis=0)
        return self.diag_a * (1.0 + xi_bar) * x - self.b

    def sample_loss(self, x, sample):
        return 0.5 * float(np.sum(self.diag_a * (1.0 + sample) * x * x)) - float(self.b @ x)

    def objective(self, x):
        return 0.5 * float(np.sum(self.diag_a * x * x)) - float(self.b @ x)

    def exact_gradient(self, x):
        return self.diag_a * x - self.b

    def stationary_point(self):
        return self.b / self.diag_a

    def lipschitz_bound(self):
        """Largest curvature of any sampled Hessian."""
        return float(self.diag_a.max()) * (1.0 + self.half_width)

    def noise_variance_bound(self, x, m=1):
        """``E||G - grad f||^2`` for a batch of ``m`` (exact for this law)."""
        return self.half_width**2 / 3.0 * float(np.sum((self.diag_a * x) ** 2)) / m


def exact_gradient_quadratic(p: QuadraticProblem, x) -> np.ndarray:
    return p.exact_gradient(_check_dim(p, x))


# --------------------------------------------------------------------------
# Nonconvex SVM with sigmoid loss
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SvmData:
    """Stacked sparse features: row i has nonzeros ``vals[i]`` at ``idx[i]``."""

    idx: np.ndarray
    vals: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.labels.size

    def csr(self, n):
        k, nnz = self.idx.shape
        indptr = np.arange(0, k * nnz + 1, nnz)
        return scipy.sparse.csr_matrix((self.vals.ravel(), self.idx.ravel(), indptr), shape=(k, n))


@dataclass(eq=False)
class SigmoidSvmProblem(StochasticProblem):
    """``f(x) = E[1 - tanh(v <x, u>)] + lam_reg ||x||^2``.

    Features ``u`` carry ``ceil(sparsity * n)`` nonzeros uniform on [0, 1]
    at uniformly chosen positions; labels are ``v = sign(<x_bar, u>)``.
    """

    n: int
    seed: int
    lam_reg: float = 0.01
    sparsity: float = 0.05
    test_size: int = 75000
    eval_size: int = 75000
    eval_seed: int | None = None
    _eval_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.lam_reg <= 0:
            raise ValueError("lam_reg must be positive")
        if not 0 < self.sparsity <= 1:
            raise ValueError("sparsity must lie in (0, 1]")
        self.dim = int(self.n)
        self.nnz = int(math.ceil(self.sparsity * self.n))
        if self.eval_seed is None:
            self.eval_seed = self.seed

    @cached_property
    def x_bar(self):
        return make_rng(self.seed, "svm-separator").uniform(-1.0, 1.0, size=self.n)

    @cached_property
    def test_set(self) -> SvmData:
        return self._draw(make_rng(self.seed, "svm-test"), self.test_size)

    @cached_property
    def _test_csr(self):
        return self.test_set.csr(self.n)

    def _draw(self, rng, m, chunk=4096):
        idx_parts, val_parts = [], []
        left = m
        while left > 0:
            c = min(chunk, left)
            # argpartition of iid uniforms picks a uniform subset without replacement
            idx_parts.append(np.argpartition(rng.random((c, self.n)), self.nnz - 1, axis=1)[:, : self.nnz])
            val_parts.append(rng.random((c, self.nnz)))
            left -= c
        idx = np.concatenate(idx_parts)
        vals = np.concatenate(val_parts)
        z = np.sum(self.x_bar[idx] * vals, axis=1)
        labels = np.where(z >= 0.0, 1.0, -1.0)
        return SvmData(idx, vals, labels)

    def draw_sample(self, rng):
        return self._draw(rng, 1)

    def draw_batch(self, rng, m):
        return SampleBatch(self._draw(rng, m), m)

    def _loss_gradient(self, x, data: SvmData):
        z = np.sum(x[data.idx] * data.vals, axis=1)
        t = np.tanh(data.labels * z)
        coef = -data.labels * (1.0 - t * t)
        g = np.bincount(data.idx.ravel(), weights=(coef[:, None] * data.vals).ravel(), minlength=self.n)
        return g / len(data)

    def stochastic_gradient(self, x, sample):
        return self._loss_gradient(x, sample) + 2.0 * self.lam_reg * x

    def batch_gradient(self, x, batch):
        return self._loss_gradient(x, batch.data) + 2.0 * self.lam_reg * x

    def sample_loss(self, x, sample):
        z = np.sum(x[sample.idx] * sample.vals, axis=1)
        return float(np.mean(1.0 - np.tanh(sample.labels * z))) + self.lam_reg * float(x @ x)

    def sample_hessian_vector(self, x, data: SvmData, w):
        """Batch-averaged Hessian of the sampled objective applied to ``w``."""
        z = np.sum(x[data.idx] * data.vals, axis=1)
        t = np.tanh(data.labels * z)
        h = 2.0 * t * (1.0 - t * t)
        uw = np.sum(w[data.idx] * data.vals, axis=1)
        hw = np.bincount(data.idx.ravel(), weights=((h * uw)[:, None] * data.vals).ravel(), minlength=self.n)
        return hw / len(data) + 2.0 * self.lam_reg * w

    def lipschitz_estimate(self, rng, n_probe: int = 1000) -> float:
        """Average over sampled features of the per-sample gradient Lipschitz bound.

        Each sampled Hessian is ``phi''(v z) u u^T + 2 lam_reg I`` with
        ``|phi''| <= 4 / (3 sqrt 3)`` for ``phi = 1 - tanh``, so its spectral
        norm is bounded by ``4/(3 sqrt 3) ||u||^2 + 2 lam_reg``.
        """
        data = self._draw(rng, n_probe)
        sq_norms = np.sum(data.vals**2, axis=1)
        return float(SIGMOID_CURVATURE_MAX * np.mean(sq_norms) + 2.0 * self.lam_reg)

    def _eval_set(self, eval_size, eval_seed):
        key = (int(eval_size), int(eval_seed))
        if key not in self._eval_cache:
            data = self._draw(make_rng(eval_seed, "svm-eval"), eval_size)
            self._eval_cache[key] = (data, data.csr(self.n))
        return self._eval_cache[key]

    def estimated_gradient(self, x, eval_size=None, eval_seed=None):
        eval_size = self.eval_size if eval_size is None else eval_size
        eval_seed = self.eval_seed if eval_seed is None else eval_seed
        if eval_size < 1:
            raise ValueError("eval_size must be positive")
        data, U = self._eval_set(eval_size, eval_seed)
        t = np.tanh(data.labels * (U @ x))
        coef = -data.labels * (1.0 - t * t)
        return (U.T @ coef) / len(data) + 2.0 * self.lam_reg * x

    def reporting_gradient(self, x):
        return self.estimated_gradient(x)

    def misclassification_error(self, x):
        z = self._test_csr @ np.asarray(x, dtype=float)
        # sign(0) = 0 never equals a +-1 label, so ties count as errors
        return float(np.mean(np.sign(z) != self.test_set.labels))

    def initial_point(self, rng):
        return 5.0 * rng.random(self.n)

    def __getstate__(self):
        state = self.__dict__.copy()
        for key in ("_eval_cache", "test_set", "_test_csr", "x_bar"):
            state.pop(key, None)
        state["_eval_cache"] = {}
        return state


def estimated_gradient_svm(p: SigmoidSvmProblem, x, eval_size: int, eval_seed: int) -> np.ndarray:
    """Sample-average gradient over a fixed evaluation set fixed by ``eval_seed``."""
    return p.estimated_gradient(_check_dim(p, x), eval_size, eval_seed)


def misclassification_error(p: SigmoidSvmProblem, x) -> float:
    return p.misclassification_error(_check_dim(p, x))


def finite_difference_check(p: StochasticProblem, x, sample, h: float = 1e-5) -> float:
    """Max deviation of ``G(x, xi)`` from central differences of ``F(., xi)``.

    Deviations are scaled by ``max(1, ||G||_inf)``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x = _check_dim(p, x)
    g = p.stochastic_gradient(x, sample)
    fd = np.empty_like(x)
    e = np.zeros_like(x)
    for j in range(x.size):
        e[j] = h
        fd[j] = (p.sample_loss(x + e, sample) - p.sample_loss(x - e, sample)) / (2.0 * h)
        e[j] = 0.0
    return float(np.max(np.abs(g - fd)) / max(1.0, float(np.max(np.abs(g)))))


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------


def problem_to_dict(p: StochasticProblem) -> dict:
    if isinstance(p, QuadraticProblem):
        if p.seed is None:
            return {"kind": "quadratic", "diag_a": p.diag_a.tolist(), "b": p.b.tolist(), "half_width": p.half_width}
        return {"kind": "quadratic", "n": p.dim, "S": list(p.S), "seed": p.seed, "half_width": p.half_width}
    if isinstance(p, SigmoidSvmProblem):
        return {
            "kind": "svm",
            "n": p.n,
            "seed": p.seed,
            "lam_reg": p.lam_reg,
            "sparsity": p.sparsity,
            "test_size": p.test_size,
            "eval_size": p.eval_size,
            "eval_seed": p.eval_seed,
        }
    raise TypeError(f"cannot serialize {type(p).__name__}")


def problem_from_dict(d: dict) -> StochasticProblem:
    d = dict(d)
    kind = d.pop("kind", None)
    if kind == "quadratic":
        if "diag_a" in d:
            return QuadraticProblem(np.array(d["diag_a"]), np.array(d["b"]), half_width=d.get("half_width", 0.1))
        return QuadraticProblem.generate(d["n"], d["S"], d["seed"], half_width=d.get("half_width", 0.1))
    if kind == "svm":
        return SigmoidSvmProblem(**d)
    raise ValueError(f"unknown problem kind {kind!r}")


def save_problem(p: StochasticProblem, path) -> None:
    Path(path).write_text(json.dumps(problem_to_dict(p), indent=2) + "\n")


def load_problem(path) -> StochasticProblem:
    return problem_from_dict(json.loads(Path(path).read_text()))
