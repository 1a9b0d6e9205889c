"""Dense linear-algebra primitives and the seeded randomness contract.

Curvature approximations come in two shapes: a dense symmetric positive
definite matrix (BFGS family) or a scaled identity ``lam * I`` standing for
``B^{-1}`` (cyclic Barzilai-Borwein family).
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.linalg

__all__ = [
    "FactorizationFailed",
    "Dense",
    "ScaledIdentity",
    "CurvatureApprox",
    "symmetrize",
    "spd_solve",
    "min_eigenvalue",
    "apply_inverse_plus_shift",
    "make_rng",
    "stream_key",
]


class FactorizationFailed(np.linalg.LinAlgError):
    """Raised when a matrix expected to be SPD cannot be Cholesky-factored."""


def symmetrize(B):
    return 0.5 * (B + B.T)


@dataclass(frozen=True, eq=False)
class Dense:
    """Dense Hessian approximation ``B``; steps apply ``B^{-1}``."""

    matrix: np.ndarray

    @classmethod
    def identity(cls, n, scale=1.0):
        return cls(scale * np.eye(n))

    @property
    def dim(self):
        return self.matrix.shape[0]


@dataclass(frozen=True)
class ScaledIdentity:
    """``B = lam^{-1} I``, so that ``B^{-1} g = lam * g``."""

    lam: float = 1.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lam must be positive, got {self.lam}")


CurvatureApprox = Union[Dense, ScaledIdentity]


def spd_solve(B: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Solve ``B d = g`` for symmetric positive definite ``B`` via Cholesky."""
    B = np.asarray(B, dtype=float)
    g = np.asarray(g, dtype=float)
    if B.shape != (g.shape[0], g.shape[0]):
        raise ValueError(f"shape mismatch: B {B.shape}, g {g.shape}")
    if not np.all(np.isfinite(B)):
        raise FactorizationFailed("matrix has non-finite entries")
    try:
        factor = scipy.linalg.cho_factor(B, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise FactorizationFailed(str(exc)) from exc
    return scipy.linalg.cho_solve(factor, g, check_finite=False)


def min_eigenvalue(B: np.ndarray) -> float:
    return float(scipy.linalg.eigvalsh(B, subset_by_index=[0, 0])[0])


def apply_inverse_plus_shift(B: CurvatureApprox, zeta: float, g: np.ndarray) -> np.ndarray:
    """Return ``(B^{-1} + zeta I) g``."""
    if zeta < 0:
        raise ValueError(f"zeta must be nonnegative, got {zeta}")
    g = np.asarray(g, dtype=float)
    if isinstance(B, ScaledIdentity):
        return (B.lam + zeta) * g
    if isinstance(B, Dense):
        d = spd_solve(B.matrix, g)
        if zeta:
            d = d + zeta * g
        return d
    raise TypeError(f"unsupported curvature approximation {type(B).__name__}")


def stream_key(*parts) -> list[int]:
    """Map a mix of ints and strings to SeedSequence entropy words.

    Strings go through CRC32 so the mapping is stable across processes
    (``hash()`` is salted per interpreter).
    """
    key = []
    for p in parts:
        if isinstance(p, str):
            key.append(zlib.crc32(p.encode("utf-8")))
        else:
            key.append(int(p))
    return key


def make_rng(seed: int, *stream) -> np.random.Generator:
    """PCG64 generator for ``(seed, stream...)``.

    Equal arguments give identical draw sequences; distinct stream keys give
    statistically independent streams (SeedSequence spawn-key mechanism).
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(stream_key(*stream)))
    return np.random.Generator(np.random.PCG64(ss))
