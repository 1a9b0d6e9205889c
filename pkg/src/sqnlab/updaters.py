"""Curvature updates: damped BFGS, shifted BFGS (RES), cyclic BB, identity.

All updates are pure: they take the current approximation and the
displacement pair, and return a new approximation. Building ``y_hat`` (or
``y``) from a shared sample batch is the solver's job.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import FactorizationFailed, ScaledIdentity, spd_solve, symmetrize

__all__ = [
    "DegenerateStep",
    "CurvatureBreakdown",
    "DampedBfgsConfig",
    "ResConfig",
    "CbbConfig",
    "CbbState",
    "damping_coefficient",
    "damped_secant",
    "sdbfgs_update",
    "res_update",
    "bb_value",
    "scbb_update",
    "identity_update",
]

DAMPING_THRESHOLD = 0.2


class DegenerateStep(ValueError):
    """The step ``s`` is too small for a well-posed curvature update."""


class CurvatureBreakdown(ArithmeticError):
    """A shifted-BFGS update produced ``s^T y_hat = 0`` or a non-SPD matrix."""


@dataclass(frozen=True)
class DampedBfgsConfig:
    delta: float = 1e-3
    skip_tol: float = 1e-14

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.skip_tol < 0:
            raise ValueError("skip_tol must be nonnegative")


@dataclass(frozen=True)
class ResConfig:
    delta_hat: float = 1e-3
    gamma: float = 1e-4
    skip_tol: float = 1e-14

    def __post_init__(self):
        if not (self.delta_hat > 0 and self.gamma > 0):
            raise ValueError("delta_hat and gamma must be positive")


@dataclass(frozen=True)
class CbbConfig:
    """Cyclic BB settings.

    ``variant="A"`` uses ``s^T y / ||y||^2`` and ``variant="B"`` uses
    ``||s||^2 / s^T y``. ``q`` may be ``math.inf`` (never refresh).
    """

    q: int | float = 5
    lam_min: float = 1e-6
    lam_max: float = 1e8
    variant: str = "B"

    def __post_init__(self):
        if not 0 < self.lam_min < self.lam_max:
            raise ValueError("need 0 < lam_min < lam_max")
        if not (self.q == math.inf or (int(self.q) == self.q and self.q >= 1)):
            raise ValueError("q must be a positive integer or math.inf")
        if self.variant not in ("A", "B"):
            raise ValueError("variant must be 'A' or 'B'")

    @property
    def lam_range(self):
        return min(self.lam_min, 1.0), max(self.lam_max, 1.0)


@dataclass(frozen=True)
class CbbState:
    lam: float = 1.0
    k: int = 1
    bb_steps: int = 0
    fallback_steps: int = 0

    @property
    def curvature(self) -> ScaledIdentity:
        return ScaledIdentity(self.lam)

    @property
    def cycle_boundaries(self):
        return self.bb_steps + self.fallback_steps


def _check_step(s, x_norm, skip_tol):
    if np.linalg.norm(s) <= skip_tol * max(1.0, x_norm):
        raise DegenerateStep("step below skip tolerance")


def damping_coefficient(s, y_hat, B, x_norm: float = 0.0, skip_tol: float = 1e-14) -> float:
    """Powell damping factor ``theta`` in (0, 1]."""
    _check_step(s, x_norm, skip_tol)
    sBs = float(s @ (B @ s))
    if not sBs > 0:
        raise DegenerateStep("s^T B s is not positive")
    sy = float(s @ y_hat)
    if sy >= DAMPING_THRESHOLD * sBs:
        return 1.0
    return (1.0 - DAMPING_THRESHOLD) * sBs / (sBs - sy)


def damped_secant(s, y_hat, B, x_norm: float = 0.0, skip_tol: float = 1e-14):
    """Return ``(r_hat, theta)`` with ``r_hat = theta y_hat + (1 - theta) B s``."""
    theta = damping_coefficient(s, y_hat, B, x_norm, skip_tol)
    if theta == 1.0:
        return np.array(y_hat, dtype=float), theta
    return theta * y_hat + (1.0 - theta) * (B @ s), theta


def _shifted_bfgs(B, s, r, shift):
    Bs = B @ s
    B_new = B + np.outer(r, r) / (s @ r) - np.outer(Bs, Bs) / (s @ Bs)
    B_new[np.diag_indices_from(B_new)] += shift
    return symmetrize(B_new)


def sdbfgs_update(B, s, y_hat, cfg: DampedBfgsConfig = DampedBfgsConfig(), x_norm: float = 0.0):
    """Damped BFGS update with identity shift ``delta``.

    ``y_hat`` must already include the ``-delta * s`` term. The result
    satisfies ``B_new >= delta I`` and ``B_new s = r_hat + delta s``.
    A step below the skip tolerance returns ``B`` itself, unchanged.
    """
    try:
        r, _ = damped_secant(s, y_hat, B, x_norm, cfg.skip_tol)
    except DegenerateStep:
        return B
    return _shifted_bfgs(B, s, r, cfg.delta)


def res_update(B, s, y_hat, cfg: ResConfig = ResConfig(), x_norm: float = 0.0, check: bool = True):
    """Shifted BFGS update of the RES method (no damping).

    Positive definiteness is not guaranteed when ``s^T y_hat < 0``. With
    ``check=True`` a non-SPD result raises :class:`CurvatureBreakdown`;
    with ``check=False`` the caller is expected to detect it when factoring.
    """
    try:
        _check_step(s, x_norm, cfg.skip_tol)
    except DegenerateStep:
        return B
    sy = float(s @ y_hat)
    if sy == 0.0 or not math.isfinite(sy):
        raise CurvatureBreakdown(f"s^T y_hat = {sy}")
    B_new = _shifted_bfgs(B, s, np.asarray(y_hat, dtype=float), cfg.delta_hat)
    if check:
        try:
            spd_solve(B_new, s)
        except FactorizationFailed as exc:
            raise CurvatureBreakdown("shifted BFGS update is not positive definite") from exc
    return B_new


def bb_value(s, y, variant: str = "B") -> float:
    """BB scalar; underflowing denominators give ``inf`` (IEEE division)."""
    sy = np.float64(s @ y)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        if variant == "A":
            return float(sy / np.float64(y @ y))
        return float(np.float64(s @ s) / sy)


def scbb_update(state: CbbState, s, y, cfg: CbbConfig = CbbConfig()) -> CbbState:
    """Advance the cyclic BB scalar by one iteration.

    Only iterations with ``k % q == 0`` look at ``(s, y)``; elsewhere ``y``
    may be ``None``.
    """
    if state.k < 1:
        raise ValueError("iteration counter starts at 1")
    k_next = state.k + 1
    if state.k % cfg.q != 0:
        return replace(state, k=k_next)
    sy = float(s @ y)
    value = bb_value(s, y, cfg.variant) if sy > 0 and math.isfinite(sy) else math.nan
    if not math.isnan(value):
        lam = min(max(value, cfg.lam_min), cfg.lam_max)
        return replace(state, lam=lam, k=k_next, bb_steps=state.bb_steps + 1)
    return replace(state, lam=1.0, k=k_next, fallback_steps=state.fallback_steps + 1)


def identity_update() -> ScaledIdentity:
    return ScaledIdentity(1.0)
