import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sqnlab.core import min_eigenvalue
from sqnlab.updaters import (
    CbbConfig,
    CbbState,
    CurvatureBreakdown,
    DampedBfgsConfig,
    DegenerateStep,
    ResConfig,
    bb_value,
    damped_secant,
    damping_coefficient,
    identity_update,
    res_update,
    scbb_update,
    sdbfgs_update,
)


def exact_damped_update(B, s, y, delta):
    """Rational-arithmetic reference for the damped update on small inputs."""
    F = Fraction
    n = len(s)
    B = [[F(v) for v in row] for row in B]
    s = [F(v) for v in s]
    y = [F(v) for v in y]
    delta = F(delta)
    Bs = [sum(B[i][j] * s[j] for j in range(n)) for i in range(n)]
    sBs = sum(s[i] * Bs[i] for i in range(n))
    sy = sum(s[i] * y[i] for i in range(n))
    theta = F(1) if sy >= F(1, 5) * sBs else F(4, 5) * sBs / (sBs - sy)
    r = [theta * y[i] + (1 - theta) * Bs[i] for i in range(n)]
    sr = sum(s[i] * r[i] for i in range(n))
    out = [
        [B[i][j] + r[i] * r[j] / sr - Bs[i] * Bs[j] / sBs + (delta if i == j else 0) for j in range(n)]
        for i in range(n)
    ]
    return out, theta


@pytest.mark.parametrize(
    "B,s,y",
    [
        ([[2, 0], [0, 1]], [1, 1], [3, 1]),  # curvature condition holds
        ([[2, 0], [0, 1]], [1, 1], [-1, 0.5]),  # negative curvature: damped
        ([[1, 0.5], [0.5, 3]], [0.5, -1], [0.25, 0.25]),
    ],
)
def test_sdbfgs_matches_rational_reference(B, s, y):
    B, s, y = np.array(B, float), np.array(s, float), np.array(y, float)
    delta = 0.125
    ref, theta_ref = exact_damped_update(B.tolist(), s.tolist(), y.tolist(), delta)
    got = sdbfgs_update(B, s, y, DampedBfgsConfig(delta=delta))
    np.testing.assert_allclose(got, np.array(ref, dtype=float), rtol=1e-14, atol=1e-14)
    assert damping_coefficient(s, y, B) == pytest.approx(float(theta_ref), rel=1e-15)


def test_theta_is_one_when_curvature_is_sufficient():
    B = np.eye(3)
    s = np.array([1.0, 0.0, 0.0])
    r, theta = damped_secant(s, np.array([0.2, 5.0, 0.0]), B)
    assert theta == 1.0
    np.testing.assert_array_equal(r, [0.2, 5.0, 0.0])


def test_damped_secant_floor_is_tight():
    B = np.eye(2)
    s = np.array([1.0, 0.0])
    r, theta = damped_secant(s, np.array([-3.0, 1.0]), B)
    assert 0 < theta < 1
    assert s @ r == pytest.approx(0.2 * (s @ B @ s), rel=1e-14)


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@settings(max_examples=200, deadline=None)
@given(
    n=st.sampled_from([2, 5, 20]),
    seed=st.integers(0, 2**32 - 1),
    delta=st.sampled_from([1e-3, 1e-1, 1.0]),
)
def test_sdbfgs_floor_and_secant(n, seed, delta):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, n))
    B = M @ M.T + delta * np.eye(n)
    s = rng.standard_normal(n)
    y = rng.standard_normal(n) * rng.choice([0.01, 1.0, 100.0])
    cfg = DampedBfgsConfig(delta=delta)
    B_new = sdbfgs_update(B, s, y, cfg)
    r, _ = damped_secant(s, y, B)
    assert s @ r >= 0.2 * (s @ B @ s) * (1 - 1e-12)
    assert min_eigenvalue(B_new) >= delta - 1e-9 * max(1.0, np.linalg.norm(B_new, 2))
    lhs, rhs = B_new @ s, r + delta * s
    assert np.linalg.norm(lhs - rhs) <= 1e-8 * max(np.linalg.norm(rhs), 1e-300)
    np.testing.assert_array_equal(B_new, B_new.T)


def test_sdbfgs_skips_degenerate_step():
    B = np.eye(3)
    out = sdbfgs_update(B, np.zeros(3), np.ones(3))
    assert out is B
    with pytest.raises(DegenerateStep):
        damping_coefficient(np.full(3, 1e-20), np.ones(3), B, x_norm=1.0)


def test_res_breaks_down_on_indefinite_pair():
    B = np.eye(2)
    s = np.array([1.0, 0.0])
    y_hat = np.array([-1.0, 0.0])
    cfg = ResConfig(delta_hat=1e-3)
    with pytest.raises(CurvatureBreakdown):
        res_update(B, s, y_hat, cfg)
    unchecked = res_update(B, s, y_hat, cfg, check=False)
    assert np.linalg.eigvalsh(unchecked)[0] < 0
    # the damped update stays safely positive definite on the same pair
    assert min_eigenvalue(sdbfgs_update(B, s, y_hat, DampedBfgsConfig(delta=1e-3))) >= 1e-3 - 1e-12


def test_res_breaks_down_on_orthogonal_pair():
    with pytest.raises(CurvatureBreakdown):
        res_update(np.eye(2), np.array([1.0, 0.0]), np.array([0.0, 1.0]))


def test_res_stays_spd_on_convex_quadratic():
    rng = np.random.default_rng(0)
    n = 10
    a = rng.uniform(0.1, 10, n)
    cfg = ResConfig(delta_hat=1e-3)
    B = np.eye(n)
    for _ in range(500):
        s = rng.standard_normal(n)
        y_hat = a * s - cfg.delta_hat * s
        B = res_update(B, s, y_hat, cfg)
        assert min_eigenvalue(B) > 0


@pytest.mark.parametrize("variant,expected", [("A", 5.0 / 13.0), ("B", 2.0 / 5.0)])
def test_bb_values(variant, expected):
    s = np.array([1.0, 1.0])
    y = np.array([2.0, 3.0])
    assert bb_value(s, y, variant) == pytest.approx(expected, rel=1e-15)


def test_scbb_refreshes_only_on_cycle_boundaries():
    cfg = CbbConfig(q=3)
    s = np.array([1.0, 0.0])
    y = np.array([4.0, 0.0])
    st_ = CbbState()
    lams = []
    for _ in range(7):
        st_ = scbb_update(st_, s, y if st_.k % 3 == 0 else None, cfg)
        lams.append(st_.lam)
    assert lams == [1.0, 1.0, 0.25, 0.25, 0.25, 0.25, 0.25]
    assert st_.bb_steps == 2 and st_.fallback_steps == 0


def test_scbb_falls_back_on_nonpositive_curvature():
    cfg = CbbConfig(q=1)
    st_ = scbb_update(CbbState(lam=7.0), np.array([1.0]), np.array([-2.0]), cfg)
    assert st_.lam == 1.0 and st_.fallback_steps == 1
    st_ = scbb_update(st_, np.array([1.0]), np.array([0.0]), cfg)
    assert st_.lam == 1.0 and st_.fallback_steps == 2


def test_scbb_clips_to_range():
    cfg = CbbConfig(q=1, lam_min=1e-2, lam_max=10.0)
    hi = scbb_update(CbbState(), np.array([1.0]), np.array([1e-6]), cfg)
    lo = scbb_update(CbbState(), np.array([1e-6]), np.array([1.0]), cfg)
    assert hi.lam == 10.0 and lo.lam == 1e-2


def test_scbb_infinite_cycle_never_refreshes():
    cfg = CbbConfig(q=math.inf)
    st_ = CbbState()
    for _ in range(50):
        st_ = scbb_update(st_, np.ones(2), np.ones(2), cfg)
    assert st_.lam == 1.0 and st_.cycle_boundaries == 0


@settings(max_examples=200, deadline=None)
@given(
    s=arrays(float, 4, elements=finite),
    y=arrays(float, 4, elements=finite),
    variant=st.sampled_from(["A", "B"]),
)
def test_scbb_range_invariant(s, y, variant):
    cfg = CbbConfig(q=1, variant=variant)
    lo, hi = cfg.lam_range
    st_ = scbb_update(CbbState(), s, y, cfg)
    assert lo <= st_.lam <= hi


@pytest.mark.parametrize("kw", [dict(q=0), dict(q=2.5), dict(lam_min=0.0), dict(lam_min=2.0, lam_max=1.0), dict(variant="C")])
def test_cbb_config_validation(kw):
    with pytest.raises(ValueError):
        CbbConfig(**kw)


def test_identity_update():
    assert identity_update().lam == 1.0
