"""Why damping matters: an indefinite curvature pair.

A pair with s^T y < 0 breaks the shifted BFGS update used by RES but not
the damped one, whose spectrum stays above delta.
"""
import numpy as np

from sqnlab import (
    CurvatureBreakdown,
    DampedBfgsConfig,
    ResConfig,
    damped_secant,
    min_eigenvalue,
    res_update,
    sdbfgs_update,
)

B = np.eye(2)
s = np.array([1.0, 0.0])
y_hat = np.array([-1.0, 0.0])  # negative curvature along s

try:
    res_update(B, s, y_hat, ResConfig(delta_hat=1e-3))
except CurvatureBreakdown as exc:
    print("RES:", exc)
print("RES eigenvalues without the check:", np.linalg.eigvalsh(res_update(B, s, y_hat, check=False)))

B_new = sdbfgs_update(B, s, y_hat, DampedBfgsConfig(delta=1e-3))
r, theta = damped_secant(s, y_hat, B)
print(f"damped: theta={theta:.3f}, s^T r={s @ r:.3f} (floor 0.2 s^T B s = 0.2)")
print("damped eigenvalues:", np.linalg.eigvalsh(B_new))

# %% a long random chain keeps the floor
rng = np.random.default_rng(0)
B = np.eye(5)
worst = np.inf
for _ in range(2000):
    B = sdbfgs_update(B, rng.standard_normal(5), rng.standard_normal(5), DampedBfgsConfig(delta=1e-3))
    worst = min(worst, min_eigenvalue(B))
print(f"smallest eigenvalue over 2000 random updates: {worst:.6f} (delta = 0.001)")
