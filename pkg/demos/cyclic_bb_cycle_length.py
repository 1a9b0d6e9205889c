"""Effect of the cycle length q in the cyclic BB update.

q = inf never refreshes the scalar, which is exactly SGD. Smaller q spends
more oracle calls on curvature pairs; very long cycles can keep a large
scalar long enough to blow up.
"""
import math

from sqnlab import CbbConfig, Harmonic, QuadraticProblem, RunConfig, run_sqn

p = QuadraticProblem.generate(200, (0.1, 1.0, 10.0), seed=1)

for q in (1, 2, 5, 20, math.inf):
    cfg = RunConfig(updater="scbb", stepsize=Harmonic(1e2, 1e3), batch_size=5, rho=0.01, seed=0, cbb=CbbConfig(q=q))
    rep = run_sqn(p, cfg)
    frac = "n/a" if rep.bb_fraction is None else f"{rep.bb_fraction:.0f}%"
    grad = "diverged" if rep.divergent else f"{rep.grad_norm:.3e}"
    print(f"q={q!s:>4}: iterations={rep.iterations:5d}  N_sfo={rep.n_sfo:6d}  |grad f|={grad}  BB accepted={frac}")
