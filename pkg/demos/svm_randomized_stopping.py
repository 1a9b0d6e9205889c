"""Nonconvex sigmoid-loss SVM under randomized stopping.

Each method gets the same oracle budget and returns the iterate at a random
stopping index. Defaults are small enough for a quick look; the
reproduction cell is n=500, budget 5000.
"""
import sys

from sqnlab.harness import bb_fraction_report, run_experiment, svm_preset

n = int(sys.argv[1]) if len(sys.argv) > 1 else 200
budget = int(sys.argv[2]) if len(sys.argv) > 2 else 2500

spec = svm_preset(n, budget, seed=1, n_runs=5)
result = run_experiment(spec, write=False)
print(f"stepsize: {result.stepsizes['rsg']}")
for s in result.stats.values():
    print(f"  {s.algo:<8} E|grad f(x_R)|^2 ~ {s.mean:.3e}   test error {100 * s.mean_err:.2f}%")

# %% how often does the cyclic BB step survive the curvature test?
for (dim, cell), pct in bb_fraction_report(result.records).items():
    print(f"BB steps accepted at n={dim}, budget={cell}: {pct:.1f}%")
