"""
Comparing the four schemes
==========================

The full optimiser against its ablations. Two of them freeze a block of
variables (the greedy association, or positions at K-means centres); the
third optimises as if every link were line-of-sight. A handful of user realisations keeps
the run short; raise ``R`` for tighter error bars (or use ``blockuav sweep``).
"""
from blockuav import SCHEMES, monte_carlo, synthetic_scene

R = 4
template = synthetic_scene(K=8, M=4, N=4, seed=11)
table = monte_carlo(template, R, SCHEMES)

for s in SCHEMES:
    row = table[s]
    print(f"{s:18s} {row['mean']:6.3f} +/- {row['stderr']:.3f}  "
          f"({row['runs_ok']} ok, {row['runs_failed']} failed)")
