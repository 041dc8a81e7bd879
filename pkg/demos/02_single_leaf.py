"""Solve one leaf and watch Newton converge.

The unknowns are the Lagrange multiplier lam, the center offset tau and the
graph phi orthogonal to the degree <= 1 harmonics.  The initial guess is the
leading-order expansion, so Newton needs only a few steps.
"""
import time

import numpy as np

from foliate import MetricSpec, SolveOptions, curvature_at, initial_guess, solve_leaf
from foliate.normal_chart import parallel_frame

spec = MetricSpec("conformal_bump", {"epsilon": 0.05, "a": [1.0, 2.0, 3.0], "b": 1.0})
frame = parallel_frame(spec, np.zeros(3))
curv = curvature_at(spec, np.zeros(3))
opts = SolveOptions(L=16)

for r in (0.05, 0.1, 0.2):
    t0 = time.time()
    leaf, _ = solve_leaf(spec, frame, r, initial_guess(curv, opts.L), opts)
    print(
        f"r={r:.2f}  lam={leaf.lam:+.8f} (-Sc/3 = {-curv.sc / 3:+.4f})  |tau|={np.linalg.norm(leaf.tau):.2e}"
        f"  area/(4 pi r^2)={leaf.area / (4 * np.pi * r**2):.8f}  iters={leaf.newton_iters}"
        f"  residual={leaf.residual_linf:.1e}  {time.time() - t0:.1f}s"
    )
