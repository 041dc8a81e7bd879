"""Perturb the initial guess randomly and check that Newton returns to the same leaf."""
import numpy as np

from foliate import MetricSpec, SolveOptions, curvature_at
from foliate.solver import basin_check
from foliate.normal_chart import parallel_frame

spec = MetricSpec("conformal_bump", {"epsilon": 0.05, "a": [1.0, 2.0, 3.0], "b": 1.0})
frame = parallel_frame(spec, np.zeros(3))
curv = curvature_at(spec, np.zeros(3))
ref, trials = basin_check(spec, frame, 0.1, curv, SolveOptions(L=12), count=6, seed=3)
for t in trials:
    print(f"converged={t.converged}  distance={t.distance:.1e}  iters={t.newton_iters}")
