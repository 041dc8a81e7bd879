"""Curvature at a critical point of scalar curvature and the leading-order graph.

A small sphere of radius r about p bends by r^2 phi0 where phi0 depends only
on the traceless Ricci tensor at p.  This script locates p, prints the
curvature and compares phi0 with the closed form (Ric(x,x) - Sc/3) / 6.
"""
import numpy as np

from foliate import MetricSpec, curvature_at, find_scalar_critical, phi_zero
from foliate.sphere import build_grid, synthesize

spec = MetricSpec("conformal_bump", {"epsilon": 0.05, "a": [1.0, 2.0, 3.0], "b": 1.0})
crit = find_scalar_critical(spec, np.zeros(3))
print("critical point", crit.location, "Sc =", crit.sc, "Hessian eigenvalues", np.linalg.eigvalsh(crit.hessian))

curv = curvature_at(spec, crit.location)
print("Ricci at p\n", np.round(curv.ric, 6))

L = 16
phi0 = phi_zero(curv, L)
grid = build_grid(L)
x = grid.points
closed = (np.einsum("np,pq,nq->n", x, curv.ric, x) - curv.sc / 3) / 6
print("phi0 vs closed form, sup difference:", np.abs(synthesize(phi0, grid) - closed).max())
