"""Geodesics, normal coordinates and parallel frames in a metric chart."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import jax
import jax.numpy as jnp
import numpy as np
from scipy.integrate import solve_ivp

from .errors import IntegratorFailure, LeftChart, NoConvergence, OutOfChart, OutOfNormalNeighborhood
from .metric import CATALOG, CurvaturePoint, MetricSpec, _check_chart, _run, metric_jet, orthonormal_frame

__all__ = [
    "Frame",
    "geodesic_flow",
    "exp_map",
    "log_map",
    "log_map_batch",
    "transport",
    "parallel_frame",
    "lee_parker_metric",
    "riemann_from_ricci",
    "normal_pullback",
]

ODE_TOL = 1e-12


def _christoffel(spec, x):
    _check_chart(spec, x, LeftChart)
    return _run(spec.id, "geodesic", x, spec.theta)[0]


def _geodesic_rhs(spec, n, extra=0):
    def rhs(_, state):
        s = state.reshape(n, 6 + extra)
        x, v = s[:, :3], s[:, 3:6]
        G = _christoffel(spec, x)
        out = np.empty_like(s)
        out[:, :3] = v
        out[:, 3:6] = -np.einsum("nkij,ni,nj->nk", G, v, v)
        if extra:
            E = s[:, 6:].reshape(n, 3, -1)
            out[:, 6:] = -np.einsum("nkij,ni,njm->nkm", G, v, E).reshape(n, -1)
        return out.ravel()

    return rhs


def _integrate(rhs, state, t_end=1.0):
    try:
        sol = solve_ivp(rhs, (0.0, t_end), state, method="DOP853", rtol=ODE_TOL, atol=ODE_TOL)
    except (OutOfChart, LeftChart) as exc:
        raise LeftChart(str(exc)) from None
    if not sol.success:
        raise IntegratorFailure(sol.message)
    return sol.y[:, -1]


def geodesic_flow(spec: MetricSpec, base, v, t=1.0):
    """Positions and velocities at time ``t`` of the geodesics with x(0)=base, x'(0)=v.

    ``base`` and ``v`` broadcast over a leading batch axis.
    """
    base = np.asarray(base, dtype=float)
    v = np.asarray(v, dtype=float)
    shape = np.broadcast_shapes(base.shape, v.shape)
    b = np.broadcast_to(base, shape).reshape(-1, 3)
    w = np.broadcast_to(v, shape).reshape(-1, 3)
    _check_chart(spec, b)
    n = b.shape[0]
    state = np.concatenate([b, w], axis=1).ravel()
    end = _integrate(_geodesic_rhs(spec, n), state, t).reshape(n, 6)
    return end[:, :3].reshape(shape), end[:, 3:].reshape(shape)


def exp_map(spec: MetricSpec, base, v):
    """exp_base(v); ``v`` may carry a leading batch axis."""
    return geodesic_flow(spec, base, v)[0]


def _exp_jacobian(spec, base, v, h=1e-6):
    steps = np.eye(3) * h
    pts = exp_map(spec, base, np.concatenate([v + steps, v - steps]))
    return (pts[:3] - pts[3:]).T / (2.0 * h)


def log_map(spec: MetricSpec, base, y, tol=1e-10, max_iter=40):
    """Initial velocity v with exp_base(v) = y, by damped Newton shooting."""
    base = np.asarray(base, dtype=float).reshape(3)
    y = np.asarray(y, dtype=float).reshape(3)
    _check_chart(spec, y)
    v = y - base
    res = exp_map(spec, base, v) - y
    err = np.linalg.norm(res)
    for _ in range(max_iter):
        if err <= tol:
            return v
        J = _exp_jacobian(spec, base, v)
        if not np.isfinite(np.linalg.cond(J)) or np.linalg.cond(J) > 1e10:
            raise OutOfNormalNeighborhood("exponential map is singular along the shooting path")
        step = np.linalg.solve(J, res)
        t = 1.0
        while True:
            cand = v - t * step
            try:
                r_new = exp_map(spec, base, cand) - y
            except LeftChart:
                r_new = None
            if r_new is not None and np.linalg.norm(r_new) < err:
                break
            t *= 0.5
            if t < 1e-6:
                raise OutOfNormalNeighborhood("no descent direction for the shooting residual")
        v, res, err = cand, r_new, np.linalg.norm(r_new)
    if err <= tol:
        return v
    raise NoConvergence(f"log_map residual {err:.3e} after {max_iter} iterations")


def log_map_batch(spec: MetricSpec, base, ys, tol=1e-10, max_iter=25, h=1e-7):
    """log_base(y) for many targets ``ys`` (N, 3) by simultaneous Newton shooting.

    The exact residual comes from one batched integration per iteration; the
    shooting Jacobian is a forward difference computed in the same batch.
    """
    base = np.asarray(base, dtype=float).reshape(3)
    ys = np.asarray(ys, dtype=float).reshape(-1, 3)
    _check_chart(spec, ys)
    n = ys.shape[0]
    v = ys - base
    steps = np.eye(3) * h
    err = np.full(n, np.inf)
    for _ in range(max_iter):
        trial = np.concatenate([v[None], v[None] + steps[:, None, :]]).reshape(-1, 3)
        X = exp_map(spec, base, trial).reshape(4, n, 3)
        res = X[0] - ys
        err = np.linalg.norm(res, axis=1)
        if not np.all(np.isfinite(err)):
            raise OutOfNormalNeighborhood("non-finite shooting residual")
        if err.max() <= tol:
            return v
        J = np.transpose(X[1:] - X[0], (1, 2, 0)) / h  # (n, 3 components, 3 directions)
        if np.any(np.abs(np.linalg.det(J)) < 1e-10):
            raise OutOfNormalNeighborhood("exponential map is singular along a shooting path")
        v = v - np.linalg.solve(J, res[..., None])[..., 0]
    raise NoConvergence(f"batched log_map residual {err.max():.3e} after {max_iter} iterations")


def transport(spec: MetricSpec, base, v, vectors, t=1.0):
    """Parallel transport of the columns of ``vectors`` along exp_base(s v), s in [0, t].

    Returns (endpoint, end velocity, transported vectors).
    """
    base = np.asarray(base, dtype=float).reshape(3)
    v = np.asarray(v, dtype=float).reshape(3)
    E = np.asarray(vectors, dtype=float).reshape(3, -1)
    m = E.shape[1]
    _check_chart(spec, base)
    state = np.concatenate([base, v, E.ravel()])
    end = _integrate(_geodesic_rhs(spec, 1, 3 * m), state, t)
    return end[:3], end[3:6], end[6:].reshape(3, m)


@dataclass(frozen=True, eq=False)
class Frame:
    base: np.ndarray
    vectors: np.ndarray  # columns e_j in chart components
    tau: np.ndarray

    def orthonormality_error(self, spec):
        g = metric_jet(spec, self.base, 0).g
        return float(np.abs(self.vectors.T @ g @ self.vectors - np.eye(3)).max())


def parallel_frame(spec: MetricSpec, tau, origin=(0.0, 0.0, 0.0), frame=None) -> Frame:
    """Frame at c(tau) = exp_origin(tau^i e_i), parallel along that geodesic.

    ``frame`` is the orthonormal frame at ``origin`` (default: symmetric
    normalization of g there).
    """
    origin = np.asarray(origin, dtype=float).reshape(3)
    tau = np.asarray(tau, dtype=float).reshape(3)
    E0 = orthonormal_frame(metric_jet(spec, origin, 0).g) if frame is None else np.asarray(frame, dtype=float)
    if not np.any(tau):
        return Frame(origin.copy(), E0.copy(), tau.copy())
    end, _, E = transport(spec, origin, E0 @ tau, E0)
    return Frame(end, E, tau.copy())


def riemann_from_ricci(ric, sc=None):
    """Curvature tensor R (R = -Rm) of a 3-manifold in an orthonormal frame from Ric.

    Extra trailing axes of ``ric`` (covariant derivatives) pass through; ``sc``
    is the matching trace (defaults to the trace of ``ric``).
    """
    ric = np.asarray(ric, dtype=float)
    if sc is None:
        sc = np.trace(ric, axis1=0, axis2=1)
    d = np.eye(3)
    A = ric - 0.25 * np.einsum("pq,...->pq...", d, sc)
    return (
        np.einsum("iq...,pj->ipqj...", A, d)
        + np.einsum("iq,pj...->ipqj...", d, A)
        - np.einsum("ij...,pq->ipqj...", A, d)
        - np.einsum("ij,pq...->ipqj...", d, A)
    )


def lee_parker_metric(curv: CurvaturePoint, x, sigma):
    """Normal-coordinate metric at sigma*x from curvature data, through sigma^4."""
    x = np.asarray(x, dtype=float)
    R = curv.riemann
    dR = riemann_from_ricci(curv.dric, np.trace(curv.dric))
    ddR = riemann_from_ricci(curv.d2ric, np.trace(curv.d2ric))
    q2 = np.einsum("ipqj,p,q->ij", R, x, x)
    q3 = np.einsum("ipqjr,p,q,r->ij", dR, x, x, x)
    quad = np.einsum("ipqt,jrst->ipqjrs", R, R)
    q4 = np.einsum("ipqjrs,p,q,r,s->ij", ddR / 20.0 + 2.0 / 45.0 * quad, x, x, x, x)
    return np.eye(3) + sigma**2 / 3.0 * q2 + sigma**3 / 6.0 * q3 + sigma**4 * q4


# -- differentiable normal chart (oracle) ------------------------------------
_RK_STEPS = 48


@lru_cache(maxsize=None)
def _pullback_fn(metric_id):
    gfun = CATALOG[metric_id].fn

    def gamma(y, theta):
        g = gfun(y, theta)
        dg = jax.jacfwd(gfun)(y, theta)
        low = 0.5 * (jnp.einsum("jli->lij", dg) + jnp.einsum("ilj->lij", dg) - dg.transpose(2, 0, 1))
        return jnp.einsum("kl,lij->kij", jnp.linalg.inv(g), low)

    def f(s, theta):
        x, v = s[:3], s[3:]
        return jnp.concatenate([v, -jnp.einsum("kij,i,j->k", gamma(x, theta), v, v)])

    def expo(v, base, theta):
        h = 1.0 / _RK_STEPS

        def step(s, _):
            k1 = f(s, theta)
            k2 = f(s + 0.5 * h * k1, theta)
            k3 = f(s + 0.5 * h * k2, theta)
            k4 = f(s + h * k3, theta)
            return s + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), None

        s, _ = jax.lax.scan(step, jnp.concatenate([base, v]), None, length=_RK_STEPS)
        return s[:3]

    def pullback(xs, base, E, sigma, theta):
        def one(x):
            v = sigma * (E @ x)
            J = jax.jacfwd(expo)(v, base, theta) @ E
            return J.T @ gfun(expo(v, base, theta), theta) @ J

        return jax.vmap(one)(xs)

    return jax.jit(pullback)


def normal_pullback(spec: MetricSpec, base, frame, x, sigma):
    """Components of g in normal coordinates at ``base``, evaluated at sigma*x.

    Normal coordinates use the orthonormal ``frame`` (columns); the geodesic
    map is differentiated exactly through a fixed-step RK4 scheme.
    """
    x = np.asarray(x, dtype=float)
    xs = x.reshape(-1, 3)
    out = _pullback_fn(spec.id)(xs, jnp.asarray(base, dtype=float), jnp.asarray(frame, dtype=float), float(sigma), spec.theta)
    return np.asarray(out).reshape(x.shape[:-1] + (3, 3))
