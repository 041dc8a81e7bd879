"""Analytic background metrics and their curvature.

Metric components are written once as JAX functions of the chart point;
every derivative (metric jets, Christoffel symbols, Riemann and Ricci
tensors and their covariant derivatives) is obtained by nested forward-mode
differentiation, never by finite differences.

Curvature sign convention.  ``Rm[a, b, c, d] = g(R(d_a, d_b) d_c, d_d)`` with
``R(X, Y) = [nabla_X, nabla_Y] - nabla_[X,Y]`` so that sectional curvature is
``Rm(X, Y, Y, X)``.  The tensor stored in :class:`CurvaturePoint` is
``R = -Rm``; with it ``Ric_pq = -R_tpqt`` and the normal-coordinate expansion
reads ``g_ij = delta_ij + (1/3) R_ipqj x^p x^q + ...``.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from functools import lru_cache
from types import MappingProxyType

import jax
import jax.numpy as jnp
import numpy as np

from .errors import (
    DegenerateHessian,
    DegenerateMetric,
    JetOrderTooLow,
    NoConvergence,
    OrderUnsupported,
    OutOfChart,
    UnknownMetric,
    ValidationError,
)

jax.config.update("jax_enable_x64", True)
if not jax.config.jax_compilation_cache_dir:
    jax.config.update(
        "jax_compilation_cache_dir",
        os.environ.get("FOLIATE_JAX_CACHE", os.path.join(os.path.expanduser("~"), ".cache", "foliate-jax")),
    )
    jax.config.update("jax_persistent_cache_min_compile_time_secs", 0.5)

__all__ = [
    "MetricSpec",
    "MetricJet",
    "CurvaturePoint",
    "CriticalPoint",
    "CATALOG",
    "metric_jet",
    "curvature_point",
    "curvature_at",
    "find_scalar_critical",
    "ambient_fields",
    "orthonormal_frame",
]


# -- catalog -----------------------------------------------------------------
def _euclidean(y, theta):
    return jnp.eye(3, dtype=y.dtype) + 0.0 * y[0]


def _series(w, coeffs):
    acc = jnp.zeros_like(w)
    for c in coeffs[::-1]:
        acc = acc * w + c
    return acc


_NTERMS = 22
# sin(z)^2 / z^2 and (1 - sin(z)^2/z^2) / z^2 as power series in w = z^2
_SINC2 = [(-1) ** (n + 1) * 2.0 ** (2 * n - 1) / math.factorial(2 * n) for n in range(1, _NTERMS)]
_SINC2_DEFECT = [(-1) ** n * 2.0 ** (2 * n - 1) / math.factorial(2 * n) for n in range(2, _NTERMS + 1)]


def _round_s3(y, theta):
    # geodesic normal coordinates of the space form with curvature k
    k = theta[0]
    w = k * jnp.dot(y, y)
    a = _series(w, _SINC2)
    b = k * _series(w, _SINC2_DEFECT)
    return a * jnp.eye(3, dtype=y.dtype) + b * jnp.outer(y, y)


def _conformal_bump(y, theta):
    eps, a1, a2, a3, b, width = (theta[i] for i in range(6))
    q = a1 * y[0] ** 2 + a2 * y[1] ** 2 + a3 * y[2] ** 2
    cubic = b * (y[0] ** 3 - 3.0 * y[0] * y[1] ** 2)  # harmonic, keeps grad Sc(0) = 0
    s = jnp.dot(y, y)
    chi = jnp.where(width > 0, jnp.exp(-s / jnp.where(width > 0, width, 1.0) ** 2), 1.0)
    u = eps * (q + cubic) * chi
    return jnp.exp(2.0 * u) * jnp.eye(3, dtype=y.dtype)


@dataclass(frozen=True)
class _Entry:
    fn: object
    defaults: dict
    chart_radius: float
    doc: str

    def pack(self, params):
        out = []
        for key, default in self.defaults.items():
            val = params.get(key, default)
            if np.ndim(default) == 0:
                out.append(float(val))
            else:
                val = np.asarray(val, dtype=float).ravel()
                if val.shape != np.shape(default):
                    raise ValidationError(f"parameter {key!r} must have {np.size(default)} entries")
                out.extend(val.tolist())
        return np.asarray(out, dtype=float)


CATALOG = MappingProxyType(
    {
        "euclidean": _Entry(_euclidean, {}, 1.0, "flat R^3"),
        "round_s3": _Entry(_round_s3, {"k": 1.0}, 1.0, "space form of curvature k in normal coordinates"),
        "conformal_bump": _Entry(
            _conformal_bump,
            {"epsilon": 0.05, "a": (1.0, 2.0, 3.0), "b": 0.0, "width": 1.0},
            1.0,
            "exp(2u) delta, u = eps (sum a_i y_i^2 + b (y1^3 - 3 y1 y2^2)) exp(-|y|^2/width^2)",
        ),
    }
)


@dataclass(frozen=True)
class MetricSpec:
    id: str
    params: dict = field(default_factory=dict)
    chart_radius: float | None = None

    def __post_init__(self):
        if self.id not in CATALOG:
            raise UnknownMetric(f"unknown metric {self.id!r}; choose from {sorted(CATALOG)}")
        entry = CATALOG[self.id]
        unknown = set(self.params) - set(entry.defaults)
        if unknown:
            raise ValidationError(f"unknown parameters for {self.id}: {sorted(unknown)}")
        full = {k: self.params.get(k, v) for k, v in entry.defaults.items()}
        for k, v in full.items():
            full[k] = tuple(float(t) for t in v) if np.ndim(v) else float(v)
        object.__setattr__(self, "params", MappingProxyType(full))
        radius = entry.chart_radius if self.chart_radius is None else float(self.chart_radius)
        if not radius > 0:
            raise ValidationError("chart_radius must be positive")
        object.__setattr__(self, "chart_radius", radius)
        entry.pack(full)

    def __hash__(self):
        return hash((self.id, tuple(self.theta), self.chart_radius))

    def __eq__(self, other):
        return (
            isinstance(other, MetricSpec)
            and self.id == other.id
            and self.chart_radius == other.chart_radius
            and np.array_equal(self.theta, other.theta)
        )

    @property
    def theta(self):
        return CATALOG[self.id].pack(self.params)

    def to_dict(self):
        return {"id": self.id, "params": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.params.items()},
                "chart_radius": self.chart_radius}


# -- tensor calculus in JAX ---------------------------------------------------
def _christoffel(gfun):
    def gamma(y):
        g = gfun(y)
        dg = jax.jacfwd(gfun)(y)  # dg[i, j, k] = d_k g_ij
        low = 0.5 * (jnp.einsum("jli->lij", dg) + jnp.einsum("ilj->lij", dg) - dg.transpose(2, 0, 1))
        return jnp.einsum("kl,lij->kij", jnp.linalg.inv(g), low)

    return gamma


def _riemann_ricci(gfun):
    gamma = _christoffel(gfun)

    def curv(y):
        G = gamma(y)
        dG = jax.jacfwd(gamma)(y)  # dG[l, j, k, i] = d_i G^l_jk
        Rup = (
            jnp.einsum("ljki->lijk", dG)
            - jnp.einsum("likj->lijk", dG)
            + jnp.einsum("lim,mjk->lijk", G, G)
            - jnp.einsum("ljm,mik->lijk", G, G)
        )
        Rm = jnp.einsum("dl,lijk->ijkd", gfun(y), Rup)
        Ric = jnp.einsum("iijk->jk", Rup)
        return Rm, Ric

    return gamma, curv


def _field_functions(gfun):
    gamma, curv = _riemann_ricci(gfun)

    def ricci(y):
        return curv(y)[1]

    def scalar(y):
        return jnp.einsum("jk,jk->", jnp.linalg.inv(gfun(y)), ricci(y))

    def dric(y):  # [p, q, r] = Ric_{pq,r}
        G = gamma(y)
        R = ricci(y)
        dR = jax.jacfwd(ricci)(y)
        return dR - jnp.einsum("mrp,mq->pqr", G, R) - jnp.einsum("mrq,pm->pqr", G, R)

    def ddric(y):  # [p, q, r, s] = Ric_{pq,rs}
        G = gamma(y)
        T = dric(y)
        dT = jax.jacfwd(dric)(y)
        return (
            dT
            - jnp.einsum("msp,mqr->pqrs", G, T)
            - jnp.einsum("msq,pmr->pqrs", G, T)
            - jnp.einsum("msr,pqm->pqrs", G, T)
        )

    def dsc(y):
        return jax.grad(scalar)(y)

    def ddsc(y):
        return jax.jacfwd(dsc)(y) - jnp.einsum("mqp,m->pq", gamma(y), dsc(y))

    return dict(gamma=gamma, curv=curv, ricci=ricci, scalar=scalar, dric=dric, ddric=ddric, dsc=dsc, ddsc=ddsc)


def _metric_fn(metric_id):
    fn = CATALOG[metric_id].fn
    return lambda theta: (lambda y: fn(y, theta))


@lru_cache(maxsize=None)
def _compiled(metric_id, kind):
    base = CATALOG[metric_id].fn

    def per_point(y, theta):
        gfun = lambda z: base(z, theta)  # noqa: E731
        if kind.startswith("jet"):
            order = int(kind[3:])
            out = [gfun(y)]
            f = gfun
            for _ in range(order):
                f = jax.jacfwd(f)
                out.append(f(y))
            return tuple(out)
        F = _field_functions(gfun)
        if kind == "geodesic":
            return F["gamma"](y)
        if kind == "surface":
            _, ric = F["curv"](y)
            return gfun(y), F["gamma"](y), ric
        if kind == "full":
            rm, ric = F["curv"](y)
            return gfun(y), F["gamma"](y), rm, ric, F["dric"](y)
        if kind == "dsc":
            return F["dsc"](y)
        if kind == "scalar":
            return F["scalar"](y)
        raise KeyError(kind)

    return jax.jit(jax.vmap(per_point, in_axes=(0, None)))


_CHUNK = 16384


def _bucket(n):
    b = 64
    while b < n:
        b *= 2
    return b


def _run(metric_id, kind, pts, theta):
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    fn = _compiled(metric_id, kind)
    n = pts.shape[0]
    outs = []
    for start in range(0, max(n, 1), _CHUNK):
        block = pts[start : start + _CHUNK]
        m = block.shape[0]
        size = _CHUNK if n > _CHUNK else _bucket(m)
        padded = np.zeros((size, 3))
        padded[:m] = block
        res = fn(padded, theta)
        if not isinstance(res, tuple):
            res = (res,)
        outs.append([np.asarray(r)[:m] for r in res])
    return tuple(np.concatenate([o[i] for o in outs], axis=0) for i in range(len(outs[0])))


def _check_chart(spec, pts, exc=OutOfChart):
    r = np.linalg.norm(np.asarray(pts).reshape(-1, 3), axis=1)
    if np.any(~np.isfinite(r)) or np.any(r >= spec.chart_radius):
        raise exc(f"point outside chart of radius {spec.chart_radius}: |y| = {np.nanmax(r):.4g}")


def ambient_fields(spec: MetricSpec, points, kind="surface"):
    """Vectorized ambient quantities at chart points of shape ``(..., 3)``.

    ``kind`` selects the bundle: ``"geodesic"`` -> (Gamma,), ``"surface"`` ->
    (g, Gamma, Ric), ``"full"`` -> (g, Gamma, Rm, Ric, dRic).  ``Gamma[k, i, j]``
    is Gamma^k_ij, ``Rm`` uses the standard sign (see module docstring), and
    ``dRic[p, q, r]`` is the covariant derivative Ric_{pq;r}.  All components
    refer to chart coordinates.
    """
    points = np.asarray(points, dtype=float)
    _check_chart(spec, points)
    res = _run(spec.id, kind, points, spec.theta)
    lead = points.shape[:-1]
    return tuple(r.reshape(lead + r.shape[1:]) for r in res)


# -- jets and curvature at a point --------------------------------------------
@dataclass(frozen=True, eq=False)
class MetricJet:
    point: np.ndarray
    g: np.ndarray
    d1: np.ndarray | None = None
    d2: np.ndarray | None = None
    d3: np.ndarray | None = None
    d4: np.ndarray | None = None

    @property
    def order(self):
        return sum(d is not None for d in (self.d1, self.d2, self.d3, self.d4))

    def taylor(self):
        """The metric's Taylor polynomial about ``point`` as a JAX function of the offset."""
        blocks = [self.g, self.d1, self.d2, self.d3, self.d4]
        blocks = [jnp.asarray(b) for b in blocks if b is not None]

        def g_of(z):
            out = blocks[0]
            for n, d in enumerate(blocks[1:], start=1):
                t = d
                for _ in range(n):
                    t = t @ z
                out = out + t / math.factorial(n)
            return out

        return g_of


def metric_jet(spec: MetricSpec, y, order: int = 2) -> MetricJet:
    """Metric components at ``y`` and partial derivatives up to ``order``.

    ``d_k`` has the metric indices first and the ``k`` differentiation indices
    last, e.g. ``d2[i, j, a, b] = d_a d_b g_ij``.
    """
    if order not in range(5):
        raise OrderUnsupported(f"order must be in 0..4, got {order}")
    y = np.asarray(y, dtype=float).reshape(3)
    _check_chart(spec, y)
    res = _run(spec.id, f"jet{order}", y[None], spec.theta)
    blocks = [r[0] for r in res] + [None] * (4 - order)
    return MetricJet(y, *blocks)


def orthonormal_frame(g):
    """Symmetric inverse square root of ``g``; its columns are g-orthonormal."""
    w, v = np.linalg.eigh(np.asarray(g, dtype=float))
    if np.any(w <= 0):
        raise DegenerateMetric(f"metric not positive definite, eigenvalues {w}")
    return (v / np.sqrt(w)) @ v.T


@dataclass(frozen=True, eq=False)
class CurvaturePoint:
    """Curvature data at one point, components in an orthonormal frame."""

    riemann: np.ndarray  # R_ipqj, R = -Rm
    ric: np.ndarray
    sc: float
    dric: np.ndarray  # Ric_{pq,r}
    dsc: np.ndarray
    d2ric: np.ndarray  # Ric_{pq,rs}
    d2sc: np.ndarray
    lap_ric: np.ndarray
    frame: np.ndarray  # columns: frame vectors in chart components

    def to_dict(self):
        return {
            "sc": self.sc,
            "ric": self.ric.tolist(),
            "dsc": self.dsc.tolist(),
            "d2sc": self.d2sc.tolist(),
            "lap_ric": self.lap_ric.tolist(),
            "frame": self.frame.tolist(),
        }

    @classmethod
    def flat(cls):
        z = np.zeros
        return cls(z((3, 3, 3, 3)), z((3, 3)), 0.0, z((3, 3, 3)), z(3), z((3, 3, 3, 3)), z((3, 3)), z((3, 3)), np.eye(3))

    @classmethod
    def from_ricci(cls, ric, riemann=None):
        """Curvature data with only Ric (and optionally R) prescribed; derivatives zero."""
        ric = np.asarray(ric, dtype=float)
        base = cls.flat()
        return cls(
            base.riemann if riemann is None else np.asarray(riemann, dtype=float),
            ric, float(np.trace(ric)), base.dric, base.dsc, base.d2ric, base.d2sc, base.lap_ric, base.frame,
        )


def _to_frame(T, E):
    for axis in range(T.ndim):
        T = np.moveaxis(np.tensordot(T, E, axes=([axis], [0])), -1, axis)
    return T


@jax.jit
def _point_curvature(g, d1, d2, d3, d4):
    def g_of(z):
        return g + d1 @ z + (d2 @ z) @ z / 2.0 + ((d3 @ z) @ z) @ z / 6.0 + (((d4 @ z) @ z) @ z) @ z / 24.0

    F = _field_functions(g_of)
    z = jnp.zeros(3, dtype=g.dtype)
    Rm, ric = F["curv"](z)
    return Rm, ric, F["dric"](z), F["ddric"](z), F["dsc"](z), F["ddsc"](z)


def curvature_point(jet: MetricJet, frame=None) -> CurvaturePoint:
    """Full curvature data at the jet's base point.

    ``frame`` (3x3, columns = chart components of g-orthonormal vectors)
    defaults to the symmetric inverse square root of g.
    """
    if jet.order < 4:
        raise JetOrderTooLow("curvature_point needs a jet of order 4")
    E = orthonormal_frame(jet.g) if frame is None else np.asarray(frame, dtype=float)
    blocks = tuple(jnp.asarray(b) for b in (jet.g, jet.d1, jet.d2, jet.d3, jet.d4))
    Rm, ric, dric, ddric, dsc, ddsc = (np.asarray(t) for t in _point_curvature(*blocks))
    ginv = np.linalg.inv(jet.g)
    sc = float(np.einsum("jk,jk->", ginv, ric))
    lap = np.einsum("rs,pqrs->pq", ginv, ddric)
    return CurvaturePoint(
        riemann=-_to_frame(Rm, E),
        ric=_to_frame(ric, E),
        sc=sc,
        dric=_to_frame(dric, E),
        dsc=_to_frame(dsc, E),
        d2ric=_to_frame(ddric, E),
        d2sc=_to_frame(ddsc, E),
        lap_ric=_to_frame(lap, E),
        frame=E,
    )


def curvature_at(spec: MetricSpec, y, frame=None) -> CurvaturePoint:
    return curvature_point(metric_jet(spec, y, 4), frame)


def scalar_curvature(spec, points):
    return _run(spec.id, "scalar", points, spec.theta)[0]


def scalar_gradient(spec, points):
    """Chart gradient d_p Sc (order-3 jets, analytic)."""
    pts = np.asarray(points, dtype=float)
    _check_chart(spec, pts)
    return _run(spec.id, "dsc", pts.reshape(-1, 3), spec.theta)[0].reshape(pts.shape)


# -- critical points of the scalar curvature ----------------------------------
@dataclass(frozen=True, eq=False)
class CriticalPoint:
    location: np.ndarray
    hessian: np.ndarray  # orthonormal-frame Hessian of Sc
    min_abs_eigenvalue: float
    gradient_norm: float
    sc: float
    iterations: int = 0

    def to_dict(self):
        return {
            "location": self.location.tolist(),
            "hessian": self.hessian.tolist(),
            "hessian_eigenvalues": np.linalg.eigvalsh(self.hessian).tolist(),
            "min_abs_eigenvalue": self.min_abs_eigenvalue,
            "gradient_norm": self.gradient_norm,
            "sc": self.sc,
            "iterations": self.iterations,
        }


def _fd_hessian(spec, y, h):
    steps = np.eye(3) * h
    pts = np.concatenate([y + steps, y - steps])
    grads = scalar_gradient(spec, pts)
    H = (grads[:3] - grads[3:]).T / (2.0 * h)
    return 0.5 * (H + H.T)


def find_scalar_critical(spec: MetricSpec, guess, tol=1e-10, max_iter=50, eig_threshold=1e-6) -> CriticalPoint:
    y = np.asarray(guess, dtype=float).reshape(3)
    _check_chart(spec, y)
    h = 1e-4 * spec.chart_radius
    it = 0
    for it in range(max_iter + 1):
        grad = scalar_gradient(spec, y[None])[0]
        gnorm = float(np.linalg.norm(grad))
        H = _fd_hessian(spec, y, h)
        E = orthonormal_frame(metric_jet(spec, y, 0).g)
        Hf = E.T @ H @ E
        eig = np.linalg.eigvalsh(Hf)
        min_eig = float(np.abs(eig).min())
        if min_eig < eig_threshold:
            raise DegenerateHessian(f"Hessian of Sc degenerate near {y}: eigenvalues {eig}")
        if gnorm <= tol:
            sc = float(scalar_curvature(spec, y[None])[0])
            return CriticalPoint(y, Hf, min_eig, gnorm, sc, it)
        step = np.linalg.solve(H, grad)
        y = y - step
        _check_chart(spec, y)
    raise NoConvergence(f"no critical point of Sc found after {max_iter} Newton steps")
