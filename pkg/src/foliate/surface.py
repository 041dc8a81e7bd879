"""Embedded graph spheres, their geometry, and the constrained Willmore residual.

A surface is parameterized by the unit sphere: the point with direction ``x``
sits at ``exp_c(rho(x) x^i e_i)`` with ``rho = r (1 + r^2 phi(x))``, where
``(c, e)`` is a frame.  Everything is computed in the original chart: metric
quantities come from analytic jets at the surface points, and derivatives along
the surface are taken pseudospectrally in the colatitude/longitude variables.
"""
from __future__ import annotations

import csv
import io
import json
from collections import OrderedDict
from dataclasses import dataclass
from functools import cached_property, lru_cache

import jax
import jax.numpy as jnp
import numpy as np

from .errors import GraphDegenerate, OutOfRange
from .metric import CATALOG, CurvaturePoint, MetricSpec, _christoffel as _jax_christoffel, _run, _check_chart
from .normal_chart import Frame, geodesic_flow
from .sphere import HarmonicField, SphereGrid, build_grid, n_coeffs

__all__ = [
    "SurfaceState",
    "geometry_grid",
    "embed_surface",
    "embed_batch",
    "willmore_residual",
    "residual_values",
    "willmore_energy",
    "surface_area",
    "codazzi_residual",
    "expansion_residual",
    "expansion_mean_curv",
    "expansion_shape_det",
    "expansion_traceless_sq",
    "expansion_lap_H",
    "expansion_check",
    "ExpansionFit",
    "export_state",
]

GEOMETRY_PAD = 4
_DERIVS = ("t", "p", "tt", "tp", "pp")


@lru_cache(maxsize=None)
def geometry_grid(L: int, pad: int = GEOMETRY_PAD) -> SphereGrid:
    """Collocation grid used for surface geometry of degree-``L`` graph functions."""
    return build_grid(L + pad)


def _pad(coeffs, L_to):
    coeffs = np.asarray(coeffs, dtype=float)
    n = n_coeffs(L_to)
    if coeffs.shape[-1] >= n:
        return coeffs[..., :n]
    out = np.zeros(coeffs.shape[:-1] + (n,))
    out[..., : coeffs.shape[-1]] = coeffs
    return out


# -- positions -----------------------------------------------------------------
@lru_cache(maxsize=None)
def _advance_fn(metric_id, substeps=2):
    """Continue geodesics (x, v) from t = 1 to t = 1 + dt with RK4."""
    gfun = CATALOG[metric_id].fn

    def one(x, v, dt, theta):
        gamma = _jax_christoffel(lambda y: gfun(y, theta))

        def f(s):
            return jnp.concatenate([s[3:], -jnp.einsum("kij,i,j->k", gamma(s[:3]), s[3:], s[3:])])

        h = dt / substeps
        s = jnp.concatenate([x, v])
        for _ in range(substeps):
            k1 = f(s)
            k2 = f(s + 0.5 * h * k1)
            k3 = f(s + 0.5 * h * k2)
            k4 = f(s + h * k3)
            s = s + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        return s[:3]

    return jax.jit(jax.vmap(one, in_axes=(0, 0, 0, None)))


_CHUNK = 16384
_BASE_CACHE: OrderedDict = OrderedDict()


def _base_geodesics(spec, frame, r, grid):
    key = (spec.id, spec.theta.tobytes(), spec.chart_radius, frame.base.tobytes(), frame.vectors.tobytes(), float(r), grid.L)
    hit = _BASE_CACHE.get(key)
    if hit is not None:
        _BASE_CACHE.move_to_end(key)
        return hit
    u = grid.points @ frame.vectors.T
    out = geodesic_flow(spec, frame.base, r * u)
    _BASE_CACHE[key] = out
    while len(_BASE_CACHE) > 16:
        _BASE_CACHE.popitem(last=False)
    return out


def _positions(spec, frame, r, grid, phi_vals):
    X, V = _base_geodesics(spec, frame, r, grid)
    dt = r**2 * phi_vals  # (B, N)
    B, N = dt.shape
    if not np.any(dt):
        return np.broadcast_to(X, (B, N, 3)).copy()
    fn = _advance_fn(spec.id)
    xs = np.broadcast_to(X, (B, N, 3)).reshape(-1, 3)
    vs = np.broadcast_to(V, (B, N, 3)).reshape(-1, 3)
    ds = dt.reshape(-1)
    out = np.empty_like(xs)
    theta = spec.theta
    total = xs.shape[0]
    for start in range(0, total, _CHUNK):
        sl = slice(start, min(start + _CHUNK, total))
        m = sl.stop - sl.start
        size = _CHUNK if total > _CHUNK else max(64, 1 << (m - 1).bit_length())
        px = np.zeros((size, 3))
        pv = np.zeros((size, 3))
        pd = np.zeros(size)
        px[:m], pv[:m], pd[:m] = xs[sl], vs[sl], ds[sl]
        out[sl] = np.asarray(fn(px, pv, pd, theta))[:m]
    return out.reshape(B, N, 3)


# -- geometry ------------------------------------------------------------------
def _surface_derivs(grid, values):
    """Pseudospectral (theta, phi) derivatives of grid fields ``values`` (..., N)."""
    c = grid.analyze_array(values)
    return {d: grid.synthesize_array(c, d) for d in _DERIVS}


def _inv2(h):
    det = h[..., 0, 0] * h[..., 1, 1] - h[..., 0, 1] * h[..., 1, 0]
    inv = np.empty_like(h)
    inv[..., 0, 0] = h[..., 1, 1] / det
    inv[..., 1, 1] = h[..., 0, 0] / det
    inv[..., 0, 1] = -h[..., 0, 1] / det
    inv[..., 1, 0] = -h[..., 1, 0] / det
    return inv, det


def _geometry(spec, frame, r, grid, Y, ambient="surface"):
    """Extrinsic geometry for a batch of embeddings ``Y`` of shape (B, N, 3)."""
    B, N, _ = Y.shape
    _check_chart(spec, Y)
    comps = Y.transpose(0, 2, 1)  # (B, 3, N)
    D = _surface_derivs(grid, comps)
    Ya = np.stack([D["t"], D["p"]], axis=1).transpose(0, 1, 3, 2)  # (B, 2, N, 3)
    Yab = np.stack(
        [np.stack([D["tt"], D["tp"]], 1), np.stack([D["tp"], D["pp"]], 1)], 1
    ).transpose(0, 1, 2, 4, 3)  # (B, 2, 2, N, 3)
    fields = _run(spec.id, ambient, Y.reshape(-1, 3), spec.theta)
    g = fields[0].reshape(B, N, 3, 3)
    G = fields[1].reshape(B, N, 3, 3, 3)
    ric = fields[-1 if ambient == "surface" else 3].reshape(B, N, 3, 3)

    h = np.einsum("banj,bnjk,bcnk->bnac", Ya, g, Ya)
    hinv, deth = _inv2(h)
    cov = Yab + np.einsum("bnkij,banj,bcni->bacnk", G, Ya, Ya)  # nabla_a Y_b
    conormal = np.cross(Ya[:, 0], Ya[:, 1])  # covector components
    ginv = np.linalg.inv(g)
    nu = np.einsum("bnij,bnj->bni", ginv, conormal)
    nu /= np.sqrt(np.einsum("bni,bni->bn", nu, conormal))[..., None]
    gnu = np.einsum("bnij,bnj->bni", g, nu)
    A = -np.einsum("bacni,bni->bnac", cov, gnu)
    H = np.einsum("bnac,bnac->bn", hinv, A)
    Amix = np.einsum("bnac,bncd->bnad", hinv, A)
    A_sq = np.einsum("bnad,bnda->bn", Amix, Amix)
    shape_det = (A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]) / deth
    gYd = np.einsum("bnij,bdnj->bdni", g, Ya)
    Gam2 = np.einsum("zncd,zdni,zabni->zncab", hinv, gYd, cov)  # Gamma^c_ab
    ric_nn = np.einsum("bni,bnij,bnj->bn", nu, ric, nu)
    return dict(
        position=Y,
        tangents=Ya,
        induced_metric=h,
        inv_metric=hinv,
        det_h=deth,
        normal=nu,
        second_ff=A,
        mean_curv=H,
        A_sq=A_sq,
        traceless_sq=A_sq - 0.5 * H**2,
        shape_det=shape_det,
        ric_nn=ric_nn,
        hess_pos=cov,
        gamma2=Gam2,
        metric=g,
        christoffel=G,
        ricci=ric,
        extra=fields,
    )


def _scalar_calculus(grid, hinv, gamma2, values):
    """Gradient, intrinsic Hessian and Laplacian of scalar grid fields (B, N)."""
    D = _surface_derivs(grid, values)
    grad = np.stack([D["t"], D["p"]], axis=-1)  # (B, N, 2)
    second = np.stack([np.stack([D["tt"], D["tp"]], -1), np.stack([D["tp"], D["pp"]], -1)], -2)
    hess = second - np.einsum("zncab,znc->znab", gamma2, grad)
    lap = np.einsum("znab,znab->zn", hinv, hess)
    return grad, hess, lap


@dataclass(frozen=True, eq=False)
class SurfaceState:
    """Geometry of one embedded sphere sampled on a collocation grid.

    Grid fields have a leading axis over grid nodes; tensors on the surface are
    in (theta, phi) coordinate components, ambient vectors in chart components.
    """

    spec: MetricSpec
    frame: Frame
    scale: float
    phi: HarmonicField
    grid: SphereGrid
    position: np.ndarray
    tangents: np.ndarray  # (2, N, 3)
    induced_metric: np.ndarray
    inv_metric: np.ndarray
    normal: np.ndarray
    second_ff: np.ndarray
    mean_curv: np.ndarray
    A_sq: np.ndarray
    traceless_sq: np.ndarray
    shape_det: np.ndarray
    lap_H: np.ndarray
    grad_H: np.ndarray
    ric_nn: np.ndarray
    area_element: np.ndarray
    hess_pos: np.ndarray
    gamma2: np.ndarray
    metric: np.ndarray
    christoffel: np.ndarray
    ricci: np.ndarray

    @property
    def tau(self):
        return self.frame.tau

    @property
    def L(self):
        return self.phi.L

    def scalar_calculus(self, values):
        """(gradient, Hessian, Laplacian) of a grid scalar field along the surface."""
        values = np.asarray(values, dtype=float)
        grad, hess, lap = _scalar_calculus(self.grid, self.inv_metric[None], self.gamma2[None], values[None])
        return grad[0], hess[0], lap[0]

    @cached_property
    def ambient_full(self):
        """(Rm, dRic) at the surface points; Rm with the standard sign."""
        res = _run(self.spec.id, "full", self.position, self.spec.theta)
        return res[2], res[4]


def _check_graph(r, phi_vals):
    s = 1.0 + r**2 * phi_vals
    if np.min(s) <= 0.5:
        raise GraphDegenerate(f"1 + r^2 phi reaches {np.min(s):.3g} <= 1/2")


def embed_batch(spec: MetricSpec, frame: Frame, r: float, phi_coeffs, L: int, pad: int = GEOMETRY_PAD, ambient="surface"):
    """Geometry dictionaries for a batch of graph functions (B, n_coeffs(L))."""
    if not 0.0 < r < 0.5 * spec.chart_radius:
        raise OutOfRange(f"r = {r} outside (0, chart_radius/2)")
    grid = geometry_grid(L, pad)
    coeffs = np.atleast_2d(phi_coeffs)
    vals = grid.synthesize_array(_pad(coeffs, grid.L))
    _check_graph(r, vals)
    Y = _positions(spec, frame, r, grid, vals)
    geo = _geometry(spec, frame, r, grid, Y, ambient)
    grad, _, lap = _scalar_calculus(grid, geo["inv_metric"], geo["gamma2"], geo["mean_curv"])
    geo["grad_H"] = grad
    geo["lap_H"] = lap
    geo["area_element"] = np.sqrt(geo["det_h"]) / grid.sin_theta
    geo["grid"] = grid
    return geo


def embed_surface(spec: MetricSpec, frame: Frame, r: float, phi: HarmonicField | None = None, pad: int = GEOMETRY_PAD, L: int = 16) -> SurfaceState:
    """Embed the graph sphere of height ``r^2 phi`` over the geodesic sphere of radius ``r``."""
    if phi is None:
        phi = HarmonicField.zeros(L)
    geo = embed_batch(spec, frame, r, phi.coeffs[None], phi.L, pad)
    take = lambda k: geo[k][0]  # noqa: E731
    return SurfaceState(
        spec=spec,
        frame=frame,
        scale=float(r),
        phi=phi,
        grid=geo["grid"],
        position=take("position"),
        tangents=take("tangents"),
        induced_metric=take("induced_metric"),
        inv_metric=take("inv_metric"),
        normal=take("normal"),
        second_ff=take("second_ff"),
        mean_curv=take("mean_curv"),
        A_sq=take("A_sq"),
        traceless_sq=take("traceless_sq"),
        shape_det=take("shape_det"),
        lap_H=take("lap_H"),
        grad_H=take("grad_H"),
        ric_nn=take("ric_nn"),
        area_element=take("area_element"),
        hess_pos=take("hess_pos"),
        gamma2=take("gamma2"),
        metric=take("metric"),
        christoffel=take("christoffel"),
        ricci=take("ricci"),
    )


# -- functionals ---------------------------------------------------------------
def residual_values(geo_or_state, r, lam):
    """Grid values of r^3 (Lap H + H |A°|^2 + H Ric(nu, nu) + lam H)."""
    get = geo_or_state.__getitem__ if isinstance(geo_or_state, dict) else lambda k: getattr(geo_or_state, k)
    H = get("mean_curv")
    return r**3 * (get("lap_H") + H * (get("traceless_sq") + get("ric_nn") + lam))


def willmore_residual(state: SurfaceState, lam: float, L: int | None = None) -> HarmonicField:
    vals = residual_values(state, state.scale, lam)
    c = state.grid.analyze_array(vals)
    L = state.L if L is None else L
    return HarmonicField(L, _pad(c, L))


def surface_area(state: SurfaceState) -> float:
    return float(state.grid.integrate(state.area_element))


def willmore_energy(state: SurfaceState) -> float:
    return float(state.grid.integrate(0.25 * state.mean_curv**2 * state.area_element))


def codazzi_residual(state: SurfaceState) -> float:
    """sup |div A° - dH/2 - omega| with omega = Ric(nu, .) on tangent vectors.

    The divergence is computed from the ambient components of A° (smooth on
    the sphere), so no coordinate singularity enters.
    """
    grid = state.grid
    hinv = state.inv_metric
    Ao = state.second_ff - 0.5 * state.mean_curv[:, None, None] * state.induced_metric
    Aup = np.einsum("nac,ncd,nbd->nab", hinv, Ao, hinv)
    Ya = state.tangents  # (2, N, 3)
    T = np.einsum("nab,ani,bnj->ijn", Aup, Ya, Ya)  # ambient contravariant components
    D = _surface_derivs(grid, T)
    dT = np.stack([D["t"], D["p"]], axis=0)  # (a, i, j, N)
    G = state.christoffel
    cov = (
        dT
        + np.einsum("nikl,ank,ljn->aijn", G, Ya, T)
        + np.einsum("njkl,ank,iln->aijn", G, Ya, T)
    )
    g = state.metric
    Yup = np.einsum("nab,bni->ani", hinv, Ya)
    # contract the differentiated direction with the first slot
    div_vec = np.einsum("ani,nik,akjn->nj", Yup, g, cov)
    div_form = np.einsum("nj,njk,bnk->nb", div_vec, g, Ya)  # tangential covector
    omega = np.einsum("ni,nij,bnj->nb", state.normal, state.ricci, Ya)
    res = div_form - 0.5 * state.grad_H - omega
    norm = np.sqrt(np.einsum("na,nab,nb->n", res, hinv, res))
    return float(norm.max())


# -- closed-form expansions (rescaled, on the unit sphere) --------------------
def _quartic(T, x):
    return np.einsum("...pqrs,np,nq,nr,ns->n", T, x, x, x, x)


def _quad(T, x):
    return np.einsum("pq,np,nq->n", T, x, x)


def _cubic(T, x):
    return np.einsum("pqr,np,nq,nr->n", T, x, x, x)


def _rr(curv):
    R = curv.riemann
    return np.einsum("ipqt,irst->pqrs", R, R)


def expansion_mean_curv(curv: CurvaturePoint, r, x):
    """r * H on the geodesic sphere of radius r, through r^4."""
    return (
        2.0
        - r**2 / 3.0 * _quad(curv.ric, x)
        - r**3 / 4.0 * _cubic(curv.dric, x)
        - r**4 * _quartic(curv.d2ric / 10.0 + _rr(curv) / 45.0, x)
    )


def expansion_shape_det(curv: CurvaturePoint, r, x):
    """r^2 * det(shape operator) on the geodesic sphere of radius r, through r^4."""
    rr = np.einsum("pq,rs->pqrs", curv.ric, curv.ric)
    return (
        1.0
        - r**2 / 3.0 * _quad(curv.ric, x)
        - r**3 / 4.0 * _cubic(curv.dric, x)
        + r**4 * _quartic(-curv.d2ric / 10.0 - 7.0 / 90.0 * _rr(curv) + rr / 18.0, x)
    )


def expansion_traceless_sq(curv: CurvaturePoint, r, x):
    """r^2 * |A°|^2 on the geodesic sphere of radius r, through r^4."""
    rr = np.einsum("pq,rs->pqrs", curv.ric, curv.ric)
    return r**4 * _quartic(_rr(curv) / 9.0 - rr / 18.0, x)


def _quadratic_r4(curv, lam=0.0):
    R, ric = curv.riemann, curv.ric
    return (
        lam / 3.0 * ric
        + 3.0 / 5.0 * curv.d2sc
        + curv.lap_ric / 5.0
        - 2.0 / 45.0 * ric @ ric
        + 4.0 / 45.0 * np.einsum("kl,kpql->pq", ric, R)
        + 8.0 / 45.0 * np.einsum("klpm,klqm->pq", R, R)
    )


def _kpql_kstl(curv):
    R = curv.riemann
    return np.einsum("kpql,kstl->pqst", R, R)


def expansion_lap_H(curv: CurvaturePoint, r, x):
    """r^3 * Lap H on the geodesic sphere of radius r, through r^4."""
    rr = np.einsum("pq,rs->pqrs", curv.ric, curv.ric)
    quartic = 2.0 * curv.d2ric + 4.0 / 9.0 * _kpql_kstl(curv) - 2.0 / 9.0 * rr
    return (
        -2.0 / 3.0 * r**2 * curv.sc
        + 2.0 * r**2 * _quad(curv.ric, x)
        - r**3 * x @ curv.dsc
        + 3.0 * r**3 * _cubic(curv.dric, x)
        - r**4 * _quad(_quadratic_r4(curv), x)
        + r**4 * _quartic(quartic, x)
    )


def expansion_residual(curv: CurvaturePoint, lam: float, r: float, grid: SphereGrid) -> HarmonicField:
    """Closed-form r^4-accurate rescaled residual of the geodesic sphere of radius r."""
    x = grid.points
    rr = np.einsum("pq,st->pqst", curv.ric, curv.ric)
    quartic = 3.0 * curv.d2ric + 2.0 / 3.0 * _kpql_kstl(curv) - 2.0 / 3.0 * rr
    vals = (
        r**2 * (2.0 * lam - 2.0 / 3.0 * curv.sc)
        + 4.0 * r**2 * _quad(curv.ric, x)
        - r**3 * x @ curv.dsc
        + 5.0 * r**3 * _cubic(curv.dric, x)
        - r**4 * _quad(_quadratic_r4(curv, lam), x)
        + r**4 * _quartic(quartic, x)
    )
    return HarmonicField(grid.L, grid.analyze_array(vals))


EXPANSION_QUANTITIES = ("mean_curv", "shape_det", "traceless_sq", "lap_H", "residual")
# differences at or below this are roundoff: rescaled Lap H amplifies it by r^-2
EXACT_ERROR = 1e-9


@dataclass(frozen=True)
class ExpansionFit:
    quantity: str
    tau: tuple
    lam: float
    radii: tuple
    errors: tuple
    slope: float | None  # None when the difference vanishes to roundoff

    @property
    def exact(self):
        return self.slope is None

    def passes(self, threshold=4.5):
        return self.exact or self.slope >= threshold

    def to_dict(self):
        return {
            "quantity": self.quantity,
            "tau": list(self.tau),
            "lambda": self.lam,
            "radii": list(self.radii),
            "errors": list(self.errors),
            "slope": self.slope,
            "exact": self.exact,
        }


def expansion_check(spec: MetricSpec, taus=((0.0, 0.0, 0.0),), lams=None, radii=None, L: int = 16):
    """Sup-norm gaps between embedded geodesic spheres and the r^4 expansions, with log-log slopes.

    ``lams`` are multipliers for the residual; ``None`` stands for -Sc/3 at
    the center.  Returns a list of ExpansionFit.
    """
    from .metric import curvature_at
    from .normal_chart import parallel_frame

    build_grid(L)
    radii = np.geomspace(0.02, 0.1, 5) if radii is None else np.asarray(radii, dtype=float)
    lams = (0.0, None) if lams is None else lams
    fits = []
    for tau in taus:
        tau = np.asarray(tau, dtype=float)
        frame = parallel_frame(spec, tau)
        curv = curvature_at(spec, frame.base, frame.vectors)
        lam_vals = list(dict.fromkeys(-float(curv.sc) / 3.0 + 0.0 if lam is None else float(lam) for lam in lams))
        errs = {q: [] for q in EXPANSION_QUANTITIES[:-1]}
        res_errs = {lam: [] for lam in lam_vals}
        for r in radii:
            st = embed_surface(spec, frame, float(r), L=L)
            x = st.grid.points
            errs["mean_curv"].append(np.abs(r * st.mean_curv - expansion_mean_curv(curv, r, x)).max())
            errs["shape_det"].append(np.abs(r * r * st.shape_det - expansion_shape_det(curv, r, x)).max())
            errs["traceless_sq"].append(np.abs(r * r * st.traceless_sq - expansion_traceless_sq(curv, r, x)).max())
            errs["lap_H"].append(np.abs(r**3 * st.lap_H - expansion_lap_H(curv, r, x)).max())
            for lam in lam_vals:
                num = willmore_residual(st, lam, L).coeffs
                ref = expansion_residual(curv, lam, r, st.grid).coeffs
                diff = _pad(num - _pad(ref, L), st.grid.L)
                res_errs[lam].append(np.abs(st.grid.synthesize_array(diff)).max())
        rows = [(q, 0.0, e) for q, e in errs.items()] + [("residual", lam, e) for lam, e in res_errs.items()]
        for q, lam, e in rows:
            e = np.asarray(e, dtype=float)
            slope = None if e.max() <= EXACT_ERROR else float(np.polyfit(np.log(radii), np.log(e), 1)[0])
            fits.append(ExpansionFit(q, tuple(float(t) for t in tau), float(lam), tuple(float(r) for r in radii), tuple(e.tolist()), slope))
    return fits


# -- export --------------------------------------------------------------------
def export_state(state: SurfaceState, fmt: str = "json") -> str:
    """Grid positions, H, |A°|^2 and area element as JSON or CSV text."""
    cols = {
        "x": state.position[:, 0],
        "y": state.position[:, 1],
        "z": state.position[:, 2],
        "H": state.mean_curv,
        "traceless_sq": state.traceless_sq,
        "area_element": state.area_element,
    }
    if fmt == "json":
        payload = {
            "r": state.scale,
            "tau": state.tau.tolist(),
            "L": state.L,
            "grid_L": state.grid.L,
            "fields": {k: v.tolist() for k, v in cols.items()},
        }
        return json.dumps(payload, indent=1)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in zip(*cols.values()):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()
    raise ValueError(f"unknown export format {fmt!r}")
