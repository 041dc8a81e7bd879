"""Linearized constrained Willmore operator and the solver Jacobian.

Sign conventions.  The residual is ``r^3 (Lap H + H|A°|^2 + H Ric(nu,nu) + lam H)``.
The classical linearization ``W_mu`` below is written for the operator
``-(Lap H + H|A°|^2 + H Ric(nu,nu)) + mu H``; hence for a normal variation with
speed ``r f`` the residual changes by ``-apply_linearized(state, lam, f)``,
where ``apply_linearized`` evaluates ``r^4 W_mu f`` with ``mu = -lam``.

In the zeroth-order coefficient Q the ambient terms enter as
``2H <A°, T> - H (nabla Ric)(nu,nu,nu) - H^2 Ric(nu,nu)/2`` with
``T = Rm(., nu, nu, .)``; these signs are the ones that reproduce the
derivative of the residual.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SingularJacobian
from .metric import MetricSpec
from .normal_chart import Frame, parallel_frame
from .sphere import HarmonicField, n_coeffs, project_kernel
from .surface import GEOMETRY_PAD, SurfaceState, _pad, embed_batch, residual_values

__all__ = [
    "apply_linearized",
    "LinearizedSystem",
    "ResidualMap",
    "assemble_jacobian",
    "unknowns_to_vector",
    "vector_to_unknowns",
]

COND_LIMIT = 1e12


def _grid_values(state, f):
    if isinstance(f, HarmonicField):
        return state.grid.synthesize_array(_pad(f.coeffs, state.grid.L))
    return np.asarray(f, dtype=float)


def apply_linearized(state: SurfaceState, lam: float, f, raw: bool = False):
    """``r^4 W_mu f`` on the surface of ``state`` with ``mu = -lam``.

    ``f`` is a HarmonicField or grid values; ``raw=True`` returns grid values.
    """
    r = state.scale
    mu = -lam
    fv = _grid_values(state, f)
    hinv = state.inv_metric
    H = state.mean_curv
    Ao = state.second_ff - 0.5 * H[:, None, None] * state.induced_metric
    Ao_up = np.einsum("nac,ncd,nbd->nab", hinv, Ao, hinv)
    pot = state.A_sq + state.ric_nn

    grad_f, hess_f, lap_f = state.scalar_calculus(fv)
    Lf = -lap_f - pot * fv
    _, _, lap_Lf = state.scalar_calculus(Lf)
    LLf = -lap_Lf - pot * Lf

    grad_H = state.grad_H
    hess_H, lap_H = state.scalar_calculus(H)[1:]
    grad_f_up = np.einsum("nab,nb->na", hinv, grad_f)
    grad_H_up = np.einsum("nab,nb->na", hinv, grad_H)
    # omega = Ric(nu, .) restricted to tangents
    omega = np.einsum("ni,nij,anj->na", state.normal, state.ricci, state.tangents)

    dH_df = np.einsum("na,na->n", grad_H, grad_f_up)
    term_h2 = -0.5 * (H**2 * lap_f + 2.0 * H * dH_df)
    # div(H A°(grad f, .)) using Codazzi: div A° = dH/2 + omega
    Ao_HF = np.einsum("na,nb,nab->n", grad_H, grad_f, Ao_up)
    div_v = Ao_HF + H * (0.5 * dH_df + np.einsum("na,na->n", omega, grad_f_up)) + H * np.einsum(
        "nab,nab->n", Ao_up, hess_f
    )
    term_ao = 2.0 * div_v

    rm, dric = state.ambient_full
    nu = state.normal
    Ya = state.tangents
    # T(X, Y) = Rm(X, nu, nu, Y): sectional-curvature sign
    T = np.einsum("nijkl,ani,nj,nk,bnl->nab", rm, Ya, nu, nu, Ya)
    dric_nnn = np.einsum("nijk,ni,nj,nk->n", dric, nu, nu, nu)
    Q = (
        np.einsum("na,na->n", grad_H, grad_H_up)
        + 2.0 * np.einsum("na,na->n", omega, grad_H_up)
        + H * lap_H
        + 2.0 * np.einsum("nab,nab->n", hess_H, Ao_up)
        + 2.0 * H**2 * state.traceless_sq
        + 2.0 * H * np.einsum("nab,nab->n", Ao_up, T)
        - H * dric_nnn
        - 0.5 * H**2 * state.A_sq
        - 0.5 * H**2 * state.ric_nn
    )
    W = LLf + term_h2 + term_ao + mu * Lf + fv * Q
    out = r**4 * W
    if raw:
        return out
    L = f.L if isinstance(f, HarmonicField) else state.L
    return HarmonicField(L, _pad(state.grid.analyze_array(out), L))


# -- unknown vector layout ---------------------------------------------------
def unknowns_to_vector(lam, tau, phi: HarmonicField):
    return np.concatenate([[lam], np.asarray(tau, dtype=float), phi.coeffs[4:]])


def vector_to_unknowns(v, L):
    c = np.zeros(n_coeffs(L))
    c[4:] = v[4:]
    return float(v[0]), np.array(v[1:4]), HarmonicField(L, c)


def _rows(coeffs):
    """Residual coefficients reordered to (P0, P1, K-perp) rows."""
    coeffs = np.atleast_2d(coeffs)
    L = int(round(np.sqrt(coeffs.shape[-1]))) - 1
    out = np.empty_like(coeffs)
    for k, c in enumerate(coeffs):
        p0, p1, rem = project_kernel(HarmonicField(L, c))
        out[k, 0] = p0
        out[k, 1:4] = p1
        out[k, 4:] = rem.coeffs[4:]
    return out


@dataclass
class ResidualMap:
    """The rescaled residual as a function of (lam, tau, phi) at fixed r.

    ``origin`` and ``frame`` describe the point p and its orthonormal frame;
    ``tau`` offsets the sphere center along geodesics from p.
    """

    spec: MetricSpec
    r: float
    L: int
    origin: np.ndarray
    frame: np.ndarray
    pad: int = GEOMETRY_PAD
    _frames: dict = field(default_factory=dict, repr=False)

    def frame_at(self, tau) -> Frame:
        tau = np.asarray(tau, dtype=float)
        key = tau.tobytes()
        fr = self._frames.get(key)
        if fr is None:
            fr = parallel_frame(self.spec, tau, self.origin, self.frame)
            if len(self._frames) > 32:
                self._frames.clear()
            self._frames[key] = fr
        return fr

    def geometry(self, tau, phi_coeffs):
        return embed_batch(self.spec, self.frame_at(tau), self.r, phi_coeffs, self.L, self.pad)

    def coeffs(self, geo, lam):
        vals = residual_values(geo, self.r, lam)
        c = geo["grid"].analyze_array(vals)
        return _pad(c, self.L)

    def evaluate(self, lam, tau, phi_coeffs):
        """Residual coefficients (B, n) for a batch of phi coefficient arrays."""
        geo = self.geometry(tau, phi_coeffs)
        return self.coeffs(geo, lam), geo

    def grid_sup(self, geo, lam):
        return float(np.abs(residual_values(geo, self.r, lam)).max())


@dataclass
class LinearizedSystem:
    matrix: np.ndarray
    rhs: np.ndarray
    L: int
    freeze_tau: bool = False
    row_blocks: tuple = ("K0", "K1", "Kperp")

    @property
    def condition(self):
        return float(np.linalg.cond(self._active()))

    def _active(self):
        if self.freeze_tau:
            keep = np.r_[0, 4 : self.matrix.shape[0]]
            return self.matrix[np.ix_(keep, keep)]
        return self.matrix

    def kperp_block(self):
        return self.matrix[4:, 4:]

    def solve(self):
        """Newton step ``delta`` with ``matrix @ delta = -rhs`` (tau frozen if requested)."""
        A = self._active()
        cond = np.linalg.cond(A)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise SingularJacobian(f"Jacobian condition number {cond:.3e}")
        if self.freeze_tau:
            keep = np.r_[0, 4 : self.matrix.shape[0]]
            step = np.zeros(self.matrix.shape[1])
            step[keep] = np.linalg.solve(A, -self.rhs[keep])
            return step
        return np.linalg.solve(A, -self.rhs)


def assemble_jacobian(
    rmap: ResidualMap,
    phi: HarmonicField,
    lam: float,
    tau=(0.0, 0.0, 0.0),
    freeze_tau: bool = False,
    base=None,
    central: bool = False,
) -> LinearizedSystem:
    """Jacobian of the (P0, P1, K-perp) residual rows over (lam, tau, phi_{l>=2}).

    ``base`` may pass a precomputed (coefficients, geometry) pair at the
    expansion point.  Graph columns use forward differences unless
    ``central`` is set.
    """
    tau = np.asarray(tau, dtype=float)
    L = rmap.L
    n = n_coeffs(L)
    if base is None:
        base = rmap.evaluate(lam, tau, phi.coeffs[None])
    c0, geo0 = base
    J = np.zeros((n, n))
    # lam column: residual is affine in lam with slope r^3 H
    hcol = geo0["grid"].analyze_array(rmap.r**3 * geo0["mean_curv"])
    J[:, 0] = _rows(_pad(hcol, L))[0]
    # tau columns by central differences
    if not freeze_tau:
        h = 1e-4 * rmap.r
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            cp = rmap.evaluate(lam, tau + e, phi.coeffs[None])[0]
            cm = rmap.evaluate(lam, tau - e, phi.coeffs[None])[0]
            J[:, 1 + i] = _rows(cp - cm)[0] / (2.0 * h)
    # phi columns by batched finite differences
    step = 1e-6 * max(1.0, float(np.linalg.norm(phi.coeffs)))
    cols = np.arange(4, n)
    for chunk in np.array_split(cols, max(1, cols.size // 160)):
        k = chunk.size
        if central:
            P = np.repeat(phi.coeffs[None], 2 * k, axis=0)
            P[np.arange(k), chunk] += step
            P[k + np.arange(k), chunk] -= step
            cc = rmap.evaluate(lam, tau, P)[0]
            diff = (cc[:k] - cc[k:]) / (2.0 * step)
        else:
            P = np.repeat(phi.coeffs[None], k, axis=0)
            P[np.arange(k), chunk] += step
            cc = rmap.evaluate(lam, tau, P)[0]
            diff = (cc - c0[0]) / step
        J[:, chunk] = _rows(diff).T
    rhs = _rows(c0)[0]
    if not np.all(np.isfinite(J)):
        raise SingularJacobian("non-finite Jacobian entries")
    return LinearizedSystem(J, rhs, L, freeze_tau)
