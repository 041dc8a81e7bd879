"""Pseudospectral calculus on the unit sphere.

Fields are expanded in real, orthonormal spherical harmonics

    Y_l0  = P_l^0(cos t)
    Y_lm  = sqrt(2) P_l^m(cos t) cos(m p)      (m > 0)
    Y_l-m = sqrt(2) P_l^m(cos t) sin(m p)      (m > 0)

with fully normalized associated Legendre functions without the
Condon-Shortley phase, so that Y_11, Y_1-1, Y_10 are positive multiples of
x, y, z.  A coefficient vector of degree ``L`` is flat, of length
``(L + 1)**2``, and ``a[l*l + l + m]`` holds the ``(l, m)`` entry.

The collocation grid has ``L + 1`` Gauss-Legendre colatitudes (poles
excluded) and ``2L + 2`` equispaced longitudes.  Transforms use an FFT in
longitude and dense Legendre sums in colatitude.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import roots_legendre

from .errors import KernelComponent, LTooSmall, ShapeMismatch

__all__ = [
    "SphereGrid",
    "HarmonicField",
    "build_grid",
    "analyze",
    "synthesize",
    "laplacian_s2",
    "flat_willmore",
    "project_kernel",
    "invert_flat_willmore",
    "phi_zero",
    "n_coeffs",
    "lm_index",
]

KERNEL_TOL = 1e-10


def n_coeffs(L):
    return (L + 1) ** 2


def lm_index(l, m):
    return l * l + l + m


def degrees(L):
    """Degree and order of every flat coefficient slot."""
    l = np.concatenate([np.full(2 * k + 1, k) for k in range(L + 1)])
    m = np.concatenate([np.arange(-k, k + 1) for k in range(L + 1)])
    return l, m


def legendre_tables(L, theta):
    """Normalized P_l^m(cos theta) and its first two theta-derivatives.

    Returns three arrays of shape ``(L + 1, L + 1, len(theta))`` indexed
    ``[m, l, j]``; entries with ``l < m`` are zero.  Derivatives come from the
    three-term ladder relation, which stays accurate close to the poles.
    """
    theta = np.asarray(theta, dtype=float)
    ct, st = np.cos(theta), np.sin(theta)
    nt = theta.size
    P = np.zeros((L + 3, L + 1, nt))
    P[0, 0] = 1.0 / np.sqrt(4.0 * np.pi)
    for m in range(1, L + 1):
        P[m, m] = np.sqrt((2 * m + 1) / (2.0 * m)) * st * P[m - 1, m - 1]
    for m in range(L + 1):
        if m + 1 <= L:
            P[m, m + 1] = np.sqrt(2 * m + 3.0) * ct * P[m, m]
        for l in range(m + 2, L + 1):
            a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            P[m, l] = a * (ct * P[m, l - 1] - b * P[m, l - 2])

    l = np.arange(L + 1)[None, :, None]
    m = np.arange(L + 1)[:, None, None]
    up = 0.5 * np.sqrt(np.clip((l + m) * (l - m + 1), 0, None))
    down = 0.5 * np.sqrt(np.clip((l + m + 1) * (l - m), 0, None))

    def ladder(T):
        # T has rows m = 0..L+2; row "-1" is -T[1] by parity of the ladder
        lower = np.concatenate([-T[1:2], T[: L]], axis=0)
        return up * lower - down * T[1 : L + 2]

    def pad(T):
        return np.concatenate([T, np.zeros((2, L + 1, nt))], axis=0)

    dP = ladder(P)
    d2P = ladder(pad(dP))
    return P[: L + 1], dP, d2P


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Gauss-Legendre x equispaced collocation grid for degree ``L``."""

    L: int
    theta: np.ndarray
    phi: np.ndarray
    gauss_weights: np.ndarray

    @property
    def shape(self):
        return (self.L + 1, 2 * self.L + 2)

    @property
    def size(self):
        return (self.L + 1) * (2 * self.L + 2)

    @property
    def ncoeff(self):
        return n_coeffs(self.L)

    @cached_property
    def weights(self):
        """Flat quadrature weights for the surface measure of the unit sphere."""
        n = 2 * self.L + 2
        return np.repeat(self.gauss_weights * (2.0 * np.pi / n), n)

    @cached_property
    def points(self):
        t = np.repeat(self.theta, self.phi.size)
        p = np.tile(self.phi, self.theta.size)
        return np.stack([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)], axis=-1)

    @cached_property
    def sin_theta(self):
        return np.repeat(np.sin(self.theta), self.phi.size)

    @cached_property
    def frame(self):
        """Unit coordinate vectors (e_theta, e_phi) at every node, shape (N, 2, 3)."""
        t = np.repeat(self.theta, self.phi.size)
        p = np.tile(self.phi, self.theta.size)
        et = np.stack([np.cos(t) * np.cos(p), np.cos(t) * np.sin(p), -np.sin(t)], -1)
        ep = np.stack([-np.sin(p), np.cos(p), np.zeros_like(p)], -1)
        return np.stack([et, ep], axis=1)

    @cached_property
    def _tables(self):
        return legendre_tables(self.L, self.theta)

    @cached_property
    def _degrees(self):
        return degrees(self.L)

    @cached_property
    def _split_index(self):
        l, m = self._degrees
        cos_sel = m >= 0
        sin_sel = m < 0
        return (cos_sel, m[cos_sel], l[cos_sel], sin_sel, -m[sin_sel], l[sin_sel])

    # -- array level transforms -------------------------------------------------
    def _to_ml(self, coeffs):
        L = self.L
        cos_sel, mc, lc, sin_sel, ms, ls = self._split_index
        batch = coeffs.shape[:-1]
        C = np.zeros(batch + (L + 1, L + 1))
        S = np.zeros(batch + (L + 1, L + 1))
        scale = np.where(mc > 0, np.sqrt(2.0), 1.0)
        C[..., mc, lc] = coeffs[..., cos_sel] * scale
        S[..., ms, ls] = coeffs[..., sin_sel] * np.sqrt(2.0)
        return C, S

    def _from_ml(self, C, S):
        cos_sel, mc, lc, sin_sel, ms, ls = self._split_index
        out = np.zeros(C.shape[:-2] + (self.ncoeff,))
        scale = np.where(mc > 0, np.sqrt(2.0), 1.0)
        out[..., cos_sel] = C[..., mc, lc] * scale
        out[..., sin_sel] = S[..., ms, ls] * np.sqrt(2.0)
        return out

    def synthesize_array(self, coeffs, deriv=""):
        """Grid values of a coefficient array or of one of its derivatives.

        ``deriv`` is a string over ``{"t", "p"}`` (colatitude / longitude),
        at most two characters, e.g. ``"tp"``.
        """
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[-1] != self.ncoeff:
            raise ShapeMismatch(f"expected {self.ncoeff} coefficients, got {coeffs.shape[-1]}")
        nt_ = deriv.count("t")
        np_ = deriv.count("p")
        if nt_ + np_ != len(deriv) or len(deriv) > 2:
            raise ValueError(f"unsupported derivative {deriv!r}")
        C, S = self._to_ml(coeffs)
        T = self._tables[nt_]
        Ct = np.einsum("...ml,mlj->...jm", C, T)
        St = np.einsum("...ml,mlj->...jm", S, T)
        m = np.arange(self.L + 1)
        for _ in range(np_):
            Ct, St = m * St, -m * Ct
        n = 2 * self.L + 2
        X = np.zeros(Ct.shape[:-1] + (n // 2 + 1,), dtype=complex)
        X[..., : self.L + 1] = (n / 2.0) * (Ct - 1j * St)
        X[..., 0] = n * Ct[..., 0]
        vals = np.fft.irfft(X, n=n, axis=-1)
        return vals.reshape(coeffs.shape[:-1] + (self.size,))

    def analyze_array(self, values):
        values = np.asarray(values, dtype=float)
        if values.shape[-1] != self.size:
            raise ShapeMismatch(f"expected {self.size} grid values, got {values.shape[-1]}")
        n = 2 * self.L + 2
        grid_vals = values.reshape(values.shape[:-1] + (self.L + 1, n))
        F = np.fft.rfft(grid_vals, axis=-1)[..., : self.L + 1]
        c = (2.0 * np.pi / n) * F.real
        s = -(2.0 * np.pi / n) * F.imag
        P = self._tables[0]
        w = self.gauss_weights
        C = np.einsum("...jm,mlj,j->...ml", c, P, w)
        S = np.einsum("...jm,mlj,j->...ml", s, P, w)
        return self._from_ml(C, S)

    def integrate(self, values):
        return np.asarray(values) @ self.weights

    def evaluate_array(self, coeffs, dirs):
        """Evaluate coefficient arrays at arbitrary unit directions ``dirs`` (M, 3)."""
        dirs = np.asarray(dirs, dtype=float)
        t = np.arccos(np.clip(dirs[:, 2] / np.linalg.norm(dirs, axis=1), -1.0, 1.0))
        p = np.arctan2(dirs[:, 1], dirs[:, 0])
        P = legendre_tables(self.L, t)[0]
        C, S = self._to_ml(np.asarray(coeffs, dtype=float))
        m = np.arange(self.L + 1)[:, None]
        cos_mp = np.cos(m * p[None, :])
        sin_mp = np.sin(m * p[None, :])
        return np.einsum("...ml,mlj,mj->...j", C, P, cos_mp) + np.einsum(
            "...ml,mlj,mj->...j", S, P, sin_mp
        )


def build_grid(L: int) -> SphereGrid:
    if L < 8:
        raise LTooSmall(f"L must be at least 8, got {L}")
    x, w = roots_legendre(L + 1)
    x, w = x[::-1], w[::-1]
    n = 2 * L + 2
    return SphereGrid(
        L=int(L),
        theta=np.arccos(x),
        phi=2.0 * np.pi * np.arange(n) / n,
        gauss_weights=w,
    )


@dataclass(frozen=True, eq=False)
class HarmonicField:
    """Real spherical-harmonic coefficients of a scalar field on the sphere."""

    L: int
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (n_coeffs(self.L),):
            raise ShapeMismatch(f"expected {n_coeffs(self.L)} coefficients, got {c.shape}")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, L):
        return cls(L, np.zeros(n_coeffs(L)))

    @classmethod
    def from_function(cls, grid, fn):
        """Analyze ``fn(points)`` sampled on ``grid``."""
        return analyze(grid, fn(grid.points))

    def coeff(self, l, m):
        return self.coeffs[lm_index(l, m)]

    def resized(self, L):
        out = np.zeros(n_coeffs(L))
        k = min(n_coeffs(L), n_coeffs(self.L))
        out[:k] = self.coeffs[:k]
        return HarmonicField(L, out)

    def l2_norm(self):
        return float(np.linalg.norm(self.coeffs))

    def max_degree_content(self):
        """Largest |coefficient| per degree, length ``L + 1``."""
        l, _ = degrees(self.L)
        return np.array([np.abs(self.coeffs[l == k]).max() for k in range(self.L + 1)])

    def __add__(self, other):
        if isinstance(other, HarmonicField):
            L = max(self.L, other.L)
            return HarmonicField(L, self.resized(L).coeffs + other.resized(L).coeffs)
        return NotImplemented

    def __sub__(self, other):
        return self + (-1.0) * other

    def __mul__(self, s):
        return HarmonicField(self.L, self.coeffs * float(s))

    __rmul__ = __mul__

    def __neg__(self):
        return HarmonicField(self.L, -self.coeffs)

    def to_json(self):
        l, m = degrees(self.L)
        return json.dumps([[int(a), int(b), float(c)] for a, b, c in zip(l, m, self.coeffs)])

    @classmethod
    def from_json(cls, text):
        triples = json.loads(text) if isinstance(text, str) else text
        L = max(int(t[0]) for t in triples)
        c = np.zeros(n_coeffs(L))
        for l, m, a in triples:
            c[lm_index(int(l), int(m))] = a
        return cls(L, c)


def analyze(grid: SphereGrid, values) -> HarmonicField:
    return HarmonicField(grid.L, grid.analyze_array(values))


def synthesize(fld: HarmonicField, grid: SphereGrid, deriv: str = "") -> np.ndarray:
    return grid.synthesize_array(fld.resized(grid.L).coeffs, deriv)


def _eigen(L):
    l, _ = degrees(L)
    return l * (l + 1.0)


def laplacian_s2(fld: HarmonicField) -> HarmonicField:
    return HarmonicField(fld.L, -_eigen(fld.L) * fld.coeffs)


def flat_willmore(fld: HarmonicField) -> HarmonicField:
    """The limiting linearized operator (-Lap)(-Lap - 2)."""
    mu = _eigen(fld.L)
    return HarmonicField(fld.L, mu * (mu - 2.0) * fld.coeffs)


# (1/4pi) int f = a00 / sqrt(4pi);  (3/4pi) int f x_i = sqrt(3/4pi) a_1m
_P0 = 1.0 / np.sqrt(4.0 * np.pi)
_P1 = np.sqrt(3.0 / (4.0 * np.pi))
_K1_SLOTS = (lm_index(1, 1), lm_index(1, -1), lm_index(1, 0))  # x, y, z


def project_kernel(fld: HarmonicField):
    """Split ``f = p0 + p1 . x + rem`` with ``rem`` orthogonal to {1, x1, x2, x3}."""
    c = fld.coeffs
    p0 = float(c[0] * _P0)
    p1 = np.array([c[k] for k in _K1_SLOTS]) * _P1
    rem = c.copy()
    rem[:4] = 0.0
    return p0, p1, HarmonicField(fld.L, rem)


def kernel_field(L, p0, p1):
    """The field p0 + p1 . x as coefficients."""
    c = np.zeros(n_coeffs(L))
    c[0] = p0 / _P0
    for k, v in zip(_K1_SLOTS, p1):
        c[k] = v / _P1
    return HarmonicField(L, c)


def invert_flat_willmore(rhs: HarmonicField) -> HarmonicField:
    c = rhs.coeffs
    scale = max(np.linalg.norm(c), np.finfo(float).tiny)
    if np.abs(c[:4]).max() > KERNEL_TOL * scale:
        raise KernelComponent("right-hand side has components in span{1, x1, x2, x3}")
    mu = _eigen(rhs.L)
    out = np.zeros_like(c)
    out[4:] = c[4:] / (mu[4:] * (mu[4:] - 2.0))
    return HarmonicField(rhs.L, out)


def phi_zero(curv, L: int = 24) -> HarmonicField:
    """Leading-order graph function for the curvature data ``curv``.

    Solves (-Lap)(-Lap - 2) phi0 = -(4/3) Sc + 4 Ric(x, x) on K-perp.
    """
    grid = build_grid(L)
    x = grid.points
    ric = np.asarray(curv.ric, dtype=float)
    rhs = -4.0 / 3.0 * float(curv.sc) + 4.0 * np.einsum("np,pq,nq->n", x, ric, x)
    c = analyze(grid, rhs).coeffs
    # the l <= 1 content vanishes identically; drop the quadrature roundoff
    c[:4] = 0.0
    return invert_flat_willmore(HarmonicField(L, c))
