"""Foliation diagnostics for a solved family: nesting of leaves and asymptotic orders."""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import BetaNotInvertible, FoliateError, InsufficientLeaves, IoError, LogMapFailure
from .metric import MetricSpec, scalar_curvature
from .normal_chart import Frame, log_map_batch, parallel_frame
from .solver import Family, Leaf
from .sphere import HarmonicField
from .surface import GEOMETRY_PAD, _pad, _positions, geometry_grid

__all__ = [
    "OrderFit",
    "FoliationReport",
    "radial_profile",
    "check_foliation",
    "emit_report",
    "fit_order",
]

BETA_TOL = 1e-10
R2_MIN = 0.98
# quantities below this (relative) size are treated as identically zero
EXACT_TOL = 1e-10


@dataclass(frozen=True)
class OrderFit:
    order: float | None  # None when the quantity vanishes to roundoff
    prefactor: float | None
    r_squared: float | None
    flagged: bool
    exact: bool = False


def fit_order(r, q, scale=None) -> OrderFit:
    """Least-squares exponent of |q| against r on log-log axes.

    ``scale`` gives the natural size of q for deciding that it vanishes
    identically; such fits are reported as exact instead of fitted to roundoff.
    """
    r = np.asarray(r, dtype=float)
    q = np.abs(np.asarray(q, dtype=float))
    scale = np.ones_like(r) if scale is None else np.abs(np.asarray(scale, dtype=float))
    if np.all(q <= EXACT_TOL * scale):
        return OrderFit(None, None, None, False, True)
    if np.any(q == 0):
        return OrderFit(None, None, None, True)
    x, y = np.log(r), np.log(q)
    slope, icept = np.polyfit(x, y, 1)
    pred = slope * x + icept
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((y - pred) ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return OrderFit(float(slope), float(np.exp(icept)), r2, bool(r2 < R2_MIN))


@dataclass(eq=False)
class FoliationReport:
    eta_min_gap: float
    eta_r_slope_at_small_r: float
    tau_order: OrderFit
    lambda_limit: float
    lambda_order: OrderFit
    area_defect_order: OrderFit
    energy_defect_order: OrderFit
    area_slope_ratio: float  # a'(r) / (8 pi r) at the smallest leaf
    sc_p: float
    eta_gaps: list = field(default_factory=list)  # min over x of eta_{i+1} - eta_i
    eta_fields: list = field(default_factory=list, repr=False)

    @property
    def disjoint(self):
        return self.eta_min_gap > 0

    def to_dict(self):
        out = {}
        for k in (
            "eta_min_gap",
            "eta_r_slope_at_small_r",
            "lambda_limit",
            "area_slope_ratio",
            "sc_p",
            "eta_gaps",
        ):
            out[k] = getattr(self, k)
        for k in ("tau_order", "lambda_order", "area_defect_order", "energy_defect_order"):
            out[k] = asdict(getattr(self, k))
        out["disjoint"] = self.disjoint
        return out


def _leaf_frame(spec, p_frame: Frame, leaf: Leaf) -> Frame:
    return parallel_frame(spec, leaf.tau, p_frame.base, p_frame.vectors)


def _tangent_basis(x):
    a = np.where(np.abs(x[:, [0]]) < 0.9, np.array([[1.0, 0.0, 0.0]]), np.array([[0.0, 1.0, 0.0]]))
    e1 = a - np.sum(a * x, axis=1, keepdims=True) * x
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(x, e1)
    return e1, e2


def _invert_beta(grid, psi_coeffs, targets, tol=BETA_TOL, max_iter=30, h=1e-6):
    """Directions xh with Psi(xh)/|Psi(xh)| = targets, by Newton on the sphere."""
    xh = targets.copy()

    def beta(d):
        P = grid.evaluate_array(psi_coeffs, d).T
        return P / np.linalg.norm(P, axis=1, keepdims=True), P

    for _ in range(max_iter):
        b, _ = beta(xh)
        F = b - targets
        err = np.linalg.norm(F, axis=1)
        if err.max() <= tol:
            return xh
        e1, e2 = _tangent_basis(xh)
        b1, _ = beta(xh + h * e1)
        b2, _ = beta(xh + h * e2)
        D = np.stack([(b1 - b) / h, (b2 - b) / h], axis=2)  # (n, 3, 2)
        sv = np.linalg.svd(D, compute_uv=False)
        if np.any(sv[:, -1] < 1e-8 * np.maximum(sv[:, 0], 1e-300)) or not np.all(np.isfinite(sv)):
            raise BetaNotInvertible("radial projection of the leaf is singular")
        DtD = np.einsum("nia,nib->nab", D, D)
        DtF = np.einsum("nia,ni->na", D, F)
        delta = -np.linalg.solve(DtD, DtF[..., None])[..., 0]
        xh = xh + delta[:, :1] * e1 + delta[:, 1:] * e2
        xh /= np.linalg.norm(xh, axis=1, keepdims=True)
    raise BetaNotInvertible(f"beta inversion stalled at {err.max():.3e}")


def radial_profile(spec: MetricSpec, p_frame: Frame, leaf: Leaf, pad: int | None = None) -> HarmonicField:
    """eta(r, x): normal-coordinate distance from p of the leaf point seen in direction x."""
    grid = geometry_grid(leaf.phi.L, GEOMETRY_PAD if pad is None else pad)
    frame = _leaf_frame(spec, p_frame, leaf)
    phi_vals = grid.synthesize_array(_pad(leaf.phi.coeffs, grid.L))
    pos = _positions(spec, frame, leaf.r, grid, phi_vals[None])[0]
    try:
        v = log_map_batch(spec, p_frame.base, pos)
    except FoliateError as exc:
        raise LogMapFailure(f"log map at p failed for leaf r = {leaf.r:g}: {exc}") from exc
    # components in the orthonormal frame at p
    psi = np.linalg.solve(p_frame.vectors, v.T).T
    psi_coeffs = grid.analyze_array(psi.T)
    xh = _invert_beta(grid, psi_coeffs, grid.points)
    eta = np.linalg.norm(grid.evaluate_array(psi_coeffs, xh), axis=0)
    return HarmonicField(grid.L, grid.analyze_array(eta))


def _eta_values(fld: HarmonicField):
    grid = geometry_grid(fld.L, 0)
    return grid.synthesize_array(fld.coeffs)


def check_foliation(spec: MetricSpec, p_frame: Frame, family: Family, sc_p: float | None = None, workers: int = 1) -> FoliationReport:
    leaves = family.leaves
    if len(leaves) < 6:
        raise InsufficientLeaves(f"need at least 6 leaves, got {len(leaves)}")
    r = family.radii
    if r[-1] < 3.0 * r[0]:
        raise InsufficientLeaves("leaf radii must span at least a factor 3")
    if sc_p is None:
        if family.critical_point is not None:
            sc_p = float(family.critical_point.sc)
        else:
            sc_p = float(scalar_curvature(spec, np.asarray(p_frame.base)[None])[0])

    def profile(leaf):
        return radial_profile(spec, p_frame, leaf)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            fields = list(pool.map(profile, leaves))
    else:
        fields = [profile(leaf) for leaf in leaves]
    etas = [_eta_values(f) for f in fields]
    gaps = [float(np.min(b - a)) for a, b in zip(etas, etas[1:])]

    means = np.array([float(geometry_grid(f.L, 0).integrate(e)) / (4.0 * math.pi) for f, e in zip(fields, etas)])
    eta_slope = float(np.polyfit(r[:3], means[:3], 1)[0])

    lam = np.array([leaf.lam for leaf in leaves])
    tau = np.array([np.linalg.norm(leaf.tau) for leaf in leaves])
    area = family.areas
    energy = np.array([leaf.energy for leaf in leaves])
    w = slice(0, len(leaves) - 1)  # asymptotic window: drop the largest leaf
    r1, r2 = r[0], r[1]
    lambda_limit = float((r2**2 * lam[0] - r1**2 * lam[1]) / (r2**2 - r1**2))

    # second-order derivative of a(r) at the smallest leaf from the three smallest
    x0, x1, x2 = r[:3]
    a0, a1, a2 = area[:3]
    h1, h2 = x1 - x0, x2 - x0
    da = -a0 * (h1 + h2) / (h1 * h2) + a1 * h2 / (h1 * (h2 - h1)) - a2 * h1 / (h2 * (h2 - h1))
    ratio = float(da / (8.0 * math.pi * x0))

    return FoliationReport(
        eta_min_gap=float(min(gaps)),
        eta_r_slope_at_small_r=eta_slope,
        tau_order=fit_order(r[w], tau[w], r[w]),
        lambda_limit=lambda_limit,
        lambda_order=fit_order(r[w], lam[w] + sc_p / 3.0, np.full(r[w].size, max(1.0, abs(sc_p)))),
        area_defect_order=fit_order(r[w], area[w] - 4.0 * math.pi * r[w] ** 2, 4.0 * math.pi * r[w] ** 2),
        energy_defect_order=fit_order(r[w], energy[w] - 4.0 * math.pi, np.full(r[w].size, 4.0 * math.pi)),
        area_slope_ratio=ratio,
        sc_p=sc_p,
        eta_gaps=gaps,
        eta_fields=fields,
    )


def emit_report(report: FoliationReport, family: Family, path) -> list:
    """Write report JSON, the per-leaf CSV table and the eta fields; returns the file paths."""
    if len(family.leaves) == 0:
        raise InsufficientLeaves("empty family")
    try:
        os.makedirs(path, exist_ok=True)
        files = [os.path.join(path, name) for name in ("foliation_report.json", "foliation.csv", "eta_fields.json")]
        payload = {"report": report.to_dict(), "provenance": family.provenance}
        with open(files[0], "w") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
            fh.write("\n")
        with open(files[1], "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["r", "lambda", "tau_norm", "area", "energy", "eta_gap"])
            for i, leaf in enumerate(family.leaves):
                gap = "" if i == 0 else repr(report.eta_gaps[i - 1])
                wr.writerow(
                    [repr(leaf.r), repr(leaf.lam), repr(float(np.linalg.norm(leaf.tau))), repr(leaf.area), repr(leaf.energy), gap]
                )
        with open(files[2], "w") as fh:
            eta = [{"r": leaf.r, "eta": json.loads(f.to_json())} for leaf, f in zip(family.leaves, report.eta_fields)]
            json.dump(eta, fh, indent=1, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return files
