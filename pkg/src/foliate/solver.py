"""Newton continuation for the family of area-constrained Willmore spheres."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import (
    AreaOutOfRange,
    FoliateError,
    GraphDegenerate,
    LeftChart,
    MonotonicityViolation,
    NoConvergence,
    OutOfChart,
    OutOfRange,
    SingularJacobian,
)
from .linearized import LinearizedSystem, ResidualMap, _rows, assemble_jacobian, unknowns_to_vector, vector_to_unknowns
from .metric import CriticalPoint, CurvaturePoint, MetricSpec
from .normal_chart import Frame
from .sphere import HarmonicField, phi_zero, project_kernel
from .surface import GEOMETRY_PAD, _pad

__all__ = [
    "SolveOptions",
    "Leaf",
    "Family",
    "ContinuationError",
    "initial_guess",
    "solve_leaf",
    "continue_family",
    "leaf_at_area",
    "geometric_schedule",
    "BasinTrial",
    "basin_check",
    "leaf_distance",
]


@dataclass(frozen=True)
class SolveOptions:
    L: int = 24
    tol: float = 1e-9
    max_iter: int = 30
    max_halvings: int = 8
    freeze_tau: bool = False
    pad: int = GEOMETRY_PAD
    # recompute the Jacobian when an accepted step reduces the residual by less than this factor
    jacobian_refresh: float = 0.2
    central_differences: bool = False
    # keep iterating below tol until progress stalls at the evaluation noise floor
    polish: bool = False
    # largest center move per Newton step, as a fraction of r
    max_tau_step: float = 1.0


@dataclass(frozen=True, eq=False)
class Leaf:
    r: float
    tau: np.ndarray
    lam: float
    phi: HarmonicField
    area: float
    energy: float
    residual_linf: float
    residual_grid_linf: float
    newton_iters: int
    jacobian_evals: int = 0

    def to_dict(self):
        return {
            "r": self.r,
            "tau": self.tau.tolist(),
            "lambda": self.lam,
            "area": self.area,
            "energy": self.energy,
            "residual_linf": self.residual_linf,
            "residual_grid_linf": self.residual_grid_linf,
            "newton_iters": self.newton_iters,
            "jacobian_evals": self.jacobian_evals,
            "phi": json.loads(self.phi.to_json()),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            r=float(d["r"]),
            tau=np.asarray(d["tau"], dtype=float),
            lam=float(d["lambda"]),
            phi=HarmonicField.from_json(json.dumps(d["phi"])),
            area=float(d["area"]),
            energy=float(d["energy"]),
            residual_linf=float(d["residual_linf"]),
            residual_grid_linf=float(d.get("residual_grid_linf", d["residual_linf"])),
            newton_iters=int(d["newton_iters"]),
            jacobian_evals=int(d.get("jacobian_evals", 0)),
        )


@dataclass(eq=False)
class Family:
    leaves: list
    provenance: dict = field(default_factory=dict)
    critical_point: CriticalPoint | None = None

    def __post_init__(self):
        rs = [leaf.r for leaf in self.leaves]
        if any(b <= a for a, b in zip(rs, rs[1:])):
            raise ValueError("leaves must be ordered by strictly increasing r")

    @property
    def radii(self):
        return np.array([leaf.r for leaf in self.leaves])

    @property
    def areas(self):
        return np.array([leaf.area for leaf in self.leaves])

    def to_json(self):
        payload = {
            "provenance": self.provenance,
            "critical_point": None if self.critical_point is None else self.critical_point.to_dict(),
            "leaves": [leaf.to_dict() for leaf in self.leaves],
        }
        return json.dumps(payload, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        cp = d.get("critical_point")
        crit = None
        if cp is not None:
            crit = CriticalPoint(
                np.asarray(cp["location"]),
                np.asarray(cp["hessian"]),
                cp["min_abs_eigenvalue"],
                cp["gradient_norm"],
                cp["sc"],
                cp.get("iterations", 0),
            )
        return cls([Leaf.from_dict(x) for x in d["leaves"]], d.get("provenance", {}), crit)

    def summary_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "lambda", "tau_norm", "area", "energy"])
        for leaf in self.leaves:
            w.writerow([repr(v) for v in (leaf.r, leaf.lam, float(np.linalg.norm(leaf.tau)), leaf.area, leaf.energy)])
        return buf.getvalue()


class ContinuationError(FoliateError):
    """A leaf failed during continuation; carries the partial family."""

    def __init__(self, index, r, cause, family):
        super().__init__(f"leaf {index} (r = {r:g}) failed: {cause}")
        self.index = index
        self.r = r
        self.cause = cause
        self.family = family


def geometric_schedule(r_min, r_max, count=None, ratio=1.15):
    """Radii from r_min to r_max, geometric; ``count`` overrides ``ratio``."""
    if count is None:
        count = int(np.ceil(np.log(r_max / r_min) / np.log(ratio))) + 1
    return np.geomspace(r_min, r_max, count)


def initial_guess(curv: CurvaturePoint, L: int = 24):
    """(tau, lambda, phi) at r = 0: the sphere centered at p with the limiting multiplier."""
    return np.zeros(3), -float(curv.sc) / 3.0, phi_zero(curv, L)


def _band_sup(grid, coeffs):
    return float(np.abs(grid.synthesize_array(_pad(coeffs, grid.L))).max())


def _leaf_from(rmap, lam, tau, phi, coeffs, geo, iters, jevals):
    grid = geo["grid"]
    area = float(grid.integrate(geo["area_element"][0]))
    energy = float(grid.integrate(0.25 * geo["mean_curv"][0] ** 2 * geo["area_element"][0]))
    return Leaf(
        r=float(rmap.r),
        tau=np.array(tau, dtype=float),
        lam=float(lam) + 0.0,  # no negative zero in outputs
        phi=phi,
        area=area,
        energy=energy,
        residual_linf=_band_sup(grid, coeffs[0]),
        residual_grid_linf=rmap.grid_sup(geo, lam),
        newton_iters=iters,
        jacobian_evals=jevals,
    )


def _kperp(phi: HarmonicField, L):
    c = _pad(phi.coeffs, L).copy()
    c[:4] = 0.0
    return HarmonicField(L, c)


def solve_leaf(spec: MetricSpec, p_frame: Frame, r: float, init, opts: SolveOptions = SolveOptions(), jacobian: LinearizedSystem | None = None):
    """Damped (chord-)Newton solve of the (P0, P1, K-perp) residual rows at radius ``r``.

    ``init`` is (tau, lambda, phi).  The Jacobian is reused across iterations
    and refreshed whenever progress stalls; pass ``jacobian`` to seed it.
    Returns (Leaf, last Jacobian).
    """
    if not 0.0 < r < 0.5 * spec.chart_radius:
        raise OutOfRange(f"r = {r} outside (0, chart_radius/2)")
    tau0, lam0, phi0 = init
    L = opts.L
    rmap = ResidualMap(spec, float(r), L, p_frame.base, p_frame.vectors, opts.pad)
    x = unknowns_to_vector(float(lam0), np.zeros(3) if opts.freeze_tau else np.asarray(tau0, dtype=float), _kperp(phi0, L))
    lam, tau, phi = vector_to_unknowns(x, L)
    coeffs, geo = rmap.evaluate(lam, tau, phi.coeffs[None])
    norm = _band_sup(geo["grid"], coeffs[0])
    J = jacobian
    fresh = False
    iters = 0
    jevals = 0
    stalled = False
    while True:
        done = norm <= opts.tol
        if done and (not opts.polish or stalled):
            break
        if iters >= opts.max_iter:
            if done:
                break
            raise NoConvergence(f"r = {r}: residual {norm:.3e} after {iters} iterations")
        if J is None:
            J = assemble_jacobian(rmap, phi, lam, tau, opts.freeze_tau, base=(coeffs, geo), central=opts.central_differences)
            jevals += 1
            fresh = True
        J = LinearizedSystem(J.matrix, _rows(coeffs)[0], L, opts.freeze_tau)
        step = J.solve()
        t = 1.0
        dtau = float(np.linalg.norm(step[1:4]))
        if dtau > opts.max_tau_step * r:
            t = opts.max_tau_step * r / dtau
        accepted = False
        for _ in range(opts.max_halvings + 1):
            trial = x + t * step
            lam_t, tau_t, phi_t = vector_to_unknowns(trial, L)
            try:
                c_t, g_t = rmap.evaluate(lam_t, tau_t, phi_t.coeffs[None])
                n_t = _band_sup(g_t["grid"], c_t[0])
            except (GraphDegenerate, LeftChart, OutOfChart):
                n_t = np.inf
            if n_t < norm:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            if done:
                break
            if fresh:
                raise NoConvergence(f"r = {r}: no decrease after {opts.max_halvings} step halvings (residual {norm:.3e})")
            J = None
            continue
        ratio = n_t / norm
        x, lam, tau, phi = trial, lam_t, tau_t, phi_t
        coeffs, geo, norm = c_t, g_t, n_t
        iters += 1
        # polishing below tol uses chord steps only and stops when they stall
        stalled = norm <= opts.tol and ratio > 0.5
        fresh = False
        if ratio > opts.jacobian_refresh and norm > opts.tol:
            J = None
    return _leaf_from(rmap, lam, tau, phi, coeffs, geo, iters, jevals), J


def continue_family(
    spec: MetricSpec,
    p_frame: Frame,
    r_schedule,
    curv: CurvaturePoint,
    opts: SolveOptions = SolveOptions(),
    provenance: dict | None = None,
    critical_point: CriticalPoint | None = None,
    progress=None,
) -> Family:
    """Solve leaves in increasing r, each seeded by the previous one.

    The Jacobian of the previous leaf, rescaled to the new radius, seeds the
    next solve and is refreshed only when Newton progress stalls.
    """
    rs = np.sort(np.asarray(r_schedule, dtype=float))
    if rs.size == 0:
        raise OutOfRange("empty radius schedule")
    if rs[0] <= 0 or rs[-1] >= 0.5 * spec.chart_radius:
        raise OutOfRange(f"schedule must lie in (0, {0.5 * spec.chart_radius}); got [{rs[0]}, {rs[-1]}]")
    if np.any(np.diff(rs) <= 0):
        raise OutOfRange("schedule radii must be distinct")
    family = Family([], dict(provenance or {}), critical_point)
    tau, lam, phi = initial_guess(curv, opts.L)
    J = None
    r_prev = None
    for i, r in enumerate(rs):
        seed = None
        if J is not None:
            # every block of the rescaled Jacobian scales like r^2 at leading order
            seed = LinearizedSystem(J.matrix * (r / r_prev) ** 2, J.rhs, J.L, J.freeze_tau)
        try:
            leaf, J = solve_leaf(spec, p_frame, float(r), (tau, lam, phi), opts, seed)
        except (FoliateError, np.linalg.LinAlgError) as exc:
            raise ContinuationError(i, float(r), exc, family) from exc
        family.leaves.append(leaf)
        if progress is not None:
            progress(leaf)
        tau, lam, phi, r_prev = leaf.tau, leaf.lam, leaf.phi, r
    return family


def leaf_at_area(spec: MetricSpec, p_frame: Frame, family: Family, a: float, opts: SolveOptions = SolveOptions(), rtol=1e-8, max_iter=20):
    """The leaf of the family with area ``a``: interpolate r(a), then correct by safeguarded secant."""
    areas = family.areas
    rs = family.radii
    if len(areas) < 2:
        raise AreaOutOfRange("need at least two leaves to interpolate")
    if np.any(np.diff(areas) <= 0):
        raise MonotonicityViolation("leaf areas are not strictly increasing in r")
    if not areas[0] <= a <= areas[-1]:
        raise AreaOutOfRange(f"area {a} outside [{areas[0]}, {areas[-1]}]")
    r_of_a = PchipInterpolator(areas, rs)
    k = int(np.clip(np.searchsorted(areas, a), 1, len(areas) - 1))
    lo, hi = (rs[k - 1], areas[k - 1]), (rs[k], areas[k])
    near = family.leaves[k - 1] if a - areas[k - 1] < areas[k] - a else family.leaves[k]

    def solve_at(r):
        leaf, _ = solve_leaf(spec, p_frame, float(r), (near.tau, near.lam, near.phi), opts)
        return leaf

    r = float(r_of_a(a))
    leaf = solve_at(r)
    for _ in range(max_iter):
        err = leaf.area - a
        if abs(err) <= rtol * a:
            return leaf
        if err > 0:
            hi = (leaf.r, leaf.area)
        else:
            lo = (leaf.r, leaf.area)
        # secant on the bracket, falling back to bisection if it leaves the bracket
        r_new = lo[0] + (a - lo[1]) * (hi[0] - lo[0]) / (hi[1] - lo[1])
        if not lo[0] < r_new < hi[0]:
            r_new = 0.5 * (lo[0] + hi[0])
        leaf = solve_at(r_new)
    raise NoConvergence(f"area correction did not reach {rtol:g} relative tolerance")


def leaf_distance(a: Leaf, b: Leaf) -> float:
    """Max-norm distance between the unknown vectors (lambda, tau, phi) of two leaves."""
    L = max(a.phi.L, b.phi.L)
    dphi = np.abs(_pad(a.phi.coeffs, L) - _pad(b.phi.coeffs, L)).max()
    return float(max(abs(a.lam - b.lam), np.abs(a.tau - b.tau).max(), dphi))


@dataclass(frozen=True)
class BasinTrial:
    index: int
    phi_perturbation: float  # L2 norm of the graph perturbation
    tau_perturbation: float
    converged: bool
    distance: float | None
    newton_iters: int | None
    error: str | None = None

    def to_dict(self):
        return dict(self.__dict__)


def basin_check(
    spec: MetricSpec,
    p_frame: Frame,
    r: float,
    curv: CurvaturePoint,
    opts: SolveOptions = SolveOptions(),
    count: int = 20,
    phi_size: float = 0.1,
    tau_frac: float = 0.2,
    seed: int = 0,
):
    """Restart the leaf solve at ``r`` from randomly perturbed initial guesses.

    Graph perturbations are random K-perp fields with L2 norm up to
    ``phi_size``; center perturbations have length up to ``tau_frac * r``.
    Non-convergent restarts are recorded, not raised.  All solves here are
    polished to the noise floor so that distances measure which leaf was
    reached rather than the stopping tolerance.  Returns (reference leaf, trials).
    """
    opts = replace(opts, polish=True)
    tau0, lam0, phi0 = initial_guess(curv, opts.L)
    ref, J = solve_leaf(spec, p_frame, r, (tau0, lam0, phi0), opts)
    rng = np.random.default_rng(seed)
    trials = []
    for k in range(count):
        c = rng.standard_normal(phi0.coeffs.size)
        c[:4] = 0.0
        dphi = HarmonicField(opts.L, c)
        dphi = dphi * (phi_size * rng.uniform() / dphi.l2_norm())
        d = rng.standard_normal(3)
        dtau = np.zeros(3) if opts.freeze_tau else d / np.linalg.norm(d) * tau_frac * r * rng.uniform()
        try:
            leaf, _ = solve_leaf(spec, p_frame, r, (tau0 + dtau, lam0, phi0 + dphi), opts, J)
        except (FoliateError, np.linalg.LinAlgError) as exc:
            trials.append(BasinTrial(k, dphi.l2_norm(), float(np.linalg.norm(dtau)), False, None, None, f"{type(exc).__name__}: {exc}"))
            continue
        trials.append(BasinTrial(k, dphi.l2_norm(), float(np.linalg.norm(dtau)), True, leaf_distance(leaf, ref), leaf.newton_iters))
    return ref, trials
