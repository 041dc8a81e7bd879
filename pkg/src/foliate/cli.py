"""Command-line driver: ``foliate <command> --config FILE [--workers N] [--out DIR]``."""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import (
    ConfigError,
    DegenerateHessian,
    FoliateError,
    IoError,
    ValidationError,
)
from .metric import MetricSpec, curvature_at, find_scalar_critical
from .normal_chart import parallel_frame

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

_SCHEMA = {
    "output_dir": str,
    "seed": int,
    "metric": {"id": str, "params": dict, "chart_radius": float},
    "point": {"guess": list},
    "solver": {"L": int, "tol": float, "freeze_tau": bool, "max_iter": int, "schedule": {"r_min": float, "r_max": float, "count": int, "ratio": float, "radii": list}},
    "expand": {"L": int, "radii": list, "taus": list},
    "uniqueness": {"r": float, "count": int, "phi_size": float, "tau_frac": float},
    "foliation": {"family": str},
}


def _check_types(raw, schema, where=""):
    for key, value in raw.items():
        if key not in schema:
            raise ConfigError(f"unknown config key {where}{key!r}")
        kind = schema[key]
        if isinstance(kind, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where}{key!r} must be a table")
            _check_types(value, kind, f"{where}{key}.")
        elif kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"config key {where}{key!r} must be a number")
        elif kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"config key {where}{key!r} must be an integer")
        elif not isinstance(value, kind):
            raise ConfigError(f"config key {where}{key!r} must be of type {kind.__name__}")


@dataclass(frozen=True)
class RunConfig:
    metric: MetricSpec
    guess: tuple = (0.0, 0.0, 0.0)
    L: int = 24
    tol: float = 1e-9
    max_iter: int = 30
    freeze_tau: bool = False
    radii: tuple = ()
    output_dir: str = "."
    seed: int = 0
    expand: dict = field(default_factory=dict)
    uniqueness: dict = field(default_factory=dict)
    family_file: str | None = None
    raw: dict = field(default_factory=dict, compare=False)

    @property
    def config_hash(self):
        text = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def provenance(self, **extra):
        return {"config": self.raw, "config_hash": self.config_hash, **extra}

    def solve_options(self):
        from .solver import SolveOptions

        return SolveOptions(L=self.L, tol=self.tol, max_iter=self.max_iter, freeze_tau=self.freeze_tau)


def parse_config(raw: dict) -> RunConfig:
    """Validate a config mapping; raises ConfigError (or another ValidationError)."""
    from .solver import geometric_schedule

    if not isinstance(raw, dict):
        raise ConfigError("config must be a table")
    _check_types(raw, _SCHEMA)
    m = raw.get("metric")
    if m is None or "id" not in m:
        raise ConfigError("missing config key 'metric.id'")
    spec = MetricSpec(m["id"], dict(m.get("params", {})), m.get("chart_radius"))
    guess = tuple(float(v) for v in raw.get("point", {}).get("guess", (0.0, 0.0, 0.0)))
    if len(guess) != 3:
        raise ConfigError("point.guess must have three components")
    solver = raw.get("solver", {})
    sched = solver.get("schedule", {})
    if "radii" in sched:
        radii = tuple(float(v) for v in sched["radii"])
    else:
        r_min = float(sched.get("r_min", 0.05 * spec.chart_radius))
        r_max = float(sched.get("r_max", 0.3 * spec.chart_radius))
        if not 0 < r_min < r_max:
            raise ConfigError("schedule needs 0 < r_min < r_max")
        radii = tuple(float(v) for v in geometric_schedule(r_min, r_max, sched.get("count"), float(sched.get("ratio", 1.15))))
    L = int(solver.get("L", 24))
    tol = float(solver.get("tol", 1e-9))
    if not tol > 0:
        raise ConfigError("solver.tol must be positive")
    uniq = {"r": 0.1 * spec.chart_radius, "count": 20, "phi_size": 0.1, "tau_frac": 0.2}
    uniq.update(raw.get("uniqueness", {}))
    if uniq["count"] < 0:
        raise ConfigError("uniqueness.count must be non-negative")
    return RunConfig(
        metric=spec,
        guess=guess,
        L=L,
        tol=tol,
        max_iter=int(solver.get("max_iter", 30)),
        freeze_tau=bool(solver.get("freeze_tau", False)),
        radii=radii,
        output_dir=str(raw.get("output_dir", ".")),
        seed=int(raw.get("seed", 0)),
        expand=dict(raw.get("expand", {})),
        uniqueness=uniq,
        family_file=raw.get("foliation", {}).get("family"),
        raw=raw,
    )


def load_config(path) -> RunConfig:
    """Read a TOML (or, by ``.json`` suffix, JSON) config file."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    try:
        if str(path).endswith(".json"):
            raw = json.loads(data)
        else:
            raw = tomllib.loads(data.decode())
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return parse_config(raw)


# -- helpers -------------------------------------------------------------------
def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _dump(obj):
    return json.dumps(_jsonable(obj), indent=1, sort_keys=True) + "\n"


def _write(path, text):
    try:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _locate(cfg: RunConfig, warn=True):
    """Critical point p of Sc; degenerate points are accepted only with freeze_tau."""
    spec = cfg.metric
    try:
        crit = find_scalar_critical(spec, np.array(cfg.guess))
        p = crit.location
    except DegenerateHessian as exc:
        if not cfg.freeze_tau:
            raise
        if warn:
            print(f"warning: {exc}; using the configured point with tau frozen", file=sys.stderr)
        crit, p = None, np.array(cfg.guess)
    return crit, p, parallel_frame(spec, np.zeros(3), p), curvature_at(spec, p)


# -- commands ------------------------------------------------------------------
def cmd_curvature(cfg: RunConfig, args) -> int:
    spec = cfg.metric
    guess = np.array(cfg.guess)
    out = {"metric": spec.to_dict(), "config_hash": cfg.config_hash}
    code = EXIT_OK
    try:
        crit = find_scalar_critical(spec, guess)
        out["critical_point"] = crit.to_dict()
        where = crit.location
    except DegenerateHessian as exc:
        out["critical_point"] = None
        out["warning"] = str(exc)
        where = guess
        code = EXIT_NUMERICAL
    out["curvature"] = curvature_at(spec, where).to_dict()
    out["curvature"]["location"] = np.asarray(where).tolist()
    sys.stdout.write(_dump(out))
    if code != EXIT_OK:
        print(f"degenerate critical point: {out['warning']}", file=sys.stderr)
    return code


def cmd_expand_check(cfg: RunConfig, args) -> int:
    from .surface import expansion_check

    ex = cfg.expand
    L = int(ex.get("L", 16))
    radii = ex.get("radii")
    taus = [tuple(map(float, t)) for t in ex.get("taus", [(0.0, 0.0, 0.0), (0.05, 0.0, 0.0)])]
    fits = expansion_check(cfg.metric, taus=taus, radii=radii, L=L)
    rows = []
    for f in fits:
        d = f.to_dict()
        d["pass"] = f.passes()
        if f.exact:
            d["note"] = "difference identically zero to roundoff; slope test skipped"
        rows.append(d)
        slope = "exact" if f.exact else f"{f.slope:.3f}"
        print(f"{f.quantity:13s} tau={f.tau} lambda={f.lam:+.4f} slope={slope} max_err={max(f.errors):.3e} {'ok' if f.passes() else 'LOW'}")
    _write(os.path.join(args.out, "expand_check.json"), _dump({"provenance": cfg.provenance(), "fits": rows}))
    return EXIT_OK


def _solve_family(cfg: RunConfig, out_dir):
    from .solver import ContinuationError, continue_family

    crit, p, p_frame, curv = _locate(cfg)
    prov = cfg.provenance(p=p.tolist())

    def progress(leaf):
        print(f"r={leaf.r:.6g} lambda={leaf.lam:.10g} |tau|={np.linalg.norm(leaf.tau):.3e} residual={leaf.residual_linf:.2e} iters={leaf.newton_iters}", file=sys.stderr)

    try:
        fam = continue_family(cfg.metric, p_frame, cfg.radii, curv, cfg.solve_options(), prov, crit, progress)
    except ContinuationError as exc:
        _write(os.path.join(out_dir, "family.json"), exc.family.to_json() + "\n")
        _write(os.path.join(out_dir, "family.csv"), exc.family.summary_csv())
        raise
    _write(os.path.join(out_dir, "family.json"), fam.to_json() + "\n")
    _write(os.path.join(out_dir, "family.csv"), fam.summary_csv())
    return fam, p_frame


def cmd_solve(cfg: RunConfig, args) -> int:
    _solve_family(cfg, args.out)
    return EXIT_OK


def cmd_foliation_check(cfg: RunConfig, args) -> int:
    from .foliation import check_foliation, emit_report
    from .solver import Family

    if cfg.family_file:
        path = os.path.join(args.out, cfg.family_file)
        try:
            with open(path) as fh:
                fam = Family.from_json(fh.read())
        except OSError as exc:
            raise IoError(f"cannot read family {path}: {exc}") from exc
        p = np.asarray(fam.provenance.get("p", cfg.guess), dtype=float)
        p_frame = parallel_frame(cfg.metric, np.zeros(3), p)
    else:
        fam, p_frame = _solve_family(cfg, args.out)
    report = check_foliation(cfg.metric, p_frame, fam, workers=args.workers)
    emit_report(report, fam, args.out)
    d = report.to_dict()
    for k in ("eta_min_gap", "eta_r_slope_at_small_r", "lambda_limit", "area_slope_ratio", "disjoint"):
        print(f"{k} = {d[k]}")
    for k in ("tau_order", "lambda_order", "area_defect_order", "energy_defect_order"):
        f = d[k]
        print(f"{k} = {'exact' if f['exact'] else f['order']}" + (" (flagged: R^2 below 0.98)" if f["flagged"] else ""))
    return EXIT_OK


def cmd_uniqueness_check(cfg: RunConfig, args) -> int:
    from .solver import basin_check

    u = cfg.uniqueness
    _, p, p_frame, curv = _locate(cfg)
    ref, trials = basin_check(
        cfg.metric, p_frame, float(u["r"]), curv, cfg.solve_options(), int(u["count"]), float(u["phi_size"]), float(u["tau_frac"]), cfg.seed
    )
    converged = [t for t in trials if t.converged]
    same = [t for t in converged if t.distance <= 1e-8]
    summary = {
        "r": float(u["r"]),
        "trials": len(trials),
        "converged": len(converged),
        "same_leaf": len(same),
        "all_same": len(same) == len(trials),
        "max_distance": max((t.distance for t in converged), default=0.0),
    }
    out = {"provenance": cfg.provenance(p=p.tolist()), "summary": summary, "reference": ref.to_dict(), "trials": [t.to_dict() for t in trials]}
    _write(os.path.join(args.out, "uniqueness.json"), _dump(out))
    print(_dump(summary), end="")
    return EXIT_OK


COMMANDS = {
    "curvature": cmd_curvature,
    "expand-check": cmd_expand_check,
    "solve": cmd_solve,
    "foliation-check": cmd_foliation_check,
    "uniqueness-check": cmd_uniqueness_check,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="foliate", description="Foliations by area-constrained Willmore spheres.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="TOML or JSON run configuration")
    ap.add_argument("--workers", type=int, default=1, help="threads for per-leaf profiles")
    ap.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        cfg = load_config(args.config)
        if args.out is None:
            base = os.path.dirname(os.path.abspath(args.config))
            args.out = os.path.join(base, cfg.output_dir)
        return COMMANDS[args.command](cfg, args)
    except FoliateError as exc:
        cause = getattr(exc, "cause", exc)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION if isinstance(cause, ValidationError) else EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
