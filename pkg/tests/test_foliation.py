import csv
import filecmp
import json
import os
import shutil

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from foliate.errors import InsufficientLeaves
from foliate.foliation import check_foliation, emit_report, fit_order, radial_profile
from foliate.solver import Family, SolveOptions, continue_family, geometric_schedule, initial_guess, solve_leaf
from foliate.surface import geometry_grid

from conftest import origin_setup

GOLDEN = os.path.join(os.path.dirname(__file__), "golden", "euclid_report")


def eta_values(fld):
    return geometry_grid(fld.L, 0).synthesize_array(fld.coeffs)


@pytest.fixture(scope="module")
def euclid_family(euclid):
    pf, curv = origin_setup(euclid)
    fam = continue_family(euclid, pf, geometric_schedule(0.08, 0.3, 6), curv, SolveOptions(L=8, freeze_tau=True), {"case": "flat"})
    return pf, fam


@pytest.fixture(scope="module")
def s3_family(s3):
    pf, curv = origin_setup(s3)
    fam = continue_family(s3, pf, geometric_schedule(0.08, 0.3, 6), curv, SolveOptions(L=8, freeze_tau=True))
    return pf, fam


@given(p=st.floats(0.5, 6.0), c=st.floats(0.01, 100.0))
def test_fit_recovers_exponent(p, c):
    r = np.geomspace(0.05, 0.3, 8)
    f = fit_order(r, c * r**p)
    assert abs(f.order - p) < 1e-9 and abs(f.prefactor - c) < 1e-8 * c
    assert not f.flagged and f.r_squared > 0.999999


def test_fit_exact_and_flagged():
    r = np.geomspace(0.05, 0.3, 8)
    assert fit_order(r, np.full(8, 1e-16), r).exact
    noisy = r**2 * np.array([1, 30, 0.05, 40, 0.02, 20, 0.1, 9.0])
    assert fit_order(r, noisy).flagged


def test_flat_profile_is_radius(euclid_family, euclid):
    pf, fam = euclid_family
    for leaf in fam.leaves[:2]:
        np.testing.assert_allclose(eta_values(radial_profile(euclid, pf, leaf)), leaf.r, atol=1e-12)


def test_space_form_profile_is_radius(s3_family, s3):
    pf, fam = s3_family
    leaf = fam.leaves[-1]
    np.testing.assert_allclose(eta_values(radial_profile(s3, pf, leaf)), leaf.r, atol=1e-8)


def test_bump_profile_close_to_radius(bump_b):
    pf, curv = origin_setup(bump_b)
    leaf, _ = solve_leaf(bump_b, pf, 0.1, initial_guess(curv, 10), SolveOptions(L=10))
    dev = np.abs(eta_values(radial_profile(bump_b, pf, leaf)) - leaf.r).max()
    assert 0 < dev <= 1.0 * leaf.r**2


def test_flat_report(euclid_family, euclid):
    pf, fam = euclid_family
    rep = check_foliation(euclid, pf, fam, sc_p=0.0)
    np.testing.assert_allclose(rep.eta_gaps, np.diff(fam.radii), atol=1e-12)
    assert abs(rep.eta_min_gap - np.diff(fam.radii).min()) < 1e-12
    assert rep.disjoint
    assert rep.area_defect_order.exact and rep.lambda_order.exact and rep.tau_order.exact
    assert abs(rep.lambda_limit) < 1e-10
    assert abs(rep.eta_r_slope_at_small_r - 1) < 1e-10
    assert abs(rep.area_slope_ratio - 1) < 1e-10


def test_space_form_report(s3_family, s3):
    pf, fam = s3_family
    rep = check_foliation(s3, pf, fam, sc_p=6.0)
    assert abs(rep.lambda_limit + 2) < 1e-6
    np.testing.assert_allclose(rep.eta_gaps, np.diff(fam.radii), atol=1e-8)


def test_insufficient_leaves(euclid_family, euclid):
    pf, fam = euclid_family
    with pytest.raises(InsufficientLeaves):
        check_foliation(euclid, pf, Family(fam.leaves[:5]))
    narrow = continue_family(euclid, pf, np.linspace(0.1, 0.2, 6), origin_setup(euclid)[1], SolveOptions(L=8, freeze_tau=True))
    with pytest.raises(InsufficientLeaves):
        check_foliation(euclid, pf, narrow)


def test_emit_empty_family(euclid_family, euclid, tmp_path):
    pf, fam = euclid_family
    rep = check_foliation(euclid, pf, fam, sc_p=0.0)
    with pytest.raises(InsufficientLeaves):
        emit_report(rep, Family([]), tmp_path)


def test_emit_deterministic(euclid_family, euclid, tmp_path):
    pf, fam = euclid_family
    a = emit_report(check_foliation(euclid, pf, fam, sc_p=0.0), fam, tmp_path / "a")
    b = emit_report(check_foliation(euclid, pf, fam, sc_p=0.0, workers=2), fam, tmp_path / "b")
    for x, y in zip(a, b):
        assert filecmp.cmp(x, y, shallow=False)


def _numbers_close(x, y):
    if isinstance(x, dict):
        return x.keys() == y.keys() and all(_numbers_close(x[k], y[k]) for k in x)
    if isinstance(x, list):
        return len(x) == len(y) and all(_numbers_close(a, b) for a, b in zip(x, y))
    if isinstance(x, float) or isinstance(y, float):
        return abs(x - y) <= 1e-12 * max(1.0, abs(y))
    return x == y


def test_golden_snapshots(euclid_family, euclid, tmp_path):
    pf, fam = euclid_family
    files = emit_report(check_foliation(euclid, pf, fam, sc_p=0.0), fam, tmp_path)
    if os.environ.get("FOLIATE_REGEN_GOLDEN"):
        os.makedirs(GOLDEN, exist_ok=True)
        for f in files:
            shutil.copy(f, GOLDEN)
    for f in files:
        ref = os.path.join(GOLDEN, os.path.basename(f))
        if f.endswith(".json"):
            assert _numbers_close(json.load(open(f)), json.load(open(ref)))
        else:
            new, old = list(csv.reader(open(f))), list(csv.reader(open(ref)))
            assert new[0] == old[0] == ["r", "lambda", "tau_norm", "area", "energy", "eta_gap"]
            assert len(new) == len(old) == 7
            for rn, ro in zip(new[1:], old[1:]):
                assert _numbers_close([float(v) if v else None for v in rn], [float(v) if v else None for v in ro])
