import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from foliate.errors import LeftChart, OutOfChart
from foliate.metric import curvature_at, metric_jet
from foliate.normal_chart import (
    exp_map,
    geodesic_flow,
    lee_parker_metric,
    log_map,
    log_map_batch,
    normal_pullback,
    parallel_frame,
    riemann_from_ricci,
    transport,
)

vec = st.tuples(*[st.floats(-1.0, 1.0)] * 3).map(np.array)


def test_flat_geodesics_are_lines(euclid):
    x, v = geodesic_flow(euclid, [0.1, 0.2, 0.0], [0.3, -0.1, 0.2])
    np.testing.assert_allclose(x, [0.4, 0.1, 0.2], atol=1e-14)
    np.testing.assert_allclose(v, [0.3, -0.1, 0.2], atol=1e-14)


def test_space_form_radial_geodesics(s3):
    # normal coordinates at the origin: radial geodesics are straight lines at unit speed
    v = np.array([0.2, -0.3, 0.1])
    np.testing.assert_allclose(exp_map(s3, np.zeros(3), v), v, atol=1e-12)


@given(base=vec, v=vec)
def test_exp_log_round_trip(base, v, bump_b):
    base = 0.2 * base
    v = 0.25 * v
    y = exp_map(bump_b, base, v)
    np.testing.assert_allclose(log_map(bump_b, base, y), v, atol=1e-9)


def test_batched_log_matches_single(bump_b):
    rng = np.random.default_rng(1)
    ys = rng.uniform(-0.3, 0.3, (12, 3))
    base = np.array([0.05, -0.02, 0.01])
    vs = log_map_batch(bump_b, base, ys)
    np.testing.assert_allclose(exp_map(bump_b, base, vs), ys, atol=1e-10)
    np.testing.assert_allclose(vs[3], log_map(bump_b, base, ys[3]), atol=1e-9)


def test_geodesic_leaving_chart(s3):
    with pytest.raises(LeftChart):
        exp_map(s3, np.zeros(3), [3.0, 0.0, 0.0])
    with pytest.raises(OutOfChart):
        log_map(s3, np.zeros(3), [5.0, 0.0, 0.0])


def test_transport_preserves_orthonormality(bump_b):
    fr = parallel_frame(bump_b, np.array([0.2, -0.1, 0.15]))
    assert fr.orthonormality_error(bump_b) < 1e-11


def test_transport_round_trip(bump_b):
    E0 = parallel_frame(bump_b, np.zeros(3)).vectors
    v = np.array([0.2, 0.1, -0.1])
    end, vel, E1 = transport(bump_b, np.zeros(3), v, E0)
    back, _, E2 = transport(bump_b, end, -vel, E1)
    np.testing.assert_allclose(back, 0, atol=1e-12)
    np.testing.assert_allclose(E2, E0, atol=1e-11)


def test_parallel_frame_at_zero_is_identity_map(bump_b):
    fr = parallel_frame(bump_b, np.zeros(3))
    g = metric_jet(bump_b, np.zeros(3), 0).g
    np.testing.assert_allclose(fr.vectors.T @ g @ fr.vectors, np.eye(3), atol=1e-14)
    np.testing.assert_array_equal(fr.base, 0)


@given(ric=st.lists(st.floats(-2, 2), min_size=6, max_size=6))
def test_riemann_from_ricci_traces_back(ric):
    a, b, c, d, e, f = ric
    Ric = np.array([[a, b, c], [b, d, e], [c, e, f]])
    R = riemann_from_ricci(Ric)
    np.testing.assert_allclose(-np.einsum("tpqt->pq", R), Ric, atol=1e-12)
    np.testing.assert_allclose(R, -R.transpose(1, 0, 2, 3), atol=1e-12)


def test_riemann_from_ricci_space_form(s3):
    c = curvature_at(s3, np.zeros(3))
    np.testing.assert_allclose(riemann_from_ricci(c.ric), c.riemann, atol=1e-12)


@pytest.mark.parametrize("name", ["s3", "bump_b"])
def test_lee_parker_expansion_order(name, request):
    spec = request.getfixturevalue(name)
    fr = parallel_frame(spec, np.zeros(3))
    curv = curvature_at(spec, np.zeros(3), fr.vectors)
    x = np.array([0.6, -0.48, 0.64])
    sig = np.array([0.05, 0.08, 0.12, 0.18])
    errs = [np.abs(normal_pullback(spec, fr.base, fr.vectors, x, s) - lee_parker_metric(curv, x, s)).max() for s in sig]
    slope = np.polyfit(np.log(sig), np.log(errs), 1)[0]
    assert slope >= 4.5
