import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vadblab.flat import (
    FlatEstimatorError, InfeasibleError, epsilon_for, flat_bound, good_set, neck_height,
    trend_to_zero, vadb_report,
)
from vadblab.geometry import DistanceMatrix
from oracles import brute_force_good_set


def dm(dist, weights):
    dist = np.asarray(dist, dtype=float)
    return DistanceMatrix(np.arange(len(weights)), dist, np.asarray(weights, dtype=float))


def test_identical_distances():
    d = [[0, 1, 2], [1, 0, 1], [2, 1, 0]]
    gs = good_set(dm(d, [1, 1, 1]), dm(d, [1, 1, 1]), 0.1, 2)
    assert gs.delta == 0 and gs.mask.all() and gs.sup_discrepancy == 0 and gs.excluded_volume == 0


def _four_point():
    d0 = np.ones((4, 4)) - np.eye(4)
    dj = d0.copy()
    dj[1, 2] = dj[2, 1] = 3.0
    return dm(d0, [1] * 4), dm(dj, [1] * 4)


def test_four_point_instance():
    d0, dj = _four_point()
    gs = good_set(d0, dj, 0.3, 2)
    assert gs.delta == 0.0
    assert gs.mask.all()
    assert gs.sup_discrepancy == 2.0
    assert gs.excluded_volume == 0.0
    assert gs.slice_fractions.min() == 0.75


def test_four_point_instance_tight_target():
    d0, dj = _four_point()
    gs = good_set(d0, dj, 0.06, 10)
    assert gs.delta == 2.0 and gs.mask.all()


def test_precondition_errors():
    d0, dj = _four_point()
    for eps, kappa in [(0.0, 2), (0.3, 1.0), (0.6, 2.0)]:
        with pytest.raises(FlatEstimatorError):
            good_set(d0, dj, eps, kappa)
    with pytest.raises(InfeasibleError):
        good_set(dm(np.zeros((2, 2)), [0, 0]), dm(np.zeros((2, 2)), [0, 0]), 0.1, 2)
    with pytest.raises(FlatEstimatorError):
        good_set(d0, DistanceMatrix(np.arange(1, 5), dj.distances, dj.weights), 0.1, 2)


@st.composite
def instances(draw):
    n = draw(st.integers(1, 6))
    pts = draw(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=n, max_size=n))
    bumps = draw(st.lists(st.integers(0, 3), min_size=n * n, max_size=n * n))
    w = draw(st.lists(st.integers(0, 5), min_size=n, max_size=n))
    if sum(w) == 0:
        w[0] = 1
    p = np.array(pts, dtype=float)
    d0 = np.abs(p[:, None, :] - p[None, :, :]).sum(-1)
    b = np.array(bumps, dtype=float).reshape(n, n)
    b = np.maximum(b, b.T)
    np.fill_diagonal(b, 0)
    dj = d0 + b
    kappa = draw(st.sampled_from([1.5, 2.0, 3.0, 4.0, 10.0]))
    eps = draw(st.floats(0.01, 0.99 / kappa))
    return d0, dj, w, eps, kappa


@settings(max_examples=300, deadline=None)
@given(instances())
def test_good_set_matches_exhaustive_oracle(inst):
    d0, dj, w, eps, kappa = inst
    gs = good_set(dm(d0, w), dm(dj, w), eps, kappa)
    delta, keep, sup = brute_force_good_set(d0.tolist(), dj.tolist(), w, eps, kappa)
    assert gs.delta == delta
    assert gs.mask.tolist() == keep
    assert gs.sup_discrepancy == sup
    assert np.all(gs.slice_fractions[gs.mask] > 1 - kappa * eps)


def test_neck_height_examples():
    assert neck_height(0.0, 3.0) == 0.0
    assert neck_height(0.005, 10) == pytest.approx(math.sqrt(0.100025), abs=1e-15)
    assert neck_height(0.005, 10) == pytest.approx(0.316267, abs=1e-6)
    with pytest.raises(FlatEstimatorError):
        neck_height(-1, 2)
    with pytest.raises(FlatEstimatorError):
        neck_height(1, 0)


@settings(max_examples=100, deadline=None)
@given(d=st.floats(0, 10), D=st.floats(0.01, 100), dd=st.floats(0, 1), dD=st.floats(0, 1))
def test_neck_height_identity_and_monotone(d, D, dd, dD):
    h = neck_height(d, D)
    assert h * h == pytest.approx(2 * d * D + d * d, rel=1e-12, abs=1e-300)
    assert neck_height(d + dd, D + dD) >= h


def test_flat_bound_examples():
    assert flat_bound(0, 0, 0, 0) == 0
    assert flat_bound(0.1, 0.2, 40, 13) == pytest.approx(10.8)
    with pytest.raises(FlatEstimatorError):
        flat_bound(-0.1, 0, 0, 0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=4, max_size=4), st.integers(0, 3), st.floats(0, 5))
def test_flat_bound_monotone(args, k, inc):
    bumped = list(args)
    bumped[k] += inc
    assert flat_bound(*bumped) >= flat_bound(*args)


def test_epsilon_for_range():
    d0, _ = _four_point()
    eps = epsilon_for(d0, 1.0, 4.0)
    assert 0 < eps < 1 / 8
    assert eps == pytest.approx(1 / 4 / 8)


def test_trend_to_zero():
    assert trend_to_zero([3, 2, 1])
    assert trend_to_zero([1, 2, 0])
    assert not trend_to_zero([1, 1, 1])
    assert not trend_to_zero([1, 2, 3])
    assert trend_to_zero([0.0])


def test_flat_family_report_is_zero():
    rep = vadb_report("flat", [1, 2, 3], 24, n_samples=64, stencil_radius=2)
    assert rep.passed
    for row in rep.rows:
        assert row.V_j == 0 and row.delta_j == 0 and row.flat_bound == 0


def test_single_ridge_modes():
    kw = dict(n_samples=64, stencil_radius=2)
    bn = vadb_report("single-ridge", [4, 8, 16], 48, "boundary-norm", **kw)
    assert not bn.hypotheses["boundary_norm"]
    ci = vadb_report("single-ridge", [4, 8, 16], 48, "convex-interior", **kw)
    assert ci.passed, ci.hypotheses


def test_report_invariants():
    rep = vadb_report("taxi-finsler", [2, 3], 33, n_samples=64, stencil_radius=2)
    for row in rep.rows:
        assert row.flat_bound == pytest.approx(2 * row.V_j + row.h_j * rep.V + row.h_j * rep.A)
        assert row.h_j ** 2 == pytest.approx(2 * row.delta_j * rep.D + row.delta_j ** 2)
        assert row.excluded_ok
    assert rep.hypotheses["boundary_norm"] and rep.hypotheses["dominance"]


def test_unknown_mode():
    with pytest.raises(FlatEstimatorError):
        vadb_report("flat", [1], 16, "sideways")
