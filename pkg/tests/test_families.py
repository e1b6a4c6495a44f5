import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vadblab.families import (
    DOMINATES_BACKGROUND, PROFILE_IDS, MetricSpec, ProfileError, background_spec, canonical_bump,
    family_domain, family_spec, geometric_blend, graph_spec, sample_metric, schwarzschild_height,
    schwarzschild_slope, warping_profile,
)
from vadblab.geometry import dominance_check
from vadblab.mesh import build_grid_mesh, cylinder, torus, unit_square


def test_cinched_torus_profile_values():
    assert warping_profile("cinched-torus", 4, np.pi) == 1.0
    assert warping_profile("cinched-torus", 7, 0.0, h0=0.5) == 0.5
    assert canonical_bump(0.5, 0.5) == pytest.approx(23 / 32, abs=1e-15)
    # s = j r = 1/2
    assert warping_profile("cinched-torus", 4, 1 / 8, h0=0.5) == pytest.approx(23 / 32, abs=1e-15)


@pytest.mark.parametrize("j", [2, 4, 16, 32])
def test_spline_middle_branch_meets_outer(j):
    val = warping_profile("spline-torus", j, 1.0 / j, eta=2.0)
    assert val == pytest.approx(j / (1 + math.log(j)), rel=1e-12)


@pytest.mark.parametrize("family,breaks", [
    ("cinched-torus", lambda j: [1.0 / j, -1.0 / j]),
    ("single-ridge", lambda j: [1.0 / j]),
    ("bubble-torus", lambda j: [1.0 / j, 2.0 / j]),
    ("spline-torus", lambda j: [float(j) ** -2.0, 1.0 / j, 2.0 / j]),
    ("cinched-sphere", lambda j: [np.pi / 2 - 1.0 / j, np.pi / 2 + 1.0 / j]),
])
@pytest.mark.parametrize("j", [3, 8, 32])
def test_profile_continuity_at_breakpoints(family, breaks, j):
    for b in breaks(j):
        lo = warping_profile(family, j, b * (1 - 1e-13) if b > 0 else b * (1 + 1e-13))
        hi = warping_profile(family, j, b * (1 + 1e-13) if b > 0 else b * (1 - 1e-13))
        at = warping_profile(family, j, b)
        assert abs(lo - at) < 1e-9 * max(1, at) and abs(hi - at) < 1e-9 * max(1, at)


def test_bubble_endpoints():
    j = 10
    assert warping_profile("bubble-torus", j, 1.0 / j) == pytest.approx(j)
    assert warping_profile("bubble-torus", j, 2.0 / j) == pytest.approx(1.0)
    assert geometric_blend(1.0, 7.0) == pytest.approx(7.0)
    assert geometric_blend(2.0, 7.0) == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(r=st.floats(0.0, np.pi), j=st.integers(1, 64))
def test_cinched_profiles_even(r, j):
    assert warping_profile("cinched-torus", j, r) == warping_profile("cinched-torus", j, -r)
    d = min(r, np.pi / 2 - 0.31)
    assert warping_profile("cinched-sphere", j, np.pi / 2 + d) == pytest.approx(
        warping_profile("cinched-sphere", j, np.pi / 2 - d), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(r=st.floats(-np.pi, np.pi), j=st.integers(1, 6))
def test_taxi_profile_range(r, j):
    v = warping_profile("taxi-finsler", j, r)
    assert 1.0 - 1e-12 <= v <= 5.0


def test_taxi_boundary_cinches_switch():
    assert warping_profile("taxi-finsler", 3, np.pi) == 1.0
    assert warping_profile("taxi-finsler", 3, -np.pi) == 1.0
    assert warping_profile("taxi-finsler", 3, np.pi, boundary_cinches=False) == 5.0


def test_profile_domain_errors():
    with pytest.raises(ProfileError):
        warping_profile("cinched-torus", 4, 4.0)
    with pytest.raises(ProfileError):
        warping_profile("cinched-torus", 0, 0.0)
    with pytest.raises(ProfileError):
        warping_profile("cinched-torus", 4, 0.0, h0=1.5)
    with pytest.raises(ProfileError):
        warping_profile("pmt-graph", 4, 0.5)


def test_schwarzschild_values():
    assert schwarzschild_height(3, 0.5, 2.0) == pytest.approx(2.0)
    assert schwarzschild_height(3, 0.5, 1.0) == 0.0
    assert schwarzschild_height(4, 0.5, 1.0) == 0.0
    with pytest.raises(ProfileError):
        schwarzschild_height(3, 0.5, 0.9)
    with pytest.raises(ProfileError):
        schwarzschild_height(5, 0.5, 2.0)


@pytest.mark.parametrize("n,m", [(3, 0.5), (3, 0.01), (4, 0.5), (4, 0.05)])
def test_schwarzschild_monotone_and_slope(n, m):
    inner = (2 * m) ** (1 / (n - 2))
    rho = np.linspace(inner, inner + 3, 2001)
    h = schwarzschild_height(n, m, rho)
    assert np.all(np.diff(h) >= 0)
    x = rho[10:-10]
    step = 1e-6
    fd = (schwarzschild_height(n, m, x + step) - schwarzschild_height(n, m, x - step)) / (2 * step)
    assert np.allclose(fd, schwarzschild_slope(n, m, x), rtol=1e-5)


def test_sample_flat_is_identity():
    mesh = build_grid_mesh(cylinder(), 8)
    g = sample_metric(family_spec("flat", 1), mesh)
    assert np.array_equal(g.values, np.broadcast_to(np.eye(2), g.values.shape))


def test_sample_cinched_at_zero():
    mesh = build_grid_mesh(cylinder(), (9, 8))
    g = sample_metric(family_spec("cinched-torus", 4), mesh)
    at0 = np.flatnonzero(mesh.vertices[:, 0] == 0.0)
    assert at0.size == 8
    assert np.allclose(g.values[at0], np.diag([1.0, 0.25]))


def test_pmt_radial_entry():
    spec = family_spec("pmt-graph", 1, {"n": 3, "mass": 0.5, "r": 3.0, "inner": 1.5})
    g = spec.evaluate([[2.0, 1.0, 1.0]])
    assert g[0, 0, 0] == pytest.approx(2.0, rel=1e-14)
    # centred differences of the height agree
    step = 1e-6
    fd = (schwarzschild_height(3, 0.5, 2 + step) - schwarzschild_height(3, 0.5, 2 - step)) / (2 * step)
    assert 1 + fd ** 2 == pytest.approx(2.0, rel=1e-8)


def test_user_graph_centered_differences():
    dom = unit_square()
    mesh = build_grid_mesh(dom, 16)
    g = sample_metric(graph_spec(dom, lambda x: 2 * x[:, 0] + x[:, 1]), mesh)
    assert np.allclose(g.values[5], np.eye(2) + np.outer([2, 1], [2, 1]))


def test_domain_mismatch():
    mesh = build_grid_mesh(torus(), 8)
    with pytest.raises(ProfileError):
        sample_metric(family_spec("cinched-torus", 4), mesh)


def test_unknown_family():
    with pytest.raises(ProfileError):
        family_spec("nope", 1)
    with pytest.raises(ProfileError):
        MetricSpec("hyperbolic")


@pytest.mark.parametrize("family", [f for f in PROFILE_IDS if DOMINATES_BACKGROUND[f]])
@pytest.mark.parametrize("j", [2, 8, 32])
def test_dominated_families_dominate_on_mesh(family, j):
    p = {"mass": 0.05, "inner": 0.2} if family == "pmt-graph" else None
    res = (8, 6, 8) if family == "pmt-graph" else 33
    mesh = build_grid_mesh(family_domain(family, p, res), res, 1)
    g0 = sample_metric(background_spec(family, p), mesh)
    gj = sample_metric(family_spec(family, j, p), mesh)
    assert dominance_check(g0, gj, 1e-12).min_eigenvalue >= -1e-12


@pytest.mark.parametrize("family", ["cinched-torus", "cinched-sphere"])
def test_cinched_families_fail_dominance(family):
    mesh = build_grid_mesh(family_domain(family), 33, 1)
    rep = dominance_check(sample_metric(background_spec(family), mesh),
                          sample_metric(family_spec(family, 4), mesh))
    assert not rep.passed and rep.min_eigenvalue < -0.5
