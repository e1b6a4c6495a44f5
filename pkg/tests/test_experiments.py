import math

import numpy as np
import pytest
from scipy.integrate import quad

from vadblab.experiments import (
    Observable, bubble_neck_integral, cinched_limit_distance, doubled_distance_run,
    pmt_graph_run, pmt_volume_oracle, run_example, taxi_limit_distance, unit_sphere_area,
)


def test_taxi_limit_distance():
    assert taxi_limit_distance(0.0, math.pi) == pytest.approx(math.pi)
    assert taxi_limit_distance(1.0, 0.0) == pytest.approx(math.sqrt(24) / 5)
    assert taxi_limit_distance(0.1, 0.001) == pytest.approx(0.1 * math.sqrt(24) / 5 + 0.001)
    assert taxi_limit_distance(0.3, 0.2) <= math.hypot(0.3, 1.0)


def test_cinched_limit_distance():
    # same side, tiny angular gap: flat geodesic
    assert cinched_limit_distance((1.0, 0.0), (1.5, 0.1), 0.5) == pytest.approx(math.hypot(0.5, 0.1))
    # h0 = 1: no shortcut
    assert cinched_limit_distance((-1.0, 0.0), (1.0, 3.0), 1.0) == pytest.approx(math.hypot(2, 3))
    # oblique legs beat perpendicular ones
    val = cinched_limit_distance((-math.pi / 2, 0.0), (math.pi / 2, math.pi), 0.5)
    assert val == pytest.approx(math.pi * math.sqrt(0.75) + 0.5 * math.pi)
    assert val < math.pi + 0.5 * math.pi


def test_cinched_limit_against_brute_minimisation():
    p, q, h0 = (-1.0, 0.3), (0.7, 2.5), 0.4
    best = math.hypot(1.7, 2.2)
    for a in np.linspace(0.3, 2.5, 2201):
        for b in np.linspace(a, 2.5, 60):
            best = min(best, math.hypot(1.0, a - 0.3) + h0 * (b - a) + math.hypot(0.7, 2.5 - b))
    assert cinched_limit_distance(p, q, h0) == pytest.approx(best, rel=1e-3)
    assert cinched_limit_distance(p, q, h0) <= best + 1e-12


def test_bubble_integral_decreases():
    vals = [bubble_neck_integral(j) for j in (2, 4, 8, 16, 32, 64)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("n,m", [(3, 0.01), (3, 0.1), (4, 0.05)])
def test_pmt_oracle_against_algebraic_weight_quadrature(n, m):
    inner = (2 * m) ** (1 / (n - 2))
    if n == 3:
        f = lambda rho: rho ** 2 * math.sqrt(rho)  # times (rho - 2m)^(-1/2)
        val, _ = quad(f, inner, 1.0, weight="alg", wvar=(-0.5, 0.0), epsabs=1e-13)
    else:
        f = lambda rho: rho ** 3 * rho / math.sqrt(rho + inner)
        val, _ = quad(f, inner, 1.0, weight="alg", wvar=(-0.5, 0.0), epsabs=1e-13)
    assert pmt_volume_oracle(n, m, 1.0) == pytest.approx(unit_sphere_area(n) * val, rel=1e-9)


def test_unit_sphere_area():
    assert unit_sphere_area(3) == pytest.approx(4 * math.pi)
    assert unit_sphere_area(4) == pytest.approx(2 * math.pi ** 2)


def test_observable_comparisons():
    assert Observable("a", 1.01, 1.0, 0.02, "rel", "x").passed
    assert not Observable("a", 1.03, 1.0, 0.02, "rel", "x").passed
    assert Observable("a", 1.0, 2.0, 0.0, "le", "x").passed
    assert not Observable("a", 1.0, 2.0, 0.0, "ge", "x").passed
    with pytest.raises(ValueError):
        Observable("a", 1.0, 2.0, 0.0, "??", "x").passed


def test_taxi_example_small():
    rep = run_example("taxi-finsler", [4], 64, n_samples=64, stencil_radius=2)
    assert rep.observable("taxi probe (0,0)-(0,pi)", 4).passed
    assert rep.observable("volume", 4).passed
    assert rep.flat_report.hypotheses["boundary_norm"]
    # the taxi volume limit is 20 pi^2, not the background volume
    assert not rep.flat_report.hypotheses["volume_convergence"]


@pytest.mark.parametrize("family", ["cinched-torus", "cinched-sphere"])
def test_cinched_examples_fail_dominance(family):
    rep = run_example(family, [4, 8], 33, stencil_radius=2)
    assert all(not row["dominance_pass"] for row in rep.rows)
    assert all(o.passed for o in rep.observables if o.name != "cinch probe")
    for row in rep.rows:
        assert row["dominance_min_eig"] == pytest.approx(0.25 - 1.0)


def test_flat_example():
    rep = run_example("flat", [1, 2], 24, n_samples=64, stencil_radius=2)
    assert rep.passed
    assert all(row["flat_bound"] == 0 for row in rep.rows)


def test_unknown_family():
    with pytest.raises(ValueError):
        run_example("klein-bottle", [1], 16)


def test_pmt_small_run():
    rep = pmt_graph_run(3, [0.1, 0.01], resolution=(12, 8, 12), stencil_radius=1)
    assert rep.observables[-1].passed
    assert rep.rows[0]["excess"] > rep.rows[1]["excess"] > 0
    for row in rep.rows:
        assert row["diam"] <= row["diam_bound"]
        assert row["bdry_area"] <= row["area_bound"]


def test_pmt_inner_radius_violation():
    with pytest.raises(ValueError):
        pmt_graph_run(3, [0.3], r=1.0, r0=0.5)
    with pytest.raises(ValueError):
        pmt_graph_run(3, [], r=1.0)


def test_doubled_distance_run_shapes():
    rep = doubled_distance_run(deltas=(0.1, 0.05), resolution=(17, 16), n_samples=16,
                               stencil_radius=2)
    assert [r["delta"] for r in rep.rows] == [0.1, 0.05]
    assert all(r["doubled_not_longer"] for r in rep.rows)
