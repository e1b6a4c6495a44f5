"""Acceptance criteria, one test each. Every test prints a single PASS/FAIL line."""

import math
import time

import numpy as np
import pytest

from oracles import brute_force_good_set
from vadblab.cli import main
from vadblab.experiments import (
    doubled_distance_run, doubling_run, pmt_graph_run, pmt_volume_oracle, run_example,
)
from vadblab.families import (
    background_spec, family_domain, family_spec, sample_metric,
)
from vadblab.flat import good_set, vadb_report
from vadblab.geometry import (
    DistanceMatrix, distance_matrix, estimate_diameter, stratified_samples,
    volume, weighted_graph,
)
from vadblab.mesh import build_grid_mesh


@pytest.fixture
def verdict(capsys):
    def report(number, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} | {detail}")
        return ok
    return report


def test_criterion_01_flat_oracles(verdict):
    start = time.perf_counter()
    mesh = build_grid_mesh(family_domain("flat"), 128, 3)
    g = sample_metric(family_spec("flat", 1), mesh)
    vol = volume(g)
    graph = weighted_graph(g)
    dm = distance_matrix(g, stratified_samples(mesh, 512), graph=graph)
    diam = max(float(dm.distances.max()), estimate_diameter(g, graph=graph))
    elapsed = time.perf_counter() - start
    vol_err = abs(vol / (4 * math.pi ** 2) - 1)
    diam_err = abs(diam / (math.pi * math.sqrt(5)) - 1)
    ok = vol_err <= 0.005 and diam_err <= 0.02 and elapsed < 10
    assert verdict(1, ok, f"vol rel err {vol_err:.2e}, diam rel err {diam_err:.2e}, {elapsed:.1f}s")


def test_criterion_02_volume_targets(verdict):
    cases = [("taxi-finsler", 8, 20 * math.pi ** 2),
             ("bubble-torus", 32, math.pi + 4 * math.pi ** 2),
             ("spline-torus", 32, 4 * math.pi ** 2)]
    ok, parts = True, []
    for family, j, target in cases:
        mesh = build_grid_mesh(family_domain(family), 128, 1)
        vol = volume(sample_metric(family_spec(family, j), mesh), refine_tol=1e-4)
        err = abs(vol / target - 1)
        ok &= err <= 0.01
        parts.append(f"{family} j={j} rel err {err:.3%}")
    assert verdict(2, ok, "; ".join(parts))


DOMINATED = ["flat", "single-ridge", "spline-torus", "bubble-torus", "taxi-finsler", "pmt-graph"]


def test_criterion_03_distance_dominance(verdict):
    ok, parts = True, []
    for family in DOMINATED:
        params = {"mass": 0.05, "inner": 0.2} if family == "pmt-graph" else None
        res = (12, 8, 12) if family == "pmt-graph" else 48
        mesh = build_grid_mesh(family_domain(family, params, res), res, 2)
        # 3-D strata are coarser per sample count, so the shell needs more blocks
        samples = stratified_samples(mesh, 1000 if family == "pmt-graph" else 160, seed=1)
        d0 = distance_matrix(sample_metric(background_spec(family, params), mesh), samples)
        worst, pairs = math.inf, 0
        for j in (2, 8, 32):
            gj = sample_metric(family_spec(family, j, params), mesh)
            dj = distance_matrix(gj, samples)
            iu = np.triu_indices(len(samples.ids), 1)
            pairs = iu[0].size
            worst = min(worst, float((dj.distances - d0.distances)[iu].min()))
        ok &= worst >= 0.0 and pairs >= 10_000
        parts.append(f"{family}: min(dj-d0)={worst:.3g} over {pairs} pairs")
    assert verdict(3, ok, "; ".join(parts))


def test_criterion_04_neck_construction(verdict):
    ok, parts = True, []
    for family in ("flat", "single-ridge", "cinched-sphere", "taxi-finsler", "pmt-graph"):
        rep = doubling_run(family, (0.1, 0.05, 0.025))
        fam_ok = rep.passed and all(
            r["max_deviation"] <= r["deviation_bound"] + 1e-8 and r["mirror_exact"] for r in rep.rows)
        ok &= fam_ok
        worst = max(r["max_deviation"] / max(r["deviation_bound"], 1e-300) for r in rep.rows)
        parts.append(f"{family}: {'ok' if fam_ok else 'bad'} (deviation/bound <= {worst:.3f})")
    assert verdict(4, ok, "; ".join(parts))


def test_criterion_05_doubled_distances(verdict):
    rep = doubled_distance_run("single-ridge", (0.1, 0.05, 0.025))
    within = all(r["max_difference"] <= r["bound"] + r["slack"] for r in rep.rows)
    diffs = [r["max_difference"] for r in rep.rows]
    decreasing = all(b < a for a, b in zip(diffs, diffs[1:]))
    detail = (f"max differences {diffs} (bound+slack {[round(r['bound'] + r['slack'], 4) for r in rep.rows]}); "
              f"within bound: {within}; strictly decreasing: {decreasing}")
    assert verdict(5, within and decreasing, detail)


def test_criterion_06_flat_bound_pipeline(verdict):
    start = time.perf_counter()
    rep = vadb_report("spline-torus", [4, 8, 16, 32], 128, "boundary-norm", n_samples=512)
    elapsed = time.perf_counter() - start
    bounds = rep.bounds()
    decreasing = all(b < a for a, b in zip(bounds, bounds[1:]))
    ratio = bounds[-1] / rep.vol0
    flat = vadb_report("flat", [1, 2, 4], 32, n_samples=128)
    flat_zero = all(b == 0.0 for b in flat.bounds())
    ok = decreasing and ratio < 0.25 and flat_zero and elapsed < 300
    detail = (f"spline bound/Vol0 = {[round(b / rep.vol0, 4) for b in bounds]}, strictly decreasing: "
              f"{decreasing}, j=32 ratio {ratio:.3f} (< 0.25 required); flat bounds {flat.bounds()}; "
              f"{elapsed:.0f}s")
    assert verdict(6, ok, detail)


def _random_instance(rng):
    n = int(rng.integers(1, 7))
    pts = rng.integers(0, 4, size=(n, 2)).astype(float)
    d0 = np.abs(pts[:, None] - pts[None]).sum(-1)
    bump = rng.integers(0, 3, size=(n, n)).astype(float)
    bump = np.maximum(bump, bump.T)
    np.fill_diagonal(bump, 0)
    w = rng.integers(0, 4, size=n).astype(float)
    if w.sum() == 0:
        w[0] = 1
    kappa = float(rng.choice([1.5, 2.0, 4.0, 10.0]))
    eps = float(rng.uniform(0.01, 0.99 / kappa))
    return d0, d0 + bump, w, eps, kappa


def test_criterion_07_good_set_brute_force(verdict):
    rng = np.random.default_rng(2024)
    mismatches, count = 0, 3000
    for _ in range(count):
        d0, dj, w, eps, kappa = _random_instance(rng)
        ids = np.arange(len(w))
        gs = good_set(DistanceMatrix(ids, d0, w), DistanceMatrix(ids, dj, w), eps, kappa)
        delta, keep, sup = brute_force_good_set(d0.tolist(), dj.tolist(), w.tolist(), eps, kappa)
        if gs.delta != delta or gs.mask.tolist() != keep or gs.sup_discrepancy != sup:
            mismatches += 1
    assert verdict(7, mismatches == 0, f"{count} random instances, {mismatches} mismatches")


def test_criterion_08_pmt(verdict):
    start = time.perf_counter()
    rep = pmt_graph_run(3, [0.1, 0.05, 0.01], r=1.0, r0=0.5)
    elapsed = time.perf_counter() - start
    rows = rep.rows
    excess = [r["excess"] for r in rows]
    decreasing = all(b < a for a, b in zip(excess, excess[1:]))
    last = rows[-1]
    oracle = pmt_volume_oracle(3, 0.01, 1.0)
    vol_ok = abs(last["vol"] / oracle - 1) <= 0.02 and last["vol"] >= 4 * math.pi / 3
    bounds_ok = all(r["diam"] <= r["diam_bound"] and
                    r["bdry_area"] <= 4 * math.pi * math.sqrt(1 + r["gamma"] ** 2) for r in rows)
    ok = decreasing and vol_ok and bounds_ok and elapsed < 120
    detail = (f"excess {[round(e, 5) for e in excess]}; m=0.01 vol {last['vol']:.5f} vs oracle "
              f"{oracle:.5f}; bounds hold: {bounds_ok}; {elapsed:.0f}s")
    assert verdict(8, ok, detail)


def test_criterion_09_hypothesis_discrimination(verdict):
    ridge = vadb_report("single-ridge", [4, 8, 16], 64, "boundary-norm", n_samples=128)
    taxi = vadb_report("taxi-finsler", [2, 3, 4], 65, "boundary-norm", n_samples=128,
                       params={"boundary_cinches": True})
    h0 = 0.5
    eigs = {}
    for family in ("cinched-torus", "cinched-sphere"):
        rep = run_example(family, [8, 32], 65, stencil_radius=2)
        eigs[family] = [r["dominance_min_eig"] for r in rep.rows]
        eigs[family + " passes"] = any(r["dominance_pass"] for r in rep.rows)
    cinch_ok = all(not eigs[f + " passes"] and all(abs(e - (h0 * h0 - 1)) <= 1e-9 for e in eigs[f])
                   for f in ("cinched-torus", "cinched-sphere"))
    ok = (not ridge.hypotheses["boundary_norm"]) and taxi.hypotheses["boundary_norm"] and cinch_ok
    detail = (f"single-ridge boundary norm flag {ridge.hypotheses['boundary_norm']}, "
              f"taxi {taxi.hypotheses['boundary_norm']}; cinched min eigenvalues "
              f"{eigs['cinched-torus']} / {eigs['cinched-sphere']} vs {h0 * h0 - 1}")
    assert verdict(9, ok, detail)


def test_criterion_10_determinism(verdict, tmp_path):
    runs = [
        ["flat-bound", "--family", "spline-torus", "--j", "4,8", "--res", "32", "--samples", "64",
         "--seed", "5"],
        ["example", "run", "--family", "taxi-finsler", "--j", "2,3", "--res", "33", "--samples",
         "64"],
        ["pmt", "run", "--masses", "0.1,0.01", "--res", "10,6,8", "--stencil", "1"],
    ]
    same = True
    for k, args in enumerate(runs):
        outputs = []
        for rep in ("a", "b"):
            out = tmp_path / f"{k}{rep}"
            main(args + ["--out", str(out)])
            outputs.append(sorted((p.name, p.read_bytes()) for p in out.glob("*.csv")))
        same &= outputs[0] == outputs[1] and len(outputs[0]) > 0
    assert verdict(10, same, f"{len(runs)} commands rerun, CSVs byte-identical: {same}")
