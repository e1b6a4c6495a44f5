"""Good-set extraction, neck height, the flat-distance upper bound and the hypothesis report."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .families import (
    DOMINATES_BACKGROUND, background_spec, family_domain, family_spec, resolve_params, sample_metric,
)
from .geometry import (
    DistanceMatrix, MetricField, boundary_area, boundary_lp_distance, distance_matrix,
    dominance_check, estimate_diameter, lp_metric_distance, stratified_samples, volume,
    weighted_graph,
)
from .mesh import build_grid_mesh

log = logging.getLogger(__name__)

MODES = ("boundary-norm", "interior-Lm/2", "convex-interior")
LAMBDA_DIVISORS = (8, 16, 32)

# families whose background interior is convex (declared, not verified)
CONVEX_INTERIOR = {
    "flat": True, "cinched-torus": True, "taxi-finsler": True, "single-ridge": True,
    "bubble-torus": True, "spline-torus": True, "cinched-sphere": False, "pmt-graph": False,
}


class FlatEstimatorError(ValueError):
    pass


class InfeasibleError(FlatEstimatorError):
    pass


@dataclass
class GoodSet:
    ids: np.ndarray
    mask: np.ndarray
    eps: float
    kappa: float
    delta: float
    slice_fractions: np.ndarray
    sup_discrepancy: float
    sup_excess: float
    excluded_volume: float
    excluded_fraction0: float


def _check_pair(d0: DistanceMatrix, dj: DistanceMatrix):
    if d0.ids.shape != dj.ids.shape or np.any(d0.ids != dj.ids):
        raise FlatEstimatorError("distance matrices use different sample sets")
    if np.any(d0.weights < 0) or not d0.weights.sum() > 0:
        raise InfeasibleError("sample weights must be nonnegative with positive total")


def good_set(d0: DistanceMatrix, dj: DistanceMatrix, eps: float, kappa: float) -> GoodSet:
    """Discrete good set.

    ``delta`` is the smallest discrepancy value t such that pairs with
    |dj - d0| <= t carry at least (1 - eps) of the product weight w0 x w0
    (ordered pairs, diagonal included). A point is kept when its slice
    {q : |dj - d0|(p, q) <= delta} carries more than (1 - kappa eps) of w0.
    """
    _check_pair(d0, dj)
    if not (0.0 < eps < 1.0 and kappa > 1.0 and kappa * eps < 1.0):
        raise FlatEstimatorError("need 0 < eps < 1, kappa > 1 and kappa * eps < 1")
    w = np.asarray(d0.weights, dtype=float)
    disc = np.abs(dj.distances - d0.distances)
    flat = disc.ravel()
    pair_w = np.outer(w, w).ravel()
    order = np.argsort(flat, kind="stable")
    vals = flat[order]
    cum = np.cumsum(pair_w[order])
    last = np.flatnonzero(np.append(vals[1:] != vals[:-1], True))
    target = (1.0 - eps) * cum[-1]
    hit = np.flatnonzero(cum[last] >= target)
    if hit.size == 0:
        raise InfeasibleError("no threshold reaches the pair-measure target")
    delta = float(vals[last[hit[0]]])
    inside = disc <= delta
    fractions = (inside * w[None, :]).sum(axis=1) / w.sum()
    mask = fractions > 1.0 - kappa * eps
    sub = np.ix_(mask, mask)
    sup = float(disc[sub].max()) if mask.any() else 0.0
    excess = float(np.maximum(dj.distances - d0.distances, 0.0)[sub].max()) if mask.any() else 0.0
    return GoodSet(d0.ids[mask], mask, float(eps), float(kappa), delta, fractions, sup, excess,
                   float(dj.weights[~mask].sum()), float(w[~mask].sum() / w.sum()))


def neck_height(delta_j: float, D: float) -> float:
    if delta_j < 0 or D < 0:
        raise FlatEstimatorError("neck height needs nonnegative inputs")
    if not D > 0:
        raise FlatEstimatorError("D must be positive")
    return float(np.sqrt(2.0 * delta_j * D + delta_j * delta_j))


def flat_bound(V_j: float, h_j: float, V: float, A: float) -> float:
    if min(V_j, h_j, V, A) < 0:
        raise FlatEstimatorError("flat bound needs nonnegative inputs")
    return float(2.0 * V_j + h_j * V + h_j * A)


def epsilon_for(d0: DistanceMatrix, lam: float, kappa: float) -> float:
    """min over samples of Vol_0(B(x, lam / 2)) / (2 kappa Vol_0), kept inside (0, 1/(2 kappa))."""
    w = d0.weights
    ball = ((d0.distances < lam / 2.0) * w[None, :]).sum(axis=1)
    eps = float(ball.min() / (2.0 * kappa * w.sum()))
    return min(max(eps, 1e-300), (1.0 - 1e-9) / (2.0 * kappa))


def trend_to_zero(values, atol: float = 1e-10) -> bool:
    """Finite-sequence proxy for convergence to 0: already below ``atol``, or
    nonincreasing with a strict overall drop."""
    v = [abs(float(x)) for x in values]
    if not v:
        return True
    if v[-1] <= atol:
        return True
    if len(v) < 2:
        return False
    return all(b <= a for a, b in zip(v, v[1:])) and v[-1] < v[0]


@dataclass
class FlatBoundRow:
    j: int
    dominance_pass: bool
    dominance_min_eig: float
    diam: float
    vol: float
    bdry_area: float
    bdry_norm: float
    interior_norm: float
    V_j: float
    delta_j: float
    h_j: float
    flat_bound: float
    lam: float
    eps: float
    good_set_size: int
    excluded_fraction0: float
    excluded_ok: bool

    CSV_FIELDS = ("j", "dominance_pass", "diam", "vol", "bdry_area", "bdry_norm",
                  "V_j", "delta_j", "h_j", "flat_bound")


@dataclass
class FlatBoundReport:
    family: str
    mode: str
    rows: list
    D: float
    V: float
    A: float
    vol0: float
    diam0: float
    hypotheses: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.hypotheses.values())

    def bounds(self):
        return [r.flat_bound for r in self.rows]


def _diameter(field_: MetricField, dm: DistanceMatrix, graph) -> float:
    return max(float(dm.distances.max()), estimate_diameter(field_, graph=graph))


def vadb_report(family: str, j_list, resolution, mode: str = "boundary-norm", *, params=None,
                n_samples: int = 512, seed: int = 0, kappa: float = 4.0, stencil_radius: int = 3,
                workers: int | None = None, volume_tol: float | None = 1e-4,
                dominance_slack: bool | None = None, atol: float = 1e-10) -> FlatBoundReport:
    """Hypothesis checks and flat-distance bounds for a family along ``j_list``."""
    if mode not in MODES:
        raise FlatEstimatorError(f"unknown mode {mode!r}; choose from {', '.join(MODES)}")
    p = resolve_params(family, params)
    j_list = sorted(int(j) for j in j_list)
    if not j_list or j_list[0] < 1:
        raise FlatEstimatorError("j_list must contain integers >= 1")
    if dominance_slack is None:
        dominance_slack = mode != "convex-interior"
    mesh = build_grid_mesh(family_domain(family, p, resolution), resolution, stencil_radius)
    m = mesh.dim
    g0 = sample_metric(background_spec(family, p, resolution), mesh)
    samples = stratified_samples(mesh, n_samples, seed)
    graph0 = weighted_graph(g0)
    d0 = distance_matrix(g0, samples, workers, graph=graph0)
    vol0 = volume(g0, refine_tol=volume_tol) if volume_tol else volume(g0)
    diam0 = _diameter(g0, d0, graph0)
    area0 = boundary_area(g0) if mesh.component_faces else 0.0

    measured = []
    for j in j_list:
        gj = sample_metric(family_spec(family, j, p, resolution), mesh)
        lower = g0 if not dominance_slack else MetricField(mesh, (1.0 - 1.0 / j) * g0.values,
                                                            check=False)
        dom = dominance_check(lower, gj, tol=0.0)
        graph = weighted_graph(gj)
        dj = distance_matrix(gj, samples, workers, graph=graph)
        vol = volume(gj, refine_tol=volume_tol) if volume_tol else volume(gj)
        has_bdry = bool(mesh.component_faces)
        area = boundary_area(gj) if has_bdry else 0.0
        bnorm = boundary_lp_distance(gj, g0, g0, (m - 1) / 2.0) if has_bdry else 0.0
        inorm = lp_metric_distance(gj, g0, g0, m / 2.0) if mode == "interior-Lm/2" else float("nan")
        measured.append(dict(j=j, dom=dom, dj=dj, diam=_diameter(gj, dj, graph), vol=vol,
                             area=area, bnorm=bnorm, inorm=inorm))
        log.info("%s j=%d vol=%.6g diam=%.6g", family, j, vol, measured[-1]["diam"])

    D = max([diam0] + [x["diam"] for x in measured])
    V = max(x["vol"] for x in measured)
    A = max(x["area"] for x in measured)
    rows = []
    for x in measured:
        best = None
        for div in LAMBDA_DIVISORS:
            lam = D / div
            eps = epsilon_for(d0, lam, kappa)
            gs = good_set(d0, x["dj"], eps, kappa)
            delta_j = gs.sup_excess / 2.0
            h_j = neck_height(delta_j, D)
            bound = flat_bound(gs.excluded_volume, h_j, V, A)
            if best is None or bound < best[0]:
                best = (bound, lam, eps, gs, delta_j, h_j)
        bound, lam, eps, gs, delta_j, h_j = best
        vol_j_w = float(x["dj"].weights.sum())
        vol_0_w = float(d0.weights.sum())
        excluded_ok = gs.excluded_volume <= vol_0_w / kappa + abs(vol_j_w - vol_0_w) + 1e-12 * vol_0_w
        rows.append(FlatBoundRow(
            x["j"], x["dom"].passed, x["dom"].min_eigenvalue, x["diam"], x["vol"], x["area"],
            x["bnorm"], x["inorm"], gs.excluded_volume, delta_j, h_j, bound, lam, eps,
            int(gs.mask.sum()), gs.excluded_fraction0, bool(excluded_ok)))

    hyp = {"dominance": all(r.dominance_pass for r in rows)}
    diam_cap = _declared_diameter_bound(family, p, m)
    hyp["diameter"] = all(r.diam <= (diam_cap if diam_cap is not None else D) for r in rows)
    vol_gap = [abs(r.vol - vol0) for r in rows]
    if mode == "boundary-norm":
        hyp["volume_convergence"] = trend_to_zero(vol_gap, atol * max(vol0, 1.0))
        hyp["boundary_norm"] = trend_to_zero([r.bdry_norm for r in rows], atol)
    elif mode == "interior-Lm/2":
        hyp["interior_norm"] = trend_to_zero([r.interior_norm for r in rows], atol)
        hyp["boundary_area"] = all(r.bdry_area <= A for r in rows)
    else:
        hyp["volume_convergence"] = trend_to_zero(vol_gap, atol * max(vol0, 1.0))
        hyp["boundary_area"] = all(r.bdry_area <= A for r in rows)
        hyp["convex_interior_declared"] = CONVEX_INTERIOR[family]
    hyp["excluded_volume"] = all(r.excluded_ok for r in rows)
    if not DOMINATES_BACKGROUND[family]:
        log.info("%s is not expected to dominate its background", family)
    return FlatBoundReport(family, mode, rows, D, V, A, vol0, diam0, hyp,
                           {"params": p, "resolution": resolution, "n_samples": n_samples,
                            "seed": seed, "kappa": kappa, "stencil_radius": stencil_radius,
                            "area0": area0})


def _declared_diameter_bound(family, p, m):
    if family == "spline-torus":
        return (np.log(float(p["eta"])) + np.sqrt(m) * np.pi) * 1.02
    return None
