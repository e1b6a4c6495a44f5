"""Lengths, shortest-path distances, volumes, boundary areas, dominance and L^p norms."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .mesh import BoundaryFace, Mesh

# 3-point Gauss-Legendre on [0, 1]
GAUSS_T = np.array([0.5 - 0.5 * np.sqrt(0.6), 0.5, 0.5 + 0.5 * np.sqrt(0.6)])
GAUSS_W = np.array([5.0, 8.0, 5.0]) / 18.0


class GeometryError(ValueError):
    pass


class DisconnectedGraphError(GeometryError):
    pass


class MetricField:
    """Per-vertex metric components on a mesh, with an optional pointwise evaluator.

    ``evaluator`` maps an (n, d) array of parameter points to (n, d, d)
    matrices. Quadrature uses it at cell centres when present; otherwise cell
    values are averaged from the corner samples. Pole vertices are allowed a
    degenerate angular block, since polar coordinates are singular there.
    """

    def __init__(self, mesh: Mesh, values, evaluator: Callable | None = None, check: bool = True):
        values = np.asarray(values, dtype=float)
        d = mesh.dim
        if values.shape != (mesh.n_vertices, d, d):
            raise GeometryError(f"expected values of shape {(mesh.n_vertices, d, d)}, got {values.shape}")
        self.mesh = mesh
        self.values = 0.5 * (values + np.swapaxes(values, 1, 2))
        self.evaluator = evaluator
        if check:
            self._check(values)

    def _check(self, raw):
        scale = np.abs(raw).max(axis=(1, 2)) + 1.0
        asym = np.abs(raw - np.swapaxes(raw, 1, 2)).max(axis=(1, 2))
        if np.any(asym > 1e-10 * scale):
            raise GeometryError("metric samples are not symmetric")
        regular = ~self.mesh.is_pole
        eig = np.linalg.eigvalsh(self.values[regular])[:, 0]
        bad = np.flatnonzero(~(eig > 0))
        if bad.size:
            v = np.flatnonzero(regular)[bad[0]]
            raise GeometryError(
                f"metric not positive definite at vertex {v} ({self.mesh.vertices[v]}), "
                f"min eigenvalue {eig[bad[0]]:.3e}")
        if np.any(~(self.values[self.mesh.is_pole, 0, 0] > 0)):
            raise GeometryError("metric degenerate in the radial direction at a pole")

    def at(self, points, corners=None) -> np.ndarray:
        """Metric at parameter points, falling back to the mean of corner samples."""
        if self.evaluator is not None:
            return np.asarray(self.evaluator(np.asarray(points, dtype=float)), dtype=float)
        if corners is None:
            raise GeometryError("field has no evaluator; corner vertex ids are required")
        return self.values[corners].mean(axis=1)

    def restricted(self, axis: int) -> np.ndarray:
        """Vertex samples with row and column ``axis`` removed."""
        keep = [k for k in range(self.mesh.dim) if k != axis]
        return self.values[:, keep][:, :, keep]


def _same_mesh(*fields):
    m = fields[0].mesh
    for f in fields[1:]:
        if f.mesh is not m:
            raise GeometryError("fields live on different meshes")
    return m


# -- lengths and distances ----------------------------------------------------

def _quadratic(values, disp):
    return np.einsum("ei,eij,ej->e", disp, values, disp)


EDGE_CHUNK = 200_000


def edge_lengths(field: MetricField, quadrature: str = "auto") -> np.ndarray:
    """Length of every stencil edge by 3-point Gauss quadrature of sqrt(g(v, v)).

    With ``quadrature="pointwise"`` (the default when the field has an
    evaluator) g is evaluated at the Gauss nodes of the straight segment;
    ``"interpolated"`` blends the two endpoint samples linearly instead.
    """
    mesh = field.mesh
    e = mesh.edges
    if quadrature == "auto":
        quadrature = "pointwise" if field.evaluator is not None else "interpolated"
    if quadrature == "interpolated":
        qa = _quadratic(field.values[e.src], e.disp)
        qb = _quadratic(field.values[e.dst], e.disp)
        total = np.zeros(len(e))
        for t, w in zip(GAUSS_T, GAUSS_W):
            total += w * np.sqrt(np.maximum((1.0 - t) * qa + t * qb, 0.0))
        return total
    if quadrature != "pointwise" or field.evaluator is None:
        raise GeometryError("pointwise edge quadrature needs a metric evaluator")
    total = np.zeros(len(e))
    from_pole = mesh.is_pole[e.src]
    for lo in range(0, len(e), EDGE_CHUNK):
        sl = slice(lo, lo + EDGE_CHUNK)
        disp = e.disp[sl]
        xs = mesh.vertices[e.src[sl]]
        xd = mesh.vertices[e.dst[sl]]
        pole = from_pole[sl, None]
        for t, w in zip(GAUSS_T, GAUSS_W):
            # segments leaving a pole are drawn along the neighbour's angular coordinates
            pts = np.where(pole, xd - (1.0 - t) * disp, xs + t * disp)
            q = _quadratic(field.evaluator(pts), disp)
            total[sl] += w * np.sqrt(np.maximum(q, 0.0))
    return total


def edge_length(field: MetricField, edge: int, quadrature: str = "auto") -> float:
    mesh = field.mesh
    e = mesh.edges
    if quadrature == "auto":
        quadrature = "pointwise" if field.evaluator is not None else "interpolated"
    v = e.disp[edge]
    if quadrature == "interpolated":
        qa = float(v @ field.values[e.src[edge]] @ v)
        qb = float(v @ field.values[e.dst[edge]] @ v)
        return float(sum(w * np.sqrt(max((1 - t) * qa + t * qb, 0.0)) for t, w in zip(GAUSS_T, GAUSS_W)))
    if mesh.is_pole[e.src[edge]]:
        pts = mesh.vertices[e.dst[edge]][None] - (1.0 - GAUSS_T[:, None]) * v[None]
    else:
        pts = mesh.vertices[e.src[edge]][None] + GAUSS_T[:, None] * v[None]
    q = np.einsum("i,kij,j->k", v, field.evaluator(pts), v)
    return float(np.dot(GAUSS_W, np.sqrt(np.maximum(q, 0.0))))


def weighted_graph(field: MetricField) -> csr_matrix:
    e = field.mesh.edges
    w = edge_lengths(field)
    n = field.mesh.n_vertices
    rows = np.concatenate([e.src, e.dst])
    cols = np.concatenate([e.dst, e.src])
    return csr_matrix((np.concatenate([w, w]), (rows, cols)), shape=(n, n))


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("VADB_WORKERS", "1")))
    except ValueError:
        return 1


def _dijkstra_rows(graph, sources):
    return dijkstra(graph, directed=True, indices=sources)


def shortest_paths(graph: csr_matrix, sources, workers: int | None = None, min_only=False) -> np.ndarray:
    """Rows of single-source shortest-path distances, optionally split over processes."""
    sources = np.asarray(sources, dtype=int)
    if min_only:
        return dijkstra(graph, directed=True, indices=sources, min_only=True)
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or sources.size < 2 * workers:
        return _dijkstra_rows(graph, sources)
    chunks = np.array_split(sources, workers)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_dijkstra_rows, [graph] * len(chunks), chunks))
    return np.vstack(parts)


@dataclass(frozen=True)
class SampleSet:
    """Sample vertex ids plus the stratum (index into ids) of every mesh vertex."""

    ids: np.ndarray
    strata: np.ndarray | None = None


def stratified_samples(mesh: Mesh, n: int = 512, seed: int = 0) -> SampleSet:
    """One random vertex per block of a coarse index-space partition, at most ``n`` blocks."""
    if n >= mesh.n_vertices:
        ids = np.arange(mesh.n_vertices)
        return SampleSet(ids, ids.copy())
    per_axis = max(1, int(np.floor(n ** (1.0 / mesh.dim) + 1e-9)))
    counts = [min(per_axis, s) for s in mesh.shape]
    block = np.zeros(mesh.n_vertices, dtype=np.int64)
    for k, s in enumerate(mesh.shape):
        block = block * counts[k] + (mesh.grid_index[:, k] * counts[k]) // s
    labels, inverse, sizes = np.unique(block, return_inverse=True, return_counts=True)
    order = np.argsort(inverse, kind="stable")
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    rng = np.random.default_rng(seed)
    pick = order[starts + rng.integers(0, sizes)]
    return SampleSet(pick, inverse)


def vertex_volumes(field: MetricField) -> np.ndarray:
    """Each cell's midpoint volume shared equally among its corners; sums to the volume."""
    mesh = field.mesh
    vols = cell_volumes(field)
    corners = mesh.cells[2]
    out = np.zeros(mesh.n_vertices)
    np.add.at(out, corners.ravel(), np.repeat(vols / corners.shape[1], corners.shape[1]))
    return out


@dataclass
class DistanceMatrix:
    ids: np.ndarray
    distances: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return self.ids.size


def distance_matrix(field: MetricField, samples=None, workers: int | None = None,
                    graph: csr_matrix | None = None) -> DistanceMatrix:
    """Shortest-path distances among ``samples`` on the metric-weighted stencil graph.

    ``samples`` is a :class:`SampleSet` (weights are stratum volumes) or a
    plain id array (weights are the vertices' own cell shares); ``None``
    selects the default stratified subsample of at most 512 vertices.
    """
    mesh = field.mesh
    if samples is None:
        samples = stratified_samples(mesh)
    if not isinstance(samples, SampleSet):
        samples = SampleSet(np.asarray(samples, dtype=int).ravel())
    ids = samples.ids
    if ids.size == 0:
        raise GeometryError("sample set is empty")
    graph = weighted_graph(field) if graph is None else graph
    rows = shortest_paths(graph, ids, workers)
    dist = rows[:, ids]
    if not np.all(np.isfinite(dist)):
        raise DisconnectedGraphError("some samples are unreachable from each other")
    dist = np.minimum(dist, dist.T)
    np.fill_diagonal(dist, 0.0)
    vv = vertex_volumes(field)
    if samples.strata is None:
        weights = vv[ids]
    else:
        weights = np.bincount(samples.strata, weights=vv, minlength=ids.size)
    return DistanceMatrix(ids.copy(), dist, weights)


def diameter(dm: DistanceMatrix) -> float:
    return float(dm.distances.max()) if dm.distances.size else 0.0


def farthest_point_samples(field: MetricField, k: int = 8, start: int = 0,
                           graph: csr_matrix | None = None) -> np.ndarray:
    """Greedy farthest-point sequence; the first pairs realise near-diametral distances."""
    graph = weighted_graph(field) if graph is None else graph
    chosen = [int(start)]
    nearest = dijkstra(graph, directed=True, indices=start)
    first = True
    while len(chosen) < k:
        nxt = int(np.argmax(nearest))
        if nearest[nxt] == 0.0:
            break
        if first:
            # restart from the farthest point so the second sweep starts at an extremity
            chosen = [nxt]
            nearest = dijkstra(graph, directed=True, indices=nxt)
            first = False
            continue
        chosen.append(nxt)
        nearest = np.minimum(nearest, dijkstra(graph, directed=True, indices=nxt))
    return np.array(chosen, dtype=int)


def estimate_diameter(field: MetricField, k: int = 8, graph=None) -> float:
    graph = weighted_graph(field) if graph is None else graph
    ids = farthest_point_samples(field, k, graph=graph)
    return diameter(distance_matrix(field, ids, workers=1, graph=graph))


# -- volumes and boundary quantities ------------------------------------------

def _sqrt_det(mats):
    return np.sqrt(np.maximum(np.linalg.det(mats), 0.0))


def cell_volumes(field: MetricField) -> np.ndarray:
    centers, widths, corners = field.mesh.cells
    return _sqrt_det(field.at(centers, corners)) * np.prod(widths, axis=1)


def volume(field: MetricField, refine_tol: float | None = None, max_depth: int = 16,
           max_cells: int = 200_000) -> float:
    """Midpoint-rule volume; with ``refine_tol`` cells are bisected adaptively.

    A cell is split while its one-level-finer estimate differs from the coarse
    one by more than ``refine_tol`` times the mean volume density over the cell.
    At most ``max_cells`` children are kept per level, worst cells first.
    Adaptive refinement needs a pointwise evaluator.
    """
    mesh = field.mesh
    centers, widths, corners = mesh.cells
    if refine_tol is None:
        return float(cell_volumes(field).sum())
    if field.evaluator is None:
        raise GeometryError("adaptive volume needs a metric evaluator")
    dens = _sqrt_det(field.at(centers))
    meas = np.prod(widths, axis=1)
    mean_density = float((dens * meas).sum() / meas.sum())
    d = mesh.dim
    shifts = np.array(np.meshgrid(*[(-0.25, 0.25)] * d, indexing="ij")).reshape(d, -1).T
    total = 0.0
    for depth in range(max_depth + 1):
        child_c = (centers[:, None, :] + shifts[None] * widths[:, None, :]).reshape(-1, d)
        child_dens = _sqrt_det(field.at(child_c)).reshape(-1, shifts.shape[0])
        fine = child_dens.mean(axis=1) * meas
        coarse = dens * meas
        err = np.abs(fine - coarse)
        split = err > refine_tol * mean_density * meas
        if depth == max_depth:
            split[:] = False
        budget = max_cells // shifts.shape[0]
        if split.sum() > budget:
            worst = np.argsort(-np.where(split, err, -1.0), kind="stable")[:budget]
            split[:] = False
            split[worst] = True
        total += float(fine[~split].sum())
        if not split.any():
            break
        centers = child_c.reshape(-1, shifts.shape[0], d)[split].reshape(-1, d)
        widths = np.repeat(widths[split] * 0.5, shifts.shape[0], axis=0)
        dens = child_dens[split].ravel()
        meas = np.prod(widths, axis=1)
    return total


def _component_faces(mesh: Mesh, component):
    if component is None:
        return [f for grp in mesh.component_faces for f in grp]
    if not 0 <= component < len(mesh.component_faces):
        raise GeometryError(f"no boundary component {component}")
    return mesh.component_faces[component]


def _restricted_at(field: MetricField, face: BoundaryFace, centers, corners):
    keep = [k for k in range(field.mesh.dim) if k != face.axis]
    return field.at(centers, corners)[:, keep][:, :, keep]


def boundary_area(field: MetricField, component: int | None = None) -> float:
    """Area of one boundary component (all components when ``None``)."""
    mesh = field.mesh
    total = 0.0
    for face in _component_faces(mesh, component):
        centers, meas, corners = mesh.facets(face)
        total += float((_sqrt_det(_restricted_at(field, face, centers, corners)) * meas).sum())
    return total


def frame_norm(diff, base):
    """Frobenius norm of ``diff`` written in a ``base``-orthonormal frame."""
    low = np.linalg.cholesky(base)
    x = np.linalg.solve(low, diff)
    x = np.linalg.solve(low, np.swapaxes(x, -1, -2))
    return np.sqrt(np.sum(x * x, axis=(-1, -2)))


def lp_metric_distance(g_a: MetricField, g_b: MetricField, base: MetricField, p: float) -> float:
    """(integral of |g_a - g_b|_base^p dvol_base)^(1/p) by the midpoint rule."""
    mesh = _same_mesh(g_a, g_b, base)
    if not p >= 1:
        raise GeometryError("p must be >= 1")
    centers, widths, corners = mesh.cells
    b = base.at(centers, corners)
    diff = g_a.at(centers, corners) - g_b.at(centers, corners)
    integrand = frame_norm(diff, b) ** p * _sqrt_det(b) * np.prod(widths, axis=1)
    return float(integrand.sum() ** (1.0 / p))


def boundary_lp_distance(g_a: MetricField, g_b: MetricField, h: MetricField, p: float,
                         component: int | None = None) -> float:
    """L^p norm over boundary facets of the restricted difference, measured against ``h``.

    ``p`` may lie in (0, 1); the result is then the usual quasi-norm.
    """
    mesh = _same_mesh(g_a, g_b, h)
    if not p > 0:
        raise GeometryError("p must be positive")
    total = 0.0
    for face in _component_faces(mesh, component):
        centers, meas, corners = mesh.facets(face)
        hb = _restricted_at(h, face, centers, corners)
        diff = _restricted_at(g_a, face, centers, corners) - _restricted_at(g_b, face, centers, corners)
        total += float((frame_norm(diff, hb) ** p * _sqrt_det(hb) * meas).sum())
    return total ** (1.0 / p)


@dataclass(frozen=True)
class DominanceReport:
    min_eigenvalue: float
    violations: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.violations == 0


def dominance_check(g_a: MetricField, g_b: MetricField, tol: float = 0.0) -> DominanceReport:
    """Is g_b >= g_a as quadratic forms at every vertex (up to ``tol``)?"""
    _same_mesh(g_a, g_b)
    eig = np.linalg.eigvalsh(g_b.values - g_a.values)[:, 0]
    return DominanceReport(float(eig.min()), int(np.count_nonzero(eig < -tol)), float(tol))
