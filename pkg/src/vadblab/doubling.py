"""Doubling a manifold with boundary across a neck Sigma x [-delta, delta].

The normal axis (axis 0) of the mesh is unrolled into a doubled coordinate
``u``. With boundary at both ends of the axis the result is periodic in ``u``:
copy one, the neck at the high end, the mirrored copy, the neck at the low end.
A polar cap has a single boundary and doubles to a sphere with two poles.
Copy-one vertex ids coincide with the original mesh ids.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    DistanceMatrix, MetricField, distance_matrix, estimate_diameter, frame_norm, weighted_graph,
)
from .mesh import Axis, Mesh

DEFAULT_NECK_INTERVALS = 48
C_MARGIN = 1e-6
METRICATION_FRACTION = 0.015


class DoublingError(ValueError):
    pass


class PositivityFailure(DoublingError):
    pass


class DominanceFailure(DoublingError):
    pass


class NonProductBoundary(DoublingError):
    pass


def _normal_layout(mesh: Mesh):
    """Check the mesh has boundary only on the two ends (or one end and a pole) of axis 0."""
    ax = mesh.axes[0]
    if ax.kind != "interval" or ax.pole_hi:
        raise DoublingError("the normal axis must be an interval with its boundary at the high end")
    for other in mesh.axes[1:]:
        if other.kind == "interval":
            raise DoublingError("doubling needs a closed cross-section (periodic or angle axes)")
    return "cap" if ax.pole_lo else "shell"


@dataclass
class SecondFundamentalField:
    """A = 1/2 d/ds of the induced metric along the inward unit normal, per boundary vertex."""

    component: int
    side: int
    vertex_ids: np.ndarray
    z: np.ndarray
    A: np.ndarray
    h: np.ndarray
    sup_norm: float
    evaluator: object = field(default=None, repr=False)

    @property
    def C(self) -> float:
        return self.sup_norm + C_MARGIN

    def at(self, z):
        """(A, h) at arbitrary cross-section points ``z``."""
        if self.evaluator is None:
            raise DoublingError("second fundamental form has no pointwise evaluator")
        return self.evaluator(np.atleast_2d(z))


def _fd_second_form(sampler, end: float, inward: float, step: float, z):
    """One-sided second-order difference of the induced metric at x0 = end."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    n, dz = z.shape
    mats = []
    for k in range(3):
        pts = np.empty((n, dz + 1))
        pts[:, 0] = end + inward * k * step
        pts[:, 1:] = z
        mats.append(np.asarray(sampler(pts), dtype=float))
    g0 = mats[0]
    scale = np.abs(g0).max(axis=(1, 2)) + 1.0
    if np.any(np.abs(g0[:, 0, 1:]).max(axis=1, initial=0.0) > 1e-10 * scale):
        raise NonProductBoundary("normal and tangential directions are not orthogonal at the boundary")
    h = [m[:, 1:, 1:] for m in mats]
    deriv = (-3.0 * h[0] + 4.0 * h[1] - h[2]) / (2.0 * step)
    unit = 1.0 / np.sqrt(g0[:, 0, 0])
    return 0.5 * deriv * unit[:, None, None], h[0]


def second_fundamental_form(g_0: MetricField, mesh: Mesh | None = None, component: int | None = None,
                            step: float = 1e-3) -> SecondFundamentalField:
    """Second fundamental form of a boundary component with respect to the inward normal.

    With a pointwise evaluator the difference step is ``min(step, grid step)``;
    without one the first three vertex layers are used.
    """
    mesh = g_0.mesh if mesh is None else mesh
    _normal_layout(mesh)
    faces = mesh.component_faces
    if component is None:
        component = len(faces) - 1
    if not 0 <= component < len(faces):
        raise DoublingError(f"no boundary component {component}")
    (face,) = faces[component]
    if face.axis != 0:
        raise DoublingError("boundary must lie at an end of the normal axis")
    ax = mesh.axes[0]
    end_idx = 0 if face.side == 0 else ax.size - 1
    inward = 1.0 if face.side == 0 else -1.0
    end = ax.nodes[end_idx]
    ids = mesh.vertex_id[end_idx].ravel()
    z = mesh.vertices[ids][:, 1:]
    grid_step = abs(ax.nodes[1] - ax.nodes[0]) if face.side == 0 else abs(ax.nodes[-1] - ax.nodes[-2])
    if g_0.evaluator is not None:
        h_step = min(step, grid_step)

        def evaluator(zz):
            return _fd_second_form(g_0.evaluator, end, inward, h_step, zz)

        A, h = evaluator(z)
    else:
        evaluator = None
        rows = [mesh.vertex_id[end_idx + int(inward) * k].ravel() for k in range(3)]
        g = [g_0.values[r] for r in rows]
        if np.any(np.abs(g[0][:, 0, 1:]) > 1e-10 * (np.abs(g[0]).max(axis=(1, 2), keepdims=False)[:, None] + 1)):
            raise NonProductBoundary("normal and tangential directions are not orthogonal at the boundary")
        hs = [m[:, 1:, 1:] for m in g]
        A = 0.5 * (-3 * hs[0] + 4 * hs[1] - hs[2]) / (2 * grid_step) / np.sqrt(g[0][:, 0, 0])[:, None, None]
        h = hs[0]
    sup = float(frame_norm(A, h).max()) if A.size else 0.0
    return SecondFundamentalField(component, face.side, ids, z, A, h, sup, evaluator)


def neck_profile(A, delta: float, t):
    """A_0(z, t) = -A(z) sin(pi t / (2 delta)): odd in t and equal to A at t = -delta."""
    A = A.A if isinstance(A, SecondFundamentalField) else np.asarray(A, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    if np.any(np.abs(t_arr) > delta * (1 + 1e-12)):
        raise DoublingError("|t| exceeds delta")
    s = -np.sin(np.pi * t_arr / (2.0 * delta))
    if t_arr.ndim == 0:
        return A * float(s)
    return s.reshape(s.shape + (1,) * A.ndim) * A


def neck_times(delta: float, intervals: int = DEFAULT_NECK_INTERVALS) -> np.ndarray:
    """Symmetric neck grid: t_k = delta (2k - N) / N, exactly negated under k -> N - k."""
    if intervals < 2 or intervals % 2:
        raise DoublingError("neck resolution must be an even number of intervals")
    return delta * (2.0 * np.arange(intervals + 1) - intervals) / intervals


def neck_metric_samples(h_start, A_out, delta: float, intervals: int = DEFAULT_NECK_INTERVALS):
    """h(t_k) = h_start + 2 * trapezoid integral of the neck profile from -delta to t_k.

    The integral is accumulated over [-delta, 0] and reflected: the profile is
    odd, so the integral from -delta to t equals the one from -delta to -t.
    Returns an array of shape (N + 1, nb, k, k).
    """
    t = neck_times(delta, intervals)
    half = intervals // 2
    prof = neck_profile(A_out, delta, t[: half + 1])
    dt = t[1:half + 1] - t[:half]
    incr = 0.5 * (prof[1:] + prof[:-1]) * dt[:, None, None, None]
    cum = np.concatenate([np.zeros_like(prof[:1]), np.cumsum(incr, axis=0)])
    first_half = h_start[None] + 2.0 * cum
    return np.concatenate([first_half, first_half[-2::-1]], axis=0)


def neck_metric_closed_form(h_start, A_out, delta: float, t):
    t = np.asarray(t, dtype=float)
    c = (4.0 * delta / np.pi) * np.cos(np.pi * t / (2.0 * delta))
    return h_start + c[..., None, None] * A_out


def _min_generalized_eig(mats, base):
    low = np.linalg.cholesky(base)
    x = np.linalg.solve(low, mats)
    x = np.linalg.solve(low, np.swapaxes(x, -1, -2))
    return np.linalg.eigvalsh(0.5 * (x + np.swapaxes(x, -1, -2)))[..., 0]


def positivity_margin(sffs, delta: float, intervals: int = DEFAULT_NECK_INTERVALS) -> float:
    """min over neck vertices of the smallest eigenvalue of h_0^delta against h."""
    out = np.inf
    for sff in sffs:
        hs = neck_metric_samples(sff.h, -sff.A, delta, intervals)
        out = min(out, float(_min_generalized_eig(hs, np.broadcast_to(sff.h, hs.shape)).min()))
    return out


def find_delta_hat(sffs, intervals: int = DEFAULT_NECK_INTERVALS, tol: float = 1e-10,
                   upper: float = 1e6) -> float:
    """Largest delta keeping h_0^delta >= eta_0 = half the smallest eigenvalue of g_0|Sigma vs h.

    Bisection; returns ``inf`` if positivity survives up to ``upper``.
    """
    eta0 = 0.5  # h is g_0 restricted to Sigma, so its eigenvalues against itself are 1

    def ok(d):
        return positivity_margin(sffs, d, intervals) >= eta0

    lo, hi = 0.0, 1.0
    while ok(hi):
        lo, hi = hi, 2.0 * hi
        if hi > upper:
            return np.inf
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


@dataclass
class NeckAssembly:
    mesh: Mesh
    field: MetricField
    background: MetricField
    delta: float
    C: float
    eta: float
    delta_hat: float
    region: np.ndarray          # 0 copy one, 1 neck, 2 copy two (per doubled vertex)
    neck_t: np.ndarray          # t at neck vertices, nan elsewhere
    copy2_ids: np.ndarray       # doubled id of the mirror image of each original vertex
    sffs: list
    intervals: int

    def summary(self) -> dict:
        return {
            "delta": self.delta, "C": self.C, "eta": self.eta, "delta_hat": self.delta_hat,
            "neck_vertex_count": int((self.region == 1).sum()),
            "vertex_count": self.mesh.n_vertices,
            "deviation_bound": neck_deviation_bound(self),
        }


def neck_deviation_bound(assembly: NeckAssembly) -> float:
    m = assembly.mesh.dim
    return 4.0 * (m - 1) * assembly.C * assembly.delta


def _doubled_axis(ax: Axis, delta: float, intervals: int, layout: str):
    x = ax.nodes
    a, b = x[0], x[-1]
    L = b - a
    t_inner = neck_times(delta, intervals)[1:-1]
    nodes = [x, b + delta + t_inner, (b + 2 * delta) + (b - x[::-1])]
    labels = [("copy1", i) for i in range(x.size)]
    labels += [("neck-hi", k + 1) for k in range(t_inner.size)]
    labels += [("copy2", i) for i in range(x.size - 1, -1, -1)]
    if layout == "shell":
        period = 2 * L + 4 * delta
        nodes.append((2 * b - a + 3 * delta) + t_inner)
        labels += [("neck-lo", k + 1) for k in range(t_inner.size)]
        return Axis(np.concatenate(nodes), "periodic", a, a + period), labels
    end = 2 * b + 2 * delta
    return Axis(np.concatenate(nodes), "interval", a, end, pole_lo=True, pole_hi=True), labels


def build_doubling(mesh: Mesh, g_alpha: MetricField, g_0: MetricField, delta: float,
                   neck_resolution: int = DEFAULT_NECK_INTERVALS) -> NeckAssembly:
    """Glue two mirrored copies of ``mesh`` to a neck carrying the sine profile."""
    layout = _normal_layout(mesh)
    if not delta > 0:
        raise DoublingError("delta must be positive")
    comps = range(len(mesh.component_faces))
    sffs = [second_fundamental_form(g_0, mesh, c) for c in comps]
    by_side = {s.side: s for s in sffs}
    delta_hat = find_delta_hat(sffs, neck_resolution)
    if not delta < delta_hat:
        raise PositivityFailure(f"delta = {delta} is not below delta_hat = {delta_hat:.6g}")
    if g_alpha is not g_0:
        for s in sffs:
            diff = g_alpha.values[s.vertex_ids][:, 1:, 1:] - g_0.values[s.vertex_ids][:, 1:, 1:]
            lo = float(np.linalg.eigvalsh(diff)[:, 0].min())
            if lo < -1e-12:
                raise DominanceFailure(f"g_alpha is not >= g_0 on the boundary (min eigenvalue {lo:.3e})")

    ax0 = mesh.axes[0]
    new_ax, labels = _doubled_axis(ax0, delta, neck_resolution, layout)
    dmesh = Mesh((new_ax,) + mesh.axes[1:], mesh.stencil_radius, domain=None)
    d = mesh.dim
    t_grid = neck_times(delta, neck_resolution)
    neck_vals = {}
    for side, s in by_side.items():
        h_alpha = g_alpha.values[s.vertex_ids][:, 1:, 1:]
        neck_vals[side] = neck_metric_samples(h_alpha, -s.A, delta, neck_resolution)

    values = np.zeros((dmesh.n_vertices, d, d))
    region = np.zeros(dmesh.n_vertices, dtype=int)
    neck_t = np.full(dmesh.n_vertices, np.nan)
    copy2_ids = np.zeros(mesh.n_vertices, dtype=int)
    flip = np.ones((d, d))
    flip[0, 1:] = flip[1:, 0] = -1.0
    for u_idx, (kind, k) in enumerate(labels):
        new_ids = dmesh.vertex_id[u_idx].ravel()
        if kind in ("copy1", "copy2"):
            old_ids = mesh.vertex_id[k].ravel()
            vals = g_alpha.values[old_ids]
            if kind == "copy2":
                vals = vals * flip
                region[new_ids] = 2
                copy2_ids[old_ids] = new_ids
            values[new_ids] = vals
            continue
        side = 1 if kind == "neck-hi" else 0
        block = np.zeros((new_ids.size, d, d))
        block[:, 0, 0] = 1.0
        block[:, 1:, 1:] = neck_vals[side][k]
        values[new_ids] = block
        region[new_ids] = 1
        neck_t[new_ids] = t_grid[k]

    evaluator = _doubled_evaluator(mesh, g_alpha, by_side, delta, layout) \
        if g_alpha.evaluator is not None and all(s.evaluator is not None for s in sffs) else None
    dfield = MetricField(dmesh, values, evaluator=evaluator, check=False)
    if np.any(np.linalg.eigvalsh(values[~dmesh.is_pole])[:, 0] <= 0):
        raise PositivityFailure("doubled metric is not positive definite")
    eta = positivity_margin(sffs, delta, neck_resolution)
    return NeckAssembly(dmesh, dfield, g_0, float(delta), max(s.C for s in sffs), eta, delta_hat,
                        region, neck_t, copy2_ids, sffs, neck_resolution)


def _doubled_evaluator(mesh, g_alpha, by_side, delta, layout):
    x = mesh.axes[0].nodes
    a, b = x[0], x[-1]
    L = b - a
    d = mesh.dim
    flip = np.ones((d, d))
    flip[0, 1:] = flip[1:, 0] = -1.0

    def evaluate(points):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        u = p[:, 0] - a
        if layout == "shell":
            u = np.mod(u, 2 * L + 4 * delta)
        out = np.zeros((p.shape[0], d, d))
        c1 = u <= L
        nb = (u > L) & (u < L + 2 * delta)
        c2 = (u >= L + 2 * delta) & (u <= 2 * L + 2 * delta)
        na = u > 2 * L + 2 * delta
        # copy one keeps the original coordinates bit for bit
        direct = (p[:, 0] >= a) & (p[:, 0] <= b)
        r_copy1 = np.where(direct, p[:, 0], a + u)
        r_copy2 = b - (u - L - 2 * delta)
        for mask, r_of, mirrored in ((c1, r_copy1, False), (c2, r_copy2, True)):
            if mask.any():
                q = p[mask].copy()
                q[:, 0] = np.clip(r_of[mask], a, b)
                vals = g_alpha.evaluator(q)
                out[mask] = vals * flip if mirrored else vals
        for mask, side, t_of_u in ((nb, 1, lambda v: v - L - delta),
                                   (na, 0, lambda v: v - 2 * L - 3 * delta)):
            if not mask.any():
                continue
            z = p[mask][:, 1:]
            end = b if side == 1 else a
            A_in, _ = by_side[side].at(z)
            q = np.concatenate([np.full((z.shape[0], 1), end), z], axis=1)
            h_alpha = g_alpha.evaluator(q)[:, 1:, 1:]
            block = np.zeros((z.shape[0], d, d))
            block[:, 0, 0] = 1.0
            block[:, 1:, 1:] = neck_metric_closed_form(h_alpha, -A_in, delta, t_of_u(u[mask]))
            out[mask] = block
        return out

    return evaluate


# -- verification ---------------------------------------------------------------

@dataclass
class NeckCheck:
    max_deviation: float
    deviation_bound: float
    mirror_exact: bool
    min_eta: float

    @property
    def passed(self) -> bool:
        return self.mirror_exact and self.max_deviation <= self.deviation_bound + 1e-8


def check_neck(assembly: NeckAssembly) -> NeckCheck:
    """Frobenius deviation from the seam value, mirror symmetry and positivity margin."""
    worst = 0.0
    mirror = True
    N = assembly.intervals
    field_vals = assembly.field.values
    labels_by_side = _neck_rows(assembly)
    for side, rows in labels_by_side.items():
        sff = next(s for s in assembly.sffs if s.side == side)
        seam = field_vals[rows[0]][:, 1:, 1:]
        for k in range(N + 1):
            vals = field_vals[rows[k]][:, 1:, 1:]
            worst = max(worst, float(frame_norm(vals - seam, sff.h).max()))
            mirror &= bool(np.array_equal(vals, field_vals[rows[N - k]][:, 1:, 1:]))
    return NeckCheck(worst, neck_deviation_bound(assembly), mirror, assembly.eta)


def _neck_rows(assembly: NeckAssembly):
    """Vertex-id rows of each neck at t_0 ... t_N, seams included (seam rows are copy vertices)."""
    mesh = assembly.mesh
    N = assembly.intervals
    n_u = mesh.shape[0]
    n0 = (n_u - (N - 1) * (2 if mesh.axes[0].kind == "periodic" else 1)) // 2
    rows = {1: [mesh.vertex_id[n0 - 1 + k].ravel() for k in range(N + 1)]}
    if mesh.axes[0].kind == "periodic":
        start = 2 * n0 + N - 1
        rows[0] = [mesh.vertex_id[(start - 1 + k) % n_u].ravel() for k in range(N + 1)]
    return rows


def dominance_propagation(assembly_j: NeckAssembly, assembly_0: NeckAssembly) -> float:
    """min eigenvalue of g_j^delta - g_0^delta over the doubled mesh."""
    if assembly_j.mesh.shape != assembly_0.mesh.shape:
        raise DoublingError("assemblies are built on different doubled meshes")
    diff = assembly_j.field.values - assembly_0.field.values
    return float(np.linalg.eigvalsh(diff)[:, 0].min())


@dataclass
class DoubledDistanceReport:
    max_difference: float
    neck_bound: float
    slack: float
    diameter: float
    doubled_not_longer: bool
    d_alpha: DistanceMatrix
    d_doubled: DistanceMatrix

    @property
    def passed(self) -> bool:
        return self.doubled_not_longer and self.max_difference <= self.neck_bound + self.slack


def doubled_distance_check(assembly: NeckAssembly, g_alpha: MetricField, samples,
                           metrication_fraction: float = METRICATION_FRACTION) -> DoubledDistanceReport:
    """Compare sampled distances on M with the same pairs inside copy one of the doubled space."""
    samples = np.asarray(samples, dtype=int)
    graph = weighted_graph(g_alpha)
    d_a = distance_matrix(g_alpha, samples, graph=graph)
    d_d = distance_matrix(assembly.field, samples)
    diam = max(float(d_a.distances.max()), estimate_diameter(g_alpha, graph=graph))
    diff = np.abs(d_a.distances - d_d.distances)
    bound = 2.0 / assembly.eta * np.sqrt(assembly.C * assembly.delta) * diam
    slack = 2.0 * metrication_fraction * diam
    return DoubledDistanceReport(float(diff.max()), float(bound), float(slack), diam,
                                 bool(np.all(d_d.distances <= d_a.distances)), d_a, d_d)
