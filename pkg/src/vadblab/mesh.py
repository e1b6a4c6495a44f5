"""Structured tensor-product meshes over product, cap and shell parameter domains."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

AXIS_KINDS = ("interval", "periodic", "angle")
DOMAIN_KINDS = ("rectangle", "polar-cap", "annulus")


class MeshError(ValueError):
    """Raised for invalid domains or resolutions."""


@dataclass(frozen=True)
class ParamDomain:
    kind: str
    extents: tuple
    periodic: tuple

    def __post_init__(self):
        if self.kind not in DOMAIN_KINDS:
            raise MeshError(f"unknown domain kind {self.kind!r}")
        ext = tuple((float(a), float(b)) for a, b in self.extents)
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "periodic", tuple(bool(p) for p in self.periodic))
        if len(self.periodic) != len(ext):
            raise MeshError("periodicity flags must match the number of coordinates")
        for lo, hi in ext:
            if not hi > lo:
                raise MeshError(f"invalid-domain: empty extent [{lo}, {hi}]")
        if self.kind == "polar-cap":
            if len(ext) != 2 or ext[0][0] != 0.0 or self.periodic != (False, True):
                raise MeshError("polar cap needs extents ((0, R), (a, a + period)) with periodic angle")
        if self.kind == "annulus":
            if len(ext) < 2 or ext[0][0] <= 0.0 or self.periodic[0] or not self.periodic[-1]:
                raise MeshError("annulus needs a positive radial interval and a periodic last angle")

    @property
    def dim(self) -> int:
        return len(self.extents)

    def axis_kinds(self) -> tuple:
        if self.kind == "annulus":
            return ("interval",) + ("angle",) * (self.dim - 2) + ("periodic",)
        return tuple("periodic" if p else "interval" for p in self.periodic)

    def lebesgue_measure(self) -> float:
        return float(np.prod([hi - lo for lo, hi in self.extents]))

    def matches(self, other: "ParamDomain", tol: float = 1e-12) -> bool:
        if self.kind != other.kind or self.periodic != other.periodic:
            return False
        a = np.asarray(self.extents)
        b = np.asarray(other.extents)
        return a.shape == b.shape and bool(np.all(np.abs(a - b) <= tol * (1 + np.abs(a))))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "extents": [list(e) for e in self.extents],
                "periodic": list(self.periodic)}


def cylinder(half_length: float = np.pi) -> ParamDomain:
    """[-L, L] x S^1 with the circle parametrised by [0, 2pi)."""
    return ParamDomain("rectangle", ((-half_length, half_length), (0.0, 2 * np.pi)), (False, True))


def torus(dim: int = 2) -> ParamDomain:
    return ParamDomain("rectangle", ((-np.pi, np.pi),) * dim, (True,) * dim)


def unit_square() -> ParamDomain:
    return ParamDomain("rectangle", ((0.0, 1.0), (0.0, 1.0)), (False, False))


def polar_cap(radius: float) -> ParamDomain:
    return ParamDomain("polar-cap", ((0.0, radius), (0.0, 2 * np.pi)), (False, True))


def annulus(inner: float, outer: float, n: int = 3) -> ParamDomain:
    """Shell [inner, outer] x S^{n-1} in spherical coordinates (radius, polar angles, azimuth)."""
    if n < 2:
        raise MeshError("annulus needs n >= 2")
    ext = ((inner, outer),) + ((0.0, np.pi),) * (n - 2) + ((0.0, 2 * np.pi),)
    return ParamDomain("annulus", ext, (False,) * (n - 1) + (True,))


@dataclass(frozen=True)
class Axis:
    """One tensor factor of a grid.

    ``interval`` axes carry nodes at both ends, ``periodic`` axes identify
    ``hi`` with ``lo`` and ``angle`` axes are cell-centred (no node on the ends,
    no boundary). A pole flag collapses every other coordinate at that end.
    """

    nodes: np.ndarray
    kind: str
    lo: float
    hi: float
    pole_lo: bool = False
    pole_hi: bool = False

    def __post_init__(self):
        if self.kind not in AXIS_KINDS:
            raise MeshError(f"unknown axis kind {self.kind!r}")
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        if nodes.ndim != 1 or nodes.size < 2 or np.any(np.diff(nodes) <= 0):
            raise MeshError("axis nodes must be strictly increasing")
        if (self.pole_lo or self.pole_hi) and self.kind != "interval":
            raise MeshError("poles only sit on interval axes")

    @property
    def size(self) -> int:
        return self.nodes.size

    @property
    def period(self) -> float:
        return self.hi - self.lo

    def cell_bounds(self):
        """(lower, upper) arrays of the primal cells along this axis."""
        x = self.nodes
        if self.kind == "interval":
            return x[:-1], x[1:]
        if self.kind == "periodic":
            return x, np.append(x[1:], x[0] + self.period)
        mids = 0.5 * (x[1:] + x[:-1])
        return np.concatenate([[self.lo], mids]), np.concatenate([mids, [self.hi]])

    def cell_corners(self):
        """Node indices at the two ends of each primal cell (equal for angle axes)."""
        n = self.size
        if self.kind == "interval":
            return np.arange(n - 1), np.arange(1, n)
        if self.kind == "periodic":
            return np.arange(n), (np.arange(n) + 1) % n
        return np.arange(n), np.arange(n)

    def cell_centers(self):
        if self.kind == "angle":
            return self.nodes.copy()
        lo, hi = self.cell_bounds()
        return 0.5 * (lo + hi)


@dataclass(frozen=True)
class EdgeGraph:
    """Undirected edges stored once, ``src < dst``, with displacement dst - src."""

    src: np.ndarray
    dst: np.ndarray
    disp: np.ndarray
    n_vertices: int

    def __len__(self):
        return self.src.size

    def adjacency(self):
        """Symmetric adjacency lists of (neighbour, displacement)."""
        adj = [[] for _ in range(self.n_vertices)]
        for s, d, v in zip(self.src.tolist(), self.dst.tolist(), self.disp):
            adj[s].append((d, v))
            adj[d].append((s, -v))
        return adj


@dataclass(frozen=True)
class BoundaryFace:
    axis: int
    side: int  # 0 = low end, 1 = high end


class Mesh:
    """Immutable structured grid: vertices, stencil edges, cells and boundary tags."""

    def __init__(self, axes, stencil_radius: int = 3, domain: ParamDomain | None = None):
        if int(stencil_radius) < 1:
            raise MeshError("stencil_radius must be >= 1")
        self.axes = tuple(axes)
        self.stencil_radius = int(stencil_radius)
        self.domain = domain
        self.dim = len(self.axes)
        self.shape = tuple(ax.size for ax in self.axes)
        for k, ax in enumerate(self.axes):
            if (ax.pole_lo or ax.pole_hi) and k != 0:
                raise MeshError("poles are only supported on the first axis")
        self._number_vertices()
        self._tag_boundary()

    # -- vertices ---------------------------------------------------------
    def _number_vertices(self):
        shape = self.shape
        canonical = np.ones(shape, dtype=bool)
        first = self.axes[0]
        pole_slices = []
        if first.pole_lo:
            pole_slices.append(0)
        if first.pole_hi:
            pole_slices.append(shape[0] - 1)
        for i in pole_slices:
            canonical[i] = False
            canonical[(i,) + (0,) * (self.dim - 1)] = True
        ids = np.cumsum(canonical.ravel()) - 1
        vid = ids.reshape(shape).copy()
        for i in pole_slices:
            vid[i] = vid[(i,) + (0,) * (self.dim - 1)]
        self.vertex_id = vid
        self.n_vertices = int(canonical.sum())
        flat_canonical = np.flatnonzero(canonical.ravel())
        self.grid_index = np.stack(np.unravel_index(flat_canonical, shape), axis=1)
        self.vertices = np.stack(
            [ax.nodes[self.grid_index[:, k]] for k, ax in enumerate(self.axes)], axis=1)
        self.is_pole = np.zeros(self.n_vertices, dtype=bool)
        for i in pole_slices:
            self.is_pole[vid[(i,) + (0,) * (self.dim - 1)]] = True

    # -- boundary ---------------------------------------------------------
    def boundary_faces(self):
        faces = []
        for k, ax in enumerate(self.axes):
            if ax.kind != "interval":
                continue
            if not ax.pole_lo:
                faces.append(BoundaryFace(k, 0))
            if not ax.pole_hi:
                faces.append(BoundaryFace(k, 1))
        return faces

    def face_vertices(self, face: BoundaryFace) -> np.ndarray:
        idx = 0 if face.side == 0 else self.shape[face.axis] - 1
        return np.unique(np.take(self.vertex_id, idx, axis=face.axis))

    def _tag_boundary(self):
        faces = self.boundary_faces()
        sets = [set(self.face_vertices(f).tolist()) for f in faces]
        parent = list(range(len(faces)))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for a, b in itertools.combinations(range(len(faces)), 2):
            if sets[a] & sets[b]:
                parent[find(a)] = find(b)
        groups: dict[int, list[int]] = {}
        for a in range(len(faces)):
            groups.setdefault(find(a), []).append(a)
        ordered = sorted(groups.values(), key=min)
        self.component_faces = [[faces[a] for a in grp] for grp in ordered]
        self.boundary_tags = np.full(self.n_vertices, -1, dtype=int)
        self._components = []
        for cid, grp in enumerate(ordered):
            verts = np.array(sorted(set().union(*(sets[a] for a in grp))), dtype=int)
            self.boundary_tags[verts] = cid
            self._components.append((cid, verts))

    def boundary_components(self):
        return [(cid, verts.copy()) for cid, verts in self._components]

    # -- edges ------------------------------------------------------------
    def stencil_offsets(self):
        r = self.stencil_radius
        offs = []
        for o in itertools.product(range(-r, r + 1), repeat=self.dim):
            nz = [c for c in o if c != 0]
            if nz and nz[0] > 0:
                offs.append(o)
        return np.array(offs, dtype=int)

    @cached_property
    def edges(self) -> EdgeGraph:
        grids = np.indices(self.shape).reshape(self.dim, -1)
        src_ids = self.vertex_id.ravel()
        srcs, dsts, disps = [], [], []
        for off in self.stencil_offsets():
            valid = np.ones(grids.shape[1], dtype=bool)
            tgt = np.empty_like(grids)
            disp = np.empty((grids.shape[1], self.dim))
            for k, ax in enumerate(self.axes):
                raw = grids[k] + off[k]
                if ax.kind == "periodic":
                    wraps, t = np.divmod(raw, ax.size)
                    disp[:, k] = ax.nodes[t] + wraps * ax.period - ax.nodes[grids[k]]
                else:
                    valid &= (raw >= 0) & (raw < ax.size)
                    t = np.clip(raw, 0, ax.size - 1)
                    disp[:, k] = ax.nodes[t] - ax.nodes[grids[k]]
                tgt[k] = t
            s = src_ids[valid]
            d = self.vertex_id[tuple(tgt[:, valid])]
            srcs.append(s)
            dsts.append(d)
            disps.append(disp[valid])
        src = np.concatenate(srcs)
        dst = np.concatenate(dsts)
        disp = np.concatenate(disps)
        keep = src != dst
        src, dst, disp = src[keep], dst[keep], disp[keep]
        if self.is_pole.any():
            # a pole sees its neighbours along the radial direction only
            touches = self.is_pole[src] | self.is_pole[dst]
            radial = self.vertices[dst, 0] - self.vertices[src, 0]
            disp[touches] = 0.0
            disp[touches, 0] = radial[touches]
        flip = src > dst
        src, dst = np.where(flip, dst, src), np.where(flip, src, dst)
        disp[flip] *= -1.0
        key = src.astype(np.int64) * self.n_vertices + dst
        _, first = np.unique(key, return_index=True)
        first.sort()
        graph = EdgeGraph(src[first], dst[first], disp[first], self.n_vertices)
        adj = coo_matrix((np.ones(len(graph)), (graph.src, graph.dst)),
                         shape=(self.n_vertices,) * 2)
        n_comp, _ = connected_components(adj, directed=False)
        if n_comp != 1:
            raise MeshError(f"edge graph has {n_comp} connected components")
        return graph

    # -- cells ------------------------------------------------------------
    @cached_property
    def cells(self):
        """Primal cells as (centers, widths, corner vertex ids)."""
        centers = np.stack(np.meshgrid(*[ax.cell_centers() for ax in self.axes],
                                       indexing="ij"), -1).reshape(-1, self.dim)
        widths = np.stack(np.meshgrid(*[np.subtract(*ax.cell_bounds()[::-1]) for ax in self.axes],
                                      indexing="ij"), -1).reshape(-1, self.dim)
        corner_pairs = [ax.cell_corners() for ax in self.axes]
        counts = [c[0].size for c in corner_pairs]
        cell_idx = np.indices(counts).reshape(self.dim, -1)
        corners = []
        for bits in itertools.product((0, 1), repeat=self.dim):
            g = tuple(corner_pairs[k][b][cell_idx[k]] for k, b in enumerate(bits))
            corners.append(self.vertex_id[g])
        return centers, widths, np.stack(corners, axis=1)

    @property
    def cell_measures(self) -> np.ndarray:
        return np.prod(self.cells[1], axis=1)

    def facets(self, face: BoundaryFace):
        """Boundary facets of one face as (centers, measures, corner vertex ids)."""
        others = [k for k in range(self.dim) if k != face.axis]
        ax = self.axes[face.axis]
        end = ax.nodes[0] if face.side == 0 else ax.nodes[-1]
        end_idx = 0 if face.side == 0 else ax.size - 1
        sub_centers = [self.axes[k].cell_centers() for k in others]
        sub_widths = [np.subtract(*self.axes[k].cell_bounds()[::-1]) for k in others]
        grid_c = np.stack(np.meshgrid(*sub_centers, indexing="ij"), -1).reshape(-1, len(others))
        grid_w = np.stack(np.meshgrid(*sub_widths, indexing="ij"), -1).reshape(-1, len(others))
        centers = np.empty((grid_c.shape[0], self.dim))
        centers[:, others] = grid_c
        centers[:, face.axis] = end
        corner_pairs = [self.axes[k].cell_corners() for k in others]
        cell_idx = np.indices([c[0].size for c in corner_pairs]).reshape(len(others), -1)
        corners = []
        for bits in itertools.product((0, 1), repeat=len(others)):
            g = [None] * self.dim
            g[face.axis] = np.full(cell_idx.shape[1], end_idx)
            for n, (k, b) in enumerate(zip(others, bits)):
                g[k] = corner_pairs[n][b][cell_idx[n]]
            corners.append(self.vertex_id[tuple(g)])
        return centers, np.prod(grid_w, axis=1), np.stack(corners, axis=1)

    def summary(self) -> dict:
        return {
            "vertex_count": self.n_vertices,
            "resolution": list(self.shape),
            "stencil_radius": self.stencil_radius,
            "boundary_components": [
                {"id": cid, "vertex_count": int(v.size)} for cid, v in self._components],
            "domain": self.domain.to_dict() if self.domain is not None else None,
        }


def _axis_for(kind: str, lo: float, hi: float, n: int, pole_lo: bool = False) -> Axis:
    if kind == "interval":
        nodes = np.linspace(lo, hi, n)
    elif kind == "periodic":
        nodes = lo + (hi - lo) * np.arange(n) / n
    else:
        nodes = lo + (hi - lo) * (np.arange(n) + 0.5) / n
    return Axis(nodes, kind, lo, hi, pole_lo=pole_lo)


def build_grid_mesh(domain: ParamDomain, resolution, stencil_radius: int = 3) -> Mesh:
    """Tensor grid over ``domain`` with ``resolution`` nodes per coordinate."""
    if np.isscalar(resolution):
        resolution = (int(resolution),) * domain.dim
    resolution = tuple(int(n) for n in resolution)
    if len(resolution) != domain.dim:
        raise MeshError("resolution must give one count per coordinate")
    if min(resolution) < 4:
        raise MeshError(f"resolution-too-small: {resolution}")
    if int(stencil_radius) < 1:
        raise MeshError("stencil_radius must be >= 1")
    axes = []
    for k, (kind, (lo, hi), n) in enumerate(zip(domain.axis_kinds(), domain.extents, resolution)):
        pole = domain.kind == "polar-cap" and k == 0
        axes.append(_axis_for(kind, lo, hi, n, pole_lo=pole))
    return Mesh(axes, stencil_radius, domain)


def boundary_components(mesh: Mesh):
    return mesh.boundary_components()
