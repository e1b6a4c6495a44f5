"""Closed-form metric families: warped products, conformal factors and graph metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .geometry import MetricField
from .mesh import Mesh, ParamDomain, annulus, cylinder, polar_cap, torus

PROFILE_IDS = (
    "cinched-torus", "cinched-sphere", "taxi-finsler", "bubble-torus",
    "single-ridge", "spline-torus", "pmt-graph", "flat",
)
METRIC_KINDS = ("warped-product", "conformal", "graph", "constant")

CAP_RADIUS = np.pi - 0.3

DEFAULT_PARAMS: dict[str, dict] = {
    "cinched-torus": {"h0": 0.5},
    "cinched-sphere": {"h0": 0.5},
    "taxi-finsler": {"boundary_cinches": True},
    "bubble-torus": {},
    "single-ridge": {"h0": 1.5},
    "spline-torus": {"eta": 2.0},
    "pmt-graph": {"n": 3, "mass": 0.01, "r": 1.0, "r0": 0.5},
    "flat": {"domain": "cylinder"},
}

# families whose sequence members satisfy g_j >= g_0 pointwise (True) or g_j <= g_0 (False)
DOMINATES_BACKGROUND = {
    "cinched-torus": False, "cinched-sphere": False, "taxi-finsler": True,
    "bubble-torus": True, "single-ridge": True, "spline-torus": True,
    "pmt-graph": True, "flat": True,
}


class ProfileError(ValueError):
    pass


def resolve_params(family: str, params: Mapping | None = None) -> dict:
    if family not in PROFILE_IDS:
        raise ProfileError(f"unknown family {family!r}; choose from {', '.join(PROFILE_IDS)}")
    out = dict(DEFAULT_PARAMS[family])
    out.update({k: v for k, v in (params or {}).items() if v is not None})
    return out


# -- scalar profiles ----------------------------------------------------------

def canonical_bump(s, h0: float, top: float = 1.0):
    """Even polynomial with value h0 at 0 and value ``top``, slope 0 at s = +-1."""
    s = np.asarray(s, dtype=float)
    return top - (top - h0) * (1.0 - s * s) ** 2


def smoothstep(u):
    u = np.asarray(u, dtype=float)
    return 3.0 * u * u - 2.0 * u ** 3


def geometric_blend(s, top: float):
    """top^{smoothstep(2 - s)} on [1, 2]: goes from ``top`` at s = 1 to 1 at s = 2."""
    return np.power(float(top), smoothstep(2.0 - np.asarray(s, dtype=float)))


def taxi_centres(j: int, boundary_cinches: bool = True) -> np.ndarray:
    n = 2 ** j
    i = np.arange(0, n + 1) if boundary_cinches else np.arange(1, n)
    return -np.pi + 2.0 * np.pi * i / n


def _piecewise_radial(r, j, family, p):
    h0 = p.get("h0")
    if family == "flat":
        return np.ones_like(r)
    if family == "cinched-torus":
        s = j * r
        return np.where(np.abs(s) <= 1.0, canonical_bump(np.clip(s, -1, 1), h0), 1.0)
    if family == "cinched-sphere":
        s = j * (r - np.pi / 2)
        return np.where(np.abs(s) <= 1.0, canonical_bump(np.clip(s, -1, 1), h0), 1.0)
    if family == "single-ridge":
        s = j * r
        return np.where(s <= 1.0, canonical_bump(np.clip(s, 0, 1), h0), 1.0)
    if family == "taxi-finsler":
        n = 2 ** j
        width = 4.0 ** (-j)
        lo_i, hi_i = (0, n) if p.get("boundary_cinches", True) else (1, n - 1)
        i = np.clip(np.rint((r + np.pi) * n / (2 * np.pi)), lo_i, hi_i)
        s = (r - (-np.pi + 2 * np.pi * i / n)) / width
        return np.where(np.abs(s) <= 1.0, canonical_bump(np.clip(s, -1, 1), 1.0, top=5.0), 5.0)
    if family == "bubble-torus":
        s = j * r
        out = np.ones_like(r)
        out = np.where(s <= 2.0, geometric_blend(np.clip(s, 1, 2), j), out)
        return np.where(s <= 1.0, float(j), out)
    if family == "spline-torus":
        eta = float(p["eta"])
        inner = float(j) ** (-eta)
        plateau = float(j) ** eta / (1.0 + eta * np.log(j))
        top = j / (1.0 + np.log(j))
        with np.errstate(divide="ignore", invalid="ignore"):
            rr = np.clip(r, inner, 1.0 / j)
            middle = 1.0 / (rr * (1.0 - np.log(rr)))
        out = np.ones_like(r)
        out = np.where(j * r <= 2.0, geometric_blend(np.clip(j * r, 1, 2), top), out)
        out = np.where(r <= 1.0 / j, middle, out)
        return np.where(r <= inner, plateau, out)
    raise ProfileError(f"{family} has no radial warping or conformal profile")


RADIAL_INTERVALS = {
    "cinched-torus": (-np.pi, np.pi), "taxi-finsler": (-np.pi, np.pi),
    "single-ridge": (0.0, np.pi), "cinched-sphere": (0.0, CAP_RADIUS),
    "bubble-torus": (0.0, np.sqrt(2) * np.pi), "spline-torus": (0.0, np.sqrt(2) * np.pi),
    "flat": (-np.inf, np.inf),
}


def warping_profile(family: str, j: int, r, **params):
    """f_j(r) for the warped and conformal families (vectorised over ``r``)."""
    p = resolve_params(family, params)
    if family not in RADIAL_INTERVALS:
        raise ProfileError(f"{family} has no radial warping or conformal profile")
    if int(j) < 1:
        raise ProfileError("j must be >= 1")
    r_arr = np.asarray(r, dtype=float)
    lo, hi = RADIAL_INTERVALS[family]
    eps = 1e-12 * max(1.0, abs(hi) if np.isfinite(hi) else 1.0)
    if np.any(r_arr < lo - eps) or np.any(r_arr > hi + eps):
        raise ProfileError(f"r outside [{lo}, {hi}] for {family}")
    if family in ("cinched-torus", "cinched-sphere", "single-ridge"):
        h0 = p["h0"]
        if family == "single-ridge" and not 1.0 < h0 <= 2.0:
            raise ProfileError("single-ridge needs h0 in (1, 2]")
        if family != "single-ridge" and not 0.0 < h0 <= 1.0:
            raise ProfileError("cinch depth h0 must lie in (0, 1]")
    out = _piecewise_radial(r_arr, int(j), family, p)
    return float(out) if np.ndim(r) == 0 else out


def schwarzschild_inner_radius(n: int, m: float) -> float:
    _check_pmt(n, m)
    return (2.0 * m) ** (1.0 / (n - 2))


def _check_pmt(n, m):
    if n not in (3, 4):
        raise ProfileError("schwarzschild height supports n = 3 or n = 4")
    if not m > 0:
        raise ProfileError("mass must be positive")


def _check_rho(n, m, rho):
    rho = np.asarray(rho, dtype=float)
    inner = schwarzschild_inner_radius(n, m)
    if np.any(rho < inner * (1 - 1e-14)):
        raise ProfileError(f"radius below the inner radius {inner}")
    return rho, inner


def schwarzschild_height(n: int, m: float, rho):
    """Height of the Riemannian Schwarzschild graph over the flat slice."""
    _check_pmt(n, m)
    rho_a, _ = _check_rho(n, m, rho)
    if n == 3:
        out = np.sqrt(np.maximum(8.0 * m * (rho_a - 2.0 * m), 0.0))
    else:
        a = np.sqrt(2.0 * m)
        out = a * np.log(rho_a / a + np.sqrt(np.maximum(rho_a ** 2 / (2.0 * m) - 1.0, 0.0)))
    return float(out) if np.ndim(rho) == 0 else out


def schwarzschild_slope(n: int, m: float, rho):
    """Radial derivative of :func:`schwarzschild_height` (infinite at the inner radius)."""
    _check_pmt(n, m)
    rho_a, _ = _check_rho(n, m, rho)
    with np.errstate(divide="ignore"):
        if n == 3:
            out = np.sqrt(2.0 * m / np.maximum(rho_a - 2.0 * m, 0.0))
        else:
            out = np.sqrt(2.0 * m / np.maximum(rho_a ** 2 - 2.0 * m, 0.0))
    return float(out) if np.ndim(rho) == 0 else out


# -- metric specifications ----------------------------------------------------

@dataclass(frozen=True)
class MetricSpec:
    """Closed-form description of a metric on a parameter domain.

    ``base`` names the background the profile modifies: ``coordinate``
    (identity), ``polar`` (dr^2 + r^2 dth^2), ``round-cap`` (dr^2 + sin^2 r dth^2)
    or ``spherical`` (Euclidean space in spherical coordinates).
    """

    kind: str
    domain: ParamDomain | None = None
    base: str = "coordinate"
    family: str | None = None
    j: int = 1
    params: Mapping = field(default_factory=dict)
    profile: Callable | None = None
    matrix: np.ndarray | None = None
    dominates_background: bool | None = None
    center: tuple | None = None

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise ProfileError(f"unknown metric kind {self.kind!r}")

    def radial_profile(self, r):
        if self.profile is not None:
            return np.asarray(self.profile(r), dtype=float)
        return _piecewise_radial(np.asarray(r, dtype=float), int(self.j), self.family,
                                 resolve_params(self.family, self.params))

    def evaluate(self, points) -> np.ndarray:
        x = np.atleast_2d(np.asarray(points, dtype=float))
        n, d = x.shape
        if self.kind == "constant":
            return np.broadcast_to(np.asarray(self.matrix, dtype=float), (n, d, d)).copy()
        g = _base_metric(self.base, x)
        if self.kind == "warped-product":
            g[:, 1, 1] = self.radial_profile(x[:, 0]) ** 2
            return g
        if self.kind == "conformal":
            r = self._conformal_radius(x)
            return g * (self.radial_profile(r) ** 2)[:, None, None]
        if self.profile is not None:
            raise ProfileError("user-supplied graph heights are sampled through sample_metric")
        p = resolve_params(self.family, self.params)
        if p.get("mass", 0.0) > 0:
            g[:, 0, 0] += schwarzschild_slope(int(p["n"]), float(p["mass"]), x[:, 0]) ** 2
        return g

    def _conformal_radius(self, x):
        if self.base in ("round-cap", "polar"):
            return x[:, 0]
        c = np.zeros(x.shape[1]) if self.center is None else np.asarray(self.center, dtype=float)
        delta = x - c
        if self.domain is not None:
            for k, ((lo, hi), per) in enumerate(zip(self.domain.extents, self.domain.periodic)):
                if per:
                    L = hi - lo
                    delta[:, k] -= L * np.round(delta[:, k] / L)
        return np.sqrt(np.sum(delta * delta, axis=1))


def _base_metric(base: str, x) -> np.ndarray:
    n, d = x.shape
    g = np.zeros((n, d, d))
    g[:, 0, 0] = 1.0
    if base == "coordinate":
        g[:] = np.eye(d)
    elif base == "polar":
        g[:, 1, 1] = x[:, 0] ** 2
    elif base == "round-cap":
        g[:, 1, 1] = np.sin(x[:, 0]) ** 2
    elif base == "spherical":
        scale = x[:, 0] ** 2
        for k in range(1, d):
            g[:, k, k] = scale
            scale = scale * np.sin(x[:, k]) ** 2
    else:
        raise ProfileError(f"unknown base metric {base!r}")
    return g


def pmt_inner_cut(n: int, mass: float, r: float, radial_resolution: int) -> float:
    """Inner edge of the meshed shell: inner radius plus max(1e-3, one radial step)."""
    inner = schwarzschild_inner_radius(n, mass)
    return inner + max(1e-3, (r - inner) / (radial_resolution - 1))


def family_domain(family: str, params: Mapping | None = None, resolution=None) -> ParamDomain:
    p = resolve_params(family, params)
    if family in ("cinched-torus", "taxi-finsler"):
        return cylinder(np.pi)
    if family == "single-ridge":
        return ParamDomain("rectangle", ((0.0, np.pi), (0.0, 2 * np.pi)), (False, True))
    if family == "cinched-sphere":
        return polar_cap(CAP_RADIUS)
    if family in ("bubble-torus", "spline-torus"):
        return torus(2)
    if family == "pmt-graph":
        n = int(p["n"])
        inner = p.get("inner")
        if inner is None:
            n_rad = 16 if resolution is None else (resolution if np.isscalar(resolution) else resolution[0])
            inner = pmt_inner_cut(n, float(p["mass"]), float(p["r"]), int(n_rad))
        return annulus(float(inner), float(p["r"]), n)
    return named_domain(p.get("domain", "cylinder"))


def named_domain(name: str) -> ParamDomain:
    table = {
        "cylinder": lambda: cylinder(np.pi),
        "torus": lambda: torus(2),
        "square": lambda: ParamDomain("rectangle", ((0.0, 1.0), (0.0, 1.0)), (False, False)),
        "strip": lambda: ParamDomain("rectangle", ((0.0, np.pi), (0.0, 2 * np.pi)), (False, True)),
        "cap": lambda: polar_cap(CAP_RADIUS),
    }
    if name not in table:
        raise ProfileError(f"unknown domain {name!r}; choose from {', '.join(table)}")
    return table[name]()


def _flat_spec(domain: ParamDomain) -> MetricSpec:
    base = {"rectangle": "coordinate", "polar-cap": "polar", "annulus": "spherical"}[domain.kind]
    if base == "coordinate":
        return MetricSpec("constant", domain, matrix=np.eye(domain.dim), family="flat",
                          dominates_background=True)
    return MetricSpec("conformal", domain, base=base, family="flat", dominates_background=True)


def family_spec(family: str, j: int, params: Mapping | None = None, resolution=None) -> MetricSpec:
    """Sequence member g_j of a registered family."""
    p = resolve_params(family, params)
    if int(j) < 1:
        raise ProfileError("j must be >= 1")
    dom = family_domain(family, p, resolution)
    flag = DOMINATES_BACKGROUND[family]
    if family == "flat":
        return _flat_spec(dom)
    if family in ("cinched-torus", "taxi-finsler", "single-ridge"):
        warping_profile(family, j, 0.0 if family != "single-ridge" else 0.5, **p)
        return MetricSpec("warped-product", dom, family=family, j=int(j), params=p,
                          dominates_background=flag)
    if family == "cinched-sphere":
        warping_profile(family, j, np.pi / 2, **p)
        return MetricSpec("conformal", dom, base="round-cap", family=family, j=int(j), params=p,
                          dominates_background=flag)
    if family in ("bubble-torus", "spline-torus"):
        return MetricSpec("conformal", dom, family=family, j=int(j), params=p,
                          dominates_background=flag)
    return MetricSpec("graph", dom, base="spherical", family=family, j=int(j), params=p,
                      dominates_background=flag)


def background_spec(family: str, params: Mapping | None = None, resolution=None) -> MetricSpec:
    """The reference metric g_0 the family is compared against."""
    p = resolve_params(family, params)
    dom = family_domain(family, p, resolution)
    if family == "cinched-sphere":
        return MetricSpec("conformal", dom, base="round-cap", family="flat",
                          dominates_background=True)
    return _flat_spec(dom)


def graph_spec(domain: ParamDomain, height: Callable) -> MetricSpec:
    """Euclidean graph metric I + df (x) df of a user-supplied height over a rectangle."""
    if domain.kind != "rectangle":
        raise ProfileError("user-supplied graph heights need a rectangle domain")
    return MetricSpec("graph", domain, profile=height)


def sample_metric(spec: MetricSpec, mesh: Mesh) -> MetricField:
    if spec.domain is not None:
        if mesh.domain is None or not spec.domain.matches(mesh.domain):
            raise ProfileError("metric domain does not match the mesh domain")
    if spec.kind == "graph" and spec.profile is not None:
        evaluator = _centered_graph_evaluator(spec.profile, mesh)
    else:
        evaluator = spec.evaluate
    return MetricField(mesh, evaluator(mesh.vertices), evaluator=evaluator)


def _centered_graph_evaluator(height, mesh: Mesh):
    steps = np.array([ax.nodes[1] - ax.nodes[0] for ax in mesh.axes])

    def evaluate(points):
        x = np.atleast_2d(np.asarray(points, dtype=float))
        grad = np.empty_like(x)
        for k in range(x.shape[1]):
            e = np.zeros(x.shape[1])
            e[k] = steps[k]
            grad[:, k] = (np.asarray(height(x + e)) - np.asarray(height(x - e))) / (2 * steps[k])
        return np.eye(x.shape[1])[None] + grad[:, :, None] * grad[:, None, :]

    return evaluate
