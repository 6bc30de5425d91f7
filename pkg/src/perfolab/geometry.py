"""Perforation data on flat two-dimensional model manifolds.

A model manifold is either a flat square torus or a planar polygon with a
Dirichlet/Robin partition of its edges. On it we build a maximal
eps-separated set of sites, the Voronoi cells of those sites, the
classification of each site (boundary / near-zero / perforated), and the
holes whose perimeters carry the potential's mass through a signed Robin
weight.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence, Union

import numpy as np
import shapely
from scipy.spatial import cKDTree
from shapely.geometry import LineString
from shapely.geometry import Polygon as _ShapelyPolygon
from shapely.geometry.polygon import orient

from .errors import (
    DegenerateCell,
    GridCoverageFailure,
    InvalidExponent,
    PerforationTooLarge,
)

DIM = 2
# exponent of eps in the pointwise lower bound on |V| for perforated sites
THRESHOLD_EXPONENT = 0.5
# verification grid spacing is at most eps / GRID_REFINEMENT
GRID_REFINEMENT = 8


# --------------------------------------------------------------------------
# domains


@dataclass(frozen=True)
class Torus:
    """Flat square torus R^2 / (L Z)^2 with fundamental domain [0, L)^2."""

    side: float = 1.0

    def __post_init__(self):
        if not self.side > 0:
            raise ValueError("torus side length must be positive")

    is_torus = True

    @property
    def area(self) -> float:
        return self.side**2

    @property
    def diameter(self) -> float:
        # geodesic diameter: the farthest point from any x is x + (L/2, L/2)
        return self.side * math.sqrt(2.0) / 2.0

    @property
    def bounds(self):
        return (0.0, 0.0, self.side, self.side)

    def wrap(self, pts):
        return np.mod(np.asarray(pts, dtype=float), self.side)

    def displacement(self, a, b):
        """Minimal-image vector from ``a`` to ``b``."""
        d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
        return d - self.side * np.round(d / self.side)

    def distance(self, a, b):
        return np.linalg.norm(self.displacement(a, b), axis=-1)


@dataclass(frozen=True, eq=False)
class Polygon:
    """Simple CCW polygon; edge ``i`` joins vertex ``i`` to vertex ``i+1``.

    ``dirichlet_edges`` is the set Gamma of edges carrying u = 0; every
    other edge carries the Robin weight ``robin_weight[i]`` (default 0,
    i.e. Neumann).
    """

    vertices: np.ndarray
    dirichlet_edges: frozenset = frozenset()
    robin_weight: dict = field(default_factory=dict)

    is_torus = False

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ValueError("polygon needs at least three 2-D vertices")
        n = len(v)
        gamma = frozenset(int(i) for i in self.dirichlet_edges)
        if any(i < 0 or i >= n for i in gamma):
            raise ValueError("dirichlet_edges must index boundary edges")
        weights = {int(k): float(w) for k, w in dict(self.robin_weight).items()}
        if set(weights) & gamma:
            raise ValueError("robin_weight is defined only off the Dirichlet edges")
        if any(k < 0 or k >= n for k in weights):
            raise ValueError("robin_weight keys must index boundary edges")
        for i in range(n):
            if i not in gamma:
                weights.setdefault(i, 0.0)
        if not all(math.isfinite(w) for w in weights.values()):
            raise ValueError("robin weights must be finite")
        ring = shapely.geometry.LinearRing(v)
        if not ring.is_simple:
            raise ValueError("polygon boundary self-intersects")
        x, y = v[:, 0], v[:, 1]
        signed = 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))
        if not signed > 0:
            raise ValueError("polygon must be positively oriented with positive area")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "dirichlet_edges", gamma)
        object.__setattr__(self, "robin_weight", dict(sorted(weights.items())))
        object.__setattr__(self, "_area", signed)
        object.__setattr__(self, "_shape", _ShapelyPolygon(v))

    @classmethod
    def rectangle(cls, width=1.0, height=1.0, dirichlet_edges=(), robin_weight=None):
        """Axis-aligned rectangle; edges are bottom=0, right=1, top=2, left=3."""
        v = [[0.0, 0.0], [width, 0.0], [width, height], [0.0, height]]
        return cls(v, frozenset(dirichlet_edges), dict(robin_weight or {}))

    @property
    def n_edges(self) -> int:
        return len(self.vertices)

    @property
    def area(self) -> float:
        return self._area

    @property
    def diameter(self) -> float:
        v = self.vertices
        return float(np.max(np.linalg.norm(v[:, None, :] - v[None, :, :], axis=-1)))

    @property
    def bounds(self):
        return self._shape.bounds

    @property
    def shape(self):
        return self._shape

    def edge(self, i):
        return self.vertices[i], self.vertices[(i + 1) % self.n_edges]

    def wrap(self, pts):
        return np.asarray(pts, dtype=float)

    def displacement(self, a, b):
        return np.asarray(b, dtype=float) - np.asarray(a, dtype=float)

    def distance(self, a, b):
        return np.linalg.norm(self.displacement(a, b), axis=-1)

    def covers(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return shapely.intersects_xy(self._shape, pts[:, 0], pts[:, 1])

    def boundary_distance(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return shapely.distance(self._shape.exterior, shapely.points(pts))


FlatDomain = Union[Torus, Polygon]


def unit_square(dirichlet_edges=(), robin_weight=None) -> Polygon:
    return Polygon.rectangle(1.0, 1.0, dirichlet_edges, robin_weight)


# --------------------------------------------------------------------------
# potentials


@dataclass(frozen=True)
class PotentialField:
    """Continuous potential evaluated on arrays of points of shape (N, 2)."""

    func: Callable[[np.ndarray], np.ndarray]
    sup_bound: float | None = None
    lipschitz_bound: float | None = None
    name: str = "V"

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        if pts.ndim == 1:
            return float(np.asarray(self.func(pts[None, :]), dtype=float)[0])
        return np.asarray(self.func(pts), dtype=float).reshape(len(pts))


# --------------------------------------------------------------------------
# maximal separated sets


@dataclass(frozen=True, eq=False)
class SeparatedSet:
    eps: float
    sites: np.ndarray
    seed: int

    def __len__(self):
        return len(self.sites)


def verification_grid(domain: FlatDomain, eps: float) -> np.ndarray:
    """Grid of spacing <= eps/8 used to certify maximality."""
    x0, y0, x1, y1 = domain.bounds
    if domain.is_torus:
        n = max(1, math.ceil(GRID_REFINEMENT * domain.side / eps))
        g = np.arange(n) * (domain.side / n)
        return np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    h = eps / GRID_REFINEMENT
    nx = max(1, math.ceil((x1 - x0) / h))
    ny = max(1, math.ceil((y1 - y0) / h))
    gx = np.linspace(x0, x1, nx + 1)
    gy = np.linspace(y0, y1, ny + 1)
    pts = np.stack(np.meshgrid(gx, gy, indexing="ij"), axis=-1).reshape(-1, 2)
    pts = pts[domain.covers(pts)]
    bnd = []
    for i in range(domain.n_edges):
        a, b = domain.edge(i)
        m = max(1, math.ceil(np.linalg.norm(b - a) / h))
        t = np.arange(m)[:, None] / m
        bnd.append(a + t * (b - a))
    return np.vstack([pts] + bnd)


def _site_tree(domain, sites):
    if domain.is_torus:
        return cKDTree(domain.wrap(sites), boxsize=domain.side)
    return cKDTree(sites)


class _Buckets:
    """Uniform bucket grid for incremental eps-separation queries."""

    def __init__(self, domain, eps):
        self.domain = domain
        self.eps = eps
        x0, y0, x1, y1 = domain.bounds
        self.origin = np.array([x0, y0])
        self.nx = max(1, int((x1 - x0) // eps))
        self.ny = max(1, int((y1 - y0) // eps))
        self.size = np.array([(x1 - x0) / self.nx, (y1 - y0) / self.ny])
        self.cells: dict = {}
        self.points: list = []

    def _key(self, p):
        k = np.floor((p - self.origin) / self.size).astype(int)
        return min(max(k[0], 0), self.nx - 1), min(max(k[1], 0), self.ny - 1)

    def _neighbors(self, p):
        i, j = self._key(p)
        if self.domain.is_torus and (self.nx < 3 or self.ny < 3):
            return range(len(self.points))
        out = []
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                a, b = i + di, j + dj
                if self.domain.is_torus:
                    a, b = a % self.nx, b % self.ny
                out.extend(self.cells.get((a, b), ()))
        return out

    def admissible(self, p) -> bool:
        idx = list(self._neighbors(p))
        if not idx:
            return True
        q = np.asarray([self.points[i] for i in idx])
        return bool(np.all(self.domain.distance(q, p) >= self.eps))

    def add(self, p):
        self.cells.setdefault(self._key(p), []).append(len(self.points))
        self.points.append(np.asarray(p, dtype=float))


def build_separated_set(domain: FlatDomain, eps: float, seed: int = 0,
                        max_misses: int = 200) -> SeparatedSet:
    """Greedy dart throwing followed by a certified fill of the verification grid."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    rng = np.random.default_rng(seed)
    buckets = _Buckets(domain, eps)
    x0, y0, x1, y1 = domain.bounds
    lo, hi = np.array([x0, y0]), np.array([x1, y1])

    misses = 0
    while misses < max_misses:
        batch = lo + rng.random((256, 2)) * (hi - lo)
        if not domain.is_torus:
            batch = batch[domain.covers(batch)]
        for p in batch:
            if buckets.admissible(p):
                buckets.add(p)
                misses = 0
            else:
                misses += 1
                if misses >= max_misses:
                    break

    grid = verification_grid(domain, eps)
    if buckets.points:
        d, _ = _site_tree(domain, np.asarray(buckets.points)).query(grid)
        candidates = grid[d >= eps]
    else:
        candidates = grid
    for p in candidates[rng.permutation(len(candidates))]:
        if buckets.admissible(p):
            buckets.add(p)

    sites = np.asarray(buckets.points).reshape(-1, 2)
    d, _ = _site_tree(domain, sites).query(grid)
    if not np.all(d < eps):
        raise GridCoverageFailure(
            f"{int(np.sum(d >= eps))} verification points are not within eps of a site")
    sites.setflags(write=False)
    return SeparatedSet(float(eps), sites, int(seed))


def separation_and_gap(sset: SeparatedSet, domain: FlatDomain):
    """Return (minimum pairwise site distance, maximum grid-to-site distance)."""
    sites = sset.sites
    if len(sites) > 1:
        pair_d, _ = _site_tree(domain, sites).query(sites, k=2)
        min_sep = float(pair_d[:, 1].min())
    else:
        min_sep = math.inf
    d, _ = _site_tree(domain, sites).query(verification_grid(domain, sset.eps))
    return min_sep, float(d.max())


# --------------------------------------------------------------------------
# Voronoi cells


class SiteClass(Enum):
    BOUNDARY = "boundary"
    NEAR_ZERO = "near_zero"
    PERFORATED = "perforated"


@dataclass(frozen=True, eq=False)
class VoronoiCell:
    """Cell of one site.

    On the torus the polygon lives in the unwrapped plane around its site,
    so it may stick out of [0, L)^2.
    """

    site: np.ndarray
    polygon: np.ndarray
    area: float
    touches_boundary: bool
    clearance: float  # distance from the site to the cell boundary


def _clip_halfplane(poly, normal, offset):
    """Sutherland-Hodgman clip of a convex polygon to {x : normal.x <= offset}."""
    if len(poly) == 0:
        return poly
    s = poly @ normal - offset
    out = []
    n = len(poly)
    for i in range(n):
        j = (i + 1) % n
        if s[i] <= 0:
            out.append(poly[i])
        if (s[i] < 0 < s[j]) or (s[j] < 0 < s[i]):
            t = s[i] / (s[i] - s[j])
            out.append(poly[i] + t * (poly[j] - poly[i]))
    return np.asarray(out).reshape(-1, 2)


def _polygon_area(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _dedupe(poly, tol):
    keep = [poly[0]]
    for p in poly[1:]:
        if np.linalg.norm(p - keep[-1]) > tol:
            keep.append(p)
    if len(keep) > 1 and np.linalg.norm(keep[0] - keep[-1]) <= tol:
        keep.pop()
    return np.asarray(keep)


def _clearance(site, poly):
    a = poly
    b = np.roll(poly, -1, axis=0)
    ab = b - a
    t = np.clip(np.einsum("ij,ij->i", site - a, ab) / np.einsum("ij,ij->i", ab, ab), 0, 1)
    proj = a + t[:, None] * ab
    return float(np.min(np.linalg.norm(proj - site, axis=1)))


def _convex_cell(site, others, start):
    poly = start
    for q in others:
        normal = q - site
        offset = 0.5 * float(normal @ (q + site))
        poly = _clip_halfplane(poly, normal, offset)
    return poly


def voronoi(sset: SeparatedSet, domain: FlatDomain) -> list[VoronoiCell]:
    """Voronoi cells of the sites.

    Torus cells come from 3x3 periodic replication with the canonical copy
    kept; polygon cells are half-plane intersections clipped to the domain.
    """
    sites = np.asarray(sset.sites, dtype=float)
    if len(sites) > 1:
        d, _ = cKDTree(sites).query(sites, k=2)
        if d[:, 1].min() <= 1e-12 * domain.diameter:
            raise DegenerateCell("co-located sites")
    radius = 2.0 * sset.eps * (1.0 + 1.0 / GRID_REFINEMENT) + 1e-12
    cells = _voronoi_cells(sites, sset.eps, domain, radius)
    if len(sites) > 1 and cell_area_defect(cells, domain) > 1e-9:
        # sites sparser than a maximal set: neighbours may lie beyond 2 eps
        cells = _voronoi_cells(sites, sset.eps, domain, np.inf)
    return cells


def _voronoi_cells(sites, eps, domain, radius):
    total = domain.area
    cells = []
    if domain.is_torus:
        L = domain.side
        if len(sites) > 1 and not eps < L / 2:
            raise ValueError("torus Voronoi needs eps < L/2 when there are several sites")
        shifts = np.array([[i * L, j * L] for i in (-1, 0, 1) for j in (-1, 0, 1)])
        rep = (sites[None, :, :] + shifts[:, None, :]).reshape(-1, 2)
        centre = 4 * len(sites)  # offset of the (0, 0) shift block
        tree = cKDTree(rep)
        for i, s in enumerate(sites):
            start = s + 0.5 * L * np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], float)
            idx = [j for j in tree.query_ball_point(s, radius) if j != centre + i]
            idx.sort(key=lambda j: (np.linalg.norm(rep[j] - s), j))
            poly = _dedupe(_convex_cell(s, rep[idx], start), 1e-14 * L)
            area = _polygon_area(poly)
            cells.append(VoronoiCell(s.copy(), poly, area, False, _clearance(s, poly)))
    else:
        x0, y0, x1, y1 = domain.bounds
        pad = 0.01 * domain.diameter
        start = np.array([[x0 - pad, y0 - pad], [x1 + pad, y0 - pad],
                          [x1 + pad, y1 + pad], [x0 - pad, y1 + pad]])
        tree = cKDTree(sites)
        tol = 1e-12 * domain.diameter
        for i, s in enumerate(sites):
            idx = [j for j in tree.query_ball_point(s, radius) if j != i]
            idx.sort(key=lambda j: (np.linalg.norm(sites[j] - s), j))
            convex = _convex_cell(s, sites[idx], start)
            clipped = _ShapelyPolygon(convex).intersection(domain.shape)
            if clipped.geom_type != "Polygon" or clipped.is_empty:
                raise DegenerateCell(f"cell of site {i} is not a single polygon")
            clipped = orient(clipped, 1.0)
            poly = _dedupe(np.asarray(clipped.exterior.coords)[:-1], tol)
            touches = bool(clipped.exterior.distance(domain.shape.exterior) <= tol)
            cells.append(VoronoiCell(s.copy(), poly, _polygon_area(poly), touches,
                                     _clearance(s, poly)))
    for i, c in enumerate(cells):
        if c.area < 1e-12 * total:
            raise DegenerateCell(f"cell of site {i} has area {c.area:.3e}; co-located sites?")
    return cells


def cell_area_defect(cells, domain) -> float:
    """Relative mismatch between the summed cell areas and the domain area."""
    return abs(sum(c.area for c in cells) - domain.area) / domain.area


# --------------------------------------------------------------------------
# classification


def sample_cell(cell: VoronoiCell, n: int = 16):
    """Cell vertices plus an interior lattice with at least ``n`` points.

    Returns the samples and the lattice spacing.
    """
    shape = _ShapelyPolygon(cell.polygon)
    x0, y0, x1, y1 = shape.bounds
    h = math.sqrt(cell.area / n)
    while True:
        gx = np.arange(x0 + 0.5 * h, x1, h)
        gy = np.arange(y0 + 0.5 * h, y1, h)
        g = np.stack(np.meshgrid(gx, gy, indexing="ij"), axis=-1).reshape(-1, 2)
        g = g[shapely.contains_xy(shape, g[:, 0], g[:, 1])]
        if len(g) >= n:
            break
        h *= 0.7
    return np.vstack([cell.polygon, cell.site[None, :], g]), h


def classify_sites(cells: Sequence[VoronoiCell], V: PotentialField, eps: float,
                   samples_per_cell: int = 16, *, domain: FlatDomain | None = None,
                   exponent: float = THRESHOLD_EXPONENT) -> list[SiteClass]:
    """Boundary for cells touching the outer boundary; Perforated when the
    sampled minimum of |V| exceeds eps**exponent; NearZero otherwise.

    With ``V.lipschitz_bound`` set, the sampled minimum is lowered by the
    bound times the lattice spacing before comparing.
    """
    if samples_per_cell < 16:
        raise ValueError("samples_per_cell must be at least 16")
    threshold = eps**exponent
    out = []
    for c in cells:
        if c.touches_boundary:
            out.append(SiteClass.BOUNDARY)
            continue
        pts, h = sample_cell(c, samples_per_cell)
        if domain is not None:
            pts = domain.wrap(pts)
        low = float(np.min(np.abs(V(pts))))
        if V.lipschitz_bound is not None:
            low -= V.lipschitz_bound * h
        out.append(SiteClass.PERFORATED if low > threshold else SiteClass.NEAR_ZERO)
    return out


# --------------------------------------------------------------------------
# holes


@dataclass(frozen=True, eq=False)
class Hole:
    center: np.ndarray
    radius: float
    sign: int
    clearance: float | None = None


def hole_radius(site, cell_area: float, V: PotentialField, alpha: float,
                clearance: float | None = None) -> float:
    """Radius making the hole perimeter equal |V(site)| * cell_area / alpha."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    v = V(np.asarray(site, dtype=float))
    if v == 0:
        raise ValueError("V vanishes at the site")
    r = abs(v) * cell_area / (2.0 * math.pi * alpha)
    if clearance is not None and r >= 0.5 * clearance:
        raise PerforationTooLarge(
            f"radius {r:.4g} is not below half the site clearance {clearance:.4g}")
    return r


@dataclass(frozen=True, eq=False)
class PerforatedDomain:
    base: FlatDomain
    holes: list
    eps: float
    alpha: float

    @property
    def area(self) -> float:
        return self.base.area - math.pi * sum(h.radius**2 for h in self.holes)

    @property
    def centers(self) -> np.ndarray:
        return np.array([h.center for h in self.holes], dtype=float).reshape(-1, 2)

    @property
    def radii(self) -> np.ndarray:
        return np.array([h.radius for h in self.holes], dtype=float)

    @property
    def signs(self) -> np.ndarray:
        return np.array([h.sign for h in self.holes], dtype=int)

    def hole_weights(self) -> dict:
        """Robin weight sign * alpha keyed by hole id."""
        return {i: h.sign * self.alpha for i, h in enumerate(self.holes)}

    def check(self) -> None:
        """Raise ValueError unless holes are disjoint and away from the boundary."""
        c, r = self.centers, self.radii
        if len(c) > 1:
            tree = _site_tree(self.base, c)
            d, j = tree.query(self.base.wrap(c), k=2)
            if np.any(d[:, 1] <= r + r[j[:, 1]]):
                raise ValueError("holes overlap")
        if not self.base.is_torus and len(c):
            if np.any(self.base.boundary_distance(c) <= r):
                raise ValueError("a hole meets the outer boundary")


# --------------------------------------------------------------------------
# alpha schedules


@dataclass(frozen=True)
class ConstantAlpha:
    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    def __call__(self, eps: float) -> float:
        return float(self.alpha)


@dataclass(frozen=True)
class FlexPower:
    """alpha(eps) = eps ** (-d (p0 - 1) / (d - p0)), 1 < p0 < d/(d-1)."""

    p0: float
    d: int = DIM

    def __post_init__(self):
        if not 1.0 < self.p0 < self.d / (self.d - 1.0):
            raise InvalidExponent(f"p0={self.p0} outside (1, {self.d / (self.d - 1.0)})")

    @property
    def exponent(self) -> float:
        return self.d * (self.p0 - 1.0) / (self.d - self.p0)

    def __call__(self, eps: float) -> float:
        return float(eps ** (-self.exponent))


AlphaSchedule = Union[ConstantAlpha, FlexPower]


@dataclass
class ScheduleReport:
    eps: list
    alpha: list
    eps_over_alpha: list
    products: dict          # p -> alpha * eps**(d(p-1)/(d-p))
    tends_to_zero: dict     # sequence name -> bool

    @property
    def admissible(self) -> bool:
        return all(self.tends_to_zero.values())


def _decreasing_to_zero(seq) -> bool:
    s = np.asarray(seq, dtype=float)
    if len(s) < 2 or np.any(s < 0):
        return False
    return bool(np.all(np.diff(s) < -1e-12 * np.abs(s[:-1])))


def validate_schedule(schedule, probe_eps, p_values=(1.5,), d: int = DIM) -> ScheduleReport:
    """Tabulate both limits that alpha(eps) must satisfy and flag failures."""
    if isinstance(schedule, FlexPower) and not 1.0 < schedule.p0 < d / (d - 1.0):
        raise InvalidExponent(f"p0={schedule.p0} outside (1, {d / (d - 1.0)})")
    eps = [float(e) for e in probe_eps]
    if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("probe_eps must be strictly decreasing and positive")
    alpha = [schedule(e) for e in eps]
    inv = [e / a for e, a in zip(eps, alpha)]
    products, flags = {}, {"eps_over_alpha": _decreasing_to_zero(inv)}
    for p in p_values:
        if not 1.0 < p < d:
            raise InvalidExponent(f"p={p} outside (1, {d})")
        q = d * (p - 1.0) / (d - p)
        seq = [a * e**q for e, a in zip(eps, alpha)]
        products[float(p)] = seq
        flags[f"alpha_eps_pow_p={p}"] = _decreasing_to_zero(seq)
    return ScheduleReport(eps, alpha, inv, products, flags)


# --------------------------------------------------------------------------
# perforation


def perforate(domain: FlatDomain, cells, classes, V: PotentialField, schedule,
              eps: float):
    """Remove one hole per perforated site.

    Returns the perforated domain and the signed boundary measure carried by
    the hole circles.
    """
    from .measures import BoundaryMeasure

    alpha = schedule(eps)
    holes, bad = [], []
    for i, (c, k) in enumerate(zip(cells, classes)):
        if k is not SiteClass.PERFORATED:
            continue
        v = V(domain.wrap(c.site))
        try:
            r = hole_radius(c.site, c.area, V, alpha, clearance=c.clearance)
        except PerforationTooLarge:
            bad.append(i)
            continue
        holes.append(Hole(np.array(c.site, dtype=float), r, 1 if v > 0 else -1, c.clearance))
    if bad:
        raise PerforationTooLarge(f"{len(bad)} holes too large at eps={eps}", bad)
    pd = PerforatedDomain(domain, holes, float(eps), float(alpha))
    pd.check()
    mu = BoundaryMeasure.from_perforated(pd)
    return pd, mu


def build_perforated(domain: FlatDomain, V: PotentialField, schedule, eps: float,
                     seed: int = 0, samples_per_cell: int = 16):
    """Whole construction at one eps; returns (sset, cells, classes, pd, mu)."""
    sset = build_separated_set(domain, eps, seed)
    cells = voronoi(sset, domain)
    classes = classify_sites(cells, V, eps, samples_per_cell, domain=domain)
    pd, mu = perforate(domain, cells, classes, V, schedule, eps)
    return sset, cells, classes, pd, mu


# --------------------------------------------------------------------------
# JSON


def domain_to_dict(domain: FlatDomain) -> dict:
    if domain.is_torus:
        return {"kind": "torus", "side": domain.side}
    return {
        "kind": "polygon",
        "vertices": domain.vertices.tolist(),
        "dirichlet_edges": sorted(domain.dirichlet_edges),
        "robin_weight": {str(k): w for k, w in domain.robin_weight.items()},
    }


def domain_from_dict(d: dict) -> FlatDomain:
    if d["kind"] == "torus":
        return Torus(float(d.get("side", 1.0)))
    if d["kind"] == "polygon":
        return Polygon(d["vertices"], frozenset(d.get("dirichlet_edges", ())),
                       {int(k): float(w) for k, w in d.get("robin_weight", {}).items()})
    raise ValueError(f"unknown domain kind {d['kind']!r}")


def sset_to_json(sset: SeparatedSet) -> str:
    return json.dumps({"eps": sset.eps, "seed": sset.seed,
                       "sites": np.asarray(sset.sites).tolist()}, sort_keys=True)


def sset_from_json(text: str) -> SeparatedSet:
    d = json.loads(text)
    return SeparatedSet(float(d["eps"]), np.asarray(d["sites"], dtype=float).reshape(-1, 2),
                        int(d["seed"]))


def perforated_to_json(pd: PerforatedDomain) -> str:
    holes = []
    for h in pd.holes:
        item = {"c": [float(h.center[0]), float(h.center[1])], "r": h.radius, "sign": h.sign}
        if h.clearance is not None:
            item["clearance"] = h.clearance
        holes.append(item)
    return json.dumps({"domain": domain_to_dict(pd.base), "eps": pd.eps, "alpha": pd.alpha,
                       "holes": holes}, sort_keys=True)


def perforated_from_json(text: str) -> PerforatedDomain:
    d = json.loads(text)
    holes = [Hole(np.asarray(h["c"], dtype=float), float(h["r"]), int(h["sign"]),
                  h.get("clearance")) for h in d["holes"]]
    return PerforatedDomain(domain_from_dict(d["domain"]), holes, float(d["eps"]),
                            float(d["alpha"]))
