"""Tagged conforming triangulations of flat domains and perforated domains.

Hole circles are replaced by inscribed regular polygons whose radius is
corrected so that the polygon perimeter equals the circle perimeter; the
boundary integrals of the Robin form then see the exact hole mass.

Meshes of perforated domains are produced by Delaunay refinement
(Shewchuk's Triangle) driven by a graded size field around the holes.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
import triangle

from .errors import HoleResolutionFailure, MeshQualityFailure
from .geometry import FlatDomain, PerforatedDomain

OUTER_DIRICHLET = "OuterDirichlet"
OUTER_ROBIN = "OuterRobin"
HOLE_BOUNDARY = "HoleBoundary"
TAG_KINDS = (OUTER_DIRICHLET, OUTER_ROBIN, HOLE_BOUNDARY)

MIN_ANGLE = 20.0
MIN_HOLE_SIDES = 16
FORMAT_VERSION = 1
_SQRT3_4 = math.sqrt(3.0) / 4.0
_MARK0 = 2  # Triangle reserves markers 0 and 1


@dataclass(eq=False)
class Mesh:
    """Triangulation with boundary tags.

    ``edge_tags`` maps a sorted vertex pair to ``(kind, id)``;
    ``periodic`` rows ``(i, j)`` identify vertex ``j`` with vertex ``i``.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edge_tags: dict = field(default_factory=dict)
    periodic: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    period: float | None = None

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float).reshape(-1, 2)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.periodic = np.asarray(self.periodic, dtype=np.int64).reshape(-1, 2)
        self._dofs = None

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def frame(self):
        """Lower-left corner of the periodic fundamental square."""
        return self.vertices.min(axis=0)

    # -- dofs --------------------------------------------------------------
    def dof_map(self) -> np.ndarray:
        """Vertex -> degree of freedom, merging periodic-paired vertices."""
        if self._dofs is None:
            parent = np.arange(self.n_vertices)

            def find(i):
                while parent[i] != i:
                    parent[i] = parent[parent[i]]
                    i = parent[i]
                return i

            for a, b in self.periodic:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
            roots = np.array([find(i) for i in range(self.n_vertices)])
            _, dofs = np.unique(roots, return_inverse=True)
            self._dofs = dofs.astype(np.int64)
        return self._dofs

    @property
    def n_dofs(self) -> int:
        return int(self.dof_map().max()) + 1 if self.n_vertices else 0

    # -- geometry ----------------------------------------------------------
    def triangle_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def area(self) -> float:
        return float(np.sum(self.triangle_areas()))

    def angles(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        out = np.empty((len(p), 3))
        for k in range(3):
            u = p[:, (k + 1) % 3] - p[:, k]
            w = p[:, (k + 2) % 3] - p[:, k]
            cos = np.einsum("ij,ij->i", u, w) / (np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1))
            out[:, k] = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
        return out

    def min_angle(self) -> float:
        return float(self.angles().min()) if len(self.triangles) else 0.0

    def edges(self):
        """Unique sorted edges and the number of triangles sharing each."""
        t = self.triangles
        e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0, return_counts=True)

    def boundary_edges(self) -> np.ndarray:
        e, counts = self.edges()
        return e[counts == 1]

    def edge_length(self, i, j) -> float:
        return float(np.linalg.norm(self.vertices[i] - self.vertices[j]))

    def tagged(self, kind, tag_id=None) -> np.ndarray:
        rows = [k for k, (kk, ii) in self.edge_tags.items()
                if kk == kind and (tag_id is None or ii == tag_id)]
        return np.array(sorted(rows), dtype=np.int64).reshape(-1, 2)

    def hole_perimeter(self, hole_id) -> float:
        e = self.tagged(HOLE_BOUNDARY, hole_id)
        return float(np.sum(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)))

    def hole_ids(self) -> list:
        return sorted({i for k, i in self.edge_tags.values() if k == HOLE_BOUNDARY})

    def hole_cycle(self, hole_id) -> np.ndarray:
        """Vertices of a hole boundary in cyclic order."""
        e = self.tagged(HOLE_BOUNDARY, hole_id)
        adj: dict = {}
        for a, b in e:
            adj.setdefault(int(a), []).append(int(b))
            adj.setdefault(int(b), []).append(int(a))
        if any(len(v) != 2 for v in adj.values()):
            raise ValueError(f"hole {hole_id} boundary is not a simple cycle")
        start = min(adj)
        cycle, prev, cur = [start], None, start
        while True:
            nxt = [v for v in adj[cur] if v != prev]
            nxt = min(nxt) if prev is None else nxt[0]
            if nxt == start:
                break
            cycle.append(nxt)
            prev, cur = cur, nxt
        if len(cycle) != len(adj):
            raise ValueError(f"hole {hole_id} boundary has several components")
        return np.array(cycle, dtype=np.int64)

    def check(self, hole_ids=()) -> list:
        """Return a list of violated mesh invariants (empty when valid)."""
        problems = []
        if np.any(self.triangle_areas() <= 0):
            problems.append("non-positive or clockwise triangle")
        e, counts = self.edges()
        if np.any(counts > 2):
            problems.append("edge shared by more than two triangles")
        bnd = {tuple(x) for x in e[counts == 1]}
        paired = set()
        if len(self.periodic):
            dofs = self.dof_map()
            by_dofs: dict = {}
            for a, b in bnd:
                by_dofs.setdefault(tuple(sorted((dofs[a], dofs[b]))), []).append((a, b))
            for group in by_dofs.values():
                if len(group) == 2:
                    paired.update(group)
        unpaired = bnd - paired
        if any(edge not in self.edge_tags for edge in unpaired):
            problems.append("untagged boundary edge")
        if self.period is not None and any(
                self.edge_tags[edge][0] != HOLE_BOUNDARY for edge in unpaired if edge in self.edge_tags):
            problems.append("torus mesh has outer-tagged boundary edges")
        if len(self.triangles) and self.min_angle() < MIN_ANGLE - 1e-9:
            problems.append(f"minimum angle {self.min_angle():.2f} below {MIN_ANGLE}")
        for h in hole_ids:
            try:
                self.hole_cycle(h)
            except ValueError as exc:
                problems.append(str(exc))
        return problems


# --------------------------------------------------------------------------
# size field


@dataclass(frozen=True)
class SizeField:
    """Target edge length: ``h_hole = r / hole_factor`` at each hole, growing
    linearly with slope ``grading - 1`` away from it, capped at ``h_max``."""

    h_max: float
    hole_factor: float = 3.0
    grading: float = 1.3

    def __post_init__(self):
        if not self.h_max > 0:
            raise ValueError("h_max must be positive")
        if not 1.0 < self.grading <= 2.0:
            raise ValueError("grading factor must lie in (1, 2]")
        if not self.hole_factor > 1.0:
            raise ValueError("hole_factor must exceed 1 so that h_hole < r")

    def h_hole(self, r):
        return np.asarray(r, dtype=float) / self.hole_factor

    def __call__(self, pts, centers, radii, period=None) -> np.ndarray:
        pts = np.atleast_2d(pts)
        h = np.full(len(pts), self.h_max)
        for c, r in zip(centers, radii):
            d = pts - c
            if period is not None:
                d -= period * np.round(d / period)
            dist = np.maximum(np.linalg.norm(d, axis=1) - r, 0.0)
            h = np.minimum(h, self.h_hole(r) + (self.grading - 1.0) * dist)
        return h


def hole_polygon(center, r, h_hole):
    """Perimeter-preserving inscribed n-gon; returns (vertices, n, corrected radius)."""
    n = max(MIN_HOLE_SIDES, math.ceil(2.0 * math.pi * r / h_hole))
    r_corr = math.pi * r / (n * math.sin(math.pi / n))
    theta = 2.0 * math.pi * np.arange(n) / n
    pts = np.asarray(center, dtype=float) + r_corr * np.column_stack([np.cos(theta), np.sin(theta)])
    return pts, n, r_corr


# --------------------------------------------------------------------------
# Triangle driver


def _ring_segments(offset, n):
    i = offset + np.arange(n)
    return np.column_stack([i, np.roll(i, -1)])


def _refine(pslg, flags, h_max, size_fn, max_iter=30):
    out = triangle.triangulate(pslg, f"{flags}a{_SQRT3_4 * h_max**2:.20f}")
    for _ in range(max_iter):
        p, t = out["vertices"], out["triangles"]
        q = p[t]
        area = 0.5 * np.abs((q[:, 1, 0] - q[:, 0, 0]) * (q[:, 2, 1] - q[:, 0, 1])
                            - (q[:, 1, 1] - q[:, 0, 1]) * (q[:, 2, 0] - q[:, 0, 0]))
        target = _SQRT3_4 * size_fn(q.mean(axis=1)) ** 2
        big = area > 1.5 * target
        if not np.any(big):
            return out
        out["triangle_max_area"] = np.where(big, target, -1.0)
        out = triangle.triangulate(out, f"r{flags}a")
    return out


def _tags_from_markers(out, marker_to_tag):
    tags = {}
    for (a, b), m in zip(out["segments"], np.ravel(out["segment_markers"])):
        if int(m) in marker_to_tag:
            tags[(int(min(a, b)), int(max(a, b)))] = marker_to_tag[int(m)]
    return tags


def _check_quality(mesh, hole_ids=()):
    problems = mesh.check(hole_ids)
    if problems:
        raise MeshQualityFailure("; ".join(problems))
    return mesh


def _polygon_pslg(domain):
    v = np.array(domain.vertices, dtype=float)
    n = len(v)
    segs = _ring_segments(0, n)
    markers = _MARK0 + np.arange(n)
    tags = {}
    for i in range(n):
        if i in domain.dirichlet_edges:
            tags[_MARK0 + i] = (OUTER_DIRICHLET, None)
        else:
            tags[_MARK0 + i] = (OUTER_ROBIN, i)
    return v, segs, markers, tags


def _structured_torus(L, h_max, origin=(0.0, 0.0)):
    n = max(2, math.ceil(math.sqrt(2.0) * L / h_max))
    g = L * np.arange(n + 1) / n
    x0, y0 = origin
    X, Y = np.meshgrid(x0 + g, y0 + g, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    c, d = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
    tris = np.vstack([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    pairs = np.vstack([np.column_stack([idx[0, :], idx[n, :]]),
                       np.column_stack([idx[:, 0], idx[:, n]])])
    return Mesh(verts, tris, {}, pairs, float(L))


def triangulate_full(domain: FlatDomain, h_max: float) -> Mesh:
    """Quasi-uniform mesh of the whole domain.

    The torus gets a structured periodic right-triangle grid with all
    diagonals in one direction, which keeps the lattice symmetries of the
    continuous spectrum; polygons are meshed by quality Delaunay refinement.
    """
    if not 0 < h_max < math.sqrt(2.0) * max(domain.bounds[2] - domain.bounds[0],
                                             domain.bounds[3] - domain.bounds[1]):
        raise ValueError("h_max must be positive and below the domain's extent")
    if domain.is_torus:
        return _check_quality(_structured_torus(domain.side, h_max))
    v, segs, markers, tags = _polygon_pslg(domain)
    out = triangle.triangulate(
        dict(vertices=v, segments=segs, segment_markers=markers),
        f"pq{MIN_ANGLE:g}a{_SQRT3_4 * h_max**2:.20f}")
    mesh = Mesh(out["vertices"], out["triangles"], _tags_from_markers(out, tags))
    return _check_quality(mesh)


def _seam_frame(centers, radii, L):
    """Origin of a fundamental square whose sides stay clear of the holes."""
    origin = []
    for axis in range(2):
        if len(centers) == 0:
            origin.append(0.0)
            continue
        x = np.sort(np.mod(centers[:, axis], L))
        gaps = np.diff(np.append(x, x[0] + L))
        k = int(np.argmax(gaps))
        mid = x[k] + 0.5 * gaps[k]
        if 0.5 * gaps[k] <= 2.0 * radii.max():
            raise HoleResolutionFailure("no seam position clears the holes")
        origin.append(float(mid - L * math.floor(mid / L)))
    return np.array(origin)


def _graded_points(a, b, size_fn, n_fine=4000):
    """Points on [a, b] (both ends included) spaced by the size field."""
    s = np.linspace(0.0, 1.0, n_fine + 1)
    pts = a + s[:, None] * (b - a)
    inv = 1.0 / size_fn(pts)
    length = float(np.linalg.norm(b - a))
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (inv[1:] + inv[:-1]) * np.diff(s) * length)])
    n = max(2, math.ceil(cum[-1]))
    t = np.interp(np.linspace(0.0, cum[-1], n + 1), cum, s)
    t[0], t[-1] = 0.0, 1.0
    return t


def triangulate_perforated(pd: PerforatedDomain, sf: SizeField) -> Mesh:
    """Graded mesh of the perforated domain with hole cycles tagged by hole id."""
    base = pd.base
    centers, radii = pd.centers, pd.radii
    if len(radii) and np.any(sf.h_hole(radii) >= radii):
        raise ValueError("size field must resolve every hole (h_hole < r)")
    period = base.side if base.is_torus else None

    if base.is_torus:
        L = base.side
        origin = _seam_frame(centers, radii, L)
        centers = origin + np.mod(centers - origin, L)
    polys = []
    for c, r in zip(centers, radii):
        pts, n, r_corr = hole_polygon(c, r, float(sf.h_hole(r)))
        polys.append((pts, r_corr))
    _check_hole_separation(centers, [rc for _, rc in polys], base, period)

    def size_fn(pts):
        return sf(pts, centers, radii, period)

    if base.is_torus:
        corners = origin + L * np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
        # seams are frozen (Y flag) so they are sampled finer than the interior
        seam_fn = lambda p: 0.7 * size_fn(p)
        tb = _graded_points(corners[0], corners[1], seam_fn)
        lr = _graded_points(corners[0], corners[3], seam_fn)
        # both seams of a pair share one parameter list; the size field is periodic
        bottom = np.column_stack([origin[0] + L * tb, np.full(len(tb), origin[1])])
        top = np.column_stack([origin[0] + L * tb, np.full(len(tb), origin[1] + L)])
        left = np.column_stack([np.full(len(lr), origin[0]), origin[1] + L * lr])
        right = np.column_stack([np.full(len(lr), origin[0] + L), origin[1] + L * lr])
        ring = np.vstack([bottom[:-1], right[:-1], top[::-1][:-1], left[::-1][:-1]])
        verts = [ring]
        segs = [_ring_segments(0, len(ring))]
        markers = [np.ones(len(ring), dtype=np.int64) * _MARK0]
        marker_tags = {}
        flags = f"pq{MIN_ANGLE:g}Y"
    else:
        v, s, m, marker_tags = _polygon_pslg(base)
        verts, segs, markers = [v], [s], [m]
        flags = f"pq{MIN_ANGLE:g}"
    offset = len(verts[0])
    hole_mark0 = _MARK0 + 64 + (0 if base.is_torus else base.n_edges)
    for i, (pts, _) in enumerate(polys):
        verts.append(pts)
        segs.append(_ring_segments(offset, len(pts)))
        markers.append(np.full(len(pts), hole_mark0 + i, dtype=np.int64))
        marker_tags[hole_mark0 + i] = (HOLE_BOUNDARY, i)
        offset += len(pts)
    pslg = dict(vertices=np.vstack(verts), segments=np.vstack(segs),
                segment_markers=np.concatenate(markers))
    if len(centers):
        pslg["holes"] = np.asarray(centers, dtype=float)
    out = _refine(pslg, flags, sf.h_max, size_fn)
    tags = _tags_from_markers(out, marker_tags)
    mesh = Mesh(out["vertices"], out["triangles"], tags)
    if base.is_torus:
        mesh.periodic = _seam_pairs(mesh.vertices, origin, L)
        mesh.period = float(L)
    return _check_quality(mesh, range(len(polys)))


def _check_hole_separation(centers, r_corr, base, period):
    c = np.asarray(centers, dtype=float).reshape(-1, 2)
    r = np.asarray(r_corr, dtype=float)
    for i in range(len(c)):
        d = c[i + 1:] - c[i]
        if period is not None:
            d -= period * np.round(d / period)
        if np.any(np.linalg.norm(d, axis=1) <= r[i] + r[i + 1:]):
            raise HoleResolutionFailure(f"hole {i} polygon intersects a neighbour")
    if not base.is_torus and len(c):
        if np.any(base.boundary_distance(c) <= r):
            raise HoleResolutionFailure("hole polygon meets the outer boundary")


def _seam_pairs(verts, origin, L):
    x0, y0 = origin
    pairs = []
    for axis, lo in ((0, x0), (1, y0)):
        hi = lo + L
        other = 1 - axis
        low = np.flatnonzero(verts[:, axis] == lo)
        high = np.flatnonzero(verts[:, axis] == hi)
        lookup = {float(verts[i, other]): int(i) for i in low}
        for j in high:
            i = lookup.get(float(verts[j, other]))
            if i is None:
                raise MeshQualityFailure("unmatched seam vertex on the torus")
            pairs.append((i, int(j)))
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def fill_holes(mesh: Mesh) -> Mesh:
    """Full-domain mesh: the perforated mesh plus triangulated hole interiors.

    The first ``mesh.n_vertices`` vertices are unchanged, and hole cycles
    become interior edges that keep their HoleBoundary tags.
    """
    verts = [mesh.vertices]
    tris = [mesh.triangles]
    offset = mesh.n_vertices
    for h in mesh.hole_ids():
        cyc = mesh.hole_cycle(h)
        pts = mesh.vertices[cyc]
        seg = np.linalg.norm(pts - np.roll(pts, -1, axis=0), axis=1)
        out = triangle.triangulate(
            dict(vertices=pts, segments=_ring_segments(0, len(pts))),
            f"pq{MIN_ANGLE:g}Ya{_SQRT3_4 * float(seg.mean())**2:.20f}")
        p, t = out["vertices"], out["triangles"]
        if not np.array_equal(p[:len(pts)], pts):
            raise MeshQualityFailure(f"hole {h} fill moved boundary vertices")
        index = np.concatenate([cyc, offset + np.arange(len(p) - len(pts))])
        verts.append(p[len(pts):])
        tris.append(index[t])
        offset += len(p) - len(pts)
    full = Mesh(np.vstack(verts), np.vstack(tris), dict(mesh.edge_tags),
                mesh.periodic.copy(), mesh.period)
    return _check_quality(full)


# --------------------------------------------------------------------------
# text format


def mesh_to_text(mesh: Mesh) -> str:
    """Serialize; floats are written with ``repr`` so the round trip is exact."""
    buf = io.StringIO()
    period = "none" if mesh.period is None else repr(float(mesh.period))
    buf.write(f"perfolab-mesh {FORMAT_VERSION} vertices={mesh.n_vertices} "
              f"triangles={len(mesh.triangles)} tags={len(mesh.edge_tags)} "
              f"periodic={len(mesh.periodic)} period={period}\n")
    for x, y in mesh.vertices:
        buf.write(f"v {float(x)!r} {float(y)!r}\n")
    for i, j, k in mesh.triangles:
        buf.write(f"t {i} {j} {k}\n")
    for (i, j), (kind, tag_id) in sorted(mesh.edge_tags.items()):
        buf.write(f"e {i} {j} {kind}" + ("" if tag_id is None else f" {tag_id}") + "\n")
    for i, j in mesh.periodic:
        buf.write(f"p {i} {j}\n")
    return buf.getvalue()


def mesh_from_text(text: str) -> Mesh:
    lines = text.splitlines()
    head = lines[0].split()
    if head[0] != "perfolab-mesh" or int(head[1]) != FORMAT_VERSION:
        raise ValueError("not a perfolab mesh file (version mismatch)")
    meta = dict(kv.split("=", 1) for kv in head[2:])
    verts, tris, tags, pairs = [], [], {}, []
    for line in lines[1:]:
        f = line.split()
        if not f:
            continue
        if f[0] == "v":
            verts.append((float(f[1]), float(f[2])))
        elif f[0] == "t":
            tris.append((int(f[1]), int(f[2]), int(f[3])))
        elif f[0] == "e":
            if f[3] not in TAG_KINDS:
                raise ValueError(f"unknown edge tag {f[3]}")
            tags[(int(f[1]), int(f[2]))] = (f[3], int(f[4]) if len(f) > 4 else None)
        elif f[0] == "p":
            pairs.append((int(f[1]), int(f[2])))
        else:
            raise ValueError(f"unknown record {f[0]!r}")
    if len(verts) != int(meta["vertices"]) or len(tris) != int(meta["triangles"]):
        raise ValueError("record counts disagree with the header")
    period = None if meta["period"] == "none" else float(meta["period"])
    return Mesh(np.array(verts).reshape(-1, 2), np.array(tris).reshape(-1, 3), tags,
                np.array(pairs).reshape(-1, 2), period)
