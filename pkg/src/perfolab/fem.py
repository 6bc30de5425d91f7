"""Piecewise-linear finite elements on tagged meshes.

Assembles stiffness, mass, boundary-mass and potential matrices, applies
Dirichlet conditions by elimination, and provides Rayleigh quotients,
discrete W^{1,p} norms and harmonic extension across holes.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .errors import EmptyFreeSet, IncompatibleMeshes, TagMismatch, ZeroDenominator
from .mesher import HOLE_BOUNDARY, OUTER_DIRICHLET, OUTER_ROBIN, Mesh

# edge-midpoint rule: basis values at the three midpoints
_MID_PHI = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])


def _wrap(mesh: Mesh, pts):
    """Map points into [0, L)^2 on the torus so periodic V sees the right copy."""
    return np.mod(pts, mesh.period) if mesh.period is not None else pts


def _p1(mesh: Mesh):
    p = mesh.vertices[mesh.triangles]
    x, y = p[..., 0], p[..., 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    two_a = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    grads = np.stack([b, c], axis=-1) / two_a[:, None, None]
    return 0.5 * two_a, grads


def _scatter(mesh: Mesh, local, n=None):
    dofs = mesh.dof_map()[mesh.triangles]
    rows = np.broadcast_to(dofs[:, :, None], local.shape)
    cols = np.broadcast_to(dofs[:, None, :], local.shape)
    n = mesh.n_dofs if n is None else n
    A = sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()
    return ((A + A.T) * 0.5).tocsr()


def stiffness(mesh: Mesh):
    area, g = _p1(mesh)
    return _scatter(mesh, area[:, None, None] * np.einsum("tid,tjd->tij", g, g))


def mass(mesh: Mesh):
    area = mesh.triangle_areas()
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return _scatter(mesh, area[:, None, None] * ref[None])


def potential_mass(mesh: Mesh, V):
    """Matrix of ``integral V phi_i phi_j`` by the edge-midpoint rule."""
    area = mesh.triangle_areas()
    p = mesh.vertices[mesh.triangles]
    mids = np.einsum("qk,tkd->tqd", _MID_PHI, p).reshape(-1, 2)
    v = np.asarray(V(_wrap(mesh, mids)), dtype=float).reshape(-1, 3)
    local = np.einsum("tq,qi,qj->tij", v, _MID_PHI, _MID_PHI) * (area / 3.0)[:, None, None]
    return _scatter(mesh, local)


def edge_mass(mesh: Mesh, edges, weights):
    """Boundary mass ``sum_e w_e * |e|/6 [[2,1],[1,2]]`` on the given edges."""
    n = mesh.n_dofs
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edges) == 0:
        return sp.csr_matrix((n, n))
    w = np.broadcast_to(np.asarray(weights, dtype=float), (len(edges),))
    d = mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]]
    s = np.hypot(d[:, 0], d[:, 1]) * w / 6.0
    dofs = mesh.dof_map()[edges]
    i, j = dofs[:, 0], dofs[:, 1]
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([i, j, j, i])
    data = np.concatenate([2 * s, 2 * s, s, s])
    return sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


def _outer_robin(mesh: Mesh, sigma):
    n = mesh.n_dofs
    B = sp.csr_matrix((n, n))
    groups = sorted({i for k, i in mesh.edge_tags.values() if k == OUTER_ROBIN})
    for gid in groups:
        w = (sigma or {}).get(gid, 0.0)
        if w != 0.0:
            B = B + edge_mass(mesh, mesh.tagged(OUTER_ROBIN, gid), w)
    return B


def _hole_form(mesh: Mesh, hole_weights):
    n = mesh.n_dofs
    B = sp.csr_matrix((n, n))
    for hid in mesh.hole_ids():
        if hid not in hole_weights:
            raise TagMismatch(f"hole {hid} has no weight")
        B = B + edge_mass(mesh, mesh.tagged(HOLE_BOUNDARY, hid), hole_weights[hid])
    return B


def dirichlet_dofs(mesh: Mesh) -> np.ndarray:
    e = mesh.tagged(OUTER_DIRICHLET)
    return np.unique(mesh.dof_map()[e.ravel()]) if len(e) else np.zeros(0, dtype=np.int64)


@dataclass(eq=False)
class AssembledForms:
    mesh: Mesh
    K: sp.csr_matrix
    M: sp.csr_matrix
    B: sp.csr_matrix          # hole term (Robin weights or measure potential)
    B_outer: sp.csr_matrix    # outer Robin term
    M_V: sp.csr_matrix
    dirichlet: np.ndarray

    @property
    def A(self):
        return (self.K + self.M_V + self.B + self.B_outer).tocsr()

    @property
    def free(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.mesh.n_dofs), self.dirichlet)


def assemble_robin(mesh: Mesh, hole_weights: dict, sigma: dict | None = None) -> AssembledForms:
    """Forms for ``-Delta u = lambda u`` with ``du/dn + w u = 0`` on each hole."""
    n = mesh.n_dofs
    return AssembledForms(mesh, stiffness(mesh), mass(mesh), _hole_form(mesh, hole_weights),
                          _outer_robin(mesh, sigma), sp.csr_matrix((n, n)), dirichlet_dofs(mesh))


def assemble_schrodinger(mesh: Mesh, V, sigma: dict | None = None,
                         hole_weights: dict | None = None) -> AssembledForms:
    """Forms for ``-Delta u + V u = lambda u``; ``hole_weights`` adds a measure
    potential carried by the (interior) hole edges of a filled mesh."""
    n = mesh.n_dofs
    B = _hole_form(mesh, hole_weights) if hole_weights is not None else sp.csr_matrix((n, n))
    M_V = potential_mass(mesh, V) if V is not None else sp.csr_matrix((n, n))
    return AssembledForms(mesh, stiffness(mesh), mass(mesh), B, _outer_robin(mesh, sigma),
                          M_V, dirichlet_dofs(mesh))


@dataclass(eq=False)
class ReducedForms:
    A: sp.csr_matrix
    M: sp.csr_matrix
    free: np.ndarray
    n: int

    def inflate(self, x):
        x = np.asarray(x)
        out = np.zeros((self.n,) + x.shape[1:], dtype=x.dtype)
        out[self.free] = x
        return out


def apply_dirichlet(forms: AssembledForms) -> ReducedForms:
    free = forms.free
    if len(free) == 0:
        raise EmptyFreeSet("every degree of freedom is constrained")
    A, M = forms.A, forms.M
    return ReducedForms(A[free][:, free].tocsr(), M[free][:, free].tocsr(), free, forms.mesh.n_dofs)


def rayleigh(forms: AssembledForms, x) -> float:
    x = np.array(getattr(x, "values", x), dtype=float)
    x[forms.dirichlet] = 0.0
    den = float(x @ (forms.M @ x))
    if not den > 0.0:
        raise ZeroDenominator("trial vector vanishes on the free dofs")
    return float(x @ (forms.A @ x)) / den


# --------------------------------------------------------------------------
# functions on meshes


@dataclass(eq=False)
class FeFunction:
    mesh: Mesh
    values: np.ndarray  # one entry per dof

    @property
    def nodal(self) -> np.ndarray:
        return self.values[self.mesh.dof_map()]

    def __call__(self, pts) -> np.ndarray:
        return evaluate(self, pts)


def interpolate(mesh: Mesh, f) -> FeFunction:
    """Nodal interpolant of a callable on points (N, 2)."""
    vals = np.asarray(f(mesh.vertices), dtype=float)
    out = np.zeros(mesh.n_dofs)
    out[mesh.dof_map()] = vals
    return FeFunction(mesh, out)


def _triangulation(mesh: Mesh):
    tri = getattr(mesh, "_mpl_tri", None)
    if tri is None:
        from matplotlib.tri import Triangulation
        tri = Triangulation(mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.triangles)
        mesh._mpl_tri = tri
    return tri


def evaluate(fe: FeFunction, pts) -> np.ndarray:
    """Point values of a P1 function; NaN outside the mesh."""
    from matplotlib.tri import LinearTriInterpolator

    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    mesh = fe.mesh
    if mesh.period is not None:
        f0 = mesh.frame
        pts = f0 + np.mod(pts - f0, mesh.period)
    interp = LinearTriInterpolator(_triangulation(mesh), fe.nodal)
    out = interp(pts[:, 0], pts[:, 1])
    return np.ma.filled(out.astype(float), np.nan)


def integrate_product(fe: FeFunction, V) -> float:
    """``integral x V`` by the edge-midpoint rule."""
    mesh = fe.mesh
    area = mesh.triangle_areas()
    p = mesh.vertices[mesh.triangles]
    mids = np.einsum("qk,tkd->tqd", _MID_PHI, p).reshape(-1, 2)
    v = np.asarray(V(_wrap(mesh, mids)), dtype=float).reshape(-1, 3)
    x = fe.nodal[mesh.triangles] @ _MID_PHI.T
    return float(np.sum(area / 3.0 * np.sum(v * x, axis=1)))


def wp_parts(fe: FeFunction, p: float):
    """(``sum |T| |grad x|^p``, midpoint ``integral |x|^p``)."""
    if not p >= 1.0:
        raise ValueError("p must be at least 1")
    mesh = fe.mesh
    area, g = _p1(mesh)
    x = fe.nodal[mesh.triangles]
    grad = np.einsum("ti,tid->td", x, g)
    gp = float(np.sum(area * np.hypot(grad[:, 0], grad[:, 1]) ** p))
    vp = float(np.sum(area / 3.0 * np.sum(np.abs(x @ _MID_PHI.T) ** p, axis=1)))
    return gp, vp


def wp_norm(fe: FeFunction, p: float) -> float:
    gp, vp = wp_parts(fe, p)
    return (gp + vp) ** (1.0 / p)


def energy_norm(fe: FeFunction) -> float:
    """Discrete W^{1,2} norm."""
    mesh = fe.mesh
    x = fe.values
    return float(np.sqrt(x @ (stiffness(mesh) @ x) + x @ (mass(mesh) @ x)))


def extend_over_holes(mesh: Mesh, x, full: Mesh | None = None) -> FeFunction:
    """Discrete harmonic extension of ``x`` from the perforated mesh into the holes.

    ``full`` must be the hole-filled mesh whose first vertices are those of
    ``mesh``; it is built with :func:`perfolab.mesher.fill_holes` if omitted.
    """
    from .mesher import fill_holes

    x = np.asarray(getattr(x, "values", x), dtype=float)
    if len(x) != mesh.n_dofs:
        raise IncompatibleMeshes("vector does not live on the perforated mesh")
    full = fill_holes(mesh) if full is None else full
    n = mesh.n_vertices
    if (full.n_vertices < n or not np.array_equal(full.vertices[:n], mesh.vertices)
            or full.period != mesh.period or not np.array_equal(full.periodic, mesh.periodic)):
        raise IncompatibleMeshes("filled mesh does not extend the perforated mesh")
    known = np.arange(mesh.n_dofs)
    if not np.array_equal(full.dof_map()[:n], mesh.dof_map()):
        raise IncompatibleMeshes("degree-of-freedom maps disagree")
    inner = np.arange(mesh.n_dofs, full.n_dofs)
    out = np.zeros(full.n_dofs)
    out[known] = x
    if len(inner):
        K = stiffness(full)
        rhs = -(K[inner][:, known] @ x)
        out[inner] = np.atleast_1d(spsolve(K[inner][:, inner].tocsc(), rhs))
    return FeFunction(full, out)


def matrix_to_text(A) -> str:
    """Coordinate listing ``i j value`` sorted by row then column."""
    A = sp.coo_matrix(A)
    order = np.lexsort((A.col, A.row))
    buf = io.StringIO()
    buf.write(f"{A.shape[0]} {A.shape[1]} {A.nnz}\n")
    for k in order:
        buf.write(f"{A.row[k]} {A.col[k]} {float(A.data[k])!r}\n")
    return buf.getvalue()


def matrix_from_text(text: str):
    lines = text.strip().splitlines()
    nr, nc, _ = (int(t) for t in lines[0].split())
    rows, cols, vals = [], [], []
    for line in lines[1:]:
        i, j, v = line.split()
        rows.append(int(i))
        cols.append(int(j))
        vals.append(float(v))
    return sp.coo_matrix((vals, (rows, cols)), shape=(nr, nc)).tocsr()
