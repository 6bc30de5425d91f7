"""Signed boundary measures on hole circles and the objects that test them.

The measure ``mu = sigma dA`` lives on the union of hole circles, with
constant density ``sign * alpha`` on each circle. This module pairs it
with functions, compares it cell by cell with ``V dv``, builds the radial
tent trial functions that separate ``mu`` from ``V`` in dual Sobolev norms,
and mollifies ``mu`` into smooth potentials supported in thin tubes around
the circles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.spatial import cKDTree

from .errors import SupportOverflow, TubeOverlap

MIN_CIRCLE_NODES = 32


def _bump_raw(t):
    return math.exp(-1.0 / (1.0 - t * t)) if abs(t) < 1.0 else 0.0


_BUMP_MASS = quad(_bump_raw, -1.0, 1.0, epsabs=1e-14, epsrel=1e-12, limit=200)[0]


def bump(t):
    """Unit-mass even C-infinity kernel supported in [-1, 1]."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - t[inside] ** 2)) / _BUMP_MASS
    return out


def _min_image(d, period):
    if period is None:
        return d
    return d - period * np.round(d / period)


@dataclass(frozen=True, eq=False)
class BoundaryMeasure:
    """Circles ``(center, radius)`` carrying constant densities ``weights``."""

    centers: np.ndarray
    radii: np.ndarray
    weights: np.ndarray
    n_quad: int = 64
    period: float | None = None

    @classmethod
    def from_perforated(cls, pd, n_quad: int = 64) -> "BoundaryMeasure":
        w = pd.signs * pd.alpha
        return cls(pd.centers, pd.radii, w.astype(float), n_quad,
                   pd.base.side if pd.base.is_torus else None)

    @classmethod
    def empty(cls, period=None) -> "BoundaryMeasure":
        return cls(np.zeros((0, 2)), np.zeros(0), np.zeros(0), period=period)

    def __len__(self):
        return len(self.radii)

    @property
    def masses(self) -> np.ndarray:
        """Per-circle signed mass ``weight * 2 pi r``."""
        return self.weights * 2.0 * math.pi * self.radii

    @property
    def mass(self) -> float:
        return float(np.sum(self.masses))

    @property
    def total_variation(self) -> float:
        return float(np.sum(np.abs(self.masses)))

    def nodes(self, n: int | None = None):
        n = max(MIN_CIRCLE_NODES, n or self.n_quad)
        theta = 2.0 * math.pi * np.arange(n) / n
        ring = np.column_stack([np.cos(theta), np.sin(theta)])
        pts = self.centers[:, None, :] + self.radii[:, None, None] * ring[None, :, :]
        return pts, n

    def find(self, point, tol=1e-12) -> int:
        """Index of the circle centred at ``point``."""
        d = np.linalg.norm(_min_image(self.centers - np.asarray(point), self.period), axis=1)
        i = int(np.argmin(d))
        if d[i] > tol * max(1.0, float(np.max(np.abs(self.centers)))):
            raise KeyError("no circle centred at this point")
        return i


def pair_per_circle(mu: BoundaryMeasure, f: Callable, n: int | None = None) -> np.ndarray:
    """Trapezoid rule for ``weight_i * integral of f over circle i``."""
    if len(mu) == 0:
        return np.zeros(0)
    pts, n = mu.nodes(n)
    flat = pts.reshape(-1, 2)
    if mu.period is not None:
        flat = np.mod(flat, mu.period)
    vals = np.asarray(f(flat), dtype=float).reshape(len(mu), n)
    return mu.weights * (2.0 * math.pi * mu.radii / n) * vals.sum(axis=1)


def pair(mu: BoundaryMeasure, f: Callable, n: int | None = None) -> float:
    """Action of the measure on a function of points of shape (N, 2)."""
    return float(np.sum(pair_per_circle(mu, f, n)))


# --------------------------------------------------------------------------
# cell integrals

# degree-4 six-point rule on the reference triangle (barycentric, weights sum to 1)
_D4_A, _D4_WA = 0.44594849091596488, 0.22338158967801147
_D4_B, _D4_WB = 0.091576213509770743, 0.10995174365532187
_D4_BARY = np.array([
    [_D4_A, _D4_A, 1 - 2 * _D4_A], [_D4_A, 1 - 2 * _D4_A, _D4_A], [1 - 2 * _D4_A, _D4_A, _D4_A],
    [_D4_B, _D4_B, 1 - 2 * _D4_B], [_D4_B, 1 - 2 * _D4_B, _D4_B], [1 - 2 * _D4_B, _D4_B, _D4_B],
])
_D4_W = np.array([_D4_WA] * 3 + [_D4_WB] * 3)


def _subdivide(tri, m):
    """Split a triangle (3, 2) into m*m congruent sub-triangles."""
    a, b, c = tri
    out = []
    for i in range(m):
        for j in range(m - i):
            p = a + (b - a) * i / m + (c - a) * j / m
            u, v = (b - a) / m, (c - a) / m
            out.append([p, p + u, p + v])
            if j < m - i - 1:
                out.append([p + u, p + u + v, p + v])
    return np.asarray(out)


def integrate_polygon(poly, site, f, refine: int = 4, wrap=None) -> float:
    """Integral of ``f`` over a polygon fanned from ``site`` (star-shaped)."""
    poly = np.asarray(poly, dtype=float)
    fan = np.stack([np.broadcast_to(site, poly.shape), poly, np.roll(poly, -1, axis=0)], axis=1)
    tris = np.concatenate([_subdivide(t, refine) for t in fan])
    e1, e2 = tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]
    area = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    pts = np.einsum("qk,tkd->tqd", _D4_BARY, tris).reshape(-1, 2)
    if wrap is not None:
        pts = wrap(pts)
    vals = np.asarray(f(pts), dtype=float).reshape(len(tris), len(_D4_W))
    return float(np.sum(area * (vals @ _D4_W)))


def cell_ratio(cell, V, mu: BoundaryMeasure, refine: int = 4, wrap=None) -> float:
    """Hole mass over the integral of V on the cell; 1 means exact capture."""
    i = mu.find(cell.site)
    return float(mu.masses[i]) / integrate_polygon(cell.polygon, cell.site, V, refine, wrap)


# --------------------------------------------------------------------------
# trial functions


class TrialFunction:
    """Radial tents: ``sign * (1 - |rho - r| / r)`` for ``rho`` within ``r``
    of the hole circle of radius ``r``, zero elsewhere."""

    def __init__(self, pd):
        self.pd = pd
        self.centers = pd.centers
        self.radii = pd.radii
        self.signs = pd.signs.astype(float)
        self.period = pd.base.side if pd.base.is_torus else None
        if self.period is not None:
            self._tree = cKDTree(np.mod(self.centers, self.period), boxsize=self.period)
        else:
            self._tree = cKDTree(self.centers)

    def __call__(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        q = np.mod(pts, self.period) if self.period is not None else pts
        rho, i = self._tree.query(q)
        r = self.radii[i]
        return self.signs[i] * np.maximum(0.0, 1.0 - np.abs(rho - r) / r)

    def interpolate(self, mesh):
        from .fem import interpolate
        return interpolate(mesh, self)


def build_trial(pd) -> TrialFunction:
    if len(pd.holes) == 0:
        raise ValueError("trial functions need at least one hole")
    for i, h in enumerate(pd.holes):
        if h.clearance is not None and not 2.0 * h.radius < h.clearance:
            raise SupportOverflow(f"support of hole {i} leaves its cell")
    c, r = pd.centers, pd.radii
    if len(c) > 1:
        period = pd.base.side if pd.base.is_torus else None
        tree = cKDTree(np.mod(c, period), boxsize=period) if period else cKDTree(c)
        d, j = tree.query(np.mod(c, period) if period else c, k=2)
        if np.any(2.0 * r + 2.0 * r[j[:, 1]] >= d[:, 1]):
            raise SupportOverflow("tent supports of neighbouring holes overlap")
    return TrialFunction(pd)


def witness_terms(mu: BoundaryMeasure, V, w: TrialFunction, p: float, mesh):
    """(pairing with mu, integral against V, W^{1,p} norm, gap) for one trial function."""
    from .fem import integrate_product, interpolate, wp_norm

    if not 1.0 < p < 2.0:
        raise ValueError("p must lie in (1, 2)")
    wh = interpolate(mesh, w)
    pairing = pair(mu, w)
    integral = integrate_product(wh, V)
    norm = wp_norm(wh, p)
    return pairing, integral, norm, abs(pairing - integral) / norm


def witness_gap(mu: BoundaryMeasure, V, w: TrialFunction, p: float, mesh) -> float:
    """Lower bound on the dual W^{1,p} distance between mu and V dv."""
    return witness_terms(mu, V, w, p, mesh)[3]


# --------------------------------------------------------------------------
# mollification


class MollifiedPotential:
    """Smooth potential ``rho_delta(dist to circle) * weight`` in delta-tubes."""

    def __init__(self, mu: BoundaryMeasure, delta: float, kernel=bump):
        self.mu = mu
        self.delta = float(delta)
        self.kernel = kernel
        p = mu.period
        self._tree = cKDTree(np.mod(mu.centers, p), boxsize=p) if p else cKDTree(mu.centers)

    def __call__(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        p = self.mu.period
        q = np.mod(pts, p) if p is not None else pts
        rho, i = self._tree.query(q)
        t = (rho - self.mu.radii[i]) / self.delta
        return self.kernel(t) / self.delta * self.mu.weights[i]

    def circle_mass(self, i: int) -> float:
        """Exact radial integral of the tube density around circle ``i``."""
        r, d = float(self.mu.radii[i]), self.delta
        val = quad(lambda t: float(self.kernel(np.array(t / d))) / d * 2.0 * math.pi * (r + t),
                   -d, d, epsabs=1e-14, epsrel=1e-13, limit=200)[0]
        return float(self.mu.weights[i]) * val

    def as_potential(self):
        from .geometry import PotentialField
        sup = float(np.max(np.abs(self.mu.weights))) * float(np.max(self.kernel(np.zeros(1)))) / self.delta
        return PotentialField(self, sup_bound=sup, name=f"mollified(delta={self.delta:.3g})")


def mollify(mu: BoundaryMeasure, delta: float, kernel=bump) -> MollifiedPotential:
    if len(mu) == 0:
        raise ValueError("nothing to mollify")
    if not 0 < delta < float(mu.radii.min()):
        raise TubeOverlap("tube half-width must be positive and below every radius")
    if len(mu) > 1:
        p = mu.period
        c = np.mod(mu.centers, p) if p else mu.centers
        tree = cKDTree(c, boxsize=p) if p else cKDTree(c)
        d, j = tree.query(c, k=2)
        gap = d[:, 1] - mu.radii - mu.radii[j[:, 1]]
        if not delta < 0.5 * float(gap.min()):
            raise TubeOverlap("tubes of neighbouring circles overlap")
    return MollifiedPotential(mu, delta, kernel)
