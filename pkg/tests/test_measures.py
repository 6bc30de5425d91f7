import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from perfolab import fem, geometry as geo, measures as ms, mesher, potentials
from perfolab.errors import SupportOverflow, TubeOverlap
from perfolab.geometry import Hole, PerforatedDomain
from perfolab.mesher import SizeField

TORUS = geo.Torus(1.0)


def lattice(n=4, eps=0.2):
    """Square lattice of sites on the torus; every Voronoi cell is a square centred on its site."""
    g = (np.arange(n) + 0.5) / n
    sites = np.array([[x, y] for x in g for y in g])
    return geo.SeparatedSet(eps, sites, 0)


def two_holes(r=0.04, signs=(1, -1), clearance=0.5):
    holes = [Hole(np.array([0.25, 0.5]), r, signs[0], clearance),
             Hole(np.array([0.75, 0.5]), r, signs[1], clearance)]
    return PerforatedDomain(TORUS, holes, 0.3, 2.0)


def polar_integral(f, center, r, delta, kernel=ms.bump, n_theta=256, n_rho=64):
    """Reference tube integral by tensor Gauss-Legendre in (rho, theta)."""
    t, wt = np.polynomial.legendre.leggauss(n_rho)
    rho = r + delta * t
    th = 2 * math.pi * np.arange(n_theta) / n_theta
    R, TH = np.meshgrid(rho, th, indexing="ij")
    pts = np.column_stack([center[0] + (R * np.cos(TH)).ravel(), center[1] + (R * np.sin(TH)).ravel()])
    vals = f(pts).reshape(R.shape)
    k = kernel(t)[:, None]
    return float(np.sum(wt[:, None] * k * vals * R) * (2 * math.pi / n_theta))


# -- kernel and pairing ------------------------------------------------------

def test_bump_is_even_unit_mass_and_compact():
    m = quad(lambda t: float(ms.bump(np.array(t))), -1, 1, epsabs=1e-14, epsrel=1e-13, limit=200)[0]
    assert m == pytest.approx(1.0, abs=1e-12)
    t = np.linspace(-1.5, 1.5, 301)
    assert np.array_equal(ms.bump(t), ms.bump(-t))
    assert np.all(ms.bump(t[np.abs(t) >= 1]) == 0)


def test_pairing_constant_and_linear_exact():
    pd = two_holes()
    mu = ms.BoundaryMeasure.from_perforated(pd)
    assert ms.pair(mu, lambda p: np.ones(len(p))) == pytest.approx(mu.mass, abs=1e-15)
    assert mu.mass == pytest.approx(0.0, abs=1e-15)
    assert mu.total_variation == pytest.approx(2 * 2.0 * 2 * math.pi * 0.04, rel=1e-15)
    per = ms.pair_per_circle(mu, lambda p: p[:, 0])
    assert per == pytest.approx(mu.masses * pd.centers[:, 0], rel=1e-13)


@given(k=st.integers(0, 10), phase=st.floats(0, 6.3))
def test_trapezoid_exact_on_low_frequencies(k, phase):
    mu = ms.BoundaryMeasure(np.array([[0.4, 0.6]]), np.array([0.1]), np.array([1.0]), n_quad=64)
    f = lambda p: np.cos(k * np.arctan2(p[:, 1] - 0.6, p[:, 0] - 0.4) + phase)
    exact = 2 * math.pi * 0.1 * (math.cos(phase) if k == 0 else 0.0)
    assert ms.pair(mu, f) == pytest.approx(exact, abs=1e-13)


def test_empty_measure():
    mu = ms.BoundaryMeasure.empty(1.0)
    assert mu.mass == 0.0 and ms.pair(mu, lambda p: np.ones(len(p))) == 0.0


# -- cell integrals ----------------------------------------------------------

def test_integrate_polygon_exact_for_quartics():
    poly = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    f = lambda p: p[:, 0] ** 4 + p[:, 0] * p[:, 1] ** 3
    assert ms.integrate_polygon(poly, np.array([0.5, 0.5]), f, refine=1) == pytest.approx(0.2 + 1 / 8, rel=1e-14)


def test_per_cell_mass_identity_and_constant_ratio():
    V = potentials.constant(1.7)
    sset = geo.build_separated_set(TORUS, 0.12, 5)
    cells = geo.voronoi(sset, TORUS)
    classes = geo.classify_sites(cells, V, 0.12)
    pd, mu = geo.perforate(TORUS, cells, classes, V, geo.ConstantAlpha(2.0), 0.12)
    for c in cells:
        i = mu.find(c.site)
        assert mu.masses[i] == pytest.approx(1.7 * c.area, rel=1e-13)
        assert ms.cell_ratio(c, V, mu) == pytest.approx(1.0, rel=1e-12)


def test_symmetric_cells_capture_affine_potential():
    V = potentials.affine(2.0, (1.0, 0.5))
    sset = lattice()
    cells = geo.voronoi(sset, TORUS)
    classes = geo.classify_sites(cells, V, sset.eps)
    assert all(k is geo.SiteClass.PERFORATED for k in classes)
    pd, mu = geo.perforate(TORUS, cells, classes, V, geo.ConstantAlpha(1.0), sset.eps)
    for c in cells:
        assert ms.cell_ratio(c, V, mu) == pytest.approx(1.0, rel=1e-12)


# -- trial functions ----------------------------------------------------------

def test_tent_values():
    pd = two_holes(0.04)
    w = ms.build_trial(pd)
    c = pd.centers
    assert w(c) == pytest.approx([0.0, 0.0])
    on = c + np.array([[0.04, 0.0], [0.0, -0.04]])
    assert w(on) == pytest.approx([1.0, -1.0])
    assert w(c + np.array([[0.08, 0.0], [0.0, 0.09]])) == pytest.approx([0.0, 0.0])
    # periodic copy sees the same hole
    assert w(on + 1.0) == pytest.approx([1.0, -1.0])


def test_support_overflow():
    with pytest.raises(SupportOverflow):
        ms.build_trial(two_holes(0.04, clearance=0.07))
    holes = [Hole(np.array([0.3, 0.5]), 0.04, 1), Hole(np.array([0.45, 0.5]), 0.04, 1)]
    with pytest.raises(SupportOverflow):
        ms.build_trial(PerforatedDomain(TORUS, holes, 0.1, 1.0))


@pytest.fixture(scope="module")
def filled_two_holes():
    pd = two_holes(0.04)
    # mild grading keeps the outer tent kink at 2r resolved
    m = mesher.triangulate_perforated(pd, SizeField(0.05, 16.0, 1.05))
    return pd, mesher.fill_holes(m)


def test_witness_terms_against_closed_forms(filled_two_holes):
    pd, mesh = filled_two_holes
    mu = ms.BoundaryMeasure.from_perforated(pd)
    w = ms.build_trial(pd)
    pairing, integral, norm, gap = ms.witness_terms(mu, potentials.constant(1.0), w, 1.5, mesh)
    # tent has value sign on its circle; integral of a tent against 1 is 2 pi r^2
    assert pairing == pytest.approx(mu.total_variation, rel=1e-14)
    assert integral == pytest.approx(0.0, abs=1e-4)    # opposite signs cancel
    one = ms.BoundaryMeasure(pd.centers[:1], pd.radii[:1], np.array([1.0]), period=1.0)
    single = ms.build_trial(PerforatedDomain(TORUS, pd.holes[:1], 0.3, 1.0))
    i1 = ms.witness_terms(one, potentials.constant(1.0), single, 1.5, mesh)[1]
    assert i1 == pytest.approx(2 * math.pi * 0.04**2, rel=2e-3)
    assert gap == pytest.approx(abs(pairing - integral) / norm)


def test_witness_vanishes_when_both_sides_vanish(filled_two_holes):
    pd, mesh = filled_two_holes
    mu = ms.BoundaryMeasure(pd.centers, pd.radii, np.zeros(2), period=1.0)
    w = ms.build_trial(pd)
    assert ms.witness_gap(mu, potentials.constant(0.0), w, 1.5, mesh) == 0.0
    with pytest.raises(ValueError):
        ms.witness_gap(mu, potentials.constant(0.0), w, 2.0, mesh)


# -- mollification --------------------------------------------------------------

def test_mollified_circle_mass_exact():
    pd = two_holes(0.04)
    mu = ms.BoundaryMeasure.from_perforated(pd)
    for delta in (0.02, 0.01, 0.001):
        mv = ms.mollify(mu, delta)
        for i in range(2):
            assert mv.circle_mass(i) == pytest.approx(mu.masses[i], rel=1e-12)
            ref = polar_integral(lambda p: np.ones(len(p)), pd.centers[i], 0.04, delta)
            assert ref * mu.weights[i] == pytest.approx(mu.masses[i], rel=1e-10)


def test_mollified_values_live_in_tubes():
    pd = two_holes(0.04)
    mv = ms.mollify(ms.BoundaryMeasure.from_perforated(pd), 0.01)
    c = pd.centers[0]
    assert mv(c[None])[0] == 0.0
    assert mv((c + [0.04, 0])[None])[0] == pytest.approx(2.0 * ms.bump(np.zeros(1))[0] / 0.01)
    assert mv((c + [0.0511, 0])[None])[0] == 0.0


def test_tube_overlap():
    mu = ms.BoundaryMeasure.from_perforated(two_holes(0.04))
    with pytest.raises(TubeOverlap):
        ms.mollify(mu, 0.05)
    holes = [Hole(np.array([0.3, 0.5]), 0.04, 1), Hole(np.array([0.4, 0.5]), 0.04, 1)]
    close = ms.BoundaryMeasure.from_perforated(PerforatedDomain(TORUS, holes, 0.1, 1.0))
    with pytest.raises(TubeOverlap):
        ms.mollify(close, 0.015)


def test_halving_delta_converges_to_pairing():
    pd = two_holes(0.04)
    mu = ms.BoundaryMeasure.from_perforated(pd)
    f = lambda p: np.exp(p[:, 0]) * np.cos(3 * p[:, 1])
    target = ms.pair_per_circle(mu, f, 256)[0]
    errs = []
    for delta in (0.02, 0.01, 0.005, 0.0025):
        errs.append(abs(mu.weights[0] * polar_integral(f, pd.centers[0], 0.04, delta) - target))
    errs = np.array(errs)
    assert np.all(errs[1:] < 0.5 * errs[:-1])


def test_as_potential_on_mesh_integrates_to_mass(filled_two_holes):
    pd, mesh = filled_two_holes
    mu = ms.BoundaryMeasure(pd.centers, pd.radii, np.array([1.0, 1.0]), period=1.0)
    mv = ms.mollify(mu, 0.01).as_potential()
    one = fem.interpolate(mesh, lambda p: np.ones(len(p)))
    assert fem.integrate_product(one, mv) == pytest.approx(mu.mass, rel=0.05)
