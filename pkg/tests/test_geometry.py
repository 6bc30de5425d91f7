import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from shapely.geometry import Polygon as ShapelyPolygon

from perfolab import geometry as geo
from perfolab import potentials
from perfolab.errors import (DegenerateCell, InvalidExponent, PerforationTooLarge)
from perfolab.lab.experiments import max_packing_torus

TORUS = geo.Torus(1.0)
SQUARE = geo.unit_square()


def brute_separation(sites, domain):
    d = sites[:, None, :] - sites[None, :, :]
    if domain.is_torus:
        d -= domain.side * np.round(d / domain.side)
    dist = np.hypot(d[..., 0], d[..., 1])
    np.fill_diagonal(dist, np.inf)
    return dist.min()


def brute_cover(sites, domain, eps):
    g = geo.verification_grid(domain, eps)
    d = g[:, None, :] - sites[None, :, :]
    if domain.is_torus:
        d -= domain.side * np.round(d / domain.side)
    return np.hypot(d[..., 0], d[..., 1]).min(axis=1).max()


# -- domains -----------------------------------------------------------------

def test_polygon_rejects_clockwise_and_self_intersection():
    with pytest.raises(ValueError):
        geo.Polygon([(0, 0), (0, 1), (1, 1), (1, 0)])
    with pytest.raises(ValueError):
        geo.Polygon([(0, 0), (1, 1), (1, 0), (0, 1)])


def test_polygon_sigma_defaults_to_zero_off_gamma():
    sq = geo.unit_square(dirichlet_edges=(3,), robin_weight={0: 0.5})
    assert sq.robin_weight == {0: 0.5, 1: 0.0, 2: 0.0}
    with pytest.raises(ValueError):
        geo.unit_square(dirichlet_edges=(7,))
    with pytest.raises(ValueError):
        geo.unit_square(dirichlet_edges=(0,), robin_weight={0: 1.0})


def test_torus_distance_wraps():
    assert TORUS.distance(np.array([0.05, 0.5]), np.array([0.95, 0.5])) == pytest.approx(0.1)
    assert TORUS.diameter == pytest.approx(math.sqrt(2) / 2)


# -- separated sets ------------------------------------------------------------

def test_torus_large_eps_single_site():
    for seed in range(4):
        assert len(geo.build_separated_set(TORUS, 0.8, seed)) == 1


def test_square_large_eps_single_site():
    assert len(geo.build_separated_set(SQUARE, 1.5, 0)) == 1


def test_torus_eps_06_matches_exhaustive_packing():
    best = max_packing_torus(0.6, 20)
    assert best in (2, 3)
    for seed in range(6):
        assert len(geo.build_separated_set(TORUS, 0.6, seed)) == best


@given(eps=st.floats(0.08, 0.4), seed=st.integers(0, 10_000), torus=st.booleans())
def test_separated_set_is_separated_and_maximal(eps, seed, torus):
    dom = TORUS if torus else SQUARE
    s = geo.build_separated_set(dom, eps, seed)
    if len(s) > 1:
        assert brute_separation(s.sites, dom) >= eps * (1 - 1e-12)
    assert brute_cover(s.sites, dom, eps) < eps


def test_separated_set_deterministic():
    a = geo.build_separated_set(TORUS, 0.1, 7)
    b = geo.build_separated_set(TORUS, 0.1, 7)
    assert geo.sset_to_json(a) == geo.sset_to_json(b)
    assert geo.sset_to_json(geo.sset_from_json(geo.sset_to_json(a))) == geo.sset_to_json(a)


def test_verification_grid_spacing():
    g = geo.verification_grid(SQUARE, 0.16)
    xs = np.unique(g[:, 0])
    assert np.max(np.diff(xs)) <= 0.16 / 8 + 1e-15


# -- voronoi -------------------------------------------------------------------

def test_single_site_torus_cell_is_whole_torus():
    cells = geo.voronoi(geo.SeparatedSet(0.8, np.array([[0.3, 0.4]]), 0), TORUS)
    assert len(cells) == 1
    assert cells[0].area == pytest.approx(1.0, abs=1e-12)
    assert not cells[0].touches_boundary


def test_centroid_site_in_square_gives_square():
    cells = geo.voronoi(geo.SeparatedSet(1.5, np.array([[0.5, 0.5]]), 0), SQUARE)
    assert cells[0].area == pytest.approx(1.0, abs=1e-12)
    assert cells[0].touches_boundary


def test_two_symmetric_sites_split_torus_evenly():
    sites = np.array([[0.0, 0.0], [0.5, 0.5]])
    cells = geo.voronoi(geo.SeparatedSet(0.45, sites, 0), TORUS)
    # Monte-Carlo oracle: nearest-site counting under the wrap-around metric
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 1, (200_000, 2))
    d = pts[:, None, :] - sites[None]
    d -= np.round(d)
    frac = np.mean(np.argmin(np.hypot(d[..., 0], d[..., 1]), axis=1) == 0)
    assert cells[0].area == pytest.approx(0.5, abs=1e-12)
    assert cells[1].area == pytest.approx(0.5, abs=1e-12)
    assert frac == pytest.approx(0.5, abs=5e-3)


def test_colocated_sites_are_degenerate():
    sites = np.array([[0.2, 0.2], [0.2, 0.2], [0.7, 0.7]])
    for dom in (TORUS, SQUARE):
        with pytest.raises(DegenerateCell):
            geo.voronoi(geo.SeparatedSet(0.1, sites, 0), dom)


def test_sparse_sites_still_partition():
    sites = np.array([[0.2, 0.2], [0.7, 0.7]])
    for dom in (TORUS, SQUARE):
        cells = geo.voronoi(geo.SeparatedSet(0.1, sites, 0), dom)
        assert sum(c.area for c in cells) == pytest.approx(1.0, abs=1e-12)


@given(eps=st.floats(0.06, 0.3), seed=st.integers(0, 10_000), torus=st.booleans())
def test_cells_partition_domain(eps, seed, torus):
    dom = TORUS if torus else SQUARE
    cells = geo.voronoi(geo.build_separated_set(dom, eps, seed), dom)
    assert geo.cell_area_defect(cells, dom) <= 1e-9
    for c in cells:
        shp = ShapelyPolygon(c.polygon)
        assert shp.area == pytest.approx(c.area, rel=1e-12)
        assert shp.buffer(1e-12).contains(ShapelyPolygon([c.site + 1e-13 * np.array(v)
                                                          for v in ((0, 0), (1, 0), (0, 1))]))


def test_torus_cells_are_unions_of_nearest_points(rng):
    s = geo.build_separated_set(TORUS, 0.2, 3)
    cells = geo.voronoi(s, TORUS)
    pts = rng.uniform(0, 1, (20_000, 2))
    d = pts[:, None, :] - s.sites[None]
    d -= np.round(d)
    owner = np.argmin(np.hypot(d[..., 0], d[..., 1]), axis=1)
    mc = np.bincount(owner, minlength=len(s)) / len(pts)
    areas = np.array([c.area for c in cells])
    assert np.max(np.abs(mc - areas)) < 0.01


# -- classification --------------------------------------------------------------

def test_constant_one_all_perforated():
    cells = geo.voronoi(geo.build_separated_set(TORUS, 0.25, 0), TORUS)
    cls = geo.classify_sites(cells, potentials.constant(1.0), 0.25)
    assert all(c is geo.SiteClass.PERFORATED for c in cls)


def test_zero_potential_all_near_zero():
    cells = geo.voronoi(geo.build_separated_set(TORUS, 0.25, 0), TORUS)
    cls = geo.classify_sites(cells, potentials.constant(0.0), 0.25)
    assert all(c is geo.SiteClass.NEAR_ZERO for c in cls)


def test_boundary_cells_in_square():
    dom = geo.unit_square(dirichlet_edges=(0, 1, 2, 3))
    cells = geo.voronoi(geo.build_separated_set(dom, 0.15, 1), dom)
    cls = geo.classify_sites(cells, potentials.constant(5.0), 0.15)
    for c, k in zip(cells, cls):
        touches = ShapelyPolygon(c.polygon).distance(dom.shape.exterior) < 1e-12
        assert (k is geo.SiteClass.BOUNDARY) == touches


def test_perforated_means_sampled_min_above_threshold():
    V = potentials.trig(0.0, 1.0, 1, 0)
    eps = 0.1
    cells = geo.voronoi(geo.build_separated_set(TORUS, eps, 2), TORUS)
    cls = geo.classify_sites(cells, V, eps, 16)
    for c, k in zip(cells, cls):
        pts, h = geo.sample_cell(c, 16)
        low = np.min(np.abs(V(TORUS.wrap(pts))))
        if V.lipschitz_bound is not None:
            low -= V.lipschitz_bound * h
        perforated = low > math.sqrt(eps)
        assert (k is geo.SiteClass.PERFORATED) == perforated


# -- holes ----------------------------------------------------------------------

def test_hole_radius_examples():
    V = potentials.constant(2.0)
    assert geo.hole_radius(np.zeros(2), 0.3, V, 2.0) == pytest.approx(0.3 / (2 * math.pi), rel=1e-15)
    one = potentials.constant(1.0)
    assert geo.hole_radius(np.zeros(2), 0.01, one, 1.0) == pytest.approx(1.5915494309189535e-3, rel=1e-15)


def test_hole_too_large_is_an_error():
    with pytest.raises(PerforationTooLarge):
        geo.hole_radius(np.zeros(2), 0.01, potentials.constant(1.0), 1.0, clearance=0.003)


def test_perforation_identity_and_signs():
    V = potentials.affine(-0.5, (1.0, 0.0))
    sset, cells, classes, pd, mu = geo.build_perforated(TORUS, V, geo.ConstantAlpha(3.0), 0.05, seed=4)
    assert len(pd.holes) > 0
    by_site = {tuple(c.site): c for c in cells}
    for h in pd.holes:
        c = by_site[tuple(h.center)]
        v = V(h.center)
        assert h.sign == (1 if h.center[0] > 0.5 else -1)
        assert h.sign * pd.alpha * 2 * math.pi * h.radius == pytest.approx(v * c.area, rel=1e-13)
        assert 2 * h.radius < h.clearance


def test_no_perforated_sites_means_no_holes():
    sset, cells, classes, pd, mu = geo.build_perforated(
        TORUS, potentials.constant(0.0), geo.ConstantAlpha(1.0), 0.2)
    assert pd.holes == [] and mu.mass == 0.0 and len(mu) == 0


def test_constant_potential_circumference_equals_cell_area():
    sset, cells, classes, pd, mu = geo.build_perforated(
        TORUS, potentials.constant(1.0), geo.ConstantAlpha(1.0), 0.15, seed=1)
    assert all(h.sign == 1 for h in pd.holes)
    areas = sorted(c.area for c in cells)
    assert sorted(2 * math.pi * pd.radii) == pytest.approx(areas, rel=1e-13)


def test_radius_over_eps_shrinks_linearly():
    ratios = []
    eps_list = [0.2, 0.1, 0.05]
    for eps in eps_list:
        pd = geo.build_perforated(TORUS, potentials.constant(1.0), geo.ConstantAlpha(1.0), eps)[3]
        ratios.append(pd.radii.max() / eps)
    assert ratios[0] > ratios[1] > ratios[2]
    slope = np.polyfit(np.log(eps_list), np.log(ratios), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.25)


def test_perforated_domain_serialization_is_bitwise_stable():
    args = (TORUS, potentials.trig(0.3, 1.0, 1, 1), geo.ConstantAlpha(1.0), 0.12)
    a = geo.build_perforated(*args, seed=9)[3]
    b = geo.build_perforated(*args, seed=9)[3]
    ta, tb = geo.perforated_to_json(a), geo.perforated_to_json(b)
    assert ta == tb
    assert geo.perforated_to_json(geo.perforated_from_json(ta)) == ta


# -- schedules ------------------------------------------------------------------

def test_constant_schedule_admissible():
    rep = geo.validate_schedule(geo.ConstantAlpha(1.0), [0.2, 0.1, 0.05], p_values=(1.2, 1.5, 1.9))
    assert rep.admissible


def test_flex_schedule_product_is_one_at_p0():
    s = geo.FlexPower(1.5)
    assert s(0.1) == pytest.approx(100.0, rel=1e-14)
    rep = geo.validate_schedule(s, [0.2, 0.1, 0.05], p_values=(1.5, 1.6))
    assert rep.products[1.5] == pytest.approx([1.0, 1.0, 1.0], rel=1e-12)
    assert not rep.tends_to_zero["alpha_eps_pow_p=1.5"]
    assert rep.tends_to_zero["alpha_eps_pow_p=1.6"]
    assert rep.tends_to_zero["eps_over_alpha"]


@pytest.mark.parametrize("p0", [1.0, 2.0, 0.5, 2.5])
def test_flex_exponent_range(p0):
    with pytest.raises(InvalidExponent):
        geo.FlexPower(p0)


@given(p0=st.floats(1.01, 1.9), p=st.floats(1.01, 1.99))
def test_flex_products_vanish_iff_p_above_p0(p0, p):
    if abs(p - p0) < 1e-3:
        return
    rep = geo.validate_schedule(geo.FlexPower(p0), [0.2, 0.1, 0.05, 0.025], p_values=(p,))
    assert rep.tends_to_zero[f"alpha_eps_pow_p={p}"] == (p > p0)
