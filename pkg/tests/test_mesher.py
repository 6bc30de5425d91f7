import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from perfolab import geometry as geo
from perfolab import mesher, potentials
from perfolab.geometry import Hole, PerforatedDomain
from perfolab.mesher import HOLE_BOUNDARY, OUTER_DIRICHLET, OUTER_ROBIN, SizeField

TORUS = geo.Torus(1.0)


def single_hole(base, r=0.05, center=(0.5, 0.5)):
    return PerforatedDomain(base, [Hole(np.array(center, float), r, 1, 0.5)], 0.3, 1.0)


def test_full_torus_coarse():
    m = mesher.triangulate_full(TORUS, 0.5)
    assert m.area() == pytest.approx(1.0, abs=1e-12)
    assert m.check() == []
    assert len(m.tagged(OUTER_DIRICHLET)) == 0 and len(m.tagged(OUTER_ROBIN)) == 0


def test_full_square_all_dirichlet_tags():
    sq = geo.unit_square(dirichlet_edges=(0, 1, 2, 3))
    m = mesher.triangulate_full(sq, 0.1)
    assert m.area() == pytest.approx(1.0, abs=1e-12)
    b = {tuple(e) for e in m.boundary_edges()}
    assert b == {tuple(e) for e in m.tagged(OUTER_DIRICHLET)}
    assert len(m.tagged(OUTER_ROBIN)) == 0
    assert m.min_angle() >= 20.0 - 1e-9


def test_full_square_mixed_tags_follow_edges():
    sq = geo.unit_square(dirichlet_edges=(3,), robin_weight={0: 0.5})
    m = mesher.triangulate_full(sq, 0.1)
    for (i, j), (kind, tag) in m.edge_tags.items():
        mid = 0.5 * (m.vertices[i] + m.vertices[j])
        if kind == OUTER_DIRICHLET:
            assert mid[0] == pytest.approx(0.0, abs=1e-14)
        else:
            assert kind == OUTER_ROBIN and tag in (0, 1, 2)


def test_full_mesh_h_too_large():
    with pytest.raises(ValueError):
        mesher.triangulate_full(geo.unit_square(), 2.0)


@pytest.mark.parametrize("dom", [TORUS, geo.unit_square()], ids=["torus", "square"])
def test_halving_h_quadruples_vertices(dom):
    n1 = mesher.triangulate_full(dom, 0.08).n_vertices
    n2 = mesher.triangulate_full(dom, 0.04).n_vertices
    assert 4 / 1.5 <= n2 / n1 <= 4 * 1.5


def test_hole_polygon_preserves_perimeter():
    for r, h in [(0.05, 0.01), (0.01, 0.008), (0.2, 0.003)]:
        pts, n, r_corr = mesher.hole_polygon((0.3, 0.4), r, h)
        assert n >= mesher.MIN_HOLE_SIDES
        per = np.sum(np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1))
        assert per == pytest.approx(2 * math.pi * r, rel=1e-13)
        assert r_corr > r


@pytest.mark.parametrize("base", [TORUS, geo.unit_square()], ids=["torus", "square"])
def test_single_hole_area_and_perimeter(base):
    pd = single_hole(base)
    m = mesher.triangulate_perforated(pd, SizeField(0.1, 3.0, 1.3))
    pts, n, r_corr = mesher.hole_polygon(pd.holes[0].center, 0.05, 0.05 / 3.0)
    inscribed = 0.5 * n * r_corr**2 * math.sin(2 * math.pi / n)
    assert m.area() == pytest.approx(1.0 - inscribed, abs=1e-12)
    assert m.hole_ids() == [0]
    assert m.hole_perimeter(0) == pytest.approx(2 * math.pi * 0.05, rel=1e-12)
    assert m.check([0]) == []


def test_hole_edges_resolve_size_field():
    pd = single_hole(TORUS, 0.05)
    m = mesher.triangulate_perforated(pd, SizeField(0.1, 4.0, 1.3))
    e = m.tagged(HOLE_BOUNDARY, 0)
    lengths = np.linalg.norm(m.vertices[e[:, 0]] - m.vertices[e[:, 1]], axis=1)
    assert lengths.max() <= 0.05 / 4.0 * 1.0001
    assert len(e) >= 16


def test_unresolved_size_field_rejected():
    with pytest.raises(ValueError):
        SizeField(0.1, 1.0)


def test_torus_seams_pair_up():
    pd = single_hole(TORUS, 0.04, (0.1, 0.9))
    m = mesher.triangulate_perforated(pd, SizeField(0.08))
    assert m.period == 1.0 and len(m.periodic) > 0
    for a, b in m.periodic:
        d = m.vertices[b] - m.vertices[a]
        assert np.allclose(np.abs(d), [1.0, 0.0], atol=1e-12) or \
            np.allclose(np.abs(d), [0.0, 1.0], atol=1e-12) or np.allclose(np.abs(d), [1.0, 1.0], atol=1e-12)
    assert m.check([0]) == []


def test_perforated_sweep_mesh_matches_domain():
    V = potentials.trig(0.5, 1.0, 1, 0)
    pd = geo.build_perforated(TORUS, V, geo.ConstantAlpha(1.0), 0.1, seed=2)[3]
    m = mesher.triangulate_perforated(pd, SizeField(0.05))
    assert m.check(range(len(pd.holes))) == []
    assert m.hole_ids() == list(range(len(pd.holes)))
    for i, h in enumerate(pd.holes):
        assert m.hole_perimeter(i) == pytest.approx(2 * math.pi * h.radius, rel=1e-12)
    # inscribed polygons remove slightly less than pi r^2
    assert pd.area < m.area() < 1.0


def test_fill_holes_restores_full_area():
    pd = single_hole(geo.unit_square(), 0.08)
    m = mesher.triangulate_perforated(pd, SizeField(0.1))
    full = mesher.fill_holes(m)
    assert full.area() == pytest.approx(1.0, abs=1e-12)
    assert np.array_equal(full.vertices[:m.n_vertices], m.vertices)


def test_text_round_trip():
    pd = single_hole(TORUS, 0.05, (0.05, 0.5))
    m = mesher.triangulate_perforated(pd, SizeField(0.1))
    text = mesher.mesh_to_text(m)
    m2 = mesher.mesh_from_text(text)
    assert np.array_equal(m.vertices, m2.vertices)
    assert np.array_equal(m.triangles, m2.triangles)
    assert m.edge_tags == m2.edge_tags
    assert np.array_equal(m.periodic, m2.periodic) and m2.period == m.period
    assert mesher.mesh_to_text(m2) == text


def test_mesh_is_deterministic():
    V = potentials.constant(1.0)
    pd = geo.build_perforated(TORUS, V, geo.ConstantAlpha(1.0), 0.15, seed=0)[3]
    a = mesher.mesh_to_text(mesher.triangulate_perforated(pd, SizeField(0.06)))
    b = mesher.mesh_to_text(mesher.triangulate_perforated(pd, SizeField(0.06)))
    assert a == b


@given(x=st.floats(0.15, 0.85), y=st.floats(0.15, 0.85), r=st.floats(0.01, 0.1))
def test_single_hole_mesh_invariants(x, y, r):
    pd = single_hole(geo.unit_square(), r, (x, y))
    m = mesher.triangulate_perforated(pd, SizeField(0.12))
    assert m.check([0]) == []
    assert m.hole_perimeter(0) == pytest.approx(2 * math.pi * r, rel=1e-12)
    assert np.all(m.triangle_areas() > 0)
