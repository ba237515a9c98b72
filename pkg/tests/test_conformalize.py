import numpy as np
import pytest
import shapely
from hypothesis import given
from hypothesis import strategies as st

from sczm.conformalize import (
    INHERITED,
    NEW_CROSS_BLOCK,
    NEW_SAME_BLOCK,
    SliverWarning,
    build_search_structure,
    conformalize,
    find_source_elem,
    find_source_elems,
    parse_ifm,
    format_ifm,
    project_solution,
    triangulate_polygon,
)
from sczm.elements import polygon_area
from sczm.mesh import NodalField, build_crossed_tri, build_structured_quad, locate_points
from sczm.problems import RVE_BOUNDS, five_grain_rve, rotated_grains
from sczm.surrogate import GrainSet, assign_grain_ids, interface_segments


def source_mesh(n=(24, 16), builder=build_structured_quad):
    grains = five_grain_rve()
    m = builder(*n, RVE_BOUNDS)
    return m.with_regions(assign_grain_ids(m, grains)), grains


def test_triangulate_convex_and_concave():
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    tris = triangulate_polygon(sq)
    assert len(tris) == 2
    L = np.array([[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2]], float)
    tris = triangulate_polygon(L)
    assert len(tris) == 4
    assert sum(polygon_area(L[list(t)]) for t in tris) == pytest.approx(3.0)
    assert all(polygon_area(L[list(t)]) > 0 for t in tris)


@given(st.integers(3, 12), st.floats(0.0, 1.0))
def test_triangulate_star_polygons(k, phase):
    th = phase + 2 * np.pi * np.arange(2 * k) / (2 * k)
    r = np.where(np.arange(2 * k) % 2 == 0, 1.0, 0.45)
    xy = np.column_stack([r * np.cos(th), r * np.sin(th)])
    tris = triangulate_polygon(xy)
    assert len(tris) == 2 * k - 2
    area = sum(polygon_area(xy[list(t)]) for t in tris)
    assert area == pytest.approx(shapely.Polygon(xy).area, rel=1e-12)


def test_single_grain_is_identity():
    m = build_structured_quad(5, 4, (0, 0, 1, 1))
    g = GrainSet.from_polygons({1: [(0, 0), (1, 0), (1, 1), (0, 1)]})
    ifm = conformalize(m, g)
    np.testing.assert_array_equal(ifm.mesh.nodes, m.nodes)
    np.testing.assert_array_equal(ifm.mesh.cells, m.cells)
    assert np.all(ifm.node_marker == INHERITED)
    np.testing.assert_array_equal(ifm.source_node_id, np.arange(m.n_nodes))


@pytest.mark.parametrize("builder", [build_structured_quad, build_crossed_tri])
def test_rve_area_conservation_and_markers(builder):
    m, grains = source_mesh(builder=builder)
    ifm = conformalize(m, grains)
    total = ifm.mesh.element_areas().sum() + ifm.dropped_area
    assert total == pytest.approx(m.element_areas().sum(), rel=1e-10)
    for gid, poly in zip(grains.ids, grains.polygons):
        a = ifm.mesh.element_areas()[ifm.block_id == gid].sum()
        assert a == pytest.approx(poly.area, rel=1e-10)
    assert set(np.unique(ifm.node_marker).tolist()) <= {INHERITED, NEW_SAME_BLOCK, NEW_CROSS_BLOCK}
    assert np.all((ifm.source_node_id >= 0) == (ifm.node_marker == INHERITED))
    ifm.mesh.validate()


def test_grain_boundaries_are_mesh_facets():
    m, grains = source_mesh()
    ifm = conformalize(m, grains)
    segs = interface_segments(grains)
    # every interface segment is covered by IFM edges
    edges = set()
    for e in range(ifm.mesh.n_elements):
        c = ifm.mesh.connectivity(e)
        for a, b in zip(c, np.roll(c, -1)):
            edges.add(shapely.LineString(ifm.mesh.nodes[[a, b]]).wkb)
    lines = shapely.union_all([shapely.from_wkb(w) for w in edges])
    for a, b in segs:
        seg = shapely.LineString([a, b])
        assert lines.buffer(1e-9).contains(seg)


def test_linear_field_projection_is_exact():
    m, grains = source_mesh()
    ifm = conformalize(m, grains)
    A, c = np.array([[0.3, -1.2], [2.0, 0.7]]), np.array([0.1, -0.4])
    u = NodalField(m.nodes @ A.T + c, m)
    p = project_solution(ifm, m, u)
    np.testing.assert_allclose(p.values, ifm.mesh.nodes @ A.T + c, rtol=0, atol=1e-12)


def test_inherited_values_are_bit_equal():
    m, grains = source_mesh()
    ifm = conformalize(m, grains)
    vals = np.random.default_rng(0).normal(size=(m.n_nodes, 2))
    p = project_solution(ifm, m, NodalField(vals, m))
    idx = np.flatnonzero(ifm.node_marker == INHERITED)
    assert len(idx) > 0
    assert np.array_equal(p.values[idx], vals[ifm.source_node_id[idx]])


def test_quadratic_recovery_error_is_second_order():
    errs, hs = [], []
    for n in (12, 24, 48):
        m, grains = source_mesh((n, 2 * n // 3))
        ifm = conformalize(m, grains)
        f = lambda x: np.column_stack([x[:, 0] ** 2 + x[:, 0] * x[:, 1], np.cos(x[:, 1])])
        p = project_solution(ifm, m, NodalField(f(m.nodes), m))
        sel = ifm.node_marker != INHERITED
        errs.append(np.abs(p.values[sel] - f(ifm.mesh.nodes[sel])).max())
        hs.append(1.2 / n)
    rate = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert rate > 1.8


def test_search_paths_agree():
    m, _ = source_mesh()
    tri = build_crossed_tri(12, 8, RVE_BOUNDS).with_regions(1)
    rng = np.random.default_rng(9)
    pts = rng.uniform([-0.6, -0.4], [0.6, 0.4], (400, 2))
    for mesh in (m, tri):
        s = build_search_structure(mesh)
        blocks = mesh.region_id[locate_points(mesh, pts)[0]]
        got = find_source_elems(pts, blocks, s, mesh)
        exp, _ = locate_points(mesh, pts)
        np.testing.assert_array_equal(got, exp)
        # exhaustive reference
        for p, g in zip(pts[:40], got[:40]):
            inside = [
                e for e in range(mesh.n_elements)
                if shapely.Polygon(mesh.element_coords(e)).buffer(1e-12).contains(shapely.Point(p))
            ]
            assert g == min(inside)
    assert build_search_structure(m).is_uniform
    assert not build_search_structure(tri).is_uniform


def test_search_respects_block():
    m, _ = source_mesh()
    s = build_search_structure(m)
    e0 = 0
    x = m.centroids()[e0]
    assert find_source_elem(x, m.region_id[e0], s, m) == e0
    other = next(g for g in np.unique(m.region_id) if g != m.region_id[e0])
    assert find_source_elem(x, other, s, m) is None


def test_sliver_pieces_are_dropped_with_warning():
    m = build_structured_quad(4, 4, (0, 0, 1, 1))
    eps = 1e-9
    g = GrainSet.from_polygons(
        {1: [(0, 0), (0.25 + eps, 0), (0.25 + eps, 1), (0, 1)], 2: [(0.25 + eps, 0), (1, 0), (1, 1), (0.25 + eps, 1)]}
    )
    with pytest.warns(SliverWarning):
        ifm = conformalize(m, g, sliver_rel=1e-6)
    assert ifm.dropped_area == pytest.approx(eps, rel=1e-6)


def test_ifm_text_roundtrip():
    m = build_structured_quad(8, 8, (0, 0, 1, 1))
    ifm = conformalize(m, rotated_grains())
    back = parse_ifm(format_ifm(ifm))
    np.testing.assert_array_equal(back.mesh.nodes, ifm.mesh.nodes)
    np.testing.assert_array_equal(back.mesh.cells, ifm.mesh.cells)
    np.testing.assert_array_equal(back.node_marker, ifm.node_marker)
    np.testing.assert_array_equal(back.source_node_id, ifm.source_node_id)


def test_fitted_mesh_is_a_fixed_point():
    m = build_structured_quad(8, 8, (0, 0, 1, 1))
    first = conformalize(m, rotated_grains()).mesh
    again = conformalize(first, rotated_grains())
    np.testing.assert_array_equal(again.mesh.nodes, first.nodes)
    np.testing.assert_array_equal(again.mesh.cells, first.cells)
    np.testing.assert_array_equal(again.block_id, first.region_id)
    assert np.all(again.node_marker == INHERITED)


def test_element_centroids_lie_in_their_grain():
    from sczm.geometry import Sideness, build_index, classify_points

    m, grains = source_mesh()
    ifm = conformalize(m, grains)
    cen = ifm.mesh.centroids()
    for gid, bnd in zip(grains.ids, grains.boundaries):
        sel = ifm.block_id == gid
        side = classify_points(cen[sel], bnd, build_index(bnd))
        assert np.all(side == Sideness.IN)
