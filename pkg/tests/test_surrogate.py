import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import monte_carlo_fraction, nearest_segment_scan
from sczm.geometry import GeometryError
from sczm.mesh import build_crossed_tri, build_structured_quad, characteristic_size, split_fitted_interface
from sczm.problems import RVE_BOUNDS, five_grain_rve, rotated_grains
from sczm.surrogate import (
    CoverageError,
    GrainSet,
    SegmentLocator,
    SurrogateWarning,
    assign_grain_ids,
    build_surrogate_interface,
    clip_element_fraction,
    closest_interface_point,
    element_fractions,
    fitted_interface,
    half_plane_grains,
    interface_segments,
    line_grains,
    parse_grains,
    format_grains,
)


def test_clip_fraction_matches_monte_carlo():
    tri = np.array([[0.1, 0.1], [0.9, 0.2], [0.3, 0.8]])
    grains = line_grains((0.0, 0.3), (1.0, 0.6))
    normal = np.array([-0.3, 1.0])
    mc = monte_carlo_fraction(tri, lambda p: (p - [0.0, 0.3]) @ normal > 0)
    assert clip_element_fraction(tri, grains.polygons[0]) == pytest.approx(mc, abs=3e-3)
    assert clip_element_fraction(tri, grains.boundaries[0]) == pytest.approx(mc, abs=3e-3)


def test_clip_fraction_rejects_degenerate_element():
    with pytest.raises(GeometryError):
        clip_element_fraction([[0, 0], [1, 1], [2, 2]], half_plane_grains().polygons[0])


@given(st.floats(0.05, 0.95), st.floats(-1.0, 1.0))
def test_fractions_partition_unity(x, slope):
    grains = line_grains((x, 0.5), (x + 1.0, 0.5 + slope))
    mesh = build_crossed_tri(3, 3)
    phi = element_fractions(mesh, grains)
    np.testing.assert_allclose(phi.sum(axis=1), 1.0, atol=1e-12)


def test_shortcut_matches_exhaustive_clipping_on_rve():
    mesh = build_structured_quad(30, 20, RVE_BOUNDS)
    grains = five_grain_rve()
    fast = assign_grain_ids(mesh, grains, use_shortcut=True)
    slow = assign_grain_ids(mesh, grains, use_shortcut=False)
    np.testing.assert_array_equal(fast, slow)
    assert set(fast.tolist()) == set(grains.ids)


def test_rve_grains_tile_the_box():
    g = five_grain_rve()
    x0, y0, x1, y1 = RVE_BOUNDS
    assert sum(p.area for p in g.polygons) == pytest.approx((x1 - x0) * (y1 - y0), rel=1e-12)
    assert len(g) == 5


def test_uncovered_element_raises():
    grains = GrainSet.from_polygons({1: [(0, 0), (0.5, 0), (0.5, 1), (0, 1)]})
    with pytest.raises(CoverageError):
        assign_grain_ids(build_structured_quad(4, 1), grains)


def test_invalid_grain_polygon_raises():
    with pytest.raises(GeometryError):
        GrainSet.from_polygons({1: [(0, 0), (1, 1), (1, 0), (0, 1)]})


def test_inclined_interface_area_factors():
    mesh = build_structured_quad(32, 32)
    grains = rotated_grains()
    mesh = mesh.with_regions(assign_grain_ids(mesh, grains))
    itf = build_surrogate_interface(mesh, grains)
    f = np.round(itf.area_factor, 12)
    assert set(np.unique(f).tolist()) <= {round(np.sqrt(3) / 2, 12), 0.5}
    h = 1.0 / 32
    assert np.linalg.norm(itf.d, axis=-1).max() <= h * np.sqrt(2)
    # n_h and the oriented true normal never point against each other
    assert np.all(np.sum(itf.n * itf.n_h[:, None, :], axis=-1) > 0)
    # tau is the tangential part of n_h
    np.testing.assert_allclose(np.sum(itf.tau * itf.n, axis=-1), 0.0, atol=1e-14)


def test_vertical_interface_on_mesh_lines_is_exact():
    mesh = build_structured_quad(8, 8)
    grains = half_plane_grains(0.5)
    mesh = mesh.with_regions(assign_grain_ids(mesh, grains))
    itf = build_surrogate_interface(mesh, grains)
    assert itf.n_facets == 8
    assert itf.length() == pytest.approx(1.0)
    np.testing.assert_allclose(itf.d, 0.0, atol=1e-15)
    np.testing.assert_allclose(itf.area_factor, 1.0)
    np.testing.assert_allclose(itf.n_h, np.tile([1.0, 0.0], (8, 1)))


def test_closest_point_matches_scan():
    rng = np.random.default_rng(4)
    segs = interface_segments(five_grain_rve())
    loc = SegmentLocator(segs, k=2)
    q = rng.uniform([-0.6, -0.4], [0.6, 0.4], (300, 2))
    y, ids, dist = loc.query(q)
    for i in range(len(q)):
        j, dj = nearest_segment_scan(q[i], segs)
        assert dist[i] == pytest.approx(dj, abs=1e-14)
    d, n = closest_interface_point(q, segs)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), dist, atol=1e-14)
    np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0)


def test_empty_interface_warns():
    mesh = build_structured_quad(2, 2)
    grains = half_plane_grains(0.5)
    with pytest.warns(SurrogateWarning):
        itf = build_surrogate_interface(mesh.with_regions(np.ones(4)), grains)
    assert itf.n_facets == 0


def test_fitted_interface_on_split_mesh():
    split = split_fitted_interface(build_structured_quad(4, 4), ((0.5, 0.0), (0.5, 1.0)))
    itf = fitted_interface(split)
    assert itf.n_facets == 4
    assert itf.length() == pytest.approx(1.0)
    np.testing.assert_array_equal(itf.d, 0.0)
    np.testing.assert_allclose(itf.n_h, np.tile([1.0, 0.0], (4, 1)))
    assert np.all(split.region_id[itf.minus_element] == 1)


def test_interface_length_of_rotated_line():
    segs = interface_segments(rotated_grains())
    L = np.linalg.norm(segs[:, 1] - segs[:, 0], axis=1).sum()
    assert L == pytest.approx(1.0 / np.cos(np.pi / 6), rel=1e-12)


def test_grains_roundtrip():
    g = five_grain_rve()
    back = parse_grains(format_grains(g))
    assert back.ids == g.ids
    for a, b in zip(back.boundaries, g.boundaries):
        np.testing.assert_array_equal(a.vertices, b.vertices)


def test_crossed_tri_size_unchanged_by_assignment():
    mesh = build_crossed_tri(7, 17)
    region = assign_grain_ids(mesh, line_grains((0.5, 0.0), (0.5, 1.0)))
    assert characteristic_size(mesh.with_regions(region)) == characteristic_size(mesh)
    assert set(region.tolist()) == {1, 2}


def test_points_on_interface_have_exact_zero_shift():
    segs = np.array([[[0.5, 0.0], [0.5, 1.0]]])
    q = np.column_stack([np.full(7, 0.5), np.linspace(0.1, 0.9, 7)])
    d, n = closest_interface_point(q, segs, reference_normal=[1.0, 0.0])
    assert np.all(d == 0.0)
    np.testing.assert_array_equal(n, np.tile([1.0, 0.0], (7, 1)))
    d, _ = closest_interface_point(q + [1e-9, 0.0], segs)
    np.testing.assert_allclose(d[:, 0], -1e-9, rtol=1e-6)
