import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import segment_ray_hits
from sczm.geometry import (
    BoundaryRep,
    GeometryError,
    Sideness,
    axis_aligned_index,
    build_index,
    classify_brute_force,
    classify_point,
    classify_points,
    classify_points_brute_force,
    collect_candidates,
    compute_boundary_pca,
    generate_ray_start,
    naca0012,
    parse_boundary,
    format_boundary,
    polygon_boundary,
    ray_region_fast_reject,
    regular_polygon,
    rotate_boundary,
    rotation_study,
    trace_ray,
)

SQUARE = polygon_boundary([(0, 0), (1, 0), (1, 1), (0, 1)])


def cube(center=(0.0, 0.0, 0.0), half=(1.0, 0.5, 0.25)):
    c, h = np.asarray(center), np.asarray(half)
    v = np.array([[x, y, z] for z in (-1, 1) for y in (-1, 1) for x in (-1, 1)], dtype=float) * h + c
    quads = [(0, 2, 3, 1), (4, 5, 7, 6), (0, 1, 5, 4), (2, 6, 7, 3), (0, 4, 6, 2), (1, 3, 7, 5)]
    f = []
    for a, b, cc, d in quads:
        f += [(a, b, cc), (a, cc, d)]
    return BoundaryRep(v, np.array(f))


def parity_oracle(p, boundary):
    """Independent 2D parity count along an irrational direction."""
    d = np.array([np.cos(0.123456), np.sin(0.123456)])
    n = 0
    for a, b in boundary.facet_coords():
        n += len(segment_ray_hits(p, d, a, b))
    return Sideness.IN if n % 2 else Sideness.OUT


def test_pca_of_elongated_cloud():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(500, 2)) * [5.0, 0.5]
    R = np.array([[np.cos(0.4), -np.sin(0.4)], [np.sin(0.4), np.cos(0.4)]])
    basis = compute_boundary_pca(pts @ R.T)
    assert abs(np.dot(basis.axes[0], R[:, 0])) == pytest.approx(1.0, abs=1e-2)
    assert abs(np.dot(basis.ray_axis, R[:, 1])) == pytest.approx(1.0, abs=1e-2)
    np.testing.assert_allclose(basis.axes @ basis.axes.T, np.eye(2), atol=1e-12)
    # sign normalisation: largest component positive
    for a in basis.axes:
        assert a[np.argmax(np.abs(a))] > 0


def test_pca_degenerate_cloud_raises():
    with pytest.raises(GeometryError):
        compute_boundary_pca(np.ones((5, 2)))
    with pytest.raises(GeometryError):
        compute_boundary_pca(np.zeros((2, 2)))


def test_boundary_validation():
    SQUARE.validate()
    cube().validate()
    with pytest.raises(GeometryError):
        BoundaryRep(np.array([[0, 0], [1, 0], [1, 1]], float), np.array([[0, 1], [1, 2]])).validate()
    with pytest.raises(GeometryError):
        BoundaryRep(np.zeros((2, 2)), np.array([[0, 3]]))


def test_lmax_covers_projected_facet_extent():
    bnd = naca0012(200, chord=0.9, origin=(0.05, 0.5), angle=0.3)
    idx = build_index(bnd)
    x = bnd.facet_coords()
    ax = idx.basis.axes[0]
    proj = (x - idx.basis.mean) @ ax
    assert idx.L_max >= np.abs(proj[:, 1] - proj[:, 0]).max() - 1e-15


@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.booleans())
def test_ray_start_is_outside_box_and_along_axis(x, y, inv):
    idx = build_index(SQUARE)
    p = np.array([x, y])
    s = generate_ray_start(p, inv, idx.basis.ray_axis, idx.obb)
    assert not idx.obb.contains(s)
    d = s - p
    assert abs(d[0] * idx.basis.ray_axis[1] - d[1] * idx.basis.ray_axis[0]) < 1e-12


def test_fast_reject_never_rejects_a_hit():
    rng = np.random.default_rng(3)
    for _ in range(500):
        o, d, c = rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 2)
        r = rng.uniform(0.01, 1.0)
        ts = np.linspace(0, 1, 2001)
        hits = np.any(np.linalg.norm(o + ts[:, None] * d - c, axis=1) < r * (1 - 1e-3))
        if hits:
            assert not ray_region_fast_reject(o, d, c, r)


@given(st.floats(-0.3, 1.3), st.floats(-0.3, 1.3))
def test_candidates_are_superset_of_crossed_facets(x, y):
    bnd = regular_polygon(64, 0.4, (0.5, 0.5), phase=0.05)
    idx = build_index(bnd)
    q = np.array([x, y])
    cand = set(collect_candidates(q, idx))
    ax = idx.basis.ray_axis
    for k, (a, b) in enumerate(bnd.facet_coords()):
        if segment_ray_hits(q, ax, a, b) or segment_ray_hits(q, -ax, a, b):
            assert k in cand


def test_trace_ray_counts_square_crossings():
    side, n = trace_ray(np.array([-1.0, 0.5]), np.array([0.5, 0.5]), SQUARE)
    assert (side, n) == (Sideness.IN, 1)
    side, n = trace_ray(np.array([-1.0, 0.5]), np.array([2.0, 0.5]), SQUARE)
    assert (side, n) == (Sideness.OUT, 2)
    side, _ = trace_ray(np.array([-1.0, 0.5]), np.array([1.0, 0.3]), SQUARE)
    assert side == Sideness.ON


def test_trace_ray_rejects_zero_length():
    with pytest.raises(GeometryError):
        trace_ray(np.zeros(2), np.zeros(2), SQUARE)


@pytest.mark.parametrize(
    "bnd",
    [
        regular_polygon(64, 0.4, (0.5, 0.5)),
        naca0012(120, chord=0.9, origin=(0.05, 0.5), angle=0.2),
        polygon_boundary([(0, 0), (1, 0), (1, 1), (0, 1)], [(0.3, 0.3), (0.3, 0.7), (0.7, 0.7), (0.7, 0.3)]),
    ],
    ids=["circle", "airfoil", "square_with_hole"],
)
def test_classification_matches_oracles(bnd):
    rng = np.random.default_rng(11)
    pts = rng.uniform(-0.1, 1.1, (1500, 2))
    idx = build_index(bnd)
    fast = classify_points(pts, bnd, idx)
    brute = classify_points_brute_force(pts, bnd)
    off = (fast != Sideness.ON) & (brute != Sideness.ON)
    np.testing.assert_array_equal(fast[off], brute[off])
    for p, s in zip(pts[:200], fast[:200]):
        assert classify_point(p, bnd, idx) == s
        if s != Sideness.ON:
            assert parity_oracle(p, bnd) == s
            assert classify_brute_force(p, bnd) == s


def test_vertex_grazing_rays_are_consistent():
    # points level with polygon vertices along both axes
    bnd = polygon_boundary([(0, 0), (2, 1), (0, 2), (1, 1)])
    idx = build_index(bnd)
    pts = np.array([[0.5, 1.0], [1.5, 1.0], [-0.5, 1.0], [1.0, 0.0], [1.0, 2.0], [0.2, 0.4]])
    for p in pts:
        exp = parity_oracle(p, bnd)
        assert classify_point(p, bnd, idx) == exp
        assert classify_brute_force(p, bnd) == exp


def test_points_on_boundary_are_on():
    bnd = regular_polygon(16, 0.4, (0.5, 0.5))
    idx = build_index(bnd)
    on = bnd.vertices[:5] * 0.5 + bnd.vertices[1:6] * 0.5
    assert all(classify_point(p, bnd, idx) == Sideness.ON for p in on)
    assert np.all(classify_points(on, bnd, idx) == Sideness.ON)


@given(st.floats(0.0, 2 * np.pi))
def test_classification_is_rotation_equivariant(angle):
    base = naca0012(60, chord=0.8, origin=(0.1, 0.5))
    pts = np.random.default_rng(5).uniform(0, 1, (300, 2))
    c = np.array([0.5, 0.5])
    R = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    rot = rotate_boundary(base, angle, c)
    a = classify_points(pts, base, build_index(base))
    b = classify_points((pts - c) @ R.T + c, rot, build_index(rot))
    off = (a != Sideness.ON) & (b != Sideness.ON)
    np.testing.assert_array_equal(a[off], b[off])


def test_axis_aligned_index_agrees_with_pca():
    rows = rotation_study([0.0, 30.0], n_facets=80, grid=32)
    assert all(r["agree"] for r in rows)
    assert all(r["speedup"] > 0 for r in rows)


def test_three_dimensional_box():
    bnd = cube()
    idx = build_index(bnd)
    rng = np.random.default_rng(2)
    pts = rng.uniform(-1.3, 1.3, (400, 3))
    exp = np.where(np.all(np.abs(pts) < [1.0, 0.5, 0.25], axis=1), Sideness.IN, Sideness.OUT)
    got = classify_points(pts, bnd, idx)
    np.testing.assert_array_equal(got, exp)
    for p, e in zip(pts[:60], exp[:60]):
        assert classify_point(p, bnd, idx) == e
        assert classify_brute_force(p, bnd) == e
    # a ray through a shared diagonal edge must not double count
    assert classify_point(np.array([0.0, 0.0, 0.0]), bnd, idx) == Sideness.IN
    assert classify_point(np.array([1.0, 0.0, 0.0]), bnd, idx) == Sideness.ON


def test_fixed_axis_index_in_3d():
    bnd = cube(half=(0.5, 0.5, 0.5))
    idx = axis_aligned_index(bnd)
    assert classify_point(np.array([0.1, 0.2, 0.0]), bnd, idx) == Sideness.IN
    assert classify_point(np.array([0.1, 0.2, 0.7]), bnd, idx) == Sideness.OUT


def test_naca_requires_even_facets():
    with pytest.raises(GeometryError):
        naca0012(7)
    assert naca0012(40).n_facets == 40


def test_boundary_roundtrip():
    b = naca0012(20, angle=0.3)
    back = parse_boundary(format_boundary(b))
    np.testing.assert_array_equal(back.vertices, b.vertices)
    np.testing.assert_array_equal(back.facets, b.facets)
