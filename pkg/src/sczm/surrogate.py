"""Surrogate domains: dominant-volume grain assignment and interface data.

The surrogate interface is the set of interior facets whose two elements
carry different grain ids. Each facet quadrature point stores the vector
``d`` to its closest point on the true interface, the true normal ``n``
there (oriented so ``n . n_h >= 0``), the area factor ``|n . n_h|`` and the
tangential mismatch ``tau_h = n_h - (n_h . n) n``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import shapely
from scipy.spatial import cKDTree
from shapely.geometry import Polygon

from .elements import LINE_GAUSS
from .geometry import (
    BoundaryRep,
    GeometryError,
    Sideness,
    build_index,
    classify_points,
    polygon_boundary,
)
from .mesh import Facet, Mesh, MeshError, interior_facets

FRACTION_TIE = 1e-12


class CoverageError(MeshError):
    """An element overlaps no grain."""


class SurrogateWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class GrainSet:
    """Grains given as closed polygons keyed by integer id."""

    ids: tuple
    boundaries: tuple
    polygons: tuple

    @classmethod
    def from_polygons(cls, polys: dict) -> "GrainSet":
        ids, bnds, shp = [], [], []
        for gid in sorted(polys):
            xy = np.asarray(polys[gid], dtype=float)
            if np.allclose(xy[0], xy[-1]):
                xy = xy[:-1]
            poly = Polygon(xy)
            if not poly.is_valid or poly.area <= 0.0:
                raise GeometryError(f"grain {gid} is not a simple polygon")
            ids.append(int(gid))
            bnds.append(polygon_boundary(xy).validate())
            shp.append(poly)
        if len(set(ids)) != len(ids):
            raise GeometryError("grain ids must be unique")
        return cls(tuple(ids), tuple(bnds), tuple(shp))

    def __len__(self):
        return len(self.ids)

    def vertices(self, k) -> np.ndarray:
        return self.boundaries[k].vertices


def half_plane_grains(x_split=0.5, bounds=(0.0, 0.0, 1.0, 1.0)) -> GrainSet:
    """Two grains split by the vertical line ``x = x_split`` (ids 1 left, 2 right)."""
    x0, y0, x1, y1 = bounds
    return GrainSet.from_polygons(
        {
            1: [(x0, y0), (x_split, y0), (x_split, y1), (x0, y1)],
            2: [(x_split, y0), (x1, y0), (x1, y1), (x_split, y1)],
        }
    )


def line_grains(p, q, bounds=(0.0, 0.0, 1.0, 1.0), left_id=1, right_id=2) -> GrainSet:
    """Split the rectangle by the infinite line through ``p`` and ``q``.

    Grain ``left_id`` lies left of the direction ``p -> q``.
    """
    x0, y0, x1, y1 = bounds
    box = shapely.box(x0, y0, x1, y1)
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    t = (q - p) / np.linalg.norm(q - p)
    n = np.array([-t[1], t[0]])
    big = 10.0 * max(x1 - x0, y1 - y0)
    a, b = p - big * t, p + big * t
    left = Polygon([a, b, b + big * n, a + big * n]).intersection(box)
    right = Polygon([a, a - big * n, b - big * n, b]).intersection(box)
    return GrainSet.from_polygons(
        {
            left_id: np.asarray(shapely.get_coordinates(shapely.normalize(left).exterior)),
            right_id: np.asarray(shapely.get_coordinates(shapely.normalize(right).exterior)),
        }
    )


# ------------------------------------------------------------------ assignment


def clip_element_fraction(element, grain) -> float:
    """Area fraction of a convex element polygon inside a grain.

    ``grain`` may be a shapely polygon or a closed 2D :class:`BoundaryRep`
    holding a single loop.
    """
    poly = Polygon(np.asarray(element, dtype=float))
    if not poly.is_valid or poly.area <= 0.0:
        raise GeometryError("element polygon is not simple")
    if isinstance(grain, BoundaryRep):
        grain = Polygon(grain.vertices)
    return float(min(1.0, poly.intersection(grain).area / poly.area))


def element_fractions(mesh: Mesh, grains: GrainSet, elements=None) -> np.ndarray:
    """Exhaustive clipping of elements against every grain, shape (E, K)."""
    elements = np.arange(mesh.n_elements) if elements is None else np.asarray(elements)
    polys = mesh.polygons(elements)
    areas = shapely.area(polys)
    out = np.empty((len(elements), len(grains)))
    for k, g in enumerate(grains.polygons):
        out[:, k] = shapely.area(shapely.intersection(polys, g)) / areas
    return np.minimum(out, 1.0)


def _argmax_first(phi):
    """Grain index with the largest fraction; earlier grains win near-ties."""
    best = np.zeros(len(phi), dtype=np.int64)
    val = phi[:, 0].copy()
    for k in range(1, phi.shape[1]):
        better = phi[:, k] > val + FRACTION_TIE
        best[better] = k
        val[better] = phi[better, k]
    return best, val


def assign_grain_ids(mesh: Mesh, grains: GrainSet, use_shortcut=True) -> np.ndarray:
    """Dominant-volume grain id per element.

    Elements whose nodes all classify strictly IN one grain take that grain
    directly; the rest are clipped against every grain.
    """
    E = mesh.n_elements
    region = np.full(E, -1, dtype=np.int64)
    if use_shortcut:
        nen = mesh.nen
        for k, b in enumerate(grains.boundaries):
            side = classify_points(mesh.nodes, b, build_index(b))
            inside = side == Sideness.IN
            cells = mesh.cells
            all_in = np.where(cells >= 0, inside[np.maximum(cells, 0)], True).all(axis=1) & (nen > 0)
            todo = all_in & (region < 0)
            region[todo] = grains.ids[k]
    rest = np.flatnonzero(region < 0)
    if len(rest):
        phi = element_fractions(mesh, grains, rest)
        best, val = _argmax_first(phi)
        if np.any(val <= 0.0):
            bad = rest[val <= 0.0]
            raise CoverageError(f"elements {bad[:5].tolist()} overlap no grain")
        region[rest] = np.asarray(grains.ids)[best]
    return region


# ------------------------------------------------------------------ true interface


def interface_segments(grains: GrainSet, pair=None) -> np.ndarray:
    """Segments shared by two grain boundaries, shape (S, 2, 2).

    With ``pair = (i, j)`` only the boundary between grains i and j is
    returned; otherwise every internal segment.
    """
    ids = list(grains.ids)
    if pair is not None:
        pairs = [tuple(ids.index(g) for g in pair)]
    else:
        pairs = [(a, b) for a in range(len(ids)) for b in range(a + 1, len(ids))]
    segs = []
    for a, b in pairs:
        shared = grains.polygons[a].boundary.intersection(grains.polygons[b].boundary)
        for line in getattr(shared, "geoms", [shared]):
            if line.geom_type == "LineString" and line.length > 0:
                xy = np.asarray(line.coords)
                segs.extend(np.stack([xy[:-1], xy[1:]], axis=1))
            elif line.geom_type == "MultiLineString":
                for ln in line.geoms:
                    xy = np.asarray(ln.coords)
                    segs.extend(np.stack([xy[:-1], xy[1:]], axis=1))
    if not segs:
        return np.zeros((0, 2, 2))
    segs = np.asarray(segs)
    keep = np.linalg.norm(segs[:, 1] - segs[:, 0], axis=1) > 0
    return segs[keep]


class SegmentLocator:
    """Exact closest-point queries against a segment soup.

    The k nearest centroids give a first guess; a ball query of radius
    ``best + max_half_length`` then guarantees the true nearest segment.
    """

    def __init__(self, segments, k=8):
        self.segments = np.asarray(segments, dtype=float)
        if len(self.segments) == 0:
            raise GeometryError("empty interface representation")
        a, b = self.segments[:, 0], self.segments[:, 1]
        self.centroids = 0.5 * (a + b)
        self.half = 0.5 * np.linalg.norm(b - a, axis=1)
        self.tree = cKDTree(self.centroids)
        self.k = min(k, len(self.segments))

    def _closest(self, q, ids):
        a, b = self.segments[ids, 0], self.segments[ids, 1]
        ab = b - a
        t = np.clip(np.sum((q - a) * ab, axis=-1) / np.sum(ab * ab, axis=-1), 0.0, 1.0)
        y = a + t[..., None] * ab
        return y, np.linalg.norm(y - q, axis=-1)

    def query(self, points):
        """Closest points, segment ids and distances for (P, 2) queries."""
        q = np.atleast_2d(np.asarray(points, dtype=float))
        _, ids = self.tree.query(q, k=self.k)
        ids = ids.reshape(len(q), -1)
        y, dist = self._closest(q[:, None, :], ids)
        j = np.argmin(dist, axis=1)
        r = np.arange(len(q))
        best_id, best_y, best_d = ids[r, j], y[r, j], dist[r, j]
        hmax = self.half.max()
        for i in range(len(q)):
            cand = self.tree.query_ball_point(q[i], best_d[i] + hmax + 1e-15)
            if len(cand) <= self.k:
                continue
            cand = np.asarray(sorted(cand))
            yc, dc = self._closest(q[i][None, :], cand)
            m = int(np.argmin(dc))
            if dc[m] < best_d[i]:
                best_id[i], best_y[i], best_d[i] = cand[m], yc[m], dc[m]
        return best_y, best_id, best_d

    def normal(self, ids) -> np.ndarray:
        t = self.segments[ids, 1] - self.segments[ids, 0]
        t /= np.linalg.norm(t, axis=-1)[..., None]
        return np.stack([t[..., 1], -t[..., 0]], axis=-1)


def closest_interface_point(q, interface, reference_normal=None):
    """Vector ``d`` to the nearest true-interface point and the normal there.

    ``interface`` is a :class:`SegmentLocator`, a (S, 2, 2) segment array or
    a 2D :class:`BoundaryRep`. When ``reference_normal`` (the surrogate
    facet normal) is given, ``n`` is flipped so ``n . n_ref >= 0``.
    """
    loc = interface
    if isinstance(interface, BoundaryRep):
        loc = SegmentLocator(interface.vertices[interface.facets])
    elif not isinstance(interface, SegmentLocator):
        loc = SegmentLocator(interface)
    q = np.atleast_2d(np.asarray(q, dtype=float))
    y, ids, _ = loc.query(q)
    n = loc.normal(ids)
    if reference_normal is not None:
        ref = np.broadcast_to(np.asarray(reference_normal, dtype=float), n.shape)
        flip = np.sum(n * ref, axis=1) < 0
        n[flip] *= -1.0
    d = y - q
    # points already on the interface get an exact zero shift, not projection roundoff
    tiny = np.linalg.norm(d, axis=1) <= 8 * np.finfo(float).eps * (1.0 + np.abs(q).max(axis=1))
    d[tiny] = 0.0
    return d, n


# ------------------------------------------------------------------ interface


@dataclass(frozen=True, eq=False)
class SurrogateInterface:
    """Interface facets and per-quadrature-point geometric data.

    Arrays are shaped (F, ...) per facet or (F, Q, ...) per quadrature
    point; ``weights`` already include the facet length.
    """

    minus_element: np.ndarray
    plus_element: np.ndarray
    facet_nodes: np.ndarray
    n_h: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    n: np.ndarray
    d: np.ndarray

    @property
    def n_facets(self) -> int:
        return len(self.minus_element)

    @property
    def n_qp(self) -> int:
        return self.points.shape[0] * self.points.shape[1]

    @property
    def area_factor(self) -> np.ndarray:
        return np.abs(np.sum(self.n * self.n_h[:, None, :], axis=-1))

    @property
    def tau(self) -> np.ndarray:
        nh = self.n_h[:, None, :]
        return nh - np.sum(nh * self.n, axis=-1)[..., None] * self.n

    def length(self) -> float:
        return float(self.weights.sum())


def _facet_qp(mesh: Mesh, facets):
    xi, w = LINE_GAUSS
    a = mesh.nodes[[f.nodes[0] for f in facets]]
    b = mesh.nodes[[f.nodes[1] for f in facets]]
    pts = a[:, None, :] + xi[None, :, None] * (b - a)[:, None, :]
    L = np.linalg.norm(b - a, axis=1)
    return pts, w[None, :] * L[:, None]


def _pack(facets, pts, wts, n, d):
    return SurrogateInterface(
        minus_element=np.array([f.minus_element for f in facets], dtype=np.int64),
        plus_element=np.array([f.plus_element for f in facets], dtype=np.int64),
        facet_nodes=np.array([f.nodes for f in facets], dtype=np.int64).reshape(-1, 2),
        n_h=np.array([f.normal for f in facets]).reshape(-1, 2),
        points=pts,
        weights=wts,
        n=n,
        d=d,
    )


def surrogate_facets(mesh: Mesh) -> list[Facet]:
    """Interior facets whose two elements carry different region ids."""
    return [
        f
        for f in interior_facets(mesh)
        if mesh.region_id[f.minus_element] != mesh.region_id[f.plus_element]
    ]


def build_surrogate_interface(mesh: Mesh, grains: GrainSet, region_ids=None, k=8) -> SurrogateInterface:
    """Surrogate facets plus closest-point data against the true interface.

    Each facet looks up the true interface between its two grains; if the
    grains share no boundary, all internal grain boundaries are used.
    """
    if region_ids is not None:
        mesh = mesh.with_regions(region_ids)
    facets = surrogate_facets(mesh)
    if not facets:
        if len(set(mesh.region_id.tolist())) >= 2 or len(grains) >= 2:
            warnings.warn("surrogate interface is empty", SurrogateWarning, stacklevel=2)
        z = np.zeros((0, 2, 2))
        return _pack([], z, np.zeros((0, 2)), z, z)
    pts, wts = _facet_qp(mesh, facets)
    F, Q = pts.shape[:2]
    n = np.empty((F, Q, 2))
    d = np.empty((F, Q, 2))
    locators = {}
    all_loc = None
    for i, f in enumerate(facets):
        pair = tuple(sorted((int(mesh.region_id[f.minus_element]), int(mesh.region_id[f.plus_element]))))
        if pair not in locators:
            segs = interface_segments(grains, pair) if set(pair) <= set(grains.ids) else np.zeros((0, 2, 2))
            if len(segs) == 0:
                if all_loc is None:
                    all_loc = SegmentLocator(interface_segments(grains), k)
                locators[pair] = all_loc
            else:
                locators[pair] = SegmentLocator(segs, k)
        d[i], n[i] = closest_interface_point(pts[i], locators[pair], f.normal)
    return _pack(facets, pts, wts, n, d)


def fitted_interface(mesh: Mesh, tol=1e-12) -> SurrogateInterface:
    """Cohesive facets of a split (interface-fitted) mesh.

    Pairs of boundary edges with coincident end points and different
    elements form the seam; geometric data reduce to plain CZM (d = 0,
    n = n_h).
    """
    from .mesh import boundary_edges

    edges = boundary_edges(mesh)
    if not edges:
        return fitted_from_facets(mesh, [])
    mids = np.array([0.5 * (mesh.nodes[a] + mesh.nodes[b]) for a, b, _ in edges])
    scale = max(np.ptp(mesh.nodes, axis=0).max(), 1.0)
    tree = cKDTree(mids)
    facets = []
    centroids = mesh.centroids()
    for i, j in sorted(tree.query_pairs(tol * scale)):
        (a1, b1, e1), (a2, b2, e2) = edges[i], edges[j]
        same = (
            np.allclose(mesh.nodes[a1], mesh.nodes[a2], atol=tol * scale)
            and np.allclose(mesh.nodes[b1], mesh.nodes[b2], atol=tol * scale)
        ) or (
            np.allclose(mesh.nodes[a1], mesh.nodes[b2], atol=tol * scale)
            and np.allclose(mesh.nodes[b1], mesh.nodes[a2], atol=tol * scale)
        )
        if not same or e1 == e2:
            continue
        r1, r2 = mesh.region_id[e1], mesh.region_id[e2]
        if (r1, e1) < (r2, e2):
            minus, plus, nodes = e1, e2, (a1, b1)
        else:
            minus, plus, nodes = e2, e1, (a2, b2)
        pa, pb = mesh.nodes[nodes[0]], mesh.nodes[nodes[1]]
        t = pb - pa
        nh = np.array([t[1], -t[0]]) / np.hypot(*t)
        if np.dot(nh, 0.5 * (pa + pb) - centroids[minus]) < 0:
            nh = -nh
        facets.append(Facet((int(nodes[0]), int(nodes[1])), int(minus), int(plus), nh))
    return fitted_from_facets(mesh, facets)


def fitted_from_facets(mesh: Mesh, facets) -> SurrogateInterface:
    """Interface data with the true interface on the facets themselves."""
    if not facets:
        z = np.zeros((0, 2, 2))
        return _pack([], z, np.zeros((0, 2)), z, z)
    pts, wts = _facet_qp(mesh, facets)
    nh = np.array([f.normal for f in facets])
    n = np.broadcast_to(nh[:, None, :], pts.shape).copy()
    return _pack(facets, pts, wts, n, np.zeros_like(pts))


# ------------------------------------------------------------------ IO


def format_grains(grains: GrainSet) -> str:
    lines = [f"grains {len(grains)}"]
    for gid, b in zip(grains.ids, grains.boundaries):
        v = b.vertices
        lines.append(f"grain {gid} vertices {len(v)}")
        lines += [f"{format(float(x), '.17g')} {format(float(y), '.17g')}" for x, y in v]
    return "\n".join(lines) + "\n"


def parse_grains(text: str) -> GrainSet:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = lines[0].split()
    if len(head) != 2 or head[0] != "grains":
        raise GeometryError(f"bad grains header: {lines[0]!r}")
    k, pos, polys = int(head[1]), 1, {}
    for _ in range(k):
        h = lines[pos].split()
        if len(h) != 4 or h[0] != "grain" or h[2] != "vertices":
            raise GeometryError(f"bad grain header: {lines[pos]!r}")
        n = int(h[3])
        polys[int(h[1])] = [[float(c) for c in ln.split()] for ln in lines[pos + 1 : pos + 1 + n]]
        pos += 1 + n
    return GrainSet.from_polygons(polys)


def write_grains(grains: GrainSet, path) -> None:
    Path(path).write_text(format_grains(grains))


def read_grains(path) -> GrainSet:
    return parse_grains(Path(path).read_text())
