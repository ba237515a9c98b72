"""Morphology-aware IN/OUT/ON classification against watertight boundaries.

A principal-axis frame of the boundary vertices gives an oriented bounding
box (fast OUT for far points) and a ray direction along the axis of least
variance, so a ray crosses as few facets as possible. Facet centroids are
projected onto the plane normal to that axis and stored in a k-d tree;
a radius search of ``L_max`` around the query's projection yields every
facet the ray can touch.

Degenerate crossings (ray through a vertex or a shared edge) use a
half-open rule from symbolic perturbation, so a shared vertex or edge is
counted exactly once.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

SAFE_FACTOR = 1.1
ON_TOL_REL = 1e-10
OBB_EXPAND_REL = 1e-9


class GeometryError(ValueError):
    """Invalid or degenerate boundary input."""


class InconsistentRayError(RuntimeError):
    """Ray parities disagree along every axis."""

    def __init__(self, point, counts):
        self.point = np.asarray(point)
        self.counts = dict(counts)
        super().__init__(f"inconsistent ray results at {self.point.tolist()}: {self.counts}")


class Sideness(enum.IntEnum):
    OUT = 0
    IN = 1
    ON = 2


@dataclass(frozen=True, eq=False)
class BoundaryRep:
    """Watertight boundary: segments in 2D, triangles in 3D."""

    vertices: np.ndarray
    facets: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        f = np.ascontiguousarray(self.facets, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] not in (2, 3):
            raise GeometryError("vertices must be (N, 2) or (N, 3)")
        if f.ndim != 2 or f.shape[1] != v.shape[1]:
            raise GeometryError("facets must be segments in 2D and triangles in 3D")
        if len(f) == 0:
            raise GeometryError("boundary has no facets")
        if f.min() < 0 or f.max() >= len(v):
            raise GeometryError("facet references a missing vertex")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "facets", f)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_facets(self) -> int:
        return len(self.facets)

    def facet_coords(self) -> np.ndarray:
        return self.vertices[self.facets]

    def centroids(self) -> np.ndarray:
        return self.facet_coords().mean(axis=1)

    def measures(self) -> np.ndarray:
        """Segment lengths (2D) or triangle areas (3D)."""
        x = self.facet_coords()
        if self.dim == 2:
            return np.linalg.norm(x[:, 1] - x[:, 0], axis=1)
        return 0.5 * np.linalg.norm(np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), axis=1)

    def validate(self) -> "BoundaryRep":
        """Check watertightness and non-degenerate facets."""
        scale = np.ptp(self.vertices, axis=0).max()
        if np.any(self.measures() <= 1e-14 * max(scale, 1e-300) ** (self.dim - 1)):
            raise GeometryError("zero-length or zero-area facet")
        if self.dim == 2:
            deg = np.bincount(self.facets.ravel(), minlength=len(self.vertices))
            if np.any(deg % 2):
                raise GeometryError("boundary is not closed: odd vertex degree")
        else:
            e = np.concatenate([self.facets[:, [0, 1]], self.facets[:, [1, 2]], self.facets[:, [2, 0]]])
            e.sort(axis=1)
            _, counts = np.unique(e, axis=0, return_counts=True)
            if np.any(counts != 2):
                raise GeometryError("surface is not watertight: edge not shared by two triangles")
        return self


def polygon_boundary(*loops) -> BoundaryRep:
    """Boundary made of one or more closed polylines (last vertex not repeated)."""
    verts, facets, off = [], [], 0
    for loop in loops:
        loop = np.asarray(loop, dtype=float)
        if np.allclose(loop[0], loop[-1]):
            loop = loop[:-1]
        k = len(loop)
        if k < 3:
            raise GeometryError("a closed loop needs at least 3 vertices")
        idx = np.arange(k) + off
        facets.append(np.column_stack([idx, np.roll(idx, -1)]))
        verts.append(loop)
        off += k
    return BoundaryRep(np.vstack(verts), np.vstack(facets))


def regular_polygon(n, radius=1.0, center=(0.0, 0.0), phase=0.0) -> BoundaryRep:
    th = phase + 2 * np.pi * np.arange(n) / n
    c = np.asarray(center, dtype=float)
    return polygon_boundary(c + radius * np.column_stack([np.cos(th), np.sin(th)]))


def rotate_boundary(boundary: BoundaryRep, angle, center=(0.0, 0.0)) -> BoundaryRep:
    c = np.asarray(center, dtype=float)
    R = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    return BoundaryRep((boundary.vertices - c) @ R.T + c, boundary.facets)


# ------------------------------------------------------------------ PCA / OBB


@dataclass(frozen=True, eq=False)
class PCABasis:
    """Mean and principal axes (rows, descending variance)."""

    mean: np.ndarray
    axes: np.ndarray
    singular_values: np.ndarray

    @property
    def ray_axis(self) -> np.ndarray:
        """Least-variance axis (v in 2D, w in 3D)."""
        return self.axes[-1]


def compute_boundary_pca(points) -> PCABasis:
    """Mean-centred SVD of a point cloud.

    Axes are sign-normalised so their largest-magnitude component is
    positive, which makes the basis reproducible.
    """
    x = np.asarray(points, dtype=float)
    d = x.shape[1]
    if len(x) < d + 1:
        raise GeometryError(f"need at least {d + 1} points for a {d}D basis")
    mean = x.mean(axis=0)
    X = x - mean
    scale = np.abs(X).max()
    if scale == 0.0 or not np.isfinite(scale):
        raise GeometryError("degenerate point cloud: all points coincide")
    _, s, vt = np.linalg.svd(X, full_matrices=True)
    vt = vt / np.linalg.norm(vt, axis=1)[:, None]
    flip = np.sign(vt[np.arange(d), np.argmax(np.abs(vt), axis=1)])
    vt = vt * flip[:, None]
    sv = np.zeros(d)
    sv[: len(s)] = s
    return PCABasis(mean, vt, sv)


@dataclass(frozen=True, eq=False)
class OrientedBox:
    """Box ``mean + sum_i [lo_i, hi_i] axes_i``."""

    mean: np.ndarray
    axes: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def local(self, p) -> np.ndarray:
        return (np.asarray(p, dtype=float) - self.mean) @ self.axes.T

    def contains(self, p) -> np.ndarray:
        q = self.local(p)
        return np.all((q >= self.lo) & (q <= self.hi), axis=-1)

    @property
    def lengths(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))


@dataclass(frozen=True, eq=False)
class ClassifierIndex:
    """PCA frame, OBB, projected-centroid tree and search radius."""

    basis: PCABasis
    obb: OrientedBox
    tree: cKDTree
    projected_centroids: np.ndarray
    L_max: float
    centers: np.ndarray
    radii: np.ndarray
    on_tolerance: float


def _project_off(x, basis: PCABasis):
    """Coordinates in the plane orthogonal to the ray axis (along the other axes)."""
    return (np.asarray(x, dtype=float) - basis.mean) @ basis.axes[:-1].T


def build_classifier_index(basis: PCABasis, boundary: BoundaryRep) -> ClassifierIndex:
    """OBB, projected-centroid k-d tree and maximum projected facet extent.

    ``L_max`` is the larger of the projected AABB diagonal and the largest
    projected centroid-to-vertex distance over all facets; the second term
    keeps the candidate search a superset when facets are not aligned with
    the PCA axes.
    """
    x = boundary.facet_coords()
    r = basis.ray_axis
    loc = (boundary.vertices - basis.mean) @ basis.axes.T
    lo, hi = loc.min(axis=0), loc.max(axis=0)
    diam = float(np.linalg.norm(hi - lo))
    if diam == 0.0:
        raise GeometryError("boundary has zero extent")
    pad = OBB_EXPAND_REL * diam
    obb = OrientedBox(basis.mean, basis.axes, lo - pad, hi + pad)

    cen = x.mean(axis=1)
    pc = _project_off(cen, basis)
    diag = x.max(axis=1) - x.min(axis=1)
    pdiag = diag - np.outer(diag @ r, r)
    pv = _project_off(x.reshape(-1, x.shape[-1]), basis).reshape(x.shape[0], x.shape[1], -1)
    spread = np.linalg.norm(pv - pc[:, None, :], axis=2).max(axis=1)
    L_max = float(max(np.linalg.norm(pdiag, axis=1).max(), spread.max()))
    radii = np.linalg.norm(x - cen[:, None, :], axis=2).max(axis=1)
    return ClassifierIndex(
        basis=basis,
        obb=obb,
        tree=cKDTree(pc),
        projected_centroids=pc,
        L_max=L_max,
        centers=cen,
        radii=radii,
        on_tolerance=ON_TOL_REL * diam,
    )


def build_index(boundary: BoundaryRep) -> ClassifierIndex:
    return build_classifier_index(compute_boundary_pca(boundary.vertices), boundary)


def axis_aligned_index(boundary: BoundaryRep) -> ClassifierIndex:
    """Index with the global coordinate axes instead of the PCA frame.

    The last global axis (y in 2D, z in 3D) plays the ray axis. Used as the
    fixed-direction variant in the rotation study.
    """
    d = boundary.dim
    basis = PCABasis(boundary.vertices.mean(axis=0), np.eye(d), np.ones(d))
    return build_classifier_index(basis, boundary)


# ------------------------------------------------------------------ ray pieces


def generate_ray_start(p, inverted: bool, axis, obb: OrientedBox):
    """Start point of a ray that ends at ``p`` and runs along ``axis``.

    The start lies ``SAFE_FACTOR`` x the box length beyond the box face on
    the side chosen by ``inverted`` and the half of the box holding ``p``.
    """
    p = np.asarray(p, dtype=float)
    axis = np.asarray(axis, dtype=float)
    k = int(np.argmax(np.abs(obb.axes @ axis)))
    e = obb.axes[k]
    length = float(obb.hi[k] - obb.lo[k])
    if not length > 0.0:
        raise GeometryError("zero OBB axis length")
    s = (p - obb.mean) @ e
    if s < 0.5 * (obb.lo[k] + obb.hi[k]):
        face, mult = (obb.hi[k], -1.0) if inverted else (obb.lo[k], 1.0)
    else:
        face, mult = (obb.lo[k], 1.0) if inverted else (obb.hi[k], -1.0)
    proj = p + (face - s) * e
    return proj - SAFE_FACTOR * length * mult * e


def ray_region_fast_reject(origin, direction, center, radius) -> bool:
    """True when the segment ``origin -> origin + direction`` provably misses the ball."""
    o = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    c = np.asarray(center, dtype=float)
    end = o + d
    lo = np.minimum(o, end) - radius
    hi = np.maximum(o, end) + radius
    if np.any(c < lo) or np.any(c > hi):
        return True
    pb = o + ((c - o) @ d) / (d @ d) * d
    return bool(np.linalg.norm(pb - c) > radius)


def collect_candidates(q, index: ClassifierIndex) -> list:
    """Facets whose projected centroid lies within ``L_max`` of q's projection."""
    qp = _project_off(q, index.basis)
    return sorted(index.tree.query_ball_point(qp, index.L_max))


def _perp_frame(direction):
    """Deterministic orthonormal complement of a unit vector (3D)."""
    d = direction
    k = int(np.argmin(np.abs(d)))
    a = np.zeros(3)
    a[k] = 1.0
    e1 = np.cross(d, a)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    return e1, e2


def _point_segment_distance(p, a, b):
    ab = b - a
    t = np.clip(np.sum((p - a) * ab, axis=-1) / np.sum(ab * ab, axis=-1), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[..., None] * ab), axis=-1)


def _point_triangle_distance(p, a, b, c):
    n = np.cross(b - a, c - a)
    nn = np.sum(n * n, axis=-1)
    t = np.sum((p - a) * n, axis=-1) / nn
    q = p - t[..., None] * n
    # barycentric signs via sub-triangle orientations
    w0 = np.sum(np.cross(b - q, c - q) * n, axis=-1)
    w1 = np.sum(np.cross(c - q, a - q) * n, axis=-1)
    w2 = np.sum(np.cross(a - q, b - q) * n, axis=-1)
    inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
    dplane = np.abs(t) * np.sqrt(nn)
    dedge = np.minimum(
        np.minimum(_point_segment_distance(p, a, b), _point_segment_distance(p, b, c)),
        _point_segment_distance(p, c, a),
    )
    return np.where(inside, dplane, dedge)


def facet_distance(p, boundary: BoundaryRep, ids) -> np.ndarray:
    """Distance from points ``p`` (K, D) to facets ``ids`` (K,)."""
    x = boundary.vertices[boundary.facets[ids]]
    if boundary.dim == 2:
        return _point_segment_distance(p, x[:, 0], x[:, 1])
    return _point_triangle_distance(p, x[:, 0], x[:, 1], x[:, 2])


def _edge_sign(pa, pb):
    """Sign of the 2D edge function of the origin with symbolic perturbation."""
    f = pa[:, 0] * pb[:, 1] - pa[:, 1] * pb[:, 0]
    dx = pb[:, 0] - pa[:, 0]
    dy = pb[:, 1] - pa[:, 1]
    tie = np.where(dy != 0, -np.sign(dy), np.sign(dx))
    return np.where(f != 0, np.sign(f), tie)


def _crossings(P, line_dir, sense, reach, boundary: BoundaryRep, ids, frame=None):
    """Whether the ray ``P + tau * line_dir`` with ``tau * sense`` in (0, reach] hits facets.

    ``P`` (K, D) pairs row-wise with facet ids ``ids`` (K,). ``sense`` and
    ``reach`` broadcast against K.
    """
    if len(ids) == 0:
        return np.zeros(0, dtype=bool)
    fac = boundary.facets[ids]
    x = boundary.vertices[fac]
    if boundary.dim == 2:
        eperp = np.array([-line_dir[1], line_dir[0]])
        s0 = (x[:, 0] - P) @ eperp
        s1 = (x[:, 1] - P) @ eperp
        cross = (s0 >= 0) != (s1 >= 0)
        den = np.where(cross, s0 - s1, 1.0)
        X = x[:, 0] + (x[:, 1] - x[:, 0]) * (s0 / den)[:, None]
        tau = (X - P) @ line_dir
    else:
        e1, e2 = frame if frame is not None else _perp_frame(line_dir)
        rel = x - P[:, None, :]
        pr = np.stack([rel @ e1, rel @ e2], axis=-1)
        signs = []
        for i, j in ((0, 1), (1, 2), (2, 0)):
            fwd = fac[:, i] < fac[:, j]
            a = np.where(fwd[:, None], pr[:, i], pr[:, j])
            b = np.where(fwd[:, None], pr[:, j], pr[:, i])
            s = _edge_sign(a, b)
            signs.append(np.where(fwd, s, -s))
        signs = np.stack(signs, axis=1)
        area2 = (pr[:, 1, 0] - pr[:, 0, 0]) * (pr[:, 2, 1] - pr[:, 0, 1]) - (
            pr[:, 1, 1] - pr[:, 0, 1]
        ) * (pr[:, 2, 0] - pr[:, 0, 0])
        cross = (np.all(signs > 0, axis=1) | np.all(signs < 0, axis=1)) & (area2 != 0)
        n = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
        den = n @ line_dir
        den = np.where(cross & (den != 0), den, 1.0)
        tau = np.sum((x[:, 0] - P) * n, axis=1) / den
    return cross & (tau * sense > 0) & (np.abs(tau) <= reach)


def trace_ray(start, end, boundary: BoundaryRep, index: ClassifierIndex | None = None, line_dir=None):
    """Count facet crossings of the segment ``start -> end``.

    Returns ``(Sideness.ON, count_so_far)`` as soon as ``end`` lies on a
    candidate facet, otherwise IN for odd and OUT for even counts. With an
    index, candidates come from the projected-centroid tree (the ray must
    then run along the index's ray axis); without one every facet is tested.
    ``line_dir`` fixes the orientation used for degeneracy tie-breaking so
    that opposed rays share it.
    """
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    seg = start - end
    length = float(np.linalg.norm(seg))
    if length == 0.0:
        raise GeometryError("ray start and end coincide")
    if line_dir is None:
        line_dir = -seg / length
    line_dir = np.asarray(line_dir, dtype=float)
    sense = np.sign(seg @ line_dir)
    if index is not None:
        cand = np.asarray(collect_candidates(start, index), dtype=np.int64)
        centers, radii = index.centers, index.radii
        on_tol = index.on_tolerance
    else:
        cand = np.arange(boundary.n_facets)
        centers = boundary.centroids()
        radii = np.linalg.norm(boundary.facet_coords() - centers[:, None], axis=2).max(axis=1)
        on_tol = ON_TOL_REL * np.ptp(boundary.vertices, axis=0).max()
    kept = [
        i for i in cand.tolist() if not ray_region_fast_reject(start, end - start, centers[i], radii[i] + on_tol)
    ]
    kept = np.asarray(kept, dtype=np.int64)
    if len(kept) == 0:
        return Sideness.OUT, 0
    Pk = np.broadcast_to(end, (len(kept), len(end)))
    if np.any(facet_distance(Pk, boundary, kept) < on_tol):
        return Sideness.ON, 0
    frame = None
    if index is not None and boundary.dim == 3:
        frame = (index.basis.axes[0], index.basis.axes[1])
    hit = _crossings(Pk, line_dir, sense, length, boundary, kept, frame)
    count = int(hit.sum())
    return (Sideness.IN if count % 2 else Sideness.OUT), count


def _frame_for(index, axis_id):
    if index.basis.axes.shape[0] != 3:
        return None
    others = [k for k in range(3) if k != axis_id]
    return index.basis.axes[others[0]], index.basis.axes[others[1]]


def classify_point(p, boundary: BoundaryRep, index: ClassifierIndex) -> Sideness:
    """Multi-ray classification: least-variance axis first, then the others."""
    p = np.asarray(p, dtype=float)
    if not index.obb.contains(p):
        return Sideness.OUT
    d = boundary.dim
    counts = {}
    order = [d - 1] + list(range(d - 1))
    for k, axis_id in enumerate(order):
        axis = index.basis.axes[axis_id]
        c = []
        for inverted in (False, True):
            start = generate_ray_start(p, inverted, axis, index.obb)
            if k == 0:
                side, n = trace_ray(start, p, boundary, index, line_dir=axis)
            else:
                side, n = _trace_full(start, p, boundary, index, axis, _frame_for(index, axis_id))
            if side == Sideness.ON:
                return Sideness.ON
            if n == 0:
                return Sideness.OUT
            c.append(n)
        counts[f"axis{axis_id}"] = tuple(c)
        if c[0] % 2 == c[1] % 2:
            return Sideness.IN if c[0] % 2 else Sideness.OUT
    raise InconsistentRayError(p, counts)


def _trace_full(start, end, boundary, index, axis, frame):
    """Fallback ray against every facet, sharing tie-breaking orientation."""
    seg = start - end
    length = float(np.linalg.norm(seg))
    ids = np.arange(boundary.n_facets)
    Pk = np.broadcast_to(end, (len(ids), len(end)))
    if np.any(facet_distance(Pk, boundary, ids) < index.on_tolerance):
        return Sideness.ON, 0
    hit = _crossings(Pk, axis, np.sign(seg @ axis), length, boundary, ids, frame)
    n = int(hit.sum())
    return (Sideness.IN if n % 2 else Sideness.OUT), n


# ------------------------------------------------------------------ oracle


def _brute_dirs(dim):
    yield np.eye(dim)[0]
    for ang in (0.3711, 1.1923, 2.0417, 2.7309):
        if dim == 2:
            yield np.array([np.cos(ang), np.sin(ang)])
        else:
            v = np.array([np.cos(ang), np.sin(ang) * np.cos(1.7 * ang), np.sin(ang) * np.sin(1.7 * ang)])
            yield v / np.linalg.norm(v)


def classify_brute_force(p, boundary: BoundaryRep) -> Sideness:
    """Full-scan parity test with a fixed global ray direction.

    If the ray grazes a vertex (or an edge in 3D) the direction is
    perturbed and the test repeated.
    """
    p = np.asarray(p, dtype=float)
    x = boundary.facet_coords()
    scale = float(np.ptp(boundary.vertices, axis=0).max())
    on_tol = ON_TOL_REL * scale
    ids = np.arange(boundary.n_facets)
    Pk = np.broadcast_to(p, (len(ids), len(p)))
    if np.any(facet_distance(Pk, boundary, ids) < on_tol):
        return Sideness.ON
    reach = 4.0 * scale + 4.0 * float(np.abs(p - boundary.vertices.mean(axis=0)).max())
    for direction in _brute_dirs(boundary.dim):
        if boundary.dim == 2:
            eperp = np.array([-direction[1], direction[0]])
            s = (boundary.vertices - p) @ eperp
            t = (boundary.vertices - p) @ direction
            if np.any((np.abs(s) <= 1e-14 * scale) & (t > 0)):
                continue
        else:
            e1, e2 = _perp_frame(direction)
            rel = boundary.vertices - p
            pr = np.column_stack([rel @ e1, rel @ e2])
            if np.any(np.linalg.norm(pr, axis=1) <= 1e-14 * scale):
                continue
        hit = _crossings(Pk, direction, 1.0, reach, boundary, ids)
        return Sideness.IN if hit.sum() % 2 else Sideness.OUT
    raise GeometryError("brute-force ray kept hitting vertices")


def classify_points_brute_force(points, boundary: BoundaryRep, chunk=2_000_000) -> np.ndarray:
    """Vectorised full scan with a +x ray (2D), falling back per point on grazes."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if boundary.dim != 2:
        return np.array([classify_brute_force(p, boundary) for p in pts], dtype=np.int64)
    x = boundary.facet_coords()
    a, b = x[:, 0], x[:, 1]
    scale = float(np.ptp(boundary.vertices, axis=0).max())
    on_tol = ON_TOL_REL * scale
    out = np.empty(len(pts), dtype=np.int64)
    step = max(1, chunk // max(1, len(a)))
    redo = []
    for s in range(0, len(pts), step):
        P = pts[s : s + step]
        py = P[:, 1:2]
        px = P[:, 0:1]
        s0 = a[None, :, 1] - py
        s1 = b[None, :, 1] - py
        cross = (s0 >= 0) != (s1 >= 0)
        den = np.where(cross, s0 - s1, 1.0)
        X = a[None, :, 0] + (b[None, :, 0] - a[None, :, 0]) * s0 / den
        hit = cross & (X > px)
        res = np.where(np.count_nonzero(hit, axis=1) % 2 == 1, Sideness.IN, Sideness.OUT)
        # exact distance only where a facet spans the point's height
        near_r, near_c = np.nonzero((np.minimum(s0, s1) <= on_tol) & (np.maximum(s0, s1) >= -on_tol))
        if len(near_r):
            dist = _point_segment_distance(P[near_r], a[near_c], b[near_c])
            res[np.unique(near_r[dist < on_tol])] = Sideness.ON
        graze = np.any(
            (np.abs(boundary.vertices[None, :, 1] - py) <= 1e-14 * scale)
            & (boundary.vertices[None, :, 0] > px),
            axis=1,
        )
        out[s : s + step] = res
        redo.extend((s + np.flatnonzero(graze & (res != Sideness.ON))).tolist())
    for i in redo:
        out[i] = classify_brute_force(pts[i], boundary)
    return out


# ------------------------------------------------------------------ batch


@dataclass
class BatchStats:
    """Work counters for a batch classification."""

    n_points: int = 0
    obb_rejected: int = 0
    candidate_tests: int = 0
    fallbacks: int = 0


def classify_points(points, boundary: BoundaryRep, index: ClassifierIndex, stats: BatchStats | None = None):
    """Vectorised version of :func:`classify_point` for many query points.

    The two opposed least-variance rays are evaluated in one pass over the
    candidate pairs (crossings on either side of the point); points whose
    parities disagree fall back to :func:`classify_point`.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.full(len(pts), int(Sideness.OUT), dtype=np.int64)
    inside = np.flatnonzero(index.obb.contains(pts))
    if stats is not None:
        stats.n_points += len(pts)
        stats.obb_rejected += len(pts) - len(inside)
    if len(inside) == 0:
        return out
    P = pts[inside]
    axis = index.basis.ray_axis
    lists = index.tree.query_ball_point(_project_off(P, index.basis), index.L_max)
    lens = np.fromiter((len(c) for c in lists), dtype=np.int64, count=len(lists))
    rows = np.repeat(np.arange(len(P)), lens)
    cols = np.fromiter((i for c in lists for i in c), dtype=np.int64, count=int(lens.sum()))
    if stats is not None:
        stats.candidate_tests += len(cols)
    Pk = P[rows]
    reach = SAFE_FACTOR * float(index.obb.lengths.max()) * 4.0 + index.obb.diameter
    on = np.zeros(len(P), dtype=bool)
    if len(cols):
        near = facet_distance(Pk, boundary, cols) < index.on_tolerance
        on[rows[near]] = True
    frame = (index.basis.axes[0], index.basis.axes[1]) if boundary.dim == 3 else None
    below = _crossings(Pk, axis, -1.0, reach, boundary, cols, frame)
    above = _crossings(Pk, axis, 1.0, reach, boundary, cols, frame)
    c0 = np.bincount(rows[below], minlength=len(P))
    c1 = np.bincount(rows[above], minlength=len(P))
    res = np.where(c0 % 2 == 1, int(Sideness.IN), int(Sideness.OUT))
    res[(c0 == 0) | (c1 == 0)] = int(Sideness.OUT)
    res[on] = int(Sideness.ON)
    bad = np.flatnonzero(~on & (c0 > 0) & (c1 > 0) & (c0 % 2 != c1 % 2))
    for i in bad:
        res[i] = int(classify_point(P[i], boundary, index))
    if stats is not None:
        stats.fallbacks += len(bad)
    out[inside] = res
    return out


# ------------------------------------------------------------------ shapes


def naca0012(n_facets: int, chord=1.0, origin=(0.0, 0.0), angle=0.0) -> BoundaryRep:
    """Closed-trailing-edge NACA 0012 polygon with cosine spacing.

    ``n_facets`` must be even; half the facets lie on each surface.
    """
    if n_facets < 4 or n_facets % 2:
        raise GeometryError("n_facets must be an even number >= 4")
    m = n_facets // 2
    beta = np.linspace(0.0, np.pi, m + 1)
    x = 0.5 * (1 - np.cos(beta))
    t = 0.12
    yt = 5 * t * (0.2969 * np.sqrt(x) - 0.1260 * x - 0.3516 * x**2 + 0.2843 * x**3 - 0.1036 * x**4)
    yt[0] = yt[-1] = 0.0
    upper = np.column_stack([x[::-1], yt[::-1]])
    lower = np.column_stack([x[1:-1], -yt[1:-1]])
    xy = np.vstack([upper, lower]) * chord
    c, s = np.cos(angle), np.sin(angle)
    xy = xy @ np.array([[c, s], [-s, c]]) + np.asarray(origin, dtype=float)
    return polygon_boundary(xy)


# ------------------------------------------------------------------ benchmark


def benchmark_classification(
    sizes=(100, 400, 1600),
    grid=256,
    repeats=5,
    domain=(0.0, 0.0, 1.0, 1.0),
    shape=None,
):
    """Runtime of PCA-accelerated versus brute-force classification.

    ``shape(n)`` builds a boundary with ``n`` facets (default: NACA 0012
    with unit-square-spanning chord). Each timing includes index
    construction and is averaged over ``repeats`` runs. Returns a list of
    dict rows with keys ``N_T, runtime_pca, runtime_brute, speedup``.
    """
    if shape is None:
        def shape(n):
            return naca0012(n, chord=0.9, origin=(0.05, 0.5))
    x0, y0, x1, y1 = domain
    xs = x0 + (np.arange(grid) + 0.5) * (x1 - x0) / grid
    ys = y0 + (np.arange(grid) + 0.5) * (y1 - y0) / grid
    X, Y = np.meshgrid(xs, ys)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    rows = []
    for n in sizes:
        bnd = shape(n)
        t_pca = t_brute = 0.0
        for _ in range(repeats):
            t0 = time.perf_counter()
            idx = build_index(bnd)
            a = classify_points(pts, bnd, idx)
            t1 = time.perf_counter()
            b = classify_points_brute_force(pts, bnd)
            t2 = time.perf_counter()
            t_pca += t1 - t0
            t_brute += t2 - t1
        mism = int(np.sum((a != b) & (a != Sideness.ON) & (b != Sideness.ON)))
        rows.append(
            {
                "N_T": n,
                "runtime_pca": t_pca / repeats,
                "runtime_brute": t_brute / repeats,
                "speedup": t_brute / t_pca,
                "mismatches": mism,
            }
        )
    return rows


def rotation_study(angles_deg, n_facets=400, grid=128):
    """Candidate-test counts of the PCA frame versus the fixed global frame.

    The airfoil is rotated about the domain centre; the ratio of
    deterministic work counters (fixed / PCA) is reported as the speedup.
    """
    xs = (np.arange(grid) + 0.5) / grid
    X, Y = np.meshgrid(xs, xs)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    base = naca0012(n_facets, chord=0.8, origin=(0.1, 0.5))
    rows = []
    for ang in angles_deg:
        bnd = rotate_boundary(base, np.deg2rad(ang), center=(0.5, 0.5))
        s_pca, s_fix = BatchStats(), BatchStats()
        a = classify_points(pts, bnd, build_index(bnd), s_pca)
        b = classify_points(pts, bnd, axis_aligned_index(bnd), s_fix)
        work_pca = s_pca.candidate_tests + s_pca.n_points
        work_fix = s_fix.candidate_tests + s_fix.n_points
        rows.append(
            {
                "angle": float(ang),
                "tests_pca": work_pca,
                "tests_fixed": work_fix,
                "speedup": work_fix / work_pca,
                "agree": bool(np.all(a == b)),
            }
        )
    return rows


# ------------------------------------------------------------------ IO


def format_boundary(boundary: BoundaryRep) -> str:
    lines = [f"boundary dim {boundary.dim} vertices {len(boundary.vertices)} facets {boundary.n_facets}"]
    lines += [" ".join(format(float(c), ".17g") for c in v) for v in boundary.vertices]
    lines += [" ".join(str(int(i)) for i in f) for f in boundary.facets]
    return "\n".join(lines) + "\n"


def parse_boundary(text: str) -> BoundaryRep:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    h = lines[0].split()
    if len(h) != 7 or h[0] != "boundary" or h[1] != "dim" or h[3] != "vertices" or h[5] != "facets":
        raise GeometryError(f"bad boundary header: {lines[0]!r}")
    d, n, m = int(h[2]), int(h[4]), int(h[6])
    v = np.array([[float(c) for c in ln.split()] for ln in lines[1 : 1 + n]]).reshape(n, d)
    f = np.array([[int(c) for c in ln.split()] for ln in lines[1 + n : 1 + n + m]]).reshape(m, d)
    return BoundaryRep(v, f)


def write_boundary(boundary: BoundaryRep, path) -> None:
    Path(path).write_text(format_boundary(boundary))


def read_boundary(path) -> BoundaryRep:
    return parse_boundary(Path(path).read_text())
