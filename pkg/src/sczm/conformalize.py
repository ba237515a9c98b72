"""Conformalize a non-fitted mesh against grain polygons and project fields.

Elements lying inside a single grain are copied verbatim. Elements cut by
grain boundaries are clipped against every grain and each clipped piece is
triangulated, so the output mesh conforms to the grain boundaries. Nodes
are merged within a block (grain) and duplicated across blocks, which
leaves a zero-thickness seam on every grain boundary.

Each output node carries a marker that selects its projection path:

* 0: coincides with a source node (copy the nodal value),
* 1: new node inside a source element of its own block (interpolate),
* 2: new node outside every source element of its block (Taylor recovery
  from the closest same-block element).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import shapely
from scipy.spatial import cKDTree
from shapely.geometry import Polygon

from .elements import QUAD4, TRI3, contains_reference, inverse_map, polygon_area, shape_at
from .mesh import Mesh, MeshError, NodalField, boundary_tags_for, characteristic_size, element_radii, parse_mesh
from .surrogate import GrainSet

log = logging.getLogger(__name__)

SLIVER_REL = 1e-14
MERGE_REL = 1e-12
COPY_REL = 1e-12
# clipped pieces this small relative to their element are boolean roundoff,
# not geometry; they are counted as dropped area without a warning
DUST_REL = 64 * np.finfo(float).eps
INHERITED, NEW_SAME_BLOCK, NEW_CROSS_BLOCK = 0, 1, 2


class ProjectionError(MeshError):
    """No source element of the required block exists."""


class SliverWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class IFMMesh:
    """Interface-fitted mesh with node provenance.

    ``mesh.region_id`` holds the block (grain) id of every element.
    ``source_node_id`` is -1 unless the marker is 0. ``dropped_area`` is
    the total area of discarded slivers.
    """

    mesh: Mesh
    node_marker: np.ndarray
    source_node_id: np.ndarray
    dropped_area: float = 0.0

    @property
    def block_id(self) -> np.ndarray:
        return self.mesh.region_id

    def node_blocks(self) -> np.ndarray:
        """Block of each node (nodes never straddle blocks after merging)."""
        blk = np.full(self.mesh.n_nodes, -1, dtype=np.int64)
        for _, ids, conn in self.mesh.groups():
            blk[conn] = np.repeat(self.mesh.region_id[ids], conn.shape[1]).reshape(conn.shape)
        return blk


# ------------------------------------------------------------------ triangulation


def _clean_ring(xy, tol):
    """Open CCW ring without repeated vertices, starting at the lexicographic minimum."""
    xy = np.asarray(xy, dtype=float)
    if len(xy) > 1 and np.allclose(xy[0], xy[-1], atol=tol, rtol=0.0):
        xy = xy[:-1]
    keep = [0]
    for i in range(1, len(xy)):
        if np.max(np.abs(xy[i] - xy[keep[-1]])) > tol:
            keep.append(i)
    xy = xy[keep]
    if len(xy) > 1 and np.max(np.abs(xy[0] - xy[-1])) <= tol:
        xy = xy[:-1]
    if polygon_area(xy) < 0:
        xy = xy[::-1]
    start = np.lexsort((xy[:, 1], xy[:, 0]))[0]
    return np.roll(xy, -start, axis=0)


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def triangulate_polygon(xy, tol=0.0) -> list[tuple[int, int, int]]:
    """Ear-clipping triangulation of a simple CCW polygon.

    Ears are tried in vertex order, so a convex polygon yields the fan from
    vertex 0; degenerate (zero-area) ears are postponed, which keeps
    collinear vertices (hanging-node candidates) in the output.
    """
    xy = np.asarray(xy, dtype=float)
    idx = list(range(len(xy)))
    tris = []
    while len(idx) > 3:
        n = len(idx)
        chosen = None
        for k in (*range(1, n), 0):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % n]
            a = _cross(xy[i0], xy[i1], xy[i2])
            if a <= tol:
                continue
            inside = False
            for j in idx:
                if j in (i0, i1, i2):
                    continue
                p = xy[j]
                if (
                    _cross(xy[i0], xy[i1], p) >= -tol
                    and _cross(xy[i1], xy[i2], p) >= -tol
                    and _cross(xy[i2], xy[i0], p) >= -tol
                ):
                    inside = True
                    break
            if not inside:
                chosen = k
                break
        if chosen is None:
            raise MeshError("polygon could not be triangulated")
        k = chosen
        tris.append((idx[k - 1], idx[k], idx[(k + 1) % n]))
        del idx[k]
    tris.append(tuple(idx))
    return [_rotate_min(t) for t in tris]


def _rotate_min(t):
    k = int(np.argmin(t))
    return tuple(t[k:] + t[:k])


def _polygons_of(geom):
    if geom.is_empty:
        return []
    if isinstance(geom, Polygon):
        return [geom]
    return [g for g in getattr(geom, "geoms", []) if isinstance(g, Polygon) and not g.is_empty]


# ------------------------------------------------------------------ conformalize


def conformalize(mesh: Mesh, grains: GrainSet, sliver_rel=SLIVER_REL) -> IFMMesh:
    """Build an interface-fitted mesh from ``mesh`` and ``grains``.

    Raises :class:`MeshError` when an element overlaps no grain.
    """
    h = characteristic_size(mesh)
    tol = MERGE_REL * h
    sliver = sliver_rel * h * h
    cells = mesh.cells
    polys = mesh.polygons()
    areas = mesh.element_areas()
    pieces = [shapely.intersection(polys, g) for g in grains.polygons]
    piece_area = np.column_stack([shapely.area(p) for p in pieces])

    out_xy, out_blk, out_cells, out_src = [], [], [], []
    dropped = 0.0
    offset = 0
    for e in range(mesh.n_elements):
        dust = piece_area[e] <= DUST_REL * areas[e]
        dropped += float(piece_area[e][dust].sum())
        hit = np.flatnonzero(~dust)
        if len(hit) == 0:
            raise MeshError(f"element {e} overlaps no grain")
        if len(hit) == 1 and abs(piece_area[e, hit[0]] - areas[e]) <= COPY_REL * areas[e]:
            conn = cells[e][cells[e] >= 0]
            out_cells.append(np.arange(len(conn)) + offset)
            out_xy.append(mesh.nodes[conn])
            out_src.append(conn)
            offset += len(conn)
            out_blk.append(grains.ids[hit[0]])
            continue
        for k in hit:
            for poly in _polygons_of(pieces[k][e]):
                if poly.area < sliver:
                    dropped += poly.area
                    continue
                if len(poly.interiors):
                    raise MeshError(f"clipped piece of element {e} has a hole")
                ring = _clean_ring(np.asarray(poly.exterior.coords), tol)
                for tri in triangulate_polygon(ring):
                    txy = ring[list(tri)]
                    a = polygon_area(txy)
                    if a < sliver:
                        dropped += a
                        continue
                    out_cells.append(np.arange(3) + offset)
                    out_xy.append(txy)
                    out_src.append(np.full(3, -1, dtype=np.int64))
                    offset += 3
                    out_blk.append(grains.ids[k])
    if dropped > DUST_REL * areas.sum():
        warnings.warn(f"dropped sliver area {dropped:.3e}", SliverWarning, stacklevel=2)

    pts = np.vstack(out_xy)
    blk_of_pt = np.concatenate([np.full(len(c), b) for c, b in zip(out_xy, out_blk)])
    origin = np.concatenate(out_src)
    # clipped-piece vertices may still sit on a source node
    loose = np.flatnonzero(origin < 0)
    if len(loose):
        d, j = cKDTree(mesh.nodes).query(pts[loose])
        origin[loose] = np.where(d <= tol, j, -1)
    nodes, remap = _merge_by_block(pts, blk_of_pt, tol, origin)
    new_cells = -np.ones((len(out_cells), 4), dtype=np.int64)
    for i, c in enumerate(out_cells):
        new_cells[i, : len(c)] = remap[c]
    region = np.asarray(out_blk, dtype=np.int64)
    lo, hi = nodes.min(axis=0), nodes.max(axis=0)
    ifm = Mesh(nodes, new_cells, region, boundary_tags_for(nodes, (lo[0], lo[1], hi[0], hi[1])))
    marker, src = _classify_nodes(ifm, mesh, tol)
    return IFMMesh(ifm, marker, src, float(dropped))


def _merge_by_block(pts, blk, tol, origin=None):
    """Merge points closer than ``tol`` within each block; first occurrence wins.

    Merged nodes are numbered by their source node (``origin``, -1 if none)
    and block, then new nodes follow in order of first appearance. A mesh
    that needs no surgery therefore keeps its numbering.
    """
    remap = np.empty(len(pts), dtype=np.int64)
    nodes, node_blk = [], []
    for b in np.unique(blk):
        sel = np.flatnonzero(blk == b)
        tree = cKDTree(pts[sel])
        rep = np.arange(len(sel))
        for i, j in sorted(tree.query_pairs(tol)):
            ri, rj = _root(rep, i), _root(rep, j)
            if ri != rj:
                rep[max(ri, rj)] = min(ri, rj)
        roots = np.array([_root(rep, i) for i in range(len(sel))])
        uniq, inv = np.unique(roots, return_inverse=True)
        remap[sel] = len(nodes) + inv
        nodes.extend(pts[sel[uniq]])
        node_blk.extend([b] * len(uniq))
    n = len(nodes)
    if origin is None:
        origin = -np.ones(len(pts), dtype=np.int64)
    src = np.full(n, np.iinfo(np.int64).max)
    ok = origin >= 0
    np.minimum.at(src, remap[ok], origin[ok])
    first = np.full(n, len(pts))
    np.minimum.at(first, remap, np.arange(len(pts)))
    order = np.lexsort((first, np.asarray(node_blk), src))
    renum = np.empty(n, dtype=np.int64)
    renum[order] = np.arange(n)
    return np.asarray(nodes)[order], renum[remap]


def _root(rep, i):
    while rep[i] != i:
        rep[i] = rep[rep[i]]
        i = rep[i]
    return i


def _node_blocks(mesh: Mesh):
    """Set of element blocks touching each node."""
    blocks = [set() for _ in range(mesh.n_nodes)]
    for _, ids, conn in mesh.groups():
        for e, c in zip(ids, conn):
            for v in c:
                blocks[v].add(int(mesh.region_id[e]))
    return blocks


def _classify_nodes(ifm: Mesh, source: Mesh, tol):
    marker = np.full(ifm.n_nodes, NEW_CROSS_BLOCK, dtype=np.int64)
    src = np.full(ifm.n_nodes, -1, dtype=np.int64)
    blk = IFMMesh(ifm, marker, src).node_blocks()
    src_blocks = _node_blocks(source)
    tree = cKDTree(source.nodes)
    hits = tree.query_ball_point(ifm.nodes, tol)
    new = []
    for i, h in enumerate(hits):
        if not h:
            new.append(i)
            continue
        h = sorted(h)
        compatible = [s for s in h if blk[i] in src_blocks[s]]
        marker[i] = INHERITED
        src[i] = compatible[0] if compatible else h[0]
    if new:
        new = np.asarray(new)
        structure = build_search_structure(source)
        found = find_source_elems(ifm.nodes[new], blk[new], structure, source)
        marker[new] = np.where(found >= 0, NEW_SAME_BLOCK, NEW_CROSS_BLOCK)
    return marker, src


# ------------------------------------------------------------------ search


@dataclass(frozen=True, eq=False)
class SearchStructure:
    """Centroid tree plus an optional direct lookup for uniform grids."""

    tree: cKDTree
    radius: float
    is_uniform: bool
    lookup: np.ndarray | None = None
    origin: np.ndarray | None = None
    spacing: np.ndarray | None = None


def _uniform_lookup(mesh: Mesh):
    if mesh.n_elements == 0 or np.any(mesh.cells[:, 3] < 0):
        return None
    xs = np.unique(mesh.nodes[:, 0])
    ys = np.unique(mesh.nodes[:, 1])
    if len(xs) < 2 or len(ys) < 2 or mesh.n_elements != (len(xs) - 1) * (len(ys) - 1):
        return None
    dx, dy = np.diff(xs), np.diff(ys)
    scale = max(np.ptp(xs), np.ptp(ys))
    if np.ptp(dx) > 1e-12 * scale or np.ptp(dy) > 1e-12 * scale:
        return None
    hx, hy = dx.mean(), dy.mean()
    lo = mesh.nodes[mesh.cells].min(axis=1)
    hi = mesh.nodes[mesh.cells].max(axis=1)
    if np.any(np.abs(hi - lo - [hx, hy]) > 1e-12 * scale):
        return None
    i = np.rint((lo[:, 0] - xs[0]) / hx).astype(np.int64)
    j = np.rint((lo[:, 1] - ys[0]) / hy).astype(np.int64)
    table = -np.ones((len(xs) - 1, len(ys) - 1), dtype=np.int64)
    table[i, j] = np.arange(mesh.n_elements)
    if np.any(table < 0):
        return None
    return table, np.array([xs[0], ys[0]]), np.array([hx, hy])


def build_search_structure(mesh: Mesh) -> SearchStructure:
    """Centroid k-d tree and, for structured uniform quad meshes, a cell table."""
    tree = cKDTree(mesh.centroids())
    radius = float(element_radii(mesh).max()) if mesh.n_elements else 0.0
    lk = _uniform_lookup(mesh)
    if lk is None:
        return SearchStructure(tree, radius, False)
    return SearchStructure(tree, radius, True, *lk)


def _contains(mesh: Mesh, elems, pts, tol=1e-10):
    ok = np.zeros(len(elems), dtype=bool)
    xi_all = np.zeros((len(elems), 2))
    is_quad = mesh.cells[elems, 3] >= 0
    for kind, mask in ((TRI3, ~is_quad), (QUAD4, is_quad)):
        if mask.any():
            nen = 4 if kind == QUAD4 else 3
            xi = inverse_map(kind, mesh.nodes[mesh.cells[elems[mask], :nen]], pts[mask])
            xi_all[mask] = xi
            ok[mask] = contains_reference(kind, xi, tol)
    return ok, xi_all


def find_source_elems(points, blocks, structure: SearchStructure, mesh: Mesh, region_ids=None):
    """Vectorised :func:`find_source_elem`; returns -1 where nothing is found."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    blocks = np.broadcast_to(np.asarray(blocks), (len(pts),))
    region = mesh.region_id if region_ids is None else np.asarray(region_ids)
    found = np.full(len(pts), -1, dtype=np.int64)
    if structure.is_uniform:
        ij = np.floor((pts - structure.origin) / structure.spacing).astype(np.int64)
        shape = np.array(structure.lookup.shape)
        ij = np.clip(ij, 0, shape - 1)
        cand = structure.lookup[ij[:, 0], ij[:, 1]]
        ok, _ = _contains(mesh, cand, pts)
        ok &= region[cand] == blocks
        found[ok] = cand[ok]
    todo = np.flatnonzero(found < 0)
    if len(todo) == 0:
        return found
    cands = structure.tree.query_ball_point(pts[todo], structure.radius * (1 + 1e-9) + 1e-300)
    rows = np.repeat(todo, [len(c) for c in cands])
    cols = np.fromiter((i for c in cands for i in c), dtype=np.int64, count=len(rows))
    keep = region[cols] == blocks[rows]
    rows, cols = rows[keep], cols[keep]
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    ok, _ = _contains(mesh, cols, pts[rows])
    for r, c in zip(rows[ok][::-1], cols[ok][::-1]):
        found[r] = c
    return found


def find_source_elem(x, block, structure: SearchStructure, mesh: Mesh, region_ids=None):
    """Containing source element of the given block, or ``None``.

    The uniform lookup is tried first; otherwise (or when it misses) the
    centroid tree supplies candidates, filtered by block and exact
    containment. Among several containing elements the lowest id wins.
    """
    e = int(find_source_elems([x], [block], structure, mesh, region_ids)[0])
    return None if e < 0 else e


# ------------------------------------------------------------------ projection


def _closest_same_block(points, blocks, mesh: Mesh):
    """Closest source element of the matching block for each point."""
    polys = mesh.polygons()
    out = np.full(len(points), -1, dtype=np.int64)
    for b in np.unique(blocks):
        ids = np.flatnonzero(mesh.region_id == b)
        sel = np.flatnonzero(blocks == b)
        if len(ids) == 0:
            raise ProjectionError(f"no source element in block {b}")
        tree = shapely.STRtree(polys[ids])
        q, t = tree.query_nearest(shapely.points(points[sel]), all_matches=True)
        best = np.full(len(sel), np.iinfo(np.int64).max)
        np.minimum.at(best, q, ids[t])
        out[sel] = best
    return out


def project_solution(ifm: IFMMesh, source: Mesh, u) -> NodalField:
    """Transfer a nodal field from ``source`` to the IFM nodes.

    Marker 0 copies the source value, marker 1 interpolates in the
    containing same-block element and everything else (including failed
    block checks or searches) uses ``u(x*) + grad u(x*) (x - x*)`` with
    ``x*`` the node of the closest same-block element nearest to ``x``.
    """
    vals = u.values if isinstance(u, NodalField) else np.asarray(u, dtype=float)
    vals = vals.reshape(source.n_nodes, -1)
    tgt = ifm.mesh
    out = np.full((tgt.n_nodes, vals.shape[1]), np.nan)
    blk = ifm.node_blocks()
    src_blocks = _node_blocks(source)

    taylor = []
    for i in np.flatnonzero(ifm.node_marker == INHERITED):
        s = int(ifm.source_node_id[i])
        if blk[i] in src_blocks[s]:
            out[i] = vals[s]
        else:
            log.info("node %d: source node %d is not in block %d, using recovery", i, s, blk[i])
            taylor.append(i)

    inner = np.flatnonzero(ifm.node_marker == NEW_SAME_BLOCK)
    if len(inner):
        structure = build_search_structure(source)
        elems = find_source_elems(tgt.nodes[inner], blk[inner], structure, source)
        hit = elems >= 0
        taylor.extend(inner[~hit].tolist())
        _interpolate(source, vals, elems[hit], tgt.nodes[inner[hit]], out, inner[hit])

    taylor.extend(np.flatnonzero(ifm.node_marker == NEW_CROSS_BLOCK).tolist())
    if taylor:
        taylor = np.asarray(sorted(taylor))
        x = tgt.nodes[taylor]
        elems = _closest_same_block(x, blk[taylor], source)
        for i, e, xt in zip(taylor, elems, x):
            conn = source.connectivity(e)
            coords = source.nodes[conn]
            k = int(np.argmin(np.linalg.norm(coords - xt, axis=1)))
            kind = source.kind(e)
            xs = coords[k]
            xi = inverse_map(kind, coords[None], xs[None])
            _, dN = shape_at(kind, coords[None], xi)
            grad = vals[conn].T @ dN[0]  # (C, 2)
            out[i] = vals[conn[k]] + grad @ (xt - xs)
    return NodalField(out, tgt, getattr(u, "name", "u"))


def _interpolate(mesh, vals, elems, pts, out, rows):
    is_quad = mesh.cells[elems, 3] >= 0
    for kind, mask in ((TRI3, ~is_quad), (QUAD4, is_quad)):
        if not mask.any():
            continue
        nen = 4 if kind == QUAD4 else 3
        conn = mesh.cells[elems[mask], :nen]
        coords = mesh.nodes[conn]
        xi = inverse_map(kind, coords, pts[mask])
        N, _ = shape_at(kind, coords, xi)
        out[rows[mask]] = np.einsum("pa,pac->pc", N, vals[conn])


# ------------------------------------------------------------------ IO


def format_ifm(ifm: IFMMesh) -> str:
    from .mesh import format_mesh

    lines = [format_mesh(ifm.mesh).rstrip("\n"), f"node_markers {ifm.mesh.n_nodes}"]
    lines += [str(int(m)) for m in ifm.node_marker]
    lines.append(f"source_node_ids {ifm.mesh.n_nodes}")
    lines += [str(int(s)) for s in ifm.source_node_id]
    return "\n".join(lines) + "\n"


def parse_ifm(text: str) -> IFMMesh:
    mesh, rest = parse_mesh(text)
    sections = {}
    pos = 0
    while pos < len(rest):
        head = rest[pos].split()
        if len(head) != 2 or head[0] not in ("node_markers", "source_node_ids"):
            raise MeshError(f"bad IFM section header: {rest[pos]!r}")
        n = int(head[1])
        if n != mesh.n_nodes:
            raise MeshError(f"section {head[0]} has {n} entries for {mesh.n_nodes} nodes")
        sections[head[0]] = np.array([int(v) for v in rest[pos + 1 : pos + 1 + n]], dtype=np.int64)
        pos += 1 + n
    for key in ("node_markers", "source_node_ids"):
        if key not in sections:
            raise MeshError(f"IFM file lacks the {key} section")
    return IFMMesh(mesh, sections["node_markers"], sections["source_node_ids"])


def write_ifm(ifm: IFMMesh, path) -> None:
    Path(path).write_text(format_ifm(ifm))


def read_ifm(path) -> IFMMesh:
    return parse_ifm(Path(path).read_text())


__all__ = [
    "IFMMesh",
    "ProjectionError",
    "SearchStructure",
    "SliverWarning",
    "build_search_structure",
    "conformalize",
    "find_source_elem",
    "find_source_elems",
    "format_ifm",
    "parse_ifm",
    "project_solution",
    "read_ifm",
    "triangulate_polygon",
    "write_ifm",
]
