"""Mesh container, structured generators, facet topology and plain-text IO."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .elements import KIND_BY_NNODES, QUAD4, QUADRATURE, TRI3, physical_gradients, polygon_area

LOCAL_EDGES = {
    TRI3: ((0, 1), (1, 2), (2, 0)),
    QUAD4: ((0, 1), (1, 2), (2, 3), (3, 0)),
}


class MeshError(ValueError):
    """Invalid mesh input or geometry."""


class TopologyError(MeshError):
    """Non-manifold facet connectivity."""


@dataclass(frozen=True, eq=False)
class Mesh:
    """Linear 2D mesh of tri3 and quad4 cells.

    ``cells`` is an (M, 4) integer array; triangles pad the last slot
    with -1. ``boundary_tags`` maps a name to the node ids on it.
    """

    nodes: np.ndarray
    cells: np.ndarray
    region_id: np.ndarray
    boundary_tags: dict = field(default_factory=dict)

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        cells = np.asarray(self.cells, dtype=np.int64)
        if cells.ndim != 2 or cells.shape[1] not in (3, 4):
            raise MeshError("cells must be an (M, 3) or (M, 4) array")
        if cells.shape[1] == 3:
            cells = np.hstack([cells, -np.ones((len(cells), 1), dtype=np.int64)])
        region = np.asarray(self.region_id, dtype=np.int64).reshape(-1)
        if len(region) == 1 and len(cells) != 1:
            region = np.full(len(cells), region[0], dtype=np.int64)
        if len(region) != len(cells):
            raise MeshError("one region id per element is required")
        used = cells[cells >= 0]
        if used.size and (used.min() < 0 or used.max() >= len(nodes)):
            raise MeshError("connectivity references a missing node")
        for arr in (nodes, cells, region):
            arr.setflags(write=False)
        tags = {k: np.asarray(v, dtype=np.int64) for k, v in self.boundary_tags.items()}
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "region_id", region)
        object.__setattr__(self, "boundary_tags", tags)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.cells)

    @property
    def nen(self) -> np.ndarray:
        return np.where(self.cells[:, 3] >= 0, 4, 3)

    def kind(self, e: int) -> str:
        return QUAD4 if self.cells[e, 3] >= 0 else TRI3

    def connectivity(self, e: int) -> np.ndarray:
        c = self.cells[e]
        return c[c >= 0]

    def groups(self):
        """Yield ``(kind, element_ids, connectivity)`` per element kind."""
        is_quad = self.cells[:, 3] >= 0
        for kind, mask in ((TRI3, ~is_quad), (QUAD4, is_quad)):
            ids = np.flatnonzero(mask)
            if len(ids):
                nen = 4 if kind == QUAD4 else 3
                yield kind, ids, self.cells[ids, :nen]

    def element_coords(self, e: int) -> np.ndarray:
        return self.nodes[self.connectivity(e)]

    def element_areas(self) -> np.ndarray:
        areas = np.empty(self.n_elements)
        for _, ids, conn in self.groups():
            areas[ids] = polygon_area(self.nodes[conn])
        return areas

    def centroids(self) -> np.ndarray:
        cen = np.empty((self.n_elements, 2))
        for _, ids, conn in self.groups():
            cen[ids] = self.nodes[conn].mean(axis=1)
        return cen

    def polygons(self, elements=None) -> np.ndarray:
        """Shapely polygons of the given elements (all by default)."""
        import shapely

        ids = range(self.n_elements) if elements is None else elements
        out = np.empty(len(ids), dtype=object)
        out[:] = [shapely.Polygon(self.element_coords(e)) for e in ids]
        return out

    def bounds(self):
        lo = self.nodes.min(axis=0)
        hi = self.nodes.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def with_regions(self, region_id) -> "Mesh":
        return Mesh(self.nodes, self.cells, region_id, self.boundary_tags)

    def validate(self):
        """Check the documented invariants; raise :class:`MeshError` if broken."""
        for kind, ids, conn in self.groups():
            xi, _ = QUADRATURE[kind]
            _, _, detJ = physical_gradients(kind, xi, self.nodes[conn])
            if np.any(detJ <= 0.0):
                bad = ids[np.any(detJ <= 0.0, axis=1)]
                raise MeshError(f"non-positive Jacobian in elements {bad[:5].tolist()}")
        interior_facets(self)
        return self


@dataclass(frozen=True)
class Facet:
    """Interior facet between two elements; ``normal`` points minus -> plus."""

    nodes: tuple
    minus_element: int
    plus_element: int
    normal: np.ndarray


@dataclass(eq=False)
class NodalField:
    """Per-node vector field attached to a mesh."""

    values: np.ndarray
    mesh: Mesh
    name: str = "u"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            if self.values.size % max(self.mesh.n_nodes, 1):
                raise MeshError("field value count must equal node count x components")
            self.values = self.values.reshape(self.mesh.n_nodes, -1)
        if self.values.shape[0] != self.mesh.n_nodes:
            raise MeshError("field value count must equal node count x components")


def _rect(bounds):
    x0, y0, x1, y1 = (float(b) for b in bounds)
    if not (np.isfinite([x0, y0, x1, y1]).all() and x1 > x0 and y1 > y0):
        raise MeshError(f"degenerate bounds {bounds!r}")
    return x0, y0, x1, y1


def _check_counts(nx, ny):
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise MeshError("nx and ny must be positive integers")
    return int(nx), int(ny)


def boundary_tags_for(nodes, bounds, tol=1e-12):
    """Node sets on the four sides of an axis-aligned rectangle."""
    x0, y0, x1, y1 = bounds
    scale = max(x1 - x0, y1 - y0)
    t = tol * scale
    x, y = nodes[:, 0], nodes[:, 1]
    return {
        "left": np.flatnonzero(np.abs(x - x0) <= t),
        "right": np.flatnonzero(np.abs(x - x1) <= t),
        "bottom": np.flatnonzero(np.abs(y - y0) <= t),
        "top": np.flatnonzero(np.abs(y - y1) <= t),
    }


def build_structured_quad(nx, ny, bounds=(0.0, 0.0, 1.0, 1.0), region_id=1) -> Mesh:
    """Uniform ``nx`` x ``ny`` grid of quad4 cells over ``(x0, y0, x1, y1)``."""
    nx, ny = _check_counts(nx, ny)
    x0, y0, x1, y1 = _rect(bounds)
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n00 = (j * (nx + 1) + i).ravel()
    cells = np.column_stack([n00, n00 + 1, n00 + nx + 2, n00 + nx + 1])
    return Mesh(nodes, cells, region_id, boundary_tags_for(nodes, (x0, y0, x1, y1)))


def build_crossed_tri(nx, ny, bounds=(0.0, 0.0, 1.0, 1.0), region_id=1) -> Mesh:
    """Structured grid with every cell split into four triangles about its centre."""
    nx, ny = _check_counts(nx, ny)
    x0, y0, x1, y1 = _rect(bounds)
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    corners = np.column_stack([X.ravel(), Y.ravel()])
    cx = 0.5 * (xs[:-1] + xs[1:])
    cy = 0.5 * (ys[:-1] + ys[1:])
    CX, CY = np.meshgrid(cx, cy)
    centers = np.column_stack([CX.ravel(), CY.ravel()])
    nodes = np.vstack([corners, centers])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n00 = (j * (nx + 1) + i).ravel()
    n10, n11, n01 = n00 + 1, n00 + nx + 2, n00 + nx + 1
    c = len(corners) + (j * nx + i).ravel()
    tris = np.stack(
        [
            np.column_stack([n00, n10, c]),
            np.column_stack([n10, n11, c]),
            np.column_stack([n11, n01, c]),
            np.column_stack([n01, n00, c]),
        ],
        axis=1,
    ).reshape(-1, 3)
    return Mesh(nodes, tris, region_id, boundary_tags_for(nodes, (x0, y0, x1, y1)))


def characteristic_size(mesh: Mesh) -> float:
    """``(|Omega| / N_e) ** (1/2)`` for a 2D mesh."""
    if mesh.n_elements == 0:
        raise MeshError("empty mesh")
    return float((mesh.element_areas().sum() / mesh.n_elements) ** 0.5)


def _edge_table(mesh: Mesh):
    """Map sorted node pairs to the list of (element, local edge) using them."""
    table = {}
    for kind, ids, conn in mesh.groups():
        for k, (a, b) in enumerate(LOCAL_EDGES[kind]):
            for e, na, nb in zip(ids.tolist(), conn[:, a].tolist(), conn[:, b].tolist()):
                key = (na, nb) if na < nb else (nb, na)
                table.setdefault(key, []).append((e, k))
    return table


def boundary_edges(mesh: Mesh):
    """Edges used by exactly one element, as ``(node_a, node_b, element)``."""
    out = []
    for (a, b), users in _edge_table(mesh).items():
        if len(users) == 1:
            out.append((a, b, users[0][0]))
    return out


def interior_facets(mesh: Mesh) -> list[Facet]:
    """Every interior facet once, with minus/plus elements resolved.

    The minus side is the element with the lower region id (ties: lower
    element id) and the normal points from minus to plus.
    """
    facets = []
    centroids = mesh.centroids()
    keys = sorted(_edge_table(mesh).items())
    for (a, b), users in keys:
        if len(users) > 2:
            raise TopologyError(f"facet {(a, b)} shared by {len(users)} elements")
        if len(users) < 2:
            continue
        (e1, _), (e2, _) = users
        r1, r2 = mesh.region_id[e1], mesh.region_id[e2]
        minus, plus = (e1, e2) if (r1, e1) < (r2, e2) else (e2, e1)
        pa, pb = mesh.nodes[a], mesh.nodes[b]
        t = pb - pa
        n = np.array([t[1], -t[0]]) / np.hypot(*t)
        if np.dot(n, 0.5 * (pa + pb) - centroids[minus]) < 0.0:
            n = -n
        facets.append(Facet((a, b), int(minus), int(plus), n))
    return facets


def split_by_region(mesh: Mesh):
    """Give every region its own copy of nodes shared between regions.

    Returns the split mesh and, per new node, the parent node id. A node
    keeps its id for the lowest region that uses it; further copies are
    appended in (node, region) order.
    """
    pairs = {}
    for e in range(mesh.n_elements):
        r = int(mesh.region_id[e])
        for v in mesh.connectivity(e).tolist():
            pairs.setdefault(v, set()).add(r)
    parent = list(range(mesh.n_nodes))
    copy_of = {}
    for v in sorted(pairs):
        regions = sorted(pairs[v])
        copy_of[(v, regions[0])] = v
        for r in regions[1:]:
            copy_of[(v, r)] = len(parent)
            parent.append(v)
    parent = np.asarray(parent, dtype=np.int64)
    cells = mesh.cells.copy()
    for e in range(mesh.n_elements):
        r = int(mesh.region_id[e])
        for k in range(4):
            v = cells[e, k]
            if v >= 0:
                cells[e, k] = copy_of[(int(v), r)]
    nodes = mesh.nodes[parent]
    tags = {}
    for name, ids in mesh.boundary_tags.items():
        tags[name] = np.flatnonzero(np.isin(parent, ids))
    return Mesh(nodes, cells, mesh.region_id, tags), parent


def split_fitted_interface(mesh: Mesh, interface, tol=1e-12) -> Mesh:
    """Duplicate the nodes on a mesh-aligned straight interface.

    Elements left of the directed segment ``((xa, ya), (xb, yb))`` get
    region id 1, those right of it region id 2, and nodes on the segment
    are split so each side owns its copy (a zero-thickness seam).
    """
    p0, p1 = (np.asarray(p, dtype=float) for p in interface)
    t = p1 - p0
    length = np.hypot(*t)
    if length == 0.0:
        raise MeshError("interface segment has zero length")
    t = t / length
    n = np.array([t[1], -t[0]])
    h = characteristic_size(mesh)
    eps = tol * max(1.0, length, h)
    side = (mesh.nodes - p0) @ n
    along = (mesh.nodes - p0) @ t
    on_line = np.abs(side) <= eps
    on_seg = on_line & (along >= -eps) & (along <= length + eps)
    region = np.empty(mesh.n_elements, dtype=np.int64)
    for e in range(mesh.n_elements):
        conn = mesh.connectivity(e)
        s = side[conn]
        s = s[~on_line[conn]]
        if np.all(s > 0):
            region[e] = 2
        elif np.all(s < 0):
            region[e] = 1
        else:
            raise MeshError(f"interface is not aligned with mesh facets (element {e})")
    # the segment must actually be made of facets; a partial line only splits
    # elements whose shared facet lies on it
    lo, hi = mesh.nodes.min(axis=0) - eps, mesh.nodes.max(axis=0) + eps
    keep = np.ones(mesh.n_nodes, dtype=bool)
    for p in (p0, p1):
        inside = np.all((p > lo + 2 * eps) & (p < hi - 2 * eps))
        if inside:
            keep &= np.hypot(*(mesh.nodes - p).T) > eps
    split_nodes = on_seg & keep
    new_nodes = [mesh.nodes]
    cells = mesh.cells.copy()
    copy = {}
    nxt = mesh.n_nodes
    for v in np.flatnonzero(split_nodes):
        copy[int(v)] = nxt
        nxt += 1
    if copy:
        new_nodes.append(mesh.nodes[list(copy)])
    for e in np.flatnonzero(region == 2):
        for k in range(4):
            v = int(cells[e, k])
            if v in copy:
                cells[e, k] = copy[v]
    nodes = np.vstack(new_nodes)
    tags = {}
    parent = np.concatenate([np.arange(mesh.n_nodes), np.array(list(copy), dtype=np.int64)])
    for name, ids in mesh.boundary_tags.items():
        tags[name] = np.flatnonzero(np.isin(parent, ids))
    return Mesh(nodes, cells, region, tags)


def element_radii(mesh: Mesh) -> np.ndarray:
    """Largest centroid-to-node distance per element."""
    cen = mesh.centroids()
    r = np.zeros(mesh.n_elements)
    for _, ids, conn in mesh.groups():
        r[ids] = np.linalg.norm(mesh.nodes[conn] - cen[ids, None, :], axis=2).max(axis=1)
    return r


def locate_points(mesh: Mesh, points, elements=None, tol=1e-10):
    """Containing element and reference coordinates for each point.

    Candidates are all elements whose centroid lies within the largest
    element radius of the point, so the search is exact. ``elements``
    optionally restricts the search. Points outside every element get -1.
    Ties on shared edges go to the lowest element id.
    """
    from scipy.spatial import cKDTree

    from .elements import contains_reference, inverse_map

    pts = np.atleast_2d(np.asarray(points, dtype=float))
    pool = np.arange(mesh.n_elements) if elements is None else np.asarray(elements, dtype=np.int64)
    found = np.full(len(pts), -1, dtype=np.int64)
    xi_out = np.zeros((len(pts), 2))
    if len(pool) == 0:
        return found, xi_out
    cen = mesh.centroids()[pool]
    rmax = float(element_radii(mesh)[pool].max())
    tree = cKDTree(cen)
    cands = tree.query_ball_point(pts, rmax * (1 + 1e-9) + 1e-300)
    rows = np.repeat(np.arange(len(pts)), [len(c) for c in cands])
    cols = pool[np.fromiter((i for c in cands for i in c), dtype=np.int64, count=len(rows))]
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    ok = np.zeros(len(rows), dtype=bool)
    xi_all = np.zeros((len(rows), 2))
    is_quad = mesh.cells[cols, 3] >= 0
    for kind, mask in ((TRI3, ~is_quad), (QUAD4, is_quad)):
        if not mask.any():
            continue
        nen = 4 if kind == QUAD4 else 3
        xi = inverse_map(kind, mesh.nodes[mesh.cells[cols[mask], :nen]], pts[rows[mask]])
        xi_all[mask] = xi
        ok[mask] = contains_reference(kind, xi, tol)
    for r, c, x in zip(rows[ok][::-1], cols[ok][::-1], xi_all[ok][::-1]):
        found[r] = c
        xi_out[r] = x
    return found, xi_out


# --------------------------------------------------------------------------- IO


def _fmt(x) -> str:
    return format(float(x), ".17g")


def format_mesh(mesh: Mesh) -> str:
    lines = [f"nodes {mesh.n_nodes} elements {mesh.n_elements} dim 2"]
    lines += [f"{_fmt(x)} {_fmt(y)}" for x, y in mesh.nodes]
    for e in range(mesh.n_elements):
        conn = mesh.connectivity(e)
        lines.append(
            " ".join([mesh.kind(e), *map(str, conn.tolist()), str(int(mesh.region_id[e]))])
        )
    return "\n".join(lines) + "\n"


def parse_mesh(text: str):
    """Parse a mesh; returns ``(mesh, remaining_lines)``."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = lines[0].split()
    if len(head) != 6 or head[0] != "nodes" or head[2] != "elements" or head[4] != "dim":
        raise MeshError(f"bad mesh header: {lines[0]!r}")
    n, m = int(head[1]), int(head[3])
    if head[5] != "2":
        raise MeshError("only dim 2 meshes are supported")
    try:
        nodes = np.array([[float(v) for v in ln.split()] for ln in lines[1 : 1 + n]]).reshape(n, 2)
    except ValueError as exc:
        raise MeshError(f"bad node coordinates: {exc}") from exc
    cells = -np.ones((m, 4), dtype=np.int64)
    region = np.empty(m, dtype=np.int64)
    for k, ln in enumerate(lines[1 + n : 1 + n + m]):
        parts = ln.split()
        kind = parts[0]
        nen = {TRI3: 3, QUAD4: 4}.get(kind)
        if nen is None or len(parts) != nen + 2:
            raise MeshError(f"bad element line: {ln!r}")
        cells[k, :nen] = [int(v) for v in parts[1 : 1 + nen]]
        region[k] = int(parts[-1])
    lo, hi = nodes.min(axis=0), nodes.max(axis=0)
    tags = boundary_tags_for(nodes, (lo[0], lo[1], hi[0], hi[1]))
    return Mesh(nodes, cells, region, tags), lines[1 + n + m :]


def write_mesh(mesh: Mesh, path) -> None:
    Path(path).write_text(format_mesh(mesh))


def read_mesh(path) -> Mesh:
    mesh, _ = parse_mesh(Path(path).read_text())
    return mesh


def format_field(values, name="u") -> str:
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    lines = [f"field {name} components {values.shape[1]}"]
    lines += [" ".join(_fmt(v) for v in row) for row in values]
    return "\n".join(lines) + "\n"


def write_field(field: NodalField, path) -> None:
    Path(path).write_text(format_field(field.values, field.name))


def read_field(path, mesh: Mesh) -> NodalField:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    head = lines[0].split()
    if len(head) != 4 or head[0] != "field" or head[2] != "components":
        raise MeshError(f"bad field header: {lines[0]!r}")
    c = int(head[3])
    try:
        vals = np.array([[float(v) for v in ln.split()] for ln in lines[1:]]).reshape(-1, c)
    except ValueError as exc:
        raise MeshError(f"bad field data in {path}: {exc}") from exc
    return NodalField(vals, mesh, head[1])


__all__ = [
    "Facet",
    "KIND_BY_NNODES",
    "Mesh",
    "MeshError",
    "NodalField",
    "TopologyError",
    "boundary_edges",
    "boundary_tags_for",
    "build_crossed_tri",
    "build_structured_quad",
    "characteristic_size",
    "format_field",
    "format_mesh",
    "element_radii",
    "interior_facets",
    "locate_points",
    "parse_mesh",
    "read_field",
    "read_mesh",
    "split_by_region",
    "split_fitted_interface",
    "write_field",
    "write_mesh",
]
