"""Ready-made single-interface benchmarks and the five-grain test RVE.

The single-interface benchmark is a unit square with a cohesive interface,
homogeneous elasticity (``E = 1e3, nu = 0.3``), an exponential law
(``G_c = 50, delta0 = 0.1, beta = 0``), ``u_x = 0`` on the left edge,
``u_y = 0`` on the bottom edge and ``u_x = 1e-2 t`` on the right edge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import shapely
from scipy.spatial import Voronoi
from shapely.geometry import Polygon

from .constitutive import ElasticMaterial, Exponential, von_mises
from .mesh import Mesh, build_crossed_tri, build_structured_quad, locate_points, split_by_region, split_fitted_interface
from .solver import BoundaryCondition, Problem, Schedule, SolverConfig, run_load_stepping, stress_at
from .surrogate import GrainSet, assign_grain_ids, build_surrogate_interface, fitted_interface, line_grains

UNIT = (0.0, 0.0, 1.0, 1.0)
BENCH_E, BENCH_NU = 1.0e3, 0.3
BENCH_RATE = 1.0e-2
BENCH_T_END = 200.0
ROTATED_SLOPE = np.sqrt(3.0)


def benchmark_tsl():
    return Exponential(G_c=50.0, delta0=0.1, beta=0.0)


def benchmark_bcs(rate=BENCH_RATE, t_end=BENCH_T_END):
    return [
        BoundaryCondition("dirichlet", "left", 0, Schedule.constant(0.0)),
        BoundaryCondition("dirichlet", "bottom", 1, Schedule.constant(0.0)),
        BoundaryCondition("dirichlet", "right", 0, Schedule.ramp(rate, t_end)),
    ]


def _materials(ids=(1, 2)):
    return {i: ElasticMaterial(BENCH_E, BENCH_NU) for i in ids}


def surrogate_problem(base: Mesh, grains: GrainSet, tsl=None, t_end=BENCH_T_END) -> Problem:
    """Assign grains, build the surrogate interface and split the mesh."""
    base = base.with_regions(assign_grain_ids(base, grains))
    itf = build_surrogate_interface(base, grains)
    mesh, _ = split_by_region(base)
    return Problem(mesh, itf, _materials(grains.ids), tsl or benchmark_tsl(), benchmark_bcs(t_end=t_end))


def fitted_problem(mesh: Mesh, tsl=None, t_end=BENCH_T_END) -> Problem:
    """Plain cohesive problem on a mesh already split along its interface."""
    ids = tuple(int(r) for r in np.unique(mesh.region_id))
    return Problem(mesh, fitted_interface(mesh), _materials(ids), tsl or benchmark_tsl(), benchmark_bcs(t_end=t_end))


def vertical_benchmark(nx=7, ny=17, x_interface=0.5, tsl=None, t_end=BENCH_T_END) -> Problem:
    """Vertical interface on a crossed-triangle mesh (476 triangles by default)."""
    grains = line_grains((x_interface, 0.0), (x_interface, 1.0), UNIT)
    return surrogate_problem(build_crossed_tri(nx, ny, UNIT), grains, tsl, t_end)


def vertical_fitted_pair(n=8, tsl=None, t_end=BENCH_T_END):
    """The same vertical-interface problem as fitted CZM and as SCZM.

    With ``n`` even the line ``x = 0.5`` lies on mesh lines, so the
    surrogate interface coincides with the true one.
    """
    if n % 2:
        raise ValueError("n must be even so that x = 0.5 is a mesh line")
    quad = build_structured_quad(n, n, UNIT)
    split = split_fitted_interface(quad, ((0.5, 0.0), (0.5, 1.0)))
    fitted = fitted_problem(split, tsl, t_end)
    grains = line_grains((0.5, 0.0), (0.5, 1.0), UNIT)
    sczm = surrogate_problem(quad, grains, tsl, t_end)
    return fitted, sczm


def rotated_grains() -> GrainSet:
    """Square cut by ``y = sqrt(3) (x - 0.5) + 0.5`` (30 degrees off vertical)."""
    p = np.array([0.5, 0.5])
    return line_grains(p, p + np.array([1.0, ROTATED_SLOPE]), UNIT)


def rotated_problem(n=32, tsl=None, t_end=50.0) -> Problem:
    return surrogate_problem(build_structured_quad(n, n, UNIT), rotated_grains(), tsl, t_end)


def rotated_reference(n=128, tsl=None, t_end=50.0) -> Problem:
    """Interface-fitted reference: conformalized fine quad mesh, plain CZM."""
    from .conformalize import conformalize

    ifm = conformalize(build_structured_quad(n, n, UNIT), rotated_grains())
    return fitted_problem(ifm.mesh, tsl, t_end)


def diagonal_points(n=401, margin=1e-3):
    s = np.linspace(margin, 1.0 - margin, n)
    return np.column_stack([s, s])


def von_mises_along(problem: Problem, u, points, nu=BENCH_NU):
    """Plane-strain von Mises stress at points (containing element, lowest id)."""
    elems, _ = locate_points(problem.mesh, points)
    if np.any(elems < 0):
        raise ValueError("sample points outside the mesh")
    s = stress_at(problem, u, elems, points)
    szz = nu * (s[:, 0] + s[:, 1])
    return von_mises(s[:, 0], s[:, 1], s[:, 2], szz)


def profile_distance(a, b, points) -> float:
    """Discrete L2 distance of two profiles sampled along a segment."""
    s = np.linalg.norm(points - points[0], axis=1)
    return float(np.sqrt(np.trapezoid((np.asarray(a) - np.asarray(b)) ** 2, s)))


def sample_profiles(problem: Problem, config: SolverConfig, times, points):
    """Run the load history and sample von Mises at the requested times."""
    want = {round(float(t), 12) for t in times}
    out = {}

    def grab(rec, u, _state):
        key = round(rec.t, 12)
        if key in want:
            out[key] = von_mises_along(problem, u, points)

    run_load_stepping(problem, config, callback=grab)
    return [out[round(float(t), 12)] for t in times]


# ------------------------------------------------------------------ RVE

RVE_BOUNDS = (-0.6, -0.4, 0.6, 0.4)
RVE_SEEDS = np.array([[-0.35, -0.15], [-0.3, 0.22], [0.05, -0.05], [0.38, 0.2], [0.32, -0.25]])


def voronoi_grains(seeds, bounds) -> GrainSet:
    """Voronoi cells of ``seeds`` clipped to a rectangle, ids from 1."""
    seeds = np.asarray(seeds, dtype=float)
    x0, y0, x1, y1 = bounds
    span = 10.0 * max(x1 - x0, y1 - y0)
    c = np.array([(x0 + x1) / 2, (y0 + y1) / 2])
    far = c + span * np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]])
    vor = Voronoi(np.vstack([seeds, far]))
    box = shapely.box(x0, y0, x1, y1)
    polys = {}
    for i in range(len(seeds)):
        region = vor.regions[vor.point_region[i]]
        if -1 in region or not region:
            raise ValueError("unbounded Voronoi cell")
        cell = Polygon(vor.vertices[region]).convex_hull.intersection(box)
        xy = np.asarray(shapely.get_coordinates(shapely.normalize(cell).exterior))
        polys[i + 1] = xy
    return GrainSet.from_polygons(polys)


def five_grain_rve() -> GrainSet:
    return voronoi_grains(RVE_SEEDS, RVE_BOUNDS)


@dataclass(frozen=True)
class AblationResult:
    time: float
    sczm: float
    no_directional: float
    no_sczm: float

    @property
    def ordered(self) -> bool:
        return self.sczm < self.no_directional < self.no_sczm


def rotated_ablation(n=32, n_ref=128, times=(30.0, 50.0), dt=1.0, n_samples=401):
    """Von Mises distance to the fitted reference for the three variants."""
    t_end = max(times)
    pts = diagonal_points(n_samples)
    base = SolverConfig(dt=dt, t_end=t_end)
    ref = sample_profiles(rotated_reference(n_ref, t_end=t_end), SolverConfig.plain_czm(dt=dt, t_end=t_end), times, pts)
    prob = rotated_problem(n, t_end=t_end)
    variants = {
        "sczm": base,
        "no_directional": SolverConfig(dt=dt, t_end=t_end, use_directional_correction=False),
        "no_sczm": SolverConfig.plain_czm(dt=dt, t_end=t_end),
    }
    prof = {k: sample_profiles(prob, cfg, times, pts) for k, cfg in variants.items()}
    return [
        AblationResult(t, *(profile_distance(prof[k][i], ref[i], pts) for k in variants))
        for i, t in enumerate(times)
    ]
