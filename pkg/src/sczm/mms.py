"""Manufactured solutions for a straight cohesive interface at ``x = x0``.

Domain ``[-0.5, 0.5]^2``, plane strain with ``nu = 0``. Left of ``x0``
(region 1) the field is ``u1 = (-sin(pi x), 0)``; right of it (region 2)
``u2 = u1 - g`` with ``g = (a x^2 + b, 0)`` (quadratic case) or
``(a x + b, 0)`` (linear case). Traction continuity and the linear
cohesive law ``T = [[u]] = u2 - u1 = -g`` at ``x0`` fix ``a`` and ``b``.

Fields, body forces and Dirichlet data are evaluated by region so that an
element assigned to a region sees that region's smooth extension, which is
the standard treatment for surrogate-interface discretisations.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass

import numpy as np

from .constitutive import ElasticMaterial, Linear
from .elements import QUADRATURE_HIGH, physical_gradients
from .mesh import Mesh, build_crossed_tri, characteristic_size, split_by_region
from .solver import BoundaryCondition, Problem, Schedule, SolverConfig, run_load_stepping
from .surrogate import GrainSet, assign_grain_ids, build_surrogate_interface

DOMAIN = (-0.5, -0.5, 0.5, 0.5)
LEFT, RIGHT = 1, 2


@dataclass(frozen=True)
class ManufacturedCase:
    kind: str
    x0: float
    E_left: float
    E_right: float
    nu: float
    a: float
    b: float

    @property
    def degree(self) -> int:
        return 2 if self.kind == "quadratic" else 1

    def g(self, x):
        x = np.asarray(x, dtype=float)
        return self.a * x**self.degree + self.b

    def dg(self, x):
        x = np.asarray(x, dtype=float)
        return self.degree * self.a * x ** (self.degree - 1)

    def d2g(self, x):
        x = np.asarray(x, dtype=float)
        return np.full_like(x, 2 * self.a if self.degree == 2 else 0.0)

    def E(self, region):
        return np.where(np.asarray(region) == LEFT, self.E_left, self.E_right)

    def materials(self):
        return {LEFT: ElasticMaterial(self.E_left, self.nu), RIGHT: ElasticMaterial(self.E_right, self.nu)}

    def grains(self) -> GrainSet:
        x0, y0, x1, y1 = DOMAIN
        return GrainSet.from_polygons(
            {
                LEFT: [(x0, y0), (self.x0, y0), (self.x0, y1), (x0, y1)],
                RIGHT: [(self.x0, y0), (x1, y0), (x1, y1), (self.x0, y1)],
            }
        )


def build_mms_case(kind: str) -> ManufacturedCase:
    """Quadratic-jump (``E = 0.1 | 1``) or linear-jump (``E = 0.1 | 0.1``) case."""
    x0 = 0.25
    c = np.pi * np.cos(np.pi * x0)
    if kind == "quadratic":
        El, Er = 0.1, 1.0
        # El * (-c) = Er * (-c - 2 a x0)
        a = c * (El - Er) / (2 * x0 * Er)
        b = El * c - a * x0**2
    elif kind == "linear":
        El = Er = 0.1
        # El * (-c) = Er * (-c - a)  ->  a = 0 when the moduli match
        a = c * (El - Er) / Er
        b = El * c - a * x0
    else:
        raise ValueError(f"unknown manufactured case {kind!r}")
    return ManufacturedCase(kind, x0, El, Er, 0.0, float(a), float(b))


def region_of(case: ManufacturedCase, x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return np.where(x[:, 0] < case.x0, LEFT, RIGHT)


def exact_by_region(case: ManufacturedCase, x, region):
    """Displacement of a region's smooth field at points ``x`` (P, 2)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    ux = -np.sin(np.pi * x[:, 0])
    ux = np.where(np.asarray(region) == RIGHT, ux - case.g(x[:, 0]), ux)
    return np.column_stack([ux, np.zeros_like(ux)])


def exact_solution(case: ManufacturedCase, x):
    """Exact displacement with the side chosen by ``x`` versus ``x0``."""
    return exact_by_region(case, x, region_of(case, x))


def stress_by_region(case, x, region):
    """sigma_xx of the exact field (nu = 0, so s_yy = s_xy = 0)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    du = -np.pi * np.cos(np.pi * x[:, 0])
    du = np.where(np.asarray(region) == RIGHT, du - case.dg(x[:, 0]), du)
    return case.E(region) * du


def body_force_by_region(case, x, region):
    """``b = -div sigma`` of a region's field."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d2u = np.pi**2 * np.sin(np.pi * x[:, 0])
    d2u = np.where(np.asarray(region) == RIGHT, d2u - case.d2g(x[:, 0]), d2u)
    bx = -case.E(region) * d2u
    return np.column_stack([bx, np.zeros_like(bx)])


def body_force(case, x):
    return body_force_by_region(case, x, region_of(case, x))


def interface_residuals(case: ManufacturedCase):
    """(traction continuity, cohesive relation, jump definition) residuals at x0."""
    x0 = np.array([[case.x0, 0.0]])
    s1 = stress_by_region(case, x0, LEFT)[0]
    s2 = stress_by_region(case, x0, RIGHT)[0]
    jump = exact_by_region(case, x0, RIGHT)[0] - exact_by_region(case, x0, LEFT)[0]
    g = np.array([case.g(case.x0), 0.0])
    # traction on the interface with n = e_x from region 1 to region 2 is T = [[u]]
    return abs(s1 - s2), abs(s1 - jump[0]), float(np.abs(jump + g).max())


def l2_error(mesh: Mesh, u_h, case: ManufacturedCase) -> float:
    """Combined L2 displacement error using each element's region field."""
    u = np.asarray(u_h, dtype=float).reshape(-1, 2)
    total = 0.0
    for kind, ids, conn in mesh.groups():
        xi, w = QUADRATURE_HIGH[kind]
        N, _, detJ = physical_gradients(kind, xi, mesh.nodes[conn])
        x = np.einsum("qa,eai->eqi", N, mesh.nodes[conn])
        uh = np.einsum("qa,eai->eqi", N, u[conn])
        reg = np.repeat(mesh.region_id[ids], len(w))
        ue = exact_by_region(case, x.reshape(-1, 2), reg).reshape(uh.shape)
        total += float(np.sum(np.sum((uh - ue) ** 2, axis=2) * detJ * w))
    return total**0.5


def mms_problem(case: ManufacturedCase, n: int):
    """Surrogate problem on an ``n`` x ``n`` crossed-triangle mesh."""
    base = build_crossed_tri(n, n, DOMAIN)
    grains = case.grains()
    region = assign_grain_ids(base, grains)
    base = base.with_regions(region)
    itf = build_surrogate_interface(base, grains)
    mesh, _ = split_by_region(base)
    bcs = []
    for tag in ("left", "right", "bottom", "top"):
        for comp in (0, 1):
            bcs.append(
                BoundaryCondition(
                    "dirichlet",
                    tag,
                    comp,
                    Schedule.constant(1.0),
                    spatial=lambda x, r, c=comp: exact_by_region(case, x, r)[:, c],
                )
            )
    return Problem(
        mesh=mesh,
        interface=itf,
        materials=case.materials(),
        tsl=Linear(1.0),
        bcs=bcs,
        body_force=lambda x, r: body_force_by_region(case, x, r),
    )


def solve_level(case, n, config: SolverConfig | None = None):
    cfg = config or SolverConfig(dt=1.0, t_end=1.0)
    prob = mms_problem(case, n)
    _, u, _ = run_load_stepping(prob, cfg)
    return prob, u


def fit_slope(h, err) -> float:
    """Least-squares slope of log(err) against log(h)."""
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


def level_cells(level: int) -> int:
    """Cells per side at a refinement level: ``2**(level - 1) + 1``.

    Level ``k`` gives ``h_Omega = 1 / (2 n)`` close to ``2**-k``. The odd
    count keeps ``x0 = 0.25`` off the mesh lines, so the interface is never
    mesh-fitted.
    """
    if level < 1:
        raise ValueError("levels start at 1")
    return 2 ** (level - 1) + 1


def convergence_study(kind, levels=(3, 4, 5, 6), ablation=True):
    """Errors per level for SCZM and (optionally) the plain-CZM ablation.

    Returns a list of dict rows with ``level, n, h, error, slope`` and,
    with ablation, ``error_plain, slope_plain``; local slopes compare each
    level with the previous one.
    """
    if len(levels) < 3:
        raise ValueError("a convergence study needs at least 3 levels")
    case = build_mms_case(kind)
    base = SolverConfig(dt=1.0, t_end=1.0)
    rows = []
    for lev in levels:
        n = level_cells(lev)
        t0 = time.perf_counter()
        prob, u = solve_level(case, n, base)
        row = {
            "level": lev,
            "n": n,
            "h": characteristic_size(prob.mesh),
            "error": l2_error(prob.mesh, u, case),
        }
        if ablation:
            prob_p, u_p = solve_level(case, n, SolverConfig.plain_czm(dt=1.0, t_end=1.0))
            row["error_plain"] = l2_error(prob_p.mesh, u_p, case)
        row["seconds"] = time.perf_counter() - t0
        rows.append(row)
    for i, row in enumerate(rows):
        for key, skey in (("error", "slope"), ("error_plain", "slope_plain")):
            if key not in row:
                continue
            if i == 0:
                row[skey] = float("nan")
            else:
                prev = rows[i - 1]
                row[skey] = float(np.log(row[key] / prev[key]) / np.log(row["h"] / prev["h"]))
    return rows


def summary_slope(rows, key="error", last=3) -> float:
    """Least-squares slope over the ``last`` finest levels."""
    sel = rows[-last:]
    return fit_slope([r["h"] for r in sel], [r[key] for r in sel])


def rows_to_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt_cell(r.get(c, "")) for c in columns])
    return buf.getvalue()


def _fmt_cell(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return v
