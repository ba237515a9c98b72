"""Quasi-static solver for cohesive interfaces on surrogate facets.

Residual for trial displacement ``u`` (test functions ``phi``)::

    R = int grad(phi) : sigma  -  int phi . b  -  int_N phi . t_N
        - sum_qp w a [[phi]] . t_coh([[u]]_s)
        + sum_qp w (phi+ . sigma+ tau_h  -  phi- . sigma- tau_h)

with ``a = |n . n_h|`` (area factor), ``[[u]]_s`` the jump extrapolated
along ``d`` (shifted jump) and the last line the directional correction.
Each correction is switched by :class:`SolverConfig`; with all of them off
the scheme is a plain cohesive-zone model on the facets, using ``n_h`` for
the mode split.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from .constitutive import CohesiveState, ElasticMaterial, cohesive_traction, commit_state
from .elements import QUAD4, QUADRATURE, QUADRATURE_HIGH, TRI3, inverse_map, physical_gradients, shape_at
from .mesh import Mesh, boundary_edges
from .surrogate import SurrogateInterface

log = logging.getLogger(__name__)


class ConfigurationError(ValueError):
    pass


class SolverError(RuntimeError):
    """Singular or non-finite linear solve."""


class StepFailure(RuntimeError):
    """Newton did not converge; carries the iteration log and last good data."""

    def __init__(self, message, log_rows=None, records=None, u=None, state=None):
        super().__init__(message)
        self.log = log_rows or []
        self.records = records or []
        self.u = u
        self.state = state


# ------------------------------------------------------------------ inputs


@dataclass(frozen=True)
class Schedule:
    """Piecewise-linear value of pseudo-time, defined on ``[t[0], t[-1]]``."""

    times: tuple
    values: tuple

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or len(t) != len(v) or len(t) == 0:
            raise ConfigurationError("schedule needs matching time/value lists")
        if np.any(np.diff(t) <= 0):
            raise ConfigurationError("schedule times must increase")
        if not np.all(np.isfinite(v)):
            raise ConfigurationError("schedule values must be finite")

    @classmethod
    def constant(cls, value, t_end=np.inf):
        return cls((0.0, float(t_end)), (float(value), float(value))) if np.isfinite(t_end) else cls((0.0,), (float(value),))

    @classmethod
    def ramp(cls, rate, t_end):
        return cls((0.0, float(t_end)), (0.0, float(rate) * t_end))

    def covers(self, t0, t1) -> bool:
        if len(self.times) == 1:
            return True
        return self.times[0] <= t0 + 1e-12 and self.times[-1] >= t1 - 1e-12

    def __call__(self, t) -> float:
        if len(self.times) == 1:
            return float(self.values[0])
        return float(np.interp(t, self.times, self.values))


@dataclass(frozen=True)
class BoundaryCondition:
    """Dirichlet component or Neumann traction on a tagged node set.

    Dirichlet value at a node: ``schedule(t) * spatial(x, region)`` (the
    spatial factor defaults to 1). Neumann traction: ``schedule(t) *
    direction`` on boundary edges whose nodes all carry the tag.
    """

    kind: str
    tag: str
    component: int | None = None
    schedule: Schedule = field(default_factory=lambda: Schedule.constant(0.0))
    spatial: Callable | None = None
    direction: tuple = (1.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann"):
            raise ConfigurationError(f"unknown boundary condition kind {self.kind!r}")
        if self.kind == "dirichlet" and self.component not in (0, 1):
            raise ConfigurationError("dirichlet condition needs component 0 or 1")


@dataclass(frozen=True)
class SolverConfig:
    newton_rel_tol: float = 1e-10
    newton_abs_tol: float = 1e-10
    max_newton_iters: int = 25
    dt: float = 1.0
    t_end: float = 1.0
    use_shifted_jump: bool = True
    use_area_factor: bool = True
    use_directional_correction: bool = True
    use_true_normal: bool = True

    def __post_init__(self):
        if not (self.newton_rel_tol > 0 and self.newton_abs_tol > 0):
            raise ConfigurationError("Newton tolerances must be positive")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if self.max_newton_iters < 1:
            raise ConfigurationError("max_newton_iters must be >= 1")

    @classmethod
    def plain_czm(cls, **kw) -> "SolverConfig":
        """All surrogate corrections off: cohesive law applied on the facets as-is."""
        kw.update(
            use_shifted_jump=False,
            use_area_factor=False,
            use_directional_correction=False,
            use_true_normal=False,
        )
        return cls(**kw)

    def flags(self):
        return (self.use_shifted_jump, self.use_area_factor, self.use_directional_correction)


@dataclass
class Problem:
    """Everything needed to assemble: mesh, interface, materials, law, loads."""

    mesh: Mesh
    interface: SurrogateInterface
    materials: dict
    tsl: object
    bcs: list = field(default_factory=list)
    body_force: Callable | None = None


@dataclass
class StepRecord:
    t: float
    imposed: float
    reactions: dict
    max_damage: float
    work_increment: float
    work: float
    newton_iters: int


# ------------------------------------------------------------------ assembly


def _voigt_B(dNdx):
    """Strain-displacement matrices (..., 3, 2 nen) for [e_xx, e_yy, 2 e_xy]."""
    shp = dNdx.shape[:-2]
    nen = dNdx.shape[-2]
    B = np.zeros(shp + (3, 2 * nen))
    B[..., 0, 0::2] = dNdx[..., 0]
    B[..., 1, 1::2] = dNdx[..., 1]
    B[..., 2, 0::2] = dNdx[..., 1]
    B[..., 2, 1::2] = dNdx[..., 0]
    return B


def _dofs(conn):
    return np.stack([2 * conn, 2 * conn + 1], axis=-1).reshape(conn.shape[:-1] + (-1,))


def _material_D(problem: Problem, regions):
    out = np.empty((len(regions), 3, 3))
    for r in np.unique(regions):
        mat = problem.materials.get(int(r))
        if mat is None:
            raise ConfigurationError(f"no material assigned to region {int(r)}")
        out[regions == r] = mat.D
    return out


def _node_regions(mesh: Mesh):
    reg = np.full(mesh.n_nodes, -1, dtype=np.int64)
    for e in range(mesh.n_elements):
        c = mesh.connectivity(e)
        reg[c] = np.where(reg[c] < 0, mesh.region_id[e], reg[c])
    return reg


class Assembler:
    """Precomputed operators for one problem and flag set.

    The bulk and directional terms are linear in ``u`` and assembled once;
    the cohesive term is re-evaluated per Newton iteration.
    """

    def __init__(self, problem: Problem, config: SolverConfig):
        self.problem = problem
        self.config = config
        mesh = problem.mesh
        self.ndof = 2 * mesh.n_nodes
        self._bulk()
        self._interface()
        self._body()
        self._boundary()

    # bulk stiffness and body force -------------------------------------------
    def _bulk(self):
        mesh = self.problem.mesh
        rows, cols, vals = [], [], []
        self._stress_ops = {}
        for kind, ids, conn in mesh.groups():
            xi, w = QUADRATURE[kind]
            _, dNdx, detJ = physical_gradients(kind, xi, mesh.nodes[conn])
            if np.any(detJ <= 0):
                raise ConfigurationError("element with non-positive Jacobian")
            B = _voigt_B(dNdx)
            D = _material_D(self.problem, mesh.region_id[ids])
            Ke = np.einsum("eqki,ekl,eqlj,eq->eij", B, D, B, detJ * w)
            dofs = _dofs(conn)
            n = dofs.shape[1]
            rows.append(np.repeat(dofs, n, axis=1).ravel())
            cols.append(np.tile(dofs, (1, n)).ravel())
            vals.append(Ke.ravel())
        self.K_bulk = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.ndof, self.ndof),
        )

    def _body(self):
        self.f_body = np.zeros(self.ndof)
        bf = self.problem.body_force
        if bf is None:
            return
        mesh = self.problem.mesh
        for kind, ids, conn in mesh.groups():
            xi, w = QUADRATURE_HIGH[kind]
            N, _, detJ = physical_gradients(kind, xi, mesh.nodes[conn])
            x = np.einsum("qa,eai->eqi", N, mesh.nodes[conn])
            reg = np.repeat(mesh.region_id[ids], len(w))
            b = np.asarray(bf(x.reshape(-1, 2), reg)).reshape(len(ids), len(w), 2)
            fe = np.einsum("qa,eqi,eq->eai", N, b, detJ * w)
            np.add.at(self.f_body, _dofs(conn).ravel(), fe.reshape(-1))

    # interface operators -------------------------------------------------------
    def _side(self, elements, x):
        """Padded (4-node) connectivity, N and dNdx at points x in given elements."""
        mesh = self.problem.mesh
        P = len(elements)
        conn = np.zeros((P, 4), dtype=np.int64)
        N = np.zeros((P, 4))
        dNdx = np.zeros((P, 4, 2))
        is_quad = mesh.cells[elements, 3] >= 0
        for kind, mask in ((TRI3, ~is_quad), (QUAD4, is_quad)):
            if not mask.any():
                continue
            nen = 4 if kind == QUAD4 else 3
            c = mesh.cells[elements[mask], :nen]
            coords = mesh.nodes[c]
            xi = inverse_map(kind, coords, x[mask])
            n_, d_ = shape_at(kind, coords, xi)
            conn[mask, :nen] = c
            N[mask, :nen] = n_
            dNdx[mask, :nen] = d_
        return conn, N, dNdx

    def _interface(self):
        itf = self.problem.interface
        cfg = self.config
        F = itf.n_facets
        self.nq = nq = itf.n_qp
        if nq == 0:
            self.K_dir = sp.csr_matrix((self.ndof, self.ndof))
            self.qp_dofs = np.zeros((0, 16), dtype=np.int64)
            self.J = self.Phi = np.zeros((0, 2, 16))
            self.normal = np.zeros((0, 2))
            self.wa = np.zeros(0)
            return
        Q = itf.points.shape[1]
        x = itf.points.reshape(-1, 2)
        d = itf.d.reshape(-1, 2)
        em = np.repeat(itf.minus_element, Q)
        ep = np.repeat(itf.plus_element, Q)
        cm, Nm, Gm = self._side(em, x)
        cp, Np, Gp = self._side(ep, x)
        Mm, Mp = Nm, Np
        if cfg.use_shifted_jump:
            Mm = Nm + np.einsum("pai,pi->pa", Gm, d)
            Mp = Np + np.einsum("pai,pi->pa", Gp, d)
        # dof layout per qp: [minus 8 | plus 8]
        self.qp_dofs = np.concatenate([_dofs(cm), _dofs(cp)], axis=1)
        J = np.zeros((nq, 2, 16))
        Phi = np.zeros((nq, 2, 16))
        for i in range(2):
            J[:, i, i:8:2] = -Mm
            J[:, i, 8 + i :: 2] = Mp
            Phi[:, i, i:8:2] = -Nm
            Phi[:, i, 8 + i :: 2] = Np
        self.J, self.Phi = J, Phi
        nh = np.repeat(itf.n_h, Q, axis=0)
        n_true = itf.n.reshape(-1, 2)
        self.normal = n_true if cfg.use_true_normal else nh
        a = np.abs(np.sum(n_true * nh, axis=1)) if cfg.use_area_factor else np.ones(nq)
        self.wa = itf.weights.reshape(-1) * a
        # directional correction: + w phi+ . sigma+ tau - w phi- . sigma- tau
        mesh = self.problem.mesh
        tau = itf.tau.reshape(-1, 2)
        self.K_dir = sp.csr_matrix((self.ndof, self.ndof))
        if cfg.use_directional_correction and np.any(tau != 0):
            T = np.zeros((nq, 2, 3))
            T[:, 0, 0], T[:, 0, 2] = tau[:, 0], tau[:, 1]
            T[:, 1, 1], T[:, 1, 2] = tau[:, 1], tau[:, 0]
            w = itf.weights.reshape(-1)
            Kq = np.zeros((nq, 16, 16))
            for sgn, N_, G_, e_, sl in ((-1.0, Nm, Gm, em, slice(0, 8)), (1.0, Np, Gp, ep, slice(8, 16))):
                D = _material_D(self.problem, mesh.region_id[e_])
                B = _voigt_B(G_)
                Nmat = np.zeros((nq, 2, 8))
                Nmat[:, 0, 0::2] = N_
                Nmat[:, 1, 1::2] = N_
                Kq[:, sl, sl] = sgn * np.einsum("pia,pij,pjk,pkb,p->pab", Nmat, T, D, B, w)
            self.K_dir = self._scatter_matrix(Kq)

    def _scatter_matrix(self, Kq):
        dofs = self.qp_dofs
        rows = np.repeat(dofs, 16, axis=1).ravel()
        cols = np.tile(dofs, (1, 16)).ravel()
        return sp.csr_matrix((Kq.ravel(), (rows, cols)), shape=(self.ndof, self.ndof))

    # boundary data ---------------------------------------------------------------
    def _boundary(self):
        mesh = self.problem.mesh
        self.node_region = _node_regions(mesh)
        self.dirichlet = []
        self.neumann = []
        edges = boundary_edges(mesh)
        for bc in self.problem.bcs:
            nodes = mesh.boundary_tags.get(bc.tag)
            if nodes is None:
                raise ConfigurationError(f"unknown boundary tag {bc.tag!r}")
            if bc.kind == "dirichlet":
                spatial = None
                if bc.spatial is not None:
                    spatial = np.asarray(bc.spatial(mesh.nodes[nodes], self.node_region[nodes]), dtype=float)
                self.dirichlet.append((bc, 2 * nodes + bc.component, spatial))
            else:
                tagged = np.zeros(mesh.n_nodes, dtype=bool)
                tagged[nodes] = True
                f = np.zeros(self.ndof)
                vec = np.asarray(bc.direction, dtype=float)
                for a, b, _ in edges:
                    if tagged[a] and tagged[b]:
                        L = np.linalg.norm(mesh.nodes[b] - mesh.nodes[a])
                        for v in (a, b):
                            f[2 * v : 2 * v + 2] += 0.5 * L * vec
                self.neumann.append((bc, f))
        if self.dirichlet:
            self.fixed = np.unique(np.concatenate([d for _, d, _ in self.dirichlet]))
        else:
            self.fixed = np.zeros(0, dtype=np.int64)
        self.free = np.setdiff1d(np.arange(self.ndof), self.fixed)

    def dirichlet_values(self, t):
        vals = np.zeros(self.ndof)
        for bc, dofs, spatial in self.dirichlet:
            v = bc.schedule(t)
            vals[dofs] = v * (spatial if spatial is not None else 1.0)
        return vals[self.fixed]

    def imposed(self, t) -> float:
        vals = [bc.schedule(t) for bc, _, _ in self.dirichlet]
        return float(max(vals, key=abs)) if vals else 0.0

    def external(self, t):
        f = self.f_body.copy()
        for bc, fn in self.neumann:
            f += bc.schedule(t) * fn
        return f

    # evaluation ---------------------------------------------------------------------
    def jumps(self, u):
        if self.nq == 0:
            return np.zeros((0, 2))
        return np.einsum("pij,pj->pi", self.J, u[self.qp_dofs])

    def cohesive(self, u, state: CohesiveState, need_tangent=True):
        """Interface residual, tangent, trial state, jumps and physical traction."""
        if self.nq == 0:
            return np.zeros(self.ndof), sp.csr_matrix((self.ndof, self.ndof)), state, np.zeros((0, 2)), np.zeros((0, 2))
        j = self.jumps(u)
        t_coh, dt, trial = cohesive_traction(self.problem.tsl, j, self.normal, state)
        Rq = -np.einsum("pia,pi,p->pa", self.Phi, t_coh, self.wa)
        R = np.bincount(self.qp_dofs.ravel(), Rq.ravel(), minlength=self.ndof)
        K = None
        if need_tangent:
            Kq = -np.einsum("pia,pij,pjb,p->pab", self.Phi, dt, self.J, self.wa)
            K = self._scatter_matrix(Kq)
        return R, K, trial, j, -t_coh

    def residual(self, u, state, t=0.0):
        Rc, _, trial, _, _ = self.cohesive(u, state, need_tangent=False)
        return self.K_bulk @ u + self.K_dir @ u + Rc - self.external(t), trial

    def tangent(self, u, state):
        _, Kc, _, _, _ = self.cohesive(u, state)
        return (self.K_bulk + self.K_dir + Kc).tocsr()


def assemble_residual(problem, u, state, config, t=0.0, assembler=None):
    """Global residual vector (no Dirichlet elimination)."""
    asm = assembler or Assembler(problem, config)
    return asm.residual(np.asarray(u, dtype=float).reshape(-1), state, t)[0]


def assemble_tangent(problem, u, state, config, assembler=None):
    """Consistent tangent of :func:`assemble_residual` as a CSR matrix."""
    asm = assembler or Assembler(problem, config)
    return asm.tangent(np.asarray(u, dtype=float).reshape(-1), state)


def shifted_jump(problem: Problem, u, config: SolverConfig | None = None, assembler=None):
    """Jumps at all interface quadrature points and their DOF derivative maps.

    Returns ``(jumps (Q, 2), J (Q, 2, 16), dofs (Q, 16))``; the jump is
    ``J @ u[dofs]`` and equals ``[[u]] + [[grad u]] d`` when shifting is on.
    """
    asm = assembler or Assembler(problem, config or SolverConfig())
    u = np.asarray(u, dtype=float).reshape(-1)
    return asm.jumps(u), asm.J, asm.qp_dofs


# ------------------------------------------------------------------ Newton


def _solve(K, r):
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("error", MatrixRankWarning)
        try:
            x = spsolve(K.tocsc(), r)
        except (MatrixRankWarning, RuntimeError) as exc:
            raise SolverError(f"singular tangent: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SolverError("non-finite solution of the linear system")
    return x


def newton_solve(asm: Assembler, u0, state: CohesiveState, t, config: SolverConfig | None = None):
    """Solve ``R(u) = 0`` at time ``t`` with Dirichlet data imposed.

    Returns ``(u, trial_state, log)`` where ``log`` lists
    ``(iteration, residual_norm)``. Raises :class:`StepFailure` when the
    residual is not reduced below ``max(abs_tol, rel_tol * |R_0|)``.
    """
    cfg = config or asm.config
    u = np.array(u0, dtype=float)
    u[asm.fixed] = asm.dirichlet_values(t)
    free = asm.free
    rows = []
    ref = None
    trial = state
    for it in range(cfg.max_newton_iters + 1):
        R, trial = asm.residual(u, state, t)
        norm = float(np.linalg.norm(R[free]))
        if not np.isfinite(norm):
            raise StepFailure(f"non-finite residual at t={t}", rows)
        if ref is None:
            ref = norm
        rows.append((it, norm))
        if norm <= max(cfg.newton_abs_tol, cfg.newton_rel_tol * ref):
            return u, trial, rows
        if it == cfg.max_newton_iters:
            break
        K = asm.tangent(u, state)
        Kff = K[free][:, free]
        u[free] -= _solve(Kff, R[free])
    raise StepFailure(f"Newton did not converge at t={t} after {cfg.max_newton_iters} iterations", rows)


def reactions(asm: Assembler, R) -> dict:
    """Summed residual per Dirichlet-tagged boundary, as (Rx, Ry)."""
    out = {}
    mesh = asm.problem.mesh
    for bc, _, _ in asm.dirichlet:
        if bc.tag in out:
            continue
        nodes = mesh.boundary_tags[bc.tag]
        out[bc.tag] = (float(R[2 * nodes].sum()), float(R[2 * nodes + 1].sum()))
    return out


def run_load_stepping(problem: Problem, config: SolverConfig, callback=None, u0=None):
    """Fixed-step quasi-static loading from t = 0 to ``config.t_end``.

    Returns ``(records, u, state)``. Cohesive work per step is the
    trapezoidal path integral of the physical traction over the increment
    of the (shifted) jump, weighted by facet length and area factor.
    """
    asm = Assembler(problem, config)
    for bc in problem.bcs:
        if not bc.schedule.covers(0.0, config.t_end):
            raise ConfigurationError(f"schedule of {bc.tag!r} does not cover [0, {config.t_end}]")
    u = np.zeros(asm.ndof) if u0 is None else np.array(u0, dtype=float)
    state = CohesiveState.virgin(asm.nq)
    j_old = asm.jumps(u)
    T_old = np.zeros_like(j_old)
    records = []
    W = 0.0
    n_steps = int(round(config.t_end / config.dt))
    if not np.isclose(n_steps * config.dt, config.t_end, rtol=1e-12, atol=1e-12):
        raise ConfigurationError("t_end must be a multiple of dt")
    for k in range(1, n_steps + 1):
        t = k * config.dt
        try:
            u_new, trial, rows = newton_solve(asm, u, state, t, config)
        except StepFailure as exc:
            exc.records, exc.u, exc.state = records, u, state
            raise
        state = commit_state(trial, state)
        R, _ = asm.residual(u_new, state, t)
        _, _, _, j_new, T_new = asm.cohesive(u_new, state, need_tangent=False)
        dW = float(np.sum(asm.wa * np.sum(0.5 * (T_old + T_new) * (j_new - j_old), axis=1)))
        W += dW
        u, j_old, T_old = u_new, j_new, T_new
        rec = StepRecord(
            t=t,
            imposed=asm.imposed(t),
            reactions=reactions(asm, R),
            max_damage=float(state.damage.max()) if len(state) else 0.0,
            work_increment=dW,
            work=W,
            newton_iters=len(rows) - 1,
        )
        records.append(rec)
        if callback is not None:
            callback(rec, u, state)
    return records, u, state


def energy_release(records) -> float:
    """Total cohesive work accumulated over the loading history."""
    return float(sum(r.work_increment for r in records))


# ------------------------------------------------------------------ post


def stress_at(problem: Problem, u, elements, points):
    """In-plane stress (P, 3) = [s_xx, s_yy, s_xy] at points inside given elements."""
    mesh = problem.mesh
    elements = np.asarray(elements, dtype=np.int64)
    points = np.atleast_2d(points)
    out = np.zeros((len(points), 3))
    u = np.asarray(u, dtype=float).reshape(-1)
    is_quad = mesh.cells[elements, 3] >= 0
    for kind, mask in ((TRI3, ~is_quad), (QUAD4, is_quad)):
        if not mask.any():
            continue
        nen = 4 if kind == QUAD4 else 3
        conn = mesh.cells[elements[mask], :nen]
        coords = mesh.nodes[conn]
        xi = inverse_map(kind, coords, points[mask])
        _, G = shape_at(kind, coords, xi)
        B = _voigt_B(G)
        D = _material_D(problem, mesh.region_id[elements[mask]])
        out[mask] = np.einsum("pij,pjk,pk->pi", D, B, u[_dofs(conn)])
    return out


def with_flags(config: SolverConfig, **flags) -> SolverConfig:
    return replace(config, **flags)


__all__ = [
    "Assembler",
    "BoundaryCondition",
    "ConfigurationError",
    "ElasticMaterial",
    "Problem",
    "Schedule",
    "SolverConfig",
    "SolverError",
    "StepFailure",
    "StepRecord",
    "assemble_residual",
    "assemble_tangent",
    "energy_release",
    "newton_solve",
    "reactions",
    "run_load_stepping",
    "shifted_jump",
    "stress_at",
    "with_flags",
]
