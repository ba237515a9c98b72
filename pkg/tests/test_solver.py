import itertools

import numpy as np
import pytest

from oracles import fd_jacobian
from sczm.constitutive import CohesiveState, ElasticMaterial, Exponential, Linear, stored_energy
from sczm.mesh import build_crossed_tri, build_structured_quad, split_by_region
from sczm.problems import rotated_problem, vertical_benchmark
from sczm.solver import (
    Assembler,
    BoundaryCondition,
    ConfigurationError,
    Problem,
    Schedule,
    SolverConfig,
    StepFailure,
    assemble_residual,
    assemble_tangent,
    energy_release,
    newton_solve,
    run_load_stepping,
    shifted_jump,
    with_flags,
)
from sczm.surrogate import assign_grain_ids, build_surrogate_interface, line_grains

UNIT = (0.0, 0.0, 1.0, 1.0)
FLAG_SETS = list(itertools.product([False, True], repeat=3))


def inclined_problem(builder, n, tsl=None, bcs=None, angle=30.0):
    t = np.array([np.cos(np.deg2rad(angle)), np.sin(np.deg2rad(angle))])
    p = np.array([0.5, 0.5])
    grains = line_grains(p, p + t, UNIT)
    base = builder(n, n, UNIT)
    base = base.with_regions(assign_grain_ids(base, grains))
    itf = build_surrogate_interface(base, grains)
    mesh, _ = split_by_region(base)
    mats = {1: ElasticMaterial(1.0, 0.0), 2: ElasticMaterial(1.0, 0.0)}
    return Problem(mesh, itf, mats, tsl or Linear(1.0), bcs or []), t


def uniform_tangential_field(t, strain=0.01):
    eps = strain * np.outer(t, t)
    return lambda x: x @ eps.T


def dirichlet_everywhere(field, schedule=None):
    schedule = schedule or Schedule.constant(1.0)
    return [
        BoundaryCondition("dirichlet", tag, c, schedule, spatial=lambda x, r, c=c: field(x)[:, c])
        for tag in ("left", "right", "bottom", "top")
        for c in (0, 1)
    ]


@pytest.mark.parametrize("flags", FLAG_SETS, ids=lambda f: "".join("1" if v else "0" for v in f))
def test_tangent_matches_finite_differences(flags):
    prob = rotated_problem(n=5, tsl=Exponential(G_c=1.0, delta0=0.05, beta=0.5))
    cfg = SolverConfig(use_shifted_jump=flags[0], use_area_factor=flags[1], use_directional_correction=flags[2])
    asm = Assembler(prob, cfg)
    rng = np.random.default_rng(7)
    for _ in range(3):
        u = rng.normal(scale=0.02, size=asm.ndof)
        state = CohesiveState(rng.uniform(0, 0.5, asm.nq), rng.uniform(0, 0.02, asm.nq))
        K = assemble_tangent(prob, u, state, cfg, asm).toarray()
        J = fd_jacobian(lambda v: assemble_residual(prob, v, state, cfg, 0.0, asm), u, 1e-7)
        assert np.linalg.norm(K - J) <= 1e-6 * np.linalg.norm(J)


def test_shifted_jump_of_piecewise_linear_field():
    prob, _ = inclined_problem(build_crossed_tri, 6)
    A1, c1 = np.array([[0.1, -0.3], [0.2, 0.05]]), np.array([0.01, 0.02])
    A2, c2 = np.array([[-0.2, 0.1], [0.4, 0.3]]), np.array([-0.03, 0.07])
    mesh = prob.mesh
    reg = np.zeros(mesh.n_nodes, dtype=int)
    for e in range(mesh.n_elements):
        reg[mesh.connectivity(e)] = mesh.region_id[e]
    x = mesh.nodes
    u = np.where((reg == 1)[:, None], x @ A1.T + c1, x @ A2.T + c2).ravel()
    itf = prob.interface
    y = (itf.points + itf.d).reshape(-1, 2)
    rm = np.repeat(mesh.region_id[itf.minus_element], itf.points.shape[1])
    um = np.where((rm == 1)[:, None], y @ A1.T + c1, y @ A2.T + c2)
    up = np.where((rm == 1)[:, None], y @ A2.T + c2, y @ A1.T + c1)
    j, _, _ = shifted_jump(prob, u, SolverConfig())
    np.testing.assert_allclose(j, up - um, atol=1e-14)
    # without shifting the jump is taken at the surrogate point
    j0, _, _ = shifted_jump(prob, u, SolverConfig(use_shifted_jump=False))
    xs = itf.points.reshape(-1, 2)
    um0 = np.where((rm == 1)[:, None], xs @ A1.T + c1, xs @ A2.T + c2)
    up0 = np.where((rm == 1)[:, None], xs @ A2.T + c2, xs @ A1.T + c1)
    np.testing.assert_allclose(j0, up0 - um0, atol=1e-14)


@pytest.mark.parametrize("builder,n", [(build_crossed_tri, 7), (build_structured_quad, 11)])
def test_directional_correction_reproduces_tangential_stress_exactly(builder, n):
    """Uniform stress along an inclined interface carries no traction across it.

    With a linear cohesive law the field stays continuous, so the exact
    solution is a homogeneous strain. Only the directional term cancels the
    tangential stress flux that leaks through the staircase facets.
    """
    prob, t = inclined_problem(builder, n)
    field = uniform_tangential_field(t)
    prob.bcs = dirichlet_everywhere(field)
    errors = {}
    for name, cfg in (
        ("full", SolverConfig()),
        ("no_directional", SolverConfig(use_directional_correction=False)),
    ):
        asm = Assembler(prob, cfg)
        u, _, _ = newton_solve(asm, np.zeros(asm.ndof), CohesiveState.virgin(asm.nq), 1.0, cfg)
        errors[name] = np.abs(u.reshape(-1, 2) - field(prob.mesh.nodes)).max()
    assert errors["full"] < 1e-13
    assert errors["no_directional"] > 1e-4


def test_linear_problem_converges_in_one_iteration():
    prob, t = inclined_problem(build_crossed_tri, 5)
    prob.bcs = dirichlet_everywhere(uniform_tangential_field(t), Schedule.ramp(1.0, 1.0))
    recs, _, _ = run_load_stepping(prob, SolverConfig(dt=0.5, t_end=1.0))
    assert [r.newton_iters for r in recs] == [1, 1]


def test_linear_law_work_equals_stored_energy():
    prob = vertical_benchmark(nx=3, ny=5, tsl=Linear(50.0), t_end=4.0)
    cfg = SolverConfig(dt=1.0, t_end=4.0)
    recs, u, state = run_load_stepping(prob, cfg)
    asm = Assembler(prob, cfg)
    j = asm.jumps(u)
    stored = float(np.sum(asm.wa * stored_energy(prob.tsl, j, asm.normal, state)))
    assert energy_release(recs) == pytest.approx(stored, rel=1e-10)
    assert recs[-1].work == pytest.approx(energy_release(recs), rel=1e-14)


def test_reactions_balance_for_plain_cohesive_forces():
    prob = vertical_benchmark(nx=3, ny=5, t_end=60.0)
    recs, _, _ = run_load_stepping(prob, SolverConfig.plain_czm(dt=5.0, t_end=60.0))
    for r in recs:
        rx = r.reactions["left"][0] + r.reactions["right"][0]
        assert abs(rx) <= 1e-8 * max(1.0, abs(r.reactions["right"][0]))
    assert recs[-1].max_damage > 0.5
    assert [r.imposed for r in recs][:2] == pytest.approx([0.05, 0.1])


def test_step_failure_carries_log():
    prob = vertical_benchmark(nx=3, ny=5, t_end=200.0)
    with pytest.raises(StepFailure) as info:
        run_load_stepping(prob, SolverConfig(dt=100.0, t_end=200.0, max_newton_iters=2))
    assert info.value.log
    assert info.value.u is not None


def test_schedule_must_cover_run():
    prob = vertical_benchmark(nx=3, ny=5, t_end=10.0)
    with pytest.raises(ConfigurationError):
        run_load_stepping(prob, SolverConfig(dt=1.0, t_end=20.0))
    with pytest.raises(ConfigurationError):
        run_load_stepping(prob, SolverConfig(dt=3.0, t_end=10.0))


def test_schedule_and_config_validation():
    s = Schedule((0.0, 1.0, 3.0), (0.0, 2.0, 0.0))
    assert s(0.5) == 1.0 and s(2.0) == 1.0
    assert s.covers(0.0, 3.0) and not s.covers(0.0, 3.5)
    with pytest.raises(ConfigurationError):
        Schedule((1.0, 0.0), (0.0, 0.0))
    with pytest.raises(ConfigurationError):
        SolverConfig(dt=0.0)
    with pytest.raises(ConfigurationError):
        BoundaryCondition("robin", "left", 0)
    with pytest.raises(ConfigurationError):
        BoundaryCondition("dirichlet", "left", 2)
    assert with_flags(SolverConfig(), use_area_factor=False).flags() == (True, False, True)


def test_unknown_tag_and_missing_material():
    prob = vertical_benchmark(nx=2, ny=2)
    bad = Problem(prob.mesh, prob.interface, prob.materials, prob.tsl, [BoundaryCondition("dirichlet", "nowhere", 0)])
    with pytest.raises(ConfigurationError):
        Assembler(bad, SolverConfig())
    bad = Problem(prob.mesh, prob.interface, {1: ElasticMaterial(1.0)}, prob.tsl, prob.bcs)
    with pytest.raises(ConfigurationError):
        Assembler(bad, SolverConfig())


def test_neumann_traction_resultant():
    mesh = build_structured_quad(4, 3)
    from sczm.surrogate import fitted_interface

    bcs = [
        BoundaryCondition("dirichlet", "left", 0),
        BoundaryCondition("dirichlet", "bottom", 1),
        BoundaryCondition("neumann", "right", schedule=Schedule.constant(2.0), direction=(1.0, 0.0)),
    ]
    prob = Problem(mesh, fitted_interface(mesh), {1: ElasticMaterial(1.0, 0.0)}, Linear(1.0), bcs)
    asm = Assembler(prob, SolverConfig())
    f = asm.external(0.0)
    assert f[0::2].sum() == pytest.approx(2.0)
    recs, u, _ = run_load_stepping(prob, SolverConfig())
    # uniaxial stress 2 with E = 1, nu = 0
    np.testing.assert_allclose(u.reshape(-1, 2)[:, 0], 2.0 * mesh.nodes[:, 0], atol=1e-12)
    assert recs[0].reactions["left"][0] == pytest.approx(-2.0)
