"""Acceptance criteria, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line (visible with
``pytest -s`` or in the terminal summary) before asserting. Criteria 2 and
4 are known failures of the faithful method; see the decisions ledger.
"""

import itertools
import time

import numpy as np
import pytest

from oracles import fd_jacobian, tsl_work
from sczm.conformalize import INHERITED, conformalize, project_solution
from sczm.constitutive import BilinearMixedMode, CohesiveState, Exponential, physical_traction
from sczm.geometry import (
    Sideness,
    benchmark_classification,
    build_index,
    classify_points,
    classify_points_brute_force,
    naca0012,
    regular_polygon,
)
from sczm.mesh import NodalField, build_structured_quad
from sczm.mms import convergence_study, fit_slope
from sczm.problems import RVE_BOUNDS, five_grain_rve, rotated_ablation, rotated_problem, vertical_benchmark, vertical_fitted_pair
from sczm.solver import (
    Assembler,
    SolverConfig,
    StepFailure,
    assemble_residual,
    assemble_tangent,
    energy_release,
    run_load_stepping,
)
from sczm.surrogate import assign_grain_ids

LEDGER = "known failure of the faithful method, analysed in the decisions ledger"
RESULTS = {}


@pytest.fixture
def report(request):
    """Record and print the verdict line for a criterion."""
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def _report(num, ok, detail):
        line = f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}"
        RESULTS[num] = line
        with capman.global_and_fixture_disabled():
            print("\n" + line)
        return ok

    return _report


def _slope(rows, key):
    return fit_slope([r["h"] for r in rows], [r[key] for r in rows])


def test_criterion_01_mms_quadratic_jump(report):
    t0 = time.perf_counter()
    rows = convergence_study("quadratic", levels=(3, 4, 5, 6))
    elapsed = time.perf_counter() - t0
    slope = _slope(rows, "error")
    ratio = rows[0]["error_plain"] / rows[-1]["error_plain"]
    ok = slope >= 0.9 and ratio < 2.0 and elapsed < 60.0
    report(1, ok, f"slope {slope:.3f} (>= 0.9), no-SCZM coarse/fine ratio {ratio:.3f} (< 2), {elapsed:.1f} s")
    assert ok


@pytest.mark.xfail(strict=True, raises=AssertionError, reason=LEDGER)
def test_criterion_02_mms_linear_jump(report):
    t0 = time.perf_counter()
    rows = convergence_study("linear", levels=(3, 4, 5, 6), ablation=False)
    elapsed = time.perf_counter() - t0
    slope = _slope(rows, "error")
    ok = slope >= 1.8 and elapsed < 60.0
    report(2, ok, f"slope {slope:.3f} (>= 1.8), {elapsed:.1f} s")
    assert ok


def test_criterion_03_energy_release(report):
    t0 = time.perf_counter()
    recs, _, _ = run_load_stepping(vertical_benchmark(), SolverConfig(dt=1.0, t_end=200.0))
    elapsed = time.perf_counter() - t0
    W = energy_release(recs)
    ok = abs(W - 50.0) <= 0.5 and elapsed < 120.0
    report(3, ok, f"W = {W:.6f} (50 +- 0.5), {elapsed:.1f} s")
    assert ok


@pytest.mark.xfail(strict=True, raises=AssertionError, reason=LEDGER)
def test_criterion_04_energy_dt_convergence(report):
    dts = np.array([4.0, 2.0, 1.0, 0.5])
    err = {}
    for name, extra in (("shifted", {}), ("unshifted", {"use_shifted_jump": False})):
        e = []
        for dt in dts:
            recs, _, _ = run_load_stepping(vertical_benchmark(), SolverConfig(dt=dt, t_end=200.0, **extra))
            e.append(abs(energy_release(recs) - 50.0))
        err[name] = np.array(e)
    slope = fit_slope(dts, err["shifted"])
    spread = err["unshifted"].max() / err["unshifted"].min() - 1.0
    # diagnostic only: all corrections off; plain Newton may cycle late in the softening tail
    plain = []
    for dt in dts:
        try:
            recs, _, _ = run_load_stepping(vertical_benchmark(), SolverConfig.plain_czm(dt=dt, t_end=200.0))
            plain.append(f"{abs(energy_release(recs) - 50.0):.1f}")
        except StepFailure as exc:
            plain.append(f"no convergence ({exc})")
    ok = slope >= 1.8 and spread < 0.2
    report(
        4,
        ok,
        f"shifted slope {slope:.3f} (>= 1.8), unshifted spread {100 * spread:.0f}% (< 20%); "
        f"all corrections off |W - 50| by dt: {', '.join(plain)}",
    )
    assert ok


def test_criterion_05_fitted_degeneracy(report):
    fitted, sczm = vertical_fitted_pair(8)
    cfg = SolverConfig(dt=2.0, t_end=200.0)
    ra, _, _ = run_load_stepping(fitted, cfg)
    rb, _, _ = run_load_stepping(sczm, cfg)
    fa = np.array([r.reactions["right"][0] for r in ra])
    fb = np.array([r.reactions["right"][0] for r in rb])
    rel = np.abs(fa - fb) / np.maximum(np.abs(fa), 1e-300)
    worst = float(rel[np.abs(fa) > 0].max())
    ok = len(ra) == len(rb) and worst <= 1e-8
    report(5, ok, f"max relative reaction difference {worst:.2e} over {len(ra)} steps (<= 1e-8)")
    assert ok


def test_criterion_06_rotated_ablation_ordering(report):
    res = rotated_ablation(n=32, n_ref=64, times=(30.0, 50.0), dt=1.0)
    ok = all(r.ordered for r in res)
    detail = "; ".join(
        f"t={r.time:g}: {r.sczm:.3g} < {r.no_directional:.3g} < {r.no_sczm:.3g}" for r in res
    )
    report(6, ok, detail)
    assert ok


def _rve_loops():
    return list(five_grain_rve().boundaries)


def test_criterion_07_classification_oracle(report):
    rng = np.random.default_rng(2024)
    shapes = {
        "64-gon": [regular_polygon(64, 0.4, (0.5, 0.5))],
        "airfoil": [naca0012(200, chord=0.9, origin=(0.05, 0.5))],
        "rve": _rve_loops(),
    }
    bad = {}
    for name, bnds in shapes.items():
        if name == "rve":
            x0, y0, x1, y1 = RVE_BOUNDS
        else:
            x0, y0, x1, y1 = 0.0, 0.0, 1.0, 1.0
        pts = rng.uniform([x0, y0], [x1, y1], (10_000, 2))
        count = 0
        for bnd in bnds:
            a = classify_points(pts, bnd, build_index(bnd))
            b = classify_points_brute_force(pts, bnd)
            count += int(np.sum((a != b) & (a != Sideness.ON) & (b != Sideness.ON)))
        bad[name] = count
    ok = sum(bad.values()) == 0
    report(7, ok, "disagreements " + ", ".join(f"{k} {v}" for k, v in bad.items()))
    assert ok


def test_criterion_08_classification_speedup(report):
    rows = benchmark_classification(sizes=(100, 400, 1600), grid=256, repeats=2)
    s = [r["speedup"] for r in rows]
    ok = min(s) >= 1.0 and all(b > a for a, b in zip(s, s[1:])) and all(r["mismatches"] == 0 for r in rows)
    report(8, ok, "speedups " + " / ".join(f"{v:.1f}x" for v in s) + " for N_T = 100 / 400 / 1600")
    assert ok


def test_criterion_09_tangent_consistency(report):
    prob = rotated_problem(n=4, tsl=Exponential(G_c=1.0, delta0=0.05, beta=0.5))
    rng = np.random.default_rng(11)
    worst = 0.0
    for flags in itertools.product([False, True], repeat=3):
        cfg = SolverConfig(use_shifted_jump=flags[0], use_area_factor=flags[1], use_directional_correction=flags[2])
        asm = Assembler(prob, cfg)
        for _ in range(20):
            u = rng.normal(scale=0.02, size=asm.ndof)
            state = CohesiveState(rng.uniform(0, 0.5, asm.nq), rng.uniform(0, 0.02, asm.nq))
            K = assemble_tangent(prob, u, state, cfg, asm).toarray()
            J = fd_jacobian(lambda v: assemble_residual(prob, v, state, cfg, 0.0, asm), u, 1e-7)
            worst = max(worst, np.linalg.norm(K - J) / np.linalg.norm(J))
    ok = worst <= 1e-6
    report(9, ok, f"worst relative tangent error {worst:.2e} over 8 x 20 states (<= 1e-6)")
    assert ok


def test_criterion_10_conformalize_project(report):
    grains = five_grain_rve()
    src = build_structured_quad(48, 32, RVE_BOUNDS)
    src = src.with_regions(assign_grain_ids(src, grains))
    ifm = conformalize(src, grains)
    a_src = src.element_areas().sum()
    area_err = abs(ifm.mesh.element_areas().sum() + ifm.dropped_area - a_src) / a_src
    A, c = np.array([[0.3, -1.2], [2.0, 0.7]]), np.array([0.1, -0.4])
    p = project_solution(ifm, src, NodalField(src.nodes @ A.T + c, src))
    lin_err = float(np.abs(p.values - (ifm.mesh.nodes @ A.T + c)).max())
    vals = np.random.default_rng(5).normal(size=(src.n_nodes, 2))
    q = project_solution(ifm, src, NodalField(vals, src))
    idx = np.flatnonzero(ifm.node_marker == INHERITED)
    bit_equal = bool(np.array_equal(q.values[idx], vals[ifm.source_node_id[idx]]))
    ok = area_err <= 1e-10 and lin_err <= 1e-12 and bit_equal
    report(
        10,
        ok,
        f"area error {area_err:.1e} (<= 1e-10), linear projection error {lin_err:.1e} (<= 1e-12), "
        f"marker-0 bit-equal {bit_equal}",
    )
    assert ok


def test_criterion_11_tsl_mode_one_work(report):
    exp = Exponential(G_c=50.0, delta0=0.1)
    ex = np.array([1.0, 0.0])
    W_exp = tsl_work(lambda a: physical_traction(exp, [a, 0.0], ex)[0, 0], breakpoints=[0.1, 1.0, 5.0])
    bil = BilinearMixedMode(K=1e4, G_Ic=2.0, G_IIc=5.0, N=30.0, S=40.0, eta=1.8)
    d0, df = bil.N / bil.K, 2 * bil.G_Ic / bil.N
    W_bil = tsl_work(lambda a: physical_traction(bil, [a, 0.0], ex)[0, 0], breakpoints=[d0], upper=df)
    e1, e2 = abs(W_exp / exp.G_c - 1), abs(W_bil / bil.G_Ic - 1)
    ok = e1 <= 1e-6 and e2 <= 1e-6
    report(11, ok, f"relative work error exponential {e1:.1e}, bilinear {e2:.1e} (<= 1e-6)")
    assert ok
