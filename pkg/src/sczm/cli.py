"""Command-line entry point: ``sczm <command> [options]``.

Commands: classify, assign, solve, mms, conformalize, project,
bench-classify. ``solve`` reads a sectioned key-value file (see
``sczm solve --help`` for every key). CSV files carry a header row,
floats with 17 significant digits and ``\\n`` line endings.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constitutive import TSL_KINDS, ElasticMaterial, NumericalError
from .geometry import (
    GeometryError,
    InconsistentRayError,
    Sideness,
    build_index,
    classify_points,
    classify_points_brute_force,
    read_boundary,
)
from .mesh import MeshError, build_crossed_tri, build_structured_quad, read_mesh, split_fitted_interface, write_field, write_mesh
from .solver import (
    BoundaryCondition,
    ConfigurationError,
    Problem,
    Schedule,
    SolverConfig,
    SolverError,
    StepFailure,
    run_load_stepping,
)

log = logging.getLogger("sczm")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_GEOMETRY = 3
EXIT_SOLVER = 4
EXIT_NUMERICAL = 5

COMMANDS = ("classify", "assign", "solve", "mms", "conformalize", "project", "bench-classify")

# section -> key -> (type, help); "material.<id>" and "bc.<name>" share the
# "material" and "bc" tables
KEYS = {
    "mesh": {
        "kind": (str, "crossed_tri | quad | file"),
        "nx": (int, "cells in x"),
        "ny": (int, "cells in y"),
        "bounds": ("floats", "x0, y0, x1, y1 of the rectangle"),
        "path": ("path", "mesh file (kind = file)"),
    },
    "interface": {
        "kind": (str, "line | grains | fitted"),
        "p": ("floats", "first point on the interface line (kind = line)"),
        "q": ("floats", "second point; grain 1 lies left of p -> q"),
        "path": ("path", "grain polygon file (kind = grains)"),
        "segment": ("floats", "xa, ya, xb, yb of a mesh-aligned seam (kind = fitted)"),
    },
    "material": {
        "E": (float, "Young's modulus E"),
        "nu": (float, "Poisson's ratio nu"),
    },
    "tsl": {
        "kind": (str, "linear | exponential | bilinear"),
        "k": (float, "linear stiffness k (t_coh = -k [[u]])"),
        "G_c": (float, "fracture energy G_c (exponential)"),
        "delta0": (float, "characteristic opening delta_0 (exponential)"),
        "beta": (float, "tangential weight beta (exponential)"),
        "K": (float, "penalty stiffness K (bilinear)"),
        "G_Ic": (float, "mode-I toughness G_Ic (bilinear)"),
        "G_IIc": (float, "mode-II toughness G_IIc (bilinear)"),
        "N": (float, "normal strength N (bilinear)"),
        "S": (float, "shear strength S (bilinear)"),
        "eta": (float, "B-K exponent eta (bilinear)"),
        "mu": (float, "friction coefficient mu (bilinear)"),
    },
    "bc": {
        "kind": (str, "dirichlet | neumann"),
        "tag": (str, "boundary tag: left | right | bottom | top"),
        "component": (int, "displacement component 0 | 1 (dirichlet)"),
        "schedule": ("schedule", "piecewise-linear t:value pairs, e.g. 0:0, 200:2"),
        "direction": ("floats", "traction direction t_N (neumann)"),
    },
    "solver": {
        "dt": (float, "load increment Delta t"),
        "t_end": (float, "final pseudo-time"),
        "newton_rel_tol": (float, "relative residual tolerance"),
        "newton_abs_tol": (float, "absolute residual tolerance"),
        "max_newton_iters": (int, "Newton iteration cap"),
        "use_shifted_jump": (bool, "evaluate t_coh at [[u]] + [[grad u]] d"),
        "use_area_factor": (bool, "weight facet integrals by |n . n_h|"),
        "use_directional_correction": (bool, "add the sigma tau_h terms"),
        "use_true_normal": (bool, "split modes with n instead of n_h"),
    },
    "output": {
        "fields": ("floats", "times at which to write displacement fields"),
    },
}
REQUIRED_SECTIONS = ("mesh", "interface", "material", "tsl", "solver")


@dataclass
class SolveSpec:
    problem: Problem
    config: SolverConfig
    field_times: tuple = ()


@dataclass
class RunConfig:
    command: str
    options: dict
    out: Path
    seed: int = 0
    solve: SolveSpec | None = field(default=None, repr=False)


# ------------------------------------------------------------------ parsing


def _table(section: str):
    return KEYS.get(section.split(".", 1)[0])


def _convert(kind, raw: str, path: str, base: Path):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low not in ("true", "false", "yes", "no", "on", "off", "1", "0"):
                raise ValueError(raw)
            return low in ("true", "yes", "on", "1")
        if kind in (int, float, str):
            val = kind(raw.strip())
            if kind is float and not np.isfinite(val):
                raise ValueError(raw)
            return val
        if kind == "floats":
            vals = tuple(float(v) for v in raw.replace(",", " ").split())
            if not vals or not np.all(np.isfinite(vals)):
                raise ValueError(raw)
            return vals
        if kind == "path":
            p = Path(raw.strip())
            p = p if p.is_absolute() else base / p
            if not p.exists():
                raise ConfigurationError(f"{path}: file {str(p)!r} does not exist")
            return p
        if kind == "schedule":
            pts = []
            for item in raw.split(","):
                t, v = item.split(":")
                pts.append((float(t), float(v)))
            return Schedule(tuple(t for t, _ in pts), tuple(v for _, v in pts))
    except ConfigurationError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigurationError(f"{path}: cannot read {raw!r} as {getattr(kind, '__name__', kind)}") from exc
    raise ConfigurationError(f"{path}: unsupported type")


def read_sections(text: str, base: Path = Path(".")) -> dict:
    """Parse and type-check a sectioned key-value file; unknown keys are errors."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed configuration: {exc}") from exc
    out = {}
    for sec in cp.sections():
        table = _table(sec)
        if table is None:
            raise ConfigurationError(f"{sec}: unknown section")
        vals = {}
        for key, raw in cp.items(sec):
            if key not in table:
                raise ConfigurationError(f"{sec}.{key}: unknown key")
            vals[key] = _convert(table[key][0], raw, f"{sec}.{key}", base)
        out[sec] = vals
    return out


def _need(sec: dict, key: str, name: str):
    if key not in sec:
        raise ConfigurationError(f"{name}.{key}: required key missing")
    return sec[key]


def build_solve(sections: dict) -> SolveSpec:
    """Turn parsed sections into a ready-to-run problem and solver config."""
    from .surrogate import (
        assign_grain_ids,
        build_surrogate_interface,
        fitted_interface,
        line_grains,
        read_grains,
    )
    from .mesh import split_by_region

    for s in REQUIRED_SECTIONS:
        if not any(k == s or k.startswith(s + ".") for k in sections):
            raise ConfigurationError(f"{s}: required section missing")

    solver = dict(sections["solver"])
    _need(solver, "t_end", "solver")
    cfg = SolverConfig(**solver)

    m = sections["mesh"]
    kind = _need(m, "kind", "mesh")
    bounds = m.get("bounds", (0.0, 0.0, 1.0, 1.0))
    if kind == "crossed_tri":
        mesh = build_crossed_tri(_need(m, "nx", "mesh"), _need(m, "ny", "mesh"), bounds)
    elif kind == "quad":
        mesh = build_structured_quad(_need(m, "nx", "mesh"), _need(m, "ny", "mesh"), bounds)
    elif kind == "file":
        mesh = read_mesh(_need(m, "path", "mesh"))
    else:
        raise ConfigurationError(f"mesh.kind: unknown value {kind!r}")

    itf = sections["interface"]
    ikind = _need(itf, "kind", "interface")
    if ikind in ("line", "grains"):
        if ikind == "line":
            grains = line_grains(_need(itf, "p", "interface"), _need(itf, "q", "interface"), mesh.bounds())
        else:
            grains = read_grains(_need(itf, "path", "interface"))
        base = mesh.with_regions(assign_grain_ids(mesh, grains))
        surrogate = build_surrogate_interface(base, grains)
        mesh, _ = split_by_region(base)
    elif ikind == "fitted":
        seg = _need(itf, "segment", "interface")
        if len(seg) != 4:
            raise ConfigurationError("interface.segment: expected xa, ya, xb, yb")
        mesh = split_fitted_interface(mesh, (seg[:2], seg[2:]))
        surrogate = fitted_interface(mesh)
    else:
        raise ConfigurationError(f"interface.kind: unknown value {ikind!r}")

    default = sections.get("material")
    materials = {}
    for rid in np.unique(mesh.region_id):
        sec = sections.get(f"material.{int(rid)}", default)
        if sec is None:
            raise ConfigurationError(f"material.{int(rid)}: no material for region {int(rid)}")
        materials[int(rid)] = ElasticMaterial(_need(sec, "E", "material"), sec.get("nu", 0.0))

    t = dict(sections["tsl"])
    tkind = t.pop("kind", None)
    if tkind not in TSL_KINDS:
        raise ConfigurationError(f"tsl.kind: unknown value {tkind!r}")
    try:
        tsl = TSL_KINDS[tkind](**t)
    except TypeError as exc:
        raise ConfigurationError(f"tsl: {exc}") from exc
    except ValueError as exc:
        raise ConfigurationError(f"tsl: {exc}") from exc

    bcs = []
    for name in sorted(k for k in sections if k.startswith("bc.")):
        b = sections[name]
        sched = _need(b, "schedule", name)
        if not sched.covers(0.0, cfg.t_end):
            raise ConfigurationError(f"{name}.schedule: does not cover t in [0, {cfg.t_end}]")
        bcs.append(
            BoundaryCondition(
                kind=_need(b, "kind", name),
                tag=_need(b, "tag", name),
                component=b.get("component"),
                schedule=sched,
                direction=b.get("direction", (1.0, 0.0)),
            )
        )
    for bc in bcs:
        if bc.tag not in mesh.boundary_tags:
            raise ConfigurationError(f"bc: unknown boundary tag {bc.tag!r}")
    times = tuple(sections.get("output", {}).get("fields", ()))
    return SolveSpec(Problem(mesh, surrogate, materials, tsl, bcs), cfg, times)


def _levels(text: str):
    if ".." in text:
        a, b = text.split("..")
        return tuple(range(int(a), int(b) + 1))
    return tuple(int(v) for v in text.split(","))


def _floats(text: str):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _key_help() -> str:
    lines = ["configuration keys (section.key: meaning):"]
    for sec, table in KEYS.items():
        name = {"material": "material[.<region>]", "bc": "bc.<name>"}.get(sec, sec)
        for key, (_, text) in table.items():
            lines.append(f"  {name}.{key}: {text}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sczm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("classify", help="IN/OUT/ON of points against a boundary")
    c.add_argument("--boundary", required=True)
    c.add_argument("--points", required=True, help="CSV with x,y[,z] columns (header row)")
    c.add_argument("--brute-force", action="store_true", help="use the full-scan oracle")
    c.add_argument("--out", default="classify.csv")

    a = sub.add_parser("assign", help="dominant-volume grain id per element")
    a.add_argument("--mesh", required=True)
    a.add_argument("--grains", required=True)
    a.add_argument("--out", default="assigned_mesh.txt")

    s = sub.add_parser(
        "solve",
        help="quasi-static cohesive solve from a configuration file",
        epilog=_key_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    s.add_argument("--config", required=True)
    s.add_argument("--out", default=".")

    m = sub.add_parser("mms", help="manufactured-solution convergence study")
    m.add_argument("--case", choices=("quadratic", "linear"), required=True)
    m.add_argument("--levels", default="3..6", help="e.g. 3..6 or 3,4,5 (h close to 2**-level)")
    m.add_argument("--no-ablation", action="store_true")
    m.add_argument("--out", default=".")

    k = sub.add_parser("conformalize", help="interface-fitted mesh from a mesh and grains")
    k.add_argument("--mesh", required=True)
    k.add_argument("--grains", required=True)
    k.add_argument("--out", required=True)

    j = sub.add_parser("project", help="project a nodal field onto an IFM mesh")
    j.add_argument("--ifm", required=True)
    j.add_argument("--source", required=True)
    j.add_argument("--field", required=True)
    j.add_argument("--out", required=True)

    b = sub.add_parser("bench-classify", help="PCA classifier versus brute force timing")
    b.add_argument("--sizes", default="100,400,1600")
    b.add_argument("--grid", type=int, default=256)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--out", default=".")

    for sp_ in (c, a, s, m, k, j, b):
        sp_.add_argument("--seed", type=int, default=0)
    return p


_INPUTS = {
    "classify": ("boundary", "points"),
    "assign": ("mesh", "grains"),
    "solve": ("config",),
    "conformalize": ("mesh", "grains"),
    "project": ("ifm", "source", "field"),
}


def parse_config(argv) -> RunConfig:
    """Validate command-line flags (and the solve file) into a :class:`RunConfig`."""
    ns = build_parser().parse_args(argv)
    opts = {k: v for k, v in vars(ns).items() if k not in ("command", "seed", "verbose")}
    for key in _INPUTS.get(ns.command, ()):
        if not Path(opts[key]).exists():
            raise ConfigurationError(f"{ns.command}.{key}: file {opts[key]!r} does not exist")
    if ns.command == "mms":
        try:
            opts["levels"] = _levels(ns.levels)
        except ValueError as exc:
            raise ConfigurationError(f"mms.levels: cannot parse {ns.levels!r}") from exc
        if len(opts["levels"]) < 3:
            raise ConfigurationError("mms.levels: at least 3 levels are needed")
    if ns.command == "bench-classify":
        try:
            opts["sizes"] = tuple(int(v) for v in ns.sizes.split(","))
        except ValueError as exc:
            raise ConfigurationError(f"bench-classify.sizes: cannot parse {ns.sizes!r}") from exc
    out = Path(opts.get("out", "."))
    cfg = RunConfig(ns.command, opts, out, ns.seed)
    if ns.command == "solve":
        path = Path(ns.config)
        cfg.solve = build_solve(read_sections(path.read_text(), path.parent))
    return cfg


# ------------------------------------------------------------------ output


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def format_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="\n") as fh:
        fh.write(text)


def steps_rows(records, tags):
    rows = []
    for r in records:
        row = {
            "t": r.t,
            "imposed": r.imposed,
            "max_damage": r.max_damage,
            "work_increment": r.work_increment,
            "work": r.work,
            "newton_iters": r.newton_iters,
        }
        for tag in tags:
            rx, ry = r.reactions.get(tag, (0.0, 0.0))
            row[f"R_{tag}_x"] = rx
            row[f"R_{tag}_y"] = ry
        rows.append(row)
    return rows


# ------------------------------------------------------------------ commands


def _read_points(path, dim=2):
    text = Path(path).read_text().splitlines()
    rows = list(csv.reader(text))
    try:
        return np.array([[float(v) for v in r[:dim]] for r in rows[1:] if r], dtype=float).reshape(-1, dim)
    except ValueError as exc:
        raise ConfigurationError(f"classify.points: non-numeric entry in {path}") from exc


def _cmd_classify(cfg: RunConfig):
    bnd = read_boundary(cfg.options["boundary"])
    pts = _read_points(cfg.options["points"], bnd.dim)
    if cfg.options["brute_force"]:
        side = classify_points_brute_force(pts, bnd)
    else:
        side = classify_points(pts, bnd, build_index(bnd))
    cols = ["x", "y", "z"][: bnd.dim]
    rows = [{**dict(zip(cols, p)), "sideness": Sideness(int(s)).name} for p, s in zip(pts, side)]
    _write(Path(cfg.out), format_csv([*cols, "sideness"], rows))
    return [cfg.out]


def _cmd_assign(cfg: RunConfig):
    from .surrogate import assign_grain_ids, read_grains

    mesh = read_mesh(cfg.options["mesh"])
    grains = read_grains(cfg.options["grains"])
    out = mesh.with_regions(assign_grain_ids(mesh, grains))
    cfg.out.parent.mkdir(parents=True, exist_ok=True)
    write_mesh(out, cfg.out)
    return [cfg.out]


def _cmd_solve(cfg: RunConfig):
    job = cfg.solve
    out_dir = cfg.out
    out_dir.mkdir(parents=True, exist_ok=True)
    want = {round(t, 12) for t in job.field_times}
    written = []

    def cb(rec, u, _state):
        if round(rec.t, 12) in want:
            from .mesh import NodalField

            p = out_dir / f"u_t{_fmt(rec.t)}.txt"
            write_field(NodalField(u, job.problem.mesh, "u"), p)
            written.append(p)

    records, _, _ = run_load_stepping(job.problem, job.config, callback=cb)
    tags = sorted({bc.tag for bc in job.problem.bcs if bc.kind == "dirichlet"})
    rows = steps_rows(records, tags)
    cols = ["t", "imposed"] + [f"R_{t}_{c}" for t in tags for c in "xy"] + [
        "max_damage",
        "work_increment",
        "work",
        "newton_iters",
    ]
    path = out_dir / "steps.csv"
    _write(path, format_csv(cols, rows))
    return [path, *written]


def _cmd_mms(cfg: RunConfig):
    from .mms import convergence_study

    ablation = not cfg.options["no_ablation"]
    rows = convergence_study(cfg.options["case"], cfg.options["levels"], ablation=ablation)
    cols = ["level", "n", "h", "error", "slope"]
    if ablation:
        cols += ["error_plain", "slope_plain"]
    path = cfg.out / "mms_convergence.csv"
    _write(path, format_csv(cols, rows))
    return [path]


def _cmd_conformalize(cfg: RunConfig):
    from .conformalize import conformalize, write_ifm
    from .surrogate import read_grains

    ifm = conformalize(read_mesh(cfg.options["mesh"]), read_grains(cfg.options["grains"]))
    cfg.out.parent.mkdir(parents=True, exist_ok=True)
    write_ifm(ifm, cfg.out)
    return [cfg.out]


def _cmd_project(cfg: RunConfig):
    from .conformalize import project_solution, read_ifm
    from .mesh import read_field

    ifm = read_ifm(cfg.options["ifm"])
    src = read_mesh(cfg.options["source"])
    u = read_field(cfg.options["field"], src)
    cfg.out.parent.mkdir(parents=True, exist_ok=True)
    write_field(project_solution(ifm, src, u), cfg.out)
    return [cfg.out]


def _cmd_bench(cfg: RunConfig):
    from .geometry import benchmark_classification

    rows = benchmark_classification(cfg.options["sizes"], grid=cfg.options["grid"], repeats=cfg.options["repeats"])
    path = cfg.out / "classify_bench.csv"
    _write(path, format_csv(["N_T", "runtime_pca", "runtime_brute", "speedup", "mismatches"], rows))
    return [path]


_DISPATCH = {
    "classify": _cmd_classify,
    "assign": _cmd_assign,
    "solve": _cmd_solve,
    "mms": _cmd_mms,
    "conformalize": _cmd_conformalize,
    "project": _cmd_project,
    "bench-classify": _cmd_bench,
}


def run(cfg: RunConfig) -> list:
    """Execute a validated command; returns the artifact paths written."""
    np.random.seed(cfg.seed)
    return _DISPATCH[cfg.command](cfg)


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigurationError):
        return EXIT_CONFIG
    if isinstance(exc, (MeshError, GeometryError, InconsistentRayError)):
        return EXIT_GEOMETRY
    if isinstance(exc, (SolverError, StepFailure)):
        return EXIT_SOLVER
    if isinstance(exc, (NumericalError, ValueError, ArithmeticError)):
        return EXIT_NUMERICAL
    raise exc


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    logging.basicConfig(level=logging.INFO if "-v" in argv or "--verbose" in argv else logging.WARNING)
    try:
        cfg = parse_config(argv)
        for path in run(cfg):
            log.info("wrote %s", path)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        code = exit_code(exc)
        print(f"sczm: error: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
