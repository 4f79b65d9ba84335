"""Batch front end: solve | deriv | jint | grate | verify | abstract | meshgen.

Every command reads one JSON config, writes its artifacts into ``--out``
(CSV always, legacy VTK for solutions, PNG figures unless disabled) and is
deterministic for a fixed config.  Failures exit with a class-specific code
(1 config, 2 mesh, 3 solver, 4 derivative check) and a single JSON error
line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import plots
from .deformation import velocity_field
from .errors import ConfigError, DerivativeCheckError, ShapeRateError
from .fem import (coefficient_set, solution_csv_lines, solution_vtk_lines,
                  solve_problem)
from .mesh import (TriMesh, gen_rect_mesh, insert_crack_slit, mesh_size,
                   read_mesh, validate, write_mesh)
from .param_variation import (envelope_derivative, envelope_second_derivative,
                              fd_minimizer_jacobian, fd_optimal_value_gradient,
                              fd_optimal_value_hessian, find_minimizer,
                              minimizer_continuity_probe, minimizer_sensitivity,
                              random_quadratic_family)
from .shape import (ContourSpec, dirichlet_boundary_formula,
                    energy_release_rate, fd_oracle, griffith_check, j_integral,
                    mode3_tip_field, shape_derivative_domain)

REPORT_HEADER = "quantity,value,term1,term2,term3,mesh_h,field"


def _fmt(x) -> str:
    return repr(float(x))


def thread_count() -> int:
    raw = os.environ.get("SHAPERATE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"SHAPERATE_THREADS={raw!r} is not an integer") from exc
    if n < 1:
        raise ConfigError("SHAPERATE_THREADS must be at least 1")
    return n


def _map_levels(fn, items):
    """Run independent refinement levels, optionally on a thread pool."""
    n = min(thread_count(), len(items))
    if n <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _atomic_write(path, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_lines(path, lines):
    _atomic_write(path, "\n".join(lines) + "\n")


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return cfg


def _section(cfg, key, required=True) -> dict:
    value = cfg.get(key)
    if value is None:
        if required:
            raise ConfigError(f"config key {key!r} is required")
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"config key {key!r} must be an object")
    return value


def build_mesh(cfg, override_n=None) -> TriMesh:
    mcfg = _section(cfg, "mesh")
    if "file" in mcfg:
        mesh = read_mesh(mcfg["file"])
    elif "generate" in mcfg:
        g = mcfg["generate"]
        try:
            nx = int(override_n if override_n is not None else g["nx"])
            ny = int(override_n if override_n is not None else g["ny"])
            mesh = gen_rect_mesh(g["x_range"], g["y_range"], nx, ny,
                                 g.get("dirichlet_sides", ()),
                                 all_neumann=bool(g.get("all_neumann", False)))
        except KeyError as exc:
            raise ConfigError(f"mesh.generate is missing key {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"mesh.generate: {exc}") from exc
    else:
        raise ConfigError("config key 'mesh' needs either 'file' or 'generate'")
    if "crack" in mcfg:
        c = mcfg["crack"]
        try:
            mesh = insert_crack_slit(mesh, (tuple(c["from"]), tuple(c["to"])))
        except KeyError as exc:
            raise ConfigError(f"mesh.crack is missing key {exc}") from exc
    return mesh


def build_coefficients(cfg):
    ccfg = _section(cfg, "coefficients")
    name = ccfg.get("name")
    if not name:
        raise ConfigError("coefficients.name is required")
    try:
        return coefficient_set(name, **ccfg.get("params", {}))
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"coefficients: {exc}") from exc


def build_velocity(vcfg):
    if not isinstance(vcfg, dict) or "name" not in vcfg:
        raise ConfigError("velocity entries need a 'name'")
    try:
        return velocity_field(vcfg["name"], **vcfg.get("params", {}))
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"velocity {vcfg.get('name')!r}: {exc}") from exc


def _solver_tol(cfg) -> float:
    return float(_section(cfg, "solver", required=False).get("tol", 1e-10))


def _fd_step(cfg) -> float:
    return float(_section(cfg, "fd", required=False).get("step", 1e-4))


def _plots_enabled(cfg) -> bool:
    return bool(cfg.get("plots", True))


def _refinement_levels(cfg):
    levels = cfg.get("refinements")
    if levels is None:
        return None
    if not isinstance(levels, list) or not all(
            isinstance(v, int) and v >= 1 for v in levels):
        raise ConfigError("'refinements' must be a list of positive integers")
    if "generate" not in _section(cfg, "mesh"):
        raise ConfigError("'refinements' needs a generated mesh "
                          "(mesh.generate), not a mesh file")
    return levels


def _report_row(quantity, value, t1, t2, t3, h, field) -> str:
    return (f"{quantity},{_fmt(value)},{_fmt(t1)},{_fmt(t2)},{_fmt(t3)},"
            f"{_fmt(h)},\"{field}\"")


def cmd_meshgen(cfg, out) -> int:
    mesh = build_mesh(cfg)
    diag = validate(mesh)
    path = os.path.join(out, "mesh.txt")
    write_mesh(mesh, path)
    if _plots_enabled(cfg):
        plots.save_mesh_figure(mesh, os.path.join(out, "mesh.png"))
    print(f"meshgen: {diag.n_nodes} nodes, {diag.n_triangles} triangles, "
          f"{diag.n_boundary_edges} boundary edges -> {path}")
    return 0


def cmd_solve(cfg, out) -> int:
    mesh = build_mesh(cfg)
    coeffs = build_coefficients(cfg)
    field = solve_problem(mesh, coeffs, tol=_solver_tol(cfg))
    _write_lines(os.path.join(out, "solution.csv"), solution_csv_lines(field))
    _write_lines(os.path.join(out, "solution.vtk"), solution_vtk_lines(field))
    if _plots_enabled(cfg):
        plots.save_solution_figure(field, os.path.join(out, "solution.png"),
                                   title=coeffs.name)
    print(f"solve: {mesh.n_nodes} nodes, coefficients {coeffs.name}, "
          f"|u|_max = {np.max(np.abs(field.values)):.6g}")
    return 0


def cmd_deriv(cfg, out) -> int:
    coeffs = build_coefficients(cfg)
    mu = build_velocity(_section(cfg, "velocity"))
    tol = _solver_tol(cfg)
    levels = _refinement_levels(cfg)

    def run(level):
        mesh = build_mesh(cfg, override_n=level)
        u = solve_problem(mesh, coeffs, tol=tol)
        rep = shape_derivative_domain(mesh, coeffs, u, mu)
        rows = [_report_row("shape_derivative", rep.value, rep.term_coeff,
                            rep.term_grad, rep.term_div, rep.mesh_h, rep.field)]
        try:
            bval = dirichlet_boundary_formula(mesh, coeffs, u, mu)
            rows.append(_report_row("boundary_formula", bval, 0.0, 0.0, 0.0,
                                    rep.mesh_h, rep.field))
        except ValueError:
            bval = None  # boundary form only exists for unit-B, zero-b data
        return rep, bval, rows

    results = _map_levels(run, levels if levels else [None])
    lines = [REPORT_HEADER]
    for _, _, rows in results:
        lines.extend(rows)
    _write_lines(os.path.join(out, "derivative.csv"), lines)
    if _plots_enabled(cfg):
        hs = [rep.mesh_h for rep, _, _ in results]
        series = {"domain": [rep.value for rep, _, _ in results]}
        if all(b is not None for _, b, _ in results):
            series["boundary"] = [b for _, b, _ in results]
        plots.save_convergence_figure(hs, series,
                                      os.path.join(out, "derivative.png"),
                                      ylabel="derivative")
    last = results[-1][0]
    print(f"deriv: value = {_fmt(last.value)} (field {last.field}, "
          f"h = {last.mesh_h:.4g})")
    return 0


def cmd_jint(cfg, out) -> int:
    ccfg = _section(cfg, "contour")
    try:
        center = tuple(ccfg["center"])
        radii = list(ccfg["radii"])
    except KeyError as exc:
        raise ConfigError(f"contour is missing key {exc}") from exc
    samples = int(ccfg.get("samples", 4096))
    coeffs = build_coefficients(cfg)
    mu = build_velocity(_section(cfg, "velocity"))

    kind = ccfg.get("field", "solution")
    if kind == "analytic_tip":
        field = mode3_tip_field(tuple(ccfg.get("tip", center)))
    elif kind == "solution":
        mesh = build_mesh(cfg)
        field = solve_problem(mesh, coeffs, tol=_solver_tol(cfg))
    else:
        raise ConfigError(f"contour.field must be 'solution' or "
                          f"'analytic_tip', got {kind!r}")

    lines = ["radius,samples,value"]
    values = []
    for r in radii:
        val = j_integral(ContourSpec(center, float(r), samples), field,
                         coeffs, mu)
        values.append(val)
        lines.append(f"{_fmt(r)},{samples},{_fmt(val)}")
    _write_lines(os.path.join(out, "jintegral.csv"), lines)
    if _plots_enabled(cfg):
        plots.save_series_figure(radii, values,
                                 os.path.join(out, "jintegral.png"),
                                 xlabel="contour radius", ylabel="J value")
    spread = max(values) - min(values) if len(values) > 1 else 0.0
    print(f"jint: {len(radii)} radii, spread = {spread:.3e}")
    return 0


def cmd_grate(cfg, out) -> int:
    gcfg = _section(cfg, "grate")
    try:
        tip = tuple(gcfg["tip"])
        direction = tuple(gcfg["direction"])
        r_in, r_out = float(gcfg["r_in"]), float(gcfg["r_out"])
    except KeyError as exc:
        raise ConfigError(f"grate is missing key {exc}") from exc
    toughness = gcfg.get("toughness")
    coeffs = build_coefficients(cfg)
    tol = _solver_tol(cfg)
    levels = _refinement_levels(cfg)

    def run(level):
        mesh = build_mesh(cfg, override_n=level)
        u = solve_problem(mesh, coeffs, tol=tol)
        g = energy_release_rate(mesh, coeffs, u, tip, direction, r_in, r_out)
        return mesh_size(mesh), g

    results = _map_levels(run, levels if levels else [None])
    field_desc = (f"crack_extension(tip=({tip[0]:.6g},{tip[1]:.6g}),"
                  f"r_in={r_in:.6g},r_out={r_out:.6g})")
    lines = [REPORT_HEADER]
    for h, g in results:
        lines.append(_report_row("energy_release_rate", g, 0.0, 0.0, 0.0, h,
                                 field_desc))
    _write_lines(os.path.join(out, "grate.csv"), lines)

    g_final = results[-1][1]
    glines = ["quantity,value", f"release_rate,{_fmt(g_final)}"]
    verdict_text = ""
    if toughness is not None:
        verdict = griffith_check(g_final, float(toughness))
        glines.append(f"toughness,{_fmt(verdict.toughness)}")
        glines.append(f"margin,{_fmt(verdict.margin)}")
        glines.append("verdict," + ("propagates" if verdict.propagates
                                    else "arrested"))
        verdict_text = (", propagates" if verdict.propagates else ", arrested")
    _write_lines(os.path.join(out, "griffith.csv"), glines)
    if _plots_enabled(cfg):
        plots.save_series_figure([h for h, _ in results],
                                 [g for _, g in results],
                                 os.path.join(out, "grate.png"),
                                 xlabel="mesh size h",
                                 ylabel="energy release rate",
                                 ref=float(toughness) if toughness is not None
                                 else None,
                                 ref_label="toughness")
    print(f"grate: G = {_fmt(g_final)}{verdict_text}")
    return 0


def cmd_verify(cfg, out) -> int:
    vlist = cfg.get("velocities")
    if not isinstance(vlist, list) or not vlist:
        raise ConfigError("'velocities' must be a nonempty list")
    coeffs = build_coefficients(cfg)
    mesh = build_mesh(cfg)
    tol_cfg = float(_section(cfg, "verify", required=False)
                    .get("tolerance", 1e-6))
    step = _fd_step(cfg)
    solver_tol = _solver_tol(cfg)
    u = solve_problem(mesh, coeffs, tol=solver_tol)

    def run(vcfg):
        mu = build_velocity(vcfg)
        rep = shape_derivative_domain(mesh, coeffs, u, mu)
        fd = fd_oracle(mesh, coeffs, mu, step=step, tol=solver_tol)
        fd2 = fd_oracle(mesh, coeffs, mu, step=2.0 * step, tol=solver_tol)
        return mu, rep, fd, fd2

    lines = ["field,domain_value,fd_value,discrepancy,richardson_gap,"
             "tolerance,status"]
    labels, gaps, tols = [], [], []
    failures = 0
    for mu, rep, fd, fd2 in _map_levels(run, vlist):
        gap = abs(rep.value - fd)
        allowed = tol_cfg * (1.0 + abs(rep.value))
        ok = gap <= allowed
        failures += 0 if ok else 1
        labels.append(mu.name)
        gaps.append(gap)
        tols.append(allowed)
        lines.append(f"\"{mu.name}\",{_fmt(rep.value)},{_fmt(fd)},"
                     f"{_fmt(gap)},{_fmt(abs(fd - fd2))},{_fmt(allowed)},"
                     + ("ok" if ok else "fail"))
    _write_lines(os.path.join(out, "verify.csv"), lines)
    if _plots_enabled(cfg):
        plots.save_discrepancy_figure(labels, gaps, tols,
                                      os.path.join(out, "verify.png"))
    print(f"verify: {len(labels)} fields, max discrepancy = {max(gaps):.3e}, "
          f"{failures} failures")
    if failures:
        raise DerivativeCheckError(
            f"{failures} of {len(labels)} envelope-identity checks failed")
    return 0


def cmd_abstract(cfg, out) -> int:
    acfg = _section(cfg, "abstract", required=False)
    n_families = int(acfg.get("families", 20))
    max_dim = int(acfg.get("max_dim", 16))
    seed = int(acfg.get("seed", 0))
    rng = np.random.default_rng(seed)

    lines = ["family,dim_u,dim_mu,check,error,tolerance,status"]
    failures = 0
    errors_by_check = {"envelope": [], "sensitivity": [], "second": [],
                       "continuity_slope": []}
    for fam_id in range(n_families):
        dim_u = int(rng.integers(2, max_dim + 1))
        dim_mu = int(rng.integers(1, min(dim_u, 6) + 1))
        qf = random_quadratic_family(dim_u, dim_mu, rng)
        family = qf.family()
        mu0 = rng.standard_normal(dim_mu)
        rec = find_minimizer(family, mu0, np.zeros(dim_u), tol=1e-11)

        checks = []
        env = envelope_derivative(family, mu0, rec)
        fd_env = fd_optimal_value_gradient(family, mu0)
        checks.append(("envelope",
                       float(np.max(np.abs(env - fd_env)))
                       / (1.0 + float(np.max(np.abs(fd_env)))), 1e-7))
        sens = minimizer_sensitivity(family, mu0, rec)
        fd_sens = fd_minimizer_jacobian(family, mu0)
        checks.append(("sensitivity", float(np.max(np.abs(sens - fd_sens))),
                       1e-6))
        second = envelope_second_derivative(family, mu0, rec)
        fd_second = fd_optimal_value_hessian(family, mu0)
        checks.append(("second", float(np.max(np.abs(second - fd_second))),
                       1e-5))
        direction = rng.standard_normal(dim_mu)
        rows = minimizer_continuity_probe(family, mu0, direction,
                                          [1e-1, 1e-2, 1e-3], tol=1e-12)
        ts = np.log([r[0] for r in rows])
        ds = np.log([max(r[1], 1e-300) for r in rows])
        slope = float(np.polyfit(ts, ds, 1)[0])
        # slope check passes when the minimizer moves at first order
        checks.append(("continuity_slope", slope, 0.95))

        for name, value, tol in checks:
            ok = value >= tol if name == "continuity_slope" else value <= tol
            failures += 0 if ok else 1
            errors_by_check[name].append(value)
            lines.append(f"{fam_id},{dim_u},{dim_mu},{name},{_fmt(value)},"
                         f"{_fmt(tol)}," + ("ok" if ok else "fail"))

    _write_lines(os.path.join(out, "abstract.csv"), lines)
    if _plots_enabled(cfg):
        labels = ["envelope", "sensitivity", "second"]
        worst = [max(errors_by_check[k]) for k in labels]
        plots.save_discrepancy_figure(labels, worst, [1e-7, 1e-6, 1e-5],
                                      os.path.join(out, "abstract.png"))
    print(f"abstract: {n_families} families, {failures} failed checks")
    if failures:
        raise DerivativeCheckError(
            f"{failures} abstract formula checks failed")
    return 0


COMMANDS = {
    "solve": cmd_solve,
    "deriv": cmd_deriv,
    "jint": cmd_jint,
    "grate": cmd_grate,
    "verify": cmd_verify,
    "abstract": cmd_abstract,
    "meshgen": cmd_meshgen,
}


CONFIG_REFERENCE = """\
config file (JSON object), keys by command:
  mesh.generate     x_range [x0,x1], y_range [y0,y1], nx, ny,
                    dirichlet_sides (subset of left/right/bottom/top),
                    all_neumann (default false)
  mesh.file         path to a 'tri-mesh v1' file (alternative to generate)
  mesh.crack        {"from": [x,y], "to": [x,y]} edge-aligned slit; "from"
                    on the boundary, "to" strictly interior (the tip)
  coefficients      name: poisson_manufactured | constant | mode3_crack
                    constant params: B11 (1), B12 (0), B22 (1), b (0), f (0)
                    mode3_crack params: tip_x (0), tip_y (0)
  velocity          name: translate(dx,dy) | stretch_x | rotate(cx,cy)
                    | crack_extension(tip_x,tip_y,dir_x,dir_y,r_in,r_out)
  velocities        list of velocity objects (verify only)
  solver.tol        CG relative residual (default 1e-10)
  fd.step           oracle step (default 1e-4; 2x step gap also reported)
  refinements       list of n values; deriv/grate run one row per level
  contour           center [x,y], radii [r...], samples (4096),
                    field: solution | analytic_tip, tip [x,y] (jint only)
  grate             tip [x,y], direction [dx,dy], r_in, r_out,
                    toughness (optional, enables the Griffith verdict)
  verify.tolerance  envelope-identity gate, relative (default 1e-6)
  abstract          families (20), max_dim (16), seed (0)
  plots             render PNG figures next to the CSVs (default true)

exit codes: 0 ok, 1 config, 2 mesh/geometry, 3 solver, 4 derivative check.
environment: SHAPERATE_THREADS caps refinement-level parallelism (default 1).
"""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shaperate",
        description="Shape derivatives of minimized energies and crack "
                    "energy release rates.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=CONFIG_REFERENCE)
    sub = parser.add_subparsers(dest="command", required=True)
    help_text = {
        "solve": "solve the configured problem; write CSV/VTK/PNG",
        "deriv": "shape derivative report (domain + boundary formulas)",
        "jint": "contour-integral values per configured radius",
        "grate": "energy release rate and Griffith verdict",
        "verify": "envelope-identity table over configured velocity fields",
        "abstract": "finite-dimensional formula check suite",
        "meshgen": "generate a mesh file (with optional crack slit)",
    }
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=help_text[name])
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", default=".", help="output directory")
        p.set_defaults(handler=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        return args.handler(cfg, args.out)
    except (ShapeRateError, ValueError) as exc:
        code = exc.exit_code if isinstance(exc, ShapeRateError) else 1
        print(json.dumps({"error": {"code": code,
                                    "kind": type(exc).__name__,
                                    "message": str(exc)}}), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
