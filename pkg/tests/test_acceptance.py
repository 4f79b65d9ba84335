"""Acceptance suite: every release criterion at its pinned tolerance.

Each test prints one PASS/FAIL line (run with ``pytest -s`` to see them all)
and asserts the same condition, so the suite doubles as a report.
"""

import json
import math
import time

import numpy as np

import shaperate as sr
from shaperate.cli import main as cli_main
from shaperate.deformation import (Deformation, crack_extension_field,
                                   inv_jacobian, inv_jacobian_derivative,
                                   jacobian_det, jacobian_det_derivative)
from shaperate.param_variation import (envelope_derivative,
                                       envelope_second_derivative,
                                       fd_minimizer_jacobian,
                                       fd_optimal_value_gradient,
                                       fd_optimal_value_hessian,
                                       find_minimizer,
                                       minimizer_continuity_probe,
                                       minimizer_sensitivity,
                                       random_quadratic_family)

from conftest import ALL_SIDES, linear_velocity, varying_coefficients
from test_shape import radial_load_coefficients

PI4 = math.pi / 4
TARGET_DERIV = -math.pi ** 2 / 4


def report(criterion, ok, detail):
    print(f"[criterion {criterion}] {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {criterion}: {detail}"


def solve_square(coeffs, n, sides=ALL_SIDES, box=((0, 1), (0, 1))):
    mesh = sr.gen_rect_mesh(box[0], box[1], n, n, sides)
    return mesh, sr.solve_problem(mesh, coeffs)


def solve_cracked(n):
    mesh = sr.gen_rect_mesh((-1, 1), (-1, 1), n, n, ALL_SIDES)
    mesh = sr.insert_crack_slit(mesh, ((-1.0, 0.0), (0.0, 0.0)))
    coeffs = sr.coefficient_set("mode3_crack")
    return mesh, coeffs, sr.solve_problem(mesh, coeffs)


def test_criterion_1_discrete_envelope_identity():
    """Domain formula == re-solving FD oracle to 1e-6*(1+|value|) at 32x32."""
    start = time.perf_counter()
    manufactured = sr.coefficient_set("poisson_manufactured")
    varying = varying_coefficients()
    m_man, u_man = solve_square(manufactured, 32)
    m_var, u_var = solve_square(varying, 32, sides=frozenset({"left",
                                                              "bottom"}))
    m_crk, c_crk, u_crk = solve_cracked(32)

    bump = crack_extension_field((0.5, 0.5), (1.0, -1.0), 0.1, 0.35)
    pairs = [
        ("manufactured+stretch", m_man, manufactured, u_man,
         sr.stretch_x_field()),
        ("manufactured+rotation", m_man, manufactured, u_man,
         sr.rotate_field(0.5, 0.5)),
        ("manufactured+bump", m_man, manufactured, u_man, bump),
        ("varying+translation", m_var, varying, u_var,
         sr.translate_field(0.4, 0.2)),
        ("varying+stretch", m_var, varying, u_var, sr.stretch_x_field()),
        ("varying+bump", m_var, varying, u_var, bump),
        ("mode3+crack_extension", m_crk, c_crk, u_crk,
         crack_extension_field((0.0, 0.0), (1.0, 0.0), 0.25, 0.5)),
    ]
    worst = ("", 0.0, 1.0)
    for name, mesh, coeffs, u, mu in pairs:
        value = sr.shape_derivative_domain(mesh, coeffs, u, mu).value
        fd = sr.fd_oracle(mesh, coeffs, mu, step=1e-4)
        gap = abs(value - fd)
        allowed = 1e-6 * (1.0 + abs(value))
        if gap / allowed > worst[1] / worst[2]:
            worst = (name, gap, allowed)
        assert gap <= allowed, f"{name}: gap {gap:.3e} > {allowed:.3e}"
    elapsed = time.perf_counter() - start
    report(1, elapsed <= 30.0,
           f"{len(pairs)} pairs, worst {worst[0]} gap {worst[1]:.2e} "
           f"(tol {worst[2]:.2e}), runtime {elapsed:.1f}s (limit 30s)")


def test_criterion_2_manufactured_shape_derivative():
    """Domain and boundary forms -> -pi^2/4, order >= 1, <= 2% at 64x64."""
    coeffs = sr.coefficient_set("poisson_manufactured")
    mu = sr.stretch_x_field()
    hs, dom_errs, bnd_errs = [], [], []
    for n in (16, 32, 64):
        mesh, u = solve_square(coeffs, n)
        dom = sr.shape_derivative_domain(mesh, coeffs, u, mu).value
        bnd = sr.dirichlet_boundary_formula(mesh, coeffs, u, mu)
        hs.append(1.0 / n)
        dom_errs.append(abs(dom - TARGET_DERIV))
        bnd_errs.append(abs(bnd - TARGET_DERIV))
    dom_order = float(np.polyfit(np.log(hs), np.log(dom_errs), 1)[0])
    bnd_order = float(np.polyfit(np.log(hs), np.log(bnd_errs), 1)[0])
    rel_dom = dom_errs[-1] / abs(TARGET_DERIV)
    rel_bnd = bnd_errs[-1] / abs(TARGET_DERIV)
    ok = (dom_order >= 1.0 and bnd_order >= 1.0
          and rel_dom <= 0.02 and rel_bnd <= 0.02)
    report(2, ok,
           f"orders domain {dom_order:.2f} / boundary {bnd_order:.2f} "
           f"(need >= 1.0), rel err at 64x64 {rel_dom:.2%} / {rel_bnd:.2%} "
           f"(need <= 2%)")


def test_criterion_3_analytic_j_integral():
    """Closed-form tip field: J = pi/4 to 1e-6; radii agree to 1e-9."""
    coeffs = sr.coefficient_set("mode3_crack")
    mu = sr.translate_field(1.0, 0.0)
    field = sr.mode3_tip_field()
    j1 = sr.j_integral(sr.ContourSpec((0, 0), 0.1, 4096), field, coeffs, mu)
    j2 = sr.j_integral(sr.ContourSpec((0, 0), 0.2, 4096), field, coeffs, mu)
    err = abs(j1 - PI4)
    spread = abs(j1 - j2)
    ok = err <= 1e-6 and spread <= 1e-9
    report(3, ok, f"|J - pi/4| = {err:.2e} (tol 1e-6), "
                  f"path-independence spread {spread:.2e} (tol 1e-9)")


def test_criterion_4_mode3_energy_release_rate():
    """G -> pi/4 monotonically; within 5% at 64x64; G >= 0 at every level."""
    errs, gs = [], []
    for n in (16, 32, 64):
        mesh, coeffs, u = solve_cracked(n)
        g = sr.energy_release_rate(mesh, coeffs, u, (0, 0), (1, 0), 0.25, 0.5)
        gs.append(g)
        errs.append(abs(g - PI4))
    nonneg = all(g >= 0 for g in gs)
    monotone = errs[0] > errs[1] > errs[2]
    final = errs[-1] / PI4
    ok = nonneg and monotone and final <= 0.05
    report(4, ok,
           f"G = {gs[0]:.4f}/{gs[1]:.4f}/{gs[2]:.4f} vs pi/4 = {PI4:.4f}, "
           f"errors {errs[0]:.2e} > {errs[1]:.2e} > {errs[2]:.2e} "
           f"(monotone: {monotone}), final rel {final:.2%} (need <= 5%), "
           f"all G >= 0: {nonneg}")


def test_criterion_5_invariance_zeros():
    """Exact cancellation at quadrature level: |derivative| <= 1e-10."""
    mesh = sr.gen_rect_mesh((0, 1), (0, 1), 8, 8, {"left"})
    const = sr.coefficient_set("constant", B11=2.0, B12=0.3, B22=1.0,
                               b=0.7, f=1.3)
    u_const = sr.solve_problem(mesh, const)
    translation = abs(sr.shape_derivative_domain(
        mesh, const, u_const, sr.translate_field(0.4, 0.2)).value)

    mesh_r = sr.gen_rect_mesh((0, 1), (0, 1), 12, 12, ALL_SIDES)
    radial = radial_load_coefficients()
    u_radial = sr.solve_problem(mesh_r, radial)
    rotation = abs(sr.shape_derivative_domain(
        mesh_r, radial, u_radial, sr.rotate_field(0.5, 0.5)).value)

    ok = translation <= 1e-10 and rotation <= 1e-10
    report(5, ok, f"translation zero {translation:.2e}, rotation zero "
                  f"{rotation:.2e} (tol 1e-10)")


def test_criterion_6_abstract_formula_suite():
    """20 random SPD quadratic families, dims <= 16, all four formulas."""
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = {"envelope": 0.0, "sensitivity": 0.0, "second": 0.0,
             "slope": np.inf}
    for _ in range(20):
        dim_u = int(rng.integers(2, 17))
        dim_mu = int(rng.integers(1, min(dim_u, 6) + 1))
        family = random_quadratic_family(dim_u, dim_mu, rng).family()
        mu0 = rng.standard_normal(dim_mu)
        rec = find_minimizer(family, mu0, np.zeros(dim_u), tol=1e-11)

        env = envelope_derivative(family, mu0, rec)
        fd_env = fd_optimal_value_gradient(family, mu0)
        worst["envelope"] = max(
            worst["envelope"],
            float(np.max(np.abs(env - fd_env)))
            / (1.0 + float(np.max(np.abs(fd_env)))))

        sens = minimizer_sensitivity(family, mu0, rec)
        worst["sensitivity"] = max(
            worst["sensitivity"],
            float(np.max(np.abs(sens - fd_minimizer_jacobian(family, mu0)))))

        second = envelope_second_derivative(family, mu0, rec)
        worst["second"] = max(
            worst["second"],
            float(np.max(np.abs(second
                                - fd_optimal_value_hessian(family, mu0)))))

        rows = minimizer_continuity_probe(family, mu0,
                                          rng.standard_normal(dim_mu),
                                          [1e-1, 1e-2, 1e-3], tol=1e-12)
        slope = float(np.polyfit(np.log([r[0] for r in rows]),
                                 np.log([r[1] for r in rows]), 1)[0])
        worst["slope"] = min(worst["slope"], slope)

    elapsed = time.perf_counter() - start
    ok = (worst["envelope"] <= 1e-7 and worst["sensitivity"] <= 1e-6
          and worst["second"] <= 1e-5 and worst["slope"] >= 0.95
          and elapsed <= 5.0)
    report(6, ok,
           f"envelope {worst['envelope']:.2e} (tol 1e-7), sensitivity "
           f"{worst['sensitivity']:.2e} (tol 1e-6), second "
           f"{worst['second']:.2e} (tol 1e-5), slope {worst['slope']:.3f} "
           f"(need >= 0.95), runtime {elapsed:.1f}s (limit 5s)")


def test_criterion_7_deformation_calculus():
    """Determinant floor over 1000 random probes; first-order limit checks."""
    rng = np.random.default_rng(7)
    checked = 0
    min_slack = np.inf
    while checked < 1000:
        kind = rng.integers(0, 2)
        if kind == 0:
            mu = linear_velocity(rng.standard_normal((2, 2)))
        else:
            a, b = rng.uniform(0.3, 1.5, size=2)
            s = rng.uniform(0.2, 1.0)
            mu = sr.VelocityField(
                eval=lambda x, y, a=a, b=b, s=s: (s * a * math.sin(x),
                                                  s * b * math.cos(y)),
                jacobian=lambda x, y, a=a, b=b, s=s: np.array(
                    [[s * a * math.cos(x), 0.0],
                     [0.0, -s * b * math.sin(y)]]),
                lip_bound=s * max(a, b), name="trig")
        if mu.lip_bound == 0:
            continue
        t = rng.uniform(-0.98, 0.98) / mu.lip_bound
        d = Deformation(mu, t)
        x = rng.uniform(-2, 2, size=2)
        floor = (1.0 - abs(t) * mu.lip_bound) ** 2
        slack = jacobian_det(d, x) - floor
        min_slack = min(min_slack, slack)
        assert slack >= -1e-12
        checked += 1

    # first-order limits of the determinant and inverse-Jacobian maps
    mu = sr.VelocityField(
        eval=lambda x, y: (x * x, x * y),
        jacobian=lambda x, y: np.array([[2 * x, y], [0.0, x]]),
        lip_bound=8.0, name="quadratic")
    p = (1.0, 2.0)
    div = jacobian_det_derivative(mu, p)
    dinv = inv_jacobian_derivative(mu, p)
    det_errs, inv_errs = [], []
    for t in (1e-2, 5e-3, 2.5e-3):
        d = Deformation(mu, t)
        det_errs.append(abs((jacobian_det(d, p) - 1.0) / t - div))
        inv_errs.append(float(np.max(np.abs(
            (inv_jacobian(d, p) - np.eye(2)) / t - dinv))))
    det_order = min(np.log2(det_errs[i] / det_errs[i + 1]) for i in range(2))
    inv_order = min(np.log2(inv_errs[i] / inv_errs[i + 1]) for i in range(2))
    ok = min_slack >= -1e-12 and det_order >= 0.9 and inv_order >= 0.9
    report(7, ok,
           f"1000 probes, min determinant slack {min_slack:.2e} (>= -1e-12), "
           f"limit orders det {det_order:.2f} / inverse {inv_order:.2f} "
           f"(need >= 0.9)")


def test_criterion_8_fem_baseline(tmp_path):
    """Nodal convergence order >= 1.9; exact file round trip; deterministic CLI."""
    coeffs = sr.coefficient_set("poisson_manufactured")
    errs, hs = [], []
    for n in (16, 32, 64):
        mesh, u = solve_square(coeffs, n)
        exact = np.sin(np.pi * mesh.nodes[:, 0]) \
            * np.sin(np.pi * mesh.nodes[:, 1])
        errs.append(float(np.max(np.abs(u.values - exact))))
        hs.append(1.0 / n)
    order = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])

    slit = sr.insert_crack_slit(
        sr.gen_rect_mesh((0, 1), (0, 1), 8, 8, ALL_SIDES),
        ((0.0, 0.5), (0.5, 0.5)))
    path = tmp_path / "slit.txt"
    sr.write_mesh(slit, path)
    back = sr.read_mesh(path)
    roundtrip = (np.array_equal(back.nodes, slit.nodes)
                 and np.array_equal(back.triangles, slit.triangles)
                 and back.boundary_edges == slit.boundary_edges
                 and back.crack_tip == slit.crack_tip)

    cfg = tmp_path / "solve.json"
    cfg.write_text(json.dumps({
        "mesh": {"generate": {"x_range": [0, 1], "y_range": [0, 1],
                              "nx": 12, "ny": 12,
                              "dirichlet_sides": ["left", "right",
                                                  "bottom", "top"]}},
        "coefficients": {"name": "poisson_manufactured"},
        "plots": False}))
    assert cli_main(["solve", "--config", str(cfg),
                     "--out", str(tmp_path / "a")]) == 0
    assert cli_main(["solve", "--config", str(cfg),
                     "--out", str(tmp_path / "b")]) == 0
    deterministic = (
        (tmp_path / "a" / "solution.csv").read_bytes()
        == (tmp_path / "b" / "solution.csv").read_bytes()
        and (tmp_path / "a" / "solution.vtk").read_bytes()
        == (tmp_path / "b" / "solution.vtk").read_bytes())

    ok = order >= 1.9 and roundtrip and deterministic
    report(8, ok,
           f"nodal error order {order:.2f} (need >= 1.9), round trip exact: "
           f"{roundtrip}, CLI reruns byte-identical: {deterministic}")
