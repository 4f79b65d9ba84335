"""Shared problem builders for the test suite.

Solved benchmark problems are cached per mesh resolution; meshes and fields
are treated as immutable, so tests that perturb a solution must copy it.
"""

import math
from functools import lru_cache

import numpy as np

import shaperate as sr
from shaperate.deformation import VelocityField, crack_extension_field
from shaperate.fem import CoefficientSet

ALL_SIDES = frozenset({"left", "right", "bottom", "top"})


@lru_cache(maxsize=None)
def manufactured_problem(n):
    """Unit-square Poisson benchmark solved at resolution n."""
    mesh = sr.gen_rect_mesh((0, 1), (0, 1), n, n, ALL_SIDES)
    coeffs = sr.coefficient_set("poisson_manufactured")
    u = sr.solve_problem(mesh, coeffs)
    return mesh, coeffs, u


@lru_cache(maxsize=None)
def cracked_problem(n):
    """Mode-III cracked square solved at resolution n (n even)."""
    mesh = sr.gen_rect_mesh((-1, 1), (-1, 1), n, n, ALL_SIDES)
    mesh = sr.insert_crack_slit(mesh, ((-1.0, 0.0), (0.0, 0.0)))
    coeffs = sr.coefficient_set("mode3_crack")
    u = sr.solve_problem(mesh, coeffs)
    return mesh, coeffs, u


def varying_coefficients() -> CoefficientSet:
    """Smooth non-constant B, b, f with analytic gradients (zero Dirichlet)."""

    def B(x, y):
        return np.array([[1.5 + 0.5 * math.sin(x), 0.2 * x * y],
                         [0.2 * x * y, 1.2 + 0.3 * y * y]])

    def grad_B(x, y):
        bx = np.array([[0.5 * math.cos(x), 0.2 * y], [0.2 * y, 0.0]])
        by = np.array([[0.0, 0.2 * x], [0.2 * x, 0.6 * y]])
        return bx, by

    return CoefficientSet(
        B=B, grad_B=grad_B,
        b=lambda x, y: 0.5 + 0.25 * x, grad_b=lambda x, y: (0.25, 0.0),
        f=lambda x, y: 1.0 + x * x * y, grad_f=lambda x, y: (2 * x * y, x * x),
        g=lambda x, y: 0.0, beta0=0.5, name="varying")


@lru_cache(maxsize=None)
def varying_problem(n):
    mesh = sr.gen_rect_mesh((0, 1), (0, 1), n, n, frozenset({"left", "bottom"}))
    coeffs = varying_coefficients()
    u = sr.solve_problem(mesh, coeffs)
    return mesh, coeffs, u


def interior_bump(center=(0.5, 0.5), direction=(1.0, 0.0), r_in=0.1,
                  r_out=0.35) -> VelocityField:
    """Interior-supported directional bump (plateau + C1 feather)."""
    return crack_extension_field(center, direction, r_in, r_out)


def add_fields(a: VelocityField, b: VelocityField) -> VelocityField:
    return VelocityField(
        eval=lambda x, y: tuple(np.add(a.eval(x, y), b.eval(x, y))),
        jacobian=lambda x, y: np.asarray(a.jacobian(x, y)) +
        np.asarray(b.jacobian(x, y)),
        lip_bound=a.lip_bound + b.lip_bound,
        name=f"{a.name}+{b.name}")


def linear_velocity(j, offset=(0.0, 0.0)) -> VelocityField:
    """Field with constant transpose-Jacobian ``j`` (exact Lipschitz bound)."""
    j = np.asarray(j, dtype=float)
    b = np.asarray(offset, dtype=float)
    return VelocityField(
        eval=lambda x, y: tuple(j.T @ (x, y) + b),
        jacobian=lambda x, y: j,
        lip_bound=float(np.linalg.norm(j, 2)),
        name="linear")
