"""Velocity fields and the calculus of small Lipschitz domain motions.

A deformation is the identity plus ``t`` times a velocity field ``mu`` with
a declared Lipschitz bound.  While ``|t| * lip < 1`` the motion is
bi-Lipschitz: its pointwise transpose-Jacobian ``I + t*Dmu`` stays
invertible with determinant at least ``(1 - |t|*lip)^2``.  The determinant
and inverse-Jacobian maps are smooth in ``t``; their derivatives at ``t=0``
are ``div mu`` and ``-Dmu``, which is what the shape-derivative integrand
consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DeformationError
from .mesh import TriangleLocator, TriMesh, deform_mesh, field_at, triangle_geometry


@dataclass
class VelocityField:
    """Analytic velocity with its transpose Jacobian, entry (i,j) = d mu_j / d x_i.

    ``lip_bound`` is declared by the constructor (an upper bound for the
    Jacobian 2-norm over the reference box) and can be spot-checked with
    :func:`sample_jacobian_norm`.  User callables must be pure; fields are
    treated as immutable values.
    """

    eval: Callable[[float, float], tuple]
    jacobian: Callable[[float, float], np.ndarray]
    lip_bound: float
    support_hint: Optional[tuple] = None
    name: str = "custom"

    def values_at(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return np.array([self.eval(x, y) for x, y in points], dtype=float)

    def jacobians_at(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return np.array([self.jacobian(x, y) for x, y in points], dtype=float)


def bilipschitz_margin(mu: VelocityField, t: float) -> float:
    """1 - |t|*lip; the move is admissible exactly when this is positive."""
    return 1.0 - abs(t) * mu.lip_bound


@dataclass
class Deformation:
    """Admissible motion x -> x + t*mu(x)."""

    mu: VelocityField
    t: float

    def __post_init__(self):
        if bilipschitz_margin(self.mu, self.t) <= 0:
            raise DeformationError(
                f"inadmissible deformation: |t|*lip = "
                f"{abs(self.t) * self.mu.lip_bound:.6g} >= 1")


def jacobian_det(d: Deformation, x) -> float:
    """det(I + t*Dmu) at ``x``; bounded below by the squared margin."""
    j = np.asarray(d.mu.jacobian(x[0], x[1]), dtype=float)
    m = np.eye(2) + d.t * j
    return float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])


def inv_jacobian(d: Deformation, x) -> np.ndarray:
    """Exact 2x2 inverse of I + t*Dmu at ``x``."""
    j = np.asarray(d.mu.jacobian(x[0], x[1]), dtype=float)
    m = np.eye(2) + d.t * j
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if abs(det) < 1e-14:
        raise DeformationError("singular deformation gradient")
    return np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]) / det


def jacobian_det_derivative(mu: VelocityField, x) -> float:
    """t-derivative of the determinant at t=0: the divergence of ``mu``."""
    j = np.asarray(mu.jacobian(x[0], x[1]), dtype=float)
    return float(j[0, 0] + j[1, 1])


def inv_jacobian_derivative(mu: VelocityField, x) -> np.ndarray:
    """t-derivative of the inverse Jacobian at t=0: minus the Jacobian."""
    return -np.asarray(mu.jacobian(x[0], x[1]), dtype=float)


def _ramp(s: float) -> float:
    # C1 cubic step from 1 down to 0 on [0, 1].
    return 1.0 - s * s * (3.0 - 2.0 * s)


def _ramp_slope(s: float) -> float:
    return -6.0 * s * (1.0 - s)


def crack_extension_field(tip, direction, r_in: float, r_out: float) -> VelocityField:
    """Unit advance of the tip, feathered to zero across a ring.

    The field equals ``direction`` on the disk of radius ``r_in`` around the
    tip, falls to zero with a C1 cubic profile on ``[r_in, r_out]`` and
    vanishes beyond, so the supported region is the ``r_out`` disk and the
    Lipschitz bound is the ramp's peak slope 1.5/(r_out - r_in).
    """
    if not (0 < r_in < r_out):
        raise ValueError("need 0 < r_in < r_out")
    tx, ty = float(tip[0]), float(tip[1])
    dx, dy = float(direction[0]), float(direction[1])
    norm = math.hypot(dx, dy)
    if norm == 0:
        raise ValueError("direction must be nonzero")
    dx, dy = dx / norm, dy / norm
    width = r_out - r_in

    def evaluate(x, y):
        r = math.hypot(x - tx, y - ty)
        if r <= r_in:
            return (dx, dy)
        if r >= r_out:
            return (0.0, 0.0)
        rho = _ramp((r - r_in) / width)
        return (dx * rho, dy * rho)

    def jac(x, y):
        r = math.hypot(x - tx, y - ty)
        if r <= r_in or r >= r_out:
            return np.zeros((2, 2))
        slope = _ramp_slope((r - r_in) / width) / width
        rx, ry = (x - tx) / r, (y - ty) / r
        # entry (i, j) = d mu_j / d x_i = dir_j * rho'(r) * x_i_hat
        return slope * np.array([[rx * dx, rx * dy], [ry * dx, ry * dy]])

    return VelocityField(
        eval=evaluate, jacobian=jac, lip_bound=1.5 / width,
        support_hint=(tx - r_out, ty - r_out, tx + r_out, ty + r_out),
        name=f"crack_extension(tip=({tx:.6g},{ty:.6g}),dir=({dx:.6g},{dy:.6g}),"
             f"r_in={r_in:.6g},r_out={r_out:.6g})")


def translate_field(dx: float, dy: float) -> VelocityField:
    return VelocityField(
        eval=lambda x, y: (dx, dy),
        jacobian=lambda x, y: np.zeros((2, 2)),
        lip_bound=0.0, name=f"translate({dx:.6g},{dy:.6g})")


def stretch_x_field() -> VelocityField:
    return VelocityField(
        eval=lambda x, y: (x, 0.0),
        jacobian=lambda x, y: np.array([[1.0, 0.0], [0.0, 0.0]]),
        lip_bound=1.0, name="stretch_x")


def rotate_field(cx: float = 0.0, cy: float = 0.0) -> VelocityField:
    return VelocityField(
        eval=lambda x, y: (-(y - cy), x - cx),
        jacobian=lambda x, y: np.array([[0.0, 1.0], [-1.0, 0.0]]),
        lip_bound=1.0, name=f"rotate({cx:.6g},{cy:.6g})")


def velocity_field(name: str, **params) -> VelocityField:
    """CLI-facing factory for the named velocity fields."""
    if name == "translate":
        return translate_field(params["dx"], params["dy"])
    if name == "stretch_x":
        return stretch_x_field()
    if name == "rotate":
        return rotate_field(params.get("cx", 0.0), params.get("cy", 0.0))
    if name == "crack_extension":
        return crack_extension_field(
            (params["tip_x"], params["tip_y"]),
            (params["dir_x"], params["dir_y"]),
            params["r_in"], params["r_out"])
    raise ValueError(f"unknown velocity field {name!r}")


def fd_check_jacobian(mu: VelocityField, box, rng, points: int = 10,
                      rtol: float = 1e-6, h: float = 1e-6):
    """Spot-check the supplied Jacobian against central differences."""
    x0, y0, x1, y1 = box
    for _ in range(points):
        x = x0 + (x1 - x0) * rng.random()
        y = y0 + (y1 - y0) * rng.random()
        j = np.asarray(mu.jacobian(x, y), dtype=float)
        fd = np.empty((2, 2))
        fd[0] = (np.subtract(mu.eval(x + h, y), mu.eval(x - h, y))) / (2 * h)
        fd[1] = (np.subtract(mu.eval(x, y + h), mu.eval(x, y - h))) / (2 * h)
        if np.max(np.abs(j - fd)) > rtol * (1.0 + np.max(np.abs(fd))):
            raise ValueError(
                f"jacobian disagrees with finite differences at ({x:.4g},{y:.4g})")


def sample_jacobian_norm(mu: VelocityField, box, rng, points: int = 200) -> float:
    """Largest sampled Jacobian 2-norm; must not exceed the declared bound."""
    x0, y0, x1, y1 = box
    worst = 0.0
    for _ in range(points):
        x = x0 + (x1 - x0) * rng.random()
        y = y0 + (y1 - y0) * rng.random()
        worst = max(worst, float(np.linalg.norm(
            np.asarray(mu.jacobian(x, y), dtype=float), 2)))
    return worst


def pushforward_continuity_probe(mesh: TriMesh, mu: VelocityField, field,
                                 steps) -> list:
    """Discrete H1 distance between a transported nodal field and itself.

    The field rides the deformed mesh (same nodal values at moved nodes) and
    is compared with the original at the original element centroids, using
    nearest-triangle linear extension where a centroid falls just outside
    the moved mesh.  Returns rows ``(t, norm)`` that decay to 0 with t.
    """
    values = np.asarray(getattr(field, "values", field), dtype=float)
    if values.shape[0] != mesh.n_nodes:
        raise ValueError("field length does not match the mesh")
    areas, grads = triangle_geometry(mesh)
    centroids = mesh.nodes[mesh.triangles].mean(axis=1)
    v_tri = values[mesh.triangles]
    base_val = v_tri.mean(axis=1)
    base_grad = np.einsum("mid,mi->md", grads, v_tri)

    rows = []
    for t in steps:
        moved = deform_mesh(mesh, mu, t)
        locator = TriangleLocator(moved)
        acc = 0.0
        for m, c in enumerate(centroids):
            tri = locator.find(c, extrapolate=True)
            val, grad = field_at(moved, values, tri, c)
            acc += areas[m] * ((val - base_val[m]) ** 2
                               + float(np.sum((grad - base_grad[m]) ** 2)))
        rows.append((float(t), float(np.sqrt(acc))))
    return rows
