"""Shape derivatives of the minimized energy and crack energy release rates.

The primary quantity is the derivative of the optimal energy when the mesh
is dragged by a velocity field.  Because the solved field stays optimal,
that derivative needs no state sensitivity: it is a single domain integral
with three terms (coefficient advection, gradient twisting, volume change).

The integrand consumes the velocity through its nodal values: per triangle
it uses the vertex average and the constant Jacobian of the linear
interpolant.  That is exactly how :func:`shaperate.mesh.deform_mesh` moves
quadrature data, so the domain integral is the exact t-derivative of the
deform/reassemble/re-solve path and the finite-difference oracle must agree
with it to truncation error on any mesh, not merely in the refinement limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .deformation import VelocityField, crack_extension_field
from .errors import GeometryError, PreconditionError
from .fem import (CoefficientSet, DiscreteField, assemble, dirichlet_values,
                  energy, solve)
from .mesh import (TriangleLocator, TriMesh, deform_mesh, field_at, mesh_size,
                   triangle_geometry)

MINIMIZER_TOL = 1e-6


@dataclass
class ShapeDerivativeReport:
    """Value and the three-term split of the optimal-energy derivative.

    ``value`` is exactly ``term_coeff + term_grad + term_div``:
    coefficient advection, gradient twisting by the velocity Jacobian, and
    the divergence (volume) term.
    """

    value: float
    term_coeff: float
    term_grad: float
    term_div: float
    mesh_h: float
    field: str


@dataclass
class ContourSpec:
    """Circle used as the sampling contour of the flux integral."""

    center: tuple
    radius: float
    sample_count: int = 4096

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("contour radius must be positive")
        if self.sample_count < 8:
            raise ValueError("need at least 8 contour samples")


@dataclass
class AnalyticField:
    """Closed-form scalar field for contour integrals without a mesh."""

    value: Callable[[float, float], float]
    gradient: Callable[[float, float], np.ndarray]


@dataclass
class GriffithVerdict:
    propagates: bool
    margin: float
    release_rate: float
    toughness: float


def mode3_tip_field(tip=(0.0, 0.0)) -> AnalyticField:
    """Square-root anti-plane tip displacement with its exact gradient."""
    tx, ty = float(tip[0]), float(tip[1])

    def value(x, y):
        r = math.hypot(x - tx, y - ty)
        return math.sqrt(r) * math.sin(0.5 * math.atan2(y - ty, x - tx))

    def gradient(x, y):
        r = math.hypot(x - tx, y - ty)
        theta = math.atan2(y - ty, x - tx)
        s = 0.5 / math.sqrt(r)
        return np.array([-s * math.sin(0.5 * theta), s * math.cos(0.5 * theta)])

    return AnalyticField(value=value, gradient=gradient)


def check_minimizer(mesh: TriMesh, coeffs: CoefficientSet, u: DiscreteField,
                    tol: float = MINIMIZER_TOL):
    """Reject stale fields: the energy gradient at ``u`` must be negligible."""
    system = assemble(mesh, coeffs)
    r = system.matrix @ u.values - system.rhs
    r[list(system.dirichlet.keys())] = 0.0
    res = float(np.linalg.norm(r))
    scale = 1.0 + float(np.linalg.norm(system.rhs))
    if res > tol * scale:
        raise PreconditionError(
            f"field is not the solved minimizer: residual {res:.3e} "
            f"exceeds {tol:.1e} * {scale:.3e}")


def shape_derivative_domain(mesh: TriMesh, coeffs: CoefficientSet,
                            u: DiscreteField, mu: VelocityField,
                            verify_minimizer: bool = True) -> ShapeDerivativeReport:
    """Domain-integral derivative of the optimal energy along ``mu``.

    Each triangle contributes its area times
    ``grad_x W . mu_avg - flux' Jmu grad_u + W div(mu)`` with coefficient
    data at the centroid and the velocity reduced to its nodal interpolant
    (see the module docstring for why that choice is load-bearing).
    """
    if verify_minimizer:
        check_minimizer(mesh, coeffs, u)
    areas, grads = triangle_geometry(mesh)
    centroids = mesh.nodes[mesh.triangles].mean(axis=1)
    u_tri = u.values[mesh.triangles]
    ubar = u_tri.mean(axis=1)
    gu = np.einsum("mid,mi->md", grads, u_tri)

    mu_nodes = mu.values_at(mesh.nodes)
    mu_tri = mu_nodes[mesh.triangles]
    mu_avg = mu_tri.mean(axis=1)
    # jac[m, a, b] = d(interpolated mu_b)/d x_a, constant per triangle
    jac = np.einsum("mia,mib->mab", grads, mu_tri)

    term_coeff = 0.0
    term_grad = 0.0
    term_div = 0.0
    for m in range(mesh.n_triangles):
        x, y = centroids[m]
        gx = coeffs.grad_x_density(x, y, ubar[m], gu[m])
        flux = coeffs.flux(x, y, gu[m])
        w = coeffs.density(x, y, ubar[m], gu[m])
        term_coeff += areas[m] * float(gx @ mu_avg[m])
        term_grad -= areas[m] * float(flux @ jac[m] @ gu[m])
        term_div += areas[m] * w * float(jac[m, 0, 0] + jac[m, 1, 1])

    term_coeff, term_grad, term_div = (float(term_coeff), float(term_grad),
                                       float(term_div))
    return ShapeDerivativeReport(
        value=term_coeff + term_grad + term_div,
        term_coeff=term_coeff, term_grad=term_grad, term_div=term_div,
        mesh_h=mesh_size(mesh), field=mu.name)


def fd_oracle(mesh: TriMesh, coeffs: CoefficientSet, mu: VelocityField,
              step: float = 1e-4, tol: float = 1e-10) -> float:
    """Central difference of the re-minimized energy across ``+-step``.

    Every evaluation deforms the mesh, reassembles, re-solves and integrates
    the energy, so no code is shared with the analytic derivative.  The
    Dirichlet data rides with the material: values are pinned on the
    undeformed mesh and carried to the moved nodes.
    """
    pinned = dirichlet_values(mesh, coeffs)

    def optimal_energy(t):
        moved = deform_mesh(mesh, mu, t)
        system = assemble(moved, coeffs, dirichlet=pinned)
        field = solve(system, tol=tol)
        return energy(moved, coeffs, field)

    return (optimal_energy(step) - optimal_energy(-step)) / (2.0 * step)


def fd_richardson_gap(mesh: TriMesh, coeffs: CoefficientSet,
                      mu: VelocityField, step: float = 1e-4,
                      tol: float = 1e-10) -> float:
    """Consistency gap between the step and double-step differences.

    A gap far above truncation scale flags a mismatch between how the
    quadrature data moves and how the coefficient gradients were declared.
    """
    return abs(fd_oracle(mesh, coeffs, mu, step, tol)
               - fd_oracle(mesh, coeffs, mu, 2.0 * step, tol))


def _outer_boundary_segments(mesh):
    segs = []
    for a, b, tag in mesh.boundary_edges:
        if tag in ("crack_plus", "crack_minus"):
            continue
        segs.append((mesh.nodes[a], mesh.nodes[b], tag))
    return segs


def _point_segment_distance(p, a, b) -> float:
    ab = b - a
    denom = float(ab @ ab)
    s = 0.0 if denom == 0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return float(np.hypot(*(a + s * ab - p)))


def j_integral(contour: ContourSpec,
               field: Union[DiscreteField, AnalyticField],
               coeffs: CoefficientSet, mu: VelocityField) -> float:
    """Flux integral of the energy through a circle, oriented so that a
    tip-enclosing contour reports the energy release rate directly.

    Integrand per sample: ``W(u) mu.nu - (flux(u).nu)(grad u . mu)`` with
    ``nu`` the outward normal of the enclosed disk.  Samples sit at
    half-offset angles so a contour crossing a crack slit never lands on
    the coincident edges; on meshes the containing triangle supplies the
    one-sided value and gradient.
    """
    cx, cy = float(contour.center[0]), float(contour.center[1])
    radius, n = contour.radius, contour.sample_count

    locator = None
    if isinstance(field, DiscreteField):
        mesh = field.mesh
        center = np.array([cx, cy])
        for a, b, _tag in _outer_boundary_segments(mesh):
            if _point_segment_distance(center, a, b) <= radius:
                raise GeometryError(
                    "contour touches the outer boundary; shrink the radius")
        locator = TriangleLocator(mesh)

    total = 0.0
    for k in range(n):
        theta = -math.pi + (k + 0.5) * (2.0 * math.pi / n)
        nu = np.array([math.cos(theta), math.sin(theta)])
        p = np.array([cx + radius * nu[0], cy + radius * nu[1]])
        if locator is None:
            val = field.value(p[0], p[1])
            grad = np.asarray(field.gradient(p[0], p[1]), dtype=float)
        else:
            tri = locator.find(p)
            val, grad = field_at(field.mesh, field.values, tri, p)
        mu_p = np.asarray(mu.eval(p[0], p[1]), dtype=float)
        w = coeffs.density(p[0], p[1], val, grad)
        flux = coeffs.flux(p[0], p[1], grad)
        total += w * float(mu_p @ nu) - float(flux @ nu) * float(grad @ mu_p)
    return total * (2.0 * math.pi * radius / n)


def energy_release_rate(mesh: TriMesh, coeffs: CoefficientSet,
                        u: DiscreteField, tip, direction,
                        r_in: float, r_out: float,
                        verify_minimizer: bool = True) -> float:
    """Release rate for a unit-speed straight tip advance.

    The advance field equals ``direction`` near the tip and dies across the
    ``[r_in, r_out]`` ring, which must stay clear of every non-crack
    boundary edge so only the slit is allowed to move.
    """
    if mesh.crack_tip is None:
        raise GeometryError("mesh has no crack tip")
    tip = np.asarray(tip, dtype=float)
    if np.max(np.abs(mesh.nodes[mesh.crack_tip] - tip)) > 1e-9:
        raise GeometryError(
            f"tip {tuple(tip)} does not match the mesh crack tip "
            f"{tuple(mesh.nodes[mesh.crack_tip])}")
    for a, b, tag in _outer_boundary_segments(mesh):
        if _point_segment_distance(tip, a, b) <= r_out:
            raise GeometryError(
                f"extension ring (r_out={r_out:.6g}) reaches the {tag} "
                "boundary; shrink it or move the tip")
    mu = crack_extension_field(tip, direction, r_in, r_out)
    report = shape_derivative_domain(mesh, coeffs, u, mu,
                                     verify_minimizer=verify_minimizer)
    return float(-report.value)


def dirichlet_boundary_formula(mesh: TriMesh, coeffs: CoefficientSet,
                               u: DiscreteField, mu: VelocityField) -> float:
    """Boundary-only form of the derivative for unit-B, zero-b problems.

    Sums ``-0.5 |grad u|^2 mu.nu`` over Dirichlet edges and ``-f u mu.nu``
    over the rest, with the gradient taken from each edge's one adjacent
    triangle.  This is a convergent surrogate, not the exact discrete
    derivative; compare it with the domain form under refinement.
    """
    probe = mesh.nodes[mesh.triangles[0]].mean(axis=0)
    if np.max(np.abs(np.asarray(coeffs.B(*probe)) - np.eye(2))) > 1e-12 \
            or abs(coeffs.b(*probe)) > 1e-12:
        raise ValueError("boundary formula requires unit B and zero b")

    edge_tri = {}
    for t, tri in enumerate(mesh.triangles):
        for i in range(3):
            key = tuple(sorted((int(tri[i]), int(tri[(i + 1) % 3]))))
            edge_tri.setdefault(key, t)
    _, grads = triangle_geometry(mesh)

    total = 0.0
    for a, b, tag in mesh.boundary_edges:
        pa, pb = mesh.nodes[a], mesh.nodes[b]
        mid = 0.5 * (pa + pb)
        length = float(np.hypot(*(pb - pa)))
        t = edge_tri[tuple(sorted((int(a), int(b))))]
        centroid = mesh.nodes[mesh.triangles[t]].mean(axis=0)
        nu = np.array([pb[1] - pa[1], pa[0] - pb[0]]) / length
        if float(nu @ (centroid - mid)) > 0:
            nu = -nu
        mu_mid = np.asarray(mu.eval(mid[0], mid[1]), dtype=float)
        mu_nu = float(mu_mid @ nu)
        if tag == "dirichlet":
            gu = np.einsum("id,i->d", grads[t], u.values[mesh.triangles[t]])
            total -= 0.5 * float(gu @ gu) * mu_nu * length
        else:
            u_mid = 0.5 * (u.values[a] + u.values[b])
            total -= coeffs.f(mid[0], mid[1]) * u_mid * mu_nu * length
    return total


def griffith_check(release_rate: float, toughness: float) -> GriffithVerdict:
    """Propagation verdict: the crack grows when G reaches the toughness."""
    if toughness <= 0:
        raise ValueError("toughness must be positive")
    return GriffithVerdict(propagates=release_rate >= toughness,
                           margin=release_rate - toughness,
                           release_rate=release_rate, toughness=toughness)


def inner_variation_check(mesh: TriMesh, coeffs: CoefficientSet,
                          u: DiscreteField, mu: VelocityField) -> float:
    """Derivative along an interior-supported field; zero in the limit.

    Requires a declared support box strictly inside the meshed region so the
    motion cannot disturb any boundary data.
    """
    if mu.support_hint is None:
        raise PreconditionError("velocity field declares no support box")
    hx0, hy0, hx1, hy1 = mu.support_hint
    x0, y0 = mesh.nodes.min(axis=0)
    x1, y1 = mesh.nodes.max(axis=0)
    if not (hx0 > x0 and hy0 > y0 and hx1 < x1 and hy1 < y1):
        raise PreconditionError(
            "support box is not strictly inside the meshed region")
    return shape_derivative_domain(mesh, coeffs, u, mu).value
