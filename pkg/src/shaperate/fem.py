"""P1 finite elements for the quadratic energy density
W(x, v, grad v) = 0.5*(grad v' B(x) grad v + b(x) v^2) - f(x) v.

Every code path here evaluates coefficients by a single centroid point per
triangle and the solution value there as the nodal mean.  That makes the
assembled system exactly the gradient of :func:`energy`, which in turn is
what lets the shape module's analytic derivative match its re-solving
finite-difference oracle to truncation error rather than mesh error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .deformation import Deformation
from .errors import SingularProblemError, SolverError
from .mesh import TriMesh, triangle_geometry

# Dirichlet values on a crack face are traces from that face's side; the
# evaluation point is nudged off the slit line by this fraction of the mesh.
_TRACE_NUDGE = 1e-9


@dataclass
class CoefficientSet:
    """Spatial data of the energy density and its gradients.

    ``B`` maps a point to a 2x2 symmetric matrix with ellipticity floor
    ``beta0``; ``grad_B`` returns the pair (dB/dx, dB/dy).  ``b >= 0`` and
    ``f`` are scalars with gradient pairs, ``g`` is the Dirichlet datum.
    """

    B: Callable[[float, float], np.ndarray]
    grad_B: Callable[[float, float], tuple]
    b: Callable[[float, float], float]
    grad_b: Callable[[float, float], tuple]
    f: Callable[[float, float], float]
    grad_f: Callable[[float, float], tuple]
    g: Callable[[float, float], float]
    beta0: float
    name: str = "custom"

    def density(self, x, y, eta, zeta) -> float:
        bm = np.asarray(self.B(x, y), dtype=float)
        return float(0.5 * (zeta @ bm @ zeta + self.b(x, y) * eta * eta)
                     - self.f(x, y) * eta)

    def grad_x_density(self, x, y, eta, zeta) -> np.ndarray:
        bx, by = self.grad_B(x, y)
        gb = self.grad_b(x, y)
        gf = self.grad_f(x, y)
        out = np.empty(2)
        out[0] = 0.5 * (zeta @ np.asarray(bx, float) @ zeta + gb[0] * eta * eta) \
            - gf[0] * eta
        out[1] = 0.5 * (zeta @ np.asarray(by, float) @ zeta + gb[1] * eta * eta) \
            - gf[1] * eta
        return out

    def flux(self, x, y, zeta) -> np.ndarray:
        """Derivative of the density in the gradient slot: B(x) zeta."""
        return np.asarray(self.B(x, y), dtype=float) @ zeta

    def spot_check(self, box, rng, points: int = 20, rtol: float = 1e-6):
        """Sampled ellipticity, sign and gradient-consistency checks."""
        x0, y0, x1, y1 = box
        h = 1e-6
        for _ in range(points):
            x = x0 + (x1 - x0) * rng.random()
            y = y0 + (y1 - y0) * rng.random()
            bm = np.asarray(self.B(x, y), dtype=float)
            if np.max(np.abs(bm - bm.T)) > 1e-12:
                raise ValueError("B is not symmetric")
            zeta = rng.standard_normal(2)
            zeta /= np.linalg.norm(zeta)
            if zeta @ bm @ zeta < self.beta0 - 1e-12:
                raise ValueError("ellipticity floor beta0 violated")
            if self.b(x, y) < 0:
                raise ValueError("b must be nonnegative")
            for fn, grad in ((self.b, self.grad_b), (self.f, self.grad_f)):
                fd = ((fn(x + h, y) - fn(x - h, y)) / (2 * h),
                      (fn(x, y + h) - fn(x, y - h)) / (2 * h))
                got = grad(x, y)
                scale = 1.0 + max(abs(fd[0]), abs(fd[1]))
                if max(abs(got[0] - fd[0]), abs(got[1] - fd[1])) > rtol * scale:
                    raise ValueError("scalar gradient disagrees with FD")
            bx, by = self.grad_B(x, y)
            fdx = (np.asarray(self.B(x + h, y)) - np.asarray(self.B(x - h, y))) / (2 * h)
            fdy = (np.asarray(self.B(x, y + h)) - np.asarray(self.B(x, y - h))) / (2 * h)
            scale = 1.0 + max(np.max(np.abs(fdx)), np.max(np.abs(fdy)))
            if max(np.max(np.abs(bx - fdx)), np.max(np.abs(by - fdy))) > rtol * scale:
                raise ValueError("grad_B disagrees with FD")


@dataclass
class DiscreteField:
    """Nodal scalar field; crack-duplicated nodes carry independent values."""

    mesh: TriMesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_nodes,):
            raise ValueError("value vector does not match the mesh")


@dataclass
class LinearSystem:
    """Assembled symmetric system with its Dirichlet constraint map."""

    mesh: TriMesh
    matrix: scipy.sparse.csr_matrix
    rhs: np.ndarray
    dirichlet: dict


def _centroid_data(mesh, coeffs):
    centroids = mesh.nodes[mesh.triangles].mean(axis=1)
    bc = np.array([coeffs.B(x, y) for x, y in centroids], dtype=float)
    bb = np.array([coeffs.b(x, y) for x, y in centroids], dtype=float)
    ff = np.array([coeffs.f(x, y) for x, y in centroids], dtype=float)
    return centroids, bc, bb, ff


def dirichlet_nodes(mesh: TriMesh) -> list:
    seen = sorted({i for a, b, tag in mesh.boundary_edges if tag == "dirichlet"
                   for i in (a, b)})
    return seen


def _crack_trace_points(mesh):
    """Evaluation points for nodes sitting on a crack face.

    The point is pushed off the slit into the face's own triangle so a datum
    with a branch cut along the slit is sampled from the correct side.
    """
    edge_tri = {}
    for t, tri in enumerate(mesh.triangles):
        for i in range(3):
            key = tuple(sorted((int(tri[i]), int(tri[(i + 1) % 3]))))
            edge_tri.setdefault(key, t)
    scale = max(mesh.bbox[2] - mesh.bbox[0], mesh.bbox[3] - mesh.bbox[1])
    points = {}
    for a, b, tag in mesh.boundary_edges:
        if tag not in ("crack_plus", "crack_minus"):
            continue
        t = edge_tri[tuple(sorted((int(a), int(b))))]
        centroid = mesh.nodes[mesh.triangles[t]].mean(axis=0)
        mid = 0.5 * (mesh.nodes[a] + mesh.nodes[b])
        inward = centroid - mid
        inward /= np.linalg.norm(inward)
        for i in (a, b):
            points.setdefault(i, mesh.nodes[i] + _TRACE_NUDGE * scale * inward)
    return points


def dirichlet_values(mesh: TriMesh, coeffs: CoefficientSet) -> dict:
    """Dirichlet node -> g value, with side-aware traces on crack faces."""
    trace = _crack_trace_points(mesh)
    out = {}
    for i in dirichlet_nodes(mesh):
        x, y = trace.get(i, mesh.nodes[i])
        out[i] = float(coeffs.g(x, y))
    return out


def assemble(mesh: TriMesh, coeffs: CoefficientSet,
             dirichlet: Optional[dict] = None) -> LinearSystem:
    """Stiffness + zero-order matrix and load from one centroid point per element.

    ``dirichlet`` overrides the node->value constraint map; by default it is
    built by evaluating ``g`` at the Dirichlet node positions.
    """
    areas, grads = triangle_geometry(mesh)
    if np.any(areas <= 0):
        raise SingularProblemError("mesh has nonpositive triangle areas")
    centroids, bc, bb, ff = _centroid_data(mesh, coeffs)

    if dirichlet is None:
        dirichlet = dirichlet_values(mesh, coeffs)
    if not dirichlet and np.min(bb) <= 0:
        raise SingularProblemError(
            "no Dirichlet edges and the zero-order coefficient is not "
            "uniformly positive; the minimizer is not unique")

    stiff = np.einsum("m,mid,mde,mje->mij", areas, grads, bc, grads)
    stiff += (areas * bb / 9.0)[:, None, None] * np.ones((3, 3))
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    matrix = scipy.sparse.coo_matrix(
        (stiff.ravel(), (rows, cols)),
        shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()
    rhs = np.bincount(mesh.triangles.ravel(),
                      weights=np.repeat(areas * ff / 3.0, 3),
                      minlength=mesh.n_nodes)
    return LinearSystem(mesh=mesh, matrix=matrix, rhs=rhs,
                        dirichlet=dict(sorted(dirichlet.items())))


def solve(system: LinearSystem, tol: float = 1e-10,
          max_iters: Optional[int] = None) -> DiscreteField:
    """Eliminate the constraints symmetrically and run preconditioned CG."""
    n = system.mesh.n_nodes
    fixed = np.fromiter(system.dirichlet.keys(), dtype=np.int64,
                        count=len(system.dirichlet))
    gvals = np.fromiter(system.dirichlet.values(), dtype=float,
                        count=len(system.dirichlet))
    u = np.zeros(n)
    u[fixed] = gvals
    mask = np.ones(n, dtype=bool)
    mask[fixed] = False
    free = np.nonzero(mask)[0]
    if free.size == 0:
        return DiscreteField(mesh=system.mesh, values=u)

    a_ff = system.matrix[free][:, free].tocsr()
    rhs = system.rhs[free]
    if fixed.size:
        rhs = rhs - system.matrix[free][:, fixed] @ gvals

    diag = a_ff.diagonal()
    if np.any(diag <= 0):
        raise SolverError("reduced system has nonpositive diagonal entries; "
                          "not positive definite")
    precond = scipy.sparse.diags(1.0 / diag)
    history = []
    x, info = scipy.sparse.linalg.cg(
        a_ff, rhs, rtol=tol, atol=0.0, M=precond,
        maxiter=max_iters if max_iters is not None else 20 * free.size,
        callback=lambda xk: history.append(
            float(np.linalg.norm(rhs - a_ff @ xk))))
    if info != 0:
        raise SolverError(
            f"conjugate gradients stagnated (info={info})",
            residuals=history[-10:])
    u[free] = x
    return DiscreteField(mesh=system.mesh, values=u)


def solve_problem(mesh: TriMesh, coeffs: CoefficientSet,
                  tol: float = 1e-10) -> DiscreteField:
    return solve(assemble(mesh, coeffs), tol=tol)


def energy(mesh: TriMesh, coeffs: CoefficientSet, v: DiscreteField) -> float:
    """Total stored energy of ``v`` by the one-point element rule."""
    values = v.values
    if values.shape[0] != mesh.n_nodes:
        raise ValueError("field does not live on this mesh")
    areas, grads = triangle_geometry(mesh)
    _, bc, bb, ff = _centroid_data(mesh, coeffs)
    v_tri = values[mesh.triangles]
    vbar = v_tri.mean(axis=1)
    grad = np.einsum("mid,mi->md", grads, v_tri)
    dens = 0.5 * (np.einsum("md,mde,me->m", grad, bc, grad) + bb * vbar ** 2) \
        - ff * vbar
    return float(np.sum(areas * dens))


def pulled_back_energy(mesh: TriMesh, coeffs: CoefficientSet, v: DiscreteField,
                       d: Deformation) -> float:
    """Energy of the transported field, written as an integral on the
    undeformed mesh: densities are read at the moved centroid, gradients are
    twisted by the inverse transform Jacobian, and the volume element picks
    up its determinant.
    """
    values = v.values
    areas, grads = triangle_geometry(mesh)
    centroids = mesh.nodes[mesh.triangles].mean(axis=1)
    v_tri = values[mesh.triangles]
    vbar = v_tri.mean(axis=1)
    grad = np.einsum("mid,mi->md", grads, v_tri)

    jac = d.mu.jacobians_at(centroids)
    fgrad = np.eye(2)[None, :, :] + d.t * jac
    det = fgrad[:, 0, 0] * fgrad[:, 1, 1] - fgrad[:, 0, 1] * fgrad[:, 1, 0]
    inv = np.empty_like(fgrad)
    inv[:, 0, 0] = fgrad[:, 1, 1]
    inv[:, 1, 1] = fgrad[:, 0, 0]
    inv[:, 0, 1] = -fgrad[:, 0, 1]
    inv[:, 1, 0] = -fgrad[:, 1, 0]
    inv /= det[:, None, None]
    zeta = np.einsum("mab,mb->ma", inv, grad)
    moved = centroids + d.t * d.mu.values_at(centroids)

    total = 0.0
    for m in range(mesh.n_triangles):
        total += areas[m] * det[m] * coeffs.density(
            moved[m, 0], moved[m, 1], vbar[m], zeta[m])
    return float(total)


def weak_residual(mesh: TriMesh, coeffs: CoefficientSet, u: DiscreteField,
                  v: DiscreteField) -> float:
    """Directional derivative of the energy at ``u`` along the test field ``v``."""
    fixed = dirichlet_nodes(mesh)
    if fixed and np.max(np.abs(v.values[fixed])) != 0.0:
        raise ValueError("test field must vanish on Dirichlet nodes")
    areas, grads = triangle_geometry(mesh)
    _, bc, bb, ff = _centroid_data(mesh, coeffs)
    u_tri = u.values[mesh.triangles]
    v_tri = v.values[mesh.triangles]
    ubar, vbar = u_tri.mean(axis=1), v_tri.mean(axis=1)
    gu = np.einsum("mid,mi->md", grads, u_tri)
    gv = np.einsum("mid,mi->md", grads, v_tri)
    dens = np.einsum("md,mde,me->m", gu, bc, gv) + (bb * ubar - ff) * vbar
    return float(np.sum(areas * dens))


def residual_vector(system: LinearSystem, u: DiscreteField) -> np.ndarray:
    """Energy gradient at ``u`` restricted to the unconstrained nodes."""
    r = system.matrix @ u.values - system.rhs
    r[list(system.dirichlet.keys())] = 0.0
    return r


# ---------------------------------------------------------------------------
# Named coefficient sets
# ---------------------------------------------------------------------------

def _const_pair(vx=0.0, vy=0.0):
    return lambda x, y: (vx, vy)


def poisson_manufactured() -> CoefficientSet:
    """Unit-square benchmark with exact solution sin(pi x) sin(pi y)."""
    two_pi2 = 2.0 * math.pi ** 2
    eye = np.eye(2)
    zero = np.zeros((2, 2))
    return CoefficientSet(
        B=lambda x, y: eye,
        grad_B=lambda x, y: (zero, zero),
        b=lambda x, y: 0.0,
        grad_b=_const_pair(),
        f=lambda x, y: two_pi2 * math.sin(math.pi * x) * math.sin(math.pi * y),
        grad_f=lambda x, y: (
            two_pi2 * math.pi * math.cos(math.pi * x) * math.sin(math.pi * y),
            two_pi2 * math.pi * math.sin(math.pi * x) * math.cos(math.pi * y)),
        g=lambda x, y: 0.0,
        beta0=1.0,
        name="poisson_manufactured")


def constant_coefficients(B11: float, B12: float, B22: float, b: float,
                          f: float) -> CoefficientSet:
    bmat = np.array([[B11, B12], [B12, B22]], dtype=float)
    beta0 = float(np.linalg.eigvalsh(bmat)[0])
    if beta0 <= 0:
        raise ValueError("constant B must be positive definite")
    if b < 0:
        raise ValueError("b must be nonnegative")
    zero = np.zeros((2, 2))
    return CoefficientSet(
        B=lambda x, y: bmat,
        grad_B=lambda x, y: (zero, zero),
        b=lambda x, y: b,
        grad_b=_const_pair(),
        f=lambda x, y: f,
        grad_f=_const_pair(),
        g=lambda x, y: 0.0,
        beta0=beta0,
        name=f"constant({B11:.6g},{B12:.6g},{B22:.6g},{b:.6g},{f:.6g})")


def mode3_crack(tip_x: float = 0.0, tip_y: float = 0.0) -> CoefficientSet:
    """Anti-plane crack data: zero load, square-root tip displacement.

    The Dirichlet datum sqrt(r) sin(theta/2) has its branch cut along the
    negative x direction from the tip, i.e. along the slit.
    """
    cs = poisson_manufactured()

    def g(x, y):
        r = math.hypot(x - tip_x, y - tip_y)
        theta = math.atan2(y - tip_y, x - tip_x)
        return math.sqrt(r) * math.sin(0.5 * theta)

    return CoefficientSet(
        B=cs.B, grad_B=cs.grad_B,
        b=lambda x, y: 0.0, grad_b=_const_pair(),
        f=lambda x, y: 0.0, grad_f=_const_pair(),
        g=g, beta0=1.0,
        name=f"mode3_crack(tip=({tip_x:.6g},{tip_y:.6g}))")


def coefficient_set(name: str, **params) -> CoefficientSet:
    """CLI-facing factory for the named coefficient sets."""
    if name == "poisson_manufactured":
        return poisson_manufactured()
    if name == "constant":
        return constant_coefficients(
            params.get("B11", 1.0), params.get("B12", 0.0),
            params.get("B22", 1.0), params.get("b", 0.0),
            params.get("f", 0.0))
    if name == "mode3_crack":
        return mode3_crack(params.get("tip_x", 0.0), params.get("tip_y", 0.0))
    raise ValueError(f"unknown coefficient set {name!r}")


# ---------------------------------------------------------------------------
# Solution export
# ---------------------------------------------------------------------------

def solution_csv_lines(field: DiscreteField) -> list:
    lines = ["node_id,x,y,u"]
    for i, ((x, y), u) in enumerate(zip(field.mesh.nodes, field.values)):
        lines.append(f"{i},{float(x)!r},{float(y)!r},{float(u)!r}")
    return lines


def solution_vtk_lines(field: DiscreteField) -> list:
    mesh = field.mesh
    lines = ["# vtk DataFile Version 3.0", "shaperate solution", "ASCII",
             "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_nodes} double"]
    for x, y in mesh.nodes:
        lines.append(f"{float(x)!r} {float(y)!r} 0.0")
    lines.append(f"CELLS {mesh.n_triangles} {4 * mesh.n_triangles}")
    for i, j, k in mesh.triangles:
        lines.append(f"3 {i} {j} {k}")
    lines.append(f"CELL_TYPES {mesh.n_triangles}")
    lines.extend(["5"] * mesh.n_triangles)
    lines.append(f"POINT_DATA {mesh.n_nodes}")
    lines.append("SCALARS u double 1")
    lines.append("LOOKUP_TABLE default")
    for u in field.values:
        lines.append(f"{float(u)!r}")
    return lines
