"""2D triangular meshes with tagged boundaries and crack slits.

A crack is represented by duplicating the nodes along an edge-aligned
polyline: triangles above the slit reference the duplicate copies, the two
coincident edge chains are tagged ``crack_plus`` / ``crack_minus``, and the
tip node stays shared so the slit ends in a single point.  Meshes are
immutable values; every operation returns a new mesh.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import (DeformationError, MeshError, MeshFormatError,
                     MeshQueryError, TopologyError)

BOUNDARY_TAGS = ("dirichlet", "neumann", "crack_plus", "crack_minus")
CRACK_TAGS = ("crack_plus", "crack_minus")
SIDES = ("left", "right", "bottom", "top")

_GEOM_TOL = 1e-12


@dataclass(eq=False)
class TriMesh:
    """Triangulation with tagged boundary edges inside a reference box.

    ``boundary_edges`` holds ``(node_a, node_b, tag)`` triples; ``bbox`` is
    the open reference box ``(x0, y0, x1, y1)`` that all nodes (including
    deformed ones) must stay strictly inside.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: list
    crack_tip: Optional[int] = None
    bbox: tuple = None

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if self.bbox is None:
            self.bbox = default_bbox(self.nodes)

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]


def default_bbox(nodes) -> tuple:
    """Reference box: node extent inflated by half its larger dimension."""
    nodes = np.asarray(nodes, dtype=float)
    x0, y0 = nodes.min(axis=0)
    x1, y1 = nodes.max(axis=0)
    m = 0.5 * max(x1 - x0, y1 - y0, 1.0)
    return (x0 - m, y0 - m, x1 + m, y1 + m)


def triangle_areas(mesh: TriMesh) -> np.ndarray:
    p = mesh.nodes[mesh.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def triangle_geometry(mesh: TriMesh):
    """Areas and the constant basis gradients of every triangle.

    Returns ``(areas, grads)`` with ``grads[m, i]`` the 2-vector gradient of
    the hat function of local vertex ``i`` on triangle ``m``.
    """
    p = mesh.nodes[mesh.triangles]
    areas = triangle_areas(mesh)
    x, y = p[..., 0], p[..., 1]
    grads = np.empty(p.shape)
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        grads[:, i, 0] = y[:, j] - y[:, k]
        grads[:, i, 1] = x[:, k] - x[:, j]
    grads /= (2.0 * areas)[:, None, None]
    return areas, grads


def mesh_size(mesh: TriMesh) -> float:
    """Longest edge over all triangles."""
    p = mesh.nodes[mesh.triangles]
    h = 0.0
    for i in range(3):
        e = p[:, (i + 1) % 3] - p[:, i]
        h = max(h, float(np.max(np.hypot(e[:, 0], e[:, 1]))))
    return h


def gen_rect_mesh(x_range, y_range, nx: int, ny: int, dirichlet_sides,
                  all_neumann: bool = False) -> TriMesh:
    """Structured criss-cross triangulation of a rectangle.

    Produces ``(nx+1)*(ny+1)`` nodes and ``2*nx*ny`` triangles with cell
    diagonals alternating by parity.  ``dirichlet_sides`` selects which of
    ``left/right/bottom/top`` carry the essential condition; the rest are
    tagged ``neumann``.  Pass ``all_neumann=True`` to allow an empty set.
    """
    x0, x1 = map(float, x_range)
    y0, y1 = map(float, y_range)
    if not (x1 > x0 and y1 > y0):
        raise ValueError("empty range: need x1 > x0 and y1 > y0")
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be at least 1")
    dirichlet_sides = set(dirichlet_sides)
    unknown = dirichlet_sides.difference(SIDES)
    if unknown:
        raise ValueError(f"unknown sides: {sorted(unknown)}")
    if not dirichlet_sides and not all_neumann:
        raise ValueError("no Dirichlet side selected; pass all_neumann=True "
                         "if that is intended")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    xx, yy = np.meshgrid(xs, ys)
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    def idx(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            a, b = idx(i, j), idx(i + 1, j)
            c, d = idx(i + 1, j + 1), idx(i, j + 1)
            if (i + j) % 2 == 0:
                tris.append((a, b, c))
                tris.append((a, c, d))
            else:
                tris.append((a, b, d))
                tris.append((b, c, d))

    def tag(side):
        return "dirichlet" if side in dirichlet_sides else "neumann"

    edges = []
    for i in range(nx):
        edges.append((idx(i, 0), idx(i + 1, 0), tag("bottom")))
        edges.append((idx(i, ny), idx(i + 1, ny), tag("top")))
    for j in range(ny):
        edges.append((idx(0, j), idx(0, j + 1), tag("left")))
        edges.append((idx(nx, j), idx(nx, j + 1), tag("right")))

    return TriMesh(nodes=nodes, triangles=np.array(tris, dtype=np.int64),
                   boundary_edges=edges)


@dataclass
class MeshDiagnostics:
    ok: bool
    issues: list
    n_nodes: int
    n_triangles: int
    n_boundary_edges: int


def validate(mesh: TriMesh) -> MeshDiagnostics:
    """Run every structural invariant and collect human-readable findings."""
    issues = []
    n = mesh.n_nodes
    if mesh.triangles.size and (mesh.triangles.min() < 0 or mesh.triangles.max() >= n):
        issues.append("triangle references a missing node")
        return MeshDiagnostics(False, issues, n, mesh.n_triangles,
                               len(mesh.boundary_edges))

    areas = triangle_areas(mesh)
    bad = np.nonzero(areas <= 0)[0]
    if bad.size:
        issues.append(f"{bad.size} triangles with nonpositive area "
                      f"(first: {int(bad[0])})")

    # Topological boundary must match the tagged edge list exactly.
    incident = {}
    for t, tri in enumerate(mesh.triangles):
        for i in range(3):
            key = tuple(sorted((int(tri[i]), int(tri[(i + 1) % 3]))))
            incident.setdefault(key, []).append(t)
    topo_boundary = {k for k, v in incident.items() if len(v) == 1}
    tagged = {}
    for a, b, tag in mesh.boundary_edges:
        if tag not in BOUNDARY_TAGS:
            issues.append(f"unknown boundary tag {tag!r}")
        key = tuple(sorted((int(a), int(b))))
        if key in tagged:
            issues.append(f"boundary edge {key} tagged twice")
        tagged[key] = tag
    missing = topo_boundary.difference(tagged)
    extra = set(tagged).difference(topo_boundary)
    if missing:
        issues.append(f"{len(missing)} topological boundary edges untagged "
                      f"(e.g. {sorted(missing)[0]})")
    if extra:
        issues.append(f"{len(extra)} tagged edges are not boundary edges "
                      f"(e.g. {sorted(extra)[0]})")

    # Crack slit: coincident plus/minus chains joined at a single tip.
    plus_nodes = {i for a, b, t in mesh.boundary_edges if t == "crack_plus"
                  for i in (a, b)}
    minus_nodes = {i for a, b, t in mesh.boundary_edges if t == "crack_minus"
                   for i in (a, b)}
    if plus_nodes or minus_nodes:
        if mesh.crack_tip is None:
            issues.append("crack edges present but no crack tip declared")
        else:
            tip = int(mesh.crack_tip)
            if tip not in plus_nodes or tip not in minus_nodes:
                issues.append("crack tip does not join both crack faces")
            minus_coords = {tuple(mesh.nodes[i]): i
                            for i in minus_nodes if i != tip}
            for i in plus_nodes:
                if i == tip:
                    continue
                partner = minus_coords.get(tuple(mesh.nodes[i]))
                if partner is None:
                    issues.append(f"plus-face node {i} has no coincident "
                                  "minus-face partner")
                elif partner == i:
                    issues.append(f"crack node {i} is shared between faces")
    elif mesh.crack_tip is not None:
        issues.append("crack tip declared but no crack edges tagged")

    x0, y0, x1, y1 = mesh.bbox
    if not (np.all(mesh.nodes[:, 0] > x0) and np.all(mesh.nodes[:, 0] < x1)
            and np.all(mesh.nodes[:, 1] > y0) and np.all(mesh.nodes[:, 1] < y1)):
        issues.append("nodes not strictly inside the reference box")

    return MeshDiagnostics(not issues, issues, n, mesh.n_triangles,
                           len(mesh.boundary_edges))


def require_valid(mesh: TriMesh):
    diag = validate(mesh)
    if not diag.ok:
        raise MeshError("invalid mesh: " + "; ".join(diag.issues))
    return mesh


def _edge_set(mesh):
    pairs = set()
    for tri in mesh.triangles:
        for i in range(3):
            pairs.add(tuple(sorted((int(tri[i]), int(tri[(i + 1) % 3])))))
    return pairs


def insert_crack_slit(mesh: TriMesh, segment) -> TriMesh:
    """Cut the mesh open along an edge-aligned segment.

    ``segment`` runs from a boundary node (the crack mouth) to a strictly
    interior node (the tip).  Every slit node except the tip is duplicated;
    triangles left of the mouth-to-tip direction are rewired to the copies.
    """
    (ax, ay), (bx, by) = segment
    a = np.array([ax, ay], dtype=float)
    b = np.array([bx, by], dtype=float)
    d = b - a
    seg_len = float(np.hypot(*d))
    if seg_len <= 0:
        raise ValueError("zero-length crack segment")
    if mesh.crack_tip is not None:
        raise TopologyError("mesh already carries a crack slit")
    d = d / seg_len
    tol = _GEOM_TOL * max(seg_len, 1.0) + 1e-9 * seg_len

    rel = mesh.nodes - a
    along = rel @ d
    across = rel[:, 0] * d[1] - rel[:, 1] * d[0]
    on_seg = np.nonzero((np.abs(across) <= tol) & (along >= -tol)
                        & (along <= seg_len + tol))[0]
    order = on_seg[np.argsort(along[on_seg])]
    chain = [int(i) for i in order]
    if len(chain) < 2:
        raise TopologyError("crack segment does not follow mesh nodes")
    if np.hypot(*(mesh.nodes[chain[0]] - a)) > tol or \
            np.hypot(*(mesh.nodes[chain[-1]] - b)) > tol:
        raise TopologyError("crack segment endpoints are not mesh nodes")

    edges = _edge_set(mesh)
    for p, q in zip(chain[:-1], chain[1:]):
        if tuple(sorted((p, q))) not in edges:
            raise TopologyError(
                f"crack segment not edge-aligned between nodes {p} and {q}")

    boundary_nodes = {i for e in mesh.boundary_edges for i in e[:2]}
    tip = chain[-1]
    mouth = chain[0]
    if tip in boundary_nodes:
        raise TopologyError("unsupported configuration: crack tip on the "
                            "boundary (tip must be strictly interior)")
    if mouth not in boundary_nodes:
        raise TopologyError("unsupported configuration: crack mouth must "
                            "lie on the boundary")

    dup = {}  # original slit node -> plus-side copy
    new_nodes = [mesh.nodes]
    next_id = mesh.n_nodes
    for node in chain[:-1]:
        dup[node] = next_id
        new_nodes.append(mesh.nodes[node][None, :])
        next_id += 1
    nodes = np.vstack(new_nodes)

    def side_of(point) -> float:
        r = point - a
        return float(d[0] * r[1] - d[1] * r[0])

    triangles = mesh.triangles.copy()
    dup_keys = set(dup)
    for t, tri in enumerate(mesh.triangles):
        hit = [i for i in range(3) if int(tri[i]) in dup_keys]
        if not hit:
            continue
        centroid = mesh.nodes[tri].mean(axis=0)
        s = side_of(centroid)
        if abs(s) <= tol:
            raise TopologyError(f"triangle {t} degenerate against the slit")
        if s > 0:
            for i in hit:
                triangles[t, i] = dup[int(tri[i])]

    def plus_id(node):
        return dup.get(node, node)

    boundary = []
    for a_i, b_i, tag in mesh.boundary_edges:
        if a_i in dup_keys or b_i in dup_keys:
            mid = 0.5 * (mesh.nodes[a_i] + mesh.nodes[b_i])
            s = side_of(mid)
            if abs(s) <= tol:
                raise TopologyError("boundary edge collinear with the slit")
            if s > 0:
                a_i, b_i = plus_id(a_i), plus_id(b_i)
        boundary.append((a_i, b_i, tag))
    for p, q in zip(chain[:-1], chain[1:]):
        boundary.append((p, q, "crack_minus"))
        boundary.append((plus_id(p), plus_id(q), "crack_plus"))

    out = TriMesh(nodes=nodes, triangles=triangles, boundary_edges=boundary,
                  crack_tip=tip, bbox=mesh.bbox)
    return require_valid(out)


def deform_mesh(mesh: TriMesh, mu, t: float) -> TriMesh:
    """Move every node by ``t`` times the velocity field.

    Connectivity and tags are untouched.  The move is rejected when the
    declared Lipschitz margin is exhausted; nonpositive areas after an
    accepted move mean the declared bound was wrong and are a hard error.
    """
    margin = 1.0 - abs(t) * mu.lip_bound
    if margin <= 0:
        raise DeformationError(
            f"deformation too large: |t|*lip = {abs(t) * mu.lip_bound:.6g} >= 1")
    if t == 0:
        return replace(mesh, nodes=mesh.nodes.copy(),
                       triangles=mesh.triangles.copy(),
                       boundary_edges=list(mesh.boundary_edges))
    velocity = mu.values_at(mesh.nodes)
    nodes = mesh.nodes + t * velocity
    out = replace(mesh, nodes=nodes, triangles=mesh.triangles.copy(),
                  boundary_edges=list(mesh.boundary_edges))
    areas = triangle_areas(out)
    if np.any(areas <= 0):
        raise DeformationError(
            "nonpositive triangle area after an admissible move; the "
            "velocity field's declared Lipschitz bound is misdeclared")
    x0, y0, x1, y1 = mesh.bbox
    if not (np.all(nodes[:, 0] > x0) and np.all(nodes[:, 0] < x1)
            and np.all(nodes[:, 1] > y0) and np.all(nodes[:, 1] < y1)):
        raise DeformationError("deformed mesh leaves the reference box")
    return out


def write_mesh(mesh: TriMesh, path):
    """Plain ASCII mesh file; floats use shortest round-trip notation."""
    lines = ["tri-mesh v1",
             f"{mesh.n_nodes} {mesh.n_triangles} {len(mesh.boundary_edges)}"]
    for x, y in mesh.nodes:
        lines.append(f"{float(x)!r} {float(y)!r}")
    for i, j, k in mesh.triangles:
        lines.append(f"{i} {j} {k}")
    for a, b, tag in mesh.boundary_edges:
        lines.append(f"{a} {b} {tag}")
    if mesh.crack_tip is not None:
        lines.append(f"tip {mesh.crack_tip}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path) -> TriMesh:
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    if not raw or raw[0].strip() != "tri-mesh v1":
        raise MeshFormatError("expected header 'tri-mesh v1'", line=1)

    def parse(lineno, text, kinds):
        parts = text.split()
        if len(parts) != len(kinds):
            raise MeshFormatError(
                f"expected {len(kinds)} fields, got {len(parts)}", line=lineno)
        out = []
        for p, kind in zip(parts, kinds):
            try:
                out.append(kind(p))
            except ValueError as exc:
                raise MeshFormatError(str(exc), line=lineno) from exc
        return out

    if len(raw) < 2:
        raise MeshFormatError("missing count line", line=2)
    n_nodes, n_tris, n_edges = parse(2, raw[1], (int, int, int))
    need = 2 + n_nodes + n_tris + n_edges
    if len(raw) < need:
        raise MeshFormatError(f"file truncated: expected at least {need} lines",
                              line=len(raw))
    pos = 2
    nodes = np.array([parse(pos + i + 1, raw[pos + i], (float, float))
                      for i in range(n_nodes)], dtype=float).reshape(n_nodes, 2)
    pos += n_nodes
    tris = np.array([parse(pos + i + 1, raw[pos + i], (int, int, int))
                     for i in range(n_tris)], dtype=np.int64).reshape(n_tris, 3)
    pos += n_tris
    edges = []
    for i in range(n_edges):
        a, b, tag = parse(pos + i + 1, raw[pos + i], (int, int, str))
        if tag not in BOUNDARY_TAGS:
            raise MeshFormatError(f"unknown boundary tag {tag!r}",
                                  line=pos + i + 1)
        edges.append((a, b, tag))
    pos += n_edges
    tip = None
    for extra in range(pos, len(raw)):
        text = raw[extra].strip()
        if not text:
            continue
        parts = text.split()
        if parts[0] != "tip" or len(parts) != 2:
            raise MeshFormatError("unexpected trailing content", line=extra + 1)
        tip = int(parts[1])

    mesh = TriMesh(nodes=nodes, triangles=tris, boundary_edges=edges,
                   crack_tip=tip)
    if tris.size and (tris.min() < 0 or tris.max() >= n_nodes):
        raise MeshFormatError("triangle references a missing node")
    return require_valid(mesh)


class TriangleLocator:
    """Uniform-grid point location over a fixed mesh.

    Crack meshes contain coincident plus/minus edges but their triangles are
    disjoint open sets, so exact barycentric containment resolves the side.
    """

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        self.points = mesh.nodes[mesh.triangles]
        lo = self.points.min(axis=1)
        hi = self.points.max(axis=1)
        self.x0, self.y0 = float(lo[:, 0].min()), float(lo[:, 1].min())
        x1, y1 = float(hi[:, 0].max()), float(hi[:, 1].max())
        n = max(1, int(np.sqrt(mesh.n_triangles)))
        self.nx = self.ny = n
        self.dx = max((x1 - self.x0) / n, 1e-300)
        self.dy = max((y1 - self.y0) / n, 1e-300)
        self.cells = {}
        for t in range(mesh.n_triangles):
            i0 = int((lo[t, 0] - self.x0) / self.dx)
            i1 = int((hi[t, 0] - self.x0) / self.dx)
            j0 = int((lo[t, 1] - self.y0) / self.dy)
            j1 = int((hi[t, 1] - self.y0) / self.dy)
            for i in range(max(i0, 0), min(i1, n - 1) + 1):
                for j in range(max(j0, 0), min(j1, n - 1) + 1):
                    self.cells.setdefault((i, j), []).append(t)
        self._centroids = self.points.mean(axis=1)

    def _bary(self, t, p):
        p1, p2, p3 = self.points[t]
        det = (p2[0] - p1[0]) * (p3[1] - p1[1]) - (p2[1] - p1[1]) * (p3[0] - p1[0])
        w1 = ((p2[0] - p[0]) * (p3[1] - p[1]) - (p2[1] - p[1]) * (p3[0] - p[0])) / det
        w2 = ((p3[0] - p[0]) * (p1[1] - p[1]) - (p3[1] - p[1]) * (p1[0] - p[0])) / det
        return w1, w2, 1.0 - w1 - w2

    def find(self, p, extrapolate: bool = False) -> int:
        """Index of the triangle containing ``p``.

        With ``extrapolate=True`` a point outside the mesh falls back to the
        nearest-centroid triangle (linear extension of the P1 field).
        """
        p = np.asarray(p, dtype=float)
        i = int((p[0] - self.x0) / self.dx)
        j = int((p[1] - self.y0) / self.dy)
        best, best_w = -1, -np.inf
        for di in (0, -1, 1):
            for dj in (0, -1, 1):
                for t in self.cells.get((i + di, j + dj), ()):
                    w = min(self._bary(t, p))
                    if w >= -1e-12:
                        return t
                    if w > best_w:
                        best, best_w = t, w
        if extrapolate:
            if best >= 0 and best_w > -0.5:
                return best
            d = self._centroids - p
            return int(np.argmin(d[:, 0] ** 2 + d[:, 1] ** 2))
        raise MeshQueryError(f"point ({p[0]:.6g}, {p[1]:.6g}) not inside any "
                             "triangle")


def field_at(mesh: TriMesh, values, tri: int, p):
    """P1 value and gradient of nodal ``values`` on triangle ``tri`` at ``p``."""
    tri_nodes = mesh.triangles[tri]
    p1, p2, p3 = mesh.nodes[tri_nodes]
    det = (p2[0] - p1[0]) * (p3[1] - p1[1]) - (p2[1] - p1[1]) * (p3[0] - p1[0])
    w1 = ((p2[0] - p[0]) * (p3[1] - p[1]) - (p2[1] - p[1]) * (p3[0] - p[0])) / det
    w2 = ((p3[0] - p[0]) * (p1[1] - p[1]) - (p3[1] - p[1]) * (p1[0] - p[0])) / det
    w3 = 1.0 - w1 - w2
    v = values[tri_nodes]
    val = w1 * v[0] + w2 * v[1] + w3 * v[2]
    g1 = np.array([p2[1] - p3[1], p3[0] - p2[0]]) / det
    g2 = np.array([p3[1] - p1[1], p1[0] - p3[0]]) / det
    g3 = np.array([p1[1] - p2[1], p2[0] - p1[0]]) / det
    grad = v[0] * g1 + v[1] * g2 + v[2] * g3
    return float(val), grad
