"""Triangle meshes of a box domain with an embedded closed interface,
P1 finite elements, and deterministic SPD solves.

The interface polygon enters the triangulation verbatim: protective
offset rings at +-0.75 of the local edge length make every interface
edge a Gabriel edge (empty diametral disk), so a plain Delaunay
triangulation is forced to contain it.  Graded point layers bridge the
gap between the interface resolution and the background grid spacing.
Meshes are immutable; deformation produces new meshes and refuses to
return anything tangled.
"""

import numpy as np
import shapely
from scipy.sparse import coo_matrix
from scipy.spatial import Delaunay, cKDTree

from .curves import DiscreteCurve
from .validate import validate_shape

__all__ = [
    "TriMesh",
    "SparseSpdOperator",
    "MeshingError",
    "MeshTangleError",
    "SolveError",
    "generate_annulus_mesh",
    "assemble_poisson",
    "assemble_elasticity",
    "stiffened_mu",
    "solve_spd",
    "apply_deformation",
    "extract_gamma_curve",
    "triangles_inside_curve",
    "mesh_min_angle",
    "P1Interpolant",
    "read_mesh",
    "write_mesh",
    "write_vtk",
]

INTERIOR, GAMMA, OUTER = 0, 1, 2

MIN_ANGLE_DEG = 15.0


class MeshingError(RuntimeError):
    pass


class MeshTangleError(RuntimeError):
    def __init__(self, message, admissible_scale):
        super().__init__(message)
        self.admissible_scale = admissible_scale


class SolveError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


def _signed_areas(nodes, triangles):
    p = nodes[triangles]
    return 0.5 * (
        (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
        - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    )


class TriMesh:
    """Conforming triangulation with node marks and an interface loop.

    node_marks: 0 interior, 1 interface, 2 outer boundary.  gamma_loop
    lists interface node indices in curve order (empty when the mesh
    carries no interface).
    """

    def __init__(self, nodes, triangles, node_marks, gamma_loop):
        nodes = np.array(nodes, dtype=float)
        triangles = np.array(triangles, dtype=np.int64)
        node_marks = np.array(node_marks, dtype=np.int8)
        gamma_loop = np.array(gamma_loop, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise ValueError("nodes must be an (M, 2) array")
        if not np.all(np.isfinite(nodes)):
            raise ValueError("node coordinates must be finite")
        m = len(nodes)
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise ValueError("triangles must be a (T, 3) index array")
        if triangles.min(initial=0) < 0 or triangles.max(initial=-1) >= m:
            raise ValueError("triangle index out of range")
        if node_marks.shape != (m,):
            raise ValueError("node_marks length must match node count")
        if not np.all(np.isin(node_marks, (INTERIOR, GAMMA, OUTER))):
            raise ValueError("node marks must be 0, 1 or 2")
        areas = _signed_areas(nodes, triangles)
        if len(areas) and areas.min() <= 0.0:
            bad = int(np.argmin(areas))
            raise ValueError(
                f"triangle {bad} has nonpositive area {areas.min():.3e}"
            )
        if len(gamma_loop) != len(np.unique(gamma_loop)):
            raise ValueError("gamma_loop repeats a node")
        if len(gamma_loop) and not np.all(node_marks[gamma_loop] == GAMMA):
            raise ValueError("gamma_loop nodes must carry the interface mark")
        if len(gamma_loop) != np.count_nonzero(node_marks == GAMMA):
            raise ValueError("interface marks and gamma_loop disagree")
        self._check_conforming(triangles)
        nodes.setflags(write=False)
        triangles.setflags(write=False)
        node_marks.setflags(write=False)
        gamma_loop.setflags(write=False)
        self.nodes = nodes
        self.triangles = triangles
        self.node_marks = node_marks
        self.gamma_loop = gamma_loop

    @staticmethod
    def _check_conforming(triangles):
        # an undirected edge may be shared by at most two triangles
        e = np.vstack([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
        e.sort(axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        if len(counts) and counts.max() > 2:
            raise ValueError("non-conforming mesh: edge shared by >2 triangles")

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def triangle_areas(self):
        return _signed_areas(self.nodes, self.triangles)

    def with_nodes(self, new_nodes):
        """Same topology on moved nodes; revalidates all invariants."""
        return TriMesh(new_nodes, self.triangles, self.node_marks, self.gamma_loop)


def p1_gradients(nodes, triangles):
    """Constant gradients of the three hat functions per triangle.

    Returns (grads, areas) with grads[t, i] the gradient of the hat
    function of local node i on triangle t.
    """
    p = nodes[triangles]
    areas = _signed_areas(nodes, triangles)
    g = np.empty((len(triangles), 3, 2))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        g[:, i, 0] = p[:, j, 1] - p[:, k, 1]
        g[:, i, 1] = p[:, k, 0] - p[:, j, 0]
    g /= (2.0 * areas)[:, None, None]
    return g, areas


# ---------------------------------------------------------------- meshing


def _vertex_normals(pts):
    # outward at each vertex of a CCW polygon, averaged edge normals
    e = np.roll(pts, -1, axis=0) - pts
    en = np.column_stack([e[:, 1], -e[:, 0]])
    en /= np.linalg.norm(en, axis=1)[:, None]
    vn = en + np.roll(en, 1, axis=0)
    vn /= np.linalg.norm(vn, axis=1)[:, None]
    return vn


def _hex_grid(box, h):
    (x0, y0), (x1, y1) = box
    dy = h * np.sqrt(3.0) / 2.0
    rows = []
    ny = int(np.ceil((y1 - y0) / dy))
    for k in range(1, ny):
        y = y0 + k * dy
        if y >= y1 - 0.25 * dy:
            break
        off = 0.5 * h if (k % 2) else 0.0
        xs = np.arange(x0 + 0.6 * h + off, x1 - 0.5 * h + 1e-12, h)
        rows.append(np.column_stack([xs, np.full(xs.shape, y)]))
    return np.vstack(rows)


def _box_boundary(box, h):
    (x0, y0), (x1, y1) = box
    nx = max(2, int(np.ceil((x1 - x0) / h)))
    ny = max(2, int(np.ceil((y1 - y0) / h)))
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    bottom = np.column_stack([xs, np.full(xs.shape, y0)])
    top = np.column_stack([xs, np.full(xs.shape, y1)])
    left = np.column_stack([np.full(ys.shape[0] - 2, x0), ys[1:-1]])
    right = np.column_stack([np.full(ys.shape[0] - 2, x1), ys[1:-1]])
    return np.vstack([bottom, top, left, right])


def _laplace_smooth(pts, simplices, n_fixed, rounds=4):
    for _ in range(rounds):
        n = len(pts)
        nbr_sum = np.zeros((n, 2))
        nbr_cnt = np.zeros(n)
        for a, b in ((0, 1), (1, 2), (2, 0)):
            i, j = simplices[:, a], simplices[:, b]
            np.add.at(nbr_sum, i, pts[j])
            np.add.at(nbr_cnt, i, 1.0)
            np.add.at(nbr_sum, j, pts[i])
            np.add.at(nbr_cnt, j, 1.0)
        out = pts.copy()
        free = np.arange(n) >= n_fixed
        out[free] = nbr_sum[free] / nbr_cnt[free, None]
        pts = out
        simplices = Delaunay(pts).simplices
    return pts, simplices


def mesh_min_angle(mesh):
    """Smallest interior angle over all triangles, in degrees."""
    p = mesh.nodes[mesh.triangles]
    worst = 180.0
    for k in range(3):
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        na = np.linalg.norm(a, axis=1)
        nb = np.linalg.norm(b, axis=1)
        cosang = np.clip(np.einsum("ij,ij->i", a, b) / (na * nb), -1.0, 1.0)
        worst = min(worst, float(np.degrees(np.arccos(cosang)).min()))
    return worst


def generate_annulus_mesh(outer_box, curve, target_h, min_angle=MIN_ANGLE_DEG):
    """Triangulate the box with the curve as an internal edge path.

    Curve points enter the mesh verbatim as the first N nodes, in curve
    order, so gamma_loop is simply 0..N-1.  Deterministic: identical
    inputs give bitwise-identical meshes.
    """
    if target_h <= 0.0:
        raise ValueError("target_h must be positive")
    (x0, y0), (x1, y1) = outer_box
    pts_c = np.asarray(curve.points, dtype=float)
    n = len(pts_c)
    report = validate_shape(curve)
    if not report.injective:
        raise MeshingError("cannot mesh a self-intersecting curve: " + "; ".join(report.messages))
    if (
        pts_c[:, 0].min() <= x0 or pts_c[:, 0].max() >= x1
        or pts_c[:, 1].min() <= y0 or pts_c[:, 1].max() >= y1
    ):
        raise MeshingError("curve must lie strictly inside the box")

    edge = np.linalg.norm(np.roll(pts_c, -1, axis=0) - pts_c, axis=1)
    ell = float(np.median(edge))
    h = float(target_h)
    t_off = 0.75 * ell
    vn = _vertex_normals(pts_c)
    ring_out = pts_c + t_off * vn
    ring_in = pts_c - t_off * vn

    loop = shapely.linestrings(np.vstack([pts_c, pts_c[:1]]))
    polygon = shapely.polygons(np.vstack([pts_c, pts_c[:1]]))

    # graded layers: decimate the curve while the spacing is finer than
    # the background grid, offsetting further out each time
    layers = []
    stride, spacing, t_cur = 1, ell, t_off
    while spacing < 0.7 * h and 2 * stride <= n // 8:
        stride *= 2
        spacing = ell * stride
        t_cur += 0.8 * spacing
        sub = slice(None, None, stride)
        for sign in (+1.0, -1.0):
            cand = pts_c[sub] + sign * t_cur * vn[sub]
            d = shapely.distance(shapely.points(cand), loop)
            keep = d > 0.7 * t_cur
            if sign < 0:
                keep &= shapely.contains(polygon, shapely.points(cand))
            if keep.any():
                layers.append(cand[keep])
    layer_pts = np.vstack(layers) if layers else np.empty((0, 2))

    bnd = _box_boundary(outer_box, h)
    grid = _hex_grid(outer_box, h)
    clearance = t_cur + 0.55 * max(h, spacing)
    d_grid = shapely.distance(shapely.points(grid), loop)
    grid = grid[d_grid > clearance]
    d_bnd = shapely.distance(shapely.points(bnd), loop)
    if d_bnd.min() < clearance:
        raise MeshingError("curve too close to the outer box for this grid size")

    # curve, rings and box boundary stay fixed under smoothing
    pts = np.vstack([pts_c, ring_out, ring_in, bnd, layer_pts, grid])
    n_fixed = 3 * n + len(bnd)

    tri = Delaunay(pts)
    pts, simplices = _laplace_smooth(pts, tri.simplices, n_fixed, rounds=4)

    # orient CCW
    areas = _signed_areas(pts, simplices)
    flip = areas < 0
    simplices[flip] = simplices[flip][:, [0, 2, 1]]
    areas = np.abs(areas)
    if areas.min() <= 0.0:
        raise MeshingError("degenerate triangle produced by triangulation")

    # the interface edges must all be present
    e = np.vstack([simplices[:, [0, 1]], simplices[:, [1, 2]], simplices[:, [2, 0]]])
    e.sort(axis=1)
    have = set(map(tuple, np.unique(e, axis=0)))
    missing = [
        (i, (i + 1) % n)
        for i in range(n)
        if (min(i, (i + 1) % n), max(i, (i + 1) % n)) not in have
    ]
    if missing:
        raise MeshingError(f"interface edges missing from triangulation: {missing[:5]}")

    marks = np.full(len(pts), INTERIOR, dtype=np.int8)
    marks[:n] = GAMMA
    marks[3 * n : 3 * n + len(bnd)] = OUTER
    mesh = TriMesh(pts, simplices, marks, np.arange(n))
    quality = mesh_min_angle(mesh)
    if quality < min_angle:
        raise MeshingError(
            f"mesh quality too low: min angle {quality:.2f} deg < {min_angle:.2f} deg"
        )
    return mesh


# ---------------------------------------------------------------- assembly


class SparseSpdOperator:
    """Symmetric positive (semi)definite stiffness with Dirichlet dofs.

    The matrix is stored unconstrained; constraints are applied at solve
    time, which keeps nonhomogeneous boundary values cheap.
    """

    def __init__(self, matrix, constrained):
        matrix = matrix.tocsr()
        asym = abs(matrix - matrix.T)
        scale = abs(matrix).max() if matrix.nnz else 1.0
        if asym.nnz and asym.max() > 1e-12 * max(scale, 1.0):
            raise ValueError(f"matrix not symmetric: |K - K^T| = {asym.max():.3e}")
        self.matrix = matrix
        self.constrained = np.unique(np.asarray(constrained, dtype=np.int64))
        self.dimension = matrix.shape[0]

    def apply(self, x):
        return self.matrix @ x


def _as_triangle_field(value, n_triangles, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n_triangles, float(arr))
    if arr.shape != (n_triangles,):
        raise ValueError(f"{name} must be scalar or one value per triangle")
    return arr


def assemble_poisson(mesh, coeff):
    """Stiffness of (y, z) -> integral coeff grad y . grad z dx.

    Dirichlet dofs: outer-boundary nodes.
    """
    coeff = _as_triangle_field(coeff, mesh.n_triangles, "coeff")
    if coeff.min() <= 0.0:
        raise ValueError("coefficient must be positive on every triangle")
    grads, areas = p1_gradients(mesh.nodes, mesh.triangles)
    # element matrices: coeff * area * grad_i . grad_j
    ke = np.einsum("t,tid,tjd->tij", coeff * areas, grads, grads)
    rows = np.repeat(mesh.triangles, 3, axis=1).reshape(-1)
    cols = np.tile(mesh.triangles, (1, 3)).reshape(-1)
    k = coo_matrix((ke.reshape(-1), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    fixed = np.nonzero(mesh.node_marks == OUTER)[0]
    return SparseSpdOperator(k.tocsr(), fixed)


def stiffened_mu(mesh, mu=1.0, cap=50.0):
    """Per-triangle shear modulus growing like 1/distance to the interface.

    Falls back to the constant value when the mesh has no interface.
    """
    if len(mesh.gamma_loop) == 0:
        return np.full(mesh.n_triangles, float(mu))
    pts_c = mesh.nodes[mesh.gamma_loop]
    loop = shapely.linestrings(np.vstack([pts_c, pts_c[:1]]))
    centroids = mesh.nodes[mesh.triangles].mean(axis=1)
    d = shapely.distance(shapely.points(centroids), loop)
    factor = 1.0 + 1.0 / np.maximum(d, 1e-30)
    return mu * np.minimum(factor, cap)


def assemble_elasticity(mesh, lam=0.0, mu=1.0):
    """Stiffness of a(U,V) = integral lam div U div V + 2 mu eps(U):eps(V).

    Vector dofs interleave as (node0_x, node0_y, node1_x, ...).  mu may
    be per triangle (see stiffened_mu); lam is scalar.  Dirichlet dofs:
    both components of outer-boundary nodes.
    """
    mu = _as_triangle_field(mu, mesh.n_triangles, "mu")
    if mu.min() <= 0.0 or lam < 0.0:
        raise ValueError("need mu > 0 and lam >= 0")
    grads, areas = p1_gradients(mesh.nodes, mesh.triangles)
    t = mesh.n_triangles
    # strain-displacement rows (exx, eyy, gxy) per local dof (i, comp)
    b = np.zeros((t, 3, 6))
    for i in range(3):
        b[:, 0, 2 * i] = grads[:, i, 0]
        b[:, 1, 2 * i + 1] = grads[:, i, 1]
        b[:, 2, 2 * i] = grads[:, i, 1]
        b[:, 2, 2 * i + 1] = grads[:, i, 0]
    d = np.zeros((t, 3, 3))
    d[:, 0, 0] = lam + 2.0 * mu
    d[:, 1, 1] = lam + 2.0 * mu
    d[:, 0, 1] = lam
    d[:, 1, 0] = lam
    d[:, 2, 2] = mu
    ke = np.einsum("t,tri,trs,tsj->tij", areas, b, d, b)
    dofs = np.empty((t, 6), dtype=np.int64)
    dofs[:, 0::2] = 2 * mesh.triangles
    dofs[:, 1::2] = 2 * mesh.triangles + 1
    rows = np.repeat(dofs, 6, axis=1).reshape(-1)
    cols = np.tile(dofs, (1, 6)).reshape(-1)
    k = coo_matrix((ke.reshape(-1), (rows, cols)), shape=(2 * mesh.n_nodes, 2 * mesh.n_nodes))
    outer = np.nonzero(mesh.node_marks == OUTER)[0]
    fixed = np.concatenate([2 * outer, 2 * outer + 1])
    return SparseSpdOperator(k.tocsr(), fixed)


# ---------------------------------------------------------------- solving


def solve_spd(op, rhs, values=None, tol=1e-10, maxiter=20000, jacobi=False, x0=None):
    """Conjugate gradients on the unconstrained dofs.

    Constrained dofs are pinned to `values` (zero when omitted) and
    eliminated; the relative residual on the free block must reach tol.
    x0 seeds the free dofs (warm start).  Plain float64 loop in a fixed
    order, hence bitwise deterministic for identical inputs.
    """
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (op.dimension,):
        raise ValueError("rhs dimension mismatch")
    x_full = np.zeros(op.dimension)
    fixed = op.constrained
    if values is not None:
        values = np.asarray(values, dtype=float)
        x_full[fixed] = values[fixed]
    free = np.setdiff1d(np.arange(op.dimension), fixed, assume_unique=False)
    k = op.matrix
    kff = k[free][:, free].tocsr()
    b = rhs[free]
    if values is not None and len(fixed):
        b = b - k[free][:, fixed] @ x_full[fixed]
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return x_full
    minv = None
    if jacobi:
        diag = kff.diagonal()
        if diag.min() <= 0.0:
            raise SolveError("nonpositive diagonal, not SPD", residual=np.inf)
        minv = 1.0 / diag
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (op.dimension,):
            raise ValueError("x0 dimension mismatch")
        x = x0[free].copy()
        r = b - kff @ x
    else:
        x = np.zeros(len(free))
        r = b.copy()
    z = minv * r if jacobi else r
    p = z.copy()
    rz = float(r @ z)
    for _ in range(maxiter):
        if np.linalg.norm(r) <= tol * bnorm:
            break
        kp = kff @ p
        alpha = rz / float(p @ kp)
        x += alpha * p
        r -= alpha * kp
        z = minv * r if jacobi else r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = float(np.linalg.norm(r)) / bnorm
    if res > tol:
        raise SolveError(
            f"conjugate gradients stalled at relative residual {res:.3e} "
            f"(target {tol:.1e}, {maxiter} iterations)",
            residual=res,
        )
    x_full[free] = x
    return x_full


# ---------------------------------------------------------------- motion


def apply_deformation(mesh, displacement, scale=1.0):
    """Move nodes by scale*displacement; refuse to tangle.

    On failure the error carries the largest admissible scale found by
    bisection, so callers can shrink their step.
    """
    u = np.asarray(displacement, dtype=float)
    if u.shape != (mesh.n_nodes, 2):
        raise ValueError("displacement must be one planar vector per node")

    def min_area(t):
        return _signed_areas(mesh.nodes + t * u, mesh.triangles).min()

    if min_area(scale) <= 0.0:
        lo, hi = 0.0, scale
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if min_area(mid) > 0.0:
                lo = mid
            else:
                hi = mid
        raise MeshTangleError(
            f"deformation tangles the mesh at scale {scale:.6g}; "
            f"largest admissible scale ~ {lo:.6g}",
            admissible_scale=lo,
        )
    return mesh.with_nodes(mesh.nodes + scale * u)


def extract_gamma_curve(mesh):
    """Interface loop as a curve, orientation normalized to CCW."""
    if len(mesh.gamma_loop) == 0:
        raise ValueError("mesh carries no interface loop")
    return DiscreteCurve(mesh.nodes[mesh.gamma_loop])


def triangles_inside_curve(mesh):
    """Boolean per triangle: centroid enclosed by the interface loop."""
    pts_c = mesh.nodes[mesh.gamma_loop]
    polygon = shapely.polygons(np.vstack([pts_c, pts_c[:1]]))
    centroids = mesh.nodes[mesh.triangles].mean(axis=1)
    return shapely.contains(polygon, shapely.points(centroids))


# ---------------------------------------------------------------- fields


class P1Interpolant:
    """Point evaluation of a nodal P1 field, with gradients.

    Candidate triangles come from a centroid tree; points that no
    candidate contains fall back to the nearest triangle with clipped
    barycentric coordinates (constant extension outside the mesh).
    """

    def __init__(self, mesh, values):
        values = np.asarray(values, dtype=float)
        if values.shape[0] != mesh.n_nodes:
            raise ValueError("one value (or vector) per node required")
        self.mesh = mesh
        self.values = values
        self._centroids = mesh.nodes[mesh.triangles].mean(axis=1)
        self._tree = cKDTree(self._centroids)
        self._grads, self._areas = p1_gradients(mesh.nodes, mesh.triangles)

    def _barycentric(self, tri_idx, pts):
        tri = self.mesh.triangles[tri_idx]
        p0 = self.mesh.nodes[tri[:, 0]]
        g = self._grads[tri_idx]
        # lam_i(x) = lam_i(p0) + grad lam_i . (x - p0); lam at p0 is (1,0,0)
        d = pts - p0
        lam = np.einsum("tid,td->ti", g, d)
        lam[:, 0] += 1.0
        return lam

    def locate(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        k = min(24, self.mesh.n_triangles)
        _, cand = self._tree.query(pts, k=k)
        cand = np.asarray(cand).reshape(len(pts), -1)
        found = np.full(len(pts), -1, dtype=np.int64)
        for col in range(cand.shape[1]):
            open_rows = np.nonzero(found < 0)[0]
            if len(open_rows) == 0:
                break
            idx = cand[open_rows, col]
            lam = self._barycentric(idx, pts[open_rows])
            inside = lam.min(axis=1) >= -1e-12
            found[open_rows[inside]] = idx[inside]
        miss = np.nonzero(found < 0)[0]
        if len(miss):
            # nearest centroid as a last resort (point off the mesh)
            _, nearest = self._tree.query(pts[miss], k=1)
            found[miss] = np.atleast_1d(nearest)
        return found

    def __call__(self, pts):
        """Values at pts; returns (n,) or (n, c) matching the field."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        tri_idx = self.locate(pts)
        lam = np.clip(self._barycentric(tri_idx, pts), 0.0, None)
        lam /= lam.sum(axis=1)[:, None]
        vals = self.values[self.mesh.triangles[tri_idx]]
        return np.einsum("ti,ti...->t...", lam, vals)

    def gradient(self, pts):
        """Piecewise-constant gradient of the field at pts."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        tri_idx = self.locate(pts)
        g = self._grads[tri_idx]
        vals = self.values[self.mesh.triangles[tri_idx]]
        return np.einsum("ti...,tid->t...d", vals, g)


# ---------------------------------------------------------------- file io


def write_mesh(path, mesh, fields=None):
    """Plain text mesh file; optional named nodal scalar fields."""
    lines = [f"#nodes {mesh.n_nodes}"]
    for p, mark in zip(mesh.nodes, mesh.node_marks):
        lines.append(f"{p[0]:.17g} {p[1]:.17g} {int(mark)}")
    lines.append(f"#triangles {mesh.n_triangles}")
    for t in mesh.triangles:
        lines.append(f"{t[0]} {t[1]} {t[2]}")
    lines.append(f"#gamma {len(mesh.gamma_loop)}")
    for i in mesh.gamma_loop:
        lines.append(str(int(i)))
    for name, values in (fields or {}).items():
        values = np.asarray(values, dtype=float)
        if values.shape != (mesh.n_nodes,):
            raise ValueError(f"field {name!r} must be one scalar per node")
        lines.append(f"#field {name} {mesh.n_nodes}")
        for v in values:
            lines.append(f"{v:.17g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path):
    """Inverse of write_mesh; returns (mesh, fields dict)."""
    with open(path) as fh:
        tokens = [ln.strip() for ln in fh.read().split("\n") if ln.strip()]
    pos = 0

    def expect(tag):
        nonlocal pos
        if pos >= len(tokens) or not tokens[pos].startswith(tag):
            raise ValueError(f"mesh file: expected {tag!r} at line {pos + 1}")
        parts = tokens[pos].split()
        pos += 1
        return parts

    def take(count):
        nonlocal pos
        out = tokens[pos : pos + count]
        if len(out) < count:
            raise ValueError("mesh file truncated")
        pos += count
        return out

    m = int(expect("#nodes")[1])
    rows = [line.split() for line in take(m)]
    nodes = np.array([[float(r[0]), float(r[1])] for r in rows])
    marks = np.array([int(r[2]) for r in rows], dtype=np.int8)
    t = int(expect("#triangles")[1])
    tris = np.array([[int(v) for v in line.split()] for line in take(t)], dtype=np.int64)
    g = int(expect("#gamma")[1])
    loop = np.array([int(line) for line in take(g)], dtype=np.int64)
    fields = {}
    while True:
        if pos >= len(tokens) or not tokens[pos].startswith("#field"):
            break
        parts = tokens[pos].split()
        pos += 1
        name, count = parts[1], int(parts[2])
        fields[name] = np.array([float(v) for v in take(count)])
    return TriMesh(nodes, tris, marks, loop), fields


def write_vtk(path, mesh, point_data=None):
    """Legacy ASCII VTK unstructured grid with optional nodal fields."""
    lines = [
        "# vtk DataFile Version 3.0",
        "planar interface mesh",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_nodes} double",
    ]
    for p in mesh.nodes:
        lines.append(f"{p[0]:.17g} {p[1]:.17g} 0")
    t = mesh.n_triangles
    lines.append(f"CELLS {t} {4 * t}")
    for tri in mesh.triangles:
        lines.append(f"3 {tri[0]} {tri[1]} {tri[2]}")
    lines.append(f"CELL_TYPES {t}")
    lines.extend(["5"] * t)
    if point_data:
        lines.append(f"POINT_DATA {mesh.n_nodes}")
        for name, values in point_data.items():
            values = np.asarray(values, dtype=float)
            if values.ndim == 1:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                for v in values:
                    lines.append(f"{v:.17g}")
            elif values.ndim == 2 and values.shape[1] == 2:
                lines.append(f"VECTORS {name} double")
                for v in values:
                    lines.append(f"{v[0]:.17g} {v[1]:.17g} 0")
            else:
                raise ValueError(f"field {name!r} must be nodal scalars or planar vectors")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
