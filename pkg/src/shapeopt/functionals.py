"""Shape functionals with evaluation, surface-form and volume-form
shape derivatives, adjoint solves, and a finite-difference referee.

Three functionals ship: curve perimeter, squared area mismatch, and a
two-phase conductivity identification problem (coefficient jump across
the interface, L2 tracking of the state over the whole box, optional
perimeter regularization).

Design rule: on each geometry representation the derivative formulas
differentiate the discrete functional exactly.  On curves, length and
enclosed area use spectral quadrature, whose exact nodal gradients are
the curvature and unit-normal densities.  On meshes, the objective is
assembled with P1 elements plus the edge-midpoint rule, and the volume
form collects the exact element-wise geometry derivatives (the P1 value
at an edge midpoint is the endpoint mean, which conveniently does not
move with the geometry).  The surface form is the continuous interface
density sampled at curve nodes; it matches the others only up to
discretization error, which the refinement sweeps quantify.
"""

import numpy as np

from .curves import (
    DiscreteCurve,
    arc_length_derivative,
    arc_length_measure,
    circumferential_derivative,
    curvature,
)
from .fem import (
    MeshTangleError,
    MeshingError,
    TriMesh,
    apply_deformation,
    assemble_poisson,
    extract_gamma_curve,
    p1_gradients,
    solve_spd,
    triangles_inside_curve,
)

__all__ = [
    "ShapeProblem",
    "StateBundle",
    "AnalyticTarget",
    "FdEstimate",
    "evaluate",
    "tracking_misfit",
    "surface_density",
    "volume_derivative",
    "solve_state_adjoint",
    "eulerian_derivative_fd",
    "spectral_length",
    "spectral_area",
    "polygon_length",
    "polygon_area",
]

KINDS = ("perimeter", "area_mismatch", "poisson_tracking")

DEFAULT_FD_STEPS = (1e-3, 5e-4, 2.5e-4)


class AnalyticTarget:
    """Target data given as closed-form value and gradient callables."""

    def __init__(self, value_fn, gradient_fn):
        self._value = value_fn
        self._gradient = gradient_fn

    def __call__(self, pts):
        return np.asarray(self._value(np.atleast_2d(pts)), dtype=float)

    def gradient(self, pts):
        return np.asarray(self._gradient(np.atleast_2d(pts)), dtype=float)


class ShapeProblem:
    """A shape functional plus its data.

    kind 'perimeter': curve length.
    kind 'area_mismatch': (enclosed area - a_star)^2 + nu * length.
    kind 'poisson_tracking': 1/2 integral (y - target)^2 over the box
    + nu * length, with y the two-phase Poisson state (coefficient
    sigma_in inside the interface, sigma_out outside, constant source
    per phase, zero Dirichlet data on the outer boundary).
    """

    def __init__(
        self,
        kind,
        a_star=0.0,
        nu=0.0,
        sigma_in=1.0,
        sigma_out=2.0,
        source=1.0,
        target=None,
    ):
        if kind not in KINDS:
            raise ValueError(f"unknown functional kind {kind!r}")
        if nu < 0.0:
            raise ValueError("regularization weight nu must be >= 0")
        if sigma_in <= 0.0 or sigma_out <= 0.0:
            raise ValueError("phase coefficients must be positive")
        try:
            f_in, f_out = source
        except TypeError:
            f_in = f_out = float(source)
        self.kind = kind
        self.a_star = float(a_star)
        self.nu = float(nu)
        self.sigma_in = float(sigma_in)
        self.sigma_out = float(sigma_out)
        self.f_in = float(f_in)
        self.f_out = float(f_out)
        self.target = target

    @property
    def needs_mesh(self):
        return self.kind == "poisson_tracking"


class StateBundle:
    """State and adjoint nodal fields with their solve residuals."""

    def __init__(self, y, p, sigma, source, residual_y, residual_p):
        self.y = y
        self.p = p
        self.sigma = sigma
        self.source = source
        self.residual_y = residual_y
        self.residual_p = residual_p


class FdEstimate:
    """Finite-difference derivative with its observed step order."""

    def __init__(self, value, order, steps):
        self.value = value
        self.order = order
        self.steps = tuple(steps)

    def __repr__(self):
        return f"FdEstimate(value={self.value:.6e}, order={self.order}, steps={self.steps})"


# -------------------------------------------------------- quadratures

def spectral_length(c):
    return arc_length_measure(c)[1]


def spectral_area(c):
    x, y = c.points[:, 0], c.points[:, 1]
    dx = circumferential_derivative(c)
    area = 0.5 * np.sum(x * dx[:, 1] - y * dx[:, 0])
    return area * 2.0 * np.pi / c.n


def polygon_length(pts):
    return float(np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1).sum())


def polygon_area(pts):
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - y * np.roll(x, -1)))


def _edge_length_derivative(pts, v):
    # exact t-derivative of the polygon length under nodes -> nodes + t v
    e = np.roll(pts, -1, axis=0) - pts
    de = np.roll(v, -1, axis=0) - v
    return float(np.sum(np.einsum("id,id->i", e, de) / np.linalg.norm(e, axis=1)))


# -------------------------------------------------------- state solves

def _phase_fields(problem, mesh):
    inside = triangles_inside_curve(mesh)
    sigma = np.where(inside, problem.sigma_in, problem.sigma_out)
    source = np.where(inside, problem.f_in, problem.f_out)
    return sigma, source


def _load_vector(mesh, source, areas):
    b = np.zeros(mesh.n_nodes)
    np.add.at(b, mesh.triangles.ravel(), np.repeat(source * areas / 3.0, 3))
    return b


def _edge_midpoints(mesh):
    p = mesh.nodes[mesh.triangles]
    return np.stack([0.5 * (p[:, i] + p[:, (i + 1) % 3]) for i in range(3)], axis=1)


def _target_values(problem, pts):
    flat = pts.reshape(-1, 2)
    if problem.target is None:
        return np.zeros(len(flat)).reshape(pts.shape[:-1])
    return np.asarray(problem.target(flat), dtype=float).reshape(pts.shape[:-1])


def _target_gradients(problem, pts):
    flat = pts.reshape(-1, 2)
    if problem.target is None:
        return np.zeros((len(flat), 2)).reshape(pts.shape)
    return np.asarray(problem.target.gradient(flat), dtype=float).reshape(pts.shape)


def _midpoint_misfit(problem, mesh, y):
    # e[t, m] = y_h at edge midpoint m of triangle t minus target there;
    # the P1 value at an edge midpoint is just the endpoint mean
    mids = _edge_midpoints(mesh)
    yt = y[mesh.triangles]
    yh = np.stack([0.5 * (yt[:, i] + yt[:, (i + 1) % 3]) for i in range(3)], axis=1)
    return yh - _target_values(problem, mids), mids


def _adjoint_source(mesh, misfit, areas):
    g = np.zeros(mesh.n_nodes)
    w = areas / 3.0
    for m in range(3):
        half = 0.5 * w * misfit[:, m]
        np.add.at(g, mesh.triangles[:, m], half)
        np.add.at(g, mesh.triangles[:, (m + 1) % 3], half)
    return g


def solve_state_adjoint(problem, mesh, tol=1e-10, warm=None, need_adjoint=True):
    """Two-phase Poisson state and its tracking adjoint on the mesh."""
    if problem.kind != "poisson_tracking":
        raise ValueError("state solves only apply to poisson_tracking")
    sigma, source = _phase_fields(problem, mesh)
    op = assemble_poisson(mesh, sigma)
    areas = mesh.triangle_areas()
    b = _load_vector(mesh, source, areas)
    b[op.constrained] = 0.0
    y0 = warm.y if warm is not None else None
    y = solve_spd(op, b, tol=tol, jacobi=True, x0=y0)
    res_y = _relative_residual(op, y, b)
    if not need_adjoint:
        return StateBundle(y, None, sigma, source, res_y, None)
    misfit, _ = _midpoint_misfit(problem, mesh, y)
    g = _adjoint_source(mesh, misfit, areas)
    g = -g
    g[op.constrained] = 0.0
    p0 = warm.p if warm is not None and warm.p is not None else None
    p = solve_spd(op, g, tol=tol, jacobi=True, x0=p0)
    res_p = _relative_residual(op, p, g)
    return StateBundle(y, p, sigma, source, res_y, res_p)


def _relative_residual(op, x, b):
    free = np.setdiff1d(np.arange(op.dimension), op.constrained)
    bn = np.linalg.norm(b[free])
    if bn == 0.0:
        return 0.0
    return float(np.linalg.norm((op.matrix @ x - b)[free]) / bn)


def tracking_misfit(problem, mesh, state=None):
    """The pure tracking term 1/2 integral (y - target)^2, no regularizer."""
    if state is None:
        state = solve_state_adjoint(problem, mesh, need_adjoint=False)
    misfit, _ = _midpoint_misfit(problem, mesh, state.y)
    areas = mesh.triangle_areas()
    return float(np.sum(areas / 3.0 * 0.5 * np.sum(misfit**2, axis=1)))


# -------------------------------------------------------- evaluation

def evaluate(problem, geometry, state=None):
    """J at the given geometry (curve or mesh)."""
    if isinstance(geometry, DiscreteCurve):
        if problem.needs_mesh:
            raise ValueError("poisson_tracking needs a mesh, got a bare curve")
        if problem.kind == "perimeter":
            return spectral_length(geometry)
        area = spectral_area(geometry)
        base = (area - problem.a_star) ** 2
        if problem.nu:
            base += problem.nu * spectral_length(geometry)
        return base
    if not isinstance(geometry, TriMesh):
        raise TypeError("geometry must be a DiscreteCurve or TriMesh")
    gamma = geometry.nodes[geometry.gamma_loop]
    if problem.kind == "perimeter":
        return polygon_length(gamma)
    if problem.kind == "area_mismatch":
        base = (polygon_area(gamma) - problem.a_star) ** 2
        if problem.nu:
            base += problem.nu * polygon_length(gamma)
        return base
    value = tracking_misfit(problem, geometry, state)
    if problem.nu:
        value += problem.nu * polygon_length(gamma)
    return value


# -------------------------------------------------------- surface form

def _gamma_mass_matrix(gamma_pts):
    # P1 mass matrix of the closed polygon (cyclic tridiagonal)
    n = len(gamma_pts)
    lengths = np.linalg.norm(np.roll(gamma_pts, -1, axis=0) - gamma_pts, axis=1)
    m = np.zeros((n, n))
    idx = np.arange(n)
    m[idx, idx] = (lengths + np.roll(lengths, 1)) / 3.0
    m[idx, (idx + 1) % n] = lengths / 6.0
    m[(idx + 1) % n, idx] = lengths / 6.0
    return m


def _one_sided_flux(mesh, sigma, field, side_mask, gamma_mass, side_load):
    """Nodal normal flux sigma dfield/dn on the interface recovered from
    the one-sided weak residual (consistent-flux recovery).  side_load
    is the nodal load vector of that side's volume source; orientation
    is the outward normal of the side.
    """
    tris = mesh.triangles[side_mask]
    grads, areas = p1_gradients(mesh.nodes, mesh.triangles)
    grads, areas = grads[side_mask], areas[side_mask]
    gfield = np.einsum("ta,tad->td", field[tris], grads)
    defect = np.zeros(mesh.n_nodes)
    contrib = np.einsum("t,td,tad->ta", sigma[side_mask] * areas, gfield, grads)
    np.add.at(defect, tris.ravel(), contrib.ravel())
    defect -= side_load
    return np.linalg.solve(gamma_mass, defect[mesh.gamma_loop])


def _side_constant_load(mesh, source, areas, side_mask):
    b = np.zeros(mesh.n_nodes)
    w = np.where(side_mask, source * areas / 3.0, 0.0)
    np.add.at(b, mesh.triangles.ravel(), np.repeat(w, 3))
    return b


def _side_misfit_load(mesh, misfit, areas, side_mask):
    # load of the adjoint source -(y - target) over one side, with the
    # same edge-midpoint rule the tracking term uses
    g = np.zeros(mesh.n_nodes)
    w = np.where(side_mask, areas / 3.0, 0.0)
    for m in range(3):
        half = 0.5 * w * misfit[:, m]
        np.add.at(g, mesh.triangles[:, m], half)
        np.add.at(g, mesh.triangles[:, (m + 1) % 3], half)
    return -g


def _tracking_surface_density(problem, mesh, state):
    curve = extract_gamma_curve(mesh)
    dy_tau = arc_length_derivative(state.y[mesh.gamma_loop], curve)
    dp_tau = arc_length_derivative(state.p[mesh.gamma_loop], curve)

    inside = triangles_inside_curve(mesh)
    mass = _gamma_mass_matrix(mesh.nodes[mesh.gamma_loop])
    areas = mesh.triangle_areas()
    misfit, _ = _midpoint_misfit(problem, mesh, state.y)

    # seen-from-inside fluxes carry the outward normal of the enclosed
    # region; seen-from-outside ones flip sign to the same orientation
    q_y_in = _one_sided_flux(
        mesh, state.sigma, state.y, inside, mass,
        _side_constant_load(mesh, state.source, areas, inside),
    )
    q_y_out = -_one_sided_flux(
        mesh, state.sigma, state.y, ~inside, mass,
        _side_constant_load(mesh, state.source, areas, ~inside),
    )
    q_p_in = _one_sided_flux(
        mesh, state.sigma, state.p, inside, mass,
        _side_misfit_load(mesh, misfit, areas, inside),
    )
    q_p_out = -_one_sided_flux(
        mesh, state.sigma, state.p, ~inside, mass,
        _side_misfit_load(mesh, misfit, areas, ~inside),
    )

    q_y = 0.5 * (q_y_in + q_y_out)
    q_p = 0.5 * (q_p_in + q_p_out)
    jump_sigma = problem.sigma_in - problem.sigma_out
    jump_inv = 1.0 / problem.sigma_in - 1.0 / problem.sigma_out
    r = jump_sigma * dy_tau * dp_tau - jump_inv * q_y * q_p
    if problem.nu:
        r = r + problem.nu * curvature(curve)
    return r


def surface_density(problem, geometry, state=None):
    """The boundary density r with DJ[V] = integral r <V, n> ds on the
    interface; nodal values on the interface curve."""
    if isinstance(geometry, DiscreteCurve):
        curve = geometry
        area = spectral_area(curve)
        on_mesh = False
    else:
        curve = extract_gamma_curve(geometry)
        area = polygon_area(geometry.nodes[geometry.gamma_loop])
        on_mesh = True
    if problem.kind == "perimeter":
        return curvature(curve)
    if problem.kind == "area_mismatch":
        r = np.full(curve.n, 2.0 * (area - problem.a_star))
        if problem.nu:
            r = r + problem.nu * curvature(curve)
        return r
    if not on_mesh:
        raise ValueError("poisson_tracking needs a mesh, got a bare curve")
    if state is None:
        state = solve_state_adjoint(problem, geometry)
    if state.p is None:
        raise ValueError("state bundle lacks the adjoint field")
    return _tracking_surface_density(problem, geometry, state)


# -------------------------------------------------------- volume form

def volume_derivative(problem, mesh, velocity, state=None):
    """Exact t-derivative of the discrete objective under node motion
    nodes -> nodes + t * velocity.  Velocity is nodal, one planar vector
    per mesh node."""
    v = np.asarray(velocity, dtype=float)
    if v.shape != (mesh.n_nodes, 2):
        raise ValueError("velocity must be one planar vector per node")
    gamma = mesh.gamma_loop
    gamma_pts = mesh.nodes[gamma]
    v_gamma = v[gamma]
    if problem.kind == "perimeter":
        return _edge_length_derivative(gamma_pts, v_gamma)

    grads, areas = p1_gradients(mesh.nodes, mesh.triangles)
    dv = np.einsum("tad,tae->tde", v[mesh.triangles], grads)
    div_v = dv[:, 0, 0] + dv[:, 1, 1]

    if problem.kind == "area_mismatch":
        inside = triangles_inside_curve(mesh)
        area = polygon_area(gamma_pts)
        d_area = float(np.sum(areas[inside] * div_v[inside]))
        out = 2.0 * (area - problem.a_star) * d_area
        if problem.nu:
            out += problem.nu * _edge_length_derivative(gamma_pts, v_gamma)
        return out

    if state is None:
        state = solve_state_adjoint(problem, mesh)
    y, p = state.y, state.p
    sigma, source = state.sigma, state.source

    gy = np.einsum("ta,tad->td", y[mesh.triangles], grads)
    gp = np.einsum("ta,tad->td", p[mesh.triangles], grads)
    sym = dv + np.swapaxes(dv, 1, 2)
    # exact derivative of p^T K y: element pull-back of the stiffness
    k_dot = float(
        np.sum(
            sigma
            * areas
            * (div_v * np.einsum("td,td->t", gy, gp) - np.einsum("tde,te,td->t", sym, gy, gp))
        )
    )
    # exact derivative of p^T b for the piecewise-constant source
    p_mean = p[mesh.triangles].mean(axis=1)
    b_dot = float(np.sum(source * areas * div_v * p_mean))

    # geometric variation of the tracking quadrature at frozen nodal y:
    # midpoint values of y_h do not move; the target is sampled at the
    # moving midpoints, the cell measure scales with div v
    misfit, mids = _midpoint_misfit(problem, mesh, y)
    tgrad = _target_gradients(problem, mids)
    vt = v[mesh.triangles]
    v_mid = np.stack([0.5 * (vt[:, i] + vt[:, (i + 1) % 3]) for i in range(3)], axis=1)
    geo = float(np.sum(areas / 3.0 * div_v * 0.5 * np.sum(misfit**2, axis=1)))
    geo -= float(np.sum(areas[:, None] / 3.0 * misfit * np.einsum("tmd,tmd->tm", tgrad, v_mid)))

    out = geo + k_dot - b_dot
    if problem.nu:
        out += problem.nu * _edge_length_derivative(gamma_pts, v_gamma)
    return out


# -------------------------------------------------------- FD referee

def _perturbed_value(problem, geometry, velocity, t, warm):
    if isinstance(geometry, DiscreteCurve):
        moved = DiscreteCurve(geometry.points + t * velocity)
        return evaluate(problem, moved)
    moved = apply_deformation(geometry, velocity, t)
    if problem.needs_mesh:
        bundle = solve_state_adjoint(problem, moved, warm=warm, need_adjoint=False)
        return evaluate(problem, moved, state=bundle)
    return evaluate(problem, moved)


def eulerian_derivative_fd(problem, geometry, velocity, t_steps=DEFAULT_FD_STEPS, max_shrink=8):
    """Central-difference derivative of J under nodes -> nodes + t V.

    Richardson-extrapolates the step sequence and reports the observed
    order.  Steps that invalidate the geometry shrink automatically.
    """
    steps = [float(t) for t in t_steps]
    if not steps or any(t <= 0.0 for t in steps):
        raise ValueError("t_steps must be positive")
    warm = None
    if isinstance(geometry, TriMesh) and problem.needs_mesh:
        warm = solve_state_adjoint(problem, geometry, need_adjoint=False)
    for _ in range(max_shrink):
        try:
            diffs = []
            for t in steps:
                j_plus = _perturbed_value(problem, geometry, velocity, t, warm)
                j_minus = _perturbed_value(problem, geometry, velocity, -t, warm)
                diffs.append((j_plus - j_minus) / (2.0 * t))
            break
        except (ValueError, MeshTangleError, MeshingError):
            steps = [0.5 * t for t in steps]
    else:
        raise RuntimeError("could not find admissible FD steps")
    if len(diffs) >= 2:
        value = (4.0 * diffs[-1] - diffs[-2]) / 3.0
    else:
        value = diffs[-1]
    order = float("nan")
    if len(diffs) >= 3:
        d1 = abs(diffs[0] - diffs[1])
        d2 = abs(diffs[1] - diffs[2])
        floor = 1e-12 * max(1.0, abs(diffs[-1]))
        if d1 > floor and d2 > floor:
            order = float(np.log2(d1 / d2))
    return FdEstimate(value, order, steps)
