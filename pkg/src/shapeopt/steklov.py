"""Deformation-equation machinery: assemble the shape derivative as a
right-hand side for a linear-elasticity form, solve once, and read off
both the mesh deformation and the gradient representation.

The derivative functional b(V) combines two kinds of contributions.
Terms with a volume form are assembled element-wise, but only into test
fields whose node belongs to a triangle touching the interface (the
support rule; every other entry stays bitwise zero, matching the fact
that the continuous volume derivative vanishes for fields supported
away from the interface).  Terms known only on the interface enter as
Neumann-type boundary integrals of their density.  Solving a(U, V) =
b(V) then yields the deformation U and, through the normal trace on the
interface, the gradient coefficient h in the trace metric; that metric
itself is evaluated as a(U1, U2), never by inverting the trace map.
"""

import numpy as np

from .curves import curvature, unit_tangent_normal
from .fem import (
    GAMMA,
    assemble_elasticity,
    extract_gamma_curve,
    p1_gradients,
    solve_spd,
    stiffened_mu,
    triangles_inside_curve,
)
from .functionals import (
    _midpoint_misfit,
    _target_gradients,
    polygon_area,
    solve_state_adjoint,
    surface_density,
)

__all__ = [
    "DeformationSystem",
    "assemble_rhs",
    "make_deformation_system",
    "solve_deformation",
    "steklov_inner",
]


class DeformationSystem:
    """Elasticity operator, assembled derivative rhs, the map from
    interface-curve nodes to interleaved mesh dofs, and the interface
    normals used to read off the gradient coefficient."""

    def __init__(self, operator, rhs, gamma_dof, gamma_normals):
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape != (operator.dimension,):
            raise ValueError("rhs does not match the operator dimension")
        if np.any(rhs[operator.constrained] != 0.0):
            raise ValueError("rhs must vanish at constrained dofs")
        gamma_dof = np.asarray(gamma_dof, dtype=int)
        if gamma_dof.ndim != 2 or gamma_dof.shape[1] != 2:
            raise ValueError("gamma_dof must map each curve node to two dofs")
        if len(np.unique(gamma_dof)) != gamma_dof.size:
            raise ValueError("gamma_dof must be injective")
        gamma_normals = np.asarray(gamma_normals, dtype=float)
        if gamma_normals.shape != gamma_dof.shape:
            raise ValueError("one unit normal per interface node required")
        self.operator = operator
        self.rhs = rhs
        self.gamma_dof = gamma_dof
        self.gamma_normals = gamma_normals


def _gamma_adjacent_nodes(mesh):
    touching = np.any(mesh.node_marks[mesh.triangles] == GAMMA, axis=1)
    mask = np.zeros(mesh.n_nodes, dtype=bool)
    mask[np.unique(mesh.triangles[touching])] = True
    return mask


def _neumann_rhs(mesh, density):
    """Boundary-integral assembly of the surface density r against the
    normal components of the P1 basis: exact integration of the P1x P1
    product over each interface edge."""
    rhs = np.zeros(2 * mesh.n_nodes)
    loop = mesh.gamma_loop
    pts = mesh.nodes[loop]
    nxt = np.roll(np.arange(len(loop)), -1)
    edges = pts[nxt] - pts
    lengths = np.linalg.norm(edges, axis=1)
    # CCW interface: outward edge normal is the clockwise rotation
    normals = np.stack([edges[:, 1], -edges[:, 0]], axis=1) / lengths[:, None]
    r_i, r_j = density, density[nxt]
    w_i = lengths * (r_i / 3.0 + r_j / 6.0)
    w_j = lengths * (r_j / 3.0 + r_i / 6.0)
    for d in range(2):
        np.add.at(rhs, 2 * loop + d, w_i * normals[:, d])
        np.add.at(rhs, 2 * loop[nxt] + d, w_j * normals[:, d])
    return rhs


def _volume_rhs_area(problem, mesh):
    # d/dt (area - a*)^2 = 2 (area - a*) * sum_T |T| div phi
    grads, areas = p1_gradients(mesh.nodes, mesh.triangles)
    inside = triangles_inside_curve(mesh)
    area = polygon_area(mesh.nodes[mesh.gamma_loop])
    rhs = np.zeros(2 * mesh.n_nodes)
    w = 2.0 * (area - problem.a_star) * areas
    contrib = w[inside, None, None] * grads[inside]
    tri = mesh.triangles[inside]
    for d in range(2):
        np.add.at(rhs, (2 * tri + d).ravel(), contrib[:, :, d].ravel())
    return rhs


def _volume_rhs_tracking(problem, mesh, state):
    """Element assembly of the exact discrete volume derivative against
    each nodal basis field (same kernels as volume_derivative, evaluated
    at V = phi_a e_d)."""
    grads, areas = p1_gradients(mesh.nodes, mesh.triangles)
    tri = mesh.triangles
    y, p = state.y, state.p
    sigma, source = state.sigma, state.source
    gy = np.einsum("ta,tad->td", y[tri], grads)
    gp = np.einsum("ta,tad->td", p[tri], grads)
    gygp = np.einsum("td,td->t", gy, gp)
    misfit, mids = _midpoint_misfit(problem, mesh, y)
    tgrad = _target_gradients(problem, mids)
    p_mean = p[tri].mean(axis=1)
    track_cell = 0.5 * np.sum(misfit**2, axis=1) / 3.0

    rhs = np.zeros(2 * mesh.n_nodes)
    sa = sigma * areas
    for d in range(2):
        # stiffness pull-back at V = phi_a e_d
        stiff = sa[:, None] * (
            grads[:, :, d] * gygp[:, None]
            - gp[:, None, d] * np.einsum("tad,td->ta", grads, gy)
            - gy[:, None, d] * np.einsum("tad,td->ta", grads, gp)
        )
        # load and measure variation: div(phi_a e_d) = (grad phi_a)_d
        cell = (track_cell - source * p_mean) * areas
        geo = cell[:, None] * grads[:, :, d]
        # target transport: the basis field is 1/2 at the two midpoints
        # of edges containing node a
        conv = np.zeros_like(grads[:, :, 0])
        for m in range(3):
            pull = areas / 3.0 * misfit[:, m] * tgrad[:, m, d] * 0.5
            conv[:, m] -= pull
            conv[:, (m + 1) % 3] -= pull
        np.add.at(rhs, (2 * tri + d).ravel(), (stiff + geo + conv).ravel())
    return rhs


def assemble_rhs(mesh, problem, state=None, form="default"):
    """Derivative functional b(V) on nodal basis fields.

    form 'default': volume kernels for terms that have them, boundary
    integrals for the rest (the shipped pipeline).  form 'volume' /
    'surface' force one route for every term that supports it (used by
    the consistency checks).  The support rule zeroes volume
    contributions at nodes of triangles not touching the interface.
    """
    if form not in ("default", "volume", "surface"):
        raise ValueError(f"unknown assembly form {form!r}")
    if form == "surface":
        density = surface_density(problem, mesh, state=state)
        return _neumann_rhs(mesh, density)

    if problem.kind == "perimeter":
        # length has no volume form; its derivative lives on the curve
        return _neumann_rhs(mesh, surface_density(problem, mesh))

    if problem.kind == "area_mismatch":
        rhs = _volume_rhs_area(problem, mesh)
    else:
        if state is None:
            raise ValueError("poisson_tracking assembly needs a state bundle")
        if state.p is None:
            raise ValueError("state bundle lacks the adjoint field")
        rhs = _volume_rhs_tracking(problem, mesh, state)

    allowed = _gamma_adjacent_nodes(mesh)
    rhs[~np.repeat(allowed, 2)] = 0.0
    if problem.nu:
        curve = extract_gamma_curve(mesh)
        rhs += problem.nu * _neumann_rhs(mesh, curvature(curve))
    return rhs


def make_deformation_system(mesh, problem, state=None, lam=0.0, mu=1.0,
                            stiffen=True, form="default"):
    """Assemble the elasticity operator and the derivative rhs."""
    if problem.needs_mesh and state is None:
        state = solve_state_adjoint(problem, mesh)
    shear = stiffened_mu(mesh, mu=mu) if stiffen else mu
    op = assemble_elasticity(mesh, lam=lam, mu=shear)
    rhs = assemble_rhs(mesh, problem, state=state, form=form)
    rhs[op.constrained] = 0.0
    gamma_dof = np.stack([2 * mesh.gamma_loop, 2 * mesh.gamma_loop + 1], axis=1)
    _, normals = unit_tangent_normal(extract_gamma_curve(mesh))
    return DeformationSystem(op, rhs, gamma_dof, normals)


def solve_deformation(sys, tol=1e-10):
    """Solve a(U, V) = b(V); return the nodal deformation U and the
    normal trace h of U on the interface curve."""
    u_flat = solve_spd(sys.operator, sys.rhs, tol=tol, jacobi=True)
    u = u_flat.reshape(-1, 2)
    u_gamma = np.stack(
        [u_flat[sys.gamma_dof[:, 0]], u_flat[sys.gamma_dof[:, 1]]], axis=1
    )
    h = np.einsum("id,id->i", u_gamma, sys.gamma_normals)
    return u, h


def steklov_inner(u1, u2, op):
    """Trace-metric pairing evaluated as the elasticity energy a(U1, U2)
    of the two deformation solutions."""
    v1 = np.asarray(u1, dtype=float).ravel()
    v2 = np.asarray(u2, dtype=float).ravel()
    if v1.shape != (op.dimension,) or v2.shape != (op.dimension,):
        raise ValueError("deformation fields do not match the operator")
    return float(v1 @ (op.matrix @ v2))
