"""First order Sobolev metric on boundary fields and its calculus.

The metric on normal coefficient fields is

    g1(a, b) = sum a*b ds + A * sum (D_s a)*(D_s b) ds,

the integrated-by-parts form of pairing with L1 = I - A*D_s^2.  On the
discrete level the two forms coincide exactly: with S = diag(ds) and the
antisymmetric spectral differentiation matrix D, the matrix S*L1 is
symmetric and equals S + A*dtheta*D*diag(1/speed)*D, which is precisely
the quadrature of the by-parts expression.  This makes L1 self-adjoint
in the ds-weighted inner product and the Riesz identity of the gradient
exact to solver rounding on every curve, not only on circles.
"""

import warnings

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .curves import (
    arc_length_derivative,
    arc_length_measure,
    fourier_derivative,
    DiscreteCurve,
    unit_tangent_normal,
)

__all__ = [
    "SobolevParams",
    "l2_inner",
    "sobolev_inner",
    "solve_L1",
    "riemannian_gradient",
    "covariant_derivative",
    "metric_directional_derivative",
    "shape_hessian_apply",
]


class SobolevParams:
    """Metric parameter A > 0 weighting the D_s^2 term of L1."""

    def __init__(self, A=0.1):
        if not A > 0.0:
            raise ValueError(f"metric parameter A must be positive, got {A}")
        self.A = float(A)

    def __repr__(self):
        return f"SobolevParams(A={self.A})"


def _ds_weights(c):
    speed, _ = arc_length_measure(c)
    return speed * (2.0 * np.pi / c.n)


def l2_inner(alpha, beta, c):
    """Quadrature of the L2 pairing sum alpha*beta ds.

    Scalar fields pair pointwise; vector fields pair through the
    euclidean inner product of their nodal vectors.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    prod = alpha * beta if alpha.ndim == 1 else np.sum(alpha * beta, axis=1)
    return float(np.sum(prod * _ds_weights(c)))


def sobolev_inner(alpha, beta, c, params):
    """g1 pairing: l2(alpha, beta) + A * l2(D_s alpha, D_s beta)."""
    da = arc_length_derivative(alpha, c)
    db = arc_length_derivative(beta, c)
    return l2_inner(alpha, beta, c) + params.A * l2_inner(da, db, c)


def _l1_matrix(c, params):
    """Dense N x N matrix of I - A * D_s^2 on the curve's nodes."""
    n = c.n
    speed, _ = arc_length_measure(c)
    d = fourier_derivative(np.eye(n))
    ds1 = d / speed[:, None]
    return np.eye(n) - params.A * (ds1 @ ds1)


def solve_L1(r, c, params):
    """Solve (I - A*D_s^2) q = r on the curve, componentwise for vectors.

    The operator is assembled densely (D_s with variable speed is dense
    in any basis) and solved by LU with one step of iterative refinement
    when the residual exceeds 1e-10 * ||r||_inf.
    """
    r = np.asarray(r, dtype=float)
    mat = _l1_matrix(c, params)
    lu = lu_factor(mat)
    q = lu_solve(lu, r)
    scale = np.max(np.abs(r))
    if scale > 0.0:
        resid = r - mat @ q
        if np.max(np.abs(resid)) > 1e-10 * scale:
            q = q + lu_solve(lu, resid)
            resid = r - mat @ q
            if np.max(np.abs(resid)) > 1e-10 * scale:
                raise RuntimeError(
                    "L1 solve residual "
                    f"{np.max(np.abs(resid)):.3e} exceeds 1e-10 * ||r||"
                )
    return q


def riemannian_gradient(r, c, params):
    """Metric representative q*n of an L2 surface density r.

    q solves L1 q = r, so for every test coefficient phi the Riesz
    identity g1(q, phi) = l2(r, phi) holds to solver accuracy.
    """
    q = solve_L1(r, c, params)
    _, n = unit_tangent_normal(c)
    return q[:, None] * n


def covariant_derivative(m, h, c, params):
    """Connection term L1^{-1}(K1 h) with K1 = (1/2)<D_s m, v>(I + A D_s^2).

    m and h are nodal vector fields along c; the result is the
    Christoffel part of the derivative of h in direction m, i.e. what
    must be added to a plain directional derivative of nodal values.
    """
    v, _ = unit_tangent_normal(c)
    dm = arc_length_derivative(m, c)
    w = np.sum(dm * v, axis=1)
    d2h = arc_length_derivative(arc_length_derivative(h, c), c)
    k1 = 0.5 * w[:, None] * (h + params.A * d2h)
    return solve_L1(k1, c, params)


def metric_directional_derivative(h, k, m, c, params):
    """Derivative of c -> g1_c(h, k) under curve motion m.

    Nodal values of h and k are held fixed while the curve moves, so
    both the measure ds and the operator D_s vary.  Writing
    w = <D_s m, v> for the tangential stretch rate, the derivative is

        sum w * (<h, k> - A * <D_s h, D_s k>) ds,

    the exact variation of the by-parts quadrature: ds varies by w*ds
    and each D_s by -w*D_s.  This matches central finite differences of
    g1 to the order of the difference scheme.
    """
    v, _ = unit_tangent_normal(c)
    w = np.sum(arc_length_derivative(m, c) * v, axis=1)
    h = np.asarray(h, dtype=float)
    k = np.asarray(k, dtype=float)
    dh = arc_length_derivative(h, c)
    dk = arc_length_derivative(k, c)
    if h.ndim == 1:
        integrand = w * (h * k - params.A * dh * dk)
    else:
        integrand = w * (np.sum(h * k, axis=1) - params.A * np.sum(dh * dk, axis=1))
    return float(np.sum(integrand * _ds_weights(c)))


def shape_hessian_apply(problem, c, h, params, fd_step=1e-5):
    """Hessian action: directional derivative of the gradient field
    along h plus the connection term with m = h.

    The derivative part is a central difference of the full gradient
    field (nodal identification of fields across the perturbed curves)
    with one Richardson extrapolation, so the finite-difference error is
    O(fd_step^4).  `problem` is either a ShapeProblem or a bare callable
    mapping a curve to its surface density.
    """
    if fd_step < 1e-8:
        warnings.warn(f"hessian step {fd_step:g} is below 1e-8; expect roundoff noise")
    h = np.asarray(h, dtype=float)

    if callable(problem):
        density = problem
    else:
        from .functionals import surface_density

        def density(curve):
            return surface_density(problem, curve)

    def grad_at(t):
        curve = DiscreteCurve(c.points + t * h)
        return riemannian_gradient(density(curve), curve, params)

    def central(step):
        return (grad_at(step) - grad_at(-step)) / (2.0 * step)

    coarse = central(fd_step)
    fine = central(0.5 * fd_step)
    fd_part = (4.0 * fine - coarse) / 3.0

    grad_here = riemannian_gradient(density(c), c, params)
    return fd_part + covariant_derivative(h, grad_here, c, params)
