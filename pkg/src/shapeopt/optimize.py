"""Descent loops on discrete shapes.

Two pipelines share the bookkeeping here.  The boundary-metric one
measures everything on the interface curve: surface density, smoothed
normal coefficient, quasi-Newton transform, line search along the
normal motion.  One elasticity solve per iterate then carries the
accepted boundary motion into the bulk mesh; the extension is linear in
its boundary data, so shrinking a step reuses the solved field.  The
bulk-metric one takes the deformation field of the stiffened elasticity
system as gradient and search direction at once, priced by its own
energy norm.

The line search measures its slope by a central difference before any
other evaluation and refuses directions it cannot certify as descent,
which turns silent stagnation into a reported failure.  Quasi-Newton
memory works in whatever inner product the pipeline supplies; curvature
pairs are matched node-by-node across iterates and flushed once the
boundary has moved far enough that the identification stops meaning
anything.
"""

import numpy as np

from .curves import DiscreteCurve, resample, unit_tangent_normal
from .fem import (
    OUTER,
    MeshingError,
    MeshTangleError,
    SparseSpdOperator,
    apply_deformation,
    assemble_elasticity,
    extract_gamma_curve,
    generate_annulus_mesh,
    mesh_min_angle,
    solve_spd,
    stiffened_mu,
)
from .functionals import (
    ShapeProblem,
    evaluate,
    polygon_length,
    solve_state_adjoint,
    spectral_length,
    surface_density,
)
from .sobolev import SobolevParams, sobolev_inner, solve_L1
from .steklov import make_deformation_system, solve_deformation, steklov_inner
from .validate import validate_shape

__all__ = [
    "PIPELINES",
    "METHODS",
    "LineSearchError",
    "OptimizerConfig",
    "IterateRecord",
    "History",
    "CurvaturePair",
    "make_pair",
    "lbfgs_two_loop",
    "armijo_search",
    "run_sobolev_pipeline",
    "run_steklov_pipeline",
    "write_history",
    "read_history",
]

PIPELINES = ("sobolev_surface", "steklov_volume")
METHODS = ("steepest", "lbfgs")

# pairs whose curvature <y,s> falls below this relative floor are dropped
CURVATURE_FLOOR = 1e-12


class LineSearchError(RuntimeError):
    """No certified decreasing step with valid geometry was found."""


class OptimizerConfig:
    """Validated knobs shared by both pipelines.

    memory 0 is legal for the lbfgs method and keeps the two-loop an
    identity, so such a run coincides bitwise with steepest descent.
    grad_tol is relative: the loop stops once the gradient norm falls
    below grad_tol times the first iterate's, with an absolute floor of
    grad_tol itself so a start at a stationary shape converges at once.
    """

    def __init__(
        self,
        pipeline="sobolev_surface",
        method="steepest",
        memory=5,
        max_iter=500,
        grad_tol=1e-6,
        armijo_c1=1e-4,
        armijo_rho=0.5,
        step0=1.0,
        max_backtracks=30,
        sobolev_weight=0.1,
        quality_floor=5.0,
    ):
        if pipeline not in PIPELINES:
            raise ValueError(f"unknown pipeline {pipeline!r}, expected one of {PIPELINES}")
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}, expected one of {METHODS}")
        if int(memory) != memory or memory < 0:
            raise ValueError(f"memory must be a nonnegative integer, got {memory}")
        if int(max_iter) != max_iter or max_iter < 0:
            raise ValueError(f"max_iter must be a nonnegative integer, got {max_iter}")
        if not grad_tol > 0.0:
            raise ValueError(f"grad_tol must be positive, got {grad_tol}")
        if not 0.0 < armijo_c1 < 1.0:
            raise ValueError(f"armijo_c1 must lie in (0, 1), got {armijo_c1}")
        if not 0.0 < armijo_rho < 1.0:
            raise ValueError(f"armijo_rho must lie in (0, 1), got {armijo_rho}")
        if not step0 > 0.0:
            raise ValueError(f"step0 must be positive, got {step0}")
        if int(max_backtracks) != max_backtracks or max_backtracks < 1:
            raise ValueError(f"max_backtracks must be a positive integer, got {max_backtracks}")
        if not sobolev_weight > 0.0:
            raise ValueError(f"sobolev_weight must be positive, got {sobolev_weight}")
        if not quality_floor >= 0.0:
            raise ValueError(f"quality_floor must be nonnegative, got {quality_floor}")
        self.pipeline = pipeline
        self.method = method
        self.memory = int(memory)
        self.max_iter = int(max_iter)
        self.grad_tol = float(grad_tol)
        self.armijo_c1 = float(armijo_c1)
        self.armijo_rho = float(armijo_rho)
        self.step0 = float(step0)
        self.max_backtracks = int(max_backtracks)
        self.sobolev_weight = float(sobolev_weight)
        self.quality_floor = float(quality_floor)

    def __repr__(self):
        return (
            f"OptimizerConfig(pipeline={self.pipeline!r}, method={self.method!r}, "
            f"memory={self.memory}, max_iter={self.max_iter}, grad_tol={self.grad_tol})"
        )


class IterateRecord:
    """One logged iterate: objective, gradient norm in the active
    metric, the step length that left it (0 when the run stopped
    there), mesh quality, and a frozen interface snapshot."""

    def __init__(self, iteration, value, grad_norm, step, mesh_quality, curve_points):
        if iteration < 0:
            raise ValueError("iteration index must be nonnegative")
        if not grad_norm >= 0.0:
            raise ValueError(f"gradient norm must be nonnegative, got {grad_norm}")
        if not step >= 0.0:
            raise ValueError(f"step length must be nonnegative, got {step}")
        pts = np.array(curve_points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("curve snapshot must be an (N, 2) array")
        pts.setflags(write=False)
        self.iteration = int(iteration)
        self.value = float(value)
        self.grad_norm = float(grad_norm)
        self.step = float(step)
        self.mesh_quality = float(mesh_quality)
        self.curve_points = pts

    def __repr__(self):
        return (
            f"IterateRecord(iteration={self.iteration}, value={self.value:.6e}, "
            f"grad_norm={self.grad_norm:.3e}, step={self.step:g})"
        )


class History:
    """Append-only iterate log plus the run's exit status."""

    def __init__(self):
        self.records = []
        self.status = "running"
        self.message = ""

    def append(self, record):
        if self.records and record.iteration <= self.records[-1].iteration:
            raise ValueError("history is append-only: iteration indices must increase")
        self.records.append(record)

    @property
    def final(self):
        if not self.records:
            raise IndexError("history is empty")
        return self.records[-1]

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def __iter__(self):
        return iter(self.records)

    def __repr__(self):
        return f"History({len(self.records)} records, status={self.status!r})"


HISTORY_HEADER = "iter,J,grad_norm,step,mesh_min_angle"


def write_history(path, history):
    """CSV log, one row per iterate, full-precision floats so identical
    runs produce identical bytes."""
    lines = [HISTORY_HEADER]
    for rec in history:
        lines.append(
            f"{rec.iteration},{rec.value:.17g},{rec.grad_norm:.17g},"
            f"{rec.step:.17g},{rec.mesh_quality:.17g}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_history(path):
    """Inverse of write_history up to the curve snapshots, which the CSV
    does not carry (records come back with empty snapshot arrays)."""
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    if not lines or lines[0] != HISTORY_HEADER:
        raise ValueError(f"not a history file: expected header {HISTORY_HEADER!r}")
    history = History()
    empty = np.zeros((0, 2))
    for ln in lines[1:]:
        it, value, gnorm, step, quality = ln.split(",")
        history.append(
            IterateRecord(int(it), float(value), float(gnorm), float(step),
                          float(quality), empty)
        )
    return history


# -------------------------------------------------- quasi-Newton memory

class CurvaturePair:
    """Secant pair; rho caches 1/<y, s> in the metric it was built in."""

    def __init__(self, s, y, rho):
        self.s = np.asarray(s, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.rho = float(rho)

    def __repr__(self):
        return f"CurvaturePair(rho={self.rho:.6e})"


def make_pair(s, y, metric_inner, floor=CURVATURE_FLOOR):
    """Build a secant pair, or None when <y,s> is not safely positive
    relative to ||y|| ||s||."""
    ys = metric_inner(y, s)
    norms = np.sqrt(max(metric_inner(s, s), 0.0) * max(metric_inner(y, y), 0.0))
    if ys <= floor * norms:
        return None
    return CurvaturePair(s, y, 1.0 / ys)


def _reprice_pairs(pairs, metric_inner, floor=CURVATURE_FLOOR):
    """Recompute every pair's rho in the metric of the current iterate.

    The metric moves with the shape, so a rho frozen at creation time
    can destroy positive definiteness of the two-loop estimate a few
    iterates later.  Pairs whose curvature went nonpositive under the
    current metric are dropped.
    """
    kept = []
    for pair in pairs:
        fresh = make_pair(pair.s, pair.y, metric_inner, floor)
        if fresh is not None:
            kept.append(fresh)
    return kept


def lbfgs_two_loop(grad, pairs, metric_inner):
    """Apply the limited-memory inverse-Hessian estimate to a gradient.

    Every inner product runs through metric_inner, so the recursion is
    valid in any inner-product space the caller works in.  With no
    stored pairs the gradient is returned unchanged (a copy); otherwise
    the initial estimate is scaled by <s,y>/<y,y> of the newest pair.
    """
    q = np.array(grad, dtype=float)
    if not pairs:
        return q
    pairs = list(pairs)
    alphas = []
    for pair in reversed(pairs):
        a = pair.rho * metric_inner(pair.s, q)
        alphas.append(a)
        q = q - a * pair.y
    newest = pairs[-1]
    yy = metric_inner(newest.y, newest.y)
    if not yy > 0.0:
        raise ValueError("degenerate pair: <y,y> must be positive")
    q *= 1.0 / (newest.rho * yy)
    for pair, a in zip(pairs, reversed(alphas)):
        b = pair.rho * metric_inner(pair.y, q)
        q += (a - b) * pair.s
    return q


# -------------------------------------------------------- line search

def _trial_geometry(geometry, direction, t):
    """Copy of the geometry moved by t*direction, or None when the move
    tangles the mesh or breaks the interface (self-intersection,
    repeated points)."""
    if isinstance(geometry, DiscreteCurve):
        pts = geometry.points + t * direction
        x, y = pts[:, 0], pts[:, 1]
        # a flipped traversal means the curve passed through collapse;
        # the constructor would silently re-orient it, so refuse here
        if 0.5 * np.sum(x * np.roll(y, -1) - y * np.roll(x, -1)) <= 0.0:
            return None
        try:
            trial = DiscreteCurve(pts)
        except ValueError:
            return None
        report = validate_shape(trial)
        if not (report.injective and report.simple_closed):
            return None
        return trial
    try:
        trial = apply_deformation(geometry, direction, t)
    except MeshTangleError:
        return None
    report = validate_shape(extract_gamma_curve(trial))
    if not (report.injective and report.simple_closed):
        return None
    return trial


def _objective(problem, geometry, warm):
    """J at the geometry; bare callables are evaluated directly, which
    lets the search run against closed-form test objectives."""
    if isinstance(problem, ShapeProblem):
        if problem.needs_mesh:
            state = solve_state_adjoint(problem, geometry, warm=warm, need_adjoint=False)
            return evaluate(problem, geometry, state)
        return evaluate(problem, geometry)
    if callable(problem):
        return float(problem(geometry))
    raise TypeError("problem must be a ShapeProblem or a callable J(geometry)")


def _backtrack(problem, geometry, direction, cfg, warm):
    """Core of the search; returns (step, slope, j0)."""
    direction = np.asarray(direction, dtype=float)
    expected = (
        geometry.points.shape
        if isinstance(geometry, DiscreteCurve)
        else (geometry.n_nodes, 2)
    )
    if direction.shape != expected:
        raise ValueError(f"direction shape {direction.shape} does not match geometry {expected}")

    # measured slope first: central difference at a probe step, shrunk
    # only when the probe geometry itself is invalid
    t_probe = 1e-4 * cfg.step0
    slope = None
    for _ in range(25):
        fwd = _trial_geometry(geometry, direction, t_probe)
        bwd = _trial_geometry(geometry, direction, -t_probe)
        if fwd is not None and bwd is not None:
            slope = (_objective(problem, fwd, warm) - _objective(problem, bwd, warm)) / (
                2.0 * t_probe
            )
            break
        t_probe *= 0.5
    if slope is None:
        raise LineSearchError("slope probe found no valid perturbation in either direction")
    if not slope < 0.0:
        raise LineSearchError(f"not a descent direction: measured slope {slope:.6e} >= 0")

    j0 = _objective(problem, geometry, warm)
    step = cfg.step0
    for _ in range(cfg.max_backtracks + 1):
        trial = _trial_geometry(geometry, direction, step)
        if trial is not None:
            j_trial = _objective(problem, trial, warm)
            if j_trial <= j0 + cfg.armijo_c1 * step * slope:
                return step, slope, j0
        step *= cfg.armijo_rho
    raise LineSearchError(
        f"no acceptable step within {cfg.max_backtracks} backtracks from {cfg.step0:g}"
    )


def armijo_search(problem, geometry, direction, cfg, state=None):
    """Largest backtracked step with sufficient decrease and valid
    geometry.

    The slope along the direction is measured by a central difference
    before anything else; a nonnegative measured slope raises
    LineSearchError without further objective evaluations.  Trial steps
    that tangle the mesh or self-intersect the interface are rejected
    and the search continues down the ladder.
    """
    step, _, _ = _backtrack(problem, geometry, direction, cfg, state)
    return step


# ---------------------------------------------------------- pipelines

def _check_pipeline(problem, mesh, cfg, expected):
    if not isinstance(problem, ShapeProblem):
        raise TypeError("problem must be a ShapeProblem")
    if cfg.pipeline != expected:
        raise ValueError(f"config selects pipeline {cfg.pipeline!r}, not {expected!r}")
    if not hasattr(mesh, "gamma_loop") or len(mesh.gamma_loop) == 0:
        raise ValueError("mesh carries no interface loop to optimize")


def _aligned_gamma_curve(mesh):
    # the curve constructor silently reverses clockwise input, which
    # would break the node pairing with mesh.gamma_loop; refuse that
    curve = extract_gamma_curve(mesh)
    if not np.array_equal(curve.points, mesh.nodes[mesh.gamma_loop]):
        raise RuntimeError("interface loop is no longer counter-clockwise")
    return curve


# refresh the discretization once the worst angle or the interface
# node spacing degrades past these; purely normal boundary motion
# bunches interface nodes wherever the curve retreats, and the bulk
# elements wear out under accumulated deformation
REFRESH_ANGLE = 8.0
REFRESH_SPACING = 0.35
REBUILD_MIN_ANGLE = 5.0


def _mesh_box_and_pitch(mesh):
    """Outer bounding box and grid pitch, recovered from the mesh so a
    refresh can reproduce the original meshing parameters."""
    outer = mesh.nodes[mesh.node_marks == OUTER]
    lo = outer.min(axis=0)
    hi = outer.max(axis=0)
    edges = np.vstack(
        [mesh.triangles[:, [0, 1]], mesh.triangles[:, [1, 2]], mesh.triangles[:, [2, 0]]]
    )
    on_gamma = np.zeros(mesh.n_nodes, dtype=bool)
    on_gamma[mesh.gamma_loop] = True
    keep = ~(on_gamma[edges[:, 0]] | on_gamma[edges[:, 1]])
    vec = mesh.nodes[edges[keep, 0]] - mesh.nodes[edges[keep, 1]]
    pitch = float(np.median(np.hypot(vec[:, 0], vec[:, 1])))
    return (tuple(lo), tuple(hi)), pitch


def _needs_refresh(mesh):
    if mesh_min_angle(mesh) < REFRESH_ANGLE:
        return True
    g = mesh.nodes[mesh.gamma_loop]
    ed = np.hypot(*(np.roll(g, -1, axis=0) - g).T)
    return ed.min() < REFRESH_SPACING * float(np.median(ed))


def _refresh_mesh(mesh, box, pitch):
    """Fresh triangulation around the arc-equidistributed interface.

    Tangential node position is parameterization, not shape: resampling
    moves nodes along the spectral interpolant of the same curve, so the
    geometry is preserved to interpolation accuracy while the spacing
    (and with it the rebuilt element quality) recovers.  Nodal fields on
    either the interface or the bulk do not survive this."""
    curve = resample(extract_gamma_curve(mesh), len(mesh.gamma_loop))
    return generate_annulus_mesh(box, curve, pitch, min_angle=REBUILD_MIN_ANGLE)


def _extension_field(mesh, boundary_motion):
    """Elasticity extension of a prescribed interface displacement:
    zero body force, outer boundary clamped, interface dofs pinned to
    the motion.  Linear in the data, so scaled steps reuse the field."""
    op = assemble_elasticity(mesh, mu=stiffened_mu(mesh))
    gamma = mesh.gamma_loop
    gamma_dofs = np.concatenate([2 * gamma, 2 * gamma + 1])
    pinned = SparseSpdOperator(op.matrix, np.concatenate([op.constrained, gamma_dofs]))
    values = np.zeros(op.dimension)
    values[2 * gamma] = boundary_motion[:, 0]
    values[2 * gamma + 1] = boundary_motion[:, 1]
    x = solve_spd(pinned, np.zeros(op.dimension), values=values, jacobi=True)
    return x.reshape(-1, 2)


def run_sobolev_pipeline(problem, mesh, cfg):
    """Descend J with gradients smoothed on the interface curve.

    Per iterate: surface density -> boundary-metric solve for the
    normal coefficient -> optional quasi-Newton transform in that
    metric -> backtracking along the normal motion -> one elasticity
    extension carries the accepted motion into the mesh.  For
    objectives that only see the curve, trial steps are priced
    spectrally and the extension runs once, after acceptance.

    Returns (final mesh, history); history.status reports why the loop
    stopped (converged, max_iter, line_search_failure, quality_abort).
    """
    _check_pipeline(problem, mesh, cfg, "sobolev_surface")
    params = SobolevParams(A=cfg.sobolev_weight)
    box, pitch = _mesh_box_and_pitch(mesh)
    use_memory = cfg.method == "lbfgs"
    pairs = []
    history = History()
    mesh_cur = mesh
    state = None
    prev_q = None
    pending_s = None
    cum_move = 0.0
    threshold = None

    for it in range(cfg.max_iter + 1):
        if _needs_refresh(mesh_cur):
            try:
                mesh_cur = _refresh_mesh(mesh_cur, box, pitch)
                state = None
                pairs = []
                pending_s = None
                prev_q = None
                cum_move = 0.0
            except MeshingError:
                pass  # keep the worn mesh; the floor check decides below
        curve = _aligned_gamma_curve(mesh_cur)
        quality = mesh_min_angle(mesh_cur)
        if problem.needs_mesh:
            state = solve_state_adjoint(problem, mesh_cur, warm=state)
            geom_j = mesh_cur
        else:
            state = None
            geom_j = curve
        j_cur = evaluate(problem, geom_j, state)
        r = surface_density(problem, geom_j, state)
        q = solve_L1(r, curve, params)
        gnorm = float(np.sqrt(max(sobolev_inner(q, q, curve, params), 0.0)))

        def inner(a, b, c=curve):
            return sobolev_inner(a, b, c, params)

        if use_memory:
            pairs = _reprice_pairs(pairs, inner)
            if pending_s is not None:
                pair = make_pair(pending_s, q - prev_q, inner)
                if pair is not None:
                    pairs.append(pair)
                    if len(pairs) > cfg.memory:
                        pairs.pop(0)
                pending_s = None

        if threshold is None:
            # relative to the first iterate, with an absolute floor so a
            # stationary start converges immediately
            threshold = cfg.grad_tol * max(gnorm, 1.0)
        if gnorm <= threshold:
            history.append(IterateRecord(it, j_cur, gnorm, 0.0, quality, curve.points))
            history.status = "converged"
            history.message = f"gradient norm {gnorm:.3e} at or below threshold {threshold:.3e}"
            break
        if quality < cfg.quality_floor:
            history.append(IterateRecord(it, j_cur, gnorm, 0.0, quality, curve.points))
            history.status = "quality_abort"
            history.message = (
                f"mesh min angle {quality:.3f} deg fell below floor {cfg.quality_floor:g}"
            )
            break
        if it == cfg.max_iter:
            history.append(IterateRecord(it, j_cur, gnorm, 0.0, quality, curve.points))
            history.status = "max_iter"
            history.message = f"iteration budget {cfg.max_iter} exhausted"
            break

        def attempt(dd):
            _, normals = unit_tangent_normal(curve)
            motion = -dd[:, None] * normals
            ext = _extension_field(mesh_cur, motion)
            if problem.needs_mesh:
                st, _, _ = _backtrack(problem, mesh_cur, ext, cfg, state)
                return st, apply_deformation(mesh_cur, ext, st), dd
            st, slope, j0 = _backtrack(problem, curve, motion, cfg, None)
            try:
                return st, apply_deformation(mesh_cur, ext, st), dd
            except MeshTangleError:
                pass
            # the curve accepted the step but the bulk extension tangles;
            # walk further down the same ladder, each candidate
            # revalidated against the curve first
            for _ in range(cfg.max_backtracks):
                st *= cfg.armijo_rho
                trial = _trial_geometry(curve, motion, st)
                if trial is None:
                    continue
                if _objective(problem, trial, None) > j0 + cfg.armijo_c1 * st * slope:
                    raise LineSearchError(
                        "no mesh-admissible step keeps sufficient decrease"
                    )
                try:
                    return st, apply_deformation(mesh_cur, ext, st), dd
                except MeshTangleError:
                    continue
            raise LineSearchError("bulk extension tangles the mesh at every step tried")

        try:
            if use_memory and pairs:
                try:
                    step, new_mesh, d = attempt(lbfgs_two_loop(q, pairs, inner))
                except LineSearchError:
                    # stale memory can propose a non-descent direction;
                    # drop it and retry once with the plain gradient
                    pairs = []
                    pending_s = None
                    cum_move = 0.0
                    step, new_mesh, d = attempt(q)
            else:
                step, new_mesh, d = attempt(q)
        except LineSearchError as err:
            history.append(IterateRecord(it, j_cur, gnorm, 0.0, quality, curve.points))
            history.status = "line_search_failure"
            history.message = str(err)
            break

        if use_memory:
            pending_s = -step * d
            prev_q = q
            cum_move += step * float(np.max(np.abs(d)))
        history.append(IterateRecord(it, j_cur, gnorm, step, quality, curve.points))
        mesh_cur = new_mesh
        if use_memory and cum_move > 0.1 * spectral_length(_aligned_gamma_curve(mesh_cur)):
            pairs.clear()
            pending_s = None
            cum_move = 0.0

    return mesh_cur, history


def run_steklov_pipeline(problem, mesh, cfg):
    """Descend J by moving the mesh along its deformation field.

    Per iterate: state and adjoint (when the objective needs them) ->
    assembled force with off-interface entries zeroed -> stiffened
    elasticity solve; the solved field is the gradient (its energy norm
    prices it) and, negated, the search direction.  Quasi-Newton memory
    transforms the field in the deformation-energy inner product,
    matching dofs node-by-node across iterates.

    Returns (final mesh, history) with the same status vocabulary as
    the boundary-metric pipeline.
    """
    _check_pipeline(problem, mesh, cfg, "steklov_volume")
    box, pitch = _mesh_box_and_pitch(mesh)
    use_memory = cfg.method == "lbfgs"
    pairs = []
    history = History()
    mesh_cur = mesh
    state = None
    prev_u = None
    pending_s = None
    cum_move = 0.0
    threshold = None

    for it in range(cfg.max_iter + 1):
        if _needs_refresh(mesh_cur):
            try:
                mesh_cur = _refresh_mesh(mesh_cur, box, pitch)
                # nodal dofs do not survive a rebuild: drop state and memory
                state = None
                pairs = []
                pending_s = None
                prev_u = None
                cum_move = 0.0
            except MeshingError:
                pass  # keep the worn mesh; the floor check decides below
        curve = _aligned_gamma_curve(mesh_cur)
        quality = mesh_min_angle(mesh_cur)
        if problem.needs_mesh:
            state = solve_state_adjoint(problem, mesh_cur, warm=state)
        else:
            state = None
        j_cur = evaluate(problem, mesh_cur, state)
        system = make_deformation_system(mesh_cur, problem, state=state)
        u_field, _ = solve_deformation(system)
        u = u_field.reshape(-1)

        def inner(a, b, op=system.operator):
            return steklov_inner(a, b, op)

        gnorm = float(np.sqrt(max(inner(u, u), 0.0)))

        if use_memory:
            pairs = _reprice_pairs(pairs, inner)
            if pending_s is not None:
                pair = make_pair(pending_s, u - prev_u, inner)
                if pair is not None:
                    pairs.append(pair)
                    if len(pairs) > cfg.memory:
                        pairs.pop(0)
                pending_s = None

        if threshold is None:
            # relative to the first iterate, with an absolute floor so a
            # stationary start converges immediately
            threshold = cfg.grad_tol * max(gnorm, 1.0)
        if gnorm <= threshold:
            history.append(IterateRecord(it, j_cur, gnorm, 0.0, quality, curve.points))
            history.status = "converged"
            history.message = f"gradient norm {gnorm:.3e} at or below threshold {threshold:.3e}"
            break
        if quality < cfg.quality_floor:
            history.append(IterateRecord(it, j_cur, gnorm, 0.0, quality, curve.points))
            history.status = "quality_abort"
            history.message = (
                f"mesh min angle {quality:.3f} deg fell below floor {cfg.quality_floor:g}"
            )
            break
        if it == cfg.max_iter:
            history.append(IterateRecord(it, j_cur, gnorm, 0.0, quality, curve.points))
            history.status = "max_iter"
            history.message = f"iteration budget {cfg.max_iter} exhausted"
            break

        def attempt(dd):
            direction = -dd.reshape(-1, 2)
            st, _, _ = _backtrack(problem, mesh_cur, direction, cfg, state)
            return st, apply_deformation(mesh_cur, direction, st), dd

        try:
            if use_memory and pairs:
                try:
                    step, new_mesh, d = attempt(lbfgs_two_loop(u, pairs, inner))
                except LineSearchError:
                    # stale memory can propose a non-descent direction;
                    # drop it and retry once with the plain gradient
                    pairs = []
                    pending_s = None
                    cum_move = 0.0
                    step, new_mesh, d = attempt(u)
            else:
                step, new_mesh, d = attempt(u)
        except LineSearchError as err:
            history.append(IterateRecord(it, j_cur, gnorm, 0.0, quality, curve.points))
            history.status = "line_search_failure"
            history.message = str(err)
            break

        if use_memory:
            pending_s = -step * d
            prev_u = u
            gamma_move = np.linalg.norm(d.reshape(-1, 2)[mesh_cur.gamma_loop], axis=1)
            cum_move += step * float(np.max(gamma_move))
        history.append(IterateRecord(it, j_cur, gnorm, step, quality, curve.points))
        mesh_cur = new_mesh
        if use_memory:
            boundary_len = polygon_length(mesh_cur.nodes[mesh_cur.gamma_loop])
            if cum_move > 0.1 * boundary_len:
                pairs.clear()
                pending_s = None
                cum_move = 0.0

    return mesh_cur, history
