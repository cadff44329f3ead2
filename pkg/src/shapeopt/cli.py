"""Batch driver for shape optimization experiments.

Subcommands: `run` executes a configured pipeline and exports its
convergence log and geometry; `check-derivative` cross-checks the three
derivative routes on the configured problem; `validate` reports the
shape predicates of a curve file; `mesh-info` reports what the mesher
would build.  Everything is file-in, file-out: no interaction, no
global state, identical inputs give identical outputs.
"""

import argparse
import os
import sys
import time

import numpy as np

from .config import ConfigError, parse_config
from .curves import read_curve, unit_tangent_normal, write_curve, DiscreteCurve
from .fem import (
    P1Interpolant,
    extract_gamma_curve,
    generate_annulus_mesh,
    mesh_min_angle,
    write_mesh,
    write_vtk,
)
from .functionals import (
    ShapeProblem,
    eulerian_derivative_fd,
    polygon_area,
    polygon_length,
    solve_state_adjoint,
    surface_density,
    volume_derivative,
)
from .optimize import (
    OptimizerConfig,
    run_sobolev_pipeline,
    run_steklov_pipeline,
    write_history,
)
from .sobolev import l2_inner
from .validate import hausdorff_distance, shapes_equivalent, validate_shape

# exit codes of `run`: converged / anything else / iteration budget
EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MAX_ITER = 2


def _build_mesh(rc):
    curve = read_curve(rc.resolve("mesh.curve"))
    return generate_annulus_mesh(rc["mesh.box"], curve, rc["mesh.h"])


def _build_problem(rc):
    kind = rc["problem.kind"]
    target = None
    target_path = rc.resolve("problem.target_curve")
    if target_path:
        if kind != "poisson_tracking":
            raise ConfigError("problem.target_curve only applies to poisson_tracking")
        # inverse-crime synthesis: solve the state once around the target
        # interface and track its interpolant
        tcurve = read_curve(target_path)
        tmesh = generate_annulus_mesh(rc["mesh.box"], tcurve, rc["mesh.h"])
        gen = ShapeProblem(
            "poisson_tracking",
            sigma_in=rc["problem.sigma_in"],
            sigma_out=rc["problem.sigma_out"],
            source=rc["problem.source"],
        )
        tstate = solve_state_adjoint(gen, tmesh, need_adjoint=False)
        target = P1Interpolant(tmesh, tstate.y)
    elif kind == "poisson_tracking":
        raise ConfigError("poisson_tracking needs problem.target_curve")
    return ShapeProblem(
        kind,
        a_star=rc["problem.a_star"],
        nu=rc["problem.nu"],
        sigma_in=rc["problem.sigma_in"],
        sigma_out=rc["problem.sigma_out"],
        source=rc["problem.source"],
        target=target,
    )


def _build_optimizer(rc):
    return OptimizerConfig(
        pipeline=rc["optimizer.pipeline"],
        method=rc["optimizer.method"],
        memory=rc["optimizer.memory"],
        max_iter=rc["optimizer.max_iter"],
        grad_tol=rc["optimizer.grad_tol"],
        armijo_c1=rc["optimizer.armijo_c1"],
        armijo_rho=rc["optimizer.armijo_rho"],
        step0=rc["optimizer.step0"],
        max_backtracks=rc["optimizer.max_backtracks"],
        sobolev_weight=rc["optimizer.sobolev_weight"],
        quality_floor=rc["optimizer.quality_floor"],
    )


def _write_svg(path, points):
    """Single closed polyline as a self-contained SVG document."""
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    pad = 0.05 * max(hi[0] - lo[0], hi[1] - lo[1], 1e-9)
    x0, y0 = lo - pad
    w, h = (hi - lo) + 2.0 * pad
    # flip y so the drawing is not mirrored
    coords = " ".join(f"{p[0]:.6g},{y0 + h - (p[1] - y0):.6g}" for p in points)
    with open(path, "w") as fh:
        fh.write(
            f'<svg xmlns="http://www.w3.org/2000/svg" '
            f'viewBox="{x0:.6g} {y0:.6g} {w:.6g} {h:.6g}">\n'
            f'<polygon points="{coords}" fill="none" stroke="black" '
            f'stroke-width="{0.004 * max(w, h):.6g}"/>\n</svg>\n'
        )


def cmd_run(args):
    rc = parse_config(args.config)
    if args.seed is not None:
        rc.values["run.seed"] = args.seed
    out_dir = (
        os.path.abspath(args.output) if args.output else rc.resolve("output.dir")
    )

    mesh = _build_mesh(rc)
    problem = _build_problem(rc)
    cfg = _build_optimizer(rc)
    print(
        f"{cfg.pipeline} / {cfg.method}(m={cfg.memory}) on {problem.kind}: "
        f"{mesh.n_nodes} nodes, {mesh.n_triangles} triangles, "
        f"min angle {mesh_min_angle(mesh):.2f} deg"
    )
    if args.dry_run:
        print("dry run: config and mesh generation OK, nothing written")
        return EXIT_OK

    runner = run_sobolev_pipeline if cfg.pipeline == "sobolev_surface" else run_steklov_pipeline
    t0 = time.perf_counter()
    final_mesh, history = runner(problem, mesh, cfg)
    wall = time.perf_counter() - t0

    os.makedirs(out_dir, exist_ok=True)
    write_history(os.path.join(out_dir, "history.csv"), history)
    every = rc["output.snapshot_every"]
    last = history.final.iteration
    for rec in history:
        if (every > 0 and rec.iteration % every == 0) or rec.iteration == last:
            write_curve(
                os.path.join(out_dir, f"curve_{rec.iteration:04d}.txt"),
                DiscreteCurve(rec.curve_points),
            )
    write_vtk(os.path.join(out_dir, "final.vtk"), final_mesh)
    write_mesh(os.path.join(out_dir, "final.msh"), final_mesh)
    if rc["output.svg"]:
        _write_svg(os.path.join(out_dir, "final.svg"), history.final.curve_points)
    fin = history.final
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write(f"status: {history.status}\n")
        fh.write(f"message: {history.message}\n")
        fh.write(f"iterations: {fin.iteration}\n")
        fh.write(f"final_J: {fin.value:.17g}\n")
        fh.write(f"final_grad_norm: {fin.grad_norm:.17g}\n")
        fh.write(f"wall_time_s: {wall:.3f}\n")
        fh.write(f"seed: {rc['run.seed']}\n")

    print(
        f"{history.status} after iteration {fin.iteration}: J {fin.value:.6e}, "
        f"grad norm {fin.grad_norm:.3e}, {wall:.1f}s -> {out_dir}"
    )
    if history.status == "converged":
        return EXIT_OK
    if history.status == "max_iter":
        return EXIT_MAX_ITER
    print(f"run did not converge: {history.message}", file=sys.stderr)
    return EXIT_ERROR


def _random_smooth_fields(rng, pts, count):
    """Deterministic battery of smooth global velocity fields."""
    x, y = pts[:, 0], pts[:, 1]
    basis = np.stack(
        [np.ones_like(x), x, y, np.sin(x), np.cos(y), np.sin(y) * np.cos(x)],
        axis=1,
    )
    fields = []
    for _ in range(count):
        coef = rng.normal(size=(basis.shape[1], 2))
        fields.append(basis @ coef)
    return fields


def cmd_check_derivative(args):
    rc = parse_config(args.config)
    seed = args.seed if args.seed is not None else rc["run.seed"]
    tol = rc["check.tolerance"]
    mesh = _build_mesh(rc)
    problem = _build_problem(rc)
    curve = extract_gamma_curve(mesh)
    _, normals = unit_tangent_normal(curve)

    state = solve_state_adjoint(problem, mesh) if problem.needs_mesh else None
    density = surface_density(problem, mesh if problem.needs_mesh else curve, state)

    rng = np.random.default_rng(seed)
    print(f"{problem.kind}: volume vs surface vs finite-difference, seed {seed}")
    print(f"{'field':>5} {'volume':>14} {'surface':>14} {'fd':>14} {'rel disc':>10} {'fd order':>9}")
    worst = 0.0
    for i, v in enumerate(_random_smooth_fields(rng, mesh.nodes, rc["check.fields"])):
        dv = volume_derivative(problem, mesh, v, state=state)
        alpha = np.einsum("id,id->i", v[mesh.gamma_loop], normals)
        sf = l2_inner(density, alpha, curve)
        fd = eulerian_derivative_fd(problem, mesh, v)
        scale = max(abs(dv), abs(sf), abs(fd.value), 1e-14)
        disc = max(abs(dv - sf), abs(dv - fd.value), abs(sf - fd.value)) / scale
        worst = max(worst, disc)
        print(f"{i:>5} {dv:>14.6e} {sf:>14.6e} {fd.value:>14.6e} {disc:>10.2e} {fd.order:>9.2f}")

    # Hadamard row: a purely tangential interface field must not move J
    theta = np.arctan2(curve.points[:, 1], curve.points[:, 0])
    tangents, _ = unit_tangent_normal(curve)
    v_tan = np.zeros_like(mesh.nodes)
    v_tan[mesh.gamma_loop] = (0.5 + 0.3 * np.sin(3.0 * theta))[:, None] * tangents
    tan_norm = float(np.sqrt(l2_inner(v_tan[mesh.gamma_loop], v_tan[mesh.gamma_loop], curve)))
    fd_tan = eulerian_derivative_fd(problem, mesh, v_tan)
    tan_ok = abs(fd_tan.value) <= 1e-5 * tan_norm
    print(f"tangential field: |fd| {abs(fd_tan.value):.3e} vs 1e-5*||V|| {1e-5 * tan_norm:.3e}")

    ok = worst <= tol and tan_ok
    print(f"worst relative discrepancy {worst:.3e} (tolerance {tol:g}): "
          f"{'OK' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_ERROR


def cmd_validate(args):
    c = read_curve(args.curve)
    report = validate_shape(c)
    print(report.as_text())
    if args.other is not None:
        other = read_curve(args.other)
        report2 = validate_shape(other)
        print(f"second curve: injective={report2.injective} "
              f"simple_closed={report2.simple_closed}")
        hd = hausdorff_distance(c, other)
        print(f"hausdorff distance: {hd:.12g}")
        if args.equiv is not None:
            same = shapes_equivalent(c, other, tol=args.equiv)
            print(f"equivalent at tol {args.equiv:g}: {'yes' if same else 'no'}")
        if not (report2.injective and report2.simple_closed):
            return EXIT_ERROR
    return EXIT_OK if (report.injective and report.simple_closed) else EXIT_ERROR


def cmd_mesh_info(args):
    rc = parse_config(args.config)
    mesh = _build_mesh(rc)
    gamma_pts = mesh.nodes[mesh.gamma_loop]
    (x0, y0), (x1, y1) = rc["mesh.box"]
    print(f"box: [{x0:g}, {x1:g}] x [{y0:g}, {y1:g}], target h {rc['mesh.h']:g}")
    print(f"nodes: {mesh.n_nodes}")
    print(f"triangles: {mesh.n_triangles}")
    print(f"min angle: {mesh_min_angle(mesh):.3f} deg")
    print(f"interface nodes: {len(mesh.gamma_loop)}")
    print(f"interface length: {polygon_length(gamma_pts):.12g}")
    print(f"interface area: {polygon_area(gamma_pts):.12g}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="shapeopt",
        description="Gradient descent on planar shapes with PDE-driven objectives.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a configured optimization run")
    p_run.add_argument("config")
    p_run.add_argument("--output", help="override output.dir from the config")
    p_run.add_argument("--seed", type=int, help="override run.seed from the config")
    p_run.add_argument("--dry-run", action="store_true",
                       help="validate config and mesh generation, write nothing")
    p_run.set_defaults(func=cmd_run)

    p_chk = sub.add_parser(
        "check-derivative",
        help="compare volume, surface, and finite-difference derivatives",
    )
    p_chk.add_argument("config")
    p_chk.add_argument("--seed", type=int, help="override run.seed for the test fields")
    p_chk.set_defaults(func=cmd_check_derivative)

    p_val = sub.add_parser("validate", help="shape predicates of a curve file")
    p_val.add_argument("curve")
    p_val.add_argument("other", nargs="?", default=None,
                       help="second curve: report the Hausdorff distance to it")
    p_val.add_argument("--equiv", type=float, default=None, metavar="TOL",
                       help="with a second curve, report equivalence at this tolerance")
    p_val.set_defaults(func=cmd_validate)

    p_info = sub.add_parser("mesh-info", help="report the mesh a config would build")
    p_info.add_argument("config")
    p_info.set_defaults(func=cmd_mesh_info)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as err:  # batch driver: report, do not traceback
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
