"""Acceptance battery: one test per shipped guarantee.

Each test evaluates a single user-facing guarantee at the tolerance the
README publishes and appends a PASS/FAIL line to the table that
conftest prints at the end of the run.  The two end-to-end benchmarks
live here rather than in the module tests because they take tens of
seconds; everything else is a tightened, self-contained restatement of
properties the module tests probe piecewise.

The product-rule guarantee is currently red.  The residual is not
noise: it equals the measure-variation term (A/2) * sum(D_s w *
D_s<h,k>) ds to quadrature accuracy, which no pair of connection terms
linear in h and k separately can absorb for non-constant stretch rate
w.  The test asserts the guarantee as stated and fails, with the
measured residual and its closed-form identification in the message.
"""

import subprocess
import sys
import time

import numpy as np
from numpy.random import default_rng

from conftest import (
    ACCEPTANCE_RESULTS,
    band_limited_scalar,
    band_limited_vector,
    circle,
    ellipse,
    random_smooth_curve,
)

from shapeopt.curves import (
    DiscreteCurve,
    arc_length_derivative,
    arc_length_measure,
    resample,
    unit_tangent_normal,
    write_curve,
)
from shapeopt.fem import (
    GAMMA,
    P1Interpolant,
    extract_gamma_curve,
    generate_annulus_mesh,
)
from shapeopt.functionals import (
    AnalyticTarget,
    ShapeProblem,
    eulerian_derivative_fd,
    solve_state_adjoint,
    spectral_area,
    surface_density,
    tracking_misfit,
    volume_derivative,
)
from shapeopt.optimize import (
    OptimizerConfig,
    lbfgs_two_loop,
    make_pair,
    run_sobolev_pipeline,
    run_steklov_pipeline,
)
from shapeopt.sobolev import (
    SobolevParams,
    covariant_derivative,
    l2_inner,
    metric_directional_derivative,
    sobolev_inner,
    solve_L1,
)
from shapeopt.steklov import (
    assemble_rhs,
    make_deformation_system,
    solve_deformation,
    steklov_inner,
)
from shapeopt.validate import (
    fit_circle,
    hausdorff_distance,
    injective_bruteforce,
    shapes_equivalent,
    validate_shape,
)

SMALL_BOX = ((-2.0, -2.0), (2.0, 2.0))
BENCH_BOX = ((-3.0, -3.0), (3.0, 3.0))


def record(name, ok, detail):
    """Append one summary line, then enforce it."""
    ACCEPTANCE_RESULTS.append((name, bool(ok), detail))
    assert ok, f"{name}: {detail}"


def analytic_target():
    return AnalyticTarget(
        lambda p: 0.1 * np.sin(p[:, 0]) * p[:, 1] + 0.05,
        lambda p: np.stack(
            [0.1 * np.cos(p[:, 0]) * p[:, 1], 0.1 * np.sin(p[:, 0])], axis=1
        ),
    )


def smooth_field(nodes):
    x, y = nodes[:, 0], nodes[:, 1]
    v = np.stack(
        [np.sin(0.7 * x + 0.3) * np.cos(0.5 * y), np.cos(0.6 * x) * np.sin(0.8 * y + 0.1)],
        axis=1,
    )
    cut = np.clip(1.0 - (np.maximum(np.abs(x), np.abs(y)) / 2.0) ** 2, 0.0, 1.0)
    return v * cut[:, None] ** 2


def shipped_problems():
    return [
        ShapeProblem("perimeter"),
        ShapeProblem("area_mismatch", a_star=2.0, nu=1e-3),
        ShapeProblem(
            "poisson_tracking", nu=1e-3, sigma_in=1.0, sigma_out=2.0, source=1.0,
            target=analytic_target(),
        ),
    ]


def test_01_metric_derivative_product_rule():
    # 50 band-limited curve/field triples at N=128; the derivative of
    # the metric must match the connection pairing within 1e-6 of the
    # norm product, measured with both the closed form and an
    # independent central difference as the left side
    t0 = time.perf_counter()
    params = SobolevParams(0.1)
    rng = default_rng(101)
    n = 128
    worst_closed = worst_fd = 0.0
    routes_agree = gap_identified = 0.0
    for _ in range(50):
        c = random_smooth_curve(rng, n, modes=8)
        h = band_limited_vector(rng, n, modes=8)
        k = band_limited_vector(rng, n, modes=8)
        m = band_limited_vector(rng, n, modes=8)

        closed = metric_directional_derivative(h, k, m, c, params)

        def central(t):
            gp = sobolev_inner(h, k, DiscreteCurve(c.points + t * m), params)
            gm = sobolev_inner(h, k, DiscreteCurve(c.points - t * m), params)
            return (gp - gm) / (2.0 * t)

        fd = (4.0 * central(5e-5) - central(1e-4)) / 3.0

        rhs = sobolev_inner(covariant_derivative(m, h, c, params), k, c, params)
        rhs += sobolev_inner(h, covariant_derivative(m, k, c, params), c, params)

        scale = (
            np.sqrt(sobolev_inner(h, h, c, params))
            * np.sqrt(sobolev_inner(k, k, c, params))
            * np.sqrt(sobolev_inner(m, m, c, params))
        )
        worst_closed = max(worst_closed, abs(closed - rhs) / scale)
        worst_fd = max(worst_fd, abs(fd - rhs) / scale)
        routes_agree = max(routes_agree, abs(closed - fd) / scale)

        # identify the residual: it is exactly the variation of the
        # D_s quadrature that the connection does not carry
        v, _ = unit_tangent_normal(c)
        w = np.sum(arc_length_derivative(m, c) * v, axis=1)
        hk = np.sum(h * k, axis=1)
        speed, _ = arc_length_measure(c)
        ds = speed * (2.0 * np.pi / n)
        gap = 0.5 * params.A * float(
            np.sum(arc_length_derivative(w, c) * arc_length_derivative(hk, c) * ds)
        )
        gap_identified = max(gap_identified, abs(closed - rhs - gap) / scale)

    dt = time.perf_counter() - t0
    assert routes_agree <= 1e-6, "closed form and finite difference disagree"
    assert gap_identified <= 1e-4, "residual is not the measure-variation term"
    ok = worst_closed <= 1e-6 and worst_fd <= 1e-6 and dt < 10.0
    record(
        "product rule of the metric derivative",
        ok,
        f"worst residual {worst_closed:.2e} (closed) / {worst_fd:.2e} (FD) vs 1e-6; "
        f"the two left sides agree to {routes_agree:.1e} and the residual equals "
        f"(A/2)*sum(D_s w * D_s<h,k>) ds to {gap_identified:.1e}, so the connection "
        f"pair cannot close it for non-constant stretch rate; {dt:.1f}s",
    )


def test_02_gradient_solver_oracle_and_riesz():
    # on circles the solver must scale Fourier mode k by
    # 1/(1 + A k^2/R^2) to 1e-10; on wobbly curves the solution must
    # satisfy the Riesz identity against 50 random test coefficients
    t0 = time.perf_counter()
    n = 128
    worst_mode = 0.0
    params = SobolevParams(0.3)
    th = 2.0 * np.pi * np.arange(n) / n
    for radius in (0.5, 1.0, 2.0):
        c = circle(n, radius=radius)
        for k in range(0, 11):
            for r in (np.cos(k * th), np.sin(k * th)) if k else (np.ones(n),):
                q = solve_L1(r, c, params)
                expect = r / (1.0 + params.A * k * k / radius**2)
                worst_mode = max(worst_mode, float(np.max(np.abs(q - expect))))

    rng = default_rng(202)
    params = SobolevParams(0.1)
    c = random_smooth_curve(rng, n, modes=8)
    r = band_limited_scalar(rng, n, modes=8)
    q = solve_L1(r, c, params)
    worst_riesz = 0.0
    for _ in range(50):
        phi = band_limited_scalar(rng, n, modes=10)
        lhs = sobolev_inner(q, phi, c, params)
        rhs = l2_inner(r, phi, c)
        scale = float(np.linalg.norm(r) * np.linalg.norm(phi))
        worst_riesz = max(worst_riesz, abs(lhs - rhs) / scale)

    dt = time.perf_counter() - t0
    ok = worst_mode <= 1e-10 and worst_riesz <= 1e-8
    record(
        "gradient solve: spectral oracle and Riesz identity",
        ok,
        f"worst per-mode error {worst_mode:.2e} vs 1e-10; "
        f"worst Riesz residual {worst_riesz:.2e} vs 1e-8; {dt:.1f}s",
    )


def test_03_derivative_routes_agree_under_refinement():
    # volume form, surface form, and the FD referee on the unit-circle
    # configuration at three mesh sizes: pairwise within 1e-3 at the
    # finest level, disagreement shrinking at first order or better
    t0 = time.perf_counter()
    levels = [(64, 0.1), (128, 0.05), (256, 0.025)]
    finest = {}
    orders = {}
    for prob in shipped_problems():
        discs = []
        for n, h in levels:
            mesh = generate_annulus_mesh(SMALL_BOX, circle(n), h)
            v = smooth_field(mesh.nodes)
            state = solve_state_adjoint(prob, mesh) if prob.needs_mesh else None
            dv = volume_derivative(prob, mesh, v, state=state)
            curve = extract_gamma_curve(mesh)
            dens = surface_density(prob, mesh)
            _, nrm = unit_tangent_normal(curve)
            sf = l2_inner(dens, np.einsum("id,id->i", v[mesh.gamma_loop], nrm), curve)
            fd = eulerian_derivative_fd(prob, mesh, v).value
            ref = max(abs(dv), abs(sf), abs(fd))
            discs.append(
                max(abs(dv - sf), abs(dv - fd), abs(sf - fd)) / ref
            )
        finest[prob.kind] = discs[-1]
        orders[prob.kind] = float(np.log2(discs[0] / discs[-1]) / (len(discs) - 1))

    dt = time.perf_counter() - t0
    ok = (
        max(finest.values()) <= 1e-3
        and min(orders.values()) >= 1.0
        and dt < 120.0
    )
    record(
        "volume, surface, and FD derivatives agree",
        ok,
        f"finest-level pairwise disagreement {max(finest.values()):.2e} vs 1e-3; "
        f"observed order {min(orders.values()):.2f} vs 1; {dt:.0f}s",
    )


def test_04_tangential_fields_are_invisible():
    # Hadamard structure: a velocity tangent to the interface changes
    # nothing, so the FD derivative must vanish below 1e-5 * ||V||
    t0 = time.perf_counter()
    mesh = generate_annulus_mesh(SMALL_BOX, circle(128), 0.05)
    curve = extract_gamma_curve(mesh)
    tau, _ = unit_tangent_normal(curve)
    theta = np.arctan2(curve.points[:, 1], curve.points[:, 0])
    amp = 0.5 + 0.3 * np.sin(3.0 * theta)
    v = np.zeros_like(mesh.nodes)
    v[mesh.gamma_loop] = amp[:, None] * tau
    norm = float(np.sqrt(l2_inner(v[mesh.gamma_loop], v[mesh.gamma_loop], curve)))

    worst = 0.0
    for prob in shipped_problems():
        fd = eulerian_derivative_fd(prob, mesh, v)
        worst = max(worst, abs(fd.value) / norm)

    # same statement in the curve world for the mesh-free functionals
    c = circle(128)
    tau_c, _ = unit_tangent_normal(c)
    th = 2.0 * np.pi * np.arange(128) / 128.0
    vc = (0.5 + 0.3 * np.sin(3.0 * th))[:, None] * tau_c
    norm_c = float(np.sqrt(l2_inner(vc, vc, c)))
    for prob in (ShapeProblem("perimeter"), ShapeProblem("area_mismatch", a_star=0.0)):
        fd = eulerian_derivative_fd(prob, c, vc)
        worst = max(worst, abs(fd.value) / norm_c)

    dt = time.perf_counter() - t0
    ok = worst <= 1e-5
    record(
        "tangential motion leaves every functional flat",
        ok,
        f"worst |FD|/||V|| {worst:.2e} vs 1e-5 over all shipped functionals; {dt:.0f}s",
    )


def test_05_deformation_identity_support_descent():
    # the assembled deformation solve: a(U,V)=b(V) against 20 random
    # admissible fields at solver accuracy, force entries bitwise zero
    # away from the interface, and -U a genuine descent direction
    t0 = time.perf_counter()
    mesh = generate_annulus_mesh(SMALL_BOX, circle(64), 0.1)
    rng = default_rng(5)

    prob = ShapeProblem("area_mismatch", a_star=2.0, nu=1e-3)
    sysm = make_deformation_system(mesh, prob)
    u, _ = solve_deformation(sysm, tol=1e-10)
    rhs_norm = float(np.linalg.norm(sysm.rhs))
    worst_identity = 0.0
    for _ in range(20):
        v = rng.normal(size=2 * mesh.n_nodes)
        v[sysm.operator.constrained] = 0.0
        lhs = steklov_inner(u, v.reshape(-1, 2), sysm.operator)
        rhs_v = float(sysm.rhs @ v)
        worst_identity = max(
            worst_identity, abs(lhs - rhs_v) / (rhs_norm * float(np.linalg.norm(v)))
        )

    # support rule: interface-adjacent nodes only, bitwise
    adjacent = np.zeros(mesh.n_nodes, dtype=bool)
    for tri in mesh.triangles:
        if any(mesh.node_marks[vtx] == GAMMA for vtx in tri):
            adjacent[list(tri)] = True
    support_ok = True
    for prob_s in shipped_problems():
        state = solve_state_adjoint(prob_s, mesh) if prob_s.needs_mesh else None
        force = assemble_rhs(mesh, prob_s, state=state)
        support_ok &= bool(np.all(force[np.repeat(~adjacent, 2)] == 0.0))
        support_ok &= bool(np.any(force != 0.0))

    slopes = []
    for prob_d in shipped_problems():
        state = solve_state_adjoint(prob_d, mesh) if prob_d.needs_mesh else None
        sys_d = make_deformation_system(mesh, prob_d, state=state)
        u_d, _ = solve_deformation(sys_d)
        slopes.append(eulerian_derivative_fd(prob_d, mesh, -u_d).value)

    dt = time.perf_counter() - t0
    ok = worst_identity <= 1e-10 and support_ok and all(s < 0.0 for s in slopes)
    record(
        "deformation solve: identity, support, descent",
        ok,
        f"worst |a(U,V)-b(V)|/(||b|| ||V||) {worst_identity:.2e} vs 1e-10; "
        f"off-interface force bitwise zero: {support_ok}; "
        f"FD slope along -U negative on all problems "
        f"(max {max(slopes):.2e}); {dt:.0f}s",
    )


def _best_fit_circle_distance(curve):
    center, radius = fit_circle(curve.points)
    t = 2.0 * np.pi * np.arange(512) / 512
    ref = DiscreteCurve(
        np.column_stack([center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)])
    )
    return hausdorff_distance(curve, ref)


def test_06_area_benchmark_circularizes():
    # surface-form pipeline from the (2,1)-ellipse to the area-pi disc:
    # converged within 200 iterations, area within 1e-3 of pi in the
    # quadrature the objective itself uses, Hausdorff distance to the
    # best-fit circle within twice the mesh size, J monotone
    t0 = time.perf_counter()
    h = 0.1
    mesh = generate_annulus_mesh(BENCH_BOX, ellipse(128, 2.0, 1.0), h)
    prob = ShapeProblem("area_mismatch", a_star=np.pi, nu=1e-3)
    cfg = OptimizerConfig(
        pipeline="sobolev_surface", method="lbfgs", memory=5,
        max_iter=200, sobolev_weight=0.1,
    )
    out_mesh, hist = run_sobolev_pipeline(prob, mesh, cfg)
    dt = time.perf_counter() - t0

    final = extract_gamma_curve(out_mesh)
    area_err = abs(spectral_area(final) - np.pi)
    hd = _best_fit_circle_distance(final)
    values = [rec.value for rec in hist]
    monotone = all(b <= a for a, b in zip(values, values[1:]))
    iters = hist.final.iteration

    ok = (
        hist.status == "converged"
        and iters <= 200
        and area_err <= 1e-3
        and hd <= 2.0 * h
        and monotone
        and dt < 300.0
    )
    record(
        "area benchmark circularizes",
        ok,
        f"{hist.status} after {iters} iterations; |area-pi| {area_err:.2e} vs 1e-3; "
        f"Hausdorff to best-fit circle {hd:.2e} vs {2.0 * h}; "
        f"monotone {monotone}; {dt:.0f}s",
    )


def test_07_tracking_benchmark_recovers_target():
    # volume-form pipeline on the transmission tracking problem whose
    # target data is generated on the unit circle: the misfit must drop
    # by 90% and the final interface land within twice the mesh size
    t0 = time.perf_counter()
    h = 0.1
    target_curve = circle(128)
    tmesh = generate_annulus_mesh(BENCH_BOX, target_curve, h)
    generator = ShapeProblem(
        "poisson_tracking", sigma_in=1.0, sigma_out=2.0, source=1.0
    )
    tstate = solve_state_adjoint(generator, tmesh, need_adjoint=False)
    prob = ShapeProblem(
        "poisson_tracking", sigma_in=1.0, sigma_out=2.0, source=1.0,
        target=P1Interpolant(tmesh, tstate.y), nu=1e-5,
    )

    mesh0 = generate_annulus_mesh(BENCH_BOX, ellipse(128, 2.0, 1.0), h)
    state0 = solve_state_adjoint(prob, mesh0, need_adjoint=False)
    track0 = tracking_misfit(prob, mesh0, state0)

    cfg = OptimizerConfig(
        pipeline="steklov_volume", method="lbfgs", memory=5, max_iter=60
    )
    out_mesh, hist = run_steklov_pipeline(prob, mesh0, cfg)
    dt = time.perf_counter() - t0

    final = extract_gamma_curve(out_mesh)
    state_f = solve_state_adjoint(prob, out_mesh, need_adjoint=False)
    track_f = tracking_misfit(prob, out_mesh, state_f)
    reduction = 1.0 - track_f / track0
    hd = hausdorff_distance(final, target_curve)

    ok = reduction >= 0.90 and hd <= 2.0 * h and dt < 600.0
    record(
        "tracking benchmark recovers the target shape",
        ok,
        f"misfit {track0:.2e} -> {track_f:.2e} ({100 * reduction:.1f}% vs 90%); "
        f"Hausdorff to target {hd:.3f} vs {2.0 * h}; "
        f"{hist.status} after {hist.final.iteration} iterations; {dt:.0f}s",
    )


def test_08_limited_memory_sanity():
    # memory 0 must reproduce steepest descent bitwise, and with a full
    # conjugate history the two-loop recursion must invert the metric
    # Hessian of a fixed-circle quadratic to 1e-6
    t0 = time.perf_counter()
    prob = ShapeProblem("area_mismatch", a_star=np.pi, nu=1e-3)
    bitwise = True
    for pipeline, runner in (
        ("sobolev_surface", run_sobolev_pipeline),
        ("steklov_volume", run_steklov_pipeline),
    ):
        hists = []
        for method, memory in (("steepest", 5), ("lbfgs", 0)):
            mesh = generate_annulus_mesh(SMALL_BOX, ellipse(64, 1.3, 0.8), 0.15)
            cfg = OptimizerConfig(
                pipeline=pipeline, method=method, memory=memory,
                max_iter=2, grad_tol=1e-12,
            )
            _, hist = runner(prob, mesh, cfg)
            hists.append(hist)
        ha, hb = hists
        bitwise &= len(ha) == len(hb) >= 2
        for ra, rb in zip(ha, hb):
            bitwise &= (
                ra.value == rb.value
                and ra.grad_norm == rb.grad_norm
                and ra.step == rb.step
                and np.array_equal(ra.curve_points, rb.curve_points)
            )

    rng = default_rng(7)
    n = 16
    curve = circle(n)
    params = SobolevParams(A=0.1)

    def inner(a, b):
        return sobolev_inner(a, b, curve, params)

    eye = np.eye(n)
    gram = np.array([[inner(eye[i], eye[j]) for j in range(n)] for i in range(n)])
    m = rng.standard_normal((n, n))
    spd = m @ m.T + n * eye
    hess = np.linalg.solve(gram, spd)
    directions = []
    for i in range(n):
        d = eye[i].astype(float)
        for prev in directions:
            d -= (prev @ spd @ d) / (prev @ spd @ prev) * prev
        directions.append(d)
    pairs = [make_pair(d, hess @ d, inner) for d in directions]
    assert all(p is not None for p in pairs)
    grad = rng.standard_normal(n)
    got = lbfgs_two_loop(grad, pairs, inner)
    want = np.linalg.solve(spd, gram @ grad)
    rel = float(np.linalg.norm(got - want) / np.linalg.norm(want))

    dt = time.perf_counter() - t0
    ok = bitwise and rel <= 1e-6
    record(
        "limited-memory recursion sanity",
        ok,
        f"memory-0 bitwise equal to steepest in both pipelines: {bitwise}; "
        f"two-loop vs dense inverse on the fixed-circle quadratic "
        f"{rel:.2e} vs 1e-6; {dt:.0f}s",
    )


def test_09_validity_and_equivalence_predicates():
    # the fast injectivity check against the O(N^2) reference on 1000
    # random polygons, image-equality invariances, and an exactly
    # computable Hausdorff configuration
    t0 = time.perf_counter()
    rng = default_rng(909)
    mismatches = n_simple = n_crossed = built = 0
    while built < 1000:
        n = int(rng.integers(12, 40))
        r = 1.0 + rng.uniform(0.2, 1.8) * rng.standard_normal(n) * 0.4
        t = np.sort(rng.uniform(0.0, 2.0 * np.pi, n))
        pts = np.column_stack([r * np.cos(t), r * np.sin(t)])
        try:
            c = DiscreteCurve(pts)
        except ValueError:
            continue
        built += 1
        got = validate_shape(c).injective
        want, _ = injective_bruteforce(c.points)
        if got != want:
            mismatches += 1
        if want:
            n_simple += 1
        else:
            n_crossed += 1

    base = random_smooth_curve(rng, 64)
    rolled = DiscreteCurve(np.roll(base.points, 17, axis=0))
    flipped = DiscreteCurve(base.points[::-1])
    invariant = (
        shapes_equivalent(base, rolled, tol=1e-12)
        and shapes_equivalent(base, flipped, tol=1e-12)
        and shapes_equivalent(base, resample(base, 128), tol=1e-2)
    )

    hd_err = abs(hausdorff_distance(circle(128, 1.0), circle(128, 1.1)) - 0.1)

    dt = time.perf_counter() - t0
    ok = (
        mismatches == 0
        and n_simple >= 50
        and n_crossed >= 50
        and invariant
        and hd_err <= 1e-9
    )
    record(
        "validity and equivalence predicates",
        ok,
        f"{mismatches} mismatches vs brute force on 1000 curves "
        f"({n_simple} simple, {n_crossed} crossed); "
        f"equivalence invariant under roll, reversal, resampling: {invariant}; "
        f"concentric-circle Hausdorff error {hd_err:.1e} vs 1e-9; {dt:.0f}s",
    )


def test_10_seeded_cli_runs_bitwise_identical(tmp_path):
    # the whole command-line pipeline, run twice with the same seed,
    # must leave byte-identical iteration logs and final curves
    t0 = time.perf_counter()
    write_curve(tmp_path / "start.txt", ellipse(48, 1.3, 0.8))
    (tmp_path / "run.cfg").write_text(
        "problem.kind = area_mismatch\n"
        "problem.a_star = 3.141592653589793\n"
        "problem.nu = 1e-3\n"
        "mesh.curve = start.txt\n"
        "mesh.box = -2 -2 2 2\n"
        "mesh.h = 0.2\n"
        "optimizer.method = lbfgs\n"
        "optimizer.memory = 5\n"
        "optimizer.max_iter = 3\n"
    )
    outputs = []
    codes = []
    for name in ("first", "second"):
        proc = subprocess.run(
            [
                sys.executable, "-m", "shapeopt.cli", "run",
                str(tmp_path / "run.cfg"),
                "--output", str(tmp_path / name), "--seed", "3",
            ],
            capture_output=True,
            text=True,
        )
        codes.append(proc.returncode)
        history = (tmp_path / name / "history.csv").read_bytes()
        finals = sorted((tmp_path / name).glob("curve_*.txt"))
        outputs.append((history, finals[-1].read_bytes()))

    dt = time.perf_counter() - t0
    identical = outputs[0] == outputs[1] and codes[0] == codes[1]
    ok = identical and codes[0] in (0, 2)
    record(
        "seeded cli runs are bitwise identical",
        ok,
        f"history.csv and final curve byte-identical across runs: {identical}; "
        f"exit code {codes[0]}; {dt:.0f}s",
    )
