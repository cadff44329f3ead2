"""Validity and equivalence predicates for discrete shapes.

A discrete shape is acceptable when its polygon is simple: no repeated
vertices, no two non-adjacent edges meeting, no adjacent edges folding
back onto each other.  Orientation tests run in floating point behind
an error filter and fall back to exact rational arithmetic when the
filtered sign is not trustworthy, so the simplicity verdict is never a
rounding artifact.  Shape equivalence is equality of images up to a
tolerance, measured by the symmetric vertex-to-segment Hausdorff
distance, which is invariant under reparametrization by construction.
"""

from fractions import Fraction

import numpy as np

__all__ = [
    "ValidationReport",
    "validate_shape",
    "injective_bruteforce",
    "shapes_equivalent",
    "hausdorff_distance",
    "fit_circle",
]

# Shewchuk-style first-stage filter constant for the 2d orientation test
_ORIENT_BOUND = 3.3306690738754716e-16
DEFAULT_ANGLE_FLOOR = 1e-3


class ValidationReport:
    def __init__(self, injective, simple_closed, min_edge, min_angle, lipschitz, messages):
        self.injective = injective
        self.simple_closed = simple_closed
        self.min_edge = min_edge
        self.min_angle_at_vertices = min_angle
        self.lipschitz_heuristic = lipschitz
        self.messages = list(messages)

    def __repr__(self):
        flags = f"injective={self.injective}, lipschitz={self.lipschitz_heuristic}"
        return f"ValidationReport({flags}, messages={len(self.messages)})"

    def as_text(self):
        lines = [
            f"injective: {str(self.injective).lower()}",
            f"simple_closed: {str(self.simple_closed).lower()}",
            f"min_edge: {self.min_edge:.17g}",
            f"min_angle_at_vertices: {self.min_angle_at_vertices:.17g}",
            f"lipschitz_heuristic: {str(self.lipschitz_heuristic).lower()}",
        ]
        for msg in self.messages:
            lines.append(f"message: {msg}")
        return "\n".join(lines) + "\n"


def _orient_exact(ax, ay, bx, by, cx, cy):
    ax, ay = Fraction(ax), Fraction(ay)
    bx, by = Fraction(bx), Fraction(by)
    cx, cy = Fraction(cx), Fraction(cy)
    det = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    return (det > 0) - (det < 0)


def orient(a, b, c):
    """Sign of the signed area of triangle (a, b, c); exact."""
    detleft = (b[0] - a[0]) * (c[1] - a[1])
    detright = (b[1] - a[1]) * (c[0] - a[0])
    det = detleft - detright
    detsum = abs(detleft) + abs(detright)
    if abs(det) > _ORIENT_BOUND * detsum:
        return int(det > 0) - int(det < 0)
    return _orient_exact(a[0], a[1], b[0], b[1], c[0], c[1])


def _on_segment(a, b, p):
    # assumes collinear; closed-interval bounding box test is then exact
    return (
        min(a[0], b[0]) <= p[0] <= max(a[0], b[0])
        and min(a[1], b[1]) <= p[1] <= max(a[1], b[1])
    )


def segments_touch(p1, p2, p3, p4):
    """True when closed segments [p1,p2] and [p3,p4] share any point."""
    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and (
        (d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)
    ):
        return True
    if d1 == 0 and _on_segment(p3, p4, p1):
        return True
    if d2 == 0 and _on_segment(p3, p4, p2):
        return True
    if d3 == 0 and _on_segment(p1, p2, p3):
        return True
    if d4 == 0 and _on_segment(p1, p2, p4):
        return True
    return False


def injective_bruteforce(points):
    """Reference implementation: plain O(N^2) loop over edge pairs.

    Returns (flag, messages).  Kept deliberately simple; the vectorized
    path in validate_shape is checked against this on random inputs.
    """
    pts = [tuple(p) for p in np.asarray(points, dtype=float)]
    n = len(pts)
    messages = []
    seen = {}
    for i, p in enumerate(pts):
        if p in seen:
            messages.append(f"vertices {seen[p]} and {i} coincide")
        else:
            seen[p] = i
    for i in range(n):
        a1, a2 = pts[i], pts[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                # adjacent pair: only a fold back along the shared vertex
                # is forbidden
                if (i + 1) % n == j:
                    shared, pa, pb = a2, a1, pts[(j + 1) % n]
                elif (j + 1) % n == i:
                    shared, pa, pb = a1, a2, pts[j]
                else:
                    continue
                if orient(pa, shared, pb) == 0:
                    da = (pa[0] - shared[0], pa[1] - shared[1])
                    db = (pb[0] - shared[0], pb[1] - shared[1])
                    if da[0] * db[0] + da[1] * db[1] > 0:
                        messages.append(f"edges {i} and {j} fold back at a shared vertex")
                continue
            b1, b2 = pts[j], pts[(j + 1) % n]
            if segments_touch(a1, a2, b1, b2):
                messages.append(f"edges {i} and {j} intersect")
    return len(messages) == 0, messages


def _injective_vectorized(pts):
    """Filtered all-pairs test; ambiguous signs re-resolved exactly."""
    n = len(pts)
    a = pts
    b = np.roll(pts, -1, axis=0)
    ii, jj = np.triu_indices(n, k=1)
    adjacent = ((jj - ii) == 1) | ((ii == 0) & (jj == n - 1))
    messages = []

    # repeated vertices anywhere break injectivity of the parametrization
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    sp = pts[order]
    dup = np.nonzero((sp[1:] == sp[:-1]).all(axis=1))[0]
    for d in dup:
        messages.append(f"vertices {order[d]} and {order[d + 1]} coincide")

    def orient_signs(p, q, r):
        detl = (q[:, 0] - p[:, 0]) * (r[:, 1] - p[:, 1])
        detr = (q[:, 1] - p[:, 1]) * (r[:, 0] - p[:, 0])
        det = detl - detr
        ambiguous = np.abs(det) <= _ORIENT_BOUND * (np.abs(detl) + np.abs(detr))
        return np.sign(det).astype(int), ambiguous

    i_non, j_non = ii[~adjacent], jj[~adjacent]
    p1, p2 = a[i_non], b[i_non]
    p3, p4 = a[j_non], b[j_non]

    # bounding-box prefilter keeps the exact fallback rare
    lo1 = np.minimum(p1, p2)
    hi1 = np.maximum(p1, p2)
    lo2 = np.minimum(p3, p4)
    hi2 = np.maximum(p3, p4)
    overlap = np.all(lo1 <= hi2, axis=1) & np.all(lo2 <= hi1, axis=1)

    idx = np.nonzero(overlap)[0]
    if idx.size:
        q1, q2, q3, q4 = p1[idx], p2[idx], p3[idx], p4[idx]
        s1, amb1 = orient_signs(q3, q4, q1)
        s2, amb2 = orient_signs(q3, q4, q2)
        s3, amb3 = orient_signs(q1, q2, q3)
        s4, amb4 = orient_signs(q1, q2, q4)
        needs_exact = np.nonzero(amb1 | amb2 | amb3 | amb4)[0]
        for k in needs_exact:
            s1[k] = orient(q3[k], q4[k], q1[k])
            s2[k] = orient(q3[k], q4[k], q2[k])
            s3[k] = orient(q1[k], q2[k], q3[k])
            s4[k] = orient(q1[k], q2[k], q4[k])
        proper = (s1 * s2 < 0) & (s3 * s4 < 0)
        touch = np.zeros(len(idx), dtype=bool)
        for s, pa, pb, pt in ((s1, q3, q4, q1), (s2, q3, q4, q2), (s3, q1, q2, q3), (s4, q1, q2, q4)):
            onseg = (
                (s == 0)
                & np.all(np.minimum(pa, pb) <= pt, axis=1)
                & np.all(pt <= np.maximum(pa, pb), axis=1)
            )
            touch |= onseg
        for k in np.nonzero(proper | touch)[0]:
            messages.append(f"edges {i_non[idx[k]]} and {j_non[idx[k]]} intersect")

    # adjacent pairs: forbid exact fold backs through the shared vertex
    for i in range(n):
        j = (i + 1) % n
        pa, shared, pb = pts[i], pts[j], pts[(j + 1) % n]
        if orient(pa, shared, pb) == 0:
            da = pa - shared
            db = pb - shared
            if float(da @ db) > 0.0:
                messages.append(f"edges {i} and {j} fold back at a shared vertex")
    return len(messages) == 0, messages


def validate_shape(c, angle_floor=DEFAULT_ANGLE_FLOOR):
    """Build the full validity report for a curve; reports, never raises."""
    pts = np.asarray(c.points, dtype=float)
    injective, messages = _injective_vectorized(pts)

    edges = np.roll(pts, -1, axis=0) - pts
    elen = np.hypot(edges[:, 0], edges[:, 1])
    min_edge = float(np.min(elen))

    incoming = np.roll(edges, 1, axis=0)
    cross = incoming[:, 0] * edges[:, 1] - incoming[:, 1] * edges[:, 0]
    dot = np.sum(incoming * edges, axis=1)
    turn = np.arctan2(cross, dot)
    vertex_angle = np.pi - np.abs(turn)
    min_angle = float(np.min(vertex_angle))
    lipschitz = min_angle >= angle_floor
    if not lipschitz:
        at = int(np.argmin(vertex_angle))
        messages = messages + [
            f"vertex angle {min_angle:.3e} rad at node {at} below floor {angle_floor:.3e}"
        ]
    return ValidationReport(
        injective=injective,
        simple_closed=injective,
        min_edge=min_edge,
        min_angle=min_angle,
        lipschitz=lipschitz,
        messages=messages,
    )


def _directed_hausdorff(p, a, b):
    """max over points p of the distance to the polyline of segments a->b."""
    ab = b - a
    ap = p[:, None, :] - a[None, :, :]
    denom = np.sum(ab * ab, axis=1)
    t = np.einsum("pmd,md->pm", ap, ab) / denom[None, :]
    t = np.clip(t, 0.0, 1.0)
    proj = a[None, :, :] + t[:, :, None] * ab[None, :, :]
    d = np.linalg.norm(p[:, None, :] - proj, axis=2)
    return float(np.max(np.min(d, axis=1)))


def hausdorff_distance(c1, c2):
    """Symmetric vertex-to-segment Hausdorff distance between images."""
    p = np.asarray(c1.points, dtype=float)
    q = np.asarray(c2.points, dtype=float)
    pa, pb = p, np.roll(p, -1, axis=0)
    qa, qb = q, np.roll(q, -1, axis=0)
    return max(_directed_hausdorff(p, qa, qb), _directed_hausdorff(q, pa, pb))


def shapes_equivalent(c1, c2, tol):
    """Images coincide up to tol, regardless of parametrization."""
    return hausdorff_distance(c1, c2) <= tol


def fit_circle(points):
    """Algebraic least-squares circle fit; returns (center, radius).

    Solves the linear system of the Kasa fit; adequate for near-circular
    point sets, used by the benchmark diagnostics.
    """
    pts = np.asarray(points, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    amat = np.column_stack([2.0 * x, 2.0 * y, np.ones(len(pts))])
    rhs = x * x + y * y
    sol, *_ = np.linalg.lstsq(amat, rhs, rcond=None)
    cx, cy, c0 = sol
    return np.array([cx, cy]), float(np.sqrt(c0 + cx * cx + cy * cy))
