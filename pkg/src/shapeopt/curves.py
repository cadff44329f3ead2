"""Closed planar curves sampled at uniform parameter values.

A curve is stored as an (N, 2) array of points c[i] = c(theta_i) with
theta_i = 2*pi*i/N, understood periodically.  Derivatives in theta are
computed by discrete Fourier differentiation, so they are exact (to
rounding) for band-limited data.  All boundary fields are plain numpy
arrays bound to the curve's nodes: scalar fields have shape (N,),
vector fields shape (N, 2).
"""

import numpy as np

__all__ = [
    "DiscreteCurve",
    "fourier_derivative",
    "circumferential_derivative",
    "arc_length_measure",
    "arc_length_derivative",
    "unit_tangent_normal",
    "curvature",
    "normal_decompose",
    "resample",
    "read_curve",
    "write_curve",
]

MIN_SAMPLES = 8


class DiscreteCurve:
    """Periodic point sequence representing a smooth closed curve.

    Construction enforces the invariants everything downstream relies on:
    at least MIN_SAMPLES points, no repeated consecutive points (the
    closing edge included), and counter-clockwise orientation.  A
    clockwise input is reversed in place rather than rejected, which
    keeps the exterior-normal convention unambiguous.
    """

    def __init__(self, points):
        pts = np.array(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("curve points must form an (N, 2) array")
        n = pts.shape[0]
        if n < MIN_SAMPLES:
            raise ValueError(f"need at least {MIN_SAMPLES} samples, got {n}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("curve points must be finite")
        edges = np.roll(pts, -1, axis=0) - pts
        if np.min(np.hypot(edges[:, 0], edges[:, 1])) == 0.0:
            raise ValueError("curve has a zero-length edge (repeated point)")
        if _signed_area(pts) < 0.0:
            # reverse but keep the start node fixed so node 0 is stable
            pts = np.concatenate([pts[:1], pts[:0:-1]])
        pts.setflags(write=False)
        self.points = pts
        self.n = n

    @property
    def thetas(self):
        return 2.0 * np.pi * np.arange(self.n) / self.n

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"DiscreteCurve(n={self.n})"


def _signed_area(pts):
    x, y = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return 0.5 * np.sum(x * yn - y * xn)


def fourier_derivative(values):
    """Spectral d/dtheta of periodic nodal data, shape (N,) or (N, k).

    The Nyquist mode is zeroed for even N: its derivative is not
    representable on the grid and keeping it breaks the antisymmetry of
    the differentiation matrix.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    freq = np.fft.rfft(values, axis=0)
    k = np.arange(freq.shape[0], dtype=float)
    if n % 2 == 0:
        k[-1] = 0.0
    mult = 1j * k if values.ndim == 1 else (1j * k)[:, None]
    return np.fft.irfft(freq * mult, n=n, axis=0)


def circumferential_derivative(c):
    """c_theta, the spectral derivative of the point sequence."""
    return fourier_derivative(c.points)


def arc_length_measure(c):
    """Nodal speeds |c_theta| and the total curve length.

    The length is the trapezoid-free spectral quadrature
    sum_i |c_theta|_i * (2*pi/N), which is itself spectrally accurate
    for smooth curves.
    """
    ct = circumferential_derivative(c)
    speed = np.hypot(ct[:, 0], ct[:, 1])
    total = float(np.sum(speed) * (2.0 * np.pi / c.n))
    return speed, total


def arc_length_derivative(values, c):
    """D_s f = f_theta / |c_theta|, componentwise for vector fields."""
    values = np.asarray(values, dtype=float)
    speed, _ = arc_length_measure(c)
    df = fourier_derivative(values)
    if values.ndim == 1:
        return df / speed
    return df / speed[:, None]


def unit_tangent_normal(c):
    """Unit tangent v and exterior unit normal n at every node.

    For a counter-clockwise curve the exterior normal is the tangent
    rotated by -pi/2, i.e. n = (v_y, -v_x).
    """
    ct = circumferential_derivative(c)
    speed = np.hypot(ct[:, 0], ct[:, 1])
    v = ct / speed[:, None]
    n = np.column_stack([v[:, 1], -v[:, 0]])
    return v, n


def curvature(c):
    """Signed nodal curvature, 1/R on a counter-clockwise circle.

    Computed as (x' y'' - y' x'') / |c'|^3 with spectral derivatives.
    The sign convention pairs with the exterior normal above: convex
    arcs of a CCW curve have positive curvature, so the perimeter
    functional's surface density is kappa without extra signs.
    """
    ct = fourier_derivative(c.points)
    ctt = fourier_derivative(ct)
    speed2 = ct[:, 0] ** 2 + ct[:, 1] ** 2
    return (ct[:, 0] * ctt[:, 1] - ct[:, 1] * ctt[:, 0]) / speed2 ** 1.5


def normal_decompose(h, c):
    """Split a nodal vector field as h = alpha*n + tau*v.

    Returns (alpha, tau).  The split is the plain pointwise projection
    on the orthonormal frame, so reconstruction is exact to rounding.
    """
    v, n = unit_tangent_normal(c)
    h = np.asarray(h, dtype=float)
    alpha = h[:, 0] * n[:, 0] + h[:, 1] * n[:, 1]
    tau = h[:, 0] * v[:, 0] + h[:, 1] * v[:, 1]
    return alpha, tau


def _trig_upsample(pts, k):
    """Evaluate the trigonometric interpolant of (N, 2) data at k nodes."""
    n = pts.shape[0]
    freq = np.fft.rfft(pts, axis=0)
    if n % 2 == 0:
        # split the Nyquist bin symmetrically so the interpolant is real
        freq[-1] *= 0.5
    pad = np.zeros((k // 2 + 1, 2), dtype=complex)
    pad[: freq.shape[0]] = freq
    return np.fft.irfft(pad, n=k, axis=0) * (k / n)


def resample(c, m):
    """Redistribute m points along the image of c, equispaced in arc length.

    The curve is first refined through its trigonometric interpolant,
    then the m points are placed at equal steps of cumulative chord
    length on the refined polygon, starting from node 0.  Band-limited
    curves are therefore resampled onto their exact smooth image, and
    the Hausdorff distance to the input polygon stays below one input
    edge length.
    """
    if m < MIN_SAMPLES:
        raise ValueError(f"resample needs at least {MIN_SAMPLES} points, got {m}")
    fine = _trig_upsample(c.points, max(2048, 8 * max(c.n, m)))
    closed = np.vstack([fine, fine[:1]])
    seg = np.diff(closed, axis=0)
    seglen = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seglen)])
    total = cum[-1]
    targets = np.arange(m) * (total / m)
    idx = np.searchsorted(cum, targets, side="right") - 1
    idx = np.clip(idx, 0, len(seglen) - 1)
    frac = (targets - cum[idx]) / np.maximum(seglen[idx], 1e-300)
    new = closed[idx] + frac[:, None] * seg[idx]
    return DiscreteCurve(new)


def read_curve(path):
    """Read the plain text curve format: a count line, then x y lines."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty curve file")
    try:
        n = int(lines[0])
    except ValueError:
        raise ValueError(f"{path}: first line must be the sample count") from None
    if len(lines) - 1 != n:
        raise ValueError(f"{path}: expected {n} coordinate lines, found {len(lines) - 1}")
    pts = np.array([[float(tok) for tok in ln.split()] for ln in lines[1:]])
    return DiscreteCurve(pts)


def write_curve(path, c):
    with open(path, "w") as fh:
        fh.write(f"{c.n}\n")
        for x, y in c.points:
            fh.write(f"{x:.17g} {y:.17g}\n")
