"""Shared helpers: band-limited random fields and smooth random curves.

Tests that exercise identities of the spectral calculus need inputs the
trigonometric interpolation represents exactly, so every random field
here is synthesized from a bounded number of Fourier modes.
"""

import numpy as np
import pytest

from shapeopt.curves import DiscreteCurve

# (guarantee name, passed, detail) triples filled in by test_acceptance.py
ACCEPTANCE_RESULTS = []


def band_limited_scalar(rng, n, modes=6, amp=1.0):
    """Random real trigonometric polynomial sampled on the uniform grid."""
    theta = 2.0 * np.pi * np.arange(n) / n
    out = np.full(n, rng.normal() * amp)
    for k in range(1, modes + 1):
        out += amp * rng.normal() * np.cos(k * theta)
        out += amp * rng.normal() * np.sin(k * theta)
    return out


def band_limited_vector(rng, n, modes=6, amp=1.0):
    return np.column_stack(
        [band_limited_scalar(rng, n, modes, amp), band_limited_scalar(rng, n, modes, amp)]
    )


def random_smooth_curve(rng, n, modes=5, wobble=0.25):
    """Closed curve: unit circle plus a band-limited radial perturbation.

    The perturbation amplitude is normalized so the radius stays well
    away from zero and the curve remains simple.
    """
    theta = 2.0 * np.pi * np.arange(n) / n
    rho = band_limited_scalar(rng, n, modes, amp=1.0)
    peak = np.max(np.abs(rho))
    if peak > 0.0:
        rho = rho * (wobble / peak)
    r = 1.0 + rho
    return DiscreteCurve(np.column_stack([r * np.cos(theta), r * np.sin(theta)]))


def circle(n, radius=1.0, center=(0.0, 0.0)):
    theta = 2.0 * np.pi * np.arange(n) / n
    return DiscreteCurve(
        np.column_stack(
            [center[0] + radius * np.cos(theta), center[1] + radius * np.sin(theta)]
        )
    )


def ellipse(n, a=2.0, b=1.0):
    theta = 2.0 * np.pi * np.arange(n) / n
    return DiscreteCurve(np.column_stack([a * np.cos(theta), b * np.sin(theta)]))


@pytest.fixture
def rng():
    return np.random.default_rng(20260816)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    tw = terminalreporter
    tw.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        verdict = "PASS" if ok else "FAIL"
        tw.write_line(f"{verdict}  {name}  [{detail}]")
