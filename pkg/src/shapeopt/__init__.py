"""Shape optimization on closed planar curves.

Two descent pipelines over the same set of shape functionals: a
Sobolev-metric pipeline driven by surface-form derivatives on the
boundary curve, and a Steklov-Poincare pipeline driven by volume-form
derivatives on a deforming triangle mesh.
"""

from .curves import DiscreteCurve, read_curve, write_curve

__version__ = "0.1.0"

__all__ = ["DiscreteCurve", "read_curve", "write_curve", "__version__"]
