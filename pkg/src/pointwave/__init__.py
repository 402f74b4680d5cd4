"""Point-cloud solver for parametric 2-D acoustic scattering.

Learns pointwise scattered pressure for acoustic-structure layouts
governed by Helmholtz equations, trained from PDE residuals plus a
small set of observed solutions.
"""

from .kernels import BACKEND as kernel_backend

__version__ = "0.1.0"
__all__ = ["kernel_backend", "__version__"]
