"""Kernel backend selection.

The transcendental base of every derivative family comes from
``kernels.base`` (NumPy's vectorized routines win there regardless of
backend); the derivative-order arithmetic comes from the compiled
extension when it was built, else from the NumPy reference.  Set
``POINTWAVE_PURE_PYTHON=1`` to force the reference backend (the
benchmark uses this for comparison).
"""

import os

from .base import ew_base

if os.environ.get("POINTWAVE_PURE_PYTHON"):
    from . import reference as _impl
else:
    try:
        from . import _fastkern as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import reference as _impl

ew_from_base = _impl.ew_from_base
BACKEND = _impl.BACKEND_NAME


def ew(family, order, x):
    """Evaluate the order-th derivative of the named family elementwise."""
    return ew_from_base(family, order, x, ew_base(family, x))


__all__ = ["ew", "ew_base", "ew_from_base", "BACKEND"]
