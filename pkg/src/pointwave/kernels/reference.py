"""Derivative-order kernels, NumPy implementation.

Each smooth scalar function used on the tape is a *family*: the
function itself plus its derivatives up to the order the
differentiation engine can request (3 for the non-trivial families,
any order for exp/sin/cos).  ``ew_from_base`` turns the family's
precomputed transcendental base (see ``kernels.base``) into any
derivative order with plain arithmetic.

The compiled backend in ``_fastkern.pyx`` implements the same formulas
as one fused C loop per call; this module is the fallback and the
readable reference.
"""

import numpy as np

BACKEND_NAME = "reference"


def _mish_orders(order, x, t, s):
    if order == 0:
        return x * t
    u = 1.0 - t * t
    if order == 1:
        return t + x * u * s
    if order == 2:
        return u * s * (2.0 + x * (1.0 - s - 2.0 * t * s))
    if order == 3:
        w = 2.0 + x * (1.0 - s - 2.0 * t * s)
        dw = (1.0 - s - 2.0 * t * s) + x * (
            -s * (1.0 - s) - 2.0 * u * s * s - 2.0 * t * s * (1.0 - s)
        )
        return u * s * (w * (1.0 - s - 2.0 * t * s) + dw)
    raise ValueError(f"mish derivative order {order} not supported")


def ew_from_base(family, order, x, base):
    """Order-th derivative of the family from its precomputed base."""
    if order < 0:
        raise ValueError("derivative order must be >= 0")
    if family == "mish":
        return _mish_orders(order, x, *base)
    if family == "tanh":
        t = base[0]
        if order == 0:
            return t.copy()
        u = 1.0 - t * t
        if order == 1:
            return u
        if order == 2:
            return -2.0 * t * u
        if order == 3:
            return 2.0 * u * (3.0 * t * t - 1.0)
        raise ValueError(f"tanh derivative order {order} not supported")
    if family == "softplus":
        sp, s = base
        if order == 0:
            return sp.copy()
        if order == 1:
            return s.copy()
        if order == 2:
            return s * (1.0 - s)
        if order == 3:
            return s * (1.0 - s) * (1.0 - 2.0 * s)
        raise ValueError(f"softplus derivative order {order} not supported")
    if family == "exp":
        return base[0].copy()
    if family in ("sin", "cos"):
        sn, cs = base
        k = order % 4 if family == "sin" else (order + 1) % 4
        return (sn.copy(), cs.copy(), -sn, -cs)[k]
    if family == "ln1p":
        if order == 0:
            return base[0].copy()
        r = 1.0 / (1.0 + x)
        if order == 1:
            return r
        if order == 2:
            return -r * r
        if order == 3:
            return 2.0 * r * r * r
        raise ValueError(f"ln1p derivative order {order} not supported")
    if family == "sign":
        return np.sign(x) if order == 0 else np.zeros_like(x)
    raise ValueError(f"unknown elementwise family '{family}'")
