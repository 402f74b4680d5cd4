"""Transcendental bases shared by both kernel backends.

NumPy's vectorized exp/log/tanh outrun scalar libm loops by an order of
magnitude, so the base of every family is computed here once per input;
the backends differ only in how they turn a base into derivative
orders.  The softplus/sigmoid forms are the overflow-safe ones:
``max(x,0) + log(1 + exp(-|x|))`` and ``1/(1 + exp(-x))`` with overflow
silenced (the limit values are exact).
"""

import numpy as np


def sigmoid(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def softplus(x):
    return np.maximum(x, 0.0) + np.log(1.0 + np.exp(-np.abs(x)))


def ew_base(family, x):
    """Transcendental part of a family, evaluated once per input."""
    if family == "mish":
        return (np.tanh(softplus(x)), sigmoid(x))
    if family == "tanh":
        return (np.tanh(x),)
    if family == "softplus":
        return (softplus(x), sigmoid(x))
    if family == "exp":
        return (np.exp(x),)
    if family in ("sin", "cos"):
        return (np.sin(x), np.cos(x))
    if family == "ln1p":
        return (np.log1p(x),)
    if family == "sign":
        return ()
    raise ValueError(f"unknown elementwise family '{family}'")
