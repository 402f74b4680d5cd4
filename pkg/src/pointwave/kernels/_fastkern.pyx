# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Derivative-order kernels, compiled implementation.

Same contract as kernels/reference.py: turn a family's precomputed
transcendental base (kernels.base) into any derivative order.  Each
call is one fused C loop instead of a chain of NumPy temporaries; the
training loop replays these thousands of times, which is where the
compiled backend pays off.
"""

import numpy as np

BACKEND_NAME = "compiled"


def _flat(x):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    return arr, arr.ravel()


cdef void _mish_orders(int order, const double[::1] x, const double[::1] t,
                       const double[::1] s, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double u, w, dw, ti, si, xi
    for i in range(n):
        xi = x[i]; ti = t[i]; si = s[i]
        if order == 0:
            out[i] = xi * ti
            continue
        u = 1.0 - ti * ti
        if order == 1:
            out[i] = ti + xi * u * si
        elif order == 2:
            out[i] = u * si * (2.0 + xi * (1.0 - si - 2.0 * ti * si))
        else:
            w = 2.0 + xi * (1.0 - si - 2.0 * ti * si)
            dw = (1.0 - si - 2.0 * ti * si) + xi * (
                -si * (1.0 - si) - 2.0 * u * si * si
                - 2.0 * ti * si * (1.0 - si)
            )
            out[i] = u * si * (w * (1.0 - si - 2.0 * ti * si) + dw)


cdef void _tanh_orders(int order, const double[::1] t, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, n = t.shape[0]
    cdef double u, ti
    for i in range(n):
        ti = t[i]
        if order == 0:
            out[i] = ti
            continue
        u = 1.0 - ti * ti
        if order == 1:
            out[i] = u
        elif order == 2:
            out[i] = -2.0 * ti * u
        else:
            out[i] = 2.0 * u * (3.0 * ti * ti - 1.0)


cdef void _softplus_orders(int order, const double[::1] sp, const double[::1] s,
                           double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, n = s.shape[0]
    cdef double si
    for i in range(n):
        if order == 0:
            out[i] = sp[i]
            continue
        si = s[i]
        if order == 1:
            out[i] = si
        elif order == 2:
            out[i] = si * (1.0 - si)
        else:
            out[i] = si * (1.0 - si) * (1.0 - 2.0 * si)


cdef void _ln1p_orders(int order, const double[::1] x, const double[::1] l0,
                       double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double r
    for i in range(n):
        if order == 0:
            out[i] = l0[i]
        else:
            r = 1.0 / (1.0 + x[i])
            if order == 1:
                out[i] = r
            elif order == 2:
                out[i] = -r * r
            else:
                out[i] = 2.0 * r * r * r


cdef void _signk(int order, const double[::1] x, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, n = x.shape[0]
    for i in range(n):
        if order > 0:
            out[i] = 0.0
        elif x[i] > 0.0:
            out[i] = 1.0
        elif x[i] < 0.0:
            out[i] = -1.0
        else:
            out[i] = x[i]  # preserves signed zero like np.sign


cdef void _trig_pick(int phase, const double[::1] sn, const double[::1] cs,
                     double[::1] out) noexcept nogil:
    # phase 0..3: sin, cos, -sin, -cos
    cdef Py_ssize_t i, n = sn.shape[0]
    for i in range(n):
        if phase == 0:
            out[i] = sn[i]
        elif phase == 1:
            out[i] = cs[i]
        elif phase == 2:
            out[i] = -sn[i]
        else:
            out[i] = -cs[i]


def ew_from_base(family, int order, x, base):
    """Order-th derivative of the family from its precomputed base."""
    if order < 0:
        raise ValueError("derivative order must be >= 0")
    arr, flat = _flat(x)
    out = np.empty_like(flat)
    cdef double[::1] ov = out
    cdef const double[::1] xv = flat

    if family in ("mish", "tanh", "softplus", "ln1p") and order > 3:
        raise ValueError(f"{family} derivative order {order} not supported")

    if family == "mish":
        _mish_orders(order, xv, _flat(base[0])[1], _flat(base[1])[1], ov)
    elif family == "tanh":
        _tanh_orders(order, _flat(base[0])[1], ov)
    elif family == "softplus":
        _softplus_orders(order, _flat(base[0])[1], _flat(base[1])[1], ov)
    elif family == "exp":
        return base[0].copy()
    elif family == "sin":
        _trig_pick(order % 4, _flat(base[0])[1], _flat(base[1])[1], ov)
    elif family == "cos":
        _trig_pick((order + 1) % 4, _flat(base[0])[1], _flat(base[1])[1], ov)
    elif family == "ln1p":
        _ln1p_orders(order, xv, _flat(base[0])[1], ov)
    elif family == "sign":
        _signk(order, xv, ov)
    else:
        raise ValueError(f"unknown elementwise family '{family}'")
    return out.reshape(arr.shape)
