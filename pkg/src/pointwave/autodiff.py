"""Tape-based automatic differentiation over 2-D float64 arrays.

The engine is define-by-run: every operation on a :class:`Var` appends a
node to its :class:`Tape` and computes the value immediately.  Three
sweeps are provided on top of the recorded graph:

* :func:`grad_vars` - reverse mode that *emits new nodes*, so the
  returned gradients are themselves differentiable (needed when a PDE
  residual built from derivatives is later differentiated with respect
  to network parameters);
* :func:`jvp_vars` - forward mode over any recorded subgraph, also
  emitting nodes.  Running it over a gradient graph yields
  forward-over-reverse second derivatives;
* a plain numeric reverse sweep (:func:`gradient` and the internal
  ``_backward_numeric``) for the final, non-differentiable adjoint pass.

All tensors are 2-D ``float64`` arrays (scalars are ``(1, 1)``); rows
index points of a cloud, columns index features.  Elementwise smooth
functions are evaluated through the kernel backend in
:mod:`pointwave.kernels`, which knows each function's derivative family
up to third order.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels


class AutodiffError(Exception):
    """Base class for differentiation-engine errors."""


class ShapeError(AutodiffError):
    def __init__(self, op, shapes):
        self.op = op
        self.shapes = list(shapes)
        super().__init__(f"shape mismatch in '{op}': {self.shapes}")


class NonFiniteError(AutodiffError):
    def __init__(self, op, node_index):
        self.op = op
        self.node_index = node_index
        super().__init__(f"NaN produced by '{op}' at tape node {node_index}")


class NonScalarError(AutodiffError):
    pass


def as_matrix(value):
    """Coerce to a C-contiguous 2-D float64 array; scalars become (1, 1)."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise ShapeError("tensor", [arr.shape])
    return np.ascontiguousarray(arr)


# ---------------------------------------------------------------------------
# forward evaluation of primitives


def _fwd_add(a, b, payload):
    if a.shape != b.shape:
        raise ShapeError("add", [a.shape, b.shape])
    return a + b


def _fwd_sub(a, b, payload):
    if a.shape != b.shape:
        raise ShapeError("sub", [a.shape, b.shape])
    return a - b


def _fwd_mul(a, b, payload):
    if a.shape != b.shape:
        raise ShapeError("mul", [a.shape, b.shape])
    return a * b


def _fwd_div(a, b, payload):
    if a.shape != b.shape:
        raise ShapeError("div", [a.shape, b.shape])
    return a / b


def _fwd_matmul(a, b, payload):
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", [a.shape, b.shape])
    return a @ b


def _fwd_matmul_nt(a, b, payload):
    # a @ b.T without materialising the transpose
    if a.shape[1] != b.shape[1]:
        raise ShapeError("matmul_nt", [a.shape, b.shape])
    return a @ b.T


def _fwd_matmul_tn(a, b, payload):
    if a.shape[0] != b.shape[0]:
        raise ShapeError("matmul_tn", [a.shape, b.shape])
    return a.T @ b


def _fwd_affine(x, w, b, payload):
    # x @ w + b with b a (1, n) row
    if x.shape[1] != w.shape[0] or b.shape != (1, w.shape[1]):
        raise ShapeError("affine", [x.shape, w.shape, b.shape])
    return x @ w + b


def _fwd_gather_cols(a, payload):
    idx = payload
    return a[idx, np.arange(a.shape[1])][None, :]


def _fwd_scatter_cols(a, payload):
    idx, n = payload
    out = np.zeros((n, a.shape[1]))
    out[idx, np.arange(a.shape[1])] = a[0]
    return out


def _fwd_scatter_rows(a, payload):
    idx, n = payload
    out = np.zeros((n, a.shape[1]))
    np.add.at(out, idx, a)
    return out


_FORWARD = {
    "add": _fwd_add,
    "sub": _fwd_sub,
    "mul": _fwd_mul,
    "div": _fwd_div,
    "neg": lambda a, p: -a,
    "scale": lambda a, p: a * p,
    "matmul": _fwd_matmul,
    "matmul_nt": _fwd_matmul_nt,
    "matmul_tn": _fwd_matmul_tn,
    "affine": _fwd_affine,
    "transpose": lambda a, p: np.ascontiguousarray(a.T),
    "ew": lambda a, p: kernels.ew_from_base(p[0], p[1], a, p[2]),
    "sum_all": lambda a, p: a.sum().reshape(1, 1),
    "sum_rows": lambda a, p: a.sum(axis=0, keepdims=True),
    "bcast_full": lambda a, p: np.full(p, a[0, 0]),
    "bcast_rows": lambda a, p: np.repeat(a, p, axis=0),
    "maxpool_rows": lambda a, p: a.max(axis=0, keepdims=True),
    "gather_cols": _fwd_gather_cols,
    "scatter_cols": _fwd_scatter_cols,
    "concat_cols": lambda parts, p: np.concatenate(parts, axis=1),
    "slice_cols": lambda a, p: np.ascontiguousarray(a[:, p[0]:p[1]]),
    "pad_cols": None,  # filled below, needs two statements
    "gather_rows": lambda a, p: a[p],
    "scatter_rows": _fwd_scatter_rows,
    "reshape": lambda a, p: a.reshape(p).copy(),
}


def _fwd_pad_cols(a, payload):
    j0, total = payload
    out = np.zeros((a.shape[0], total))
    out[:, j0:j0 + a.shape[1]] = a
    return out


_FORWARD["pad_cols"] = _fwd_pad_cols


class Var:
    """One node of a tape: an operation and its eagerly computed value."""

    __slots__ = ("tape", "idx", "op", "args", "payload", "value")

    def __init__(self, tape, idx, op, args, payload, value):
        self.tape = tape
        self.idx = idx
        self.op = op
        self.args = args
        self.payload = payload
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    def _lift(self, other):
        if isinstance(other, Var):
            return other
        arr = np.asarray(other, dtype=np.float64)
        if arr.ndim == 0:
            arr = np.full(self.shape, float(arr))
        return self.tape.constant(arr)

    def __add__(self, other):
        return self.tape._emit("add", (self, self._lift(other)))

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape._emit("sub", (self, self._lift(other)))

    def __rsub__(self, other):
        return self.tape._emit("sub", (self._lift(other), self))

    def __mul__(self, other):
        if not isinstance(other, Var) and np.ndim(other) == 0:
            return scale(self, float(other))
        return self.tape._emit("mul", (self, self._lift(other)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Var) and np.ndim(other) == 0:
            return scale(self, 1.0 / float(other))
        return self.tape._emit("div", (self, self._lift(other)))

    def __rtruediv__(self, other):
        return self.tape._emit("div", (self._lift(other), self))

    def __neg__(self):
        return self.tape._emit("neg", (self,))

    def __matmul__(self, other):
        return self.tape._emit("matmul", (self, other))


class Tape:
    """Ordered record of primitive operations (topological by construction)."""

    LEAF_OPS = ("input", "const")

    def __init__(self, check_nan=True):
        self.nodes = []
        self.check_nan = check_nan
        self._ew_base = {}   # (family, input idx) -> transcendental base

    def input(self, value):
        """Create a differentiable leaf."""
        return self._leaf("input", as_matrix(value))

    def constant(self, value):
        """Create a non-differentiable leaf."""
        return self._leaf("const", as_matrix(value))

    def _leaf(self, op, value):
        var = Var(self, len(self.nodes), op, (), None, value)
        self.nodes.append(var)
        return var

    def _emit(self, op, args, payload=None):
        value = _FORWARD[op](*( [a.value for a in args] if op != "concat_cols"
                                else [[a.value for a in args]] ), payload)
        idx = len(self.nodes)
        if self.check_nan and np.isnan(value).any():
            raise NonFiniteError(op, idx)
        var = Var(self, idx, op, tuple(args), payload, value)
        self.nodes.append(var)
        return var

    def replay(self):
        """Recompute every node from the leaves; returns the new values.

        Replay must be bit-for-bit identical to the recorded pass, which
        is asserted by the test suite.
        """
        values = {}
        out = []
        for node in self.nodes:
            if node.op in self.LEAF_OPS:
                values[node.idx] = node.value
            elif node.op == "concat_cols":
                values[node.idx] = _FORWARD["concat_cols"](
                    [values[a.idx] for a in node.args], node.payload)
            else:
                values[node.idx] = _FORWARD[node.op](
                    *[values[a.idx] for a in node.args], node.payload)
            out.append(values[node.idx])
        return out


# ---------------------------------------------------------------------------
# functional surface


def scale(v, c):
    return v.tape._emit("scale", (v,), float(c))


def affine(x, w, b):
    """x @ w + b with a (1, n) bias row (the shared-kernel dense map)."""
    return x.tape._emit("affine", (x, w, b))


def transpose(v):
    return v.tape._emit("transpose", (v,))


def reshape(v, shape):
    shape = tuple(int(s) for s in shape)
    if shape[0] * shape[1] != v.value.size:
        raise ShapeError("reshape", [v.shape, shape])
    return v.tape._emit("reshape", (v,), shape)


def _ew(v, family, order=0):
    key = (family, v.idx)
    base = v.tape._ew_base.get(key)
    if base is None:
        base = kernels.ew_base(family, v.value)
        v.tape._ew_base[key] = base
    return v.tape._emit("ew", (v,), (family, order, base))


def exp(v):
    return _ew(v, "exp")


def sin(v):
    return _ew(v, "sin")


def cos(v):
    return _ew(v, "cos")


def tanh(v):
    return _ew(v, "tanh")


def softplus(v):
    return _ew(v, "softplus")


def ln1p(v):
    return _ew(v, "ln1p")


def mish(v):
    """x * tanh(ln(1 + e^x)), evaluated with the overflow-safe softplus."""
    return _ew(v, "mish")


def sign(v):
    return _ew(v, "sign")


def absval(v):
    return v * sign(v)


def sum_all(v):
    return v.tape._emit("sum_all", (v,))


def sum_rows(v):
    return v.tape._emit("sum_rows", (v,))


def broadcast_full(v, shape):
    if v.shape != (1, 1):
        raise ShapeError("bcast_full", [v.shape])
    return v.tape._emit("bcast_full", (v,), tuple(int(s) for s in shape))


def broadcast_rows(v, n):
    if v.shape[0] != 1:
        raise ShapeError("bcast_rows", [v.shape])
    return v.tape._emit("bcast_rows", (v,), int(n))


def maxpool_rows(v):
    """Feature-wise max over points; ties go to the lowest row index."""
    if v.shape[0] < 1:
        raise ShapeError("maxpool_rows", [v.shape])
    winners = v.value.argmax(axis=0)
    return v.tape._emit("maxpool_rows", (v,), winners)


def _gather_cols(v, idx):
    return v.tape._emit("gather_cols", (v,), idx)


def _scatter_cols(v, idx, n):
    return v.tape._emit("scatter_cols", (v,), (idx, int(n)))


def concat_cols(parts):
    offsets = [0]
    for p in parts:
        if p.shape[0] != parts[0].shape[0]:
            raise ShapeError("concat_cols", [p.shape for p in parts])
        offsets.append(offsets[-1] + p.shape[1])
    return parts[0].tape._emit("concat_cols", tuple(parts), tuple(offsets))


def slice_cols(v, j0, j1):
    if not (0 <= j0 < j1 <= v.shape[1]):
        raise ShapeError("slice_cols", [v.shape, (j0, j1)])
    return v.tape._emit("slice_cols", (v,), (int(j0), int(j1)))


def _pad_cols(v, j0, total):
    return v.tape._emit("pad_cols", (v,), (int(j0), int(total)))


def gather_rows(v, idx):
    idx = np.asarray(idx, dtype=np.intp)
    return v.tape._emit("gather_rows", (v,), idx)


def _scatter_rows(v, idx, n):
    return v.tape._emit("scatter_rows", (v,), (idx, int(n)))


# ---------------------------------------------------------------------------
# derivative rules, shared by the emitting and the numeric sweeps


class _VarAlgebra:
    """Derivative rules emit new tape nodes through this namespace."""

    @staticmethod
    def shape_of(x):
        return x.shape

    @staticmethod
    def add(a, b):
        return a + b

    @staticmethod
    def neg(a):
        return -a

    @staticmethod
    def mul(a, b):
        return a.tape._emit("mul", (a, b))

    @staticmethod
    def div(a, b):
        return a.tape._emit("div", (a, b))

    @staticmethod
    def scale(a, c):
        return scale(a, c)

    @staticmethod
    def matmul(a, b):
        return a @ b

    @staticmethod
    def matmul_nt(a, b):
        return a.tape._emit("matmul_nt", (a, b))

    @staticmethod
    def matmul_tn(a, b):
        return a.tape._emit("matmul_tn", (a, b))

    @staticmethod
    def ew_with_base(v, family, order, base):
        return v.tape._emit("ew", (v,), (family, order, base))

    transpose = staticmethod(transpose)
    sum_all = staticmethod(sum_all)
    sum_rows = staticmethod(sum_rows)
    bcast_full = staticmethod(broadcast_full)
    bcast_rows = staticmethod(broadcast_rows)
    gather_cols = staticmethod(_gather_cols)
    scatter_cols = staticmethod(_scatter_cols)
    slice_cols = staticmethod(slice_cols)
    pad_cols = staticmethod(_pad_cols)
    gather_rows = staticmethod(gather_rows)
    scatter_rows = staticmethod(_scatter_rows)
    reshape = staticmethod(reshape)


class _ArrayAlgebra:
    """Same rules over plain ndarrays, for the final numeric sweep."""

    @staticmethod
    def shape_of(x):
        return x.shape

    add = staticmethod(np.add)
    neg = staticmethod(np.negative)
    mul = staticmethod(np.multiply)
    div = staticmethod(np.divide)

    @staticmethod
    def scale(a, c):
        return a * c

    matmul = staticmethod(np.matmul)

    @staticmethod
    def matmul_nt(a, b):
        return a @ b.T

    @staticmethod
    def matmul_tn(a, b):
        return a.T @ b

    @staticmethod
    def transpose(a):
        return np.ascontiguousarray(a.T)

    @staticmethod
    def ew_with_base(a, family, order, base):
        return kernels.ew_from_base(family, order, a, base)

    @staticmethod
    def sum_all(a):
        return a.sum().reshape(1, 1)

    @staticmethod
    def sum_rows(a):
        return a.sum(axis=0, keepdims=True)

    @staticmethod
    def bcast_full(a, shape):
        return np.full(shape, a[0, 0])

    @staticmethod
    def bcast_rows(a, n):
        return np.repeat(a, n, axis=0)

    @staticmethod
    def gather_cols(a, idx):
        return _fwd_gather_cols(a, idx)

    @staticmethod
    def scatter_cols(a, idx, n):
        return _fwd_scatter_cols(a, (idx, n))

    @staticmethod
    def slice_cols(a, j0, j1):
        return np.ascontiguousarray(a[:, j0:j1])

    @staticmethod
    def pad_cols(a, j0, total):
        return _fwd_pad_cols(a, (j0, total))

    @staticmethod
    def gather_rows(a, idx):
        return a[idx]

    @staticmethod
    def scatter_rows(a, idx, n):
        return _fwd_scatter_rows(a, (idx, n))

    @staticmethod
    def reshape(a, shape):
        return a.reshape(shape).copy()


def _vjp(A, op, args, payload, out, g, want):
    """Adjoint contributions of one node; ``args``/``out``/``g`` live in
    the domain of algebra ``A`` (Vars or ndarrays).

    ``want[i]`` marks whether the contribution for ``args[i]`` can reach
    a requested leaf; unneeded entries come back as None and their work
    is skipped entirely.
    """
    if op == "add":
        return [g if want[0] else None, g if want[1] else None]
    if op == "sub":
        return [g if want[0] else None, A.neg(g) if want[1] else None]
    if op == "neg":
        return [A.neg(g)]
    if op == "mul":
        return [A.mul(g, args[1]) if want[0] else None,
                A.mul(g, args[0]) if want[1] else None]
    if op == "div":
        return [A.div(g, args[1]) if want[0] else None,
                A.neg(A.div(A.mul(g, out), args[1])) if want[1] else None]
    if op == "scale":
        return [A.scale(g, payload)]
    if op == "matmul":
        return [A.matmul_nt(g, args[1]) if want[0] else None,
                A.matmul_tn(args[0], g) if want[1] else None]
    if op == "matmul_nt":
        return [A.matmul(g, args[1]) if want[0] else None,
                A.matmul_tn(g, args[0]) if want[1] else None]
    if op == "matmul_tn":
        return [A.matmul_nt(args[1], g) if want[0] else None,
                A.matmul(args[0], g) if want[1] else None]
    if op == "affine":
        return [A.matmul_nt(g, args[1]) if want[0] else None,
                A.matmul_tn(args[0], g) if want[1] else None,
                A.sum_rows(g) if want[2] else None]
    if op == "transpose":
        return [A.transpose(g)]
    if op == "ew":
        family, order, base = payload
        return [A.mul(g, A.ew_with_base(args[0], family, order + 1, base))]
    if op == "sum_all":
        return [A.bcast_full(g, A.shape_of(args[0]))]
    if op == "sum_rows":
        return [A.bcast_rows(g, A.shape_of(args[0])[0])]
    if op == "bcast_full":
        return [A.sum_all(g)]
    if op == "bcast_rows":
        return [A.sum_rows(g)]
    if op in ("maxpool_rows", "gather_cols"):
        idx = payload
        return [A.scatter_cols(g, idx, A.shape_of(args[0])[0])]
    if op == "scatter_cols":
        return [A.gather_cols(g, payload[0])]
    if op == "concat_cols":
        return [A.slice_cols(g, payload[i], payload[i + 1]) if want[i] else None
                for i in range(len(args))]
    if op == "slice_cols":
        return [A.pad_cols(g, payload[0], A.shape_of(args[0])[1])]
    if op == "pad_cols":
        j0 = payload[0]
        return [A.slice_cols(g, j0, j0 + A.shape_of(args[0])[1])]
    if op == "gather_rows":
        return [A.scatter_rows(g, payload, A.shape_of(args[0])[0])]
    if op == "scatter_rows":
        return [A.gather_rows(g, payload[0])]
    if op == "reshape":
        return [A.reshape(g, A.shape_of(args[0]))]
    raise AutodiffError(f"no adjoint rule for primitive '{op}'")


def _reaches_wanted(tape, end, wrt):
    """Mark nodes from which a requested leaf is reachable backward."""
    needed = bytearray(end + 1)
    for w in wrt:
        if w.idx <= end:
            needed[w.idx] = 1
    nodes = tape.nodes
    for i in range(end + 1):
        node = nodes[i]
        if node.op in Tape.LEAF_OPS or needed[i]:
            continue
        for a in node.args:
            if needed[a.idx]:
                needed[i] = 1
                break
    return needed


def grad_vars(output, wrt, cotangent=None):
    """Reverse sweep that emits nodes: gradients stay differentiable.

    Returns one Var per entry of ``wrt`` holding the adjoint of
    ``output`` seeded with ``cotangent`` (ones by default).
    """
    tape = output.tape
    if cotangent is None:
        cotangent = tape.constant(np.ones(output.shape))
    if cotangent.shape != output.shape:
        raise ShapeError("cotangent", [cotangent.shape, output.shape])
    needed = _reaches_wanted(tape, output.idx, wrt)
    adjoint = {output.idx: cotangent}
    for i in range(output.idx, -1, -1):
        node = tape.nodes[i]
        if node.op in Tape.LEAF_OPS:
            continue
        g = adjoint.pop(i, None)
        if g is None:
            continue
        want = [needed[a.idx] != 0 for a in node.args]
        if not any(want):
            continue
        contribs = _vjp(_VarAlgebra, node.op, node.args, node.payload, node,
                        g, want)
        for inp, c in zip(node.args, contribs):
            if c is None:
                continue
            prev = adjoint.get(inp.idx)
            adjoint[inp.idx] = c if prev is None else prev + c
    out = []
    for w in wrt:
        got = adjoint.get(w.idx)
        out.append(got if got is not None else tape.constant(np.zeros(w.shape)))
    return out


def _backward_numeric(output, wrt, cotangent=None):
    """Plain-array reverse sweep; fast, frees adjoints as it goes."""
    tape = output.tape
    if cotangent is None:
        cotangent = np.ones(output.shape)
    needed = _reaches_wanted(tape, output.idx, wrt)
    adjoint = {output.idx: cotangent}
    wanted = {w.idx for w in wrt}
    for i in range(output.idx, -1, -1):
        node = tape.nodes[i]
        g = adjoint.get(i)
        if i not in wanted:
            adjoint.pop(i, None)
        if g is None or node.op in Tape.LEAF_OPS:
            continue
        want = [needed[a.idx] != 0 for a in node.args]
        if not any(want):
            continue
        vals = [a.value for a in node.args]
        contribs = _vjp(_ArrayAlgebra, node.op, vals, node.payload,
                        node.value, g, want)
        for inp, c in zip(node.args, contribs):
            if c is None:
                continue
            prev = adjoint.get(inp.idx)
            adjoint[inp.idx] = c if prev is None else prev + c
    return [adjoint.get(w.idx, np.zeros(w.shape)) for w in wrt]


def _jvp(node, tangents):
    """Tangent of one node given tangents of its inputs (None = zero)."""
    op, payload, args = node.op, node.payload, node.args
    t = tangents

    if op == "add":
        if t[0] is None:
            return t[1]
        return t[0] if t[1] is None else t[0] + t[1]
    if op == "sub":
        if t[0] is None:
            return -t[1]
        return t[0] if t[1] is None else t[0] - t[1]
    if op == "neg":
        return -t[0]
    if op == "mul":
        a, b = args
        parts = []
        if t[0] is not None:
            parts.append(node.tape._emit("mul", (t[0], b)))
        if t[1] is not None:
            parts.append(node.tape._emit("mul", (a, t[1])))
        return parts[0] if len(parts) == 1 else parts[0] + parts[1]
    if op == "div":
        b = args[1]
        first = node.tape._emit("div", (t[0], b)) if t[0] is not None else None
        if t[1] is None:
            return first
        second = node.tape._emit("mul", (node, node.tape._emit("div", (t[1], b))))
        return -second if first is None else first - second
    if op == "scale":
        return scale(t[0], payload)
    if op in ("matmul", "matmul_nt", "matmul_tn"):
        emit = node.tape._emit
        parts = []
        if t[0] is not None:
            parts.append(emit(op, (t[0], args[1])))
        if t[1] is not None:
            parts.append(emit(op, (args[0], t[1])))
        return parts[0] if len(parts) == 1 else parts[0] + parts[1]
    if op == "affine":
        emit = node.tape._emit
        parts = []
        if t[0] is not None:
            parts.append(emit("matmul", (t[0], args[1])))
        if t[1] is not None:
            parts.append(emit("matmul", (args[0], t[1])))
        if t[2] is not None:
            parts.append(broadcast_rows(t[2], node.shape[0]))
        out = parts[0]
        for p in parts[1:]:
            out = out + p
        return out
    if op == "transpose":
        return transpose(t[0])
    if op == "ew":
        family, order, base = payload
        deriv = node.tape._emit("ew", (args[0],), (family, order + 1, base))
        return node.tape._emit("mul", (t[0], deriv))
    if op == "sum_all":
        return sum_all(t[0])
    if op == "sum_rows":
        return sum_rows(t[0])
    if op == "bcast_full":
        return broadcast_full(t[0], payload)
    if op == "bcast_rows":
        return broadcast_rows(t[0], payload)
    if op in ("maxpool_rows", "gather_cols"):
        return _gather_cols(t[0], payload)
    if op == "scatter_cols":
        return _scatter_cols(t[0], payload[0], payload[1])
    if op == "concat_cols":
        tape = node.tape
        parts = [tt if tt is not None else tape.constant(np.zeros(a.shape))
                 for tt, a in zip(t, args)]
        return concat_cols(parts)
    if op == "slice_cols":
        return slice_cols(t[0], payload[0], payload[1])
    if op == "pad_cols":
        return _pad_cols(t[0], payload[0], payload[1])
    if op == "gather_rows":
        return gather_rows(t[0], payload)
    if op == "scatter_rows":
        return _scatter_rows(t[0], payload[0], payload[1])
    if op == "reshape":
        return reshape(t[0], payload)
    raise AutodiffError(f"no tangent rule for primitive '{op}'")


def jvp_vars(outputs, seeds):
    """Forward-mode sweep over the recorded graph.

    ``seeds`` is a list of ``(leaf, tangent_var)`` pairs.  Returns the
    tangent Var of each requested output (zeros if independent).
    """
    tape = outputs[0].tape
    tan = {}
    for leaf, tangent in seeds:
        if tangent.shape != leaf.shape:
            raise ShapeError("jvp seed", [tangent.shape, leaf.shape])
        tan[leaf.idx] = tangent
    end = max(o.idx for o in outputs)
    for i in range(end + 1):
        node = tape.nodes[i]
        if node.op in Tape.LEAF_OPS or i in tan:
            continue
        if not any(a.idx in tan for a in node.args):
            continue
        t = _jvp(node, [tan.get(a.idx) for a in node.args])
        if t is not None:
            tan[i] = t
    out = []
    for o in outputs:
        got = tan.get(o.idx)
        out.append(got if got is not None else tape.constant(np.zeros(o.shape)))
    return out


# ---------------------------------------------------------------------------
# user-facing entry points


def evaluate(f, inputs, check_nan=True):
    """Run ``f`` over fresh input leaves and return its value array."""
    tape = Tape(check_nan=check_nan)
    vars_ = [tape.input(x) for x in inputs]
    return f(*vars_).value


def gradient(f, inputs):
    """Reverse-mode gradient of a scalar-valued computation.

    Returns one array per input, each holding d(f)/d(input element).
    """
    tape = Tape()
    vars_ = [tape.input(x) for x in inputs]
    out = f(*vars_)
    if out.value.size != 1:
        raise NonScalarError(
            f"gradient needs a scalar output, got shape {out.shape}")
    return _backward_numeric(out, vars_)


def second_directional(f, x, axis):
    """Per-point second derivative along one coordinate axis.

    ``f`` maps an ``(N, d)`` cloud Var to an ``(N, 1)`` per-point output.
    The reverse sweep is seeded with ones over all points, then a
    forward-mode pass with a unit tangent on column ``axis`` of every
    point differentiates the gradient graph.  Because the sweeps span
    the whole tape, contributions routed through cross-point structure
    (the max-pool) are included.
    """
    tape = Tape()
    xv = tape.input(x)
    y = f(xv)
    if y.shape != (xv.shape[0], 1):
        raise ShapeError("second_directional output", [y.shape])
    if not 0 <= axis < xv.shape[1]:
        raise ShapeError("second_directional axis", [xv.shape, axis])
    [g] = grad_vars(y, [xv])
    tangent = np.zeros(xv.shape)
    tangent[:, axis] = 1.0
    [gdot] = jvp_vars([g], [(xv, tape.constant(tangent))])
    return gdot.value[:, axis:axis + 1].copy()


def fd_check(f, x, step=1e-4):
    """Worst relative discrepancy of AD first/second derivatives against
    central finite differences.

    ``f`` maps an ``(N, d)`` Var to an ``(N, 1)`` per-point output whose
    row i depends only on input row i (true for pointwise networks).
    Relative error is measured against ``max(1, |fd|)`` elementwise.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = as_matrix(x)
    n, d = x.shape

    tape = Tape()
    xv = tape.input(x)
    y = f(xv)
    [ad_grad] = _backward_numeric(y, [xv])
    ad_second = np.column_stack(
        [second_directional(f, x, a).ravel() for a in range(d)])

    y0 = evaluate(f, [x]).ravel()
    worst = 0.0
    for i in range(n):
        for a in range(d):
            e = np.zeros_like(x)
            e[i, a] = step
            yp = evaluate(f, [x + e]).ravel()
            ym = evaluate(f, [x - e]).ravel()
            fd_g = (yp.sum() - ym.sum()) / (2.0 * step)
            fd_h = (yp[i] - 2.0 * y0[i] + ym[i]) / step ** 2
            worst = max(worst,
                        abs(ad_grad[i, a] - fd_g) / max(1.0, abs(fd_g)),
                        abs(ad_second[i, a] - fd_h) / max(1.0, abs(fd_h)))
    return worst


# ---------------------------------------------------------------------------
# dual numbers (scalar forward mode; nesting gives exact higher derivatives)


class Dual:
    """Scalar dual number (primal, tangent) obeying the chain rule.

    Components may themselves be Dual, so nested values yield exact
    second and third derivatives; the test suite uses this as an
    independent oracle for the kernel derivative families.
    """

    __slots__ = ("primal", "tangent")

    def __init__(self, primal, tangent=0.0):
        self.primal = primal
        self.tangent = tangent

    @staticmethod
    def _co(x):
        return x if isinstance(x, Dual) else Dual(x)

    def __add__(self, other):
        o = Dual._co(other)
        return Dual(self.primal + o.primal, self.tangent + o.tangent)

    __radd__ = __add__

    def __sub__(self, other):
        o = Dual._co(other)
        return Dual(self.primal - o.primal, self.tangent - o.tangent)

    def __rsub__(self, other):
        return Dual._co(other).__sub__(self)

    def __mul__(self, other):
        o = Dual._co(other)
        return Dual(self.primal * o.primal,
                    self.tangent * o.primal + self.primal * o.tangent)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = Dual._co(other)
        q = self.primal / o.primal
        return Dual(q, (self.tangent - q * o.tangent) / o.primal)

    def __rtruediv__(self, other):
        return Dual._co(other).__truediv__(self)

    def __neg__(self):
        return Dual(-self.primal, -self.tangent)


def _chain(x, f, df):
    if isinstance(x, Dual):
        return Dual(_chain(x.primal, f, df), df(x.primal) * x.tangent)
    return f(x)


def dual_exp(x):
    return _chain(x, math.exp, dual_exp)


def dual_sin(x):
    return _chain(x, math.sin, dual_cos)


def dual_cos(x):
    return _chain(x, math.cos, lambda p: -dual_sin(p))


def dual_tanh(x):
    return _chain(x, math.tanh, lambda p: 1.0 - dual_tanh(p) * dual_tanh(p))


def dual_ln1p(x):
    return _chain(x, math.log1p, lambda p: 1.0 / (1.0 + p))


def _softplus_scalar(x):
    return x + math.log1p(math.exp(-x)) if x > 0 else math.log1p(math.exp(x))


def _sigmoid_scalar(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def dual_sigmoid(x):
    return _chain(x, _sigmoid_scalar,
                  lambda p: dual_sigmoid(p) * (1.0 - dual_sigmoid(p)))


def dual_softplus(x):
    return _chain(x, _softplus_scalar, dual_sigmoid)


def dual_mish(x):
    return x * dual_tanh(dual_softplus(x))
