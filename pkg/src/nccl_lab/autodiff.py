"""Minimal reverse-mode autodiff over dense float64 arrays.

A :class:`Tape` records every forward op in insertion order; :func:`backward`
replays the records strictly in reverse, accumulating vector-Jacobian
products. One tape per training step, discarded after backward. No
broadcasting beyond scalar-times-tensor and the explicit ``add_bias`` op;
anything else requires an explicit ``reshape``/``transpose``.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when op inputs have incompatible shapes."""


class Tensor:
    """A dense float64 array, optionally attached to a tape node."""

    __slots__ = ("values", "node_id")

    def __init__(self, values, node_id: int | None = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, node_id={self.node_id})"


class _Node:
    __slots__ = ("op", "inputs", "vjp")

    def __init__(self, op: str, inputs: list[int], vjp):
        self.op = op
        self.inputs = inputs
        self.vjp = vjp


def _shape_err(op: str, *shapes) -> ShapeError:
    return ShapeError(f"{op}: incompatible shapes {[tuple(s) for s in shapes]}")


class Tape:
    """Append-only op record. Single-owner, single-threaded."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __len__(self):
        return len(self._nodes)

    def _record(self, op: str, value, inputs: Sequence[Tensor], vjp) -> Tensor:
        value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise FloatingPointError(f"{op}: non-finite values in output")
        node = _Node(op, [t.node_id for t in inputs], vjp)
        self._nodes.append(node)
        return Tensor(value, node_id=len(self._nodes) - 1)

    def _lift(self, x) -> Tensor:
        """Attach a value to this tape as a leaf if it is not already a node."""
        if isinstance(x, Tensor) and x.node_id is not None:
            return x
        return self.leaf(x.values if isinstance(x, Tensor) else x)

    # -- leaves ------------------------------------------------------------

    def leaf(self, values) -> Tensor:
        return self._record("leaf", values, [], None)

    def constant(self, values) -> Tensor:
        # Constants are leaves too; their gradients are computed and ignored.
        return self._record("const", values, [], None)

    # -- ops ---------------------------------------------------------------

    def matmul(self, a, b) -> Tensor:
        a, b = self._lift(a), self._lift(b)
        if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
            raise _shape_err("matmul", a.shape, b.shape)
        av, bv = a.values, b.values

        def vjp(g):
            return [g @ bv.T, av.T @ g]

        return self._record("matmul", av @ bv, [a, b], vjp)

    def transpose(self, a) -> Tensor:
        a = self._lift(a)
        if a.values.ndim != 2:
            raise _shape_err("transpose", a.shape)
        return self._record("transpose", a.values.T, [a], lambda g: [g.T])

    def _binary(self, op: str, a, b, fwd, vjp_factory) -> Tensor:
        a, b = self._lift(a), self._lift(b)
        if a.shape != b.shape:
            raise _shape_err(op, a.shape, b.shape)
        return self._record(op, fwd(a.values, b.values), [a, b],
                            vjp_factory(a.values, b.values))

    def add(self, a, b) -> Tensor:
        return self._binary("add", a, b, np.add,
                            lambda av, bv: lambda g: [g, g])

    def sub(self, a, b) -> Tensor:
        return self._binary("sub", a, b, np.subtract,
                            lambda av, bv: lambda g: [g, -g])

    def mul(self, a, b) -> Tensor:
        return self._binary("mul", a, b, np.multiply,
                            lambda av, bv: lambda g: [g * bv, g * av])

    def div(self, a, b) -> Tensor:
        return self._binary("div", a, b, np.divide,
                            lambda av, bv: lambda g: [g / bv, -g * av / bv**2])

    def add_bias(self, x, b) -> Tensor:
        """Row-broadcast add: (n, m) + (m,)."""
        x, b = self._lift(x), self._lift(b)
        if x.values.ndim != 2 or b.values.ndim != 1 or x.shape[1] != b.shape[0]:
            raise _shape_err("add_bias", x.shape, b.shape)
        return self._record("add_bias", x.values + b.values, [x, b],
                            lambda g: [g, g.sum(axis=0)])

    def scale(self, x, c: float) -> Tensor:
        x = self._lift(x)
        c = float(c)
        return self._record("scale", x.values * c, [x], lambda g: [g * c])

    def add_const(self, x, c: float) -> Tensor:
        x = self._lift(x)
        return self._record("add_const", x.values + float(c), [x],
                            lambda g: [g])

    def relu(self, x) -> Tensor:
        x = self._lift(x)
        mask = x.values > 0
        return self._record("relu", x.values * mask, [x],
                            lambda g: [g * mask])

    def exp(self, x) -> Tensor:
        x = self._lift(x)
        out = np.exp(x.values)
        return self._record("exp", out, [x], lambda g: [g * out])

    def log(self, x) -> Tensor:
        x = self._lift(x)
        if np.any(x.values <= 0):
            raise ValueError("log: non-positive input")
        xv = x.values
        return self._record("log", np.log(xv), [x], lambda g: [g / xv])

    def pow_const(self, x, p: float) -> Tensor:
        x = self._lift(x)
        p = float(p)
        xv = x.values
        if p == 0.0:
            return self._record("pow_const", np.ones_like(xv), [x],
                                lambda g: [np.zeros_like(g)])

        def vjp(g):
            return [g * p * xv ** (p - 1.0)]

        return self._record("pow_const", xv ** p, [x], vjp)

    def clip_max(self, x, hi: float) -> Tensor:
        x = self._lift(x)
        mask = x.values <= float(hi)
        return self._record("clip_max", np.minimum(x.values, hi), [x],
                            lambda g: [g * mask])

    def sum(self, x, axis: int | None = None) -> Tensor:
        x = self._lift(x)
        xv = x.values

        if axis is None:
            return self._record("sum", xv.sum(), [x],
                                lambda g: [np.full_like(xv, g)])
        if xv.ndim != 2 or axis not in (0, 1):
            raise _shape_err("sum", xv.shape)

        def vjp(g):
            return [np.broadcast_to(np.expand_dims(g, axis), xv.shape).copy()]

        return self._record("sum", xv.sum(axis=axis), [x], vjp)

    def reshape(self, x, shape) -> Tensor:
        x = self._lift(x)
        old = x.shape
        return self._record("reshape", x.values.reshape(shape), [x],
                            lambda g: [g.reshape(old)])

    def inner(self, a, b) -> Tensor:
        a, b = self._lift(a), self._lift(b)
        if a.values.ndim != 1 or a.shape != b.shape:
            raise _shape_err("inner", a.shape, b.shape)
        av, bv = a.values, b.values
        return self._record("inner", av @ bv, [a, b],
                            lambda g: [g * bv, g * av])

    def l2_normalize(self, x) -> Tensor:
        """Normalize a vector, or each row of a matrix, to unit l2 norm."""
        x = self._lift(x)
        xv = x.values
        if xv.ndim == 1:
            norm = np.linalg.norm(xv)
            if norm < 1e-300:
                raise ValueError("l2_normalize: zero norm input")
            y = xv / norm

            def vjp(g):
                return [(g - y * (g @ y)) / norm]

            return self._record("l2_normalize", y, [x], vjp)
        if xv.ndim == 2:
            norms = np.linalg.norm(xv, axis=1, keepdims=True)
            if np.any(norms < 1e-300):
                raise ValueError("l2_normalize: zero norm row")
            y = xv / norms

            def vjp(g):
                dots = (g * y).sum(axis=1, keepdims=True)
                return [(g - y * dots) / norms]

            return self._record("l2_normalize", y, [x], vjp)
        raise _shape_err("l2_normalize", xv.shape)


_OPS: dict[str, str] = {
    "matmul": "matmul", "add": "add", "scale": "scale", "relu": "relu",
    "exp": "exp", "log": "log", "sum": "sum", "mul": "mul",
    "inner": "inner", "l2_normalize": "l2_normalize", "sub": "sub",
    "div": "div", "transpose": "transpose", "pow_const": "pow_const",
    "clip_max": "clip_max", "add_const": "add_const", "reshape": "reshape",
    "add_bias": "add_bias",
}


def forward_op(tape: Tape, kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch a forward op by name; records the result on ``tape``."""
    try:
        method = getattr(tape, _OPS[kind])
    except KeyError:
        raise ValueError(f"unknown op kind: {kind!r}") from None
    return method(*inputs, **kwargs)


class GradientMap:
    """Gradients of a scalar loss, keyed by tape node id."""

    def __init__(self, grads: list[np.ndarray | None], shapes: list[tuple]):
        self._grads = grads
        self._shapes = shapes

    def wrt(self, t: Tensor) -> np.ndarray:
        g = self._grads[t.node_id]
        if g is None:
            return np.zeros(t.shape)
        return g


def backward(tape: Tape, loss: Tensor) -> GradientMap:
    """Reverse accumulation of d(loss)/d(node) for every node on the tape.

    Deterministic: nodes are visited in strict reverse insertion order and
    gradients accumulate in a fixed order, so identical tapes give bitwise
    identical gradients.
    """
    if loss.node_id is None:
        raise ValueError("backward: loss is not on the tape")
    if loss.values.shape != ():
        raise ValueError(f"backward: loss must be scalar, got shape "
                         f"{loss.values.shape}")
    nodes = tape._nodes
    grads: list[np.ndarray | None] = [None] * len(nodes)
    grads[loss.node_id] = np.asarray(1.0)
    shapes = [None] * len(nodes)
    for nid in range(loss.node_id, -1, -1):
        g = grads[nid]
        node = nodes[nid]
        if g is None or node.vjp is None:
            continue
        for inp_id, gin in zip(node.inputs, node.vjp(g)):
            if grads[inp_id] is None:
                grads[inp_id] = gin
            else:
                grads[inp_id] = grads[inp_id] + gin
    return GradientMap(grads, shapes)


def grad_check(f: Callable[[Tape, Tensor], Tensor], x, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps (tape, tensor) to a scalar tensor. Error per coordinate is
    |analytic - central| / max(1, |analytic|).
    """
    x0 = np.asarray(x.values if isinstance(x, Tensor) else x, dtype=np.float64)
    tape = Tape()
    xt = tape.leaf(x0)
    out = f(tape, xt)
    if out.values.shape != ():
        raise ValueError("grad_check: f must return a scalar")
    analytic = backward(tape, out).wrt(xt)

    def value_at(xv: np.ndarray) -> float:
        t = Tape()
        v = float(f(t, t.leaf(xv)).values)
        if not np.isfinite(v):
            raise FloatingPointError("grad_check: non-finite f(x +- h)")
        return v

    flat = x0.ravel()
    worst = 0.0
    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += h
        xm[i] -= h
        numeric = (value_at(xp.reshape(x0.shape)) -
                   value_at(xm.reshape(x0.shape))) / (2 * h)
        a = analytic.ravel()[i]
        err = abs(a - numeric) / max(1.0, abs(a))
        worst = max(worst, err)
    return worst
