"""Dense float64 tensors recorded on a define-by-run tape.

The op catalogue is deliberately small: matmul, add (n-ary same-shape, plus a
vector-over-rows broadcast), elementwise multiply, tanh, sigmoid, softmax over
the last axis, concat along the last axis, weighted-sum of a vector list,
mean over the first axis, log, negate and sum. Every op appends a node to the
tape; ``Tape.backward`` then visits the nodes in strict reverse insertion
order and accumulates gradients additively into each tensor it reaches, so
fan-out works without any bookkeeping by the caller.

Tapes are cheap single-use objects: a fresh graph is built for every step and
thrown away after ``backward``.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NumericError, ShapeError, StateError

Array = np.ndarray


def _finite(arr: Array) -> bool:
    # sum() is non-finite iff some entry is; values here are far from the
    # float64 overflow threshold, so the proxy never false-alarms.
    return math.isfinite(float(arr.sum()))


class Tensor:
    """An n-dimensional float64 array with an optional accumulated gradient.

    Leaves (parameters and per-step inputs) are constructed directly and own
    a copy of their data. Op outputs are produced by ``Tape`` methods.
    """

    __slots__ = ("data", "grad", "name")

    def __init__(self, data, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.size == 0:
            raise ShapeError("tensors must have at least one entry")
        if not _finite(arr):
            raise NumericError(f"tensor {name or '<anonymous>'} has non-finite entries")
        self.data = arr
        self.grad: Array | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: Array) -> "Tensor":
        # Internal fast path for op outputs; finiteness is checked by the tape.
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.name = None
        return t

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    def numel(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(dims={self.dims})"


def zeros(shape, name: str | None = None) -> Tensor:
    return Tensor(np.zeros(shape), name=name)


def _accum(t: Tensor, g: Array) -> None:
    if t.grad is None:
        t.grad = np.array(g)  # own a copy: g may be a view or a shared array
    else:
        t.grad += g


class Node:
    __slots__ = ("op", "inputs", "out", "bwd")

    def __init__(self, op: str, inputs: tuple, out: Tensor, bwd: Callable[[Array], None]):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.bwd = bwd


class Tape:
    """Execution-ordered record of ops, replayed backwards for gradients."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._used = False

    def __len__(self) -> int:
        return len(self.nodes)

    def push(self, op: str, inputs: Iterable[Tensor], out: Tensor, bwd: Callable[[Array], None]) -> Tensor:
        """Append a custom differentiable node; extension point for layers."""
        self.nodes.append(Node(op, tuple(inputs), out, bwd))
        return out

    def _emit(self, op: str, data: Array, inputs: tuple, bwd) -> Tensor:
        if not _finite(data):
            raise NumericError(f"non-finite output of {op} (node {len(self.nodes)})")
        return self.push(op, inputs, Tensor._wrap(data), bwd)

    # --- op catalogue -----------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        ad, bd = a.data, b.data
        if ad.ndim == 2 and bd.ndim == 2:
            if ad.shape[1] != bd.shape[0]:
                raise ShapeError(f"matmul: {ad.shape} x {bd.shape}")

            def bwd(g):
                _accum(a, g @ bd.T)
                _accum(b, ad.T @ g)

        elif ad.ndim == 2 and bd.ndim == 1:
            if ad.shape[1] != bd.shape[0]:
                raise ShapeError(f"matmul: {ad.shape} x {bd.shape}")

            def bwd(g):
                _accum(a, np.outer(g, bd))
                _accum(b, ad.T @ g)

        elif ad.ndim == 1 and bd.ndim == 2:
            if ad.shape[0] != bd.shape[0]:
                raise ShapeError(f"matmul: {ad.shape} x {bd.shape}")

            def bwd(g):
                _accum(a, bd @ g)
                _accum(b, np.outer(ad, g))

        elif ad.ndim == 1 and bd.ndim == 1:
            # dot product, kept as a length-1 vector so it can be concatenated
            if ad.shape[0] != bd.shape[0]:
                raise ShapeError(f"matmul: {ad.shape} x {bd.shape}")

            def bwd(g):
                s = g[0]
                _accum(a, s * bd)
                _accum(b, s * ad)

            return self._emit("matmul", np.asarray([ad @ bd]), (a, b), bwd)
        else:
            raise ShapeError(f"matmul: unsupported ranks {ad.ndim} and {bd.ndim}")
        return self._emit("matmul", ad @ bd, (a, b), bwd)

    def add(self, *xs: Tensor) -> Tensor:
        if len(xs) < 2:
            raise ShapeError("add needs at least two inputs")
        shape = xs[0].data.shape
        if all(x.data.shape == shape for x in xs[1:]):
            out = xs[0].data.copy()
            for x in xs[1:]:
                out += x.data

            def bwd(g):
                for x in xs:
                    _accum(x, g)

            return self._emit("add", out, xs, bwd)
        if len(xs) == 2:
            m, v = xs
            if m.data.ndim == 2 and v.data.ndim == 1 and m.data.shape[1] == v.data.shape[0]:
                def bwd(g):
                    _accum(m, g)
                    _accum(v, g.sum(axis=0))

                return self._emit("add", m.data + v.data, xs, bwd)
        raise ShapeError(f"add: incompatible shapes {[x.data.shape for x in xs]}")

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.shape != b.data.shape:
            raise ShapeError(f"elementwise-multiply: {a.data.shape} vs {b.data.shape}")
        ad, bd = a.data, b.data

        def bwd(g):
            _accum(a, g * bd)
            _accum(b, g * ad)

        return self._emit("elementwise-multiply", ad * bd, (a, b), bwd)

    def tanh(self, x: Tensor) -> Tensor:
        y = np.tanh(x.data)

        def bwd(g):
            _accum(x, g * (1.0 - y * y))

        return self._emit("tanh", y, (x,), bwd)

    def sigmoid(self, x: Tensor) -> Tensor:
        # (1 + tanh(x/2)) / 2 is the logistic function, stable for any x
        y = 0.5 * (1.0 + np.tanh(0.5 * x.data))

        def bwd(g):
            _accum(x, g * y * (1.0 - y))

        return self._emit("sigmoid", y, (x,), bwd)

    def softmax(self, x: Tensor) -> Tensor:
        xd = x.data
        if xd.ndim == 0:
            raise ShapeError("softmax needs at least one axis")
        m = xd.max(axis=-1, keepdims=True)
        e = np.exp(xd - m)
        y = e / e.sum(axis=-1, keepdims=True)

        def bwd(g):
            dot = (g * y).sum(axis=-1, keepdims=True)
            _accum(x, y * (g - dot))

        return self._emit("softmax", y, (x,), bwd)

    def concat(self, *xs: Tensor) -> Tensor:
        if not xs:
            raise ShapeError("concat needs at least one input")
        nd = xs[0].data.ndim
        if nd not in (1, 2) or any(x.data.ndim != nd for x in xs):
            raise ShapeError("concat: inputs must all be rank 1 or all rank 2")
        if nd == 2 and len({x.data.shape[0] for x in xs}) != 1:
            raise ShapeError("concat: leading dimensions differ")
        out = np.concatenate([x.data for x in xs], axis=-1)
        sizes = [x.data.shape[-1] for x in xs]

        def bwd(g):
            ofs = 0
            for x, s in zip(xs, sizes):
                _accum(x, g[..., ofs : ofs + s])
                ofs += s

        return self._emit("concat", out, xs, bwd)

    def weighted_sum(self, weights: Tensor, vectors: Sequence[Tensor]) -> Tensor:
        vectors = tuple(vectors)
        wd = weights.data
        if wd.ndim != 1:
            raise ShapeError("weighted-sum: weights must be a vector")
        if not vectors or len(vectors) != wd.shape[0]:
            raise ShapeError(f"weighted-sum: {wd.shape[0]} weights vs {len(vectors)} vectors")
        shape = vectors[0].data.shape
        if len(shape) != 1 or any(v.data.shape != shape for v in vectors):
            raise ShapeError("weighted-sum: vectors must share one 1-d shape")
        stacked = np.stack([v.data for v in vectors])

        def bwd(g):
            _accum(weights, stacked @ g)
            for i, v in enumerate(vectors):
                _accum(v, wd[i] * g)

        return self._emit("weighted-sum", wd @ stacked, (weights,) + vectors, bwd)

    def mean(self, x: Tensor) -> Tensor:
        xd = x.data
        if xd.ndim == 0:
            raise ShapeError("mean needs at least one axis")
        n = xd.shape[0]

        def bwd(g):
            _accum(x, np.broadcast_to(g / n, xd.shape))

        return self._emit("mean", np.asarray(xd.mean(axis=0)), (x,), bwd)

    def log(self, x: Tensor) -> Tensor:
        with np.errstate(divide="ignore", invalid="ignore"):
            y = np.log(x.data)

        def bwd(g):
            _accum(x, g / x.data)

        return self._emit("log", y, (x,), bwd)

    def negate(self, x: Tensor) -> Tensor:
        def bwd(g):
            _accum(x, -g)

        return self._emit("negate", -x.data, (x,), bwd)

    def sum(self, x: Tensor) -> Tensor:
        xd = x.data

        def bwd(g):
            _accum(x, np.broadcast_to(g, xd.shape))

        return self._emit("sum", np.asarray(xd.sum()), (x,), bwd)

    def apply(self, kind: str, *inputs: Tensor) -> Tensor:
        """Dispatch an op by its catalogue name."""
        if kind == "weighted-sum":
            return self.weighted_sum(inputs[0], inputs[1:])
        try:
            fn = _CATALOGUE[kind]
        except KeyError:
            raise ShapeError(f"unknown op kind {kind!r}") from None
        return fn(self, *inputs)

    # --- reverse pass -----------------------------------------------------

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(tensor) into .grad for every reachable tensor."""
        if self._used:
            raise StateError("backward already ran on this tape; build a fresh graph")
        if loss.data.size != 1:
            raise ShapeError(f"loss must be scalar, got dims {loss.dims}")
        self._used = True
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            node.bwd(g)


_CATALOGUE = {
    "matmul": Tape.matmul,
    "add": Tape.add,
    "elementwise-multiply": Tape.mul,
    "tanh": Tape.tanh,
    "sigmoid": Tape.sigmoid,
    "softmax": Tape.softmax,
    "concat": Tape.concat,
    "mean": Tape.mean,
    "log": Tape.log,
    "negate": Tape.negate,
    "sum": Tape.sum,
}


def _loss_value(build: Callable[[], tuple[Tape, Tensor]]) -> float:
    _, loss = build()
    v = float(loss.data)
    if not math.isfinite(v):
        raise NumericError("loss became non-finite at a perturbed point")
    return v


def grad_check(build: Callable[[], tuple[Tape, Tensor]], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``build`` must deterministically construct a fresh tape and return
    ``(tape, loss)`` reading the current values of ``params``. The error for
    each entry is |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    for p in params:
        p.grad = None
    tape, loss = build()
    if loss.data.size != 1:
        raise ShapeError("grad_check needs a scalar loss")
    tape.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        aflat = ana.reshape(-1)
        for i in range(flat.size):
            kept = flat[i]
            flat[i] = kept + eps
            up = _loss_value(build)
            flat[i] = kept - eps
            down = _loss_value(build)
            flat[i] = kept
            numeric = (up - down) / (2.0 * eps)
            a = aflat[i]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if err > worst:
                worst = err
    return worst
