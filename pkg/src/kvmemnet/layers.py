"""Parameterized layers built on the tape: affine maps, token embeddings, a
gated recurrent cell with an optional context block, and fused softmax
cross-entropy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import Tape, Tensor, _accum

# Reserved token ids, fixed for every vocabulary.
PAD = 0
BOS = 1
EOS = 2
UNK = 3


@dataclass
class LstmParams:
    """Gate parameters for the recurrent cell.

    ``W_*`` act on the previous hidden state, ``U_*`` on the step input and
    ``b_*`` are biases. The optional ``A_*`` block mixes a per-step context
    vector into every gate; either all four context matrices are present or
    none are.
    """

    W_i: Tensor
    W_f: Tensor
    W_o: Tensor
    W_c: Tensor
    U_i: Tensor
    U_f: Tensor
    U_o: Tensor
    U_c: Tensor
    b_i: Tensor
    b_f: Tensor
    b_o: Tensor
    b_c: Tensor
    A_i: Tensor | None = None
    A_f: Tensor | None = None
    A_o: Tensor | None = None
    A_c: Tensor | None = None

    @property
    def has_context(self) -> bool:
        return self.A_i is not None

    @property
    def hidden_size(self) -> int:
        return self.W_i.dims[0]

    def validate(self) -> None:
        h = self.W_i.dims[0]
        for m in (self.W_i, self.W_f, self.W_o, self.W_c):
            if m.dims != (h, h):
                raise ShapeError(f"recurrent matrix dims {m.dims}, expected {(h, h)}")
        d_in = self.U_i.dims[1]
        for m in (self.U_i, self.U_f, self.U_o, self.U_c):
            if m.dims != (h, d_in):
                raise ShapeError(f"input matrix dims {m.dims}, expected {(h, d_in)}")
        for b in (self.b_i, self.b_f, self.b_o, self.b_c):
            if b.dims != (h,):
                raise ShapeError(f"bias dims {b.dims}, expected {(h,)}")
        ctx = [self.A_i, self.A_f, self.A_o, self.A_c]
        present = [m is not None for m in ctx]
        if any(present) and not all(present):
            raise ShapeError("context matrices must be all present or all absent")
        if all(present):
            d_ctx = ctx[0].dims[1]
            for m in ctx:
                if m.dims != (h, d_ctx):
                    raise ShapeError(f"context matrix dims {m.dims}, expected {(h, d_ctx)}")

    def tensors(self) -> list[Tensor]:
        out = [
            self.W_i, self.W_f, self.W_o, self.W_c,
            self.U_i, self.U_f, self.U_o, self.U_c,
            self.b_i, self.b_f, self.b_o, self.b_c,
        ]
        if self.has_context:
            out += [self.A_i, self.A_f, self.A_o, self.A_c]
        return out


def lstm_step(
    tape: Tape,
    p: LstmParams,
    h_prev: Tensor,
    c_prev: Tensor,
    x: Tensor,
    context: Tensor | None = None,
    output_tanh: bool = False,
) -> tuple[Tensor, Tensor]:
    """One cell update; returns (h_t, c_t).

    By default the new hidden state is o_t * c_t, the printed form of the
    recurrence this model uses; ``output_tanh=True`` switches to the common
    o_t * tanh(c_t) variant.
    """
    if (context is not None) != p.has_context:
        raise ShapeError("context vector and context matrices must match")

    def gate(W, U, A, b):
        terms = [tape.matmul(W, h_prev), tape.matmul(U, x)]
        if A is not None:
            terms.append(tape.matmul(A, context))
        terms.append(b)
        return tape.add(*terms)

    i = tape.sigmoid(gate(p.W_i, p.U_i, p.A_i, p.b_i))
    f = tape.sigmoid(gate(p.W_f, p.U_f, p.A_f, p.b_f))
    o = tape.sigmoid(gate(p.W_o, p.U_o, p.A_o, p.b_o))
    c_hat = tape.tanh(gate(p.W_c, p.U_c, p.A_c, p.b_c))
    c = tape.add(tape.mul(i, c_hat), tape.mul(f, c_prev))
    h = tape.mul(o, tape.tanh(c)) if output_tanh else tape.mul(o, c)
    return h, c


def linear(tape: Tape, W: Tensor, x: Tensor, b: Tensor | None = None) -> Tensor:
    y = tape.matmul(W, x)
    return tape.add(y, b) if b is not None else y


def embed(tape: Tape, table: Tensor, token_id: int) -> Tensor:
    """Differentiable row lookup: the gradient scatters into the table row."""
    if table.data.ndim != 2:
        raise ShapeError("embedding table must be a matrix")
    vocab = table.data.shape[0]
    if not 0 <= token_id < vocab:
        raise ShapeError(f"token id {token_id} outside vocabulary of size {vocab}")
    out = Tensor._wrap(table.data[token_id].copy())

    def bwd(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        table.grad[token_id] += g

    return tape.push("embed", (table,), out, bwd)


def softmax_xent(tape: Tape, logits: Tensor, target_id: int) -> tuple[Tensor, np.ndarray]:
    """Scalar loss -log p[target] with a stable log-sum-exp, plus the
    probability vector (detached) for inspection."""
    if logits.data.ndim != 1:
        raise ShapeError("logits must be a vector")
    vocab = logits.data.shape[0]
    if not 0 <= target_id < vocab:
        raise ShapeError(f"target id {target_id} outside vocabulary of size {vocab}")
    if target_id == PAD:
        raise ShapeError("PAD targets must be masked out by the caller")
    x = logits.data
    m = x.max()
    z = x - m
    ez = np.exp(z)
    total = ez.sum()
    p = ez / total
    loss = Tensor._wrap(np.asarray(np.log(total) - z[target_id]))

    def bwd(g):
        s = float(g)
        gl = p * s
        gl[target_id] -= s
        _accum(logits, gl)

    tape.push("softmax-xent", (logits,), loss, bwd)
    return loss, p.copy()
