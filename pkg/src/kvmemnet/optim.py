"""Adadelta updates, global-norm gradient clipping and parameter init."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import NumericError
from .tensor import Tensor


def init_uniform(rng: np.random.Generator, shape, fan_in: int | None = None) -> np.ndarray:
    """Uniform(-s, s) with s = 1/sqrt(fan_in); fan_in defaults to the last axis."""
    dims = tuple(shape)
    if fan_in is None:
        fan_in = dims[-1]
    s = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-s, s, dims)


@dataclass
class AdadeltaState:
    """Per-parameter running averages of squared gradients and squared deltas."""

    sq_grad: np.ndarray
    sq_delta: np.ndarray

    @classmethod
    def zeros_like(cls, arr: np.ndarray) -> "AdadeltaState":
        return cls(np.zeros_like(arr), np.zeros_like(arr))


def adadelta_update(
    param: np.ndarray,
    grad: np.ndarray,
    state: AdadeltaState,
    rho: float = 0.95,
    eps: float = 1e-6,
) -> np.ndarray:
    """Apply one update in place and return the delta that was added.

    The decay of both accumulators happens even for zero gradients, so the
    parameter is left unchanged in that case but the state still relaxes.
    """
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient passed to adadelta_update")
    state.sq_grad *= rho
    state.sq_grad += (1.0 - rho) * grad * grad
    delta = -np.sqrt(state.sq_delta + eps) / np.sqrt(state.sq_grad + eps) * grad
    state.sq_delta *= rho
    state.sq_delta += (1.0 - rho) * delta * delta
    param += delta
    return delta


class Adadelta:
    """Adadelta over a named parameter registry."""

    def __init__(self, params: Mapping[str, Tensor], rho: float = 0.95, eps: float = 1e-6):
        self.params = params
        self.rho = rho
        self.eps = eps
        self.state = {name: AdadeltaState.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        for name, p in self.params.items():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            adadelta_update(p.data, grad, self.state[name], self.rho, self.eps)
            if not np.all(np.isfinite(p.data)):
                raise NumericError(f"parameter {name} became non-finite")

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, st in self.state.items():
            out[f"opt.sq_grad.{name}"] = st.sq_grad
            out[f"opt.sq_delta.{name}"] = st.sq_delta
        return out

    def load_state_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        for name, st in self.state.items():
            st.sq_grad[...] = arrays[f"opt.sq_grad.{name}"]
            st.sq_delta[...] = arrays[f"opt.sq_delta.{name}"]


def clip_gradients(params: Iterable[Tensor], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm.

    Returns the factor that was applied (1.0 when no clipping happened).
    """
    grads = [p.grad for p in params if p.grad is not None]
    total = 0.0
    for g in grads:
        total += float((g * g).sum())
    norm = math.sqrt(total)
    if not math.isfinite(norm):
        raise NumericError("gradient norm is non-finite")
    if max_norm <= 0 or norm <= max_norm or norm == 0.0:
        return 1.0
    factor = max_norm / norm
    for g in grads:
        g *= factor
    return factor
