"""Adam with decoupled weight decay, the lr schedule, and weight init."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import Tensor


@dataclass
class AdamState:
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(params: dict, state: AdamState, lr: float,
              weight_decay: float = 0.0) -> None:
    """One in-place update of every parameter from its current .grad.

    Weight decay is decoupled: params shrink by lr*wd before the moment
    update, so decay never leaks into the moment estimates. Parameters with
    a missing gradient are an error; a zero gradient is fine (fixed point
    when wd = 0).
    """
    state.step_count += 1
    t = state.step_count
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    for name in params:
        p = params[name]
        if p.grad is None:
            raise ValueError(f"adam_step: parameter {name!r} has no gradient")
        g = p.grad
        if g.shape != p.data.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} does not "
                             f"match parameter {name!r} {p.data.shape}")
        if weight_decay:
            p.data *= 1.0 - lr * weight_decay
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.first_moment[name] = m
        state.second_moment[name] = v
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.data -= lr * m_hat / np.sqrt(v_hat + eps)


def lr_decay(lr: float, epoch: int, rate: float) -> float:
    """Exponential per-epoch schedule: lr * rate**epoch."""
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"decay rate must be in (0, 1], got {rate}")
    return lr * rate ** epoch


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape=None, dtype=np.float32) -> Tensor:
    """Uniform(-a, a) weight with a = sqrt(6 / (fan_in + fan_out))."""
    if shape is None:
        shape = (fan_in, fan_out)
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    data = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


def zeros_param(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def ones_param(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)
