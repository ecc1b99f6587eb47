"""Adam optimizer over named parameter collections."""

from __future__ import annotations

import numpy as np

from .tensor import ContractError, Tensor


class Adam:
    """Adam with bias correction; one (m, v) moment pair per parameter.

    ``params`` maps name -> Tensor. The step counter and moment buffers are
    part of the optimizer state and round-trip through checkpoints.
    """

    def __init__(self, params: dict, lr: float = 5e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self) -> None:
        self.t += 1
        adam_step(self.params, self.m, self.v, self.lr, self.beta1, self.beta2,
                  self.eps, self.t)


def adam_step(params: dict, m: dict, v: dict, lr: float, beta1: float,
              beta2: float, eps: float, t: int) -> None:
    """One in-place Adam update on every parameter in ``params``.

    Requires t >= 1 and a populated gradient on every parameter; a missing
    gradient raises :class:`ContractError` naming the parameter.
    """
    if t < 1:
        raise ContractError(f"adam step counter must be >= 1, got {t}")
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"parameter {name!r} has no gradient")
        g = p.grad
        m[name] *= beta1
        m[name] += (1.0 - beta1) * g
        v[name] *= beta2
        v[name] += (1.0 - beta2) * g * g
        p.data -= lr * (m[name] / bc1) / (np.sqrt(v[name] / bc2) + eps)


def named_grads_present(params: dict) -> bool:
    return all(p.grad is not None for p in params.values())
