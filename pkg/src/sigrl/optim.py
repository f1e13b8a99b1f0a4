"""AdamW with decoupled weight decay, plus the cosine learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, GradientError


def lr_schedule(step: int, total_steps: int, base: float = 1e-4, min_lr: float = 1e-7) -> float:
    """Cosine decay from base to min_lr. Endpoints are returned exactly."""
    if total_steps < 1:
        raise ConfigError(f"total steps must be >= 1, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    if not 0.0 < min_lr <= base:
        raise ConfigError(f"need 0 < min_lr <= base, got base={base} min_lr={min_lr}")
    if step == 0:
        return base
    if step == total_steps:
        return min_lr
    return min_lr + 0.5 * (base - min_lr) * (1.0 + math.cos(math.pi * step / total_steps))


class AdamW:
    """Decoupled-decay Adam over named tensors.

    Decay multiplies the parameter by (1 - lr*wd) before the adaptive update,
    so a zero-gradient parameter still shrinks by exactly that factor.
    """

    def __init__(
        self,
        named_params,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.05,
    ):
        self.params = list(named_params)
        if not self.params:
            raise ConfigError("optimizer needs at least one parameter")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ConfigError(f"betas must lie in [0, 1), got ({beta1}, {beta2})")
        if eps <= 0.0 or weight_decay < 0.0:
            raise ConfigError("eps must be positive and weight decay non-negative")
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.first_moment = {n: np.zeros_like(t.data) for n, t in self.params}
        self.second_moment = {n: np.zeros_like(t.data) for n, t in self.params}

    def step(self, lr: float) -> None:
        if lr < 0.0:
            raise ConfigError(f"learning rate must be non-negative, got {lr}")
        self.step_count += 1
        bias1 = 1.0 - self.beta1**self.step_count
        bias2 = 1.0 - self.beta2**self.step_count
        for name, tensor in self.params:
            grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
            if not np.isfinite(grad).all():
                raise GradientError(f"non-finite gradient in parameter group {name!r}")
            m = self.first_moment[name]
            v = self.second_moment[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            tensor.data = tensor.data * (1.0 - lr * self.weight_decay)
            tensor.data -= lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
