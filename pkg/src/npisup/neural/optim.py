from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import TrainingDivergenceError


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("learning rate must be >= 0, batch size >= 1, epochs >= 0")
        if self.grad_clip_norm <= 0 or self.eps <= 0:
            raise ValueError("clip norm and eps must be positive")


def clip_by_global_norm(grads, max_norm: float):
    norm = float(np.sqrt(sum(np.sum(g * g) for g in grads)))
    if norm > max_norm:
        scale = max_norm / norm
        return [g * scale for g in grads], norm
    return grads, norm


class Adam:
    """Adaptive-moment optimizer over the parameters of one or more models."""

    def __init__(self, models, cfg: TrainConfig):
        self.models = list(models)
        self.cfg = cfg
        self.params = [p for m in self.models for p in m.params()]
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads) -> float:
        """Apply one update; returns the pre-clipping gradient norm."""
        if len(grads) != len(self.params):
            raise ValueError(f"expected {len(self.params)} gradient arrays, got {len(grads)}")
        if not all(np.all(np.isfinite(g)) for g in grads):
            raise TrainingDivergenceError("non-finite gradient; step rejected")
        c = self.cfg
        grads, norm = clip_by_global_norm(grads, c.grad_clip_norm)
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= c.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + c.eps)
        for model in self.models:
            model.touch()
        return norm


def optimizer_step(model, grads, state: Adam | None, cfg: TrainConfig) -> Adam:
    """Functional wrapper: create the optimizer state on first use, then step."""
    if state is None:
        state = Adam([model], cfg)
    state.step(grads)
    return state
