"""Momentum-free adaptive optimizer with per-parameter second-moment scaling.

Updates divide each gradient by the square root of a bias-corrected running
mean of its square. The learning rate follows a cosine decay over the
configured horizon. Gradients can be clipped by global norm first.
"""

from __future__ import annotations

import numpy as np

from .nn import ParamGroup


class AdaptiveOptimizer:
    def __init__(self, params: ParamGroup, lr: float = 3e-4, beta: float = 0.99,
                 eps: float = 1e-8, total_steps: int | None = None,
                 clip_norm: float | None = None):
        self.params = params
        self.lr = lr
        self.beta = beta
        self.eps = eps
        self.total_steps = total_steps
        self.clip_norm = clip_norm
        self.step_count = 0
        self._second_moment = {name: np.zeros_like(t.data)
                               for name, t in params.items()}

    def current_lr(self) -> float:
        if not self.total_steps:
            return self.lr
        frac = min(self.step_count / self.total_steps, 1.0)
        return self.lr * 0.5 * (1.0 + np.cos(np.pi * frac))

    def _clip(self) -> None:
        if self.clip_norm is None:
            return
        total = 0.0
        for _, t in self.params.items():
            if t.grad is not None:
                total += float((t.grad * t.grad).sum())
        norm = np.sqrt(total)
        if norm > self.clip_norm:
            scale = self.clip_norm / norm
            for _, t in self.params.items():
                if t.grad is not None:
                    t.grad *= scale

    def step(self) -> None:
        self._clip()
        lr = self.current_lr()
        self.step_count += 1
        correction = 1.0 - self.beta ** self.step_count
        for name, t in self.params.items():
            if t.grad is None:
                continue
            v = self._second_moment[name]
            v *= self.beta
            v += (1.0 - self.beta) * t.grad * t.grad
            t.data -= lr * t.grad / (np.sqrt(v / correction) + self.eps)

    def zero_grad(self) -> None:
        for _, t in self.params.items():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        out = {f"opt.{name}.v": v for name, v in self._second_moment.items()}
        out["opt.step"] = np.array([float(self.step_count)])
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name in self._second_moment:
            key = f"opt.{name}.v"
            if key in state:
                self._second_moment[name] = np.asarray(state[key], dtype=np.float64).copy()
        if "opt.step" in state:
            self.step_count = int(state["opt.step"][0])
