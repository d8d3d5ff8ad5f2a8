"""Nesterov SGD and a reduce-on-plateau learning-rate schedule."""

from __future__ import annotations

from typing import Dict, List, Optional, Sequence

import numpy as np

from ..autograd import ShapeError, Tensor


class NesterovSGD:
    """``g = grad + wd * p;  v = mu * v + g;  p -= lr * (g + mu * v)``."""

    def __init__(self, params: Sequence[Tensor], lr: float = 0.01, momentum: float = 0.9,
                 weight_decay: float = 1e-4):
        if lr < 0 or not 0 <= momentum < 1 or weight_decay < 0:
            raise ValueError("need lr >= 0, 0 <= momentum < 1, weight_decay >= 0")
        self.params = list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.velocities: List[np.ndarray] = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        mu, wd, lr = self.momentum, self.weight_decay, self.lr
        for p, v in zip(self.params, self.velocities):
            if p.grad is None:
                continue
            if p.grad.shape != p.data.shape:
                raise ShapeError(f"gradient {p.grad.shape} does not match parameter {p.data.shape}")
            g = p.grad + wd * p.data
            v *= mu
            v += g
            p.data -= (lr * (g + mu * v)).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def load_velocities(self, velocities: Sequence[np.ndarray]) -> None:
        if len(velocities) != len(self.velocities):
            raise ValueError("velocity count does not match parameter count")
        for own, src in zip(self.velocities, velocities):
            if np.shape(src) != own.shape:
                raise ShapeError(f"velocity {np.shape(src)} does not match {own.shape}")
            own[...] = src


class PlateauScheduler:
    """Divide the learning rate by ``factor`` once ``patience`` consecutive
    reports fail to beat the best loss by more than ``min_delta``."""

    def __init__(self, optimizer: Optional[NesterovSGD] = None, lr: Optional[float] = None,
                 patience: int = 5, factor: float = 10.0, min_delta: float = 1e-4):
        if patience < 1 or factor <= 1:
            raise ValueError("need patience >= 1 and factor > 1")
        self.optimizer = optimizer
        self.lr = float(lr if lr is not None else (optimizer.lr if optimizer else 0.01))
        self.patience, self.factor, self.min_delta = patience, float(factor), float(min_delta)
        self.best = float("inf")
        self.bad_epochs = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best - self.min_delta:
            self.best = float(val_loss)
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr /= self.factor
                self.bad_epochs = 0
        if self.optimizer is not None:
            self.optimizer.lr = self.lr
        return self.lr

    def state_dict(self) -> Dict[str, float]:
        return {"lr": self.lr, "best": self.best, "bad_epochs": self.bad_epochs}

    def load_state_dict(self, state: Dict[str, float]) -> None:
        self.lr = float(state["lr"])
        self.best = float(state["best"])
        self.bad_epochs = int(state["bad_epochs"])
        if self.optimizer is not None:
            self.optimizer.lr = self.lr
