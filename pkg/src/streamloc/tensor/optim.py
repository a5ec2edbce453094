"""Named parameters and the two update rules used in training."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from ..exceptions import StateError
from .autograd import Tensor


class Parameter:
    """A named trainable tensor plus its optimizer buffers."""

    __slots__ = ("name", "value", "optimizer_state")

    def __init__(self, name: str, data: np.ndarray):
        self.name = name
        self.value = Tensor(data, requires_grad=True)
        self.optimizer_state: dict[str, np.ndarray] = {}

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @data.setter
    def data(self, arr: np.ndarray) -> None:
        self.value.data = arr

    @property
    def grad(self) -> np.ndarray | None:
        return self.value.grad

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def zero_grad(self) -> None:
        self.value.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def sgd_step(theta, grad, velocity, lr=1e-4, momentum=0.9, weight_decay=5e-4):
    """Classic momentum with L2 decay folded into the gradient; updates in place.

    ``v <- momentum * v - lr * (g + weight_decay * theta)``; ``theta <- theta + v``.
    """
    velocity *= momentum
    velocity -= lr * (grad + weight_decay * theta)
    theta += velocity
    return theta, velocity


def rmsprop_step(theta, grad, mean_square, lr=1e-4, decay=0.9, epsilon=1e-8):
    """``s <- decay * s + (1 - decay) * g**2``; ``theta <- theta - lr * g / (sqrt(s) + eps)``."""
    mean_square *= decay
    mean_square += (1.0 - decay) * grad * grad
    theta -= lr * grad / (np.sqrt(mean_square) + epsilon)
    return theta, mean_square


class _Optimizer:
    buffer = ""

    def __init__(self, params: Iterable[Parameter]):
        self.params = list(params)
        for p in self.params:
            p.optimizer_state[self.buffer] = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def _buffer(self, p: Parameter) -> np.ndarray:
        buf = p.optimizer_state.get(self.buffer)
        if buf is None or buf.shape != p.shape:
            raise StateError(f"parameter {p.name!r} has no {self.buffer} buffer")
        return buf

    def step(self) -> None:
        for p in self.params:
            buf = self._buffer(p)
            if p.grad is None:
                continue
            self._update(p.data, p.grad, buf)

    def _update(self, theta, grad, buf) -> None:
        raise NotImplementedError


class SGD(_Optimizer):
    buffer = "momentum"

    def __init__(self, params, lr=1e-4, momentum=0.9, weight_decay=5e-4):
        super().__init__(params)
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay

    def _update(self, theta, grad, buf):
        sgd_step(theta, grad, buf, self.lr, self.momentum, self.weight_decay)


class RMSProp(_Optimizer):
    buffer = "mean_square"

    def __init__(self, params, lr=1e-4, decay=0.9, epsilon=1e-8):
        super().__init__(params)
        self.lr, self.decay, self.epsilon = lr, decay, epsilon

    def _update(self, theta, grad, buf):
        rmsprop_step(theta, grad, buf, self.lr, self.decay, self.epsilon)
