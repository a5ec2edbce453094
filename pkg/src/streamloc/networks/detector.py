"""Two-layer LSTM detector over concatenated PR/AR features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import DimensionError
from ..tensor import Tensor, dense, dropout, lstm_cell, no_grad
from .module import Module

# Order of the four fc7 blocks in a detector input vector.
FEATURE_ORDER = ("pr_real", "pr_future", "ar_real", "ar_future")


@dataclass(frozen=True)
class DetectorConfig:
    feature_dim: int = 128
    num_classes: int = 3
    lstm_width: int = 128
    num_layers: int = 2
    dropout_p: float = 0.5
    dtype: str = "f32"

    @property
    def input_dim(self) -> int:
        return 4 * self.feature_dim

    @property
    def out_dim(self) -> int:
        return self.num_classes + 1


def concat_features(pr_real, pr_future, ar_real, ar_future) -> np.ndarray:
    """Stack fc7 blocks in :data:`FEATURE_ORDER` along the last axis."""
    return np.concatenate([pr_real, pr_future, ar_real, ar_future], axis=-1)


class Detector(Module):
    """dropout -> LSTM x num_layers -> dropout -> dense(K+1)."""

    kind = "detector"

    def __init__(self, config: DetectorConfig = DetectorConfig(), seed: int = 0):
        super().__init__(config, seed)
        d = config.lstm_width
        din = config.input_dim
        bound = 1.0 / np.sqrt(d)
        for layer in range(config.num_layers):
            self._uniform(f"lstm{layer}.w_x", (4 * d, din), bound)
            self._uniform(f"lstm{layer}.w_h", (4 * d, d), bound)
            b = np.zeros(4 * d)
            b[d : 2 * d] = 1.0
            self._add(f"lstm{layer}.b", b)
            din = d
        self._uniform("out.weight", (config.out_dim, d), bound)
        self._zeros("out.bias", (config.out_dim,))

    def initial_state(self, batch: int = 1) -> list[tuple[Tensor, Tensor]]:
        z = np.zeros((batch, self.config.lstm_width), dtype=self.dtype)
        return [(Tensor(z), Tensor(z)) for _ in range(self.config.num_layers)]

    def step(self, x: Tensor, state, mode: str = "eval", rng: np.random.Generator | None = None):
        """One time step on ``x: [N, 4F]``; returns ``(logits [N, K+1], new_state)``."""
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise DimensionError(
                f"detector: feature length {x.shape[-1]} != 4F = {self.config.input_dim}"
            )
        p = self._params
        h = dropout(x, self.config.dropout_p, mode, rng)
        new_state = []
        for layer, (hp, cp) in enumerate(state):
            params = {k: p[f"lstm{layer}.{k}"].value for k in ("w_x", "w_h", "b")}
            hn, cn = lstm_cell(h, hp, cp, params)
            new_state.append((hn, cn))
            h = hn
        h = dropout(h, self.config.dropout_p, mode, rng)
        return dense(h, p["out.weight"].value, p["out.bias"].value), new_state

    def forward_step(self, features, state=None, mode: str = "eval", rng=None):
        """Single-vector convenience: ``features [4F]`` -> ``(logits [K+1], state')``."""
        f = np.asarray(features.data if isinstance(features, Tensor) else features, dtype=self.dtype)
        if f.ndim != 1:
            raise DimensionError(f"detector: expected a 1-D feature vector, got shape {f.shape}")
        if state is None:
            state = self.initial_state(1)
        with no_grad():
            logits, state = self.step(Tensor(f[None]), state, mode, rng)
        return logits.data[0], state

    @staticmethod
    def detach_state(state):
        return [(Tensor(h.data), Tensor(c.data)) for h, c in state]
