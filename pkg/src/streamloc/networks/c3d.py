"""C3D-style 3-D convolutional classifier used for both PR and AR networks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import ArgumentError, DimensionError
from ..tensor import Tensor, conv3d, dense, dropout, maxpool3d, no_grad, relu
from .module import Module

CONV_NAMES = ("conv1a", "conv2a", "conv3a", "conv3b", "conv4a", "conv4b", "conv5a", "conv5b")
# pool k follows the last conv of block k
POOL_AFTER = {"conv1a": (1, 2, 2), "conv2a": (2, 2, 2), "conv3b": (2, 2, 2), "conv4b": (2, 2, 2), "conv5b": (2, 2, 2)}


@dataclass(frozen=True)
class C3DConfig:
    in_channels: int = 1
    frame_size: tuple[int, int] = (32, 32)
    clip_length: int = 16
    widths: tuple[int, ...] = (8, 16, 32, 32, 64, 64, 64, 64)
    feature_dim: int = 128
    out_dim: int = 2
    dropout_p: float = 0.5
    dtype: str = "f32"

    def __post_init__(self):
        object.__setattr__(self, "frame_size", tuple(self.frame_size))
        object.__setattr__(self, "widths", tuple(self.widths))
        if len(self.widths) != len(CONV_NAMES):
            raise ArgumentError(f"C3D needs {len(CONV_NAMES)} conv widths, got {len(self.widths)}")

    def pool_schedule(self) -> list[tuple[int, int, int]]:
        """Pool windows after clamping each axis to the size it receives."""
        size = [self.clip_length, *self.frame_size]
        windows = []
        for name in CONV_NAMES:
            if name in POOL_AFTER:
                win = tuple(min(w, s) for w, s in zip(POOL_AFTER[name], size))
                size = [s // w for s, w in zip(size, win)]
                windows.append(win)
        return windows

    def pooled_extent(self) -> tuple[int, int, int]:
        size = [self.clip_length, *self.frame_size]
        for win in self.pool_schedule():
            size = [s // w for s, w in zip(size, win)]
        return tuple(size)

    @classmethod
    def full_scale(cls, out_dim: int = 2) -> "C3DConfig":
        return cls(in_channels=3, frame_size=(112, 112), widths=(64, 128, 256, 256, 512, 512, 512, 512),
                   feature_dim=4096, out_dim=out_dim)


class C3D(Module):
    """8 convs, 5 max-pools, fc6, fc7 and an output layer.

    Convs are 3x3x3 with same padding and ReLU. :meth:`forward` returns the
    logits together with the fc7 activation (after ReLU, before dropout), which
    is the feature handed to the detector.
    """

    kind = "c3d"

    def __init__(self, config: C3DConfig = C3DConfig(), seed: int = 0, kind: str | None = None):
        super().__init__(config, seed)
        if kind is not None:
            self.kind = kind
        cin = config.in_channels
        for name, cout in zip(CONV_NAMES, config.widths):
            self._he(f"{name}.weight", (cout, cin, 3, 3, 3), cin * 27)
            self._zeros(f"{name}.bias", (cout,))
            cin = cout
        flat = config.widths[-1] * int(np.prod(config.pooled_extent()))
        f = config.feature_dim
        self._he("fc6.weight", (f, flat), flat)
        self._zeros("fc6.bias", (f,))
        self._he("fc7.weight", (f, f), f)
        self._zeros("fc7.bias", (f,))
        self._uniform("out.weight", (config.out_dim, f), 1.0 / np.sqrt(f))
        self._zeros("out.bias", (config.out_dim,))
        self._pools = config.pool_schedule()

    def layer_shapes(self) -> dict[str, tuple]:
        return {name: p.shape for name, p in self._params.items()}

    def _check(self, x: Tensor) -> None:
        c = self.config
        expected = (c.in_channels, c.clip_length, *c.frame_size)
        if x.ndim != 5 or tuple(x.shape[1:]) != expected:
            axis = "T" if x.ndim == 5 and x.shape[2] != c.clip_length else "shape"
            raise DimensionError(f"{self.kind}: axis {axis} mismatch, input {x.shape}, expected [N, {expected}]")

    def forward(self, x: Tensor, mode: str = "eval", rng: np.random.Generator | None = None):
        """``x: [N, C, T, H, W]`` -> ``(logits [N, out_dim], fc7 [N, F])``."""
        self._check(x)
        p = self._params
        pools = iter(self._pools)
        h = x
        for name in CONV_NAMES:
            h = conv3d(h, p[f"{name}.weight"].value, 1, 1) + p[f"{name}.bias"].value.reshape(1, -1, 1, 1, 1)
            h = relu(h)
            if name in POOL_AFTER:
                win = next(pools)
                h = maxpool3d(h, win, win)
        h = h.reshape(h.shape[0], -1)
        h = relu(dense(h, p["fc6.weight"].value, p["fc6.bias"].value))
        h = dropout(h, self.config.dropout_p, mode, rng)
        fc7 = relu(dense(h, p["fc7.weight"].value, p["fc7.bias"].value))
        h = dropout(fc7, self.config.dropout_p, mode, rng)
        logits = dense(h, p["out.weight"].value, p["out.bias"].value)
        return logits, fc7

    def segment_forward(self, segment) -> tuple[np.ndarray, np.ndarray]:
        """Eval-mode forward on one ``[T, C, H, W]`` segment."""
        seg = np.asarray(segment.data if isinstance(segment, Tensor) else segment)
        if seg.ndim != 4 or seg.shape[0] != self.config.clip_length:
            raise DimensionError(
                f"{self.kind}: axis T must be {self.config.clip_length}, got segment shape {seg.shape}"
            )
        logits, fc7 = self.batch_forward(seg[None])
        return logits[0], fc7[0]

    def batch_forward(self, segments: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Eval-mode forward on ``[N, T, C, H, W]`` segments, no graph recorded."""
        x = Tensor(np.ascontiguousarray(np.asarray(segments, dtype=self.dtype).transpose(0, 2, 1, 3, 4)))
        with no_grad():
            logits, fc7 = self.forward(x, "eval")
        return logits.data, fc7.data


def frames_to_input(segments: np.ndarray, dtype=np.float32) -> Tensor:
    """``[N, T, C, H, W]`` frames -> ``[N, C, T, H, W]`` network input."""
    return Tensor(np.ascontiguousarray(np.asarray(segments, dtype=dtype).transpose(0, 2, 1, 3, 4)))


def pr_network(config: C3DConfig | None = None, seed: int = 0) -> C3D:
    config = config or C3DConfig(out_dim=2)
    if config.out_dim != 2:
        raise ArgumentError(f"PR network has 2 outputs, config says {config.out_dim}")
    return C3D(config, seed, kind="pr")


def ar_network(num_classes: int, config: C3DConfig | None = None, seed: int = 0) -> C3D:
    config = config or C3DConfig(out_dim=2 * num_classes)
    if config.out_dim != 2 * num_classes:
        raise ArgumentError(f"AR network for K={num_classes} has {2 * num_classes} outputs, config says {config.out_dim}")
    return C3D(config, seed, kind="ar")
