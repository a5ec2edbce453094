"""Future frame generation: content encoder + motion convLSTM + deconv decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import DimensionError
from ..tensor import Tensor, clip, concat, conv2d, conv_lstm_cell, deconv2d, no_grad, relu, tanh
from .module import Module


@dataclass(frozen=True)
class F2GConfig:
    in_channels: int = 1
    frame_size: tuple[int, int] = (32, 32)
    context: int = 16
    horizon: int = 8
    content_widths: tuple[int, int] = (8, 16)
    motion_widths: tuple[int, int] = (8, 16)
    lstm_width: int = 16
    decoder_widths: tuple[int, ...] = (16,)
    refine_width: int = 8
    dtype: str = "f32"

    def __post_init__(self):
        for name in ("frame_size", "content_widths", "motion_widths", "decoder_widths"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        h, w = self.frame_size
        if h % 4 or w % 4:
            raise DimensionError(f"F2G frame size must be divisible by 4, got {self.frame_size}")


class F2G(Module):
    """Recursive next-frame generator.

    The motion path encodes successive frame differences (two stride-2 convs)
    and feeds them to a convolutional LSTM; the content path encodes the most
    recent frame. The decoder concatenates both codes and upsamples with two
    stride-2 transposed convs to a residual that is added to the most recent
    frame. Each generated frame is appended to the context before the next one
    is predicted.
    """

    kind = "f2g"

    def __init__(self, config: F2GConfig = F2GConfig(), seed: int = 0):
        super().__init__(config, seed)
        c = config
        cin = c.in_channels
        for prefix, widths in (("content", c.content_widths), ("motion", c.motion_widths)):
            prev = cin
            for i, w in enumerate(widths):
                self._he(f"{prefix}{i}.weight", (w, prev, 4, 4), prev * 16)
                self._zeros(f"{prefix}{i}.bias", (w,))
                prev = w
        m, d = c.motion_widths[-1], c.lstm_width
        bound = 1.0 / np.sqrt(9 * (m + d))
        self._uniform("lstm.w_x", (4 * d, m, 3, 3), bound)
        self._uniform("lstm.w_h", (4 * d, d, 3, 3), bound)
        b = np.zeros(4 * d)
        b[d : 2 * d] = 1.0
        self._add("lstm.b", b)
        prev = d + c.content_widths[-1]
        widths = (*c.decoder_widths, c.refine_width)
        if len(widths) != 2:
            raise DimensionError("F2G decoder must upsample twice (one hidden deconv width)")
        for i, w in enumerate(widths):
            # deconv kernels are stored in the layout of the conv they invert
            self._add(f"dec{i}.weight", self._rng.standard_normal((prev, w, 4, 4)) * np.sqrt(2.0 / (prev * 4)))
            self._zeros(f"dec{i}.bias", (w,))
            prev = w
        # full-resolution head over the upsampled code and the last frame; it starts
        # at zero, so a fresh generator copies the last frame
        self._zeros("refine.weight", (cin, c.refine_width + cin, 3, 3))
        self._zeros("refine.bias", (cin,))

    def _encode(self, prefix: str, x: Tensor) -> Tensor:
        p = self._params
        for i in range(2):
            x = conv2d(x, p[f"{prefix}{i}.weight"].value, 2, 1) + p[f"{prefix}{i}.bias"].value.reshape(1, -1, 1, 1)
            x = relu(x)
        return x

    def _decode(self, h: Tensor, content: Tensor, last: Tensor) -> Tensor:
        p = self._params
        z = concat([h, content], axis=1)
        for i in range(2):
            z = relu(deconv2d(z, p[f"dec{i}.weight"].value, 2, 1) + p[f"dec{i}.bias"].value.reshape(1, -1, 1, 1))
        z = concat([z, last], axis=1)
        z = conv2d(z, p["refine.weight"].value, 1, 1) + p["refine.bias"].value.reshape(1, -1, 1, 1)
        return tanh(z)

    def _lstm(self, x, h, c):
        p = self._params
        return conv_lstm_cell(x, h, c, {"w_x": p["lstm.w_x"].value, "w_h": p["lstm.w_h"].value, "b": p["lstm.b"].value})

    def forward(self, context: Tensor) -> list[Tensor]:
        """``context: [N, T, C, H, W]`` -> list of ``horizon`` frames ``[N, C, H, W]``."""
        cfg = self.config
        if context.ndim != 5 or context.shape[1] != cfg.context:
            raise DimensionError(f"f2g: axis T must be {cfg.context}, got context shape {context.shape}")
        if tuple(context.shape[2:]) != (cfg.in_channels, *cfg.frame_size):
            raise DimensionError(f"f2g: frame shape {context.shape[2:]} does not match config")
        n = context.shape[0]
        hh, ww = cfg.frame_size
        zeros = np.zeros((n, cfg.lstm_width, hh // 4, ww // 4), dtype=self.dtype)
        h, c = Tensor(zeros), Tensor(zeros)
        frames = [context[:, t] for t in range(cfg.context)]
        for t in range(1, cfg.context):
            h, c = self._lstm(self._encode("motion", frames[t] - frames[t - 1]), h, c)
        last = frames[-1]
        outputs = []
        for step in range(cfg.horizon):
            delta = self._decode(h, self._encode("content", last), last)
            pred = clip(last + delta, 0.0, 1.0)
            outputs.append(pred)
            if step + 1 < cfg.horizon:
                h, c = self._lstm(self._encode("motion", pred - last), h, c)
            last = pred
        return outputs

    def generate(self, context) -> np.ndarray:
        """Eval-mode generation for one ``[16, C, H, W]`` context -> ``[8, C, H, W]``."""
        ctx = np.asarray(context.data if isinstance(context, Tensor) else context)
        if ctx.ndim != 4 or ctx.shape[0] != self.config.context:
            raise DimensionError(f"f2g: axis T must be {self.config.context}, got context shape {ctx.shape}")
        return self.batch_generate(ctx[None])[0]

    def batch_generate(self, contexts: np.ndarray) -> np.ndarray:
        x = Tensor(np.ascontiguousarray(contexts, dtype=self.dtype))
        with no_grad():
            out = self.forward(x)
        return np.stack([o.data for o in out], axis=1)
