from __future__ import annotations

import hashlib
import json
from dataclasses import asdict

import numpy as np

from ..exceptions import ArgumentError
from ..tensor import DTYPES, Parameter


class Module:
    """Container of uniquely named parameters built from a frozen config."""

    kind = "module"

    def __init__(self, config, seed: int = 0):
        self.config = config
        self.dtype = DTYPES[getattr(config, "dtype", "f32")]
        self._params: dict[str, Parameter] = {}
        self._rng = np.random.default_rng(seed)
        # set by training or checkpoint loading; inference refuses fresh weights
        self.trained = False

    # -- parameter registry ---------------------------------------------------
    def _add(self, name: str, data: np.ndarray) -> Parameter:
        if name in self._params:
            raise ArgumentError(f"duplicate parameter name {name!r}")
        p = Parameter(name, np.ascontiguousarray(data, dtype=self.dtype))
        self._params[name] = p
        return p

    def _he(self, name: str, shape: tuple, fan_in: int) -> Parameter:
        return self._add(name, self._rng.standard_normal(shape) * np.sqrt(2.0 / fan_in))

    def _uniform(self, name: str, shape: tuple, bound: float) -> Parameter:
        return self._add(name, self._rng.uniform(-bound, bound, size=shape))

    def _zeros(self, name: str, shape: tuple) -> Parameter:
        return self._add(name, np.zeros(shape))

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def parameters(self) -> list[Parameter]:
        return list(self._params.values())

    def named_parameters(self) -> dict[str, Parameter]:
        return dict(self._params)

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self._params.items():
            p.data = np.ascontiguousarray(state[name], dtype=p.data.dtype)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, p in self._params.items():
            h.update(name.encode())
            h.update(p.data.tobytes())
        return h.hexdigest()

    # -- identity -------------------------------------------------------------
    def config_dict(self) -> dict:
        return {"kind": self.kind, "config": asdict(self.config)}

    def config_hash(self) -> bytes:
        blob = json.dumps(self.config_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).digest()

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.config}, params={self.num_parameters()})"
