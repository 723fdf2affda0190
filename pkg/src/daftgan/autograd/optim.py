"""Adam over named parameters, with state that can be saved and restored exactly."""
from __future__ import annotations

import numpy as np

from .nn import Parameter


class Adam:
    def __init__(self, named_params, lr: float = 1e-4, betas: tuple[float, float] = (0.0, 0.9),
                 eps: float = 1e-8):
        if lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {lr}")
        if not all(0.0 <= b < 1.0 for b in betas):
            raise ValueError(f"Adam betas must lie in [0, 1), got {betas}")
        self.params: dict[str, Parameter] = dict(named_params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        b1, b2 = self.betas
        self.t += 1
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, state: dict) -> None:
        for key in ("m", "v"):
            table = state[key]
            if set(table) != set(self.params):
                raise KeyError(f"optimizer {key} table does not match the parameter set")
            for name, arr in table.items():
                if arr.shape != self.params[name].shape:
                    raise ValueError(f"optimizer {key}[{name}]: expected {self.params[name].shape}, got {arr.shape}")
        self.t = int(state["t"])
        self.m = {k: np.array(state["m"][k], dtype=np.float64) for k in self.params}
        self.v = {k: np.array(state["v"][k], dtype=np.float64) for k in self.params}
