"""SGD and Adam over a named parameter set."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from ..autodiff import Tensor
from ..errors import InvalidHyperparameter, MissingGradient


@dataclass
class Optimizer:
    """Optimizer hyperparameters plus per-parameter state.

    ``kind`` is ``"adam"`` or ``"sgd"``.  Adam keeps bias-corrected first and
    second moment estimates keyed by parameter name; ``t`` counts steps.
    """

    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise InvalidHyperparameter(f"unknown optimizer {self.kind!r}")
        if self.lr <= 0:
            raise InvalidHyperparameter("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidHyperparameter("betas must lie in [0, 1)")

    def step(self, params: Dict[str, Tensor]) -> None:
        """Apply one update using each parameter's ``.grad``, then clear the grads."""
        missing = [k for k, p in params.items() if p.grad is None]
        if missing:
            raise MissingGradient(f"no gradient for {', '.join(missing[:5])}")
        self.t += 1
        if self.kind == "sgd":
            for p in params.values():
                p.data = p.data - self.lr * p.grad.astype(p.dtype)
                p.grad = None
            return
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for name, p in params.items():
            g = p.grad.astype(p.dtype)
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
            else:
                v = self.v[name]
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            self.m[name], self.v[name] = m, v
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.dtype)
            p.grad = None

    # -- persistence -------------------------------------------------------
    def hyper(self) -> dict:
        return dict(kind=self.kind, lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)

    @classmethod
    def from_hyper(cls, hyper: dict) -> "Optimizer":
        return cls(**hyper)

    def state_arrays(self) -> Dict[str, np.ndarray]:
        out = {"optim/t": np.array(self.t, dtype=np.int64)}
        for name in sorted(self.m):
            out[f"optim/m/{name}"] = self.m[name]
            out[f"optim/v/{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        self.t = int(arrays.get("optim/t", 0))
        for key, value in arrays.items():
            if key.startswith("optim/m/"):
                self.m[key[len("optim/m/"):]] = np.array(value)
            elif key.startswith("optim/v/"):
                self.v[key[len("optim/v/"):]] = np.array(value)


def adam(lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> Optimizer:
    return Optimizer("adam", lr, beta1, beta2, eps)


def sgd(lr: float = 1e-2) -> Optimizer:
    return Optimizer("sgd", lr)


def optimizer_step(params: Dict[str, Tensor], state: Optimizer) -> Dict[str, Tensor]:
    state.step(params)
    return params
