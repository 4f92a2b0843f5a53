"""Adam with the inverse-square-root warmup schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class ScheduleConfig:
    d_model: int = 120
    warmup_steps: int = 4000

    def __post_init__(self):
        if self.d_model < 1 or self.warmup_steps < 1:
            raise ContractError("d_model and warmup_steps must be positive")

    def __call__(self, step: int) -> float:
        return lr_schedule(self, step)


def lr_schedule(cfg: ScheduleConfig, step: int) -> float:
    """``d_model**-0.5 * min(step**-0.5, step * warmup**-1.5)``."""
    if step < 1:
        raise ContractError(f"learning-rate step must be >= 1, got {step}")
    return cfg.d_model**-0.5 * min(step**-0.5, step * cfg.warmup_steps**-1.5)


class Adam:
    """Bias-corrected Adam over a name -> Tensor mapping.

    ``step`` consumes the gradients it applies: every parameter's ``grad`` is
    cleared afterwards.
    """

    def __init__(self, params: dict, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.t = 0

    def step(self, lr: float) -> None:
        missing = [k for k, p in self.params.items() if p.grad is None]
        if missing:
            raise ContractError(f"no gradient for parameter {missing[0]!r}" + (f" (+{len(missing) - 1} more)" if len(missing) > 1 else ""))
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, p in self.params.items():
            g = p.grad
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None

    def state_dict(self) -> dict:
        out = {f"adam.m.{k}": v.copy() for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v.copy() for k, v in self.v.items()})
        out["adam.t"] = np.array([float(self.t)])
        return out

    def load_state_dict(self, state: dict) -> None:
        for k in self.params:
            self.m[k] = np.array(state[f"adam.m.{k}"], dtype=np.float64)
            self.v[k] = np.array(state[f"adam.v.{k}"], dtype=np.float64)
        self.t = int(np.asarray(state["adam.t"]).reshape(-1)[0])


def adam_step(state: Adam, lr: float) -> None:
    state.step(lr)
