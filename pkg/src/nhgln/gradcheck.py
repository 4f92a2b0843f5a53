"""Central finite-difference checks of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor, no_grad
from .model import ModelConfig, NeuroHGLN
from .objective import LossWeights, joint_objective

DEFAULT_EPS = 1e-5
DEFAULT_THRESHOLD = 1e-4
DEFAULT_FLOOR = 1e-6


@dataclass
class GradcheckReport:
    worst: dict  # parameter name -> worst element-wise relative error
    threshold: float
    eps: float
    worst_index: dict = field(default_factory=dict)

    @property
    def failures(self) -> list:
        return [k for k, v in self.worst.items() if not v < self.threshold]

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def max_error(self) -> float:
        return max(self.worst.values()) if self.worst else 0.0

    def lines(self) -> list:
        out = []
        for k, v in self.worst.items():
            flag = "ok" if v < self.threshold else "FAIL"
            out.append(f"{k:40s} {v:.3e} {flag}")
        return out


def relative_error(analytic, numeric, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)`` element-wise."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_gradient(loss_fn, t: Tensor, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Central differences of scalar ``loss_fn()`` with respect to ``t.data``."""
    grad = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    out = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().data)
            flat[i] = orig - eps
            down = float(loss_fn().data)
            flat[i] = orig
            out[i] = (up - down) / (2.0 * eps)
    return grad


def check_gradients(
    loss_fn,
    params: dict,
    eps: float = DEFAULT_EPS,
    threshold: float = DEFAULT_THRESHOLD,
    floor: float = DEFAULT_FLOOR,
) -> GradcheckReport:
    """Compare backprop against central differences for every named tensor.

    ``loss_fn`` takes no arguments and returns a scalar Tensor built from the
    tensors in ``params``; their ``data`` arrays are perturbed in place.
    """
    for t in params.values():
        t.grad = None
    loss_fn().backward()
    analytic = {k: (np.zeros_like(t.data) if t.grad is None else t.grad.copy()) for k, t in params.items()}
    worst, where = {}, {}
    for k, t in params.items():
        num = numeric_gradient(loss_fn, t, eps)
        err = relative_error(analytic[k], num, floor)
        i = int(np.argmax(err)) if err.size else 0
        worst[k] = float(err.reshape(-1)[i]) if err.size else 0.0
        where[k] = np.unravel_index(i, t.data.shape) if err.size else ()
        t.grad = None
    return GradcheckReport(worst, threshold, eps, where)


def model_loss_fn(model: NeuroHGLN, x, labels, weights: LossWeights | None = None):
    """Total joint loss as a closure; batch norm runs in train mode without updating statistics."""
    weights = LossWeights() if weights is None else weights

    def fn():
        out = model.forward(x, training=True, update_stats=False)
        lb = joint_objective(out.y_global, out.y_local, labels, model.a_prior, out.local_graphs, weights)
        return lb.total

    return fn


def tiny_problem(seed: int = 0, batch: int = 4, config: ModelConfig | None = None):
    """Tiny model, random prior and inputs for the gradient check."""
    from .geometry import build_prior, random_layout

    cfg = ModelConfig.tiny() if config is None else config
    rng = np.random.default_rng([seed, 11])
    layout = random_layout(cfg.n_channels, rng)
    model = NeuroHGLN(cfg, build_prior(layout).adjacency, seed=seed)
    x = rng.normal(size=(batch, cfg.n_channels, cfg.in_dim))
    labels = rng.integers(0, cfg.n_classes, size=batch)
    return model, x, labels


def gradcheck_model(
    seed: int = 0,
    eps: float = DEFAULT_EPS,
    threshold: float = DEFAULT_THRESHOLD,
    floor: float = DEFAULT_FLOOR,
    batch: int = 4,
    config: ModelConfig | None = None,
    weights: LossWeights | None = None,
) -> GradcheckReport:
    model, x, labels = tiny_problem(seed, batch, config)
    return check_gradients(model_loss_fn(model, x, labels, weights), model.named_parameters(), eps, threshold, floor)
