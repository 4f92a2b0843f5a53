"""Decision fusion and the four-term joint objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, as_tensor, mul, tsum
from .errors import DimensionError, ParameterError
from .functional import cross_entropy_logits, frobenius_sq, log_softmax_rows, row_softmax_np, softmax_rows


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1e-3  # geometric KL
    beta: float = 0.025  # region-graph diversity
    gamma: float = 10.0  # global cross-entropy
    delta: float = 10.0  # local cross-entropy

    def __post_init__(self):
        for k in ("alpha", "beta", "gamma", "delta"):
            v = getattr(self, k)
            if not (np.isfinite(v) and v >= 0):
                raise ParameterError(f"loss weight {k} must be a non-negative finite number, got {v}")


@dataclass
class LossBreakdown:
    l_global: Tensor
    l_local: Tensor
    l_dist: Tensor
    l_div: Tensor
    total: Tensor
    weights: LossWeights

    def as_floats(self) -> dict:
        return {k: float(getattr(self, k).data) for k in ("l_global", "l_local", "l_dist", "l_div", "total")}

    def recomputed_total(self) -> float:
        w = self.weights
        f = self.as_floats()
        return w.alpha * f["l_dist"] + w.beta * f["l_div"] + w.gamma * f["l_global"] + w.delta * f["l_local"]


def fuse_logits(y_global, y_local) -> Tensor:
    """Arithmetic mean of the two streams' logits."""
    y_global, y_local = as_tensor(y_global), as_tensor(y_local)
    if y_global.shape != y_local.shape:
        raise DimensionError(f"fuse_logits: shapes {y_global.shape} and {y_local.shape} differ")
    return (y_global + y_local) * 0.5


def predict(logits) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest class index."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return np.argmax(data, axis=1)


def row_distribution(a) -> Tensor:
    """Row-wise softmax, turning an adjacency into one distribution per node."""
    return softmax_rows(a)


def geometric_kl(a_prior, graphs) -> Tensor:
    """``sum_k sum_i KL(p_i || q_i^k)`` with row-softmax distributions.

    The prior side is a constant. ``ln q`` comes from a log-softmax, so it is
    finite for any finite graph and the sum is non-negative up to rounding.
    """
    prior = a_prior.data if isinstance(a_prior, Tensor) else np.asarray(a_prior, dtype=np.float64)
    p = row_softmax_np(prior)
    plogp = float((p * np.log(p)).sum())
    total = None
    for g in graphs:
        g = as_tensor(g)
        if g.shape != prior.shape:
            raise DimensionError(f"geometric_kl: graph {g.shape} vs prior {prior.shape}")
        term = plogp - tsum(mul(p, log_softmax_rows(g)))
        total = term if total is None else total + term
    return total if total is not None else Tensor(0.0)


def kl_rows(p, q) -> float:
    """Reference ``sum_i KL(p_i || q_i)`` for plain row-stochastic arrays."""
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    return float(np.sum(p * (np.log(p) - np.log(q))))


def diversity_loss(graphs) -> Tensor:
    """``sum_{i<j} ||A_i * A_j||_F^2``; zero for a single graph."""
    graphs = [as_tensor(g) for g in graphs]
    total = Tensor(0.0)
    for i in range(len(graphs)):
        for j in range(i + 1, len(graphs)):
            total = total + frobenius_sq(mul(graphs[i], graphs[j]))
    return total


def total_loss(l_global, l_local, l_dist, l_div, weights: LossWeights) -> LossBreakdown:
    """Weighted sum ``alpha*dist + beta*div + gamma*global + delta*local``."""
    parts = [as_tensor(t) for t in (l_global, l_local, l_dist, l_div)]
    g, lo, di, dv = parts
    total = di * weights.alpha + dv * weights.beta + g * weights.gamma + lo * weights.delta
    return LossBreakdown(g, lo, di, dv, total, weights)


def joint_objective(
    y_global,
    y_local,
    labels,
    a_prior,
    graphs,
    weights: LossWeights,
    use_global: bool = True,
    use_local: bool = True,
) -> LossBreakdown:
    """Deep-supervised cross-entropies plus both graph regularizers.

    A disabled stream contributes a constant zero; the regularizers act on
    the local graphs and vanish with the local stream.
    """
    zero = Tensor(0.0)
    l_global = cross_entropy_logits(y_global, labels) if use_global else zero
    if use_local:
        l_local = cross_entropy_logits(y_local, labels)
        l_dist = geometric_kl(a_prior, graphs)
        l_div = diversity_loss(graphs)
    else:
        l_local = l_dist = l_div = zero
    return total_loss(l_global, l_local, l_dist, l_div, weights)


def normalized_overlap(graphs) -> float:
    """Mean over pairs of ``||A_i * A_j||_F^2`` after scaling each graph to unit Frobenius norm."""
    mats = [np.asarray(g.data if isinstance(g, Tensor) else g, dtype=np.float64) for g in graphs]
    mats = [m / np.linalg.norm(m) for m in mats]
    vals = [float(((mats[i] * mats[j]) ** 2).sum()) for i in range(len(mats)) for j in range(i + 1, len(mats))]
    return float(np.mean(vals)) if vals else 0.0
