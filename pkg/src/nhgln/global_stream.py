"""Global graph learning stream: learnable dynamic graph, stacked GCN, dense head."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor, as_tensor, flatten, matmul
from .errors import ContractError, DimensionError
from .functional import relu


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    shape = (fan_in, fan_out) if shape is None else shape
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def near_identity(rng: np.random.Generator, n: int, sigma: float = 0.01) -> Tensor:
    return Tensor(np.eye(n) + sigma * rng.normal(size=(n, n)), requires_grad=True)


@dataclass
class GlobalStreamParams:
    P: Tensor
    Q: Tensor
    b: Tensor
    gcn_weights: list = field(default_factory=list)
    fc_weight: Tensor = None
    fc_bias: Tensor = None

    @classmethod
    def init(cls, rng, n_channels: int, in_dim: int, hidden=(32, 64), n_classes: int = 3):
        dims = (in_dim,) + tuple(hidden)
        return cls(
            P=near_identity(rng, n_channels),
            Q=near_identity(rng, n_channels),
            b=Tensor(np.zeros((n_channels, n_channels)), requires_grad=True),
            gcn_weights=[glorot(rng, dims[i], dims[i + 1]) for i in range(len(dims) - 1)],
            fc_weight=glorot(rng, n_channels * dims[-1], n_classes),
            fc_bias=Tensor(np.zeros(n_classes), requires_grad=True),
        )

    def named(self) -> dict:
        out = {"P": self.P, "Q": self.Q, "b": self.b}
        for i, w in enumerate(self.gcn_weights):
            out[f"gcn.{i}.W"] = w
        out["fc.W"] = self.fc_weight
        out["fc.b"] = self.fc_bias
        return out


def dynamic_graph(params, a_prior) -> Tensor:
    """``relu((P @ A_prior + b) @ Q)``; may be asymmetric."""
    a_prior = as_tensor(a_prior)
    n = a_prior.shape
    for name, t in (("P", params.P), ("Q", params.Q), ("b", params.b)):
        if t.shape != n:
            raise DimensionError(f"dynamic_graph: {name} has shape {t.shape}, prior has {n}")
    return relu(matmul(matmul(params.P, a_prior) + params.b, params.Q))


def normalize_adjacency(a) -> Tensor:
    """Symmetric renormalization ``D^-1/2 (A + I) D^-1/2`` with row-sum degrees."""
    a = as_tensor(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"normalize_adjacency needs a square matrix, got {a.shape}")
    if np.any(a.data < 0):
        i, j = np.argwhere(a.data < 0)[0]
        raise ContractError(f"adjacency entry ({i}, {j}) is negative: {a.data[i, j]}")
    n = a.shape[0]
    a_tilde = a + np.eye(n)
    inv_sqrt_deg = a_tilde.sum(axis=1) ** -0.5
    return a_tilde * inv_sqrt_deg.reshape(n, 1) * inv_sqrt_deg.reshape(1, n)


def gcn_layer(h, a_norm, w) -> Tensor:
    """``relu(A_norm @ H @ W)`` for every batch element of H (B x N x f)."""
    h, a_norm, w = as_tensor(h), as_tensor(a_norm), as_tensor(w)
    if h.ndim != 3 or a_norm.shape != (h.shape[1], h.shape[1]) or w.ndim != 2 or w.shape[0] != h.shape[2]:
        raise DimensionError(f"gcn_layer: H {h.shape}, A {a_norm.shape}, W {w.shape} are incompatible")
    if w.shape[1] < w.shape[0]:
        return relu(matmul(a_norm, matmul(h, w)))
    return relu(matmul(matmul(a_norm, h), w))


def global_logits(params, a_global, x) -> Tensor:
    """Run the GCN stack on a precomputed dynamic graph and apply the dense head."""
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[2] != params.gcn_weights[0].shape[0]:
        raise DimensionError(
            f"global stream expects B x N x {params.gcn_weights[0].shape[0]} features, got {x.shape}"
        )
    a_norm = normalize_adjacency(a_global)
    h = x
    for w in params.gcn_weights:
        h = gcn_layer(h, a_norm, w)
    flat = flatten(h)
    if flat.shape[1] != params.fc_weight.shape[0]:
        raise DimensionError(f"global head expects {params.fc_weight.shape[0]} inputs, got {flat.shape[1]}")
    return matmul(flat, params.fc_weight) + params.fc_bias


def global_forward(params, a_prior, x) -> Tensor:
    """Global-stream logits (B x C); the dynamic graph is rebuilt on every call."""
    return global_logits(params, dynamic_graph(params, a_prior), x)
