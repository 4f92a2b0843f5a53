"""Hierarchical local-region stream.

Per region, an attention-based graph proposal turns the spatial prior into
a learned adjacency; region GCNs run in parallel on the input features, their
outputs are concatenated, passed through a channel-as-token transformer
encoder and classified by an MLP head.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor, as_tensor, concat, flatten, matmul, swap_last, transpose, tsum
from .errors import DimensionError
from .functional import BatchNormState, batch_norm, gelu, layer_norm, relu, softmax_rows
from .global_stream import glorot, near_identity, normalize_adjacency


@dataclass
class RegionGraphParams:
    """Graph-proposal parameters of one region; heads are stacked on axis 0."""

    P: Tensor
    Q: Tensor
    b: Tensor
    w_query: Tensor  # H x N x d_k
    w_key: Tensor  # H x N x d_k
    bn: BatchNormState

    @property
    def heads(self) -> int:
        return self.w_query.shape[0]

    @property
    def head_dim(self) -> int:
        return self.w_query.shape[2]

    @classmethod
    def init(cls, rng, n_channels: int, heads: int, head_dim: int):
        shape = (heads, n_channels, head_dim)
        return cls(
            P=near_identity(rng, n_channels),
            Q=near_identity(rng, n_channels),
            b=Tensor(np.zeros((n_channels, n_channels)), requires_grad=True),
            w_query=glorot(rng, n_channels, head_dim, shape),
            w_key=glorot(rng, n_channels, head_dim, shape),
            bn=BatchNormState.fresh((n_channels, n_channels)),
        )

    def named(self) -> dict:
        return {"P": self.P, "Q": self.Q, "b": self.b, "WQ": self.w_query, "WK": self.w_key}


@dataclass
class EncoderLayerParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    w_ff1: Tensor
    w_ff2: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    heads: int

    @classmethod
    def init(cls, rng, d_model: int, heads: int, d_ff: int):
        def g(i, o):
            return glorot(rng, i, o)

        return cls(
            wq=g(d_model, d_model),
            wk=g(d_model, d_model),
            wv=g(d_model, d_model),
            wo=g(d_model, d_model),
            w_ff1=g(d_model, d_ff),
            w_ff2=g(d_ff, d_model),
            ln1_gain=Tensor(np.ones(d_model), requires_grad=True),
            ln1_bias=Tensor(np.zeros(d_model), requires_grad=True),
            ln2_gain=Tensor(np.ones(d_model), requires_grad=True),
            ln2_bias=Tensor(np.zeros(d_model), requires_grad=True),
            heads=heads,
        )

    def named(self) -> dict:
        return {
            "Wq": self.wq,
            "Wk": self.wk,
            "Wv": self.wv,
            "Wo": self.wo,
            "ffn.W1": self.w_ff1,
            "ffn.W2": self.w_ff2,
            "ln1.gain": self.ln1_gain,
            "ln1.bias": self.ln1_bias,
            "ln2.gain": self.ln2_gain,
            "ln2.bias": self.ln2_bias,
        }


@dataclass
class LocalHeadParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, rng, n_channels: int, d_model: int, d_hidden: int, n_classes: int):
        return cls(
            w1=glorot(rng, d_model, d_hidden),
            b1=Tensor(np.zeros(d_hidden), requires_grad=True),
            w2=glorot(rng, n_channels * d_hidden, n_classes),
            b2=Tensor(np.zeros(n_classes), requires_grad=True),
        )

    def named(self) -> dict:
        return {"W1": self.w1, "b1": self.b1, "W2": self.w2, "b2": self.b2}


@dataclass
class LocalStreamParams:
    regions: list
    gcn_weights: list  # one d x d' matrix per region
    layers: list
    head: LocalHeadParams
    region_masks: np.ndarray | None = field(default=None)

    @classmethod
    def init(
        cls,
        rng,
        n_channels: int,
        in_dim: int,
        n_regions: int,
        d_model: int,
        heads: int,
        depth: int,
        d_ff: int,
        d_hidden: int,
        n_classes: int,
        region_masks=None,
    ):
        if d_model % n_regions:
            raise DimensionError(f"d_model={d_model} is not divisible by K={n_regions} regions")
        if d_model % heads:
            raise DimensionError(f"d_model={d_model} is not divisible by {heads} heads")
        d_region = d_model // n_regions
        head_dim = d_model // heads
        regions = [RegionGraphParams.init(rng, n_channels, heads, head_dim) for _ in range(n_regions)]
        gcn = [glorot(rng, in_dim, d_region) for _ in range(n_regions)]
        layers = [EncoderLayerParams.init(rng, d_model, heads, d_ff) for _ in range(depth)]
        head = LocalHeadParams.init(rng, n_channels, d_model, d_hidden, n_classes)
        return cls(regions, gcn, layers, head, region_masks)

    def named(self) -> dict:
        out = {}
        for k, r in enumerate(self.regions):
            for n, t in r.named().items():
                out[f"region.{k}.{n}"] = t
        for k, w in enumerate(self.gcn_weights):
            out[f"gcn.{k}.W"] = w
        for i, layer in enumerate(self.layers):
            for n, t in layer.named().items():
                out[f"encoder.{i}.{n}"] = t
        for n, t in self.head.named().items():
            out[f"head.{n}"] = t
        return out


# graph proposal -------------------------------------------------------------


def region_embedding(params: RegionGraphParams, a_prior) -> Tensor:
    """``relu((P_k @ A_prior + b_k) @ Q_k)``."""
    a_prior = as_tensor(a_prior)
    for name, t in (("P", params.P), ("Q", params.Q), ("b", params.b)):
        if t.shape != a_prior.shape:
            raise DimensionError(f"region_embedding: {name} has shape {t.shape}, prior has {a_prior.shape}")
    return relu(matmul(matmul(params.P, a_prior) + params.b, params.Q))


def _all_head_scores(params: RegionGraphParams, a_k: Tensor) -> Tensor:
    if params.w_query.shape[1] != a_k.shape[1]:
        raise DimensionError(f"attention: projections {params.w_query.shape} do not fit graph {a_k.shape}")
    q = matmul(a_k, params.w_query)
    k = matmul(a_k, params.w_key)
    return matmul(q, swap_last(k)) * (1.0 / np.sqrt(params.head_dim))


def attention_scores(params: RegionGraphParams, a_k, head: int) -> Tensor:
    """Scaled scores ``(A_k W_Q^h)(A_k W_K^h)^T / sqrt(d_k)`` for one head."""
    a_k = as_tensor(a_k)
    if params.w_query.shape[1] != a_k.shape[1]:
        raise DimensionError(f"attention: projections {params.w_query.shape} do not fit graph {a_k.shape}")
    q = matmul(a_k, params.w_query[head])
    k = matmul(a_k, params.w_key[head])
    return matmul(q, swap_last(k)) * (1.0 / np.sqrt(params.head_dim))


def propose_local_graph(
    params: RegionGraphParams,
    a_prior,
    mode: str = "train",
    update_stats: bool = True,
    mask=None,
) -> Tensor:
    """``sum_h relu(BN(softmax_rows(S_h)))``.

    The heads form the batch axis of the batch norm, so statistics are per
    adjacency entry across heads. ``mask`` (boolean length N), when given,
    zeroes rows and columns outside the region.
    """
    a_k = region_embedding(params, a_prior)
    scores = _all_head_scores(params, a_k)
    normed = batch_norm(softmax_rows(scores), params.bn, mode=mode, update_stats=update_stats)
    graph = tsum(relu(normed), axis=0)
    if mask is not None:
        m = np.asarray(mask, dtype=np.float64)
        graph = graph * np.outer(m, m)
    return graph


# region GCNs ------------------------------------------------------------------


def local_gcn(a_local, x, w) -> Tensor:
    """``gelu(norm(A_local) @ X @ W_k)`` per batch element."""
    a_local, x, w = as_tensor(a_local), as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 2 or x.shape[2] != w.shape[0] or a_local.shape != (x.shape[1], x.shape[1]):
        raise DimensionError(f"local_gcn: A {a_local.shape}, X {x.shape}, W {w.shape} are incompatible")
    return gelu(matmul(normalize_adjacency(a_local), matmul(x, w)))


def concat_regions(parts) -> Tensor:
    """Concatenate region outputs along the feature axis, in region order."""
    parts = [as_tensor(p) for p in parts]
    widths = {p.shape[-1] for p in parts}
    lead = {p.shape[:-1] for p in parts}
    if len(widths) != 1 or len(lead) != 1:
        raise DimensionError(f"concat_regions: region outputs have shapes {[p.shape for p in parts]}")
    return concat(parts, axis=-1)


# encoder --------------------------------------------------------------------


def multi_head_attention(z: Tensor, p: EncoderLayerParams, return_weights: bool = False):
    b, n, d = z.shape
    h = p.heads
    dh = d // h

    def split(t):
        return transpose(t.reshape(b, n, h, dh), (0, 2, 1, 3))

    q, k, v = split(matmul(z, p.wq)), split(matmul(z, p.wk)), split(matmul(z, p.wv))
    weights = softmax_rows(matmul(q, swap_last(k)) * (1.0 / np.sqrt(dh)))
    ctx = transpose(matmul(weights, v), (0, 2, 1, 3)).reshape(b, n, d)
    out = matmul(ctx, p.wo)
    return (out, weights) if return_weights else out


def encoder_layer(z, p: EncoderLayerParams, return_weights: bool = False):
    """Post-norm transformer layer over the N channel tokens (no positional encoding)."""
    z = as_tensor(z)
    if z.ndim != 3 or z.shape[2] != p.wq.shape[0]:
        raise DimensionError(f"encoder_layer expects B x N x {p.wq.shape[0]}, got {z.shape}")
    attn, weights = multi_head_attention(z, p, return_weights=True)
    z1 = layer_norm(z + attn, p.ln1_gain, p.ln1_bias)
    ffn = matmul(gelu(matmul(z1, p.w_ff1)), p.w_ff2)
    out = layer_norm(z1 + ffn, p.ln2_gain, p.ln2_bias)
    return (out, weights) if return_weights else out


def local_head(z, p: LocalHeadParams, return_hidden: bool = False):
    """``flatten(gelu(Z @ W1 + b1)) @ W2 + b2``."""
    z = as_tensor(z)
    if z.ndim != 3 or z.shape[2] != p.w1.shape[0]:
        raise DimensionError(f"local_head expects B x N x {p.w1.shape[0]}, got {z.shape}")
    hidden = gelu(matmul(z, p.w1) + p.b1)
    flat = flatten(hidden)
    if flat.shape[1] != p.w2.shape[0]:
        raise DimensionError(f"local_head: W2 expects {p.w2.shape[0]} inputs, got {flat.shape[1]}")
    logits = matmul(flat, p.w2) + p.b2
    return (logits, hidden) if return_hidden else logits


@dataclass
class LocalOutput:
    logits: Tensor
    graphs: list
    region_features: Tensor
    encoded: Tensor
    hidden: Tensor


def local_forward(params: LocalStreamParams, a_prior, x, mode: str = "train", update_stats: bool = True):
    """Local-stream logits (B x C) and the K proposed region graphs."""
    out = local_forward_full(params, a_prior, x, mode=mode, update_stats=update_stats)
    return out.logits, out.graphs


def local_forward_full(params, a_prior, x, mode="train", update_stats=True) -> LocalOutput:
    x = as_tensor(x)
    masks = params.region_masks
    graphs = [
        propose_local_graph(r, a_prior, mode, update_stats, None if masks is None else masks[k])
        for k, r in enumerate(params.regions)
    ]
    parts = [local_gcn(g, x, w) for g, w in zip(graphs, params.gcn_weights)]
    h_local = concat_regions(parts)
    z = h_local
    for layer in params.layers:
        z = encoder_layer(z, layer)
    logits, hidden = local_head(z, params.head, return_hidden=True)
    return LocalOutput(logits, graphs, h_local, z, hidden)
