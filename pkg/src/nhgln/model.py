"""Both streams assembled into one model with named parameters and buffers."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .autograd import Tensor, as_tensor
from .errors import DimensionError, ValidationError
from .global_stream import GlobalStreamParams, dynamic_graph, global_logits
from .local_stream import LocalStreamParams, local_forward_full, propose_local_graph
from .objective import fuse_logits


@dataclass(frozen=True)
class ModelConfig:
    n_channels: int = 62
    in_dim: int = 5
    n_classes: int = 3
    n_regions: int = 5
    d_model: int = 120
    heads: int = 15
    depth: int = 5
    d_ff: int = 512
    d_hidden: int = 16
    gcn_hidden: tuple = (32, 64)
    mask_local_graphs: bool = False

    def __post_init__(self):
        object.__setattr__(self, "gcn_hidden", tuple(int(h) for h in self.gcn_hidden))
        for k in ("n_channels", "in_dim", "n_classes", "n_regions", "d_model", "heads", "d_ff", "d_hidden"):
            if int(getattr(self, k)) < 1:
                raise ValidationError(f"model.{k} must be >= 1, got {getattr(self, k)}")
        if self.n_channels < 2:
            raise ValidationError("model.n_channels must be >= 2")
        if self.n_classes < 2:
            raise ValidationError("model.n_classes must be >= 2")
        if self.depth < 0:
            raise ValidationError("model.depth must be >= 0")
        if not self.gcn_hidden:
            raise ValidationError("model.gcn_hidden needs at least one layer")
        if self.d_model % self.n_regions:
            raise ValidationError(f"d_model={self.d_model} must be a multiple of n_regions={self.n_regions}")
        if self.d_model % self.heads:
            raise ValidationError(f"d_model={self.d_model} must be a multiple of heads={self.heads}")

    @property
    def region_width(self) -> int:
        return self.d_model // self.n_regions

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        base = dict(
            n_channels=8, in_dim=3, n_classes=3, n_regions=2, d_model=8, heads=2,
            depth=1, d_ff=16, d_hidden=4, gcn_hidden=(4, 6),
        )
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gcn_hidden"] = list(self.gcn_hidden)
        return d


@dataclass
class ForwardOutput:
    y_global: Tensor | None
    y_local: Tensor | None
    fused: Tensor
    global_graph: Tensor | None
    local_graphs: list = field(default_factory=list)
    local_features: Tensor | None = None
    local_hidden: Tensor | None = None


class NeuroHGLN:
    """Global graph stream plus hierarchical local-region stream.

    ``a_prior`` is the N x N spatial prior; ``region_masks`` (K x N boolean)
    is only consulted when ``config.mask_local_graphs`` is set.
    """

    def __init__(self, config: ModelConfig, a_prior, region_masks=None, seed: int = 0):
        self.config = config
        a_prior = a_prior.data if isinstance(a_prior, Tensor) else np.asarray(a_prior, dtype=np.float64)
        if a_prior.shape != (config.n_channels, config.n_channels):
            raise DimensionError(f"prior is {a_prior.shape}, config expects {config.n_channels} channels")
        self.a_prior = Tensor(a_prior)
        if config.mask_local_graphs:
            if region_masks is None:
                raise ValidationError("mask_local_graphs needs region masks")
            region_masks = np.asarray(region_masks, dtype=bool)
            if region_masks.shape != (config.n_regions, config.n_channels):
                raise DimensionError(f"region masks are {region_masks.shape}, expected K x N")
        else:
            region_masks = None
        rng = np.random.default_rng(seed)
        c = config
        self.global_params = GlobalStreamParams.init(rng, c.n_channels, c.in_dim, c.gcn_hidden, c.n_classes)
        self.local_params = LocalStreamParams.init(
            rng, c.n_channels, c.in_dim, c.n_regions, c.d_model, c.heads, c.depth,
            c.d_ff, c.d_hidden, c.n_classes, region_masks,
        )

    # parameters --------------------------------------------------------

    def named_parameters(self) -> dict:
        out = {f"global.{k}": v for k, v in self.global_params.named().items()}
        out.update({f"local.{k}": v for k, v in self.local_params.named().items()})
        for name, t in out.items():
            t.name = name
        return out

    def parameters(self, use_global: bool = True, use_local: bool = True) -> dict:
        return {
            k: v
            for k, v in self.named_parameters().items()
            if (use_global and k.startswith("global.")) or (use_local and k.startswith("local."))
        }

    def buffers(self) -> dict:
        out = {}
        for k, r in enumerate(self.local_params.regions):
            out[f"local.region.{k}.bn.mean"] = r.bn.mean
            out[f"local.region.{k}.bn.var"] = r.bn.var
        return out

    def state_dict(self) -> dict:
        """Copies of every parameter and batch-norm statistic, keyed by name."""
        out = {k: v.data.copy() for k, v in self.named_parameters().items()}
        out.update({k: v.copy() for k, v in self.buffers().items()})
        return out

    def load_state_dict(self, state: dict) -> None:
        params = self.named_parameters()
        buffers = self.buffers()
        expected = {k: v.shape for k, v in params.items()}
        expected.update({k: v.shape for k, v in buffers.items()})
        problems = []
        for k, shape in expected.items():
            if k not in state:
                problems.append(f"missing {k} (expected shape {shape})")
            elif tuple(np.shape(state[k])) != tuple(shape):
                problems.append(f"{k}: checkpoint shape {tuple(np.shape(state[k]))}, model shape {tuple(shape)}")
        if problems:
            raise DimensionError("checkpoint does not fit the model:\n  " + "\n  ".join(problems))
        for k, t in params.items():
            t.data = np.array(state[k], dtype=np.float64)
            t.grad = None
        for k, r in enumerate(self.local_params.regions):
            r.bn.mean = np.array(state[f"local.region.{k}.bn.mean"], dtype=np.float64)
            r.bn.var = np.array(state[f"local.region.{k}.bn.var"], dtype=np.float64)

    def zero_grad(self) -> None:
        for t in self.named_parameters().values():
            t.grad = None

    # forward -----------------------------------------------------------

    def global_graph(self) -> Tensor:
        return dynamic_graph(self.global_params, self.a_prior)

    def local_graphs(self, training: bool = False, update_stats: bool = False) -> list:
        """The K region graphs, eval-mode batch norm by default."""
        masks = self.local_params.region_masks
        mode = "train" if training else "eval"
        return [
            propose_local_graph(r, self.a_prior, mode, update_stats, None if masks is None else masks[k])
            for k, r in enumerate(self.local_params.regions)
        ]

    def forward(
        self,
        x,
        training: bool = True,
        update_stats: bool = True,
        use_global: bool = True,
        use_local: bool = True,
    ) -> ForwardOutput:
        x = as_tensor(x)
        c = self.config
        if x.ndim != 3 or x.shape[1:] != (c.n_channels, c.in_dim):
            raise DimensionError(f"expected B x {c.n_channels} x {c.in_dim} features, got {x.shape}")
        y_global = a_g = y_local = None
        graphs, feats, hidden = [], None, None
        if use_global:
            a_g = self.global_graph()
            y_global = global_logits(self.global_params, a_g, x)
        if use_local:
            mode = "train" if training else "eval"
            lo = local_forward_full(self.local_params, self.a_prior, x, mode=mode, update_stats=update_stats)
            y_local, graphs, feats, hidden = lo.logits, lo.graphs, lo.region_features, lo.hidden
        if use_global and use_local:
            fused = fuse_logits(y_global, y_local)
        else:
            fused = y_global if use_global else y_local
        return ForwardOutput(y_global, y_local, fused, a_g, graphs, feats, hidden)

    __call__ = forward
