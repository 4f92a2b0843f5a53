"""Epoch loop, evaluation protocol, splits and checkpoint/resume."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autograd import no_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .datasets import FeatureDataset
from .errors import ContractError, MetadataError, NumericalAbort, ValidationError
from .model import ModelConfig, NeuroHGLN
from .objective import LossWeights, joint_objective, predict
from .optim import Adam, ScheduleConfig

METRIC_FIELDS = ("step", "epoch", "lr", "l_global", "l_local", "l_dist", "l_div", "total", "train_acc", "val_acc")
CHECKPOINT_NAME = "checkpoint.nhgln"
METRICS_NAME = "metrics.csv"


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    batch_size: int = 128
    epochs: int = 200
    seed: int = 0
    warmup_steps: int = 4000
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    disable_global: bool = False
    disable_local: bool = False
    alpha_zero: bool = False
    beta_zero: bool = False
    val_fraction: float = 0.1
    eval_batch_size: int = 256

    def __post_init__(self):
        if self.disable_global and self.disable_local:
            raise ValidationError("disable_global and disable_local cannot both be set")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ValidationError("batch sizes must be >= 1")
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if self.warmup_steps < 1:
            raise ValidationError(f"warmup_steps must be >= 1, got {self.warmup_steps}")
        if not 0 <= self.val_fraction < 1:
            raise ValidationError(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.adam_eps > 0):
            raise ValidationError("Adam needs 0 <= beta1, beta2 < 1 and eps > 0")

    @property
    def use_global(self) -> bool:
        return not self.disable_global

    @property
    def use_local(self) -> bool:
        return not self.disable_local

    def effective_weights(self) -> LossWeights:
        w = self.weights
        if self.alpha_zero:
            w = replace(w, alpha=0.0)
        if self.beta_zero:
            w = replace(w, beta=0.0)
        return w

    def schedule(self) -> ScheduleConfig:
        return ScheduleConfig(self.model.d_model, self.warmup_steps)


# splits -----------------------------------------------------------------------


def _tags(ds: FeatureDataset, name: str, protocol: str) -> np.ndarray:
    tags = getattr(ds, name)
    if np.any(tags < 0):
        raise MetadataError(f"{protocol} needs {name} on every sample; {int((tags < 0).sum())} are unknown")
    if np.unique(tags).size < 2:
        raise MetadataError(f"{protocol} needs at least two distinct {name}")
    return tags


def make_splits(ds: FeatureDataset, protocol: str) -> list:
    """``(train_idx, test_idx)`` folds.

    ``cross_session``: every ordered pair of distinct sessions (train on one,
    test on the other). ``loso``: one fold per subject, that subject held out.
    Negative tags mark unknown metadata.
    """
    if protocol == "cross_session":
        tags = _tags(ds, "session_tags", protocol)
        values = np.unique(tags)
        return [
            (np.flatnonzero(tags == a), np.flatnonzero(tags == b))
            for a in values
            for b in values
            if a != b
        ]
    if protocol == "loso":
        tags = _tags(ds, "subject_tags", protocol)
        return [(np.flatnonzero(tags != s), np.flatnonzero(tags == s)) for s in np.unique(tags)]
    raise ValidationError(f"unknown protocol {protocol!r}; use cross_session or loso")


def validation_split(train_idx, seed: int, fraction: float = 0.1):
    """Last ``fraction`` of a seed-shuffled copy of ``train_idx`` is held out."""
    idx = np.asarray(train_idx, dtype=np.int64)
    order = np.random.default_rng([seed, 7]).permutation(idx)
    n_val = int(math.floor(fraction * idx.size))
    cut = idx.size - n_val
    return order[:cut], order[cut:]


# evaluation -------------------------------------------------------------------


@dataclass
class EvalReport:
    accuracy: float
    global_accuracy: float | None
    local_accuracy: float | None
    confusion: np.ndarray
    labels: np.ndarray
    fused: np.ndarray
    y_global: np.ndarray | None
    y_local: np.ndarray | None


def confusion_matrix(labels, preds, n_classes: int) -> np.ndarray:
    """Counts with rows for the true class, columns for the prediction."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(preds)), 1)
    return cm


def score_logits(logits, labels, n_classes: int):
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ContractError("cannot score an empty split")
    preds = predict(logits)
    return float(np.mean(preds == labels)), confusion_matrix(labels, preds, n_classes)


def evaluate(
    model: NeuroHGLN,
    ds: FeatureDataset,
    index=None,
    use_global: bool = True,
    use_local: bool = True,
    batch_size: int = 256,
) -> EvalReport:
    """Eval-mode forward over a split; fused plus per-stream accuracy."""
    index = np.arange(len(ds)) if index is None else np.asarray(index, dtype=np.int64)
    if index.size == 0:
        raise ContractError("cannot evaluate an empty split")
    fused, yg, yl = [], [], []
    with no_grad():
        for lo in range(0, index.size, batch_size):
            sel = index[lo : lo + batch_size]
            out = model.forward(ds.features[sel], training=False, update_stats=False,
                                use_global=use_global, use_local=use_local)
            fused.append(out.fused.data)
            if use_global:
                yg.append(out.y_global.data)
            if use_local:
                yl.append(out.y_local.data)
    labels = ds.labels[index]
    fused = np.concatenate(fused)
    acc, cm = score_logits(fused, labels, ds.n_classes)
    yg = np.concatenate(yg) if use_global else None
    yl = np.concatenate(yl) if use_local else None
    g_acc = score_logits(yg, labels, ds.n_classes)[0] if use_global else None
    l_acc = score_logits(yl, labels, ds.n_classes)[0] if use_local else None
    return EvalReport(acc, g_acc, l_acc, cm, labels, fused, yg, yl)


# training ---------------------------------------------------------------------


@dataclass
class EpochSummary:
    epoch: int
    step: int
    train_acc: float
    val_acc: float | None


@dataclass
class TrainReport:
    steps: int
    epochs_run: int
    rows: list
    epochs: list
    stopped_early: bool = False

    @property
    def final_train_acc(self) -> float | None:
        return self.epochs[-1].train_acc if self.epochs else None

    @property
    def final_val_acc(self) -> float | None:
        return self.epochs[-1].val_acc if self.epochs else None


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def format_metric_row(row: dict) -> str:
    return ",".join(_fmt(row.get(k)) for k in METRIC_FIELDS)


def training_state(model: NeuroHGLN, opt: Adam, step: int, epoch: int) -> dict:
    state = model.state_dict()
    state.update(opt.state_dict())
    state["meta.step"] = np.array([float(step)])
    state["meta.epoch"] = np.array([float(epoch)])
    return state


def model_state(entries: dict) -> dict:
    """Strip optimizer and bookkeeping entries from a checkpoint mapping."""
    return {k: v for k, v in entries.items() if not k.startswith(("adam.", "meta."))}


def train(
    cfg: TrainConfig,
    model: NeuroHGLN,
    ds: FeatureDataset,
    train_idx=None,
    val_idx=None,
    out_dir=None,
    resume_from=None,
    on_step=None,
    on_epoch=None,
) -> TrainReport:
    """Mini-batch Adam over the warmup schedule, one shuffled pass per epoch.

    Epoch ``e`` shuffles with ``default_rng([seed, e])`` so a resumed run
    replays exactly the batches of an uninterrupted one. ``on_step(step,
    model, breakdown)`` runs after every update; ``on_epoch(summary, model)``
    runs at each epoch end and stops training by returning True.
    With ``out_dir`` the metrics CSV is written there and a checkpoint is
    refreshed after every epoch.
    """
    train_idx = np.arange(len(ds)) if train_idx is None else np.asarray(train_idx, dtype=np.int64)
    if train_idx.size == 0:
        raise ContractError("training split is empty")
    val_idx = None if val_idx is None or len(val_idx) == 0 else np.asarray(val_idx, dtype=np.int64)
    use_g, use_l = cfg.use_global, cfg.use_local
    weights = cfg.effective_weights()
    sched = cfg.schedule()
    opt = Adam(model.parameters(use_g, use_l), cfg.beta1, cfg.beta2, cfg.adam_eps)

    step, start_epoch = 0, 0
    if resume_from is not None:
        entries = load_checkpoint(resume_from)
        model.load_state_dict(model_state(entries))
        opt.load_state_dict(entries)
        step = int(entries["meta.step"][0])
        start_epoch = int(entries["meta.epoch"][0])

    metrics = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / METRICS_NAME
        if resume_from is not None and path.exists():
            _truncate_metrics(path, step)
            metrics = path.open("a", encoding="ascii")
        else:
            metrics = path.open("w", encoding="ascii")
            metrics.write(",".join(METRIC_FIELDS) + "\n")

    rows, summaries = [], []
    last_finite = None
    stopped = False
    try:
        for epoch in range(start_epoch, cfg.epochs):
            order = np.random.default_rng([cfg.seed, epoch]).permutation(train_idx)
            correct = 0
            epoch_rows = []
            for lo in range(0, order.size, cfg.batch_size):
                sel = order[lo : lo + cfg.batch_size]
                x, y = ds.features[sel], ds.labels[sel]
                step += 1
                out = model.forward(x, training=True, update_stats=True, use_global=use_g, use_local=use_l)
                lb = joint_objective(out.y_global, out.y_local, y, model.a_prior, out.local_graphs,
                                     weights, use_g, use_l)
                parts = lb.as_floats()
                if not all(math.isfinite(v) for v in parts.values()):
                    raise NumericalAbort(step, last_finite)
                last_finite = parts
                lb.total.backward()
                lr = sched(step)
                opt.step(lr)
                correct += int((predict(out.fused) == y).sum())
                row = {"step": step, "epoch": epoch, "lr": lr, **parts}
                epoch_rows.append(row)
                if on_step is not None:
                    on_step(step, model, lb)
            train_acc = correct / order.size
            val_acc = None
            if val_idx is not None:
                val_acc = evaluate(model, ds, val_idx, use_g, use_l, cfg.eval_batch_size).accuracy
            epoch_rows[-1]["train_acc"] = train_acc
            epoch_rows[-1]["val_acc"] = val_acc
            rows.extend(epoch_rows)
            summary = EpochSummary(epoch, step, train_acc, val_acc)
            summaries.append(summary)
            if metrics is not None:
                metrics.write("".join(format_metric_row(r) + "\n" for r in epoch_rows))
                metrics.flush()
                save_checkpoint(out_dir / CHECKPOINT_NAME, training_state(model, opt, step, epoch + 1))
            if on_epoch is not None and on_epoch(summary, model):
                stopped = True
                break
    finally:
        if metrics is not None:
            metrics.close()
    return TrainReport(step, len(summaries), rows, summaries, stopped)


def _truncate_metrics(path: Path, step: int) -> None:
    """Drop rows after ``step`` so a resumed run does not duplicate them."""
    lines = path.read_text(encoding="ascii").splitlines(keepends=True)
    keep = lines[:1] + [ln for ln in lines[1:] if int(ln.split(",", 1)[0]) <= step]
    path.write_text("".join(keep), encoding="ascii")


def build_model(cfg: TrainConfig, a_prior, region_masks=None, seed: int | None = None) -> NeuroHGLN:
    return NeuroHGLN(cfg.model, a_prior, region_masks, seed=cfg.seed if seed is None else seed)
