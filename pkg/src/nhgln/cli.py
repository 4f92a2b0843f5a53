"""``nhgln`` command line: gen-data, train, eval, export-graph, gradcheck."""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .autograd import no_grad
from .checkpoint import load_checkpoint
from .datasets import FeatureDataset, SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .errors import FormatError, NHGLNError, NumericalAbort, ValidationError
from .geometry import (
    build_prior,
    contiguous_partition,
    load_layout,
    load_partition,
    random_layout,
    save_layout,
    save_partition,
    validate_partition,
)
from .gradcheck import DEFAULT_EPS, DEFAULT_THRESHOLD, gradcheck_model
from .model import ModelConfig, NeuroHGLN
from .objective import LossWeights
from .training import CHECKPOINT_NAME, TrainConfig, evaluate, make_splits, model_state, train, validation_split

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3
DEFAULT_OUT = "nhgln_out"
ABLATIONS = {
    "w/o-local": "disable_local",
    "w/o-global": "disable_global",
    "w/o-kl": "alpha_zero",
    "w/o-div": "beta_zero",
}
_DATA_DIMS = ("n_channels", "in_dim", "n_classes")


def _dataclass_defaults(cls, skip=()) -> dict:
    return {f.name: f.default for f in fields(cls) if f.name not in skip}


def default_config() -> dict:
    model = ModelConfig().to_dict()
    for k in _DATA_DIMS:
        model[k] = None  # taken from the dataset
    train_keys = _dataclass_defaults(TrainConfig, skip=("model", "weights", "seed"))
    synth = _dataclass_defaults(SyntheticSpec, skip=("layout",))
    synth["band_edges"] = [list(p) for p in synth["band_edges"]]
    return {
        "seed": 0,
        "out": None,
        "paths": {"dataset": None, "layout": None, "partition": None},
        "tau": None,
        "protocol": "cross_session",
        "max_folds": None,
        "model": model,
        "loss": asdict(LossWeights()),
        "train": train_keys,
        "synthetic": synth,
        "export": {"embeddings": False},
    }


def _merge(base: dict, update: dict, where: str, problems: list) -> None:
    for k, v in update.items():
        path = f"{where}{k}"
        if k not in base:
            problems.append(f"unknown key {path!r}")
        elif isinstance(base[k], dict):
            if not isinstance(v, dict):
                problems.append(f"{path!r} must be an object")
            else:
                _merge(base[k], v, path + ".", problems)
        else:
            base[k] = v


def load_config(path=None) -> dict:
    cfg = default_config()
    if path is None:
        return cfg
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ValidationError(f"config {path} must hold a JSON object")
    problems = []
    _merge(cfg, doc, "", problems)
    if problems:
        raise ValidationError("invalid config:\n  " + "\n  ".join(problems))
    return cfg


def apply_overrides(cfg: dict, args) -> dict:
    cfg = copy.deepcopy(cfg)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    for key, attr in (("dataset", "dataset"), ("layout", "layout"), ("partition", "partition")):
        if getattr(args, attr, None) is not None:
            cfg["paths"][key] = str(getattr(args, attr))
    if getattr(args, "epochs", None) is not None:
        cfg["train"]["epochs"] = args.epochs
    if getattr(args, "batch_size", None) is not None:
        cfg["train"]["batch_size"] = args.batch_size
    if getattr(args, "protocol", None) is not None:
        cfg["protocol"] = args.protocol
    if getattr(args, "max_folds", None) is not None:
        cfg["max_folds"] = args.max_folds
    for name in getattr(args, "ablation", None) or ():
        cfg["train"][ABLATIONS[name]] = True
    if getattr(args, "mask_local_graphs", False):
        cfg["model"]["mask_local_graphs"] = True
    if getattr(args, "embeddings", False):
        cfg["export"]["embeddings"] = True
    return cfg


def output_dir(args, cfg: dict) -> Path:
    out = getattr(args, "out", None) or os.environ.get("NHGLN_OUT") or cfg.get("out") or DEFAULT_OUT
    return Path(out)


# config -> objects ------------------------------------------------------------


def _build(cls, kwargs: dict, label: str, problems: list):
    try:
        return cls(**kwargs)
    except (NHGLNError, TypeError, ValueError) as exc:
        problems.append(f"{label}: {exc}")
        return None


def synthetic_spec(cfg: dict, layout=None, problems=None) -> SyntheticSpec:
    problems = [] if problems is None else problems
    kw = dict(cfg["synthetic"])
    kw["band_edges"] = tuple(tuple(p) for p in kw["band_edges"])
    spec = _build(SyntheticSpec, dict(kw, layout=layout), "synthetic", problems)
    if spec is not None:
        try:
            spec.validate()
        except ValidationError as exc:
            problems.append(str(exc))
            spec = None
    return spec


def train_config(cfg: dict, ds: FeatureDataset | None, problems: list) -> TrainConfig | None:
    mk = dict(cfg["model"])
    if ds is not None:
        dims = dict(zip(_DATA_DIMS, (ds.shape[1], ds.shape[2], ds.n_classes)))
        for k, v in dims.items():
            if mk[k] is None:
                mk[k] = v
            elif mk[k] != v:
                problems.append(f"model.{k}={mk[k]} disagrees with the dataset ({v})")
    for k in _DATA_DIMS:
        if mk[k] is None:
            problems.append(f"model.{k} is unset and no dataset supplies it")
    if problems:
        return None
    model = _build(ModelConfig, mk, "model", problems)
    weights = _build(LossWeights, cfg["loss"], "loss", problems)
    if model is None or weights is None:
        return None
    return _build(TrainConfig, dict(cfg["train"], model=model, weights=weights, seed=cfg["seed"]), "train", problems)


def resolve_layout(cfg: dict, n_channels: int):
    if cfg["paths"]["layout"] is not None:
        return load_layout(cfg["paths"]["layout"])
    if n_channels == 62:
        return load_layout()
    return random_layout(n_channels, np.random.default_rng([int(cfg["seed"]), 3]))


def resolve_partition(cfg: dict, layout, k: int):
    if cfg["paths"]["partition"] is not None:
        return load_partition(cfg["paths"]["partition"])
    if cfg["paths"]["layout"] is None and layout.num_channels == 62:
        return load_partition()
    return contiguous_partition(layout, k)


def load_or_generate(cfg: dict, problems: list):
    """The dataset named in the config, or a synthetic one built from it."""
    if cfg["paths"]["dataset"] is not None:
        ds = load_dataset(cfg["paths"]["dataset"])
        return ds, resolve_layout(cfg, ds.shape[1])
    n = int(cfg["synthetic"]["n_channels"])
    layout = resolve_layout(cfg, n)
    spec = synthetic_spec(cfg, layout, problems)
    if spec is None:
        return None, layout
    return generate_synthetic(spec, int(cfg["seed"])), layout


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class Setup:
    """Everything a train/eval/export command needs, validated up front."""

    def __init__(self, cfg: dict):
        problems = []
        self.cfg = cfg
        self.dataset, self.layout = load_or_generate(cfg, problems)
        self.train_cfg = train_config(cfg, self.dataset, problems)
        if self.dataset is not None and self.layout.num_channels != self.dataset.shape[1]:
            problems.append(f"layout has {self.layout.num_channels} electrodes, dataset {self.dataset.shape[1]} channels")
        self.partition = None
        if self.train_cfg is not None and not problems:
            self.partition = resolve_partition(cfg, self.layout, self.train_cfg.model.n_regions)
            try:
                validate_partition(self.layout, self.partition)
            except ValidationError as exc:
                problems.append(str(exc))
            if self.train_cfg.model.mask_local_graphs and self.partition.K != self.train_cfg.model.n_regions:
                problems.append(f"mask_local_graphs needs {self.train_cfg.model.n_regions} regions, partition has {self.partition.K}")
        if cfg["protocol"] not in ("cross_session", "loso"):
            problems.append(f"protocol must be cross_session or loso, got {cfg['protocol']!r}")
        if problems:
            raise ValidationError("invalid configuration:\n  " + "\n  ".join(problems))
        self.prior = build_prior(self.layout, cfg["tau"])
        self.masks = self.partition.masks(self.layout)

    def resolved(self) -> dict:
        cfg = copy.deepcopy(self.cfg)
        for k in _DATA_DIMS:
            cfg["model"][k] = getattr(self.train_cfg.model, k)
        return cfg

    def model(self) -> NeuroHGLN:
        tc = self.train_cfg
        return NeuroHGLN(tc.model, self.prior.adjacency, self.masks if tc.model.mask_local_graphs else None, seed=tc.seed)

    def folds(self) -> list:
        folds = make_splits(self.dataset, self.cfg["protocol"])
        if self.cfg["max_folds"] is not None:
            folds = folds[: int(self.cfg["max_folds"])]
        return folds

    def fold_split(self, fold: int):
        folds = self.folds()
        if not 0 <= fold < len(folds):
            raise ValidationError(f"fold {fold} out of range; protocol gives {len(folds)} folds")
        tr, te = folds[fold]
        fit, val = validation_split(tr, self.train_cfg.seed, self.train_cfg.val_fraction)
        return {"train": fit, "val": val, "test": te}


# commands ---------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = apply_overrides(load_config(args.config), args)
    out = output_dir(args, cfg)
    n = int(cfg["synthetic"]["n_channels"])
    layout = resolve_layout(cfg, n)
    problems = []
    spec = synthetic_spec(cfg, layout, problems)
    if problems:
        raise ValidationError("invalid configuration:\n  " + "\n  ".join(problems))
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", cfg)
    ds = generate_synthetic(spec, int(cfg["seed"]))
    save_dataset(ds, out / "dataset.nhgd")
    save_layout(layout, out / "layout.txt")
    k = int(cfg["model"]["n_regions"])
    if cfg["paths"]["partition"] is not None:
        part = load_partition(cfg["paths"]["partition"])
    elif cfg["paths"]["layout"] is None and n == 62:
        part = load_partition()
    else:
        part = contiguous_partition(layout, k)
    save_partition(part, out / "partition.txt")
    s, n, d = ds.shape
    print(f"S={s} N={n} d={d} C={ds.n_classes} -> {out / 'dataset.nhgd'}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = apply_overrides(load_config(args.config), args)
    setup = Setup(cfg)
    out = output_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", setup.resolved())
    tc = setup.train_cfg
    ds = setup.dataset
    results = []
    for i, (tr, te) in enumerate(setup.folds()):
        fit, val = validation_split(tr, tc.seed, tc.val_fraction)
        fold_dir = out / f"fold_{i}"
        ckpt = fold_dir / CHECKPOINT_NAME
        resume = ckpt if args.resume and ckpt.exists() else None
        model = setup.model()

        def log(summary, _model, i=i):
            val_s = "" if summary.val_acc is None else f" val={summary.val_acc:.4f}"
            print(f"fold {i} epoch {summary.epoch} step {summary.step} train={summary.train_acc:.4f}{val_s}", flush=True)

        rep = train(tc, model, ds, fit, val, out_dir=fold_dir, resume_from=resume, on_epoch=log)
        test = evaluate(model, ds, te, tc.use_global, tc.use_local, tc.eval_batch_size)
        val_acc = evaluate(model, ds, val, tc.use_global, tc.use_local, tc.eval_batch_size).accuracy if val.size else None
        row = {
            "fold": i,
            "train_size": int(fit.size),
            "val_size": int(val.size),
            "test_size": int(te.size),
            "steps": rep.steps,
            "epochs_run": rep.epochs_run,
            "train_acc": rep.final_train_acc,
            "val_acc": val_acc,
            "test_acc": test.accuracy,
            "test_global_acc": test.global_accuracy,
            "test_local_acc": test.local_accuracy,
        }
        write_json(fold_dir / "result.json", row)
        results.append(row)
        print(f"fold {i} test accuracy {test.accuracy:.4f}", flush=True)
    accs = np.array([r["test_acc"] for r in results])
    report = {
        "protocol": cfg["protocol"],
        "folds": results,
        "mean_test_acc": float(accs.mean()),
        "std_test_acc": float(accs.std()),
    }
    write_json(out / "report.json", report)
    text = [f"protocol {cfg['protocol']}, {len(results)} folds"]
    text += [f"fold {r['fold']}: test {r['test_acc']:.4f}" for r in results]
    text.append(f"ACC {100 * report['mean_test_acc']:.2f} STD {100 * report['std_test_acc']:.2f}")
    (out / "report.txt").write_text("\n".join(text) + "\n", encoding="utf-8")
    print(text[-1])
    return EXIT_OK


def _load_model(setup: Setup, checkpoint) -> NeuroHGLN:
    path = Path(checkpoint)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    model = setup.model()
    model.load_state_dict(model_state(load_checkpoint(path)))
    return model


def _write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    lines += [",".join(v if isinstance(v, str) else repr(v) if isinstance(v, float) else str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


def cmd_eval(args) -> int:
    cfg = apply_overrides(load_config(args.config), args)
    setup = Setup(cfg)
    out = output_dir(args, cfg)
    model = _load_model(setup, args.checkpoint)
    tc, ds = setup.train_cfg, setup.dataset
    index = None if args.split == "all" else setup.fold_split(args.fold)[args.split]
    rep = evaluate(model, ds, index, tc.use_global, tc.use_local, tc.eval_batch_size)
    out.mkdir(parents=True, exist_ok=True)
    index = np.arange(len(ds)) if index is None else index
    c = ds.n_classes
    header = ["index", "label", "pred"] + [f"fused_{k}" for k in range(c)]
    blocks = [rep.fused]
    if rep.y_global is not None:
        header += [f"global_{k}" for k in range(c)]
        blocks.append(rep.y_global)
    if rep.y_local is not None:
        header += [f"local_{k}" for k in range(c)]
        blocks.append(rep.y_local)
    logits = np.concatenate(blocks, axis=1)
    preds = rep.fused.argmax(axis=1)
    rows = [[int(i), int(y), int(p)] + [float(v) for v in row] for i, y, p, row in zip(index, rep.labels, preds, logits)]
    _write_csv(out / "logits.csv", header, rows)
    _write_csv(out / "confusion.csv", [f"pred_{k}" for k in range(c)], rep.confusion.tolist())
    if cfg["export"]["embeddings"] and tc.use_local:
        with no_grad():
            emb = np.concatenate([
                model.forward(ds.features[index[lo : lo + tc.eval_batch_size]], training=False,
                              update_stats=False).local_hidden.data.reshape(-1, ds.shape[1] * tc.model.d_hidden)
                for lo in range(0, index.size, tc.eval_batch_size)
            ])
        _write_csv(out / "embeddings.csv", [f"e{j}" for j in range(emb.shape[1])], [[float(v) for v in r] for r in emb])
    summary = {"accuracy": rep.accuracy, "global_accuracy": rep.global_accuracy,
               "local_accuracy": rep.local_accuracy, "n": int(index.size)}
    write_json(out / "eval.json", summary)
    fmt = lambda v: "n/a" if v is None else f"{v:.4f}"  # noqa: E731
    print(f"fused {fmt(rep.accuracy)} global {fmt(rep.global_accuracy)} local {fmt(rep.local_accuracy)} (n={index.size})")
    return EXIT_OK


def graph_rows(a: np.ndarray) -> list:
    strength = 0.5 * (a.sum(axis=1) + a.sum(axis=0))
    return [[float(v) for v in row] + [float(s)] for row, s in zip(a, strength)]


def cmd_export_graph(args) -> int:
    cfg = apply_overrides(load_config(args.config), args)
    setup = Setup(cfg)
    out = output_dir(args, cfg)
    model = _load_model(setup, args.checkpoint)
    out.mkdir(parents=True, exist_ok=True)
    header = list(setup.layout.names) + ["strength"]
    with no_grad():
        graphs = [("global_graph.csv", model.global_graph().data)]
        graphs += [(f"local_graph_{k}.csv", g.data) for k, g in enumerate(model.local_graphs())]
    for name, a in graphs:
        _write_csv(out / name, header, graph_rows(a))
    print(f"wrote {len(graphs)} graphs to {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rep = gradcheck_model(seed=args.seed or 0, eps=args.eps, threshold=args.threshold)
    for line in rep.lines():
        print(line)
    print(f"worst relative error {rep.max_error:.3e} (h={rep.eps}, threshold {rep.threshold})")
    if rep.passed:
        return EXIT_OK
    print("gradient check failed for: " + ", ".join(rep.failures), file=sys.stderr)
    return EXIT_VALIDATION


# entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nhgln", description="Hierarchical graph network for multichannel features.")
    p.add_argument("--threads", type=int, default=1, help="cap on BLAS worker threads (default 1)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="JSON configuration document")
        sp.add_argument("--out", help="output directory (default: $NHGLN_OUT or ./nhgln_out)")
        sp.add_argument("--seed", type=int)
        if data:
            sp.add_argument("--dataset", help="NHGD1 dataset file")
            sp.add_argument("--layout", help="electrode layout file")
            sp.add_argument("--partition", help="region partition file")
            sp.add_argument("--ablation", action="append", choices=sorted(ABLATIONS))
            sp.add_argument("--mask-local-graphs", action="store_true")
            sp.add_argument("--protocol", choices=("cross_session", "loso"))
            sp.add_argument("--max-folds", type=int)

    g = sub.add_parser("gen-data", help="write a synthetic NHGD1 dataset")
    common(g, data=False)
    g.add_argument("--layout", help="electrode layout file")
    g.add_argument("--partition", help="region partition file")

    t = sub.add_parser("train", help="train over the protocol's folds")
    common(t)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--resume", action="store_true", help="continue from fold checkpoints in the output directory")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", choices=("all", "train", "val", "test"), default="all")
    e.add_argument("--fold", type=int, default=0)
    e.add_argument("--embeddings", action="store_true", help="also export local-stream embeddings")

    x = sub.add_parser("export-graph", help="write learned graphs as CSV")
    common(x)
    x.add_argument("--checkpoint", required=True)

    c = sub.add_parser("gradcheck", help="finite-difference check on the tiny configuration")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--eps", type=float, default=DEFAULT_EPS)
    c.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    return p


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "export-graph": cmd_export_graph,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](args)
    except NumericalAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NHGLNError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
