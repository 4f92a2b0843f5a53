"""The seven acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line; the lines are repeated in the
terminal summary. Criteria 3 and 4 train real models and take minutes.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from nhgln.autograd import Tensor
from nhgln.checkpoint import load_checkpoint
from nhgln.datasets import SyntheticSpec, decode_dataset, encode_dataset, generate_synthetic, load_dataset, save_dataset
from nhgln.geometry import ElectrodeLayout, build_prior, default_tau, distance_matrix, load_layout, load_partition, prior_adjacency, validate_partition
from nhgln.gradcheck import gradcheck_model
from nhgln.local_stream import EncoderLayerParams, LocalStreamParams, encoder_layer, local_forward_full
from nhgln.model import ModelConfig, NeuroHGLN
from nhgln.objective import diversity_loss, fuse_logits, geometric_kl, normalized_overlap
from nhgln.optim import ScheduleConfig, lr_schedule
from nhgln.training import CHECKPOINT_NAME, METRICS_NAME, TrainConfig, evaluate, make_splits, model_state, train

from conftest import record_criterion, tiny_problem


class TestAcceptance:
    def test_criterion_1_gradient_fidelity(self):
        t0 = time.perf_counter()
        rep = gradcheck_model(seed=0, eps=1e-5, batch=4, config=ModelConfig.tiny(n_classes=3))
        elapsed = time.perf_counter() - t0
        ok = rep.max_error < 1e-4 and elapsed < 60.0 and len(rep.worst) > 0
        record_criterion(1, "gradient fidelity", ok, f"max rel err {rep.max_error:.2e} over {len(rep.worst)} tensors, {elapsed:.1f} s")
        assert ok, rep.lines()

    def test_criterion_2_analytic_anchors(self):
        cfg = ScheduleConfig(120, 4000)
        closed = {s: 120**-0.5 * min(s**-0.5, s * 4000**-1.5) for s in (1, 4000, 16000)}
        lr_err = max(abs(lr_schedule(cfg, s) - v) for s, v in closed.items())
        peak_ok = abs(lr_schedule(cfg, 4000) - 1.4433756729740643e-3) < 1e-9
        rng = np.random.default_rng(0)
        g = rng.uniform(size=(6, 6))
        kl = float(geometric_kl(g, [g, g.copy()]).data)
        a = np.zeros((4, 4)); a[:2, :2] = 1.0
        b = np.zeros((4, 4)); b[2:, 2:] = 1.0
        div = float(diversity_loss([a, b]).data)
        fused = fuse_logits(Tensor([[1.0, 3.0]]), Tensor([[3.0, 1.0]])).data
        ok = lr_err < 1e-9 and peak_ok and kl < 1e-6 and div == 0.0 and fused.tolist() == [[2.0, 2.0]]
        record_criterion(2, "analytic anchors", ok, f"lr err {lr_err:.1e}, kl {kl:.1e}, div {div}, fused {fused.tolist()}")
        assert ok

    @pytest.mark.slow
    def test_criterion_3_synthetic_learning(self):
        ds = generate_synthetic(SyntheticSpec(), seed=0)
        assert ds.shape == (900, 62, 5)
        train_idx, held_idx = make_splits(ds, "cross_session")[0]
        cfg = TrainConfig(model=ModelConfig(), epochs=200, seed=0)
        model = NeuroHGLN(cfg.model, build_prior(load_layout()).adjacency, seed=0)
        best = {"train": 0.0, "held": 0.0, "epoch": None}

        def reached(summary, m):
            held = evaluate(m, ds, held_idx).accuracy
            if summary.train_acc >= 0.9 and held >= 0.7:
                best.update(train=summary.train_acc, held=held, epoch=summary.epoch)
                return True
            return False

        t0 = time.perf_counter()
        rep = train(cfg, model, ds, train_idx, on_epoch=reached)
        elapsed = time.perf_counter() - t0
        ok = rep.stopped_early and elapsed < 15 * 60
        detail = (f"train {best['train']:.3f}, held-out {best['held']:.3f} at epoch {best['epoch']}, "
                  f"{rep.epochs_run} epochs, {elapsed:.0f} s") if rep.stopped_early else f"not reached in {rep.epochs_run} epochs"
        record_criterion(3, "synthetic learning", ok, detail)
        assert ok

    @pytest.mark.slow
    def test_criterion_4_ablation_direction(self):
        ds = generate_synthetic(SyntheticSpec(class_gap=0.3), seed=0)
        train_idx, held_idx = make_splits(ds, "cross_session")[0]
        prior = build_prior(load_layout()).adjacency
        base = TrainConfig(model=ModelConfig(d_model=40, heads=5, depth=1, d_ff=64, d_hidden=8),
                           batch_size=32, epochs=100, seed=0)
        arms = {
            "full": base,
            "w/o-local": replace(base, disable_local=True),
            "w/o-global": replace(base, disable_global=True),
            "beta=0": replace(base, beta_zero=True),
        }
        acc, overlap = {}, {}
        for name, cfg in arms.items():
            model = NeuroHGLN(cfg.model, prior, seed=0)
            train(cfg, model, ds, train_idx)
            acc[name] = evaluate(model, ds, held_idx, cfg.use_global, cfg.use_local).accuracy
            if cfg.use_local:
                overlap[name] = normalized_overlap(model.local_graphs())
        a = acc["w/o-local"] <= acc["full"]
        b = acc["w/o-global"] <= acc["full"]
        c = overlap["beta=0"] > overlap["full"]
        detail = (f"acc full {acc['full']:.4f} w/o-local {acc['w/o-local']:.4f} w/o-global {acc['w/o-global']:.4f}; "
                  f"overlap beta=0 {overlap['beta=0']:.4e} vs full {overlap['full']:.4e}")
        record_criterion(4, f"ablation direction (a={a}, b={b}, c={c})", a and b and c, detail)
        assert a and b and c

    def test_criterion_5_structural_invariants(self):
        ds, prior = tiny_problem()
        cfg = TrainConfig(model=ModelConfig.tiny(n_classes=2), batch_size=8, epochs=2, seed=0)
        model = NeuroHGLN(cfg.model, prior, seed=0)
        worst = {"neg": 0.0, "total": 0.0}

        def check(step, m, lb):
            graphs = [m.global_graph().data] + [g.data for g in m.local_graphs(training=True)] + [g.data for g in m.local_graphs()]
            worst["neg"] = min(worst["neg"], min(float(g.min()) for g in graphs))
            worst["total"] = max(worst["total"], abs(float(lb.total.data) - lb.recomputed_total()))

        rep = train(cfg, model, ds, on_step=check)
        non_neg = worst["neg"] >= 0.0 and rep.steps == 20
        recon = worst["total"] < 1e-12

        rng = np.random.default_rng(5)
        layer = EncoderLayerParams.init(rng, 8, 2, 16)
        z = rng.normal(size=(3, 9, 8))
        out, weights = encoder_layer(z, layer, return_weights=True)
        row_err = float(np.max(np.abs(weights.data.sum(-1) - 1.0)))
        perm = rng.permutation(9)
        equi = float(np.max(np.abs(encoder_layer(z[:, perm], layer).data - out.data[:, perm])))

        # perturbing one region branch moves only that region's feature band
        params = LocalStreamParams.init(rng, 6, 3, 3, 12, 2, 1, 16, 4, 2)
        a6, x = rng.uniform(size=(6, 6)), rng.normal(size=(2, 6, 3))
        base_h = local_forward_full(params, a6, x, mode="eval").region_features.data
        disjoint = True
        for k in range(3):
            saved = [t.data.copy() for t in params.regions[k].named().values()] + [params.gcn_weights[k].data.copy()]
            for t in list(params.regions[k].named().values()) + [params.gcn_weights[k]]:
                t.data = t.data + rng.normal(size=t.data.shape)
            h = local_forward_full(params, a6, x, mode="eval").region_features.data
            moved = np.any(h != base_h, axis=(0, 1)).reshape(3, 4).any(axis=1)
            disjoint &= moved.tolist() == [j == k for j in range(3)]
            for t, s in zip(list(params.regions[k].named().values()) + [params.gcn_weights[k]], saved):
                t.data = s

        ok = non_neg and row_err <= 1e-12 and equi < 1e-9 and disjoint and recon
        record_criterion(5, "structural invariants", ok,
                         f"min graph entry {worst['neg']}, softmax row err {row_err:.1e}, equivariance {equi:.1e}, "
                         f"bands disjoint {disjoint}, total recon {worst['total']:.1e}")
        assert ok

    def test_criterion_6_determinism_and_persistence(self, tmp_path):
        ds, prior = tiny_problem()
        cfg = TrainConfig(model=ModelConfig.tiny(n_classes=2), batch_size=8, epochs=2, seed=3)
        models = []
        for name in ("a", "b"):
            m = NeuroHGLN(cfg.model, prior, seed=3)
            train(cfg, m, ds, out_dir=tmp_path / name, val_idx=np.arange(5))
            models.append(m)
        same_csv = (tmp_path / "a" / METRICS_NAME).read_bytes() == (tmp_path / "b" / METRICS_NAME).read_bytes()

        fresh = NeuroHGLN(cfg.model, prior, seed=42)
        fresh.load_state_dict(model_state(load_checkpoint(tmp_path / "a" / CHECKPOINT_NAME)))
        ea, eb = evaluate(models[0], ds), evaluate(fresh, ds)
        same_eval = ea.fused.tobytes() == eb.fused.tobytes() and ea.accuracy == eb.accuracy

        big = generate_synthetic(SyntheticSpec(samples_per_class=20), seed=1)
        save_dataset(big, tmp_path / "d.nhgd")
        back = load_dataset(tmp_path / "d.nhgd")
        same_ds = (
            back.features.tobytes() == big.features.tobytes()
            and np.array_equal(back.labels, big.labels)
            and np.array_equal(back.subject_tags, big.subject_tags)
            and np.array_equal(back.session_tags, big.session_tags)
            and encode_dataset(back) == (tmp_path / "d.nhgd").read_bytes()
            and decode_dataset(encode_dataset(back)).band_edges == big.band_edges
        )
        ok = same_csv and same_eval and same_ds
        record_criterion(6, "determinism and persistence", ok, f"metrics {same_csv}, checkpoint eval {same_eval}, dataset {same_ds}")
        assert ok

    def test_criterion_7_geometry(self):
        layout = load_layout()
        d = distance_matrix(layout).data
        tau = default_tau(d)
        a = prior_adjacency(d, tau).data
        rng = np.random.default_rng(0)
        rot = Rotation.random(random_state=1).as_matrix()
        moved = ElectrodeLayout(layout.names, layout.coords @ rot.T + rng.normal(size=3) * 10)
        d2 = distance_matrix(moved).data
        rigid = float(np.max(np.abs(prior_adjacency(d2, default_tau(d2)).data - a)))
        try:
            validate_partition(layout, load_partition())
            part_ok = True
        except Exception:  # noqa: BLE001
            part_ok = False
        iu = np.triu_indices(layout.num_channels, 1)
        med = float(np.median(a[iu]))
        med_err = abs(med - math.exp(-1))
        ok = rigid < 1e-9 and part_ok and med_err <= 1e-12
        record_criterion(7, "geometry", ok, f"rigid-motion err {rigid:.1e}, partition valid {part_ok}, median weight err {med_err:.1e}")
        assert ok
