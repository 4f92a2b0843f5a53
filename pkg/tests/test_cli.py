import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from nhgln import global_stream
from nhgln.cli import default_config, main
from nhgln.datasets import load_dataset

from test_model import flipped_relu

TINY = {
    "seed": 1,
    "synthetic": {
        "n_channels": 8, "n_bands": 3, "band_edges": [[1, 4], [4, 8], [8, 14]],
        "n_subjects": 2, "samples_per_class": 10, "noise": 0.2, "class_gap": 1.0,
    },
    "model": {"n_regions": 2, "d_model": 8, "heads": 2, "depth": 1, "d_ff": 16, "d_hidden": 4, "gcn_hidden": [4, 6]},
    "train": {"epochs": 2, "batch_size": 8, "val_fraction": 0.2},
    "max_folds": 1,
}


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


@pytest.fixture
def trained(tmp_path, tiny_config):
    out = tmp_path / "run"
    assert main(["train", "--config", str(tiny_config), "--out", str(out)]) == 0
    return out


class TestGenData:
    def test_default_config_files(self, tmp_path):
        out = tmp_path / "g"
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"synthetic": {"samples_per_class": 4}}))
        assert main(["gen-data", "--config", str(cfg), "--out", str(out)]) == 0
        for name in ("config.json", "dataset.nhgd", "layout.txt", "partition.txt"):
            assert (out / name).exists()
        assert load_dataset(out / "dataset.nhgd").shape == (12, 62, 5)

    def test_seed_reproducible(self, tmp_path, tiny_config):
        a, b = tmp_path / "a", tmp_path / "b"
        for o in (a, b):
            assert main(["gen-data", "--config", str(tiny_config), "--seed", "7", "--out", str(o)]) == 0
        for name in ("dataset.nhgd", "layout.txt", "partition.txt", "config.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        assert json.loads((a / "config.json").read_text())["seed"] == 7

    def test_zero_classes_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"synthetic": {"n_classes": 0}}))
        assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "x")]) != 0
        assert "n_classes" in capsys.readouterr().err
        assert not (tmp_path / "x" / "dataset.nhgd").exists()

    def test_env_out(self, tmp_path, tiny_config, monkeypatch):
        monkeypatch.setenv("NHGLN_OUT", str(tmp_path / "env"))
        assert main(["gen-data", "--config", str(tiny_config)]) == 0
        assert (tmp_path / "env" / "dataset.nhgd").exists()


class TestConfig:
    def test_unknown_keys_listed(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"bogus": 1, "train": {"epochz": 3}}))
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
        err = capsys.readouterr().err
        assert "'bogus'" in err and "'train.epochz'" in err

    def test_all_problems_reported(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        doc = dict(TINY, protocol="kfold", model=dict(TINY["model"], d_model=9))
        cfg.write_text(json.dumps(doc))
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
        err = capsys.readouterr().err
        assert "d_model=9" in err and "kfold" in err

    def test_resolved_config_echo(self, trained):
        cfg = json.loads((trained / "config.json").read_text())
        assert cfg["model"]["n_channels"] == 8 and cfg["model"]["in_dim"] == 3 and cfg["model"]["n_classes"] == 3
        assert set(cfg) == set(default_config())

    def test_threads_validated(self):
        assert main(["--threads", "0", "gradcheck"]) == 1


class TestTrain:
    def test_outputs(self, trained):
        fold = trained / "fold_0"
        for name in ("metrics.csv", "checkpoint.nhgln", "result.json"):
            assert (fold / name).exists()
        header, rows = read_csv(fold / "metrics.csv")
        assert header[:3] == ["step", "epoch", "lr"]
        res = json.loads((fold / "result.json").read_text())
        assert res["steps"] == int(rows[-1][0])
        report = json.loads((trained / "report.json").read_text())
        assert report["mean_test_acc"] == res["test_acc"] and report["std_test_acc"] == 0.0
        assert (trained / "report.txt").read_text().splitlines()[-1].startswith("ACC ")

    def test_deterministic(self, tmp_path, tiny_config, trained):
        out = tmp_path / "again"
        assert main(["train", "--config", str(tiny_config), "--out", str(out)]) == 0
        assert (out / "fold_0" / "metrics.csv").read_bytes() == (trained / "fold_0" / "metrics.csv").read_bytes()

    def test_ablation_flag(self, tmp_path, tiny_config):
        out = tmp_path / "abl"
        assert main(["train", "--config", str(tiny_config), "--out", str(out), "--ablation", "w/o-local"]) == 0
        res = json.loads((out / "fold_0" / "result.json").read_text())
        assert res["test_local_acc"] is None and res["test_global_acc"] == res["test_acc"]
        assert json.loads((out / "config.json").read_text())["train"]["disable_local"] is True

    def test_resume(self, tmp_path, tiny_config, trained):
        out = tmp_path / "res"
        assert main(["train", "--config", str(tiny_config), "--out", str(out), "--epochs", "1"]) == 0
        assert main(["train", "--config", str(tiny_config), "--out", str(out), "--resume"]) == 0
        assert (out / "fold_0" / "metrics.csv").read_bytes() == (trained / "fold_0" / "metrics.csv").read_bytes()

    def test_loso(self, tmp_path, tiny_config):
        out = tmp_path / "loso"
        assert main(["train", "--config", str(tiny_config), "--out", str(out), "--protocol", "loso",
                     "--max-folds", "2", "--epochs", "1"]) == 0
        assert len(json.loads((out / "report.json").read_text())["folds"]) == 2

    def test_mask_local_graphs(self, tmp_path, tiny_config):
        assert main(["train", "--config", str(tiny_config), "--out", str(tmp_path / "m"),
                     "--mask-local-graphs", "--epochs", "1"]) == 0


class TestEval:
    def test_matches_training_val(self, trained, tiny_config, tmp_path):
        out = tmp_path / "ev"
        ck = trained / "fold_0" / "checkpoint.nhgln"
        assert main(["eval", "--config", str(tiny_config), "--checkpoint", str(ck), "--split", "val",
                     "--out", str(out)]) == 0
        got = json.loads((out / "eval.json").read_text())
        res = json.loads((trained / "fold_0" / "result.json").read_text())
        assert got["accuracy"] == res["val_acc"]
        assert got["n"] == res["val_size"]

    def test_logits_and_confusion(self, trained, tiny_config, tmp_path):
        out = tmp_path / "ev"
        ck = trained / "fold_0" / "checkpoint.nhgln"
        assert main(["eval", "--config", str(tiny_config), "--checkpoint", str(ck), "--split", "test",
                     "--out", str(out), "--embeddings"]) == 0
        header, rows = read_csv(out / "logits.csv")
        res = json.loads((trained / "fold_0" / "result.json").read_text())
        assert len(rows) == res["test_size"]
        fused = np.array([[float(v) for v in r[3:6]] for r in rows])
        labels = np.array([int(r[1]) for r in rows])
        assert float(np.mean(fused.argmax(1) == labels)) == res["test_acc"]
        _, cm = read_csv(out / "confusion.csv")
        assert sum(int(v) for r in cm for v in r) == len(rows)
        eh, er = read_csv(out / "embeddings.csv")
        assert len(er) == len(rows) and len(eh) == 8 * 4

    def test_missing_checkpoint(self, tiny_config, tmp_path, capsys):
        assert main(["eval", "--config", str(tiny_config), "--checkpoint", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "e")]) == 2
        assert "does not exist" in capsys.readouterr().err

    def test_corrupt_checkpoint(self, tiny_config, tmp_path):
        bad = tmp_path / "bad.nhgln"
        bad.write_bytes(b"garbage")
        assert main(["eval", "--config", str(tiny_config), "--checkpoint", str(bad), "--out", str(tmp_path / "e")]) == 2

    def test_wrong_architecture(self, trained, tiny_config, tmp_path, capsys):
        ck = trained / "fold_0" / "checkpoint.nhgln"
        code = main(["eval", "--config", str(tiny_config), "--checkpoint", str(ck), "--out", str(tmp_path / "e"),
                     "--ablation", "w/o-kl"])
        assert code == 0  # loss ablations keep the architecture
        cfg = json.loads(tiny_config.read_text())
        cfg["model"]["d_hidden"] = 5
        other = tmp_path / "other.json"
        other.write_text(json.dumps(cfg))
        assert main(["eval", "--config", str(other), "--checkpoint", str(ck), "--out", str(tmp_path / "e")]) == 1
        assert "shape" in capsys.readouterr().err


class TestExportGraph:
    def test_graph_files(self, trained, tiny_config, tmp_path):
        out = tmp_path / "gx"
        ck = trained / "fold_0" / "checkpoint.nhgln"
        assert main(["export-graph", "--config", str(tiny_config), "--checkpoint", str(ck), "--out", str(out)]) == 0
        files = sorted(p.name for p in out.glob("*.csv"))
        assert files == ["global_graph.csv", "local_graph_0.csv", "local_graph_1.csv"]
        header, rows = read_csv(out / "global_graph.csv")
        assert len(header) == 9 and header[-1] == "strength" and len(rows) == 8
        a = np.array([[float(v) for v in r[:-1]] for r in rows])
        strength = np.array([float(r[-1]) for r in rows])
        assert np.all(a >= 0)
        assert np.max(np.abs(strength - 0.5 * (a.sum(0) + a.sum(1)))) < 1e-12

    def test_reload_matches_model(self, trained, tiny_config, tmp_path):
        from nhgln.checkpoint import load_checkpoint
        from nhgln.cli import Setup, apply_overrides, load_config
        from nhgln.training import model_state

        out = tmp_path / "gx"
        ck = trained / "fold_0" / "checkpoint.nhgln"
        assert main(["export-graph", "--config", str(tiny_config), "--checkpoint", str(ck), "--out", str(out)]) == 0
        setup = Setup(load_config(tiny_config))
        model = setup.model()
        model.load_state_dict(model_state(load_checkpoint(ck)))
        _, rows = read_csv(out / "local_graph_1.csv")
        a = np.array([[float(v) for v in r[:-1]] for r in rows])
        assert np.max(np.abs(a - model.local_graphs()[1].data)) < 1e-12


class TestGradcheck:
    def test_passes(self, capsys):
        assert main(["gradcheck"]) == 0
        assert "worst relative error" in capsys.readouterr().out

    def test_eps_option(self, capsys):
        assert main(["gradcheck", "--eps", "1e-4", "--seed", "2"]) == 0
        assert "h=0.0001" in capsys.readouterr().out

    def test_sign_error_detected(self, monkeypatch, capsys):
        monkeypatch.setattr(global_stream, "relu", flipped_relu)
        assert main(["gradcheck"]) == 1
        assert "global." in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "nhgln", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "gen-data" in proc.stdout
