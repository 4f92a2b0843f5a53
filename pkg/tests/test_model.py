import numpy as np
import pytest

from nhgln import global_stream
from nhgln.autograd import Tensor
from nhgln.errors import DimensionError, ValidationError
from nhgln.gradcheck import gradcheck_model, relative_error
from nhgln.model import ModelConfig, NeuroHGLN


def flipped_relu(x):
    """ReLU whose backward pass has the wrong sign."""
    mask = x.data > 0
    return Tensor._make(np.where(mask, x.data, 0.0), (x,), lambda g: (-g * mask,), "relu")


class TestModelConfig:
    @pytest.mark.parametrize(
        "kw", [dict(d_model=121), dict(heads=7), dict(n_classes=1), dict(depth=-1), dict(gcn_hidden=()), dict(d_ff=0)]
    )
    def test_invalid(self, kw):
        with pytest.raises(ValidationError):
            ModelConfig(**kw)

    def test_defaults(self):
        c = ModelConfig()
        assert (c.region_width, c.head_dim) == (24, 8)
        assert c.to_dict()["gcn_hidden"] == [32, 64]


class TestNeuroHGLN:
    def test_prior_shape(self):
        with pytest.raises(DimensionError):
            NeuroHGLN(ModelConfig.tiny(), np.eye(7))

    def test_mask_needs_regions(self):
        with pytest.raises(ValidationError):
            NeuroHGLN(ModelConfig.tiny(mask_local_graphs=True), np.eye(8))

    def test_state_dict_round_trip(self, rng):
        cfg = ModelConfig.tiny()
        a, b = NeuroHGLN(cfg, np.eye(8), seed=0), NeuroHGLN(cfg, np.eye(8), seed=1)
        x = rng.normal(size=(4, 8, 3))
        a.forward(x, training=True, update_stats=True)
        b.load_state_dict(a.state_dict())
        fa = a.forward(x, training=False, update_stats=False).fused.data
        fb = b.forward(x, training=False, update_stats=False).fused.data
        assert fa.tobytes() == fb.tobytes()

    def test_load_reports_every_mismatch(self):
        small = NeuroHGLN(ModelConfig.tiny(), np.eye(8)).state_dict()
        other = NeuroHGLN(ModelConfig.tiny(d_hidden=5), np.eye(8))
        del small[next(iter(small))]
        with pytest.raises(DimensionError) as info:
            other.load_state_dict(small)
        assert str(info.value).count("\n") >= 2

    def test_input_shape(self):
        m = NeuroHGLN(ModelConfig.tiny(), np.eye(8))
        with pytest.raises(DimensionError):
            m.forward(np.zeros((2, 8, 4)))

    def test_head_counts(self, rng):
        m = NeuroHGLN(ModelConfig.tiny(), np.eye(8))
        out = m.forward(rng.normal(size=(5, 8, 3)))
        assert out.fused.shape == (5, 3) and len(out.local_graphs) == 2
        np.testing.assert_allclose(out.fused.data, 0.5 * (out.y_global.data + out.y_local.data), rtol=0, atol=1e-15)

    def test_single_stream(self, rng):
        m = NeuroHGLN(ModelConfig.tiny(), np.eye(8))
        x = rng.normal(size=(2, 8, 3))
        out = m.forward(x, use_global=False)
        assert out.y_global is None and np.array_equal(out.fused.data, out.y_local.data)


class TestGradcheck:
    def test_relative_error_floor(self):
        assert relative_error(0.0, 1e-9, floor=1e-6) == pytest.approx(1e-3)
        assert relative_error(2.0, 1.0) == 0.5

    def test_tiny_model_passes(self):
        rep = gradcheck_model(seed=0)
        assert rep.passed, rep.lines()
        assert rep.max_error < 1e-4
        assert set(rep.worst) == set(NeuroHGLN(ModelConfig.tiny(), np.eye(8)).named_parameters())

    def test_detects_wrong_gradient(self, monkeypatch):
        monkeypatch.setattr(global_stream, "relu", flipped_relu)
        rep = gradcheck_model(seed=0)
        assert not rep.passed
        assert any(k.startswith("global.") for k in rep.failures)
