import numpy as np
import pytest

from flowact.nn import (ModelConfig, forward, init_params, load_checkpoint, model_forward, param_shapes, predict,
                        save_checkpoint)
from flowact.nn.checkpoint import checkpoint_bytes
from flowact.nn.model import validate_state
from flowact.tensor_core import FormatError, SeededRng, ShapeError
from oracles import model_subset_gradcheck

TINY = ModelConfig.tiny()


def tiny_state(seed=0, dtype=np.float64):
    return init_params(TINY, SeededRng(seed), dtype)


def tiny_batch(n, seed=0):
    return np.random.default_rng(seed).random((n, TINY.frames, TINY.height, TINY.width, 3))


class TestConfig:
    def test_full_defaults(self):
        cfg = ModelConfig.full()
        assert cfg.is_full_profile
        assert cfg.feature_hw == (4, 4)
        assert cfg.gru_input == 50
        shapes = param_shapes(cfg)
        assert shapes["conv2d.0.weight"] == (3, 3, 3, 20)
        assert shapes["conv2d.4.weight"] == (3, 3, 50, 32)
        assert shapes["conv3d.weight"] == (3, 3, 3, 32, 50)
        assert shapes["gru.0.Wz"] == (128 + 50, 128)
        assert shapes["dense.weight"] == (128, 200)
        assert shapes["classifier.weight"] == (200, 2)

    def test_flatten_bridge(self):
        cfg = ModelConfig.tiny(bridge="flatten")
        h, w = cfg.feature_hw
        assert cfg.gru_input == h * w * cfg.conv3d_filters

    def test_dict_round_trip(self):
        assert ModelConfig.from_dict(TINY.to_dict()) == TINY

    def test_invalid(self):
        with pytest.raises(ValueError):
            ModelConfig(num_classes=1)
        with pytest.raises(ValueError):
            ModelConfig(height=8, width=8)
        with pytest.raises(ValueError):
            ModelConfig.tiny(bridge="max")


class TestInit:
    def test_deterministic(self):
        a, b = tiny_state(3), tiny_state(3)
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])
        c = tiny_state(4)
        assert not np.array_equal(a["dense.weight"], c["dense.weight"])

    def test_biases(self):
        s = tiny_state()
        for name, v in s.items():
            if name.endswith(".z.bias"):
                assert np.all(v == -1)
            elif name.endswith(".bias"):
                assert np.all(v == 0)

    def test_glorot_moments(self):
        cfg = ModelConfig(conv2d_filters=(8,) * 5, conv3d_filters=8, gru_hidden=64, dense_units=400,
                          height=32, width=32)
        s = init_params(cfg, SeededRng(0))
        w = s["dense.weight"]
        bound = np.sqrt(6.0 / sum(w.shape))
        assert np.abs(w).max() <= bound
        # uniform(-s, s) has variance s^2 / 3
        assert abs(w.var() / (bound ** 2 / 3) - 1) < 0.05
        assert abs(w.mean()) < 0.01 * bound

    def test_he_for_convolutions_only(self):
        cfg = ModelConfig.tiny(init="he", conv2d_filters=(16, 16), pool_layers=None)
        s = init_params(cfg, SeededRng(0))
        w = s["conv2d.1.weight"]
        fan_in, fan_out = 9 * 16, 9 * 16
        assert np.abs(w).max() <= np.sqrt(6.0 / fan_in)
        assert np.abs(w).max() > np.sqrt(6.0 / (fan_in + fan_out))
        d = s["dense.weight"]
        assert np.abs(d).max() <= np.sqrt(6.0 / sum(d.shape))

    def test_dtype(self):
        s = tiny_state(dtype=np.float32)
        assert all(v.dtype == np.float32 for v in s.values())


class TestForward:
    def test_shapes_and_probs(self):
        p = model_forward(tiny_batch(3), tiny_state(), TINY)
        assert p.shape == (3, 2)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert np.all((p >= 0) & (p <= 1))

    def test_batch_permutation_equivariant(self):
        x = tiny_batch(4, seed=1)
        s = tiny_state()
        perm = np.array([2, 0, 3, 1])
        np.testing.assert_allclose(model_forward(x[perm], s, TINY), model_forward(x, s, TINY)[perm], atol=1e-12)

    def test_predict_matches_single_batch(self):
        x = tiny_batch(5, seed=2)
        s = tiny_state()
        np.testing.assert_allclose(predict(x, s, TINY, batch_size=2), model_forward(x, s, TINY), atol=1e-12)

    def test_bad_input_shape(self):
        with pytest.raises(ShapeError):
            forward(np.zeros((1, TINY.frames + 1, 8, 8, 3)), tiny_state(), TINY)

    def test_bad_state_lists_names(self):
        s = tiny_state()
        del s["dense.bias"]
        s["dense.weight"] = np.zeros((1, 1))
        s["extra"] = np.zeros(1)
        with pytest.raises(ShapeError) as err:
            validate_state(s, TINY)
        msg = str(err.value)
        assert "dense.bias" in msg and "extra" in msg and "dense.weight" in msg

    @pytest.mark.slow
    def test_full_profile_smoke(self):
        cfg = ModelConfig.full()
        s = init_params(cfg, SeededRng(0), np.float32)
        x = np.random.default_rng(0).random((1, 20, 128, 128, 3)).astype(np.float32)
        p = model_forward(x, s, cfg)
        assert p.shape == (1, 2) and np.all(np.isfinite(p))


class TestBackward:
    @pytest.mark.parametrize("seed", range(3))
    def test_subset_finite_difference(self, seed):
        err, n_checked, total = model_subset_gradcheck(seed)
        assert n_checked >= 0.01 * total
        assert err < 1e-4


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        s = tiny_state(5, np.float32)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, s, TINY, meta={"epochs": 3})
        s2, cfg2, meta = load_checkpoint(path)
        assert cfg2 == TINY and meta["epochs"] == 3
        assert list(s2) == list(s)
        for k in s:
            assert s2[k].dtype == s[k].dtype
            np.testing.assert_array_equal(s2[k], s[k])

    def test_bytes_deterministic(self):
        assert checkpoint_bytes(tiny_state(1), TINY) == checkpoint_bytes(tiny_state(1), TINY)

    def test_corrupt(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"XXXX" + b"\x00" * 16)
        with pytest.raises(FormatError):
            load_checkpoint(path)
        good = checkpoint_bytes(tiny_state(), TINY)
        path.write_bytes(good[:-10])
        with pytest.raises(FormatError):
            load_checkpoint(path)
