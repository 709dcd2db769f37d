import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bika import model_core as mc
from bika.model_core import (
    ALWAYS_FIRE,
    NEVER_FIRE,
    BikaModel,
    MaxPool2x2,
    ModelFormatError,
    ModelVersionError,
    ShapeMismatchError,
    ThresholdConnection,
    ThresholdLayer,
    classify,
    connection_activate,
    count_ops,
    layer_forward,
    load_model,
    maxpool_forward,
    model_forward,
    neuron_forward,
    random_model,
    save_model,
)


def brute_force_linear(layer, x):
    """Scalar reference forward, independent of the vectorized path."""
    out = []
    for o in range(layer.out_features):
        total = 0
        for i in range(layer.in_features):
            pol = int(layer.polarities[o, i])
            thr = int(layer.thresholds[o, i])
            fired = x[i] >= thr if pol == 1 else x[i] <= thr
            total += 1 if fired else -1
        if layer.saturate:
            total = min(max(total, -128), 127)
        out.append(total)
    return np.array(out, dtype=np.int16)


def random_linear_layer(rng, n_in, n_out, saturate=True):
    pol = rng.choice(np.array([-1, 1], dtype=np.int8), size=(n_out, n_in))
    thr = rng.integers(-200, 201, size=(n_out, n_in), dtype=np.int16)
    return ThresholdLayer("linear", pol, thr, saturate=saturate)


class TestConnectionActivate:
    def test_boundary_fires(self):
        assert connection_activate(ThresholdConnection(1, 3), 3) == 1

    def test_negative_polarity(self):
        assert connection_activate(ThresholdConnection(-1, 1), -2) == 1

    def test_never_fire_sentinel(self):
        assert connection_activate(ThresholdConnection(1, 32767), 127) == -1

    def test_always_fire_sentinel(self):
        assert connection_activate(ThresholdConnection(1, -32768), -128) == 1


class TestNeuronForward:
    def test_mixed_connections(self):
        conns = [ThresholdConnection(1, 3), ThresholdConnection(-1, 1),
                 ThresholdConnection(1, 0)]
        assert neuron_forward(conns, [5, -2, 0], saturate=False) == 3

    def test_saturation_clamps(self):
        conns = [ThresholdConnection(1, ALWAYS_FIRE)] * 200
        assert neuron_forward(conns, [0] * 200, saturate=True) == 127
        assert neuron_forward(conns, [0] * 200, saturate=False) == 200

    def test_negative_saturation(self):
        conns = [ThresholdConnection(1, NEVER_FIRE)] * 200
        assert neuron_forward(conns, [0] * 200, saturate=True) == -128

    def test_length_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            neuron_forward([ThresholdConnection(1, 0)], [1, 2], saturate=False)


class TestLayerForward:
    def test_linear_two_to_one(self):
        layer = ThresholdLayer(
            "linear", np.ones((1, 2), np.int8), np.zeros((1, 2), np.int16)
        )
        assert layer_forward(layer, np.array([1, 1])).tolist() == [2]

    def test_conv_always_fire(self):
        layer = ThresholdLayer(
            "conv2d",
            np.ones((1, 1, 3, 3), np.int8),
            np.full((1, 1, 3, 3), ALWAYS_FIRE, np.int16),
        )
        out = layer_forward(layer, np.zeros((1, 4, 4), np.int16))
        assert out.shape == (1, 4, 4)
        assert (out == 9).all()

    def test_matches_brute_force(self):
        rng = np.random.default_rng(7)
        layer = random_linear_layer(rng, 784, 64)
        x = rng.integers(0, 256, 784).astype(np.int16)
        got = layer_forward(layer, x)
        assert np.array_equal(got, brute_force_linear(layer, x))
        assert got.min() >= -128 and got.max() <= 127

    def test_shape_mismatch(self):
        layer = ThresholdLayer(
            "linear", np.ones((1, 2), np.int8), np.zeros((1, 2), np.int16)
        )
        with pytest.raises(ShapeMismatchError):
            layer_forward(layer, np.array([1, 2, 3]))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2 ** 31), st.integers(1, 40), st.integers(1, 8))
    def test_range_and_parity_unsaturated(self, seed, n_in, n_out):
        rng = np.random.default_rng(seed)
        layer = random_linear_layer(rng, n_in, n_out, saturate=False)
        x = rng.integers(-128, 128, n_in).astype(np.int16)
        out = layer_forward(layer, x)
        assert (np.abs(out) <= n_in).all()
        assert ((out - n_in) % 2 == 0).all()

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_saturation_is_clamp_of_unsaturated(self, seed):
        rng = np.random.default_rng(seed)
        n_in = int(rng.integers(100, 400))
        pol = rng.choice(np.array([-1, 1], dtype=np.int8), size=(4, n_in))
        thr = rng.integers(-50, 51, size=(4, n_in), dtype=np.int16)
        x = rng.integers(-128, 128, n_in).astype(np.int16)
        sat = layer_forward(ThresholdLayer("linear", pol, thr, True), x)
        raw = layer_forward(ThresholdLayer("linear", pol, thr, False), x)
        assert np.array_equal(sat, np.clip(raw, -128, 127))

    def test_conv_matches_scalar_window(self):
        rng = np.random.default_rng(3)
        pol = rng.choice(np.array([-1, 1], dtype=np.int8), size=(2, 2, 3, 3))
        thr = rng.integers(-10, 11, size=(2, 2, 3, 3), dtype=np.int16)
        layer = ThresholdLayer("conv2d", pol, thr)
        x = rng.integers(-20, 21, (2, 5, 5)).astype(np.int16)
        out = layer_forward(layer, x)
        padded = np.zeros((2, 7, 7), np.int16)
        padded[:, 1:-1, 1:-1] = x
        for oc in range(2):
            for r in range(5):
                for c in range(5):
                    total = 0
                    for ic in range(2):
                        for kh in range(3):
                            for kw in range(3):
                                a = padded[ic, r + kh, c + kw]
                                p, t = pol[oc, ic, kh, kw], thr[oc, ic, kh, kw]
                                fired = a >= t if p == 1 else a <= t
                                total += 1 if fired else -1
                    assert out[oc, r, c] == np.clip(total, -128, 127)


class TestMaxPool:
    def test_basic(self):
        x = np.array([[[1, 2], [3, 4]]], np.int16)
        assert maxpool_forward(x).tolist() == [[[4]]]

    def test_constant_input(self):
        x = np.full((3, 4, 4), 7, np.int16)
        assert (maxpool_forward(x) == 7).all()

    def test_halves_spatial_dims(self):
        x = np.zeros((2, 3, 32, 32), np.int16)
        assert maxpool_forward(x).shape == (2, 3, 16, 16)

    def test_odd_dims_rejected(self):
        with pytest.raises(ShapeMismatchError):
            maxpool_forward(np.zeros((1, 5, 4), np.int16))


class TestModelForward:
    def test_degenerate_always_fire_tfc(self):
        layers = []
        for _, n_in, n_out in mc.arch_layer_dims("tfc"):
            pol = np.ones((n_out, n_in), np.int8)
            thr = np.full((n_out, n_in), ALWAYS_FIRE, np.int16)
            layers.append(ThresholdLayer("linear", pol, thr))
        m = BikaModel(tuple(layers), "tfc")
        x = np.zeros(784, np.int16)
        out = model_forward(m, x)
        # 784 saturates to 127, then plain sums of 64 and 32 always-fire inputs
        assert (out == 32).all()
        assert classify(m, x) == 0

    def test_zero_layer_identity(self):
        m = BikaModel((), "custom")
        x = np.arange(10, dtype=np.int16)
        assert np.array_equal(model_forward(m, x), x)

    def test_tie_break_lowest_index(self):
        pol = np.ones((3, 2), np.int8)
        thr = np.full((3, 2), ALWAYS_FIRE, np.int16)
        m = BikaModel((ThresholdLayer("linear", pol, thr),), "custom")
        assert classify(m, np.zeros(2, np.int16)) == 0

    def test_batch_matches_single(self):
        m = random_model("tfc", 11)
        rng = np.random.default_rng(0)
        xs = rng.integers(0, 256, (5, 784)).astype(np.int16)
        batch_out = model_forward(m, xs)
        for i in range(5):
            assert np.array_equal(batch_out[i], model_forward(m, xs[i]))

    def test_determinism(self):
        m = random_model("tfc", 5)
        x = np.random.default_rng(1).integers(0, 256, 784).astype(np.int16)
        a = model_forward(m, x)
        b = model_forward(m, x)
        assert np.array_equal(a, b)


class TestMultiplyFree:
    def test_forward_counts_no_multiplications(self):
        m = random_model("tfc", 9)
        x = np.random.default_rng(2).integers(0, 256, (3, 784)).astype(np.int16)
        with count_ops() as ops:
            model_forward(m, x)
        assert ops.multiplications == 0
        assert ops.comparisons > 0
        assert ops.additions > 0

    def test_conv_and_pool_count_no_multiplications(self):
        rng = np.random.default_rng(4)
        pol = rng.choice(np.array([-1, 1], dtype=np.int8), size=(2, 1, 3, 3))
        thr = rng.integers(-5, 6, size=(2, 1, 3, 3), dtype=np.int16)
        m = BikaModel((ThresholdLayer("conv2d", pol, thr), MaxPool2x2()), "custom")
        with count_ops() as ops:
            model_forward(m, rng.integers(0, 256, (1, 8, 8)).astype(np.int16))
        assert ops.multiplications == 0


class TestArchPresets:
    def test_mlp_dims(self):
        assert mc.arch_layer_dims("tfc") == [
            ("linear", 784, 64), ("linear", 64, 32), ("linear", 32, 10)
        ]
        assert mc.arch_layer_dims("sfc") == [
            ("linear", 784, 256), ("linear", 256, 256),
            ("linear", 256, 256), ("linear", 256, 10)
        ]
        assert mc.arch_layer_dims("lfc") == [
            ("linear", 784, 1024), ("linear", 1024, 1024),
            ("linear", 1024, 1024), ("linear", 1024, 10)
        ]

    def test_cnv_dims(self):
        dims = mc.arch_layer_dims("cnv")
        assert dims == [
            ("conv2d", 3, 64), ("conv2d", 64, 64), ("maxpool",),
            ("conv2d", 64, 128), ("conv2d", 128, 128), ("maxpool",),
            ("conv2d", 128, 256), ("conv2d", 256, 256), ("maxpool",),
            ("linear", 256 * 4 * 4, 512), ("linear", 512, 512),
            ("linear", 512, 10),
        ]

    def test_unknown_arch(self):
        with pytest.raises(ValueError):
            mc.arch_layer_dims("vgg")


class TestSerialization:
    def test_round_trip_forward_identical(self, tmp_path):
        m = random_model("tfc", 21)
        path = tmp_path / "m.bika"
        save_model(m, path)
        m2 = load_model(path)
        rng = np.random.default_rng(0)
        xs = rng.integers(0, 256, (100, 784)).astype(np.int16)
        assert np.array_equal(model_forward(m, xs), model_forward(m2, xs))

    def test_save_load_save_byte_identical(self, tmp_path):
        m = random_model("sfc", 3)
        p1, p2 = tmp_path / "a.bika", tmp_path / "b.bika"
        save_model(m, p1)
        save_model(load_model(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_conv_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        pol = rng.choice(np.array([-1, 1], dtype=np.int8), size=(2, 1, 3, 3))
        thr = rng.integers(-5, 6, size=(2, 1, 3, 3), dtype=np.int16)
        m = BikaModel(
            (ThresholdLayer("conv2d", pol, thr), MaxPool2x2()), "custom"
        )
        path = tmp_path / "c.bika"
        save_model(m, path)
        m2 = load_model(path)
        x = rng.integers(0, 256, (1, 1, 4, 4)).astype(np.int16)
        assert np.array_equal(model_forward(m, x), model_forward(m2, x))

    def test_truncated_file(self, tmp_path):
        m = random_model("tfc", 1)
        path = tmp_path / "m.bika"
        save_model(m, path)
        path.write_bytes(path.read_bytes()[:100])
        with pytest.raises(ModelFormatError) as exc:
            load_model(path)
        assert exc.value.offset <= 100

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "m.bika"
        path.write_bytes(b"NOPE" + b"\x00" * 20)
        with pytest.raises(ModelVersionError):
            load_model(path)

    def test_wrong_version(self, tmp_path):
        m = random_model("tfc", 1)
        path = tmp_path / "m.bika"
        save_model(m, path)
        data = bytearray(path.read_bytes())
        data[4] = 99
        path.write_bytes(bytes(data))
        with pytest.raises(ModelVersionError):
            load_model(path)

    def test_sidecar_written(self, tmp_path):
        m = random_model("tfc", 1)
        path = tmp_path / "m.bika"
        save_model(m, path)
        assert (tmp_path / "m.bika.json").is_file()
