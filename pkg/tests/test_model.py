import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from llse.errors import ConfigError, DimensionError
from llse.experiment import DESK_MODEL
from llse.model import (
    ModelConfig,
    algorithmic_latency,
    assemble_ar_input,
    build,
    count_macs,
    forward,
    layer_macs,
    mac_breakdown,
    param_shapes,
)

BASE = ModelConfig()


def small(k=3, ar=True, n=3, lstm=6):
    channels = tuple(3 + i for i in range(k))
    return ModelConfig(k=k, n=n, channels=channels, lstm_width=lstm, ar_enabled=ar)


def test_build_is_deterministic():
    a, b = build(small(), 4), build(small(), 4)
    for name in a.tensors:
        np.testing.assert_array_equal(a.tensors[name].values, b.tensors[name].values)


def test_different_seeds_differ():
    a, b = build(small(), 0), build(small(), 1)
    assert not np.array_equal(a.tensors["enc0.conv.w"].values, b.tensors["enc0.conv.w"].values)


def test_init_bounds_and_zero_biases():
    params = build(small(), 2)
    for name, tensor in params.tensors.items():
        if name.endswith(".b"):
            assert not tensor.values.any()
        else:
            bound = np.sqrt(1.0 / np.prod(tensor.shape[1:]))
            assert np.abs(tensor.values).max() <= bound


def test_parameter_count_regression():
    # frozen from a by-hand enumeration of every layer's weight and bias shapes
    assert build(BASE).num_parameters() == 1_894_137
    assert build(DESK_MODEL).num_parameters() == 40_381
    assert build(DESK_MODEL.replace(ar_enabled=False)).num_parameters() == 40_381 - 8


def test_shapes_depend_only_on_config():
    assert param_shapes(small()) == param_shapes(small())
    assert {n: t.shape for n, t in build(small(), 9).tensors.items()} == param_shapes(small())


@pytest.mark.parametrize("bad", [
    dict(k=0, channels=()),
    dict(n=0),
    dict(channels=(16, 24)),
    dict(lstm_width=0),
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        ModelConfig(**bad)


@pytest.mark.parametrize("length", [8, 16, 40])
def test_output_shape(length):
    cfg = small()
    out = forward(build(cfg), np.zeros((2, length)))
    assert out.shape == (length,)
    assert forward(build(cfg), np.zeros((3, 2, length))).shape == (3, length)


def test_zero_input_gives_zero_output():
    for cfg in (small(), small(ar=False), DESK_MODEL):
        out = forward(build(cfg, 3), np.zeros((cfg.in_channels, 4 * cfg.chunk)))
        assert not out.values.any()


def test_forward_rejects_bad_input():
    params = build(small())
    with pytest.raises(DimensionError):
        forward(params, np.zeros((2, 12)))
    with pytest.raises(DimensionError):
        forward(params, np.zeros((1, 16)))


def test_forward_is_deterministic():
    params = build(small(), 5)
    x = np.random.default_rng(0).normal(size=(2, 32))
    assert np.array_equal(forward(params, x).values, forward(params, x).values)


@given(seed=st.integers(0, 2**31 - 1), k=st.integers(2, 4), ar=st.booleans(), data=st.data())
@settings(max_examples=25, deadline=None)
def test_chunk_causality(seed, k, ar, data):
    cfg = small(k=k, ar=ar)
    L = cfg.chunk
    params = build(cfg, seed % 1000)
    rng = np.random.default_rng(seed)
    n_chunks = 4
    x = rng.normal(size=(cfg.in_channels, n_chunks * L))
    b = data.draw(st.integers(1, n_chunks - 1)) * L
    x2 = x.copy()
    x2[:, b:] += rng.normal(size=(cfg.in_channels, n_chunks * L - b))
    y1, y2 = forward(params, x).values, forward(params, x2).values
    np.testing.assert_array_equal(y1[:b], y2[:b])


@pytest.mark.parametrize("k", [2, 3, 4])
def test_latency_is_tight(k):
    # the last sample of a chunk must reach the first output sample of that chunk
    cfg = small(k=k)
    L = cfg.chunk
    params = build(cfg, 1)
    x = np.random.default_rng(k).normal(size=(2, 3 * L))
    b = 2 * L - 1
    x2 = x.copy()
    x2[0, b] += 1.0
    diff = np.abs(forward(params, x).values - forward(params, x2).values)
    assert diff[b - L + 1] > 0
    assert not diff[: b - L + 1].any()


@pytest.mark.parametrize("k,samples,ms", [(0, 1, 0.0625), (5, 32, 2.0), (6, 64, 4.0), (7, 128, 8.0), (8, 256, 16.0)])
def test_algorithmic_latency(k, samples, ms):
    lat = algorithmic_latency(k)
    assert lat.samples == samples
    assert lat.ms == ms


def test_latency_from_config():
    assert algorithmic_latency(BASE) == (128, 8.0)
    assert algorithmic_latency(BASE.replace(sample_rate=8000)).ms == 16.0


def test_mac_examples():
    assert layer_macs(1, 1, 1, 16000) == 16000
    rows = dict(mac_breakdown(BASE))
    # hand audit of the first scale: 16x16x4 at 16 kHz, then 24x16x2 at 8 kHz frames
    assert rows["enc0.conv"] == 16 * 16 * 4 * 16000
    assert rows["enc0.down"] == 24 * 16 * 2 * 8000
    assert rows["dec0.conv"] == 16 * (24 + 16) * 4 * 16000
    assert count_macs(BASE) / 1e9 == pytest.approx(0.619264, abs=1e-12)


def test_doubling_channels_quadruples_macs():
    doubled = BASE.replace(channels=tuple(2 * c for c in BASE.channels), lstm_width=2 * BASE.lstm_width)
    ratio = count_macs(doubled) / count_macs(BASE)
    assert 3.9 < ratio <= 4.0


def test_assemble_ar_examples():
    x = assemble_ar_input(np.zeros(4), np.array([1.0, 2.0, 3.0, 4.0]), 2)
    np.testing.assert_array_equal(x.values[1], [0, 0, 1, 2])
    full = assemble_ar_input(np.ones(8), np.arange(8.0), 8)
    assert not full.values[1].any()
    np.testing.assert_array_equal(full.values[0], np.ones(8))
    assert not x.requires_grad
    with pytest.raises(DimensionError):
        assemble_ar_input(np.zeros(4), np.zeros(5), 2)


def test_assemble_ar_never_leaks_current_chunk():
    k, T = 2, 16
    L = 2**k
    for j in range(T):
        source = np.zeros(T)
        source[j] = 1.0
        ar = assemble_ar_input(np.zeros(T), source, L).values[1]
        for i in range(T // L):
            if ar[i * L : (i + 1) * L].any():
                assert j // L < i
