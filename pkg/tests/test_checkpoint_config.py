import struct

import numpy as np
import pytest

from llse import checkpoint
from llse.config import KEYS, default_text, load_file, load_text, parse
from llse.errors import CheckpointError, ConfigError
from llse.model import ModelConfig, build, forward

CFG = ModelConfig(k=3, n=3, channels=(4, 6, 8), lstm_width=7)


def test_round_trip_reproduces_forward_bit_exactly(tmp_path):
    params = build(CFG, 11).astype(np.float32, requires_grad=False)
    checkpoint.save(tmp_path / "m.ckpt", params)
    loaded = checkpoint.load(tmp_path / "m.ckpt")
    assert loaded.config == CFG and loaded.seed == 11
    x = np.random.default_rng(0).normal(size=(2, 64)).astype(np.float32)
    assert np.array_equal(forward(params, x).values, forward(loaded, x).values)
    assert checkpoint.to_bytes(loaded) == checkpoint.to_bytes(params)


def test_header_layout():
    raw = checkpoint.to_bytes(build(CFG, 1))
    assert raw[:4] == b"IARD"
    assert struct.unpack("<IIII", raw[4:20]) == (1, 3, 3, 3)
    assert struct.unpack("<III", raw[20:32]) == (4, 6, 8)


def test_expected_config_mismatch(tmp_path):
    checkpoint.save(tmp_path / "m.ckpt", build(CFG))
    checkpoint.load(tmp_path / "m.ckpt", CFG)
    with pytest.raises(CheckpointError):
        checkpoint.load(tmp_path / "m.ckpt", CFG.replace(lstm_width=8))


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:-3],
    lambda b: b + b"\x00",
    lambda b: b[:4] + struct.pack("<I", 9) + b[8:],
])
def test_corrupt_checkpoints(mutate):
    raw = checkpoint.to_bytes(build(CFG))
    with pytest.raises(CheckpointError):
        checkpoint.from_bytes(mutate(raw))


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        checkpoint.load(tmp_path / "none.ckpt")


def test_base_config_encodes_reference_setup():
    run = load_text(default_text("base"))
    m, t = run.model, run.train
    assert (m.k, m.n, m.channels, m.lstm_width, m.ar_enabled) == (7, 4, (16, 24, 32, 48, 64, 96, 128), 512, True)
    assert (t.lr, t.beta1, t.beta2, t.batch_size, t.segment_samples) == (2e-4, 0.8, 0.9, 16, 32000)
    assert (t.iterations_per_epoch, t.loss) == (1000, "l1")
    assert (run.ia_e_start, run.ia_e_step, run.ia_max_passes) == (300, 100, None)


def test_desk_config():
    run = load_text(default_text("desk"))
    assert run.model == ModelConfig(k=4, n=4, channels=(8, 12, 16, 24), lstm_width=64)
    assert (run.ia_e_start, run.ia_e_step, run.train.epochs) == (30, 10, 100)


def test_desk_config_matches_experiment_setup():
    from llse.experiment import DeskSetup

    run, setup = load_text(default_text("desk")), DeskSetup()
    assert run.model == setup.model
    t = run.train
    assert (t.batch_size, t.segment_samples, t.iterations_per_epoch, t.lr) == (
        setup.batch_size, setup.segment_samples, setup.iterations_per_epoch, setup.lr)


def test_bundled_configs_use_only_known_keys():
    for name in ("base", "desk"):
        assert set(parse(default_text(name))) <= set(KEYS)


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="model.kk"):
        parse("model.kk = 3\n")


def test_bad_values_and_lines():
    with pytest.raises(ConfigError, match="model.ar"):
        parse("model.ar = maybe")
    with pytest.raises(ConfigError, match="key = value"):
        parse("just words")
    with pytest.raises(ConfigError):
        load_text("model.k = 3\n")  # three scales need three channel counts
    with pytest.raises(ConfigError):
        load_text("loss = l2")


def test_comments_and_overrides(tmp_path):
    path = tmp_path / "c.conf"
    path.write_text("# comment\nmodel.k = 2  # scales\nmodel.channels = [3, 5]\nia.max_passes = 4\nseed = 9\n")
    run = load_file(path)
    assert run.model.channels == (3, 5) and run.train.seed == 9
    assert run.schedule().max_passes == 4
    assert run.schedule(e_start=5).e_start == 5
    with pytest.raises(ConfigError):
        load_file(tmp_path / "missing.conf")
    with pytest.raises(ConfigError):
        default_text("nonexistent")
