import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from llse.core import AdamState, adam_step, backward, l1_loss, no_grad
from llse.errors import ConfigError, ContractError, DataError, NumericError
from llse.model import ModelConfig, assemble_ar_input, build, forward
from llse.streaming import free_run_offline
from llse.training import (
    LOG_HEADER,
    IASchedule,
    TrainConfig,
    ia_forward,
    ia_passes,
    make_segments,
    train,
)

TINY = ModelConfig(k=2, n=3, channels=(3, 4), lstm_width=5)


def toy_data(n=6, length=32, seed=0):
    rng = np.random.default_rng(seed)
    clean = np.sin(np.linspace(0, 12, length))[None] * rng.uniform(0.3, 0.8, size=(n, 1))
    return clean + 0.1 * rng.normal(size=(n, length)), clean


@pytest.mark.parametrize("epoch,passes", [(0, 1), (299, 1), (300, 2), (399, 2), (400, 3), (550, 4)])
def test_schedule_with_default_constants(epoch, passes):
    assert ia_passes(epoch, IASchedule()) == passes


@given(st.integers(0, 5000), st.integers(0, 5000), st.integers(0, 400), st.integers(1, 200))
def test_schedule_is_monotone(a, b, start, step):
    sched = IASchedule(start, step)
    lo, hi = sorted((a, b))
    assert ia_passes(lo, sched) <= ia_passes(hi, sched)


def test_schedule_cap_and_none():
    assert ia_passes(10_000, IASchedule(max_passes=3)) == 3
    assert ia_passes(10_000, None) == 1


@pytest.mark.parametrize("bad", [dict(e_start=-1), dict(e_step=0), dict(max_passes=0)])
def test_schedule_validation(bad):
    with pytest.raises(ConfigError):
        IASchedule(**bad)


def test_single_pass_is_teacher_forcing_bit_exact():
    params = build(TINY, 0)
    noisy, clean = toy_data()
    ia = ia_forward(params, noisy, clean, 1).values
    tf = forward(params, assemble_ar_input(noisy, clean, TINY.chunk)).values
    assert np.array_equal(ia, tf)


@pytest.mark.parametrize("passes", [2, 3, 5])
def test_gradients_flow_only_through_last_pass(passes):
    noisy, clean = toy_data(n=2)
    p_ia = build(TINY, 1)
    backward(l1_loss(ia_forward(p_ia, noisy, clean, passes), clean))

    # oracle: one forward whose AR channel is pre-filled with pass P-1's output
    p_fixed = build(TINY, 1)
    with no_grad():
        conditioning = ia_forward(p_fixed, noisy, clean, passes - 1).values
    backward(l1_loss(forward(p_fixed, assemble_ar_input(noisy, conditioning, TINY.chunk)), clean))
    for name in p_ia.tensors:
        np.testing.assert_allclose(p_ia.tensors[name].grad, p_fixed.tensors[name].grad, rtol=0, atol=1e-12)


def test_passes_reach_the_free_running_fixed_point():
    # with a one-chunk AR shift every extra pass settles one more chunk, so
    # n_chunks passes land exactly on the free-running output
    params = build(TINY, 2)
    noisy, clean = toy_data(n=1, length=6 * TINY.chunk)
    noisy, clean = noisy[0], clean[0]
    with no_grad():
        settled = ia_forward(params, noisy, clean, 6).values
        again = forward(params, assemble_ar_input(noisy, settled, TINY.chunk)).values
    np.testing.assert_allclose(settled, free_run_offline(params, noisy), rtol=0, atol=1e-12)
    np.testing.assert_allclose(again, settled, rtol=0, atol=1e-12)


def test_ia_needs_ar_model():
    params = build(TINY.replace(ar_enabled=False))
    noisy, clean = toy_data()
    with pytest.raises(ContractError):
        ia_forward(params, noisy, clean, 2)
    with pytest.raises(ContractError):
        train(params, (noisy, clean), TrainConfig(epochs=1, iterations_per_epoch=1), IASchedule(0, 1))


def test_loss_decreases_on_fixed_batch():
    params = build(TINY, 3)
    noisy, clean = toy_data(n=4)
    opt = AdamState(lr=1e-2)
    losses = []
    for _ in range(50):
        params.zero_grad()
        loss = l1_loss(ia_forward(params, noisy, clean, 1), clean)
        losses.append(loss.item())
        backward(loss)
        adam_step(params.tensors, None, opt)
    windows = np.array(losses).reshape(5, 10).mean(axis=1)
    assert np.all(np.diff(windows) < 0)


def small_run(tmp_path=None, schedule=None, seed=0, epochs=3):
    noisy, clean = toy_data(n=8)
    tc = TrainConfig(batch_size=3, segment_samples=32, iterations_per_epoch=4, epochs=epochs, lr=5e-3, seed=seed)
    log = None if tmp_path is None else tmp_path / "run.log"
    return train(build(TINY, seed), (noisy, clean), tc, schedule, val=(noisy[:2], clean[:2]), log_path=log)


def test_training_is_deterministic(tmp_path):
    a = small_run(tmp_path, IASchedule(1, 1))
    b = small_run(None, IASchedule(1, 1))
    assert [e.line() for e in a.log] == [e.line() for e in b.log]
    for name in a.final.tensors:
        assert np.array_equal(a.final.tensors[name].values, b.final.tensors[name].values)


def test_no_schedule_means_teacher_forcing_only():
    result = small_run(epochs=4)
    assert [e.passes for e in result.log] == [1, 1, 1, 1]


def test_ia_schedule_is_logged():
    result = small_run(schedule=IASchedule(1, 2), epochs=5)
    assert [e.passes for e in result.log] == [1, 2, 2, 3, 3]


def test_log_file_and_best_checkpoint(tmp_path):
    result = small_run(tmp_path, epochs=3)
    lines = (tmp_path / "run.log").read_text().splitlines()
    assert lines[0] == LOG_HEADER
    assert len(lines) == 4
    assert all(len(line.split(",")) == 5 for line in lines)
    scores = [e.val_sisdr for e in result.log]
    assert result.best_epoch == int(np.argmax(scores))
    assert result.best_val_sisdr == max(scores)


def test_non_finite_loss_aborts():
    noisy, clean = toy_data()
    noisy[0, 3] = np.nan
    tc = TrainConfig(batch_size=len(noisy), segment_samples=32, iterations_per_epoch=1, epochs=1)
    with pytest.raises(NumericError, match="non-finite loss"):
        train(build(TINY), (noisy, clean), tc)


def test_empty_dataset():
    with pytest.raises(DataError):
        train(build(TINY), (np.zeros((0, 32)), np.zeros((0, 32))), TrainConfig(epochs=1))
    with pytest.raises(DataError):
        make_segments([], 32, 4)


def test_make_segments():
    pairs = [(np.ones(100), np.ones(100)), (np.ones(10), np.ones(10))]
    noisy, clean = make_segments(pairs, 40, 8)
    assert noisy.shape == (3, 40)
    assert clean[-1, 10:].sum() == 0


@pytest.mark.parametrize("bad", [dict(loss="l2"), dict(dtype="float16"), dict(batch_size=0)])
def test_train_config_validation(bad):
    with pytest.raises(ConfigError):
        TrainConfig(**bad)
