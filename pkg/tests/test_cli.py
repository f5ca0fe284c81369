import subprocess
import sys

import numpy as np
import pytest

from llse import checkpoint
from llse.audio import AudioBuffer, read_wav, write_wav
from llse.cli import main
from llse.model import ModelConfig, build

TINY_CONF = """\
model.k = 4
model.n = 3
model.channels = 3, 4, 4, 5
model.lstm_width = 6
train.batch = 4
train.segment_s = 0.064
train.lr = 0.003
train.epochs = 3
train.iters_per_epoch = 2
seed = 0
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.conf").write_text(TINY_CONF)
    assert main(["synth-data", "--out", str(root / "data"), "--minutes", "0.2", "--snrs", "10,0",
                 "--seed", "4", "--utterance-s", "0.5"]) == 0
    return root


def test_synth_data(workspace, capsys):
    assert (workspace / "data" / "train.csv").exists()
    lines = (workspace / "data" / "train.csv").read_text().splitlines()
    assert lines[0].startswith("# sample_rate=16000")
    # 0.2 minutes at 0.5 s per utterance: 24 pairs split 20/2/2
    assert len(lines) == 21
    assert main(["synth-data", "--out", str(workspace / "again"), "--minutes", "0.2", "--snrs", "10,0",
                 "--seed", "4", "--utterance-s", "0.5"]) == 0
    a = (workspace / "data/train/00003_noisy.wav").read_bytes()
    assert a == (workspace / "again/train/00003_noisy.wav").read_bytes()


def test_synth_data_rejects_empty_snrs(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["synth-data", "--out", str(tmp_path), "--minutes", "0.1", "--snrs", ""])
    assert exc.value.code == 1


def test_train_teacher_forcing(workspace, capsys):
    ckpt = workspace / "tf.ckpt"
    rc = main(["train", "--config", str(workspace / "tiny.conf"), "--data", str(workspace / "data"),
               "--out", str(ckpt), "--ar"])
    assert rc == 0
    log = (workspace / "tf.ckpt.log").read_text().splitlines()
    assert log[0] == "epoch,train_loss,val_sisdr,tf_fr_gap,passes"
    assert [line.split(",")[-1] for line in log[1:]] == ["1", "1", "1"]
    assert checkpoint.load(ckpt).config.ar_enabled


def test_train_with_ia_and_overrides(workspace):
    rc = main(["train", "--config", str(workspace / "tiny.conf"), "--data", str(workspace / "data"),
               "--out", str(workspace / "ia.ckpt"), "--ia-start", "1", "--ia-step", "1", "--epochs", "4",
               "--loss", "sisnr", "--seed", "2"])
    assert rc == 0
    log = (workspace / "ia.ckpt.log").read_text().splitlines()[1:]
    assert [line.split(",")[-1] for line in log] == ["1", "2", "3", "4"]


def test_train_is_deterministic(workspace):
    args = ["train", "--config", str(workspace / "tiny.conf"), "--data", str(workspace / "data"), "--no-ar"]
    assert main(args + ["--out", str(workspace / "d1.ckpt")]) == 0
    assert main(args + ["--out", str(workspace / "d2.ckpt")]) == 0
    assert (workspace / "d1.ckpt").read_bytes() == (workspace / "d2.ckpt").read_bytes()
    assert (workspace / "d1.ckpt.log").read_text() == (workspace / "d2.ckpt.log").read_text()


def test_train_usage_errors(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.conf"
    bad.write_text("model.kernel = 3\n")
    assert main(["train", "--config", str(bad), "--data", str(workspace / "data"), "--out", str(tmp_path / "x")]) == 1
    assert "model.kernel" in capsys.readouterr().err
    rc = main(["train", "--config", str(workspace / "tiny.conf"), "--data", str(workspace / "data"),
               "--out", str(tmp_path / "x"), "--no-ar", "--ia-start", "1"])
    assert rc == 1


def test_train_missing_data_is_data_error(workspace, tmp_path):
    rc = main(["train", "--config", str(workspace / "tiny.conf"), "--data", str(tmp_path), "--out", str(tmp_path / "x")])
    assert rc == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_is_numeric_failure(workspace, tmp_path):
    conf = tmp_path / "hot.conf"
    conf.write_text(TINY_CONF.replace("train.lr = 0.003", "train.lr = 1e200"))
    rc = main(["train", "--config", str(conf), "--data", str(workspace / "data"), "--out", str(tmp_path / "x")])
    assert rc == 3


@pytest.fixture(scope="module")
def model_ckpt(workspace):
    path = workspace / "model.ckpt"
    cfg = ModelConfig(k=4, n=3, channels=(3, 4, 4, 5), lstm_width=6)
    checkpoint.save(path, build(cfg, 5))
    noisy = np.random.default_rng(0).uniform(-0.5, 0.5, 16 * 40 + 7)
    write_wav(workspace / "in.wav", AudioBuffer(noisy))
    return path


def test_enhance_modes_agree(workspace, model_ckpt, capsys):
    for mode in ("streaming", "offline"):
        rc = main(["enhance", "--ckpt", str(model_ckpt), "--in", str(workspace / "in.wav"),
                   "--out", str(workspace / f"{mode}.wav"), "--mode", mode])
        assert rc == 0
    out = capsys.readouterr().out
    assert "latency_ms=1" in out and "real_time_factor=" in out
    a, b = read_wav(workspace / "streaming.wav"), read_wav(workspace / "offline.wav")
    assert len(a) == len(b) == len(read_wav(workspace / "in.wav"))
    # the engines agree to 1e-5; PCM16 rounding can then differ by at most one step
    assert np.max(np.abs(a.samples - b.samples)) <= 1 / 32768


def test_enhance_config_mismatch(workspace, model_ckpt):
    rc = main(["enhance", "--ckpt", str(model_ckpt), "--in", str(workspace / "in.wav"),
               "--out", str(workspace / "x.wav"), "--config", "base"])
    assert rc == 2


def test_enhance_bad_wav(workspace, model_ckpt, tmp_path):
    (tmp_path / "bad.wav").write_bytes(b"RIFF")
    rc = main(["enhance", "--ckpt", str(model_ckpt), "--in", str(tmp_path / "bad.wav"), "--out", str(tmp_path / "o.wav")])
    assert rc == 2


def test_bench_base_config(capsys):
    assert main(["bench", "--seconds", "0.1", "--mode", "teacher_forced"]) == 0
    out = capsys.readouterr().out
    assert "latency_ms=8.0\n" in out
    assert "forward_passes=1" in out


def test_bench_checkpoint_all_modes(model_ckpt, capsys):
    assert main(["bench", "--ckpt", str(model_ckpt), "--seconds", "0.05"]) == 0
    out = capsys.readouterr().out
    assert out.count("mode=") == 3


def test_eval(workspace, tmp_path, capsys):
    ckpt = workspace / "tf.ckpt"
    if not ckpt.exists():
        pytest.skip("needs the training test's checkpoint")
    rc = main(["eval", "--ckpt", str(ckpt), "--manifest", str(workspace / "data" / "test.csv"),
               "--out", str(tmp_path / "r.csv")])
    assert rc == 0
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "file,snr_db,si_sdr,l1,gap" and lines[-1].startswith("MEAN")
    assert len(lines) == 2 + 2


def test_eval_empty_manifest(model_ckpt, tmp_path):
    (tmp_path / "empty.csv").write_text("# sample_rate=16000 split=test\n")
    assert main(["eval", "--ckpt", str(model_ckpt), "--manifest", str(tmp_path / "empty.csv")]) == 2


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--instances", "2"]) == 0
    out = capsys.readouterr().out
    assert "PASS causal_conv1d" in out and "FAIL" not in out


def test_unknown_subcommand():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "llse", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "synth-data" in proc.stdout and "gradcheck" in proc.stdout
