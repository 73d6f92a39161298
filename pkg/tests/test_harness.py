"""Supporting machinery: corpus, classifier, checkpoints, WAV, metrics,
config, training loops, CLI plumbing."""

import json
import os
import struct
import subprocess
import sys
import zlib

import numpy as np
import pytest

from pdistill import checkpointio as ckpt
from pdistill import classifier as clf
from pdistill import config as cfgmod
from pdistill import corpus as corp
from pdistill import distill as dl
from pdistill import metrics
from pdistill import rng as prng
from pdistill import student as stu
from pdistill import teacher as tch
from pdistill import trainers
from pdistill import wavio
from pdistill.autodiff import Tensor


# ----------------------------------------------------------------------
# corpus


def test_corpus_deterministic_and_order_independent(small_corpus):
    again = corp.synth_corpus(small_corpus.spec)
    assert small_corpus.waveforms.tobytes() == again.waveforms.tobytes()
    assert small_corpus.cond_frames.tobytes() == again.cond_frames.tobytes()
    # clips come from counter-keyed streams: a shorter corpus is a prefix
    fewer = corp.synth_corpus(corp.CorpusSpec(num_clips=5, clip_length=512, seed=7))
    assert np.array_equal(fewer.waveforms, small_corpus.waveforms[:5])


def test_corpus_shapes_and_labels(small_corpus):
    spec = small_corpus.spec
    n, f = spec.num_clips, spec.num_frames
    assert small_corpus.waveforms.shape == (n, spec.clip_length)
    assert small_corpus.cond_frames.shape == (n, spec.cond_channels, f)
    assert small_corpus.phone_frames.shape == (n, f)
    assert np.all(small_corpus.phone_frames >= 0)
    assert np.all(small_corpus.phone_frames < spec.num_phones)
    # phone rows are one-hot and agree with the integer labels
    phone_block = small_corpus.cond_frames[:, :spec.num_phones, :]
    assert np.all(phone_block.sum(axis=1) == 1.0)
    assert np.array_equal(np.argmax(phone_block, axis=1), small_corpus.phone_frames)
    # speaker block one-hot matches the speaker array
    spk_block = small_corpus.cond_frames[:, spec.num_phones + 1:, :]
    assert np.all(spk_block.sum(axis=1) == 1.0)
    assert np.all(np.argmax(spk_block, axis=1) == small_corpus.speakers[:, None])
    assert np.all(np.abs(small_corpus.waveforms) <= 0.95 + 1e-12)


def test_corpus_rms_in_healthy_band(small_corpus):
    rms = np.sqrt(np.mean(small_corpus.waveforms ** 2, axis=1))
    assert np.all(rms > 0.05)
    assert np.all(rms < 0.7)


def test_corpus_spectral_peak_tracks_conditioned_f0(small_corpus):
    # in each clip's steadiest-pitch window the DFT peak must sit within one
    # bin of the f0 carried by the conditioning channel
    spec = small_corpus.spec
    lo, hi = spec.f0_range
    log_lo, log_hi = np.log(lo), np.log(hi * 1.4)
    r = spec.frame_rate_divisor
    win_frames = 8
    win = win_frames * r
    bin_hz = spec.sample_rate / win
    for i in range(spec.num_clips):
        f0 = np.exp(small_corpus.cond_frames[i, spec.num_phones]
                    * (log_hi - log_lo) + log_lo)
        stds = [f0[j:j + win_frames].std()
                for j in range(spec.num_frames - win_frames + 1)]
        j0 = int(np.argmin(stds))
        seg = small_corpus.waveforms[i, j0 * r:j0 * r + win]
        mag = np.abs(np.fft.rfft(seg * np.hanning(win), n=4 * win))
        f_peak = np.argmax(mag) * spec.sample_rate / (4 * win)
        assert abs(f_peak - f0[j0:j0 + win_frames].mean()) < bin_hz


def test_corpus_validation():
    with pytest.raises(ValueError, match="multiple"):
        corp.CorpusSpec(clip_length=100, frame_rate_divisor=32)
    with pytest.raises(ValueError, match="phones"):
        corp.CorpusSpec(num_phones=9)
    with pytest.raises(ValueError, match="speakers"):
        corp.CorpusSpec(num_speakers=5)


def test_upsample_conditioning_repeats_frames():
    frames = np.arange(6.0).reshape(1, 2, 3)
    up = corp.upsample_conditioning(frames, 4)
    assert up.shape == (1, 2, 12)
    assert np.array_equal(up[0, 0], np.repeat(frames[0, 0], 4))


# ----------------------------------------------------------------------
# classifier


def test_classifier_starts_at_chance(small_corpus):
    net = clf.PhoneClassifier(
        clf.ClassifierConfig(num_phones=small_corpus.spec.num_phones,
                             frame_rate_divisor=small_corpus.spec.frame_rate_divisor),
        prng.make_generator(0, prng.Stream.CLASSIFIER_INIT))
    loss0 = net.loss(small_corpus.waveforms[:8], small_corpus.phone_frames[:8]).item()
    assert abs(loss0 - np.log(small_corpus.spec.num_phones)) < 0.4
    assert net.accuracy(small_corpus.waveforms, small_corpus.phone_frames) < 0.5


def test_classifier_trains_above_threshold(small_corpus):
    net, acc = clf.train_classifier(small_corpus, seed=0, steps=200)
    assert acc >= 0.70
    assert all(not p.requires_grad for p in net.params.values())


def test_classifier_error_contract(small_corpus):
    with pytest.raises(clf.ClassifierTrainingError, match="accuracy"):
        clf.train_classifier(small_corpus, seed=0, steps=2)


# ----------------------------------------------------------------------
# checkpoints


def small_teacher(seed=0):
    cfg = tch.TeacherConfig(num_stacks=1, layers_per_stack=2, residual_channels=6,
                            gate_channels=6, skip_channels=6, num_mixtures=2,
                            cond_channels=2)
    return cfg, tch.WavenetTeacher(cfg, prng.make_generator(seed, prng.Stream.TEACHER_INIT))


def test_checkpoint_round_trip(tmp_path):
    cfg, net = small_teacher()
    path = str(tmp_path / "t.ckpt")
    ckpt.save_checkpoint(path, cfg.to_dict(), net.params, step=17, seed=3)
    config, params, step, seed = ckpt.load_checkpoint(path)
    assert config == cfg.to_dict()
    assert (step, seed) == (17, 3)
    assert sorted(params) == sorted(net.params)
    for name in params:
        assert params[name].tobytes() == net.params[name].data.tobytes()

    other = tch.WavenetTeacher(cfg, prng.make_generator(9, prng.Stream.TEACHER_INIT))
    ckpt.restore_params(other, params)
    gen = np.random.default_rng(0)
    x = gen.uniform(-0.5, 0.5, (1, 16))
    c = gen.normal(0.0, 1.0, (1, 2, 16))
    assert np.array_equal(net.output_params(x, c).data, other.output_params(x, c).data)


def _rewrite_with_valid_crc(path, payload: bytes):
    with open(path, "wb") as f:
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def test_checkpoint_error_taxonomy(tmp_path):
    cfg, net = small_teacher()
    path = str(tmp_path / "t.ckpt")
    ckpt.save_checkpoint(path, cfg.to_dict(), net.params, step=1, seed=0)
    raw = open(path, "rb").read()
    payload = raw[:-4]

    bad = str(tmp_path / "bad.ckpt")

    open(bad, "wb").write(raw[:3])
    with pytest.raises(ckpt.TruncatedError):
        ckpt.load_checkpoint(bad)

    # flipped payload byte, stale checksum
    flipped = bytearray(raw)
    flipped[40] ^= 0xFF
    open(bad, "wb").write(bytes(flipped))
    with pytest.raises(ckpt.ChecksumError):
        ckpt.load_checkpoint(bad)

    # valid checksum over a truncated payload: the reader must run dry
    _rewrite_with_valid_crc(bad, payload[:len(payload) // 2])
    with pytest.raises(ckpt.TruncatedError):
        ckpt.load_checkpoint(bad)

    _rewrite_with_valid_crc(bad, b"WAVE" + payload[4:])
    with pytest.raises(ckpt.CorruptHeaderError, match="magic"):
        ckpt.load_checkpoint(bad)

    _rewrite_with_valid_crc(bad, payload[:4] + struct.pack("<I", 99) + payload[8:])
    with pytest.raises(ckpt.UnknownVersionError, match="99"):
        ckpt.load_checkpoint(bad)

    _rewrite_with_valid_crc(bad, payload + b"xx")
    with pytest.raises(ckpt.CorruptHeaderError, match="trailing"):
        ckpt.load_checkpoint(bad)


def test_restore_params_validates(tmp_path):
    cfg, net = small_teacher()
    path = str(tmp_path / "t.ckpt")
    ckpt.save_checkpoint(path, cfg.to_dict(), net.params, step=1, seed=0)
    _, params, _, _ = ckpt.load_checkpoint(path)

    missing = dict(params)
    missing.pop("in.w")
    with pytest.raises(ckpt.CheckpointError, match="names"):
        ckpt.restore_params(net, missing)

    wrong = dict(params)
    wrong["in.w"] = np.zeros((2, 2))
    with pytest.raises(ckpt.CheckpointError, match="shape"):
        ckpt.restore_params(net, wrong)


# ----------------------------------------------------------------------
# WAV files


def test_wav_silence_file_size(tmp_path):
    path = str(tmp_path / "s.wav")
    wavio.write_wav(path, np.zeros(100), 4000)
    assert os.path.getsize(path) == 44 + 100 * 2


def test_wav_full_scale_and_round_trip(tmp_path):
    path = str(tmp_path / "w.wav")
    x = np.array([1.0, -1.0, 0.0, 0.5])
    wavio.write_wav(path, x, 4000)
    pcm, rate = wavio.read_wav(path)
    assert rate == 4000
    assert pcm.dtype == np.int16
    assert np.array_equal(pcm, np.rint(x * 32767).astype(np.int16))
    assert pcm[0] == 32767 and pcm[1] == -32767


def test_wav_rejects_out_of_range(tmp_path):
    path = str(tmp_path / "w.wav")
    x = np.zeros(8)
    x[5] = 1.5
    with pytest.raises(ValueError, match="5"):
        wavio.write_wav(path, x, 4000)


# ----------------------------------------------------------------------
# metrics and config


def test_metrics_round_trip_and_float_formatting(tmp_path):
    path = str(tmp_path / "m.csv")
    with metrics.MetricsWriter(path, ["step", "value"]) as mw:
        mw.write([0, 0.1])
        mw.write([1, 1.0 / 3.0])
    rows = metrics.read_rows(path)
    assert rows[0] == ["step", "value"]
    assert float(rows[2][1]) == 1.0 / 3.0          # repr round-trips exactly
    assert rows[1] == ["0", "0.1"]


def test_config_parsing_and_precedence(tmp_path):
    path = str(tmp_path / "run.cfg")
    with open(path, "w") as f:
        f.write("# comment line\n")
        f.write("teacher_steps = 50\n")
        f.write("distill_lr = 1e-3\n")
        f.write("student_flow_layers = 2,2\n")
    cfg = cfgmod.load_config(path, {"teacher_steps": 75, "distill_batch": None})
    assert cfg["teacher_steps"] == 75              # override beats the file
    assert cfg["distill_batch"] == cfgmod.DEFAULTS["distill_batch"]   # None: no-op
    assert cfg["distill_lr"] == 1e-3
    assert cfg["student_flow_layers"] == [2, 2]
    assert cfg["corpus_clips"] == cfgmod.DEFAULTS["corpus_clips"]


def test_config_rejects_unknown_keys(tmp_path):
    path = str(tmp_path / "run.cfg")
    with open(path, "w") as f:
        f.write("no_such_knob = 1\n")
    with pytest.raises(ValueError, match="no_such_knob"):
        cfgmod.load_config(path, {})


def test_preset_application():
    cfg = dict(cfgmod.DEFAULTS)
    kw = cfgmod.apply_preset(cfg, {})
    assert kw["lambda_perceptual"] == 0.0
    assert not kw["use_contrastive"]
    assert kw["lambda_power"] == cfg["lambda_power"]
    cfg["preset"] = "kl_power_perceptual_contrastive"
    kw = cfgmod.apply_preset(cfg, {})
    assert kw["use_contrastive"]
    assert kw["lambda_perceptual"] == cfg["lambda_perceptual"]
    cfg["preset"] = "bogus"
    with pytest.raises(ValueError, match="preset"):
        cfgmod.apply_preset(cfg, {})


# ----------------------------------------------------------------------
# training loops


def tiny_training_setup():
    tcfg = tch.TeacherConfig(num_stacks=1, layers_per_stack=2, filter_size=3,
                             residual_channels=6, gate_channels=6, skip_channels=6,
                             num_mixtures=2, cond_channels=8)
    return tcfg


def test_sample_crops_are_frame_aligned(small_corpus):
    gen = prng.make_generator(0, prng.Stream.TEACHER_BATCH)
    x, c = trainers.sample_crops(small_corpus, 3, 128, gen)
    assert x.shape == (3, 128)
    assert c.shape == (3, small_corpus.spec.cond_channels, 128)
    # upsampled conditioning is constant within each frame
    r = small_corpus.spec.frame_rate_divisor
    blocks = c.reshape(3, -1, 128 // r, r)
    assert np.all(blocks == blocks[:, :, :, :1])
    with pytest.raises(ValueError, match="multiple"):
        trainers.sample_crops(small_corpus, 1, 100, gen)
    with pytest.raises(ValueError, match="longer"):
        trainers.sample_crops(small_corpus, 1, 4096, gen)


def test_train_teacher_short_run(tmp_path, small_corpus):
    out = str(tmp_path / "run")
    tcfg = tiny_training_setup()
    net = trainers.train_teacher(small_corpus, tcfg, out, seed=1, steps=4,
                                 batch=2, crop_length=128, checkpoint_every=2)
    rows = metrics.read_rows(os.path.join(out, "teacher_metrics.csv"))
    assert rows[0] == ["step", "nll"]
    assert len(rows) == 5
    assert all(np.isfinite(float(r[1])) for r in rows[1:])
    config, params, step, seed = ckpt.load_checkpoint(os.path.join(out, "teacher.ckpt"))
    assert step == 4 and seed == 1
    assert config == tcfg.to_dict()
    assert sorted(params) == sorted(net.params)
    assert os.path.exists(os.path.join(out, "teacher_timing.csv"))


def test_train_teacher_aborts_on_non_finite(tmp_path, small_corpus):
    out = str(tmp_path / "run")
    tcfg = tiny_training_setup()
    net = tch.WavenetTeacher(tcfg, prng.make_generator(0, prng.Stream.TEACHER_INIT))
    real_nll = net.nll
    calls = []

    def poisoned(x, c):
        calls.append(1)
        if len(calls) >= 4:
            return Tensor(np.array(np.nan))
        return real_nll(x, c)

    net.nll = poisoned
    with pytest.raises(trainers.TrainingAborted, match="step 3.*checkpoint kept"):
        trainers.train_teacher(small_corpus, tcfg, out, seed=0, steps=10,
                               batch=2, crop_length=128, checkpoint_every=2,
                               teacher=net)
    # rolling checkpoint from step 2 survived the abort
    _, _, step, _ = ckpt.load_checkpoint(os.path.join(out, "teacher.ckpt"))
    assert step == 2
    rows = metrics.read_rows(os.path.join(out, "teacher_metrics.csv"))
    assert len(rows) == 4                        # header + steps 0..2


def test_train_teacher_abort_before_any_checkpoint(tmp_path, small_corpus):
    out = str(tmp_path / "run")
    tcfg = tiny_training_setup()
    net = tch.WavenetTeacher(tcfg, prng.make_generator(0, prng.Stream.TEACHER_INIT))
    net.params["head2.b"].data[...] = np.nan
    with pytest.raises(trainers.TrainingAborted, match="no checkpoint"):
        trainers.train_teacher(small_corpus, tcfg, out, seed=0, steps=5,
                               batch=2, crop_length=128, teacher=net)
    assert not os.path.exists(os.path.join(out, "teacher.ckpt"))


def test_train_distill_short_run(tmp_path, small_corpus):
    out = str(tmp_path / "run")
    tcfg = tiny_training_setup()
    teacher = tch.WavenetTeacher(tcfg, prng.make_generator(0, prng.Stream.TEACHER_INIT))
    scfg = stu.StudentConfig(flow_layers=(2, 2), hidden_channels=8,
                             cond_channels=small_corpus.spec.cond_channels)
    dcfg = dl.DistillConfig(inner_samples=2)
    spec = dl.SpectrogramSpec(window_length=64, hop_length=32)
    student = trainers.train_distill(teacher, small_corpus, scfg, dcfg, out,
                                     seed=0, steps=3, batch=2, crop_length=128,
                                     checkpoint_every=2, spec=spec)
    rows = metrics.read_rows(os.path.join(out, "distill_metrics.csv"))
    assert rows[0] == ["step", "kl", "ce", "h", "power", "perceptual",
                       "contrastive", "total"]
    assert len(rows) == 4
    assert all(np.isfinite(float(v)) for r in rows[1:] for v in r)
    config, params, step, _ = ckpt.load_checkpoint(os.path.join(out, "student.ckpt"))
    assert step == 3
    assert config == scfg.to_dict()
    assert sorted(params) == sorted(student.params)


def test_train_distill_aborts_on_non_finite(tmp_path, small_corpus, monkeypatch):
    out = str(tmp_path / "run")
    tcfg = tiny_training_setup()
    teacher = tch.WavenetTeacher(tcfg, prng.make_generator(0, prng.Stream.TEACHER_INIT))
    scfg = stu.StudentConfig(flow_layers=(2,), hidden_channels=8,
                             cond_channels=small_corpus.spec.cond_channels)

    def blown(*a, **k):
        bd = dl.LossBreakdown(kl=np.nan, cross_entropy=np.nan, entropy=2.0,
                              power=0.0, perceptual=0.0, contrastive=0.0,
                              total=np.nan)
        return Tensor(np.array(np.nan)), bd

    monkeypatch.setattr(trainers, "distill_losses", blown)
    with pytest.raises(trainers.TrainingAborted, match="no checkpoint"):
        trainers.train_distill(teacher, small_corpus, scfg, dl.DistillConfig(),
                               out, seed=0, steps=5, batch=2, crop_length=128)


# ----------------------------------------------------------------------
# CLI


CLI_CFG = """\
corpus_clips = 8
clip_length = 256
crop_length = 128
teacher_stacks = 1
teacher_layers_per_stack = 2
teacher_residual_channels = 6
teacher_gate_channels = 6
teacher_skip_channels = 6
teacher_mixtures = 2
"""


def run_cli(args, cwd):
    return subprocess.run([sys.executable, "-m", "pdistill.cli", *args],
                          capture_output=True, text=True, cwd=cwd)


@pytest.fixture(scope="module")
def cli_cfg_path(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    path = base / "tiny.cfg"
    path.write_text(CLI_CFG)
    return str(path)


def test_cli_train_teacher_deterministic(tmp_path, cli_cfg_path):
    outs = []
    for name in ("a", "b"):
        out = str(tmp_path / name)
        r = run_cli(["--config", cli_cfg_path, "--seed", "5", "--out", out,
                     "train-teacher", "--steps", "3", "--batch", "2"], str(tmp_path))
        assert r.returncode == 0, r.stderr
        outs.append(out)
    m0 = open(os.path.join(outs[0], "teacher_metrics.csv"), "rb").read()
    m1 = open(os.path.join(outs[1], "teacher_metrics.csv"), "rb").read()
    assert m0 == m1
    c0 = open(os.path.join(outs[0], "teacher.ckpt"), "rb").read()
    c1 = open(os.path.join(outs[1], "teacher.ckpt"), "rb").read()
    assert c0 == c1


def test_cli_rejects_unknown_config_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("mystery = 1\n")
    r = run_cli(["--config", str(cfg), "--out", str(tmp_path / "o"),
                 "train-teacher", "--steps", "1"], str(tmp_path))
    assert r.returncode != 0
    assert "mystery" in r.stderr


def test_cli_seed_flag_position_is_flexible(tmp_path, cli_cfg_path):
    out1 = str(tmp_path / "pre")
    out2 = str(tmp_path / "post")
    r1 = run_cli(["--config", cli_cfg_path, "--seed", "9", "--out", out1,
                  "train-teacher", "--steps", "2", "--batch", "2"], str(tmp_path))
    r2 = run_cli(["--config", cli_cfg_path, "--out", out2,
                  "train-teacher", "--seed", "9", "--steps", "2", "--batch", "2"],
                 str(tmp_path))
    assert r1.returncode == 0 and r2.returncode == 0, r1.stderr + r2.stderr
    m1 = open(os.path.join(out1, "teacher_metrics.csv"), "rb").read()
    m2 = open(os.path.join(out2, "teacher_metrics.csv"), "rb").read()
    assert m1 == m2
