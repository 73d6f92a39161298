"""Training drivers for the autoregressive teacher and the flow student.

Both loops draw every stochastic input (batch crops, latent noise, inner
Monte-Carlo draws) from step-keyed generators, so step k consumes the same
randomness no matter how many steps the run lasts. Metrics go to a CSV that
is byte-identical across repeated seeded runs; wall-clock times go to a
separate timing CSV.
"""

import os

import numpy as np

from .autodiff import NonFiniteError, Tape
from .checkpointio import save_checkpoint
from .corpus import upsample_conditioning
from .distill import DistillConfig, LossBreakdown, SpectrogramSpec, distill_losses
from .metrics import MetricsWriter, TimingWriter
from .optim import Adam
from .rng import Stream, make_generator
from .student import FlowStudent, StudentConfig, draw_latent
from .teacher import TeacherConfig, WavenetTeacher


class TrainingAborted(RuntimeError):
    """Raised when a loss turns non-finite; the last checkpoint survives."""


def sample_crops(corpus, batch: int, crop_length: int, gen: np.random.Generator):
    """Random frame-aligned crops. Returns (x [B,T], c [B,Cc,T])."""
    spec = corpus.spec
    div = spec.frame_rate_divisor
    if crop_length % div:
        raise ValueError("crop_length must be a multiple of frame_rate_divisor")
    crop_frames = crop_length // div
    if crop_frames > spec.num_frames:
        raise ValueError("crop_length longer than the clips")
    idx = gen.integers(0, corpus.waveforms.shape[0], size=batch)
    off = gen.integers(0, spec.num_frames - crop_frames + 1, size=batch)
    x = np.stack([corpus.waveforms[i, o * div:o * div + crop_length]
                  for i, o in zip(idx, off)])
    cf = np.stack([corpus.cond_frames[i, :, o:o + crop_frames]
                   for i, o in zip(idx, off)])
    return x, upsample_conditioning(cf, div)


def _abort(step: int, ckpt_path: str, wrote_ckpt: bool, cause: Exception):
    kept = f"last checkpoint kept at {ckpt_path}" if wrote_ckpt \
        else "no checkpoint written yet"
    raise TrainingAborted(f"non-finite loss at step {step} ({cause}); {kept}") from cause


def train_teacher(corpus, cfg: TeacherConfig, out_dir: str, seed: int = 0,
                  steps: int = 20000, batch: int = 4, lr: float = 2e-4,
                  crop_length: int = 1024, checkpoint_every: int = 5000,
                  teacher: WavenetTeacher = None) -> WavenetTeacher:
    """Maximum-likelihood training on discretized corpus crops.

    Writes teacher.ckpt (rolling), teacher_metrics.csv (step, nll) and
    teacher_timing.csv under out_dir. Returns the trained network.
    """
    os.makedirs(out_dir, exist_ok=True)
    if teacher is None:
        teacher = WavenetTeacher(cfg, make_generator(seed, Stream.TEACHER_INIT))
    opt = Adam(teacher.params, lr)
    ckpt_path = os.path.join(out_dir, "teacher.ckpt")
    wrote = False
    with MetricsWriter(os.path.join(out_dir, "teacher_metrics.csv"),
                       ["step", "nll"]) as mw, \
            TimingWriter(os.path.join(out_dir, "teacher_timing.csv")) as tw:
        for step in range(steps):
            gen = make_generator(seed, Stream.TEACHER_BATCH, sub=step)
            x, c = sample_crops(corpus, batch, crop_length, gen)
            opt.zero_grad()
            try:
                with Tape() as tape:
                    loss = teacher.nll(x, c)
                    val = loss.item()
                    if not np.isfinite(val):
                        raise NonFiniteError(f"nll = {val}")
                    tape.backward(loss)
            except NonFiniteError as e:
                _abort(step, ckpt_path, wrote, e)
            opt.step()
            mw.write([step, val])
            tw.mark(step)
            if checkpoint_every and (step + 1) % checkpoint_every == 0:
                save_checkpoint(ckpt_path, cfg.to_dict(), teacher.params, step + 1, seed)
                wrote = True
    save_checkpoint(ckpt_path, cfg.to_dict(), teacher.params, steps, seed)
    return teacher


def train_distill(teacher: WavenetTeacher, corpus, student_cfg: StudentConfig,
                  dcfg: DistillConfig, out_dir: str, seed: int = 0,
                  steps: int = 20000, batch: int = 4, lr: float = 5e-4,
                  crop_length: int = 1024, checkpoint_every: int = 5000,
                  classifier=None, spec: SpectrogramSpec = None,
                  student: FlowStudent = None) -> FlowStudent:
    """Distill the frozen teacher into a parallel flow student.

    Writes student.ckpt (rolling), distill_metrics.csv with the full loss
    breakdown per step, and distill_timing.csv. Returns the student.
    """
    os.makedirs(out_dir, exist_ok=True)
    teacher.set_trainable(False)
    if student is None:
        student = FlowStudent(student_cfg, make_generator(seed, Stream.STUDENT_INIT))
    opt = Adam(student.params, lr)
    ckpt_path = os.path.join(out_dir, "student.ckpt")
    wrote = False
    header = ["step", *LossBreakdown.FIELDS]
    with MetricsWriter(os.path.join(out_dir, "distill_metrics.csv"), header) as mw, \
            TimingWriter(os.path.join(out_dir, "distill_timing.csv")) as tw:
        for step in range(steps):
            gen_b = make_generator(seed, Stream.DISTILL_BATCH, sub=step)
            y_ref, c = sample_crops(corpus, batch, crop_length, gen_b)
            z = draw_latent(batch, crop_length,
                            make_generator(seed, Stream.DISTILL_NOISE, sub=step))
            gen_inner = make_generator(seed, Stream.INNER_MC, sub=step)
            opt.zero_grad()
            try:
                with Tape() as tape:
                    total, br = distill_losses(student, teacher, z, c, y_ref,
                                               dcfg, gen_inner, classifier, spec)
                    if not np.isfinite(br.total):
                        raise NonFiniteError(f"total = {br.total}")
                    tape.backward(total)
            except NonFiniteError as e:
                _abort(step, ckpt_path, wrote, e)
            opt.step()
            mw.write([step, *br.row()])
            tw.mark(step)
            if checkpoint_every and (step + 1) % checkpoint_every == 0:
                save_checkpoint(ckpt_path, student_cfg.to_dict(), student.params,
                                step + 1, seed)
                wrote = True
    save_checkpoint(ckpt_path, student_cfg.to_dict(), student.params, steps, seed)
    return student
