"""Command-line entry points.

Thread caps must land in the BLAS environment before numpy is first
imported, so this module imports nothing heavy at the top level; each
command pulls in what it needs once the environment is settled.
"""

import argparse
import os
import sys


def _configure_threads() -> None:
    cap = os.environ.get("PDISTILL_THREADS")
    if not cap:
        return
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, cap)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pdistill",
        description="Train a dilated-conv autoregressive teacher on synthetic "
                    "waveforms and distill it into a parallel flow student.")
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS so a flag after the subcommand overrides one before it
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="flat key=value config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="run seed (default 0)")
    common.add_argument("--out", default=argparse.SUPPRESS,
                        help="output directory (default ./out)")
    parser.add_argument("--config", default=None)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="out")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-teacher", parents=[common],
                       help="maximum-likelihood training of the teacher")
    _add_loop_flags(p)

    p = sub.add_parser("train-classifier", parents=[common],
                       help="train the frozen phone classifier")
    p.add_argument("--steps", type=int, default=None)

    p = sub.add_parser("distill", parents=[common],
                       help="train the parallel student against a teacher")
    p.add_argument("--teacher", required=True, help="teacher checkpoint path")
    p.add_argument("--classifier", default=None, help="classifier checkpoint path")
    p.add_argument("--preset", default=None,
                   help="loss preset: kl_power, kl_power_perceptual, "
                        "kl_power_perceptual_contrastive")
    _add_loop_flags(p)

    p = sub.add_parser("sample", parents=[common],
                       help="write teacher (ancestral) and student (parallel) WAVs")
    p.add_argument("--teacher", required=True)
    p.add_argument("--student", required=True)
    p.add_argument("--clips", type=int, default=None)
    p.add_argument("--length", type=int, default=None)

    p = sub.add_parser("bench", parents=[common],
                       help="throughput of ancestral vs parallel sampling")
    p.add_argument("--teacher", default=None, help="optional checkpoint; random init otherwise")
    p.add_argument("--student", default=None, help="optional checkpoint; random init otherwise")
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--lengths", default=None, help="comma list, default 4096,16384,65536")

    p = sub.add_parser("demo-map", parents=[common],
                       help="CE-only vs full-KL mode-collapse study")
    p.add_argument("--steps", type=int, default=2000)

    sub.add_parser("demo-fib", parents=[common],
                   help="receptive-field study on Fibonacci sequences")
    return parser


def _add_loop_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--crop-length", type=int, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)


# ---------------------------------------------------------------------------
# shared construction helpers (imported lazily by the commands)

def _load_cfg(args) -> dict:
    from .config import load_config
    return load_config(args.config)


def _corpus_spec(cfg: dict, seed: int):
    from .corpus import CorpusSpec
    return CorpusSpec(num_phones=cfg["corpus_phones"],
                      num_speakers=cfg["corpus_speakers"],
                      sample_rate=cfg["sample_rate"],
                      clip_length=cfg["clip_length"],
                      frame_rate_divisor=cfg["frame_rate_divisor"],
                      num_clips=cfg["corpus_clips"],
                      seed=seed)


def _teacher_config(cfg: dict, cond_channels: int):
    from .teacher import TeacherConfig
    return TeacherConfig(num_stacks=cfg["teacher_stacks"],
                         layers_per_stack=cfg["teacher_layers_per_stack"],
                         filter_size=cfg["teacher_filter_size"],
                         residual_channels=cfg["teacher_residual_channels"],
                         gate_channels=cfg["teacher_gate_channels"],
                         skip_channels=cfg["teacher_skip_channels"],
                         num_mixtures=cfg["teacher_mixtures"],
                         cond_channels=cond_channels)


def _student_config(cfg: dict, cond_channels: int):
    from .student import StudentConfig
    return StudentConfig(flow_layers=tuple(cfg["student_flow_layers"]),
                         filter_size=cfg["student_filter_size"],
                         hidden_channels=cfg["student_hidden_channels"],
                         cond_channels=cond_channels)


def _load_teacher(path: str):
    from .checkpointio import load_checkpoint, restore_params
    from .rng import Stream, make_generator
    from .teacher import TeacherConfig, WavenetTeacher
    config, params, step, seed = load_checkpoint(path)
    net = WavenetTeacher(TeacherConfig(**config), make_generator(seed, Stream.TEACHER_INIT))
    restore_params(net, params)
    return net


def _load_student(path: str):
    from .checkpointio import load_checkpoint, restore_params
    from .rng import Stream, make_generator
    from .student import FlowStudent, StudentConfig
    config, params, step, seed = load_checkpoint(path)
    config["flow_layers"] = tuple(config["flow_layers"])
    net = FlowStudent(StudentConfig(**config), make_generator(seed, Stream.STUDENT_INIT))
    restore_params(net, params)
    return net


def _load_classifier(path: str):
    from .checkpointio import load_checkpoint, restore_params
    from .classifier import ClassifierConfig, PhoneClassifier
    from .rng import Stream, make_generator
    config, params, step, seed = load_checkpoint(path)
    config["dilations"] = tuple(config["dilations"])
    net = PhoneClassifier(ClassifierConfig(**config),
                          make_generator(seed, Stream.CLASSIFIER_INIT))
    restore_params(net, params)
    net.set_trainable(False)
    return net


# ---------------------------------------------------------------------------
# commands

def cmd_train_teacher(args) -> int:
    from .corpus import synth_corpus
    from .trainers import train_teacher
    cfg = _load_cfg(args)
    spec = _corpus_spec(cfg, args.seed)
    corpus = synth_corpus(spec)
    tcfg = _teacher_config(cfg, spec.cond_channels)
    train_teacher(corpus, tcfg, args.out, seed=args.seed,
                  steps=args.steps or cfg["teacher_steps"],
                  batch=args.batch or cfg["teacher_batch"],
                  lr=args.lr or cfg["teacher_lr"],
                  crop_length=args.crop_length or cfg["crop_length"],
                  checkpoint_every=args.checkpoint_every or cfg["checkpoint_every"])
    print(f"teacher checkpoint and metrics written to {args.out}")
    return 0


def cmd_train_classifier(args) -> int:
    from .checkpointio import save_checkpoint
    from .classifier import train_classifier
    from .corpus import synth_corpus
    cfg = _load_cfg(args)
    corpus = synth_corpus(_corpus_spec(cfg, args.seed))
    net, acc = train_classifier(corpus, seed=args.seed,
                                steps=args.steps or cfg["classifier_steps"],
                                batch_size=cfg["classifier_batch"],
                                lr=cfg["classifier_lr"])
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "classifier.ckpt")
    save_checkpoint(path, net.cfg.to_dict(), net.params,
                    args.steps or cfg["classifier_steps"], args.seed)
    print(f"classifier held-out frame accuracy {acc:.3f}; checkpoint at {path}")
    return 0


def cmd_distill(args) -> int:
    from .config import apply_preset
    from .corpus import synth_corpus
    from .distill import DistillConfig, SpectrogramSpec
    from .trainers import train_distill
    cfg = _load_cfg(args)
    if args.preset:
        cfg["preset"] = args.preset
    spec = _corpus_spec(cfg, args.seed)
    corpus = synth_corpus(spec)
    teacher = _load_teacher(args.teacher)
    if teacher.cfg.cond_channels != spec.cond_channels:
        raise SystemExit("teacher was trained with different conditioning channels")
    dkw = apply_preset(cfg, {"inner_samples": cfg["inner_samples"],
                             "gamma": cfg["gamma"],
                             "perceptual_mode": cfg["perceptual_mode"]})
    dcfg = DistillConfig(**dkw)
    classifier = _load_classifier(args.classifier) if args.classifier else None
    if dcfg.lambda_perceptual > 0 and classifier is None:
        raise SystemExit(f"preset {cfg['preset']!r} needs --classifier")
    scfg = _student_config(cfg, spec.cond_channels)
    sspec = SpectrogramSpec(window_length=cfg["stft_window"], hop_length=cfg["stft_hop"])
    train_distill(teacher, corpus, scfg, dcfg, args.out, seed=args.seed,
                  steps=args.steps or cfg["distill_steps"],
                  batch=args.batch or cfg["distill_batch"],
                  lr=args.lr or cfg["distill_lr"],
                  crop_length=args.crop_length or cfg["distill_crop_length"],
                  checkpoint_every=args.checkpoint_every or cfg["checkpoint_every"],
                  classifier=classifier, spec=sspec)
    print(f"student checkpoint and metrics written to {args.out}")
    return 0


def cmd_sample(args) -> int:
    import numpy as np

    from .corpus import synth_corpus, upsample_conditioning
    from .rng import Stream, make_generator
    from .student import draw_latent
    from .wavio import write_wav
    cfg = _load_cfg(args)
    clips = args.clips or cfg["sample_clips"]
    spec = _corpus_spec(cfg, args.seed)
    corpus = synth_corpus(spec)
    if clips > corpus.waveforms.shape[0]:
        raise SystemExit("more clips requested than the corpus holds")
    length = args.length or cfg["sample_length"]
    if length % spec.frame_rate_divisor or length > spec.clip_length:
        raise SystemExit("length must be a frame multiple within the clip length")
    frames = length // spec.frame_rate_divisor
    c = upsample_conditioning(corpus.cond_frames[:clips, :, :frames],
                              spec.frame_rate_divisor)

    teacher = _load_teacher(args.teacher)
    student = _load_student(args.student)
    x_t = teacher.sample_cached(c, make_generator(args.seed, Stream.SAMPLER, sub=0))
    z = draw_latent(clips, length, make_generator(args.seed, Stream.SAMPLER, sub=1))
    x_s = np.clip(student.sample_fast(z, c), -1.0, 1.0)

    os.makedirs(args.out, exist_ok=True)
    for i in range(clips):
        write_wav(os.path.join(args.out, f"sample_teacher_{i}.wav"),
                  x_t[i], spec.sample_rate)
        write_wav(os.path.join(args.out, f"sample_student_{i}.wav"),
                  x_s[i], spec.sample_rate)
    print(f"{2 * clips} WAV files written to {args.out}")
    return 0


def cmd_bench(args) -> int:
    from .bench import LENGTHS, run_bench, write_bench_csv
    from .rng import Stream, make_generator
    from .student import FlowStudent
    from .teacher import WavenetTeacher
    cfg = _load_cfg(args)
    spec = _corpus_spec(cfg, args.seed)
    if args.teacher:
        teacher = _load_teacher(args.teacher)
    else:
        teacher = WavenetTeacher(_teacher_config(cfg, spec.cond_channels),
                                 make_generator(args.seed, Stream.TEACHER_INIT))
    if args.student:
        student = _load_student(args.student)
    else:
        student = FlowStudent(_student_config(cfg, teacher.cfg.cond_channels),
                              make_generator(args.seed, Stream.STUDENT_INIT))
    lengths = tuple(int(v) for v in args.lengths.split(",")) if args.lengths else LENGTHS
    os.makedirs(args.out, exist_ok=True)
    reports, speedups = run_bench(teacher, student, lengths=lengths,
                                  reps=args.reps, seed=args.seed)
    write_bench_csv(reports, speedups, args.out)
    for r in reports:
        print(f"{r.mode:>9}  T={r.t:<6} {r.timesteps_per_second:12.1f} timesteps/s "
              f"({r.wall_seconds:.3f} s, {r.threads} threads)")
    for t in sorted(speedups):
        print(f"speedup at T={t}: {speedups[t]:.1f}x")
    return 0


def cmd_demo_map(args) -> int:
    from .demos import run_demo_map
    report = run_demo_map(args.out, seed=args.seed, steps=args.steps)
    for key in ("ce", "kl"):
        r = report[key]
        print(f"{key:>3}: mean(ln s_tot) = {r['mean_ln_s']:+.3f}, "
              f"sample RMS = {r['sample_rms']:.3f}")
    print(f"unit-logistic sigma = {report['sigma_logistic']:.3f}")
    return 0


def cmd_demo_fib(args) -> int:
    from .demos import run_demo_fib
    report = run_demo_fib(args.out, seed=args.seed)
    print(f"AR(2) held-out max abs error: {report['ar_heldout_max_abs']:.3e}")
    for r, v in sorted(report["ff_nrmse"].items(), key=lambda kv: int(kv[0])):
        print(f"feedforward r={r:>2}: normalized RMSE {v:.3e}")
    return 0


_COMMANDS = {
    "train-teacher": cmd_train_teacher,
    "train-classifier": cmd_train_classifier,
    "distill": cmd_distill,
    "sample": cmd_sample,
    "bench": cmd_bench,
    "demo-map": cmd_demo_map,
    "demo-fib": cmd_demo_fib,
}


def main(argv=None) -> int:
    _configure_threads()
    args = build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
