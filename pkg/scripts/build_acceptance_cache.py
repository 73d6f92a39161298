"""Build the cached artifacts the slow acceptance tests read.

Training runs, benchmarks and demos take minutes to hours, so they run
once here and tests/test_acceptance.py checks the outputs. Each stage is
a plain CLI invocation; its wall time, argv and finish timestamp go into
.acceptance_cache/build_log.json, and the suite enforces the runtime
budgets against those recorded walls.

Stages run serially and the timings are only meaningful on an otherwise
idle machine: do not run anything else (including the test suite) while
this script is working. A stage is skipped when its outputs and log entry
both exist; delete a stage directory and its log entry to force a rebuild.

The *_rerun stages repeat earlier seeded stages so the suite can compare
their metrics CSVs byte for byte. The distill rerun covers only the first
300 steps: the training loops key every random draw by (seed, stream,
step), so a short run must reproduce the head of the long run exactly.
"""

import json
import os
import subprocess
import sys
import time

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CACHE = os.path.join(ROOT, ".acceptance_cache")
LOG_PATH = os.path.join(CACHE, "build_log.json")

TEACHER = ".acceptance_cache/teacher/teacher.ckpt"
STUDENT = ".acceptance_cache/distill/student.ckpt"
CLASSIFIER = ".acceptance_cache/classifier/classifier.ckpt"


def _load_log() -> dict:
    if os.path.exists(LOG_PATH):
        with open(LOG_PATH) as fh:
            return json.load(fh)
    return {}


def _save_log(log: dict) -> None:
    tmp = LOG_PATH + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(log, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, LOG_PATH)


def run_stage(log: dict, name: str, argv: list, outputs: list) -> None:
    paths = [os.path.join(CACHE, p) for p in outputs]
    if name in log and all(os.path.exists(p) for p in paths):
        print(f"[skip] {name}")
        return
    print(f"[run ] {name}: pdistill {' '.join(argv)}", flush=True)
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pdistill.cli", *argv],
                          cwd=ROOT, capture_output=True, text=True)
    wall = time.perf_counter() - t0
    sys.stdout.write(proc.stdout)
    sys.stderr.write(proc.stderr)
    if proc.returncode != 0:
        raise SystemExit(f"stage {name} exited with {proc.returncode}")
    missing = [p for p in paths if not os.path.exists(p)]
    if missing:
        raise SystemExit(f"stage {name} did not produce {missing}")
    log[name] = {
        "argv": argv,
        "wall_seconds": round(wall, 3),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    _save_log(log)
    print(f"[done] {name}: {wall:.1f} s", flush=True)


def main() -> int:
    os.makedirs(CACHE, exist_ok=True)
    log = _load_log()

    run_stage(log, "teacher",
              ["train-teacher", "--seed", "0",
               "--out", ".acceptance_cache/teacher"],
              ["teacher/teacher.ckpt", "teacher/teacher_metrics.csv"])

    run_stage(log, "distill",
              ["distill", "--teacher", TEACHER, "--seed", "0",
               "--out", ".acceptance_cache/distill"],
              ["distill/student.ckpt", "distill/distill_metrics.csv"])

    run_stage(log, "classifier",
              ["train-classifier", "--seed", "0",
               "--out", ".acceptance_cache/classifier"],
              ["classifier/classifier.ckpt"])

    # ablation rows: 400 steps each is enough to show finite, complete
    # loss breakdowns without re-running full distillations
    run_stage(log, "ablation_kl_power",
              ["distill", "--teacher", TEACHER, "--preset", "kl_power",
               "--steps", "400", "--seed", "0",
               "--out", ".acceptance_cache/ablation/kl_power"],
              ["ablation/kl_power/distill_metrics.csv"])

    run_stage(log, "ablation_kl_power_perceptual",
              ["distill", "--teacher", TEACHER, "--classifier", CLASSIFIER,
               "--preset", "kl_power_perceptual",
               "--steps", "400", "--seed", "0",
               "--out", ".acceptance_cache/ablation/kl_power_perceptual"],
              ["ablation/kl_power_perceptual/distill_metrics.csv"])

    run_stage(log, "ablation_kl_power_perceptual_contrastive",
              ["distill", "--teacher", TEACHER, "--classifier", CLASSIFIER,
               "--preset", "kl_power_perceptual_contrastive",
               "--steps", "400", "--seed", "0",
               "--out", ".acceptance_cache/ablation/kl_power_perceptual_contrastive"],
              ["ablation/kl_power_perceptual_contrastive/distill_metrics.csv"])

    # 32 clips keep the sampling noise floor of the time-averaged spectra
    # a few percent, well under the 10% budget the suite checks
    run_stage(log, "sample",
              ["sample", "--teacher", TEACHER, "--student", STUDENT,
               "--clips", "32", "--length", "2048", "--seed", "0",
               "--out", ".acceptance_cache/sample"],
              ["sample/sample_teacher_0.wav", "sample/sample_student_0.wav",
               "sample/sample_teacher_31.wav", "sample/sample_student_31.wav"])

    run_stage(log, "bench",
              ["bench", "--teacher", TEACHER, "--student", STUDENT,
               "--reps", "3", "--seed", "0",
               "--out", ".acceptance_cache/bench"],
              ["bench/bench.csv", "bench/speedup.csv"])

    run_stage(log, "demo_map",
              ["demo-map", "--seed", "0", "--out", ".acceptance_cache/demo_map"],
              ["demo_map/map_report.json", "demo_map/map_metrics_ce.csv",
               "demo_map/map_metrics_kl.csv"])

    run_stage(log, "demo_fib",
              ["demo-fib", "--seed", "0", "--out", ".acceptance_cache/demo_fib"],
              ["demo_fib/fib_report.json", "demo_fib/fib_profile.csv"])

    # seeded repeats for the determinism checks
    run_stage(log, "teacher_rerun",
              ["train-teacher", "--seed", "0",
               "--out", ".acceptance_cache/teacher_rerun"],
              ["teacher_rerun/teacher_metrics.csv"])

    run_stage(log, "distill_rerun",
              ["distill", "--teacher", TEACHER, "--steps", "300", "--seed", "0",
               "--out", ".acceptance_cache/distill_rerun"],
              ["distill_rerun/distill_metrics.csv"])

    run_stage(log, "demo_map_rerun",
              ["demo-map", "--seed", "0",
               "--out", ".acceptance_cache/demo_map_rerun"],
              ["demo_map_rerun/map_report.json",
               "demo_map_rerun/map_metrics_ce.csv",
               "demo_map_rerun/map_metrics_kl.csv"])

    run_stage(log, "demo_fib_rerun",
              ["demo-fib", "--seed", "0",
               "--out", ".acceptance_cache/demo_fib_rerun"],
              ["demo_fib_rerun/fib_report.json", "demo_fib_rerun/fib_profile.csv"])

    run_stage(log, "bench_rerun",
              ["bench", "--teacher", TEACHER, "--student", STUDENT,
               "--reps", "3", "--seed", "0",
               "--out", ".acceptance_cache/bench_rerun"],
              ["bench_rerun/bench.csv", "bench_rerun/speedup.csv"])

    print("acceptance cache complete")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
