"""Throughput benchmark: sequential ancestral sampling vs one-pass student.

Speed depends on shapes, not on learned weights, so randomly initialized
networks are fair game. Each (mode, length) cell runs several repetitions
and reports the median wall time.
"""

import os
import statistics
import time
from dataclasses import dataclass

import numpy as np

from .metrics import MetricsWriter
from .rng import Stream, make_generator
from .student import draw_latent

LENGTHS = (4096, 16384, 65536)


@dataclass
class BenchReport:
    mode: str                   # "ancestral" or "parallel"
    t: int
    batch: int
    wall_seconds: float
    timesteps_per_second: float
    threads: int

    def row(self):
        return [self.mode, self.t, self.batch, self.wall_seconds,
                self.timesteps_per_second, self.threads]


def thread_cap() -> int:
    return int(os.environ.get("PDISTILL_THREADS", "1"))


def _bench_conditioning(cond_channels: int, t: int, gen: np.random.Generator):
    return gen.normal(0.0, 0.5, size=(1, cond_channels, t))


def _median_time(fn, reps: int) -> float:
    times = []
    for _ in range(reps):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return statistics.median(times)


def run_bench(teacher, student, lengths=LENGTHS, reps: int = 3, seed: int = 0):
    """Time both samplers at batch 1. Returns (reports, {T: speedup})."""
    if reps < 3:
        raise ValueError("need at least 3 repetitions for a stable median")
    threads = thread_cap()
    reports = []
    speedups = {}
    for t in lengths:
        c = _bench_conditioning(teacher.cfg.cond_channels, t,
                                make_generator(seed, Stream.BENCH, sub=t))
        gen_s = make_generator(seed, Stream.BENCH, sub=t + 1)

        wall_a = _median_time(lambda: teacher.sample_cached(c, gen_s), reps)
        tps_a = t * 1 / wall_a
        reports.append(BenchReport("ancestral", t, 1, wall_a, tps_a, threads))

        def parallel():
            z = draw_latent(1, t, gen_s)
            student.sample_fast(z, c)

        wall_p = _median_time(parallel, reps)
        tps_p = t * 1 / wall_p
        reports.append(BenchReport("parallel", t, 1, wall_p, tps_p, threads))

        speedups[t] = tps_p / tps_a
    return reports, speedups


def write_bench_csv(reports, speedups, out_dir: str) -> None:
    with MetricsWriter(os.path.join(out_dir, "bench.csv"),
                       ["mode", "T", "batch", "wall_seconds",
                        "timesteps_per_second", "threads"]) as w:
        for r in reports:
            w.write(r.row())
    with MetricsWriter(os.path.join(out_dir, "speedup.csv"),
                       ["T", "ancestral_tps", "parallel_tps", "speedup"]) as w:
        by_t = {}
        for r in reports:
            by_t.setdefault(r.t, {})[r.mode] = r.timesteps_per_second
        for t in sorted(by_t):
            w.write([t, by_t[t]["ancestral"], by_t[t]["parallel"], speedups[t]])
