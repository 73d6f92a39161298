"""Counter-based random streams.

Every consumer of randomness gets its own named stream keyed by
(seed, stream id). Streams are Philox generators, so restoring a run from
(seed, step) alone reproduces the exact draw sequence without serialising
generator state.
"""

from enum import IntEnum

import numpy as np

# Uniform draws are mapped into the open interval (0, 1) so that log(u) and
# log(1 - u) stay finite.
_EPS = 1e-12


class Stream(IntEnum):
    TEACHER_INIT = 0
    STUDENT_INIT = 1
    CLASSIFIER_INIT = 2
    CORPUS = 3
    TEACHER_BATCH = 4
    DISTILL_BATCH = 5
    DISTILL_NOISE = 6
    INNER_MC = 7
    SAMPLER = 8
    BENCH = 9
    DEMO = 10
    TEST = 11


def make_generator(seed: int, stream: Stream, sub: int = 0) -> np.random.Generator:
    """Return a Philox generator keyed by (seed, stream, sub).

    `sub` distinguishes independent draws within a stream (clip index, step
    number), so any point in a run can be reproduced without replaying
    earlier draws.
    """
    key = ((int(seed) & (2**64 - 1)) * 2**64
           + (int(stream) << 32) + (int(sub) & 0xFFFFFFFF))
    return np.random.Generator(np.random.Philox(key=key))


def open_uniform(gen: np.random.Generator, size) -> np.ndarray:
    """Uniform draws strictly inside (0, 1)."""
    u = gen.random(size)
    return u * (1.0 - 2.0 * _EPS) + _EPS


def categorical(gen: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """Inverse-CDF categorical draw along the last axis of `probs`.

    probs: [..., K] rows summing to ~1. Returns integer indices [...]. One
    uniform is consumed per row, in C order, so the draw count is independent
    of K.
    """
    u = open_uniform(gen, probs.shape[:-1])
    cdf = np.cumsum(probs, axis=-1)
    # Guard the top edge: cumulative sums may land a hair under 1.
    cdf[..., -1] = np.maximum(cdf[..., -1], 1.0)
    return np.sum(u[..., None] > cdf, axis=-1)
