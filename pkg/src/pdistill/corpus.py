"""Synthetic conditioned-waveform corpus.

Each clip is a sequence of pseudo-phone segments. A phone is a harmonic
amplitude template driven by a smoothly varying fundamental frequency;
speakers differ in pitch register and spectral rolloff. Conditioning frames
(one per frame_rate_divisor samples) carry a one-hot phone id, normalized
log f0, and a one-hot speaker id. Phone boundaries land on frame boundaries
so every frame has a single well-defined label.

Every clip is generated from its own counter-derived random stream, so the
corpus is bit-identical for a given spec regardless of generation order.
"""

from dataclasses import dataclass

import numpy as np

from .rng import Stream, make_generator

# rows: phones; cols: harmonics 1..4. All fundamental-dominant so the
# spectral peak sits at f0, while upper-harmonic ratios separate the phones.
PHONE_TEMPLATES = np.array([
    [0.75, 0.15, 0.06, 0.04],
    [0.60, 0.32, 0.05, 0.03],
    [0.60, 0.06, 0.30, 0.04],
    [0.55, 0.08, 0.07, 0.30],
    [0.50, 0.22, 0.18, 0.10],
]) * 0.8

# per-speaker (pitch multiplier, harmonic rolloff exponent)
SPEAKER_TRAITS = [(1.0, 0.0), (1.35, 0.7)]

NOISE_LEVEL = 0.01


@dataclass
class CorpusSpec:
    num_phones: int = 5
    num_speakers: int = 2
    sample_rate: int = 4000
    clip_length: int = 2048
    f0_range: tuple = (90.0, 260.0)
    frame_rate_divisor: int = 32
    num_clips: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.num_phones > PHONE_TEMPLATES.shape[0]:
            raise ValueError(f"at most {PHONE_TEMPLATES.shape[0]} phones supported")
        if self.num_speakers > len(SPEAKER_TRAITS):
            raise ValueError(f"at most {len(SPEAKER_TRAITS)} speakers supported")
        if self.clip_length % self.frame_rate_divisor:
            raise ValueError("clip_length must be a multiple of frame_rate_divisor")

    @property
    def num_frames(self) -> int:
        return self.clip_length // self.frame_rate_divisor

    @property
    def cond_channels(self) -> int:
        return self.num_phones + 1 + self.num_speakers


@dataclass
class Corpus:
    spec: CorpusSpec
    waveforms: np.ndarray      # [N, T]
    cond_frames: np.ndarray    # [N, Cc, F]
    phone_frames: np.ndarray   # [N, F] int labels
    speakers: np.ndarray       # [N] int


def upsample_conditioning(frames: np.ndarray, divisor: int) -> np.ndarray:
    """Repeat each conditioning frame divisor times along the last axis."""
    return np.repeat(frames, divisor, axis=-1)


def _smooth_f0(gen: np.random.Generator, n_frames: int, lo: float, hi: float) -> np.ndarray:
    walk = np.empty(n_frames)
    walk[0] = gen.uniform(lo, hi)
    drift = (hi - lo) * 0.03
    for i in range(1, n_frames):
        walk[i] = walk[i - 1] + gen.normal(0.0, drift)
    # reflect into range, then smooth to keep the contour slow
    walk = lo + np.abs((walk - lo) % (2 * (hi - lo)))
    walk = np.where(walk > hi, 2 * hi - walk, walk)
    kernel = np.ones(5) / 5.0
    padded = np.concatenate([np.full(4, walk[0]), walk])
    return np.convolve(padded, kernel, mode="valid")


def _synth_clip(spec: CorpusSpec, clip_index: int):
    gen = make_generator(spec.seed, Stream.CORPUS, sub=clip_index)
    n_frames = spec.num_frames
    r = spec.frame_rate_divisor
    speaker = clip_index % spec.num_speakers
    pitch_mult, rolloff = SPEAKER_TRAITS[speaker]

    # phone segments in whole frames, 8..20 frames each, no repeats
    phones = np.empty(n_frames, dtype=np.int64)
    pos = 0
    prev = -1
    while pos < n_frames:
        p = int(gen.integers(0, spec.num_phones))
        if p == prev:
            p = (p + 1) % spec.num_phones
        length = int(gen.integers(8, 21))
        phones[pos:pos + length] = p
        prev = p
        pos += length

    lo, hi = spec.f0_range
    f0_frames = _smooth_f0(gen, n_frames, lo, hi) * pitch_mult
    f0_frames = np.clip(f0_frames, lo, hi * 1.4)

    f0_samples = np.repeat(f0_frames, r)
    phase = 2.0 * np.pi * np.cumsum(f0_samples) / spec.sample_rate
    phone_samples = np.repeat(phones, r)
    amps = PHONE_TEMPLATES[phone_samples]          # [T, 4]
    x = np.zeros(spec.clip_length)
    for h in range(1, 5):
        x += amps[:, h - 1] * (h ** -rolloff) * np.sin(h * phase)
    x += gen.normal(0.0, NOISE_LEVEL, size=spec.clip_length)
    peak = np.max(np.abs(x))
    if peak > 0.95:
        x *= 0.95 / peak

    log_lo = np.log(lo)
    log_hi = np.log(hi * 1.4)
    f0_norm = (np.log(f0_frames) - log_lo) / (log_hi - log_lo)

    cond = np.zeros((spec.cond_channels, n_frames))
    cond[phones, np.arange(n_frames)] = 1.0
    cond[spec.num_phones] = f0_norm
    cond[spec.num_phones + 1 + speaker] = 1.0
    return x, cond, phones, speaker


def synth_corpus(spec: CorpusSpec) -> Corpus:
    n = spec.num_clips
    waveforms = np.empty((n, spec.clip_length))
    cond = np.empty((n, spec.cond_channels, spec.num_frames))
    phones = np.empty((n, spec.num_frames), dtype=np.int64)
    speakers = np.empty(n, dtype=np.int64)
    for i in range(n):
        waveforms[i], cond[i], phones[i], speakers[i] = _synth_clip(spec, i)
    return Corpus(spec=spec, waveforms=waveforms, cond_frames=cond,
                  phone_frames=phones, speakers=speakers)
