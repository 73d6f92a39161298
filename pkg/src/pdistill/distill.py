"""Distillation objective: closed-form entropy minus Monte-Carlo cross-entropy,
plus the auxiliary power, perceptual, and contrastive losses.

The student is scored by its own samples: one parallel pass produces x and
the per-timestep output logistic; the frozen teacher is run once on x to get
its conditionals for every position, and M reparameterized inner draws per
timestep estimate the cross-entropy. Gradients flow through both the sample
prefix (teacher input) and the inner draws.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import distributions as dist
from .autodiff import Tensor
from .rng import open_uniform
from .student import StudentOutput, student_entropy_term


@dataclass
class SpectrogramSpec:
    window_length: int = 256
    hop_length: int = 64
    window: str = "hann"   # "hann" or "rect"

    def __post_init__(self):
        if not 0 < self.hop_length <= self.window_length:
            raise ValueError(f"need 0 < hop {self.hop_length} <= window {self.window_length}")
        if self.window not in ("hann", "rect"):
            raise ValueError(f"unknown window kind {self.window!r}")


@dataclass
class DistillConfig:
    inner_samples: int = 16
    lambda_power: float = 1.0
    lambda_perceptual: float = 0.0
    use_contrastive: bool = False
    gamma: float = 0.3
    perceptual_mode: str = "gram"

    def __post_init__(self):
        if self.inner_samples < 1:
            raise ValueError("inner_samples must be >= 1")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")


@dataclass
class LossBreakdown:
    """Per-timestep scalars (nats for the KL family)."""

    kl: float
    cross_entropy: float
    entropy: float
    power: float
    perceptual: float
    contrastive: float
    total: float

    FIELDS = ("kl", "ce", "h", "power", "perceptual", "contrastive", "total")

    def row(self):
        return [self.kl, self.cross_entropy, self.entropy, self.power,
                self.perceptual, self.contrastive, self.total]


class DistillAbort(RuntimeError):
    """A training step produced a non-finite total loss."""


# ---------------------------------------------------------------------------
# spectral ops

def _dft_mats(n: int):
    k = np.arange(n // 2 + 1)
    t = np.arange(n)
    ang = 2.0 * np.pi * np.outer(t, k) / n
    return np.cos(ang), -np.sin(ang)


def _window_array(spec: SpectrogramSpec) -> np.ndarray:
    n = spec.window_length
    if spec.window == "hann":
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    return np.ones(n)


def stft_power(x, spec: SpectrogramSpec) -> Tensor:
    """Squared-magnitude spectrogram [frames, bins] of a 1-D signal.

    Differentiable: frames are windowed and projected on explicit DFT
    cosine/sine matrices. bins = window_length // 2 + 1.
    """
    xt = x if isinstance(x, Tensor) else Tensor(x)
    if xt.data.ndim != 1:
        raise ValueError(f"stft_power expects a 1-D signal, got {xt.data.shape}")
    if xt.data.shape[0] < spec.window_length:
        raise ValueError(f"signal length {xt.data.shape[0]} shorter than "
                         f"window {spec.window_length}")
    frames = ad.frame(xt, spec.window_length, spec.hop_length)
    frames = frames * Tensor(_window_array(spec)[None, :])
    cos_m, sin_m = _dft_mats(spec.window_length)
    re = ad.matmul(frames, Tensor(cos_m))
    im = ad.matmul(frames, Tensor(sin_m))
    return re * re + im * im


def avg_power_spectrum(x, spec: SpectrogramSpec) -> Tensor:
    """Power spectrum averaged over frames, normalized by window_length^2."""
    p = ad.mean(stft_power(x, spec), axis=0)
    return ad.scale(p, 1.0 / spec.window_length ** 2)


def power_loss(x_gen: Tensor, y_ref: np.ndarray, spec: SpectrogramSpec) -> Tensor:
    """Mean over batch of squared distance between time-averaged spectra."""
    y = np.asarray(y_ref, dtype=np.float64)
    if x_gen.data.shape != y.shape:
        raise ValueError(f"length mismatch: {x_gen.data.shape} vs {y.shape}")
    b = x_gen.data.shape[0]
    total = None
    for i in range(b):
        row = ad.reshape(ad.narrow(x_gen, 0, i, 1), (x_gen.data.shape[1],))
        px = avg_power_spectrum(row, spec)
        py = avg_power_spectrum(Tensor(y[i]), spec)
        diff = px - Tensor(py.data)
        term = ad.tensor_sum(diff * diff)
        total = term if total is None else total + term
    return ad.scale(total, 1.0 / b)


def perceptual_loss(x_gen: Tensor, y_ref: np.ndarray, classifier,
                    mode: str = "gram") -> Tensor:
    """Distance between classifier feature summaries of x_gen and y_ref.

    mode="feature": mean squared distance between feature maps.
    mode="gram": mean squared distance between time-normalized channel Gram
    matrices, which discards temporal alignment.
    """
    if mode not in ("feature", "gram"):
        raise ValueError(f"unknown perceptual mode {mode!r}")
    fx = classifier.features(x_gen)
    fy = classifier.features(Tensor(np.asarray(y_ref, dtype=np.float64)))
    total = None
    for a, b in zip(fx, fy):
        bref = Tensor(b.data)
        if mode == "feature":
            d = a - bref
            term = ad.mean(d * d)
        else:
            t = a.data.shape[-1]
            ga = ad.scale(ad.matmul(a, ad.swap_last2(a)), 1.0 / t)
            gb = ad.scale(ad.matmul(bref, ad.swap_last2(bref)), 1.0 / t)
            d = ga - gb
            term = ad.mean(d * d)
        total = term if total is None else total + term
    return total


# ---------------------------------------------------------------------------
# KL family

def _teacher_conditionals(teacher, x_clamped: Tensor, c: np.ndarray):
    """One teacher pass over the student sample; parameters reshaped for
    broadcasting against [B, 1, M, T] inner samples."""
    params = teacher.output_params(x_clamped, c)
    k = teacher.num_mixtures
    logit_pi, mu, log_s = dist.split_mixture_params(params, k)
    b, _, t = logit_pi.data.shape
    shape = (b, k, 1, t)
    return (ad.reshape(logit_pi, shape), ad.reshape(mu, shape),
            ad.reshape(log_s, shape))


def _inner_samples(out: StudentOutput, eps: np.ndarray) -> Tensor:
    """Reparameterized draws x = mu_tot + s_tot * eps.

    Never clamped: the teacher's continuous log-density is finite everywhere
    and its tail decay is what penalizes the student for inflating scales.
    Clamping here would bound the cross-entropy and let the entropy term grow
    without limit."""
    b, t = out.mu_tot.data.shape
    mu = ad.reshape(out.mu_tot, (b, 1, t))
    s = ad.reshape(ad.exp(out.log_s_tot), (b, 1, t))
    return mu + s * Tensor(eps)


def _ce_from_conditionals(x_in: Tensor, cond_params) -> Tensor:
    """Batch-mean over sequences of sum_t -(1/M) sum_m log p_T(x_t^m | .)."""
    logit_pi, mu, log_s = cond_params
    b, m, t = x_in.data.shape
    x_r = ad.reshape(x_in, (b, 1, m, t))
    lp = dist.mixture_logpdf(x_r, logit_pi, mu, log_s, axis=1)   # [B, M, T]
    return ad.scale(ad.mean(ad.tensor_sum(ad.mean(lp, axis=1), axis=-1)), -1.0)


DEFAULT_DOMAIN = (dist.DOMAIN_LO, dist.DOMAIN_HI)


def cross_entropy_term(out: StudentOutput, teacher, c: np.ndarray, m: int,
                       gen: np.random.Generator, domain=DEFAULT_DOMAIN) -> Tensor:
    """Monte-Carlo estimate of H(P_S, P_T), total nats per sequence.

    domain clamps the sample prefix fed to the teacher (its input contract);
    pass None for teachers that accept unbounded inputs. Inner draws are
    scored where they land."""
    b, t = out.mu_tot.data.shape
    u = open_uniform(gen, (b, m, t))
    eps = np.log(u) - np.log1p(-u)
    x_c = out.x if domain is None else ad.clamp(out.x, domain[0], domain[1])
    cond = _teacher_conditionals(teacher, x_c, c)
    return _ce_from_conditionals(_inner_samples(out, eps), cond)


def kl_loss(out: StudentOutput, teacher, c: np.ndarray, m: int,
            gen: np.random.Generator, domain=DEFAULT_DOMAIN):
    """(kl, ce, h) as total nats per sequence; kl == ce - h by construction."""
    h = student_entropy_term(out.log_s_tot)
    ce = cross_entropy_term(out, teacher, c, m, gen, domain)
    return ce - h, ce, h


def contrastive_loss(out: StudentOutput, teacher, c1: np.ndarray, c2: np.ndarray,
                     gamma: float, m: int, gen: np.random.Generator):
    """KL under matched conditioning minus gamma times KL under mismatched.

    The same student sample and the same inner draws are scored under the
    teacher twice, once per conditioning. Returns (contrastive, ce1, h).
    """
    if np.array_equal(c1, c2):
        raise ValueError("contrastive conditioning vectors must differ")
    b, t = out.mu_tot.data.shape
    u = open_uniform(gen, (b, m, t))
    eps = np.log(u) - np.log1p(-u)
    x_c = ad.clamp(out.x, dist.DOMAIN_LO, dist.DOMAIN_HI)
    x_in = _inner_samples(out, eps)
    ce1 = _ce_from_conditionals(x_in, _teacher_conditionals(teacher, x_c, c1))
    ce2 = _ce_from_conditionals(x_in, _teacher_conditionals(teacher, x_c, c2))
    h = student_entropy_term(out.log_s_tot)
    contr = (ce1 - h) - ad.scale(ce2 - h, gamma)
    return contr, ce1, h


def distill_losses(student, teacher, z: np.ndarray, c: np.ndarray,
                   y_ref: np.ndarray, cfg: DistillConfig,
                   gen_inner: np.random.Generator, classifier=None,
                   spec: SpectrogramSpec = None):
    """Assemble the distillation objective for one batch.

    Returns (total: Tensor, LossBreakdown). Breakdown values are per
    timestep; the Tensor keeps full sequence scale for backward.
    """
    if spec is None:
        spec = SpectrogramSpec()
    out = student.forward(z, c)
    b, t = out.mu_tot.data.shape

    if cfg.use_contrastive:
        c2 = np.roll(c, 1, axis=0)
        contr, ce, h = contrastive_loss(out, teacher, c, c2, cfg.gamma,
                                        cfg.inner_samples, gen_inner)
        kl = ce - h
        base = contr
        contr_val = contr.item() / t
    else:
        kl, ce, h = kl_loss(out, teacher, c, cfg.inner_samples, gen_inner)
        base = kl
        contr_val = 0.0

    # optimize at per-timestep scale so lambda = 1 weights are natural
    total = ad.scale(base, 1.0 / t)
    power_val = 0.0
    perc_val = 0.0
    if cfg.lambda_power > 0 or cfg.lambda_perceptual > 0:
        x_c = ad.clamp(out.x, dist.DOMAIN_LO, dist.DOMAIN_HI)
        if cfg.lambda_power > 0:
            p = power_loss(x_c, y_ref, spec)
            total = total + ad.scale(p, cfg.lambda_power)
            power_val = p.item()
        if cfg.lambda_perceptual > 0:
            if classifier is None:
                raise ValueError("perceptual loss enabled but no classifier given")
            pl = perceptual_loss(x_c, y_ref, classifier, cfg.perceptual_mode)
            total = total + ad.scale(pl, cfg.lambda_perceptual)
            perc_val = pl.item()

    breakdown = LossBreakdown(
        kl=kl.item() / t, cross_entropy=ce.item() / t, entropy=h.item() / t,
        power=power_val, perceptual=perc_val, contrastive=contr_val,
        total=total.item())
    return total, breakdown
