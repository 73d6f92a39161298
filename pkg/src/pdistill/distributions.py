"""Logistic and mixture-of-logistics distributions.

Tape-aware functions take and return autodiff Tensors so losses can be
differentiated; the *_np companions are plain-numpy paths used by samplers.

Mixture parameters travel as a single array of 3K channels laid out as
[mixture logits (K), means (K), log-scales (K)] along the channel axis.
Log-scales are clamped to [LOG_S_MIN, LOG_S_MAX] at the split point, so
every downstream consumer sees bounded scales.
"""

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

QUANT_LEVELS = 256
DOMAIN_LO, DOMAIN_HI = -1.0, 1.0
BIN_WIDTH = (DOMAIN_HI - DOMAIN_LO) / (QUANT_LEVELS - 1)
LOG_S_MIN, LOG_S_MAX = -7.0, 7.0

# entropy of Logistic(mu, s) is ln s + 2 nats
LOGISTIC_ENTROPY_CONST = 2.0


class DiscretizationSpec:
    """Uniform bins over a closed domain; 2^bit_depth centers, edge bins open."""

    def __init__(self, bit_depth: int = 8, domain=(DOMAIN_LO, DOMAIN_HI)):
        self.bit_depth = bit_depth
        self.lo, self.hi = domain
        self.levels = 2 ** bit_depth
        self.bin_width = (self.hi - self.lo) / (self.levels - 1)

    def centers(self) -> np.ndarray:
        return self.lo + np.arange(self.levels) * self.bin_width


DEFAULT_DISCRETIZATION = DiscretizationSpec()


def logistic_sample(mu, log_s, u):
    """Inverse-CDF draw mu + s*ln(u/(1-u)); differentiable in mu and log_s.

    u must lie strictly inside (0, 1); pass Tensors for mu/log_s to get a
    reparameterized (differentiable) sample.
    """
    u = np.asarray(u, dtype=np.float64)
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise ValueError("u must lie in the open interval (0, 1)")
    eps = np.log(u) - np.log1p(-u)
    if isinstance(mu, Tensor) or isinstance(log_s, Tensor):
        mu = mu if isinstance(mu, Tensor) else Tensor(mu)
        log_s = log_s if isinstance(log_s, Tensor) else Tensor(log_s)
        return mu + ad.exp(log_s) * Tensor(eps)
    return mu + np.exp(log_s) * eps


def split_mixture_params(params: Tensor, num_mixtures: int):
    """Split a [B, 3K, T] parameter tensor into (logit_pi, mu, log_s).

    log_s comes back clamped to the supported range.
    """
    k = num_mixtures
    if params.shape[1] != 3 * k:
        raise ValueError(f"expected {3 * k} parameter channels, got {params.shape[1]}")
    logit_pi = ad.narrow(params, 1, 0, k)
    mu = ad.narrow(params, 1, k, k)
    log_s = ad.clamp(ad.narrow(params, 1, 2 * k, k), LOG_S_MIN, LOG_S_MAX)
    return logit_pi, mu, log_s


def logistic_logpdf(x: Tensor, mu: Tensor, log_s: Tensor) -> Tensor:
    """Log-density of Logistic(mu, s) at x; shapes broadcast."""
    z = (x - mu) * ad.exp(ad.neg(log_s))
    return ad.neg(z) - log_s - ad.scale(ad.softplus(ad.neg(z)), 2.0)


def logistic_entropy(log_s: Tensor) -> Tensor:
    return log_s + LOGISTIC_ENTROPY_CONST


def mixture_logpdf(x: Tensor, logit_pi: Tensor, mu: Tensor, log_s: Tensor,
                   axis: int = 1) -> Tensor:
    """Log-density of the logistic mixture at x, reducing mixtures on `axis`."""
    log_pi = logit_pi - ad.logsumexp(logit_pi, axis=axis, keepdims=True)
    return ad.logsumexp(log_pi + logistic_logpdf(x, mu, log_s), axis=axis)


def quantize(x: np.ndarray) -> np.ndarray:
    """Map [-1, 1] floats to level indices 0..255 (nearest bin center)."""
    if np.any(np.abs(x) > 1.0 + 1e-9):
        worst = float(np.max(np.abs(x)))
        raise ValueError(f"waveform outside [-1, 1]: max |x| = {worst}")
    idx = np.rint((x - DOMAIN_LO) / BIN_WIDTH)
    return np.clip(idx, 0, QUANT_LEVELS - 1).astype(np.int64)


def discretized_mixture_log_prob(x_centers: np.ndarray, params: Tensor,
                                 num_mixtures: int) -> Tensor:
    """Log bin-mass at exact bin centers x_centers [B, T]; off-grid x errors."""
    idx_f = (np.asarray(x_centers, dtype=np.float64) - DOMAIN_LO) / BIN_WIDTH
    idx = np.rint(idx_f)
    if np.any(np.abs(idx_f - idx) > 1e-6) or np.any(idx < 0) or np.any(idx >= QUANT_LEVELS):
        raise ValueError("x is not on the quantization grid")
    return _discretized_log_prob_from_idx(idx.astype(np.int64), params, num_mixtures)


def discretized_mixture_nll(x: np.ndarray, params: Tensor, num_mixtures: int) -> Tensor:
    """Mean per-timestep negative log bin-mass of quantized x under the mixture.

    x: [B, T] floats in [-1, 1] (quantized internally to 256 levels).
    params: [B, 3K, T]. Bin i covers center +- BIN_WIDTH/2; the edge bins
    extend to -inf / +inf so the 256 masses sum to one.
    """
    log_prob = _discretized_log_prob_from_idx(quantize(x), params, num_mixtures)
    return ad.neg(ad.mean(log_prob))


def _discretized_log_prob_from_idx(idx: np.ndarray, params: Tensor,
                                   num_mixtures: int) -> Tensor:
    centers = DOMAIN_LO + idx * BIN_WIDTH
    lo_edge = centers - 0.5 * BIN_WIDTH
    hi_edge = centers + 0.5 * BIN_WIDTH

    logit_pi, mu, log_s = split_mixture_params(params, num_mixtures)
    inv_s = ad.exp(ad.neg(log_s))
    a = (Tensor(lo_edge[:, None, :]) - mu) * inv_s
    b = (Tensor(hi_edge[:, None, :]) - mu) * inv_s
    # bin width in standardised units, computed directly so it is exactly > 0
    d = ad.scale(inv_s, BIN_WIDTH)

    # log(sigmoid(b) - sigmoid(a)) = -a + log(1 - e^{-d}) - softplus(-a) - softplus(-b)
    log_mid = ad.neg(a) + ad.log1mexp(d) - ad.softplus(ad.neg(a)) - ad.softplus(ad.neg(b))
    log_low = ad.neg(ad.softplus(ad.neg(b)))   # mass below hi_edge
    log_high = ad.neg(ad.softplus(a))          # mass above lo_edge

    m_low = (idx == 0)[:, None, :].astype(np.float64)
    m_high = (idx == QUANT_LEVELS - 1)[:, None, :].astype(np.float64)
    m_mid = 1.0 - m_low - m_high
    log_mass = (log_mid * Tensor(m_mid) + log_low * Tensor(m_low)
                + log_high * Tensor(m_high))

    log_pi = logit_pi - ad.logsumexp(logit_pi, axis=1, keepdims=True)
    return ad.logsumexp(log_pi + log_mass, axis=1)


def discretized_mixture_bin_logprobs(params_np: np.ndarray, num_mixtures: int) -> np.ndarray:
    """Log-mass of every quantization bin, shape [..., 256].

    Numpy-only helper for checks and sampling diagnostics. params_np has 3K
    channels on the last axis.
    """
    k = num_mixtures
    logit_pi = params_np[..., :k]
    mu = params_np[..., k:2 * k]
    log_s = np.clip(params_np[..., 2 * k:3 * k], LOG_S_MIN, LOG_S_MAX)
    centers = DOMAIN_LO + np.arange(QUANT_LEVELS) * BIN_WIDTH
    inv_s = np.exp(-log_s)
    # [..., K, 256]
    a = (centers[None, :] - 0.5 * BIN_WIDTH - mu[..., None]) * inv_s[..., None]
    b = (centers[None, :] + 0.5 * BIN_WIDTH - mu[..., None]) * inv_s[..., None]
    d = BIN_WIDTH * np.broadcast_to(inv_s[..., None], a.shape)
    log_mid = -a + np.log(-np.expm1(-d)) - _softplus_np(-a) - _softplus_np(-b)
    log_mass = log_mid
    log_mass[..., 0] = -_softplus_np(-b[..., 0])
    log_mass[..., -1] = -_softplus_np(a[..., -1])
    log_pi = logit_pi - _logsumexp_np(logit_pi, axis=-1, keepdims=True)
    return _logsumexp_np(log_pi[..., None] + log_mass, axis=-2)


def _softplus_np(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _logsumexp_np(x, axis, keepdims=False):
    m = np.max(x, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
    return out if keepdims else np.squeeze(out, axis=axis)


def _softmax_np(x, axis):
    e = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def mixture_sample_np(params_np: np.ndarray, num_mixtures: int,
                      gen: np.random.Generator, clamp_domain: bool = True) -> np.ndarray:
    """Draw one value per row from the mixture; params_np is [B, 3K].

    Consumes exactly two uniforms per row in a fixed order (component pick,
    then the logistic draw), so callers that must agree on a random stream
    can rely on the draw count. With clamp_domain the result is clipped to
    the discretization domain.
    """
    from .rng import categorical, open_uniform

    k = num_mixtures
    logit_pi = params_np[:, :k]
    mu = params_np[:, k:2 * k]
    log_s = params_np[:, 2 * k:3 * k]
    comp = categorical(gen, _softmax_np(logit_pi, axis=1))
    rows = np.arange(params_np.shape[0])
    u = open_uniform(gen, params_np.shape[0])
    x = mu[rows, comp] + np.exp(log_s[rows, comp]) * (np.log(u) - np.log1p(-u))
    return np.clip(x, DOMAIN_LO, DOMAIN_HI) if clamp_domain else x
