"""Toy frame-level phone classifier used by the perceptual loss.

A small stack of dilated causal convolutions with relu, pooled to frame
rate. The hidden activations double as the feature maps the perceptual
loss compares.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .optim import Adam
from .rng import Stream, make_generator


@dataclass
class ClassifierConfig:
    num_phones: int = 5
    channels: int = 32
    dilations: tuple = (1, 2, 4, 8, 16)
    filter_size: int = 3
    frame_rate_divisor: int = 32

    def to_dict(self) -> dict:
        return {"num_phones": self.num_phones, "channels": self.channels,
                "dilations": list(self.dilations), "filter_size": self.filter_size,
                "frame_rate_divisor": self.frame_rate_divisor}


class PhoneClassifier:
    def __init__(self, cfg: ClassifierConfig, gen: np.random.Generator):
        self.cfg = cfg
        self.params: dict[str, Parameter] = {}

        def add(name, shape, scale):
            self.params[name] = Parameter(
                gen.normal(0.0, scale, size=shape) if scale > 0 else np.zeros(shape), name)

        c_in = 1
        for i, _ in enumerate(cfg.dilations):
            add(f"layer{i}.w", (cfg.channels, c_in, cfg.filter_size),
                1.0 / np.sqrt(c_in * cfg.filter_size))
            add(f"layer{i}.b", (cfg.channels, 1), 0.0)
            c_in = cfg.channels
        add("head.w", (cfg.num_phones, cfg.channels, 1), 1.0 / np.sqrt(cfg.channels))
        add("head.b", (cfg.num_phones, 1), 0.0)

    def set_trainable(self, flag: bool) -> None:
        for p in self.params.values():
            p.requires_grad = flag

    def features(self, x) -> list:
        """Hidden feature maps [B, C, T], one per conv layer."""
        xt = x if isinstance(x, Tensor) else Tensor(x)
        b, t = xt.data.shape
        h = ad.reshape(xt, (b, 1, t))
        feats = []
        for i, d in enumerate(self.cfg.dilations):
            h = ad.relu(ad.causal_dilated_conv1d(h, self.params[f"layer{i}.w"], d)
                        + self.params[f"layer{i}.b"])
            feats.append(h)
        return feats

    def frame_logits(self, x) -> Tensor:
        """Per-frame phone logits [B, P, F] by mean-pooling within frames."""
        h = self.features(x)[-1]
        logits = ad.causal_dilated_conv1d(h, self.params["head.w"], 1) + self.params["head.b"]
        b, p, t = logits.data.shape
        r = self.cfg.frame_rate_divisor
        return ad.mean(ad.reshape(logits, (b, p, t // r, r)), axis=3)

    def loss(self, x, labels: np.ndarray) -> Tensor:
        """Mean framewise cross-entropy against integer labels [B, F]."""
        logits = self.frame_logits(x)
        b, p, f = logits.data.shape
        onehot = np.zeros((b, p, f))
        bi = np.repeat(np.arange(b), f)
        fi = np.tile(np.arange(f), b)
        onehot[bi, labels.reshape(-1), fi] = 1.0
        lse = ad.logsumexp(logits, axis=1)                     # [B, F]
        picked = ad.tensor_sum(logits * Tensor(onehot), axis=1)
        return ad.mean(lse - picked)

    def accuracy(self, x: np.ndarray, labels: np.ndarray) -> float:
        logits = self.frame_logits(x)
        pred = np.argmax(logits.data, axis=1)
        return float(np.mean(pred == labels))


class ClassifierTrainingError(RuntimeError):
    """Held-out accuracy too low for the perceptual loss to mean anything."""


def train_classifier(corpus, cfg: ClassifierConfig = None, seed: int = 0,
                     steps: int = 1500, batch_size: int = 8, lr: float = 1e-3,
                     holdout: int = None, min_accuracy: float = 0.70):
    """Train on the corpus, validate on held-out clips.

    Returns (classifier, held-out accuracy). Raises ClassifierTrainingError
    below min_accuracy.
    """
    if cfg is None:
        cfg = ClassifierConfig(num_phones=corpus.spec.num_phones,
                               frame_rate_divisor=corpus.spec.frame_rate_divisor)
    net = PhoneClassifier(cfg, make_generator(seed, Stream.CLASSIFIER_INIT))
    opt = Adam(net.params, lr)
    n = corpus.waveforms.shape[0]
    if holdout is None:
        holdout = min(32, max(1, n // 8))
    if n <= holdout:
        raise ValueError(f"corpus of {n} clips too small for holdout {holdout}")
    train_idx = np.arange(0, n - holdout)
    test_idx = np.arange(n - holdout, n)

    for step in range(steps):
        bgen = make_generator(seed, Stream.CLASSIFIER_INIT, sub=step + 1)
        idx = train_idx[bgen.integers(0, len(train_idx), batch_size)]
        x = corpus.waveforms[idx]
        labels = corpus.phone_frames[idx]
        opt.zero_grad()
        with ad.Tape() as tape:
            loss = net.loss(x, labels)
        tape.backward(loss)
        opt.step()

    acc = net.accuracy(corpus.waveforms[test_idx], corpus.phone_frames[test_idx])
    if acc < min_accuracy:
        raise ClassifierTrainingError(
            f"held-out frame accuracy {acc:.3f} below {min_accuracy:.2f}")
    net.set_trainable(False)
    return net, acc
