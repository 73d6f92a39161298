"""Autoregressive teacher: dilated causal convolutions with gated units.

The network maps a waveform plus per-sample conditioning to mixture-of-
logistics parameters for every timestep. The input is shifted one step
right before the first projection, so the parameters at time t depend only
on x[<t] and conditioning.

Two samplers are provided: `sample_naive` recomputes the whole stack per
timestep (quadratic, used as an oracle) and `sample_cached` keeps per-layer
ring buffers of past activations (linear). Both consume the random stream
identically, so their outputs must match bit-for-bit up to float noise.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import distributions as dist
from .autodiff import Parameter, Tensor
from .rng import open_uniform


@dataclass
class TeacherConfig:
    num_stacks: int = 2
    layers_per_stack: int = 5
    filter_size: int = 3
    residual_channels: int = 32
    gate_channels: int = 32
    skip_channels: int = 32
    num_mixtures: int = 10
    cond_channels: int = 8

    @property
    def dilations(self) -> list:
        return [2 ** i for _ in range(self.num_stacks) for i in range(self.layers_per_stack)]

    @property
    def receptive_field(self) -> int:
        """Number of input positions a single output can see (current one included)."""
        per_stack = (self.filter_size - 1) * (2 ** self.layers_per_stack - 1)
        return 1 + self.num_stacks * per_stack

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "num_stacks", "layers_per_stack", "filter_size", "residual_channels",
            "gate_channels", "skip_channels", "num_mixtures", "cond_channels")}


def init_params(prefix: str, shapes: dict, gen: np.random.Generator,
                scales: dict) -> dict:
    params = {}
    for name, shape in shapes.items():
        s = scales.get(name, 0.0)
        data = gen.normal(0.0, s, size=shape) if s > 0 else np.zeros(shape)
        params[f"{prefix}{name}"] = Parameter(data, f"{prefix}{name}")
    return params


class WavenetTeacher:
    def __init__(self, cfg: TeacherConfig, gen: np.random.Generator):
        self.cfg = cfg
        self.params: dict[str, Parameter] = {}
        c = cfg
        g2 = 2 * c.gate_channels

        def add(name, shape, scale):
            self.params[name] = Parameter(
                gen.normal(0.0, scale, size=shape) if scale > 0 else np.zeros(shape), name)

        add("in.w", (c.residual_channels, 1, 1), 1.0)
        add("in.b", (c.residual_channels, 1), 0.0)
        for i, d in enumerate(c.dilations):
            p = f"layer{i}."
            add(p + "conv.w", (g2, c.residual_channels, c.filter_size),
                1.0 / np.sqrt(c.residual_channels * c.filter_size))
            add(p + "conv.b", (g2, 1), 0.0)
            add(p + "cond.w", (g2, c.cond_channels, 1), 1.0 / np.sqrt(c.cond_channels))
            add(p + "res.w", (c.residual_channels, c.gate_channels, 1),
                1.0 / np.sqrt(c.gate_channels))
            add(p + "res.b", (c.residual_channels, 1), 0.0)
            add(p + "skip.w", (c.skip_channels, c.gate_channels, 1),
                1.0 / np.sqrt(c.gate_channels))
            add(p + "skip.b", (c.skip_channels, 1), 0.0)
        add("head1.w", (c.skip_channels, c.skip_channels, 1), 1.0 / np.sqrt(c.skip_channels))
        add("head1.b", (c.skip_channels, 1), 0.0)
        add("head2.w", (3 * c.num_mixtures, c.skip_channels, 1), 0.01)
        add("head2.b", (3 * c.num_mixtures, 1), 0.0)

    @property
    def num_mixtures(self) -> int:
        return self.cfg.num_mixtures

    @property
    def receptive_field(self) -> int:
        return self.cfg.receptive_field

    def set_trainable(self, flag: bool) -> None:
        for p in self.params.values():
            p.requires_grad = flag

    def _validate(self, x_data: np.ndarray, c_data: np.ndarray) -> None:
        if x_data.ndim != 2:
            raise ValueError(f"waveform must be [B, T], got shape {x_data.shape}")
        if np.any(np.abs(x_data) > 1.0 + 1e-9):
            raise ValueError(f"waveform outside [-1, 1]: max |x| = {np.max(np.abs(x_data))}")
        b, t = x_data.shape
        want = (b, self.cfg.cond_channels, t)
        if c_data.shape != want:
            raise ValueError(f"conditioning shape {c_data.shape}, expected {want}")

    def output_params(self, x, c) -> Tensor:
        """Mixture parameters [B, 3K, T] for each timestep.

        x: [B, T] waveform in [-1, 1] (Tensor or array); c: [B, Cc, T]
        per-sample conditioning. Parameters at t never depend on x[t:].
        """
        xt = x if isinstance(x, Tensor) else Tensor(x)
        ct = c if isinstance(c, Tensor) else Tensor(c)
        self._validate(xt.data, ct.data)
        P = self.params
        cfg = self.cfg
        b, t = xt.data.shape

        h = ad.shift_right(ad.reshape(xt, (b, 1, t)))
        h = ad.causal_dilated_conv1d(h, P["in.w"], 1) + P["in.b"]
        skip_sum = None
        for i, d in enumerate(cfg.dilations):
            p = f"layer{i}."
            pre = ad.causal_dilated_conv1d(h, P[p + "conv.w"], d) + P[p + "conv.b"]
            pre = pre + ad.causal_dilated_conv1d(ct, P[p + "cond.w"], 1)
            filt = ad.narrow(pre, 1, 0, cfg.gate_channels)
            gate = ad.narrow(pre, 1, cfg.gate_channels, cfg.gate_channels)
            act = ad.tanh(filt) * ad.sigmoid(gate)
            h = h + ad.causal_dilated_conv1d(act, P[p + "res.w"], 1) + P[p + "res.b"]
            s = ad.causal_dilated_conv1d(act, P[p + "skip.w"], 1) + P[p + "skip.b"]
            skip_sum = s if skip_sum is None else skip_sum + s
        out = ad.relu(skip_sum)
        out = ad.relu(ad.causal_dilated_conv1d(out, P["head1.w"], 1) + P["head1.b"])
        return ad.causal_dilated_conv1d(out, P["head2.w"], 1) + P["head2.b"]

    def nll(self, x: np.ndarray, c: np.ndarray) -> Tensor:
        """Mean per-timestep discretized NLL (nats) of x given conditioning."""
        params = self.output_params(x, c)
        return dist.discretized_mixture_nll(np.asarray(x, dtype=np.float64),
                                            params, self.cfg.num_mixtures)

    # ------------------------------------------------------------------
    # sampling

    def sample_naive(self, c: np.ndarray, gen: np.random.Generator) -> np.ndarray:
        """Ancestral sampling by full recomputation per step. Oracle only."""
        b, _, t = c.shape
        x = np.zeros((b, t))
        for step in range(t):
            params = self.output_params(x[:, :step + 1], c[:, :, :step + 1])
            x[:, step] = dist.mixture_sample_np(params.data[:, :, step],
                                                self.cfg.num_mixtures, gen)
        return x

    def sample_cached(self, c: np.ndarray, gen: np.random.Generator) -> np.ndarray:
        """Ancestral sampling with per-layer ring buffers, linear in T."""
        cfg = self.cfg
        P = {k: v.data for k, v in self.params.items()}
        b, _, t = c.shape
        n_layers = len(cfg.dilations)

        # conditioning contributions for every layer, computed up front
        cond = [np.matmul(P[f"layer{i}.cond.w"][:, :, 0], c) for i in range(n_layers)]

        # fold the three filter taps into one matrix per layer: input is
        # [older, middle, current] stacked along channels
        wcat = []
        for i in range(n_layers):
            w = P[f"layer{i}.conv.w"]
            wcat.append(np.concatenate([w[:, :, 0], w[:, :, 1], w[:, :, 2]], axis=1).T)

        in_w = P["in.w"][:, 0, 0]
        in_b = P["in.b"][:, 0]
        res_w = [P[f"layer{i}.res.w"][:, :, 0].T for i in range(n_layers)]
        res_b = [P[f"layer{i}.res.b"][:, 0] for i in range(n_layers)]
        skip_w = [P[f"layer{i}.skip.w"][:, :, 0].T for i in range(n_layers)]
        skip_b = [P[f"layer{i}.skip.b"][:, 0] for i in range(n_layers)]
        conv_b = [P[f"layer{i}.conv.b"][:, 0] for i in range(n_layers)]
        h1_w = P["head1.w"][:, :, 0].T
        h1_b = P["head1.b"][:, 0]
        h2_w = P["head2.w"][:, :, 0].T
        h2_b = P["head2.b"][:, 0]

        dil = cfg.dilations
        # ring capacity (F-1)*d holds exactly the lookback window; the slot
        # for step t-2d is about to be overwritten by step t, so it is read
        # first
        caps = [(cfg.filter_size - 1) * d for d in dil]
        rings = [np.zeros((cap, b, cfg.residual_channels)) for cap in caps]
        gch = cfg.gate_channels

        x = np.zeros((b, t))
        prev = np.zeros(b)
        for step in range(t):
            h = prev[:, None] * in_w[None, :] + in_b[None, :]
            skip_sum = None
            for i in range(n_layers):
                d = dil[i]
                ring = rings[i]
                cap = caps[i]
                z0 = ring[step % cap].copy() if step >= 2 * d else np.zeros_like(h)
                z1 = ring[(step - d) % cap] if step >= d else np.zeros_like(h)
                ring[step % cap] = h
                stacked = np.concatenate([z0, z1, h], axis=1)
                pre = stacked @ wcat[i] + conv_b[i][None, :] + cond[i][:, :, step]
                act = np.tanh(pre[:, :gch]) * _sigmoid(pre[:, gch:])
                h = h + act @ res_w[i] + res_b[i][None, :]
                s = act @ skip_w[i] + skip_b[i][None, :]
                skip_sum = s if skip_sum is None else skip_sum + s
            out = np.maximum(skip_sum, 0.0) @ h1_w + h1_b[None, :]
            out = np.maximum(out, 0.0) @ h2_w + h2_b[None, :]
            prev = dist.mixture_sample_np(out, cfg.num_mixtures, gen)
            x[:, step] = prev
        return x


def _sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.tanh(v * 0.5)
    out += 1.0
    out *= 0.5
    return out
