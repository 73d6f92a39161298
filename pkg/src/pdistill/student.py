"""Parallel student: a stack of affine flows over logistic noise.

Each flow reads the running signal through a shift-right plus causal conv
stack, so its scale and shift at time t depend only on earlier positions.
Applying the flows in sequence keeps every output conditional a single
logistic whose parameters compose as

    mu_tot <- mu_tot * s_i + mu_i,   s_tot <- s_tot * s_i.

All timesteps are computed at once; nothing is sequential in T.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .distributions import LOG_S_MAX, LOG_S_MIN
from .rng import open_uniform


@dataclass
class StudentConfig:
    flow_layers: tuple = (4, 4, 4, 8)
    filter_size: int = 3
    hidden_channels: int = 32
    cond_channels: int = 8

    def to_dict(self) -> dict:
        return {"flow_layers": list(self.flow_layers), "filter_size": self.filter_size,
                "hidden_channels": self.hidden_channels, "cond_channels": self.cond_channels}


@dataclass
class StudentOutput:
    """Everything one parallel pass produces."""

    x: Tensor                 # generated waveform [B, T]
    mu_tot: Tensor            # output logistic location [B, T]
    log_s_tot: Tensor         # output logistic log-scale [B, T]
    per_flow: list = field(default_factory=list)  # [(mu_i, log_s_i), ...]


class FlowError(RuntimeError):
    """A flow produced non-finite scale/shift values."""


def draw_latent(b: int, t: int, gen: np.random.Generator) -> np.ndarray:
    """i.i.d. standard logistic noise via inverse CDF on open-interval uniforms."""
    u = open_uniform(gen, (b, t))
    return np.log(u) - np.log1p(-u)


def student_entropy_term(log_s_tot: Tensor) -> Tensor:
    """Batch-mean total entropy of the output distribution: sum_t ln s + 2T."""
    t = log_s_tot.shape[-1]
    return ad.mean(ad.tensor_sum(log_s_tot, axis=-1)) + 2.0 * t


def compose_affine(stages):
    """Fold per-flow (mu, s) pairs into the equivalent single affine.

    stages: iterable of (mu, s), earliest flow first. Works on floats,
    arrays, or Tensors. Folding (1, 2) then (3, 4) gives (7, 8).
    """
    mu_tot, s_tot = None, None
    for mu_i, s_i in stages:
        if mu_tot is None:
            mu_tot, s_tot = mu_i, s_i
        else:
            mu_tot = mu_tot * s_i + mu_i
            s_tot = s_tot * s_i
    return mu_tot, s_tot


class FlowStudent:
    def __init__(self, cfg: StudentConfig, gen: np.random.Generator):
        self.cfg = cfg
        self.params: dict[str, Parameter] = {}
        c = cfg
        g2 = 2 * c.hidden_channels

        def add(name, shape, scale):
            self.params[name] = Parameter(
                gen.normal(0.0, scale, size=shape) if scale > 0 else np.zeros(shape), name)

        for fi, n_layers in enumerate(cfg.flow_layers):
            f = f"flow{fi}."
            add(f + "in.w", (c.hidden_channels, 1, 1), 1.0)
            add(f + "in.b", (c.hidden_channels, 1), 0.0)
            for li in range(n_layers):
                p = f + f"layer{li}."
                add(p + "conv.w", (g2, c.hidden_channels, c.filter_size),
                    1.0 / np.sqrt(c.hidden_channels * c.filter_size))
                add(p + "conv.b", (g2, 1), 0.0)
                add(p + "cond.w", (g2, c.cond_channels, 1), 1.0 / np.sqrt(c.cond_channels))
                add(p + "res.w", (c.hidden_channels, c.hidden_channels, 1),
                    1.0 / np.sqrt(c.hidden_channels))
                add(p + "res.b", (c.hidden_channels, 1), 0.0)
            # zero head: the flow starts as the identity transform
            add(f + "head1.w", (c.hidden_channels, c.hidden_channels, 1),
                1.0 / np.sqrt(c.hidden_channels))
            add(f + "head1.b", (c.hidden_channels, 1), 0.0)
            add(f + "head2.w", (2, c.hidden_channels, 1), 0.0)
            add(f + "head2.b", (2, 1), 0.0)

    def set_trainable(self, flag: bool) -> None:
        for p in self.params.values():
            p.requires_grad = flag

    def _flow_params(self, fi: int, n_layers: int, z: Tensor, ct: Tensor):
        """Scale/shift for one flow; both depend only on strictly-past z."""
        P = self.params
        cfg = self.cfg
        b, t = z.data.shape
        f = f"flow{fi}."
        h = ad.shift_right(ad.reshape(z, (b, 1, t)))
        h = ad.causal_dilated_conv1d(h, P[f + "in.w"], 1) + P[f + "in.b"]
        for li in range(n_layers):
            p = f + f"layer{li}."
            d = 2 ** li
            pre = ad.causal_dilated_conv1d(h, P[p + "conv.w"], d) + P[p + "conv.b"]
            pre = pre + ad.causal_dilated_conv1d(ct, P[p + "cond.w"], 1)
            filt = ad.narrow(pre, 1, 0, cfg.hidden_channels)
            gate = ad.narrow(pre, 1, cfg.hidden_channels, cfg.hidden_channels)
            act = ad.tanh(filt) * ad.sigmoid(gate)
            h = h + ad.causal_dilated_conv1d(act, P[p + "res.w"], 1) + P[p + "res.b"]
        out = ad.relu(ad.causal_dilated_conv1d(ad.relu(h), P[f + "head1.w"], 1)
                      + P[f + "head1.b"])
        out = ad.causal_dilated_conv1d(out, P[f + "head2.w"], 1) + P[f + "head2.b"]
        if not np.all(np.isfinite(out.data)):
            raise FlowError(f"flow {fi} produced non-finite scale/shift values")
        mu = ad.reshape(ad.narrow(out, 1, 0, 1), (b, t))
        log_s = ad.clamp(ad.reshape(ad.narrow(out, 1, 1, 1), (b, t)), LOG_S_MIN, LOG_S_MAX)
        return mu, log_s

    def flow_apply(self, fi: int, x_prev, c):
        """Apply one flow: returns (x_i, mu_i, log_s_i), all [B, T]."""
        xt = x_prev if isinstance(x_prev, Tensor) else Tensor(x_prev)
        ct = c if isinstance(c, Tensor) else Tensor(c)
        mu_i, log_s_i = self._flow_params(fi, self.cfg.flow_layers[fi], xt, ct)
        x_i = xt * ad.exp(log_s_i) + mu_i
        return x_i, mu_i, log_s_i

    def sample_fast(self, z: np.ndarray, c: np.ndarray) -> np.ndarray:
        """Inference-only pass: the waveform `forward` would produce, without
        gradient bookkeeping.

        Same math in the same order, but raw numpy with reused scratch
        buffers and per-tap GEMMs on strided views, so nothing allocates or
        copies per layer. Matches `forward(z, c).x.data` to float noise.
        """
        z = np.asarray(z, dtype=np.float64)
        c = np.asarray(c, dtype=np.float64)
        b, t = z.shape
        if c.shape != (b, self.cfg.cond_channels, t):
            raise ValueError(f"conditioning shape {c.shape}, expected "
                             f"{(b, self.cfg.cond_channels, t)}")
        # contiguous weight matrices; tap slices of conv.w are strided views
        # that would knock matmul off the BLAS path
        P = {}
        for k, v in self.params.items():
            if k.endswith("conv.w"):
                for tap in range(v.data.shape[2]):
                    P[f"{k}{tap}"] = np.ascontiguousarray(v.data[:, :, tap])
            elif v.data.ndim == 3:
                P[k] = np.ascontiguousarray(v.data[:, :, 0])
            else:
                P[k] = v.data
        ch = self.cfg.hidden_channels
        g2 = 2 * ch
        pad = max(2 ** n for n in self.cfg.flow_layers)
        s = self._scratch if getattr(self, "_scratch", None) else {}
        if s.get("t") != t:
            s = {"t": t,
                 "hp": np.zeros((ch, pad + t)),
                 "xs": np.empty((1, t)),
                 "pre": np.empty((g2, t)),
                 "tmp": np.empty((g2, t)),
                 "cnd": np.empty((g2, t)),
                 "res": np.empty((ch, t)),
                 "head": np.empty((ch, t)),
                 "out2": np.empty((2, t))}
            self._scratch = s
        hp, xs, pre, tmp, cnd = s["hp"], s["xs"], s["pre"], s["tmp"], s["cnd"]
        res, head, out2 = s["res"], s["head"], s["out2"]
        h = hp[:, pad:]

        x = np.empty_like(z)
        for bi in range(b):
            xr = np.array(z[bi])
            cr = c[bi]
            for fi, n_layers in enumerate(self.cfg.flow_layers):
                f = f"flow{fi}."
                xs[0, 0] = 0.0
                xs[0, 1:] = xr[:-1]
                np.multiply(P[f + "in.w"], xs, out=h)
                h += P[f + "in.b"]
                for li in range(n_layers):
                    p = f + f"layer{li}."
                    d = 2 ** li
                    np.matmul(P[p + "cond.w"], cr, out=cnd)
                    cnd += P[p + "conv.b"]
                    np.matmul(P[p + "conv.w2"], h, out=pre)
                    np.matmul(P[p + "conv.w1"], hp[:, pad - d:pad - d + t], out=tmp)
                    pre += tmp
                    np.matmul(P[p + "conv.w0"], hp[:, pad - 2 * d:pad - 2 * d + t], out=tmp)
                    pre += tmp
                    pre += cnd
                    filt, gate = pre[:ch], pre[ch:]
                    np.tanh(filt, out=filt)
                    gate *= 0.5
                    np.tanh(gate, out=gate)
                    gate += 1.0
                    gate *= 0.5
                    filt *= gate
                    np.matmul(P[p + "res.w"], filt, out=res)
                    h += res
                    h += P[p + "res.b"]
                np.maximum(h, 0.0, out=head)
                np.matmul(P[f + "head1.w"], head, out=res)
                res += P[f + "head1.b"]
                np.maximum(res, 0.0, out=res)
                np.matmul(P[f + "head2.w"], res, out=out2)
                out2 += P[f + "head2.b"]
                if not np.all(np.isfinite(out2)):
                    raise FlowError(f"flow {fi} produced non-finite scale/shift values")
                log_s = np.clip(out2[1], LOG_S_MIN, LOG_S_MAX)
                xr *= np.exp(log_s)
                xr += out2[0]
            x[bi] = xr
        return x

    def forward(self, z, c) -> StudentOutput:
        """Transform base noise z [B, T] through every flow in one pass.

        Returns the sample x plus the composed per-timestep output logistic
        (mu_tot, log_s_tot); nothing here loops over time. c is [B, Cc, T]
        conditioning shared by all flows.
        """
        zt = z if isinstance(z, Tensor) else Tensor(z)
        ct = c if isinstance(c, Tensor) else Tensor(c)
        b, t = zt.data.shape
        if ct.data.shape != (b, self.cfg.cond_channels, t):
            raise ValueError(f"conditioning shape {ct.data.shape}, expected "
                             f"{(b, self.cfg.cond_channels, t)}")
        mu_tot = None
        log_s_tot = None
        per_flow = []
        cur = zt
        for fi, n_layers in enumerate(self.cfg.flow_layers):
            mu_i, log_s_i = self._flow_params(fi, n_layers, cur, ct)
            per_flow.append((mu_i, log_s_i))
            s_i = ad.exp(log_s_i)
            cur = cur * s_i + mu_i
            if mu_tot is None:
                mu_tot, log_s_tot = mu_i, log_s_i
            else:
                mu_tot = mu_tot * s_i + mu_i
                log_s_tot = log_s_tot + log_s_i
        return StudentOutput(x=cur, mu_tot=mu_tot, log_s_tot=log_s_tot, per_flow=per_flow)
