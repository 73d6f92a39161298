"""Two small studies of the training objective and of receptive fields.

The first trains identical flow students against a closed-form white-noise
teacher, once with the cross-entropy term alone and once with the full KL
objective, and shows that dropping the entropy term collapses the student
toward near-silence (the mode of the teacher density).

The second fits linear predictors to rescaled Fibonacci sequences and shows
that a receptive field of 2 over the sequence itself suffices, while a
feedforward map from the latent initial conditions needs its receptive
field to cover the whole sequence.
"""

import json
import math
import os

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .distill import kl_loss
from .metrics import MetricsWriter
from .optim import Adam
from .rng import Stream, make_generator
from .student import FlowStudent, StudentConfig, draw_latent

SIGMA_LOGISTIC = math.pi / math.sqrt(3.0)


class AnalyticLogisticTeacher:
    """Closed-form teacher: an independent unit logistic at every timestep.

    Its conditional parameters never depend on the prefix, so no training
    and no causal network are involved; the optimal student is the identity
    transform of its logistic base noise.
    """

    num_mixtures = 1

    def output_params(self, x, c) -> Tensor:
        data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
        b, t = data.shape
        return Tensor(np.zeros((b, 3, t)))

    def set_trainable(self, flag: bool) -> None:
        pass


def _train_map_student(objective: str, seed: int, steps: int, b: int, t: int,
                       m: int, lr: float, metrics_path: str):
    teacher = AnalyticLogisticTeacher()
    cfg = StudentConfig(flow_layers=(2, 2), filter_size=3, hidden_channels=16,
                        cond_channels=1)
    student = FlowStudent(cfg, make_generator(seed, Stream.STUDENT_INIT))
    opt = Adam(student.params, lr)
    c = np.zeros((b, 1, t))
    with MetricsWriter(metrics_path, ["step", "loss", "mean_ln_s"]) as mw:
        for step in range(steps):
            z = draw_latent(b, t, make_generator(seed, Stream.DISTILL_NOISE, sub=step))
            gen_inner = make_generator(seed, Stream.INNER_MC, sub=step)
            opt.zero_grad()
            with Tape() as tape:
                out = student.forward(z, c)
                kl, ce, _ = kl_loss(out, teacher, c, m, gen_inner, domain=None)
                loss = ad.scale(ce if objective == "ce" else kl, 1.0 / t)
                tape.backward(loss)
            opt.step()
            mw.write([step, loss.item(), float(out.log_s_tot.data.mean())])
    return student, cfg


def _eval_map_student(student, seed: int, t: int):
    b_eval = 64
    z = draw_latent(b_eval, t, make_generator(seed, Stream.DEMO, sub=0))
    out = student.forward(z, np.zeros((b_eval, 1, t)))
    x = out.x.data
    return {"mean_ln_s": float(out.log_s_tot.data.mean()),
            "sample_rms": float(np.sqrt(np.mean(x * x)))}


def run_demo_map(out_dir: str, seed: int = 0, steps: int = 2000, b: int = 8,
                 t: int = 128, m: int = 16, lr: float = 1e-2) -> dict:
    """Mode-collapse study: CE-only vs full-KL students, identical setup.

    Returns {"ce": {...}, "kl": {...}} with end-of-training mean(ln s_tot)
    and sample RMS for each; also writes per-run metrics CSVs and a JSON
    report under out_dir.
    """
    os.makedirs(out_dir, exist_ok=True)
    report = {"sigma_logistic": SIGMA_LOGISTIC, "steps": steps}
    for objective in ("ce", "kl"):
        path = os.path.join(out_dir, f"map_metrics_{objective}.csv")
        student, _ = _train_map_student(objective, seed, steps, b, t, m, lr, path)
        report[objective] = _eval_map_student(student, seed, t)
    with open(os.path.join(out_dir, "map_report.json"), "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    return report


# ---------------------------------------------------------------------------
# receptive-field study on Fibonacci-style sequences

def make_fib_sequences(n: int, t: int, gen: np.random.Generator):
    """Latents z and sequences x with x_k = x_{k-1} + x_{k-2}.

    z[:, 0:2] are the initial pair; the remaining latents are i.i.d.
    distractors a feedforward model must learn to ignore. All sequences are
    divided by one fixed constant (the unit-seed Fibonacci tail) so values
    stay O(1) at the end regardless of length.
    """
    z = gen.uniform(0.5, 1.5, size=(n, t))
    x = np.empty((n, t))
    x[:, 0] = z[:, 0]
    x[:, 1] = z[:, 1]
    for k in range(2, t):
        x[:, k] = x[:, k - 1] + x[:, k - 2]
    a, bb = 1.0, 1.0
    for _ in range(2, t):
        a, bb = bb, a + bb
    return z, x / bb


def _lstsq_fit_predict(feats_tr, y_tr, feats_te):
    coef, *_ = np.linalg.lstsq(feats_tr, y_tr, rcond=None)
    return feats_te @ coef


def run_demo_fib(out_dir: str, seed: int = 0, t: int = 64, n_train: int = 512,
                 n_test: int = 128, fields=(2, 8, 32, 64)) -> dict:
    """Fit (a) an autoregressive linear predictor with receptive field 2 over
    x and (b) per-position linear maps from latent windows of width r.

    Errors are per-position RMS normalized by that position's scale, so
    positions of wildly different magnitude weigh equally. Writes a
    per-position profile CSV and a JSON report; returns the report.
    """
    os.makedirs(out_dir, exist_ok=True)
    gen = make_generator(seed, Stream.DEMO, sub=1)
    z_tr, x_tr = make_fib_sequences(n_train, t, gen)
    z_te, x_te = make_fib_sequences(n_test, t, gen)
    scale = np.sqrt(np.mean(x_tr ** 2, axis=0))       # [t]

    # (a) one shared AR map over (x_{k-1}, x_{k-2}), teacher-forced
    feats_tr = np.stack([x_tr[:, 1:-1].ravel(), x_tr[:, :-2].ravel()], axis=1)
    feats_te = np.stack([x_te[:, 1:-1].ravel(), x_te[:, :-2].ravel()], axis=1)
    pred = _lstsq_fit_predict(feats_tr, x_tr[:, 2:].ravel(), feats_te)
    ar_err = (pred - x_te[:, 2:].ravel()).reshape(n_test, t - 2)
    ar_profile = np.sqrt(np.mean(ar_err ** 2, axis=0))
    ar_rel_profile = ar_profile / scale[2:]
    report = {
        "ar_heldout_max_abs": float(np.max(np.abs(ar_err))),
        "ar_nrmse": float(np.sqrt(np.mean(ar_rel_profile ** 2))),
        "ff_nrmse": {},
    }

    # (b) per-position maps from the latent window ending at the position
    profiles = {}
    for r in fields:
        rel = np.empty(t - 2)
        for k in range(2, t):
            lo = max(0, k - r + 1)
            f_tr = np.concatenate([z_tr[:, lo:k + 1], np.ones((n_train, 1))], axis=1)
            f_te = np.concatenate([z_te[:, lo:k + 1], np.ones((n_test, 1))], axis=1)
            pred_k = _lstsq_fit_predict(f_tr, x_tr[:, k], f_te)
            rel[k - 2] = np.sqrt(np.mean((pred_k - x_te[:, k]) ** 2)) / scale[k]
        profiles[r] = rel
        report["ff_nrmse"][str(r)] = float(np.sqrt(np.mean(rel ** 2)))

    with MetricsWriter(os.path.join(out_dir, "fib_profile.csv"),
                       ["model", "r", "position", "rel_rmse"]) as w:
        for i, v in enumerate(ar_rel_profile):
            w.write(["ar", 2, i + 2, float(v)])
        for r in fields:
            for i, v in enumerate(profiles[r]):
                w.write(["ff", r, i + 2, float(v)])
    with open(os.path.join(out_dir, "fib_report.json"), "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    return report
