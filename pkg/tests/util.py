"""Shared test helpers: finite-difference oracles and tiny fixtures."""

import numpy as np

from pdistill.autodiff import Parameter, Tape


def numeric_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function of one array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / denom)


def check_param_grads(build_loss, params: dict, tol: float = 1e-4,
                      eps: float = 1e-6, subset: int = None,
                      rng: np.random.Generator = None,
                      floor: float = 1e-8) -> float:
    """Compare tape gradients with finite differences for named parameters.

    build_loss() must rebuild the scalar loss Tensor from current param
    values. subset limits how many coordinates are probed per parameter.
    Returns the worst relative error seen. floor bounds the denominator
    so fd roundoff (~|loss|*ulp/eps) cannot dominate near-zero gradients.
    """
    with Tape() as tape:
        loss = build_loss()
    grads = tape.backward(loss)
    worst = 0.0
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)   # structurally unused: fd must agree
        flat = p.data.ravel()
        idxs = range(flat.size)
        if subset is not None and flat.size > subset:
            assert rng is not None
            idxs = rng.choice(flat.size, size=subset, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            hi = build_loss().item()
            flat[i] = orig - eps
            lo = build_loss().item()
            flat[i] = orig
            fd = (hi - lo) / (2.0 * eps)
            scale = max(abs(fd), abs(g.ravel()[i]), floor)
            err = abs(fd - g.ravel()[i]) / scale
            worst = max(worst, err)
            assert err < tol, (f"{name}[{i}]: tape {g.ravel()[i]:.8g} "
                               f"vs fd {fd:.8g} (rel {err:.2e})")
    return worst
