"""Shared test utilities: finite-difference oracles and 64-bit model casting."""

from __future__ import annotations

import numpy as np

from mdasr import numerics as nx
from mdasr.denoiser import AsrModel


def finite_diff_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of one array."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        step = h * max(1.0, abs(orig))
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * step)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Max elementwise relative error with a combined-magnitude denominator."""
    denom = np.abs(a) + np.abs(b)
    denom[denom < 1e-8] = 1e-8
    return float(np.max(np.abs(a - b) / denom))


def analytic_grad(build_loss, params: list[nx.Tensor]) -> list[np.ndarray]:
    """Run the tape once and return gradient copies for the given leaves."""
    for p in params:
        p.grad = None
    loss = build_loss()
    nx.backward(loss)
    return [p.grad.copy() for p in params]


def check_grad(build_loss, param: nx.Tensor, h: float = 1e-5) -> float:
    """Compare tape gradient vs central differences for one leaf tensor."""
    (an,) = analytic_grad(build_loss, [param])

    def f(_):
        return float(build_loss().data)

    fd = finite_diff_grad(f, param.data, h=h)
    return rel_err(an.astype(np.float64), fd)


def cast_model_f64(model: AsrModel) -> None:
    """Promote all parameters (and moment buffers) to float64 in place."""
    for name, t in model.store.params.items():
        t.data = t.data.astype(np.float64)
        model.store.m[name] = model.store.m[name].astype(np.float64)
        model.store.v[name] = model.store.v[name].astype(np.float64)


def check_grad_elements(build_loss, store, picks, h: float = 1e-5) -> float:
    """FD check on sampled scalar parameter entries: picks = [(name, flat_idx)].

    Returns the worst relative error across the sampled entries."""
    store.zero_grad()
    loss = build_loss()
    nx.backward(loss)
    worst = 0.0
    for name, idx in picks:
        p = store[name]
        flat = p.data.reshape(-1)
        orig = flat[idx]
        step = h * max(1.0, abs(orig))
        flat[idx] = orig + step
        fp = float(build_loss().data)
        flat[idx] = orig - step
        fm = float(build_loss().data)
        flat[idx] = orig
        fd = (fp - fm) / (2 * step)
        an = float(p.grad.reshape(-1)[idx])
        denom = max(abs(fd) + abs(an), 1e-8)
        worst = max(worst, abs(fd - an) / denom)
    return worst
