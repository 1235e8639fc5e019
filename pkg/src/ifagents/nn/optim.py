"""Adam, gradient clipping and the finite-difference gradient oracle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict, **kw) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, **kw)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """Bias-corrected Adam update. Returns fresh ``(params, state)``; inputs are
    left untouched."""
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * g * g
        new_m[k], new_v[k] = m, v
        new_p[k] = p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps) if lr else p.copy()
    return new_p, AdamState(new_m, new_v, t, b1, b2, state.eps)


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))


def clip_by_global_norm(grads: dict, max_norm: float) -> dict:
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def finite_diff_check(loss_fn, params: dict, eps: float = 1e-5, max_coords: int = 5000) -> float:
    """Max relative error between backprop and central differences.

    ``loss_fn`` maps a dict of Tensors to a scalar Tensor. Every coordinate
    is perturbed; the error is ``|analytic - numeric| / max(1e-8, |numeric|)``.
    """
    total = sum(p.size for p in params.values())
    if total > max_coords:
        raise ValueError(f"{total} coordinates exceeds the {max_coords} limit")
    _, grads = ad.value_and_grad(loss_fn, params)
    work = {k: p.copy() for k, p in params.items()}

    def f():
        out = loss_fn(ad.constant(work))
        return float((out[0] if isinstance(out, tuple) else out).data)

    worst = 0.0
    for k, p in work.items():
        flat = p.reshape(-1)
        g = grads[k].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = f()
            flat[i] = orig - eps
            down = f()
            flat[i] = orig
            num = (up - down) / (2.0 * eps)
            worst = max(worst, abs(g[i] - num) / max(1e-8, abs(num)))
    return worst
