"""Finite-difference verification of reverse-mode gradients.

Runs in 64-bit mode (the caller builds the model inside
`precision("float64")`).  For large parameter sets a bounded number of
entries per tensor is probed; every probe uses central differences.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tape


class GradCheckError(RuntimeError):
    pass


def grad_check(f, params, samples_per_param=4, eps=1e-4, seed=0):
    """Max relative error between tape gradients and central differences.

    f: zero-argument callable returning a scalar Tensor (closing over
    `params`).  params: dict name -> Tensor with requires_grad set.
    Up to `samples_per_param` entries of each tensor are probed.
    """
    for p in params.values():
        p.zero_grad()
    with Tape() as tape:
        loss = f()
        tape.backward(loss)
    if not np.isfinite(loss.item()):
        raise GradCheckError("non-finite loss in gradient check")

    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_name = None
    for name, p in params.items():
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.isfinite(grad).all():
            raise GradCheckError(f"non-finite tape gradient for {name}")
        n = min(samples_per_param, p.data.size)
        flat_idx = rng.choice(p.data.size, size=n, replace=False)
        flat = p.data.reshape(-1)
        gflat = grad.reshape(-1)
        for idx in flat_idx:
            orig = flat[idx]
            flat[idx] = orig + eps
            lp = f().item()
            flat[idx] = orig - eps
            lm = f().item()
            flat[idx] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise GradCheckError(f"non-finite loss while perturbing {name}")
            fd = (lp - lm) / (2.0 * eps)
            ad = gflat[idx]
            rel = abs(ad - fd) / max(abs(ad), abs(fd), 1e-8)
            if rel > worst:
                worst = rel
                worst_name = name
    return worst, worst_name
