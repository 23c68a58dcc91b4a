"""Shared test utilities."""

import numpy as np

from dehamba.tensor import Tape


def fd_check(f, tensors, rng, eps=1e-6, probes=5):
    """Central-difference probe of tape gradients; returns max relative error."""
    for t in tensors:
        t.zero_grad()
    with Tape() as tape:
        tape.backward(f())
    worst = 0.0
    for t in tensors:
        flat = t.data.reshape(-1)
        grad = (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1)
        for idx in rng.choice(t.data.size, size=min(probes, t.data.size), replace=False):
            orig = flat[idx]
            flat[idx] = orig + eps
            lp = f().item()
            flat[idx] = orig - eps
            lm = f().item()
            flat[idx] = orig
            fd = (lp - lm) / (2 * eps)
            worst = max(worst, abs(grad[idx] - fd) / max(abs(grad[idx]), abs(fd), 1e-8))
    return worst
