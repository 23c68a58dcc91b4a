"""Selective state-space scan kernel.

Implements the discrete recurrence

    h_t = Abar_t * h_{t-1} + Bbar_t * x_t
    y_t = C_t . h_t + D * x_t

with per-token Delta/B/C (the selective variant).  Two interchangeable
kernels are provided: a plain sequential reference (`selective_scan_seq`)
and a blocked associative scan (`selective_scan_par`) built on the
combine operator (a2*a1, a2*b1 + b2).  Both must agree; tests enforce it.

Shapes (time axis is always axis 1):
    x      [B, L, D]        input tokens
    delta  [B, L, D]        positive step sizes
    A      [D, N]           state matrix (realized values, strictly negative)
    B_tok  [B, L, N]        per-token input projection
    C_tok  [B, L, N]        per-token output projection
    D      [D]              skip gain
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .layers import Linear, Module
from .tensor import Tensor

_BLOCK = 64  # chunk length of the blocked associative scan


class ScanError(ValueError):
    pass


def combine(e1, e2):
    """Associative combine for first-order recurrences.

    Elements are (a, b) pairs representing the affine map h -> a*h + b;
    combine(e1, e2) applies e1 first, then e2.
    """
    a1, b1 = e1
    a2, b2 = e2
    return (a2 * a1, a2 * b1 + b2)


def discretize(delta, A, B_tok):
    """Zero-order-hold style discretization.

    Abar = exp(delta * A) exactly; Bbar = delta * B_tok (Euler rule),
    broadcast over channels.  Returns ([B,L,D,N], [B,L,D,N]) arrays.
    """
    delta = np.asarray(delta)
    A = np.asarray(A)
    B_tok = np.asarray(B_tok)
    if np.any(delta <= 0):
        raise ScanError("delta must be strictly positive")
    Abar = delta[..., None] * A
    np.exp(Abar, out=Abar)
    Bbar = delta[..., None] * B_tok[:, :, None, :]
    return Abar, Bbar


def _scan_seq_states(Abar, Bu):
    """Sequential reference recurrence; returns all hidden states [B,L,D,N]."""
    bsz, L = Abar.shape[:2]
    h = np.zeros((bsz,) + Abar.shape[2:], dtype=Abar.dtype)
    out = np.empty_like(Abar)
    for t in range(L):
        h = Abar[:, t] * h + Bu[:, t]
        if not np.isfinite(h).all():
            raise ScanError(f"non-finite hidden state at step {t}")
        out[:, t] = h
    return out


def _scan_blocked_states(Abar, Bu, block=_BLOCK):
    """Blocked associative scan; same result as `_scan_seq_states`.

    Each chunk of `block` steps is reduced in a vectorized inner loop;
    chunk carries are then combined sequentially with `combine`, and the
    incoming carry is re-broadcast into every chunk.  O(block + L/block)
    vectorized passes instead of O(L).
    """
    bsz, L = Abar.shape[:2]
    rest = Abar.shape[2:]
    if L <= block:
        return _scan_seq_states(Abar, Bu)
    nc = -(-L // block)
    padded = nc * block
    if padded != L:
        # pad with identity elements (a=1, b=0); outputs are sliced off below
        pad = ((0, 0), (0, padded - L)) + ((0, 0),) * len(rest)
        Abar = np.pad(Abar, pad, constant_values=1.0)
        Bu = np.pad(Bu, pad)
    a = Abar.reshape((bsz, nc, block) + rest)
    b = Bu.reshape((bsz, nc, block) + rest)

    h_local = np.empty_like(b)   # within-chunk states assuming zero entry state
    a_pref = np.empty_like(a)    # within-chunk prefix products of Abar
    h_local[:, :, 0] = b[:, :, 0]
    a_pref[:, :, 0] = a[:, :, 0]
    for k in range(1, block):
        np.multiply(a[:, :, k], h_local[:, :, k - 1], out=h_local[:, :, k])
        h_local[:, :, k] += b[:, :, k]
        np.multiply(a[:, :, k], a_pref[:, :, k - 1], out=a_pref[:, :, k])

    # inclusive scan over chunk summaries (pure `combine` chain), then shift
    carry_in = np.zeros((bsz, nc) + rest, dtype=Abar.dtype)
    state = (np.ones((bsz,) + rest, dtype=Abar.dtype), np.zeros((bsz,) + rest, dtype=Abar.dtype))
    for j in range(nc):
        carry_in[:, j] = state[1]
        state = combine(state, (a_pref[:, j, -1], h_local[:, j, -1]))

    np.multiply(a_pref, carry_in[:, :, None], out=a_pref)
    a_pref += h_local
    out = a_pref.reshape((bsz, padded) + rest)[:, :L]
    if not np.isfinite(out).all():
        bad = np.argwhere(~np.isfinite(out))[0]
        raise ScanError(f"non-finite hidden state at step {bad[1]}")
    return np.ascontiguousarray(out)


def _scan_output(h, x, C_tok, D):
    y = np.einsum("bldn,bln->bld", h, C_tok)
    return y + x * D


def selective_scan_seq(x, delta, A, B_tok, C_tok, D):
    """Sequential reference scan; numpy in, numpy out."""
    Abar, Bbar = discretize(delta, A, B_tok)
    h = _scan_seq_states(Abar, Bbar * np.asarray(x)[..., None])
    return _scan_output(h, np.asarray(x), np.asarray(C_tok), np.asarray(D))


def selective_scan_par(x, delta, A, B_tok, C_tok, D, block=_BLOCK):
    """Blocked associative scan; identical to `selective_scan_seq` within fp error."""
    Abar, Bbar = discretize(delta, A, B_tok)
    h = _scan_blocked_states(Abar, Bbar * np.asarray(x)[..., None], block=block)
    return _scan_output(h, np.asarray(x), np.asarray(C_tok), np.asarray(D))


def selective_scan(x, delta, A, B_tok, C_tok, D, parallel=True):
    """Differentiable selective scan over Tensors.

    The recurrence is one tape node with a hand-derived backward: the
    state gradient obeys the reverse-time recurrence
        gh_t = C_t * gy_t + Abar_{t+1} * gh_{t+1}
    which is itself a first-order linear recurrence and reuses the same
    scan kernels on the time-reversed sequence.
    """
    x, delta, A = T._wrap(x), T._wrap(delta), T._wrap(A)
    B_tok, C_tok, D = T._wrap(B_tok), T._wrap(C_tok), T._wrap(D)

    xd, dd, Ad = x.data, delta.data, A.data
    Bd, Cd, Dd = B_tok.data, C_tok.data, D.data
    if np.any(dd <= 0):
        raise ScanError("delta must be strictly positive")
    Abar = dd[..., None] * Ad
    np.exp(Abar, out=Abar)
    Bu = (dd * xd)[..., None] * Bd[:, :, None, :]  # fused Bbar * x
    states = _scan_blocked_states(Abar, Bu) if parallel else _scan_seq_states(Abar, Bu)
    y = _scan_output(states, xd, Cd, Dd)

    def backward(gy):
        g = Cd[:, :, None, :] * gy[..., None]  # [B,L,D,N]
        # reverse-time recurrence: coefficient at reversed step s is Abar_{t+1}
        a_rev = np.flip(Abar, axis=1)
        a_rev = np.concatenate([np.ones_like(a_rev[:, :1]), a_rev[:, :-1]], axis=1)
        gh = np.flip(_scan_blocked_states(a_rev, np.flip(g, axis=1)), axis=1)

        h_prev = np.concatenate([np.zeros_like(states[:, :1]), states[:, :-1]], axis=1)
        gAbar = gh * h_prev
        T._accum(
            delta,
            (gAbar * Abar * Ad).sum(-1) + np.einsum("bldn,bln->bld", gh, Bd) * xd,
        )
        T._accum(A, np.einsum("bldn,bld->dn", gAbar * Abar, dd))
        T._accum(B_tok, np.einsum("bldn,bld->bln", gh, dd * xd))
        T._accum(C_tok, np.einsum("bldn,bld->bln", states, gy))
        T._accum(x, np.einsum("bldn,bln->bld", gh, Bd) * dd + gy * Dd)
        T._accum(D, (gy * xd).sum(axis=(0, 1)))

    return T._from_op(y, (x, delta, A, B_tok, C_tok, D), backward)


class SsmParams(Module):
    """Learnable per-direction scan parameters.

    A is stored as -exp(A_log) (strictly negative realized values, S4D-real
    spacing 1..N at init); Delta comes from softplus(dt_proj(token)) with the
    bias chosen so initial steps land in [1e-3, 1e-1]; D starts at 1.
    """

    def __init__(self, rng, channels, state_dim=16):
        super().__init__()
        self.channels = channels
        self.state_dim = state_dim
        self.A_log = Tensor(
            np.tile(np.log(np.arange(1, state_dim + 1, dtype=np.float64)), (channels, 1)),
            requires_grad=True,
        )
        self.skip_gain = Tensor(np.ones(channels), requires_grad=True)
        self.dt_proj = Linear(rng, channels, channels)
        dt = np.exp(rng.uniform(math.log(1e-3), math.log(1e-1), size=channels))
        # inverse softplus so softplus(bias) == dt at zero input
        self.dt_proj.bias.data = np.asarray(
            dt + np.log(-np.expm1(-dt)), dtype=self.dt_proj.bias.data.dtype
        )
        self.B_proj = Linear(rng, channels, state_dim)
        self.C_proj = Linear(rng, channels, state_dim)

    def forward(self, seq, parallel=True):
        """Run the selective scan on a token sequence [B, L, D]."""
        delta = T.softplus(self.dt_proj(seq))
        A = T.neg(T.exp(self.A_log))
        return selective_scan(
            seq, delta, A, self.B_proj(seq), self.C_proj(seq), self.skip_gain,
            parallel=parallel,
        )
