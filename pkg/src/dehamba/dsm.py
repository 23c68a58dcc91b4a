"""Direction-aware scanning of 2D feature maps.

A [B, C, H, W] map is flattened into up to four 1D token orders
(row-major forward/backward, column-major forward/backward), each order
is run through its own selective scan, the results are inverse-permuted
back to image layout and summed.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import tensor as T
from .layers import Module
from .scan import SsmParams


@lru_cache(maxsize=256)
def direction_perms(h: int, w: int):
    """The four token orders as permutations: perm[p] = flat spatial index.

    Direction 0: row-major forward; 1: its reverse; 2: column-major
    forward; 3: its reverse.  Flat index convention is row-major (y*W+x).
    """
    if h < 1 or w < 1:
        raise ValueError(f"invalid grid {h}x{w}")
    fwd = np.arange(h * w, dtype=np.int64)
    col = (fwd % h) * w + fwd // h
    return (fwd, fwd[::-1].copy(), col, col[::-1].copy())


def scan_expand(p):
    """Expand [B, C, H, W] into the four directional sequences [B, L, C].

    Returns (seqs, perms, (H, W)); values are gathered, never modified.
    """
    b, c, h, w = p.shape
    perms = direction_perms(h, w)
    flat = T.transpose(T.reshape(p, (b, c, h * w)), (0, 2, 1))  # [B, L, C]
    seqs = tuple(T.permute_axis(flat, perm, axis=1) for perm in perms)
    return seqs, perms, (h, w)


def scan_merge(seqs, perms, dims):
    """Inverse-permute each directional sequence and sum, back to [B, C, H, W]."""
    h, w = dims
    total = None
    for seq, perm in zip(seqs, perms):
        if seq.shape[1] != h * w:
            raise T.ShapeError(
                f"sequence length {seq.shape[1]} does not match grid {h}x{w}"
            )
        back = T.permute_axis(seq, np.argsort(perm), axis=1)
        total = back if total is None else T.add(total, back)
    b, _, c = total.shape
    return T.reshape(T.transpose(total, (0, 2, 1)), (b, c, h, w))


class DirectionScan(Module):
    """Multi-directional selective scan with independent parameters per path.

    n_dirs=1 scans row-major forward only; n_dirs=2 adds its reverse;
    n_dirs=4 adds both column-major paths.
    """

    def __init__(self, rng, channels, state_dim=16, n_dirs=4):
        super().__init__()
        if n_dirs not in (1, 2, 4):
            raise ValueError(f"n_dirs must be 1, 2 or 4, got {n_dirs}")
        self.n_dirs = n_dirs
        self.ssm = [SsmParams(rng, channels, state_dim) for _ in range(n_dirs)]

    def forward(self, p, parallel=True):
        seqs, perms, dims = scan_expand(p)
        scanned = [
            ssm(seq, parallel=parallel)
            for ssm, seq in zip(self.ssm, seqs[: self.n_dirs])
        ]
        return scan_merge(scanned, perms[: self.n_dirs], dims)
