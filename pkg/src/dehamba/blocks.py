"""Vision Dehamba Block: the network's backbone element.

Structure per block (widths all equal the block's channel count C):

    x --3x3 conv--> e
    e' = e + SSM(Norm1(e))                       (stage 1)
    out = e' + FFN(DConv3x3(Norm2(e')))          (stage 2, optional)

where SSM is the dual-branch gated interior:

    b1 = SiLU(1x1(t))
    b2 = Norm(DSM(SiLU(DConv(1x1(t)))))
    SSM(t) = 1x1(b1 * b2)

The ablation switches (use_dconv / use_silu / use_hadamard / use_ffn and
the DSM path count) reproduce the variant grid studied for this design.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .dsm import DirectionScan
from .layers import Conv2d, DepthwiseConv, LayerNorm, Module, PointwiseConv


@dataclass(frozen=True)
class VdbConfig:
    channels: int
    state_dim: int = 16
    n_dirs: int = 4
    use_dconv: bool = True
    use_silu: bool = True
    use_hadamard: bool = True
    use_ffn: bool = True
    ffn_expand: float = 2.0

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if self.ffn_expand <= 0:
            raise ValueError("ffn_expand must be > 0")
        if self.n_dirs not in (1, 2, 4):
            raise ValueError("n_dirs must be 1, 2 or 4")


class FeedForward(Module):
    """Pointwise expand -> SiLU -> pointwise project."""

    def __init__(self, rng, channels, expand=2.0):
        super().__init__()
        hidden = max(1, round(expand * channels))
        self.expand = PointwiseConv(rng, channels, hidden)
        self.project = PointwiseConv(rng, hidden, channels)

    def forward(self, x):
        return self.project(T.silu(self.expand(x)))


class DualBranchSsm(Module):
    """Gated two-branch interior around the direction-aware scan."""

    def __init__(self, rng, cfg: VdbConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        self.gate_proj = PointwiseConv(rng, c, c)
        self.in_proj = PointwiseConv(rng, c, c)
        self.dconv = DepthwiseConv(rng, c) if cfg.use_dconv else None
        self.dsm = DirectionScan(rng, c, cfg.state_dim, cfg.n_dirs)
        self.norm = LayerNorm(c)
        self.out_proj = PointwiseConv(rng, c, c)

    def _act(self, x):
        return T.silu(x) if self.cfg.use_silu else x

    def forward(self, x, parallel=True):
        gate = self._act(self.gate_proj(x))
        t = self.in_proj(x)
        if self.dconv is not None:
            t = self.dconv(t)
        t = self.norm(self.dsm(self._act(t), parallel=parallel))
        merged = T.mul(gate, t) if self.cfg.use_hadamard else T.add(gate, t)
        return self.out_proj(merged)


class VisionDehambaBlock(Module):
    def __init__(self, rng, cfg: VdbConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        self.entry = Conv2d(rng, c, c, k=3)
        self.norm1 = LayerNorm(c)
        self.ssm = DualBranchSsm(rng, cfg)
        if cfg.use_ffn:
            self.norm2 = LayerNorm(c)
            self.mid_dconv = DepthwiseConv(rng, c)
            self.ffn = FeedForward(rng, c, cfg.ffn_expand)

    def core(self, e, parallel=True):
        """The residual stages applied to the embedded feature map."""
        e = T.add(e, self.ssm(self.norm1(e), parallel=parallel))
        if self.cfg.use_ffn:
            e = T.add(e, self.ffn(self.mid_dconv(self.norm2(e))))
        return e

    def forward(self, x, parallel=True):
        return self.core(self.entry(x), parallel=parallel)
