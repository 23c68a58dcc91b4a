"""The full dehazing network: residual 3-level U-Net of Dehamba blocks.

Channel schedule: C at full resolution, 2C at half, 4C at quarter (the
bottleneck).  Decoding fuses skip connections with 1x1 convolutions; the
last decoder level keeps 2C channels before the final 3x3 conv produces a
3-channel residual that is added to the input image.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .blocks import VdbConfig, VisionDehambaBlock
from .layers import Conv2d, Module, PointwiseConv


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 30
    block_counts: tuple[int, int, int] = (2, 3, 3)
    state_dim: int = 16
    n_dirs: int = 4
    use_dconv: bool = True
    use_silu: bool = True
    use_hadamard: bool = True
    use_ffn: bool = True
    ffn_expand: float = 2.0
    in_channels: int = 3

    def __post_init__(self):
        if self.base_channels < 4:
            raise ValueError("base_channels must be >= 4")
        if len(self.block_counts) != 3 or any(n < 1 for n in self.block_counts):
            raise ValueError("block_counts must be three positive integers")

    def vdb(self, channels) -> VdbConfig:
        return VdbConfig(
            channels=channels,
            state_dim=self.state_dim,
            n_dirs=self.n_dirs,
            use_dconv=self.use_dconv,
            use_silu=self.use_silu,
            use_hadamard=self.use_hadamard,
            use_ffn=self.use_ffn,
            ffn_expand=self.ffn_expand,
        )


class Upsample(Module):
    """2x nearest-neighbor upsampling followed by a channel-halving 3x3 conv."""

    def __init__(self, rng, cin, cout):
        super().__init__()
        self.conv = Conv2d(rng, cin, cout, k=3)

    def forward(self, x):
        return self.conv(T.upsample_nearest2x(x))


class DehambaNet(Module):
    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        n1, n2, n3 = cfg.block_counts

        self.shallow = Conv2d(rng, cfg.in_channels, c, k=3)
        self.enc1 = [VisionDehambaBlock(rng, cfg.vdb(c)) for _ in range(n1)]
        self.down1 = Conv2d(rng, c, 2 * c, k=3, stride=2)
        self.enc2 = [VisionDehambaBlock(rng, cfg.vdb(2 * c)) for _ in range(n2)]
        self.down2 = Conv2d(rng, 2 * c, 4 * c, k=3, stride=2)
        self.bottleneck = [VisionDehambaBlock(rng, cfg.vdb(4 * c)) for _ in range(n3)]
        self.up2 = Upsample(rng, 4 * c, 2 * c)
        self.fuse2 = PointwiseConv(rng, 4 * c, 2 * c)
        self.dec2 = [VisionDehambaBlock(rng, cfg.vdb(2 * c)) for _ in range(n2)]
        self.up1 = Upsample(rng, 2 * c, c)
        self.fuse1 = PointwiseConv(rng, 2 * c, 2 * c)
        self.dec1 = [VisionDehambaBlock(rng, cfg.vdb(2 * c)) for _ in range(n1)]
        self.final = Conv2d(rng, 2 * c, cfg.in_channels, k=3)

    def residual(self, x, parallel=True):
        """The learned residual branch (everything except the global skip)."""
        b, c, h, w = x.shape
        if h % 4 != 0 or w % 4 != 0:
            raise T.ShapeError(
                f"spatial dims must be divisible by 4 (two downsamplings), got {h}x{w}"
            )

        e = self.shallow(x)
        for blk in self.enc1:
            e = blk(e, parallel=parallel)
        skip1 = e
        e = self.down1(e)
        for blk in self.enc2:
            e = blk(e, parallel=parallel)
        skip2 = e
        e = self.down2(e)
        for blk in self.bottleneck:
            e = blk(e, parallel=parallel)

        e = self.fuse2(T.concat([self.up2(e), skip2], axis=1))
        for blk in self.dec2:
            e = blk(e, parallel=parallel)
        e = self.fuse1(T.concat([self.up1(e), skip1], axis=1))
        for blk in self.dec1:
            e = blk(e, parallel=parallel)
        return self.final(e)

    def forward(self, x, parallel=True):
        return T.add(self.residual(x, parallel=parallel), x)


def build_model(cfg: ModelConfig, seed: int) -> DehambaNet:
    """Deterministically initialized network for the given seed."""
    return DehambaNet(cfg, np.random.default_rng(seed))


def param_count(model: DehambaNet) -> int:
    return model.param_count()
