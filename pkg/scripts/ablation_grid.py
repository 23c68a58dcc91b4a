#!/usr/bin/env python3
"""Run the block-design ablation grid on a shared toy task.

Trains each variant (interior switches V1-V4 and 1/2/4 scan paths) for a
small number of steps on the same synthetic pairs and prints a table of
final loss and training-pair PSNR.  Meant for relative comparisons, not
absolute quality.
"""

import argparse

import numpy as np

from dehamba.metrics import psnr
from dehamba.network import ModelConfig, build_model
from dehamba.synth import make_pairs
from dehamba.trainer import TrainConfig, train_loop

VARIANTS = {
    "v1-plain": dict(use_dconv=False, use_silu=False, use_hadamard=False),
    "v2-dconv": dict(use_silu=False, use_hadamard=False),
    "v3-silu": dict(use_hadamard=False),
    "v4-full": dict(),
    "dirs-1": dict(n_dirs=1),
    "dirs-2": dict(n_dirs=2),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=100)
    ap.add_argument("--c", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args()

    pairs = make_pairs(8, 64, 64, seed=args.seed)
    print(f"{'variant':<10} {'params':>9} {'final_loss':>11} {'psnr_db':>8}")
    for name, kw in VARIANTS.items():
        cfg = ModelConfig(base_channels=args.c, block_counts=(1, 1, 1), **kw)
        model = build_model(cfg, seed=args.seed)
        records = train_loop(
            model, pairs,
            TrainConfig(total_steps=args.steps, seed=args.seed),
            f"{args.out}/{name}",
        )
        score = np.mean(
            [psnr(np.clip(model(h[None]).data[0], 0, 1), c) for h, c in pairs]
        )
        print(f"{name:<10} {model.param_count():>9} {records[-1][2]:>11.5f} {score:>8.2f}")


if __name__ == "__main__":
    main()
