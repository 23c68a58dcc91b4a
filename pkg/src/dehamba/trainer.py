"""Training loop: Adam, cosine-annealed learning rate, checkpointing.

Runs are fully deterministic for a given seed: batches are derived from
(seed, step) rather than a rolling RNG, so resuming from a checkpoint
reproduces an uninterrupted run bit for bit.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import synth
from .checkpoint import CheckpointError, load_tensors, save_tensors
from .metrics import l1_loss
from .network import DehambaNet, ModelConfig
from .tensor import Tape


@dataclass
class TrainConfig:
    total_steps: int = 500
    lr_init: float = 2e-4
    lr_min: float = 1e-6
    batch: int = 4
    patch: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    ckpt_interval: int = 100

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.lr_min >= self.lr_init:
            raise ValueError("lr_min must be below lr_init")


class NumericsError(RuntimeError):
    pass


def cosine_lr(step: int, cfg: TrainConfig) -> float:
    """Cosine annealing from lr_init (step 0) to lr_min (final step)."""
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    span = cfg.lr_init - cfg.lr_min
    return float(cfg.lr_min + 0.5 * span * (1.0 + np.cos(np.pi * step / cfg.total_steps)))


class Adam:
    """Standard bias-corrected Adam over a named parameter dict."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.step_count = 0

    def step(self, lr):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.step_count
        bc2 = 1.0 - b2**self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.isfinite(g).all():
                raise NumericsError(f"non-finite gradient for parameter {name}")
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            mhat = self.m[name] / bc1
            vhat = self.v[name] / bc2
            p.data = p.data - lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def state(self):
        out = {f"m.{k}": v for k, v in self.m.items()}
        out.update({f"v.{k}": v for k, v in self.v.items()})
        out["step"] = np.asarray([self.step_count], dtype=np.float32)
        return out

    def load_state(self, state):
        for k in self.m:
            self.m[k] = np.asarray(state[f"m.{k}"], dtype=self.m[k].dtype).reshape(self.m[k].shape)
            self.v[k] = np.asarray(state[f"v.{k}"], dtype=self.v[k].dtype).reshape(self.v[k].shape)
        self.step_count = int(state["step"][0])


# checkpoint field names for the model configuration
_CFG_FIELDS = (
    "base_channels", "state_dim", "n_dirs", "use_dconv", "use_silu",
    "use_hadamard", "use_ffn", "ffn_expand", "in_channels",
)


def save_checkpoint(path, model: DehambaNet, optimizer: Adam | None = None):
    tensors: dict[str, np.ndarray] = {}
    cfg = model.cfg
    for f in _CFG_FIELDS:
        tensors[f"cfg.{f}"] = np.asarray([float(getattr(cfg, f))], dtype=np.float32)
    tensors["cfg.block_counts"] = np.asarray(cfg.block_counts, dtype=np.float32)
    for name, p in model.named_parameters():
        tensors[f"model.{name}"] = p.data
    if optimizer is not None:
        for k, v in optimizer.state().items():
            tensors[f"opt.{k}"] = v
    save_tensors(path, tensors)


def config_from_checkpoint(tensors) -> ModelConfig:
    kw = {}
    for f in _CFG_FIELDS:
        val = float(tensors[f"cfg.{f}"][0])
        kw[f] = bool(val) if f.startswith("use_") else (val if f == "ffn_expand" else int(val))
    kw["block_counts"] = tuple(int(v) for v in tensors["cfg.block_counts"])
    return ModelConfig(**kw)


def load_checkpoint(path):
    """Returns (config, model_state, opt_state_or_None)."""
    tensors = load_tensors(path)
    cfg = config_from_checkpoint(tensors)
    model_state = {k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")}
    opt_state = {k[len("opt."):]: v for k, v in tensors.items() if k.startswith("opt.")}
    return cfg, model_state, opt_state or None


def train_loop(model, pairs, cfg: TrainConfig, out_dir, resume=None, log_every=0):
    """Train on (hazy, clear) pairs; returns the list of per-step records.

    Writes `train_log.csv` plus periodic `ckpt_<step>.rsdh` files and a
    final `ckpt_final.rsdh` under `out_dir`.
    """
    os.makedirs(out_dir, exist_ok=True)
    opt = Adam(model.parameters(), cfg.beta1, cfg.beta2, cfg.eps)
    start_step = 0
    if resume is not None:
        _, model_state, opt_state = load_checkpoint(resume)
        model.load_state(model_state)
        if opt_state is None:
            raise CheckpointError(f"{resume} has no optimizer state, cannot resume")
        opt.load_state(opt_state)
        start_step = opt.step_count

    log_path = os.path.join(out_dir, "train_log.csv")
    mode = "a" if (resume is not None and os.path.exists(log_path)) else "w"
    records = []
    last_ckpt = resume
    with open(log_path, mode, newline="") as logf:
        writer = csv.writer(logf)
        if mode == "w":
            writer.writerow(["step", "lr", "loss", "wallclock"])
        for step in range(start_step, cfg.total_steps):
            hazy, clear = synth.sample_patches(
                pairs, cfg.patch, cfg.batch, seed=[cfg.seed, step]
            )
            t0 = time.time()
            with Tape() as tape:
                out = model(hazy)
                loss = l1_loss(out, clear)
                loss_val = loss.item()
                if not np.isfinite(loss_val):
                    raise NumericsError(
                        f"non-finite loss at step {step}; last checkpoint: {last_ckpt}"
                    )
                tape.backward(loss)
            lr = cosine_lr(step, cfg)
            opt.step(lr)
            opt.zero_grad()
            rec = (step, lr, loss_val, time.time() - t0)
            records.append(rec)
            writer.writerow([step, f"{lr:.10g}", f"{loss_val:.8g}", f"{rec[3]:.4f}"])
            if log_every and step % log_every == 0:
                print(f"step={step} lr={lr:.3e} loss={loss_val:.5f}", flush=True)
            done = step + 1
            if cfg.ckpt_interval and done % cfg.ckpt_interval == 0 and done < cfg.total_steps:
                last_ckpt = os.path.join(out_dir, f"ckpt_{done}.rsdh")
                save_checkpoint(last_ckpt, model, opt)
    final = os.path.join(out_dir, "ckpt_final.rsdh")
    save_checkpoint(final, model, opt)
    return records
