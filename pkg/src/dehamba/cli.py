"""Command-line surface: train, infer, eval, gradcheck, params, benchscan, synth.

Configuration is a flat key=value file (UTF-8, `#` comments) overridable
by flags.  Every command is deterministic given --seed.  The RSDH_THREADS
environment variable caps kernel-internal (BLAS) parallelism; 0 = auto.
"""

from __future__ import annotations

import argparse
import os
import sys


class ConfigError(ValueError):
    pass


# every key accepted in a config file, with its parser
def _parse_bool(s):
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_blocks(s):
    parts = tuple(int(v) for v in s.split(","))
    if len(parts) != 3:
        raise ValueError("blocks must be three comma-separated integers")
    return parts


CONFIG_KEYS = {
    "c": int,
    "blocks": _parse_blocks,
    "state_dim": int,
    "n_dirs": int,
    "use_dconv": _parse_bool,
    "use_silu": _parse_bool,
    "use_hadamard": _parse_bool,
    "use_ffn": _parse_bool,
    "ffn_expand": float,
    "steps": int,
    "batch": int,
    "patch": int,
    "lr_init": float,
    "lr_min": float,
    "seed": int,
    "ckpt_interval": int,
    "pairs": int,
    "image_size": int,
    "data": str,
    "out": str,
}


def parse_config_file(path):
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    values = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in CONFIG_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = CONFIG_KEYS[key](val)
            except ValueError as e:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {e}") from e
    return values


def _merged_options(args):
    """Config file values overridden by any flag given on the command line."""
    values = parse_config_file(args.config) if getattr(args, "config", None) else {}
    for key in CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return values


def _model_config(opts):
    from .network import ModelConfig

    kw = {}
    mapping = {
        "c": "base_channels", "blocks": "block_counts", "state_dim": "state_dim",
        "n_dirs": "n_dirs", "use_dconv": "use_dconv", "use_silu": "use_silu",
        "use_hadamard": "use_hadamard", "use_ffn": "use_ffn", "ffn_expand": "ffn_expand",
    }
    for key, field in mapping.items():
        if key in opts:
            kw[field] = opts[key]
    return ModelConfig(**kw)


def _train_config(opts):
    from .trainer import TrainConfig

    kw = {}
    mapping = {
        "steps": "total_steps", "batch": "batch", "patch": "patch",
        "lr_init": "lr_init", "lr_min": "lr_min", "seed": "seed",
        "ckpt_interval": "ckpt_interval",
    }
    for key, field in mapping.items():
        if key in opts:
            kw[field] = opts[key]
    return TrainConfig(**kw)


def _add_model_flags(p):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--c", type=int, help="base channel count")
    p.add_argument("--blocks", type=_parse_blocks, help="per-level block counts, e.g. 2,3,3")
    p.add_argument("--state-dim", dest="state_dim", type=int)
    p.add_argument("--n-dirs", dest="n_dirs", type=int, choices=(1, 2, 4))
    p.add_argument("--use-dconv", dest="use_dconv", type=_parse_bool)
    p.add_argument("--use-silu", dest="use_silu", type=_parse_bool)
    p.add_argument("--use-hadamard", dest="use_hadamard", type=_parse_bool)
    p.add_argument("--use-ffn", dest="use_ffn", type=_parse_bool)
    p.add_argument("--ffn-expand", dest="ffn_expand", type=float)
    p.add_argument("--seed", type=int)


def _build_parser():
    parser = argparse.ArgumentParser(prog="dehamba", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on synthetic or on-disk pairs")
    _add_model_flags(p)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--patch", type=int)
    p.add_argument("--lr-init", dest="lr_init", type=float)
    p.add_argument("--lr-min", dest="lr_min", type=float)
    p.add_argument("--ckpt-interval", dest="ckpt_interval", type=int)
    p.add_argument("--pairs", type=int, help="number of synthetic training pairs")
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--data", help="dataset dir with input/ and gt/ PNGs")
    p.add_argument("--out", help="output directory")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--log-every", type=int, default=0)

    p = sub.add_parser("infer", help="dehaze one PNG with a trained checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--gt", help="optional ground-truth PNG for metrics")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("checkpoint")
    p.add_argument("--data", help="dataset dir; synthetic split when omitted")
    p.add_argument("--pairs", type=int, default=8)
    p.add_argument("--image-size", dest="image_size", type=int, default=64)
    p.add_argument("--seed", type=int, default=1234)
    p.add_argument("--csv", help="write per-image metrics to this CSV")

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    _add_model_flags(p)
    p.add_argument("--size", type=int, default=16, help="input height/width")
    p.add_argument("--samples", type=int, default=3, help="probed entries per tensor")

    p = sub.add_parser("params", help="print the model parameter count")
    _add_model_flags(p)

    p = sub.add_parser("benchscan", help="time sequential vs parallel scans")
    p.add_argument("--lens", default="256,512,1024,2048")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--state-dim", dest="state_dim", type=int, default=16)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=3)

    p = sub.add_parser("synth", help="emit a synthetic hazy/clear dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)

    return parser


def _load_model_from_checkpoint(path):
    from .network import build_model
    from .trainer import load_checkpoint

    cfg, model_state, _ = load_checkpoint(path)
    model = build_model(cfg, seed=0)
    model.load_state(model_state)
    return model


def _cmd_train(args):
    import numpy as np

    from . import synth
    from .metrics import evaluate_pair
    from .network import build_model
    from .trainer import train_loop

    opts = _merged_options(args)
    model_cfg = _model_config(opts)
    train_cfg = _train_config(opts)
    out_dir = opts.get("out", "runs/train")
    size = opts.get("image_size", 64)
    if "data" in opts:
        pairs = synth.load_dataset_dir(opts["data"])
    else:
        pairs = synth.make_pairs(opts.get("pairs", 8), size, size, seed=train_cfg.seed)

    model = build_model(model_cfg, seed=train_cfg.seed)
    records = train_loop(
        model, pairs, train_cfg, out_dir, resume=args.resume, log_every=args.log_every
    )
    print(f"trained {len(records)} steps; final loss {records[-1][2]:.6f}")

    # held-out synthetic split for final metrics
    heldout = synth.make_pairs(4, size, size, seed=train_cfg.seed + 10_000)
    reports = []
    for hazy, clear in heldout:
        out = model(hazy[None]).data[0]
        reports.append(evaluate_pair(np.clip(out, 0, 1), clear))
    psnr = float(np.mean([r.psnr_db for r in reports]))
    ssim = float(np.mean([r.ssim for r in reports]))
    print(f"heldout psnr_db={psnr:.4f} ssim={ssim:.6f}")
    return 0


def _cmd_infer(args):
    import numpy as np

    from . import synth
    from .metrics import evaluate_pair
    from .tensor import ShapeError

    model = _load_model_from_checkpoint(args.checkpoint)
    img = synth.read_png(args.input)
    h, w = img.shape[1:]
    if h % 4 != 0 or w % 4 != 0:
        print(
            f"error: input is {h}x{w}; both dimensions must be divisible by 4",
            file=sys.stderr,
        )
        return 1
    out = np.clip(model(img[None]).data[0], 0.0, 1.0)
    synth.write_png(args.output, out)
    if args.gt:
        gt = synth.read_png(args.gt)
        print(evaluate_pair(out, gt).line())
    return 0


def _cmd_eval(args):
    import csv as _csv

    import numpy as np

    from . import synth
    from .metrics import evaluate_pair

    model = _load_model_from_checkpoint(args.checkpoint)
    if args.data:
        pairs = synth.load_dataset_dir(args.data)
    else:
        pairs = synth.make_pairs(args.pairs, args.image_size, args.image_size, seed=args.seed)
    rows = []
    for i, (hazy, clear) in enumerate(pairs):
        out = np.clip(model(hazy[None]).data[0], 0.0, 1.0)
        rep = evaluate_pair(out, clear)
        rows.append((i, rep))
        print(f"image={i} {rep.line()}")
    print(
        f"mean psnr_db={np.mean([r.psnr_db for _, r in rows]):.4f} "
        f"ssim={np.mean([r.ssim for _, r in rows]):.6f}"
    )
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            w = _csv.writer(f)
            w.writerow(["image", "psnr_db", "ssim", "l1"])
            for i, rep in rows:
                w.writerow([i, rep.psnr_db, rep.ssim, rep.l1])
    return 0


def _cmd_gradcheck(args):
    import numpy as np

    from . import tensor as T
    from .gradcheck import grad_check
    from .metrics import l1_loss
    from .network import ModelConfig, build_model
    from .tensor import Tensor

    opts = _merged_options(args)
    opts.setdefault("c", 4)
    opts.setdefault("blocks", (1, 1, 1))
    model_cfg = _model_config(opts)
    seed = opts.get("seed", 0)
    size = args.size
    with T.precision("float64"):
        model = build_model(model_cfg, seed=seed)
        rng = np.random.default_rng(seed + 1)
        x = Tensor(rng.uniform(0, 1, (1, 3, size, size)))
        gt = rng.uniform(0, 1, (1, 3, size, size))

        def f():
            return l1_loss(model(x), gt)

        err, name = grad_check(f, model.parameters(), samples_per_param=args.samples)
    print(f"max_rel_error={err:.3e} worst_param={name}")
    return 0 if err < 1e-3 else 2


def _cmd_params(args):
    from .network import build_model, param_count

    opts = _merged_options(args)
    model = build_model(_model_config(opts), seed=opts.get("seed", 0))
    print(param_count(model))
    return 0


def _cmd_benchscan(args):
    import time

    import numpy as np

    from .scan import selective_scan_par, selective_scan_seq

    lens = [int(v) for v in args.lens.split(",")]
    d, n, b = args.dim, args.state_dim, args.batch
    rng = np.random.default_rng(args.seed)
    print("L,t_seq_s,t_par_s,max_abs_dev")
    for L in lens:
        x = rng.standard_normal((b, L, d)).astype(np.float32)
        delta = np.exp(rng.uniform(-3, -1, (b, L, d))).astype(np.float32)
        A = (-np.exp(rng.uniform(0, 1, (d, n)))).astype(np.float32)
        Bt = rng.standard_normal((b, L, n)).astype(np.float32)
        Ct = rng.standard_normal((b, L, n)).astype(np.float32)
        Dk = rng.standard_normal(d).astype(np.float32)
        t_seq = min(
            _timed(lambda: selective_scan_seq(x, delta, A, Bt, Ct, Dk))
            for _ in range(args.repeats)
        )
        t_par = min(
            _timed(lambda: selective_scan_par(x, delta, A, Bt, Ct, Dk))
            for _ in range(args.repeats)
        )
        dev = float(
            np.abs(
                selective_scan_seq(x, delta, A, Bt, Ct, Dk)
                - selective_scan_par(x, delta, A, Bt, Ct, Dk)
            ).max()
        )
        print(f"{L},{t_seq:.6f},{t_par:.6f},{dev:.3e}")
    return 0


def _timed(fn):
    import time

    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def _cmd_synth(args):
    from . import synth

    pairs = synth.make_pairs(args.n, args.size, args.size, seed=args.seed)
    synth.write_dataset_dir(args.out, pairs)
    print(f"wrote {len(pairs)} pairs under {args.out}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "params": _cmd_params,
    "benchscan": _cmd_benchscan,
    "synth": _cmd_synth,
}


def main(argv=None):
    threads = os.environ.get("RSDH_THREADS", "")
    if threads and threads != "0":
        # must land before numpy initializes its BLAS thread pool
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)

    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1

    from .tensor import ShapeError
    from .trainer import NumericsError

    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError, ValueError, ShapeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericsError as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
