"""``hckit`` command-line interface.

Subcommands: ``count``, ``synth-data``, ``train``, ``eval``, ``sweep``.
Every command exits 0 on success and prints a single ``hckit: error: ...``
line with exit status 1 on failure (2 for usage errors).
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import cost
from .architectures import HyperUNetConfig, UNet, build_hyper_unet, build_plain_unet, describe_unet
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import (DatasetError, DegradationParams, load_pair_dir, make_synthetic_dataset, split_ids,
                   write_pair_dir)
from .train import OptimConfig, evaluate, train

__all__ = ["main", "build_parser", "SWEEP_COLUMNS", "SWEEP_REFERENCE_SHAPE", "sweep_rows"]

logger = logging.getLogger("hckit")

SWEEP_COLUMNS = ("n_hid", "params", "flops", "train_loss_final", "eval_mse", "eval_ms_ssim")
# 448x448 RAW is packed into 4 channels at half resolution
SWEEP_REFERENCE_SHAPE = (4, 224, 224)
DEFAULT_NHID_GRID = (64, 128, 256, 512, 1024, 2048)


class CliError(Exception):
    pass


def _fmt(x: float) -> str:
    # repr-free, locale-independent
    return format(float(x), ".9g")


def _arch_config(args) -> HyperUNetConfig:
    if args.arch == "plain":
        # the plain ablation ignores the embedding and MLP widths
        return HyperUNetConfig(args.n_fwd, 2, 2)
    return HyperUNetConfig(args.n_fwd, args.n_embed, args.n_hid)


def _build_model(args) -> UNet:
    if args.arch == "plain":
        return build_plain_unet(args.n_fwd, seed=args.seed)
    return build_hyper_unet(_arch_config(args), seed=args.seed)


def _load_data(args) -> list:
    if getattr(args, "data", None):
        return load_pair_dir(args.data)
    if getattr(args, "synth", None):
        return make_synthetic_dataset(args.synth, args.synth_size, seed=args.seed)
    raise CliError("one of --data or --synth is required")


def _split(samples: list, seed: int, eval_fraction: float) -> tuple[list, list]:
    train_ids, eval_ids = split_ids([s.id for s in samples], seed, eval_fraction)
    by_id = {s.id: s for s in samples}
    return [by_id[i] for i in train_ids], [by_id[i] for i in eval_ids]


# ---------------------------------------------------------------------------
# commands


def cmd_count(args) -> int:
    cfg = _arch_config(args)
    report = cost.count_network(describe_unet(cfg, hyper=args.arch == "hyper"), (cfg.n_in, args.input_h, args.input_w))
    if args.format == "csv":
        sys.stdout.write(report.to_csv())
    else:
        print(report.to_table())
    return 0


def cmd_synth_data(args) -> int:
    if args.n < 0:
        raise CliError(f"--n must be >= 0, got {args.n}")
    deg = DegradationParams(read_noise=args.read_noise, shot_gain=args.shot_gain, gamma=args.gamma)
    samples = make_synthetic_dataset(args.n, args.size, seed=args.seed, degradation=deg)
    manifest = {"generator": "synthetic", "seed": args.seed, "size": args.size,
                "read_noise": args.read_noise, "shot_gain": args.shot_gain, "gamma": args.gamma}
    write_pair_dir(args.out, samples, fmt=args.format, manifest=manifest)
    print(f"wrote {len(samples)} pairs to {args.out}")
    return 0


def _optim(args, n_train: int) -> OptimConfig:
    epochs = args.epochs
    if epochs is None:
        # --steps alone runs as many epochs as it takes
        per_epoch = -(-n_train // args.batch)
        epochs = -(-args.steps // per_epoch) if args.steps else 1
    return OptimConfig(kind=args.optimizer, lr=args.lr, beta1=args.beta1, beta2=args.beta2,
                       batch=args.batch, epochs=epochs, seed=args.seed,
                       sgd_from_epoch=args.sgd_from_epoch)


def cmd_train(args) -> int:
    samples = _load_data(args)
    train_set, eval_set = _split(samples, args.seed, args.eval_fraction)
    if not train_set:
        raise CliError("training split is empty")
    model = _build_model(args)
    history, state = train(model, train_set, _optim(args, len(train_set)), max_steps=args.steps)
    out = Path(args.history) if args.history else Path(args.ckpt).with_suffix(".history.csv")
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "epoch", "loss", "mse"])
        for r in history:
            w.writerow([r.step, r.epoch, _fmt(r.loss), _fmt(r.mse)])
    save_checkpoint(model, args.ckpt, state)
    msg = f"trained {len(history)} steps; final loss {_fmt(history[-1].loss) if history else 'n/a'}"
    if eval_set:
        m = evaluate(model, eval_set)
        msg += f"; eval mse {_fmt(m['mse'])} ms_ssim {_fmt(m['ms_ssim'])}"
    print(msg)
    return 0


def cmd_eval(args) -> int:
    if not Path(args.ckpt).is_file():
        raise CliError(f"checkpoint not found: {args.ckpt}")
    model = load_checkpoint(args.ckpt)
    samples = load_pair_dir(args.data)
    if not samples:
        raise CliError(f"dataset {args.data} is empty")
    m = evaluate(model, samples)
    print(" ".join(f"{k}={_fmt(m[k])}" for k in ("mse", "psnr", "ssim", "ms_ssim")))
    return 0


def _sweep_point(job: dict) -> dict:
    cfg = HyperUNetConfig(job["n_fwd"], job["n_embed"], job["n_hid"])
    report = cost.count_network(describe_unet(cfg), SWEEP_REFERENCE_SHAPE)
    row = {"n_hid": job["n_hid"], "params": report.params, "flops": report.flops,
           "train_loss_final": float("nan"), "eval_mse": float("nan"), "eval_ms_ssim": float("nan")}
    if job["steps"] > 0:
        samples = (load_pair_dir(job["data"]) if job["data"]
                   else make_synthetic_dataset(job["synth"], job["synth_size"], seed=job["seed"]))
        train_set, eval_set = _split(samples, job["seed"], job["eval_fraction"])
        optim = OptimConfig(lr=job["lr"], batch=job["batch"], epochs=10 ** 9, seed=job["seed"])
        model = build_hyper_unet(cfg, seed=job["seed"])
        history, _ = train(model, train_set, optim, max_steps=job["steps"])
        row["train_loss_final"] = history[-1].loss
        metrics = evaluate(model, eval_set or train_set)
        row["eval_mse"], row["eval_ms_ssim"] = metrics["mse"], metrics["ms_ssim"]
    return row


def sweep_rows(n_hid_list, n_fwd=8, n_embed=8, steps=0, seed=0, data=None, synth=64, synth_size=64,
               lr=1e-3, batch=8, eval_fraction=0.1, workers=1) -> list[dict]:
    """One row per ``n_hid``; costs are at :data:`SWEEP_REFERENCE_SHAPE`."""
    if not n_hid_list:
        raise CliError("--n-hid-list is empty")
    jobs = [dict(n_fwd=n_fwd, n_embed=n_embed, n_hid=n, steps=steps, seed=seed, data=data, synth=synth,
                 synth_size=synth_size, lr=lr, batch=batch, eval_fraction=eval_fraction)
            for n in n_hid_list]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            return list(pool.map(_sweep_point, jobs))
    return [_sweep_point(j) for j in jobs]


def sweep_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([r["n_hid"], r["params"], r["flops"], _fmt(r["train_loss_final"]),
                    _fmt(r["eval_mse"]), _fmt(r["eval_ms_ssim"])])
    return buf.getvalue()


def _workers() -> int:
    raw = os.environ.get("HCKIT_THREADS")
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"HCKIT_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise CliError(f"HCKIT_THREADS must be a positive integer, got {raw!r}")
    return n


def cmd_sweep(args) -> int:
    try:
        grid = [int(v) for v in args.n_hid_list.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"--n-hid-list must be comma-separated integers, got {args.n_hid_list!r}") from None
    rows = sweep_rows(grid, args.n_fwd, args.n_embed, args.steps, args.seed, args.data, args.synth,
                      args.synth_size, args.lr, args.batch, args.eval_fraction, _workers())
    text = sweep_csv(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# parser


def _arch_flags(p: argparse.ArgumentParser, required: bool = False) -> None:
    p.add_argument("--arch", choices=("hyper", "plain"), default="hyper")
    p.add_argument("--n-fwd", type=int, required=required, default=None if required else 8)
    p.add_argument("--n-embed", type=int, default=8)
    p.add_argument("--n-hid", type=int, default=64)


def _data_flags(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", help="paired dataset directory")
    src.add_argument("--synth", type=int, metavar="N", help="generate N synthetic pairs in memory")
    p.add_argument("--synth-size", type=int, default=64, help="synthetic target side in pixels")
    p.add_argument("--eval-fraction", type=float, default=0.1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hckit", description="HyperConvolution toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("count", help="analytic FLOPs / params / activation memory")
    _arch_flags(p, required=True)
    p.add_argument("--input-h", type=int, required=True, help="packed RAW height")
    p.add_argument("--input-w", type=int, required=True, help="packed RAW width")
    p.add_argument("--format", choices=("table", "csv"), default="table")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("synth-data", help="write a synthetic paired dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=int, default=64, help="target side in pixels")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("f32", "png"), default="f32")
    p.add_argument("--read-noise", type=float, default=0.01)
    p.add_argument("--shot-gain", type=float, default=0.005)
    p.add_argument("--gamma", type=float, default=2.2)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _arch_flags(p)
    _data_flags(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--history", help="history CSV path (default: <ckpt>.history.csv)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--lr", type=float, default=5e-6)
    p.add_argument("--beta1", type=float, default=0.7)
    p.add_argument("--beta2", type=float, default=0.95)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--epochs", type=int, default=None, help="default: 1, or enough for --steps")
    p.add_argument("--steps", type=int, default=None, help="stop after this many steps")
    p.add_argument("--sgd-from-epoch", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="params/FLOPs/error across MLP widths")
    p.add_argument("--n-hid-list", default=",".join(map(str, DEFAULT_NHID_GRID)))
    p.add_argument("--n-fwd", type=int, default=8)
    p.add_argument("--n-embed", type=int, default=8)
    _data_flags(p)
    p.add_argument("--steps", type=int, default=0, help="training steps per point (0: costs only)")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    if args.command == "sweep" and args.data is None and args.synth is None:
        args.synth = 64
    try:
        return args.func(args)
    except (CliError, DatasetError, CheckpointError, cost.CostError, ValueError, OSError) as exc:
        msg = " ".join(str(exc).split())
        print(f"hckit: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
