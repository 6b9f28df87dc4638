"""Batch command-line interface.

Subcommands: synth, train, eval, infer, gradcheck, bench.  Exit codes:
0 success, 1 usage error, 2 data error, 3 numeric failure.  Every run that
takes --out writes a flat key=value ``config.resolved`` so the run can be
reproduced from the output directory alone.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time

import numpy as np

from . import data_io, metrics, model as model_mod, training
from . import tensor as T
from .tensor import Tensor

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class DataError(Exception):
    pass


def _parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"size must look like 64x64, got {text!r}") from exc


def _parse_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = text.split(",")
        return int(lo), int(hi)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"range must look like 1,3 got {text!r}") from exc


def _parse_mask(text: str) -> tuple[bool, ...]:
    if len(text) != 4 or any(c not in "01" for c in text):
        raise argparse.ArgumentTypeError(f"stage mask must be 4 binary digits, got {text!r}")
    return tuple(c == "1" for c in text)


def _write_resolved(out_dir: str, items: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.resolved"), "w", encoding="utf-8") as fh:
        for k in sorted(items):
            fh.write(f"{k}={items[k]}\n")


def _config_items(cfg: model_mod.ModelConfig) -> dict:
    return {
        "model.input_hw": "x".join(map(str, cfg.input_hw)),
        "model.rgb_stage_channels": ",".join(map(str, cfg.rgb_stage_channels)),
        "model.depth_stage_channels": ",".join(map(str, cfg.depth_stage_channels)),
        "model.cam_channels": ",".join(map(str, cfg.cam_channels)),
        "model.num_heads": cfg.num_heads,
        "model.sfe_stage_mask": "".join("1" if b else "0" for b in cfg.sfe_stage_mask),
        "model.cam": "enabled" if cfg.use_cam else "disabled",
        "model.upsample_mode": cfg.upsample_mode,
        "model.pool_kind": cfg.pool_kind,
        "model.width_preset": cfg.width_preset,
        "model.stem_channels": cfg.stem_channels,
        "model.expansion": cfg.expansion,
        "model.blocks_per_stage": cfg.blocks_per_stage,
    }


def _build_config(args) -> model_mod.ModelConfig:
    cfg = model_mod.make_config(args.preset)
    if getattr(args, "no_cam", False):
        cfg = model_mod.ablation_variant(cfg, "no_cam")
    if getattr(args, "no_sfe", False):
        cfg = model_mod.ablation_variant(cfg, "no_sfe")
    if getattr(args, "sfe_stages", None) is not None:
        cfg = model_mod.ablation_variant(cfg, "sfe_stage_mask", args.sfe_stages)
    if getattr(args, "lpm_width", None) is not None:
        cfg = model_mod.ablation_variant(cfg, "lpm_width", args.lpm_width)
    if getattr(args, "upsample", None) is not None:
        cfg = model_mod.ablation_variant(cfg, "upsample_mode", args.upsample)
    return cfg


def _load_samples(manifest: str):
    samples, binarized = data_io.load_manifest(manifest)
    if binarized:
        print(f"warning: binarized {binarized} non-bilevel mask(s) at threshold 128", file=sys.stderr)
    return samples


def _sample_tensors(sample: data_io.Sample):
    rgb, depth, mask = sample.as_float()
    return (
        Tensor(np.ascontiguousarray(rgb.transpose(2, 0, 1))[None]),
        Tensor(depth[None, None]),
        mask,
    )


def _predict(model, sample: data_io.Sample) -> np.ndarray:
    rgb, depth, _ = _sample_tensors(sample)
    with T.no_grad():
        pred = model(rgb, depth)
    return pred.data[0, 0]


# -- subcommands --------------------------------------------------------------------


def cmd_synth(args) -> int:
    if os.path.isdir(args.out) and os.listdir(args.out) and not args.force:
        raise DataError(f"output dir {args.out} is not empty (use --force)")
    spec = data_io.SynthSpec(size=args.size, n_samples=args.n, defect_count_range=args.defects, seed=args.seed)
    samples = data_io.synth_generate(spec)
    manifest = data_io.write_dataset(samples, args.out)
    _write_resolved(args.out, {
        "synth.size": "x".join(map(str, args.size)),
        "synth.n": args.n,
        "synth.defects": ",".join(map(str, args.defects)),
        "synth.seed": args.seed,
    })
    print(f"wrote {len(samples)} samples ({3 * len(samples)} image files) to {args.out}")
    print(f"manifest: {manifest}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _build_config(args)
    samples = _load_samples(args.data)
    if not samples:
        raise DataError(f"manifest {args.data} is empty")
    floats = [s.as_float() for s in samples]
    h, w = cfg.input_hw
    for s in samples:
        if s.mask.shape != (h, w):
            raise DataError(f"sample {s.id!r} is {s.mask.shape}, model expects {h}x{w}")
    net = model_mod.build_model(cfg, seed=args.seed)
    plan = training.TrainPlan(
        epochs=args.epochs,
        batch_size=args.batch,
        seed=args.seed,
        eval_every=args.eval_every,
        checkpoint_every=args.checkpoint_every,
        augment=training.AugmentSpec() if args.augment else training.AugmentSpec.identity(),
    )
    os.makedirs(args.out, exist_ok=True)
    _write_resolved(args.out, {
        **_config_items(cfg),
        "train.data": os.path.abspath(args.data),
        "train.preset": args.preset,
        "train.epochs": plan.epochs,
        "train.batch": plan.batch_size,
        "train.seed": plan.seed,
        "train.lr_base": plan.lr_base,
        "train.weight_decay": plan.weight_decay,
        "train.augment": "on" if args.augment else "off",
    })

    eval_samples = _load_samples(args.eval_data) if args.eval_data else samples

    def eval_fn(net_):
        net_.eval()
        pairs = [(_predict(net_, s), (s.mask > 127).astype(np.uint8)) for s in eval_samples]
        net_.train()
        return metrics.evaluate_pairs(pairs).as_dict()

    def checkpoint_fn(net_, epoch):
        data_io.save_checkpoint(net_.state(), os.path.join(args.out, f"checkpoint_{epoch:04d}.lpca"))
        data_io.save_checkpoint(net_.state(), os.path.join(args.out, "checkpoint_last.lpca"))

    history = training.train_loop(
        net, floats, plan, out_dir=args.out, eval_fn=eval_fn, checkpoint_fn=checkpoint_fn,
        log_hook=lambda e, s, lr, loss, m: print(
            f"epoch {e} step {s} lr {lr:.3g} loss {loss:.5f} IoU {m.get('IoU', float('nan')):.4f}"
        ),
    )
    print(f"final train loss: {history[-1]:.6f}")
    print(f"checkpoints and train_log.csv under {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    samples = _load_samples(args.data)
    if not samples:
        raise DataError(f"manifest {args.data} is empty")
    state = data_io.load_checkpoint(args.checkpoint)
    cfg = _build_config(args)
    net = model_mod.build_model(cfg, seed=0)
    net.load_state(state)
    net.eval()
    os.makedirs(args.out, exist_ok=True)
    _write_resolved(args.out, {**_config_items(cfg), "eval.data": os.path.abspath(args.data),
                               "eval.checkpoint": os.path.abspath(args.checkpoint)})
    pairs = []
    rows = []
    for s in samples:
        pred = _predict(net, s)
        gt = (s.mask > 127).astype(np.uint8)
        pairs.append((pred, gt))
        rows.append([s.id, metrics.mae(pred, gt), metrics.iou(pred, gt), metrics.max_f_measure(pred, gt),
                     metrics.max_e_measure(pred, gt), metrics.s_measure(pred, gt)])
        data_io.write_pgm(np.clip(np.rint(pred * 255), 0, 255).astype(np.uint8),
                          os.path.join(args.out, f"{s.id}_pred.pgm"))
    report = metrics.evaluate_pairs(pairs)
    with open(os.path.join(args.out, "metrics.csv"), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["id", "MAE", "IoU", "maxF", "maxE", "S"])
        for row in rows:
            wr.writerow([row[0]] + [f"{v:.6f}" for v in row[1:]])
        wr.writerow(["DATASET", f"{report.MAE:.6f}", f"{report.IoU:.6f}", f"{report.maxF:.6f}",
                     f"{report.maxE:.6f}", f"{report.S:.6f}"])
    with open(os.path.join(args.out, "pr_curve.csv"), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["threshold", "precision", "recall"])
        for t, p, r in report.pr_curve:
            wr.writerow([f"{t:.6f}", f"{p:.6f}", f"{r:.6f}"])
    with open(os.path.join(args.out, "roc_curve.csv"), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["threshold", "fpr", "tpr"])
        for t, f_, r in report.roc_curve:
            wr.writerow([f"{t:.6f}", f"{f_:.6f}", f"{r:.6f}"])
    print(f"mAP {report.mAP:.4f}  IoU {report.IoU:.4f}  MAE {report.MAE:.4f}  "
          f"maxF {report.maxF:.4f}  maxE {report.maxE:.4f}  S {report.S:.4f}")
    return EXIT_OK


def cmd_infer(args) -> int:
    rgb = data_io.read_ppm(args.rgb)
    depth = data_io.read_pgm(args.depth)
    if rgb.shape[:2] != depth.shape:
        raise DataError(f"rgb {rgb.shape[:2]} and depth {depth.shape} sizes differ")
    state = data_io.load_checkpoint(args.checkpoint)
    cfg = _build_config(args)
    net = model_mod.build_model(cfg, seed=0)
    net.load_state(state)
    net.eval()
    sample = data_io.Sample("infer", rgb, depth, np.zeros(depth.shape, dtype=np.uint8))
    pred = _predict(net, sample)
    data_io.write_pgm(np.clip(np.rint(pred * 255), 0, 255).astype(np.uint8), args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_gradcheck_suite

    rows = run_gradcheck_suite(ops=args.ops, tolerance=args.tolerance, seed=args.seed,
                               inject_fault=args.inject_fault)
    width = max(len(r[0]) for r in rows)
    failed = 0
    for name, err, ok in rows:
        status = "pass" if ok else "FAIL"
        print(f"{name:<{width}}  max-rel-err {err:.3e}  {status}")
        failed += 0 if ok else 1
    if failed:
        print(f"{failed} op(s) above tolerance {args.tolerance:g}")
        return EXIT_NUMERIC
    print(f"all {len(rows)} ops within tolerance {args.tolerance:g}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = model_mod.make_config(args.preset, input_hw=args.input) if args.input else model_mod.make_config(args.preset)
    params, macs = model_mod.count_params_flops(cfg)
    print(f"preset {args.preset} input {cfg.input_hw[0]}x{cfg.input_hw[1]}")
    print(f"parameters: {params:,} ({params / 1e6:.2f} M)")
    print(f"mult-adds per image: {macs:,} ({macs / 1e9:.2f} G)")
    print("reference baseline for this architecture family: 9.90 M params / 2.50 G; "
          "exact parity is not expected (head widths and fusion plumbing are implementation choices)")
    net = model_mod.build_model(cfg, seed=0)
    net.eval()
    h, w = cfg.input_hw
    rgb = Tensor(np.zeros((1, 3, h, w), dtype=np.float32))
    depth = Tensor(np.zeros((1, 1, h, w), dtype=np.float32))
    with T.no_grad():
        for _ in range(3):
            net(rgb, depth)
        times = []
        for _ in range(args.runs):
            t0 = time.perf_counter()
            net(rgb, depth)
            times.append(time.perf_counter() - t0)
    med = sorted(times)[len(times) // 2]
    print(f"median forward latency over {args.runs} runs: {med * 1e3:.1f} ms ({1.0 / med:.2f} fps)")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=("paper", "tiny"), default="tiny")
    p.add_argument("--no-cam", action="store_true", help="replace cross-attention with concat fusion")
    p.add_argument("--no-sfe", action="store_true", help="disable the spatial feature extractor everywhere")
    p.add_argument("--sfe-stages", type=_parse_mask, default=None, metavar="MASK",
                   help="4-digit stage mask, e.g. 1000")
    p.add_argument("--lpm-width", type=int, default=None, metavar="C1",
                   help="initial depth-pyramid channel width (doubles per stage)")
    p.add_argument("--upsample", choices=model_mod.UPSAMPLE_MODES, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lpcanet", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic RGB-D defect dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=_parse_size, default=(64, 64))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--defects", type=_parse_range, default=(1, 3))
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a manifest dataset")
    p.add_argument("--data", required=True, metavar="MANIFEST")
    p.add_argument("--eval-data", default=None, metavar="MANIFEST")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-every", type=int, default=10)
    p.add_argument("--checkpoint-every", type=int, default=10)
    p.add_argument("--augment", action="store_true", help="enable data augmentation")
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest dataset")
    p.add_argument("--data", required=True, metavar="MANIFEST")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    _add_model_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="segment one RGB-D pair")
    p.add_argument("--rgb", required=True)
    p.add_argument("--depth", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    _add_model_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    p.add_argument("--ops", default="all", help="'all' or comma-separated op names")
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", action="store_true",
                   help="add a deliberately broken backward to prove the checker catches it")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="parameter / mult-add / latency report")
    p.add_argument("--preset", choices=("paper", "tiny"), default="paper")
    p.add_argument("--input", type=_parse_size, default=None)
    p.add_argument("--runs", type=int, default=20)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (DataError, FileNotFoundError, data_io.NetpbmError, data_io.CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (training.NonFiniteLossError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
