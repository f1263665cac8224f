"""Command-line entry points.

Config files are plain "key = value" lines; keys prefixed ``model.`` map
onto the architecture config and keys prefixed ``train.`` onto the
training config (for example ``model.enc_dim = 192`` or
``train.epochs = 100``). Blank lines and lines starting with '#' are
ignored. Every run is reproducible from its --seed.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .. import __version__, _kernels
from ..model import (
    VIT_BASE,
    VIT_LARGE,
    ModelConfig,
    count_params,
    desk_config,
    flops_estimate,
    satmamba_base,
    vit_reference_params,
)
from .bench import bench_kernels, benchmark_scaling, linear_fit_r2
from .data import KINDS, gen_synthetic, load_corpus, write_tensor
from .finetune import (
    ChangeModel,
    finetune_change,
    finetune_segmentation,
    load_task_model,
    predict_tta,
)
from .metrics import damage_scores, segmentation_scores
from .pretrain import TrainConfig, ablate_directions, pretrain


class CliError(ValueError):
    pass


def parse_config_file(path) -> tuple:
    """Split a key=value config file into (model kwargs, train kwargs)."""
    model_kw, train_kw = {}, {}
    model_fields = {f.name: f for f in fields(ModelConfig)}
    train_fields = {f.name: f for f in fields(TrainConfig)}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise CliError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key = key.strip()
        value = value.strip()
        scope, _, name = key.partition(".")
        if scope == "model" and name in model_fields:
            model_kw[name] = _cast(value, name)
        elif scope == "train" and name in train_fields:
            train_kw[name] = _cast(value, name)
        else:
            raise CliError(f"{path}:{lineno}: unknown config key {key!r}")
    return model_kw, train_kw


def _cast(value: str, name: str):
    if name == "directions":
        return tuple(v.strip() for v in value.split(",") if v.strip())
    if name == "use_pos_enc":
        return value.lower() in ("1", "true", "yes")
    if name in ("mask_ratio", "base_lr", "weight_decay", "val_fraction"):
        return float(value)
    return int(value)


def _model_config(args, **defaults) -> ModelConfig:
    model_kw, _ = parse_config_file(args.config) if args.config else ({}, {})
    merged = dict(defaults)
    merged.update(model_kw)
    return desk_config(**merged)


def _train_config(args, **defaults) -> TrainConfig:
    _, train_kw = parse_config_file(args.config) if args.config else ({}, {})
    merged = dict(defaults)
    merged.update(train_kw)
    if args.seed is not None:
        merged["seed"] = args.seed
    return TrainConfig(**merged)


def _named_config(name: str) -> ModelConfig:
    table = {"desk": desk_config, "base": satmamba_base,
             "satmamba-b": satmamba_base}
    if name not in table:
        raise CliError(f"unknown architecture {name!r}; expected one of "
                       f"{sorted(table)}")
    return table[name]()


# -- subcommands ----------------------------------------------------------------


def cmd_gen(args):
    corpus = gen_synthetic(args.kind, args.n, args.size, args.seed or 0, args.out)
    print(f"wrote {len(corpus)} {args.kind} samples to {corpus.root}")
    return 0


def cmd_pretrain(args):
    corpus = load_corpus(args.corpus)
    cfg = _model_config(args)
    tc = _train_config(args)
    summary = pretrain(cfg, corpus, tc, args.out, resume=args.resume)
    print(f"epochs run: {summary['epochs_run']}")
    print(f"first/final train loss: {summary['first_train_loss']:.4f} / "
          f"{summary['final_train_loss']:.4f}")
    print(f"best val loss: {summary['best_val_loss']:.4f} "
          f"(epoch {summary['best_epoch']})")
    print(f"checkpoints: {summary['checkpoint']} , {summary['latest']}")
    return 0


def cmd_ablate(args):
    corpus = load_corpus(args.corpus)
    cfg = _model_config(args)
    tc = _train_config(args)
    sets = [tuple(s.split("+")) for s in args.sets.split("|")]
    seeds = [int(s) for s in args.seeds.split(",")]
    results = ablate_directions(cfg, corpus, tc, sets, seeds, args.out)
    for name, r in results.items():
        print(f"{name}: mean final val loss {r['mean_val_loss']:.4f} "
              f"(seeds {seeds})")
    return 0


def cmd_finetune_seg(args):
    corpus = load_corpus(args.corpus)
    cfg = None if args.ckpt else _model_config(args)
    tc = _train_config(args, epochs=15, base_lr=1e-3, warmup_epochs=2)
    res = finetune_segmentation(args.ckpt, corpus, tc, args.out, model_cfg=cfg,
                                use_tta=not args.no_tta)
    ious = " ".join(f"{v:.3f}" for v in res["iou_per_class"])
    print(f"per-class IoU: {ious}")
    print(f"mIoU: {res['miou']:.4f}")
    return 0


def cmd_finetune_cd(args):
    corpus = load_corpus(args.corpus)
    cfg = None if args.ckpt else _model_config(args)
    tc = _train_config(args, epochs=15, base_lr=1e-3, warmup_epochs=2)
    res = finetune_change(args.ckpt, corpus, tc, args.out, model_cfg=cfg,
                          use_tta=not args.no_tta)
    print(f"F1_loc: {res['f1_loc']:.4f}  F1_clf: {res['f1_clf']:.4f}  "
          f"F1_overall: {res['f1_overall']:.4f}")
    return 0


def cmd_predict(args):
    model = load_task_model(args.ckpt)
    corpus = load_corpus(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    weights = None
    if args.tta_weights:
        weights = [float(w) for w in args.tta_weights.split(",")]
    indices = ([int(i) for i in args.index.split(",")]
               if args.index else range(len(corpus)))
    if isinstance(model, ChangeModel):
        loc_preds, loc_labels, dmg_preds, dmg_labels = [], [], [], []
        for i in indices:
            s = corpus.load(i)
            loc = predict_tta(lambda a, b: model.probability_pair(a, b)[0],
                              (s["pre"], s["post"]), weights)
            dmg = predict_tta(lambda a, b: model.probability_pair(a, b)[1],
                              (s["pre"], s["post"]), weights)
            write_tensor(out / f"loc_{i:04d}.smtn", loc.astype(np.float32))
            write_tensor(out / f"damage_{i:04d}.smtn", dmg.astype(np.float32))
            loc_preds.append(loc)
            dmg_preds.append(dmg)
            loc_labels.append(s["loc"])
            dmg_labels.append(s["damage"])
        scores = damage_scores(loc_preds, loc_labels, dmg_preds, dmg_labels,
                               corpus.n_classes)
        print(f"F1_loc {scores['f1_loc']:.4f}  F1_clf {scores['f1_clf']:.4f}  "
              f"F1_overall {scores['f1_overall']:.4f}")
    else:
        preds, labels = [], []
        for i in indices:
            s = corpus.load(i)
            pred = predict_tta(model.probabilities, s["image"], weights)
            write_tensor(out / f"pred_{i:04d}.smtn", pred.astype(np.float32))
            preds.append(pred)
            if "label" in s:
                labels.append(s["label"])
        if labels:
            scores = segmentation_scores(preds, labels, corpus.n_classes)
            print(f"mIoU {scores['miou']:.4f}")
    print(f"predictions written to {out}")
    return 0


def cmd_benchmark(args):
    sizes = [int(s) for s in args.sizes.split(",")]
    cfg = _model_config(args)
    rows = benchmark_scaling(sizes, cfg, args.out, repeats=args.repeats)
    ok = [r for r in rows if not r["failed"]]
    print(f"{'size':>6} {'tokens':>7} {'flops':>12} {'seconds':>10}")
    for r in rows:
        sec = f"{r['seconds']:.4f}" if r["seconds"] is not None else "OOM"
        print(f"{r['size']:>6} {r['tokens']:>7} {r['satmamba_flops']:>12} {sec:>10}")
    if len(ok) >= 3:
        r2 = linear_fit_r2([r["tokens"] for r in ok], [r["seconds"] for r in ok])
        print(f"time-vs-tokens linear fit R^2: {r2:.4f}")
    lens = [int(s) for s in args.kernel_lengths.split(",")] if args.kernel_lengths \
        else [256, 1024, 4096]
    kr = bench_kernels(lens, args.out)
    print(f"kernel comparison (backend: {_kernels.BACKEND}) -> "
          f"{Path(args.out) / 'kernels.csv'}")
    for row in kr:
        print(f"  L={row['L']:>6} {row['impl']:<18} {row['seconds'] * 1e3:9.2f} ms")
    return 0


def cmd_gradcheck(args):
    # tiny but complete sweep: primitives, the block, one multiway layer,
    # and the end-to-end masked autoencoder
    from ..ndgrad import OPS, Rng, Tensor, grad_check
    import satmamba.ndgrad as ng
    from ..geometry import traversal_order
    from ..model import forward_loss, init_model
    from ..ssm import init_block, mamba_block_forward
    from ..model.network import multiway_layer_forward

    rng = Rng(args.seed or 0)
    failures = []

    def report(name, err, tol=1e-4):
        status = "ok" if err < tol else "FAIL"
        print(f"{name:<28} max rel err {err:10.3e}  {status}")
        if err >= tol:
            failures.append(name)

    x0 = Tensor(rng.normal((3, 5)), dtype=np.float64)
    w = Tensor(rng.normal((3, 5)), dtype=np.float64)
    unary = {"exp": ng.exp, "softplus": ng.softplus, "sigmoid": ng.sigmoid,
             "silu": ng.silu, "rmsnorm": ng.rmsnorm, "layernorm": ng.layernorm,
             "log_softmax": ng.log_softmax}
    for name, fn in unary.items():
        report(name, grad_check(lambda t: ng.mul(fn(t), w).sum(), x0))
    w2 = Tensor(rng.normal((5, 2)), dtype=np.float64)
    report("matmul", grad_check(lambda t: ng.matmul(t, w2).sum(), x0))
    report("mul+add", grad_check(lambda t: (ng.mul(t, w) + t).sum(), x0))

    blk = init_block(8, 4, 4, Rng(5), dtype=np.float64)
    xb = Tensor(Rng(6).normal((6, 8)), dtype=np.float64)
    report("mamba_block", grad_check(
        lambda t: mamba_block_forward(t, blk, chunk_size=3).sum(), xb))

    blocks = [init_block(8, 4, 4, Rng(7 + i), dtype=np.float64) for i in range(2)]
    travs = [traversal_order(2, 3, d) for d in ("row-fwd", "col-bwd")]
    report("multiway_layer", grad_check(
        lambda t: multiway_layer_forward(t, blocks, travs).sum(), xb))

    cfg = desk_config(enc_dim=16, enc_depth=2, dec_dim=8, dec_depth=1,
                      state_dim=4, head_dim=8)
    params = init_model(cfg, seed=1)
    for _, p in params.named_parameters():
        p.data = p.data.astype(np.float64)
    img64 = Rng(8).normal((3, 32, 32))
    orig_mask_token = params.mask_token

    def f_mask_token(t):
        params.mask_token = t
        loss, _, _ = forward_loss(img64, 3, cfg, params)
        return loss

    err = grad_check(f_mask_token, Tensor(orig_mask_token.data.copy()))
    params.mask_token = orig_mask_token
    report("mae_end_to_end(mask_token)", err)
    if failures:
        print(f"FAILED: {', '.join(failures)}")
        return 1
    print("all gradient checks passed")
    return 0


def cmd_params(args):
    cfg = _named_config(args.arch) if args.arch else _model_config(args)
    counts = count_params(cfg)
    print(f"{'component':<16} {'parameters':>14}")
    for key in ("patch_embed", "encoder_block", "encoder_layer", "encoder",
                "dec_embed", "mask_token", "decoder_block", "decoder_layer",
                "decoder", "head", "total"):
        print(f"{key:<16} {counts[key]:>14,}")
    vit_b = vit_reference_params(**VIT_BASE)
    vit_l = vit_reference_params(**VIT_LARGE)
    print(f"\ntransformer reference totals: base {vit_b['total']:,} / "
          f"large {vit_l['total']:,}")
    print(f"block ratio vs base block: "
          f"{counts['encoder_block'] / vit_b['encoder_block']:.3f}")
    print(f"total ratio vs base total: {counts['total'] / vit_b['total']:.3f}")
    return 0


def cmd_flops(args):
    cfg = _named_config(args.arch) if args.arch else _model_config(args)
    size = args.size
    ours = flops_estimate(cfg, size, size, "satmamba")
    vit_b = flops_estimate(ModelConfig(**VIT_BASE), size, size, "vit-reference")
    vit_l = flops_estimate(ModelConfig(**VIT_LARGE, head_dim=64), size, size,
                           "vit-reference")
    print(f"input {size}x{size}: tokens {(size // cfg.patch_size) ** 2}")
    print(f"this config:          {ours:>16,} FLOPs")
    print(f"transformer-B ref:    {vit_b:>16,} FLOPs   (ratio {ours / vit_b:.2f})")
    print(f"transformer-L ref:    {vit_l:>16,} FLOPs   (ratio {ours / vit_l:.2f})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="satmamba",
                                description="masked-autoencoder pretraining on "
                                            "multi-directional selective scans")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", required=out_required, help="output directory")

    sp = sub.add_parser("gen", help="generate a synthetic corpus")
    sp.add_argument("--kind", choices=KINDS, required=True)
    sp.add_argument("--n", type=int, default=32)
    sp.add_argument("--size", type=int, default=64)
    common(sp)
    sp.set_defaults(fn=cmd_gen)

    sp = sub.add_parser("pretrain", help="masked-autoencoder pretraining")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--resume", help="checkpoint to continue from")
    common(sp)
    sp.set_defaults(fn=cmd_pretrain)

    sp = sub.add_parser("ablate", help="scan-direction ablation")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--sets", default="row-fwd|row-fwd+row-bwd+col-fwd+col-bwd",
                    help="direction sets, '|' between sets, '+' within")
    sp.add_argument("--seeds", default="0,1,2")
    common(sp)
    sp.set_defaults(fn=cmd_ablate)

    sp = sub.add_parser("finetune-seg", help="semantic segmentation fine-tune")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--ckpt", help="pretraining checkpoint (omit to train "
                                   "from scratch)")
    sp.add_argument("--no-tta", action="store_true")
    common(sp)
    sp.set_defaults(fn=cmd_finetune_seg)

    sp = sub.add_parser("finetune-cd", help="change-detection fine-tune")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--ckpt")
    sp.add_argument("--no-tta", action="store_true")
    common(sp)
    sp.set_defaults(fn=cmd_finetune_cd)

    sp = sub.add_parser("predict", help="run a fine-tuned model with TTA")
    sp.add_argument("--ckpt", required=True, help="task model checkpoint")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--index", help="comma-separated sample indices (default all)")
    sp.add_argument("--tta-weights", help="4 comma-separated weights summing to 1")
    common(sp)
    sp.set_defaults(fn=cmd_predict)

    sp = sub.add_parser("benchmark", help="forward-time and FLOP scaling")
    sp.add_argument("--sizes", default="64,96,128,192,256")
    sp.add_argument("--repeats", type=int, default=5)
    sp.add_argument("--kernel-lengths", default=None)
    common(sp)
    sp.set_defaults(fn=cmd_benchmark)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_gradcheck)

    sp = sub.add_parser("params", help="parameter counts and ratios")
    sp.add_argument("--arch", help="named config: desk | base")
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(fn=cmd_params)

    sp = sub.add_parser("flops", help="analytic forward FLOPs")
    sp.add_argument("--arch", help="named config: desk | base")
    sp.add_argument("--size", type=int, default=224)
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(fn=cmd_flops)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
