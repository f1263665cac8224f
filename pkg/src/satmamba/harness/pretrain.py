"""Masked-autoencoder pretraining loop and the scan-direction ablation.

Every stochastic choice is derived from counter-based streams of
(seed, epoch, sample), so a run is bit-reproducible and a resumed run
continues exactly where the checkpoint left off. Masks are fresh per
image per epoch; validation masks are fixed per sample so epoch-to-epoch
validation losses are comparable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..model import (
    ModelConfig,
    forward_loss,
    init_model,
    load_checkpoint,
    params_from_checkpoint,
    params_to_arrays,
    save_checkpoint,
)
from ..ndgrad import Rng, backward, concat, no_grad
from .data import Corpus
from .metrics import MetricsRow, write_metrics_csv
from .optim import AdamW, lr_at_epoch


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 8
    base_lr: float = 2e-3
    warmup_epochs: int = 20
    weight_decay: float = 0.05
    seed: int = 0
    mask_ratio: float = 0.75
    patience: int = 0          # 0 disables early stopping
    val_fraction: float = 0.2
    chunk_size: int = 64
    stop_after: int = 0        # cap on epochs this session (0 = to the end);
                               # the lr schedule still spans `epochs`

    def __post_init__(self):
        if self.warmup_epochs > self.epochs:
            raise ValueError("warmup_epochs must not exceed epochs")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")


def split_indices(n: int, val_fraction: float):
    n_val = int(round(n * val_fraction))
    n_val = min(max(n_val, 1 if val_fraction > 0 and n > 1 else 0), n - 1)
    return list(range(n - n_val)), list(range(n - n_val, n))


def normalize_image(img: np.ndarray, mean: np.ndarray, std: np.ndarray):
    return ((img - mean[:, None, None]) / std[:, None, None]).astype(np.float32)


class PretrainRun:
    """Owns the model, optimizer, and data plumbing for one run."""

    def __init__(self, model_cfg: ModelConfig, corpus: Corpus,
                 train_cfg: TrainConfig, out_dir, resume=None):
        if corpus.kind != "pretrain":
            raise ValueError(f"pretraining needs a 'pretrain' corpus, got "
                             f"{corpus.kind!r}")
        self.corpus = corpus
        self.cfg = replace(model_cfg, mask_ratio=train_cfg.mask_ratio)
        self.tc = train_cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.train_idx, self.val_idx = split_indices(len(corpus),
                                                     train_cfg.val_fraction)
        self.root_rng = Rng(train_cfg.seed)
        self.start_epoch = 0
        self.rows = []

        if resume is not None:
            ck = load_checkpoint(resume)
            self.cfg = ck.config
            self.params = params_from_checkpoint(ck)
            self.mean = ck.arrays["norm.mean"]
            self.std = ck.arrays["norm.std"]
            self.opt = self._make_opt()
            self.opt.load_state_arrays(ck.arrays)
            self.start_epoch = int(ck.rng_states["epoch"])
        else:
            self.params = init_model(self.cfg, seed=train_cfg.seed)
            self.mean, self.std = corpus.image_stats(self.train_idx)
            self.opt = self._make_opt()

        self.images = [normalize_image(corpus.load(i)["image"], self.mean,
                                       self.std) for i in range(len(corpus))]

    def _make_opt(self):
        return AdamW(self.params.named_parameters(), lr=self.tc.base_lr,
                     weight_decay=self.tc.weight_decay)

    def _epoch_losses(self, epoch: int):
        order = [self.train_idx[j] for j in
                 self.root_rng.stream("order", epoch).shuffled(len(self.train_idx))]
        self.opt.lr = lr_at_epoch(epoch, self.tc.epochs, self.tc.warmup_epochs,
                                  self.tc.base_lr)
        total = 0.0
        for start in range(0, len(order), self.tc.batch_size):
            batch = order[start:start + self.tc.batch_size]
            losses = []
            for idx in batch:
                mask_rng = self.root_rng.stream("mask", epoch * len(self.corpus) + idx)
                loss, _, _ = forward_loss(self.images[idx], mask_rng, self.cfg,
                                          self.params, self.tc.chunk_size)
                losses.append(loss.reshape((1,)))
            batch_loss = concat(losses, axis=0).mean()
            backward(batch_loss)
            self.opt.step()
            self.opt.zero_grad()
            total += batch_loss.item() * len(batch)
        return total / len(order)

    def _val_loss(self):
        if not self.val_idx:
            return None
        total = 0.0
        with no_grad():
            for idx in self.val_idx:
                mask_rng = self.root_rng.stream("val-mask", idx)
                loss, _, _ = forward_loss(self.images[idx], mask_rng, self.cfg,
                                          self.params, self.tc.chunk_size)
                total += loss.item()
        return total / len(self.val_idx)

    def _save(self, path, epoch: int):
        arrays = params_to_arrays(self.params)
        arrays.update(self.opt.state_arrays())
        arrays["norm.mean"] = self.mean
        arrays["norm.std"] = self.std
        save_checkpoint(path, self.cfg, arrays, step=self.opt.step_count,
                        rng_states={"seed": self.tc.seed, "epoch": epoch})

    def run(self) -> dict:
        best_val = np.inf
        best_epoch = -1
        since_best = 0
        first_train = None
        last_train = None
        stop = self.tc.epochs
        if self.tc.stop_after:
            stop = min(stop, self.start_epoch + self.tc.stop_after)
        for epoch in range(self.start_epoch, stop):
            t0 = time.perf_counter()
            train_loss = self._epoch_losses(epoch)
            val_loss = self._val_loss()
            wall = time.perf_counter() - t0
            if first_train is None:
                first_train = train_loss
            last_train = train_loss
            self.rows.append(MetricsRow(epoch=epoch, split="train",
                                        loss=train_loss, wall_s=wall))
            if val_loss is not None:
                self.rows.append(MetricsRow(epoch=epoch, split="val",
                                            loss=val_loss))
            self._save(self.out / "ckpt_latest.smck", epoch + 1)
            monitored = val_loss if val_loss is not None else train_loss
            if monitored < best_val:
                best_val = monitored
                best_epoch = epoch
                since_best = 0
                self._save(self.out / "ckpt_best.smck", epoch + 1)
            else:
                since_best += 1
                if self.tc.patience and since_best >= self.tc.patience:
                    break
        write_metrics_csv(self.out / "metrics.csv", self.rows)
        return {"first_train_loss": first_train, "final_train_loss": last_train,
                "best_val_loss": float(best_val), "best_epoch": best_epoch,
                "epochs_run": len({r.epoch for r in self.rows}),
                "checkpoint": str(self.out / "ckpt_best.smck"),
                "latest": str(self.out / "ckpt_latest.smck")}


def pretrain(model_cfg: ModelConfig, corpus: Corpus, train_cfg: TrainConfig,
             out_dir, resume=None) -> dict:
    return PretrainRun(model_cfg, corpus, train_cfg, out_dir, resume).run()


def ablate_directions(model_cfg: ModelConfig, corpus: Corpus,
                      train_cfg: TrainConfig, direction_sets, seeds,
                      out_dir) -> dict:
    """Train one model per direction set per seed under one schedule and
    compare final validation losses."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not direction_sets:
        raise ValueError("at least one direction set is required")
    results = {}
    lines = ["directions,seed,final_val_loss"]
    for dirs in direction_sets:
        if not dirs:
            raise ValueError("empty direction set")
        name = "+".join(dirs)
        vals = []
        for seed in seeds:
            cfg = replace(model_cfg, directions=tuple(dirs))
            tc = replace(train_cfg, seed=seed)
            run_dir = out / f"{name.replace('+', '_')}_s{seed}"
            summary = pretrain(cfg, corpus, tc, run_dir)
            vals.append(summary["best_val_loss"])
            lines.append(f"{name},{seed},{vals[-1]:.9g}")
        results[name] = {"val_losses": vals, "mean_val_loss": float(np.mean(vals))}
    (out / "ablation.csv").write_text("\n".join(lines) + "\n")
    return results
