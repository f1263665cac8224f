"""Dense-prediction fine-tuning on top of the pretrained encoder.

Both tasks run the encoder unmasked and attach upsampling heads:

* segmentation: one head, per-pixel cross-entropy over the class map;
* change detection: a shared (siamese) encoder over pre/post images, a
  binary localization head on pre-image features, and a damage head on
  the concatenated pair, trained with the sum of the two cross-entropies.

Heads are 4 stages of (2x nearest-neighbor upsample, channel-reducing
linear, SiLU), taking the 1/16-resolution token grid back to pixels.
Test-time augmentation averages class probabilities over the four
axis-aligned spatial symmetries.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..model import (
    ModelConfig,
    encode,
    init_model,
    load_checkpoint,
    params_from_checkpoint,
    params_to_arrays,
    save_checkpoint,
)
from ..ndgrad import Rng, Tensor, backward, concat, gather, log_softmax, matmul, neg, no_grad, silu
from .data import Corpus
from .metrics import MetricsRow, damage_scores, segmentation_scores, write_metrics_csv
from .optim import AdamW, lr_at_epoch
from .pretrain import TrainConfig, normalize_image, split_indices

HEAD_DEPTH = 4
MIN_HEAD_DIM = 16


@dataclass
class UpsampleHead:
    """Stage weights for the token-grid-to-pixels decoder."""

    stages: list   # [(w, b), ...] length HEAD_DEPTH
    out_w: Tensor
    out_b: Tensor

    def named(self, prefix: str):
        for i, (w, b) in enumerate(self.stages):
            yield f"{prefix}.stage{i}.w", w
            yield f"{prefix}.stage{i}.b", b
        yield f"{prefix}.out.w", self.out_w
        yield f"{prefix}.out.b", self.out_b


def head_stage_dims(in_dim: int) -> list:
    dims = []
    d = in_dim
    for _ in range(HEAD_DEPTH):
        d = max(MIN_HEAD_DIM, d // 2)
        dims.append(d)
    return dims


def init_head(in_dim: int, n_classes: int, rng: Rng, dtype=np.float32) -> UpsampleHead:
    stages = []
    d_in = in_dim
    for i, d_out in enumerate(head_stage_dims(in_dim)):
        w = Tensor(rng.stream(f"stage{i}").trunc_normal((d_in, d_out), std=0.02,
                                                        dtype=dtype),
                   requires_grad=True)
        b = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)
        stages.append((w, b))
        d_in = d_out
    out_w = Tensor(rng.stream("out").trunc_normal((d_in, n_classes), std=0.02,
                                                  dtype=dtype), requires_grad=True)
    out_b = Tensor(np.zeros(n_classes, dtype=dtype), requires_grad=True)
    return UpsampleHead(stages, out_w, out_b)


def _upsample2x_index(rows: int, cols: int) -> np.ndarray:
    """Gather index mapping a (2r, 2c) grid onto its (r, c) source."""
    rr = np.repeat(np.arange(rows), 2)
    cc = np.repeat(np.arange(cols), 2)
    return (rr[:, None] * cols + cc[None, :]).reshape(-1)


def head_forward(feat: Tensor, rows: int, cols: int, head: UpsampleHead) -> Tensor:
    """(rows*cols, d) token features -> (rows*16 * cols*16, n_classes) logits."""
    r, c = rows, cols
    x = feat
    for w, b in head.stages:
        x = gather(x, _upsample2x_index(r, c), axis=0)
        r, c = 2 * r, 2 * c
        x = silu(matmul(x, w) + b)
    return matmul(x, head.out_w) + head.out_b


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean per-pixel CE; labels are int class ids, flattened."""
    labels = np.asarray(labels).astype(np.int64).reshape(-1)
    n, k = logits.shape
    if labels.size != n:
        raise ValueError(f"{labels.size} labels for {n} logits rows")
    onehot = np.zeros((n, k), dtype=logits.dtype)
    onehot[np.arange(n), labels] = 1.0
    picked = (log_softmax(logits) * Tensor(onehot)).sum(axes=1)
    return neg(picked.mean())


def encoder_features(image: np.ndarray, cfg: ModelConfig, params,
                     chunk_size: int = 64):
    """Unmasked encoder pass; returns (features, rows, cols)."""
    cfg0 = replace(cfg, mask_ratio=0.0)
    latent, _ = encode(image, 0, cfg0, params, chunk_size)
    rows = image.shape[1] // cfg.patch_size
    cols = image.shape[2] // cfg.patch_size
    return latent, rows, cols


# -- task models -------------------------------------------------------------------


@dataclass
class SegmentationModel:
    cfg: ModelConfig
    params: object           # ModelParams (encoder side is used)
    head: UpsampleHead
    mean: np.ndarray
    std: np.ndarray
    n_classes: int

    def named_parameters(self):
        for name, p in self.params.named_parameters():
            if name.startswith(("patch_embed", "enc")):
                yield name, p
        yield from self.head.named("seg_head")

    def logits(self, raw_image: np.ndarray) -> Tensor:
        img = normalize_image(raw_image, self.mean, self.std)
        feat, rows, cols = encoder_features(img, self.cfg, self.params)
        return head_forward(feat, rows, cols, self.head)

    def probabilities(self, raw_image: np.ndarray) -> np.ndarray:
        """(n_classes, H, W) softmax probabilities, no grad."""
        with no_grad():
            logits = self.logits(raw_image).data
        h = raw_image.shape[1]
        z = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        return p.reshape(h, -1, p.shape[1]).transpose(2, 0, 1)

    def predict(self, raw_image: np.ndarray) -> np.ndarray:
        return self.probabilities(raw_image).argmax(axis=0)


@dataclass
class ChangeModel:
    cfg: ModelConfig
    params: object
    loc_head: UpsampleHead
    dmg_head: UpsampleHead
    mean: np.ndarray
    std: np.ndarray

    def named_parameters(self):
        for name, p in self.params.named_parameters():
            if name.startswith(("patch_embed", "enc")):
                yield name, p
        yield from self.loc_head.named("loc_head")
        yield from self.dmg_head.named("dmg_head")

    def logit_pair(self, raw_pre: np.ndarray, raw_post: np.ndarray):
        pre = normalize_image(raw_pre, self.mean, self.std)
        post = normalize_image(raw_post, self.mean, self.std)
        f_pre, rows, cols = encoder_features(pre, self.cfg, self.params)
        f_post, _, _ = encoder_features(post, self.cfg, self.params)
        loc = head_forward(f_pre, rows, cols, self.loc_head)
        dmg = head_forward(concat([f_pre, f_post], axis=1), rows, cols,
                           self.dmg_head)
        return loc, dmg

    def probability_pair(self, raw_pre, raw_post):
        with no_grad():
            loc, dmg = self.logit_pair(raw_pre, raw_post)
        h = raw_pre.shape[1]

        def to_probs(t):
            z = t.data - t.data.max(axis=1, keepdims=True)
            p = np.exp(z)
            p /= p.sum(axis=1, keepdims=True)
            return p.reshape(h, -1, p.shape[1]).transpose(2, 0, 1)

        return to_probs(loc), to_probs(dmg)


# -- test-time augmentation ----------------------------------------------------------

TTA_TRANSFORMS = ("identity", "hflip", "vflip", "rot180")


def _spatial(arr: np.ndarray, kind: str) -> np.ndarray:
    """Apply/invert one symmetry on the trailing (H, W) axes (all four
    transforms are involutions)."""
    if kind == "identity":
        return arr
    if kind == "hflip":
        return arr[..., :, ::-1]
    if kind == "vflip":
        return arr[..., ::-1, :]
    if kind == "rot180":
        return arr[..., ::-1, ::-1]
    raise ValueError(f"unknown transform {kind!r}")


def predict_tta(prob_fn, images, weights=None) -> np.ndarray:
    """Weighted average of class probabilities over the four spatial
    symmetries, inverse-transformed back; returns the argmax class map.

    ``prob_fn`` maps transformed input image(s) to (n_classes, H, W)
    probabilities; ``images`` is one array or a tuple transformed jointly.
    """
    if weights is None:
        weights = [0.25, 0.25, 0.25, 0.25]
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (4,) or abs(float(weights.sum()) - 1.0) > 1e-6:
        raise ValueError(f"TTA weights must be 4 values summing to 1, got {weights}")
    single = not isinstance(images, (tuple, list))
    acc = None
    for w, kind in zip(weights, TTA_TRANSFORMS):
        if w == 0.0:
            continue
        if single:
            probs = prob_fn(np.ascontiguousarray(_spatial(images, kind)))
        else:
            probs = prob_fn(*[np.ascontiguousarray(_spatial(im, kind))
                              for im in images])
        probs = _spatial(np.asarray(probs, dtype=np.float64), kind)
        acc = w * probs if acc is None else acc + w * probs
    return acc.argmax(axis=0)


# -- task-model persistence ------------------------------------------------------------


def save_task_model(path, model):
    """Persist a fine-tuned task model (encoder + heads + stats)."""
    arrays = dict(params_to_arrays(model.params))
    arrays["norm.mean"] = model.mean
    arrays["norm.std"] = model.std
    if isinstance(model, SegmentationModel):
        heads = [("seg_head", model.head)]
        meta = {"n_classes": model.n_classes}
    else:
        heads = [("loc_head", model.loc_head), ("dmg_head", model.dmg_head)]
        meta = {"n_classes": model.dmg_head.out_w.shape[1]}
    for prefix, head in heads:
        for name, t in head.named(prefix):
            arrays[name] = t.data
    save_checkpoint(path, model.cfg, arrays, rng_states=meta)


def _head_from_arrays(arrays: dict, prefix: str) -> UpsampleHead:
    stages = []
    for i in range(HEAD_DEPTH):
        w = Tensor(arrays[f"{prefix}.stage{i}.w"].copy(), requires_grad=True)
        b = Tensor(arrays[f"{prefix}.stage{i}.b"].copy(), requires_grad=True)
        stages.append((w, b))
    return UpsampleHead(stages,
                        Tensor(arrays[f"{prefix}.out.w"].copy(), requires_grad=True),
                        Tensor(arrays[f"{prefix}.out.b"].copy(), requires_grad=True))


def load_task_model(path):
    """Inverse of save_task_model; the task kind is inferred from the
    stored head names."""
    ck = load_checkpoint(path)
    params = params_from_checkpoint(ck)
    mean, std = ck.arrays["norm.mean"], ck.arrays["norm.std"]
    if any(name.startswith("dmg_head.") for name in ck.arrays):
        return ChangeModel(ck.config, params,
                           _head_from_arrays(ck.arrays, "loc_head"),
                           _head_from_arrays(ck.arrays, "dmg_head"), mean, std)
    n_classes = int(ck.rng_states.get("n_classes",
                                      ck.arrays["seg_head.out.b"].size))
    return SegmentationModel(ck.config, params,
                             _head_from_arrays(ck.arrays, "seg_head"),
                             mean, std, n_classes)


# -- training loops -------------------------------------------------------------------


def _load_encoder(checkpoint, model_cfg, seed, scratch_stats=None):
    """Pretrained encoder + normalization stats, or a fresh one."""
    if checkpoint is not None:
        ck = load_checkpoint(checkpoint)
        return ck.config, params_from_checkpoint(ck), \
            ck.arrays["norm.mean"], ck.arrays["norm.std"]
    if model_cfg is None:
        raise ValueError("need a checkpoint or an explicit model config")
    mean, std = scratch_stats
    return model_cfg, init_model(model_cfg, seed=seed), mean, std


def finetune_segmentation(checkpoint, corpus: Corpus, train_cfg: TrainConfig,
                          out_dir, model_cfg: ModelConfig = None,
                          use_tta: bool = True) -> dict:
    if corpus.kind != "segmentation":
        raise ValueError(f"segmentation fine-tune needs a 'segmentation' corpus, "
                         f"got {corpus.kind!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_idx, test_idx = split_indices(len(corpus), train_cfg.val_fraction)
    scratch_stats = corpus.image_stats(train_idx) if checkpoint is None else None
    cfg, params, mean, std = _load_encoder(checkpoint, model_cfg,
                                           train_cfg.seed, scratch_stats)
    head = init_head(cfg.enc_dim, corpus.n_classes,
                     Rng(train_cfg.seed).stream("seg-head"))
    model = SegmentationModel(cfg, params, head, mean, std, corpus.n_classes)

    samples = [corpus.load(i) for i in range(len(corpus))]
    opt = AdamW(model.named_parameters(), lr=train_cfg.base_lr,
                weight_decay=train_cfg.weight_decay)
    order_rng = Rng(train_cfg.seed).stream("ft-order")
    rows = []
    for epoch in range(train_cfg.epochs):
        t0 = time.perf_counter()
        opt.lr = lr_at_epoch(epoch, train_cfg.epochs, train_cfg.warmup_epochs,
                             train_cfg.base_lr)
        order = [train_idx[j] for j in
                 order_rng.stream("epoch", epoch).shuffled(len(train_idx))]
        total = 0.0
        for start in range(0, len(order), train_cfg.batch_size):
            batch = order[start:start + train_cfg.batch_size]
            losses = []
            for idx in batch:
                logits = model.logits(samples[idx]["image"])
                losses.append(cross_entropy(logits, samples[idx]["label"])
                              .reshape((1,)))
            loss = concat(losses, axis=0).mean()
            backward(loss)
            opt.step()
            opt.zero_grad()
            total += loss.item() * len(batch)
        rows.append(MetricsRow(epoch=epoch, split="train",
                               loss=total / len(order),
                               wall_s=time.perf_counter() - t0))

    preds, labels = [], []
    for idx in test_idx:
        img = samples[idx]["image"]
        if use_tta:
            preds.append(predict_tta(model.probabilities, img))
        else:
            preds.append(model.predict(img))
        labels.append(samples[idx]["label"])
    scores = segmentation_scores(preds, labels, corpus.n_classes)
    rows.append(MetricsRow(epoch=train_cfg.epochs, split="test",
                           iou_per_class=scores["iou_per_class"],
                           miou=scores["miou"]))
    write_metrics_csv(out / "metrics.csv", rows)
    save_task_model(out / "model.smck", model)
    return {"model": model, "miou": scores["miou"],
            "iou_per_class": scores["iou_per_class"],
            "final_train_loss": rows[-2].loss}


def finetune_change(checkpoint, corpus: Corpus, train_cfg: TrainConfig,
                    out_dir, model_cfg: ModelConfig = None,
                    use_tta: bool = True) -> dict:
    if corpus.kind != "change":
        raise ValueError(f"change fine-tune needs a 'change' corpus, got "
                         f"{corpus.kind!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_idx, test_idx = split_indices(len(corpus), train_cfg.val_fraction)
    scratch_stats = corpus.image_stats(train_idx) if checkpoint is None else None
    cfg, params, mean, std = _load_encoder(checkpoint, model_cfg,
                                           train_cfg.seed, scratch_stats)
    rng = Rng(train_cfg.seed)
    loc_head = init_head(cfg.enc_dim, 2, rng.stream("loc-head"))
    dmg_head = init_head(2 * cfg.enc_dim, corpus.n_classes, rng.stream("dmg-head"))
    model = ChangeModel(cfg, params, loc_head, dmg_head, mean, std)

    samples = [corpus.load(i) for i in range(len(corpus))]
    opt = AdamW(model.named_parameters(), lr=train_cfg.base_lr,
                weight_decay=train_cfg.weight_decay)
    order_rng = Rng(train_cfg.seed).stream("cd-order")
    rows = []
    for epoch in range(train_cfg.epochs):
        t0 = time.perf_counter()
        opt.lr = lr_at_epoch(epoch, train_cfg.epochs, train_cfg.warmup_epochs,
                             train_cfg.base_lr)
        order = [train_idx[j] for j in
                 order_rng.stream("epoch", epoch).shuffled(len(train_idx))]
        total = 0.0
        for start in range(0, len(order), train_cfg.batch_size):
            batch = order[start:start + train_cfg.batch_size]
            losses = []
            for idx in batch:
                s = samples[idx]
                loc_logits, dmg_logits = model.logit_pair(s["pre"], s["post"])
                loss = (cross_entropy(loc_logits, s["loc"])
                        + cross_entropy(dmg_logits, s["damage"]))
                losses.append(loss.reshape((1,)))
            loss = concat(losses, axis=0).mean()
            backward(loss)
            opt.step()
            opt.zero_grad()
            total += loss.item() * len(batch)
        rows.append(MetricsRow(epoch=epoch, split="train",
                               loss=total / len(order),
                               wall_s=time.perf_counter() - t0))

    loc_preds, loc_labels, dmg_preds, dmg_labels = [], [], [], []
    for idx in test_idx:
        s = samples[idx]
        if use_tta:
            loc_preds.append(predict_tta(
                lambda a, b: model.probability_pair(a, b)[0], (s["pre"], s["post"])))
            dmg_preds.append(predict_tta(
                lambda a, b: model.probability_pair(a, b)[1], (s["pre"], s["post"])))
        else:
            lp, dp = model.probability_pair(s["pre"], s["post"])
            loc_preds.append(lp.argmax(axis=0))
            dmg_preds.append(dp.argmax(axis=0))
        loc_labels.append(s["loc"])
        dmg_labels.append(s["damage"])
    scores = damage_scores(loc_preds, loc_labels, dmg_preds, dmg_labels,
                           corpus.n_classes)
    rows.append(MetricsRow(epoch=train_cfg.epochs, split="test",
                           f1_loc=scores["f1_loc"], f1_clf=scores["f1_clf"],
                           f1_overall=scores["f1_overall"]))
    write_metrics_csv(out / "metrics.csv", rows)
    save_task_model(out / "model.smck", model)
    return {"model": model, **{k: v for k, v in scores.items() if k != "model"},
            "final_train_loss": rows[-2].loss}
