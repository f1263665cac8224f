import numpy as np
import pytest

from satmamba.harness import (
    TrainConfig,
    ablate_directions,
    finetune_change,
    finetune_segmentation,
    gen_synthetic,
    load_task_model,
    predict_tta,
    pretrain,
)
from satmamba.harness.metrics import read_metrics_csv
from satmamba.model import desk_config, load_checkpoint
from satmamba.ndgrad import Rng


def tiny_cfg():
    return desk_config(enc_dim=32, enc_depth=1, dec_dim=16, dec_depth=1,
                       state_dim=4, head_dim=16)


def tiny_tc(**over):
    base = dict(epochs=3, batch_size=4, base_lr=1e-3, warmup_epochs=1,
                seed=0, val_fraction=0.25)
    base.update(over)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def pretrain_corpus(tmp_path_factory):
    return gen_synthetic("pretrain", 8, 32, seed=1,
                         out_dir=tmp_path_factory.mktemp("pre"))


def _loss_columns(csv_path):
    return [(row[0], row[1], row[2]) for row in read_metrics_csv(csv_path)]


def test_pretrain_smoke_and_reproducibility(pretrain_corpus, tmp_path):
    s1 = pretrain(tiny_cfg(), pretrain_corpus, tiny_tc(), tmp_path / "a")
    s2 = pretrain(tiny_cfg(), pretrain_corpus, tiny_tc(), tmp_path / "b")
    assert s1["final_train_loss"] == s2["final_train_loss"]
    assert s1["best_val_loss"] == s2["best_val_loss"]
    # CSV identical apart from the wall-seconds column
    assert _loss_columns(tmp_path / "a" / "metrics.csv") == \
        _loss_columns(tmp_path / "b" / "metrics.csv")


def test_pretrain_resume_matches_unbroken(pretrain_corpus, tmp_path):
    full = pretrain(tiny_cfg(), pretrain_corpus, tiny_tc(epochs=6),
                    tmp_path / "full")
    # same 6-epoch schedule, interrupted after 3 epochs
    pretrain(tiny_cfg(), pretrain_corpus, tiny_tc(epochs=6, stop_after=3),
             tmp_path / "part")
    resumed = pretrain(tiny_cfg(), pretrain_corpus, tiny_tc(epochs=6),
                       tmp_path / "resumed",
                       resume=tmp_path / "part" / "ckpt_latest.smck")
    ck_full = load_checkpoint(full["latest"])
    ck_res = load_checkpoint(resumed["latest"])
    for name in ck_full.arrays:
        assert ck_full.arrays[name].tobytes() == ck_res.arrays[name].tobytes(), name
    # per-epoch losses of the overlapping epochs agree exactly
    tail_full = [r for r in _loss_columns(tmp_path / "full" / "metrics.csv")
                 if int(r[0]) >= 3]
    tail_res = _loss_columns(tmp_path / "resumed" / "metrics.csv")
    assert tail_full == tail_res


def test_early_stopping_returns_best(pretrain_corpus, tmp_path):
    s = pretrain(tiny_cfg(), pretrain_corpus,
                 tiny_tc(epochs=8, patience=2, base_lr=5e-2, warmup_epochs=0),
                 tmp_path / "es")
    rows = read_metrics_csv(tmp_path / "es" / "metrics.csv")
    vals = [float(r[2]) for r in rows if r[1] == "val"]
    assert s["best_val_loss"] == pytest.approx(min(vals), rel=1e-8)
    best = load_checkpoint(tmp_path / "es" / "ckpt_best.smck")
    assert best.rng_states["epoch"] == s["best_epoch"] + 1


def test_pretrain_rejects_wrong_corpus_kind(tmp_path):
    corpus = gen_synthetic("segmentation", 2, 32, seed=2, out_dir=tmp_path / "c")
    with pytest.raises(ValueError, match="pretrain"):
        pretrain(tiny_cfg(), corpus, tiny_tc(), tmp_path / "x")


def test_ablate_identical_sets_identical_losses(pretrain_corpus, tmp_path):
    res = ablate_directions(tiny_cfg(), pretrain_corpus, tiny_tc(epochs=2),
                            [("row-fwd",), ("row-fwd",)], [0], tmp_path / "ab")
    assert res["row-fwd"]["val_losses"] == res["row-fwd"]["val_losses"]
    lines = (tmp_path / "ab" / "ablation.csv").read_text().splitlines()
    assert lines[1].rsplit(",", 1)[1] == lines[2].rsplit(",", 1)[1]


def test_ablate_rejects_empty_set(pretrain_corpus, tmp_path):
    with pytest.raises(ValueError, match="empty"):
        ablate_directions(tiny_cfg(), pretrain_corpus, tiny_tc(),
                          [()], [0], tmp_path / "bad")


# -- fine-tuning ------------------------------------------------------------------


def test_finetune_segmentation_smoke(tmp_path):
    corpus = gen_synthetic("segmentation", 10, 32, seed=3, out_dir=tmp_path / "seg")
    res = finetune_segmentation(None, corpus, tiny_tc(epochs=2, val_fraction=0.2),
                                tmp_path / "run", model_cfg=tiny_cfg(),
                                use_tta=False)
    assert 0.0 <= res["miou"] <= 1.0
    assert len(res["iou_per_class"]) == 4
    # persisted task model predicts identically
    model = res["model"]
    loaded = load_task_model(tmp_path / "run" / "model.smck")
    img = corpus.load(0)["image"]
    assert np.array_equal(model.predict(img), loaded.predict(img))


def test_finetune_change_smoke(tmp_path):
    corpus = gen_synthetic("change", 8, 32, seed=4, out_dir=tmp_path / "cd")
    res = finetune_change(None, corpus, tiny_tc(epochs=2, val_fraction=0.25),
                          tmp_path / "run", model_cfg=tiny_cfg(), use_tta=False)
    for key in ("f1_loc", "f1_clf", "f1_overall"):
        assert 0.0 <= res[key] <= 1.0
    lo, hi = sorted((res["f1_loc"], res["f1_clf"]))
    assert lo - 1e-12 <= res["f1_overall"] <= hi + 1e-12
    loaded = load_task_model(tmp_path / "run" / "model.smck")
    s = corpus.load(0)
    a = res["model"].probability_pair(s["pre"], s["post"])[1]
    b = loaded.probability_pair(s["pre"], s["post"])[1]
    assert np.array_equal(a, b)


# -- TTA ---------------------------------------------------------------------------


def _constant_prob_model(k, h, w, seed=0):
    probs = Rng(seed).uniform((k,))
    probs /= probs.sum()

    def fn(image):
        return np.broadcast_to(probs[:, None, None], (k, h, w)).copy()

    return fn


def test_tta_identity_weights_equal_plain():
    fn = _constant_prob_model(3, 8, 8)
    img = Rng(1).normal((3, 8, 8))
    plain = fn(img).argmax(axis=0)
    tta = predict_tta(fn, img, weights=[1.0, 0.0, 0.0, 0.0])
    assert np.array_equal(tta, plain)


def test_tta_uniform_weights_on_invariant_model():
    fn = _constant_prob_model(4, 6, 6, seed=2)
    img = Rng(2).normal((3, 6, 6))
    assert np.array_equal(predict_tta(fn, img), fn(img).argmax(axis=0))


def test_tta_equivariant_linear_toy():
    """A per-pixel channel-linear classifier commutes with all four
    transforms, so TTA must equal the single-pass prediction."""
    w = Rng(3).normal((3, 5))

    def fn(image):
        logits = np.einsum("chw,ck->khw", image, w)
        z = logits - logits.max(axis=0, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=0, keepdims=True)

    img = Rng(4).normal((3, 10, 10))
    assert np.array_equal(predict_tta(fn, img), fn(img).argmax(axis=0))


def test_tta_weights_validated():
    fn = _constant_prob_model(2, 4, 4)
    img = np.zeros((3, 4, 4))
    with pytest.raises(ValueError, match="summing"):
        predict_tta(fn, img, weights=[0.5, 0.5, 0.5, 0.5])
    with pytest.raises(ValueError, match="summing"):
        predict_tta(fn, img, weights=[1.0, 0.0, 0.0])
