"""Experiment layer: synthetic corpora, training loops, fine-tuning,
metrics, TTA inference, benchmarks, and the CLI."""

from .data import Corpus, CorpusError, gen_synthetic, load_corpus, read_tensor, write_tensor
from .finetune import (
    finetune_change,
    finetune_segmentation,
    load_task_model,
    predict_tta,
    save_task_model,
)
from .metrics import (
    confusion_matrix,
    damage_scores,
    f1_from_confusion,
    iou_from_confusion,
    segmentation_scores,
)
from .optim import AdamW, lr_at_epoch
from .pretrain import TrainConfig, ablate_directions, pretrain

__all__ = [
    "Corpus", "CorpusError", "gen_synthetic", "load_corpus", "read_tensor",
    "write_tensor", "TrainConfig", "pretrain", "ablate_directions",
    "finetune_segmentation", "finetune_change", "predict_tta",
    "save_task_model", "load_task_model", "AdamW", "lr_at_epoch",
    "confusion_matrix", "iou_from_confusion", "f1_from_confusion",
    "segmentation_scores", "damage_scores",
]
