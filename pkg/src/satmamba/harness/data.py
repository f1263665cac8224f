"""Synthetic corpora and their on-disk format.

Tensor files: magic "SMTN" | u32 dtype tag (0 = float32) | u32 rank |
u32 extents[rank] | little-endian float32 values. The manifest is
line-oriented text; every sample line lists the files belonging to one
sample, relative to the corpus root.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..ndgrad import Rng

TENSOR_MAGIC = b"SMTN"

KINDS = ("pretrain", "segmentation", "change")
SEG_CLASSES = 4       # background + rectangle + ellipse + stripes
DAMAGE_CLASSES = 5    # background + 4 damage levels
_FIELDS = {
    "pretrain": ("image",),
    "segmentation": ("image", "label"),
    "change": ("pre", "post", "loc", "damage"),
}


class CorpusError(ValueError):
    pass


def write_tensor(path, arr: np.ndarray):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<II", 0, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(4) != TENSOR_MAGIC:
            raise CorpusError(f"{path}: bad magic, not a tensor file")
        tag, rank = struct.unpack("<II", fh.read(8))
        if tag != 0:
            raise CorpusError(f"{path}: unsupported dtype tag {tag}")
        shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        data = np.frombuffer(fh.read(count * 4), dtype="<f4")
        if data.size != count:
            raise CorpusError(f"{path}: truncated tensor payload")
    return data.reshape(shape).copy()


@dataclass
class Corpus:
    kind: str
    size: int
    channels: int
    n_classes: int
    root: Path
    samples: list  # one dict of field -> relative path per sample

    def __len__(self):
        return len(self.samples)

    def load(self, index: int) -> dict:
        out = {}
        for fieldname, rel in self.samples[index].items():
            out[fieldname] = read_tensor(self.root / rel)
        return out

    def image_stats(self, indices) -> tuple:
        """Per-channel mean/std over the given samples' first image field."""
        field = _FIELDS[self.kind][0]
        acc = np.zeros(self.channels, dtype=np.float64)
        acc2 = np.zeros(self.channels, dtype=np.float64)
        count = 0
        for i in indices:
            img = read_tensor(self.root / self.samples[i][field]).astype(np.float64)
            acc += img.sum(axis=(1, 2))
            acc2 += (img * img).sum(axis=(1, 2))
            count += img.shape[1] * img.shape[2]
        mean = acc / count
        var = acc2 / count - mean * mean
        return (mean.astype(np.float32),
                np.sqrt(np.maximum(var, 1e-12)).astype(np.float32))


def save_manifest(corpus: Corpus):
    lines = ["smtn-corpus v1",
             f"kind {corpus.kind}",
             f"size {corpus.size}",
             f"channels {corpus.channels}",
             f"classes {corpus.n_classes}"]
    for sample in corpus.samples:
        parts = " ".join(sample[f] for f in _FIELDS[corpus.kind])
        lines.append(f"sample {parts}")
    (corpus.root / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_corpus(root) -> Corpus:
    root = Path(root)
    manifest = root / "manifest.txt"
    if not manifest.exists():
        raise CorpusError(f"{root}: no manifest.txt")
    lines = manifest.read_text().strip().splitlines()
    if not lines or lines[0] != "smtn-corpus v1":
        raise CorpusError(f"{manifest}: unrecognized header")
    meta = {}
    samples = []
    for line in lines[1:]:
        key, _, rest = line.partition(" ")
        if key == "sample":
            parts = rest.split()
            meta_kind = meta.get("kind")
            fields = _FIELDS.get(meta_kind)
            if fields is None or len(parts) != len(fields):
                raise CorpusError(f"{manifest}: malformed sample line {line!r}")
            samples.append(dict(zip(fields, parts)))
        else:
            meta[key] = rest
    corpus = Corpus(kind=meta["kind"], size=int(meta["size"]),
                    channels=int(meta["channels"]),
                    n_classes=int(meta.get("classes", 0)),
                    root=root, samples=samples)
    _validate(corpus)
    return corpus


def _validate(corpus: Corpus):
    size = corpus.size
    for i, sample in enumerate(corpus.samples):
        for fieldname, rel in sample.items():
            path = corpus.root / rel
            if not path.exists():
                raise CorpusError(f"sample {i}: missing file {rel}")
            arr = read_tensor(path)
            if fieldname in ("image", "pre", "post"):
                if arr.shape != (corpus.channels, size, size):
                    raise CorpusError(f"sample {i}: {rel} has shape {arr.shape}, "
                                      f"expected {(corpus.channels, size, size)}")
            else:
                if arr.shape != (size, size):
                    raise CorpusError(f"sample {i}: {rel} has shape {arr.shape}, "
                                      f"expected {(size, size)}")
                top = DAMAGE_CLASSES if corpus.kind == "change" else corpus.n_classes
                if fieldname == "loc":
                    top = 2
                if arr.min() < 0 or arr.max() >= top:
                    raise CorpusError(f"sample {i}: {rel} labels outside [0, {top})")


# -- generators ------------------------------------------------------------------


def _smooth_field(rng: Rng, size: int, passes: int = 4, window: int = 13) -> np.ndarray:
    """Gaussian-ish random field: repeatedly box-filter white noise.

    The correlation length (roughly window * sqrt(passes)) is kept near
    1.5 patch widths so masked patches stay predictable from their
    surroundings without being constant."""
    field = rng.normal((size, size))
    kernel = np.ones(window) / window
    for _ in range(passes):
        field = np.apply_along_axis(
            lambda r: np.convolve(r, kernel, mode="same"), 1, field)
        field = np.apply_along_axis(
            lambda c: np.convolve(c, kernel, mode="same"), 0, field)
    field -= field.min()
    span = field.max() - field.min()
    return field / span if span > 0 else field


def _rect_mask(size, r0, c0, hgt, wid):
    mask = np.zeros((size, size), dtype=bool)
    mask[r0:r0 + hgt, c0:c0 + wid] = True
    return mask


def _ellipse_mask(size, rc, cc, ra, ca):
    rr, cc_grid = np.mgrid[0:size, 0:size]
    return ((rr - rc) / ra) ** 2 + ((cc_grid - cc) / ca) ** 2 <= 1.0


def _stripe_mask(size, r0, c0, hgt, wid, period=4):
    mask = _rect_mask(size, r0, c0, hgt, wid)
    rr = np.arange(size)[:, None] + np.zeros(size, dtype=int)[None, :]
    return mask & ((rr // (period // 2)) % 2 == 0)


def _pretrain_image(rng: Rng, size: int, channels: int) -> np.ndarray:
    img = np.stack([_smooth_field(rng.stream("field", c), size)
                    for c in range(channels)])
    for _ in range(2 + rng.below(3)):
        hgt = 6 + rng.below(size // 2)
        wid = 6 + rng.below(size // 2)
        r0 = rng.below(size - hgt)
        c0 = rng.below(size - wid)
        if rng.below(2):
            mask = _rect_mask(size, r0, c0, hgt, wid)
        else:
            mask = _ellipse_mask(size, r0 + hgt // 2, c0 + wid // 2,
                                 max(2, hgt // 2), max(2, wid // 2))
        color = rng.uniform((channels,))
        img[:, mask] = 0.55 * img[:, mask] + 0.45 * color[:, None]
    return img.astype(np.float32)


def _segmentation_sample(rng: Rng, size: int, channels: int):
    base = {1: np.array([0.85, 0.25, 0.20]), 2: np.array([0.20, 0.45, 0.85]),
            3: np.array([0.95, 0.85, 0.25])}
    img = np.stack([_smooth_field(rng.stream("bg", c), size) * 0.35
                    for c in range(channels)])
    label = np.zeros((size, size), dtype=np.float32)
    for _ in range(3 + rng.below(4)):
        cls = 1 + rng.below(3)
        hgt = 8 + rng.below(size // 2)
        wid = 8 + rng.below(size // 2)
        r0 = rng.below(size - hgt)
        c0 = rng.below(size - wid)
        if cls == 1:
            mask = _rect_mask(size, r0, c0, hgt, wid)
        elif cls == 2:
            mask = _ellipse_mask(size, r0 + hgt // 2, c0 + wid // 2,
                                 max(3, hgt // 2), max(3, wid // 2))
        else:
            mask = _stripe_mask(size, r0, c0, hgt, wid)
        color = base[cls][:channels] * (0.8 + 0.4 * rng.uniform(()))
        img[:, mask] = color[:, None]
        label[mask] = cls
    img += rng.normal(img.shape, std=0.02)
    return img.astype(np.float32), label


def _change_sample(rng: Rng, size: int, channels: int):
    """Pre image with 'buildings', post image with a subset damaged.

    Damage level tints: 1 no damage (unchanged), 2 minor, 3 major,
    4 destroyed (rubble texture). The damage map marks footprints only.
    """
    tints = {2: np.array([0.9, 0.75, 0.3]), 3: np.array([0.95, 0.45, 0.15])}
    pre = np.stack([_smooth_field(rng.stream("terrain", c), size) * 0.4
                    for c in range(channels)])
    post = pre.copy()
    loc = np.zeros((size, size), dtype=np.float32)
    damage = np.zeros((size, size), dtype=np.float32)
    for _ in range(3 + rng.below(4)):
        hgt = 6 + rng.below(size // 4)
        wid = 6 + rng.below(size // 4)
        r0 = rng.below(size - hgt)
        c0 = rng.below(size - wid)
        mask = _rect_mask(size, r0, c0, hgt, wid)
        shade = 0.75 + 0.2 * rng.uniform(())
        pre[:, mask] = shade
        loc[mask] = 1.0
        level = 1 + rng.below(4)
        damage[mask] = level
        if level == 1:
            post[:, mask] = shade
        elif level in tints:
            color = tints[level][:channels]
            post[:, mask] = 0.45 * shade + 0.55 * color[:, None]
        else:  # destroyed: rubble
            rubble = rng.stream("rubble").uniform((channels, int(mask.sum())))
            post[:, mask] = 0.25 + 0.3 * rubble
    noise = rng.normal(pre.shape, std=0.015)
    return ((pre + noise).astype(np.float32),
            (post + noise).astype(np.float32), loc, damage)


def gen_synthetic(kind: str, n: int, size: int, seed: int, out_dir) -> Corpus:
    """Write a deterministic synthetic corpus of the given kind."""
    if kind not in KINDS:
        raise CorpusError(f"unknown corpus kind {kind!r}; expected one of {KINDS}")
    if size % 16:
        raise CorpusError(f"corpus image size {size} not divisible by patch size 16")
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    channels = 3
    base = Rng(seed).stream(f"corpus-{kind}")
    samples = []
    for i in range(n):
        rng = base.stream("sample", i)
        if kind == "pretrain":
            img = _pretrain_image(rng, size, channels)
            rel = {"image": f"image_{i:04d}.smtn"}
            write_tensor(root / rel["image"], img)
        elif kind == "segmentation":
            img, label = _segmentation_sample(rng, size, channels)
            rel = {"image": f"image_{i:04d}.smtn", "label": f"label_{i:04d}.smtn"}
            write_tensor(root / rel["image"], img)
            write_tensor(root / rel["label"], label)
        else:
            pre, post, loc, dmg = _change_sample(rng, size, channels)
            rel = {"pre": f"pre_{i:04d}.smtn", "post": f"post_{i:04d}.smtn",
                   "loc": f"loc_{i:04d}.smtn", "damage": f"damage_{i:04d}.smtn"}
            write_tensor(root / rel["pre"], pre)
            write_tensor(root / rel["post"], post)
            write_tensor(root / rel["loc"], loc)
            write_tensor(root / rel["damage"], dmg)
        samples.append(rel)
    n_classes = {"pretrain": 0, "segmentation": SEG_CLASSES,
                 "change": DAMAGE_CLASSES}[kind]
    corpus = Corpus(kind=kind, size=size, channels=channels,
                    n_classes=n_classes, root=root, samples=samples)
    save_manifest(corpus)
    return corpus
