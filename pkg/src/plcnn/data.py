"""Dataset ingestion, splitting, augmentation, and a synthetic corpus.

A dataset is a class-per-directory tree of PNGs: ``root/<class_name>/*.png``.
Images load as float32 in [0, 1] (8-bit scaled by 1/255, 16-bit by 1/65535)
with grayscale replicated to three channels. Class labels follow the sorted
directory names, and fold assignment is a seeded stratified shuffle, so the
(label, fold) pairs never depend on filesystem listing order.

If ``root/split.txt`` exists it wins over k-fold assignment: each line is
``<relative_path> <train|val|test>`` and maps to fold 2, 1 or 0.
"""

import math
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ConfigurationError, IngestionError, InputError
from .tensor import Tensor

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

_MANIFEST_FOLDS = {"test": 0, "val": 1, "train": 2}


@dataclass
class Sample:
    image: Tensor      # (1, C, H, W), values in [0, 1] before normalization
    label: int
    source_path: str
    fold: int = -1


@dataclass
class DatasetMeta:
    class_names: list
    counts: list
    k: int
    seed: int

    @property
    def num_classes(self):
        return len(self.class_names)

    @property
    def total(self):
        return int(sum(self.counts))


def load_image(path):
    """Decode one PNG to a (1, C, H, W) Tensor in [0, 1]."""
    try:
        with Image.open(path) as img:
            if img.mode == "P":
                img = img.convert("RGB")
            arr = np.asarray(img)
    except (OSError, ValueError, SyntaxError) as exc:
        raise IngestionError("cannot decode image %s (%s)" % (path, exc))
    if arr.dtype == np.uint8:
        x = arr.astype(np.float32) / 255.0
    elif arr.dtype == np.uint16 or arr.dtype == np.int32:
        x = arr.astype(np.float32) / 65535.0
    else:
        raise IngestionError("unsupported pixel type %s in %s" % (arr.dtype, path))
    if x.ndim == 2:
        x = np.repeat(x[None], 3, axis=0)
    elif x.ndim == 3 and x.shape[2] == 3:
        x = x.transpose(2, 0, 1)
    else:
        raise IngestionError(
            "expected grayscale or RGB, got shape %s in %s" % (arr.shape, path))
    return Tensor(x[None])


def _assign_folds(samples, num_classes, k, seed):
    rng = np.random.default_rng(seed)
    for label in range(num_classes):
        members = sorted((s for s in samples if s.label == label),
                         key=lambda s: s.source_path)
        for pos, idx in enumerate(rng.permutation(len(members))):
            members[idx].fold = pos % k


def _assign_manifest_folds(root, manifest, samples):
    mapping = {}
    with open(manifest) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2 or parts[1] not in _MANIFEST_FOLDS:
                raise IngestionError(
                    "bad line %d in %s: %r" % (line_no, manifest, line))
            mapping[parts[0]] = _MANIFEST_FOLDS[parts[1]]
    for s in samples:
        rel = os.path.relpath(s.source_path, root).replace(os.sep, "/")
        if rel not in mapping:
            raise IngestionError("%s is not listed in %s" % (rel, manifest))
        s.fold = mapping[rel]


def load_dataset(root, k, seed):
    """Load a class-per-directory tree and assign folds.

    Folds come from a seeded per-class shuffle dealt round-robin, so each
    fold's class proportions match the dataset within one sample. With a
    split.txt manifest present, k is forced to 3 (test/val/train folds).
    """
    if not os.path.isdir(root):
        raise IngestionError("dataset root %s is not a directory" % root)
    class_names = sorted(d for d in os.listdir(root)
                         if os.path.isdir(os.path.join(root, d)))
    if not class_names:
        raise IngestionError("no class directories under %s" % root)
    samples = []
    counts = []
    for label, name in enumerate(class_names):
        cdir = os.path.join(root, name)
        files = sorted(f for f in os.listdir(cdir) if f.lower().endswith(".png"))
        if not files:
            raise IngestionError("class directory %s has no images" % cdir)
        for f in files:
            path = os.path.join(cdir, f)
            samples.append(Sample(load_image(path), label, path))
        counts.append(len(files))
    manifest = os.path.join(root, "split.txt")
    if os.path.exists(manifest):
        _assign_manifest_folds(root, manifest, samples)
        k = len(_MANIFEST_FOLDS)
    else:
        if k < 1:
            raise ConfigurationError("fold count must be positive, got %d" % k)
        if k > min(counts):
            raise ConfigurationError(
                "k=%d exceeds the smallest class count %d" % (k, min(counts)))
        _assign_folds(samples, len(class_names), k, seed)
    return DatasetMeta(class_names, counts, k, seed), samples


def split(samples, fold_index):
    """Partition into (train, test): test holds fold == fold_index."""
    k = max(s.fold for s in samples) + 1
    if not 0 <= fold_index < k:
        raise InputError("fold %d is outside [0, %d)" % (fold_index, k))
    test = [s for s in samples if s.fold == fold_index]
    train = [s for s in samples if s.fold != fold_index]
    return train, test


def ratio_split(samples, train_fraction, seed):
    """Seeded stratified split; fractional per-class quotas round toward train."""
    if not 0.0 < train_fraction < 1.0:
        raise InputError(
            "train fraction %g is outside (0, 1)" % train_fraction)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for label in sorted({s.label for s in samples}):
        members = sorted((s for s in samples if s.label == label),
                         key=lambda s: s.source_path)
        quota = math.ceil(round(train_fraction * len(members), 9))
        for pos, idx in enumerate(rng.permutation(len(members))):
            (train if pos < quota else test).append(members[idx])
    return train, test


def resize_bilinear(image, target):
    """Bilinear resize of a (C, H, W) array under the pixel-center convention."""
    c, h, w = image.shape
    th, tw = target
    if th < 1 or tw < 1:
        raise ConfigurationError("target dims must be positive, got %s" % (target,))
    im = image.astype(np.float32, copy=False)
    if (h, w) == (th, tw):
        return im.copy()
    ys = np.clip((np.arange(th) + 0.5) * (h / th) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(tw) + 0.5) * (w / tw) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    ty = (ys - y0).astype(np.float32)[:, None]
    tx = (xs - x0).astype(np.float32)
    top = im[:, y0][:, :, x0] * (1 - tx) + im[:, y0][:, :, x1] * tx
    bot = im[:, y1][:, :, x0] * (1 - tx) + im[:, y1][:, :, x1] * tx
    return np.ascontiguousarray(top * (1 - ty) + bot * ty)


def normalize(image, mean=IMAGENET_MEAN, std=IMAGENET_STD):
    """Per-channel (x - mean) / std on a (C, H, W) array."""
    mean = np.asarray(mean, np.float32)
    std = np.asarray(std, np.float32)
    if (std <= 0).any():
        raise ConfigurationError("std entries must be positive, got %s" % std)
    if mean.shape != (image.shape[0],) or std.shape != (image.shape[0],):
        raise ConfigurationError(
            "mean/std must have one entry per channel (%d)" % image.shape[0])
    return (image - mean[:, None, None]) / std[:, None, None]


def denormalize(image, mean=IMAGENET_MEAN, std=IMAGENET_STD):
    """Inverse of :func:`normalize`."""
    mean = np.asarray(mean, np.float32)
    std = np.asarray(std, np.float32)
    return image * std[:, None, None] + mean[:, None, None]


def augment(sample):
    """The six deterministic variants of a sample, in a fixed order:
    original, horizontal flip, vertical flip, then 90/180/270 degree
    rotations. Flips and rotations permute pixels, so variants are exact."""
    x = sample.image.data
    variants = (x,
                x[:, :, :, ::-1],
                x[:, :, ::-1, :],
                np.rot90(x, 1, axes=(2, 3)),
                np.rot90(x, 2, axes=(2, 3)),
                np.rot90(x, 3, axes=(2, 3)))
    return [Sample(Tensor(v), sample.label, sample.source_path, sample.fold)
            for v in variants]


def to_input(sample, dims, mean=IMAGENET_MEAN, std=IMAGENET_STD):
    """Resize a sample to the network input dims and normalize; (C, H, W)."""
    c, h, w = dims
    img = sample.image.data[0]
    if img.shape[0] != c:
        raise ConfigurationError(
            "sample %s has %d channels, network expects %d"
            % (sample.source_path, img.shape[0], c))
    return normalize(resize_bilinear(img, (h, w)), mean, std)


def make_synthetic(root, classes, per_class, dims, seed):
    """Write a synthetic class-per-directory tree of grating textures.

    Class c is an oriented sinusoid at frequency 3 + 2c and angle
    pi (c + 0.5) / classes, plus per-image Gaussian noise (sigma 0.1),
    quantized to 8-bit grayscale. Deterministic for a fixed seed.
    """
    if classes < 2:
        raise ConfigurationError("need at least 2 classes, got %d" % classes)
    if per_class < 1:
        raise ConfigurationError("per_class must be positive, got %d" % per_class)
    h, w = dims
    yy, xx = np.mgrid[0:h, 0:w] / float(max(h, w))
    for c in range(classes):
        cdir = os.path.join(root, "class_%02d" % c)
        os.makedirs(cdir, exist_ok=True)
        freq = 3.0 + 2.0 * c
        angle = np.pi * (c + 0.5) / classes
        grating = np.sin(2 * np.pi * freq * (xx * np.cos(angle) + yy * np.sin(angle)))
        for i in range(per_class):
            rng = np.random.default_rng([seed, c, i])
            img = 0.5 + 0.35 * grating + rng.normal(0.0, 0.1, (h, w))
            data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
            Image.fromarray(data, mode="L").save(
                os.path.join(cdir, "img_%03d.png" % i))
    return root
