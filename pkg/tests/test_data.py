"""Ingestion, fold assignment, splits, resizing, augmentation, synthetic data."""

import os

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from PIL import Image

from plcnn.data import (
    augment, denormalize, load_dataset, make_synthetic, normalize, ratio_split,
    resize_bilinear, split, to_input, Sample,
)
from plcnn.errors import ConfigurationError, IngestionError, InputError
from plcnn.tensor import Tensor


@pytest.fixture(scope="module")
def tree(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    make_synthetic(str(root), classes=3, per_class=12, dims=(32, 32), seed=5)
    return str(root)


def make_sample(rng, dims=(1, 3, 8, 8)):
    img = rng.uniform(0.0, 1.0, dims).astype(np.float32)
    return Sample(Tensor(img), label=1, source_path="x.png", fold=0)


# --- ingestion -----------------------------------------------------------------

def test_load_assigns_sorted_class_names(tree):
    meta, samples = load_dataset(tree, k=4, seed=0)
    assert meta.class_names == ["class_00", "class_01", "class_02"]
    assert meta.counts == [12, 12, 12]
    assert meta.total == 36 and meta.num_classes == 3
    assert len(samples) == 36


def test_every_fold_has_three_per_class(tree):
    meta, samples = load_dataset(tree, k=4, seed=0)
    for fold in range(4):
        for label in range(3):
            n = sum(1 for s in samples if s.fold == fold and s.label == label)
            assert n == 3


def test_folds_stable_across_loads(tree):
    _, a = load_dataset(tree, k=4, seed=9)
    _, b = load_dataset(tree, k=4, seed=9)
    assert [(s.source_path, s.label, s.fold) for s in a] \
        == [(s.source_path, s.label, s.fold) for s in b]
    _, c = load_dataset(tree, k=4, seed=10)
    assert [s.fold for s in a] != [s.fold for s in c]


def test_pixels_in_unit_interval(tree):
    _, samples = load_dataset(tree, k=2, seed=0)
    for s in samples[:5]:
        assert s.image.dims[:2] == (1, 3)
        assert s.image.data.min() >= 0.0 and s.image.data.max() <= 1.0


def test_bit_depth_scaling(tmp_path):
    for c in range(2):
        os.makedirs(tmp_path / ("c%d" % c))
    a8 = np.arange(16, dtype=np.uint8).reshape(4, 4) * 16
    Image.fromarray(a8, mode="L").save(tmp_path / "c0" / "a.png")
    a16 = (np.arange(16, dtype=np.uint16).reshape(4, 4) * 4096)
    Image.fromarray(a16).save(tmp_path / "c1" / "b.png")
    _, samples = load_dataset(str(tmp_path), k=1, seed=0)
    assert_allclose(samples[0].image.data[0, 0], a8 / 255.0, atol=1e-7)
    assert_allclose(samples[1].image.data[0, 0], a16 / 65535.0, atol=1e-7)


def test_rgb_loads_channel_first(tmp_path):
    os.makedirs(tmp_path / "only")
    rgb = np.zeros((4, 4, 3), np.uint8)
    rgb[..., 1] = 255
    Image.fromarray(rgb, mode="RGB").save(tmp_path / "only" / "g.png")
    _, samples = load_dataset(str(tmp_path), k=1, seed=0)
    img = samples[0].image.data[0]
    assert_array_equal(img[1], np.ones((4, 4), np.float32))
    assert not img[0].any() and not img[2].any()


def test_empty_class_dir_rejected(tmp_path):
    os.makedirs(tmp_path / "empty")
    with pytest.raises(IngestionError, match="no images"):
        load_dataset(str(tmp_path), k=2, seed=0)


def test_undecodable_file_named(tmp_path):
    os.makedirs(tmp_path / "bad")
    junk = tmp_path / "bad" / "junk.png"
    junk.write_bytes(b"this is not a png")
    with pytest.raises(IngestionError, match="junk.png"):
        load_dataset(str(tmp_path), k=1, seed=0)


def test_k_larger_than_smallest_class(tree):
    with pytest.raises(ConfigurationError, match="smallest class"):
        load_dataset(tree, k=13, seed=0)


def test_manifest_overrides_folds(tree, tmp_path):
    make_synthetic(str(tmp_path), classes=2, per_class=3, dims=(8, 8), seed=1)
    lines = []
    for c in range(2):
        for i, part in enumerate(["test", "val", "train"]):
            lines.append("class_%02d/img_%03d.png %s" % (c, i, part))
    (tmp_path / "split.txt").write_text("\n".join(lines) + "\n")
    meta, samples = load_dataset(str(tmp_path), k=5, seed=0)
    assert meta.k == 3
    folds = {os.path.basename(s.source_path): s.fold for s in samples if s.label == 0}
    assert folds == {"img_000.png": 0, "img_001.png": 1, "img_002.png": 2}


def test_manifest_missing_entry(tmp_path):
    make_synthetic(str(tmp_path), classes=2, per_class=2, dims=(8, 8), seed=1)
    (tmp_path / "split.txt").write_text("class_00/img_000.png train\n")
    with pytest.raises(IngestionError, match="not listed"):
        load_dataset(str(tmp_path), k=2, seed=0)


# --- splits ----------------------------------------------------------------------

def test_split_is_exact_partition(tree):
    meta, samples = load_dataset(tree, k=4, seed=3)
    seen = []
    for fold in range(meta.k):
        train, test = split(samples, fold)
        assert len(train) + len(test) == len(samples)
        assert not set(id(s) for s in train) & set(id(s) for s in test)
        seen.extend(s.source_path for s in test)
    assert sorted(seen) == sorted(s.source_path for s in samples)


def test_split_stratification_counting_oracle(tmp_path):
    make_synthetic(str(tmp_path), classes=3, per_class=7, dims=(8, 8), seed=2)
    meta, samples = load_dataset(str(tmp_path), k=3, seed=11)
    for fold in range(3):
        _, test = split(samples, fold)
        for label in range(3):
            n = sum(1 for s in test if s.label == label)
            assert abs(n - 7 / 3) < 1, "fold %d class %d count %d" % (fold, label, n)


def test_split_rejects_out_of_range_fold(tree):
    _, samples = load_dataset(tree, k=4, seed=0)
    with pytest.raises(InputError):
        split(samples, 4)
    with pytest.raises(InputError):
        split(samples, -1)


def test_ratio_split_counting_oracle(tree):
    _, samples = load_dataset(tree, k=2, seed=0)
    train, test = ratio_split(samples, 0.9, seed=1)
    # 0.9 * 12 = 10.8 rounds toward train: 11 train, 1 test per class
    for label in range(3):
        assert sum(1 for s in train if s.label == label) == 11
        assert sum(1 for s in test if s.label == label) == 1
    assert len(train) == 33 and len(test) == 3


def test_ratio_split_deterministic_and_disjoint(tree):
    _, samples = load_dataset(tree, k=2, seed=0)
    t1, e1 = ratio_split(samples, 0.5, seed=4)
    t2, e2 = ratio_split(samples, 0.5, seed=4)
    assert [s.source_path for s in t1] == [s.source_path for s in t2]
    assert [s.source_path for s in e1] == [s.source_path for s in e2]
    assert not set(s.source_path for s in t1) & set(s.source_path for s in e1)


def test_ratio_split_rejects_bad_fraction(tree):
    _, samples = load_dataset(tree, k=2, seed=0)
    for frac in (0.0, 1.0, -0.2, 1.7):
        with pytest.raises(InputError):
            ratio_split(samples, frac, seed=0)


# --- resize and normalize ---------------------------------------------------------

def test_resize_identity():
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 1, (3, 8, 8)).astype(np.float32)
    assert_array_equal(resize_bilinear(img, (8, 8)), img)


def test_resize_constant_stays_constant():
    img = np.full((3, 5, 7), 0.37, np.float32)
    out = resize_bilinear(img, (11, 4))
    assert_allclose(out, 0.37, atol=1e-6)


def test_resize_checkerboard_hand_oracle():
    img = np.array([[1.0, 0.0], [0.0, 1.0]], np.float32)[None]
    out = resize_bilinear(img, (4, 4))
    expect = np.array([
        [1.0, 0.75, 0.25, 0.0],
        [0.75, 0.625, 0.375, 0.25],
        [0.25, 0.375, 0.625, 0.75],
        [0.0, 0.25, 0.75, 1.0]], np.float32)
    assert_allclose(out[0], expect, atol=1e-6)


def test_normalize_identity_and_zero():
    rng = np.random.default_rng(1)
    img = rng.uniform(0, 1, (3, 4, 4)).astype(np.float32)
    assert_array_equal(normalize(img, np.zeros(3), np.ones(3)), img)
    mean = np.array([0.2, 0.5, 0.8], np.float32)
    flat = np.ones((3, 4, 4), np.float32) * mean[:, None, None]
    assert_allclose(normalize(flat, mean, np.ones(3)), 0.0, atol=1e-7)


def test_normalize_round_trip():
    rng = np.random.default_rng(2)
    img = rng.uniform(0, 1, (3, 6, 6)).astype(np.float32)
    back = denormalize(normalize(img))
    assert_allclose(back, img, atol=1e-6)


def test_normalize_rejects_zero_std():
    img = np.ones((3, 2, 2), np.float32)
    with pytest.raises(ConfigurationError, match="std"):
        normalize(img, np.zeros(3), np.array([0.5, 0.0, 0.5]))


def test_to_input_shape(tree):
    _, samples = load_dataset(tree, k=2, seed=0)
    x = to_input(samples[0], (3, 64, 64))
    assert x.shape == (3, 64, 64)
    assert x.dtype == np.float32


# --- augmentation ------------------------------------------------------------------

def test_augment_count_and_labels():
    s = make_sample(np.random.default_rng(3))
    variants = augment(s)
    assert len(variants) == 6
    assert all(v.label == s.label and v.fold == s.fold for v in variants)
    assert_array_equal(variants[0].image.data, s.image.data)


def test_augment_180_is_flip_composition():
    s = make_sample(np.random.default_rng(4))
    variants = augment(s)
    hv = augment(augment(s)[1])[2]
    assert_array_equal(variants[4].image.data, hv.image.data)


def test_augment_rot90_four_times_round_trip():
    s = make_sample(np.random.default_rng(5))
    cur = s
    for _ in range(4):
        cur = augment(cur)[3]
    assert_array_equal(cur.image.data, s.image.data)


def test_augment_flips_flip_the_right_axes():
    img = np.zeros((1, 1, 2, 2), np.float32)
    img[0, 0, 0, 0] = 1.0
    s = Sample(Tensor(img), 0, "x.png", 0)
    variants = augment(s)
    assert variants[1].image.data[0, 0, 0, 1] == 1.0    # horizontal: width flips
    assert variants[2].image.data[0, 0, 1, 0] == 1.0    # vertical: height flips


# --- synthetic corpus ---------------------------------------------------------------

def test_make_synthetic_deterministic(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    make_synthetic(str(a), 3, 4, (16, 16), seed=7)
    make_synthetic(str(b), 3, 4, (16, 16), seed=7)
    for c in range(3):
        for i in range(4):
            rel = os.path.join("class_%02d" % c, "img_%03d.png" % i)
            assert (a / rel).read_bytes() == (b / rel).read_bytes()


def test_make_synthetic_round_trips(tree):
    meta, samples = load_dataset(tree, k=2, seed=0)
    assert meta.num_classes == 3
    assert meta.counts == [12, 12, 12]


def test_make_synthetic_rejects_degenerate():
    with pytest.raises(ConfigurationError):
        make_synthetic("/tmp/unused", classes=1, per_class=4, dims=(8, 8), seed=0)


def test_nearest_centroid_separates_classes(tree):
    _, samples = load_dataset(tree, k=2, seed=0)
    train, test = split(samples, 0)
    centroids = {}
    for label in range(3):
        stack = [s.image.data[0, 0] for s in train if s.label == label]
        centroids[label] = np.mean(stack, axis=0)
    hits = 0
    for s in test:
        dists = {l: np.sum((s.image.data[0, 0] - c) ** 2)
                 for l, c in centroids.items()}
        hits += min(dists, key=dists.get) == s.label
    assert hits / len(test) > 0.9
