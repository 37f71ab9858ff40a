from collections import Counter

import cv2
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import blank_frames, write_video
from gesturelab import DEFAULT_CLASSES
from gesturelab.dataset import (
    IMAGENET_MEANS,
    AugmentationConfig,
    FrameRecord,
    IngestionError,
    LabelCodec,
    UnknownClassError,
    augment_frame,
    build_manifest,
    encode_labels,
    ingest_videos,
    preprocess_frame,
    stratified_split,
    test_count,
)

TABLE1 = {"Fingers Interlaced": 1346, "Fingers Interlocked": 1349, "Palm2Palm": 1329}


def tiny_records(counts: dict[str, int]) -> list[FrameRecord]:
    pixel = np.zeros((1, 1, 3), dtype=np.uint8)
    return [FrameRecord(pixel, name, f"{name}/v", i) for name, n in counts.items() for i in range(n)]


# -- ingestion ---------------------------------------------------------------

def test_ingest_25s_video_every_frame(tmp_path):
    (tmp_path / "wave").mkdir()
    write_video(tmp_path / "wave" / "clip.mp4", blank_frames(750), fps=30)
    records = ingest_videos(tmp_path, stride=1)
    assert len(records) == 750
    assert [r.frame_index for r in records] == list(range(750))
    assert {r.class_name for r in records} == {"wave"}
    assert records[0].image.shape == (24, 32, 3)


def test_ingest_stride_keeps_source_indices(tmp_path):
    (tmp_path / "wave").mkdir()
    write_video(tmp_path / "wave" / "clip.mp4", blank_frames(750))
    records = ingest_videos(tmp_path, stride=5)
    assert len(records) == 150
    assert [r.frame_index for r in records[:4]] == [0, 5, 10, 15]
    assert records[-1].frame_index == 745


def test_ingest_order_and_labels(tmp_path):
    for cls in ("b", "a"):
        (tmp_path / cls).mkdir()
        write_video(tmp_path / cls / "2.mp4", blank_frames(3))
        write_video(tmp_path / cls / "1.mp4", blank_frames(2))
    records = ingest_videos(tmp_path, workers=3)
    keys = [r.key for r in records]
    assert keys == sorted(keys)
    assert keys[0] == ("a", "a/1.mp4", 0)
    assert len(records) == 10


def test_ingest_channel_order_is_rgb(tmp_path):
    (tmp_path / "red").mkdir()
    img = np.zeros((8, 8, 3), dtype=np.uint8)
    img[..., 2] = 255  # red in BGR
    cv2.imwrite(str(tmp_path / "red" / "f.png"), img)
    (rec,) = ingest_videos(tmp_path)
    assert rec.image[0, 0].tolist() == [255, 0, 0]


def test_ingest_images_with_stride(tmp_path):
    (tmp_path / "c").mkdir()
    for i in range(7):
        cv2.imwrite(str(tmp_path / "c" / f"{i:02d}.png"), np.zeros((4, 4, 3), np.uint8))
    assert len(ingest_videos(tmp_path, stride=3)) == 3


def test_ingest_empty_class(tmp_path):
    (tmp_path / "full").mkdir()
    write_video(tmp_path / "full" / "a.mp4", blank_frames(2))
    (tmp_path / "hollow").mkdir()
    with pytest.raises(IngestionError, match="empty class 'hollow'"):
        ingest_videos(tmp_path)


def test_ingest_corrupt_video_names_file(tmp_path):
    (tmp_path / "c").mkdir()
    (tmp_path / "c" / "broken.mp4").write_bytes(b"not a video" * 20)
    with pytest.raises(IngestionError, match="broken.mp4"):
        ingest_videos(tmp_path)


def test_ingest_rejects_bad_stride(tmp_path):
    with pytest.raises(ValueError):
        ingest_videos(tmp_path, stride=0)


def test_frame_record_requires_three_channels():
    with pytest.raises(ValueError):
        FrameRecord(np.zeros((4, 4), np.uint8), "a", "v", 0)


# -- manifest ----------------------------------------------------------------

def test_manifest_table1_counts(tmp_path):
    m = build_manifest(tiny_records(TABLE1))
    assert m.classes == DEFAULT_CLASSES
    assert m.total == 4024
    assert m.balance_ratio == pytest.approx(1349 / 1329)
    assert m.balance_ratio == pytest.approx(1.015, abs=1e-3)
    assert m.warnings == ()
    m.to_csv(tmp_path / "manifest.csv")
    lines = (tmp_path / "manifest.csv").read_text().splitlines()
    assert lines == ["class,count", "Fingers Interlaced,1346", "Fingers Interlocked,1349", "Palm2Palm,1329"]


def test_manifest_single_class():
    assert build_manifest(tiny_records({"a": 5})).balance_ratio == 1.0


def test_manifest_imbalance_warns_without_raising():
    m = build_manifest(tiny_records({"A": 200, "B": 100}), balance_tolerance=1.05)
    assert m.balance_ratio == 2.0
    assert len(m.warnings) == 1


@given(st.dictionaries(st.sampled_from("abcdef"), st.integers(1, 30), min_size=1))
def test_manifest_total_matches_input(counts):
    records = tiny_records(counts)
    m = build_manifest(records)
    assert m.total == len(records) == sum(m.counts.values())
    assert list(m.classes) == sorted(m.classes)
    assert m.balance_ratio >= 1.0


# -- label codec -------------------------------------------------------------

def test_codec_lexicographic_one_hot(codec3):
    codec = LabelCodec.from_names(reversed(DEFAULT_CLASSES))
    assert codec == codec3
    assert encode_labels(["Fingers Interlocked"], codec).tolist() == [[0, 1, 0]]


def test_codec_single_class():
    codec = LabelCodec(("only",))
    assert encode_labels(["only"], codec).tolist() == [[1]]


def test_codec_round_trip(codec3):
    names = list(DEFAULT_CLASSES)
    encoded = codec3.encode(names)
    assert codec3.decode(encoded) == names
    assert np.array_equal(codec3.encode(codec3.decode(encoded)), encoded)


def test_codec_unknown_name(codec3):
    with pytest.raises(UnknownClassError, match="Thumbs"):
        codec3.encode(["Thumbs"])


@given(st.lists(st.sampled_from(DEFAULT_CLASSES), max_size=50))
def test_codec_rows_are_one_hot(names):
    codec = LabelCodec(DEFAULT_CLASSES)
    rows = codec.encode(names)
    assert rows.shape == (len(names), 3)
    assert (rows.sum(axis=1) == 1).all()
    assert ((rows == 0) | (rows == 1)).all()
    assert codec.decode(rows) == names if names else True


# -- split -------------------------------------------------------------------

def test_test_count_rounds_half_away_from_zero():
    assert test_count(1346, 0.25) == 337  # 336.5
    assert test_count(1349, 0.25) == 337  # 337.25
    assert test_count(1329, 0.25) == 332  # 332.25
    assert test_count(4, 0.25) == 1
    assert test_count(10, 0.05) == 1  # 0.5 exactly, despite 0.05 being inexact in binary
    assert test_count(2, 0.25) == 1


@pytest.mark.parametrize("seed", [0, 1, 42, 12345])
def test_split_table1_supports(seed):
    split = stratified_split(tiny_records(TABLE1), 0.25, seed)
    supports = Counter(r.class_name for r in split.test)
    assert [supports[c] for c in DEFAULT_CLASSES] == [337, 337, 332]
    assert len(split.test) == 1006
    assert len(split.train) == 4024 - 1006


def test_split_deterministic():
    records = tiny_records(TABLE1)
    a = stratified_split(records, 0.25, 7)
    b = stratified_split(records, 0.25, 7)
    assert [r.key for r in a.test] == [r.key for r in b.test]
    assert [r.key for r in a.train] == [r.key for r in b.train]
    c = stratified_split(records, 0.25, 8)
    assert [r.key for r in a.test] != [r.key for r in c.test]


def test_split_four_records():
    split = stratified_split(tiny_records({"a": 4}), 0.25, 0)
    assert (len(split.train), len(split.test)) == (3, 1)


def test_split_rejects_bad_ratio():
    with pytest.raises(ValueError):
        stratified_split(tiny_records({"a": 4}), 1.0, 0)


@settings(max_examples=60)
@given(
    st.dictionaries(st.sampled_from("abcde"), st.integers(1, 40), min_size=1),
    st.floats(0.05, 0.95),
    st.integers(0, 2**31),
)
def test_split_is_a_partition(counts, ratio, seed):
    records = tiny_records(counts)
    split = stratified_split(records, ratio, seed)
    train_ids = {id(r) for r in split.train}
    test_ids = {id(r) for r in split.test}
    assert not train_ids & test_ids
    assert train_ids | test_ids == {id(r) for r in records}
    assert len(split.train) + len(split.test) == len(records)
    test_counts = Counter(r.class_name for r in split.test)
    for name, n in counts.items():
        assert test_counts[name] == test_count(n, ratio)


# -- preprocessing -----------------------------------------------------------

def test_preprocess_mean_identity():
    img = np.empty((10, 12, 3), dtype=np.float32)
    img[:] = IMAGENET_MEANS
    out = preprocess_frame(img, (10, 12), IMAGENET_MEANS)
    assert np.array_equal(out, np.zeros_like(out))


def test_preprocess_shape():
    img = np.random.default_rng(0).integers(0, 256, (480, 640, 3), dtype=np.uint8)
    assert preprocess_frame(img, (224, 224)).shape == (224, 224, 3)


def test_preprocess_zero_means_is_bilinear_resize():
    img = np.random.default_rng(0).integers(0, 256, (48, 64, 3), dtype=np.uint8)
    out = preprocess_frame(img, (24, 32), (0, 0, 0))
    expected = cv2.resize(img, (32, 24), interpolation=cv2.INTER_LINEAR).astype(np.float32)
    assert np.array_equal(out, expected)


def test_preprocess_accepts_records_and_stds():
    rec = FrameRecord(np.full((4, 4, 3), 10, np.uint8), "a", "v", 0)
    out = preprocess_frame(rec, (4, 4), (4, 4, 4), (2, 3, 6))
    assert out[0, 0].tolist() == [3.0, 2.0, 1.0]


def test_preprocess_rejects_non_rgb():
    with pytest.raises(ValueError):
        preprocess_frame(np.zeros((8, 8, 4), np.uint8), (8, 8))


@given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 2**31))
def test_preprocess_identity_property(h, w, seed):
    img = np.random.default_rng(seed).integers(0, 256, (h, w, 3), dtype=np.uint8)
    assert np.array_equal(preprocess_frame(img, (h, w), (0.0, 0.0, 0.0)), img.astype(np.float32))


# -- augmentation ------------------------------------------------------------

def _image(seed=0, shape=(40, 50, 3)):
    return np.random.default_rng(seed).integers(0, 256, shape, dtype=np.uint8)


def test_augment_zero_config_identity():
    img = _image()
    assert np.array_equal(augment_frame(img, AugmentationConfig.disabled(), 3), img)


@given(st.integers(0, 2**32 - 1))
def test_augment_zero_config_identity_any_seed(seed):
    img = _image(1, (9, 7, 3))
    assert np.array_equal(augment_frame(img, AugmentationConfig.disabled(), seed), img)


def _flip_seed(cfg):
    img = _image()
    for seed in range(100):
        if not np.array_equal(augment_frame(img, cfg, seed), img):
            return seed
    raise AssertionError("no flipping seed in range")


def test_augment_flip_is_an_involution():
    cfg = AugmentationConfig(0, 0, 0, 0, 0, True)
    seed = _flip_seed(cfg)
    img = _image()
    once = augment_frame(img, cfg, seed)
    assert np.array_equal(once, img[:, ::-1])
    assert np.array_equal(augment_frame(once, cfg, seed), img)


def test_augment_deterministic_and_shape_preserving():
    cfg = AugmentationConfig(rotation_degrees=30, zoom_fraction=0, width_shift_fraction=0,
                             height_shift_fraction=0, shear_fraction=0, horizontal_flip=False)
    img = _image()
    a, b = augment_frame(img, cfg, 11), augment_frame(img, cfg, 11)
    assert np.array_equal(a, b)
    assert a.shape == img.shape and a.dtype == img.dtype
    assert not np.array_equal(a, img)
    assert not np.array_equal(a, augment_frame(img, cfg, 12))


def test_augment_default_config_shape():
    img = _image(2, (33, 47, 3))
    for seed in range(10):
        assert augment_frame(img, AugmentationConfig(), seed).shape == img.shape


def test_augment_does_not_touch_input():
    img = _image()
    before = img.copy()
    augment_frame(img, AugmentationConfig(), 5)
    assert np.array_equal(img, before)


@pytest.mark.parametrize("kwargs", [
    {"zoom_fraction": 1.5}, {"shear_fraction": -0.1}, {"rotation_degrees": 181},
])
def test_augmentation_config_bounds(kwargs):
    with pytest.raises(ValueError):
        AugmentationConfig(**kwargs)
