"""Frame datasets: ingestion, manifest, label codec, stratified split,
preprocessing and augmentation."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Sequence

import cv2
import numpy as np

logger = logging.getLogger(__name__)

VIDEO_EXTENSIONS = {".mp4", ".avi", ".mov", ".mkv", ".m4v", ".mpg", ".mpeg", ".wmv", ".webm"}
IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png", ".bmp"}

# RGB order, 0-255 scale.
IMAGENET_MEANS = (123.68, 116.779, 103.939)


class IngestionError(RuntimeError):
    pass


class UnknownClassError(ValueError):
    pass


@dataclass(eq=False)
class FrameRecord:
    image: np.ndarray  # H x W x 3, uint8 RGB
    class_name: str
    source_video: str
    frame_index: int

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"frame must have 3 channels, got shape {self.image.shape}")
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.class_name, self.source_video, self.frame_index)


@dataclass(frozen=True)
class DatasetManifest:
    classes: tuple[str, ...]
    counts: dict[str, int]
    total: int
    balance_ratio: float
    warnings: tuple[str, ...] = ()

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["class", "count"])
            for name in self.classes:
                writer.writerow([name, self.counts[name]])
        return path


@dataclass(frozen=True)
class LabelCodec:
    """Ordered class names <-> one-hot rows."""

    class_names: tuple[str, ...]

    def __post_init__(self):
        if not self.class_names:
            raise ValueError("a label codec needs at least one class")
        if len(set(self.class_names)) != len(self.class_names):
            raise ValueError("duplicate class names in codec")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(self.class_names)})

    @classmethod
    def from_names(cls, names: Iterable[str]) -> "LabelCodec":
        return cls(tuple(sorted(set(names))))

    @property
    def dimension(self) -> int:
        return len(self.class_names)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise UnknownClassError(
                f"unknown class name {name!r}; codec has {list(self.class_names)}"
            ) from None

    def encode(self, names: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(names), self.dimension), dtype=np.float32)
        for row, name in enumerate(names):
            out[row, self.index(name)] = 1.0
        return out

    def decode(self, rows: np.ndarray) -> list[str]:
        rows = np.atleast_2d(np.asarray(rows))
        if rows.shape[1] != self.dimension:
            raise ValueError(f"expected rows of length {self.dimension}, got {rows.shape[1]}")
        return [self.class_names[i] for i in np.argmax(rows, axis=1)]


@dataclass
class DataSplit:
    train: list[FrameRecord]
    test: list[FrameRecord]
    ratio: float = 0.25
    seed: int = 42

    @property
    def classes(self) -> tuple[str, ...]:
        return tuple(sorted({r.class_name for r in self.train} | {r.class_name for r in self.test}))


@dataclass(frozen=True)
class AugmentationConfig:
    rotation_degrees: float = 30.0
    zoom_fraction: float = 0.15
    width_shift_fraction: float = 0.2
    height_shift_fraction: float = 0.2
    shear_fraction: float = 0.15
    horizontal_flip: bool = True

    def __post_init__(self):
        for name in ("zoom_fraction", "width_shift_fraction", "height_shift_fraction", "shear_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if not 0.0 <= self.rotation_degrees <= 180.0:
            raise ValueError(f"rotation_degrees must be in [0, 180], got {self.rotation_degrees}")

    @classmethod
    def disabled(cls) -> "AugmentationConfig":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, False)


# -- ingestion ---------------------------------------------------------------

def _read_video(path: Path, class_name: str, source: str, stride: int) -> list[FrameRecord]:
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise IngestionError(f"cannot open video {path}")
    records = []
    index = 0
    try:
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            if index % stride == 0:
                rgb = cv2.cvtColor(frame, cv2.COLOR_BGR2RGB)
                records.append(FrameRecord(rgb, class_name, source, index))
            index += 1
    finally:
        cap.release()
    if index == 0:
        raise IngestionError(f"no decodable frames in video {path}")
    return records


def _read_image(path: Path, class_name: str, source: str) -> list[FrameRecord]:
    frame = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if frame is None:
        raise IngestionError(f"cannot read image {path}")
    return [FrameRecord(cv2.cvtColor(frame, cv2.COLOR_BGR2RGB), class_name, source, 0)]


def ingest_videos(video_dir: str | Path, stride: int = 1, workers: int = 1) -> list[FrameRecord]:
    """Read ``<root>/<class_name>/<media>`` into frame records.

    Videos yield every ``stride``-th frame, keeping source frame numbers as
    ``frame_index``. Loose images count as single-frame sources and the
    stride is applied over each class's sorted image listing. Records come
    back ordered by (class, source, frame_index) whatever ``workers`` is.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    root = Path(video_dir)
    if not root.is_dir():
        raise IngestionError(f"dataset root {root} is not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise IngestionError(f"no class directories under {root}")

    jobs = []
    for class_dir in class_dirs:
        files = sorted(p for p in class_dir.iterdir() if p.is_file())
        videos = [p for p in files if p.suffix.lower() in VIDEO_EXTENSIONS]
        images = [p for p in files if p.suffix.lower() in IMAGE_EXTENSIONS][::stride]
        if not videos and not images:
            raise IngestionError(f"empty class {class_dir.name!r}: no videos or images in {class_dir}")
        for p in sorted(videos + images):
            jobs.append((p, class_dir.name, f"{class_dir.name}/{p.name}"))

    def load(job):
        path, class_name, source = job
        if path.suffix.lower() in VIDEO_EXTENSIONS:
            return _read_video(path, class_name, source, stride)
        return _read_image(path, class_name, source)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(load, jobs))
    else:
        chunks = [load(job) for job in jobs]
    records = [r for chunk in chunks for r in chunk]
    logger.info("ingested %d frames from %d sources under %s", len(records), len(jobs), root)
    return records


def build_manifest(records: Sequence[FrameRecord], balance_tolerance: float = 1.05) -> DatasetManifest:
    if not records:
        raise ValueError("cannot build a manifest from zero records")
    counts = Counter(r.class_name for r in records)
    classes = tuple(sorted(counts))
    ratio = max(counts.values()) / min(counts.values())
    warnings = []
    if ratio > balance_tolerance:
        msg = f"class imbalance: max/min count ratio {ratio:.3f} exceeds tolerance {balance_tolerance}"
        logger.warning(msg)
        warnings.append(msg)
    return DatasetManifest(
        classes=classes,
        counts={c: counts[c] for c in classes},
        total=sum(counts.values()),
        balance_ratio=ratio,
        warnings=tuple(warnings),
    )


def encode_labels(class_names: Sequence[str], codec: LabelCodec) -> np.ndarray:
    return codec.encode(class_names)


# -- splitting ---------------------------------------------------------------

def test_count(class_count: int, ratio: float) -> int:
    """Per-class test quota, rounding half away from zero."""
    exact = Decimal(repr(ratio)) * class_count
    return int(exact.quantize(Decimal(1), rounding=ROUND_HALF_UP))


test_count.__test__ = False  # keep pytest from collecting it


def stratified_split(records: Sequence[FrameRecord], ratio: float = 0.25, seed: int = 42) -> DataSplit:
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    by_class: dict[str, list[int]] = {}
    for i, r in enumerate(records):
        by_class.setdefault(r.class_name, []).append(i)
    rng = np.random.default_rng(seed)
    test_idx: set[int] = set()
    for name in sorted(by_class):
        members = by_class[name]
        order = rng.permutation(len(members))
        test_idx.update(members[j] for j in order[: test_count(len(members), ratio)])
    train = [r for i, r in enumerate(records) if i not in test_idx]
    test = [r for i, r in enumerate(records) if i in test_idx]
    return DataSplit(train=train, test=test, ratio=ratio, seed=seed)


# -- per-frame transforms ----------------------------------------------------

def _image_of(frame: FrameRecord | np.ndarray) -> np.ndarray:
    return frame.image if isinstance(frame, FrameRecord) else np.asarray(frame)


def preprocess_frame(
    frame: FrameRecord | np.ndarray,
    target_size: tuple[int, int],
    channel_means: Sequence[float] = IMAGENET_MEANS,
    channel_stds: Sequence[float] | None = None,
) -> np.ndarray:
    """Bilinear resize to ``target_size`` (H, W), then per-channel mean
    subtraction (and optional division by ``channel_stds``). Returns float32
    H x W x 3."""
    image = _image_of(frame)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected a 3-channel image, got shape {image.shape}")
    h, w = target_size
    if image.shape[:2] != (h, w):
        image = cv2.resize(image, (w, h), interpolation=cv2.INTER_LINEAR)
    out = image.astype(np.float32) - np.asarray(channel_means, dtype=np.float32)
    if channel_stds is not None:
        out /= np.asarray(channel_stds, dtype=np.float32)
    return out


def _affine_for(config: AugmentationConfig, rng: np.random.Generator, h: int, w: int):
    # draw every parameter unconditionally so the stream layout never depends on config
    angle = math.radians(rng.uniform(-config.rotation_degrees, config.rotation_degrees))
    tx = rng.uniform(-config.width_shift_fraction, config.width_shift_fraction) * w
    ty = rng.uniform(-config.height_shift_fraction, config.height_shift_fraction) * h
    shear = rng.uniform(-config.shear_fraction, config.shear_fraction)
    zx, zy = rng.uniform(1.0 - config.zoom_fraction, 1.0 + config.zoom_fraction, size=2)
    flip = config.horizontal_flip and rng.random() < 0.5

    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    to_center = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]], dtype=np.float64)
    zoom = np.diag([zx, zy, 1.0])
    shear_m = np.array([[1, shear, 0], [0, 1, 0], [0, 0, 1]], dtype=np.float64)
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)
    back = np.array([[1, 0, cx + tx], [0, 1, cy + ty], [0, 0, 1]], dtype=np.float64)
    return back @ rot @ shear_m @ zoom @ to_center, flip


def augment_frame(frame: np.ndarray, config: AugmentationConfig, seed: int) -> np.ndarray:
    """Random rotation/shift/shear/zoom (nearest-edge fill) and optional
    horizontal flip, drawn from ``seed``."""
    image = _image_of(frame)
    rng = np.random.default_rng(seed)
    h, w = image.shape[:2]
    matrix, flip = _affine_for(config, rng, h, w)
    out = image
    if not np.array_equal(matrix, np.eye(3)):
        out = cv2.warpAffine(
            image, matrix[:2], (w, h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE
        )
    if flip:
        out = out[:, ::-1]
    return np.ascontiguousarray(out) if out is not image else image.copy()
