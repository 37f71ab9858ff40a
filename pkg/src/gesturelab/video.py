"""Whole-video prediction with a rolling probability queue."""

from __future__ import annotations

import csv
import logging
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import cv2
import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_QUEUE_CAPACITY = 128
_FOURCC = {".mp4": "mp4v", ".m4v": "mp4v", ".mov": "mp4v", ".avi": "MJPG", ".mkv": "MJPG"}


class VideoReadError(RuntimeError):
    pass


class PredictionQueue:
    """Fixed-capacity buffer of probability vectors; the oldest entry drops
    out once ``capacity`` is reached."""

    def __init__(self, capacity: int = DEFAULT_QUEUE_CAPACITY, tolerance: float = 1e-6):
        if capacity < 1:
            raise ValueError(f"queue capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.tolerance = tolerance
        self._entries: deque[np.ndarray] = deque(maxlen=capacity)

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    @property
    def entries(self) -> list[np.ndarray]:
        return list(self._entries)

    def push(self, probs) -> None:
        v = np.asarray(probs, dtype=np.float64).reshape(-1)
        if self._entries and v.shape != self._entries[0].shape:
            raise ValueError(f"expected a vector of length {self._entries[0].size}, got {v.size}")
        if abs(v.sum() - 1.0) > self.tolerance or (v < 0).any():
            raise ValueError(f"queue entries must be probability vectors (sum={v.sum():.8f})")
        self._entries.append(v)

    def extend(self, rows: Iterable) -> None:
        for row in rows:
            self.push(row)


def rolling_average(queue: PredictionQueue) -> tuple[np.ndarray, int]:
    """Element-wise mean of the queued vectors and its argmax (ties go to the
    lowest index)."""
    if len(queue) == 0:
        raise ValueError("cannot average an empty prediction queue")
    mean = np.mean(np.stack(queue.entries), axis=0)
    return mean, int(np.argmax(mean))


@dataclass
class VideoPrediction:
    per_frame_labels: list[str]
    smoothed_labels: list[str]
    output_path: Path | None
    fps: float = 0.0

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame_index", "per_frame_label", "smoothed_label"])
            for i, (raw, smooth) in enumerate(zip(self.per_frame_labels, self.smoothed_labels)):
                writer.writerow([i, raw, smooth])
        return path


def smooth_labels(prob_rows: Iterable, capacity: int) -> tuple[list[int], list[int]]:
    """Per-frame argmax indices and queue-smoothed indices for a sequence of
    probability rows."""
    queue = PredictionQueue(capacity)
    raw, smoothed = [], []
    for row in prob_rows:
        queue.push(row)
        raw.append(int(np.argmax(row)))
        smoothed.append(rolling_average(queue)[1])
    return raw, smoothed


def annotate(frame_bgr: np.ndarray, text: str) -> np.ndarray:
    out = frame_bgr.copy()
    h = out.shape[0]
    scale = max(h / 480.0, 0.35)
    thickness = max(int(round(2 * scale)), 1)
    origin = (int(10 * scale) + 2, int(35 * scale) + 2)
    cv2.putText(out, text, origin, cv2.FONT_HERSHEY_SIMPLEX, scale, (0, 0, 0), thickness + 2, cv2.LINE_AA)
    cv2.putText(out, text, origin, cv2.FONT_HERSHEY_SIMPLEX, scale, (0, 255, 0), thickness, cv2.LINE_AA)
    return out


def _frames(cap: cv2.VideoCapture, chunk: int):
    batch = []
    while True:
        ok, frame = cap.read()
        if not ok:
            break
        batch.append(frame)
        if len(batch) == chunk:
            yield batch
            batch = []
    if batch:
        yield batch


def predict_video(
    model,
    video_path: str | Path,
    queue_capacity: int = DEFAULT_QUEUE_CAPACITY,
    out_path: str | Path | None = None,
    batch_size: int = 16,
) -> VideoPrediction:
    """Classify every frame, smooth with a rolling queue, and write the
    smoothed label onto each frame of ``out_path`` (source fps and size).

    ``model`` needs ``codec.class_names`` and ``predict_frames(rgb_frames)``
    returning probability rows; frames are predicted in chunks of
    ``batch_size`` but pushed through the queue strictly in order.
    """
    video_path = Path(video_path)
    if out_path is not None and not Path(out_path).parent.is_dir():
        raise OSError(f"output directory {Path(out_path).parent} does not exist")
    cap = cv2.VideoCapture(str(video_path))
    if not cap.isOpened():
        raise VideoReadError(f"cannot open video {video_path}")
    names = model.codec.class_names
    fps = cap.get(cv2.CAP_PROP_FPS) or 30.0
    queue = PredictionQueue(queue_capacity)
    writer = None
    per_frame, smoothed = [], []
    try:
        for chunk in _frames(cap, batch_size):
            probs = model.predict_frames([cv2.cvtColor(f, cv2.COLOR_BGR2RGB) for f in chunk])
            for frame, row in zip(chunk, probs):
                queue.push(row)
                label = names[rolling_average(queue)[1]]
                per_frame.append(names[int(np.argmax(row))])
                smoothed.append(label)
                if out_path is not None:
                    if writer is None:
                        writer = _open_writer(Path(out_path), fps, frame.shape[1], frame.shape[0])
                    writer.write(annotate(frame, f"activity: {label}"))
    finally:
        cap.release()
        if writer is not None:
            writer.release()
    if not per_frame:
        raise VideoReadError(f"no decodable frames in video {video_path}")
    logger.info("predicted %d frames of %s", len(per_frame), video_path)
    return VideoPrediction(per_frame, smoothed, Path(out_path) if out_path else None, fps)


def _open_writer(path: Path, fps: float, width: int, height: int) -> cv2.VideoWriter:
    fourcc = cv2.VideoWriter_fourcc(*_FOURCC.get(path.suffix.lower(), "mp4v"))
    writer = cv2.VideoWriter(str(path), fourcc, fps, (width, height))
    if not writer.isOpened():
        raise OSError(f"cannot open {path} for writing")
    return writer
