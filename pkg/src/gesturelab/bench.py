"""Per-inference latency under a fixed protocol: one untimed warm-up batch,
then ``repetitions`` passes of ``batches`` timed forward calls, single
threaded by default."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import DEFAULT_CLASSES
from .dataset import LabelCodec
from .zoo import BackboneSpec, HeadSpec, assemble_classifier, lookup_backbone

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("model", "size_mb", "depth", "mean_ms", "std_ms", "batches", "repetitions")


@dataclass(frozen=True)
class BenchmarkProtocol:
    batch_size: int = 1
    batches: int = 30
    repetitions: int = 10
    threads: int = 1

    def __post_init__(self):
        for name in ("batch_size", "batches", "repetitions", "threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")


@dataclass(frozen=True)
class BenchmarkResult:
    model_name: str
    size_mb: float
    depth: int | None
    mean_ms_per_inference: float
    std_ms: float
    batches: int
    repetitions: int
    batch_size: int = 1
    threads: int = 1
    precision: str = "float32"
    reference_cpu_ms: float | None = None
    reference_size_mb: float | None = None


def _serialized_mb(model) -> float:
    state_dict = getattr(model, "state_dict", None)
    if state_dict is None:
        return 0.0
    buf = io.BytesIO()
    torch.save(state_dict(), buf)
    return buf.tell() / 2**20


def time_inference(
    model,
    batch_size: int = 1,
    batches: int = 30,
    repetitions: int = 10,
    *,
    input_shape: tuple[int, int, int] | None = None,
    threads: int = 1,
    seed: int = 0,
) -> BenchmarkResult:
    """Mean and standard deviation of wall time per inference (ms).

    ``model`` is any callable taking an N x C x H x W tensor. The input
    shape defaults to ``(3, *model.input_size)``. Model loading and the
    warm-up batch are outside the timed region.
    """
    protocol = BenchmarkProtocol(batch_size, batches, repetitions, threads)
    if input_shape is None:
        input_shape = (3, *getattr(model, "input_size", (224, 224)))
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn((batch_size, *input_shape), generator=gen)
    if hasattr(model, "eval"):
        model.eval()

    previous_threads = torch.get_num_threads()
    torch.set_num_threads(protocol.threads)
    samples = np.empty(batches * repetitions, dtype=np.float64)
    try:
        with torch.inference_mode():
            model(x)  # warm-up, untimed
            k = 0
            for _ in range(repetitions):
                for _ in range(batches):
                    start = time.perf_counter()
                    model(x)
                    samples[k] = (time.perf_counter() - start) * 1000.0 / batch_size
                    k += 1
    finally:
        torch.set_num_threads(previous_threads)

    spec: BackboneSpec | None = getattr(model, "spec", None)
    name = spec.name if spec is not None else getattr(model, "name", type(model).__name__)
    return BenchmarkResult(
        model_name=name,
        size_mb=_serialized_mb(model),
        depth=spec.depth if spec is not None else None,
        mean_ms_per_inference=float(samples.mean()),
        std_ms=float(samples.std()),
        batches=batches,
        repetitions=repetitions,
        batch_size=batch_size,
        threads=protocol.threads,
        precision=getattr(model, "precision", "float32"),
        reference_cpu_ms=spec.reference_cpu_ms if spec is not None else None,
        reference_size_mb=spec.size_mb if spec is not None else None,
    )


def default_loader(weights_dir: str | Path | None = None) -> Callable[[BackboneSpec], object]:
    codec = LabelCodec(DEFAULT_CLASSES)

    def load(spec: BackboneSpec):
        return assemble_classifier(spec, HeadSpec(codec.dimension), codec, weights_dir=weights_dir)

    return load


def compare_models(
    names: Sequence[str],
    protocol: BenchmarkProtocol = BenchmarkProtocol(),
    loader: Callable[[BackboneSpec], object] | None = None,
) -> list[BenchmarkResult]:
    """Time each named backbone in the order given. ``loader`` builds the
    model for a registry entry (by default: assemble it from pretrained
    weights)."""
    specs = [lookup_backbone(n) for n in names]
    loader = loader or default_loader()
    results = []
    for spec in specs:
        model = loader(spec)
        logger.info("timing %s", spec.name)
        result = time_inference(
            model, protocol.batch_size, protocol.batches, protocol.repetitions,
            input_shape=(3, *spec.input_size), threads=protocol.threads,
        )
        results.append(dataclasses.replace(
            result, model_name=spec.name, depth=spec.depth,
            reference_cpu_ms=spec.reference_cpu_ms, reference_size_mb=spec.size_mb,
        ))
        del model
    return results


def render_table(results: Sequence[BenchmarkResult]) -> str:
    header = (f"{'Model':<14}{'Size (MB)':>10}{'Depth':>7}{'Mean (ms)':>11}{'Std (ms)':>10}"
              f"{'Batches':>9}{'Reps':>6}{'Ref size':>10}{'Ref (ms) CPU':>14}")
    lines = [header]
    for r in results:
        depth = "-" if r.depth is None else str(r.depth)
        ref_size = "" if r.reference_size_mb is None else f"{r.reference_size_mb:g}"
        ref_ms = "" if r.reference_cpu_ms is None else f"{r.reference_cpu_ms:.2f}"
        lines.append(
            f"{r.model_name:<14}{r.size_mb:>10.1f}{depth:>7}{r.mean_ms_per_inference:>11.2f}{r.std_ms:>10.2f}"
            f"{r.batches:>9}{r.repetitions:>6}{ref_size:>10}{ref_ms:>14}"
        )
    if results:
        r = results[0]
        lines.append(f"batch size {r.batch_size}, {r.threads} thread(s), {r.precision}; "
                     "reference columns are published figures on other hardware")
    return "\n".join(lines) + "\n"


def write_csv(results: Sequence[BenchmarkResult], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in results:
            writer.writerow([
                r.model_name, f"{r.size_mb:.2f}", "" if r.depth is None else r.depth,
                f"{r.mean_ms_per_inference:.3f}", f"{r.std_ms:.3f}", r.batches, r.repetitions,
            ])
    return path
