"""Procedural data and stand-in backbone checkpoints for offline use.

Nothing here is needed when real frames and real ImageNet checkpoints are
available. The surrogate checkpoints are *not* ImageNet weights: they are
seeded He-initialised networks whose BatchNorm statistics are estimated on a
label-free corpus of random gratings, which is enough for the frozen-backbone
pipeline to learn well-separated textures.

    python -m gesturelab.synthetic weights --out weights/
    python -m gesturelab.synthetic dataset --out ds/ --per-class 300
"""

from __future__ import annotations

import argparse
import logging
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np
import torch
import torch.nn as nn

from . import DEFAULT_CLASSES
from .dataset import IMAGENET_MEANS, FrameRecord, preprocess_frame
from .zoo import REGISTRY, FeatureExtractor, build_backbone_net, lookup_backbone

logger = logging.getLogger(__name__)


def texture_image(class_index: int, rng: np.random.Generator, size: int = 96) -> np.ndarray:
    """One RGB uint8 texture. Family 0: broad smooth bands; 1: fine square-wave
    stripes; 2: coarse blocky speckle. Orientation, phase, base colour and contrast
    are random in every family."""
    y, x = np.mgrid[0:size, 0:size] / size
    theta = rng.uniform(0, np.pi)
    phase = rng.uniform(0, 2 * np.pi)
    u = x * np.cos(theta) + y * np.sin(theta)
    family = class_index % 3
    if family == 0:
        v = np.sin(2 * np.pi * rng.uniform(1, 2) * u + phase)
    elif family == 1:
        v = np.sign(np.sin(2 * np.pi * rng.uniform(14, 20) * u + phase))
    else:
        cell = max(size // 12, 1)  # mid scale, between the bands and the stripes
        cells = -(-size // cell)
        v = rng.choice([-1.0, 1.0], size=(cells, cells)).repeat(cell, 0).repeat(cell, 1)[:size, :size]
    base = rng.uniform(60, 200, 3)
    amplitude = rng.uniform(40, 60)
    img = base + amplitude * v[..., None] + rng.normal(0, 8, (size, size, 3))
    return np.clip(img, 0, 255).astype(np.uint8)


def texture_records(
    per_class: int,
    seed: int = 0,
    class_names: Sequence[str] = DEFAULT_CLASSES,
    size: int = 96,
) -> list[FrameRecord]:
    rng = np.random.default_rng(seed)
    return [
        FrameRecord(texture_image(k, rng, size), name, f"{name}/synthetic", i)
        for k, name in enumerate(class_names)
        for i in range(per_class)
    ]


def make_texture_dataset(
    root: str | Path,
    per_class: int = 300,
    seed: int = 0,
    class_names: Sequence[str] = DEFAULT_CLASSES,
    size: int = 96,
) -> Path:
    """Write ``<root>/<class>/<nnnn>.png`` frames."""
    root = Path(root)
    for rec in texture_records(per_class, seed, class_names, size):
        class_dir = root / rec.class_name
        class_dir.mkdir(parents=True, exist_ok=True)
        cv2.imwrite(str(class_dir / f"{rec.frame_index:04d}.png"), cv2.cvtColor(rec.image, cv2.COLOR_RGB2BGR))
    return root


def grating_corpus(count: int, seed: int, size: int = 96) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:size, 0:size] / size
    images = []
    for _ in range(count):
        theta = rng.uniform(0, np.pi)
        v = np.sin(2 * np.pi * rng.uniform(1, 12) * (x * np.cos(theta) + y * np.sin(theta)) + rng.uniform(0, 6))
        img = (v[..., None] + 1) / 2 * rng.uniform(0, 255, 3) + rng.normal(0, rng.uniform(0, 40), (size, size, 3))
        images.append(np.clip(img, 0, 255).astype(np.uint8))
    return images


def build_surrogate_checkpoint(
    name: str,
    out_path: str | Path,
    seed: int = 0,
    calibration_images: int = 64,
    feature_gain: float = 4.0,
) -> Path:
    """Save a stand-in topless checkpoint for ``name``.

    ResNet-50 gets zero-initialised residual branches, so its features come
    from a shallow random network rather than a washed-out deep one, and its
    last projection BatchNorm is scaled by ``feature_gain``. All backbones get
    BatchNorm statistics from ``calibration_images`` random gratings (0 skips
    calibration and leaves the identity statistics).
    """
    spec = lookup_backbone(name)
    torch.manual_seed(seed)
    net = build_backbone_net(name, zero_init_residual=(name == "resnet50"))
    if calibration_images > 0:
        extractor = FeatureExtractor(name, net)
        batch = np.stack([
            preprocess_frame(img, spec.input_size, IMAGENET_MEANS)
            for img in grating_corpus(calibration_images, seed + 1)
        ])
        inputs = torch.from_numpy(batch).permute(0, 3, 1, 2)
        for module in net.modules():
            if isinstance(module, nn.modules.batchnorm._BatchNorm):
                module.reset_running_stats()
                module.momentum = None  # cumulative average over the corpus
        net.train()
        with torch.no_grad():
            for start in range(0, len(inputs), 16):
                extractor(inputs[start:start + 16])
        net.eval()
    if name == "resnet50":
        with torch.no_grad():
            final_bn = net.layer4[0].downsample[1]
            final_bn.weight.mul_(feature_gain)
            final_bn.bias.mul_(feature_gain)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(net.state_dict(), out_path)
    logger.info("wrote surrogate %s checkpoint to %s", name, out_path)
    return out_path


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="python -m gesturelab.synthetic", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="what", required=True)
    w = sub.add_parser("weights", help="write surrogate backbone checkpoints")
    w.add_argument("--out", required=True, type=Path)
    w.add_argument("--models", default=",".join(REGISTRY))
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--calibration-images", type=int, default=64)
    d = sub.add_parser("dataset", help="write a procedural texture frame dataset")
    d.add_argument("--out", required=True, type=Path)
    d.add_argument("--per-class", type=int, default=300)
    d.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    if args.what == "weights":
        for name in args.models.split(","):
            build_surrogate_checkpoint(name, args.out / f"{name}.pth", args.seed, args.calibration_images)
    else:
        make_texture_dataset(args.out, args.per_class, args.seed)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
