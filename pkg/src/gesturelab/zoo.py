"""Backbone registry, frozen-base classifier assembly and model artifacts."""

from __future__ import annotations

import contextlib
import hashlib
import json
import logging
import os
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .dataset import IMAGENET_MEANS, FrameRecord, LabelCodec, preprocess_frame

logger = logging.getLogger(__name__)

WEIGHTS_ENV = "GESTURELAB_WEIGHTS_DIR"
WEIGHTS_FILE = "model.weights"
LABELS_FILE = "labels.json"
SPEC_FILE = "spec.json"


class UnknownBackboneError(KeyError):
    def __str__(self):
        return self.args[0]


class WeightsError(RuntimeError):
    pass


class ArtifactError(FileNotFoundError):
    pass


@dataclass(frozen=True)
class BackboneSpec:
    name: str
    input_size: tuple[int, int]
    feature_dim: int
    size_mb: float
    top1: float
    top5: float
    depth: int | None
    reference_cpu_ms: float

    def __post_init__(self):
        if self.top1 > self.top5:
            raise ValueError("top-1 accuracy cannot exceed top-5")
        if min(self.input_size) <= 0 or self.feature_dim <= 0:
            raise ValueError("input_size and feature_dim must be positive")


# Published ImageNet metadata for the Keras Applications versions of each
# network. ResNet-50 depth is not published there, hence None.
REGISTRY: dict[str, BackboneSpec] = {
    "xception": BackboneSpec("xception", (299, 299), 2048, 88, 0.790, 0.945, 126, 109.42),
    "resnet50": BackboneSpec("resnet50", (224, 224), 2048, 98, 0.749, 0.921, None, 58.20),
    "inception_v3": BackboneSpec("inception_v3", (299, 299), 2048, 92, 0.779, 0.937, 159, 42.25),
}


def lookup_backbone(name: str) -> BackboneSpec:
    try:
        return REGISTRY[name]
    except KeyError:
        raise UnknownBackboneError(
            f"unknown backbone {name!r}; available: {', '.join(sorted(REGISTRY))}"
        ) from None


@dataclass(frozen=True)
class HeadSpec:
    num_classes: int
    hidden_units: int = 512
    dropout_rate: float = 0.5
    pooling: str = "global-average"

    def __post_init__(self):
        if self.hidden_units < 1:
            raise ValueError("hidden_units must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.pooling != "global-average":
            raise ValueError(f"unsupported pooling {self.pooling!r}")


# -- backbone networks -------------------------------------------------------

_INCEPTION_STAGES = (
    "Conv2d_1a_3x3", "Conv2d_2a_3x3", "Conv2d_2b_3x3", "maxpool1", "Conv2d_3b_1x1",
    "Conv2d_4a_3x3", "maxpool2", "Mixed_5b", "Mixed_5c", "Mixed_5d", "Mixed_6a",
    "Mixed_6b", "Mixed_6c", "Mixed_6d", "Mixed_6e", "Mixed_7a", "Mixed_7b", "Mixed_7c",
)
_TOP_PREFIXES = ("fc.", "AuxLogits.", "classifier.", "head.")


def build_backbone_net(name: str, zero_init_residual: bool = False) -> nn.Module:
    """Topless architecture with the ecosystem's usual parameter names, so
    torchvision/timm checkpoints load into it directly."""
    lookup_backbone(name)
    if name == "resnet50":
        import torchvision

        net = torchvision.models.resnet50(weights=None, zero_init_residual=zero_init_residual)
        net.fc = nn.Identity()
    elif name == "inception_v3":
        import torchvision

        net = torchvision.models.inception_v3(weights=None, aux_logits=False, init_weights=True)
        net.fc = nn.Identity()
    else:
        import timm

        net = timm.create_model("legacy_xception", pretrained=False, num_classes=0)
    return net


class FeatureExtractor(nn.Module):
    """Runs a topless backbone up to its last feature map."""

    def __init__(self, name: str, net: nn.Module):
        super().__init__()
        self.name = name
        self.net = net

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        net = self.net
        if self.name == "resnet50":
            x = net.maxpool(net.relu(net.bn1(net.conv1(x))))
            return net.layer4(net.layer3(net.layer2(net.layer1(x))))
        if self.name == "inception_v3":
            for stage in _INCEPTION_STAGES:
                x = getattr(net, stage)(x)
            return x
        return net.forward_features(x)


def resolve_weights(name: str, weights_dir: str | Path | None = None) -> Path:
    source = weights_dir or os.environ.get(WEIGHTS_ENV)
    if not source:
        raise WeightsError(
            f"no pretrained weight source for {name!r}: pass weights_dir or set {WEIGHTS_ENV}"
        )
    root = Path(source)
    exact = [root / f"{name}.pth", root / f"{name}.pt"]
    for candidate in exact + sorted(root.glob(f"{name}*.pth")):
        if candidate.is_file():
            return candidate
    raise WeightsError(f"pretrained weights for {name!r} not found in {root}")


def load_pretrained(net: nn.Module, path: str | Path) -> None:
    path = Path(path)
    try:
        state = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise WeightsError(f"corrupt or unreadable pretrained weights {path}: {exc}") from exc
    if isinstance(state, dict):
        for wrapper in ("state_dict", "model"):
            if wrapper in state and isinstance(state[wrapper], dict):
                state = state[wrapper]
    if not isinstance(state, dict):
        raise WeightsError(f"pretrained weights {path} do not hold a state dict")
    state = {k: v for k, v in state.items() if not k.startswith(_TOP_PREFIXES)}
    try:
        net.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise WeightsError(f"pretrained weights {path} do not match the architecture: {exc}") from exc


def native_bf16() -> bool:
    try:
        return bool(torch.ops.mkldnn._is_mkldnn_bf16_supported())
    except (AttributeError, RuntimeError):
        return False


def resolve_precision(precision: str) -> str:
    if precision == "auto":
        return "bfloat16" if native_bf16() else "float32"
    if precision not in ("float32", "bfloat16"):
        raise ValueError(f"precision must be auto, float32 or bfloat16, got {precision!r}")
    return precision


# -- classifier --------------------------------------------------------------

class ClassifierModel(nn.Module):
    """Frozen backbone + trainable pooling/MLP/softmax head.

    ``forward`` returns class probabilities; ``logits`` is used for training.
    The backbone always stays in eval mode, so its BatchNorm statistics never
    move either.
    """

    def __init__(
        self,
        spec: BackboneSpec,
        head_spec: HeadSpec,
        codec: LabelCodec,
        backbone: FeatureExtractor,
        channel_means: Sequence[float] = IMAGENET_MEANS,
        channel_stds: Sequence[float] | None = None,
        precision: str = "float32",
    ):
        super().__init__()
        if head_spec.num_classes != codec.dimension:
            raise ValueError(
                f"head has {head_spec.num_classes} outputs but codec has {codec.dimension} classes"
            )
        self.spec = spec
        self.head_spec = head_spec
        self.codec = codec
        self.channel_means = tuple(float(m) for m in channel_means)
        self.channel_stds = None if channel_stds is None else tuple(float(s) for s in channel_stds)
        self.precision = resolve_precision(precision)
        self.backbone = backbone.to(memory_format=torch.channels_last)
        for p in self.backbone.parameters():
            p.requires_grad_(False)
        self.head = nn.Sequential(OrderedDict(
            pool=nn.AdaptiveAvgPool2d(1),
            flatten=nn.Flatten(),
            hidden=nn.Linear(spec.feature_dim, head_spec.hidden_units),
            relu=nn.ReLU(),
            dropout=nn.Dropout(head_spec.dropout_rate),
            out=nn.Linear(head_spec.hidden_units, head_spec.num_classes),
        ))
        self.backbone.eval()

    def train(self, mode: bool = True):
        super().train(mode)
        self.backbone.eval()
        return self

    @property
    def input_size(self) -> tuple[int, int]:
        return self.spec.input_size

    def _autocast(self):
        if self.precision == "bfloat16":
            return torch.autocast("cpu", dtype=torch.bfloat16)
        return contextlib.nullcontext()

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Pooled backbone features (no gradient)."""
        with torch.no_grad(), self._autocast():
            fmap = self.backbone(x.contiguous(memory_format=torch.channels_last))
        return self.head.flatten(self.head.pool(fmap.float()))

    def classify(self, pooled: torch.Tensor) -> torch.Tensor:
        h = self.head.dropout(self.head.relu(self.head.hidden(pooled)))
        return self.head.out(h)

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        return self.classify(self.features(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.softmax(self.logits(x), dim=1)

    def prepare(self, frames: Sequence[FrameRecord | np.ndarray]) -> torch.Tensor:
        batch = np.stack([
            preprocess_frame(f, self.input_size, self.channel_means, self.channel_stds) for f in frames
        ])
        return torch.from_numpy(batch).permute(0, 3, 1, 2)

    def predict_frames(self, frames: Sequence[FrameRecord | np.ndarray], batch_size: int = 32) -> np.ndarray:
        """Probability rows (N x K) for raw RGB frames."""
        was_training = self.training
        self.eval()
        out = []
        with torch.inference_mode():
            for start in range(0, len(frames), batch_size):
                out.append(self(self.prepare(frames[start:start + batch_size])).numpy())
        self.train(was_training)
        if not out:
            return np.zeros((0, self.codec.dimension), dtype=np.float32)
        return np.concatenate(out)

    def trainable_parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters() if p.requires_grad)

    def backbone_trainable_parameter_count(self) -> int:
        return sum(p.numel() for p in self.backbone.parameters() if p.requires_grad)

    def backbone_digest(self) -> str:
        """SHA-256 over every backbone parameter and buffer, layout independent."""
        h = hashlib.sha256()
        for name, tensor in sorted(self.backbone.state_dict().items()):
            t = tensor.detach().contiguous()
            h.update(name.encode())
            h.update(str(t.dtype).encode())
            h.update(str(tuple(t.shape)).encode())
            h.update(t.cpu().numpy().tobytes())
        return h.hexdigest()


def _init_head(head: nn.Sequential, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for layer in (head.hidden, head.out):
            nn.init.xavier_uniform_(layer.weight, generator=gen)
            layer.bias.zero_()


def assemble_classifier(
    spec: BackboneSpec | str,
    head: HeadSpec,
    codec: LabelCodec,
    *,
    weights_dir: str | Path | None = None,
    weights_path: str | Path | None = None,
    seed: int = 0,
    channel_means: Sequence[float] = IMAGENET_MEANS,
    channel_stds: Sequence[float] | None = None,
    precision: str = "auto",
) -> ClassifierModel:
    """Pretrained topless backbone, frozen, under a fresh seeded head.

    Weights come from ``weights_path``, else ``<weights_dir>/<name>*.pth``,
    else ``$GESTURELAB_WEIGHTS_DIR``.
    """
    if isinstance(spec, str):
        spec = lookup_backbone(spec)
    net = build_backbone_net(spec.name)
    path = Path(weights_path) if weights_path else resolve_weights(spec.name, weights_dir)
    if not path.is_file():
        raise WeightsError(f"pretrained weights file {path} does not exist")
    load_pretrained(net, path)
    model = ClassifierModel(
        spec, head, codec, FeatureExtractor(spec.name, net),
        channel_means=channel_means, channel_stds=channel_stds, precision=precision,
    )
    _init_head(model.head, seed)
    logger.info("assembled %s classifier (%d trainable parameters) from %s",
                spec.name, model.trainable_parameter_count(), path)
    return model


# -- artifacts ---------------------------------------------------------------

def persist_model(model: ClassifierModel, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), out / WEIGHTS_FILE)
    (out / LABELS_FILE).write_text(json.dumps(list(model.codec.class_names), indent=2) + "\n")
    meta = {
        "backbone": model.spec.name,
        "input_size": list(model.input_size),
        "head": asdict(model.head_spec),
        "preprocessing": {
            "channel_means": list(model.channel_means),
            "channel_stds": None if model.channel_stds is None else list(model.channel_stds),
        },
        "precision": model.precision,
    }
    (out / SPEC_FILE).write_text(json.dumps(meta, indent=2) + "\n")
    return out


def restore_model(artifact_dir: str | Path) -> ClassifierModel:
    root = Path(artifact_dir)
    spec_path, labels_path, weights = root / SPEC_FILE, root / LABELS_FILE, root / WEIGHTS_FILE
    if not labels_path.is_file():
        raise ArtifactError(f"label codec not found: {labels_path}")
    if not weights.is_file():
        raise ArtifactError(f"model weights not found: {weights}")
    if not spec_path.is_file():
        raise ArtifactError(f"model spec not found: {spec_path}")
    meta = json.loads(spec_path.read_text())
    codec = LabelCodec(tuple(json.loads(labels_path.read_text())))
    spec = lookup_backbone(meta["backbone"])
    prep = meta.get("preprocessing", {})
    model = ClassifierModel(
        spec,
        HeadSpec(**meta["head"]),
        codec,
        FeatureExtractor(spec.name, build_backbone_net(spec.name)),
        channel_means=prep.get("channel_means", IMAGENET_MEANS),
        channel_stds=prep.get("channel_stds"),
        precision=meta.get("precision", "float32"),
    )
    state = torch.load(weights, map_location="cpu", weights_only=True)
    model.load_state_dict(state, strict=True)
    model.eval()
    return model
