"""gesturelab command line: train, evaluate, predict, benchmark.

Settings come from (lowest to highest precedence) built-in defaults, a
``run.json`` saved next to a trained model (evaluate only), a flat
``key=value`` config file given with ``--config``, and command-line flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import torch

from .bench import BenchmarkProtocol, compare_models, default_loader, render_table, write_csv
from .dataset import LabelCodec, build_manifest, ingest_videos, stratified_split
from .metrics import evaluate_labels
from .training import OptimizerConfig, TrainingConfig, export_history, fit
from .video import predict_video
from .zoo import HeadSpec, assemble_classifier, lookup_backbone, persist_model, restore_model

logger = logging.getLogger("gesturelab")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    data_root: Path | None = None
    model_name: str = "resnet50"
    epochs: int = 25
    batch_size: int = 32
    split_ratio: float = 0.25
    seed: int = 42
    queue_capacity: int = 128
    output_dir: Path | None = None
    stride: int = 1
    learning_rate: float = 1e-4
    momentum: float = 0.9
    threads: int = 1

    def to_json(self) -> str:
        data = {k: (str(v) if isinstance(v, Path) else v) for k, v in dataclasses.asdict(self).items()}
        return json.dumps(data, indent=2, sort_keys=True) + "\n"


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_CASTS = {"data_root": Path, "output_dir": Path, "model_name": str, "epochs": int, "batch_size": int,
          "split_ratio": float, "seed": int, "queue_capacity": int, "stride": int,
          "learning_rate": float, "momentum": float, "threads": int}


def _validate(cfg: RunConfig) -> None:
    checks = {
        "epochs": cfg.epochs >= 1,
        "batch_size": cfg.batch_size >= 1,
        "split_ratio": 0.0 < cfg.split_ratio < 1.0,
        "queue_capacity": cfg.queue_capacity >= 1,
        "stride": cfg.stride >= 1,
        "learning_rate": cfg.learning_rate >= 0.0,
        "momentum": 0.0 <= cfg.momentum < 1.0,
        "threads": cfg.threads >= 1,
    }
    for key, ok in checks.items():
        if not ok:
            raise ConfigError(f"{key} out of range: {getattr(cfg, key)!r}")


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def load_config(
    path: str | Path | None,
    overrides: dict[str, Any] | None = None,
    base: dict[str, Any] | None = None,
) -> RunConfig:
    """Merge ``base`` < config file < ``overrides`` (``None`` values in
    overrides are ignored) over the defaults, then validate."""
    merged: dict[str, Any] = dict(base or {})
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        merged.update(parse_config_text(text, str(path)))
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    kwargs = {}
    for key, value in merged.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}")
        try:
            kwargs[key] = None if value is None else _CASTS[key](value)
        except (TypeError, ValueError):
            raise ConfigError(f"invalid value for {key}: {value!r}") from None
    cfg = RunConfig(**kwargs)
    _validate(cfg)
    return cfg


# -- commands ----------------------------------------------------------------

def _require_dir(path: Path | None, flag: str) -> Path:
    if path is None:
        raise ConfigError(f"{flag} is required")
    if not path.is_dir():
        raise FileNotFoundError(f"{flag} directory {path} does not exist")
    return path


def _score(model, records, out: Path) -> None:
    probs = model.predict_frames([r.image for r in records])
    y_pred = model.codec.decode(probs) if len(records) else []
    matrix, report = evaluate_labels([r.class_name for r in records], y_pred, model.codec.class_names)
    (out / "report.txt").write_text(report.render() + "\nConfusion matrix\n" + matrix.render())
    (out / "report.json").write_text(report.to_json())
    matrix.to_csv(out / "confusion.csv")
    print(report.render(), end="")


def cmd_train(args) -> int:
    cfg = load_config(args.config, {
        "data_root": args.data, "model_name": args.model, "epochs": args.epochs,
        "batch_size": args.batch_size, "split_ratio": args.split, "seed": args.seed,
        "output_dir": args.out, "stride": args.stride, "learning_rate": args.lr,
        "threads": args.threads,
    })
    spec = lookup_backbone(cfg.model_name)
    data_root = _require_dir(cfg.data_root, "--data")
    if cfg.output_dir is None:
        raise ConfigError("--out is required")
    torch.set_num_threads(cfg.threads)

    records = ingest_videos(data_root, cfg.stride)
    manifest = build_manifest(records)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    manifest.to_csv(out / "manifest.csv")
    split = stratified_split(records, cfg.split_ratio, cfg.seed)
    codec = LabelCodec.from_names(manifest.classes)
    model = assemble_classifier(spec, HeadSpec(codec.dimension), codec,
                                weights_dir=args.weights_dir, seed=cfg.seed)
    train_cfg = TrainingConfig(
        epochs=cfg.epochs, batch_size=cfg.batch_size, seed=cfg.seed,
        optimizer=OptimizerConfig(learning_rate=cfg.learning_rate, momentum=cfg.momentum),
    )
    model, history = fit(model, split, train_cfg)
    persist_model(model, out)
    export_history(history, out)
    (out / "run.json").write_text(cfg.to_json())
    _score(model, split.test, out)
    return 0


def cmd_evaluate(args) -> int:
    model_dir = _require_dir(args.model, "--model")
    base = {}
    run_json = model_dir / "run.json"
    if run_json.is_file():
        saved = json.loads(run_json.read_text())
        base = {k: saved[k] for k in ("split_ratio", "seed", "stride", "data_root") if saved.get(k) is not None}
    cfg = load_config(args.config, {
        "data_root": args.data, "split_ratio": args.split, "seed": args.seed,
        "stride": args.stride, "output_dir": args.out, "threads": args.threads,
    }, base=base)
    data_root = _require_dir(cfg.data_root, "--data")
    torch.set_num_threads(cfg.threads)
    model = restore_model(model_dir)
    split = stratified_split(ingest_videos(data_root, cfg.stride), cfg.split_ratio, cfg.seed)
    out = cfg.output_dir or model_dir
    out.mkdir(parents=True, exist_ok=True)
    _score(model, split.test, out)
    return 0


def cmd_predict(args) -> int:
    cfg = load_config(args.config, {"queue_capacity": args.queue, "threads": args.threads})
    torch.set_num_threads(cfg.threads)
    model = restore_model(_require_dir(args.model, "--model"))
    if not args.video.is_file():
        raise FileNotFoundError(f"video {args.video} does not exist")
    result = predict_video(model, args.video, cfg.queue_capacity, args.out)
    frames_csv = args.frames_csv or args.out.parent / "frames.csv"
    result.to_csv(frames_csv)
    counts = {name: result.smoothed_labels.count(name) for name in model.codec.class_names}
    print(f"{len(result.smoothed_labels)} frames -> {args.out}; smoothed label counts: {counts}")
    return 0


def cmd_benchmark(args) -> int:
    names = [n.strip() for n in args.models.split(",") if n.strip()]
    for name in names:
        lookup_backbone(name)
    protocol = BenchmarkProtocol(args.batch_size, args.batches, args.repetitions, args.threads)
    results = compare_models(names, protocol, default_loader(args.weights_dir))
    table = render_table(results)
    print(table, end="")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "benchmark.txt").write_text(table)
        write_csv(results, args.out / "benchmark.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gesturelab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, threads=True):
        p.add_argument("--config", type=Path, help="flat key=value config file")
        if threads:
            p.add_argument("--threads", type=int, help="torch intra-op threads (default 1)")

    p = sub.add_parser("train", help="train a frozen-backbone classifier on a frame/video dataset")
    common(p)
    p.add_argument("--data", type=Path)
    p.add_argument("--model", help="backbone: xception, resnet50 or inception_v3")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--split", type=float, help="test fraction (default 0.25)")
    p.add_argument("--seed", type=int)
    p.add_argument("--stride", type=int, help="keep every n-th video frame")
    p.add_argument("--lr", type=float)
    p.add_argument("--weights-dir", type=Path, help="pretrained checkpoints (else $GESTURELAB_WEIGHTS_DIR)")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a trained model on the test split of a dataset")
    common(p)
    p.add_argument("--model", type=Path, required=True, help="model artifact directory")
    p.add_argument("--data", type=Path)
    p.add_argument("--split", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="annotate a video with smoothed predictions")
    common(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--video", type=Path, required=True)
    p.add_argument("--queue", type=int, help="prediction queue capacity (default 128)")
    p.add_argument("--out", type=Path, required=True, help="annotated output video")
    p.add_argument("--frames-csv", type=Path, help="per-frame CSV (default: frames.csv beside --out)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("benchmark", help="time backbones under the fixed inference protocol")
    p.add_argument("--models", default="xception,resnet50,inception_v3")
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--batches", type=int, default=30)
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--weights-dir", type=Path)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_benchmark)
    return parser


def run_command(argv: Sequence[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"gesturelab {args.command}: error: {message}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
