"""Command-line entry point.

Commands: ``preprocess``, ``train``, ``eval``, ``segment``, ``remap``,
``validate-schema``.  Hyperparameters come from an INI-style config file
(sections ``[model]``, ``[train]``, ``[prep]``; ``key = value`` lines) plus a
few global flags; ``--print-config`` shows every resolved value and exits.
Exit status is 0 exactly when no per-file errors were reported.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from pathlib import Path

import numpy as np

from .dataset import MANIFEST_NAME, DatasetManifest, ManifestRecord, load_sample
from .errors import ConfigError, DataError, SketchSegError
from .model import ModelConfig, build_model, load_checkpoint, predict_labels
from .pngio import read_png, write_png
from .prep import PrepConfig, normalize, sketch_rng
from .schema import (
    LabelMap,
    Palette,
    RemapTable,
    builtin_palette,
    builtin_remap_table,
    remap,
    validate,
)
from .tensor import Tensor
from .train import TrainConfig, evaluate, train


def _read_ini(path: str | None) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    if path:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        parser.read(path, encoding="utf-8")
    return parser


def _get(section, key, cast, default):
    if section is None or key not in section:
        return default
    raw = section[key].strip()
    try:
        return cast(raw)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from exc


def _as_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _as_bool_triple(raw: str):
    parts = [p for p in raw.replace(",", " ").split() if p]
    if len(parts) == 1:
        return (_as_bool(parts[0]),) * 3
    if len(parts) == 3:
        return tuple(_as_bool(p) for p in parts)
    raise ValueError("expected one flag or three comma-separated flags")


def resolve_model_config(parser: configparser.ConfigParser) -> ModelConfig:
    s = parser["model"] if parser.has_section("model") else None
    cfg = ModelConfig(
        class_count=_get(s, "class_count", int, 25),
        canvas=_get(s, "canvas", int, 800),
        width_multiplier=_get(s, "width_multiplier", Fraction, Fraction(1)),
        ate_enabled=_get(s, "ate_enabled", _as_bool_triple, (True, True, True)),
        blocks_per_stage=_get(
            s, "blocks_per_stage", lambda v: tuple(int(x) for x in v.split(",")), (3, 4, 6, 3)
        ),
        precision=_get(s, "precision", int, 32),
        batchnorm=_get(s, "batchnorm", _as_bool, True),
    )
    cfg.validate()
    return cfg


def resolve_train_config(parser: configparser.ConfigParser, seed: int | None) -> TrainConfig:
    s = parser["train"] if parser.has_section("train") else None
    cfg = TrainConfig(
        lr0=_get(s, "lr0", float, 0.001),
        momentum=_get(s, "momentum", float, 0.9),
        decay_power=_get(s, "decay_power", float, 0.9),
        batch_size=_get(s, "batch_size", int, 5),
        epochs=_get(s, "epochs", int, 50),
        split=_get(s, "split", float, 0.75),
        seed=_get(s, "seed", int, 0) if seed is None else seed,
        background_weight=_get(s, "background_weight", float, 0.0),
        loss_reduction=_get(s, "loss_reduction", str, "mean_nonzero"),
        checkpoint_interval=_get(s, "checkpoint_interval", int, 0),
        log_timing=_get(s, "log_timing", str, "wall"),
    )
    cfg.validate()
    return cfg


def resolve_prep_config(parser: configparser.ConfigParser, seed: int | None) -> PrepConfig:
    s = parser["prep"] if parser.has_section("prep") else None
    cfg = PrepConfig(
        canvas=_get(s, "canvas", int, 800),
        resize_min=_get(s, "resize_min", int, 600),
        resize_max=_get(s, "resize_max", int, 700),
        seed=_get(s, "seed", int, 0) if seed is None else seed,
        stroke_threshold=_get(s, "stroke_threshold", int, 64),
    )
    cfg.validate()
    return cfg


def render_resolved(model_cfg: ModelConfig | None, train_cfg: TrainConfig | None,
                    prep_cfg: PrepConfig | None) -> str:
    lines = []
    if model_cfg is not None:
        lines += [
            "[model]",
            f"class_count = {model_cfg.class_count}",
            f"canvas = {model_cfg.canvas[0]}",
            f"width_multiplier = {model_cfg.width_multiplier}",
            "ate_enabled = " + ",".join(str(v).lower() for v in model_cfg.ate_enabled),
            "blocks_per_stage = " + ",".join(str(v) for v in model_cfg.blocks_per_stage),
            f"precision = {model_cfg.precision}",
            f"batchnorm = {str(model_cfg.batchnorm).lower()}",
            "",
        ]
    if train_cfg is not None:
        lines += [
            "[train]",
            f"lr0 = {train_cfg.lr0}",
            f"momentum = {train_cfg.momentum}",
            f"decay_power = {train_cfg.decay_power}",
            f"batch_size = {train_cfg.batch_size}",
            f"epochs = {train_cfg.epochs}",
            f"split = {train_cfg.split}",
            f"seed = {train_cfg.seed}",
            f"background_weight = {train_cfg.background_weight}",
            f"loss_reduction = {train_cfg.loss_reduction}",
            f"checkpoint_interval = {train_cfg.checkpoint_interval}",
            f"log_timing = {train_cfg.log_timing}",
            "",
        ]
    if prep_cfg is not None:
        lines += [
            "[prep]",
            f"canvas = {prep_cfg.canvas}",
            f"resize_min = {prep_cfg.resize_min}",
            f"resize_max = {prep_cfg.resize_max}",
            f"seed = {prep_cfg.seed}",
            f"stroke_threshold = {prep_cfg.stroke_threshold}",
            "",
        ]
    return "\n".join(lines)


def _load_palette(path: str | None) -> Palette:
    return Palette.load(path) if path else builtin_palette()


def _load_table(path: str | None) -> RemapTable:
    return RemapTable.load(path) if path else builtin_remap_table()


# ---------------------------------------------------------------------------
# commands


def cmd_preprocess(args) -> int:
    parser = _read_ini(args.config)
    prep_cfg = resolve_prep_config(parser, args.seed)
    if args.print_config:
        print(render_resolved(None, None, prep_cfg), end="")
        return 0
    palette = _load_palette(args.palette)
    manifest = DatasetManifest.scan(args.in_dir)
    out_root = Path(args.out_dir)
    errors: list[str] = []
    out_records: list[ManifestRecord] = []

    def process(rec: ManifestRecord):
        sketch = read_png(rec.sketch_path)
        labels = read_png(rec.label_path) if rec.label_path else None
        rng = sketch_rng(prep_cfg.seed, rec.id)
        norm_sketch, norm_labels = normalize(sketch, labels, prep_cfg, palette, rng)
        sketch_out = out_root / rec.category / "sketches" / rec.sketch_path.name
        write_png(sketch_out, norm_sketch)
        label_out = None
        if norm_labels is not None:
            label_out = out_root / rec.category / "labels" / rec.sketch_path.name
            write_png(label_out, norm_labels.render())
        return ManifestRecord(rec.id, rec.category, sketch_out, label_out)

    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        futures = [(rec, pool.submit(process, rec)) for rec in manifest.records]
        for rec, future in futures:
            try:
                out_records.append(future.result())
            except SketchSegError as exc:
                errors.append(f"{rec.id}: {exc}")

    if out_records:
        DatasetManifest(out_root, out_records).save(out_root / MANIFEST_NAME)
    for line in errors:
        print(f"error: {line}", file=sys.stderr)
    print(f"preprocessed {len(out_records)}/{len(manifest)} sketches into {out_root}")
    return 1 if errors else 0


def cmd_train(args) -> int:
    parser = _read_ini(args.config)
    model_cfg = resolve_model_config(parser)
    train_cfg = resolve_train_config(parser, args.seed)
    if args.log_timing is not None:
        train_cfg.log_timing = args.log_timing
    prep_cfg = resolve_prep_config(parser, args.seed)
    if args.print_config:
        print(render_resolved(model_cfg, train_cfg, prep_cfg), end="")
        return 0
    palette = _load_palette(args.palette)
    if model_cfg.class_count != len(palette):
        raise ConfigError(
            f"class_count is {model_cfg.class_count} but the palette has {len(palette)} entries"
        )
    manifest = DatasetManifest.scan(args.data_dir)
    samples = [load_sample(rec, palette, dtype=model_cfg.dtype) for rec in manifest.records]
    model = build_model(model_cfg, seed=train_cfg.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model, log = train(model, samples, train_cfg, out_dir=out_dir)
    (out_dir / "train_log.csv").write_text(log.to_csv(), encoding="utf-8")
    (out_dir / "config_resolved.ini").write_text(
        render_resolved(model_cfg, train_cfg, prep_cfg), encoding="utf-8"
    )
    final_p = log.rows[-1].train_p_metric if log.rows else float("nan")
    print(f"trained {train_cfg.epochs} epochs; final train P-metric {final_p:.4f}")
    print(f"artifacts in {out_dir}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    palette = _load_palette(args.palette)
    if len(palette) != model.config.class_count:
        raise DataError(
            f"palette has {len(palette)} entries but the checkpoint predicts "
            f"{model.config.class_count} classes"
        )
    manifest = DatasetManifest.scan(args.data_dir)
    samples = [load_sample(rec, palette, dtype=model.config.dtype) for rec in manifest.records]
    report = evaluate(model, samples)
    base = Path(args.report)
    base.parent.mkdir(parents=True, exist_ok=True)
    text_path = base.with_suffix(".txt")
    csv_path = base.with_suffix(".csv")
    text_path.write_text(report.to_text(), encoding="utf-8")
    csv_path.write_text(report.to_csv(), encoding="utf-8")
    print(report.to_text(), end="")
    print(f"report written to {text_path} and {csv_path}")
    return 0


def cmd_segment(args) -> int:
    model = load_checkpoint(args.checkpoint)
    palette = _load_palette(args.palette)
    if len(palette) != model.config.class_count:
        raise DataError(
            f"palette has {len(palette)} entries but the checkpoint predicts "
            f"{model.config.class_count} classes"
        )
    w, h = model.config.canvas
    if w != h:
        raise ConfigError("segment needs a square canvas")
    parser = _read_ini(args.config)
    prep_cfg = resolve_prep_config(parser, args.seed)
    # single-sketch inference is deterministic: resize pinned to resize_max
    prep_cfg.canvas = w
    prep_cfg.resize_min = prep_cfg.resize_max = min(prep_cfg.resize_max, w)
    raster = read_png(args.sketch)
    norm_sketch, _ = normalize(raster, None, prep_cfg, palette, np.random.default_rng(0))
    image = norm_sketch.astype(model.config.dtype).transpose(2, 0, 1) / 255.0
    model.eval()
    logits = model(Tensor(image[None]))
    classes = predict_labels(logits)[0]
    out = LabelMap(classes, palette).render()
    write_png(args.out, out)
    print(f"segmentation written to {args.out}")
    return 0


def cmd_remap(args) -> int:
    table = _load_table(args.table)
    palette = _load_palette(args.palette)
    report = validate(table, palette)
    if not report.ok:
        print(report.to_text(), end="", file=sys.stderr)
        return 1
    in_root = Path(args.in_dir)
    out_root = Path(args.out_dir)
    files = sorted(in_root.rglob("*.png"))
    if not files:
        print(f"error: no .png files under {in_root}", file=sys.stderr)
        return 1
    errors = []
    written = 0
    for path in files:
        try:
            raster = read_png(path)
            label_map = remap(raster, args.category, table, palette)
            write_png(out_root / path.relative_to(in_root), label_map.render())
            written += 1
        except SketchSegError as exc:
            errors.append(f"{path}: {exc}")
    for line in errors:
        print(f"error: {line}", file=sys.stderr)
    print(f"remapped {written}/{len(files)} rasters into {out_root}")
    return 1 if errors else 0


def cmd_validate_schema(args) -> int:
    report = validate(_load_table(args.table), _load_palette(args.palette))
    print(report.to_text(), end="")
    return 0 if report.ok else 1


# ---------------------------------------------------------------------------
# argument wiring


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="override the configured seed")
    p.add_argument("--threads", type=int, default=1, help="worker cap for parallel stages")
    p.add_argument("--config", default=None, help="INI config file")
    p.add_argument("--palette", default=None, help="palette file (default: built-in)")
    p.add_argument("--print-config", action="store_true", help="print resolved config and exit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sketchseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="normalize raw sketch/label pairs")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    _add_common(p)
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("train", help="train a model on preprocessed data")
    p.add_argument("--data", dest="data_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument(
        "--log-timing",
        choices=("wall", "none"),
        default=None,
        help="'none' zeroes the log's seconds column for byte-identical reruns",
    )
    _add_common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on preprocessed data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", dest="data_dir", required=True)
    p.add_argument("--report", required=True, help="report base path (.txt/.csv added)")
    _add_common(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("segment", help="segment a single sketch")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sketch", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(fn=cmd_segment)

    p = sub.add_parser("remap", help="translate source-colored label rasters")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--category", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--table", default=None, help="remap table file (default: built-in)")
    _add_common(p)
    p.set_defaults(fn=cmd_remap)

    p = sub.add_parser("validate-schema", help="check a remap table against a palette")
    p.add_argument("--table", default=None)
    _add_common(p)
    p.set_defaults(fn=cmd_validate_schema)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SketchSegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
