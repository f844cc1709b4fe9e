"""Dataset manifest and sample loading.

Directory layout (both raw and preprocessed trees):

    <root>/<Category>/sketches/<name>.png
    <root>/<Category>/labels/<name>.png

A sketch's id is ``<Category>/<name>``.  ``manifest.tsv`` (written next to a
preprocessed tree) lists ``id  category  sketch_path  label_path  split`` with
paths relative to the root.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError
from .pngio import read_png
from .schema import LabelMap, Palette
from .tensor import Tensor

MANIFEST_NAME = "manifest.tsv"


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    category: str
    sketch_path: Path
    label_path: Optional[Path]
    split: str = ""


@dataclass
class DatasetManifest:
    root: Path
    records: list[ManifestRecord] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for rec in self.records:
            if rec.id in seen:
                raise DataError(f"duplicate sketch id {rec.id!r} in manifest")
            seen.add(rec.id)
            if not rec.sketch_path.is_file():
                raise DataError(f"missing sketch file for {rec.id!r}: {rec.sketch_path}")
            if rec.label_path is not None and not rec.label_path.is_file():
                raise DataError(f"missing label file for {rec.id!r}: {rec.label_path}")

    def __len__(self) -> int:
        return len(self.records)

    def categories(self) -> list[str]:
        return sorted({r.category for r in self.records})

    @classmethod
    def scan(cls, root) -> "DatasetManifest":
        """Build a manifest by walking the documented directory layout."""
        root = Path(root)
        if not root.is_dir():
            raise DataError(f"dataset root {root} is not a directory")
        records = []
        for cat_dir in sorted(p for p in root.iterdir() if p.is_dir()):
            sketch_dir = cat_dir / "sketches"
            if not sketch_dir.is_dir():
                continue
            for sketch in sorted(sketch_dir.glob("*.png")):
                label = cat_dir / "labels" / sketch.name
                records.append(
                    ManifestRecord(
                        id=f"{cat_dir.name}/{sketch.stem}",
                        category=cat_dir.name,
                        sketch_path=sketch,
                        label_path=label if label.is_file() else None,
                    )
                )
        if not records:
            raise DataError(f"no sketches found under {root}")
        return cls(root=root, records=records)

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        root = path.parent
        records = []
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise DataError(f"{path}:{lineno}: expected 5 tab-separated fields")
            sid, category, sketch, label, split = parts
            records.append(
                ManifestRecord(
                    id=sid,
                    category=category,
                    sketch_path=root / sketch,
                    label_path=(root / label) if label else None,
                    split=split,
                )
            )
        return cls(root=root, records=records)

    def save(self, path) -> None:
        path = Path(path)
        root = path.parent
        lines = ["# id\tcategory\tsketch\tlabel\tsplit"]
        for r in self.records:
            label = r.label_path.relative_to(root).as_posix() if r.label_path else ""
            lines.append(
                "\t".join(
                    [r.id, r.category, r.sketch_path.relative_to(root).as_posix(), label, r.split]
                )
            )
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class Sample:
    """One preprocessed sketch ready for the network."""

    id: str
    category: str
    image: np.ndarray  # (3, H, W) float, values in [0, 1]
    labels: Optional[LabelMap]


def load_sample(record: ManifestRecord, palette: Palette, dtype=np.float32) -> Sample:
    raster = read_png(record.sketch_path)
    image = raster.astype(dtype).transpose(2, 0, 1) / 255.0
    labels = None
    if record.label_path is not None:
        label_raster = read_png(record.label_path)
        classes = _classes_from_raster(label_raster, palette, record.id)
        labels = LabelMap(classes, palette)
    return Sample(id=record.id, category=record.category, image=image.astype(dtype), labels=labels)


def _classes_from_raster(raster: np.ndarray, palette: Palette, sid: str) -> np.ndarray:
    """Exact palette-color lookup; any off-palette pixel is a data error."""
    h, w, _ = raster.shape
    flat = raster.reshape(-1, 3)
    colors, inverse = np.unique(flat, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    lut = np.zeros(len(colors), dtype=np.int64)
    for i, color in enumerate(colors):
        entry = palette.by_rgb(color)
        if entry is None:
            raise DataError(
                f"{sid}: label color {tuple(int(v) for v in color)} is not a palette color; "
                "preprocess (recolor) the data first"
            )
        lut[i] = entry.index
    return lut[inverse].reshape(h, w)


def batch_images(samples: list[Sample], dtype=np.float32) -> Tensor:
    return Tensor(np.stack([s.image for s in samples]).astype(dtype))


def batch_labels(samples: list[Sample]) -> np.ndarray:
    missing = [s.id for s in samples if s.labels is None]
    if missing:
        raise DataError(f"samples without labels: {missing}")
    return np.stack([s.labels.classes for s in samples])
