"""Stroke-pixel and component accuracy metrics plus the evaluation report.

The pixel metric scores only ground-truth stroke (non-background) pixels;
the component metric groups a sketch's stroke pixels by part label (or by
8-connected region when ``connected=True``) and counts a component correct
when at least 75% of its pixels carry the right prediction.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, UndefinedMetricError
from .schema import LabelMap

def _check_pair(pred: LabelMap, truth: LabelMap) -> None:
    if pred.shape != truth.shape:
        raise DataError(f"label map shapes differ: {pred.shape} vs {truth.shape}")
    if pred.palette != truth.palette:
        raise DataError("label maps use different palettes")


def pixel_counts(pred: LabelMap, truth: LabelMap) -> tuple[int, int]:
    """(correct, total) over ground-truth stroke pixels."""
    _check_pair(pred, truth)
    stroke = truth.stroke_mask()
    total = int(stroke.sum())
    correct = int(((pred.classes == truth.classes) & stroke).sum())
    return correct, total


def p_metric(pred: LabelMap, truth: LabelMap) -> float:
    correct, total = pixel_counts(pred, truth)
    if total == 0:
        raise UndefinedMetricError("ground truth has no stroke pixels")
    return correct / total


def label_components_8(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """Label 8-connected regions of a boolean mask; returns (labels, count).

    Labels are 1-based, 0 marks background. Plain two-pass union-find.
    """
    mask = np.asarray(mask, dtype=bool)
    labels = np.zeros(mask.shape, dtype=np.int64)
    parent: list[int] = [0]

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    h, w = mask.shape
    next_label = 1
    for i in range(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            neigh = []
            if i > 0:
                if j > 0 and labels[i - 1, j - 1]:
                    neigh.append(labels[i - 1, j - 1])
                if labels[i - 1, j]:
                    neigh.append(labels[i - 1, j])
                if j + 1 < w and labels[i - 1, j + 1]:
                    neigh.append(labels[i - 1, j + 1])
            if j > 0 and labels[i, j - 1]:
                neigh.append(labels[i, j - 1])
            if not neigh:
                labels[i, j] = next_label
                parent.append(next_label)
                next_label += 1
            else:
                roots = [find(n) for n in neigh]
                keep = min(roots)
                labels[i, j] = keep
                for r in roots:
                    parent[r] = keep
    remap: dict[int, int] = {}
    for i in range(h):
        for j in range(w):
            if labels[i, j]:
                root = find(labels[i, j])
                if root not in remap:
                    remap[root] = len(remap) + 1
                labels[i, j] = remap[root]
    return labels, len(remap)


def component_counts(pred: LabelMap, truth: LabelMap, connected: bool = False) -> tuple[int, int]:
    """(correct, total) components of one sketch's ground truth."""
    _check_pair(pred, truth)
    stroke = truth.stroke_mask()
    if not stroke.any():
        raise UndefinedMetricError("ground truth has no stroke pixels")
    correct = total = 0
    for cls in np.unique(truth.classes[stroke]):
        cls_mask = truth.classes == cls
        if connected:
            regions, count = label_components_8(cls_mask)
            parts = [regions == r for r in range(1, count + 1)]
        else:
            parts = [cls_mask]
        for part in parts:
            total += 1
            hit = int((pred.classes[part] == cls).sum())
            # inclusive 75% threshold, exact in integers: hit/size >= 3/4
            if 4 * hit >= 3 * int(part.sum()):
                correct += 1
    return correct, total


def c_metric(pred: LabelMap, truth: LabelMap, connected: bool = False) -> float:
    correct, total = component_counts(pred, truth, connected=connected)
    return correct / total


@dataclass
class CategoryResult:
    category: str
    pixels_correct: int = 0
    pixels_total: int = 0
    components_correct: int = 0
    components_total: int = 0

    @property
    def p(self) -> float:
        return self.pixels_correct / self.pixels_total if self.pixels_total else 0.0

    @property
    def c(self) -> float:
        return self.components_correct / self.components_total if self.components_total else 0.0

    def add(self, pred: LabelMap, truth: LabelMap, connected: bool = False) -> None:
        pc, pt = pixel_counts(pred, truth)
        cc, ct = component_counts(pred, truth, connected=connected)
        self.pixels_correct += pc
        self.pixels_total += pt
        self.components_correct += cc
        self.components_total += ct


@dataclass
class EvalReport:
    """Per-category accuracy rows; averages are plain means over categories."""

    categories: list[CategoryResult] = field(default_factory=list)

    @property
    def average_p(self) -> float:
        return sum(c.p for c in self.categories) / len(self.categories) if self.categories else 0.0

    @property
    def average_c(self) -> float:
        return sum(c.c for c in self.categories) / len(self.categories) if self.categories else 0.0

    def to_text(self) -> str:
        lines = [f"{'category':<14} {'P':>8} {'C':>8} {'pixels':>8} {'components':>11}"]
        for r in sorted(self.categories, key=lambda r: r.category):
            lines.append(
                f"{r.category:<14} {r.p:>8.4f} {r.c:>8.4f} {r.pixels_total:>8d} "
                f"{r.components_total:>11d}"
            )
        lines.append(
            f"{'average':<14} {self.average_p:>8.4f} {self.average_c:>8.4f} "
            f"{sum(r.pixels_total for r in self.categories):>8d} "
            f"{sum(r.components_total for r in self.categories):>11d}"
        )
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["category", "p_metric", "c_metric", "pixel_count", "component_count"])
        for r in sorted(self.categories, key=lambda r: r.category):
            writer.writerow(
                [r.category, f"{r.p:.6f}", f"{r.c:.6f}", r.pixels_total, r.components_total]
            )
        writer.writerow(
            [
                "average",
                f"{self.average_p:.6f}",
                f"{self.average_c:.6f}",
                sum(r.pixels_total for r in self.categories),
                sum(r.components_total for r in self.categories),
            ]
        )
        return out.getvalue()
