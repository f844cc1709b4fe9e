"""Training and evaluation loops: deterministic split, per-epoch shuffling,
reweighted loss, SGD with momentum under a polynomial learning-rate decay,
periodic checkpoints, and a CSV train log."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset import Sample, batch_images, batch_labels
from .errors import DataError, ParameterError, ScheduleError
from .loss import ClassWeights, reweighted_cross_entropy
from .metrics import CategoryResult, EvalReport
from .model import SegmentationNetwork, predict_labels, save_checkpoint
from .nn import SGD
from .schema import LabelMap
from .tensor import Tape


@dataclass
class TrainConfig:
    lr0: float = 0.001
    momentum: float = 0.9
    decay_power: float = 0.9
    batch_size: int = 5
    epochs: int = 50
    split: float = 0.75
    seed: int = 0
    class_weights: Optional[ClassWeights] = None  # default: background_weight + parts at 1
    background_weight: float = 0.0
    loss_reduction: str = "mean_nonzero"
    checkpoint_interval: int = 0  # epochs between checkpoints; 0 = final only
    # "wall" records real per-epoch time; "none" logs 0.0 so that two runs
    # with the same seed produce byte-identical logs
    log_timing: str = "wall"

    def validate(self) -> None:
        # lr0 == 0 is allowed (a no-op run used by tests); negatives are not
        if self.lr0 < 0:
            raise ParameterError("lr0 must be non-negative")
        if not (0.0 < self.split < 1.0):
            raise ParameterError("split must lie strictly between 0 and 1")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ParameterError("epochs must be >= 0")
        if self.log_timing not in ("wall", "none"):
            raise ParameterError(f"log_timing must be 'wall' or 'none', got {self.log_timing!r}")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    lr: float
    train_p_metric: float
    seconds: float


@dataclass
class TrainLog:
    rows: list[EpochRecord] = field(default_factory=list)

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["epoch", "loss", "lr", "train_p_metric", "seconds"])
        for r in self.rows:
            writer.writerow(
                [r.epoch, f"{r.loss:.8f}", f"{r.lr:.10f}", f"{r.train_p_metric:.6f}", f"{r.seconds:.3f}"]
            )
        return out.getvalue()


def poly_lr(lr0: float, step: int, max_steps: int, power: float) -> float:
    """lr0 * (1 - step/max_steps) ** power."""
    if max_steps < 1:
        raise ScheduleError(f"max_steps must be >= 1, got {max_steps}")
    if step < 0 or step > max_steps:
        raise ScheduleError(f"step {step} outside [0, {max_steps}]")
    return lr0 * (1.0 - step / max_steps) ** power


def split_samples(
    samples: list[Sample], split: float, seed: int
) -> tuple[list[Sample], list[Sample]]:
    """Deterministic train/test partition: a pure function of (seed, ids)."""
    by_id = {s.id: s for s in samples}
    if len(by_id) != len(samples):
        raise DataError("duplicate sample ids")
    ids = sorted(by_id)
    order = np.random.default_rng(seed).permutation(len(ids))
    n_train = int(len(ids) * split)
    train_ids = [ids[i] for i in order[:n_train]]
    test_ids = [ids[i] for i in order[n_train:]]
    return [by_id[i] for i in train_ids], [by_id[i] for i in test_ids]


def _check_labels(samples: list[Sample], class_count: int) -> None:
    for s in samples:
        if s.labels is None:
            raise DataError(f"sample {s.id!r} has no labels")
        top = int(s.labels.classes.max(initial=0))
        if top >= class_count:
            raise DataError(
                f"sample {s.id!r} uses class index {top}, model has {class_count} classes"
            )


def train(
    model: SegmentationNetwork,
    dataset: list[Sample],
    cfg: TrainConfig,
    out_dir: Optional[Path] = None,
) -> tuple[SegmentationNetwork, TrainLog]:
    """Optimize ``model`` on the train side of a seeded split of ``dataset``.

    Returns the trained model and the per-epoch log.  With ``out_dir`` set,
    checkpoints land there every ``checkpoint_interval`` epochs and at the
    end (``checkpoint.sfsg``).
    """
    cfg.validate()
    if not dataset:
        raise DataError("dataset is empty")
    c = model.config.class_count
    _check_labels(dataset, c)
    weights = cfg.class_weights
    if weights is None:
        values = np.ones(c)
        values[0] = cfg.background_weight
        weights = ClassWeights(values)
    if len(weights.values) != c:
        raise DataError(f"{len(weights.values)} class weights for {c} classes")

    train_set, _ = split_samples(dataset, cfg.split, cfg.seed)
    if not train_set:
        raise DataError("train split is empty; adjust split or dataset size")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    optimizer = SGD(model.parameters(), lr=cfg.lr0, momentum=cfg.momentum)
    dtype = model.config.dtype
    log = TrainLog()

    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        lr = poly_lr(cfg.lr0, epoch, max(cfg.epochs, 1), cfg.decay_power)
        optimizer.lr = lr
        model.train()
        order = rng.permutation(len(train_set))
        losses = []
        for lo in range(0, len(order), cfg.batch_size):
            batch = [train_set[i] for i in order[lo : lo + cfg.batch_size]]
            images = batch_images(batch, dtype=dtype)
            targets = batch_labels(batch)
            optimizer.zero_grad()
            with Tape() as tape:
                logits = model(images)
                loss = reweighted_cross_entropy(
                    logits, targets, weights, reduction=cfg.loss_reduction
                )
            loss.assert_finite("training loss")
            tape.backward(loss)
            optimizer.step()
            losses.append(loss.item())
        train_p = _train_split_p(model, train_set, cfg.batch_size)
        elapsed = time.perf_counter() - started if cfg.log_timing == "wall" else 0.0
        log.rows.append(
            EpochRecord(
                epoch=epoch,
                loss=float(np.mean(losses)) if losses else 0.0,
                lr=lr,
                train_p_metric=train_p,
                seconds=elapsed,
            )
        )
        if (
            out_dir is not None
            and cfg.checkpoint_interval
            and (epoch + 1) % cfg.checkpoint_interval == 0
        ):
            save_checkpoint(model, Path(out_dir) / f"checkpoint-epoch{epoch:04d}.sfsg")
    if out_dir is not None:
        save_checkpoint(model, Path(out_dir) / "checkpoint.sfsg")
    return model, log


def _train_split_p(model: SegmentationNetwork, samples: list[Sample], batch_size: int) -> float:
    correct = total = 0
    for pred, sample in _predict(model, samples, batch_size):
        stroke = sample.labels.stroke_mask()
        total += int(stroke.sum())
        correct += int(((pred == sample.labels.classes) & stroke).sum())
    return correct / total if total else 0.0


def _predict(model: SegmentationNetwork, samples: list[Sample], batch_size: int):
    """Yield (predicted classes, sample) pairs using eval-mode forwards."""
    model.eval()
    dtype = model.config.dtype
    for lo in range(0, len(samples), batch_size):
        batch = samples[lo : lo + batch_size]
        logits = model(batch_images(batch, dtype=dtype))
        preds = predict_labels(logits)
        for i, sample in enumerate(batch):
            yield preds[i], sample


def evaluate(
    model: SegmentationNetwork,
    samples: list[Sample],
    batch_size: int = 5,
    connected_components: bool = False,
) -> EvalReport:
    """Eval-mode predictions scored per category into an EvalReport."""
    if not samples:
        raise DataError("nothing to evaluate")
    _check_labels(samples, model.config.class_count)
    palette = samples[0].labels.palette
    if len(palette) != model.config.class_count:
        raise DataError(
            f"palette has {len(palette)} classes, model predicts {model.config.class_count}"
        )
    by_category: dict[str, CategoryResult] = {}
    for pred, sample in _predict(model, samples, batch_size):
        result = by_category.setdefault(sample.category, CategoryResult(sample.category))
        result.add(LabelMap(pred, palette), sample.labels, connected=connected_components)
    return EvalReport(categories=[by_category[k] for k in sorted(by_category)])
