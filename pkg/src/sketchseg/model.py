"""Three-stage residual segmentation network with per-stage score heads,
optional affine transform encoders, multiscale score fusion, and a binary
checkpoint format.

Stage layout (base widths, scaled by the configured width multiplier):
stage 1 = 7x7/2 conv + 3x3/2 maxpool + 3 blocks @64 + 4 blocks @128 (1/8
resolution), stage 2 = 6 blocks @256 (1/16), stage 3 = 3 blocks @512 (1/32).
Scores fuse coarse-to-fine: s23 = s2 + up2(s3), s12 = s1 + up2(s23), and the
output is up8(s12) at full resolution (raw logits, no softmax).
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import ops
from .errors import CheckpointError, ConfigError, DimensionError
from .nn import BasicBlock, BatchNorm2d, Conv2d, Module, ModuleList
from .stn import AffineTransformEncoder
from .tensor import Tensor

CHECKPOINT_MAGIC = b"SFSG"
CHECKPOINT_VERSION = 1

_BASE_WIDTHS = (64, 128, 256, 512)


@dataclass
class ModelConfig:
    class_count: int = 25
    canvas: tuple[int, int] = (800, 800)  # (W, H)
    width_multiplier: Fraction = Fraction(1)
    ate_enabled: tuple[bool, bool, bool] = (True, True, True)
    blocks_per_stage: tuple[int, int, int, int] = (3, 4, 6, 3)
    precision: int = 32
    batchnorm: bool = True

    def __post_init__(self):
        if isinstance(self.width_multiplier, str):
            self.width_multiplier = Fraction(self.width_multiplier)
        elif not isinstance(self.width_multiplier, Fraction):
            self.width_multiplier = Fraction(self.width_multiplier)
        if isinstance(self.canvas, int):
            self.canvas = (self.canvas, self.canvas)
        self.canvas = (int(self.canvas[0]), int(self.canvas[1]))
        if isinstance(self.ate_enabled, bool):
            self.ate_enabled = (self.ate_enabled,) * 3
        self.ate_enabled = tuple(bool(v) for v in self.ate_enabled)
        self.blocks_per_stage = tuple(int(v) for v in self.blocks_per_stage)

    def validate(self) -> None:
        if self.class_count < 2:
            raise ConfigError("class_count must be >= 2 (background plus at least one part)")
        w, h = self.canvas
        if w % 32 or h % 32 or w < 32 or h < 32:
            raise ConfigError(f"canvas must be divisible by 32, got {w}x{h}")
        if len(self.ate_enabled) != 3:
            raise ConfigError("ate_enabled needs one flag per stage (3)")
        if len(self.blocks_per_stage) != 4 or any(b < 1 for b in self.blocks_per_stage):
            raise ConfigError("blocks_per_stage needs 4 positive block counts")
        if self.precision not in (32, 64):
            raise ConfigError(f"precision must be 32 or 64, got {self.precision}")
        for base in _BASE_WIDTHS:
            scaled = base * self.width_multiplier
            if scaled.denominator != 1 or scaled < 1:
                raise ConfigError(
                    f"width_multiplier {self.width_multiplier} does not scale width {base} "
                    "to a positive integer"
                )

    @property
    def dtype(self):
        return np.float32 if self.precision == 32 else np.float64

    def widths(self) -> tuple[int, int, int, int]:
        return tuple(int(base * self.width_multiplier) for base in _BASE_WIDTHS)

    def to_dict(self) -> dict:
        return {
            "class_count": self.class_count,
            "canvas": list(self.canvas),
            "width_multiplier": str(self.width_multiplier),
            "ate_enabled": list(self.ate_enabled),
            "blocks_per_stage": list(self.blocks_per_stage),
            "precision": self.precision,
            "batchnorm": self.batchnorm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        cfg = cls(
            class_count=int(d["class_count"]),
            canvas=tuple(d["canvas"]),
            width_multiplier=Fraction(d["width_multiplier"]),
            ate_enabled=tuple(d["ate_enabled"]),
            blocks_per_stage=tuple(d["blocks_per_stage"]),
            precision=int(d["precision"]),
            batchnorm=bool(d["batchnorm"]),
        )
        cfg.validate()
        return cfg


class SegmentationNetwork(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        config.validate()
        self.config = config
        dtype = config.dtype
        bn = config.batchnorm
        w64, w128, w256, w512 = config.widths()
        b64, b128, b256, b512 = config.blocks_per_stage
        c = config.class_count

        self.stem_conv = Conv2d(3, w64, 7, stride=2, padding=3, bias=not bn, rng=rng, dtype=dtype)
        self.stem_bn = BatchNorm2d(w64, dtype=dtype) if bn else None

        def stage(n_blocks, cin, cout, first_stride):
            blocks = ModuleList()
            for i in range(n_blocks):
                blocks.append(
                    BasicBlock(
                        cin if i == 0 else cout,
                        cout,
                        first_stride if i == 0 else 1,
                        rng=rng,
                        dtype=dtype,
                        batchnorm=bn,
                    )
                )
            return blocks

        self.layer64 = stage(b64, w64, w64, 1)
        self.layer128 = stage(b128, w64, w128, 2)
        self.layer256 = stage(b256, w128, w256, 2)
        self.layer512 = stage(b512, w256, w512, 2)

        stage_widths = (w128, w256, w512)
        self.ates = ModuleList(
            AffineTransformEncoder(ch, rng=rng, dtype=dtype) if on else None
            for ch, on in zip(stage_widths, config.ate_enabled)
        )
        self.heads = ModuleList(
            Conv2d(ch, c, 1, stride=1, padding=0, bias=True, rng=rng, dtype=dtype)
            for ch in stage_widths
        )

    def stage_features(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Backbone features at 1/8, 1/16 and 1/32 of the canvas."""
        out = self.stem_conv(x)
        if self.stem_bn is not None:
            out = self.stem_bn(out)
        out = ops.relu(out)
        out = ops.maxpool2d(out, 3, 2)
        for block in self.layer64:
            out = block(out)
        for block in self.layer128:
            out = block(out)
        f1 = out
        for block in self.layer256:
            out = block(out)
        f2 = out
        for block in self.layer512:
            out = block(out)
        return f1, f2, out

    def stage_scores(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Per-stage class logits; encoders (when enabled) warp the features
        feeding each head."""
        scores = []
        for feat, ate, head in zip(self.stage_features(x), self.ates, self.heads):
            scores.append(head(ate(feat) if ate is not None else feat))
        return tuple(scores)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise DimensionError(f"expected input (N,3,H,W), got {x.shape}")
        w, h = self.config.canvas
        if x.shape[2] != h or x.shape[3] != w:
            raise DimensionError(
                f"input spatial size {x.shape[3]}x{x.shape[2]} != canvas {w}x{h}"
            )
        s1, s2, s3 = self.stage_scores(x)
        s23 = ops.add(s2, ops.bilinear_upsample(s3, 2))
        s12 = ops.add(s1, ops.bilinear_upsample(s23, 2))
        return ops.bilinear_upsample(s12, 8)


def build_model(config: ModelConfig, seed: int) -> SegmentationNetwork:
    """Deterministically initialized network; same seed, same parameters."""
    return SegmentationNetwork(config, np.random.default_rng(seed))


def predict_labels(scores) -> np.ndarray:
    """Per-pixel argmax over the class axis; ties go to the lowest index."""
    data = scores.data if isinstance(scores, Tensor) else np.asarray(scores)
    if data.ndim != 4:
        raise DimensionError(f"expected scores (N,C,H,W), got shape {data.shape}")
    return data.argmax(axis=1).astype(np.int64)


# ---------------------------------------------------------------------------
# checkpoint format: magic, u32 version, u32 json-config length, config,
# u32 record count, then per record u32 name length + name + u32 ndim +
# u32 dims + little-endian float32 payload.


def _model_records(model: SegmentationNetwork):
    for name, p in model.named_parameters():
        yield name, p.data
    for name, b in model.named_buffers():
        yield name, b


def save_checkpoint(model: SegmentationNetwork, path) -> None:
    if model.config.precision != 32:
        raise CheckpointError(
            "checkpoint payloads are 32-bit floats; 64-bit models cannot round-trip bit-exactly"
        )
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    records = list(_model_records(model))
    buf.write(struct.pack("<I", len(records)))
    for name, arr in records:
        if not np.isfinite(arr).all():
            raise CheckpointError(f"non-finite values in {name}; refusing to save")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("checkpoint file is truncated")
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path, expect: ModelConfig | None = None) -> SegmentationNetwork:
    """Rebuild a model from ``path``; optionally verify it matches ``expect``.

    Any truncation, magic/version mismatch, or field disagreement raises
    ``CheckpointError`` before a model is returned.
    """
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from exc
    r = _Reader(blob)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic bytes; not a checkpoint file")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        cfg_dict = json.loads(r.take(r.u32()).decode("utf-8"))
        config = ModelConfig.from_dict(cfg_dict)
    except (ValueError, KeyError, ConfigError) as exc:
        raise CheckpointError(f"malformed checkpoint config: {exc}") from exc
    if expect is not None:
        for key, value in expect.to_dict().items():
            if cfg_dict.get(key) != value:
                raise CheckpointError(
                    f"checkpoint field {key!r} is {cfg_dict.get(key)!r}, expected {value!r}"
                )

    loaded: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        loaded[name] = arr
    if r.pos != len(blob):
        raise CheckpointError("trailing bytes after the last checkpoint record")

    model = build_model(config, seed=0)
    for name, target in _model_records(model):
        if name not in loaded:
            raise CheckpointError(f"checkpoint is missing record {name!r}")
        src = loaded.pop(name)
        if src.shape != target.shape:
            raise CheckpointError(
                f"record {name!r} has shape {src.shape}, model expects {target.shape}"
            )
        target[...] = src.astype(target.dtype)
    if loaded:
        raise CheckpointError(f"checkpoint has unknown records: {sorted(loaded)}")
    return model
