"""Dense float tensors and a tape for reverse-mode differentiation.

A ``Tensor`` wraps a numpy float32/float64 array plus an optional gradient
buffer.  Differentiable operations (see ``ops``) register themselves on the
innermost active ``Tape``; ``Tape.backward`` then replays the records in
strict reverse order, accumulating gradients into the leaf tensors that
requested them.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DimensionError, ParameterError, StateError

_ALLOWED_DTYPES = (np.float32, np.float64)


class Tensor:
    """An n-dimensional float array that can take part in gradient recording."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _ALLOWED_DTYPES:
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """A tensor sharing this data but outside any gradient recording."""
        return Tensor(self.data, requires_grad=False)

    def assert_finite(self, context: str = "tensor") -> None:
        if not np.isfinite(self.data).all():
            raise ParameterError(f"non-finite values in {context}")

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}{flag})"


class _Record:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


_TAPE_STACK: list["Tape"] = []


def active_tape() -> Optional["Tape"]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tape:
    """Ordered record of the differentiable operations of one forward pass.

    Use as a context manager around the forward computation, then call
    ``backward`` once on the (scalar) result.  Replaying the same tape twice
    raises ``StateError``; record a fresh pass instead.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._produced: set[int] = set()
        self._leaves: dict[int, Tensor] = {}
        self._spent = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"

    def __len__(self) -> int:
        return len(self._records)

    def record(
        self,
        inputs: Sequence[Tensor],
        output: Tensor,
        backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
    ) -> None:
        """Append one operation. ``backward`` maps d(out) to per-input gradients."""
        self._records.append(_Record(tuple(inputs), output, backward))
        self._produced.add(id(output))
        for t in inputs:
            if t.requires_grad and id(t) not in self._produced:
                self._leaves[id(t)] = t

    def backward(self, root: Tensor, seed: Optional[np.ndarray] = None) -> None:
        """Propagate gradients from ``root`` back through every recorded op.

        ``root`` must be a scalar unless an explicit ``seed`` gradient of the
        same shape is supplied.  Leaf tensors with ``requires_grad`` get their
        ``.grad`` buffers accumulated (created on first use).
        """
        if self._spent:
            raise StateError("backward already ran on this tape; record a new forward pass")
        self._spent = True
        if seed is None:
            if root.size != 1:
                raise ParameterError("backward root must be scalar when no seed gradient is given")
            seed = np.ones_like(root.data)
        elif seed.shape != root.data.shape:
            raise DimensionError("seed gradient shape must match the root tensor")

        grads: dict[int, np.ndarray] = {id(root): np.asarray(seed, dtype=root.dtype)}
        for rec in reversed(self._records):
            g_out = grads.pop(id(rec.output), None)
            if g_out is None:
                continue
            g_inputs = rec.backward(g_out)
            for t, g in zip(rec.inputs, g_inputs):
                if g is None or not t.requires_grad:
                    continue
                acc = grads.get(id(t))
                grads[id(t)] = g if acc is None else acc + g

        for tid, g in grads.items():
            leaf = self._leaves.get(tid)
            if leaf is None:
                continue
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


def as_tensor(value, dtype=None) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value, dtype=dtype)
