"""Layer containers built on the tensor ops: conv, batchnorm, linear, residual
blocks, and the SGD-with-momentum optimizer."""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import ops
from .errors import DimensionError, StateError
from .tensor import Tensor


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = float(np.sqrt(6.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Minimal layer container: tracks child modules and parameter tensors by
    attribute order, so traversal (and checkpoints) are deterministic."""

    def __init__(self):
        self.training = True
        self._buffers: dict[str, np.ndarray] = {}

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, ModuleList):
                for i, child in enumerate(value):
                    if isinstance(child, Module):  # disabled slots hold None
                        yield f"{name}.{i}", child

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in self._buffers.items():
            yield prefix + name, value
        for name, child in self.children():
            yield from child.named_buffers(prefix + name + ".")

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class ModuleList(list):
    """Plain list of modules that Module.children knows how to walk."""


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        padding: int = 0,
        bias: bool = True,
        rng: Optional[np.random.Generator] = None,
        dtype=np.float32,
    ):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kernel_size * kernel_size
        self.stride = stride
        self.padding = padding
        self.weight = Tensor(
            he_uniform(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in, dtype),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))
        # 1.0 once any training batch has updated the running statistics
        self.register_buffer("initialized", np.zeros(1, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        if not self.training and not self._buffers["initialized"][0]:
            raise StateError("batchnorm eval mode before any training update")
        out = ops.batchnorm2d(
            x,
            self.gamma,
            self.beta,
            self._buffers["running_mean"],
            self._buffers["running_var"],
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
        )
        if self.training:
            self._buffers["initialized"][0] = 1.0
        return out


class Linear(Module):
    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: Optional[np.random.Generator] = None,
        dtype=np.float32,
    ):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Tensor(
            he_uniform(rng, (in_features, out_features), in_features, dtype), requires_grad=True
        )
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class BasicBlock(Module):
    """Two 3x3 conv+norm layers with an additive shortcut.

    A 1x1 projection shortcut is created exactly when the stride or the
    channel count changes; otherwise the shortcut is the identity.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        stride: int = 1,
        rng: Optional[np.random.Generator] = None,
        dtype=np.float32,
        batchnorm: bool = True,
    ):
        super().__init__()
        self.use_bn = batchnorm
        conv_bias = not batchnorm
        self.conv1 = Conv2d(in_channels, out_channels, 3, stride, 1, conv_bias, rng, dtype)
        self.bn1 = BatchNorm2d(out_channels, dtype=dtype) if batchnorm else None
        self.conv2 = Conv2d(out_channels, out_channels, 3, 1, 1, conv_bias, rng, dtype)
        self.bn2 = BatchNorm2d(out_channels, dtype=dtype) if batchnorm else None
        if stride != 1 or in_channels != out_channels:
            self.down_conv = Conv2d(in_channels, out_channels, 1, stride, 0, conv_bias, rng, dtype)
            self.down_bn = BatchNorm2d(out_channels, dtype=dtype) if batchnorm else None
        else:
            self.down_conv = None
            self.down_bn = None

    def forward(self, x: Tensor) -> Tensor:
        out = self.conv1(x)
        if self.bn1 is not None:
            out = self.bn1(out)
        out = ops.relu(out)
        out = self.conv2(out)
        if self.bn2 is not None:
            out = self.bn2(out)
        shortcut = x
        if self.down_conv is not None:
            shortcut = self.down_conv(x)
            if self.down_bn is not None:
                shortcut = self.down_bn(shortcut)
        if shortcut.shape != out.shape:
            raise DimensionError(
                f"residual shapes differ ({out.shape} vs {shortcut.shape}) and no projection is present"
            )
        return ops.relu(ops.add(out, shortcut))


class SGD:
    """Stochastic gradient descent with classical momentum."""

    def __init__(self, params: list[Tensor], lr: float, momentum: float = 0.0):
        self.params = list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.velocities = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        ops.sgd_momentum_step(self.params, self.velocities, self.lr, self.momentum)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
