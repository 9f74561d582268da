"""Parameter containers and layers."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor, matmul

# Affine layout: [x', y'] = [x, y, 1] @ A with A stored row-major as 3x2,
# i.e. the 6-vector (a11, a12, a21, a22, tx, ty).
IDENTITY_AFFINE = (1.0, 0.0, 0.0, 1.0, 0.0, 0.0)


class Parameter(Tensor):
    """A leaf tensor owned by a :class:`Module`; frozen when requires_grad is False."""

    __slots__ = ()

    def __init__(self, data, requires_grad: bool = True, name: str | None = None):
        super().__init__(data, requires_grad=requires_grad, name=name)


def init_params(kind: str, shape, rng: np.random.Generator | None = None,
                fan_in: int | None = None) -> Parameter:
    """Create a trainable tensor.

    ``kaiming-uniform`` draws from U(-b, b) with b = sqrt(6 / fan_in), where
    fan_in defaults to the product of all but the first extent.
    """
    shape = tuple(int(s) for s in shape)
    if kind == "zeros":
        data = np.zeros(shape)
    elif kind == "identity-affine-bias":
        if shape not in ((6,), ()):
            raise ValueError("identity-affine-bias has shape (6,)")
        data = np.array(IDENTITY_AFFINE)
    elif kind == "kaiming-uniform":
        if rng is None:
            raise ValueError("kaiming-uniform needs an rng")
        if fan_in is None:
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
        bound = math.sqrt(6.0 / fan_in)
        data = rng.uniform(-bound, bound, size=shape)
    else:
        raise ValueError(f"unknown init kind {kind!r}")
    return Parameter(data)


class Module:
    """Tracks parameters and child modules by attribute order."""

    training = True

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self.__dict__.setdefault("_params", {})[name] = value
        elif isinstance(value, Module):
            self.__dict__.setdefault("_children", {})[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self.__dict__.get("_params", {}).items():
            yield prefix + name, getattr(self, name)
        for name, child in self.__dict__.get("_children", {}).items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for child in self.__dict__.get("_children", {}).values():
            yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 weight_init: str = "kaiming-uniform", bias_init: str = "zeros"):
        self.in_features = in_features
        self.out_features = out_features
        # stored (in, out) so the forward pass is x @ W
        if weight_init == "zeros":
            self.weight = init_params("zeros", (in_features, out_features))
        else:
            self.weight = init_params(weight_init, (in_features, out_features), rng, fan_in=in_features)
        self.bias = init_params(bias_init, (out_features,))

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.weight) + self.bias


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0):
        self.stride = stride
        self.padding = padding
        self.kernel = init_params("kaiming-uniform", (out_channels, in_channels, kernel_size, kernel_size), rng)
        self.bias = init_params("zeros", (out_channels,))

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.kernel, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, output_padding: int = 0):
        self.stride = stride
        self.padding = padding
        self.output_padding = output_padding
        self.kernel = init_params("kaiming-uniform", (in_channels, out_channels, kernel_size, kernel_size), rng,
                                  fan_in=out_channels * kernel_size * kernel_size)
        self.bias = init_params("zeros", (out_channels,))

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d_transpose(x, self.kernel, self.bias, self.stride, self.padding, self.output_padding)


class LSTMCell(Module):
    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.hidden_size = hidden_size
        self.w_ih = init_params("kaiming-uniform", (input_size, 4 * hidden_size), rng, fan_in=input_size)
        self.w_hh = init_params("kaiming-uniform", (hidden_size, 4 * hidden_size), rng, fan_in=hidden_size)
        self.bias = init_params("zeros", (4 * hidden_size,))

    def __call__(self, x: Tensor, state: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
        h, c = state
        return F.lstm_cell_step(x, h, c, self.w_ih, self.w_hh, self.bias)
