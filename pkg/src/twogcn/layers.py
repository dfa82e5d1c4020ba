"""Module base class and the generic trainable layers.

A Module owns Parameters, named buffers (non-trained arrays such as batch
norm running statistics) and child modules discovered from its attributes.
State dicts flatten both parameters and buffers under dotted names, which is
also the naming scheme of the binary checkpoint format.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


class CheckpointMismatch(Exception):
    pass


class Module:
    def __init__(self):
        self.training = True
        self._buffers: dict[str, np.ndarray] = {}

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def register_buffer(self, name: str, array: np.ndarray):
        self._buffers[name] = array
        setattr(self, name, array)

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                full = f"{prefix}{name}"
                value.name = full
                yield full, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Parameter):
                        full = f"{prefix}{name}.{i}"
                        item.name = full
                        yield full, item
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name, buf in self._buffers.items():
            yield f"{prefix}{name}", buf
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def train(self, mode: bool = True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: buf.copy() for name, buf in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own_params = dict(self.named_parameters())
        own_buffers = dict(self.named_buffers())
        expected = set(own_params) | set(own_buffers)
        if expected != set(state):
            missing = expected - set(state)
            extra = set(state) - expected
            raise CheckpointMismatch(f"state mismatch; missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in own_params.items():
            if state[name].shape != p.data.shape:
                raise CheckpointMismatch(
                    f"{name}: checkpoint shape {state[name].shape} vs model {p.data.shape}")
            p.data[...] = state[name].astype(p.data.dtype)
        for name, buf in own_buffers.items():
            if state[name].shape != buf.shape:
                raise CheckpointMismatch(
                    f"{name}: checkpoint shape {state[name].shape} vs model {buf.shape}")
            buf[...] = state[name].astype(buf.dtype)

    def save_checkpoint(self) -> bytes:
        return ad.save_arrays(self.state_dict())

    def load_checkpoint(self, blob: bytes):
        self.load_state_dict(ad.load_arrays(blob))

    def astype(self, dtype):
        """Convert all parameters and buffers in place (for f64 grad checks)."""
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
            p.grad = p.grad.astype(dtype)
        for owner in self._walk():
            for name, buf in owner._buffers.items():
                if np.issubdtype(buf.dtype, np.floating):
                    converted = buf.astype(dtype)
                    owner.register_buffer(name, converted)
        return self

    def _walk(self):
        yield self
        for _, child in self._children():
            yield from child._walk()


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 dtype=np.float32, bias: bool = True):
        super().__init__()
        self.weight = Parameter(he_normal(rng, (in_features, out_features), in_features, dtype))
        self.bias = Parameter(np.zeros(out_features, dtype=dtype), decay=False) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = ad.matmul(x, self.weight)
        if self.bias is not None:
            out = ad.add(out, self.bias)
        return out

    def macs(self, positions: int) -> int:
        return positions * self.weight.data.shape[0] * self.weight.data.shape[1]


class TemporalConv(Module):
    """K x 1 convolution along the frame axis with 'same'-style padding."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 rng: np.random.Generator, stride: int = 1, dilation: int = 1,
                 dtype=np.float32, bias: bool = False):
        super().__init__()
        self.stride = stride
        self.dilation = dilation
        self.padding = ad.same_padding(kernel, dilation)
        self.weight = Parameter(
            he_normal(rng, (out_channels, in_channels, kernel), in_channels * kernel, dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype), decay=False) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ad.temporal_conv(x, self.weight, self.bias, stride=self.stride,
                                dilation=self.dilation, padding=self.padding)

    def out_length(self, t: int) -> int:
        kernel = self.weight.data.shape[2]
        return ad.conv_out_length(t, kernel, self.stride, self.dilation, self.padding)

    def macs(self, t: int, v: int) -> int:
        c_out, c_in, kernel = self.weight.data.shape
        return c_out * c_in * kernel * self.out_length(t) * v


class BatchNorm(Module):
    """Per-channel batch normalization over [B, C, T, V] feature maps."""

    def __init__(self, channels: int, dtype=np.float32, momentum: float = 0.1,
                 eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=dtype), decay=False)
        self.beta = Parameter(np.zeros(channels, dtype=dtype), decay=False)
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ad.batch_norm(x, self.gamma, self.beta, self.running_mean,
                             self.running_var, training=self.training,
                             momentum=self.momentum, eps=self.eps)
