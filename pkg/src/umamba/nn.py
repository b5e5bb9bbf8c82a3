"""Parameter containers and the layers used by the separation network."""

from __future__ import annotations

import math

import numpy as np

from . import functional as F
from . import tensor as T
from .tensor import Tensor


def parameter(data, dtype=np.float64):
    return Tensor(np.array(data, dtype=dtype), requires_grad=True)


def _uniform(rng, bound, shape, dtype):
    return parameter(rng.uniform(-bound, bound, size=shape), dtype)


class Module:
    """Base class; parameters are discovered from attributes in definition order."""

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch; missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {value.shape}")
            p.data = value.astype(p.dtype, copy=True)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv1d(Module):
    def __init__(self, c_in, c_out, kernel_size, stride=1, padding=0, groups=1, bias=True, rng=None, dtype=np.float64):
        rng = rng if rng is not None else np.random.default_rng()
        bound = 1.0 / math.sqrt(c_in // groups * kernel_size)
        self.weight = _uniform(rng, bound, (c_out, c_in // groups, kernel_size), dtype)
        self.bias = _uniform(rng, bound, (c_out,), dtype) if bias else None
        self.stride = stride
        self.padding = padding
        self.groups = groups

    def forward(self, x):
        return F.conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding, groups=self.groups)


class TransposedConv1d(Module):
    def __init__(self, c_in, c_out, kernel_size, stride=1, groups=1, bias=True, rng=None, dtype=np.float64):
        rng = rng if rng is not None else np.random.default_rng()
        bound = 1.0 / math.sqrt(c_in // groups * kernel_size)
        self.weight = _uniform(rng, bound, (c_in, c_out // groups, kernel_size), dtype)
        self.bias = _uniform(rng, bound, (c_out,), dtype) if bias else None
        self.stride = stride
        self.groups = groups

    def forward(self, x):
        return F.transposed_conv1d(x, self.weight, self.bias, stride=self.stride, groups=self.groups)


class Pointwise(Module):
    """1x1 convolution, i.e. a linear map applied to every frame."""

    def __init__(self, c_in, c_out, bias=True, rng=None, dtype=np.float64):
        rng = rng if rng is not None else np.random.default_rng()
        bound = 1.0 / math.sqrt(c_in)
        self.weight = _uniform(rng, bound, (c_out, c_in), dtype)
        self.bias = _uniform(rng, bound, (c_out,), dtype) if bias else None

    def forward(self, x):
        return F.pointwise(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, channels, eps=1e-8, dtype=np.float64):
        self.gain = parameter(np.ones(channels), dtype)
        self.bias = parameter(np.zeros(channels), dtype)
        self.eps = eps

    def forward(self, x):
        return F.layer_norm_channels(x, self.gain, self.bias, self.eps)


class PReLU(Module):
    def __init__(self, init=0.25, dtype=np.float64):
        self.slope = parameter(init, dtype)

    def forward(self, x):
        return T.prelu(x, self.slope)
