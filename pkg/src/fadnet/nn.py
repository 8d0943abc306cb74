"""Parameter containers and the convolutional layers built on :mod:`fadnet.ops`."""

import math

import numpy as np

from . import ops
from .tensor import Tensor, default_dtype


class Parameter(Tensor):
    """A leaf tensor that always requires gradients."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    """Holds parameters and child modules in registration order."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} does not match {p.shape}")
            p.data = np.array(value, dtype=p.dtype)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def kaiming_uniform(rng, shape, fan_in, negative_slope=0.1, dtype=None):
    gain = math.sqrt(2.0 / (1.0 + negative_slope**2))
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype or default_dtype())


class Conv2d(Module):
    def __init__(
        self, in_channels, out_channels, kernel_size=3, stride=1, padding=None, bias=True, rng=None, init_gain=1.0
    ):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding
        fan_in = in_channels * kernel_size * kernel_size
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        # init_gain < 1 damps branches whose outputs are summed (residuals, prediction heads)
        self.weight = Parameter(kaiming_uniform(rng, shape, fan_in) * np.asarray(init_gain, dtype=default_dtype()))
        self.bias = Parameter(np.zeros(out_channels, dtype=default_dtype())) if bias else None

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvTranspose2d(Module):
    """Learned 2x upsampling: kernel 4, stride 2, padding 1 by default."""

    def __init__(self, in_channels, out_channels, kernel_size=4, stride=2, padding=1, bias=True, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        self.padding = padding
        fan_in = max(1, in_channels * kernel_size * kernel_size // (stride * stride))
        shape = (in_channels, out_channels, kernel_size, kernel_size)
        self.weight = Parameter(kaiming_uniform(rng, shape, fan_in))
        self.bias = Parameter(np.zeros(out_channels, dtype=default_dtype())) if bias else None

    def forward(self, x):
        return ops.conv_transpose2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)
