"""Parameter containers and the basic learnable layers."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Minimal parameter container with deterministic registration order."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        elif isinstance(value, (list, tuple)) and value and all(
            isinstance(v, Module) for v in value
        ):
            for i, v in enumerate(value):
                self._children[f"{name}.{i}"] = v
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield (prefix + name, p)
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self):
        return dict(self.named_parameters())

    def param_count(self):
        return sum(p.size for _, p in self.named_parameters())

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.zero_grad()

    def load_state(self, state: dict[str, np.ndarray]):
        """Copy arrays into the module's parameters, matching by name."""
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)[:5]} ...")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise T.ShapeError(
                    f"parameter {name}: checkpoint shape {arr.shape} != model {p.data.shape}"
                )
            p.data = np.ascontiguousarray(arr)

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(arr) -> Tensor:
    return Tensor(arr, requires_grad=True)


class Conv2d(Module):
    def __init__(self, rng, cin, cout, k, stride=1, groups=1, bias=True):
        super().__init__()
        self.stride = stride
        self.groups = groups
        self.padding = (k - 1) // 2
        fan_in = (cin // groups) * k * k
        self.weight = _param(T.kaiming_uniform(rng, (cout, cin // groups, k, k), fan_in))
        self.bias = _param(np.zeros(cout)) if bias else None

    def forward(self, x):
        return T.conv2d(
            x, self.weight, self.bias,
            stride=self.stride, padding=self.padding, groups=self.groups,
        )


class PointwiseConv(Conv2d):
    """1x1 convolution, the 'linear' layer for [B, C, H, W] maps."""

    def __init__(self, rng, cin, cout, bias=True):
        super().__init__(rng, cin, cout, k=1, bias=bias)


class DepthwiseConv(Conv2d):
    def __init__(self, rng, channels, k=3, bias=True):
        super().__init__(rng, channels, channels, k=k, groups=channels, bias=bias)


class Linear(Module):
    """Affine map over the last axis of [..., Din] sequences."""

    def __init__(self, rng, din, dout, bias=True):
        super().__init__()
        self.weight = _param(T.kaiming_uniform(rng, (dout, din), din))
        self.bias = _param(np.zeros(dout)) if bias else None

    def forward(self, x):
        return T.linear_last(x, self.weight, self.bias)


class LayerNorm(Module):
    """Channel layer norm: normalizes axis 1 of [B, C, H, W] at each position."""

    def __init__(self, channels, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = _param(np.ones(channels))
        self.beta = _param(np.zeros(channels))

    def forward(self, x):
        return T.layer_norm(x, self.gamma, self.beta, eps=self.eps, axis=1)
