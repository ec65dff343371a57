"""Stateful layer wrappers around :mod:`malvis.nn.ops`.

Every layer works on batches, caches what its backward pass needs, and
keeps ``params`` / ``grads`` dicts with matching shapes. Containers expose
their children's parameters under dotted names.
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import ShapeMismatch
from ..rng import SplitMix64
from . import ops


def glorot_uniform(rng: SplitMix64, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def _add_param(self, name, value):
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def output_shape(self, input_shape):
        raise NotImplementedError

    def named_params(self, prefix=""):
        for name, value in self.params.items():
            yield prefix + name, value, self.grads[name]

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)


class Conv2D(Layer):
    def __init__(self, in_ch, out_ch, k, rng, stride=1, padding=None):
        super().__init__()
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        self._add_param("kernel", glorot_uniform(rng, (out_ch, in_ch, k, k), in_ch * k * k, out_ch * k * k))
        self._add_param("bias", np.zeros(out_ch))

    def forward(self, x, train=False):
        self._x = x
        return ops.conv2d_forward(x, self.params["kernel"], self.params["bias"], self.stride, self.padding)

    def backward(self, grad):
        dx, dk, db = ops.conv2d_backward(grad, self._x, self.params["kernel"], self.stride, self.padding)
        self.grads["kernel"] += dk
        self.grads["bias"] += db
        return dx

    def output_shape(self, s):
        k = self.params["kernel"].shape
        if s[0] != k[1]:
            raise ShapeMismatch(f"conv expects {k[1]} channels, got {s[0]}")
        return (
            k[0],
            ops.conv_output_size(s[1], k[2], self.stride, self.padding),
            ops.conv_output_size(s[2], k[3], self.stride, self.padding),
        )


class MaxPool(Layer):
    def __init__(self, window=2, stride=None, padding=0):
        super().__init__()
        self.window = window
        self.stride = window if stride is None else stride
        self.padding = padding

    def forward(self, x, train=False):
        self._shape = x.shape
        out, self._arg = ops.maxpool2d(x, self.window, self.stride, self.padding)
        return out

    def backward(self, grad):
        return ops.maxpool2d_backward(grad, self._arg, self._shape, self.window, self.stride, self.padding)

    def output_shape(self, s):
        return (
            s[0],
            ops.conv_output_size(s[1], self.window, self.stride, self.padding),
            ops.conv_output_size(s[2], self.window, self.stride, self.padding),
        )


class ReLU(Layer):
    def forward(self, x, train=False):
        self._x = x
        return ops.relu(x)

    def backward(self, grad):
        return ops.relu_backward(grad, self._x)

    def output_shape(self, s):
        return s


class GlobalAvgPool(Layer):
    def forward(self, x, train=False):
        self._shape = x.shape
        return ops.global_avg_pool(x)

    def backward(self, grad):
        return ops.global_avg_pool_backward(grad, self._shape)

    def output_shape(self, s):
        return (s[0],)


class Flatten(Layer):
    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)

    def output_shape(self, s):
        return (int(np.prod(s)),)


class Dense(Layer):
    def __init__(self, n_in, n_out, rng):
        super().__init__()
        self._add_param("weight", glorot_uniform(rng, (n_out, n_in), n_in, n_out))
        self._add_param("bias", np.zeros(n_out))

    def forward(self, x, train=False):
        self._x = x
        return ops.dense(x, self.params["weight"], self.params["bias"])

    def backward(self, grad):
        dx, dw, db = ops.dense_backward(grad, self._x, self.params["weight"])
        self.grads["weight"] += dw
        self.grads["bias"] += db
        return dx

    def output_shape(self, s):
        if s != (self.params["weight"].shape[1],):
            raise ShapeMismatch(f"dense expects ({self.params['weight'].shape[1]},), got {s}")
        return (self.params["weight"].shape[0],)


class GRU(Layer):
    """Runs a GRU over the rows of a (N, C, H, W) batch: H steps of C*W features.

    Initial hidden state is zero; the output is the final hidden state (N, hidden).
    """

    def __init__(self, n_in, hidden, rng):
        super().__init__()
        for gate in "zrh":
            self._add_param(f"W_{gate}", glorot_uniform(rng, (hidden, n_in), n_in, hidden))
            self._add_param(f"U_{gate}", glorot_uniform(rng, (hidden, hidden), hidden, hidden))
            self._add_param(f"b_{gate}", np.zeros(hidden))
        self.hidden = hidden
        self.n_in = n_in

    def _steps(self, x):
        n, c, h, w = x.shape
        return x.transpose(0, 2, 1, 3).reshape(n, h, c * w)

    def forward(self, x, train=False):
        self._shape = x.shape
        seq = self._steps(x)
        h = np.zeros((seq.shape[0], self.hidden))
        self._caches = []
        for t in range(seq.shape[1]):
            h, cache = ops.gru_step(seq[:, t, :], h, self.params)
            self._caches.append(cache)
        return h

    def backward(self, grad):
        n, c, hh, w = self._shape
        d_seq = np.zeros((n, hh, c * w))
        d_h = grad
        for t in range(len(self._caches) - 1, -1, -1):
            d_x, d_h, g = ops.gru_step_backward(d_h, self._caches[t], self.params)
            d_seq[:, t, :] = d_x
            for name, value in g.items():
                self.grads[name] += value
        return d_seq.reshape(n, hh, c, w).transpose(0, 2, 1, 3)

    def output_shape(self, s):
        if s[0] * s[2] != self.n_in:
            raise ShapeMismatch(f"GRU expects rows of {self.n_in} features, got {s[0] * s[2]}")
        return (self.hidden,)


class Sequential(Layer):
    def __init__(self, *layers, names=None):
        super().__init__()
        self.layers = list(layers)
        self.names = list(names) if names else [str(i) for i in range(len(self.layers))]

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def output_shape(self, s):
        for layer in self.layers:
            s = layer.output_shape(s)
        return s

    def named_params(self, prefix=""):
        for name, layer in zip(self.names, self.layers):
            yield from layer.named_params(f"{prefix}{name}.")

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()


class Concat(Layer):
    """Parallel branches whose outputs are concatenated along channels."""

    def __init__(self, *branches, names=None):
        super().__init__()
        self.branches = list(branches)
        self.names = list(names) if names else [f"branch{i}" for i in range(len(self.branches))]

    def forward(self, x, train=False):
        outs = [b.forward(x, train) for b in self.branches]
        self._sizes = [o.shape[1] for o in outs]
        return ops.concat_channels(outs, axis=1)

    def backward(self, grad):
        parts = ops.concat_channels_backward(grad, self._sizes, axis=1)
        dx = None
        for b, g in zip(self.branches, parts):
            d = b.backward(np.ascontiguousarray(g))
            dx = d if dx is None else dx + d
        return dx

    def output_shape(self, s):
        shapes = [b.output_shape(s) for b in self.branches]
        if len({sh[1:] for sh in shapes}) != 1:
            raise ShapeMismatch(f"branch spatial shapes differ: {shapes}")
        return (sum(sh[0] for sh in shapes),) + shapes[0][1:]

    def named_params(self, prefix=""):
        for name, b in zip(self.names, self.branches):
            yield from b.named_params(f"{prefix}{name}.")

    def zero_grad(self):
        for b in self.branches:
            b.zero_grad()


class Residual(Layer):
    """``body(x) + shortcut(x)``; ``shortcut`` None means identity."""

    def __init__(self, body, shortcut=None):
        super().__init__()
        self.body = body
        self.shortcut = shortcut

    def forward(self, x, train=False):
        main = self.body.forward(x, train)
        skip = x if self.shortcut is None else self.shortcut.forward(x, train)
        return ops.add(main, skip)

    def backward(self, grad):
        g_main, g_skip = ops.add_backward(grad)
        dx = self.body.backward(g_main)
        return dx + (g_skip if self.shortcut is None else self.shortcut.backward(g_skip))

    def output_shape(self, s):
        main = self.body.output_shape(s)
        skip = s if self.shortcut is None else self.shortcut.output_shape(s)
        if main != skip:
            raise ShapeMismatch(f"residual body {main} and shortcut {skip} differ")
        return main

    def named_params(self, prefix=""):
        yield from self.body.named_params(prefix + "body.")
        if self.shortcut is not None:
            yield from self.shortcut.named_params(prefix + "shortcut.")

    def zero_grad(self):
        self.body.zero_grad()
        if self.shortcut is not None:
            self.shortcut.zero_grad()
