"""Layers with explicit forward caches and analytic backward passes.

Every layer implements ``forward(x) -> (y, cache)`` and
``backward(cache, gy) -> (gx, grads)`` where ``grads`` lines up with
``params()``. Layers never hold per-call state, so one layer can appear
several times in a graph (shared weights) as long as each call keeps its own
cache.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import InputShapeError

ACTIVATIONS = ("linear", "relu", "tanh")


def _act(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _act_grad(z, a, g, kind):
    if kind == "relu":
        return g * (z > 0)
    if kind == "tanh":
        return g * (1.0 - a * a)
    return g


def _init(rng, fan_in, shape, activation, zero):
    if zero:
        return np.zeros(shape)
    # He scaling for ReLU, LeCun otherwise
    gain = 2.0 if activation == "relu" else 1.0
    return rng.standard_normal(shape) * math.sqrt(gain / fan_in)


class Layer:
    kind = "layer"

    def params(self) -> list[np.ndarray]:
        return []

    def forward(self, x):
        raise NotImplementedError

    def backward(self, cache, gy):
        raise NotImplementedError

    def descriptor(self) -> dict:
        return {"kind": self.kind}


class Dense(Layer):
    """Affine map over the last axis followed by a pointwise activation."""

    kind = "dense"

    def __init__(self, n_in: int, n_out: int, activation: str = "relu", rng=None, zero: bool = False):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.n_out, self.activation = n_in, n_out, activation
        self.W = _init(rng, n_in, (n_in, n_out), activation, zero)
        self.b = np.zeros(n_out)

    def params(self):
        return [self.W, self.b]

    def forward(self, x):
        if x.shape[-1] != self.n_in:
            raise InputShapeError(f"dense expects {self.n_in} features, got shape {x.shape}")
        z = x @ self.W + self.b
        a = _act(z, self.activation)
        return a, (x, z, a)

    def backward(self, cache, gy):
        x, z, a = cache
        gz = _act_grad(z, a, gy, self.activation)
        x2 = x.reshape(-1, self.n_in)
        g2 = gz.reshape(-1, self.n_out)
        return gz @ self.W.T, [x2.T @ g2, g2.sum(axis=0)]

    def descriptor(self):
        return {"kind": self.kind, "n_in": self.n_in, "n_out": self.n_out, "activation": self.activation}


class Conv2d(Layer):
    """2-D cross-correlation on ``(B, C, H, W)`` inputs via im2col."""

    kind = "conv2d"

    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3, stride: int = 1, padding: int = 0,
                 activation: str = "relu", rng=None, zero: bool = False):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_ch, self.out_ch, self.kernel = in_ch, out_ch, kernel
        self.stride, self.padding, self.activation = stride, padding, activation
        fan_in = in_ch * kernel * kernel
        self.W = _init(rng, fan_in, (fan_in, out_ch), activation, zero)
        self.b = np.zeros(out_ch)

    def params(self):
        return [self.W, self.b]

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        k, s, p = self.kernel, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise InputShapeError(f"conv2d expects (B, {self.in_ch}, H, W), got {x.shape}")
        k, s, p = self.kernel, self.stride, self.padding
        B, C, H, W = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        Ho, Wo = self.output_hw(H, W)
        if Ho < 1 or Wo < 1:
            raise InputShapeError(f"input {H}x{W} too small for kernel {k}")
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :Ho, :Wo]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * k * k)
        z = cols @ self.W + self.b
        a = _act(z, self.activation)
        y = a.reshape(B, Ho, Wo, self.out_ch).transpose(0, 3, 1, 2)
        return y, (x.shape, cols, z, a, Ho, Wo)

    def backward(self, cache, gy):
        shape, cols, z, a, Ho, Wo = cache
        B, C, H, W = shape
        k, s, p = self.kernel, self.stride, self.padding
        g = gy.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, self.out_ch)
        gz = _act_grad(z, a, g, self.activation)
        dW = cols.T @ gz
        db = gz.sum(axis=0)
        dcols = (gz @ self.W.T).reshape(B, Ho, Wo, C, k, k)
        gxp = np.zeros((B, C, H + 2 * p, W + 2 * p))
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + s * Ho:s, j:j + s * Wo:s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, p:p + H, p:p + W] if p else gxp
        return gx, [dW, db]

    def descriptor(self):
        return {"kind": self.kind, "in_ch": self.in_ch, "out_ch": self.out_ch, "kernel": self.kernel,
                "stride": self.stride, "padding": self.padding, "activation": self.activation}


def softmax(s, axis=-1):
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


class Attention(Layer):
    """Single-head scaled dot-product self-attention over ``(B, T, d)``.

    No output projection: with one token the result is that token's value
    projection. Keys carry no bias; it would shift every score in a row
    equally and cancel in the softmax.
    """

    kind = "attention"

    def __init__(self, d_model: int, heads: int = 1, rng=None):
        if heads != 1:
            raise ValueError("only single-head attention is supported")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d = d_model
        scale = 1.0 / math.sqrt(d_model)
        self.Wq, self.Wk, self.Wv = (rng.standard_normal((d_model, d_model)) * scale for _ in range(3))
        self.bq, self.bv = np.zeros(d_model), np.zeros(d_model)

    def params(self):
        return [self.Wq, self.bq, self.Wk, self.Wv, self.bv]

    def forward(self, x):
        if x.ndim != 3 or x.shape[-1] != self.d:
            raise InputShapeError(f"attention expects (B, T, {self.d}), got {x.shape}")
        q = x @ self.Wq + self.bq
        k = x @ self.Wk
        v = x @ self.Wv + self.bv
        A = softmax(q @ k.transpose(0, 2, 1) / math.sqrt(self.d))
        return A @ v, (x, q, k, v, A)

    def backward(self, cache, gy):
        x, q, k, v, A = cache
        dv = A.transpose(0, 2, 1) @ gy
        dA = gy @ v.transpose(0, 2, 1)
        ds = A * (dA - np.sum(dA * A, axis=-1, keepdims=True)) / math.sqrt(self.d)
        dq = ds @ k
        dk = ds.transpose(0, 2, 1) @ q
        x2 = x.reshape(-1, self.d)
        dq2, dk2, dv2 = (d_.reshape(-1, self.d) for d_ in (dq, dk, dv))
        grads = [x2.T @ dq2, dq2.sum(axis=0), x2.T @ dk2, x2.T @ dv2, dv2.sum(axis=0)]
        gx = dq @ self.Wq.T + dk @ self.Wk.T + dv @ self.Wv.T
        return gx, grads

    def attention_weights(self, x):
        return self.forward(x)[1][-1]

    def descriptor(self):
        return {"kind": self.kind, "d_model": self.d, "heads": 1}


class MaxPool(Layer):
    """Max over one axis (the axis is removed). Ties go to the lowest index."""

    kind = "maxpool"

    def __init__(self, axis: int = 1):
        self.axis = axis

    def forward(self, x):
        idx = np.expand_dims(np.argmax(x, axis=self.axis), self.axis)
        y = np.take_along_axis(x, idx, axis=self.axis)
        return np.squeeze(y, self.axis), (x.shape, idx)

    def backward(self, cache, gy):
        shape, idx = cache
        gx = np.zeros(shape)
        np.put_along_axis(gx, idx, np.expand_dims(gy, self.axis), axis=self.axis)
        return gx, []

    def descriptor(self):
        return {"kind": self.kind, "axis": self.axis}


class Flatten(Layer):
    """Collapse all axes from ``start`` onward."""

    kind = "flatten"

    def __init__(self, start: int = 1):
        self.start = start

    def forward(self, x):
        return x.reshape(x.shape[: self.start] + (-1,)), x.shape

    def backward(self, cache, gy):
        return gy.reshape(cache), []

    def descriptor(self):
        return {"kind": self.kind, "start": self.start}


class Residual(Layer):
    """``x + f(x)`` for an inner layer stack ``f``."""

    kind = "residual"

    def __init__(self, layers):
        self.layers = list(layers)

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def forward(self, x):
        caches = []
        h = x
        for layer in self.layers:
            h, c = layer.forward(h)
            caches.append(c)
        if h.shape != x.shape:
            raise InputShapeError(f"residual branch changed shape {x.shape} -> {h.shape}")
        return x + h, caches

    def backward(self, cache, gy):
        g = gy
        grads = []
        for layer, c in zip(reversed(self.layers), reversed(cache)):
            g, gr = layer.backward(c, g)
            grads = gr + grads
        return gy + g, grads

    def descriptor(self):
        return {"kind": self.kind, "layers": [l.descriptor() for l in self.layers]}


class ConcatBranch(Layer):
    """Apply independent layer stacks to slices of the last axis and concatenate.

    ``branches`` is a list of ``(start, stop, layers)``; an empty layer list
    passes its slice through unchanged.
    """

    kind = "concat"

    def __init__(self, branches):
        self.branches = [(int(a), int(b), list(ls)) for a, b, ls in branches]

    def params(self):
        return [p for _, _, ls in self.branches for layer in ls for p in layer.params()]

    def forward(self, x):
        outs, caches = [], []
        for a, b, ls in self.branches:
            h = x[..., a:b]
            cs = []
            for layer in ls:
                h, c = layer.forward(h)
                cs.append(c)
            outs.append(h)
            caches.append((cs, h.shape[-1]))
        return np.concatenate(outs, axis=-1), (x.shape, caches)

    def backward(self, cache, gy):
        shape, caches = cache
        gx = np.zeros(shape)
        grads = []
        off = 0
        for (a, b, ls), (cs, width) in zip(self.branches, caches):
            g = gy[..., off:off + width]
            off += width
            bgrads = []
            for layer, c in zip(reversed(ls), reversed(cs)):
                g, gr = layer.backward(c, g)
                bgrads = gr + bgrads
            gx[..., a:b] += g
            grads += bgrads
        return gx, grads

    def descriptor(self):
        return {"kind": self.kind,
                "branches": [{"start": a, "stop": b, "layers": [l.descriptor() for l in ls]}
                             for a, b, ls in self.branches]}


def layer_from_descriptor(d: dict) -> Layer:
    kind = d["kind"]
    if kind == "dense":
        return Dense(d["n_in"], d["n_out"], d["activation"], zero=True)
    if kind == "conv2d":
        return Conv2d(d["in_ch"], d["out_ch"], d["kernel"], d["stride"], d["padding"], d["activation"], zero=True)
    if kind == "attention":
        return Attention(d["d_model"], d.get("heads", 1))
    if kind == "maxpool":
        return MaxPool(d["axis"])
    if kind == "flatten":
        return Flatten(d["start"])
    if kind == "residual":
        return Residual([layer_from_descriptor(x) for x in d["layers"]])
    if kind == "concat":
        return ConcatBranch([(b["start"], b["stop"], [layer_from_descriptor(x) for x in b["layers"]])
                             for b in d["branches"]])
    raise ValueError(f"unknown layer kind {kind!r}")
