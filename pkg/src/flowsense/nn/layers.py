"""Layers with explicit forward/backward passes on NCHW / ND numpy arrays.

Every layer caches what its backward pass needs during ``forward``;
``backward(dy)`` fills ``self.grads`` (same keys as ``self.params``) and
returns the gradient with respect to the input.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def children(self) -> list[tuple[str, "Layer"]]:
        return []

    def named_parameters(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        out = [(prefix + k, v) for k, v in self.params.items()]
        for name, child in self.children():
            out.extend(child.named_parameters(f"{prefix}{name}."))
        return out

    def named_grads(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        out = [(prefix + k, self.grads[k]) for k in self.params]
        for name, child in self.children():
            out.extend(child.named_grads(f"{prefix}{name}."))
        return out

    def astype(self, dtype):
        for k in self.params:
            self.params[k] = self.params[k].astype(dtype)
            self.grads[k] = np.zeros_like(self.params[k])
        for _, child in self.children():
            child.astype(dtype)
        return self

    def _init_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


class Conv2d(Layer):
    """Cross-correlation with per-filter bias; output side floor((H + 2p - k)/s) + 1."""

    def __init__(self, in_ch: int, out_ch: int, k: int, stride: int = 1, pad: int = 0, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_ch, self.out_ch, self.k, self.stride, self.pad = in_ch, out_ch, k, stride, pad
        self.params = {
            "weight": kaiming_uniform(rng, (out_ch, in_ch, k, k), in_ch * k * k),
            "bias": np.zeros(out_ch, dtype=np.float32),
        }
        self._init_grads()

    def out_size(self, h: int) -> int:
        return (h + 2 * self.pad - self.k) // self.stride + 1

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ShapeError(f"conv expects (N,{self.in_ch},H,W), got {x.shape}")
        n, c, h, w = x.shape
        k, s, p = self.k, self.stride, self.pad
        ho, wo = self.out_size(h), self.out_size(w)
        if ho < 1 or wo < 1:
            raise ShapeError(f"kernel {k} with pad {p} does not fit input {h}x{w}")
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
        wm = self.params["weight"].reshape(self.out_ch, -1)
        out = cols @ wm.T + self.params["bias"]
        self._cache = (x.shape, xp.shape, cols, ho, wo)
        return np.ascontiguousarray(out.reshape(n, ho, wo, self.out_ch).transpose(0, 3, 1, 2))

    def backward(self, dy):
        (n, c, h, w), xp_shape, cols, ho, wo = self._cache
        k, s, p = self.k, self.stride, self.pad
        dm = dy.transpose(0, 2, 3, 1).reshape(-1, self.out_ch)
        wm = self.params["weight"].reshape(self.out_ch, -1)
        self.grads["weight"] = (dm.T @ cols).reshape(self.params["weight"].shape)
        self.grads["bias"] = dm.sum(axis=0)
        dcols = (dm @ wm).reshape(n, ho, wo, c, k, k)
        dxp = np.zeros(xp_shape, dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if p:
            return dxp[:, :, p:p + h, p:p + w]
        return dxp


class Dense(Layer):
    """y = x @ W + b with W of shape (in, out)."""

    def __init__(self, in_dim: int, out_dim: int, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim, self.out_dim = in_dim, out_dim
        self.params = {
            "weight": kaiming_uniform(rng, (in_dim, out_dim), in_dim),
            "bias": np.zeros(out_dim, dtype=np.float32),
        }
        self._init_grads()

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"dense expects (N,{self.in_dim}), got {x.shape}")
        self._x = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, dy):
        self.grads["weight"] = self._x.T @ dy
        self.grads["bias"] = dy.sum(axis=0)
        return dy @ self.params["weight"].T


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class GlobalAvgPool(Layer):
    def forward(self, x):
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dy):
        n, c, h, w = self._shape
        return np.broadcast_to(dy[:, :, None, None] / (h * w), self._shape).copy()


class RSoftmax(Layer):
    """Softmax across the radix axis of (N, r, C) logits; sigmoid when r == 1."""

    def forward(self, x):
        if x.ndim != 3:
            raise ShapeError(f"rsoftmax expects (N, r, C), got {x.shape}")
        if x.shape[1] > 1:
            e = np.exp(x - x.max(axis=1, keepdims=True))
            y = e / e.sum(axis=1, keepdims=True)
        else:
            y = 1.0 / (1.0 + np.exp(-x))
        self._y = y
        return y

    def backward(self, dy):
        y = self._y
        if y.shape[1] > 1:
            return y * (dy - (y * dy).sum(axis=1, keepdims=True))
        return dy * y * (1.0 - y)


def rsoftmax(logits) -> np.ndarray:
    return RSoftmax().forward(np.asarray(logits))


class SplitAttention(Layer):
    """Split-attention residual block, single cardinal group.

    ``radix`` parallel 3x3 convolutions are summed, globally pooled, passed
    through a C -> C/4 -> r*C bottleneck and an r-softmax; the resulting
    per-channel weights mix the branches. A residual shortcut (identity, or a
    strided 1x1 convolution when the shape changes) and a ReLU follow.
    """

    def __init__(self, in_ch: int, out_ch: int, radix: int = 2, stride: int = 1, rng=None):
        super().__init__()
        if radix < 1:
            raise ValueError("radix must be >= 1")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.radix, self.out_ch = radix, out_ch
        inter = max(out_ch // 4, 1)
        self.convs = [Conv2d(in_ch, out_ch, 3, stride, 1, rng) for _ in range(radix)]
        self.fc1 = Dense(out_ch, inter, rng)
        self.relu1 = ReLU()
        self.fc2 = Dense(inter, radix * out_ch, rng)
        self.rsoftmax = RSoftmax()
        self.shortcut = Conv2d(in_ch, out_ch, 1, stride, 0, rng) if (in_ch != out_ch or stride != 1) else None

    def children(self):
        out = [(f"conv{i}", c) for i, c in enumerate(self.convs)]
        out += [("fc1", self.fc1), ("fc2", self.fc2)]
        if self.shortcut is not None:
            out.append(("shortcut", self.shortcut))
        return out

    def forward(self, x):
        ys = [conv.forward(x) for conv in self.convs]
        u = ys[0] if self.radix == 1 else sum(ys[1:], ys[0].copy())
        gap = u.mean(axis=(2, 3))
        logits = self.fc2.forward(self.relu1.forward(self.fc1.forward(gap)))
        att = self.rsoftmax.forward(logits.reshape(len(x), self.radix, self.out_ch))
        v = att[:, 0, :, None, None] * ys[0]
        for i in range(1, self.radix):
            v = v + att[:, i, :, None, None] * ys[i]
        s = v + (self.shortcut.forward(x) if self.shortcut is not None else x)
        self._cache = (ys, att, u.shape)
        self.attention = att
        self._mask = s > 0
        return s * self._mask

    def backward(self, dy):
        ys, att, ushape = self._cache
        ds = dy * self._mask
        n, c, h, w = ushape
        datt = np.stack([(ds * y).sum(axis=(2, 3)) for y in ys], axis=1)
        dlogits = self.rsoftmax.backward(datt).reshape(n, self.radix * c)
        dgap = self.fc1.backward(self.relu1.backward(self.fc2.backward(dlogits)))
        du = dgap[:, :, None, None] / (h * w)
        dx = None
        for i, conv in enumerate(self.convs):
            g = conv.backward(att[:, i, :, None, None] * ds + du)
            dx = g if dx is None else dx + g
        dx = dx + (self.shortcut.backward(ds) if self.shortcut is not None else ds)
        return dx


class ConvBlock(Layer):
    """Plain 3x3 convolution + ReLU (no attention, no shortcut)."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1, rng=None):
        super().__init__()
        self.conv = Conv2d(in_ch, out_ch, 3, stride, 1, rng)
        self.relu = ReLU()

    def children(self):
        return [("conv", self.conv)]

    def forward(self, x):
        return self.relu.forward(self.conv.forward(x))

    def backward(self, dy):
        return self.conv.backward(self.relu.backward(dy))


class Sequential(Layer):
    def __init__(self, layers: list[tuple[str, Layer]]):
        super().__init__()
        self.layers = layers

    def children(self):
        return list(self.layers)

    def forward(self, x):
        for _, layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for _, layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy
