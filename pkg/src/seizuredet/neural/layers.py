"""Numpy layers with hand-written backward passes.

Each layer keeps whatever it needs from ``forward`` to run ``backward``;
``backward`` receives the upstream gradient, fills ``self.grads`` for its
own parameters and returns the gradient with respect to its input. Layers
therefore support one backward per forward.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import OddDimension, ShapeMismatch


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def __call__(self, x, training=False):
        return self.forward(x, training)

    def named_children(self):
        return []


def _uniform(rng, bound, shape, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv1d(Layer):
    """1-D convolution over ``(N, C, L)`` with "same"-style padding."""

    def __init__(self, in_ch, out_ch, kernel, stride=1, rng=None, dtype=np.float32):
        super().__init__()
        if kernel < 1 or stride < 1:
            raise ValueError("kernel and stride must be >= 1")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_ch, self.out_ch, self.kernel, self.stride = in_ch, out_ch, kernel, stride
        bound = 1.0 / np.sqrt(in_ch * kernel)
        self.params["weight"] = _uniform(rng, bound, (out_ch, in_ch, kernel), dtype)
        self.params["bias"] = _uniform(rng, bound, (out_ch,), dtype)
        self.pad_left = (kernel - 1) // 2
        self.pad_right = kernel - 1 - self.pad_left

    def out_len(self, length):
        return (length + self.kernel - 1 - self.kernel) // self.stride + 1

    def forward(self, x, training=False):
        if x.ndim != 3 or x.shape[1] != self.in_ch:
            raise ShapeMismatch(f"conv expects (N, {self.in_ch}, L), got {x.shape}")
        n, c, length = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (self.pad_left, self.pad_right)))
        cols = sliding_window_view(xp, self.kernel, axis=2)[:, :, ::self.stride, :]
        t = cols.shape[2]
        cols = cols.transpose(0, 2, 1, 3).reshape(n * t, c * self.kernel)
        w = self.params["weight"].reshape(self.out_ch, -1)
        y = cols @ w.T + self.params["bias"]
        self._cache = (cols, x.shape, t)
        return y.reshape(n, t, self.out_ch).transpose(0, 2, 1)

    def backward(self, dy):
        cols, (n, c, length), t = self._cache
        k, s = self.kernel, self.stride
        dyr = dy.transpose(0, 2, 1).reshape(n * t, self.out_ch)
        w = self.params["weight"].reshape(self.out_ch, -1)
        self.grads["weight"] = (dyr.T @ cols).reshape(self.params["weight"].shape)
        self.grads["bias"] = dyr.sum(axis=0)
        dcols = (dyr @ w).reshape(n, t, c, k)
        dxp = np.zeros((n, c, length + k - 1), dtype=dy.dtype)
        for j in range(k):
            dxp[:, :, j:j + s * (t - 1) + 1:s] += dcols[:, :, :, j].transpose(0, 2, 1)
        return dxp[:, :, self.pad_left:self.pad_left + length]


class BatchNorm1d(Layer):
    """Per-channel normalisation over batch and time.

    Batch statistics in training (running averages updated with
    ``momentum``), running statistics at inference.
    """

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)

    def forward(self, x, training=False):
        g = self.params["gamma"][None, :, None]
        b = self.params["beta"][None, :, None]
        if training:
            mean = x.mean(axis=(0, 2))
            var = x.var(axis=(0, 2))
            m = x.shape[0] * x.shape[2]
            mom = self.momentum
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            rm *= 1 - mom
            rm += mom * mean
            rv *= 1 - mom
            rv += mom * var * (m / max(m - 1, 1))
        else:
            mean, var = self.buffers["running_mean"], self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
        self._cache = (xhat, inv_std, training)
        return g * xhat + b

    def backward(self, dy):
        xhat, inv_std, training = self._cache
        self.grads["gamma"] = (dy * xhat).sum(axis=(0, 2))
        self.grads["beta"] = dy.sum(axis=(0, 2))
        dxhat = dy * self.params["gamma"][None, :, None]
        if not training:
            return dxhat * inv_std[None, :, None]
        m = dy.shape[0] * dy.shape[2]
        s1 = dxhat.sum(axis=(0, 2), keepdims=True)
        s2 = (dxhat * xhat).sum(axis=(0, 2), keepdims=True)
        return (inv_std[None, :, None] / m) * (m * dxhat - s1 - xhat * s2)


class ReLU(Layer):
    def forward(self, x, training=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class MaxPool1d(Layer):
    """Non-overlapping max pooling; a trailing remainder is discarded."""

    def __init__(self, size):
        super().__init__()
        self.size = size

    def out_len(self, length):
        return length // self.size

    def forward(self, x, training=False):
        p = self.size
        if p == 1:
            return x
        n, c, length = x.shape
        t = length // p
        if t == 0:
            raise ShapeMismatch(f"sequence of length {length} too short for pool {p}")
        xr = x[:, :, :t * p].reshape(n, c, t, p)
        idx = xr.argmax(axis=3)
        self._cache = (idx, x.shape)
        return np.take_along_axis(xr, idx[..., None], axis=3)[..., 0]

    def backward(self, dy):
        p = self.size
        if p == 1:
            return dy
        idx, (n, c, length) = self._cache
        t = dy.shape[2]
        dxr = np.zeros((n, c, t, p), dtype=dy.dtype)
        np.put_along_axis(dxr, idx[..., None], dy[..., None], axis=3)
        dx = np.zeros((n, c, length), dtype=dy.dtype)
        dx[:, :, :t * p] = dxr.reshape(n, c, t * p)
        return dx


class Dropout(Layer):
    """Inverted dropout; identity at inference or when ``p == 0``."""

    def __init__(self, p, rng=None):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._scale = None

    def forward(self, x, training=False):
        if not training or self.p == 0.0:
            self._scale = None
            return x
        keep = self.rng.random(x.shape) >= self.p
        self._scale = keep.astype(x.dtype) / (1.0 - self.p)
        return x * self._scale

    def backward(self, dy):
        return dy if self._scale is None else dy * self._scale


class Linear(Layer):
    """Affine map on the last axis of any-rank input."""

    def __init__(self, in_dim, out_dim, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(in_dim)
        self.in_dim, self.out_dim = in_dim, out_dim
        self.params["weight"] = _uniform(rng, bound, (in_dim, out_dim), dtype)
        self.params["bias"] = _uniform(rng, bound, (out_dim,), dtype)

    def forward(self, x, training=False):
        if x.shape[-1] != self.in_dim:
            raise ShapeMismatch(f"linear expects last dim {self.in_dim}, got {x.shape}")
        self._x = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, dy):
        x2 = self._x.reshape(-1, self.in_dim)
        dy2 = dy.reshape(-1, self.out_dim)
        self.grads["weight"] = x2.T @ dy2
        self.grads["bias"] = dy2.sum(axis=0)
        return dy @ self.params["weight"].T


class Flatten(Layer):
    def forward(self, x, training=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class LayerNorm(Layer):
    def __init__(self, dim, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.eps = eps
        self.params["gamma"] = np.ones(dim, dtype=dtype)
        self.params["beta"] = np.zeros(dim, dtype=dtype)

    def forward(self, x, training=False):
        mean = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std)
        return xhat * self.params["gamma"] + self.params["beta"]

    def backward(self, dy):
        xhat, inv_std = self._cache
        d = xhat.shape[-1]
        self.grads["gamma"] = (dy * xhat).reshape(-1, d).sum(axis=0)
        self.grads["beta"] = dy.reshape(-1, d).sum(axis=0)
        dxhat = dy * self.params["gamma"]
        s1 = dxhat.sum(axis=-1, keepdims=True)
        s2 = (dxhat * xhat).sum(axis=-1, keepdims=True)
        return (inv_std / d) * (d * dxhat - s1 - xhat * s2)


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def rope_angles(n_positions, dim, base=10000.0, positions=None, dtype=np.float64):
    """Rotation angles ``m * base**(-2j/dim)``, shape ``(T, dim // 2)``."""
    if dim % 2:
        raise OddDimension(f"rotary embedding needs an even dimension, got {dim}")
    pos = np.arange(n_positions) if positions is None else np.asarray(positions)
    theta = base ** (-2.0 * np.arange(dim // 2) / dim)
    return (pos[:, None] * theta[None, :]).astype(dtype)


def rope_rotate(x, base=10000.0, positions=None, inverse=False):
    """Rotate consecutive pairs ``(x[2j], x[2j+1])`` of token ``m`` by ``m * theta_j``.

    ``x`` has shape ``(..., T, D)``. ``inverse=True`` applies the transpose
    rotation, which is also the backward pass of the forward rotation.
    """
    x = np.asarray(x)
    t, d = x.shape[-2], x.shape[-1]
    ang = rope_angles(t, d, base, positions, dtype=x.dtype if x.dtype.kind == "f" else np.float64)
    cos, sin = np.cos(ang), np.sin(ang)
    if inverse:
        sin = -sin
    even, odd = x[..., 0::2], x[..., 1::2]
    out = np.empty(np.broadcast_shapes(x.shape), dtype=np.result_type(x, cos))
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


class MultiHeadSelfAttention(Layer):
    """Scaled dot-product self-attention with rotary embeddings on q and k."""

    def __init__(self, dim, heads=2, rope_base=10000.0, rng=None, dtype=np.float32):
        super().__init__()
        if dim % (2 * heads):
            raise ValueError(f"model dim {dim} must be divisible by 2 * heads ({2 * heads})")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dim, self.heads, self.rope_base = dim, heads, rope_base
        self.head_dim = dim // heads
        bound = 1.0 / np.sqrt(dim)
        for name in ("q", "k", "v", "o"):
            self.params[f"w_{name}"] = _uniform(rng, bound, (dim, dim), dtype)
            self.params[f"b_{name}"] = _uniform(rng, bound, (dim,), dtype)
        self.last_attention = None

    def _split(self, x):
        n, t, _ = x.shape
        return x.reshape(n, t, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def _merge(self, x):
        n, h, t, dh = x.shape
        return x.transpose(0, 2, 1, 3).reshape(n, t, h * dh)

    def forward(self, x, training=False):
        if x.ndim != 3 or x.shape[-1] != self.dim:
            raise ShapeMismatch(f"attention expects (N, T, {self.dim}), got {x.shape}")
        p = self.params
        q = self._split(x @ p["w_q"] + p["b_q"])
        k = self._split(x @ p["w_k"] + p["b_k"])
        v = self._split(x @ p["w_v"] + p["b_v"])
        qr = rope_rotate(q, self.rope_base)
        kr = rope_rotate(k, self.rope_base)
        scale = 1.0 / np.sqrt(self.head_dim)
        attn = softmax(qr @ kr.transpose(0, 1, 3, 2) * scale, axis=-1)
        o = self._merge(attn @ v)
        self.last_attention = attn
        self._cache = (x, qr, kr, v, attn, o, scale)
        return o @ p["w_o"] + p["b_o"]

    def backward(self, dy):
        x, qr, kr, v, attn, o, scale = self._cache
        p = self.params
        d = self.dim
        self.grads["w_o"] = o.reshape(-1, d).T @ dy.reshape(-1, d)
        self.grads["b_o"] = dy.reshape(-1, d).sum(axis=0)
        do = self._split(dy @ p["w_o"].T)
        dattn = do @ v.transpose(0, 1, 3, 2)
        dv = attn.transpose(0, 1, 3, 2) @ do
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True)) * scale
        dq = rope_rotate(dscores @ kr, self.rope_base, inverse=True)
        dk = rope_rotate(dscores.transpose(0, 1, 3, 2) @ qr, self.rope_base, inverse=True)
        x2 = x.reshape(-1, d)
        dx = np.zeros_like(x)
        for name, g in (("q", dq), ("k", dk), ("v", dv)):
            g = self._merge(g)
            self.grads[f"w_{name}"] = x2.T @ g.reshape(-1, d)
            self.grads[f"b_{name}"] = g.reshape(-1, d).sum(axis=0)
            dx += g @ p[f"w_{name}"].T
        return dx


class Sequential(Layer):
    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)

    def named_children(self):
        return [(str(i), layer) for i, layer in enumerate(self.layers)]

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


class FeedForward(Sequential):
    def __init__(self, dim, ff_dim, dropout_p=0.0, rng=None, dtype=np.float32):
        super().__init__(Linear(dim, ff_dim, rng, dtype), ReLU(),
                         Dropout(dropout_p, rng), Linear(ff_dim, dim, rng, dtype))


class TransformerEncoderLayer(Layer):
    """Post-norm encoder layer: ``LN(x + Attn(x))`` then ``LN(h + FF(h))``."""

    def __init__(self, dim, heads=2, ff_dim=128, dropout_p=0.0, rope_base=10000.0,
                 rng=None, dtype=np.float32):
        super().__init__()
        self.attn = MultiHeadSelfAttention(dim, heads, rope_base, rng, dtype)
        self.drop1 = Dropout(dropout_p, rng)
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.ff = FeedForward(dim, ff_dim, dropout_p, rng, dtype)
        self.drop2 = Dropout(dropout_p, rng)
        self.norm2 = LayerNorm(dim, dtype=dtype)

    def named_children(self):
        return [("attn", self.attn), ("norm1", self.norm1), ("ff", self.ff),
                ("norm2", self.norm2), ("drop1", self.drop1), ("drop2", self.drop2)]

    def forward(self, x, training=False):
        h = self.norm1.forward(x + self.drop1.forward(self.attn.forward(x, training), training))
        return self.norm2.forward(h + self.drop2.forward(self.ff.forward(h, training), training))

    def backward(self, dy):
        dh = self.norm2.backward(dy)
        dh = dh + self.ff.backward(self.drop2.backward(dh))
        dx = self.norm1.backward(dh)
        return dx + self.attn.backward(self.drop1.backward(dx))
