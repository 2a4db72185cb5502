"""Layers with analytic backward passes.

Every layer caches what its backward pass needs during ``forward`` and
fills ``self.grads`` (same keys as ``self.params``) during ``backward``.
Activations are ``(batch, channels, length)`` float64 arrays.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch, ZeroFilter
from . import ops

NORM_EPS = 1e-8

COSINE_MODES = ("cosine_full", "cosine_normalized")


class Layer:
    kind = "layer"
    params: dict
    grads: dict

    def __init__(self):
        self.params = {}
        self.grads = {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, g: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def config(self) -> dict:
        return {}

    def zero_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def __repr__(self):
        cfg = ", ".join(f"{k}={v}" for k, v in self.config().items())
        return f"{type(self).__name__}({cfg})"


def _check_input(x: np.ndarray, channels: int, taps: int):
    if x.ndim != 3:
        raise ShapeMismatch(f"expected (batch, channels, length), got shape {x.shape}")
    if x.shape[1] != channels:
        raise ShapeMismatch(f"expected {channels} input channels, got {x.shape[1]}")
    if x.shape[2] < taps:
        raise ShapeMismatch(f"input length {x.shape[2]} shorter than filter length {taps}")


class Conv1d(Layer):
    """Plain (dot-product) convolution without bias, valid padding."""

    kind = "conv"

    def __init__(self, weight: np.ndarray, stride: int = 1):
        super().__init__()
        weight = np.asarray(weight, dtype=np.float64)
        if weight.ndim == 2:
            weight = weight[:, None, :]
        if stride < 1:
            raise ShapeMismatch(f"stride must be >= 1, got {stride}")
        self.params = {"weight": weight}
        self.stride = int(stride)
        self.zero_grads()

    @classmethod
    def init(cls, rng, filters: int, channels: int, taps: int, stride: int = 1):
        std = np.sqrt(2.0 / (channels * taps))
        return cls(rng.normal(0.0, std, size=(filters, channels, taps)), stride)

    @property
    def weight(self):
        return self.params["weight"]

    def config(self):
        k, c, l = self.weight.shape
        return {"filters": k, "channels": c, "taps": l, "stride": self.stride}

    def forward(self, x):
        _check_input(x, self.weight.shape[1], self.weight.shape[2])
        self._x = x
        return ops.correlate(x, self.weight, self.stride)

    def backward(self, g):
        x = self._x
        self.grads["weight"] = ops.weight_grad(x, g, self.weight.shape[2], self.stride)
        return ops.input_grad(g, self.weight, x.shape[2], self.stride)


class CosineConv1d(Layer):
    """Convolution whose outputs are cosines between filter and input window.

    ``cosine_full`` divides by both norms. ``cosine_normalized`` divides by
    the window norm only and relies on the optimiser keeping each filter at
    unit norm. Window norms are guarded from below by ``NORM_EPS``.
    Single input channel; weights have shape ``(filters, taps)``.
    """

    kind = "cosine_conv"

    def __init__(self, weight: np.ndarray, mode: str = "cosine_normalized", stride: int = 1):
        super().__init__()
        if mode not in COSINE_MODES:
            raise ValueError(f"unknown cosine mode {mode!r}")
        if stride != 1:
            raise ShapeMismatch("cosine convolution is only defined for stride 1 here")
        self.params = {"weight": np.array(weight, dtype=np.float64, ndmin=2)}
        self.mode = mode
        self.stride = 1
        self.zero_grads()

    @classmethod
    def init(cls, rng, filters: int, taps: int, mode: str = "cosine_normalized"):
        w = rng.normal(size=(filters, taps))
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        return cls(w, mode)

    @property
    def weight(self):
        return self.params["weight"]

    @property
    def unit_norm(self) -> bool:
        return self.mode == "cosine_normalized"

    def config(self):
        k, l = self.weight.shape
        return {"filters": k, "taps": l, "mode": self.mode}

    def _filter_norms(self):
        wn = np.linalg.norm(self.weight, axis=1)
        if self.mode == "cosine_full":
            if np.any(wn <= NORM_EPS):
                raise ZeroFilter("cosine_full needs filters with non-zero norm")
            return wn
        return np.ones_like(wn)

    def forward(self, x):
        taps = self.weight.shape[1]
        _check_input(x, 1, taps)
        win = ops.windows(x[:, 0, :], taps)
        norms = np.sqrt(np.einsum("bnl,bnl->bn", win, win))
        denom = np.maximum(norms, NORM_EPS)
        dots = ops.correlate(x, self.weight[:, None, :])
        wn = self._filter_norms()
        self._x, self._norms, self._denom, self._dots, self._wn = x, norms, denom, dots, wn
        return dots / (wn[None, :, None] * denom[:, None, :])

    def backward(self, g):
        x, denom, dots, wn = self._x, self._denom, self._dots, self._wn
        w = self.weight
        taps = w.shape[1]
        full = self.mode == "cosine_full"
        batch, filters, _ = g.shape
        nz = np.flatnonzero(g)
        if nz.size <= batch * filters:
            # routed (1-max) upstream: accumulate the selected windows directly
            gw = np.zeros_like(w)
            radial = np.zeros(filters)
            for b, k, j in zip(*np.unravel_index(nz, g.shape)):
                u = g[b, k, j]
                seg = x[b, 0, j : j + taps]
                if full:
                    gw[k] += u * seg / (wn[k] * denom[b, j])
                    radial[k] += u * dots[b, k, j] / denom[b, j]
                else:
                    gw[k] += u * seg / denom[b, j]
        else:
            a = g / denom[:, None, :]
            radial = np.einsum("bkn,bkn->k", a, dots) if full else None
            if full:
                a = a / wn[None, :, None]
            gw = ops.weight_grad(x, a, taps)[:, 0, :]
        if full:
            gw -= w * (radial / wn**3)[:, None]
        self.grads["weight"] = gw

        # d o_j / d seg_j = w / (|w| d_j) - dots_j seg_j / (|w| d_j^3)  (second term only when unguarded)
        a = g / (wn[None, :, None] * denom[:, None, :])
        gx = ops.input_grad(a, w[:, None, :], x.shape[2])
        live = self._norms > NORM_EPS
        c = np.einsum("bkn,bkn->bn", a, dots) / denom**2 * live
        gx[:, 0, :] -= ops.window_sum(c, taps) * x[:, 0, :]
        return gx


class MaxPool1d(Layer):
    """Non-overlapping max pooling; trailing samples that do not fill a window are dropped."""

    kind = "maxpool"

    def __init__(self, window: int):
        super().__init__()
        if window < 1:
            raise ShapeMismatch(f"pool window must be >= 1, got {window}")
        self.window = int(window)

    def config(self):
        return {"window": self.window}

    def forward(self, x):
        b, c, n = x.shape
        n_out = n // self.window
        if n_out < 1:
            raise ShapeMismatch(f"input length {n} shorter than pool window {self.window}")
        blocks = x[:, :, : n_out * self.window].reshape(b, c, n_out, self.window)
        self._argmax = blocks.argmax(axis=-1)
        self._shape = x.shape
        return np.take_along_axis(blocks, self._argmax[..., None], axis=-1)[..., 0]

    def backward(self, g):
        b, c, n = self._shape
        n_out = g.shape[-1]
        gx = np.zeros((b, c, n))
        idx = self._argmax + np.arange(n_out) * self.window
        np.put_along_axis(gx, idx, g, axis=-1)
        return gx

    @property
    def argmax(self):
        return self._argmax


class OneMaxPool(Layer):
    """Global max over time; the gradient flows through a single position."""

    kind = "onemax"

    def forward(self, x):
        if x.shape[-1] < 1:
            raise ShapeMismatch("1-max pooling needs a non-empty input")
        self._argmax = x.argmax(axis=-1)
        self._shape = x.shape
        return np.take_along_axis(x, self._argmax[..., None], axis=-1)

    def backward(self, g):
        return one_max_pool_backward(self._argmax, g, self._shape[-1])

    @property
    def argmax(self):
        return self._argmax


def one_max_pool_forward(o: np.ndarray):
    """Per (batch, channel) maximum and the lowest index attaining it."""
    pool = OneMaxPool()
    values = pool.forward(np.asarray(o, dtype=np.float64))
    return values, pool.argmax


def one_max_pool_backward(argmax: np.ndarray, upstream: np.ndarray, length: int) -> np.ndarray:
    upstream = np.asarray(upstream, dtype=np.float64).reshape(argmax.shape + (1,))
    grad = np.zeros(argmax.shape + (length,))
    np.put_along_axis(grad, argmax[..., None], upstream, axis=-1)
    return grad


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, g):
        return np.where(self._mask, g, 0.0)


class Dense(Layer):
    """Fully connected layer on the flattened input; output shape ``(batch, out, 1)``."""

    kind = "dense"

    def __init__(self, weight: np.ndarray, bias: np.ndarray | None = None):
        super().__init__()
        weight = np.asarray(weight, dtype=np.float64)
        bias = np.zeros(weight.shape[0]) if bias is None else np.asarray(bias, dtype=np.float64)
        self.params = {"weight": weight, "bias": bias}
        self.zero_grads()

    @classmethod
    def init(cls, rng, n_in: int, n_out: int):
        return cls(rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in)))

    def config(self):
        out, n_in = self.params["weight"].shape
        return {"n_in": n_in, "n_out": out}

    def forward(self, x):
        self._shape = x.shape
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.params["weight"].shape[1]:
            raise ShapeMismatch(f"dense layer expects {self.params['weight'].shape[1]} inputs, got {flat.shape[1]}")
        self._flat = flat
        y = flat @ self.params["weight"].T + self.params["bias"]
        return y[:, :, None]

    def backward(self, g):
        g = g.reshape(g.shape[0], -1)
        self.grads["weight"] = g.T @ self._flat
        self.grads["bias"] = g.sum(axis=0)
        return (g @ self.params["weight"]).reshape(self._shape)


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class SoftmaxCrossEntropy:
    """Mean cross-entropy of softmax(logits) against integer targets."""

    kind = "softmax_ce"

    def forward(self, logits: np.ndarray, targets: np.ndarray) -> float:
        logits = logits.reshape(logits.shape[0], -1)
        targets = np.asarray(targets, dtype=np.int64)
        if targets.shape != (logits.shape[0],):
            raise ShapeMismatch(f"{targets.shape[0] if targets.ndim else 0} targets for {logits.shape[0]} rows")
        self._p = softmax(logits)
        self._y = targets
        logp = log_softmax(logits)
        return float(-logp[np.arange(targets.size), targets].mean())

    def backward(self) -> np.ndarray:
        g = self._p.copy()
        g[np.arange(self._y.size), self._y] -= 1.0
        return (g / self._y.size)[:, :, None]

    def config(self):
        return {}
