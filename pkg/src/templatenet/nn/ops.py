"""Batched 1-D valid cross-correlation and its two adjoints.

Shapes follow ``(batch, channels, length)`` for signals and
``(filters, channels, taps)`` for weights. Long filters go through an
FFT; short ones use an explicit sliding window, which is faster there.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import irfft, next_fast_len, rfft

FFT_MIN_TAPS = 17


def out_length(n: int, taps: int, stride: int) -> int:
    return (n - taps) // stride + 1


def windows(x: np.ndarray, taps: int, stride: int = 1) -> np.ndarray:
    """Read-only view of shape ``(..., n_out, taps)``."""
    return sliding_window_view(x, taps, axis=-1)[..., ::stride, :]


def _dilate(u: np.ndarray, stride: int) -> np.ndarray:
    if stride == 1:
        return u
    n_out = u.shape[-1]
    out = np.zeros(u.shape[:-1] + ((n_out - 1) * stride + 1,))
    out[..., ::stride] = u
    return out


def correlate(x: np.ndarray, w: np.ndarray, stride: int = 1) -> np.ndarray:
    """``y[b, k, i] = sum_c sum_l w[k, c, l] * x[b, c, i*stride + l]``."""
    _, _, n = x.shape
    taps = w.shape[-1]
    if taps < FFT_MIN_TAPS:
        y = np.tensordot(windows(x, taps, stride), w, axes=([1, 3], [1, 2]))
        return np.ascontiguousarray(y.transpose(0, 2, 1))
    nfft = next_fast_len(n + taps - 1, real=True)
    spec = np.einsum("bcf,kcf->bkf", rfft(x, nfft), rfft(w[..., ::-1], nfft))
    y = irfft(spec, nfft)[..., taps - 1 : n]
    return np.ascontiguousarray(y[..., ::stride])


def weight_grad(x: np.ndarray, u: np.ndarray, taps: int, stride: int = 1) -> np.ndarray:
    """Adjoint of :func:`correlate` with respect to ``w``: shape ``(K, C, taps)``."""
    _, _, n = x.shape
    if taps < FFT_MIN_TAPS:
        return np.tensordot(u, windows(x, taps, stride), axes=([0, 2], [0, 2]))
    ud = _dilate(u, stride)
    span = ud.shape[-1]
    nfft = next_fast_len(n + span - 1, real=True)
    spec = np.einsum("bcf,bkf->kcf", rfft(x, nfft), rfft(ud[..., ::-1], nfft))
    return irfft(spec, nfft)[..., span - 1 : span - 1 + taps]


def input_grad(u: np.ndarray, w: np.ndarray, n: int, stride: int = 1) -> np.ndarray:
    """Adjoint of :func:`correlate` with respect to ``x``: shape ``(B, C, n)``.

    Samples past the last window (stride truncation) get zero gradient.
    """
    batch = u.shape[0]
    _, channels, taps = w.shape
    ud = _dilate(u, stride)
    span = ud.shape[-1]
    covered = span + taps - 1
    gx = np.zeros((batch, channels, n))
    if taps < FFT_MIN_TAPS:
        for l in range(taps):
            gx[:, :, l : l + span : stride] += np.tensordot(u, w[:, :, l], axes=([1], [0])).transpose(0, 2, 1)
        return gx
    nfft = next_fast_len(covered, real=True)
    spec = np.einsum("bkf,kcf->bcf", rfft(ud, nfft), rfft(w, nfft))
    gx[:, :, :covered] = irfft(spec, nfft)[..., :covered]
    return gx


def window_sum(c: np.ndarray, taps: int) -> np.ndarray:
    """``s[..., t] = sum of c[..., j]`` over windows ``j <= t < j + taps``."""
    n_out = c.shape[-1]
    padded = np.zeros(c.shape[:-1] + (n_out + 2 * (taps - 1),))
    padded[..., taps - 1 : taps - 1 + n_out] = c
    csum = np.concatenate([np.zeros(c.shape[:-1] + (1,)), np.cumsum(padded, axis=-1)], axis=-1)
    return csum[..., taps:] - csum[..., :-taps]
