"""Independent, deliberately naive re-implementations used as test oracles."""

import math

import numpy as np


def correlate(x, w, stride=1):
    """Valid cross-correlation by explicit loops; x (B, C, N), w (K, C, L)."""
    b, c, n = x.shape
    k, _, taps = w.shape
    n_out = (n - taps) // stride + 1
    out = np.zeros((b, k, n_out))
    for i in range(b):
        for f in range(k):
            for j in range(n_out):
                s = j * stride
                out[i, f, j] = sum(w[f, ch, t] * x[i, ch, s + t] for ch in range(c) for t in range(taps))
    return out


def cosine_windows(x, w, full):
    """Cosine (full) or window-normalised dot product of every window, loops only."""
    b, _, n = x.shape
    k, taps = w.shape
    out = np.zeros((b, k, n - taps + 1))
    for i in range(b):
        for f in range(k):
            for j in range(n - taps + 1):
                seg = x[i, 0, j : j + taps]
                d = max(math.sqrt(sum(v * v for v in seg)), 1e-8)
                den = d * math.sqrt(sum(v * v for v in w[f])) if full else d
                out[i, f, j] = sum(a * v for a, v in zip(w[f], seg)) / den
    return out


def ece(conf, correct, m):
    """Bin by explicit interval membership ((i-1)/m, i/m]."""
    n = len(conf)
    total = 0.0
    for i in range(1, m + 1):
        lo, hi = (i - 1) / m, i / m
        members = [j for j in range(n) if lo < conf[j] <= hi or (i == 1 and conf[j] == 0.0)]
        if not members:
            continue
        acc = sum(correct[j] for j in members) / len(members)
        avg = sum(conf[j] for j in members) / len(members)
        total += len(members) / n * abs(acc - avg)
    return total


def linear_quantile(values, q):
    s = sorted(values)
    pos = (len(s) - 1) * q
    lo = math.floor(pos)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (s[hi] - s[lo]) * (pos - lo)


def nll(logits, truth, t):
    z = np.asarray(logits, dtype=np.float64) / t
    out = 0.0
    for row, y in zip(z, truth):
        mx = max(row)
        out += -(row[y] - mx - math.log(sum(math.exp(v - mx) for v in row)))
    return out / len(truth)
