from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidEpsilon
from .layers import MaxPool1d, OneMaxPool


@dataclass
class GradReport:
    epsilon: float
    max_rel_error: dict = field(default_factory=dict)
    checked: dict = field(default_factory=dict)
    skipped: dict = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def rel_error(analytic, numeric) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def _pool_argmaxes(model) -> list:
    return [l.argmax.copy() for l in model.layers if isinstance(l, (MaxPool1d, OneMaxPool))]


def _same(a: list, b: list) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(model, x, y, epsilon: float = 1e-5, max_entries: int | None = None,
               rng: np.random.Generator | None = None) -> GradReport:
    """Compare analytic parameter gradients with central differences.

    Entries whose ``+eps`` or ``-eps`` perturbation changes any pooling
    argmax are skipped: the loss is not differentiable across such a flip.
    ``max_entries`` caps the number of entries checked per parameter
    (sampled with ``rng``).
    """
    if not epsilon > 0:
        raise InvalidEpsilon(f"epsilon must be positive, got {epsilon}")
    model.loss_and_grads(x, y)
    base_argmax = _pool_argmaxes(model)
    analytic = {k: g.copy() for k, g in model.named_grads().items()}
    report = GradReport(epsilon)
    for name, p in model.named_params().items():
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            rng = rng or np.random.default_rng(0)
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        worst, checked, skipped = 0.0, 0, 0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = model.loss(x, y)
            flips = not _same(_pool_argmaxes(model), base_argmax)
            flat[i] = orig - epsilon
            f_minus = model.loss(x, y)
            flips = flips or not _same(_pool_argmaxes(model), base_argmax)
            flat[i] = orig
            if flips:
                skipped += 1
                continue
            numeric = (f_plus - f_minus) / (2 * epsilon)
            worst = max(worst, float(rel_error(analytic[name].reshape(-1)[i], numeric)))
            checked += 1
        report.max_rel_error[name] = worst
        report.checked[name] = checked
        report.skipped[name] = skipped
    # leave caches consistent with the unperturbed parameters
    model.loss_and_grads(x, y)
    return report


def numeric_input_grad(f, x: np.ndarray, positions, epsilon: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at selected flat positions of ``x``."""
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = np.empty(len(positions))
    for j, i in enumerate(positions):
        orig = flat[i]
        flat[i] = orig + epsilon
        fp = f(x)
        flat[i] = orig - epsilon
        fm = f(x)
        flat[i] = orig
        out[j] = (fp - fm) / (2 * epsilon)
    return out


def layer_grad_check(layer, x: np.ndarray, rng: np.random.Generator, epsilon: float = 1e-5) -> tuple[float, int, int]:
    """Check one layer in isolation against ``f(x) = sum(g * layer(x))`` for a random ``g``.

    Covers the input gradient and every parameter gradient. Returns
    ``(max relative error, entries checked, entries skipped)``; entries
    whose perturbation moves a pooling argmax are skipped.
    """
    if not epsilon > 0:
        raise InvalidEpsilon(f"epsilon must be positive, got {epsilon}")
    x = np.array(x, dtype=np.float64)
    out = layer.forward(x)
    g = rng.normal(size=out.shape)
    gx = layer.backward(g)
    analytic = {"input": gx.copy(), **{k: v.copy() for k, v in layer.grads.items()}}
    pooled = isinstance(layer, (MaxPool1d, OneMaxPool))
    base = layer.argmax.copy() if pooled else None
    targets = {"input": x, **layer.params}
    worst, checked, skipped = 0.0, 0, 0
    for name, arr in targets.items():
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = float(np.sum(g * layer.forward(x)))
            flip = pooled and not np.array_equal(layer.argmax, base)
            flat[i] = orig - epsilon
            fm = float(np.sum(g * layer.forward(x)))
            flip = flip or (pooled and not np.array_equal(layer.argmax, base))
            flat[i] = orig
            if flip:
                skipped += 1
                continue
            num = (fp - fm) / (2 * epsilon)
            worst = max(worst, float(rel_error(analytic[name].reshape(-1)[i], num)))
            checked += 1
    layer.forward(x)
    return worst, checked, skipped


def softmax_ce_check(logits: np.ndarray, targets: np.ndarray, epsilon: float = 1e-5) -> tuple[float, int]:
    from .layers import SoftmaxCrossEntropy

    loss = SoftmaxCrossEntropy()
    z = np.array(logits, dtype=np.float64)
    loss.forward(z, targets)
    analytic = loss.backward()
    worst = 0.0
    flat = z.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        fp = loss.forward(z, targets)
        flat[i] = orig - epsilon
        fm = loss.forward(z, targets)
        flat[i] = orig
        worst = max(worst, float(rel_error(analytic.reshape(-1)[i], (fp - fm) / (2 * epsilon))))
    return worst, flat.size


def standard_cases(rng: np.random.Generator, instances: int = 20) -> list[tuple[str, object, np.ndarray]]:
    """Random small ``(name, layer, input)`` instances for every differentiable layer."""
    from .layers import Conv1d, CosineConv1d, Dense

    cases = []
    for _ in range(instances):
        b = int(rng.integers(1, 4))
        n = int(rng.integers(12, 25))
        taps = int(rng.integers(2, 7))
        channels = int(rng.integers(1, 3))
        conv = Conv1d.init(rng, int(rng.integers(1, 4)), channels, taps, int(rng.integers(1, 4)))
        cases.append(("conv", conv, rng.normal(size=(b, channels, n))))
        for mode in ("cosine_full", "cosine_normalized"):
            layer = CosineConv1d(rng.normal(size=(int(rng.integers(1, 4)), taps)), mode)
            if mode == "cosine_normalized":
                layer.params["weight"] /= np.linalg.norm(layer.weight, axis=1, keepdims=True)
            cases.append((mode, layer, rng.normal(size=(b, 1, n))))
        cases.append(("one_max_pool", OneMaxPool(), rng.normal(size=(b, 2, n))))
        cases.append(("max_pool", MaxPool1d(int(rng.integers(2, 5))), rng.normal(size=(b, 2, n))))
        cases.append(("dense", Dense.init(rng, 2 * n, int(rng.integers(2, 6))), rng.normal(size=(b, 2, n))))
    return cases
