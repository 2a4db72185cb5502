"""How much does dropping the radial gradient term matter for unit-norm filters?

The normalized cosine layer back-propagates ``u * seg / |seg|`` and relies
on projection after each SGD step. The full cosine gradient additionally
subtracts the component along ``w``. This script measures, on synthetic
epochs, (a) the relative size of that radial component and (b) the
distance between filters after one projected SGD step with either
gradient, for a range of learning rates. The distance should shrink
like ``lr**2``.
"""

import argparse

import numpy as np

from templatenet.nn import CosineConv1d, one_max_pool_backward, one_max_pool_forward, project_unit_rows
from templatenet.pipeline import ExperimentConfig, load_dataset


def run(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--batch", type=int, default=32)
    args = parser.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    data = load_dataset(ExperimentConfig(), args.seed)
    x = data.values[rng.choice(len(data), size=args.batch, replace=False)][:, None, :]
    w = CosineConv1d.init(rng, 8, 150).weight
    grads = {}
    for mode in ("cosine_normalized", "cosine_full"):
        layer = CosineConv1d(w.copy(), mode)
        o = layer.forward(x)
        pooled, arg = one_max_pool_forward(o)
        u = rng.normal(size=pooled.shape) if mode == "cosine_normalized" else u
        layer.backward(one_max_pool_backward(arg, u, o.shape[-1]))
        grads[mode] = layer.grads["weight"]
    gn, gf = grads["cosine_normalized"], grads["cosine_full"]
    radial = np.linalg.norm(gn - gf, axis=1) / np.linalg.norm(gn, axis=1)
    print(f"radial share of the normalized gradient per filter: mean {radial.mean():.3f}, max {radial.max():.3f}")
    print(f"{'lr':>8} {'|w_norm - w_full|':>20} {'ratio to lr^2':>14}")
    for lr in (1.0, 0.3, 0.1, 0.03, 0.01, 0.003):
        a = project_unit_rows(w - lr * gn)
        b = project_unit_rows(w - lr * gf)
        d = float(np.max(np.linalg.norm(a - b, axis=1)))
        print(f"{lr:8.3f} {d:20.3e} {d / lr**2:14.3e}")


if __name__ == "__main__":
    run()
