from __future__ import annotations

import numpy as np

from ..errors import NonFinite


def project_unit_rows(w: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(w, axis=-1, keepdims=True)
    return w / norms


def sgd_step(params: dict, grads: dict, lr: float, momentum: float = 0.0,
             velocity: dict | None = None, unit_norm: set = frozenset()):
    """One SGD (heavy-ball) update, returning ``(new_params, new_velocity)``.

    ``v <- momentum * v + g``; ``p <- p - lr * v``. Parameters named in
    ``unit_norm`` are projected back to unit row norm afterwards.
    """
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    velocity = {} if velocity is None else velocity
    new_params, new_velocity = {}, {}
    for name, p in params.items():
        g = grads[name]
        v = g if momentum == 0 or name not in velocity else momentum * velocity[name] + g
        updated = p - lr * v
        if name in unit_norm:
            updated = project_unit_rows(updated)
        if not np.all(np.isfinite(updated)):
            raise NonFinite(f"update of {name} produced non-finite values")
        new_params[name] = updated
        new_velocity[name] = v
    return new_params, new_velocity


class SGD:
    """Stateful wrapper that applies :func:`sgd_step` to a model in place."""

    def __init__(self, lr: float, momentum: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict = {}

    def step(self, model):
        params = model.named_params()
        new, self.velocity = sgd_step(
            params, model.named_grads(), self.lr, self.momentum, self.velocity, model.unit_norm_params()
        )
        for name, value in new.items():
            params[name][...] = value
