from __future__ import annotations

import copy

import numpy as np

from ..errors import ShapeMismatch
from .layers import CosineConv1d, Layer, SoftmaxCrossEntropy


class ModelGraph:
    """An ordered stack of layers ending in logits, plus a softmax-CE loss.

    Inputs may be given as ``(batch, length)``; a channel axis is added.
    """

    def __init__(self, layers: list, seed: int = 0):
        self.layers: list[Layer] = list(layers)
        self.loss_layer = SoftmaxCrossEntropy()
        self.seed = seed

    def __repr__(self):
        inner = ", ".join(repr(l) for l in self.layers)
        return f"ModelGraph([{inner}])"

    @staticmethod
    def _as_input(x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, None, :]
        elif x.ndim == 2:
            x = x[:, None, :]
        if x.ndim != 3:
            raise ShapeMismatch(f"cannot interpret input of shape {x.shape}")
        return x

    def forward(self, x) -> np.ndarray:
        """Logits of shape ``(batch, classes)``."""
        h = self._as_input(x)
        for layer in self.layers:
            h = layer.forward(h)
        return h.reshape(h.shape[0], -1)

    def backward(self, grad_logits: np.ndarray) -> np.ndarray:
        """Back-propagate ``d loss / d logits``; returns ``d loss / d input``."""
        g = np.asarray(grad_logits, dtype=np.float64)
        g = g.reshape(g.shape[0], -1, 1)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def loss(self, x, y) -> float:
        return self.loss_layer.forward(self.forward(x), y)

    def loss_and_grads(self, x, y) -> float:
        value = self.loss(x, y)
        self.backward(self.loss_layer.backward())
        return value

    def named_params(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            for key, value in layer.params.items():
                out[f"{i}.{layer.kind}.{key}"] = value
        return out

    def named_grads(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            for key in layer.params:
                out[f"{i}.{layer.kind}.{key}"] = layer.grads[key]
        return out

    def unit_norm_params(self) -> set:
        """Names of weights that must stay at unit row norm."""
        return {
            f"{i}.{layer.kind}.weight"
            for i, layer in enumerate(self.layers)
            if isinstance(layer, CosineConv1d) and layer.unit_norm
        }

    def param_count(self) -> int:
        return int(sum(v.size for v in self.named_params().values()))

    def param_shapes(self) -> dict:
        return {k: v.shape for k, v in self.named_params().items()}

    def zero_grads(self):
        for layer in self.layers:
            layer.zero_grads()

    def state(self) -> dict:
        return {k: v.copy() for k, v in self.named_params().items()}

    def load_state(self, state: dict):
        params = self.named_params()
        if set(state) != set(params):
            raise ShapeMismatch("state keys do not match model parameters")
        for k, v in state.items():
            if params[k].shape != np.shape(v):
                raise ShapeMismatch(f"{k}: shape {np.shape(v)} != {params[k].shape}")
            params[k][...] = v

    def copy(self) -> "ModelGraph":
        clone = ModelGraph([copy.deepcopy(l) for l in self.layers], self.seed)
        for layer in clone.layers:
            layer.__dict__ = {k: v for k, v in layer.__dict__.items() if not k.startswith("_")}
        return clone
