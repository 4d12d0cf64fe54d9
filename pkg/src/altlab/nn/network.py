"""Sequential network container with recorded-forward reverse-mode gradients.

Inference (`forward`) is pure and safe to share across threads. Training uses
`forward_recorded` to obtain a tape, then `backward(tape, grad)` to get
per-layer parameter gradients plus the input gradient. Calling `backward`
without a tape from a recorded forward is an error.
"""

from __future__ import annotations

import numpy as np

from .layers import Layer, Dense, Activation, layer_from_descriptor


class Tape:
    """Caches of one recorded forward pass, consumed by `Network.backward`."""

    __slots__ = ("caches", "output", "batched")

    def __init__(self, caches, output, batched):
        self.caches = caches
        self.output = output
        self.batched = batched


class Network:
    def __init__(self, layers: list[Layer], name: str = "net"):
        self.layers = layers
        self.name = name

    @property
    def param_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers)

    def parameters(self):
        """Flat list of (label, array) pairs; arrays are the live parameters."""
        out = []
        for i, layer in enumerate(self.layers):
            for key, arr in layer.params.items():
                out.append((f"{self.name}/layer{i}/{key}", arr))
        return out

    def descriptors(self) -> list[dict]:
        return [layer.descriptor() for layer in self.layers]

    def _prepare(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        first = self.layers[0]
        batched = True
        if isinstance(first, Dense) and x.ndim == 1:
            x = x[None, :]
            batched = False
        return x, batched

    def forward(self, x: np.ndarray) -> np.ndarray:
        x, batched = self._prepare(x)
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x)
            except ValueError as exc:
                raise ValueError(f"{self.name}: layer {i} ({layer.descriptor()['type']}): {exc}") from exc
        return x if batched else x[0]

    def forward_recorded(self, x: np.ndarray):
        x, batched = self._prepare(x)
        caches = []
        for i, layer in enumerate(self.layers):
            try:
                x, cache = layer.forward_cached(x)
            except ValueError as exc:
                raise ValueError(f"{self.name}: layer {i} ({layer.descriptor()['type']}): {exc}") from exc
            caches.append(cache)
        y = x if batched else x[0]
        return y, Tape(caches, y, batched)

    def backward(self, tape: Tape | None, grad_out: np.ndarray):
        """Returns (grads, grad_in): grads is a per-layer list of dicts keyed
        like each layer's params."""
        if tape is None or not isinstance(tape, Tape):
            raise ValueError(f"{self.name}: backward called without a recorded forward pass")
        if len(tape.caches) != len(self.layers):
            raise ValueError(f"{self.name}: tape does not match this network")
        g = np.asarray(grad_out, dtype=np.float64)
        if not tape.batched:
            g = g[None, :]
        grads: list[dict] = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            pgrads, g = self.layers[i].backward(tape.caches[i], g)
            grads[i] = pgrads
        return grads, (g if tape.batched else g[0])

    def grad_arrays(self, grads: list[dict]):
        """Flatten backward() output to align with parameters()."""
        out = []
        for i, layer in enumerate(self.layers):
            for key in layer.params:
                out.append(grads[i][key])
        return out

    def zero_like_grads(self):
        return [{k: np.zeros_like(v) for k, v in layer.params.items()} for layer in self.layers]

    @staticmethod
    def accumulate(total: list[dict], extra: list[dict]):
        for tl, el in zip(total, extra):
            for k in tl:
                tl[k] += el[k]
        return total

    def set_params(self, arrays: list[np.ndarray]):
        flat = self.parameters()
        if len(arrays) != len(flat):
            raise ValueError("parameter list length mismatch")
        for (_, dst), src in zip(flat, arrays):
            if dst.shape != src.shape:
                raise ValueError(f"parameter shape mismatch {dst.shape} vs {src.shape}")
            dst[...] = src


def mlp(widths: list[int], activation: str = "tanh",
        rng: np.random.Generator | None = None, name: str = "mlp") -> Network:
    """Fully-connected stack with `activation` between hidden layers."""
    if len(widths) < 2:
        raise ValueError("mlp needs at least input and output widths")
    layers: list[Layer] = []
    for i in range(len(widths) - 1):
        layers.append(Dense(widths[i], widths[i + 1], rng=rng))
        if i < len(widths) - 2:
            layers.append(Activation(activation))
    return Network(layers, name=name)


def network_from_descriptors(descs: list[dict], name: str = "net") -> Network:
    return Network([layer_from_descriptor(d) for d in descs], name=name)


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error over all elements; returns (loss, dloss/dpred)."""
    diff = pred - target
    return float(np.mean(diff * diff)), (2.0 / diff.size) * diff
