"""Layer primitives: dense, strided 2D convolution, activations, flatten.

Each layer exposes `forward(x)` (pure) and `forward_cached(x)` which also
returns whatever the backward pass needs. `backward(cache, grad_out)` returns
`(param_grads, grad_in)` where `param_grads` mirrors the layer's `params`
dict. All arrays are float64.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Layer:
    """Base layer. Subclasses fill `params` with float64 arrays."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}

    def descriptor(self) -> dict:
        raise NotImplementedError

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        """Per-sample output shape given per-sample input shape."""
        raise NotImplementedError

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_cached(x)[0]

    def forward_cached(self, x: np.ndarray):
        raise NotImplementedError

    def backward(self, cache, grad_out: np.ndarray):
        raise NotImplementedError

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())


class Dense(Layer):
    """Affine map y = x W + b on the trailing axis."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        if rng is None:
            w = np.zeros((in_dim, out_dim))
        else:
            scale = np.sqrt(2.0 / (in_dim + out_dim))
            w = rng.normal(0.0, scale, size=(in_dim, out_dim))
        self.params = {"W": w.astype(np.float64), "b": np.zeros(out_dim)}

    def descriptor(self) -> dict:
        return {"type": "dense", "in": self.in_dim, "out": self.out_dim}

    def out_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.in_dim:
            raise ValueError(f"dense expects ({self.in_dim},), got {in_shape}")
        return (self.out_dim,)

    def forward_cached(self, x):
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"dense: input width {x.shape[-1]} != {self.in_dim}")
        return x @ self.params["W"] + self.params["b"], x

    def backward(self, cache, grad_out):
        x = cache
        x2 = x.reshape(-1, self.in_dim)
        g2 = grad_out.reshape(-1, self.out_dim)
        grads = {"W": x2.T @ g2, "b": g2.sum(axis=0)}
        return grads, grad_out @ self.params["W"].T


class Activation(Layer):
    """Elementwise nonlinearity; `fn` is one of tanh, gelu, relu."""

    FNS = ("tanh", "gelu", "relu")

    def __init__(self, fn: str):
        super().__init__()
        if fn not in self.FNS:
            raise ValueError(f"unknown activation {fn!r}; choose from {self.FNS}")
        self.fn = fn

    def descriptor(self) -> dict:
        return {"type": "activation", "fn": self.fn}

    def out_shape(self, in_shape):
        return in_shape

    def forward_cached(self, x):
        if self.fn == "tanh":
            y = np.tanh(x)
            return y, y
        if self.fn == "relu":
            y = np.maximum(x, 0.0)
            return y, x
        # gelu, exact form x * Phi(x)
        phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
        return x * phi, (x, phi)

    def backward(self, cache, grad_out):
        if self.fn == "tanh":
            y = cache
            return {}, grad_out * (1.0 - y * y)
        if self.fn == "relu":
            x = cache
            return {}, grad_out * (x > 0.0)
        x, phi = cache
        dens = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return {}, grad_out * (phi + x * dens)


class Flatten(Layer):
    """(B, H, W, C) -> (B, H*W*C)."""

    def descriptor(self) -> dict:
        return {"type": "flatten"}

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward_cached(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, grad_out):
        return {}, grad_out.reshape(cache)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int):
    b, h, w, c = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    s0, s1, s2, s3 = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(b, oh, ow, kh, kw, c),
        strides=(s0, stride * s1, stride * s2, s1, s2, s3),
        writeable=False,
    )
    return np.ascontiguousarray(windows).reshape(b, oh * ow, kh * kw * c), oh, ow


class Conv2d(Layer):
    """Strided valid convolution over (B, H, W, C) inputs, kernel stored
    as (kh, kw, in_ch, out_ch)."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int,
                 rng: np.random.Generator | None = None):
        super().__init__()
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.kernel = kernel
        self.stride = stride
        fan_in = kernel * kernel * in_ch
        fan_out = kernel * kernel * out_ch
        if rng is None:
            w = np.zeros((kernel, kernel, in_ch, out_ch))
        else:
            scale = np.sqrt(2.0 / (fan_in + fan_out))
            w = rng.normal(0.0, scale, size=(kernel, kernel, in_ch, out_ch))
        self.params = {"W": w.astype(np.float64), "b": np.zeros(out_ch)}

    def descriptor(self) -> dict:
        return {"type": "conv2d", "in_ch": self.in_ch, "out_ch": self.out_ch,
                "kernel": self.kernel, "stride": self.stride}

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[2] != self.in_ch:
            raise ValueError(f"conv2d expects (H, W, {self.in_ch}), got {in_shape}")
        h, w, _ = in_shape
        if (h - self.kernel) % self.stride or (w - self.kernel) % self.stride:
            raise ValueError(f"conv2d: {in_shape} not divisible by kernel {self.kernel} stride {self.stride}")
        oh = (h - self.kernel) // self.stride + 1
        ow = (w - self.kernel) // self.stride + 1
        return (oh, ow, self.out_ch)

    def forward_cached(self, x):
        if x.ndim != 4 or x.shape[3] != self.in_ch:
            raise ValueError(f"conv2d: input shape {x.shape} incompatible with {self.in_ch} channels")
        cols, oh, ow = _im2col(x, self.kernel, self.kernel, self.stride)
        wm = self.params["W"].reshape(-1, self.out_ch)
        y = cols @ wm + self.params["b"]
        return y.reshape(x.shape[0], oh, ow, self.out_ch), (x.shape, cols, oh, ow)

    def backward(self, cache, grad_out):
        in_shape, cols, oh, ow = cache
        b = in_shape[0]
        g2 = grad_out.reshape(b, oh * ow, self.out_ch)
        wm = self.params["W"].reshape(-1, self.out_ch)
        flat_cols = cols.reshape(-1, wm.shape[0])
        grads = {
            "W": (flat_cols.T @ g2.reshape(-1, self.out_ch)).reshape(self.params["W"].shape),
            "b": g2.reshape(-1, self.out_ch).sum(axis=0),
        }
        dcols = g2 @ wm.T  # (b, oh*ow, kh*kw*cin)
        dcols = dcols.reshape(b, oh, ow, self.kernel, self.kernel, self.in_ch)
        dx = np.zeros(in_shape)
        s = self.stride
        for i in range(self.kernel):
            for j in range(self.kernel):
                dx[:, i:i + oh * s:s, j:j + ow * s:s, :] += dcols[:, :, :, i, j, :]
        return grads, dx


class FourierFeatures(Layer):
    """Fixed sinusoidal featurization of the first `active` input dims.

    Output is [x, sin(x_a B), cos(x_a B)] where B is a frozen (active, freqs)
    Gaussian projection scaled by `scale` and reconstructed from `seed`, so a
    descriptor fully determines the layer. Sharp local structure becomes
    learnable by small dense stacks at realistic step budgets. No trainable
    parameters.
    """

    def __init__(self, in_dim: int, active: int, freqs: int, scale: float, seed: int):
        super().__init__()
        if not (0 < active <= in_dim):
            raise ValueError("active dims must be within the input width")
        self.in_dim = in_dim
        self.active = active
        self.freqs = freqs
        self.scale = scale
        self.seed = seed
        gen = np.random.Generator(np.random.PCG64(seed))
        self.proj = scale * gen.normal(0.0, 1.0, size=(active, freqs))

    def descriptor(self) -> dict:
        return {"type": "fourier", "in": self.in_dim, "active": self.active,
                "freqs": self.freqs, "scale": self.scale, "seed": self.seed}

    def out_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.in_dim:
            raise ValueError(f"fourier expects ({self.in_dim},), got {in_shape}")
        return (self.in_dim + 2 * self.freqs,)

    def forward_cached(self, x):
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"fourier: input width {x.shape[-1]} != {self.in_dim}")
        phase = x[..., :self.active] @ self.proj
        y = np.concatenate([x, np.sin(phase), np.cos(phase)], axis=-1)
        return y, phase

    def backward(self, cache, grad_out):
        phase = cache
        n = self.in_dim
        f = self.freqs
        dx = grad_out[..., :n].copy()
        dphase = grad_out[..., n:n + f] * np.cos(phase) - grad_out[..., n + f:] * np.sin(phase)
        dx[..., :self.active] += dphase @ self.proj.T
        return {}, dx


def layer_from_descriptor(desc: dict) -> Layer:
    kind = desc["type"]
    if kind == "dense":
        return Dense(desc["in"], desc["out"])
    if kind == "activation":
        return Activation(desc["fn"])
    if kind == "flatten":
        return Flatten()
    if kind == "conv2d":
        return Conv2d(desc["in_ch"], desc["out_ch"], desc["kernel"], desc["stride"])
    if kind == "fourier":
        return FourierFeatures(desc["in"], desc["active"], desc["freqs"], desc["scale"], desc["seed"])
    raise ValueError(f"unknown layer type {kind!r}")
