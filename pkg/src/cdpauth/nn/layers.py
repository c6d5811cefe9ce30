"""Layers with explicit forward/backward passes.

Activations inside the network are NHWC (batch, height, width, channels); the
model converts from the canonical channels-first layout once at its input.
Convolution weights are stored channels-first as ``(out, in, k, k)``.

Every layer caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into ``grads`` during ``backward``.
"""

from __future__ import annotations

import numpy as np

SIGMOID_CLAMP = 1e-7
IM2COL_MAX_COLS = 32


class ShapeError(ValueError):
    pass


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None
        # the first layer of a model never needs dL/dx
        self.needs_input_grad = True

    def spec(self) -> dict:
        return {"type": self.kind}

    def out_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return shape

    def init(self, rng: np.random.Generator, dtype) -> None:
        pass

    def zero_grad(self) -> None:
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def clear(self) -> None:
        self._cache = None

    def _cached(self):
        if self._cache is None:
            raise RuntimeError(f"{self.kind}: backward called before forward")
        return self._cache

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.spec().items() if k != "type")
        return f"{type(self).__name__}({args})"


def _he(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1, padding: int = 0):
        super().__init__()
        if stride < 1 or padding < 0 or kernel < 1:
            raise ShapeError(f"conv2d: invalid kernel/stride/padding {kernel}/{stride}/{padding}")
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.padding = kernel, stride, padding
        self.params = {"w": np.zeros((out_ch, in_ch, kernel, kernel)), "b": np.zeros(out_ch)}
        self.zero_grad()

    def spec(self):
        return {"type": self.kind, "in_ch": self.in_ch, "out_ch": self.out_ch,
                "kernel": self.kernel, "stride": self.stride, "padding": self.padding}

    def out_shape(self, shape):
        h, w, c = shape
        if c != self.in_ch:
            raise ShapeError(f"{self!r}: expects {self.in_ch} input channels, got {c}")
        ho = (h + 2 * self.padding - self.kernel) // self.stride + 1
        wo = (w + 2 * self.padding - self.kernel) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"{self!r}: input {h}x{w} too small for the kernel")
        return (ho, wo, self.out_ch)

    def init(self, rng, dtype):
        fan_in = self.in_ch * self.kernel ** 2
        self.params["w"] = _he(rng, self.params["w"].shape, fan_in, dtype)
        self.params["b"] = np.zeros(self.out_ch, dtype=dtype)
        self.zero_grad()

    def forward(self, x):
        n, h, w, c = x.shape
        if c != self.in_ch:
            raise ShapeError(f"{self!r}: got input with {c} channels")
        k, s, p = self.kernel, self.stride, self.padding
        ho, wo, _ = self.out_shape((h, w, c))
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        wt = np.ascontiguousarray(self.params["w"].transpose(2, 3, 1, 0))
        if c * k * k <= IM2COL_MAX_COLS:
            # narrow inputs: gather all taps into columns and do a single matmul
            cols = np.empty((n, ho, wo, k, k, c), dtype=xp.dtype)
            for i in range(k):
                for j in range(k):
                    cols[:, :, :, i, j, :] = xp[:, i:i + s * ho:s, j:j + s * wo:s, :]
            cols = cols.reshape(-1, k * k * c)
            out = cols @ wt.reshape(-1, self.out_ch) + self.params["b"]
            self._cache = ("cols", cols, xp.shape)
            return out.reshape(n, ho, wo, self.out_ch)
        out = np.empty((n, ho, wo, self.out_ch), dtype=np.result_type(x, wt))
        out[...] = self.params["b"]
        # one (C -> O) matmul per kernel tap, accumulated over shifted views
        for i in range(k):
            for j in range(k):
                out += xp[:, i:i + s * ho:s, j:j + s * wo:s, :] @ wt[i, j]
        self._cache = ("shift", xp, xp.shape)
        return out

    def backward(self, dout):
        mode, saved, xp_shape = self._cached()
        n, ho, wo, _ = dout.shape
        k, s, p = self.kernel, self.stride, self.padding
        wt = np.ascontiguousarray(self.params["w"].transpose(2, 3, 1, 0))
        gwt = self.grads["w"].transpose(2, 3, 1, 0)
        d2 = dout.reshape(-1, self.out_ch)
        self.grads["b"] += d2.sum(axis=0)
        if mode == "cols":
            gwt += (saved.T @ d2).reshape(k, k, self.in_ch, self.out_ch)
        else:
            for i in range(k):
                for j in range(k):
                    xs = saved[:, i:i + s * ho:s, j:j + s * wo:s, :].reshape(-1, self.in_ch)
                    gwt[i, j] += xs.T @ d2
        if not self.needs_input_grad:
            return None
        dxp = np.zeros(xp_shape, dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + s * ho:s, j:j + s * wo:s, :] += dout @ wt[i, j].T
        if p:
            return dxp[:, p:-p, p:-p, :]
        return dxp


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, dout):
        return dout * self._cached()


class MaxPool2d(Layer):
    """Non-overlapping max pooling; ties route the gradient to the first maximum in raster order."""

    kind = "maxpool2d"

    def __init__(self, kernel: int):
        super().__init__()
        self.kernel = kernel

    def spec(self):
        return {"type": self.kind, "kernel": self.kernel}

    def out_shape(self, shape):
        h, w, c = shape
        k = self.kernel
        if h % k or w % k:
            raise ShapeError(f"{self!r}: input {h}x{w} not divisible by the pool size")
        return (h // k, w // k, c)

    def forward(self, x):
        n, h, w, c = x.shape
        self.out_shape((h, w, c))
        k = self.kernel
        taps = [x[:, a::k, b::k, :] for a in range(k) for b in range(k)]
        out = taps[0]
        for t in taps[1:]:
            out = np.maximum(out, t)
        taken = np.zeros(out.shape, dtype=bool)
        hits = []
        for t in taps:
            hit = (t == out) & ~taken
            taken |= hit
            hits.append(hit)
        self._cache = (hits, x.shape)
        return out

    def backward(self, dout):
        hits, shape = self._cached()
        k = self.kernel
        dx = np.empty(shape, dtype=dout.dtype)
        for (a, b), hit in zip(((a, b) for a in range(k) for b in range(k)), hits):
            dx[:, a::k, b::k, :] = dout * hit
        return dx


class ResidualBlock(Layer):
    """``relu(conv(relu(conv(x))) + x)`` with two 3x3, stride-1, same-padded convolutions."""

    kind = "residual"

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.conv1 = Conv2d(channels, channels, 3, 1, 1)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(channels, channels, 3, 1, 1)
        self.relu2 = ReLU()
        self._sync()

    def _sync(self):
        self.params = {"conv1.w": self.conv1.params["w"], "conv1.b": self.conv1.params["b"],
                       "conv2.w": self.conv2.params["w"], "conv2.b": self.conv2.params["b"]}
        self.grads = {"conv1.w": self.conv1.grads["w"], "conv1.b": self.conv1.grads["b"],
                      "conv2.w": self.conv2.grads["w"], "conv2.b": self.conv2.grads["b"]}

    def spec(self):
        return {"type": self.kind, "channels": self.channels}

    def out_shape(self, shape):
        return self.conv2.out_shape(self.conv1.out_shape(shape))

    def init(self, rng, dtype):
        self.conv1.init(rng, dtype)
        self.conv2.init(rng, dtype)
        # the block starts as identity, which keeps early training stable without normalization
        self.conv2.params["w"][...] = 0.0
        self._sync()

    def zero_grad(self):
        self.conv1.zero_grad()
        self.conv2.zero_grad()
        self._sync()

    def set_param(self, name, value):
        sub, key = name.split(".")
        getattr(self, sub).params[key] = value
        self._sync()

    def forward(self, x):
        y = self.relu1.forward(self.conv1.forward(x))
        y = self.conv2.forward(y) + x
        self._cache = True
        return self.relu2.forward(y)

    def backward(self, dout):
        self._cached()
        dy = self.relu2.backward(dout)
        dx = self.conv1.backward(self.relu1.backward(self.conv2.backward(dy)))
        return dx + dy

    def clear(self):
        self._cache = None
        for sub in (self.conv1, self.relu1, self.conv2, self.relu2):
            sub.clear()


class GlobalAvgPool(Layer):
    kind = "gap"

    def out_shape(self, shape):
        return (shape[-1],)

    def forward(self, x):
        self._cache = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, dout):
        n, h, w, c = self._cached()
        return np.broadcast_to(dout[:, None, None, :] / (h * w), (n, h, w, c)).copy()


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in: int, n_out: int):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.params = {"w": np.zeros((n_in, n_out)), "b": np.zeros(n_out)}
        self.zero_grad()

    def spec(self):
        return {"type": self.kind, "n_in": self.n_in, "n_out": self.n_out}

    def out_shape(self, shape):
        if len(shape) != 1 or shape[0] != self.n_in:
            raise ShapeError(f"{self!r}: expects a flat input of size {self.n_in}, got {shape}")
        return (self.n_out,)

    def init(self, rng, dtype):
        self.params["w"] = _he(rng, (self.n_in, self.n_out), self.n_in, dtype)
        self.params["b"] = np.zeros(self.n_out, dtype=dtype)
        self.zero_grad()

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"{self!r}: got input of shape {x.shape}")
        self._cache = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dout):
        x = self._cached()
        self.grads["w"] += x.T @ dout
        self.grads["b"] += dout.sum(axis=0)
        return dout @ self.params["w"].T


class Sigmoid(Layer):
    """Logistic output clamped to ``[1e-7, 1 - 1e-7]``.

    The backward pass uses ``p (1 - p)`` of the clamped value, so a saturated
    unit still passes a (tiny) gradient instead of freezing training.
    """

    kind = "sigmoid"

    def forward(self, x):
        p = np.empty_like(x)
        pos = x >= 0
        p[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        p[~pos] = ex / (1.0 + ex)
        p = np.clip(p, SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP)
        self._cache = p
        return p

    def backward(self, dout):
        p = self._cached()
        return dout * p * (1.0 - p)


class Head(Layer):
    """Marker between backbone and head; identity on the data."""

    kind = "head"

    def forward(self, x):
        self._cache = True
        return x

    def backward(self, dout):
        self._cached()
        return dout


LAYER_TYPES = {cls.kind: cls for cls in (Conv2d, ReLU, MaxPool2d, ResidualBlock,
                                         GlobalAvgPool, Dense, Sigmoid, Head)}


def layer_from_spec(spec: dict) -> Layer:
    spec = dict(spec)
    kind = spec.pop("type")
    try:
        cls = LAYER_TYPES[kind]
    except KeyError:
        raise ShapeError(f"unknown layer type {kind!r}") from None
    return cls(**spec)
