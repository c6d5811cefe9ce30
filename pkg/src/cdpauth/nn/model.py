"""Sequential model built from a list of layer specs, with a backbone/head split."""

from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from cdpauth.nn.layers import Dense, Head, Layer, ShapeError, Sigmoid, layer_from_spec

ModelSpec = list  # list of layer spec dicts, e.g. {"type": "conv2d", "in_ch": 2, ...}


def default_spec(in_ch: int = 2) -> ModelSpec:
    """Reduced residual CNN with a two-layer dense head.

    conv(2->8) relu pool res(8) conv(8->16) relu pool res(16) gap | dense(16->16) relu dense(16->1) sigmoid
    """
    return [
        {"type": "conv2d", "in_ch": in_ch, "out_ch": 8, "kernel": 3, "stride": 1, "padding": 1},
        {"type": "relu"},
        {"type": "maxpool2d", "kernel": 2},
        {"type": "residual", "channels": 8},
        {"type": "conv2d", "in_ch": 8, "out_ch": 16, "kernel": 3, "stride": 1, "padding": 1},
        {"type": "relu"},
        {"type": "maxpool2d", "kernel": 2},
        {"type": "residual", "channels": 16},
        {"type": "gap"},
        {"type": "head"},
        {"type": "dense", "n_in": 16, "n_out": 16},
        {"type": "relu"},
        {"type": "dense", "n_in": 16, "n_out": 1},
        {"type": "sigmoid"},
    ]


def check_spec(spec: Sequence[dict], input_shape: tuple[int, int, int]) -> list[tuple[int, ...]]:
    """Static shape propagation; returns the shape after every layer or raises ``ShapeError``."""
    layers = [layer_from_spec(s) for s in spec]
    heads = [i for i, layer in enumerate(layers) if isinstance(layer, Head)]
    if len(heads) != 1:
        raise ShapeError(f"model needs exactly one head marker, found {len(heads)}")
    if not layers or not isinstance(layers[-1], Sigmoid):
        raise ShapeError("model must end with a sigmoid")
    shapes = []
    c, h, w = input_shape
    shape = (h, w, c)
    for i, layer in enumerate(layers):
        try:
            shape = layer.out_shape(shape)
        except ShapeError as exc:
            raise ShapeError(f"layer {i}: {exc}") from None
        shapes.append(shape)
    if shapes[heads[0]] is None or len(shapes[heads[0]]) != 1:
        raise ShapeError(f"backbone output must be a flat vector, got {shapes[heads[0]]}")
    if shapes[-1] != (1,):
        raise ShapeError(f"model must output a single value, got {shapes[-1]}")
    return shapes


class Model:
    """Sequential network.

    Parameters are initialised from ``seed`` (He normal weights, zero biases);
    the last dense layer starts at zero so an untrained model outputs exactly 0.5.
    """

    def __init__(self, spec: Sequence[dict] | None = None,
                 input_shape: tuple[int, int, int] = (2, 64, 64),
                 seed: int = 0, dtype=np.float64):
        self.spec = [dict(s) for s in (spec if spec is not None else default_spec(input_shape[0]))]
        self.input_shape = tuple(input_shape)
        self.shapes = check_spec(self.spec, self.input_shape)
        self.dtype = np.dtype(dtype)
        self.layers: list[Layer] = [layer_from_spec(s) for s in self.spec]
        self.head_index = next(i for i, l in enumerate(self.layers) if isinstance(l, Head))
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.init(rng, self.dtype)
        last_dense = [l for l in self.layers if isinstance(l, Dense)][-1:]
        for layer in last_dense:
            layer.params["w"][...] = 0.0
        self.layers[0].needs_input_grad = False
        self._recorded = False

    @property
    def feature_dim(self) -> int:
        return self.shapes[self.head_index][0]

    def named_params(self) -> Iterator[tuple[str, np.ndarray]]:
        for i, layer in enumerate(self.layers):
            for name, value in layer.params.items():
                yield f"{i}.{name}", value

    def named_grads(self) -> Iterator[tuple[str, np.ndarray]]:
        for i, layer in enumerate(self.layers):
            for name, value in layer.grads.items():
                yield f"{i}.{name}", value

    def params(self) -> list[np.ndarray]:
        return [p for _, p in self.named_params()]

    def grads(self) -> list[np.ndarray]:
        return [g for _, g in self.named_grads()]

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def load_params(self, values: dict[str, np.ndarray]) -> None:
        """Copy values into the existing parameter arrays (cast to the model dtype)."""
        own = dict(self.named_params())
        if own.keys() != values.keys():
            raise ShapeError("parameter names do not match the model")
        for name, value in values.items():
            if own[name].shape != np.shape(value):
                raise ShapeError(f"parameter {name}: shape {np.shape(value)} != {own[name].shape}")
            own[name][...] = value

    def zero_grad(self) -> None:
        for layer in self.layers:
            layer.zero_grad()

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        """Validate a channels-first batch and convert it to the internal NHWC layout."""
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"input shape {x.shape[1:]} does not match model input {self.input_shape}")
        if not np.isfinite(x).all():
            raise ValueError("non-finite values in model input")
        return np.ascontiguousarray(x.transpose(0, 2, 3, 1))

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Scores in (0, 1), shape ``(N,)``; records the pass for ``backward``."""
        x = self._check_input(x)
        for layer in self.layers:
            x = layer.forward(x)
        self._recorded = True
        return x[:, 0]

    __call__ = forward

    def features(self, x: np.ndarray) -> np.ndarray:
        """Backbone output (activation at the head marker), shape ``(N, feature_dim)``."""
        x = self._check_input(x)
        for layer in self.layers[:self.head_index]:
            x = layer.forward(x)
        self.clear()
        return x

    def backward(self, dscores: np.ndarray, retain_graph: bool = False) -> None:
        """Accumulate parameter gradients given ``dL/dscore`` of shape ``(N,)``."""
        if not self._recorded:
            raise RuntimeError("backward called before forward")
        d = np.asarray(dscores, dtype=self.dtype).reshape(-1, 1)
        if not np.isfinite(d).all():
            raise ValueError("non-finite upstream gradient")
        for layer in reversed(self.layers):
            d = layer.backward(d)
            if d is None:
                break
        if not retain_graph:
            self.clear()

    def clear(self) -> None:
        for layer in self.layers:
            layer.clear()
        self._recorded = False

    def predict(self, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
        x = np.asarray(x)
        out = [self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        self.clear()
        return np.concatenate(out) if out else np.zeros(0, dtype=self.dtype)
