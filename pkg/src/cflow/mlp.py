"""Small fully connected nets with tanh hidden layers.

All model components here are MLPs over flattened inputs; image-scale
encoders are out of scope for this toolkit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as nc
from .tensor import ShapeError, Tensor


@dataclass
class MLPParams:
    """Stacked (weight, bias) pairs; weight rows are output units."""

    layers: list = field(default_factory=list)  # [(Tensor(out,in), Tensor(out,))]

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    def tensors(self):
        out = []
        for w, b in self.layers:
            out.append(w)
            out.append(b)
        return out


def init_mlp(dims, rng: np.random.Generator) -> MLPParams:
    """Weights ~ N(0, 1/fan_in), biases zero."""
    if len(dims) < 2:
        raise ShapeError("need at least an input and an output dimension")
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_out, fan_in))
        layers.append((Tensor(w), Tensor(np.zeros(fan_out))))
    return MLPParams(layers)


def zero_mlp(dims) -> MLPParams:
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        layers.append((Tensor(np.zeros((fan_out, fan_in))), Tensor(np.zeros(fan_out))))
    return MLPParams(layers)


def mlp_forward(params: MLPParams, x: Tensor) -> Tensor:
    """tanh on hidden layers, identity on the last."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.shape != (params.in_dim,):
        raise ShapeError(f"input shape {x.shape}, expected ({params.in_dim},)")
    h = x
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        h = nc.add(nc.matvec(w, h), b)
        if i != last:
            h = nc.tanh(h)
    return h
