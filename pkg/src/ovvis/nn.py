"""Parameter initialization and small layers shared by the model parts."""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from . import tensor as T
from .tensor import Tensor

Params = Mapping[str, Tensor]


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def linear(x: Tensor, params: Params, prefix: str) -> Tensor:
    y = x @ params[f"{prefix}.w"]
    b = params.get(f"{prefix}.b")
    return y if b is None else y + b


def mlp(x: Tensor, params: Params, prefix: str, num_layers: int, activation: str = "relu") -> Tensor:
    """``num_layers`` linear layers named ``{prefix}.l{i}`` with activations between."""
    for i in range(num_layers):
        x = linear(x, params, f"{prefix}.l{i}")
        if i < num_layers - 1:
            x = T.relu_or_gelu(x, activation)
    return x


def affine_norm(x: Tensor, params: Params, prefix: str) -> Tensor:
    return T.layer_norm(x) * params[f"{prefix}.gamma"] + params[f"{prefix}.beta"]


def attention(q_in: Tensor, k_in: Tensor, v_in: Tensor, params: Params, prefix: str,
              heads: int = 1, return_weights: bool = False):
    """Scaled dot-product attention with projections ``{prefix}.wq/wk/wv/wo``.

    Output rows are convex combinations of projected values, followed by the
    output projection ``wo`` when present.
    """
    q = q_in @ params[f"{prefix}.wq"]
    k = k_in @ params[f"{prefix}.wk"]
    v = v_in @ params[f"{prefix}.wv"]
    width = q.shape[1] // heads
    outs, weights = [], []
    for h in range(heads):
        if heads == 1:
            qh, kh, vh = q, k, v
        else:
            cols = slice(h * width, (h + 1) * width)
            qh, kh, vh = q[:, cols], k[:, cols], v[:, cols]
        a = T.softmax(T.scale(qh @ kh.T, 1.0 / math.sqrt(width)))
        weights.append(a)
        outs.append(a @ vh)
    out = outs[0] if heads == 1 else T.concat(outs, axis=1)
    wo = params.get(f"{prefix}.wo")
    if wo is not None:
        out = out @ wo
    return (out, weights) if return_weights else out
