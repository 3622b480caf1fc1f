"""Cross-attention from instance queries into per-frame vision-language embeddings."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .nn import Params
from .tensor import Tensor


@dataclass
class ClipImageEmbeddings:
    """One unit-norm row per frame; rows for empty frames are zero and flagged."""

    embeddings: np.ndarray  # T x C'
    source: str = "synthetic"
    empty_frames: np.ndarray | None = None

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.empty_frames is None:
            self.empty_frames = np.zeros(len(self.embeddings), dtype=bool)

    def select(self, frame_indices) -> "ClipImageEmbeddings":
        idx = np.asarray(frame_indices)
        return ClipImageEmbeddings(self.embeddings[idx], self.source, self.empty_frames[idx])


@dataclass
class ClassEmbeddings:
    embeddings: Tensor  # N x C'
    clip_index: int = 0
    attention: Tensor | None = None  # N x T weights


def project_queries(queries: Tensor, params: Params, activation: str = "relu") -> Tensor:
    """Two-layer MLP taking queries from model width to the embedding width."""
    w1 = params["uea.mlp1.w"]
    if queries.shape[1] != w1.shape[0]:
        raise ShapeError(f"query width {queries.shape[1]} != projection input {w1.shape[0]}")
    h = T.relu_or_gelu(queries @ w1 + params["uea.mlp1.b"], activation)
    return h @ params["uea.mlp2.w"] + params["uea.mlp2.b"]


def align(projected: Tensor, image: ClipImageEmbeddings, params: Params, clip_index: int = 0,
          heads: int = 1) -> ClassEmbeddings:
    """softmax(Q K^T / sqrt(C')) V over the frame axis, with K, V linear maps of the image rows."""
    emb = image.embeddings
    if emb.shape[0] == 0:
        raise ContractError("cannot align against an empty clip")
    if emb.shape[1] != projected.shape[1]:
        raise ShapeError(f"image embedding width {emb.shape[1]} != query width {projected.shape[1]}")
    e = Tensor(emb)
    keys = e @ params["uea.wk"]
    values = e @ params["uea.wv"]
    width = projected.shape[1] // heads
    outs, weights = [], []
    for h in range(heads):
        cols = slice(h * width, (h + 1) * width)
        q, k, v = (projected, keys, values) if heads == 1 else (projected[:, cols], keys[:, cols], values[:, cols])
        a = T.softmax(T.scale(q @ k.T, 1.0 / math.sqrt(width)))
        weights.append(a)
        outs.append(a @ v)
    out = outs[0] if heads == 1 else T.concat(outs, axis=1)
    attn = weights[0] if heads == 1 else T.stack_rows(weights)
    return ClassEmbeddings(out, clip_index, attn)
