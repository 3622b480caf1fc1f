"""Open-vocabulary classification, objectness, and mask heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .nn import Params, mlp
from .tensor import Tensor

MASK_THRESHOLD = 0.5


@dataclass
class TextEmbeddings:
    embeddings: np.ndarray  # K x C', unit rows
    category_names: list
    novel_flags: np.ndarray

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.novel_flags = np.asarray(self.novel_flags, dtype=bool)
        k = len(self.embeddings)
        if k < 1:
            raise ContractError("need at least one category")
        if len(self.category_names) != k or len(self.novel_flags) != k:
            raise ContractError("names / flags must have one entry per category")
        if len(set(self.category_names)) != k:
            raise ContractError("category names must be unique")

    def __len__(self):
        return len(self.embeddings)

    def subset(self, indices) -> "TextEmbeddings":
        idx = np.asarray(indices, dtype=int)
        return TextEmbeddings(self.embeddings[idx], [self.category_names[i] for i in idx],
                              self.novel_flags[idx])


@dataclass
class ClassScores:
    scores: Tensor  # N x K


@dataclass
class InstanceScores:
    scores: Tensor  # N x 1


@dataclass
class MaskPrediction:
    masks: Tensor  # N x T x h x w
    mask_embeddings: Tensor  # N x C


def classify(class_embeddings: Tensor, text: TextEmbeddings, logit_scale: float = 1.0,
             normalize: bool = False) -> ClassScores:
    e = class_embeddings
    if e.shape[1] != text.embeddings.shape[1]:
        raise ShapeError(f"class embedding width {e.shape[1]} != text width {text.embeddings.shape[1]}")
    if normalize:
        e = T.l2_normalize(e)
    logits = e @ Tensor(text.embeddings.T)
    if logit_scale != 1.0:
        logits = T.scale(logits, logit_scale)
    return ClassScores(T.softmax(logits))


def instance_head(queries: Tensor, params: Params, activation: str = "relu") -> InstanceScores:
    if queries.shape[1] != params["ins_head.l0.w"].shape[0]:
        raise ShapeError("query width does not match the instance head")
    return InstanceScores(T.sigmoid(mlp(queries, params, "ins_head", 3, activation)))


def mask_head(queries: Tensor, pixel_tokens: Tensor, grid: tuple, params: Params,
              activation: str = "relu") -> MaskPrediction:
    """Masks from dot products of mask embeddings with per-pixel embeddings.

    ``pixel_tokens`` is (T*h*w) x C and ``grid`` is (T, h, w).
    """
    if queries.shape[1] != params["mask_head.l0.w"].shape[0]:
        raise ShapeError("query width does not match the mask head")
    emb = mlp(queries, params, "mask_head", 3, activation)
    return mask_from_embeddings(emb, pixel_tokens, grid)


def mask_from_embeddings(mask_embeddings: Tensor, pixel_tokens: Tensor, grid: tuple) -> MaskPrediction:
    if mask_embeddings.shape[1] != pixel_tokens.shape[1]:
        raise ShapeError(f"mask embedding width {mask_embeddings.shape[1]} != pixel width {pixel_tokens.shape[1]}")
    logits = mask_embeddings @ pixel_tokens.T
    masks = T.sigmoid(logits).reshape((mask_embeddings.shape[0],) + tuple(grid))
    return MaskPrediction(masks, mask_embeddings)


def detection_scores(instance_scores: np.ndarray, class_scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-query (score, category): objectness times the best class probability."""
    ins = np.asarray(instance_scores).reshape(-1)
    cls = np.asarray(class_scores)
    category = cls.argmax(axis=1)
    return ins * cls.max(axis=1), category
