"""Clip encoder and transformer decoder producing video-level instance queries.

The encoder is a two-layer patch convolution stem (kernel == stride) plus a
linear projection to per-pixel embeddings.  Internally feature maps are kept
as token matrices of shape (T*h*w) x C in (t, y, x) row-major order; the
``features`` / ``pixel_embeddings`` properties give the C x T x h x w view.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import Params, affine_norm, attention, linear
from .posenc import PositionalEncoding
from .tensor import Tensor


@dataclass
class VideoClip:
    frames: np.ndarray  # T x Cin x H x W
    clip_index: int = 0
    frame_indices: tuple = field(default=())

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[0] < 1:
            raise ShapeError(f"clip frames must be T x Cin x H x W with T >= 1, got {self.frames.shape}")
        if not self.frame_indices:
            self.frame_indices = tuple(range(self.frames.shape[0]))

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class EncodedClip:
    feature_tokens: Tensor
    pixel_tokens: Tensor
    num_frames: int
    height: int
    width: int
    stride: int

    def _grid(self, tokens: Tensor) -> Tensor:
        c = tokens.shape[1]
        grid = tokens.reshape(self.num_frames, self.height, self.width, c)
        return grid.transpose(3, 0, 1, 2)

    @property
    def features(self) -> Tensor:
        return self._grid(self.feature_tokens)

    @property
    def pixel_embeddings(self) -> Tensor:
        return self._grid(self.pixel_tokens)


@dataclass
class InstanceQuerySet:
    queries: Tensor  # N x C
    clip_index: int = 0


def conv_strides(stride: int) -> tuple[int, int]:
    first = 2 if stride >= 2 else 1
    return first, stride // first


def patch_conv(x: Tensor, w: Tensor, b: Tensor, s: int) -> Tensor:
    """Strided convolution with kernel == stride on a T x H x W x C grid."""
    t, h, wd, c = x.shape
    if s == 1:
        cols = x.reshape(t * h * wd, c)
        ho, wo = h, wd
    else:
        ho, wo = h // s, wd // s
        patches = x.reshape(t, ho, s, wo, s, c).transpose(0, 1, 3, 2, 4, 5)
        cols = patches.reshape(t * ho * wo, s * s * c)
    out = cols @ w + b
    return out.reshape(t, ho, wo, w.shape[1])


def encode(clip: VideoClip, params: Params, stride: int = 4, activation: str = "relu") -> EncodedClip:
    t, cin, h, w = clip.frames.shape
    if h % stride or w % stride:
        raise ConfigError(f"frame size {h}x{w} not divisible by stride {stride}")
    s1, s2 = conv_strides(stride)
    x = Tensor(clip.frames).transpose(0, 2, 3, 1)
    return encode_grid(x, params, s1, s2, activation)


def encode_grid(x: Tensor, params: Params, s1: int, s2: int, activation: str = "relu") -> EncodedClip:
    """Encode a T x H x W x Cin tensor (differentiable w.r.t. the input too)."""
    hidden = T.relu_or_gelu(
        patch_conv(x, params["encoder.conv1.w"], params["encoder.conv1.b"], s1), activation)
    feats = patch_conv(hidden, params["encoder.conv2.w"], params["encoder.conv2.b"], s2)
    t, ho, wo, c = feats.shape
    tokens = feats.reshape(t * ho * wo, c)
    pixel = linear(tokens, params, "encoder.pixel_proj")
    return EncodedClip(tokens, pixel, t, ho, wo, s1 * s2)


def decoder_layer(x: Tensor, qpos: Tensor, memory: Tensor, mem_pos: Tensor, params: Params,
                  prefix: str, heads: int = 1, activation: str = "relu") -> Tensor:
    keys = memory + mem_pos
    ca = attention(x + qpos, keys, memory, params, f"{prefix}.cross_attn", heads)
    x = affine_norm(x + ca, params, f"{prefix}.norm1")
    qk = x + qpos
    sa = attention(qk, qk, x, params, f"{prefix}.self_attn", heads)
    x = affine_norm(x + sa, params, f"{prefix}.norm2")
    ff = linear(T.relu_or_gelu(linear(x, params, f"{prefix}.ffn.l0"), activation),
                params, f"{prefix}.ffn.l1")
    return affine_norm(x + ff, params, f"{prefix}.norm3")


def decode(encoded: EncodedClip, pos: PositionalEncoding, init_queries: Tensor, params: Params,
           num_layers: int, heads: int = 1, activation: str = "relu", clip_index: int = 0) -> InstanceQuerySet:
    """Run ``num_layers`` decoder layers from ``init_queries``.

    The initial queries double as the per-slot query embedding added to the
    attention inputs of every layer; the positional encoding is added to the
    keys of cross-attention only.
    """
    pos_tokens = pos.tokens()
    if pos_tokens.shape != encoded.feature_tokens.shape:
        raise ShapeError(f"positional encoding {pos_tokens.shape} does not match "
                         f"features {encoded.feature_tokens.shape}")
    mem_pos = Tensor(pos_tokens)
    x = init_queries
    for layer in range(num_layers):
        x = decoder_layer(x, init_queries, encoded.feature_tokens, mem_pos, params,
                          f"decoder.layer{layer}", heads, activation)
    return InstanceQuerySet(x, clip_index)
