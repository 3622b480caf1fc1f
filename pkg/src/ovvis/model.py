"""Full model: encoder, decoder, alignment, classification and mask heads."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import ovtf
from .alignment import ClipImageEmbeddings, align, project_queries
from .config import ModelConfig, WorldConfig
from .errors import ContractError
from .heads import TextEmbeddings, classify, instance_head, mask_head
from .nn import xavier
from .posenc import PositionalEncoding
from .query_generator import VideoClip, conv_strides, decode, encode
from .tensor import Tensor


def param_shapes(cfg: ModelConfig, world: WorldConfig) -> dict[str, tuple]:
    c, e, cin = cfg.hidden_dim, world.embed_dim, world.input_channels
    s1, s2 = conv_strides(cfg.stride)
    shapes: dict[str, tuple] = {
        "encoder.conv1.w": (s1 * s1 * cin, c), "encoder.conv1.b": (c,),
        "encoder.conv2.w": (s2 * s2 * c, c), "encoder.conv2.b": (c,),
        "encoder.pixel_proj.w": (c, c), "encoder.pixel_proj.b": (c,),
        "decoder.query_init": (cfg.num_queries, c),
    }
    for layer in range(cfg.num_layers):
        p = f"decoder.layer{layer}"
        for attn in ("cross_attn", "self_attn"):
            for m in ("wq", "wk", "wv", "wo"):
                shapes[f"{p}.{attn}.{m}"] = (c, c)
        for norm in ("norm1", "norm2", "norm3"):
            shapes[f"{p}.{norm}.gamma"] = (c,)
            shapes[f"{p}.{norm}.beta"] = (c,)
        shapes[f"{p}.ffn.l0.w"] = (c, cfg.dim_feedforward)
        shapes[f"{p}.ffn.l0.b"] = (cfg.dim_feedforward,)
        shapes[f"{p}.ffn.l1.w"] = (cfg.dim_feedforward, c)
        shapes[f"{p}.ffn.l1.b"] = (c,)
    shapes.update({
        "uea.mlp1.w": (c, e), "uea.mlp1.b": (e,),
        "uea.mlp2.w": (e, e), "uea.mlp2.b": (e,),
        "uea.wk": (e, e), "uea.wv": (e, e),
    })
    for head, out in (("ins_head", 1), ("mask_head", c)):
        shapes[f"{head}.l0.w"] = (c, c)
        shapes[f"{head}.l0.b"] = (c,)
        shapes[f"{head}.l1.w"] = (c, c)
        shapes[f"{head}.l1.b"] = (c,)
        shapes[f"{head}.l2.w"] = (c, out)
        shapes[f"{head}.l2.b"] = (out,)
    return shapes


def init_params(cfg: ModelConfig, world: WorldConfig, seed: int = 0) -> dict[str, Tensor]:
    """Deterministic initialization; names are visited in sorted order.

    The alignment key/value maps start at the identity so the aligned class
    embeddings begin inside the vision-language space.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    params = {}
    for name, shape in sorted(param_shapes(cfg, world).items()):
        if name == "decoder.query_init":
            value = rng.normal(0.0, cfg.query_init_std, size=shape)
        elif name in ("uea.wk", "uea.wv"):
            value = np.eye(shape[0])
        elif name.endswith(".gamma"):
            value = np.ones(shape)
        elif name.endswith((".b", ".beta")):
            value = np.zeros(shape)
        else:
            value = xavier(rng, *shape)
        params[name] = Tensor(value, requires_grad=True)
    return params


@lru_cache(maxsize=64)
def _positional(channels: int, frames: int, height: int, width: int) -> PositionalEncoding:
    return PositionalEncoding.build(channels, frames, height, width)


@dataclass
class ModelOutput:
    queries: Tensor  # N x C
    class_embeddings: Tensor  # N x C'
    class_scores: Tensor  # N x K
    instance_scores: Tensor  # N x 1
    masks: Tensor  # N x T x h x w
    mask_embeddings: Tensor
    alignment_weights: Tensor | None = None


class Model:
    def __init__(self, cfg: ModelConfig, world: WorldConfig, params: dict[str, Tensor] | None = None,
                 seed: int = 0):
        self.cfg = cfg
        self.world = world
        self.params = params if params is not None else init_params(cfg, world, seed)
        expected = param_shapes(cfg, world)
        if set(expected) != set(self.params):
            missing = sorted(set(expected) - set(self.params))
            extra = sorted(set(self.params) - set(expected))
            raise ContractError(f"checkpoint mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, shape in expected.items():
            if tuple(self.params[name].shape) != shape:
                raise ContractError(f"checkpoint tensor {name} has shape "
                                    f"{self.params[name].shape}, expected {shape}")

    def forward(self, clip: VideoClip, image: ClipImageEmbeddings, text: TextEmbeddings) -> ModelOutput:
        cfg, p = self.cfg, self.params
        enc = encode(clip, p, cfg.stride, cfg.activation)
        pos = _positional(cfg.hidden_dim, enc.num_frames, enc.height, enc.width)
        q = decode(enc, pos, p["decoder.query_init"], p, cfg.num_layers, cfg.num_heads,
                   cfg.activation, clip.clip_index).queries
        projected = project_queries(q, p, cfg.activation)
        weights = None
        if cfg.uea_enabled:
            aligned = align(projected, image, p, clip.clip_index, cfg.uea_heads)
            cls_emb, weights = aligned.embeddings, aligned.attention
        else:
            cls_emb = projected
        scores = classify(cls_emb, text, cfg.logit_scale, cfg.normalize_cls_embeddings).scores
        ins = instance_head(q, p, cfg.activation).scores
        masks = mask_head(q, enc.pixel_tokens, (enc.num_frames, enc.height, enc.width), p, cfg.activation)
        return ModelOutput(q, cls_emb, scores, ins, masks.masks, masks.mask_embeddings, weights)

    __call__ = forward

    def parameters(self) -> list[Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def save(self, directory, extra: dict | None = None):
        return ovtf.save_checkpoint(directory, self.state_dict(), extra)

    @classmethod
    def load(cls, directory, cfg: ModelConfig, world: WorldConfig) -> "Model":
        tensors, _ = ovtf.load_checkpoint(directory)
        params = {k: Tensor(v, requires_grad=True) for k, v in tensors.items()}
        return cls(cfg, world, params)
