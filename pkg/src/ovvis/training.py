"""Adam-style optimization of the matched loss on sampled training clips."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .assignment import GroundTruthClip, LossWeights, training_loss
from .config import ExperimentConfig, TrainConfig
from .errors import NumericError
from .model import Model
from .query_generator import VideoClip
from .world import World, generate

logger = logging.getLogger(__name__)


class TrainingDiverged(NumericError):
    def __init__(self, step: int, message: str = "non-finite loss"):
        super().__init__(f"training diverged at step {step}: {message}")
        self.step = step


class Adam:
    """Adam with optional decoupled weight decay."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - lr * update


def learning_rate(cfg: TrainConfig, step: int) -> float:
    """Step schedule: multiply by ``decay_factor`` at each decay fraction of training."""
    drops = sum(step >= f * cfg.steps for f in cfg.decay_fractions)
    return cfg.lr * cfg.decay_factor ** drops


def loss_weights(cfg: TrainConfig) -> LossWeights:
    return LossWeights(cfg.lambda_ins, cfg.lambda_cls, cfg.lambda_mask)


def clip_ground_truth(coarse: np.ndarray, class_ids: np.ndarray, frame_idx,
                      class_map: dict | None = None) -> GroundTruthClip:
    """Ground truth restricted to instances visible somewhere in the clip."""
    masks = coarse[:, list(frame_idx)]
    visible = masks.reshape(len(masks), -1).sum(axis=1) > 0
    ids = class_ids[visible]
    if class_map is not None:
        ids = np.array([class_map[int(c)] for c in ids], dtype=int)
    return GroundTruthClip(ids, masks[visible])


@dataclass
class TrainResult:
    model: Model
    losses: list = field(default_factory=list)
    learning_rates: list = field(default_factory=list)


def train(cfg: ExperimentConfig, world: World | None = None, log_every: int = 0) -> TrainResult:
    """Train from scratch; deterministic given the config seeds."""
    world = world if world is not None else generate(cfg.world)
    tc = cfg.train
    model = Model(cfg.model, cfg.world, seed=tc.seed)
    rng = np.random.default_rng(np.random.SeedSequence([tc.seed, 0x7A1]))
    vocab = world.text().subset(world.base_ids)
    class_map = {int(k): i for i, k in enumerate(world.base_ids)}
    weights = loss_weights(tc)
    stride = cfg.model.stride
    coarse = [v.coarse_masks(stride) for v in world.train_videos]
    opt = Adam(model.parameters(), tc.lr, (tc.beta1, tc.beta2), tc.adam_eps, tc.weight_decay)
    result = TrainResult(model)
    videos = world.train_videos
    for step in range(tc.steps):
        lr = learning_rate(tc, step)
        total = None
        try:
            for _ in range(tc.batch):
                vi = int(rng.integers(len(videos)))
                video = videos[vi]
                n_frames = min(tc.clip_frames, video.num_frames)
                idx = np.sort(rng.choice(video.num_frames, size=n_frames, replace=False))
                out = model(VideoClip(video.frames[idx], 0, tuple(int(i) for i in idx)),
                            video.image_embeddings.select(idx), vocab)
                gt = clip_ground_truth(coarse[vi], video.class_ids, idx, class_map)
                loss = training_loss(out.instance_scores, out.class_scores, out.masks, gt, weights,
                                     all_class_bce=cfg.model.all_class_bce)
                total = loss if total is None else total + loss
            total = T.scale(total, 1.0 / tc.batch)
            value = total.item()
            if not np.isfinite(value):
                raise TrainingDiverged(step)
            opt.zero_grad()
            total.backward()
        except NumericError as exc:
            if isinstance(exc, TrainingDiverged):
                raise
            raise TrainingDiverged(step, str(exc)) from exc
        opt.step(lr)
        result.losses.append(value)
        result.learning_rates.append(lr)
        if log_every and step % log_every == 0:
            logger.info("step %d loss %.5f lr %.2e", step, value, lr)
    return result
