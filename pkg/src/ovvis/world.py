"""Procedural videos of moving shapes with a controllable visual/text domain gap.

Each category k owns a unit prototype p_k in the text space.  Pixels of an
instance carry the visual signature A @ p_k, where A is a hidden orthogonal
matrix (identity when the domain gap is disabled).  An optional extra
channel carries a class-agnostic foreground intensity of 1 inside every
instance, the analogue of the edge and contrast cues that let real mask
proposals transfer to unseen categories.  The stand-in image
encoder reports per-frame embeddings in prototype space, without A.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ovtf
from .alignment import ClipImageEmbeddings
from .config import WorldConfig
from .errors import ConfigError, ContractError
from .heads import TextEmbeddings
from .tensor import L2_EPS

TRAIN, EVAL = "train", "eval"
_SPLIT_CODE = {TRAIN: 1, EVAL: 2}


def haar_orthogonal(dim: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def make_prototypes(num: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """``num`` orthonormal rows in R^dim (requires num <= dim)."""
    if num > dim:
        raise ConfigError("cannot build more orthonormal prototypes than dimensions")
    return haar_orthogonal(dim, rng)[:, :num].T.copy()


def category_names(num: int) -> list[str]:
    return [f"category_{k:02d}" for k in range(num)]


@dataclass
class SyntheticVideo:
    video_id: int
    split: str
    seed: int
    frames: np.ndarray  # T x Cin x H x W
    masks: np.ndarray  # I x T x H x W, uint8
    class_ids: np.ndarray  # I
    track_ids: np.ndarray  # I
    image_embeddings: ClipImageEmbeddings

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def coarse_masks(self, stride: int) -> np.ndarray:
        """Masks at feature resolution: a cell belongs to an instance covering > half of it."""
        i, t, h, w = self.masks.shape
        if stride == 1:
            return self.masks.astype(np.float64)
        pooled = self.masks.reshape(i, t, h // stride, stride, w // stride, stride).mean(axis=(3, 5))
        return (pooled > 0.5).astype(np.float64)


@dataclass
class World:
    config: WorldConfig
    prototypes: np.ndarray  # K x C'
    rotation: np.ndarray  # C' x C'
    names: list = field(default_factory=list)
    train_videos: list = field(default_factory=list)
    eval_videos: list = field(default_factory=list)

    @property
    def novel_flags(self) -> np.ndarray:
        flags = np.zeros(self.config.num_categories, dtype=bool)
        flags[self.config.num_base:] = True
        return flags

    @property
    def base_ids(self) -> np.ndarray:
        return np.arange(self.config.num_base)

    @property
    def novel_ids(self) -> np.ndarray:
        return np.arange(self.config.num_base, self.config.num_categories)

    @property
    def signatures(self) -> np.ndarray:
        """K x C' visual signatures A @ p_k."""
        return self.prototypes @ self.rotation.T

    def text(self) -> TextEmbeddings:
        return text_provider(self.names, self.prototypes, self.novel_flags)

    def videos(self, split: str) -> list[SyntheticVideo]:
        return self.train_videos if split == TRAIN else self.eval_videos


def video_seed(master: int, split: str, index: int) -> int:
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=(_SPLIT_CODE[split], int(index)))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _render_shape(kind: str, top: float, left: float, h: int, w: int, height: int, width: int) -> np.ndarray:
    ys, xs = np.mgrid[0:height, 0:width]
    y0, x0 = int(round(top)), int(round(left))
    if kind == "rect":
        return (ys >= y0) & (ys < y0 + h) & (xs >= x0) & (xs < x0 + w)
    cy, cx = y0 + (h - 1) / 2, x0 + (w - 1) / 2
    return ((ys - cy) / (h / 2)) ** 2 + ((xs - cx) / (w / 2)) ** 2 <= 1.0


def _trajectory(start: float, velocity: float, lo: float, hi: float, frames: int) -> np.ndarray:
    """Linear motion reflected at [lo, hi]."""
    out = np.empty(frames)
    pos, vel = start, velocity
    for t in range(frames):
        out[t] = pos
        pos += vel
        if pos < lo:
            pos, vel = 2 * lo - pos, -vel
        elif pos > hi:
            pos, vel = 2 * hi - pos, -vel
        pos = min(max(pos, lo), hi)
    return out


def _check_feasible(cfg: WorldConfig, split: str) -> None:
    pool = cfg.num_base if split == TRAIN else cfg.num_categories
    if cfg.max_instances > pool:
        raise ConfigError(f"{cfg.max_instances} instances need distinct categories; only {pool} available")
    if cfg.max_instances * cfg.min_size ** 2 > cfg.height * cfg.width // 2:
        raise ConfigError("instance count infeasible for the grid size")
    if not cfg.occlusion and cfg.max_instances * cfg.max_size > cfg.height:
        raise ConfigError("non-occluding lanes do not fit: max_instances * max_size > height")


def generate_video(cfg: WorldConfig, prototypes: np.ndarray, rotation: np.ndarray,
                   split: str, index: int) -> SyntheticVideo:
    seed = video_seed(cfg.seed, split, index)
    rng = np.random.default_rng(seed)
    H, W, Tn, K = cfg.height, cfg.width, cfg.frames_per_video, cfg.num_categories
    n = int(rng.integers(cfg.min_instances, cfg.max_instances + 1))
    if split == TRAIN:
        classes = rng.choice(cfg.num_base, size=n, replace=False)
    else:
        first = index % K
        rest = rng.choice([k for k in range(K) if k != first], size=n - 1, replace=False)
        classes = np.concatenate([[first], rest]).astype(int)
    labels = np.zeros((Tn, H, W), dtype=np.int64)
    lane = H / n
    for i in range(n):
        kind = "rect" if rng.random() < 0.5 else "ellipse"
        h = int(rng.integers(cfg.min_size, cfg.max_size + 1))
        w = int(rng.integers(cfg.min_size, cfg.max_size + 1))
        angle = rng.uniform(0, 2 * np.pi)
        vy, vx = cfg.motion_speed * np.sin(angle), cfg.motion_speed * np.cos(angle)
        if cfg.occlusion:
            ylo, yhi = 0.0, float(H - h)
        else:
            h = min(h, int(lane))
            ylo, yhi = float(np.ceil(i * lane)), float(np.floor((i + 1) * lane) - h)
        y0 = rng.uniform(ylo, max(ylo, yhi))
        x0 = rng.uniform(0, W - w)
        ys = _trajectory(y0, vy, ylo, max(ylo, yhi), Tn)
        xs = _trajectory(x0, vx, 0.0, float(W - w), Tn)
        for t in range(Tn):
            labels[t][_render_shape(kind, ys[t], xs[t], h, w, H, W)] = i + 1
    masks = np.stack([(labels == i + 1) for i in range(n)]).astype(np.uint8)
    signatures = prototypes[classes] @ rotation.T  # n x C'
    frames = np.zeros((Tn, cfg.input_channels, H, W))
    C = cfg.embed_dim
    for i in range(n):
        frames[:, :C] += masks[i][:, None, :, :] * signatures[i][None, :, None, None]
    if cfg.foreground_channel:
        frames[:, C] = labels > 0
    if cfg.noise_sigma > 0:
        frames += rng.normal(0.0, cfg.noise_sigma, size=frames.shape)
    image = clip_image_provider(masks, classes, prototypes, cfg.noise_sigma, rng)
    return SyntheticVideo(index, split, seed, frames, masks, classes.astype(int),
                          np.arange(n), image)


def clip_image_provider(masks: np.ndarray, class_ids, prototypes: np.ndarray, sigma: float = 0.0,
                        rng: np.random.Generator | None = None) -> ClipImageEmbeddings:
    """Per-frame embedding: normalized area-weighted mix of visible prototypes plus noise.

    Weights are each visible instance's share of the total visible instance
    area in that frame.  Frames with nothing visible (and no noise) yield a
    zero row and are flagged in ``empty_frames``.
    """
    class_ids = np.asarray(class_ids, dtype=int)
    areas = masks.reshape(masks.shape[0], masks.shape[1], -1).sum(axis=2).astype(np.float64)  # I x T
    total = areas.sum(axis=0)
    shares = np.divide(areas, total, out=np.zeros_like(areas), where=total > 0)
    mix = shares.T @ prototypes[class_ids] if len(class_ids) else np.zeros((masks.shape[1], prototypes.shape[1]))
    if sigma > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        mix = mix + rng.normal(0.0, sigma, size=mix.shape)
    norm = np.linalg.norm(mix, axis=1, keepdims=True)
    emb = mix / np.maximum(norm, L2_EPS)
    empty = total == 0
    if sigma == 0:
        emb[empty] = 0.0
    return ClipImageEmbeddings(emb, "synthetic", empty)


def text_provider(names, prototypes: np.ndarray, novel_flags) -> TextEmbeddings:
    if len(names) != len(prototypes):
        raise ContractError("one prototype per category name required")
    return TextEmbeddings(np.array(prototypes, dtype=np.float64), list(names), np.asarray(novel_flags))


def generate(cfg: WorldConfig) -> World:
    """Build the full dataset; a pure function of the config (and its seed)."""
    for split in (TRAIN, EVAL):
        _check_feasible(cfg, split)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(cfg.seed), spawn_key=(0,)))
    prototypes = make_prototypes(cfg.num_categories, cfg.embed_dim, rng)
    if cfg.domain_gap == "hidden_rotation":
        rotation = haar_orthogonal(cfg.embed_dim, rng)
    else:
        rotation = np.eye(cfg.embed_dim)
    world = World(cfg, prototypes, rotation, category_names(cfg.num_categories))
    world.train_videos = [generate_video(cfg, prototypes, rotation, TRAIN, i)
                          for i in range(cfg.num_train_videos)]
    world.eval_videos = [generate_video(cfg, prototypes, rotation, EVAL, i)
                         for i in range(cfg.num_eval_videos)]
    return world


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_dataset(world: World, directory) -> Path:
    directory = Path(directory)
    (directory / "videos").mkdir(parents=True, exist_ok=True)
    ovtf.save(directory / "prototypes.ovtf", world.prototypes)
    ovtf.save(directory / "rotation.ovtf", world.rotation)
    entries = []
    for split in (TRAIN, EVAL):
        for v in world.videos(split):
            stem = f"videos/{split}_{v.video_id:04d}"
            ovtf.save(directory / f"{stem}_frames.ovtf", v.frames)
            ovtf.save(directory / f"{stem}_masks.ovtf", v.masks.astype(np.float32))
            ovtf.save(directory / f"{stem}_image.ovtf", v.image_embeddings.embeddings)
            entries.append({
                "video_id": v.video_id, "split": split, "seed": v.seed,
                "class_ids": [int(c) for c in v.class_ids],
                "track_ids": [int(t) for t in v.track_ids],
                "empty_frames": [bool(e) for e in v.image_embeddings.empty_frames],
                "files": {"frames": f"{stem}_frames.ovtf", "masks": f"{stem}_masks.ovtf",
                          "image_embeddings": f"{stem}_image.ovtf"},
            })
    manifest = {
        "format": "ovvis-synthetic-dataset",
        "config": _config_dict(world.config),
        "categories": [{"id": k, "name": n, "novel": bool(f)}
                       for k, (n, f) in enumerate(zip(world.names, world.novel_flags))],
        "splits": {"base": [int(k) for k in world.base_ids], "novel": [int(k) for k in world.novel_ids]},
        "videos": entries,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def _config_dict(cfg: WorldConfig) -> dict:
    from dataclasses import asdict
    return asdict(cfg)


def load_dataset(directory) -> World:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    cfg = WorldConfig(**manifest["config"])
    world = World(cfg, ovtf.load(directory / "prototypes.ovtf"), ovtf.load(directory / "rotation.ovtf"),
                  [c["name"] for c in manifest["categories"]])
    for e in manifest["videos"]:
        image = ClipImageEmbeddings(ovtf.load(directory / e["files"]["image_embeddings"]), "synthetic",
                                    np.array(e["empty_frames"], dtype=bool))
        video = SyntheticVideo(e["video_id"], e["split"], e["seed"],
                               ovtf.load(directory / e["files"]["frames"]),
                               ovtf.load(directory / e["files"]["masks"]).astype(np.uint8),
                               np.array(e["class_ids"], dtype=int), np.array(e["track_ids"], dtype=int),
                               image)
        world.videos(e["split"]).append(video)
    return world
