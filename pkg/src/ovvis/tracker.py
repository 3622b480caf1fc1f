"""Clip-by-clip inference and identity association across clips.

A video is cut into non-overlapping clips.  Each clip runs through the full
model; surviving queries are matched to the previous clip's tracks by
cosine similarity of their instance queries.  Online inference is the
special case of one-frame clips and offline inference uses a single clip.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import jsonschema
import numpy as np

from . import rle
from .alignment import ClipImageEmbeddings
from .assignment import hungarian
from .config import InferConfig
from .errors import ContractError, ShapeError
from .heads import MASK_THRESHOLD, TextEmbeddings, detection_scores
from .query_generator import VideoClip
from .tensor import no_grad

SIM_EPS = 1e-12


def similarity(q_a, q_b) -> np.ndarray:
    """Cosine similarity between rows; the norm product is floored at 1e-12."""
    a = np.asarray(getattr(q_a, "data", q_a), dtype=np.float64)
    b = np.asarray(getattr(q_b, "data", q_b), dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"similarity needs two N x C matrices of equal width, got {a.shape} and {b.shape}")
    denom = np.linalg.norm(a, axis=1)[:, None] * np.linalg.norm(b, axis=1)[None, :]
    return np.clip(a @ b.T / np.maximum(denom, SIM_EPS), -1.0, 1.0)


@dataclass
class ClipRecord:
    clip_index: int
    frames: tuple  # absolute frame indices covered by the clip
    class_scores: np.ndarray  # K
    instance_score: float
    detection_score: float
    category: int
    masks: np.ndarray  # T x h x w, bool


@dataclass
class Track:
    track_id: int
    query: np.ndarray
    records: list = field(default_factory=list)
    active: bool = True
    missed: int = 0

    def vote(self) -> tuple[int, float]:
        """Detection-score-weighted category vote; ties go to the lower category id.

        Confidence is the winning category's vote mass divided by the number
        of clips the track appears in.
        """
        votes: dict[int, float] = {}
        for r in self.records:
            votes[r.category] = votes.get(r.category, 0.0) + r.detection_score
        best = min(votes, key=lambda c: (-votes[c], c))
        return best, votes[best] / len(self.records)


class Tracker:
    """Stateful clip-to-clip association."""

    def __init__(self, new_track_threshold: float = 0.2, patience: int = 1,
                 query_update: str = "overwrite", ema_momentum: float = 0.5):
        self.threshold = new_track_threshold
        self.patience = patience
        self.query_update = query_update
        self.momentum = ema_momentum
        self.tracks: list[Track] = []

    @classmethod
    def from_config(cls, cfg: InferConfig) -> "Tracker":
        return cls(cfg.new_track_threshold, cfg.patience, cfg.query_update, cfg.ema_momentum)

    @property
    def active(self) -> list[Track]:
        return [t for t in self.tracks if t.active]

    def associate(self, queries: np.ndarray, records: list | None = None) -> list[int]:
        """Assign a track id to each current query (row order); returns the ids."""
        queries = np.asarray(queries, dtype=np.float64)
        if queries.ndim != 2:
            raise ShapeError("queries must be an n x C matrix")
        if not np.isfinite(queries).all():
            raise ContractError("track queries must be finite")
        records = records if records is not None else [None] * len(queries)
        active = self.active
        ids: list[int | None] = [None] * len(queries)
        matched_tracks: set[int] = set()
        if active and len(queries):
            sim = similarity(np.stack([t.query for t in active]), queries)
            for ti, qi in hungarian(1.0 - sim).pairs:
                if sim[ti, qi] >= self.threshold:
                    track = active[ti]
                    ids[qi] = track.track_id
                    matched_tracks.add(track.track_id)
                    if self.query_update == "ema":
                        track.query = self.momentum * track.query + (1 - self.momentum) * queries[qi]
                    else:
                        track.query = queries[qi].copy()
                    track.missed = 0
                    if records[qi] is not None:
                        track.records.append(records[qi])
        for track in active:
            if track.track_id not in matched_tracks:
                track.missed += 1
                if track.missed > self.patience:
                    track.active = False
        for qi in range(len(queries)):
            if ids[qi] is None:
                track = Track(len(self.tracks), queries[qi].copy())
                if records[qi] is not None:
                    track.records.append(records[qi])
                self.tracks.append(track)
                ids[qi] = track.track_id
        return ids


def clip_length(scheme: str, clip_len: int, num_frames: int) -> int:
    if scheme == "online":
        return 1
    if scheme == "offline":
        return num_frames
    if scheme == "semi_online":
        return clip_len
    raise ContractError(f"unknown inference scheme {scheme!r}")


@dataclass
class VideoResult:
    video_id: int
    num_frames: int
    mask_size: tuple
    scheme: str
    clip_len: int
    tracks: list
    config: dict = field(default_factory=dict)

    def track_masks(self, track: Track) -> dict[int, np.ndarray]:
        out = {}
        for r in track.records:
            for k, f in enumerate(r.frames):
                out[int(f)] = r.masks[k]
        return out

    def to_json(self) -> dict:
        tracks = []
        for track in self.tracks:
            category, confidence = track.vote()
            masks = self.track_masks(track)
            tracks.append({
                "id": track.track_id,
                "category": int(category),
                "confidence": float(confidence),
                "frames": [{"frame_idx": f, "rle": rle.encode(masks[f])} for f in sorted(masks)],
            })
        return {
            "video_id": int(self.video_id),
            "num_frames": int(self.num_frames),
            "mask_size": [int(s) for s in self.mask_size],
            "scheme": self.scheme,
            "clip_len": int(self.clip_len),
            "config": self.config,
            "tracks": tracks,
        }


RESULT_SCHEMA = {
    "type": "object",
    "required": ["video_id", "num_frames", "mask_size", "scheme", "clip_len", "config", "tracks"],
    "properties": {
        "video_id": {"type": "integer", "minimum": 0},
        "num_frames": {"type": "integer", "minimum": 1},
        "mask_size": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2, "maxItems": 2},
        "scheme": {"enum": ["online", "offline", "semi_online"]},
        "clip_len": {"type": "integer", "minimum": 1},
        "config": {"type": "object"},
        "tracks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "category", "confidence", "frames"],
                "properties": {
                    "id": {"type": "integer", "minimum": 0},
                    "category": {"type": "integer", "minimum": 0},
                    "confidence": {"type": "number", "minimum": 0},
                    "frames": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["frame_idx", "rle"],
                            "properties": {
                                "frame_idx": {"type": "integer", "minimum": 0},
                                "rle": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                            },
                            "additionalProperties": False,
                        },
                    },
                },
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}


def validate_result(doc: dict) -> None:
    """Raise jsonschema.ValidationError (or ShapeError for bad RLE sums) if ``doc`` is malformed."""
    jsonschema.validate(doc, RESULT_SCHEMA)
    h, w = doc["mask_size"]
    for track in doc["tracks"]:
        for frame in track["frames"]:
            if frame["frame_idx"] >= doc["num_frames"]:
                raise ContractError(f"frame index {frame['frame_idx']} beyond video length")
            rle.decode(frame["rle"], (h, w))


def run_inference(frames: np.ndarray, image: ClipImageEmbeddings, model, text: TextEmbeddings,
                  cfg: InferConfig = InferConfig(), video_id: int = 0,
                  config_echo: dict | None = None) -> VideoResult:
    """Segment and track every instance of one video (frames: T x Cin x H x W)."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 4 or frames.shape[0] == 0:
        raise ContractError("cannot run inference on an empty video")
    num_frames = frames.shape[0]
    length = clip_length(cfg.scheme, cfg.clip_len, num_frames)
    tracker = Tracker.from_config(cfg)
    mask_size = None
    with no_grad():
        for ci, start in enumerate(range(0, num_frames, length)):
            idx = np.arange(start, min(start + length, num_frames))
            span = tuple(int(i) for i in idx)
            out = model(VideoClip(frames[idx], ci, span), image.select(idx), text)
            ins = out.instance_scores.data.reshape(-1)
            cls = out.class_scores.data
            masks = out.masks.data > MASK_THRESHOLD
            mask_size = masks.shape[2:]
            score, category = detection_scores(ins, cls)
            keep = np.flatnonzero(ins >= cfg.keep_threshold)
            records = [ClipRecord(ci, span, cls[q].copy(), float(ins[q]), float(score[q]),
                                  int(category[q]), masks[q]) for q in keep]
            tracker.associate(out.queries.data[keep], records)
    return VideoResult(video_id, num_frames, tuple(mask_size), cfg.scheme, length,
                       tracker.tracks, dict(config_echo or {}))


def infer_video(video, model, text: TextEmbeddings, cfg: InferConfig = InferConfig(),
                config_echo: dict | None = None) -> VideoResult:
    return run_inference(video.frames, video.image_embeddings, model, text, cfg, video.video_id, config_echo)
