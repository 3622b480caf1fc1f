"""Experiment-level helpers: classification accuracy probes and ablation runs."""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .assignment import LossWeights, match
from .config import ExperimentConfig, InferConfig
from .errors import ConfigError
from .evaluation import EvalReport, evaluate, ground_truth_tracks, tracks_from_result
from .model import Model
from .query_generator import VideoClip
from .tensor import no_grad
from .tracker import infer_video
from .training import clip_ground_truth, train
from .world import EVAL, World, generate

SWEEP_AXES = ("uea_enabled", "clip_len", "scheme")
SWEEP_COLUMNS = ("axis", "value", "mAP", "mAP_b", "mAP_n", "base_accuracy", "novel_accuracy",
                 "id_switches", "id_consistency")


@dataclass
class AccuracyReport:
    base_correct: int = 0
    base_total: int = 0
    novel_correct: int = 0
    novel_total: int = 0

    @property
    def base_accuracy(self) -> float:
        return self.base_correct / self.base_total if self.base_total else float("nan")

    @property
    def novel_accuracy(self) -> float:
        return self.novel_correct / self.novel_total if self.novel_total else float("nan")

    def as_dict(self) -> dict:
        return {"base_accuracy": self.base_accuracy, "novel_accuracy": self.novel_accuracy,
                "base_total": self.base_total, "novel_total": self.novel_total}


def clip_spans(num_frames: int, clip_len: int) -> list[range]:
    """Non-overlapping spans of ``clip_len`` frames; the last may be shorter."""
    return [range(s, min(s + clip_len, num_frames)) for s in range(0, num_frames, clip_len)]


def classification_accuracy(model: Model, world: World, clip_len: int = 5, split: str = EVAL) -> AccuracyReport:
    """Argmax accuracy of class scores on queries matched to ground truth.

    Queries are matched on objectness and mask cost only, so the class
    scores being measured do not influence which query is scored.  The full
    vocabulary (base and novel) is offered to the model.
    """
    text = world.text()
    novel = world.novel_flags
    stride = model.cfg.stride
    weights = LossWeights(ins=2.0, cls=0.0, mask=5.0)
    report = AccuracyReport()
    with no_grad():
        for video in world.videos(split):
            coarse = video.coarse_masks(stride)
            for ci, span in enumerate(clip_spans(video.num_frames, clip_len)):
                idx = np.array(span)
                out = model(VideoClip(video.frames[idx], ci, tuple(span)), video.image_embeddings.select(idx), text)
                gt = clip_ground_truth(coarse, video.class_ids, idx)
                if len(gt) == 0:
                    continue
                assignment = match(out.instance_scores, out.class_scores, out.masks, gt, weights)
                pred = out.class_scores.data.argmax(axis=1)
                for p, g in assignment.pairs:
                    truth = int(gt.class_ids[g])
                    hit = int(pred[p] == truth)
                    if novel[truth]:
                        report.novel_total += 1
                        report.novel_correct += hit
                    else:
                        report.base_total += 1
                        report.base_correct += hit
    return report


def infer_split(model: Model, world: World, infer_cfg: InferConfig, split: str = EVAL,
                config_echo: dict | None = None, video_ids=None) -> list[dict]:
    """VideoResult documents for the videos of one split, in video order."""
    text = world.text()
    videos = world.videos(split)
    if video_ids is not None:
        wanted = set(int(i) for i in video_ids)
        videos = [v for v in videos if v.video_id in wanted]
    return [infer_video(v, model, text, infer_cfg, config_echo).to_json() for v in videos]


def evaluate_results(docs: list[dict], world: World, stride: int, split: str = EVAL,
                     config_echo: dict | None = None) -> EvalReport:
    """Score result documents against the ground truth of the videos they cover."""
    by_id = {v.video_id: v for v in world.videos(split)}
    preds, gts = [], []
    for doc in docs:
        preds += tracks_from_result(doc)
    for vid in sorted({d["video_id"] for d in docs}):
        gts += ground_truth_tracks(by_id[vid], stride)
    return evaluate(preds, gts, world.novel_flags, world.names, config_echo)


def parse_scheme(value: str) -> tuple[str, int | None]:
    """'online', 'offline', 'semi_online' or 'semi_online(5)' -> (scheme, clip_len)."""
    m = re.fullmatch(r"\s*(online|offline|semi_online)\s*(?:\(\s*(\d+)\s*\))?\s*", str(value))
    if not m:
        raise ConfigError(f"cannot parse scheme value {value!r}")
    return m.group(1), int(m.group(2)) if m.group(2) else None


def _sweep_row(axis: str, value, report: EvalReport, acc: AccuracyReport) -> dict:
    return {"axis": axis, "value": str(value), "mAP": report.mAP, "mAP_b": report.mAP_b,
            "mAP_n": report.mAP_n, "base_accuracy": acc.base_accuracy,
            "novel_accuracy": acc.novel_accuracy, "id_switches": report.id_switches,
            "id_consistency": report.id_consistency}


def _parse_flag(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"uea_enabled sweep value {value!r} is not a boolean")


def _inference_config(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "clip_len":
        try:
            length = int(value)
        except ValueError:
            raise ConfigError(f"clip_len sweep value {value!r} is not an integer") from None
        return cfg.replace(**{"infer.scheme": "semi_online", "infer.clip_len": length})
    scheme, length = parse_scheme(value)
    overrides = {"infer.scheme": scheme}
    if length is not None:
        overrides["infer.clip_len"] = length
    return cfg.replace(**overrides)


def run_sweep(cfg: ExperimentConfig, axis: str, values, world: World | None = None) -> list[dict]:
    """One row of metrics per value; every value shares the config seeds.

    The uea_enabled axis retrains per value.  The inference axes train once
    and vary only how the video is cut into clips.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    world = world if world is not None else generate(cfg.world)
    stride = cfg.model.stride
    rows = []
    if axis == "uea_enabled":
        for flag in [_parse_flag(v) for v in values]:
            run_cfg = cfg.replace(**{"model.uea_enabled": flag})
            model = train(run_cfg, world).model
            docs = infer_split(model, world, run_cfg.infer, config_echo=run_cfg.echo())
            report = evaluate_results(docs, world, stride, config_echo=run_cfg.echo())
            acc = classification_accuracy(model, world, run_cfg.infer.clip_len)
            rows.append(_sweep_row(axis, flag, report, acc))
        return rows
    # parse every value before paying for training
    run_cfgs = [_inference_config(cfg, axis, value) for value in values]
    model = train(cfg, world).model
    for value, run_cfg in zip(values, run_cfgs):
        docs = infer_split(model, world, run_cfg.infer, config_echo=run_cfg.echo())
        report = evaluate_results(docs, world, stride, config_echo=run_cfg.echo())
        clip_len = 1 if run_cfg.infer.scheme == "online" else run_cfg.infer.clip_len
        if run_cfg.infer.scheme == "offline":
            clip_len = cfg.world.frames_per_video
        acc = classification_accuracy(model, world, clip_len)
        rows.append(_sweep_row(axis, value, report, acc))
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def sweep_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in SWEEP_COLUMNS])
    return buf.getvalue()


def plot_sweep(rows: list[dict], axis: str, path, config_echo: dict | None = None) -> Path:
    """Line plot of the headline metrics against the sweep value (PNG)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = [r["value"] for r in rows]
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(5, 3.5), dpi=100)
    for key in ("mAP", "mAP_b", "mAP_n", "novel_accuracy", "id_consistency"):
        ys = [np.nan if r[key] is None else r[key] for r in rows]
        ax.plot(x, ys, marker="o", label=key)
    ax.set_xticks(x, labels)
    ax.set_xlabel(axis)
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=7)
    fig.tight_layout()
    path = Path(path)
    # the config rides along in a PNG text chunk; no timestamp or version is stored
    meta = {"Software": None, "Description": json.dumps(config_echo or {}, sort_keys=True)}
    fig.savefig(path, format="png", metadata=meta)
    plt.close(fig)
    return path
