"""Loader and checker for the bundled hand-computed evaluator fixtures."""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources

import numpy as np

from .evaluation import TrackMasks, average_precision, id_metrics, st_iou

FIXTURE_FILE = "evaluator_fixtures.json"


def load_fixtures() -> dict:
    return json.loads(resources.files("ovvis").joinpath("data", FIXTURE_FILE).read_text())


def parse_masks(frames: list[str]) -> np.ndarray:
    """One string per frame, one '0'/'1' per pixel -> T x 1 x W boolean stack."""
    return np.array([[[c == "1" for c in f]] for f in frames], dtype=bool)


@dataclass
class FixtureOutcome:
    kind: str
    name: str
    expected: object
    got: object

    @property
    def ok(self) -> bool:
        return self.expected == self.got


def check_fixtures(data: dict | None = None) -> list[FixtureOutcome]:
    """Evaluate every fixture; floats are compared exactly against the rounded fractions."""
    data = data if data is not None else load_fixtures()
    out = []
    for case in data["st_iou"]:
        got = st_iou(parse_masks(case["pred"]), parse_masks(case["gt"]))
        out.append(FixtureOutcome("st_iou", case["name"], float(Fraction(case["expected"])), got))
    for case in data["average_precision"]:
        gts = [TrackMasks(g["video"], i, 0, parse_masks(g["masks"])) for i, g in enumerate(case["gts"])]
        preds = [TrackMasks(p["video"], i, 0, parse_masks(p["masks"]), p["confidence"])
                 for i, p in enumerate(case["preds"])]
        got = average_precision(preds, gts, exact=True)
        out.append(FixtureOutcome("average_precision", case["name"], Fraction(case["expected"]), got))
    for case in data["id_metrics"]:
        gts = [TrackMasks(g["video"], i, 0, parse_masks(g["masks"])) for i, g in enumerate(case["gts"])]
        preds = [TrackMasks(p["video"], p["id"], 0, parse_masks(p["masks"])) for p in case["preds"]]
        switches, consistency = id_metrics(preds, gts)
        exp = case["expected"]
        out.append(FixtureOutcome("id_metrics", case["name"],
                                  (exp["id_switches"], float(Fraction(exp["id_consistency"]))),
                                  (switches, consistency)))
    return out
