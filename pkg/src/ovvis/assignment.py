"""Optimal bipartite assignment and the matched set-prediction loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Tensor

BCE_EPS = 1e-12
DICE_EPS = 1.0


@dataclass(frozen=True)
class LossWeights:
    ins: float = 2.0
    cls: float = 2.0
    mask: float = 5.0

    def __post_init__(self):
        if min(self.ins, self.cls, self.mask) < 0:
            raise ContractError("loss weights must be non-negative")


@dataclass
class Assignment:
    pairs: list  # [(pred_index, gt_index)] sorted by pred_index
    total_cost: float

    @property
    def pred_indices(self) -> np.ndarray:
        return np.array([p for p, _ in self.pairs], dtype=int)

    @property
    def gt_indices(self) -> np.ndarray:
        return np.array([g for _, g in self.pairs], dtype=int)


@dataclass
class GroundTruthClip:
    """Instances of one clip; ``class_ids`` index the vocabulary given to the model."""

    class_ids: np.ndarray  # G
    masks: np.ndarray  # G x T x h x w, binary
    present: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.class_ids = np.asarray(self.class_ids, dtype=int).reshape(-1)
        self.masks = np.asarray(self.masks, dtype=np.float64)
        if len(self.masks) != len(self.class_ids):
            raise ShapeError("one mask stack per ground-truth instance required")
        if self.masks.size and not np.all((self.masks == 0) | (self.masks == 1)):
            raise ContractError("ground-truth masks must be binary")
        if self.present is None:
            self.present = np.ones(len(self.class_ids), dtype=bool)

    def __len__(self):
        return len(self.class_ids)


# ---------------------------------------------------------------------------
# Hungarian algorithm
# ---------------------------------------------------------------------------

def _solve_square(c: list[list[float]]):
    """Shortest-augmenting-path Hungarian method on a square matrix.

    Returns (row -> col list, row potentials u, col potentials v) with
    c[i][j] - u[i] - v[j] >= 0 and equality on the matched edges.
    """
    n = len(c)
    inf = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = c[i0 - 1]
            ui0 = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    row_to_col = [0] * n
    for j in range(1, n + 1):
        row_to_col[p[j] - 1] = j - 1
    return row_to_col, u[1:], v[1:]


def _path_total(square: np.ndarray, row_to_col) -> float:
    total = 0.0
    for i, j in enumerate(row_to_col):
        total += square[i, j]
    return total


def _lexicographic_min(tight: list[list[int]], row_to_col: list[int]) -> list[int]:
    """Smallest row->col sequence among perfect matchings of the tight-edge graph."""
    n = len(row_to_col)
    match = list(row_to_col)
    owner = [0] * n
    for r, c in enumerate(match):
        owner[c] = r

    for i in range(n):
        target = match[i]
        for j in tight[i]:
            if j >= target:
                break
            if owner[j] < i:
                continue
            # Alternating cycle: i takes j, owner of j moves on, ..., someone takes target.
            path: list[tuple[int, int]] = []
            seen_cols = {j}

            def dfs(row: int) -> bool:
                for col in tight[row]:
                    if col in seen_cols or owner[col] < i:
                        continue
                    seen_cols.add(col)
                    if col == target:
                        path.append((row, col))
                        return True
                    if owner[col] > i and dfs(owner[col]):
                        path.append((row, col))
                        return True
                return False

            if dfs(owner[j]):
                path.append((i, j))
                for r, c in path:
                    match[r] = c
                    owner[c] = r
                break
    return match


def hungarian(costs) -> Assignment:
    """Minimum-cost assignment of size min(P, G).

    Among optimal assignments, the pair list (sorted by prediction index) is
    the lexicographically smallest one.
    """
    c = np.asarray(costs, dtype=np.float64)
    if c.ndim != 2:
        raise ShapeError(f"cost matrix must be 2-D, got shape {c.shape}")
    if np.isnan(c).any():
        raise ContractError("cost matrix contains NaN")
    if not np.isfinite(c).all():
        raise ContractError("cost matrix contains infinite entries")
    P, G = c.shape
    if P == 0 or G == 0:
        return Assignment([], 0.0)
    n = max(P, G)
    square = np.zeros((n, n))
    square[:P, :G] = c
    rows = square.tolist()
    row_to_col, u, v = _solve_square(rows)
    # ties are judged at rounding scale of the potentials, relative to the costs
    tol = 8 * n * np.finfo(np.float64).eps * float(np.abs(c).max())
    reduced = square - np.asarray(u)[:, None] - np.asarray(v)[None, :]
    tight = [[int(j) for j in np.flatnonzero(reduced[i] <= tol)] for i in range(n)]
    for i, j in enumerate(row_to_col):
        if j not in tight[i]:
            tight[i].append(j)
            tight[i].sort()
    match = _lexicographic_min(tight, row_to_col)
    if _path_total(square, match) > _path_total(square, row_to_col):
        match = row_to_col
    pairs = [(i, j) for i, j in enumerate(match) if i < P and j < G]
    total = 0.0
    for i, j in pairs:
        total += c[i, j]
    return Assignment(pairs, float(total))


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _bce_np(p: np.ndarray, target) -> np.ndarray:
    p = np.clip(p, BCE_EPS, 1 - BCE_EPS)
    return -(target * np.log(p) + (1 - target) * np.log(1 - p))


def binary_cross_entropy(p: Tensor, target) -> Tensor:
    """Elementwise BCE of probabilities ``p`` against a constant target."""
    target = np.broadcast_to(np.asarray(target, dtype=np.float64), p.shape)
    pc = T.clip(p, BCE_EPS, 1 - BCE_EPS)
    if np.all(target == 1):
        return -T.log(pc)
    if np.all(target == 0):
        return -T.log(1.0 - pc)
    return -(T.log(pc) * Tensor(target) + T.log(1.0 - pc) * Tensor(1.0 - target))


def dice_loss(pred: Tensor, gt) -> Tensor:
    """1 - (2 sum(p g) + 1) / (sum p + sum g + 1) over all elements."""
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"dice_loss: prediction {pred.shape} vs target {gt.shape}")
    p = pred.reshape(-1)
    g = gt.reshape(-1)
    inter = (p * Tensor(g)).sum()
    return 1.0 - (T.scale(inter, 2.0) + DICE_EPS) / (p.sum() + (float(g.sum()) + DICE_EPS))


def _batched_dice(pred: Tensor, gt: np.ndarray) -> Tensor:
    """Per-row dice loss for m x npix predictions against m x npix targets."""
    inter = (pred * Tensor(gt)).sum(axis=1)
    denom = pred.sum(axis=1) + Tensor(gt.sum(axis=1) + DICE_EPS)
    return 1.0 - (T.scale(inter, 2.0) + DICE_EPS) / denom


def pairwise_cost(instance_scores, class_scores, masks, gt: GroundTruthClip,
                  weights: LossWeights = LossWeights(), all_class_bce: bool = False) -> np.ndarray:
    """P x G matching cost, computed on plain arrays (no graph recording)."""
    ins = np.asarray(getattr(instance_scores, "data", instance_scores), dtype=np.float64).reshape(-1)
    cls = np.asarray(getattr(class_scores, "data", class_scores), dtype=np.float64)
    m = np.asarray(getattr(masks, "data", masks), dtype=np.float64)
    P, K = cls.shape
    G = len(gt)
    if G == 0:
        return np.zeros((P, 0))
    if gt.class_ids.min() < 0 or gt.class_ids.max() >= K:
        raise ContractError(f"ground-truth class id out of range [0, {K})")
    if m.shape[1:] != gt.masks.shape[1:]:
        raise ShapeError(f"mask shapes differ: {m.shape[1:]} vs {gt.masks.shape[1:]}")
    cost_ins = _bce_np(ins, 1.0)[:, None]
    if all_class_bce:
        onehot = np.eye(K)[gt.class_ids]  # G x K
        lp, l1p = np.log(np.clip(cls, BCE_EPS, 1)), np.log(np.clip(1 - cls, BCE_EPS, 1))
        cost_cls = -(lp @ onehot.T + l1p @ (1 - onehot).T) / K
    else:
        cost_cls = _bce_np(cls[:, gt.class_ids], 1.0)
    pm = m.reshape(P, -1)
    gm = gt.masks.reshape(G, -1)
    npix = pm.shape[1]
    dice = 1.0 - (2.0 * pm @ gm.T + DICE_EPS) / (pm.sum(1)[:, None] + gm.sum(1)[None, :] + DICE_EPS)
    pc = np.clip(pm, BCE_EPS, 1 - BCE_EPS)
    bce = -(np.log(pc) @ gm.T + np.log(1 - pc) @ (1 - gm).T) / npix
    return weights.ins * cost_ins + weights.cls * cost_cls + weights.mask * (dice + bce)


def match(instance_scores, class_scores, masks, gt: GroundTruthClip,
          weights: LossWeights = LossWeights(), all_class_bce: bool = False) -> Assignment:
    return hungarian(pairwise_cost(instance_scores, class_scores, masks, gt, weights, all_class_bce))


def training_loss(instance_scores: Tensor, class_scores: Tensor, masks: Tensor, gt: GroundTruthClip,
                  weights: LossWeights = LossWeights(), assignment: Assignment | None = None,
                  all_class_bce: bool = False) -> Tensor:
    """Matched loss averaged over predictions.

    Matched predictions pay objectness, classification and mask terms;
    unmatched ones pay only the objectness term against 0.  The assignment
    is a constant of the graph.
    """
    n = class_scores.shape[0]
    if assignment is None:
        assignment = match(instance_scores, class_scores, masks, gt, weights, all_class_bce)
    pi, gi = assignment.pred_indices, assignment.gt_indices
    target = np.zeros(n)
    target[pi] = 1.0
    total = T.scale(binary_cross_entropy(instance_scores.reshape(n), target).sum(), weights.ins)
    if len(pi):
        K = class_scores.shape[1]
        classes = gt.class_ids[gi]
        if all_class_bce:
            onehot = np.eye(K)[classes]
            l_cls = binary_cross_entropy(class_scores[pi], onehot).mean(axis=1).sum()
        else:
            l_cls = binary_cross_entropy(class_scores[pi, classes], 1.0).sum()
        m = len(pi)
        pred = masks[pi].reshape(m, -1)
        gmask = gt.masks[gi].reshape(m, -1)
        l_dice = _batched_dice(pred, gmask).sum()
        l_bce = binary_cross_entropy(pred, gmask).mean(axis=1).sum()
        total = total + T.scale(l_cls, weights.cls) + T.scale(l_dice + l_bce, weights.mask)
    return T.scale(total, 1.0 / n)
