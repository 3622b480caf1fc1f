"""Run-length encoding of binary masks.

Masks are flattened row-major.  Counts alternate between runs of zeros and
runs of ones, always starting with zeros (so the first count may be 0).
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError


def encode(mask: np.ndarray) -> list[int]:
    flat = np.asarray(mask).reshape(-1).astype(bool)
    if flat.size == 0:
        return []
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return [int(c) for c in counts]


def decode(counts, shape) -> np.ndarray:
    shape = tuple(int(s) for s in shape)
    total = int(np.prod(shape))
    counts = [int(c) for c in counts]
    if any(c < 0 for c in counts):
        raise ContractError("run lengths must be non-negative")
    if sum(counts) != total:
        raise ShapeError(f"run lengths sum to {sum(counts)}, mask has {total} pixels")
    values = np.arange(len(counts)) % 2
    return np.repeat(values, counts).astype(bool).reshape(shape)
