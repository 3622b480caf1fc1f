"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import GradCheckError
from .tensor import Tensor, no_grad


def _scalarize(out: Tensor, weights: np.ndarray | None) -> Tensor:
    if out.size == 1:
        return out.reshape(())
    return (out * Tensor(weights)).sum()


def grad_check(
    f: Callable[..., Tensor],
    *inputs: Tensor,
    eps: float = 1e-5,
    max_elements: int | None = None,
    seed: int = 0,
) -> float:
    """Largest relative error between backprop and central differences.

    ``f`` maps the input tensors to a tensor.  Non-scalar outputs are reduced
    with a fixed random weighting so every output element contributes.  Each
    error is ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.

    ``max_elements`` restricts the check to that many randomly chosen
    coordinates per input, which keeps checks on whole models affordable.
    """
    rng = np.random.default_rng(seed)
    leaves = [Tensor(np.array(x.data, dtype=np.float64), requires_grad=True) for x in inputs]
    out = f(*leaves)
    weights = rng.standard_normal(out.shape) if out.size > 1 else None
    loss = _scalarize(out, weights)
    loss.backward()

    def evaluate(values: list[np.ndarray]) -> float:
        with no_grad():
            return _scalarize(f(*[Tensor(v) for v in values]), weights).item()

    base = [leaf.data.copy() for leaf in leaves]
    worst = 0.0
    for i, leaf in enumerate(leaves):
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        flat_idx = np.arange(leaf.size)
        if max_elements is not None and leaf.size > max_elements:
            flat_idx = np.sort(rng.choice(leaf.size, size=max_elements, replace=False))
        for j in flat_idx:
            idx = np.unravel_index(j, leaf.shape)
            plus = [b.copy() for b in base]
            minus = [b.copy() for b in base]
            plus[i][idx] += eps
            minus[i][idx] -= eps
            numeric = (evaluate(plus) - evaluate(minus)) / (2 * eps)
            a = float(analytic[idx])
            if np.isnan(a) or np.isnan(numeric):
                raise GradCheckError(f"NaN gradient at input {i}, index {idx}")
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
