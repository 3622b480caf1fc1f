"""Built-in self checks: assignment oracle, gradient checks, evaluator fixtures.

The same toy problem is reused by the test-suite, so it lives here rather
than in a test helper.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .alignment import ClipImageEmbeddings, align, project_queries
from .assignment import GroundTruthClip, LossWeights, hungarian, match, training_loss
from .config import ModelConfig, WorldConfig
from .fixtures import check_fixtures
from .gradcheck import grad_check
from .heads import TextEmbeddings
from .model import Model, init_params
from .query_generator import VideoClip
from .tensor import Tensor

GRAD_TOL = 1e-4


def brute_force_cost(costs: np.ndarray) -> float:
    """Minimum total over all injections of the smaller side into the larger one."""
    P, G = costs.shape
    if P == 0 or G == 0:
        return 0.0
    if P <= G:
        return min(sum(costs[i, cols[i]] for i in range(P)) for cols in itertools.permutations(range(G), P))
    return min(sum(costs[rows[j], j] for j in range(G)) for rows in itertools.permutations(range(P), G))


@dataclass
class ToyProblem:
    model_cfg: ModelConfig
    world_cfg: WorldConfig
    params: dict
    clip: VideoClip
    image: ClipImageEmbeddings
    text: TextEmbeddings
    gt: GroundTruthClip


def toy_problem(seed: int, num_queries: int = 2, num_gt: int = 1) -> ToyProblem:
    """A tiny smooth (gelu) model, one 2-frame clip and ``num_gt`` ground-truth instances."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x70E]))
    wcfg = WorldConfig(num_categories=3, embed_dim=4, height=4, width=4, min_size=1, max_size=2,
                       frames_per_video=2)
    mcfg = ModelConfig(num_queries=num_queries, hidden_dim=8, num_layers=1, dim_feedforward=8, stride=2,
                       activation="gelu", query_init_std=0.5)
    params = init_params(mcfg, wcfg, seed)
    # move the alignment maps off the identity so their gradients are generic
    for name in ("uea.wk", "uea.wv"):
        params[name] = Tensor(params[name].data + 0.3 * rng.standard_normal(params[name].shape),
                              requires_grad=True)
    frames = rng.standard_normal((2, wcfg.input_channels, 4, 4))
    image = rng.standard_normal((2, wcfg.embed_dim))
    image /= np.linalg.norm(image, axis=1, keepdims=True)
    protos = np.linalg.qr(rng.standard_normal((wcfg.embed_dim, wcfg.embed_dim)))[0][:3]
    text = TextEmbeddings(protos, ["a", "b", "c"], [False, False, True])
    masks = (rng.random((num_gt, 2, 2, 2)) < 0.5).astype(float)
    gt = GroundTruthClip(rng.integers(0, 3, size=num_gt), masks)
    return ToyProblem(mcfg, wcfg, params, VideoClip(frames, 0, (0, 1)), ClipImageEmbeddings(image), text, gt)


def loss_gradient_error(problem: ToyProblem, max_elements: int | None = 3, seed: int = 0) -> float:
    """Max relative error of the matched training loss w.r.t. every model parameter.

    The assignment is computed once at the starting point and then held
    fixed, as it is during training.
    """
    names = sorted(problem.params)
    model = Model(problem.model_cfg, problem.world_cfg, problem.params)
    with T.no_grad():
        out = model(problem.clip, problem.image, problem.text)
    assignment = match(out.instance_scores, out.class_scores, out.masks, problem.gt)

    def f(*values):
        m = Model(problem.model_cfg, problem.world_cfg, dict(zip(names, values)))
        o = m(problem.clip, problem.image, problem.text)
        return training_loss(o.instance_scores, o.class_scores, o.masks, problem.gt, LossWeights(), assignment)

    return grad_check(f, *[problem.params[n] for n in names], max_elements=max_elements, seed=seed)


def alignment_gradient_error(seed: int) -> float:
    """Gradient error of the alignment path: projection MLP, cross-attention, similarity scores."""
    problem = toy_problem(seed)
    rng = np.random.default_rng(seed)
    names = ["uea.mlp1.w", "uea.mlp1.b", "uea.mlp2.w", "uea.mlp2.b", "uea.wk", "uea.wv"]
    q = Tensor(rng.standard_normal((3, problem.model_cfg.hidden_dim)))
    text = Tensor(problem.text.embeddings)

    def f(q, *values):
        p = dict(zip(names, values))
        e = align(project_queries(q, p, "gelu"), problem.image, p).embeddings
        return T.softmax(e @ text.T)

    return grad_check(f, q, *[problem.params[n] for n in names], seed=seed)


def primitive_cases(rng: np.random.Generator) -> list[tuple[str, callable, list[Tensor]]]:
    """(name, function, inputs) for each differentiable primitive, away from kinks."""
    def r(*shape):
        return Tensor(rng.standard_normal(shape))

    def away_from_zero(*shape):
        x = rng.standard_normal(shape)
        return Tensor(np.where(np.abs(x) < 0.1, 0.5 * np.sign(x) + 0.1, x))

    def positive(*shape):
        return Tensor(rng.uniform(0.5, 2.0, shape))

    return [
        ("add", T.add, [r(3, 4), r(3, 4)]),
        ("add_broadcast_row", T.add, [r(3, 4), r(4)]),
        ("add_scalar", T.add, [r(3, 4), r()]),
        ("sub", T.sub, [r(3, 4), r(3, 4)]),
        ("mul", T.mul, [r(3, 4), r(3, 4)]),
        ("div", T.div, [r(3, 4), positive(3, 4)]),
        ("scale", lambda x: T.scale(x, -1.7), [r(3, 4)]),
        ("matmul", T.matmul, [r(3, 4), r(4, 2)]),
        ("sigmoid", T.sigmoid, [r(3, 4)]),
        ("relu", T.relu, [away_from_zero(3, 4)]),
        ("gelu", T.gelu, [r(3, 4)]),
        ("exp", T.exp, [r(3, 4)]),
        ("log", T.log, [positive(3, 4)]),
        ("clip_interior", lambda x: T.clip(x, -10.0, 10.0), [r(3, 4)]),
        ("softmax", T.softmax, [r(3, 5)]),
        ("layer_norm", T.layer_norm, [r(3, 6)]),
        ("l2_normalize", T.l2_normalize, [r(3, 4)]),
        ("transpose", lambda x: T.transpose(x, (1, 0)), [r(3, 4)]),
        ("reshape", lambda x: T.reshape(x, (2, 6)), [r(3, 4)]),
        ("reduce_sum", lambda x: T.reduce_sum(x, axis=0), [r(3, 4)]),
        ("reduce_mean", lambda x: T.reduce_mean(x, axis=1), [r(3, 4)]),
        ("concat", lambda a, b: T.concat([a, b], axis=0), [r(2, 4), r(3, 4)]),
        ("getitem", lambda x: T.getitem(x, (np.array([0, 2, 0]), slice(None))), [r(3, 4)]),
        ("stack_rows", lambda a, b: T.stack_rows([a, b]), [r(4), r(4)]),
        ("dot_rows", T.dot_rows, [r(3, 4), r(3, 4)]),
    ]


def primitive_gradient_errors(seed: int) -> dict[str, float]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9A1]))
    return {name: grad_check(fn, *inputs, seed=seed) for name, fn, inputs in primitive_cases(rng)}


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str


def run_selftest(seeds: int = 5) -> list[CheckResult]:
    """Quick versions of the oracle checks; every entry must come back ok."""
    results = []
    worst_gap = 0.0
    for P in range(1, 5):
        for G in range(1, 5):
            for s in range(seeds * 4):
                rng = np.random.default_rng([P, G, s])
                c = rng.integers(0, 5, size=(P, G)).astype(float) if s % 2 else rng.random((P, G))
                worst_gap = max(worst_gap, abs(hungarian(c).total_cost - brute_force_cost(c)))
    results.append(CheckResult("hungarian_vs_brute_force", worst_gap < 1e-12, f"max |gap| {worst_gap:.3g}"))
    prim = max(max(primitive_gradient_errors(s).values()) for s in range(seeds))
    results.append(CheckResult("grad_primitives", prim < GRAD_TOL, f"max rel err {prim:.3g}"))
    uea = max(alignment_gradient_error(s) for s in range(seeds))
    results.append(CheckResult("grad_alignment", uea < GRAD_TOL, f"max rel err {uea:.3g}"))
    loss = max(loss_gradient_error(toy_problem(s), seed=s) for s in range(seeds))
    results.append(CheckResult("grad_full_loss", loss < GRAD_TOL, f"max rel err {loss:.3g}"))
    outcomes = check_fixtures()
    bad = [f"{o.kind}/{o.name}" for o in outcomes if not o.ok]
    results.append(CheckResult("evaluator_fixtures", not bad,
                               f"{len(outcomes) - len(bad)}/{len(outcomes)} match" + (f"; failed {bad}" if bad else "")))
    return results
