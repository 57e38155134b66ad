"""
Registry of finite-difference checks over every differentiable operation.

Each check builds a small random instance from a seeded stream and returns
a loss over a ParamGroup together with its analytic gradient. Instances
stay small (n <= 6, dims <= 4) so the whole suite runs in seconds.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import torch

from mldgg.core.numcore import DTYPE, DiffParam, ParamGroup, SeededRng, autograd_grads, finite_diff_check
from mldgg.data.graphdata import Graph, normalize_dense, split_episode
from mldgg.models.gnn import GnnParams, gcn_backward, gcn_forward, gcn_forward_cached
from mldgg.models.replearner import RepParams, classify, decode_log_density, elbo, encode, prior_log_prob
from mldgg.models.structlearner import (
    StructLearnerConfig, StructParams, draw_adjacency, edge_probs, score_function_surrogate,
)
from mldgg.training.metaloop import TaskData, TaskModel, TrainConfig, make_episode, task_loss

logger = logging.getLogger(__name__)

LossFn = Callable[[ParamGroup], torch.Tensor]
Instance = Tuple[LossFn, ParamGroup, Optional[ParamGroup]]

DEFAULT_TOLERANCE = 1e-4
DEFAULT_INSTANCES = 10


@dataclass(frozen=True)
class GradCheck:
    """A named operation and a builder of random check instances"""

    name: str
    build: Callable[[SeededRng], Instance]


@dataclass
class CheckResult:
    name: str
    max_error: float
    instances: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def _prefixed(group: ParamGroup, prefix: str, kind=ParamGroup):
    """The params under prefix with the prefix stripped, rebuilt as kind"""
    start = len(prefix) + 1
    return kind(DiffParam(p.name[start:], p.value) for p in group if p.name.startswith(prefix + "."))


def _merge(**groups: ParamGroup) -> ParamGroup:
    return ParamGroup(DiffParam(f"{prefix}.{p.name}", p.value) for prefix, group in groups.items() for p in group)


def _check_edge_probs(rng: SeededRng) -> Instance:
    R = rng.child(0).normal(5, 3)
    weights = rng.child(1).normal(5, 5)
    params = StructParams.initialize(3, 2, rng.child(2))
    params = params.replace({"w_hat": 1.0 + 0.3 * rng.child(3).normal(3)})
    return (lambda g: (weights * edge_probs(R, g)).sum()), params, None


def _check_reinforce(rng: SeededRng) -> Instance:
    R = rng.child(0).normal(4, 3)
    params = StructParams.initialize(3, 2, rng.child(1))
    with torch.no_grad():
        A = draw_adjacency(edge_probs(R, params), 3, rng.child(2))
    rewards = rng.child(3).normal(3)
    return (lambda g: score_function_surrogate(A, rewards, edge_probs(R, g))), params, None


def _gcn_instance(rng: SeededRng):
    n = 5
    upper = torch.triu((rng.child(0).uniform(n, n) < 0.5).to(DTYPE), diagonal=1)
    learned = torch.triu((rng.child(1).uniform(n, n) < 0.5).to(DTYPE), diagonal=1)
    A_hat = normalize_dense(upper + upper.T)
    A_prime_hat = normalize_dense(learned + learned.T)
    gnn = GnnParams.initialize([3, 4, 2], rng.child(2))
    X = rng.child(3).normal(n, 3)
    upstream = rng.child(4).normal(n, 2)
    lam = float(rng.child(5).uniform(1))
    params = ParamGroup([DiffParam.leaf("features", X)] + [DiffParam.leaf(f"gnn.{p.name}", p.value) for p in gnn])
    return A_hat, A_prime_hat, lam, upstream, params


def _check_gcn_forward(rng: SeededRng) -> Instance:
    A_hat, A_prime_hat, lam, upstream, params = _gcn_instance(rng)

    def loss(g):
        return (upstream * gcn_forward(g.value("features"), A_hat, A_prime_hat, _prefixed(g, "gnn", GnnParams),
                                       lam)).sum()
    return loss, params, None


def _check_gcn_backward(rng: SeededRng) -> Instance:
    A_hat, A_prime_hat, lam, upstream, params = _gcn_instance(rng)
    gnn = _prefixed(params, "gnn", GnnParams)
    _, cache = gcn_forward_cached(params.value("features"), A_hat, A_prime_hat, gnn, lam)
    weight_grads, feature_grad = gcn_backward(upstream, cache, gnn)
    analytic = ParamGroup([DiffParam("features", feature_grad)]
                          + [DiffParam(f"gnn.{p.name}", p.value) for p in weight_grads])

    def loss(g):
        return (upstream * gcn_forward(g.value("features"), A_hat, A_prime_hat, _prefixed(g, "gnn", GnnParams),
                                       lam)).sum()
    return loss, params, analytic


def _rep_params(rng: SeededRng):
    params = RepParams.initialize(3, 2, 2, 3, rng)
    # Move biases and the prior away from their symmetric initial values
    return params.map(lambda p: p.value + 0.2 * rng.child(100 + params.names().index(p.name)).normal(*p.shape))


def _check_encode(rng: SeededRng) -> Instance:
    params = _rep_params(rng.child(0)).encoder()
    R = rng.child(1).normal(4, 3)
    weights = rng.child(2).normal(4, 4, 2)

    def loss(g):
        q_s, q_v = encode(R, g)
        stacked = torch.stack([q_s.mean, q_s.log_var, q_v.mean, q_v.log_var])
        return (weights * stacked).sum()
    return loss, params, None


def _check_decode(rng: SeededRng) -> Instance:
    params = _rep_params(rng.child(0)).decoder()
    r = rng.child(1).normal(4, 3)
    s = rng.child(2).normal(4, 2)
    v = rng.child(3).normal(4, 2)
    return (lambda g: decode_log_density(r, s, v, g).sum()), params, None


def _check_classify(rng: SeededRng) -> Instance:
    params = _rep_params(rng.child(0)).classifier()
    s = rng.child(1).normal(4, 2)
    weights = rng.child(2).normal(4, 3)
    return (lambda g: (weights * torch.log(classify(s, g))).sum()), params, None


def _check_prior(rng: SeededRng) -> Instance:
    params = _rep_params(rng.child(0)).prior()
    z = rng.child(1).normal(6, 4)
    return (lambda g: prior_log_prob(z, g, "joint").sum()), params, None


def _elbo_check(mode: str):
    def build(rng: SeededRng) -> Instance:
        params = _rep_params(rng.child(0))
        R = rng.child(1).normal(4, 3)
        y = rng.child(2).integers(0, 3, size=4)
        noise = (rng.child(3).normal(3, 4, 2), rng.child(4).normal(3, 4, 2))
        return (lambda g: elbo(R, torch.as_tensor(y), 3, mode, g, noise=noise).value), params, None
    return build


def _check_task_loss(rng: SeededRng) -> Instance:
    n = 6
    cfg = TrainConfig(hidden_dim=4, rep_dim=3, semantic_dim=2, variation_dim=2, reg_weight=0.5, elbo_samples=2,
                      struct=StructLearnerConfig(num_samples=3, num_pivots=2, alpha=0.1, beta=0.1))
    edges = tuple((i, i + 1) for i in range(n - 1))
    graph = Graph(n=n, edges=edges, features=rng.child(0).normal(n, 3), labels=tuple(i % 2 for i in range(n)),
                  num_classes=2, domain_name="check")
    struct = StructParams.initialize(3, 2, rng.child(1))
    rep = RepParams.initialize(3, 2, 2, 2, rng.child(2))
    gnn = GnnParams.initialize(cfg.gnn_dims(3), rng.child(3))
    episode = make_episode(TaskData.from_graph(graph), struct, cfg, rng.child(4),
                           split=split_episode(graph, 0.5, rng.child(5)))
    params = _merge(struct=struct, rep=rep, gnn=gnn)

    def loss(g):
        model = TaskModel(gnn=_prefixed(g, "gnn", GnnParams), struct=_prefixed(g, "struct", StructParams),
                          rep=_prefixed(g, "rep", RepParams))
        return task_loss(episode, episode.split.support, model, cfg, rng.child(6)).total
    return loss, params, None


REGISTRY: Dict[str, GradCheck] = {
    check.name: check for check in [
        GradCheck("edge_probs", _check_edge_probs),
        GradCheck("reinforce_surrogate", _check_reinforce),
        GradCheck("gcn_forward", _check_gcn_forward),
        GradCheck("gcn_backward", _check_gcn_backward),
        GradCheck("encode", _check_encode),
        GradCheck("decode_log_density", _check_decode),
        GradCheck("classify", _check_classify),
        GradCheck("prior_log_prob", _check_prior),
        GradCheck("elbo_joint", _elbo_check("joint")),
        GradCheck("elbo_independent", _elbo_check("independent")),
        GradCheck("task_loss", _check_task_loss),
    ]
}


def run_gradchecks(checks: Optional[Sequence[GradCheck]] = None, instances: int = DEFAULT_INSTANCES,
                   tolerance: float = DEFAULT_TOLERANCE, seed: int = 0) -> List[CheckResult]:
    """Worst relative error of every check over its random instances"""
    checks = list(REGISTRY.values()) if checks is None else list(checks)
    rng = SeededRng(seed)
    results = []
    for index, check in enumerate(checks):
        worst = 0.0
        for i in range(instances):
            loss_fn, params, analytic = check.build(rng.child(index).child(i))
            if analytic is None:
                analytic = autograd_grads(loss_fn, params)
            worst = max(worst, finite_diff_check(loss_fn, params, analytic))
        result = CheckResult(check.name, worst, instances, tolerance)
        level = logging.DEBUG if result.passed else logging.WARNING
        logger.log(level, "gradcheck %s: max rel error %.2e over %d instances", check.name, worst, instances)
        results.append(result)
    return results
