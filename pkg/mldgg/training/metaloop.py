"""
Bi-level meta-training over source domains, target fine-tuning and the
ablation modes.

Each source graph is one task. Per epoch every task gets a fresh
support / query split and one set of sampled structures; the inner loop
adapts a copy of the parameters on the support nodes and the outer loop
moves the shared initialization along the query-loss gradient.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field

from mldgg.core.errors import DivergenceError, ShapeError, ValidationError
from mldgg.core.numcore import G, DenseMatrix, ParamGroup, SeededRng
from mldgg.data.graphdata import (
    DEFAULT_SUPPORT_FRACTION, EpisodeSplit, Graph, normalize_adjacency, pad_graph, split_episode, zero_pad_align,
)
from mldgg.models.gnn import GnnParams, gcn_forward
from mldgg.models.replearner import HeadParams, RepParams, classifier_logits, elbo, encode, head_logits, predict
from mldgg.models.structlearner import (
    StructLearnerConfig, StructParams, StructureDraw, draw_structures, edge_probs, score_function_surrogate,
)

logger = logging.getLogger(__name__)

ERM_GNN = "shared"


class AblationMode(str, Enum):
    FULL = "Full"
    NO_SL = "NoSL"
    NO_RL = "NoRL"
    NO_MAML = "NoMAML"
    NO_INNER_SL = "NoInnerSL"
    NO_INNER_RL = "NoInnerRL"
    ERM = "ERM"


class MamlOrder(str, Enum):
    FIRST = "first"
    SECOND = "second"


# Parameter groups adapted in the inner loop / moved by the outer step
INNER_GROUPS = {
    AblationMode.FULL: ("struct", "rep", "gnn"),
    AblationMode.NO_SL: ("rep", "gnn"),
    AblationMode.NO_RL: ("struct", "head", "gnn"),
    AblationMode.NO_INNER_SL: ("rep", "gnn"),
    AblationMode.NO_INNER_RL: ("struct", "gnn"),
    AblationMode.NO_MAML: ("struct", "rep", "gnn"),
    AblationMode.ERM: ("head", "gnn"),
}
OUTER_GROUPS = {
    AblationMode.FULL: ("struct", "rep"),
    AblationMode.NO_SL: ("rep",),
    AblationMode.NO_RL: ("struct", "head"),
    AblationMode.NO_INNER_SL: ("struct", "rep"),
    AblationMode.NO_INNER_RL: ("struct", "rep"),
}


class TrainConfig(BaseModel):
    """Every knob of meta-training and target fine-tuning"""

    model_config = ConfigDict(extra="forbid")

    inner_lr: float = Field(1e-3, ge=0.0)
    outer_lr: float = Field(1e-1, ge=0.0)
    inner_steps: int = Field(5, ge=0)
    tasks_per_step: Optional[int] = Field(None, ge=1)
    reg_weight: float = Field(0.01, ge=0.0, le=1.0)
    mix: float = Field(0.8, ge=0.0, le=1.0)
    ablation: AblationMode = AblationMode.FULL
    maml_order: MamlOrder = MamlOrder.FIRST
    elbo_samples: int = Field(1, ge=1)
    struct: StructLearnerConfig = Field(default_factory=StructLearnerConfig)
    epochs: int = Field(50, ge=0)
    seed: int = Field(0, ge=0)
    support_fraction: float = Field(DEFAULT_SUPPORT_FRACTION, gt=0.0, lt=1.0)
    hidden_dim: int = Field(16, ge=1)
    rep_dim: int = Field(16, ge=1)
    num_layers: int = Field(2, ge=1)
    semantic_dim: int = Field(8, ge=1)
    variation_dim: int = Field(8, ge=1)
    prior_mode: Literal["joint", "independent"] = "joint"
    finetune_steps: int = Field(10, ge=0)
    finetune_lr: float = Field(5e-2, gt=0.0)
    erm_lr: float = Field(5e-2, gt=0.0)
    reset_gnn_each_epoch: bool = False

    @property
    def uses_structure(self) -> bool:
        return self.ablation not in (AblationMode.NO_SL, AblationMode.ERM)

    @property
    def uses_head(self) -> bool:
        return self.ablation in (AblationMode.NO_RL, AblationMode.ERM)

    @property
    def second_order(self) -> bool:
        return self.maml_order == MamlOrder.SECOND

    def gnn_dims(self, num_features: int) -> List[int]:
        return [num_features] + [self.hidden_dim] * (self.num_layers - 1) + [self.rep_dim]


@dataclass
class TaskData:
    """A source or target graph with its normalized operator"""

    graph: Graph
    A_hat: DenseMatrix

    @classmethod
    def from_graph(cls, graph: Graph) -> "TaskData":
        return cls(graph, normalize_adjacency(graph))

    @property
    def name(self) -> str:
        return self.graph.domain_name

    @property
    def X(self) -> DenseMatrix:
        return self.graph.features

    @property
    def labels(self) -> torch.Tensor:
        return self.graph.label_tensor


@dataclass
class Episode:
    """One task in one epoch: its split and its sampled structures"""

    task: TaskData
    split: EpisodeSplit
    draw: Optional[StructureDraw] = None

    @property
    def all_nodes(self) -> Tuple[int, ...]:
        return tuple(range(self.task.graph.n))


@dataclass
class TaskModel:
    """The parameters one forward pass over one graph needs"""

    gnn: GnnParams
    struct: Optional[StructParams] = None
    rep: Optional[RepParams] = None
    head: Optional[HeadParams] = None
    episode: Optional[Episode] = None

    def group(self, name: str) -> ParamGroup:
        return getattr(self, name)

    def with_groups(self, updates: Dict[str, ParamGroup]) -> "TaskModel":
        return replace(self, **updates)

    def detach(self) -> "TaskModel":
        return self.with_groups({
            name: self.group(name).detach()
            for name in ("gnn", "struct", "rep", "head") if self.group(name) is not None
        })


@dataclass
class LossTerms:
    total: torch.Tensor
    task_term: float
    reg_term: float


@dataclass
class EpisodeLosses:
    """Support and query loss of one task plus the query breakdown"""

    support: float
    query: float
    neg_elbo: float
    reg: float


@dataclass
class EpochMetrics:
    epoch: int
    support_loss: float
    query_loss: float
    neg_elbo: float
    reg_loss: float

    @classmethod
    def from_episodes(cls, epoch: int, losses: Sequence[EpisodeLosses]) -> "EpochMetrics":
        count = max(1, len(losses))
        return cls(
            epoch=epoch,
            support_loss=sum(l.support for l in losses) / count,
            query_loss=sum(l.query for l in losses) / count,
            neg_elbo=sum(l.neg_elbo for l in losses) / count,
            reg_loss=sum(l.reg for l in losses) / count,
        )

    def as_row(self) -> List:
        return [self.epoch, self.support_loss, self.query_loss, self.neg_elbo, self.reg_loss]


@dataclass
class MetaState:
    """Shared initialization plus the per-task GNNs (and per-task copies for NoMAML)"""

    struct: StructParams
    rep: RepParams
    head: HeadParams
    gnns: Dict[str, GnnParams]
    epoch: int = 0
    task_copies: Dict[str, TaskModel] = field(default_factory=dict)

    def task_model(self, domain: str) -> TaskModel:
        return TaskModel(gnn=self.gnns[domain], struct=self.struct, rep=self.rep, head=self.head)

    def named_groups(self) -> Dict[str, ParamGroup]:
        """Every parameter group keyed by a stable prefix"""
        groups = {"struct": self.struct, "rep": self.rep, "head": self.head}
        for name in sorted(self.gnns):
            groups[f"gnn.{name}"] = self.gnns[name]
        for name in sorted(self.task_copies):
            copy = self.task_copies[name]
            for part in ("struct", "rep"):
                groups[f"copy.{name}.{part}"] = copy.group(part)
        return groups

    def clone(self) -> "MetaState":
        return MetaState(
            struct=self.struct.clone(),
            rep=self.rep.clone(),
            head=self.head.clone(),
            gnns={k: v.clone() for k, v in self.gnns.items()},
            epoch=self.epoch,
            task_copies={k: v.detach() for k, v in self.task_copies.items()},
        )


def initial_gnn(cfg: TrainConfig, num_features: int) -> GnnParams:
    """Every GNN (source tasks and target) starts from the same seeded draw"""
    return GnnParams.initialize(cfg.gnn_dims(num_features), SeededRng(cfg.seed).child(0).child(3))


def blank_state(domains: Sequence[str], num_features: int, num_classes: int, cfg: TrainConfig) -> MetaState:
    """Freshly initialized state for the given source domains and aligned dims"""
    if not domains:
        raise ValidationError("no source graphs")
    if len(set(domains)) != len(domains):
        raise ValidationError(f"source domain names must be unique: {list(domains)}")
    D, C = num_features, num_classes
    rng = SeededRng(cfg.seed).child(0)
    state = MetaState(
        struct=StructParams.initialize(D, cfg.struct.num_pivots, rng.child(0)),
        rep=RepParams.initialize(cfg.rep_dim, cfg.semantic_dim, cfg.variation_dim, C, rng.child(1)),
        head=HeadParams.initialize(cfg.rep_dim, C, rng.child(2)),
        gnns={},
    )
    if cfg.ablation == AblationMode.ERM:
        state.gnns[ERM_GNN] = initial_gnn(cfg, D)
    else:
        state.gnns = {name: initial_gnn(cfg, D) for name in domains}
    if cfg.ablation == AblationMode.NO_MAML:
        state.task_copies = {
            name: TaskModel(gnn=state.gnns[name], struct=state.struct.clone(), rep=state.rep.clone())
            for name in domains
        }
    return state


def init_state(graphs: Sequence[Graph], cfg: TrainConfig) -> MetaState:
    if not graphs:
        raise ValidationError("no source graphs")
    return blank_state([g.domain_name for g in graphs], graphs[0].num_features, graphs[0].num_classes, cfg)


def make_episode(task: TaskData, struct: StructParams, cfg: TrainConfig, rng: SeededRng,
                 split: Optional[EpisodeSplit] = None) -> Episode:
    """Split the task and draw its structures for this epoch"""
    if split is None:
        split = split_episode(task.graph, cfg.support_fraction, rng.child(0))
    draw = draw_structures(task.X, struct, cfg.struct, rng.child(1)) if cfg.uses_structure else None
    return Episode(task, split, draw)


def representations(model: TaskModel, episode: Episode, cfg: TrainConfig) -> DenseMatrix:
    """Node representations R from the mixed propagation (A_hat only without structures)"""
    task = episode.task
    if cfg.uses_structure and episode.draw is not None:
        return gcn_forward(task.X, task.A_hat, episode.draw.A_prime_hat, model.gnn, cfg.mix)
    return gcn_forward(task.X, task.A_hat, task.A_hat, model.gnn, 1.0)


def class_logits(model: TaskModel, R: DenseMatrix, cfg: TrainConfig) -> torch.Tensor:
    """Head logits over R, or classifier logits over the semantic posterior mean"""
    if cfg.uses_head:
        return head_logits(R, model.head)
    q_s, _ = encode(R, model.rep)
    return classifier_logits(q_s.mean, model.rep)


def task_loss(episode: Episode, nodes: Sequence[int], model: TaskModel, cfg: TrainConfig,
              rng: SeededRng) -> LossTerms:
    """-ELBO (or head cross-entropy) on the given nodes plus reg_weight * the REINFORCE surrogate"""
    if len(nodes) == 0:
        raise ValidationError("task_loss over an empty node subset")
    R = representations(model, episode, cfg)
    index = torch.as_tensor(nodes, dtype=torch.long)
    y = episode.task.labels[index]

    if cfg.uses_head:
        main = F.cross_entropy(head_logits(R[index], model.head), y)
    else:
        main = -elbo(R[index], y, cfg.elbo_samples, cfg.prior_mode, model.rep, rng).value

    reg = torch.zeros((), dtype=main.dtype)
    if cfg.uses_structure and episode.draw is not None:
        F_probs = edge_probs(episode.task.X, model.struct)
        reg = score_function_surrogate(episode.draw.adjacency, episode.draw.rewards, F_probs,
                                       cfg.struct.baseline)
    total = main + cfg.reg_weight * reg
    return LossTerms(total, float(main), float(cfg.reg_weight * reg))


def _check_finite(loss: torch.Tensor, step: int):
    if not torch.isfinite(loss):
        raise DivergenceError("loss diverged", step)


def _as_start(group: ParamGroup, keep_graph: bool) -> ParamGroup:
    """Inner-loop starting point: fresh leaves, or the tensors themselves for second-order"""
    if keep_graph:
        return group.map(lambda p: p.value if p.value.requires_grad else p.value.detach().requires_grad_(True))
    return group.detach()


def sgd_steps(model: TaskModel, episode: Episode, nodes: Sequence[int], groups: Sequence[str], steps: int,
              lr: float, cfg: TrainConfig, rng: SeededRng,
              create_graph: bool = False) -> Tuple[TaskModel, Optional[float]]:
    """steps plain gradient steps on the named groups; returns the model and the first loss"""
    first = None
    with torch.enable_grad():
        for step in range(steps):
            terms = task_loss(episode, nodes, model, cfg, rng.child(step))
            _check_finite(terms.total, step)
            if first is None:
                first = float(terms.total)
            tensors = [p.value for name in groups for p in model.group(name)]
            grads = torch.autograd.grad(terms.total, tensors, create_graph=create_graph, allow_unused=True)
            grads = iter(grads)
            updates = {}
            for name in groups:
                group = model.group(name)
                new_values = {}
                for p in group:
                    g = next(grads)
                    new_values[p.name] = p.value if g is None else p.value - lr * g
                updated = group.replace(new_values)
                updates[name] = updated if create_graph else updated.detach()
            model = model.with_groups(updates)
    return model, first


def inner_adapt(episode: Episode, meta_state: MetaState, cfg: TrainConfig, rng: SeededRng,
                persist_gnn: bool = True) -> Tuple[TaskModel, torch.Tensor, EpisodeLosses]:
    """
    Adapt a copy of the parameters on the support nodes.

    Returns the adapted model, the query loss at the final iterate (still
    attached to autograd) and the episode's loss record. The task's
    persistent GNN is overwritten with its adapted copy.
    """
    name = episode.task.name
    second = cfg.second_order
    base = meta_state.task_model(name)
    model = TaskModel(
        gnn=base.gnn.detach(),
        struct=_as_start(base.struct, second),
        rep=_as_start(base.rep, second),
        head=_as_start(base.head, second),
    )
    inner = INNER_GROUPS[cfg.ablation]
    model, support = sgd_steps(model, episode, episode.split.support, inner, cfg.inner_steps, cfg.inner_lr,
                               cfg, rng.child(0), create_graph=second)

    with torch.enable_grad():
        query = task_loss(episode, episode.split.query, model, cfg, rng.child(1))
    _check_finite(query.total, cfg.inner_steps)
    if support is None:
        with torch.no_grad():
            support = float(task_loss(episode, episode.split.support, model, cfg, rng.child(0).child(0)).total)

    if persist_gnn:
        meta_state.gnns[name] = model.gnn.detach()
    losses = EpisodeLosses(support, float(query.total), query.task_term, query.reg_term)
    return model, query.total, losses


def outer_gradients(episodes: Sequence[Episode], meta_state: MetaState, cfg: TrainConfig, rng: SeededRng,
                    persist_gnn: bool = True) -> Tuple[Dict[str, ParamGroup], List[EpisodeLosses]]:
    """Mean query-loss gradient for every outer-updated group"""
    if not episodes:
        raise ValidationError("meta step needs at least one task")
    outer = OUTER_GROUPS[cfg.ablation]
    if cfg.second_order:
        for name in outer:
            setattr(meta_state, name, _as_start(getattr(meta_state, name), True))
    totals = {name: getattr(meta_state, name).map(lambda p: torch.zeros_like(p.value.detach()))
              for name in outer}
    records = []
    for i, episode in enumerate(episodes):
        adapted, query, losses = inner_adapt(episode, meta_state, cfg, rng.child(i), persist_gnn)
        records.append(losses)
        # First-order: gradient at the adapted point; second-order: through the inner steps
        source = meta_state if cfg.second_order else adapted
        tensors = [p.value for name in outer for p in getattr(source, name)]
        grads = iter(torch.autograd.grad(query, tensors, allow_unused=True))
        for name in outer:
            updates = {}
            for p in totals[name]:
                g = next(grads)
                updates[p.name] = p.value if g is None else p.value + g.detach() / len(episodes)
            totals[name] = totals[name].replace(updates)
    return totals, records


def _outer_step(episodes: Sequence[Episode], meta_state: MetaState, cfg: TrainConfig,
                rng: SeededRng) -> List[EpisodeLosses]:
    grads, records = outer_gradients(episodes, meta_state, cfg, rng)
    for name, grad in grads.items():
        group = getattr(meta_state, name)
        stepped = group.replace({p.name: p.value - cfg.outer_lr * grad.value(p.name) for p in group})
        setattr(meta_state, name, stepped.detach())
    return records


def meta_step(episodes: Sequence[Episode], meta_state: MetaState, cfg: TrainConfig,
              rng: SeededRng) -> Tuple[MetaState, float]:
    """theta <- theta - outer_lr * mean query gradient, on the outer-updated groups only"""
    records = _outer_step(episodes, meta_state, cfg, rng)
    return meta_state, sum(r.query for r in records) / len(records)


def _average(groups: Sequence[G]) -> G:
    return groups[0].map(lambda p: torch.stack([g.value(p.name).detach() for g in groups]).mean(0)).detach()


def _train_no_maml(tasks: Sequence[TaskData], state: MetaState, cfg: TrainConfig,
                   epoch_rng: SeededRng) -> List[EpisodeLosses]:
    """Each task trains its own copy on its full graph; the exported init is their average"""
    records = []
    groups = INNER_GROUPS[AblationMode.NO_MAML]
    for i, task in enumerate(tasks):
        copy = state.task_copies[task.name]
        copy = replace(copy, gnn=state.gnns[task.name])
        episode = make_episode(task, copy.struct, cfg, epoch_rng.child(i))
        copy, first = sgd_steps(copy, episode, episode.all_nodes, groups, cfg.inner_steps, cfg.inner_lr,
                                cfg, epoch_rng.child(i).child(2))
        with torch.no_grad():
            final = task_loss(episode, episode.all_nodes, copy, cfg, epoch_rng.child(i).child(3))
        _check_finite(final.total, cfg.inner_steps)
        state.task_copies[task.name] = copy
        state.gnns[task.name] = copy.gnn
        support = float(final.total) if first is None else first
        records.append(EpisodeLosses(support, float(final.total), final.task_term, final.reg_term))
    state.struct = _average([c.struct for c in state.task_copies.values()])
    state.rep = _average([c.rep for c in state.task_copies.values()])
    return records


def _erm_loss(tasks: Sequence[TaskData], model: TaskModel) -> torch.Tensor:
    losses = []
    for task in tasks:
        R = gcn_forward(task.X, task.A_hat, task.A_hat, model.gnn, 1.0)
        losses.append(F.cross_entropy(head_logits(R, model.head), task.labels))
    return torch.stack(losses).mean()


def _train_erm(tasks: Sequence[TaskData], state: MetaState, cfg: TrainConfig) -> List[EpisodeLosses]:
    """A shared GCN and head trained on all source nodes pooled"""
    model = TaskModel(gnn=state.gnns[ERM_GNN].detach(), head=state.head.detach())
    steps = max(1, cfg.inner_steps)
    first = last = None
    for step in range(steps):
        with torch.enable_grad():
            loss = _erm_loss(tasks, model)
        _check_finite(loss, step)
        first = float(loss) if first is None else first
        grads = torch.autograd.grad(loss, model.gnn.tensors() + model.head.tensors())
        gnn_grads, head_grads = grads[:len(model.gnn)], grads[len(model.gnn):]
        model = model.with_groups({
            "gnn": model.gnn.replace({p.name: p.value - cfg.erm_lr * g for p, g in zip(model.gnn, gnn_grads)}).detach(),
            "head": model.head.replace({p.name: p.value - cfg.erm_lr * g for p, g in zip(model.head, head_grads)}).detach(),
        })
    with torch.no_grad():
        last = float(_erm_loss(tasks, model))
    state.gnns[ERM_GNN] = model.gnn
    state.head = model.head
    return [EpisodeLosses(first, last, last, 0.0)]


def train(graphs: Sequence[Graph], cfg: TrainConfig, state: Optional[MetaState] = None,
          on_epoch: Optional[Callable[[EpochMetrics], None]] = None) -> MetaState:
    """
    Run cfg.epochs epochs, continuing from state.epoch when a state is given.

    Epoch e draws its episodes from the stream child(1).child(e) of the
    run seed, so a resumed run reproduces an uninterrupted one.
    """
    if not graphs:
        raise ValidationError("no source graphs")
    graphs = zero_pad_align(list(graphs))
    tasks = [TaskData.from_graph(g) for g in graphs]
    if state is None:
        state = init_state(graphs, cfg)
    missing = [t.name for t in tasks if cfg.ablation != AblationMode.ERM and t.name not in state.gnns]
    if missing:
        raise ValidationError(f"state has no GNN for source domains: {missing}")
    rng = SeededRng(cfg.seed).child(1)
    M = cfg.tasks_per_step or len(tasks)

    start = state.epoch
    for e in range(start, start + cfg.epochs):
        epoch_rng = rng.child(e)
        if cfg.reset_gnn_each_epoch:
            state.gnns = {k: initial_gnn(cfg, graphs[0].num_features) for k in state.gnns}

        if cfg.ablation == AblationMode.NO_MAML:
            records = _train_no_maml(tasks, state, cfg, epoch_rng)
        elif cfg.ablation == AblationMode.ERM:
            records = _train_erm(tasks, state, cfg)
        else:
            episodes = [make_episode(t, state.struct, cfg, epoch_rng.child(i)) for i, t in enumerate(tasks)]
            records = []
            for b, begin in enumerate(range(0, len(episodes), M)):
                records += _outer_step(episodes[begin:begin + M], state, cfg, epoch_rng.child(len(tasks) + b))

        state.epoch = e + 1
        metrics = EpochMetrics.from_episodes(state.epoch, records)
        logger.info("epoch %d: support %.4f query %.4f -elbo %.4f reg %.4f", metrics.epoch,
                    metrics.support_loss, metrics.query_loss, metrics.neg_elbo, metrics.reg_loss)
        if on_epoch is not None:
            on_epoch(metrics)
    return state


def _fit_target(state: MetaState, graph: Graph) -> Graph:
    D = state.struct.w_hat.shape[0]
    C = state.rep.num_classes
    if graph.num_features > D or graph.num_classes > C:
        raise ShapeError(f"target '{graph.domain_name}' is wider than the trained model "
                         f"({graph.num_features} > {D} features or {graph.num_classes} > {C} classes)")
    return pad_graph(graph, D, C)


def adapt_to_graph(meta_state: MetaState, graph: Graph, split: EpisodeSplit, steps: int, cfg: TrainConfig,
                   rng: SeededRng) -> TaskModel:
    """Start a fresh GNN from the meta initialization and fine-tune on the support nodes"""
    if steps < 0:
        raise ValidationError(f"fine-tuning steps must be non-negative, got {steps}")
    graph = _fit_target(meta_state, graph)
    task = TaskData.from_graph(graph)
    if cfg.ablation == AblationMode.ERM:
        gnn = meta_state.gnns[ERM_GNN].detach()
    else:
        gnn = initial_gnn(cfg, graph.num_features)
    model = TaskModel(gnn=gnn, struct=meta_state.struct.detach(), rep=meta_state.rep.detach(),
                      head=meta_state.head.detach())
    episode = make_episode(task, model.struct, cfg, rng.child(0), split=split)
    model, _ = sgd_steps(model, episode, split.support, INNER_GROUPS[cfg.ablation], steps, cfg.finetune_lr,
                         cfg, rng.child(1))
    return replace(model, episode=episode)


def query_accuracy(model: TaskModel, cfg: TrainConfig, nodes: Optional[Sequence[int]] = None) -> float:
    """Fraction of correctly predicted nodes (query nodes by default)"""
    episode = model.episode
    nodes = episode.split.query if nodes is None else nodes
    index = torch.as_tensor(nodes, dtype=torch.long)
    with torch.no_grad():
        R = representations(model, episode, cfg)[index]
        if cfg.uses_head:
            labels = torch.argmax(head_logits(R, model.head), dim=-1)
        else:
            labels, _ = predict(R, model.rep)
    correct = int((labels == episode.task.labels[index]).sum())
    return correct / len(nodes)


def fine_tune_and_eval(meta_state: MetaState, graph: Graph, steps: int, cfg: TrainConfig, rng: SeededRng,
                       split: Optional[EpisodeSplit] = None) -> float:
    """Query accuracy on a target graph after steps support-set gradient steps"""
    if steps < 0:
        raise ValidationError(f"fine-tuning steps must be non-negative, got {steps}")
    if split is None:
        split = split_episode(graph, cfg.support_fraction, rng.child(0))
    model = adapt_to_graph(meta_state, graph, split, steps, cfg, rng.child(1))
    accuracy = query_accuracy(model, cfg)
    logger.info("target %s after %d steps: accuracy %.4f", graph.domain_name, steps, accuracy)
    return accuracy
