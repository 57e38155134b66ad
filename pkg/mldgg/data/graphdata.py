"""
Graph representation, JSON file I/O, cross-domain alignment, episode
splitting and the stochastic-block-model domain generator.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

import numpy as np
import pydantic
import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, model_validator

from mldgg.core.errors import ShapeError, ValidationError
from mldgg.core.numcore import DTYPE, DenseMatrix, SeededRng, as_matrix

logger = logging.getLogger(__name__)

DEFAULT_SUPPORT_FRACTION = 0.3


@dataclass(frozen=True, eq=False)
class Graph:
    """One domain's undirected graph with node features and labels"""

    n: int
    edges: Tuple[Tuple[int, int], ...]
    features: DenseMatrix
    labels: Tuple[int, ...]
    num_classes: int
    domain_name: str = "domain"
    _adjacency: Optional[torch.Tensor] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 0:
            raise ValidationError("num_nodes must be non-negative")
        if self.num_classes < 1:
            raise ValidationError("num_classes must be at least 1")
        features = torch.as_tensor(self.features, dtype=DTYPE)
        if features.dim() != 2 or features.shape[0] != self.n:
            raise ValidationError(f"features must have {self.n} rows, got shape {tuple(features.shape)}")
        if not torch.isfinite(features).all():
            raise ValidationError("features contain non-finite values")
        if len(self.labels) != self.n:
            raise ValidationError(f"labels must have {self.n} entries, got {len(self.labels)}")
        for index, label in enumerate(self.labels):
            if not 0 <= label < self.num_classes:
                raise ValidationError(f"label out of range at node {index}: {label}")

        canonical = []
        seen = set()
        for index, (i, j) in enumerate(self.edges):
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValidationError(f"edge endpoint out of range at edge {index}: ({i}, {j})")
            if i == j:
                raise ValidationError(f"self-loop at edge {index}: ({i}, {j})")
            pair = (min(i, j), max(i, j))
            if pair in seen:
                raise ValidationError(f"duplicate edge at edge {index}: ({i}, {j})")
            seen.add(pair)
            canonical.append(pair)

        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", tuple(int(y) for y in self.labels))
        object.__setattr__(self, "edges", tuple(sorted(canonical)))

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def label_tensor(self) -> torch.Tensor:
        return torch.tensor(self.labels, dtype=torch.long)

    def adjacency(self) -> DenseMatrix:
        """Dense symmetric 0/1 adjacency without self-loops"""
        if self._adjacency is None:
            A = torch.zeros(self.n, self.n, dtype=DTYPE)
            if self.edges:
                index = torch.tensor(self.edges, dtype=torch.long)
                A[index[:, 0], index[:, 1]] = 1.0
                A[index[:, 1], index[:, 0]] = 1.0
            object.__setattr__(self, "_adjacency", A)
        return self._adjacency

    def same_as(self, other: "Graph") -> bool:
        """Field-by-field equality (features compared exactly)"""
        return (
            self.n == other.n
            and self.edges == other.edges
            and self.labels == other.labels
            and self.num_classes == other.num_classes
            and self.domain_name == other.domain_name
            and torch.equal(self.features, other.features)
        )


@dataclass(frozen=True)
class EpisodeSplit:
    """Disjoint support / query node indices of one task"""

    support: Tuple[int, ...]
    query: Tuple[int, ...]


class SbmDomainConfig(BaseModel):
    """Knobs of one synthetic stochastic-block-model domain"""

    model_config = ConfigDict(extra="forbid")

    name: str = "domain"
    n: int = Field(100, ge=1)
    num_classes: int = Field(3, ge=1)
    feature_dim: int = Field(8, ge=1)
    class_means: List[List[float]]
    noise_std: float = Field(1.0, ge=0.0)
    p_in: float = Field(0.1, ge=0.0, le=1.0)
    p_out: float = Field(0.01, ge=0.0, le=1.0)
    rewire_fraction: float = Field(0.0, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _check_means(self):
        if len(self.class_means) != self.num_classes:
            raise ValueError(f"class_means needs {self.num_classes} rows, got {len(self.class_means)}")
        for row in self.class_means:
            if len(row) != self.feature_dim:
                raise ValueError(f"class_means rows need {self.feature_dim} entries, got {len(row)}")
        return self


class ScenarioSpec(BaseModel):
    """Which domains train the model and which one it is evaluated on"""

    model_config = ConfigDict(extra="forbid")

    sources: List[str]
    target: str
    mode: Literal["S1T1", "S1T2", "S12T3"] = "S12T3"

    @model_validator(mode="after")
    def _check_domains(self):
        if not self.sources:
            raise ValueError("at least one source domain is required")
        if self.target in self.sources:
            raise ValueError(f"target '{self.target}' is also a source")
        if len(set(self.sources)) != len(self.sources):
            raise ValueError("source domains must be distinct")
        return self


class GraphFile(BaseModel):
    """On-disk schema of a graph; field order is the save order"""

    model_config = ConfigDict(extra="forbid", strict=True)

    num_nodes: int
    num_classes: int
    domain: str
    edges: List[Tuple[int, int]]
    features: List[List[float]]
    labels: List[int]


def _first_error(error: pydantic.ValidationError) -> str:
    first = error.errors()[0]
    location = ".".join(str(part) for part in first["loc"]) or "<root>"
    return f"{location}: {first['msg']}"


def load_graph(path: Union[str, Path]) -> Graph:
    """Read and validate a graph file"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Graph file not found: {path}")
    try:
        record = GraphFile.model_validate_json(path.read_text())
    except pydantic.ValidationError as e:
        raise ValidationError(f"malformed graph file {path}: {_first_error(e)}") from None

    if len(record.features) != record.num_nodes:
        raise ValidationError(f"features: expected {record.num_nodes} rows, got {len(record.features)}")
    widths = {len(row) for row in record.features}
    if len(widths) > 1:
        raise ValidationError("features: rows have unequal lengths")
    width = widths.pop() if widths else 0
    features = as_matrix(record.features).reshape(record.num_nodes, width)

    return Graph(
        n=record.num_nodes,
        edges=tuple(tuple(edge) for edge in record.edges),
        features=features,
        labels=tuple(record.labels),
        num_classes=record.num_classes,
        domain_name=record.domain,
    )


def save_graph(g: Graph, path: Union[str, Path]):
    """Write a graph in the file schema, keys in schema order"""
    record = GraphFile(
        num_nodes=g.n,
        num_classes=g.num_classes,
        domain=g.domain_name,
        edges=list(g.edges),
        features=g.features.tolist(),
        labels=list(g.labels),
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(record.model_dump_json() + "\n")


def generate_sbm_domain(cfg: SbmDomainConfig, rng: SeededRng) -> Graph:
    """Sample one SBM domain: round-robin labels, Gaussian features, block edges, rewiring"""
    n, C = cfg.n, cfg.num_classes
    if n < C:
        raise ValidationError("fewer nodes than classes")

    labels = np.arange(n) % C
    means = as_matrix(cfg.class_means)
    noise = rng.child(0).normal(n, cfg.feature_dim)
    features = means[torch.from_numpy(labels)] + cfg.noise_std * noise

    # Block edges over the upper triangle
    rows, cols = np.triu_indices(n, k=1)
    same = labels[rows] == labels[cols]
    probs = np.where(same, cfg.p_in, cfg.p_out)
    draws = rng.child(1).generator.random(rows.shape[0])
    present = draws < probs
    edges = set(zip(rows[present].tolist(), cols[present].tolist()))

    # Rewire a fraction of the edges to uniformly random non-edges
    num_rewired = math.floor(cfg.rewire_fraction * len(edges))
    if num_rewired > 0:
        rewire_rng = rng.child(2)
        ordered = sorted(edges)
        chosen = rewire_rng.generator.choice(len(ordered), size=num_rewired, replace=False)
        for index in sorted(chosen.tolist()):
            edges.discard(ordered[index])
        max_edges = n * (n - 1) // 2
        added = 0
        while added < num_rewired and len(edges) < max_edges:
            i, j = rewire_rng.integers(0, n, size=2).tolist()
            if i == j:
                continue
            pair = (min(i, j), max(i, j))
            if pair in edges:
                continue
            edges.add(pair)
            added += 1

    return Graph(
        n=n,
        edges=tuple(sorted(edges)),
        features=features,
        labels=tuple(labels.tolist()),
        num_classes=C,
        domain_name=cfg.name,
    )


def pad_graph(g: Graph, num_features: int, num_classes: int) -> Graph:
    """Zero-pad one graph's features to num_features and raise its class count"""
    if g.num_features > num_features or g.num_classes > num_classes:
        raise ShapeError(
            f"graph '{g.domain_name}' ({g.num_features} features, {g.num_classes} classes) "
            f"does not fit {num_features} features, {num_classes} classes"
        )
    if g.num_features == num_features and g.num_classes == num_classes:
        return g
    features = F.pad(g.features, (0, num_features - g.num_features))
    return replace(g, features=features, num_classes=num_classes, _adjacency=None)


def zero_pad_align(graphs: List[Graph]) -> List[Graph]:
    """Pad features with zero columns and raise class counts to the maxima over graphs"""
    if not graphs:
        raise ValidationError("zero_pad_align needs at least one graph")
    max_dim = max(g.num_features for g in graphs)
    max_classes = max(g.num_classes for g in graphs)
    return [pad_graph(g, max_dim, max_classes) for g in graphs]


def _apportion(sizes: List[int], target: int, rng: SeededRng) -> List[int]:
    """Per-class support counts summing to target, at least one for classes of size >= 2"""
    total = sum(sizes)
    quotas = [target * size / total for size in sizes]
    counts = [min(size, math.floor(q)) for size, q in zip(sizes, quotas)]
    for c, size in enumerate(sizes):
        if size >= 2 and counts[c] == 0:
            counts[c] = 1

    # Largest remainders first; random order breaks ties
    tie_break = rng.generator.random(len(sizes))
    order = sorted(range(len(sizes)), key=lambda c: (-(quotas[c] - math.floor(quotas[c])), tie_break[c]))
    while sum(counts) < target:
        progressed = False
        for c in order:
            if sum(counts) >= target:
                break
            if counts[c] < sizes[c]:
                counts[c] += 1
                progressed = True
        if not progressed:
            break
    while sum(counts) > target:
        progressed = False
        for c in reversed(order):
            if sum(counts) <= target:
                break
            floor = 1 if sizes[c] >= 2 else 0
            if counts[c] > floor:
                counts[c] -= 1
                progressed = True
        if not progressed:
            break
    return counts


def split_episode(g: Graph, support_fraction: float, rng: SeededRng) -> EpisodeSplit:
    """Stratified random support / query partition of all nodes"""
    if not 0.0 < support_fraction < 1.0:
        raise ValidationError(f"support_fraction must lie in (0, 1), got {support_fraction}")
    if g.n < 2:
        raise ValidationError("split_episode needs at least two nodes")

    target = int(math.floor(support_fraction * g.n + 0.5))
    target = min(max(target, 1), g.n - 1)

    labels = np.asarray(g.labels)
    classes = [c for c in range(g.num_classes) if (labels == c).any()]
    members = [np.flatnonzero(labels == c) for c in classes]
    eligible = sum(1 for m in members if len(m) >= 2)
    # one node per class that can spare one; the query keeps the rest
    target = max(target, eligible)

    counts = _apportion([len(m) for m in members], target, rng.child(0))
    support = []
    for index, (nodes, count) in enumerate(zip(members, counts)):
        shuffled = rng.child(1).child(index).permutation(nodes)
        support.extend(shuffled[:count].tolist())

    support_set = set(support)
    for nodes in members:
        if len(nodes) >= 2 and not support_set.intersection(nodes.tolist()):
            raise RuntimeError(f"class of node {nodes[0]} missing from support after stratification")

    query = [i for i in range(g.n) if i not in support_set]
    return EpisodeSplit(support=tuple(sorted(support)), query=tuple(query))


def normalize_dense(A: torch.Tensor) -> DenseMatrix:
    """D^-1/2 (A + I) D^-1/2 for a dense symmetric adjacency (batched over leading dims)"""
    n = A.shape[-1]
    A_tilde = A + torch.eye(n, dtype=A.dtype)
    inv_sqrt = A_tilde.sum(-1).rsqrt()
    return inv_sqrt.unsqueeze(-1) * A_tilde * inv_sqrt.unsqueeze(-2)


def normalize_adjacency(g: Graph) -> DenseMatrix:
    """Symmetric GCN propagation operator of the graph's own edges"""
    return normalize_dense(g.adjacency())
