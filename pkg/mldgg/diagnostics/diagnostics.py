"""
Distribution-shift diagnostics: per-node energy scores, Jensen-Shannon
distances between discretized distributions and embedding export.
"""

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import torch

from mldgg.core.errors import ValidationError
from mldgg.core.numcore import DTYPE
from mldgg.models.replearner import encode
from mldgg.training.metaloop import TaskModel, TrainConfig, class_logits, representations

logger = logging.getLogger(__name__)

DEFAULT_BINS = 20


@dataclass(frozen=True, eq=False)
class CategoricalDist:
    """Non-negative probabilities summing to one"""

    probs: torch.Tensor

    def __post_init__(self):
        probs = torch.as_tensor(self.probs, dtype=DTYPE).reshape(-1)
        if probs.numel() == 0:
            raise ValidationError("a distribution needs at least one outcome")
        if (probs < 0).any():
            raise ValidationError("probabilities must be non-negative")
        if abs(float(probs.sum()) - 1.0) > 1e-9:
            raise ValidationError(f"probabilities sum to {float(probs.sum())}, not 1")
        object.__setattr__(self, "probs", probs)

    def __len__(self) -> int:
        return self.probs.numel()


def energy_score(logits, temperature: float = 1.0):
    """-T * logsumexp(logits / T) over the last axis; a float for a single vector"""
    if temperature <= 0:
        raise ValidationError(f"temperature must be positive, got {temperature}")
    logits = torch.as_tensor(logits, dtype=DTYPE)
    energy = -temperature * torch.logsumexp(logits / temperature, dim=-1)
    return float(energy) if energy.dim() == 0 else energy


def _rel_entropy(p: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    # 0 * log(0 / x) counts as 0
    safe_p = torch.where(p > 0, p, torch.ones_like(p))
    safe_q = torch.where(p > 0, q, torch.ones_like(q))
    return torch.where(p > 0, p * (torch.log2(safe_p) - torch.log2(safe_q)), torch.zeros_like(p))


def js_divergence(p: CategoricalDist, q: CategoricalDist) -> float:
    """Jensen-Shannon divergence in bits, so it lies in [0, 1]"""
    if len(p) != len(q):
        raise ValidationError(f"support size mismatch: {len(p)} vs {len(q)}")
    m = 0.5 * (p.probs + q.probs)
    divergence = 0.5 * _rel_entropy(p.probs, m).sum() + 0.5 * _rel_entropy(q.probs, m).sum()
    return min(1.0, max(0.0, float(divergence)))


def js_distance(p: CategoricalDist, q: CategoricalDist) -> float:
    return math.sqrt(js_divergence(p, q))


def histogram_dists(samples_by_domain: Dict[str, Sequence[float]],
                    bins: int = DEFAULT_BINS) -> Dict[str, CategoricalDist]:
    """Fixed-width histograms over the pooled range of all domains' samples"""
    if bins < 1:
        raise ValidationError("need at least one bin")
    arrays = {name: np.asarray(values, dtype=np.float64).reshape(-1) for name, values in samples_by_domain.items()}
    empty = [name for name, values in arrays.items() if values.size == 0]
    if empty:
        raise ValidationError(f"no samples for domains: {empty}")
    pooled = np.concatenate(list(arrays.values()))
    edges = np.histogram_bin_edges(pooled, bins=bins, range=(float(pooled.min()), float(pooled.max())))
    dists = {}
    for name, values in arrays.items():
        counts, _ = np.histogram(values, bins=edges)
        dists[name] = CategoricalDist(torch.from_numpy(counts / counts.sum()))
    return dists


def js_matrix(dists: Dict[str, CategoricalDist]) -> Tuple[List[str], torch.Tensor]:
    """Pairwise JS distances in the dict's order"""
    names = list(dists)
    matrix = torch.zeros(len(names), len(names), dtype=DTYPE)
    for i, a in enumerate(names):
        for j in range(i + 1, len(names)):
            matrix[i, j] = matrix[j, i] = js_distance(dists[a], dists[names[j]])
    return names, matrix


def node_energies(model: TaskModel, cfg: TrainConfig, temperature: float = 1.0) -> torch.Tensor:
    """Energy of every node of the model's adapted graph"""
    with torch.no_grad():
        R = representations(model, model.episode, cfg)
        return energy_score(class_logits(model, R, cfg), temperature).reshape(-1)


def _fmt(value: float) -> str:
    return f"{value:.9g}"


def export_embeddings(model: TaskModel, cfg: TrainConfig, path: Union[str, Path]):
    """One CSV row per node: id, domain, label, r..., s..., v... (posterior means)"""
    episode = model.episode
    graph = episode.task.graph
    with torch.no_grad():
        R = representations(model, episode, cfg)
        q_s, q_v = encode(R, model.rep)
    header = (
        ["node_id", "domain", "label"]
        + [f"r{i}" for i in range(R.shape[1])]
        + [f"s{i}" for i in range(q_s.mean.shape[1])]
        + [f"v{i}" for i in range(q_v.mean.shape[1])]
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for node in range(graph.n):
            values = torch.cat([R[node], q_s.mean[node], q_v.mean[node]]).tolist()
            writer.writerow([node, graph.domain_name, graph.labels[node]] + [_fmt(v) for v in values])
    logger.debug("exported %d embeddings of %s to %s", graph.n, graph.domain_name, path)
