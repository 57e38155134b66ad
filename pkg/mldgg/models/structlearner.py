"""
Latent structure learner.

Edge probabilities come from a pivot factorization of reweighted node
representations. Discrete structures are sampled from them, scored by a
smoothness + sparsity reward and the parameters are trained with a
score-function (REINFORCE) surrogate. Rewards are constants to autograd.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Literal, Optional

import torch
from pydantic import BaseModel, ConfigDict, Field

from mldgg.core.errors import NumericsError, ShapeError, ValidationError
from mldgg.core.numcore import DTYPE, DenseMatrix, DiffParam, ParamGroup, SeededRng, glorot_uniform
from mldgg.data.graphdata import normalize_dense

logger = logging.getLogger(__name__)

MAX_EDGE_PROB = 1.0 - 1e-12


class StructLearnerConfig(BaseModel):
    """Sampling and reward settings of the structure learner"""

    model_config = ConfigDict(extra="forbid")

    num_samples: int = Field(5, ge=1)
    alpha: float = Field(0.01, ge=0.0)
    beta: float = Field(0.01, ge=0.0)
    num_pivots: int = Field(10, ge=1)
    baseline: Literal["mean", "leave_one_out"] = "mean"


class StructParams(ParamGroup):
    """Reweighting vector w_hat (d,) and pivot projection (d x P)"""

    @classmethod
    def initialize(cls, dim: int, num_pivots: int, rng: SeededRng) -> "StructParams":
        return cls([
            DiffParam.leaf("w_hat", torch.ones(dim, dtype=DTYPE)),
            DiffParam.leaf("pivot_proj", glorot_uniform(dim, num_pivots, rng)),
        ])

    @property
    def w_hat(self) -> torch.Tensor:
        return self.value("w_hat")

    @property
    def pivot_proj(self) -> torch.Tensor:
        return self.value("pivot_proj")


@dataclass
class StructSample:
    """One sampled structure with its log-probability and reward"""

    adjacency: DenseMatrix
    log_prob: float
    reward: Optional[float] = None


@dataclass
class StructureDraw:
    """The H structures drawn for one task in one epoch"""

    adjacency: torch.Tensor
    rewards: torch.Tensor
    A_prime_hat: DenseMatrix

    @property
    def num_samples(self) -> int:
        return self.adjacency.shape[0]


def edge_probs(R: DenseMatrix, params: StructParams) -> DenseMatrix:
    """F = sigmoid(Z Z^T / sqrt(P)) with Z = (R * w_hat) @ pivot_proj, zero diagonal"""
    if R.dim() != 2 or R.shape[1] != params.w_hat.shape[0]:
        raise ShapeError(f"representation dim {tuple(R.shape)} does not match w_hat {tuple(params.w_hat.shape)}")
    num_pivots = params.pivot_proj.shape[1]
    Z = (R * params.w_hat) @ params.pivot_proj
    scores = Z @ Z.transpose(0, 1) / math.sqrt(num_pivots)
    off_diagonal = 1.0 - torch.eye(R.shape[0], dtype=DTYPE)
    return torch.clamp(torch.sigmoid(scores) * off_diagonal, max=MAX_EDGE_PROB)


def draw_adjacency(F: DenseMatrix, count: int, rng: SeededRng) -> torch.Tensor:
    """count symmetric Bernoulli(F) structures, shape (count, n, n)"""
    n = F.shape[-1]
    draws = rng.uniform(count, n, n)
    upper = torch.triu((draws < F.detach()).to(DTYPE), diagonal=1)
    return upper + upper.transpose(-1, -2)


def batch_log_prob(A: torch.Tensor, F: DenseMatrix) -> torch.Tensor:
    """log Phi(A) over unordered pairs, batched over the leading dims of A"""
    n = F.shape[-1]
    rows, cols = torch.triu_indices(n, n, offset=1)
    a = A[..., rows, cols]
    f = F[..., rows, cols]
    prob = torch.where(a > 0.5, f, 1.0 - f)
    if (prob <= 0.0).any():
        raise NumericsError("impossible sample")
    return torch.log(prob).sum(-1)


def sample_log_prob(A_prime: DenseMatrix, F: DenseMatrix) -> float:
    return float(batch_log_prob(A_prime, F.detach()))


def sample_structures(F: DenseMatrix, H: int, rng: SeededRng) -> List[StructSample]:
    """H independent structures with their log-probabilities (rewards unset)"""
    if H < 1:
        raise ValidationError("need at least one structure sample")
    adjacency = draw_adjacency(F, H, rng)
    log_probs = batch_log_prob(adjacency, F.detach())
    return [StructSample(adjacency[h], float(log_probs[h])) for h in range(H)]


def batch_structure_reward(A: torch.Tensor, R: DenseMatrix, cfg: StructLearnerConfig) -> torch.Tensor:
    """-alpha * sum A_jk ||r_j - r_k||^2 - beta * sum A_jk over j < k"""
    R = R.detach()
    sq_dist = (R.unsqueeze(1) - R.unsqueeze(0)).pow(2).sum(-1)
    upper = torch.triu(A, diagonal=1)
    return -(upper * (cfg.alpha * sq_dist + cfg.beta)).sum((-1, -2))


def structure_reward(A_prime: DenseMatrix, R: DenseMatrix, cfg: StructLearnerConfig) -> float:
    return float(batch_structure_reward(A_prime, R, cfg))


def score_function_surrogate(A: torch.Tensor, rewards: torch.Tensor, F: DenseMatrix,
                             baseline: str = "mean") -> torch.Tensor:
    """
    REINFORCE surrogate -(1/H) sum_h log Phi(A_h) (B_h - baseline).

    A has shape (..., H, n, n) and rewards (..., H); the result keeps the
    leading dims so batched Monte-Carlo estimates stay independent.
    """
    H = rewards.shape[-1]
    if H < 1:
        raise ValidationError("need at least one structure sample")
    rewards = rewards.detach()
    if baseline == "mean":
        reference = rewards.mean(-1, keepdim=True)
    elif baseline == "leave_one_out":
        if H == 1:
            reference = torch.zeros_like(rewards)
        else:
            reference = (rewards.sum(-1, keepdim=True) - rewards) / (H - 1)
    else:
        raise ValidationError(f"unknown baseline '{baseline}'")
    log_probs = batch_log_prob(A, F)
    return -(log_probs * (rewards - reference)).mean(-1)


def reinforce_surrogate_loss(samples: List[StructSample], F: DenseMatrix,
                             baseline: str = "mean") -> torch.Tensor:
    """Surrogate over a list of rewarded samples; gradients flow into F"""
    if not samples:
        raise ValidationError("need at least one structure sample")
    if any(s.reward is None for s in samples):
        raise ValidationError("every sample needs a reward before the surrogate is formed")
    A = torch.stack([s.adjacency for s in samples])
    rewards = torch.tensor([s.reward for s in samples], dtype=DTYPE)
    return score_function_surrogate(A, rewards, F, baseline)


def draw_structures(R: DenseMatrix, params: StructParams, cfg: StructLearnerConfig,
                    rng: SeededRng) -> StructureDraw:
    """Sample H structures from the current parameters, score them and average their operators"""
    with torch.no_grad():
        F = edge_probs(R, params)
        adjacency = draw_adjacency(F, cfg.num_samples, rng)
        rewards = batch_structure_reward(adjacency, R, cfg)
        A_prime_hat = normalize_dense(adjacency).mean(0)
    logger.debug("drew %d structures, mean edges %.1f, mean reward %.4f",
                 cfg.num_samples, float(adjacency.sum((-1, -2)).mean()) / 2, float(rewards.mean()))
    return StructureDraw(adjacency=adjacency, rewards=rewards, A_prime_hat=A_prime_hat)
