"""
Representation learner: splits each node representation r into a
semantic factor s (decides the label) and a variation factor v, and
trains both encoders, the decoder, the classifier and the prior through a
self-normalized Monte-Carlo ELBO.

Weights follow the y = x @ W + b layout used across the package.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import torch
import torch.nn.functional as F
from torch.distributions import MultivariateNormal, Normal

from mldgg.core.errors import ShapeError, ValidationError
from mldgg.core.numcore import DTYPE, DenseMatrix, DiffParam, ParamGroup, SeededRng, glorot_uniform

logger = logging.getLogger(__name__)

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0
CHOL_FLOOR = 1e-6
Q_FLOOR = 1e-30

PRIOR_MODES = ("joint", "independent")


def _softplus_inverse(y: float) -> float:
    return y + math.log(-math.expm1(-y))


class EncoderParams(ParamGroup):
    """semantic.{mu,logvar}.{weight,bias} and variation.{mu,logvar}.{weight,bias}"""


class DecoderParams(ParamGroup):
    """decoder.weight, decoder.bias and the scalar decoder.log_sigma_r"""


class ClassifierParams(ParamGroup):
    """classifier.weight (k_s x C) and classifier.bias"""


class PriorParams(ParamGroup):
    """Raw lower-triangular prior.chol; its diagonal goes through softplus"""


class RepParams(ParamGroup):
    """All representation-learner parameters with typed views per component"""

    @classmethod
    def initialize(cls, rep_dim: int, semantic_dim: int, variation_dim: int, num_classes: int,
                   rng: SeededRng) -> "RepParams":
        if min(rep_dim, semantic_dim, variation_dim, num_classes) < 1:
            raise ValidationError("representation, latent and class dims must be positive")
        params = []
        for index, (prefix, k) in enumerate((("semantic", semantic_dim), ("variation", variation_dim))):
            stream = rng.child(index)
            params += [
                DiffParam.leaf(f"{prefix}.mu.weight", glorot_uniform(rep_dim, k, stream.child(0))),
                DiffParam.leaf(f"{prefix}.mu.bias", torch.zeros(k, dtype=DTYPE)),
                DiffParam.leaf(f"{prefix}.logvar.weight", 0.1 * glorot_uniform(rep_dim, k, stream.child(1))),
                DiffParam.leaf(f"{prefix}.logvar.bias", torch.zeros(k, dtype=DTYPE)),
            ]
        latent = semantic_dim + variation_dim
        raw_chol = torch.eye(latent, dtype=DTYPE) * _softplus_inverse(1.0 - CHOL_FLOOR)
        params += [
            DiffParam.leaf("decoder.weight", glorot_uniform(latent, rep_dim, rng.child(2))),
            DiffParam.leaf("decoder.bias", torch.zeros(rep_dim, dtype=DTYPE)),
            DiffParam.leaf("decoder.log_sigma_r", torch.tensor(0.0, dtype=DTYPE)),
            DiffParam.leaf("classifier.weight", glorot_uniform(semantic_dim, num_classes, rng.child(3))),
            DiffParam.leaf("classifier.bias", torch.zeros(num_classes, dtype=DTYPE)),
            DiffParam.leaf("prior.chol", raw_chol),
        ]
        return cls(params)

    def _view(self, kind, *prefixes: str):
        return kind(p for p in self if p.name.startswith(prefixes))

    def encoder(self) -> EncoderParams:
        return self._view(EncoderParams, "semantic.", "variation.")

    def decoder(self) -> DecoderParams:
        return self._view(DecoderParams, "decoder.")

    def classifier(self) -> ClassifierParams:
        return self._view(ClassifierParams, "classifier.")

    def prior(self) -> PriorParams:
        return self._view(PriorParams, "prior.")

    @property
    def semantic_dim(self) -> int:
        return self.value("semantic.mu.bias").shape[0]

    @property
    def variation_dim(self) -> int:
        return self.value("variation.mu.bias").shape[0]

    @property
    def num_classes(self) -> int:
        return self.value("classifier.bias").shape[0]


class HeadParams(ParamGroup):
    """Linear classification head over R (weight d x C, bias C)"""

    @classmethod
    def initialize(cls, rep_dim: int, num_classes: int, rng: SeededRng) -> "HeadParams":
        return cls([
            DiffParam.leaf("weight", glorot_uniform(rep_dim, num_classes, rng)),
            DiffParam.leaf("bias", torch.zeros(num_classes, dtype=DTYPE)),
        ])


@dataclass
class GaussianPosterior:
    """Per-node diagonal Gaussian"""

    mean: torch.Tensor
    log_var: torch.Tensor

    @property
    def std(self) -> torch.Tensor:
        return torch.exp(0.5 * self.log_var)

    def distribution(self) -> Normal:
        return Normal(self.mean, self.std)


@dataclass
class ElboResult:
    """Node-averaged ELBO and its three terms"""

    value: torch.Tensor
    t1: float
    t2: float
    t3: float
    degenerate: int = 0


def _affine(x: torch.Tensor, params: ParamGroup, prefix: str) -> torch.Tensor:
    return x @ params.value(f"{prefix}.weight") + params.value(f"{prefix}.bias")


def encode(R: DenseMatrix, params: ParamGroup) -> Tuple[GaussianPosterior, GaussianPosterior]:
    """q(s|r) and q(v|r) for every row of R"""
    expected = params.value("semantic.mu.weight").shape[0]
    if R.shape[-1] != expected:
        raise ShapeError(f"representation dim {R.shape[-1]} does not match encoder input {expected}")
    posteriors = []
    for prefix in ("semantic", "variation"):
        mean = _affine(R, params, f"{prefix}.mu")
        log_var = torch.clamp(_affine(R, params, f"{prefix}.logvar"), LOG_VAR_MIN, LOG_VAR_MAX)
        posteriors.append(GaussianPosterior(mean, log_var))
    return posteriors[0], posteriors[1]


def reparam_sample(q: GaussianPosterior, rng: Optional[SeededRng] = None, num_samples: int = 1,
                   noise: Optional[torch.Tensor] = None) -> torch.Tensor:
    """mu + exp(log_var / 2) * eps with shape (num_samples, *mean.shape)"""
    if noise is None:
        if rng is None:
            raise ValidationError("reparam_sample needs an rng or explicit noise")
        noise = rng.normal(num_samples, *q.mean.shape)
    return q.mean + q.std * noise


def decode(s: torch.Tensor, v: torch.Tensor, params: ParamGroup) -> Tuple[torch.Tensor, torch.Tensor]:
    """Mean of p(r|s, v) and its shared standard deviation"""
    mean = _affine(torch.cat([s, v], dim=-1), params, "decoder")
    return mean, torch.exp(params.value("decoder.log_sigma_r"))


def decode_log_density(r: torch.Tensor, s: torch.Tensor, v: torch.Tensor, params: ParamGroup) -> torch.Tensor:
    """log N(r; mu_r, sigma_r^2 I) summed over representation dims"""
    mean, sigma = decode(s, v, params)
    return Normal(mean, sigma).log_prob(r).sum(-1)


def classifier_logits(s: torch.Tensor, params: ParamGroup) -> torch.Tensor:
    return _affine(s, params, "classifier")


def classify(s: torch.Tensor, params: ParamGroup) -> torch.Tensor:
    return torch.softmax(classifier_logits(s, params), dim=-1)


def head_logits(R: DenseMatrix, head: HeadParams) -> torch.Tensor:
    return R @ head.value("weight") + head.value("bias")


def effective_cholesky(prior: ParamGroup) -> torch.Tensor:
    raw = prior.value("prior.chol")
    diagonal = F.softplus(torch.diagonal(raw)) + CHOL_FLOOR
    return torch.tril(raw, diagonal=-1) + torch.diag(diagonal)


def prior_log_prob(z: torch.Tensor, prior: Optional[ParamGroup], mode: str) -> torch.Tensor:
    """log p(s, v) of concatenated latents z (..., k_s + k_v)"""
    if mode == "joint":
        L = effective_cholesky(prior)
        return MultivariateNormal(torch.zeros(L.shape[0], dtype=DTYPE), scale_tril=L).log_prob(z)
    if mode == "independent":
        return Normal(torch.zeros((), dtype=DTYPE), torch.ones((), dtype=DTYPE)).log_prob(z).sum(-1)
    raise ValidationError(f"unknown prior mode '{mode}'")


def posterior_log_prob(z: torch.Tensor, q: GaussianPosterior) -> torch.Tensor:
    return q.distribution().log_prob(z).sum(-1)


def elbo(R: DenseMatrix, y: torch.Tensor, S: int, mode: str, params: RepParams,
         rng: Optional[SeededRng] = None,
         noise: Optional[Tuple[torch.Tensor, torch.Tensor]] = None) -> ElboResult:
    """
    Self-normalized Monte-Carlo ELBO averaged over the rows of R.

    One shared set of S reparameterized (s, v) draws feeds all three terms:
    T1 = log q(y|r), T2 = sum_m w_m log p(r|s_m, v_m) and
    T3 = sum_m w_m [log p(s_m, v_m) - log q(s_m, v_m|r)], w_m proportional to p(y|s_m).
    Pass noise=(eps_s, eps_v) to reuse fixed draws.
    """
    if S < 1:
        raise ValidationError("elbo needs at least one sample")
    y = torch.as_tensor(y, dtype=torch.long)
    if R.shape[0] != y.shape[0]:
        raise ShapeError(f"{R.shape[0]} representations but {y.shape[0]} labels")
    if R.shape[0] == 0:
        raise ValidationError("elbo over an empty node set")

    q_s, q_v = encode(R, params)
    if noise is None:
        if rng is None:
            raise ValidationError("elbo needs an rng or explicit noise")
        noise = (rng.child(0).normal(S, *q_s.mean.shape), rng.child(1).normal(S, *q_v.mean.shape))
    s = reparam_sample(q_s, noise=noise[0])
    v = reparam_sample(q_v, noise=noise[1])

    log_py = torch.log_softmax(classifier_logits(s, params), dim=-1)
    log_py = log_py.gather(-1, y.expand(s.shape[0], -1).unsqueeze(-1)).squeeze(-1)

    log_q_hat = torch.logsumexp(log_py, dim=0) - math.log(s.shape[0])
    floor = math.log(Q_FLOOR)
    degenerate = int((log_q_hat < floor).sum())
    if degenerate:
        logger.warning("classifier assigns q(y|r) < %g to %d nodes; clamped", Q_FLOOR, degenerate)
        log_q_hat = torch.clamp(log_q_hat, min=floor)

    weights = torch.softmax(log_py, dim=0)
    log_pr = decode_log_density(R, s, v, params)
    log_prior = prior_log_prob(torch.cat([s, v], dim=-1), params, mode)
    log_post = posterior_log_prob(s, q_s) + posterior_log_prob(v, q_v)

    t1 = log_q_hat
    t2 = (weights * log_pr).sum(0)
    t3 = (weights * (log_prior - log_post)).sum(0)
    value = (t1 + t2 + t3).mean()
    return ElboResult(
        value=value,
        t1=float(t1.mean()),
        t2=float(t2.mean()),
        t3=float(t3.mean()),
        degenerate=degenerate,
    )


def predict(R: DenseMatrix, params: ParamGroup, S: int = 0,
            rng: Optional[SeededRng] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Labels and confidences per node.

    S = 0 classifies the posterior mean mu_s; S > 0 averages p(y|s_m) over
    S posterior draws. Ties go to the lowest class index.
    """
    with torch.no_grad():
        q_s, _ = encode(R, params)
        if S <= 0:
            probs = classify(q_s.mean, params)
        else:
            if rng is None:
                raise ValidationError("Monte-Carlo prediction needs an rng")
            probs = classify(reparam_sample(q_s, rng, S), params).mean(0)
        labels = torch.argmax(probs, dim=-1)
        confidence = probs.gather(-1, labels.unsqueeze(-1)).squeeze(-1)
    return labels, confidence
