"""
GCN backbone propagating over a lambda-mixture of the original and the
learned adjacency operators.
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import torch

from mldgg.core.errors import ShapeError, StaleCacheError, ValidationError
from mldgg.core.numcore import DenseMatrix, DiffParam, ParamGroup, SeededRng, glorot_uniform

logger = logging.getLogger(__name__)


class GnnParams(ParamGroup):
    """Layer weights layer{l}.weight of shape (d_l, d_{l+1})"""

    @classmethod
    def initialize(cls, dims: Sequence[int], rng: SeededRng) -> "GnnParams":
        if len(dims) < 2:
            raise ValidationError("a GCN needs an input and an output dimension")
        return cls(
            DiffParam.leaf(f"layer{l}.weight", glorot_uniform(dims[l], dims[l + 1], rng.child(l)))
            for l in range(len(dims) - 1)
        )

    @property
    def num_layers(self) -> int:
        return len(self)

    def weights(self) -> List[torch.Tensor]:
        return [self.value(f"layer{l}.weight") for l in range(self.num_layers)]


class MixedPropagation(torch.autograd.Function):
    """P H W with the closed-form reverse pass; P is a constant operator"""

    @staticmethod
    def forward(ctx, H, W, P):
        ctx.save_for_backward(H, W, P)
        return P @ H @ W

    @staticmethod
    def backward(ctx, G):
        H, W, P = ctx.saved_tensors
        grad_H = grad_W = None
        if ctx.needs_input_grad[0]:
            grad_H = P.transpose(0, 1) @ G @ W.transpose(0, 1)
        if ctx.needs_input_grad[1]:
            grad_W = (P @ H).transpose(0, 1) @ G
        return grad_H, grad_W, None


@dataclass
class GcnForwardCache:
    """Everything gcn_backward needs from one forward pass"""

    operator: DenseMatrix
    inputs: List[DenseMatrix]
    pre_activations: List[DenseMatrix]
    weights: List[torch.Tensor]


def mixed_operator(A_hat: DenseMatrix, A_prime_hat: DenseMatrix, lam: float) -> DenseMatrix:
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"mixing weight must lie in [0, 1], got {lam}")
    if A_hat.shape != A_prime_hat.shape or A_hat.dim() != 2 or A_hat.shape[0] != A_hat.shape[1]:
        raise ShapeError(f"operators must be matching square matrices, got {tuple(A_hat.shape)} "
                         f"and {tuple(A_prime_hat.shape)}")
    return lam * A_hat + (1.0 - lam) * A_prime_hat


def _check_layer(l: int, H: torch.Tensor, W: torch.Tensor, n: int):
    if H.shape[0] != n:
        raise ShapeError(f"layer {l}: input has {H.shape[0]} rows, operator has {n}")
    if H.shape[1] != W.shape[0]:
        raise ShapeError(f"layer {l}: input dim {H.shape[1]} does not match weight {tuple(W.shape)}")


def gcn_forward(X: DenseMatrix, A_hat: DenseMatrix, A_prime_hat: DenseMatrix, params: GnnParams,
                lam: float) -> DenseMatrix:
    """R_{l+1} = ReLU((lam A_hat + (1 - lam) A'_hat) R_l W_l), no ReLU on the last layer"""
    P = mixed_operator(A_hat, A_prime_hat, lam)
    H = X
    weights = params.weights()
    for l, W in enumerate(weights):
        _check_layer(l, H, W, P.shape[0])
        H = MixedPropagation.apply(H, W, P)
        if l < len(weights) - 1:
            H = torch.relu(H)
    return H


def gcn_forward_cached(X: DenseMatrix, A_hat: DenseMatrix, A_prime_hat: DenseMatrix, params: GnnParams,
                       lam: float) -> Tuple[DenseMatrix, GcnForwardCache]:
    """Forward pass without autograd, keeping the state of the explicit reverse pass"""
    with torch.no_grad():
        P = mixed_operator(A_hat, A_prime_hat, lam)
        weights = [W.detach().clone() for W in params.weights()]
        inputs, pre_activations = [], []
        H = X.detach()
        for l, W in enumerate(weights):
            _check_layer(l, H, W, P.shape[0])
            inputs.append(H)
            Z = P @ H @ W
            pre_activations.append(Z)
            H = torch.relu(Z) if l < len(weights) - 1 else Z
    return H, GcnForwardCache(P, inputs, pre_activations, weights)


def gcn_backward(upstream: DenseMatrix, cache: GcnForwardCache,
                 params: GnnParams) -> Tuple[GnnParams, DenseMatrix]:
    """Gradients into every layer weight and into the input features"""
    current = params.weights()
    if len(current) != len(cache.weights) or any(
        not torch.equal(W.detach(), cached) for W, cached in zip(current, cache.weights)
    ):
        raise StaleCacheError("forward cache was built with different weights")
    if upstream.shape != cache.pre_activations[-1].shape:
        raise ShapeError(f"upstream gradient {tuple(upstream.shape)} does not match output "
                         f"{tuple(cache.pre_activations[-1].shape)}")

    P = cache.operator
    G = upstream.detach()
    grads = {}
    for l in reversed(range(len(cache.weights))):
        if l < len(cache.weights) - 1:
            G = G * (cache.pre_activations[l] > 0).to(G.dtype)
        grads[f"layer{l}.weight"] = (P @ cache.inputs[l]).transpose(0, 1) @ G
        G = P.transpose(0, 1) @ G @ cache.weights[l].transpose(0, 1)
    return params.map(lambda p: grads[p.name]), G
