import math

import numpy as np
import pytest
import torch

from mldgg.core.errors import NumericsError, ValidationError
from mldgg.core.numcore import (
    DTYPE, DiffParam, ParamGroup, SeededRng, autograd_grads, finite_diff_check, glorot_uniform, logsumexp,
    stable_sigmoid,
)
from mldgg.data.graphdata import normalize_adjacency
from mldgg.models.gnn import GnnParams, gcn_forward

from conftest import ring_graph


def test_logsumexp_values():
    assert logsumexp([0.0, 0.0]) == pytest.approx(math.log(2.0), abs=1e-12)
    assert logsumexp([1000.0, 1000.0]) == pytest.approx(1000.0 + math.log(2.0), abs=1e-9)
    assert logsumexp([-3.25]) == -3.25


def test_logsumexp_empty_vector():
    with pytest.raises(NumericsError, match="empty vector"):
        logsumexp([])


def test_stable_sigmoid():
    assert stable_sigmoid(0.0) == 0.5
    assert 1.0 - 1e-9 < stable_sigmoid(100.0) <= 1.0
    assert stable_sigmoid(-3.0) + stable_sigmoid(3.0) == pytest.approx(1.0, abs=1e-12)
    assert stable_sigmoid(-1000.0) == 0.0
    assert stable_sigmoid(1000.0) == 1.0


def test_seeded_rng_is_reproducible():
    a = SeededRng(5).child(2).normal(4, 3)
    b = SeededRng(5).child(2).normal(4, 3)
    assert torch.equal(a, b)
    assert a.dtype == DTYPE


def test_seeded_rng_streams_differ():
    streams = SeededRng(5).split(4)
    assert len({s.stream_id for s in streams}) == 4
    draws = [s.uniform(8) for s in streams]
    assert not torch.equal(draws[0], draws[1])


def test_seeded_rng_rejects_negative_seed():
    with pytest.raises(ValidationError):
        SeededRng(-1)


def test_matmul_associativity():
    rng = SeededRng(3)
    for i in range(10):
        A, B, C = (rng.child(i).child(k).normal(4, 4) for k in range(3))
        torch.testing.assert_close((A @ B) @ C, A @ (B @ C), atol=1e-9, rtol=0)


def test_param_group_rejects_duplicate_names():
    with pytest.raises(ValidationError, match="duplicate"):
        ParamGroup([DiffParam.leaf("w", [1.0]), DiffParam.leaf("w", [2.0])])


def test_param_group_functional_updates():
    group = ParamGroup.from_tensors({"a": torch.ones(2, dtype=DTYPE), "b": torch.zeros(3, dtype=DTYPE)})
    assert group.names() == ["a", "b"]
    assert group.numel() == 5

    doubled = group.map(lambda p: 2 * p.value)
    assert torch.equal(doubled.value("a"), torch.full((2,), 2.0, dtype=DTYPE))
    assert torch.equal(group.value("a"), torch.ones(2, dtype=DTYPE))

    replaced = group.replace({"b": torch.ones(3, dtype=DTYPE)})
    assert torch.equal(replaced.value("b"), torch.ones(3, dtype=DTYPE))
    with pytest.raises(ValidationError):
        group.replace({"c": torch.ones(1, dtype=DTYPE)})


def test_zero_grads_resets_accumulators():
    group = ParamGroup.from_tensors({"w": torch.ones(3, dtype=DTYPE)})
    (group.value("w") ** 2).sum().backward()
    assert torch.equal(group["w"].grad, torch.full((3,), 2.0, dtype=DTYPE))
    group.zero_grads()
    assert torch.equal(group["w"].grad, torch.zeros(3, dtype=DTYPE))
    assert group["w"].grad.shape == group["w"].shape


def test_finite_diff_check_quadratic():
    params = ParamGroup.from_tensors({"theta": SeededRng(0).normal(5)})
    analytic = params.map(lambda p: p.value.detach().clone())
    error = finite_diff_check(lambda g: 0.5 * (g.value("theta") ** 2).sum(), params, analytic)
    assert error <= 1e-6


def test_finite_diff_check_constant_loss():
    params = ParamGroup.from_tensors({"theta": SeededRng(0).normal(3)})
    zeros = params.map(lambda p: torch.zeros_like(p.value))
    assert finite_diff_check(lambda g: torch.tensor(1.5, dtype=DTYPE), params, zeros) == 0.0


def test_finite_diff_check_flags_small_gradients_reported_as_zero():
    params = ParamGroup.from_tensors({"theta": SeededRng(0).normal(3)})
    zeros = params.map(lambda p: torch.zeros_like(p.value))
    error = finite_diff_check(lambda g: 1e-7 * g.value("theta").sum(), params, zeros)
    assert error == pytest.approx(1.0, abs=1e-3)


def test_finite_diff_check_ignores_round_off_of_large_losses():
    params = ParamGroup.from_tensors({"theta": SeededRng(1).normal(4)})
    tiny = params.map(lambda p: torch.full_like(p.value, 1e-9))
    assert finite_diff_check(lambda g: 1000.0 + 1e-9 * g.value("theta").sum(), params, tiny) == 0.0


def test_finite_diff_check_detects_wrong_gradient():
    params = ParamGroup.from_tensors({"theta": torch.tensor([1.0, -2.0], dtype=DTYPE)})
    flipped = params.map(lambda p: -p.value.detach())
    error = finite_diff_check(lambda g: 0.5 * (g.value("theta") ** 2).sum(), params, flipped)
    assert error == pytest.approx(1.0)


def test_finite_diff_check_rejects_nondeterministic_loss():
    params = ParamGroup.from_tensors({"theta": torch.zeros(2, dtype=DTYPE)})
    calls = []

    def loss(g):
        calls.append(1)
        return g.value("theta").sum() + len(calls)

    with pytest.raises(NumericsError, match="loss not reproducible"):
        finite_diff_check(loss, params, params.map(lambda p: torch.ones_like(p.value)))


def test_finite_diff_check_epsilon_range():
    params = ParamGroup.from_tensors({"theta": torch.zeros(1, dtype=DTYPE)})
    with pytest.raises(ValidationError):
        finite_diff_check(lambda g: g.value("theta").sum(), params, params, epsilon=0.1)


def test_finite_diff_check_gcn_cross_entropy():
    graph = ring_graph(n=5, dim=3)
    A_hat = normalize_adjacency(graph)
    labels = graph.label_tensor
    params = GnnParams.initialize([3, 4, 2], SeededRng(11))

    def loss(g):
        logits = gcn_forward(graph.features, A_hat, A_hat, g, 1.0)
        return torch.nn.functional.cross_entropy(logits, labels)

    assert finite_diff_check(loss, params, autograd_grads(loss, params)) <= 1e-4


def test_autograd_grads_fills_unused_with_zeros():
    params = ParamGroup.from_tensors({"used": torch.ones(2, dtype=DTYPE), "unused": torch.ones(3, dtype=DTYPE)})
    grads = autograd_grads(lambda g: (3.0 * g.value("used")).sum(), params)
    np.testing.assert_allclose(grads.value("used").numpy(), [3.0, 3.0])
    np.testing.assert_allclose(grads.value("unused").numpy(), np.zeros(3))


def test_glorot_uniform_ignores_the_global_torch_generator():
    torch.manual_seed(0)
    first = glorot_uniform(4, 6, SeededRng(3))
    torch.manual_seed(1)
    torch.rand(10)
    second = glorot_uniform(4, 6, SeededRng(3))
    assert torch.equal(first, second)
    assert first.dtype == DTYPE
    assert float(first.abs().max()) <= math.sqrt(6.0 / 10.0)
