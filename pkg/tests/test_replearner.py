import logging
import math

import numpy as np
import pytest
import torch

from mldgg.core.errors import ValidationError
from mldgg.core.numcore import DTYPE, SeededRng, autograd_grads, finite_diff_check
from mldgg.models.replearner import (
    LOG_VAR_MIN, GaussianPosterior, RepParams, classify, decode, decode_log_density, effective_cholesky, elbo,
    encode, posterior_log_prob, predict, prior_log_prob, reparam_sample,
)


def _params(rep_dim=3, ks=2, kv=2, C=3, seed=0, jitter=0.0):
    params = RepParams.initialize(rep_dim, ks, kv, C, SeededRng(seed))
    if jitter:
        params = params.map(
            lambda p: p.value + jitter * SeededRng(seed).child(50 + params.names().index(p.name)).normal(*p.shape)
        )
    return params.detach()


def _zeroed(params, *prefixes):
    return params.map(lambda p: torch.zeros_like(p.value) if p.name.startswith(prefixes) else p.value).detach()


def test_encode_zero_parameters_gives_unit_gaussians():
    params = _zeroed(_params(), "semantic.", "variation.")
    q_s, q_v = encode(SeededRng(1).normal(4, 3), params)
    for q in (q_s, q_v):
        assert torch.count_nonzero(q.mean) == 0
        assert torch.count_nonzero(q.log_var) == 0


def test_encode_is_linear_without_bias():
    params = _zeroed(_params(jitter=0.3), "semantic.mu.bias", "variation.mu.bias")
    R = SeededRng(2).normal(4, 3)
    single, _ = encode(R, params)
    double, _ = encode(2 * R, params)
    torch.testing.assert_close(double.mean, 2 * single.mean)


def test_encode_matches_direct_affine():
    params = _params(jitter=0.2)
    R = SeededRng(3).normal(4, 3)
    q_s, q_v = encode(R, params)
    torch.testing.assert_close(q_s.mean, R @ params.value("semantic.mu.weight") + params.value("semantic.mu.bias"))
    torch.testing.assert_close(
        q_v.log_var, R @ params.value("variation.logvar.weight") + params.value("variation.logvar.bias")
    )


def test_encode_clamps_log_variance():
    params = _params().replace({"semantic.logvar.bias": torch.full((2,), -50.0, dtype=DTYPE)})
    q_s, _ = encode(torch.zeros(2, 3, dtype=DTYPE), params)
    assert float(q_s.log_var.min()) == LOG_VAR_MIN


def test_reparam_sample_collapsed_variance():
    q = GaussianPosterior(torch.tensor([[1.5, -2.0]], dtype=DTYPE), torch.full((1, 2), LOG_VAR_MIN, dtype=DTYPE))
    sample = reparam_sample(q, SeededRng(4), num_samples=100)
    assert float((sample - q.mean).abs().max()) <= 5 * math.exp(LOG_VAR_MIN / 2)


def test_reparam_sample_mean():
    q = GaussianPosterior(torch.tensor([[0.3, -1.0]], dtype=DTYPE), torch.tensor([[0.5, -0.7]], dtype=DTYPE))
    n = 100_000
    samples = reparam_sample(q, SeededRng(5), num_samples=n)
    bound = 4 * q.std / math.sqrt(n)
    assert torch.all((samples.mean(0) - q.mean).abs() <= bound)


def test_reparam_gradient_through_mean_is_one():
    noise = SeededRng(6).normal(1000, 1, 1)
    log_var = torch.tensor([[0.2]], dtype=DTYPE)

    def estimate(mu):
        q = GaussianPosterior(torch.tensor([[mu]], dtype=DTYPE), log_var)
        return float(reparam_sample(q, noise=noise).mean())

    eps = 1e-5
    assert (estimate(0.4 + eps) - estimate(0.4 - eps)) / (2 * eps) == pytest.approx(1.0, abs=1e-8)


def test_reparam_sample_needs_randomness():
    q = GaussianPosterior(torch.zeros(1, 1, dtype=DTYPE), torch.zeros(1, 1, dtype=DTYPE))
    with pytest.raises(ValidationError):
        reparam_sample(q)


def test_decode_zero_residual_density():
    r = SeededRng(7).normal(1, 3)
    params = _zeroed(_params(), "decoder.").replace({"decoder.bias": r[0]})
    s, v = torch.zeros(1, 2, dtype=DTYPE), torch.zeros(1, 2, dtype=DTYPE)
    density = decode_log_density(r, s, v, params)
    assert float(density) == pytest.approx(-1.5 * math.log(2 * math.pi), abs=1e-12)


def test_decode_density_falls_with_residual():
    params = _params(jitter=0.2)
    s, v = SeededRng(8).normal(1, 2), SeededRng(9).normal(1, 2)
    mean, _ = decode(s, v, params)
    direction = SeededRng(10).normal(1, 3)
    densities = [float(decode_log_density(mean + t * direction, s, v, params)) for t in (0.0, 0.5, 1.0, 2.0)]
    assert densities == sorted(densities, reverse=True)


def test_decode_density_matches_gaussian_oracle():
    params = _params(jitter=0.3)
    r, s, v = SeededRng(11).normal(4, 3), SeededRng(12).normal(4, 2), SeededRng(13).normal(4, 2)
    mean, sigma = decode(s, v, params)
    expected = (-0.5 * ((r - mean) / sigma) ** 2 - torch.log(sigma) - 0.5 * math.log(2 * math.pi)).sum(-1)
    torch.testing.assert_close(decode_log_density(r, s, v, params), expected, atol=1e-12, rtol=0)


def test_classify():
    s = SeededRng(14).normal(5, 2)
    uniform = classify(s, _zeroed(_params(), "classifier."))
    torch.testing.assert_close(uniform, torch.full((5, 3), 1 / 3, dtype=DTYPE))

    params = _params(jitter=0.4)
    probs = classify(s, params)
    torch.testing.assert_close(probs.sum(-1), torch.ones(5, dtype=DTYPE), atol=1e-12, rtol=0)
    shifted = params.replace({"classifier.bias": params.value("classifier.bias") + 7.0})
    torch.testing.assert_close(classify(s, shifted), probs)
    logits = s @ params.value("classifier.weight") + params.value("classifier.bias")
    torch.testing.assert_close(probs, torch.exp(logits - torch.logsumexp(logits, -1, keepdim=True)))


def test_effective_cholesky_at_init_is_identity():
    torch.testing.assert_close(effective_cholesky(_params().prior()), torch.eye(4, dtype=DTYPE),
                               atol=1e-12, rtol=0)


def test_prior_log_prob_unknown_mode():
    with pytest.raises(ValidationError):
        prior_log_prob(torch.zeros(1, 4, dtype=DTYPE), _params(), "mixture")


def test_elbo_uniform_classifier():
    params = _zeroed(_params(jitter=0.2), "classifier.")
    R = SeededRng(15).normal(4, 3)
    y = torch.tensor([0, 1, 2, 0])
    result = elbo(R, y, 6, "joint", params, SeededRng(16))
    assert result.t1 == pytest.approx(math.log(1 / 3), abs=1e-12)

    # Uniform weights: T3 is the plain sample mean of log p - log q
    q_s, q_v = encode(R, params)
    s = reparam_sample(q_s, SeededRng(16).child(0), 6)
    v = reparam_sample(q_v, SeededRng(16).child(1), 6)
    log_ratio = prior_log_prob(torch.cat([s, v], -1), params, "joint") - posterior_log_prob(s, q_s) \
        - posterior_log_prob(v, q_v)
    assert result.t3 == pytest.approx(float(log_ratio.mean()), abs=1e-10)


def test_elbo_identity_cholesky_matches_independent_prior():
    params = _params(jitter=0.2).replace({"prior.chol": _params().value("prior.chol")})
    R = SeededRng(17).normal(5, 3)
    y = torch.tensor([0, 1, 2, 1, 0])
    joint = elbo(R, y, 4, "joint", params, SeededRng(18))
    independent = elbo(R, y, 4, "independent", params, SeededRng(18))
    assert joint.t3 == pytest.approx(independent.t3, abs=1e-9)
    assert joint.t1 == independent.t1
    assert joint.t2 == independent.t2


def test_elbo_errors():
    params = _params()
    R = torch.zeros(2, 3, dtype=DTYPE)
    with pytest.raises(ValidationError):
        elbo(R, torch.tensor([0, 1]), 0, "joint", params, SeededRng(0))
    with pytest.raises(ValidationError):
        elbo(R, torch.tensor([0]), 1, "joint", params, SeededRng(0))
    with pytest.raises(ValidationError):
        elbo(R, torch.tensor([0, 1]), 1, "joint", params)


def test_elbo_clamps_degenerate_classifier(caplog):
    params = _zeroed(_params(), "classifier.weight").replace(
        {"classifier.bias": torch.tensor([100.0, -100.0, -100.0], dtype=DTYPE)}
    )
    with caplog.at_level(logging.WARNING):
        result = elbo(torch.zeros(1, 3, dtype=DTYPE), torch.tensor([1]), 2, "joint", params, SeededRng(0))
    assert result.degenerate == 1
    assert result.t1 == pytest.approx(math.log(1e-30))
    assert "clamped" in caplog.text


@pytest.mark.parametrize("mode", ["joint", "independent"])
def test_elbo_matches_quadrature(mode):
    params = _params(rep_dim=2, ks=1, kv=1, C=2, seed=3, jitter=0.4)
    r = torch.tensor([[0.6, -0.4]], dtype=DTYPE)
    y = torch.tensor([1])
    estimate = float(elbo(r, y, 100_000, mode, params, SeededRng(19)).value)

    q_s, q_v = encode(r, params)
    grid = 1201
    s = torch.linspace(-8, 8, grid, dtype=DTYPE) * q_s.std[0, 0] + q_s.mean[0, 0]
    v = torch.linspace(-8, 8, grid, dtype=DTYPE) * q_v.std[0, 0] + q_v.mean[0, 0]
    S, V = torch.meshgrid(s, v, indexing="ij")
    S, V = S.reshape(-1, 1), V.reshape(-1, 1)
    cell = float((s[1] - s[0]) * (v[1] - v[0]))

    log_q = posterior_log_prob(S, q_s) + posterior_log_prob(V, q_v)
    likelihood = classify(S, params)[:, 1]
    integrand = decode_log_density(r, S, V, params) + prior_log_prob(torch.cat([S, V], -1), params, mode) - log_q
    mass = torch.exp(log_q) * likelihood * cell
    q_y = mass.sum()
    expected = float(torch.log(q_y) + (mass * integrand).sum() / q_y)
    assert estimate == pytest.approx(expected, rel=0.01)


def test_elbo_kl_matches_closed_form_for_independent_prior():
    params = _zeroed(_params(jitter=0.3), "classifier.")
    R = SeededRng(20).normal(1, 3)
    n = 100_000
    noise = (SeededRng(21).normal(n, 1, 2), SeededRng(22).normal(n, 1, 2))
    result = elbo(R, torch.tensor([0]), n, "independent", params, noise=noise)

    q_s, q_v = encode(R, params)
    s, v = reparam_sample(q_s, noise=noise[0]), reparam_sample(q_v, noise=noise[1])
    log_ratio = prior_log_prob(torch.cat([s, v], -1), params, "independent") - posterior_log_prob(s, q_s) \
        - posterior_log_prob(v, q_v)
    kl = sum(float(0.5 * (q.mean ** 2 + torch.exp(q.log_var) - q.log_var - 1).sum()) for q in (q_s, q_v))
    standard_error = float(log_ratio.std()) / math.sqrt(n)
    assert abs(result.t3 + kl) <= 3 * standard_error


def test_elbo_gradients_with_common_random_numbers():
    params = _params(jitter=0.2)
    R = SeededRng(23).normal(4, 3)
    y = torch.tensor([2, 0, 1, 1])
    noise = (SeededRng(24).normal(3, 4, 2), SeededRng(25).normal(3, 4, 2))

    def loss(g):
        return elbo(R, y, 3, "joint", g, noise=noise).value

    assert finite_diff_check(loss, params, autograd_grads(loss, params)) <= 1e-4


def test_predict_uniform_classifier():
    params = _zeroed(_params(), "classifier.")
    labels, confidence = predict(SeededRng(26).normal(4, 3), params)
    assert labels.tolist() == [0, 0, 0, 0]
    torch.testing.assert_close(confidence, torch.full((4,), 1 / 3, dtype=DTYPE))


def test_predict_is_deterministic_and_equivariant():
    params = _params(jitter=0.3)
    R = SeededRng(27).normal(6, 3)
    labels, confidence = predict(R, params)
    again, _ = predict(R, params, rng=SeededRng(99))
    assert torch.equal(labels, again)
    perm = torch.as_tensor(SeededRng(28).permutation(6))
    permuted, permuted_conf = predict(R[perm], params)
    assert torch.equal(permuted, labels[perm])
    torch.testing.assert_close(permuted_conf, confidence[perm])


def test_predict_monte_carlo_agrees_on_separated_classes():
    params = _params(rep_dim=2, ks=1, kv=1, C=2, seed=4)
    params = params.replace({
        "semantic.mu.weight": torch.tensor([[1.0], [0.0]], dtype=DTYPE),
        "semantic.logvar.bias": torch.tensor([-4.0], dtype=DTYPE),
        "semantic.logvar.weight": torch.zeros(2, 1, dtype=DTYPE),
        "classifier.weight": torch.tensor([[-3.0, 3.0]], dtype=DTYPE),
    })
    R = torch.cat([torch.full((50, 1), -2.0), torch.full((50, 1), 2.0)]).to(DTYPE)
    R = torch.cat([R, SeededRng(29).normal(100, 1)], dim=1)
    deterministic, _ = predict(R, params)
    sampled, _ = predict(R, params, S=10_000, rng=SeededRng(30))
    agreement = float((deterministic == sampled).to(DTYPE).mean())
    assert agreement >= 0.99
    np.testing.assert_array_equal(deterministic.numpy(), [0] * 50 + [1] * 50)
