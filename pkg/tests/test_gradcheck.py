import pytest

from mldgg.core.gradcheck import REGISTRY, GradCheck, run_gradchecks
from mldgg.core.numcore import DiffParam, ParamGroup


def _quadratic(sign: float) -> GradCheck:
    def build(rng):
        params = ParamGroup([DiffParam.leaf("x", rng.normal(3))])
        analytic = params.map(lambda p: sign * 2.0 * p.value.detach())
        return (lambda g: (g.value("x") ** 2).sum()), params, analytic
    return GradCheck("flipped" if sign < 0 else "quadratic", build)


def test_registry_covers_every_operation():
    assert len(REGISTRY) >= 8
    for name in ("edge_probs", "reinforce_surrogate", "gcn_forward", "gcn_backward", "encode",
                 "decode_log_density", "classify", "elbo_joint", "elbo_independent", "task_loss"):
        assert name in REGISTRY


def test_all_registered_checks_pass():
    results = run_gradchecks(instances=3)
    assert [r.name for r in results] == list(REGISTRY)
    failed = [(r.name, r.max_error) for r in results if not r.passed]
    assert failed == []


def test_sign_flip_is_reported_by_name():
    results = run_gradchecks([_quadratic(1.0), _quadratic(-1.0)], instances=2)
    assert results[0].passed
    assert results[0].max_error <= 1e-6
    assert results[1].name == "flipped"
    assert not results[1].passed
    assert results[1].max_error == pytest.approx(1.0, abs=1e-6)


def test_results_are_reproducible():
    first = run_gradchecks([REGISTRY["edge_probs"]], instances=2, seed=5)
    second = run_gradchecks([REGISTRY["edge_probs"]], instances=2, seed=5)
    assert first[0].max_error == second[0].max_error
