import pytest

from mldgg.core.numcore import SeededRng
from mldgg.data.graphdata import Graph, SbmDomainConfig, generate_sbm_domain
from mldgg.models.structlearner import StructLearnerConfig
from mldgg.training.metaloop import TrainConfig


def ring_graph(n: int = 6, num_classes: int = 2, dim: int = 3, seed: int = 0, name: str = "ring") -> Graph:
    """n-cycle with seeded Gaussian features and alternating labels"""
    return Graph(
        n=n,
        edges=tuple((i, (i + 1) % n) for i in range(n)),
        features=SeededRng(seed).normal(n, dim),
        labels=tuple(i % num_classes for i in range(n)),
        num_classes=num_classes,
        domain_name=name,
    )


def sbm_config(name: str = "toy", n: int = 24, num_classes: int = 2, dim: int = 3, offset: float = 0.0,
               **knobs) -> SbmDomainConfig:
    means = [[(2.0 if d == c % dim else 0.0) + offset for d in range(dim)] for c in range(num_classes)]
    params = dict(name=name, n=n, num_classes=num_classes, feature_dim=dim, class_means=means,
                  noise_std=0.5, p_in=0.3, p_out=0.05)
    params.update(knobs)
    return SbmDomainConfig(**params)


def tiny_train_config(**updates) -> TrainConfig:
    params = dict(
        hidden_dim=4, rep_dim=3, semantic_dim=2, variation_dim=2, epochs=2, inner_steps=1,
        inner_lr=1e-2, outer_lr=1e-2, finetune_steps=2,
        struct=StructLearnerConfig(num_samples=2, num_pivots=2),
    )
    params.update(updates)
    return TrainConfig(**params)


@pytest.fixture
def source_graphs():
    return [generate_sbm_domain(sbm_config(f"src-{i}", offset=0.3 * i), SeededRng(7).child(i)) for i in range(2)]


@pytest.fixture
def target_graph():
    return generate_sbm_domain(sbm_config("tgt", offset=1.0), SeededRng(7).child(9))


@pytest.fixture
def train_cfg():
    return tiny_train_config()

