import json

import numpy as np
import pydantic
import pytest
import torch

from mldgg.core.errors import ShapeError, ValidationError
from mldgg.core.numcore import DTYPE, SeededRng
from mldgg.data.graphdata import (
    Graph, ScenarioSpec, generate_sbm_domain, load_graph, normalize_adjacency, pad_graph, save_graph,
    split_episode, zero_pad_align,
)
from mldgg.models.gnn import GnnParams, gcn_forward

from conftest import ring_graph, sbm_config


def _write(path, **record):
    base = dict(num_nodes=2, num_classes=2, domain="d", edges=[[0, 1]], features=[[0.0], [1.0]], labels=[0, 1])
    base.update(record)
    path.write_text(json.dumps(base))
    return path


def test_graph_rejects_bad_edges_and_labels():
    features = torch.zeros(3, 1, dtype=DTYPE)
    with pytest.raises(ValidationError, match="edge endpoint out of range"):
        Graph(n=3, edges=((0, 5),), features=features, labels=(0, 0, 0), num_classes=1)
    with pytest.raises(ValidationError, match="self-loop"):
        Graph(n=3, edges=((1, 1),), features=features, labels=(0, 0, 0), num_classes=1)
    with pytest.raises(ValidationError, match="duplicate edge"):
        Graph(n=3, edges=((0, 1), (1, 0)), features=features, labels=(0, 0, 0), num_classes=1)
    with pytest.raises(ValidationError, match="label out of range at node 2"):
        Graph(n=3, edges=(), features=features, labels=(0, 0, 4), num_classes=2)


def test_load_minimal_graph(tmp_path):
    graph = load_graph(_write(tmp_path / "g.json"))
    assert graph.n == 2
    assert graph.edges == ((0, 1),)
    assert graph.domain_name == "d"


def test_load_graph_out_of_range_edge(tmp_path):
    path = _write(tmp_path / "g.json", num_nodes=3, edges=[[0, 5]], features=[[0.0]] * 3, labels=[0, 1, 0])
    with pytest.raises(ValidationError, match="edge endpoint out of range"):
        load_graph(path)


def test_load_graph_rejects_unknown_fields(tmp_path):
    with pytest.raises(ValidationError, match="color"):
        load_graph(_write(tmp_path / "g.json", color="red"))


def test_load_graph_names_malformed_field(tmp_path):
    with pytest.raises(ValidationError, match="labels"):
        load_graph(_write(tmp_path / "g.json", labels="oops"))


def test_load_graph_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_graph(tmp_path / "absent.json")


def test_save_load_round_trip(tmp_path):
    graph = generate_sbm_domain(sbm_config(), SeededRng(2))
    save_graph(graph, tmp_path / "g.json")
    assert load_graph(tmp_path / "g.json").same_as(graph)
    keys = list(json.loads((tmp_path / "g.json").read_text()))
    assert keys == ["num_nodes", "num_classes", "domain", "edges", "features", "labels"]


def test_sbm_block_extremes():
    graph = generate_sbm_domain(sbm_config(n=12, num_classes=3, p_in=1.0, p_out=0.0), SeededRng(0))
    labels = graph.labels
    for i, j in graph.edges:
        assert labels[i] == labels[j]
    # Every same-class pair: 3 classes of 4 nodes
    assert len(graph.edges) == 3 * 6


def test_sbm_is_deterministic():
    cfg = sbm_config(rewire_fraction=0.2)
    assert generate_sbm_domain(cfg, SeededRng(4)).same_as(generate_sbm_domain(cfg, SeededRng(4)))


def test_sbm_rewiring_keeps_edge_count():
    cfg = sbm_config(n=30, rewire_fraction=0.5)
    rewired = generate_sbm_domain(cfg, SeededRng(8))
    plain = generate_sbm_domain(cfg.model_copy(update={"rewire_fraction": 0.0}), SeededRng(8))
    assert len(rewired.edges) == len(plain.edges)


def test_sbm_fewer_nodes_than_classes():
    with pytest.raises(ValidationError, match="fewer nodes than classes"):
        generate_sbm_domain(sbm_config(n=2, num_classes=3), SeededRng(0))


def test_sbm_edge_count_matches_binomial():
    cfg = sbm_config(n=60, num_classes=3, p_in=0.3, p_out=0.05)
    same_pairs = 3 * (20 * 19 // 2)
    cross_pairs = 60 * 59 // 2 - same_pairs
    mean = same_pairs * 0.3 + cross_pairs * 0.05
    std = np.sqrt(same_pairs * 0.3 * 0.7 + cross_pairs * 0.05 * 0.95)
    for seed in range(100):
        count = len(generate_sbm_domain(cfg, SeededRng(seed)).edges)
        assert abs(count - mean) <= 4 * std


def test_zero_pad_align():
    narrow = ring_graph(dim=2, num_classes=2)
    wide = ring_graph(dim=5, num_classes=3, name="wide")
    assert zero_pad_align([narrow])[0] is narrow

    padded = zero_pad_align([narrow, wide])
    assert [g.num_features for g in padded] == [5, 5]
    assert [g.num_classes for g in padded] == [3, 3]
    assert torch.equal(padded[0].features[:, :2], narrow.features)
    assert torch.count_nonzero(padded[0].features[:, 2:]) == 0
    assert padded[0].labels == narrow.labels
    assert all(a.same_as(b) for a, b in zip(zero_pad_align(padded), padded))


def test_pad_graph_rejects_wider_graph():
    with pytest.raises(ShapeError):
        pad_graph(ring_graph(dim=5), 3, 2)


def test_padded_logits_match_unpadded():
    graph = ring_graph(dim=2)
    padded = pad_graph(graph, 5, 2)
    A_hat = normalize_adjacency(graph)
    params = GnnParams.initialize([2, 3, 2], SeededRng(1))
    first = params.value("layer0.weight")
    padded_params = params.replace({"layer0.weight": torch.cat([first, torch.zeros(3, 3, dtype=DTYPE)])})
    torch.testing.assert_close(
        gcn_forward(padded.features, A_hat, A_hat, padded_params, 1.0),
        gcn_forward(graph.features, A_hat, A_hat, params, 1.0),
    )


def test_split_half():
    graph = ring_graph(n=10)
    split = split_episode(graph, 0.5, SeededRng(0))
    assert len(split.support) == 5
    assert len(split.query) == 5
    assert not set(split.support) & set(split.query)
    assert split == split_episode(graph, 0.5, SeededRng(0))


@pytest.mark.parametrize("fraction", [0.1, 0.3, 0.5, 0.9])
def test_split_partitions_and_stratifies(fraction):
    graph = generate_sbm_domain(sbm_config(n=31, num_classes=3), SeededRng(3))
    split = split_episode(graph, fraction, SeededRng(9))
    assert sorted(split.support + split.query) == list(range(graph.n))
    assert {graph.labels[i] for i in split.support} == {0, 1, 2}


@pytest.mark.parametrize("n, num_classes", [(6, 3), (8, 4)])
def test_split_grows_support_to_cover_every_class(n, num_classes):
    graph = ring_graph(n=n, num_classes=num_classes)
    split = split_episode(graph, 0.3, SeededRng(0))
    assert len(split.support) == num_classes
    assert sorted(graph.labels[i] for i in split.support) == list(range(num_classes))
    assert sorted(split.support + split.query) == list(range(n))


def test_split_rejects_bad_fraction():
    with pytest.raises(ValidationError):
        split_episode(ring_graph(), 1.0, SeededRng(0))


def test_split_support_frequency_is_uniform():
    graph = ring_graph(n=10)
    counts = np.zeros(10)
    for seed in range(1000):
        for node in split_episode(graph, 0.5, SeededRng(seed)).support:
            counts[node] += 1
    np.testing.assert_allclose(counts / 1000, 0.5, atol=0.05)


def test_normalize_adjacency():
    empty = Graph(n=3, edges=(), features=torch.zeros(3, 1, dtype=DTYPE), labels=(0, 0, 0), num_classes=1)
    assert torch.equal(normalize_adjacency(empty), torch.eye(3, dtype=DTYPE))

    edge = Graph(n=2, edges=((0, 1),), features=torch.zeros(2, 1, dtype=DTYPE), labels=(0, 0), num_classes=1)
    torch.testing.assert_close(normalize_adjacency(edge), torch.full((2, 2), 0.5, dtype=DTYPE))


def test_normalize_regular_graph_preserves_constants():
    A_hat = normalize_adjacency(ring_graph(n=7))
    torch.testing.assert_close(A_hat @ torch.ones(7, dtype=DTYPE), torch.ones(7, dtype=DTYPE), atol=1e-12, rtol=0)
    torch.testing.assert_close(A_hat, A_hat.T)
    assert float(A_hat.min()) >= 0.0 and float(A_hat.max()) <= 1.0


def test_scenario_spec_validation():
    with pytest.raises(pydantic.ValidationError):
        ScenarioSpec(sources=["a"], target="a")
    with pytest.raises(pydantic.ValidationError):
        ScenarioSpec(sources=[], target="b")
    assert ScenarioSpec(sources=["a", "b"], target="c").mode == "S12T3"
