import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import dominant_eigenvalue, two_cluster_graph
from scdgcn.dataset import GeneratorConfig, SpleenDescriptor, generate_synthetic
from scdgcn.errors import ConfigurationError, DataError, ShapeError
from scdgcn.gcn import (GCNConfig, PopulationGraph, SimilarityInputs, attach_node, build_graph,
                        chebyshev_supports, export_graph, normalize_propagation, predict_gcn, similarity,
                        similarity_matrix, train_gcn)

M = SpleenDescriptor.measured
mpmath.mp.dps = 50


def oracle(x):
    return float(mpmath.exp(-mpmath.mpf(x)))


@pytest.mark.parametrize("a,b,expected_exponent", [
    (SimilarityInputs((5.0, 1.0), M(3)), SimilarityInputs((5.0, 1.0), M(4)), 0),
    (SimilarityInputs((5.0, 1.0), M(3)), SimilarityInputs((5.0, 1.0), M(3)), 10),
    (SimilarityInputs((10.0, 2.0), M(3)), SimilarityInputs((13.0, 6.0), M(4)), 5),
])
def test_kernel_examples(a, b, expected_exponent):
    got = similarity(a, b, lam=10.0, mode="literal")
    assert abs(got - oracle(expected_exponent)) <= 1e-12 * oracle(expected_exponent)


def test_corrected_mode_flips_bracket():
    a, b = SimilarityInputs((1.0, 1.0), M(3)), SimilarityInputs((1.0, 1.0), M(3))
    assert similarity(a, b, 10.0, "corrected") == 1.0
    assert similarity(a, SimilarityInputs((1.0, 1.0), M(5)), 10.0, "corrected") == pytest.approx(oracle(10))


def test_removed_never_equals_zero():
    a = SimilarityInputs((1.0, 1.0), M(0))
    b = SimilarityInputs((1.0, 1.0), SpleenDescriptor.removed())
    assert similarity(a, b, 10.0, "literal") == 1.0


def test_single_term_is_absolute_difference():
    a, b = SimilarityInputs((3.0, 9.0), M(1)), SimilarityInputs((7.5, 0.0), M(1))
    assert similarity(a, b, terms=("hypo",)) == pytest.approx(oracle(4.5), rel=1e-14)


spleens = st.one_of(st.just(SpleenDescriptor.removed()), st.integers(0, 15).map(M))
pcts = st.tuples(st.floats(0, 40), st.floats(0, 11))


@settings(max_examples=300)
@given(pcts, pcts, spleens, spleens, st.sampled_from(["literal", "corrected"]))
def test_kernel_symmetric_and_bounded(h1, h2, s1, s2, mode):
    a, b = SimilarityInputs(h1, s1), SimilarityInputs(h2, s2)
    w = similarity(a, b, 10.0, mode)
    assert w == similarity(b, a, 10.0, mode)
    assert 0.0 < w <= 1.0 or w == 0.0


@settings(max_examples=300)
@given(pcts, pcts, spleens, spleens, st.floats(0.01, 5.0))
def test_kernel_monotone_in_distance(h1, h2, s1, s2, extra):
    a = SimilarityInputs(h1, s1)
    b = SimilarityInputs(h2, s2)
    d = np.array(h2) - np.array(h1)
    direction = d / np.linalg.norm(d) if np.linalg.norm(d) > 0 else np.array([1.0, 0.0])
    far = SimilarityInputs(tuple(np.maximum(np.array(h2) + extra * direction, 0.0)), s2)
    if np.linalg.norm(np.array(far.h_hat) - h1) > np.linalg.norm(d) + 1e-9:
        near_w, far_w = similarity(a, b, 0.0), similarity(a, far, 0.0)
        assert far_w < near_w or near_w == 0.0


def test_kernel_argument_checks():
    a = SimilarityInputs((1.0, 1.0), M(1))
    with pytest.raises(ConfigurationError):
        similarity(a, a, lam=-1.0)
    with pytest.raises(ConfigurationError):
        similarity(a, a, mode="bogus")
    with pytest.raises(ConfigurationError):
        similarity(a, a, terms=())
    with pytest.raises(DataError):
        SimilarityInputs((-1.0, 1.0), M(1))


def test_matrix_matches_pairwise():
    rng = np.random.default_rng(0)
    h = rng.uniform(0, 20, size=(7, 2))
    sp = [M(int(k)) for k in rng.integers(0, 3, 7)]
    A = similarity_matrix(h, sp, 10.0, "literal")
    assert np.all(np.diag(A) == 0) and np.array_equal(A, A.T)
    for i in range(7):
        for j in range(i + 1, 7):
            expected = similarity(SimilarityInputs(tuple(h[i]), sp[i]), SimilarityInputs(tuple(h[j]), sp[j]))
            assert A[i, j] == pytest.approx(expected, rel=1e-14)


def test_two_identical_samples_one_edge():
    A = similarity_matrix(np.array([[3.0, 1.0], [3.0, 1.0]]), [M(2), M(4)])
    np.testing.assert_array_equal(A, [[0.0, 1.0], [1.0, 0.0]])


def test_attach_node_equals_rebuild():
    rng = np.random.default_rng(1)
    h = rng.uniform(0, 20, size=(6, 2))
    sp = [M(int(k)) for k in rng.integers(0, 3, 6)] + [SpleenDescriptor.removed()]
    q = np.array([4.0, 2.0])
    for mode in ("literal", "corrected"):
        full = similarity_matrix(np.vstack([h, q]), sp, 10.0, mode)
        grown = attach_node(similarity_matrix(h, sp[:6], 10.0, mode), h, sp[:6], q, sp[6], 10.0, mode)
        np.testing.assert_array_equal(grown, full)


def test_standardised_distance_is_opt_in():
    h = np.array([[0.0, 0.0], [10.0, 1.0], [20.0, 3.0]])
    sp = [M(1), M(2), M(3)]
    raw = similarity_matrix(h, sp)
    scaled = similarity_matrix(h, sp, standardize=True)
    assert raw[0, 1] == pytest.approx(np.exp(-np.hypot(10, 1)))
    assert not np.allclose(raw, scaled)


# --- propagation ------------------------------------------------------------------

def test_isolated_nodes_give_identity():
    np.testing.assert_array_equal(normalize_propagation(np.zeros((4, 4))), np.eye(4))


def test_two_node_half():
    np.testing.assert_allclose(normalize_propagation(np.array([[0.0, 1.0], [1.0, 0.0]])), 0.5, rtol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 50), st.integers(0, 10_000))
def test_propagation_spectrum_bounded(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.random((n, n)) * (rng.random((n, n)) < 0.4)
    a = np.triu(a, 1)
    a = a + a.T
    S = normalize_propagation(a)
    assert np.allclose(S, S.T)
    assert dominant_eigenvalue(S) <= 1 + 1e-10


def test_chebyshev_first_supports():
    a = np.array([[0.0, 1.0], [1.0, 0.0]])
    s = chebyshev_supports(a, 3)
    np.testing.assert_array_equal(s[0], np.eye(2))
    np.testing.assert_allclose(s[1], -a)  # L - I for a 2-node graph


# --- GCN --------------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(3))
def test_two_cluster_separable(seed):
    g = two_cluster_graph(seed)
    model = train_gcn(g, GCNConfig(), seed)
    probs, pred = predict_gcn(model, g)
    assert np.all(pred[g.test_mask] == g.labels[g.test_mask])
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)


def test_isolated_graph_is_mlp_and_learns():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(30, 4))
    y = (x[:, 0] > 0).astype(int)
    g = PopulationGraph(np.zeros((30, 30)), x, y, np.arange(30) < 20, np.arange(30) >= 20, 2)
    model = train_gcn(g, GCNConfig(epochs=100), 0)
    assert model.loss_trace[-1] < model.loss_trace[0]


def test_training_deterministic_and_prediction_repeatable():
    g = two_cluster_graph(4)
    a, b = train_gcn(g, GCNConfig(epochs=40), 7), train_gcn(g, GCNConfig(epochs=40), 7)
    assert a.loss_trace == b.loss_trace
    np.testing.assert_array_equal(predict_gcn(a, g)[0], predict_gcn(a, g)[0])


def test_missing_class_rejected():
    g = two_cluster_graph(0)
    g.train_mask[g.labels == 1] = False
    g.test_mask[:] = ~g.train_mask
    with pytest.raises(DataError, match=r"\[1\]"):
        train_gcn(g)


def test_weight_decay_shrinks_first_layer():
    g = two_cluster_graph(1)
    plain = train_gcn(g, GCNConfig(epochs=100), 0)
    decayed = train_gcn(g, GCNConfig(epochs=100, weight_decay=0.5), 0)
    assert np.linalg.norm(decayed.params["0.W0"]) < np.linalg.norm(plain.params["0.W0"])


@pytest.mark.parametrize("order", [2, 3])
def test_chebyshev_gcn_trains(order):
    g = two_cluster_graph(2)
    model = train_gcn(g, GCNConfig(cheb_order=order, epochs=100), 0)
    assert model.loss_trace[-1] < 0.5 * model.loss_trace[0]


def test_graph_shape_checks():
    with pytest.raises(ShapeError):
        PopulationGraph(np.zeros((3, 3)), np.zeros((2, 1)), np.zeros(3, int), np.ones(3, bool), np.zeros(3, bool), 2)
    with pytest.raises(DataError):
        PopulationGraph(np.zeros((2, 2)), np.zeros((2, 1)), np.array([0, -1]), np.ones(2, bool), np.zeros(2, bool), 2)


# --- graph construction -------------------------------------------------------------

@pytest.fixture(scope="module")
def small_ds():
    return generate_synthetic(GeneratorConfig(num_patients=3, total_samples=12, height=64, width=16), 0)


def test_randomized_source_is_seeded(small_ds):
    feats = np.zeros((len(small_ds), 1))
    a = build_graph(small_ds, feats, "randomized", seed=3)
    b = build_graph(small_ds, feats, "randomized", seed=3)
    c = build_graph(small_ds, feats, "randomized", seed=4)
    np.testing.assert_array_equal(a.adjacency, b.adjacency)
    assert not np.array_equal(a.adjacency, c.adjacency)
    lab = small_ds.lab_matrix()
    assert np.all(a.h_used >= lab.min(0)) and np.all(a.h_used <= lab.max(0))


def test_estimated_source_needs_network(small_ds):
    from scdgcn.errors import UsageError
    with pytest.raises(UsageError):
        build_graph(small_ds, np.zeros((len(small_ds), 1)), "estimated")


def test_export_graph(tmp_path, small_ds):
    g = build_graph(small_ds, np.zeros((len(small_ds), 1)), "groundtruth")
    edges, nodes = export_graph(g, tmp_path)
    rows = edges.read_text().splitlines()
    assert rows[0] == "src,dst,weight"
    assert len(rows) - 1 == np.count_nonzero(np.triu(g.adjacency, 1))
    assert nodes.read_text().splitlines()[1].startswith(small_ds.sample_ids[0] + ",")
