import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from repshot.classification import (
    ClassifierConfig,
    GatLayerParams,
    GatModel,
    MissingClass,
    NonConvergence,
    attention_coefficients,
    classify,
    gat_layer_forward,
    neighbourhood_mask,
    predict_proba,
    train_classifier,
)
from repshot.graph_core import ConnectivityMatrix, DimensionMismatch, Population, permute_nodes, threshold_by_mean
from repshot.layers import reset_double, seeded_generator

import oracles


def _params(w, a, alpha=0.2):
    return GatLayerParams(torch.as_tensor(np.asarray(w, dtype=float)), torch.as_tensor(np.asarray(a, dtype=float)), alpha)


def _model_with_output(p_first, r=4):
    """GatModel whose class probabilities are (p_first, 1 - p_first) for any input."""
    model = GatModel(r, (3,), dropout_rate=0.0, classes=("A", "B"))
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
        model.readout.bias.copy_(torch.tensor([math.log(p_first), math.log(1 - p_first)], dtype=torch.float64))
    return model


# -- attention coefficients -------------------------------------------------------------------------


def test_single_neighbour_gets_all_weight():
    h = np.array([[0.3], [0.9], [0.1]])
    alpha = attention_coefficients(h, _params([[1.0]], [0.7, -0.4]), np.zeros((3, 3), dtype=bool))
    np.testing.assert_array_equal(alpha.numpy(), np.eye(3))


def test_equal_scores_split_evenly():
    h = np.array([[0.5], [0.5], [0.2]])
    mask = np.zeros((3, 3), dtype=bool)
    mask[0, 1] = mask[1, 0] = True
    alpha = attention_coefficients(h, _params([[1.0]], [0.3, 0.8]), mask).numpy()
    assert alpha[0, 0] == pytest.approx(0.5, abs=1e-15) and alpha[0, 1] == pytest.approx(0.5, abs=1e-15)


def test_closed_form_softmax():
    # node 0 scores: self 0, neighbour ln 2
    h = np.array([[0.0], [math.log(2)]])
    mask = np.array([[False, True], [True, False]])
    alpha = attention_coefficients(h, _params([[1.0]], [0.0, 1.0]), mask).numpy()
    assert alpha[0, 1] == pytest.approx(2 / 3, abs=1e-15)
    assert alpha[0, 0] == pytest.approx(1 / 3, abs=1e-15)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_attention_rows_are_stochastic_on_neighbourhoods(seed):
    rng = np.random.default_rng(seed)
    r, f, f2 = rng.integers(2, 11), rng.integers(1, 6), rng.integers(1, 6)
    mask = rng.random((r, r)) < 0.4
    alpha = attention_coefficients(rng.normal(size=(r, f)), _params(rng.normal(size=(f, f2)), rng.normal(size=2 * f2)), mask).numpy()
    allowed = mask | np.eye(r, dtype=bool)
    np.testing.assert_allclose(alpha.sum(1), 1.0, atol=1e-9)
    assert np.all(alpha[~allowed] == 0)


def test_attention_dimension_checks():
    with pytest.raises(DimensionMismatch):
        attention_coefficients(np.zeros((3, 2)), _params(np.zeros((4, 2)), np.zeros(4)), np.zeros((3, 3), bool))
    with pytest.raises(DimensionMismatch):
        attention_coefficients(np.zeros((3, 2)), _params(np.zeros((2, 2)), np.zeros(4)), np.zeros((4, 4), bool))
    with pytest.raises(DimensionMismatch):
        GatLayerParams(torch.zeros(2, 2), torch.zeros(3))


# -- layer forward -------------------------------------------------------------------------------------------


def test_isolated_node_sees_itself(rng):
    h = rng.normal(size=(3, 2))
    w = rng.normal(size=(2, 3))
    out = gat_layer_forward(h, _params(w, rng.normal(size=6)), np.zeros((3, 3), bool)).numpy()
    wh = h @ w
    np.testing.assert_allclose(out, np.where(wh > 0, wh, np.expm1(wh)), atol=1e-15)


def test_identity_weight_uniform_attention_averages(rng):
    h = rng.normal(size=(3, 2))
    mask = np.zeros((3, 3), bool)
    mask[0, 1] = mask[1, 0] = True
    out = gat_layer_forward(h, _params(np.eye(2), np.zeros(4)), mask).numpy()
    mean = 0.5 * (h[0] + h[1])
    np.testing.assert_allclose(out[0], np.where(mean > 0, mean, np.expm1(mean)), atol=1e-15)


def test_layer_matches_loop_oracle(rng):
    h, w, a = rng.normal(size=(5, 4)), rng.normal(size=(4, 3)), rng.normal(size=6)
    mask = rng.random((5, 5)) < 0.5
    coef, expected = oracles.attention_loop(h, w, a, mask, alpha=0.2)
    params = _params(w, a)
    np.testing.assert_allclose(attention_coefficients(h, params, mask).numpy(), coef, atol=1e-12)
    np.testing.assert_allclose(gat_layer_forward(h, params, mask).numpy(), expected, atol=1e-12)


def test_neighbourhood_mask_is_mean_threshold_plus_self_loops(rng):
    a = oracles.random_graph(rng, 7)
    expected = threshold_by_mean(a).with_self_loops()
    assert np.array_equal(neighbourhood_mask(torch.as_tensor(a)).numpy(), expected)


# -- classify ---------------------------------------------------------------------------------------------------


def test_classify_argmax(rng):
    label, probs = classify(_model_with_output(0.7), oracles.random_graph(rng, 4))
    assert label == "A"
    assert probs == pytest.approx((0.7, 0.3), abs=1e-12)


def test_classify_tie_goes_to_first_class(rng):
    label, probs = classify(_model_with_output(0.5), oracles.random_graph(rng, 4))
    assert probs == (0.5, 0.5)
    assert label == "A"


def test_classify_threshold():
    model = _model_with_output(0.3)
    g = np.zeros((4, 4))
    assert classify(model, g)[0] == "B"
    assert classify(model, g, threshold=0.8)[0] == "A"


def test_classify_dimension_mismatch(rng):
    with pytest.raises(DimensionMismatch):
        classify(_model_with_output(0.5, r=4), oracles.random_graph(rng, 5))


def _random_model(r, seed=0):
    return reset_double(GatModel(r, (6, 5), dropout_rate=0.6), seeded_generator(seed))


def test_classify_is_permutation_invariant(rng):
    model = _random_model(7)
    g = oracles.random_graph(rng, 7)
    for _ in range(5):
        perm = rng.permutation(7)
        _, p = classify(model, g)
        _, q = classify(model, permute_nodes(g, perm).weights.copy())
        np.testing.assert_allclose(p, q, atol=1e-12)


def test_inference_is_deterministic(rng):
    model = _random_model(6)
    model.train()  # classify must switch dropout off by itself
    g = oracles.random_graph(rng, 6)
    assert classify(model, g) == classify(model, g)
    assert model.training


def test_predict_proba_rows_sum_to_one(rng):
    probs = predict_proba(_random_model(5), [oracles.random_graph(rng, 5) for _ in range(4)])
    assert probs.shape == (4, 2)
    np.testing.assert_allclose(probs.sum(1), 1.0, atol=1e-12)


# -- training -------------------------------------------------------------------------------------------------------


def _orthogonal_templates(r=6):
    """A clique on the first half vs the complete bipartite graph between halves."""
    half = r // 2
    a = np.zeros((r, r))
    a[:half, :half] = 1.0
    b = np.zeros((r, r))
    b[:half, half:] = 1.0
    b = b + b.T
    np.fill_diagonal(a, 0)
    return ConnectivityMatrix(a), ConnectivityMatrix(b)


def test_orthogonal_templates_are_separated():
    a, b = _orthogonal_templates()
    assert not np.any((a.weights > 0) & (b.weights > 0))
    model = train_classifier({"CN": a, "AD": b}, ClassifierConfig(epochs=200), classes=("CN", "AD"))
    assert classify(model, a)[0] == "CN"
    assert classify(model, b)[0] == "AD"


def test_training_from_population(rng):
    a, b = _orthogonal_templates()
    pop = Population([a, b, a, b], labels=[0, 1, 0, 1])
    model = train_classifier(pop, ClassifierConfig(epochs=50, learning_rate=5e-3))
    assert model.classes == (0, 1)
    assert [classify(model, g)[0] for g in (a, b)] == [0, 1]


def test_training_is_deterministic():
    a, b = _orthogonal_templates()
    cfg = ClassifierConfig(epochs=20, rng_seed=3)
    m1 = train_classifier({0: a, 1: b}, cfg)
    m2 = train_classifier({0: a, 1: b}, cfg)
    for p, q in zip(m1.parameters(), m2.parameters()):
        assert torch.equal(p, q)


def test_training_does_not_touch_global_rng():
    a, b = _orthogonal_templates()
    torch.manual_seed(0)
    before = torch.rand(3)
    torch.manual_seed(0)
    train_classifier({0: a, 1: b}, ClassifierConfig(epochs=5))
    assert torch.equal(torch.rand(3), before)


def test_missing_class():
    a, _ = _orthogonal_templates()
    with pytest.raises(MissingClass):
        train_classifier(Population([a, a], labels=[0, 0]), ClassifierConfig(epochs=1))
    with pytest.raises(MissingClass):
        train_classifier(Population([a, a]), ClassifierConfig(epochs=1))
    with pytest.raises(MissingClass):
        train_classifier(Population([a, a], labels=[0, 1]), ClassifierConfig(epochs=1), classes=(0, 2))


def test_nan_loss_raises(monkeypatch):
    a, b = _orthogonal_templates()
    monkeypatch.setattr(GatModel, "forward", lambda self, adj: torch.full((adj.shape[0], 2), float("nan"), dtype=torch.float64, requires_grad=True))
    with pytest.raises(NonConvergence):
        train_classifier({0: a, 1: b}, ClassifierConfig(epochs=1))


def test_config_validation():
    with pytest.raises(ValueError):
        ClassifierConfig(dropout_rate=1.0)
    with pytest.raises(ValueError):
        ClassifierConfig(learning_rate=0)
