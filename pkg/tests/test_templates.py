import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from repshot.graph_core import ConnectivityMatrix, DimensionMismatch, EmptyPopulation, Population, frobenius_distance, mean_absolute_error, validate_connectivity
from repshot.synthetic import SynthSpec, synth_population
from repshot.templates import (
    DgnModel,
    NonConvergence,
    TemplateConfig,
    centeredness,
    estimate_cbt,
    linear_average_template,
    random_one_shot_select,
)

import oracles

A = ConnectivityMatrix([[0, 1], [1, 0]])
B = ConnectivityMatrix([[0, 3], [3, 0]])


def _pop(rng, n, r, lo=0.0, hi=1.0):
    return Population([validate_connectivity(oracles.random_graph(rng, r, lo, hi)) for _ in range(n)])


# -- linear average -------------------------------------------------------------


def test_average_examples(rng):
    assert np.array_equal(linear_average_template(Population([A, B])).weights, [[0, 2], [2, 0]])
    assert linear_average_template(Population([A])) == A
    pop = _pop(rng, 10, 4)
    np.testing.assert_allclose(linear_average_template(pop).weights, oracles.mean_loop(pop.stack()), rtol=0, atol=1e-15)


def test_average_empty():
    with pytest.raises(EmptyPopulation):
        linear_average_template([])


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1))
def test_average_beats_perturbations(seed):
    rng = np.random.default_rng(seed)
    pop = _pop(rng, 6, 5)
    x = pop.stack()
    mean = linear_average_template(pop).weights
    base = np.sum((x - mean) ** 2)
    for _ in range(20):
        d = np.triu(rng.normal(scale=rng.uniform(1e-4, 1), size=(5, 5)), 1)
        assert np.sum((x - (mean + d + d.T)) ** 2) > base


# -- random one-shot ---------------------------------------------------------------


def test_random_select_examples():
    assert random_one_shot_select(Population([A]), seed=3) == 0
    assert random_one_shot_select(7, 11) == random_one_shot_select(7, 11)
    with pytest.raises(EmptyPopulation):
        random_one_shot_select(0, 1)


def test_random_select_is_uniform():
    counts = np.bincount([random_one_shot_select(5, s) for s in range(10_000)], minlength=5)
    freq = counts / 10_000
    sigma = np.sqrt(0.2 * 0.8 / 10_000)
    assert np.all(np.abs(freq - 0.2) <= 3 * sigma), freq


# -- centeredness ----------------------------------------------------------------------


def test_centeredness_examples(rng):
    assert centeredness(A, Population([A])) == 0
    assert centeredness([[0, 2], [2, 0]], Population([A, B])) == pytest.approx(np.sqrt(2), abs=1e-12)
    pop = _pop(rng, 7, 5)
    t = oracles.random_graph(rng, 5)
    assert centeredness(t, pop) == pytest.approx(oracles.centeredness_loop(t, pop.stack()), rel=1e-12)


def test_centeredness_errors():
    with pytest.raises(DimensionMismatch):
        centeredness(np.zeros((3, 3)), Population([A]))
    with pytest.raises(EmptyPopulation):
        centeredness(np.zeros((2, 2)), [])


# -- learned template --------------------------------------------------------------------

FAST = TemplateConfig(max_epochs=60)


def test_cbt_of_identical_members(rng):
    m = validate_connectivity(oracles.random_graph(rng, 6, 0.1, 0.9))
    t = estimate_cbt(Population([m] * 5), FAST)
    assert mean_absolute_error(t, m) < 0.05


def test_cbt_of_single_member(rng):
    m = validate_connectivity(oracles.random_graph(rng, 6, 0.1, 0.9))
    t = estimate_cbt(Population([m]), FAST)
    assert mean_absolute_error(t, m) < 0.05


def test_cbt_is_valid_connectivity_and_deterministic(rng):
    pop = _pop(rng, 6, 5, 0.2, 0.8)
    cfg = TemplateConfig(max_epochs=5, rng_seed=4)
    t1, t2 = estimate_cbt(pop, cfg), estimate_cbt(pop, cfg)
    assert t1 == t2
    w = t1.weights
    assert np.array_equal(w, w.T) and np.all(np.diag(w) == 0) and np.all(w >= 0)
    assert estimate_cbt(pop, TemplateConfig(max_epochs=5, rng_seed=5)) != t1


def test_cbt_subset_larger_than_population_is_clamped(rng, caplog):
    pop = _pop(rng, 3, 4)
    estimate_cbt(pop, TemplateConfig(subset_size=10, max_epochs=2))
    assert "clamping" in caplog.text


def test_cbt_audit_sees_indices(rng):
    seen = []
    estimate_cbt(_pop(rng, 3, 4), TemplateConfig(max_epochs=1), audit=seen.extend, indices=[7, 8, 9])
    assert seen == [7, 8, 9]


def test_cbt_nan_raises(rng, monkeypatch):
    monkeypatch.setattr(DgnModel, "forward", lambda self, adj: torch.full(adj.shape, float("nan"), dtype=torch.float64))
    with pytest.raises(NonConvergence):
        estimate_cbt(_pop(rng, 3, 4), TemplateConfig(max_epochs=1))


def test_template_config_validation():
    with pytest.raises(ValueError):
        TemplateConfig(subset_size=0)
    with pytest.raises(ValueError):
        TemplateConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TemplateConfig(embedding_dims=())


def test_dgn_candidate_is_symmetric_nonnegative(rng):
    model = DgnModel(5)
    c = model(torch.as_tensor(oracles.random_graph(rng, 5))).detach().numpy()
    assert np.allclose(c, c.T) and np.all(c >= 0) and np.all(np.diag(c) == 0)


def test_class_templates_are_discriminative():
    pop = synth_population(SynthSpec(num_subjects=20, r=8, class_separation=0.5, noise_std=0.05, seed=3))
    cfg = TemplateConfig(max_epochs=40)
    ta, tb = (estimate_cbt(pop.of_class(c), cfg) for c in (0, 1))
    spread = max(centeredness(ta, pop.of_class(0)), centeredness(tb, pop.of_class(1)))
    assert frobenius_distance(ta, tb) > spread
