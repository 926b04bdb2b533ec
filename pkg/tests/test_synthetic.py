import numpy as np
import pytest

from repshot.synthetic import InvalidSpec, SynthSpec, class_means, drift_matrix, synth_population, synth_trajectories


def test_zero_noise_members_equal_class_mean():
    spec = SynthSpec(num_subjects=6, noise_std=0.0, class_separation=0.3)
    pop = synth_population(spec)
    means = class_means(spec)
    for m, label in zip(pop.members, pop.labels):
        np.testing.assert_array_equal(m.weights, means[label])


def test_zero_separation_means_coincide():
    a, b = class_means(SynthSpec(class_separation=0.0))
    np.testing.assert_array_equal(a, b)


def test_positive_separation_means_differ():
    a, b = class_means(SynthSpec(class_separation=0.3))
    assert np.abs(a - b).max() > 0.05


def test_empirical_mean_converges():
    spec = SynthSpec(num_subjects=2000, r=6, noise_std=0.02, class_separation=0.2, seed=5)
    pop = synth_population(spec)
    stack = pop.stack()
    labels = np.array(pop.labels)
    for c, mean in enumerate(class_means(spec)):
        members = stack[labels == c]
        assert len(members) == 1000
        # noise is far from the [0, 1] clip at these settings, so 3 sigma/sqrt(n) applies
        bound = 3 * spec.noise_std / np.sqrt(len(members))
        off = ~np.eye(spec.r, dtype=bool)
        assert np.all(np.abs(members.mean(0) - mean)[off] <= bound)


def test_population_is_balanced_and_valid():
    pop = synth_population(SynthSpec(num_subjects=9, seed=2))
    assert list(pop.labels) == [0, 1, 0, 1, 0, 1, 0, 1, 0]
    for m in pop.members:
        w = m.weights
        assert np.array_equal(w, w.T) and np.all(np.diag(w) == 0) and w.min() >= 0 and w.max() <= 1


def test_trajectories_shape_and_determinism():
    spec = SynthSpec(num_subjects=4, r=5, timepoints=4, seed=1)
    a, b = synth_trajectories(spec), synth_trajectories(spec)
    assert len(a) == 4 and all(len(t) == 4 for t in a)
    assert all(x == y for ta, tb in zip(a, b) for x, y in zip(ta.states, tb.states))
    assert a[0].subject_id == "sub-000"


def test_noise_free_trajectories_follow_the_drift():
    spec = SynthSpec(num_subjects=2, r=6, noise_std=0.0, drift_magnitude=0.05, timepoints=3)
    d = drift_matrix(spec)
    for t in synth_trajectories(spec):
        step = t.states[1].weights - t.states[0].weights
        inside = (t.states[0].weights + d > 0) & (t.states[0].weights + d < 1)
        np.testing.assert_allclose(step[inside], d[inside], atol=1e-15)


def test_drift_is_symmetric_zero_diagonal():
    d = drift_matrix(SynthSpec(drift_magnitude=0.1))
    assert np.array_equal(d, d.T) and np.all(np.diag(d) == 0)
    assert np.abs(d).max() > 0


@pytest.mark.parametrize(
    "kwargs",
    [dict(num_subjects=0), dict(r=1), dict(class_separation=-1), dict(noise_std=-0.1), dict(timepoints=1), dict(base_low=0.7, base_high=0.6)],
)
def test_invalid_spec(kwargs):
    with pytest.raises(InvalidSpec):
        SynthSpec(**kwargs)
