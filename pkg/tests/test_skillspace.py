import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dadskit.skillspace import SkillSchedule, SkillSpace, UnsupportedOperation, interpolate


def test_discrete_uniform_chi_square():
    space = SkillSpace("discrete", 20)
    z = space.sample(np.random.default_rng(0), 100_000)
    counts = z.sum(axis=0)
    assert counts.sum() == 100_000
    assert stats.chisquare(counts).pvalue > 0.01


def test_continuous_samples_in_open_box_and_centred():
    z = SkillSpace("continuous", 2).sample(np.random.default_rng(1), 100_000)
    assert np.all(np.abs(z) < 1)
    # uniform(-1, 1) has std 1/sqrt(3)
    sigma = 1 / np.sqrt(3) / np.sqrt(len(z))
    assert np.all(np.abs(z.mean(axis=0)) < 3 * sigma)


def test_single_discrete_skill():
    space = SkillSpace("discrete", 1)
    np.testing.assert_array_equal(space.sample(np.random.default_rng(0), 5), np.ones((5, 1)))
    np.testing.assert_array_equal(space.enumerate(), [[1.0]])


def test_enumerate():
    np.testing.assert_array_equal(SkillSpace("discrete", 2).enumerate(), [[1, 0], [0, 1]])
    e = SkillSpace("discrete", 20).enumerate()
    assert len({tuple(r) for r in e}) == 20
    np.testing.assert_array_equal(e.sum(axis=0), np.ones(20))


def test_enumerate_continuous_unsupported():
    with pytest.raises(UnsupportedOperation):
        SkillSpace("continuous", 2).enumerate()


def test_interpolate_examples():
    space = SkillSpace("continuous", 2)
    np.testing.assert_array_equal(interpolate(space, [0.3, -0.2], [1, 1], 0.0), [0.3, -0.2])
    np.testing.assert_array_equal(interpolate(space, [1, 1], [-1, 1], 0.5), [0, 1])
    z = np.array([0.25, -0.7])
    for t in np.linspace(0, 1, 7):
        np.testing.assert_array_equal(interpolate(space, z, z, t), z)


def test_interpolate_discrete_unsupported():
    with pytest.raises(UnsupportedOperation):
        interpolate(SkillSpace("discrete", 3), [1, 0, 0], [0, 1, 0], 0.5)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-1, 1), min_size=3, max_size=3),
    st.lists(st.floats(-1, 1), min_size=3, max_size=3),
    st.floats(0, 1),
)
def test_interpolation_stays_in_closed_box(z1, z2, t):
    z = interpolate(SkillSpace("continuous", 3), z1, z2, t)
    assert np.all(np.abs(z) <= 1.0)


def test_prior_density():
    assert SkillSpace("continuous", 2).log_prior_density == pytest.approx(-2 * np.log(2))
    assert SkillSpace("discrete", 20).log_prior_density == pytest.approx(-np.log(20))


def test_sampling_depends_only_on_rng():
    space = SkillSpace("continuous", 2)
    a = space.sample(np.random.default_rng(9), 4)
    space.sample(np.random.default_rng(3), 10)
    b = space.sample(np.random.default_rng(9), 4)
    np.testing.assert_array_equal(a, b)


def test_grid_shape_and_order():
    g = SkillSpace("continuous", 2).grid(4)
    assert g.shape == (16, 2)
    np.testing.assert_allclose(g[0], [-0.75, -0.75])
    np.testing.assert_allclose(g[1], [-0.75, -0.25])
    assert np.all(np.abs(g) < 1)


def test_schedule():
    sched = SkillSchedule(SkillSpace("continuous", 2))
    assert sched.due(0) and not sched.due(50)
    sched = SkillSchedule(SkillSpace("continuous", 2), resample_every=25)
    assert sched.due(50) and not sched.due(51)
