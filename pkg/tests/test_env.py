import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rwre.env import Environment, EnvironmentLaw, resample, shift

points = st.lists(st.integers(-1000, 1000), min_size=3, max_size=3)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**63), points, st.sampled_from(["kappa-padded-dirichlet", "two-point"]))
def test_values_admissible(seed, p, family):
    law = EnvironmentLaw(3, 0.05) if family != "two-point" else EnvironmentLaw.two_point(3, 0.05)
    a = Environment(law, seed).values(np.array([p]))[0]
    assert abs(a.sum() - 1) < 1e-14
    assert np.all(a >= 2 * law.kappa - 1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**63), points, points)
def test_shift_identity(seed, x, z):
    env = Environment(EnvironmentLaw(3, 0.05), seed)
    x, z = np.array([x]), np.array(z)
    assert np.array_equal(shift(env, z).values(x), env.values(x + z))


def test_resample_changes_only_one_site(env2):
    y = np.array([2, -1])
    env2b = resample(env2, y, draw=3)
    pts = np.array([[2, -1], [2, 0], [0, 0], [-5, 7]])
    new, old = env2b.values(pts), env2.values(pts)
    assert not np.allclose(new[0], old[0])
    assert np.array_equal(new[1:], old[1:])
    assert np.array_equal(env2b.replacement(), new[0])


def test_resample_explicit_value_checked(env2):
    e = resample(env2, [0, 0], value=[0.3, 0.7])
    assert np.allclose(e.sample_site(np.array([0, 0])), [0.3, 0.7])
    with pytest.raises(ValueError):
        resample(env2, [0, 0], value=[0.01, 0.99])
    with pytest.raises(ValueError):
        resample(env2, [0, 0], draw=0)


def test_torus_periodicity():
    env = Environment(EnvironmentLaw(2, 0.05), 4, period=8)
    x = np.array([[1, 2], [3, 7]])
    assert np.array_equal(env.values(x), env.values(x + np.array([8, -16])))
    assert env.torus_values().shape == (8, 8, 2)


def test_law_validation():
    with pytest.raises(ValueError):
        EnvironmentLaw(1, 0.1)
    with pytest.raises(ValueError):
        EnvironmentLaw(2, 0.3)
    with pytest.raises(ValueError):
        EnvironmentLaw(2, 0.05, "gaussian")
    with pytest.raises(ValueError):
        EnvironmentLaw(2, 0.05, "two-point", {"atoms": [[0.5, 0.5]]})


def test_constant_laws():
    srw = EnvironmentLaw.srw(3)
    assert srw.is_constant
    assert np.allclose(Environment(srw, 0).values(np.zeros((4, 3), dtype=int)), 1 / 3)
    assert EnvironmentLaw.two_point(2, 0.05, p=1.0).is_constant
    assert not EnvironmentLaw.two_point(2, 0.05).is_constant


def test_two_point_frequency():
    env = Environment(EnvironmentLaw.two_point(2, 0.05, p=0.3), 9)
    a = env.box_values(np.array([0, 0]), (100, 100)).reshape(-1, 2)
    frac = np.mean(a[:, 0] > 0.5)
    assert abs(frac - 0.3) < 4 * np.sqrt(0.3 * 0.7 / len(a))


def test_dirichlet_mean_is_uniform_on_simplex():
    # equal weights: w uniform on the simplex, so E[a_i] = 1/d
    env = Environment(EnvironmentLaw(3, 0.05), 1)
    a = env.box_values(np.zeros(3, dtype=int), (40, 40, 40)).reshape(-1, 3)
    assert np.allclose(a.mean(0), 1 / 3, atol=3e-3)


def test_json_round_trip(env2):
    back = Environment.from_json(env2.to_json())
    pts = np.array([[0, 0], [5, -3]])
    assert np.array_equal(back.values(pts), env2.values(pts))
