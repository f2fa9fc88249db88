import numpy as np
import pytest

from rwre import invariant, kernel, lattice as la
from rwre.env import Environment, EnvironmentLaw


def _dense_stationary(env):
    dom = la.torus(env.period, env.d)
    P = kernel.transition_matrix(env, dom).toarray()
    w, v = np.linalg.eig(P.T)
    pi = np.real(v[:, np.argmin(np.abs(w - 1))])
    return pi / pi.mean()


@pytest.mark.parametrize("d,L", [(2, 6), (3, 4)])
def test_stationary_matches_eigenvector(d, L):
    env = Environment(EnvironmentLaw(d, 0.05), 13, period=L)
    fld = invariant.stationary_torus(env)
    assert np.allclose(fld.rho, _dense_stationary(env), atol=1e-10)
    assert fld.residual <= 1e-12
    assert fld.rho.mean() == pytest.approx(1.0, abs=1e-14)


def test_stationary_large_torus_residual():
    env = Environment(EnvironmentLaw(2, 0.05), 1, period=96)
    fld = invariant.stationary_torus(env)
    assert fld.residual <= 1e-12
    assert np.all(fld.rho > 0)


def test_srw_rho_is_one():
    env = Environment(EnvironmentLaw.srw(2), 0, period=8)
    assert np.allclose(invariant.stationary_torus(env).rho, 1.0, atol=1e-12)


def test_stationarity_functional_vanishes():
    env = Environment(EnvironmentLaw(2, 0.05), 4, period=8)
    fld = invariant.stationary_torus(env)
    f = np.sin(np.arange(64) * 0.7) + env.torus_values().reshape(-1, 2)[:, 0] ** 2
    val = invariant.stationarity_functional(env, fld, f)
    assert abs(val) < 1e-12


def test_v_mass_tends_to_rho():
    env = Environment(EnvironmentLaw(2, 0.05), 4, period=8)
    fld = invariant.stationary_torus(env)
    v, _ = invariant.v_mass(env, 400.0)
    assert v == pytest.approx(fld.rho[0], rel=1e-6)


def test_sensitivity_exact_value_zero_change():
    env = Environment(EnvironmentLaw(2, 0.05), 4, period=12)
    y = np.array([3, 3])
    res = invariant.sensitivity_check(env, y, np.array([0, 0]), 5.0, value=env.sample_site(y))
    assert res["lhs"] == pytest.approx(0.0, abs=1e-12) and res["rhs"] == 0.0


def test_sensitivity_formula_small_gap():
    env = Environment(EnvironmentLaw(3, 0.05), 2, period=16)
    res = invariant.sensitivity_check(env, np.array([3, 1, 0]), np.array([1, 1, 0]), 7.0)
    assert res["relative_gap"] < 0.05


def test_block_average_and_covariance_guards():
    law = EnvironmentLaw(2, 0.05)
    with pytest.raises(ValueError):
        invariant.block_average_stats(law, 16, [1, 2, 4], M=4)
    with pytest.raises(ValueError):
        invariant.block_average_stats(law, 16, [1, 2, 4], M=8)
    ser = invariant.block_average_stats(law, 16, [1, 2], M=8, seed=1)
    assert len(ser.samples[0]) == 8
    cov = invariant.covariance_decay(law, 16, [1, 2], M=3, seed=1)
    assert cov.variance > 0


def test_occupation_check_agrees():
    env = Environment(EnvironmentLaw(2, 0.05), 3, period=4)
    fld = invariant.stationary_torus(env)
    rho, est, se = invariant.occupation_check(env, fld, 400_000, seed=1, n_groups=10, paths_per_group=20)
    z = np.abs(est - rho) / se
    assert np.median(z) < 2 and np.max(z) < 5


def test_sensitivity_torus_response_is_exact():
    # the torus group inverse reproduces rho' - rho to rounding, independent of R_green
    env = Environment(EnvironmentLaw(3, 0.05), 2, period=12)
    res = invariant.sensitivity_check(env, np.array([3, 1, 0]), np.array([1, 1, 0]), 5.0)
    assert res["relative_gap_torus"] < 1e-9
    assert res["rhs_torus"] == pytest.approx(res["lhs"], rel=1e-9)


def test_sensitivity_torus_response_dense_oracle():
    env = Environment(EnvironmentLaw(2, 0.05), 6, period=6)
    y, x = np.array([2, 3]), np.array([0, 1])
    res = invariant.sensitivity_check(env, y, x, 3.0)
    env2 = invariant.resample(env, y, 1)
    base, moved = _dense_stationary(env), _dense_stationary(env2)
    exact = moved[1] - base[1]
    assert res["lhs"] == pytest.approx(exact, abs=1e-10)
    assert res["rhs_torus"] == pytest.approx(exact, abs=1e-10)


def test_v_mass_at_time_zero_is_one():
    env = Environment(EnvironmentLaw(2, 0.05), 4)
    assert invariant.v_mass(env, 0.0) == (1.0, 0.0)


@pytest.mark.parametrize("t", [0.5, 3.0, 20.0])
def test_v_mass_srw_is_one(t):
    env = Environment(EnvironmentLaw.srw(2), 0)
    v, deficit = invariant.v_mass(env, t)
    assert v == pytest.approx(1.0, abs=1e-9) and deficit <= 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_stationarity_functional_random_fields(seed):
    env = Environment(EnvironmentLaw(3, 0.05), seed, period=6)
    fld = invariant.stationary_torus(env)
    f = np.random.default_rng(seed).normal(size=6 ** 3)
    assert abs(invariant.stationarity_functional(env, fld, f)) < 1e-10
