import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from rwre import homog, kernel, lattice as la, poly
from rwre.env import Environment, EnvironmentLaw

from conftest import dense_generator

ORIGIN2 = np.zeros(2, dtype=np.int64)


def test_rate_functions():
    assert homog.rate_function("mu", 16, 3) == 4.0
    assert homog.rate_function("nu", 16, 2) == 0.25
    assert homog.rate_function("delta", 50, 3) == 1.0
    assert homog.reference_exponent("nu", 3) == -0.75
    with pytest.raises(ValueError):
        homog.rate_function("mu", 0.5, 2)
    with pytest.raises(ValueError):
        homog.rate_function("zeta", 2, 2)


def test_cutoff_profile_and_difference_bounds():
    assert homog.eta0(0.0) == 0.0 and homog.eta0(2.0) == 0.0 and homog.eta0(3.0) == 1.0
    for R in (4.0, 8.0, 16.0, 32.0):
        r = np.arange(-4 * int(R), 4 * int(R) + 1)
        grid = homog.cutoff(R)(np.stack(np.meshgrid(r, r, indexing="ij"), -1))
        g1 = np.abs(np.diff(grid, axis=0)).max()
        g2 = np.abs(np.diff(grid, 2, axis=0)).max()
        # smoothstep over a window of width R/3: max slope 45/8 per unit s, so one lattice step moves eta by <= 5.7/R
        assert g1 <= 6.0 / R
        assert g2 <= 60.0 / R ** 2


def test_constant_psi_gives_zero_correctors(env2):
    ap, _ = homog.approx_corrector(env2, 3, "one", 1.0)
    loc, _ = homog.local_corrector(env2, 3, "one", 1.0)
    assert np.abs(ap.values).max() == 0 and np.abs(loc.values).max() == 0


def test_approx_corrector_dense_oracle(env2):
    R = 1.5
    phi, info = homog.approx_corrector(env2, R, "a_1", 0.5)
    dom = phi.domain
    A = dense_generator(env2, dom.interior) - np.eye(dom.n_interior) / R ** 2
    rhs = env2.values(dom.interior)[:, 0] - 0.5
    assert np.allclose(phi.interior_values, np.linalg.solve(A, rhs), atol=1e-12)
    assert info.residual <= 1e-10
    with pytest.raises(ValueError):
        homog.approx_corrector(env2, R, "a_1", 0.5, factor=3)


def test_local_corrector_equation(env2):
    R = 2.0
    phi, info = homog.local_corrector(env2, R, "a_1", 0.5)
    op = kernel.DiscreteOperator(env2, phi.domain, homog.cutoff(R), 1 / R ** 2)
    lhs = op.apply(phi)
    rhs = env2.values(phi.domain.interior)[:, 0] - 0.5
    assert np.max(np.abs(lhs - rhs)) < 1e-10
    with pytest.raises(ValueError):
        homog.local_corrector(env2, R, "a_1", 0.5, K=4)


def test_effective_coefficients():
    srw = Environment(EnvironmentLaw.srw(3), 0, period=6)
    eff = homog.effective_coefficients(srw, "one")
    assert np.allclose(eff.abar_exact, 1 / 3, atol=1e-12)
    env = Environment(EnvironmentLaw(2, 0.05), 2, period=16)
    eff = homog.effective_coefficients(env, "a_1", n_steps=20_000, seed=1)
    assert eff.abar_exact.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(eff.abar_exact >= 0.1)
    assert eff.psibar_exact == pytest.approx(eff.abar_exact[0], abs=1e-14)
    assert np.all(eff.discrepancy <= 4 * eff.abar_ergodic_se + 1e-3)


def test_effective_parameters_methods():
    abar, pb, m = homog.effective_parameters(EnvironmentLaw(3, 0.05), "a_1")
    assert m == "symmetry" and np.allclose(abar, 1 / 3) and pb == pytest.approx(1 / 3)
    abar, pb, m = homog.effective_parameters(EnvironmentLaw.two_point(2, 0.05), "a_1", L=8, M=2)
    assert m == "torus" and abar.sum() == pytest.approx(1.0)


def test_homogenized_problem_residual():
    prob = homog.HomogenizedProblem(3, poly.parse(homog.DEFAULT_F[3], 3), poly.parse(homog.DEFAULT_G[3], 3),
                                    np.full(3, 1 / 3), 1 / 3)
    pts = np.random.default_rng(0).uniform(-0.5, 0.5, size=(20, 3))
    assert prob.residual(pts) < 1e-12


def test_constant_environment_error_is_second_order():
    # a = abar constant: the discrete Laplacian is exact on quadratics, and the quartic term
    # in g leaves an O(R^-2) consistency error
    law = EnvironmentLaw.srw(2)
    prob = homog.HomogenizedProblem(2, poly.parse(homog.DEFAULT_F[2], 2), poly.parse(homog.DEFAULT_G[2], 2),
                                    np.full(2, 0.5), 1.0)
    env = Environment(law, 0)
    e = [homog.homogenization_error(env, R, prob, "one")[0] for R in (8, 16, 32)]
    assert np.log(e[0] / e[2]) / np.log(4) == pytest.approx(2.0, abs=0.25)


def test_radial_convention_runs(env2):
    prob = homog.HomogenizedProblem(2, poly.constant(2, 1.0), poly.constant(2, 0.0), np.full(2, 0.5), 0.5)
    u, _ = homog.dirichlet_solution(env2, 6, prob, "a_1", "radial")
    assert np.all(u.values[u.domain.n_interior:] == 0)
    with pytest.raises(ValueError):
        homog.dirichlet_solution(env2, 6, prob, "a_1", "spherical")


def test_global_tower_normalization(env2):
    rep = homog.global_tower(env2, [2, 4], "a_1", 0.5, r=2)
    assert rep["at_origin"] == [0.0, 0.0]
    rep1 = homog.global_tower(env2, [2, 4], "one", 1.0, r=2)
    assert rep1["differences"] == [0.0]
    with pytest.raises(ValueError):
        homog.global_tower(env2, [4, 2], "a_1", 0.5)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(50, 400))
def test_ks_distance_matches_scipy(seed, n):
    x = np.random.default_rng(seed).normal(scale=1.3, size=n)
    assert homog.ks_distance(x, 1.3) == pytest.approx(stats.kstest(x / 1.3, "norm").statistic, abs=1e-12)


def test_qclt_guards_and_srw(srw2):
    with pytest.raises(ValueError):
        homog.qclt_check(srw2, [16], np.full(2, 0.5), n_paths=1000)
    out = homog.qclt_check(srw2, [64, 256], np.full(2, 0.5), n_paths=100_000, seed=1)
    assert out["var_ratio"][-1] == pytest.approx(1.0, abs=0.02)


def test_ergodic_and_var_decay_constant_psi():
    law = EnvironmentLaw(2, 0.05)
    s = homog.ergodic_rate(law, "one", [4, 8, 16], M=1, L=8)
    assert max(max(v) for v in s.samples) < 1e-12
    law3 = EnvironmentLaw(3, 0.05)
    v = homog.var_decay_check(law3, "a_1", [1, 2, 4], L=6, M=1)
    assert all(b <= a + 1e-15 for a, b in zip(v.values, v.values[1:]))
