import numpy as np
from hypothesis import given, settings, strategies as st

from rwre import poly


def test_arithmetic():
    x = {(1, 0): 1.0}
    y = {(0, 1): 1.0}
    p = poly.mul(poly.add(x, y), poly.add(x, y, -1.0))  # x^2 - y^2
    assert p == {(2, 0): 1.0, (0, 2): -1.0}
    assert poly.deriv(p, 0) == {(1, 0): 2.0}
    assert poly.degree(p) == 2
    pts = np.array([[2.0, 1.0], [0.5, -3.0]])
    assert np.allclose(poly.evaluate(p, pts), pts[:, 0] ** 2 - pts[:, 1] ** 2)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 3), st.lists(st.floats(-2, 2), min_size=4, max_size=4),
       st.floats(0.2, 1.5), st.lists(st.floats(0.1, 1.0), min_size=3, max_size=3))
def test_ball_dirichlet_solution(d, c, psibar, ab):
    abar = np.array(ab[:d]) / np.sum(ab[:d])
    e = np.eye(d, dtype=int)
    f = poly.parse([[c[0], [0] * d], [c[1], e[0]]], d)
    g = poly.parse([[c[2], 2 * e[0]], [c[3], e[0] + e[1]], [1.0, 4 * e[d - 1]]], d)
    u = poly.solve_ball_dirichlet(f, g, abar, psibar, d)
    rng = np.random.default_rng(0)
    inside = rng.uniform(-0.5, 0.5, size=(50, d))
    lhs = poly.evaluate(poly.diag_operator(u, abar), inside)
    assert np.allclose(lhs, psibar * poly.evaluate(f, inside), atol=1e-10)
    sphere = rng.normal(size=(50, d))
    sphere /= np.linalg.norm(sphere, axis=1, keepdims=True)
    assert np.allclose(poly.evaluate(u, sphere), poly.evaluate(g, sphere), atol=1e-10)


def test_srw_quadratic_oracle():
    # d=2, abar=I/2: (1/4) lap u = 1 with u=0 on the circle gives u = |x|^2 - 1 (lap = 4)
    u = poly.solve_ball_dirichlet(poly.constant(2, 1.0), {}, [0.5, 0.5], 1.0, 2)
    assert np.allclose(poly.evaluate(u, np.array([[0.0, 0.0], [0.3, 0.4]])), [-1.0, -0.75])
