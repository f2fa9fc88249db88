import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rwre import lattice as la


def test_ball_counts_and_boundary():
    dom = la.ball(np.zeros(2, dtype=int), 2.0, 2)
    # |x| < 2: the 3x3 block plus (+-... 0) would need |x|=2, excluded
    assert dom.n_interior == 9
    inner = {tuple(p) for p in dom.interior.tolist()}
    for b in dom.boundary.tolist():
        assert tuple(b) not in inner
        assert any(tuple(np.add(b, e)) in inner for e in la.unit_vectors(2).tolist())


def test_index_round_trip_and_absent():
    dom = la.ball(np.array([3, -2, 1]), 3.5, 3)
    assert np.array_equal(dom.index(dom.points), np.arange(len(dom)))
    assert dom.index(np.array([[100, 0, 0]]))[0] == -1
    assert not dom.contains(np.array([[100, 0, 0]]))[0]


def test_torus_wraps():
    t = la.torus(4, 2)
    assert t.index(np.array([[5, -1]]))[0] == t.index(np.array([[1, 3]]))[0]
    nb = t.neighbor_table()
    assert np.all(nb >= 0)


def test_box_boundary_has_no_corners():
    dom = la.box(np.array([0, 0]), (3, 3))
    assert dom.n_interior == 9 and dom.n_boundary == 12


def test_field_lookup_and_csv(tmp_path):
    dom = la.ball(np.zeros(2, dtype=int), 3.0, 2)
    f = la.ScalarField.from_function(dom, lambda p: p[:, 0] * 2.5 + p[:, 1])
    path = tmp_path / "f.csv"
    f.to_csv(path)
    g = la.read_field_csv(path, dom)
    assert np.array_equal(f.values, g.values)
    with pytest.raises(KeyError):
        f(np.array([[40, 0]]))
    with pytest.raises(ValueError):
        la.ScalarField(dom, np.full(len(dom), np.nan))


def test_differences_on_quadratic():
    dom = la.box(np.array([-4, -4]), (9, 9))
    u = la.ScalarField.from_function(dom, lambda p: p[:, 0] ** 2 + 3.0 * p[:, 0] * p[:, 1])
    x = np.array([1, -2])
    assert la.nabla(u, x, [1, 0]) == (2 ** 2 + 3 * 2 * -2) - (1 + 3 * 1 * -2)
    assert la.nabla2(u, x, 0) == 2.0
    assert la.nabla2(u, x, 1) == 0.0
    assert la.nabla2_mixed(u, x, [1, 0], [0, 1]) == -3.0


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6), st.integers(1, 3))
def test_osc_der_vanishes_on_polynomials(coefs, j):
    # a polynomial of degree j - 1 has zero oscillation of order j
    dom = la.box(np.array([-5, -5]), (11, 11))
    c = np.array(coefs)
    terms = la.polynomial_design(dom.points, 2)[:, :6]
    keep = [m for m, e in enumerate(la.monomial_exponents(2, 2)) if sum(e) <= j - 1]
    u = la.ScalarField(dom, terms[:, keep] @ c[keep])
    A = la.ball(np.zeros(2, dtype=int), 4.0, 2).interior
    assert la.osc_der(u, A, j) < 1e-7 * max(1.0, np.abs(u.values).max())


def test_chebyshev_two_point_oracle():
    # best constant approximation of {0, 1} has error 1/2; best line through 3 collinear pts is exact
    assert la.chebyshev_deviation(np.array([[0], [1]]), [0.0, 1.0], 0) == pytest.approx(0.5)
    assert la.chebyshev_deviation(np.array([[0], [1], [2]]), [0.0, 1.0, 4.0], 1) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        la.chebyshev_deviation(np.array([[0, 0], [1, 1], [2, 2]]), [0.0, 1.0, 2.0], 1)
