import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linear_sum_assignment

from pocontrol.measures import EmpiricalMeasure, mean, quad_var, v1, v2, wasserstein2

E = EmpiricalMeasure


def test_mean_examples():
    np.testing.assert_array_equal(mean(E.dirac([1.5, -2.0])), [1.5, -2.0])
    assert mean(E([-1.0, 1.0]))[0] == 0.0
    np.testing.assert_array_equal(mean(E([[1.0, 0.0], [3.0, 2.0]])), [2.0, 1.0])


def test_quad_var_examples():
    assert quad_var(E.dirac([3.0, 4.0]), np.eye(2)) == 0.0
    assert quad_var(E([-1.0, 1.0]), 2.0) == 2.0
    assert quad_var(E([[1.0, 2.0], [0.0, 5.0]]), np.zeros((2, 2))) == 0.0


def test_v2_v1_examples():
    pi = E([-2.0, 2.0])
    assert v2(pi, 3.0) == 0.0 and v1(pi, 7.0) == 0.0
    x = np.array([1.0, -2.0])
    L = np.array([[2.0, 0.5], [0.5, 1.0]])
    assert v2(E.dirac(x), L) == pytest.approx(x @ L @ x, rel=1e-15)
    pi = E([1.0, 3.0])
    assert v2(pi, 1.0) == 4.0 and v1(pi, 5.0) == 10.0


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        quad_var(E.dirac([1.0, 2.0]), np.eye(3))
    with pytest.raises(ValueError):
        v1(E.dirac([1.0]), [1.0, 2.0])
    with pytest.raises(ValueError):
        E(np.empty((0, 2)))
    with pytest.raises(ValueError):
        E([np.nan])


def test_w2_examples():
    a = E([[0.0, 1.0], [2.0, 3.0]])
    assert wasserstein2(a, a) == 0.0
    assert wasserstein2(E.dirac([0.0, 0.0]), E.dirac([3.0, 4.0])) == pytest.approx(5.0, rel=1e-15)
    assert wasserstein2(E([0.0, 2.0]), E([1.0, 3.0])) == 1.0


def test_w2_1d_unequal_counts():
    # {0, 1} against {0, 0.5, 1}: the monotone coupling has cost 1/12
    d = wasserstein2(E([0.0, 1.0]), E([0.0, 0.5, 1.0]))
    assert d**2 == pytest.approx(1.0 / 12.0, rel=1e-12)


def test_w2_errors():
    with pytest.raises(ValueError):
        wasserstein2(E([[0.0, 0.0]]), E([[0.0, 0.0], [1.0, 1.0]]))
    with pytest.raises(ValueError):
        wasserstein2(E([0.0]), E([[0.0, 0.0]]))
    big = E(np.zeros((513, 2)))
    with pytest.raises(ValueError):
        wasserstein2(big, big)


atoms = st.integers(1, 6).flatmap(
    lambda k: st.lists(st.lists(st.floats(-5, 5), min_size=2, max_size=2), min_size=k, max_size=k))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_w2_metric_axioms(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 7))
    a, b, c = (E(rng.normal(size=(k, 2))) for _ in range(3))
    ab, ba = wasserstein2(a, b), wasserstein2(b, a)
    assert ab >= 0 and ab == pytest.approx(ba, abs=1e-12)
    assert wasserstein2(a, a) == 0.0
    assert ab <= wasserstein2(a, c) + wasserstein2(c, b) + 1e-12
    if ab == 0.0:
        assert np.array_equal(np.sort(a.atoms, axis=0), np.sort(b.atoms, axis=0))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_w2_1d_sorted_equals_matching(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 20))
    x, y = rng.normal(size=k), rng.normal(size=k)
    cost = (x[:, None] - y[None, :]) ** 2
    r, c = linear_sum_assignment(cost)
    assert wasserstein2(E(x), E(y)) == pytest.approx(np.sqrt(cost[r, c].mean()), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(pts=atoms, seed=st.integers(0, 10**6))
def test_quad_var_nonnegative_and_linear(pts, seed):
    pi = E(np.array(pts))
    rng = np.random.default_rng(seed)
    A, B = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    K1, K2 = A @ A.T, B @ B.T
    assert quad_var(pi, K1) >= -1e-12
    scale = 1.0 + quad_var(pi, K1) + quad_var(pi, K2)
    assert quad_var(pi, 2.0 * K1 + 3.0 * K2) == pytest.approx(
        2.0 * quad_var(pi, K1) + 3.0 * quad_var(pi, K2), abs=1e-12 * scale)


def test_second_moment():
    assert E([[3.0, 4.0], [0.0, 0.0]]).second_moment() == 12.5
