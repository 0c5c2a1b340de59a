import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from orbimag.liegroup import EmptyLatticeError, su2, su2_matrix, torus

finite = st.floats(-5, 5, allow_nan=False)


def test_torus_exp_identity_and_lattice():
    G = torus(1)
    assert G.distance_to_identity(G.exp([0.0])) == 0.0
    assert G.distance_to_identity(G.exp([1.0])) < 1e-15
    assert G.distance_to_identity(G.exp([0.3])) > 0.1


@given(s=finite, t=finite, x=finite)
def test_torus_one_parameter_subgroup(s, t, x):
    G = torus(1)
    lhs = G.exp([(s + t) * x])
    rhs = G.mul(G.exp([s * x]), G.exp([t * x]))
    assert G.distance_to_identity(G.mul(lhs, G.inv(rhs))) < 1e-10


def test_su2_exp_matches_matrix_exponential(rng):
    G = su2()
    for _ in range(20):
        X = rng.normal(size=3)
        assert np.allclose(G.matrix(G.exp(X)), expm(su2_matrix(X)), atol=1e-12)
        assert G.distance_to_identity(G.mul(G.exp(X), G.exp(-X))) < 1e-12


def test_su2_group_axioms(rng):
    G = su2()
    a, b, c = (G.exp(rng.normal(size=3)) for _ in range(3))
    left = G.mul(G.mul(a, b), c)
    right = G.mul(a, G.mul(b, c))
    assert np.allclose(G.matrix(left), G.matrix(right), atol=1e-12)
    assert np.allclose(G.matrix(G.mul(a, G.identity())), G.matrix(a), atol=1e-12)


def test_su2_ad_invariance_and_homomorphism(rng):
    G = su2()
    for _ in range(20):
        g, h = G.exp(rng.normal(size=3)), G.exp(rng.normal(size=3))
        X, Y = rng.normal(size=3), rng.normal(size=3)
        assert abs(G.inner(G.Ad(g, X), G.Ad(g, Y)) - G.inner(X, Y)) < 1e-12
        assert np.allclose(G.Ad(G.mul(g, h), X), G.Ad(g, G.Ad(h, X)), atol=1e-12)
    assert np.allclose(G.Ad(G.identity(), X), X)


def test_su2_bracket_matches_commutator(rng):
    G = su2()
    e = np.eye(3)
    assert np.allclose(G.bracket(e[0], e[1]), e[2])
    for _ in range(10):
        X, Y, W = rng.normal(size=(3, 3))
        A, B = su2_matrix(X), su2_matrix(Y)
        assert np.allclose(su2_matrix(G.bracket(X, Y)), A @ B - B @ A, atol=1e-12)
        jac = G.bracket(X, G.bracket(Y, W)) + G.bracket(Y, G.bracket(W, X)) + G.bracket(W, G.bracket(X, Y))
        assert np.max(np.abs(jac)) < 1e-12
        assert np.max(np.abs(G.bracket(X, X))) == 0.0


def test_ad_derivative_is_bracket(rng):
    G = su2()
    X, Y = rng.normal(size=3), rng.normal(size=3)
    h = 1e-5
    fd = (G.Ad(G.exp(h * X), Y) - G.Ad(G.exp(-h * X), Y)) / (2 * h)
    assert np.allclose(fd, G.bracket(X, Y), atol=1e-8)


def test_torus_abelian():
    G = torus(2, metric=np.diag([1.0, 4.0]))
    X, Y = np.array([0.3, -1.2]), np.array([2.0, 0.7])
    assert np.all(G.bracket(X, Y) == 0)
    assert np.allclose(G.Ad(G.exp(Y), X), X)
    assert np.allclose(G.center_project(X), X)


def test_center_projection_is_orthogonal(rng):
    G = torus(2, metric=np.diag([1.0, 4.0]))
    X, Y = rng.normal(size=2), rng.normal(size=2)
    P = G.center_project
    assert np.allclose(P(P(X)), P(X))
    assert abs(G.inner(P(X), Y - P(Y))) < 1e-12


def test_lattice_round_examples():
    G1 = torus(1)
    pt, d = G1.lattice_round(np.array([0.0]))
    assert pt[0] == 0 and d == 0
    pt, d = G1.lattice_round(np.array([0.4]))
    assert pt[0] == 0 and abs(d - 0.4) < 1e-15
    G2 = torus(1, order_bound=2)
    pt, d = G2.lattice_round(np.array([0.4]))
    assert pt[0] == 0.5 and abs(d - 0.1) < 1e-15


@settings(max_examples=50)
@given(x=st.floats(-20, 20, allow_nan=False), N=st.integers(1, 6))
def test_lattice_round_is_nearest(x, N):
    G = torus(1, order_bound=N)
    pt, d = G.lattice_round(np.array([x]))
    cands = np.arange(np.floor(x * N) - 3, np.ceil(x * N) + 4) / N
    assert abs(d - np.min(np.abs(cands - x))) < 1e-12
    assert abs(abs(pt[0] - x) - d) < 1e-12


def test_lattice_gap():
    assert torus(1).lattice_gap() == 1.0
    assert abs(torus(1, order_bound=3).lattice_gap() - 1 / 3) < 1e-15
    assert torus(2, metric=np.diag([1.0, 4.0])).lattice_gap() == 1.0
    with pytest.raises(EmptyLatticeError):
        su2().lattice_gap()


def test_z_is_central_and_unit():
    G = torus(1)
    assert abs(G.inner(G.Z, G.Z) - 1) < 1e-15
    assert np.all(G.bracket(G.Z, np.array([1.0])) == 0)
