import numpy as np
import pytest

from orbimag import bundle, invariants as iv

TWO_PI = 2 * np.pi


def test_fundamental_field_oracles(hopf, spindle):
    q = np.array([1.0, 0.0, 0.0, 0.0])
    assert np.allclose(bundle.fundamental_field(hopf, 1.0, q), TWO_PI * np.array([0, 1, 0, 0]))
    # spindle(2,3) at (z1, z2) = (1, 0): 2 pi * 2 * (i, 0)
    assert np.allclose(bundle.fundamental_field(spindle, 1.0, q), TWO_PI * 2 * np.array([0, 1, 0, 0]))
    assert np.all(bundle.fundamental_field(hopf, 0.0, q) == 0)


def test_fundamental_field_is_action_derivative(model, rng):
    q = model.random_point(rng)
    X = rng.normal(size=model.d)
    h = 1e-6
    fd = (model.act(h * X, q) - model.act(-h * X, q)) / (2 * h)
    assert np.allclose(fd, model.fundamental(X, q), atol=1e-7)


def test_connection_properties(model, rng):
    for _ in range(20):
        q = model.random_point(rng)
        X = rng.normal(size=model.d)
        v = model.random_tangent(rng, q)
        assert np.allclose(bundle.connection(model, q, model.fundamental(X, q)), X, atol=1e-12)
        hv = bundle.horizontal_project(model, q, v)
        assert np.max(np.abs(bundle.connection(model, q, hv))) < 1e-12
        assert np.allclose(bundle.horizontal_project(model, q, hv), hv, atol=1e-12)
        W = model.fundamental(np.ones(model.d), q)
        assert abs(model.metric(q, hv, W)) < 1e-10


def test_metric_invariance_and_fibre_isometry(model, rng):
    for _ in range(20):
        q = model.random_point(rng)
        u, v = model.random_tangent(rng, q), model.random_tangent(rng, q)
        g = rng.normal(size=model.d)
        # the action is linear in q, so its differential is the action itself
        lhs = model.metric(model.act(g, q), model.act(g, u), model.act(g, v))
        assert abs(lhs - model.metric(q, u, v)) < 1e-10
        X, Y = rng.normal(size=model.d), rng.normal(size=model.d)
        val = model.metric(q, model.fundamental(X, q), model.fundamental(Y, q))
        assert abs(val - model.group.inner(X, Y)) < 1e-10


def test_connection_equivariance(model, rng):
    q = model.random_point(rng)
    v = model.random_tangent(rng, q)
    g = rng.normal(size=model.d)
    # abelian group: Ad is trivial
    assert np.allclose(model.theta(model.act(g, q), model.act(g, v)), model.theta(q, v), atol=1e-12)


def test_curvature_antisymmetric(model, rng):
    q = iv._generic_point(model, rng)
    u, v = model.random_tangent(rng, q), model.random_tangent(rng, q)
    a = bundle.curvature_sigma(model, model.Z, q, u, v)
    b = bundle.curvature_sigma(model, model.Z, q, v, u)
    assert abs(a + b) < 1e-8
    assert abs(bundle.curvature_sigma(model, model.Z, q, u, u)) < 1e-8


def test_hopf_projection(hopf, rng):
    chart, y = bundle.project_to_base(hopf, np.array([1.0, 0, 0, 0]))
    assert chart == "north" and np.allclose(y, 0)
    q = hopf.random_point(rng)
    for g in rng.normal(size=(5, 1)):
        c1, y1 = hopf.project_to_base(q)
        c2, y2 = hopf.project_to_base(hopf.act(g, q))
        assert c1 == c2 and np.allclose(y1, y2, atol=1e-12)


def test_spindle_singular_point_chart(spindle):
    chart, y = spindle.project_to_base(np.array([0.0, 0, 1.0, 0]))
    assert chart == "south" and np.allclose(y, 0)


def test_stabilizers(hopf, spindle, rng):
    for _ in range(100):
        assert hopf.stabilizer_order(hopf.random_point(rng)) == 1
    assert spindle.stabilizer_order(np.array([1.0, 0, 0, 0])) == 2
    assert spindle.stabilizer_order(np.array([0.0, 0, 1.0, 0])) == 3
    assert spindle.stabilizer_order(np.array([0.6, 0, 0.8, 0])) == 1
    assert spindle.order_bound == 6


def test_spindle_rejects_non_coprime():
    with pytest.raises(ValueError):
        bundle.spindle(2, 4)


def test_exact_product_curvature(product, rng):
    # eta = (B / 2 pi) sin(2 pi x) dy, d eta = B cos(2 pi x) dx ^ dy
    for _ in range(10):
        q = product.random_point(rng)
        chart, y = product.project_to_base(q)
        assert abs(product.chart_sigma(chart, y) - np.cos(TWO_PI * y[0])) < 1e-14
    out = iv.chart_consistency(product, rng, samples=20)
    assert out.passed, out


def test_hopf_chart_sigma_integrates_to_one(hopf):
    # total curvature of the Hopf bundle: one unit of Euler class
    r = np.linspace(0, 200, 400001)
    dens = hopf.chart_sigma("north", np.stack([r, 0 * r], axis=-1))
    total = np.trapezoid(dens * TWO_PI * r, r) if hasattr(np, "trapezoid") else np.trapz(dens * TWO_PI * r, r)
    assert abs(abs(total) - 1.0) < 1e-4


@pytest.mark.parametrize("check", ["antisymmetry", "curvature_identity", "mixed_vanishing",
                                   "chart_consistency", "base_isometry", "fundamental_isometry"])
def test_bundle_invariants(model, check):
    out = getattr(iv, check)(model, np.random.default_rng(7))
    assert out.passed, out


def test_metric_corruption_is_detected(rng):
    bad = bundle.hopf(metric_corruption=0.1)
    assert not iv.fundamental_isometry(bad, rng).passed
