import numpy as np
import pytest

from orbimag import loopspace as ls
from orbimag import solver as so


def test_default_eps_and_validation():
    assert abs(so.default_eps(2.0, 1e-2) - 0.05) < 1e-15
    p = so.FlowParams(delta=1e-3)
    p.validate(1.0)
    with pytest.raises(ValueError):
        so.FlowParams(delta=1e-3, eps=1.0).validate(1.0)
    with pytest.raises(ValueError):
        so.FlowParams(delta=0.0).validate(1.0)
    with pytest.raises(ValueError):
        so.FlowParams(T_min=2.0, T_max=1.0).validate(1.0)
    with pytest.raises(ValueError):
        so.ActionFunctional(0.5)


def test_bounded_field_is_bounded_and_collinear(model, rng):
    fun = so.ActionFunctional(1.2)
    for _ in range(5):
        c = ls.random_config(model, rng, 32)
        v = so.bounded_field(model, c, 1.2)
        g = so.gradient(model, c, fun)
        nv, ng = ls.tangent_norm(model, c, v), ls.tangent_norm(model, c, g)
        assert nv < 1.0
        assert abs(nv - ng / np.sqrt(1 + ng * ng)) < 1e-12
        N = c.N
        inner = (np.sum(model.metric(c.gamma, v.xi, g.xi)) / N + np.sum(v.eta * g.eta) / N + v.dT * g.dT)
        assert abs(inner / (nv * ng) + 1.0) < 1e-12


def test_flow_from_small_constant_loop_stops_vertical(hopf, rng):
    c = ls.constant_loop(hopf, hopf.random_point(rng), 32, 1e-3)
    res = so.flow(hopf, c, 1.0)
    assert res.status == so.STOPPED_VERTICAL
    assert res.X[0] == 0.0 and res.distance == 0.0


def test_flow_is_monotone(hopf, rng):
    c = ls.random_config(hopf, rng, 32)
    res = so.flow(hopf, c, 1.0, so.FlowParams(max_steps=150))
    assert res.status in (so.CONVERGED, so.STOPPED_VERTICAL, so.T_CLAMPED, so.STEP_BUDGET)
    v = np.array(res.values)
    assert len(v) > 10
    assert np.all(np.diff(v) <= 1e-9)


def test_flow_converges_to_minimising_line(product, rng):
    from orbimag import invariants as iv

    for check in (iv.palais_smale, iv.cauchy_tail):
        out = check(product, rng)
        assert out.passed, out


def test_stopping_invariant(model):
    from orbimag import invariants as iv

    out = iv.stopping_exhaustive(model, np.random.default_rng(5))
    assert out.passed, out


def test_explicit_critical_points(model):
    lines = (0.25, 0.75) if model.name == "exact_product" else (0.25,)
    for line in lines:
        c = so.explicit_critical_point(model, 1.3, 64, line=line)
        assert ls.grad_norm(model, c, 1.3, "spectral") < 1e-8


def test_explicit_critical_point_oracle(hopf, spindle):
    # latitude-circle critical loops; values from an independent 1D maximisation
    assert abs(ls.action_Sk(hopf, so.explicit_critical_point(hopf, 1.0), 1.0, "spectral") - 2.68113256578) < 1e-9
    assert abs(ls.action_Sk(spindle, so.explicit_critical_point(spindle, 1.0), 1.0, "spectral")
               - 3.5776570377) < 1e-9
    with pytest.raises(ValueError):
        so.explicit_critical_point(hopf, 0.5)


def test_newton_quadratic_convergence(hopf, rng):
    c = so.explicit_critical_point(hopf, 1.0, 32)
    c.gamma = hopf.retract(c.gamma + 1e-3 * rng.normal(size=c.gamma.shape))
    c.T *= 1.001
    out, rep = so.newton_polish(hopf, c, 1.0, scheme="link")
    assert rep.status == "converged"
    r = np.array(rep.grad_norms)
    assert r[-1] <= 1e-10 and rep.gauge_leak < 1e-12
    # once in the basin: r_{n+1} <= C r_n^2
    big = r[:-1] > 1e-9
    assert np.all(r[1:][big] <= 100.0 * r[:-1][big] ** 2 + 1e-11)


def test_newton_step_is_transverse_to_gauge(hopf, rng):
    c = so.explicit_critical_point(hopf, 1.0, 32)
    c.T *= 1.01
    for kick in (0.0, 1e-2):
        c.gamma = hopf.retract(c.gamma + kick * rng.normal(size=c.gamma.shape))
        _, rep = so.newton_polish(hopf, c, 1.0, scheme="link", max_iter=1)
        assert rep.gauge_leak <= 1e-8


def test_newton_energy_functional(spindle):
    c = so.explicit_critical_point(spindle, 1.0, 32)
    c.phi = np.zeros_like(c.phi)
    out, rep = so.newton_polish(spindle, c, None, scheme="spectral")
    assert rep.status == "converged"


def test_relax_fibre_solves_envelope(hopf, rng):
    fun = so.ActionFunctional(1.0)
    c = ls.random_config(hopf, rng, 32)
    r = so.relax_fibre(hopf, c, fun)
    dg, dp, dT = fun.differential(hopf, r)
    assert abs(dT) < 1e-8
    assert np.max(np.abs(dp)) < 1e-8
    assert fun.value(hopf, r) <= fun.value(hopf, c) + 1e-12


def test_build_path_class(hopf, spindle):
    for m in (hopf, spindle):
        path = so.build_path_class(m, "vertical", N=32, P=12, k=1.0)
        first, last = path.nodes[0], path.nodes[-1]
        assert ls.vertical_residual(m, first) < 1e-12
        assert np.allclose(first.phi, -path.X)
        assert np.allclose(last.gamma, last.gamma[0]) and np.all(last.phi == 0)
        # S_k at the endpoints sits below the level reachable by the summit
        eps = so.default_eps(1.0, 1e-3)
        assert 1.0 * first.T <= eps / 2 + 1e-15
        assert so.crossing_ok(m, path, 1e-3)
    with pytest.raises(ValueError):
        so.build_path_class(hopf, X=[0.0])
    with pytest.raises(ValueError):
        so.build_path_class(spindle, X=[0.25])


def test_energy_path_class_has_no_period(spindle):
    path = so.build_path_class(spindle, "energy", N=32, P=8)
    assert all(c.T == 1.0 for c in path.nodes)
    assert path.values(spindle, None)[0] < 1e-12


def test_k_scan_small(hopf):
    path = so.build_path_class(hopf, N=16, P=10, k=1.0)
    rows, dq = so.k_scan(hopf, path, [1.0, 1.4], sweeps=3, N_final=32)
    assert [r["k"] for r in rows] == [1.0, 1.4]
    assert all(r["status"] == "converged" for r in rows)
    assert rows[1]["c_k"] >= rows[0]["c_k"]
    assert len(dq) == 1 and dq[0] > 0
    assert abs(rows[0]["kbar"] - 0.5) < 1e-15


def test_smoothing_fallback_keeps_descent(spindle):
    # near-vertical spindle start where the Euclidean smoother stops being a descent direction
    from orbimag import invariants as iv

    rng = np.random.default_rng(800)
    q0 = iv._generic_point(spindle, rng)
    c = ls.vertical_loop(spindle, 1.0, q0, 32, 0.02)
    c.gamma = spindle.retract(c.gamma + 0.01 * ls.random_config(spindle, rng, 32).gamma)
    c.phi = c.phi + 0.01 * rng.normal(size=c.phi.shape)
    res = so.flow(spindle, c, 1.0)
    assert res.status == so.STOPPED_VERTICAL and res.X[0] == 1.0
    assert np.all(np.diff(res.values) <= 1e-9)
    fun = so.ActionFunctional(1.0)
    assert so.smoothing_descends(spindle, ls.constant_loop(spindle, q0, 32, 1.0), fun)
