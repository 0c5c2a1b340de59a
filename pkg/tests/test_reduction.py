import numpy as np
import pytest

from orbimag import bundle
from orbimag import invariants as iv
from orbimag import loopspace as ls
from orbimag import reduction as rd


def test_moment_map_basics(model, rng):
    q = iv._generic_point(model, rng)
    assert np.all(rd.moment_map(model, rd.CotangentState(q, np.zeros(model.n))) == 0)
    X = np.array([0.7])
    st = rd.state_from_velocity(model, q, model.fundamental(X, q))
    assert np.allclose(rd.moment_map(model, st), X, atol=1e-12)
    # linear in p
    a, b = model.random_tangent(rng, q), model.random_tangent(rng, q)
    sa, sb = rd.state_from_velocity(model, q, a), rd.state_from_velocity(model, q, b)
    s2 = rd.CotangentState(q, 2 * sa.p - sb.p)
    assert np.allclose(rd.moment_map(model, s2), 2 * rd.moment_map(model, sa) - rd.moment_map(model, sb))


def test_pi_of_pure_vertical_momentum(model, rng):
    q = iv._generic_point(model, rng)
    st = rd.state_with_moment(model, q, np.zeros(model.n))
    _, _, Pi = rd.reduction_Pi(model, st)
    assert np.max(np.abs(Pi)) < 1e-10


def test_pi_rejects_wrong_moment(hopf, rng):
    q = iv._generic_point(hopf, rng)
    st = rd.state_with_moment(hopf, q, np.zeros(4), Z=[1.1])
    with pytest.raises(rd.MomentConstraintError):
        rd.reduction_Pi(hopf, st)
    with pytest.raises(rd.MomentConstraintError):
        rd.round_trip(hopf, st, 0.1)


def test_pi_group_invariance(model, rng):
    worst = 0.0
    for _ in range(100):
        st = iv.moment_state(model, rng)
        g = rng.uniform(0, 1, size=model.d)
        moved = rd.CotangentState(model.act(g, st.q), model.act(g, st.p))
        c1, y1, P1 = rd.reduction_Pi(model, st)
        _, y2, P2 = rd.reduction_Pi(model, moved, c1)
        worst = max(worst, np.max(np.abs(rd._chart_diff(c1, y1 - y2))), np.max(np.abs(P1 - P2)))
    assert worst < 1e-10


def test_pi_pairing_identity(model, rng):
    for _ in range(10):
        st = iv.moment_state(model, rng)
        chart, y, Pi = rd.reduction_Pi(model, st)
        v = model.random_tangent(rng, st.q)
        lhs = Pi @ (rd.chart_jacobian(model, chart, st.q) @ v)
        rhs = st.p @ v - model.group.inner(model.Z, model.theta(st.q, v))
        assert abs(lhs - rhs) < 1e-8


def test_composition_weights():
    assert rd.composition_weights(2) == (1.0,)
    w4 = rd.composition_weights(4)
    z = 2 ** (1 / 3)
    assert np.allclose(w4, [1 / (2 - z), -z / (2 - z), 1 / (2 - z)])
    for order in (4, 6, 8):
        w = np.array(rd.composition_weights(order))
        assert len(w) == 3 ** (order // 2 - 1)
        assert abs(w.sum() - 1) < 1e-14 and np.allclose(w, w[::-1])
    with pytest.raises(ValueError):
        rd.geodesic_flow_TQ(bundle.hopf(), rd.CotangentState(np.eye(4)[0], np.zeros(4)), 0.1, order=3)


def test_rattle_is_time_reversible(hopf, rng):
    st = iv.moment_state(hopf, rng)
    q, p = rd._rattle_step(hopf, st.q, st.p, 0.01)
    qb, pb = rd._rattle_step(hopf, q, -p, 0.01)
    assert np.allclose(qb, st.q, atol=1e-12) and np.allclose(-pb, st.p, atol=1e-12)


def test_hopf_round_trip_short(hopf):
    st = rd.hopf_circle_state(hopf, 1.0)
    rt = rd.round_trip(hopf, st, 0.25 * rd.hopf_circle_period(1.0))
    assert rt.distance < 1e-4
    assert rt.energy_defect < 1e-8 and abs(rt.kbar - 0.5) < 1e-8
    assert rt.H_drift < 1e-8 and rt.A_drift < 1e-8


def test_hopf_circle_projects_to_circle(hopf):
    k = 1.0
    st = rd.hopf_circle_state(hopf, k)
    T = rd.hopf_circle_period(k)
    tr = rd.geodesic_flow_TQ(hopf, st, T, samples=40)
    pts = hopf.hopf_map(tr.q)
    # a latitude circle: constant height, returns to its start after one period
    assert np.ptp(pts[:, 2]) < 1e-6
    assert np.max(np.abs(pts[-1] - pts[0])) < 1e-4
    assert np.max(np.abs(pts[len(pts) // 2] - pts[0])) > 0.1


def test_straight_lines_without_field(rng):
    flat = bundle.exact_product(B=0.0)
    q = flat.random_point(rng)
    v = flat.horizontal_project(q, flat.random_tangent(rng, q))
    st = rd.state_from_velocity(flat, q, v)
    assert np.max(np.abs(rd.moment_map(flat, st))) < 1e-12
    tr = rd.geodesic_flow_TQ(flat, st, 1.0, h=0.01, samples=10)
    y = np.unwrap(2 * np.pi * flat.chart_map("torus", tr.q), axis=0) / (2 * np.pi)
    lin = y[0] + np.outer(tr.t, (y[-1] - y[0]))
    assert np.max(np.abs(y - lin)) < 1e-9


@pytest.mark.parametrize("check", ["symplectic_consistency", "first_integrals", "energy_bookkeeping"])
def test_reduction_invariants(model, check):
    out = getattr(iv, check)(model, np.random.default_rng(2))
    assert out.passed, out


def test_energy_bookkeeping_relation(hopf, rng):
    # H upstairs equals kbar + 1/2 with |Z| = 1
    for k in (0.75, 1.0, 1.8):
        st = iv.moment_state(hopf, rng, k)
        assert abs(rd.hamiltonian(hopf, st.q, st.p) - ((k - 0.5) + 0.5)) < 1e-8


@pytest.mark.slow
def test_hopf_hamiltonian_over_ten_periods(hopf):
    st = rd.hopf_circle_state(hopf, 1.0)
    tr = rd.geodesic_flow_TQ(hopf, st, 10 * rd.hopf_circle_period(1.0), samples=100)
    assert np.ptp(tr.H) < 1e-8
    assert np.max(np.ptp(tr.A, axis=0)) < 1e-8


def test_rescale_orbit(hopf, rng):
    q0 = hopf.random_point(rng)
    s = np.linspace(0, 1, 33)
    # vertical geodesic x(s) = exp(s X) q0 with X = 1 closes up: y is constant
    x = hopf.act(s[:, None] * np.array([1.0]), q0)
    y = rd.rescale_orbit(hopf, x, [1.0])
    assert np.max(np.abs(y - q0)) < 1e-12
    # X = 0: y is x itself
    assert np.array_equal(rd.rescale_orbit(hopf, y, [0.0]), y)
    # round trip on a random admissible curve
    base = ls.random_config(hopf, rng, 32).gamma
    base = np.vstack([base, base[:1]])
    X = np.array([2.0])
    xx = rd.unrescale_orbit(hopf, base, X)
    assert np.max(np.abs(rd.rescale_orbit(hopf, xx, X) - base)) < 1e-10
    with pytest.raises(rd.ClosureError):
        rd.rescale_orbit(hopf, x, [0.5])


def test_rabinowitz_legendre_correspondence(hopf, rng):
    c = iv._link_critical(hopf, 1.0, 32)
    q, p, phi, T = rd.legendre_lift(hopf, c)
    # sign and scale: A_k at the lift equals S_k
    assert abs(rd.rabinowitz_action(hopf, q, p, phi, T, 1.0) - ls.action_Sk(hopf, c, 1.0)) < 1e-10
    # the moment of the lifted momentum tends to +Z at second order
    errs = []
    for N in (64, 128):
        cN = iv._link_critical(hopf, 1.0, N)
        qN, pN, phN, _ = rd.legendre_lift(hopf, cN)
        m = hopf.retract(0.5 * (qN + hopf.act(phN / N, np.roll(qN, -1, axis=0))))
        A = np.array([rd.moment_map(hopf, rd.CotangentState(a, b)) for a, b in zip(m, pN)])
        errs.append(np.max(np.abs(A - hopf.Z)))
    assert errs[1] < 5e-3 and 3.5 < errs[0] / errs[1] < 4.5
    h = 1e-5
    for _ in range(20):
        dq = hopf.tangent_project(q, rng.normal(size=q.shape))
        dp, dphi, dT = rng.normal(size=p.shape), rng.normal(size=phi.shape), rng.normal()
        f = lambda s: rd.rabinowitz_action(hopf, hopf.retract(q + s * dq), p + s * dp, phi + s * dphi, T + s * dT, 1.0)
        assert abs(f(h) - f(-h)) / (2 * h) < 1e-6


def test_rabinowitz_constant_loop_vanishes(hopf, rng):
    q = np.tile(hopf.random_point(rng), (16, 1))
    assert rd.rabinowitz_action(hopf, q, np.zeros_like(q), np.zeros((16, 1)), 0.7, 1.0) == pytest.approx(0.7)
    assert rd.rabinowitz_action(hopf, q, np.zeros_like(q), np.zeros((16, 1)), 0.0, 1.0) == 0.0
