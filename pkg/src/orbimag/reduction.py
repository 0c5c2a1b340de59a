"""Cotangent-side machinery: moment map, reduction, flows and the Rabinowitz action.

States live in the ambient representation: ``q`` on ``Q`` and ``p`` the
covector ``G(q) v`` of a tangent velocity ``v``, with ``G`` the matrix of the
lifted metric. The Hamiltonian is ``H = 1/2 p^T G(q)^-1 p``.

Sign conventions (checked by the tests): a geodesic with moment ``A = Z``
projects to a curve ``y`` in a chart solving

    nabla_t y' = |Z| G^-1 S y',   S = [[0, s], [-s, 0]],

where ``s`` is the density returned by ``chart_sigma``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from . import loopspace as ls
from .loopspace import LoopConfiguration

CSTEP = 1e-30


class MomentConstraintError(ValueError):
    pass


class ConstraintDriftError(RuntimeError):
    pass


class ClosureError(ValueError):
    pass


@dataclass
class CotangentState:
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.p = np.asarray(self.p, dtype=float)


@dataclass
class Trajectory:
    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    H: np.ndarray
    A: np.ndarray

    def rows(self):
        return np.column_stack([self.t, self.q, self.p, self.H, self.A])


# -- basic maps ---------------------------------------------------------------

def metric_inverse(model, q):
    return np.linalg.inv(model.metric_matrix(q))


def state_from_velocity(model, q, v) -> CotangentState:
    q = np.asarray(q, dtype=float)
    v = model.tangent_project(q, np.asarray(v, dtype=float))
    return CotangentState(q, model.metric_matrix(q) @ v)


def state_with_moment(model, q, v, Z=None) -> CotangentState:
    """State over ``q`` with horizontal velocity part of ``v`` and moment ``Z``."""
    q = np.asarray(q, dtype=float)
    Z = model.Z if Z is None else np.atleast_1d(np.asarray(Z, dtype=float))
    v = model.horizontal_project(q, model.tangent_project(q, np.asarray(v, dtype=float)))
    W = model.generators(q)  # (d, n)
    gram = np.array([[model.metric(q, a, b) for b in W] for a in W])
    coeff = np.linalg.solve(gram, model.group.metric @ Z)
    return state_from_velocity(model, q, v + coeff @ W)


def velocity(model, state: CotangentState):
    return metric_inverse(model, state.q) @ state.p


def hamiltonian(model, q, p):
    K = np.linalg.inv(model.metric_matrix(q))
    return 0.5 * np.einsum("...i,...ij,...j->...", p, K, p)


def moment_map(model, state: CotangentState):
    """``A(q, p)`` as an algebra vector (metric dual of ``X -> <p, X_q>``)."""
    W = model.generators(state.q)  # (d, n)
    pair = W @ state.p
    return np.linalg.solve(model.group.metric, pair)


def _dH_dq(model, q, p):
    n = q.shape[-1]
    Qc = q[None, :] + 1j * CSTEP * np.eye(n)
    K = np.linalg.inv(model.metric_matrix(Qc))
    return (0.5 * np.einsum("i,bij,j->b", p, K, p)).imag / CSTEP


def _dH_dp(model, q, p):
    return metric_inverse(model, q) @ p


def _constraint_jac(model, q):
    return 2.0 * model.normals(q) * np.linalg.norm(q)  # unit spheres: grad |q_I|^2 = 2 q_I


# -- reduction map -------------------------------------------------------------

def horizontal_basis(model, q):
    """Euclidean-orthonormal basis of the horizontal space at ``q`` (n, dim_Q - d)."""
    E = model.tangent_basis(q)  # (n, m)
    Hm = model.horizontal_project(q[None, :], E.T).T
    U, s, _ = np.linalg.svd(Hm, full_matrices=False)
    r = E.shape[1] - model.d
    return U[:, :r]


def default_chart(model, q):
    """Chart with a regular metric at ``q`` (the annulus for weighted spindles)."""
    if model.name == "spindle":
        return "annulus"
    return model.project_to_base(q)[0]


def _chart_diff(chart, d):
    """Difference of chart values with angular coordinates unwrapped."""
    d = np.array(d, dtype=float)
    if chart == "torus":
        d = (d + 0.5) % 1.0 - 0.5
    elif chart == "annulus":
        d[..., 1] = (d[..., 1] + np.pi) % (2 * np.pi) - np.pi
    return d


def chart_jacobian(model, chart, q, h=1e-3):
    """Ambient Jacobian of a chart map by fourth-order central differences, shape (2, n)."""
    q = np.asarray(q, dtype=float)
    n = q.shape[0]
    E = np.eye(n) * h
    f = lambda s: model.chart_map(chart, q[None, :] + s * E)
    y0 = model.chart_map(chart, q)
    d1 = _chart_diff(chart, f(1) - y0) - _chart_diff(chart, f(-1) - y0)
    d2 = _chart_diff(chart, f(2) - y0) - _chart_diff(chart, f(-2) - y0)
    return ((8 * d1 - d2) / (12 * h)).T


def reduction_Pi(model, state: CotangentState, chart=None, tol=1e-8):
    """Reduced covector ``Pi(q, p)`` in a base chart.

    Defined by ``<Pi, dtau v> = <p, v> - <Z, theta(v)>``; on horizontal
    vectors the correction vanishes. Returns ``(chart, y, Pi)``.
    """
    A = moment_map(model, state)
    if np.max(np.abs(A - model.Z)) > tol:
        raise MomentConstraintError(f"|A - Z| = {np.max(np.abs(A - model.Z)):.3e}")
    if chart is None:
        chart = default_chart(model, state.q)
    y = model.chart_map(chart, state.q)
    Hb = horizontal_basis(model, state.q)
    J = chart_jacobian(model, chart, state.q)
    JH = J @ Hb
    Pi = np.linalg.solve(JH.T, Hb.T @ state.p)
    return chart, y, Pi


def base_velocity(model, state, chart):
    return chart_jacobian(model, chart, state.q) @ velocity(model, state)


# -- geodesic flow on T*Q -------------------------------------------------------

def _dH_dq_batch(model, q, p):
    """Batched complex-step ``dH/dq`` for ``q, p`` of shape ``(B, n)``."""
    B, n = q.shape
    Qc = q[:, None, :] + 1j * CSTEP * np.eye(n)[None]
    K = np.linalg.inv(model.metric_matrix(Qc))
    return (0.5 * np.einsum("bi,bcij,bj->bc", p, K, p)).imag / CSTEP


def _rattle_step(model, q, p, h, cache=None, newton_tol=1e-14, max_iter=30):
    """One step of the symmetric RATTLE scheme for ``H = 1/2 p^T G(q)^-1 p``.

    ``cache`` holds a Newton Jacobian reused across steps (refreshed when
    the simplified iteration stops contracting).
    """
    n = q.shape[0]
    nc = len(model.spheres)
    Cq = model.normals(q) * 2.0  # gradient of |q_I|^2 - 1 on Q
    Kq = metric_inverse(model, q)

    def F(U):
        U = np.atleast_2d(U)
        P, Q, lam = U[:, :n], U[:, n:2 * n], U[:, 2 * n:]
        KQ = np.linalg.inv(model.metric_matrix(Q))
        r1 = P - p + 0.5 * h * (_dH_dq_batch(model, np.broadcast_to(q, P.shape), P) + lam @ Cq)
        r2 = Q - q - 0.5 * h * (P @ Kq.T + np.einsum("bij,bj->bi", KQ, P))
        r3 = model.constraint(Q)
        return np.concatenate([r1, r2, r3], axis=1)

    def jac(u):
        eps = 1e-7
        E = eps * np.eye(u.size)
        return ((F(u + E) - F(u - E)) / (2 * eps)).T

    if cache is None:
        cache = {}
    u = np.concatenate([p, model.retract(q + h * (Kq @ p)), np.zeros(nc)])
    J = cache.get(h)
    if J is None:
        J = cache[h] = jac(u)
    prev = np.inf
    for _ in range(max_iter):
        r = F(u)[0]
        res = np.max(np.abs(r))
        if res < newton_tol:
            break
        if res > 0.5 * prev:
            J = cache[h] = jac(u)
        prev = res
        u = u - np.linalg.solve(J, r)
    P, Q = u[:n], u[n:2 * n]
    a = P - 0.5 * h * _dH_dq(model, Q, P)
    K = metric_inverse(model, Q)
    CQ = model.normals(Q) * 2.0
    mu = np.linalg.solve(CQ @ K @ CQ.T, CQ @ K @ a) * (2.0 / h)
    pn = a - 0.5 * h * CQ.T @ mu
    return Q, pn


def _triple_jump(order):
    """Composition weights raising a symmetric method from order ``order - 2``."""
    z = 2.0 ** (1.0 / (order - 1))
    return 1.0 / (2.0 - z), -z / (2.0 - z)


def composition_weights(order):
    w = [1.0]
    for o in range(4, order + 1, 2):
        a, b = _triple_jump(o)
        w = [a * x for x in w] + [b * x for x in w] + [a * x for x in w]
    return tuple(w)


def geodesic_flow_TQ(model, state: CotangentState, duration: float, h: float = 0.005, order: int = 4,
                     samples: int | None = None) -> Trajectory:
    """Geodesic flow of the lifted metric by a constrained symplectic scheme.

    ``order=2`` is plain RATTLE; higher even orders use nested triple jumps.
    The trajectory is recorded at every step, or every ``steps // samples``
    steps; the final state is always included.
    """
    steps = max(1, int(round(duration / h)))
    h = duration / steps
    if order < 2 or order % 2:
        raise ValueError("order must be a positive even integer")
    coeffs = composition_weights(order)
    cache = {}
    q, p = state.q.copy(), state.p.copy()
    every = 1 if samples is None else max(1, steps // samples)
    ts, qs, ps = [0.0], [q.copy()], [p.copy()]
    for i in range(steps):
        for c in coeffs:
            q, p = _rattle_step(model, q, p, c * h, cache)
        drift = np.max(np.abs(model.constraint(q)))
        if drift > 1e-6:
            raise ConstraintDriftError(f"constraint drift {drift:.2e} at t={(i + 1) * h:.4g}")
        if (i + 1) % every == 0 or i + 1 == steps:
            ts.append((i + 1) * h)
            qs.append(q.copy())
            ps.append(p.copy())
    Q, P = np.array(qs), np.array(ps)
    H = np.array([hamiltonian(model, a, b) for a, b in zip(Q, P)])
    A = np.array([moment_map(model, CotangentState(a, b)) for a, b in zip(Q, P)])
    return Trajectory(np.array(ts), Q, P, H, A)


# -- magnetic flow in a chart ----------------------------------------------------

def _christoffel(model, chart, y, h=1e-3):
    """Christoffel symbols ``Gamma[k, i, j]`` of the chart metric (4th-order differences)."""
    dG = []
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        f = lambda s: model.chart_metric(chart, y + s * e)
        dG.append((-f(2) + 8 * f(1) - 8 * f(-1) + f(-2)) / 12.0)
    dG = np.array(dG) / h  # dG[l, i, j] = d_l G_ij
    Gi = np.linalg.inv(model.chart_metric(chart, y))
    # Gamma^k_ij = 1/2 G^kl (d_i G_jl + d_j G_il - d_l G_ij)
    a = dG  # d_i G_jl
    b = np.einsum("jil->ijl", dG)  # d_j G_il
    c = np.einsum("lij->ijl", dG)  # d_l G_ij
    return 0.5 * np.einsum("kl,ijl->kij", Gi, a + b - c)


def magnetic_rhs(model, chart, y, v, charge=1.0):
    Gm = model.chart_metric(chart, y)
    s = model.chart_sigma(chart, y)
    S = np.array([[0.0, s], [-s, 0.0]])
    Gam = _christoffel(model, chart, y)
    return -np.einsum("kij,i,j->k", Gam, v, v) + charge * np.linalg.solve(Gm, S @ v)


def magnetic_flow_TM(model, chart, y0, v0, duration, charge=1.0, t_eval=None, rtol=1e-12, atol=1e-13):
    """Integrate the chart magnetic equation with an adaptive Runge-Kutta method."""
    def rhs(t, u):
        return np.concatenate([u[2:], magnetic_rhs(model, chart, u[:2], u[2:], charge)])

    sol = solve_ivp(rhs, (0.0, duration), np.concatenate([y0, v0]), method="DOP853",
                    t_eval=t_eval, rtol=rtol, atol=atol)
    return sol.t, sol.y[:2].T, sol.y[2:].T


def chart_energy(model, chart, y, v):
    Gm = model.chart_metric(chart, y)
    return 0.5 * np.einsum("...i,...ij,...j->...", v, Gm, v)


def hopf_circle_state(model, k: float, alpha: float = None):
    """State with ``A = Z``, ``H = k`` whose projection circles the north pole.

    The base point sits at polar angle ``alpha`` on the radius-1/2 sphere
    (default: the centre of curvature is the pole) with horizontal velocity
    along the latitude.
    """
    kbar = k - 0.5
    speed = np.sqrt(2.0 * kbar)
    if alpha is None:
        # curvature of the magnetic circle is b/|v| = 1/(pi speed); on the
        # sphere of radius 1/2 a latitude circle has curvature 2 cot(alpha)
        alpha = np.arctan(2.0 * np.pi * speed)
    r = alpha / 2.0
    q = np.array([np.cos(r), 0.0, np.sin(r), 0.0])
    W = model.fundamental(np.array([1.0]), q)
    lat = np.array([0.0, 0.0, 0.0, np.sin(r)])
    lat = model.horizontal_project(q, lat)
    lat = lat / np.sqrt(model.metric(q, lat, lat))
    best = None
    for sgn in (1.0, -1.0):
        v = model.Z[0] * W + sgn * speed * lat
        st = state_from_velocity(model, q, v)
        y = model.chart_map("north", st.q)
        vb = base_velocity(model, st, "north")
        acc = magnetic_rhs(model, "north", y, vb)
        # pick the orientation whose acceleration points to the pole (y = 0)
        score = float(np.dot(acc, -y))
        if best is None or score > best[0]:
            best = (score, st)
    return best[1]


def hopf_circle_period(k: float, alpha: float = None) -> float:
    """Period of the projected circle of :func:`hopf_circle_state`."""
    speed = np.sqrt(2.0 * (k - 0.5))
    if alpha is None:
        alpha = np.arctan(2.0 * np.pi * speed)
    return float(np.pi * np.sin(alpha) / speed)


@dataclass
class RoundTrip:
    trajectory: Trajectory
    chart: str
    y_projected: np.ndarray
    y_chart: np.ndarray
    distance: float
    H: float
    kbar: float
    energy_defect: float  # |H - kbar - |A|^2/2|
    H_drift: float
    A_drift: float


def round_trip(model, state: CotangentState, duration: float, h: float = 0.005, order: int = 4,
               samples: int | None = None, chart=None, charge=1.0) -> RoundTrip:
    """Flow upstairs, project through ``Pi`` and compare with the chart magnetic flow."""
    A0 = moment_map(model, state)
    if np.max(np.abs(A0 - model.Z)) > 1e-8:
        raise MomentConstraintError(f"|A - Z| = {np.max(np.abs(A0 - model.Z)):.3e}")
    if chart is None:
        chart = default_chart(model, state.q)
    tr = geodesic_flow_TQ(model, state, duration, h, order, samples)
    y = model.chart_map(chart, tr.q)
    y0, v0 = y[0], base_velocity(model, state, chart)
    _, yc, _ = magnetic_flow_TM(model, chart, y0, v0, duration, charge, t_eval=tr.t)
    dist = float(np.max(np.abs(_chart_diff(chart, y - yc))))
    kbar = float(chart_energy(model, chart, y0, v0))
    H = float(tr.H[0])
    zz = float(model.group.inner(A0, A0))
    return RoundTrip(tr, chart, y, yc, dist, H, kbar, abs(H - kbar - 0.5 * zz),
                     float(np.ptp(tr.H)), float(np.max(np.ptp(tr.A, axis=0))))


# -- rescaling ----------------------------------------------------------------

def rescale_orbit(model, x: np.ndarray, X, tol=1e-6):
    """``y(t) = exp(-tX) x(tT)`` from samples of ``x`` on ``[0, T]`` (N+1 equally spaced)."""
    X = np.atleast_1d(np.asarray(X, dtype=float))
    x = np.asarray(x, dtype=float)
    err = np.max(np.abs(x[-1] - model.act(X, x[0])))
    if err > tol:
        raise ClosureError(f"x(T) differs from exp(X) x(0) by {err:.2e}")
    t = np.linspace(0.0, 1.0, x.shape[0])
    return model.act(-t[:, None] * X[None, :], x)


def unrescale_orbit(model, y: np.ndarray, X):
    X = np.atleast_1d(np.asarray(X, dtype=float))
    t = np.linspace(0.0, 1.0, y.shape[0])
    return model.act(t[:, None] * X[None, :], y)


# -- Rabinowitz action -------------------------------------------------------------

def rabinowitz_action(model, q, p, phi, T, k):
    """Discrete ``A_k(y, phi, T)`` for a loop ``y = (q_i, p_i)``.

    ``q`` sits at the nodes and ``p`` on the intervals. The Liouville term and
    the ``<A, phi>`` coupling are carried together by the link pairing
    ``p_i . N (exp(phi_i/N) q_{i+1} - q_i)``, matching the discrete ``S_k``.
    """
    q = np.asarray(q, dtype=float)
    N = q.shape[0]
    link = model.act(np.asarray(phi) / N, np.roll(q, -1, axis=0))
    m = model.retract(0.5 * (q + link))
    lam = np.einsum("in,in->i", p, N * (link - q))
    H = hamiltonian(model, m, p)
    Zphi = model.group.inner(phi, model.Z)
    return float(np.mean(lam - T * (H - k) - Zphi))


def legendre_lift(model, cfg: LoopConfiguration):
    """Lift of a loop configuration to ``(q, p, phi, T)`` with equal action values.

    The lift runs the loop backwards and negates ``phi``; then ``A_k = S_k``
    (link scheme), and at critical points the moment of the lifted momentum
    tends to ``+Z`` at second order in ``1/N``.
    """
    N = cfg.N
    idx = (-np.arange(N)) % N
    q = cfg.gamma[idx]
    phi = -cfg.phi[(N - 1 - np.arange(N)) % N]
    link = model.act(phi / N, np.roll(q, -1, axis=0))
    m = model.retract(0.5 * (q + link))
    D = N * (link - q)
    p = np.einsum("inm,im->in", model.metric_matrix(m), D) / cfg.T
    return q, p, phi, cfg.T


# -- symplectic consistency ---------------------------------------------------------

def symplectic_defect(model, state: CotangentState, rng, h=1e-3):
    """Compare the canonical form on ``A^-1(Z)`` with the reduced twisted form.

    Two random tangent variations of the state inside ``A^-1(Z)`` (and with
    ``p = G v`` for tangent ``v``) are pushed through ``Pi``; the defect is
    ``omega(d1, d2) - [omega_bar(dPi d1, dPi d2) + sigma_bar(dtau d1, dtau d2)]``.
    """
    chart, y0, _ = reduction_Pi(model, state)
    v0 = velocity(model, state)

    def variation():
        dq = model.tangent_project(state.q, rng.normal(size=model.n))
        dv = rng.normal(size=model.n)
        return dq, dv

    def curve(dq, dv, s):
        q = model.retract(state.q + s * dq)
        v = model.tangent_project(q, v0 + s * dv)
        # restore A = Z by adjusting the vertical component
        W = model.fundamental(np.array([1.0]), q)
        st = state_from_velocity(model, q, v)
        A = moment_map(model, st)
        v = v + (model.Z[0] - A[0]) * W / model.metric(q, W, W)
        return state_from_velocity(model, q, v)

    def tangent(dq, dv):
        pts = {j: curve(dq, dv, j * h) for j in (-2, -1, 1, 2)}
        red = {j: reduction_Pi(model, st, chart)[1:] for j, st in pts.items()}
        d4 = lambda a: (8 * (a(1) - a(-1)) - (a(2) - a(-2))) / (12 * h)
        dQ = d4(lambda j: pts[j].q)
        dP = d4(lambda j: pts[j].p)
        dy = d4(lambda j: _chart_diff(chart, red[j][0] - y0) if chart in ("torus", "annulus") else red[j][0])
        dPi = d4(lambda j: red[j][1])
        return dQ, dP, dy, dPi

    d1, d2 = tangent(*variation()), tangent(*variation())
    omega = float(d1[1] @ d2[0] - d2[1] @ d1[0])
    omega_bar = float(d1[3] @ d2[2] - d2[3] @ d1[2])
    s = float(model.chart_sigma(chart, y0))
    sig = s * float(d1[2][0] * d2[2][1] - d1[2][1] * d2[2][0])
    return omega, omega_bar, sig
