"""Numerical invariant suite shared by ``orbimag check`` and the tests.

Every check takes ``(model, rng, samples)`` and returns an
:class:`InvariantResult` holding the worst observed defect and its tolerance.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import brentq

from . import gauge as ga
from . import loopspace as ls
from . import reduction as rd
from . import solver as so
from . import verify as vf
from .liegroup import su2


@dataclass
class InvariantResult:
    name: str
    value: float
    tol: float
    samples: int
    note: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tol)

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return d


def _horizontal(model, rng, q):
    return model.horizontal_project(q, model.random_tangent(rng, q))


def _base_chart(model, q):
    return rd.default_chart(model, q)


def _generic_point(model, rng, lo=0.2, hi=0.8):
    """Random point away from the singular fibres of the spindle models."""
    while True:
        q = model.random_point(rng)
        if model.name not in ("hopf", "spindle"):
            return q
        s = q[0] ** 2 + q[1] ** 2
        if lo < s < hi:
            return q


# -- liegroup ------------------------------------------------------------------

def ad_bracket_ode(model, rng, samples=10):
    """``Ad(exp(tX), Y)`` against RK4 integration of ``Y' = [X, Y]``."""
    worst = 0.0
    for G in (model.group, su2()):
        for _ in range(samples):
            X, Y = rng.normal(size=G.dim), rng.normal(size=G.dim)
            h, y = 1.0 / 64, Y.copy()
            f = lambda v: G.bracket(X, v)
            for _ in range(64):
                k1 = f(y)
                k2 = f(y + 0.5 * h * k1)
                k3 = f(y + 0.5 * h * k2)
                k4 = f(y + h * k3)
                y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            worst = max(worst, float(np.max(np.abs(G.Ad(G.exp(X), Y) - y))))
    return InvariantResult("liegroup.ad_bracket_ode", worst, 1e-6, samples)


def torus_commutative(model, rng, samples=20):
    G = model.group
    worst = 0.0
    if G.kind == "torus":
        for _ in range(samples):
            X, Y = rng.normal(size=G.dim), rng.normal(size=G.dim)
            worst = max(worst, float(np.max(np.abs(G.bracket(X, Y)))),
                        float(np.max(np.abs(G.center_project(X) - X))))
    return InvariantResult("liegroup.torus_commutative", worst, 1e-14, samples)


def lattice_closed(model, rng, samples=20):
    G = model.group
    worst = 0.0
    for _ in range(samples):
        a = rng.integers(-3, 4, size=G.dim).astype(float)
        b = rng.integers(-3, 4, size=G.dim).astype(float)
        for v in (-a, a + b):
            _, d = G.lattice_round(v, window=8)
            worst = max(worst, float(d))
    return InvariantResult("liegroup.lattice_closed", worst, 1e-12, samples)


# -- bundle ----------------------------------------------------------------------

def fundamental_isometry(model, rng, samples=50):
    """``g_Q(Xbar, Xbar) = <X, X>``: the fibres are isometric to the group."""
    worst = 0.0
    for _ in range(samples):
        q = model.random_point(rng)
        X = rng.normal(size=model.d)
        W = model.fundamental(X, q)
        worst = max(worst, abs(float(model.metric(q, W, W)) - float(model.group.inner(X, X))))
    return InvariantResult("bundle.fundamental_isometry", worst, 1e-10, samples)


def antisymmetry(model, rng, samples=100):
    """``g(u, nabla_v Xbar) + g(v, nabla_u Xbar) = 0`` (Killing fields)."""
    worst = 0.0
    for _ in range(samples):
        q = _generic_point(model, rng)
        u, v = model.random_tangent(rng, q), model.random_tangent(rng, q)
        X = rng.normal(size=model.d)
        worst = max(worst, abs(float(model.covariant_pair(X, q, u, v) + model.covariant_pair(X, q, v, u))))
    return InvariantResult("bundle.antisymmetry", worst, 1e-6, samples)


def curvature_identity(model, rng, samples=100):
    """``sigma_X(u, v) = -2 g(u, nabla_v Xbar)`` for horizontal ``u, v``."""
    worst = 0.0
    for _ in range(samples):
        q = _generic_point(model, rng)
        u, v = _horizontal(model, rng, q), _horizontal(model, rng, q)
        X = rng.normal(size=model.d)
        lhs = float(np.squeeze(model.curvature_sigma(X, q, u, v)))
        rhs = -2.0 * float(model.covariant_pair(X, q, u, v))
        worst = max(worst, abs(lhs - rhs))
    return InvariantResult("bundle.curvature_identity", worst, 1e-6, samples)


def mixed_vanishing(model, rng, samples=100):
    """Both sides vanish when one argument is vertical and the other horizontal."""
    worst = 0.0
    for _ in range(samples):
        q = _generic_point(model, rng)
        v = _horizontal(model, rng, q)
        Y, X = rng.normal(size=model.d), rng.normal(size=model.d)
        u = model.fundamental(Y, q)
        worst = max(worst, abs(float(np.squeeze(model.curvature_sigma(X, q, u, v)))),
                    abs(float(model.covariant_pair(X, q, u, v))))
    return InvariantResult("bundle.mixed_vanishing", worst, 1e-6, samples)


def chart_consistency(model, rng, samples=50):
    """Chart two-form pulled back by the projection equals ``sigma_Z``."""
    worst = 0.0
    for _ in range(samples):
        q = _generic_point(model, rng)
        chart = _base_chart(model, q)
        y = model.chart_map(chart, q)
        u, v = _horizontal(model, rng, q), _horizontal(model, rng, q)
        J = rd.chart_jacobian(model, chart, q)
        a, b = J @ u, J @ v
        down = float(model.chart_sigma(chart, y)) * (a[0] * b[1] - a[1] * b[0])
        up = float(np.squeeze(model.curvature_sigma(model.Z, q, u, v)))
        worst = max(worst, abs(down - up))
    return InvariantResult("bundle.chart_consistency", worst, 1e-6, samples)


def base_isometry(model, rng, samples=50):
    worst = 0.0
    for _ in range(samples):
        q = _generic_point(model, rng)
        chart = _base_chart(model, q)
        u = _horizontal(model, rng, q)
        a = rd.chart_jacobian(model, chart, q) @ u
        G = model.chart_metric(chart, model.chart_map(chart, q))
        worst = max(worst, abs(float(model.metric(q, u, u)) - float(a @ G @ a)))
    return InvariantResult("bundle.base_isometry", worst, 1e-8, samples)


# -- loopspace ---------------------------------------------------------------------

def gradient_consistency(model, rng, samples=10, N=64, h=1e-5, schemes=("link", "spectral")):
    """Analytic directional derivatives of S_k and E against central differences."""
    worst = 0.0
    for scheme in schemes:
        for _ in range(samples):
            cfg = ls.random_config(model, rng, N)
            k = float(rng.uniform(0.6, 2.0))
            v = so.smooth(model, cfg, ls.random_tangent(model, rng, cfg))
            nv = ls.tangent_norm(model, cfg, v)
            v = v.scaled(1.0 / nv)
            dg, dp, dT = ls.differential_Sk(model, cfg, k, scheme)
            ana = ls.pairing(dg, dp, dT, v)
            f = lambda s: ls.action_Sk(model, ls.retract_step(model, cfg, v, s), k, scheme)
            fd = (f(h) - f(-h)) / (2 * h)
            worst = max(worst, abs(ana - fd) / max(1.0, abs(fd)))
            dgE, dpE = ls.energy_differential(model, cfg.gamma, cfg.phi, scheme)
            anaE = float(np.sum(dgE * v.xi) + np.sum(dpE * v.eta))
            fE = lambda s: ls.action_E(model, model.retract(cfg.gamma + s * v.xi), cfg.phi + s * v.eta, scheme)
            fdE = (fE(h) - fE(-h)) / (2 * h)
            worst = max(worst, abs(anaE - fdE) / max(1.0, abs(fdE)))
    return InvariantResult("loopspace.gradient_consistency", worst, 1e-6, samples * len(schemes))


def unboundedness_witness(model, rng, samples=10, N=64):
    """``S_k(rho_m x) - S_k(x) = m <X, Z>`` for the linear loops ``rho_m = exp(m t X)``."""
    worst = 0.0
    X = np.ones(model.d)
    for _ in range(samples):
        cfg = ls.random_config(model, rng, N)
        k = float(rng.uniform(0.6, 2.0))
        m = int(rng.integers(-3, 4))
        y = ga.apply(model, ga.linear_gauge(N, m * X), cfg, "link")
        d = ls.action_Sk(model, y, k) - ls.action_Sk(model, cfg, k)
        worst = max(worst, abs(d - m * float(model.group.inner(X, model.Z))))
    return InvariantResult("loopspace.unboundedness_witness", worst, 1e-10, samples, note="link scheme")


def discretization_order(model, rng, samples=3):
    """Observed order of the link scheme under N-doubling on smooth loops."""
    worst_order = np.inf
    for _ in range(samples):
        base = ls.random_config(model, rng, 512, modes=2, amp=0.3)
        k = 1.0
        vals = []
        for N in (32, 64, 128, 256):
            c = ls.resample(model, base, N, "spectral")
            vals.append(ls.action_Sk(model, c, k, "link"))
        ref = ls.action_Sk(model, base, k, "spectral")
        e = np.abs(np.array(vals) - ref)
        orders = np.log2(e[:-1] / e[1:])
        worst_order = min(worst_order, float(np.min(orders)))
    # report a defect: how far the order falls below 2 (with slack for rounding)
    return InvariantResult("loopspace.discretization_order", max(0.0, 1.9 - worst_order), 0.0, samples,
                           note=f"min observed order {worst_order:.3f}")


# -- gauge -------------------------------------------------------------------------

def _critical(model, k=1.0, N=64):
    if model.name == "exact_product":
        return so.explicit_critical_point(model, k, N, line=0.75)
    return so.explicit_critical_point(model, k, N)


def _link_critical(model, k=1.0, N=64):
    cfg, _ = so.newton_polish(model, _critical(model, k, N), k, scheme="link")
    return cfg


def criticality_covariant(model, rng, samples=10):
    """Gauge images of a critical point are critical (link scheme, exactly invariant)."""
    k = 1.0
    cfg = _link_critical(model, k)
    worst = ls.grad_norm(model, cfg, k)
    if worst > 1e-8:
        return InvariantResult("gauge.criticality_covariant", np.inf, 1e-6, 0, note="seed not critical")
    for _ in range(samples):
        rho = ga.random_gauge(rng, cfg.N, model.d, modes=3, amp=0.3)
        worst = max(worst, ls.grad_norm(model, ga.apply(model, rho, cfg), k))
    return InvariantResult("gauge.criticality_covariant", worst, 1e-6, samples, note="link scheme")


def delta_homomorphism(model, rng, samples=50, N=32):
    worst = 0.0
    for _ in range(samples):
        a = ga.random_gauge(rng, N, model.d)
        b = ga.random_gauge(rng, N, model.d)
        worst = max(worst, abs(ga.delta(model, a.compose(b)) - ga.delta(model, a) - ga.delta(model, b)))
    return InvariantResult("gauge.delta_homomorphism", worst, 1e-10, samples)


def vertical_samples(model, rng, delta, count, N=32, boundary=False):
    """Perturbed vertical loops with residual ``delta`` (boundary) or below it.

    Returns tuples ``(cfg, X)`` with ``X`` the label of the unperturbed loop.
    Labels are drawn from loops that close: the unit lattice at free orbits
    and ``j/|stab|`` at the spindle's exceptional orbits.
    """
    out = []
    while len(out) < count:
        if model.name == "spindle" and rng.random() < 0.3:
            sing = int(rng.integers(2))
            q0 = np.zeros(4)
            ang = rng.uniform(0, 2 * np.pi)
            q0[2 * sing], q0[2 * sing + 1] = np.cos(ang), np.sin(ang)
            order = model.params["q" if sing else "p"]
            X = np.array([rng.integers(-2 * order, 2 * order + 1) / order])
        else:
            q0 = _generic_point(model, rng, 0.05, 0.95)
            X = np.array([float(rng.integers(-2, 3))])
        T = float(np.exp(rng.uniform(np.log(0.01), np.log(3.0))))
        base = ls.vertical_loop(model, X, q0, N, T)
        pert = ls.random_config(model, rng, N)
        dphi = rng.normal(size=(N, model.d)) * 0.3 + rng.normal(size=(1, model.d))

        def at(s):
            return ls.LoopConfiguration(model.retract(base.gamma + s * (pert.gamma - base.gamma.mean(0) * 0)),
                                        base.phi + s * dphi, T)

        target = delta * (1.0 if boundary else rng.uniform(0.05, 0.95))
        f = lambda s: ls.vertical_residual(model, at(s)) - target
        hi = 1e-3
        while f(hi) < 0 and hi < 1.0:
            hi *= 2
        if f(hi) < 0:
            continue
        s = brentq(f, 0.0, hi, xtol=1e-14)
        out.append((at(s), X))
    return out


def vertical_detection(model, rng, samples=30, delta=1e-3):
    """Points of the delta-vertical set are labelled by the generating lattice vector."""
    worst = 0.0
    mismatches = 0
    for cfg, X in vertical_samples(model, rng, delta, samples):
        vc = ga.detect_vertical_class(model, cfg, delta)
        if vc is None or not np.allclose(vc.X, X):
            mismatches += 1
            continue
        worst = max(worst, vc.distance / np.sqrt(delta))
    return InvariantResult("gauge.vertical_detection", worst + mismatches, 1.0 - 1e-12, samples,
                           note="value is max distance / sqrt(delta), plus the number of mislabelled samples")


def boundary_bound(model, rng, samples=30, delta=1e-3):
    """On the boundary of the delta-vertical set, S_k >= <X,Z> + sqrt(2 delta k) - sqrt(delta)."""
    worst = -np.inf
    for cfg, X in vertical_samples(model, rng, delta, samples, boundary=True):
        k = float(rng.uniform(0.6, 2.0))
        bound = float(model.group.inner(X, model.Z)) + np.sqrt(2 * delta * k) - np.sqrt(delta)
        worst = max(worst, bound - ls.action_Sk(model, cfg, k))
    return InvariantResult("gauge.boundary_bound", max(worst, 0.0), 1e-6, samples,
                           note=f"largest bound violation {worst:.3e}")


# -- solver ----------------------------------------------------------------------

def _converging_flow(rng):
    """Flow towards the minimising line of the exact product model."""
    from .bundle import exact_product

    model = exact_product()
    k = 1.0
    c = so.explicit_critical_point(model, k, 32, line=0.75)
    c, _ = so.newton_polish(model, c, k, scheme="link")
    x = c.copy()
    x.T *= float(rng.uniform(1.02, 1.1))
    x.phi = x.phi + float(rng.uniform(-0.1, 0.1))
    x.gamma = model.retract(x.gamma + 0.02 * rng.normal(size=x.gamma.shape))
    return model, k, so.flow(model, x, k)


def palais_smale(model, rng, samples=1):
    """Along a converging tail, E/T^2 -> 2k and <phibar, Z>/T stays bounded."""
    m, k, res = _converging_flow(rng)
    c = res.config
    ratio = ls.vertical_residual(m, c) / c.T ** 2
    lin = abs(float(m.group.inner(c.phi.mean(axis=0), m.Z))) / c.T
    ok = res.status == so.CONVERGED
    val = abs(ratio - 2 * k) / (2 * k) if ok else np.inf
    return InvariantResult("solver.palais_smale", val, 0.1, samples,
                           note=f"exact_product flow, status {res.status}, |<phi,Z>|/T = {lin:.3f}")


def cauchy_tail(model, rng, samples=1):
    _, _, res = _converging_flow(rng)
    tail = max(res.increments[-50:]) if res.status == so.CONVERGED and res.increments else np.inf
    return InvariantResult("solver.cauchy_tail", float(tail), 1e-6, samples, note="exact_product flow")


def stopping_exhaustive(model, rng, samples=2, delta=1e-3):
    """Flows from near-vertical data stop in the vertical set with a consistent label."""
    statuses = {so.CONVERGED, so.STOPPED_VERTICAL, so.T_CLAMPED, so.STEP_BUDGET}
    worst = 0.0
    params = so.FlowParams(delta=delta)
    for i in range(samples):
        X = 1.0 if i % 2 == 0 else -1.0
        q0 = _generic_point(model, rng)
        c = ls.vertical_loop(model, X, q0, 32, 0.02)
        pert = ls.random_config(model, rng, 32)
        c.gamma = model.retract(c.gamma + 0.01 * pert.gamma)
        c.phi = c.phi + 0.01 * rng.normal(size=c.phi.shape)
        res = so.flow(model, c, 1.0, params)
        if res.status not in statuses:
            worst = np.inf
        elif res.status == so.STOPPED_VERTICAL:
            vc = ga.detect_vertical_class(model, res.config, delta)
            if vc is None or not np.allclose(vc.X, res.X) or not res.distance < np.sqrt(delta):
                worst = np.inf
            else:
                worst = max(worst, res.distance / np.sqrt(delta))
        else:
            worst = np.inf
    return InvariantResult("solver.stopping_exhaustive", worst, 1.0 - 1e-12, samples,
                           note="value is max distance / sqrt(delta)")


# -- reduction ---------------------------------------------------------------------

def moment_state(model, rng, k=1.0):
    q = _generic_point(model, rng, 0.3, 0.7)
    v = _horizontal(model, rng, q)
    zz = float(model.group.inner(model.Z, model.Z))
    v = v * np.sqrt(2 * (k - 0.5 * zz) / float(model.metric(q, v, v)))
    return rd.state_with_moment(model, q, v)


def symplectic_consistency(model, rng, samples=5):
    worst = 0.0
    for _ in range(samples):
        st = moment_state(model, rng)
        o, ob, sg = rd.symplectic_defect(model, st, rng)
        worst = max(worst, abs(o - ob - sg) / max(1.0, abs(o)))
    return InvariantResult("reduction.symplectic_consistency", worst, 1e-6, samples)


def first_integrals(model, rng, samples=1):
    """H and A are conserved by the constrained flow.

    The spindle fibres carry a large inverse-metric weight, so H needs the
    sixth-order composition at a short step there; the moment is exact anyway.
    """
    if model.name == "spindle":
        duration, h, order = 0.1, 4e-4, 6
    else:
        duration, h, order = 0.5, 0.0025, 4
    worst = 0.0
    for _ in range(samples):
        st = moment_state(model, rng)
        tr = rd.geodesic_flow_TQ(model, st, duration, h=h, order=order)
        worst = max(worst, float(np.ptp(tr.H)), float(np.max(np.ptp(tr.A, axis=0))) / duration)
    return InvariantResult("reduction.first_integrals", worst, 1e-8, samples,
                           note=f"order {order}, h {h}, duration {duration}")


def energy_bookkeeping(model, rng, samples=20):
    """``H = kbar + |Z|^2 / 2`` for A = Z states whose base speed is ``sqrt(2 kbar)``."""
    worst = 0.0
    zz = float(model.group.inner(model.Z, model.Z))
    for _ in range(samples):
        k = float(rng.uniform(0.6, 2.0))
        st = moment_state(model, rng, k)
        worst = max(worst, abs(float(rd.hamiltonian(model, st.q, st.p)) - k))
    return InvariantResult("reduction.energy_bookkeeping", worst, 1e-8, samples,
                           note=f"|Z|^2 = {zz}")


# -- verify -------------------------------------------------------------------------

def gauge_robustness(model, rng, samples=3):
    k = 1.0
    cfg = _critical(model, k)
    worst = 0.0
    for _ in range(samples):
        rho = ga.random_gauge(rng, cfg.N, model.d, modes=3, amp=0.3)
        worst = max(worst, vf.gauge_robustness(model, ga.apply(model, rho, cfg, "spectral"), k))
    return InvariantResult("verify.gauge_robustness", worst, 1e-6, samples)


def psi_phi_relation(model, rng, samples=1):
    k = 1.0
    cfg = _critical(model, k)
    rep = vf.project_and_check(model, cfg, k, charts=False)
    return InvariantResult("verify.psi_phi_relation", rep.psi_phi_residual, 1e-6, samples)


GROUPS = {
    "liegroup": [ad_bracket_ode, torus_commutative, lattice_closed],
    "bundle": [fundamental_isometry, antisymmetry, curvature_identity, mixed_vanishing, chart_consistency,
               base_isometry],
    "loopspace": [gradient_consistency, unboundedness_witness, discretization_order],
    "gauge": [criticality_covariant, delta_homomorphism, vertical_detection, boundary_bound],
    "solver": [palais_smale, cauchy_tail, stopping_exhaustive],
    "reduction": [symplectic_consistency, first_integrals, energy_bookkeeping],
    "verify": [gauge_robustness, psi_phi_relation],
}
SUITE = [fn for fns in GROUPS.values() for fn in fns]
_GROUP_OF = {fn: g for g, fns in GROUPS.items() for fn in fns}


def run_suite(model, seed=0, checks=None):
    """Run every check (or the named subset) with a fresh generator per check."""
    out = []
    for i, fn in enumerate(SUITE):
        if checks is not None and fn.__name__ not in checks:
            continue
        rng = np.random.default_rng([int(seed), i])
        try:
            out.append(fn(model, rng))
        except Exception as exc:  # a crashing check is a failing check
            out.append(InvariantResult(f"{_GROUP_OF[fn]}.{fn.__name__}", np.inf, 0.0, 0, note=f"{type(exc).__name__}: {exc}"))
    return out
