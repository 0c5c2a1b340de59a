"""Critical-point search for S_k and E.

The pieces are a bounded descent flow with vertical stopping, explicit path
classes, a climbing-image mountain-pass deformation, a Newton polish for the
discrete critical-point system, and a scan of the minimax value over k.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import brentq

from . import loopspace as ls
from .gauge import detect_vertical_class, gauge_tangents, gauge_normalize, normalize_periodic
from .loopspace import LoopConfiguration, LoopTangent

log = logging.getLogger("orbimag.solver")


def default_eps(k: float, delta: float) -> float:
    return 0.5 * (np.sqrt(2.0 * k) - 1.0) * np.sqrt(delta)


@dataclass
class FlowParams:
    delta: float = 1e-3
    eps: float | None = None
    T_min: float = 1e-3
    T_max: float = 1e3
    step: float = 0.05
    max_steps: int = 1500
    grad_tol: float = 1e-8
    metric: str = "w12"  # Sobolev-preconditioned field; "l2" for the plain one
    monotone_tol: float = 1e-9

    def eps_for(self, k: float) -> float:
        e = default_eps(k, self.delta) if self.eps is None else self.eps
        return float(e)

    def validate(self, k: float):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not 0 < self.T_min < self.T_max:
            raise ValueError("need 0 < T_min < T_max")
        bound = 0.5 * (np.sqrt(2 * k) - 1) * np.sqrt(self.delta)
        if self.eps_for(k) > bound + 1e-15:
            raise ValueError(f"eps={self.eps_for(k)} exceeds the margin {bound}")


# -- functionals --------------------------------------------------------

class ActionFunctional:
    """S_k with period slot."""

    has_T = True

    def __init__(self, k: float, scheme: str = "link"):
        if not k > 0.5:
            raise ValueError("k must exceed 1/2")
        self.k = float(k)
        self.scheme = scheme

    def value(self, model, cfg):
        return ls.action_Sk(model, cfg, self.k, self.scheme)

    def differential(self, model, cfg):
        return ls.differential_Sk(model, cfg, self.k, self.scheme)

    def batch_differential(self, model, gamma, phi, T):
        dg, dp = ls.energy_differential(model, gamma, phi, self.scheme)
        N = gamma.shape[-2]
        MZ = model.group.metric @ model.Z
        Tb = T[:, None, None]
        kin = np.mean(_batch_kinetic(model, gamma, phi, self.scheme), axis=-1)
        return dg / (2 * Tb), dp / (2 * Tb) + MZ / N, self.k - kin / (2 * T * T)


class EnergyFunctional:
    """E on loops in Q x g; the period slot is frozen."""

    has_T = False
    k = None

    def __init__(self, scheme: str = "link"):
        self.scheme = scheme

    def value(self, model, cfg):
        return ls.action_E(model, cfg.gamma, cfg.phi, self.scheme)

    def differential(self, model, cfg):
        dg, dp = ls.energy_differential(model, cfg.gamma, cfg.phi, self.scheme)
        return dg, dp, 0.0

    def batch_differential(self, model, gamma, phi, T):
        dg, dp = ls.energy_differential(model, gamma, phi, self.scheme)
        return dg, dp, np.zeros(gamma.shape[0])


def _batch_kinetic(model, gamma, phi, scheme):
    if scheme == "spectral":
        return ls._spectral_local(model, gamma, ls.spectral_derivative(gamma), phi)
    N = gamma.shape[-2]
    return ls._kinetic(model, gamma, np.roll(gamma, -1, axis=-2), phi, N)


def _functional(k, scheme="link"):
    if isinstance(k, (ActionFunctional, EnergyFunctional)):
        return k
    if k is None:
        return EnergyFunctional(scheme)
    return ActionFunctional(k, scheme)


def gradient(model, cfg, fun) -> LoopTangent:
    dg, dp, dT = fun.differential(model, cfg)
    return ls.riesz(model, cfg.gamma, dg, dp, dT if fun.has_T else 0.0)


def smooth(model, cfg, v: LoopTangent, scale: float | None = None) -> LoopTangent:
    """Sobolev smoothing of the loop component: (1 - c d^2/dt^2)^-1, then tangent projection."""
    N = cfg.N
    c = (0.05 / max(cfg.T, 1e-3)) if scale is None else scale
    lam = (2 * N * np.sin(np.pi * np.arange(N) / N)) ** 2
    fac = 1.0 / (1.0 + c * lam)
    xi = np.real(np.fft.ifft(np.fft.fft(v.xi, axis=0) * fac[:, None], axis=0))
    return LoopTangent(model.tangent_project(cfg.gamma, xi), v.eta, v.dT)


def bounded_field(model, cfg, k, metric: str = "l2") -> LoopTangent:
    """``-grad / sqrt(1 + |grad|^2)``; ``metric='w12'`` smooths the loop slot first."""
    fun = _functional(k)
    g = gradient(model, cfg, fun)
    if metric == "w12":
        g = smooth(model, cfg, g)
    nrm = ls.tangent_norm(model, cfg, g)
    return g.scaled(-1.0 / np.sqrt(1.0 + nrm * nrm))


def smoothing_descends(model, cfg, fun, min_cos: float = 0.1) -> bool:
    """Whether the smoothed gradient keeps ``cos >= min_cos`` with the gradient.

    The Euclidean smoother need not commute with a weighted metric, so it
    can lose the descent property (seen on spindles at small T).
    """
    g = gradient(model, cfg, fun)
    s = smooth(model, cfg, g)
    dg, dp, dT = fun.differential(model, cfg)
    ns, ng = ls.tangent_norm(model, cfg, s), ls.tangent_norm(model, cfg, g)
    return ls.pairing(dg, dp, dT if fun.has_T else 0.0, s) >= min_cos * ns * ng


# -- flow -------------------------------------------------------------------

CONVERGED = "converged"
STOPPED_VERTICAL = "stopped-vertical"
T_CLAMPED = "T-clamped"
STEP_BUDGET = "step-budget"


@dataclass
class FlowResult:
    config: LoopConfiguration
    status: str
    steps: int
    values: list
    grad_norms: list
    X: np.ndarray | None = None
    distance: float | None = None
    increments: list = field(default_factory=list)


def in_stopped_set(model, cfg, k, delta, eps):
    """Return the vertical class if ``cfg`` lies in {S_k < <X,Z> + eps} and the delta-vertical set."""
    vc = detect_vertical_class(model, cfg, delta)
    if vc is None:
        return None
    level = float(model.group.inner(vc.X, model.Z)) + eps
    if ls.action_Sk(model, cfg, k) < level:
        return vc
    return None


def flow(model, cfg: LoopConfiguration, k: float, params: FlowParams | None = None) -> FlowResult:
    """Adaptive explicit-midpoint integration of the bounded field with stopping."""
    params = params or FlowParams()
    params.validate(k)
    eps = params.eps_for(k)
    fun = ActionFunctional(k)
    x = cfg.copy()
    h = params.step
    S = fun.value(model, x)
    values, gnorms, incs = [S], [], []
    for step in range(params.max_steps + 1):
        g = gradient(model, x, fun)
        gn = ls.tangent_norm(model, x, g)
        gnorms.append(gn)
        if gn < params.grad_tol:
            return FlowResult(x, CONVERGED, step, values, gnorms, increments=incs)
        vc = in_stopped_set(model, x, k, params.delta, eps)
        if vc is not None:
            return FlowResult(x, STOPPED_VERTICAL, step, values, gnorms, vc.X, vc.distance, incs)
        if step == params.max_steps:
            break
        metric = params.metric
        if metric == "w12" and not smoothing_descends(model, x, fun):
            metric = "l2"
        while True:
            v1 = bounded_field(model, x, k, metric)
            xm = ls.retract_step(model, x, v1, 0.5 * h)
            if xm.T <= 0:
                h *= 0.5
                continue
            v2 = bounded_field(model, xm, k, metric)
            xn = ls.retract_step(model, x, v2, h)
            if xn.T < params.T_min:
                xn.T = params.T_min
                Sn = fun.value(model, xn)
                values.append(Sn)
                return FlowResult(xn, T_CLAMPED, step + 1, values, gnorms, increments=incs)
            Sn = fun.value(model, xn)
            err = ls.tangent_norm(model, x, (v2 + v1.scaled(-1.0)).scaled(h))
            # relative error test: rejects steps that excite stiff loop modes
            tol = min(1e-2, 0.25 * h * ls.tangent_norm(model, x, v1))
            if Sn <= S + params.monotone_tol and err < tol:
                break
            h *= 0.5
            if h < 1e-14:
                return FlowResult(x, STEP_BUDGET, step, values, gnorms, increments=incs)
        incs.append(_w12_distance(model, x, xn))
        x, S = xn, Sn
        values.append(S)
        h = min(h * 1.5, 1.0)
    return FlowResult(x, STEP_BUDGET, params.max_steps, values, gnorms, increments=incs)


def _w12_distance(model, a: LoopConfiguration, b: LoopConfiguration) -> float:
    dg = b.gamma - a.gamma
    N = a.N
    dd = N * (np.roll(dg, -1, axis=0) - dg)
    return float(np.sqrt(np.mean(np.sum(dg * dg, 1)) + np.mean(np.sum(dd * dd, 1))
                         + np.mean(np.sum((b.phi - a.phi) ** 2, 1)) + (b.T - a.T) ** 2))


# -- fibrewise relaxation ------------------------------------------------------

def _phi_curvature(model, cfg, fun, h=1e-5):
    _, dpp, _ = fun.differential(model, LoopConfiguration(cfg.gamma, cfg.phi + h, cfg.T))
    _, dpm, _ = fun.differential(model, LoopConfiguration(cfg.gamma, cfg.phi - h, cfg.T))
    return (dpp - dpm) / (2 * h)


def _relax_phi(model, cfg, fun, curv=None, iters=30, tol=1e-12):
    """Node-wise Newton in phi; the curvature is refreshed only if progress stalls."""
    x = cfg.copy()
    if curv is None:
        curv = _phi_curvature(model, x, fun)
    for it in range(iters):
        _, dp, _ = fun.differential(model, x)
        safe = curv > 1e-14
        upd = np.where(safe, -dp / np.where(safe, curv, 1.0), -np.sign(dp))
        x = LoopConfiguration(x.gamma, x.phi + upd, x.T)
        if np.max(np.abs(upd)) < tol:
            break
        if it % 5 == 4:
            curv = _phi_curvature(model, x, fun)
    return x


def relax_fibre(model, cfg, fun, T_min=1e-3, T_max=1e3, sweeps=None):
    """Minimise the functional over the (phi, T) slots with gamma fixed.

    phi is solved node by node with Newton's method; T from the envelope
    condition ``dS/dT = 0`` by a secant iteration in log T, with a bracketed
    fallback.
    """
    c0 = cfg.copy()
    curv = _phi_curvature(model, c0, fun)
    if not fun.has_T:
        return _relax_phi(model, c0, fun, curv)
    state = {"phi": c0.phi, "cfg": c0, "best": (np.inf, c0)}

    def slope(logT):
        c = _relax_phi(model, LoopConfiguration(cfg.gamma, state["phi"], float(np.exp(logT))), fun, curv)
        state["phi"], state["cfg"] = c.phi, c
        f = fun.k - ls.vertical_residual(model, c, fun.scheme) / (2 * c.T * c.T)
        if abs(f) < state["best"][0]:
            state["best"] = (abs(f), c)
        return f

    lo, hi = np.log(T_min), np.log(T_max)
    x0 = float(np.clip(np.log(cfg.T), lo, hi))
    x1 = min(x0 + 0.05, hi) if x0 < hi else x0 - 0.05
    f0, f1 = slope(x0), slope(x1)
    for _ in range(40):
        if abs(f1 - f0) < 1e-300:
            break
        x2 = x1 - f1 * (x1 - x0) / (f1 - f0)
        x2 = float(np.clip(x2, max(lo, x1 - 1.0), min(hi, x1 + 1.0)))
        x0, f0 = x1, f1
        x1, f1 = x2, slope(x2)
        if abs(x1 - x0) < 1e-12:
            return state["cfg"]
    if slope(lo) >= 0:
        return state["cfg"]
    if slope(hi) <= 0:
        return state["cfg"]
    try:
        brentq(slope, lo, hi, xtol=1e-12)
    except ValueError:
        # the warm-started phi solve can jump between fibre minima
        return state["best"][1]
    return state["cfg"]


# -- Newton polish -------------------------------------------------------------

class SingularJacobianError(RuntimeError):
    pass


@dataclass
class NewtonReport:
    status: str
    grad_norms: list
    steps: int
    gauge_leak: float = 0.0


class _Chart:
    """Coordinates ``z -> (R(gamma + E xi), phi + dphi, T + dT)`` around a base loop.

    With ``slice_phi`` the phi slot is restricted to constants (a gauge slice)
    and the Jacobian is rectangular.
    """

    def __init__(self, model, cfg, fun, slice_phi=False):
        self.m, self.c, self.fun = model, cfg, fun
        self.E = model.tangent_basis(cfg.gamma)
        self.N, self.mq = cfg.N, self.E.shape[2]
        self.d = model.d
        self.slice = slice_phi
        self.nx = self.N * self.mq
        self.nd = self.N * self.d
        self.nz_phi = self.d if slice_phi else self.nd
        self.dim = self.nx + self.nd + (1 if fun.has_T else 0)
        self.ndim = self.nx + self.nz_phi + (1 if fun.has_T else 0)

    def _split(self, z):
        z = np.atleast_2d(z)
        B = z.shape[0]
        x = self.c.gamma + np.einsum("inm,bim->bin", self.E, z[:, : self.nx].reshape(B, self.N, self.mq))
        zp = z[:, self.nx: self.nx + self.nz_phi]
        if self.slice:
            phi = self.c.phi + zp[:, None, :]
        else:
            phi = self.c.phi + zp.reshape(B, self.N, self.d)
        T = self.c.T + (z[:, -1] if self.fun.has_T else np.zeros(B))
        return x, phi, T

    def config(self, z):
        x, phi, T = self._split(z)
        return LoopConfiguration(self.m.retract(x[0]), phi[0], T[0]), x[0]

    def residual(self, z):
        """Residual for one coordinate vector or a batch ``(B, dim)``."""
        single = np.ndim(z) == 1
        x, phi, T = self._split(z)
        dg, dp, dT = self.fun.batch_differential(self.m, self.m.retract(x), phi, T)
        v = self.m.retract_vjp(x, dg)
        parts = [self.N * np.einsum("inm,bin->bim", self.E, v).reshape(len(T), -1),
                 self.N * dp.reshape(len(T), -1)]
        if self.fun.has_T:
            parts.append(np.asarray(dT).reshape(-1, 1))
        F = np.concatenate(parts, axis=1)
        return F[0] if single else F

    def jacobian(self, h=1e-6):
        if self.fun.scheme == "spectral" or self.slice:
            return self._dense_jacobian(h)
        return self._banded_jacobian(h)

    def _dense_jacobian(self, h, chunk=64):
        J = np.empty((self.dim, self.ndim))
        I = np.eye(self.ndim)
        for a in range(0, self.ndim, chunk):
            P = h * I[a: a + chunk]
            J[:, a: a + chunk] = ((self.residual(P) - self.residual(-P)) / (2 * h)).T
        return J

    def _banded_jacobian(self, h):
        """Finite differences exploiting the nearest-neighbour coupling of the link scheme."""
        N, mq, d = self.N, self.mq, self.d
        c = next((c for c in range(3, N + 1) if N % c == 0), N)
        J = np.zeros((self.dim, self.dim))
        nodes = np.arange(N)
        for r in range(c):
            sel = nodes[nodes % c == r]
            for a in range(mq + d):
                z = np.zeros(self.dim)
                cols = [j * mq + a if a < mq else self.nx + j * d + a - mq for j in sel]
                z[cols] = h
                col = (self.residual(z) - self.residual(-z)) / (2 * h)
                for j, cj in zip(sel, cols):
                    if a < mq:
                        near_xi, near_ph = [(j - 1) % N, j, (j + 1) % N], [(j - 1) % N, j]
                    else:
                        near_xi, near_ph = [j, (j + 1) % N], [j]
                    for i in near_xi:
                        J[i * mq: (i + 1) * mq, cj] = col[i * mq: (i + 1) * mq]
                    for i in near_ph:
                        J[self.nx + i * d: self.nx + (i + 1) * d, cj] = col[self.nx + i * d: self.nx + (i + 1) * d]
        if self.fun.has_T:
            z = np.zeros(self.dim)
            z[-1] = h
            colT = (self.residual(z) - self.residual(-z)) / (2 * h)
            J[:, -1] = colT
            J[-1, :-1] = colT[:-1] / N
        return J

    def gauge_basis(self):
        xi, et = gauge_tangents(self.m, self.c, self.fun.scheme)
        B = np.zeros((self.dim, xi.shape[0]))
        B[: self.nx] = np.einsum("inm,rin->rim", self.E, xi).reshape(xi.shape[0], -1).T
        B[self.nx: self.nx + self.nd] = et.reshape(et.shape[0], -1).T
        return B


def newton_polish(model, cfg, k, tol=1e-10, max_iter=12, T_min=1e-3, T_max=1e3, scheme="link"):
    """Damped Newton iteration on the discrete first-variation system.

    ``k=None`` polishes a critical point of E instead of S_k. Steps are taken
    orthogonal (in chart coordinates) to the infinitesimal gauge directions.
    """
    fun = _functional(k, scheme)
    x = cfg.copy()
    hist = []
    leak = 0.0
    for it in range(max_iter + 1):
        gn = ls.tangent_norm(model, x, gradient(model, x, fun))
        hist.append(gn)
        if gn <= tol:
            return x, NewtonReport("converged", hist, it, leak)
        if it == max_iter:
            break
        spectral = fun.scheme == "spectral"
        if spectral:
            x = normalize_periodic(model, x, "spectral")
        ch = _Chart(model, x, fun, slice_phi=spectral)
        F0 = ch.residual(np.zeros(ch.ndim))
        J = ch.jacobian()
        if not np.all(np.isfinite(J)):
            raise SingularJacobianError("non-finite Jacobian")
        if spectral:
            dz, *_ = sla.lstsq(J, -F0, cond=1e-11, lapack_driver="gelsd")
        else:
            # exact symmetry: solve on the complement of the gauge directions, which
            # are only approximately in the kernel of J away from critical points
            B = ch.gauge_basis()
            Qf, _ = np.linalg.qr(B, mode="complete")
            Q, Qp = Qf[:, : B.shape[1]], Qf[:, B.shape[1]:]
            y, *_ = sla.lstsq(J @ Qp, -F0, cond=1e-11, lapack_driver="gelsd")
            dz = Qp @ y
            leak = float(np.linalg.norm(Q.T @ dz)) / max(np.linalg.norm(dz), 1e-300)
        f0 = np.linalg.norm(F0)
        lam, accepted = 1.0, False
        while lam > 1e-6:
            xn, _ = ch.config(lam * dz)
            if (not fun.has_T) or T_min <= xn.T <= T_max:
                fn = np.linalg.norm(_Chart(model, xn, fun).residual(np.zeros(ch.dim)))
                if fn < f0:
                    accepted = True
                    break
            lam *= 0.5
        if not accepted:
            return x, NewtonReport("stalled", hist, it, leak)
        x = xn
    return x, NewtonReport("max-iter", hist, max_iter, leak)


# -- path classes --------------------------------------------------------------

@dataclass
class MinimaxPath:
    nodes: list
    kind: str  # "vertical" (S_k, with period) or "energy" (E)
    X: np.ndarray
    base_point: np.ndarray
    end_point: np.ndarray

    def values(self, model, k):
        fun = _functional(k if self.kind == "vertical" else None)
        return np.array([fun.value(model, c) for c in self.nodes])

    def max_residual(self, model):
        return max(ls.vertical_residual(model, c) for c in self.nodes)


def default_vertical_data(model):
    """Lattice element, base point and contraction target for the shipped models."""
    if model.name in ("hopf", "spindle"):
        p = model.params["p"]
        X = np.array([1.0 / p])  # exp(X) fixes (1, 0) with order p
        return X, np.array([1.0, 0.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0, 0.0])
    raise ValueError(f"no default path class for model {model.name!r}")


def build_path_class(model, kind: str = "vertical", N: int = 64, P: int = 24, X=None,
                     base_point=None, end_point=None, T0=None, k=1.0, delta=1e-3, T_mid=1.0):
    """Initial path for the class with vertical start and constant-loop end.

    ``kind='vertical'``: u(0) = (exp(tX) p, -X, T0), u(1) = (q_end, 0, T0) with
    ``k T0 <= eps/2``. ``kind='energy'``: same loops without the period slot.
    Interior loops contract ``exp(tX) p`` onto ``q_end`` along
    ``R((1-s) exp(tX) p + s q_end)``.
    """
    if X is None or base_point is None or end_point is None:
        X0, p0, q0 = default_vertical_data(model)
        X = X0 if X is None else np.atleast_1d(np.asarray(X, dtype=float))
        base_point = p0 if base_point is None else np.asarray(base_point, dtype=float)
        end_point = q0 if end_point is None else np.asarray(end_point, dtype=float)
    X = np.atleast_1d(np.asarray(X, dtype=float))
    if np.allclose(X, 0):
        raise ValueError("X = 0 gives a constant vertical loop: no path class")
    t = ls.times(N)
    loop = model.act(t[:, None] * X[None, :], base_point[None, :])
    if np.max(np.abs(model.act(X, base_point) - base_point)) > 1e-10:
        raise ValueError("exp(X) does not fix the base point: the vertical loop is not closed")
    if T0 is None:
        T0 = 0.5 * default_eps(k, delta) / k
    nodes = []
    for s in np.linspace(0.0, 1.0, P + 1):
        g = model.retract((1 - s) * loop + s * end_point[None, :])
        T = T0 + (T_mid - T0) * np.sin(np.pi * s) if kind == "vertical" else 1.0
        nodes.append(LoopConfiguration(g, np.tile(-X * (1 - s), (N, 1)), T))
    nodes[-1] = ls.constant_loop(model, end_point, N, nodes[-1].T)
    return MinimaxPath(nodes, kind, X, base_point, end_point)


def crossing_ok(model, path: MinimaxPath, delta: float) -> bool:
    return path.max_residual(model) >= delta


# -- mountain pass -------------------------------------------------------------

@dataclass
class MountainPassResult:
    c: float
    config: LoopConfiguration
    raw_config: LoopConfiguration
    status: str
    grad_norm: float
    path: MinimaxPath
    path_max: float
    margin_ok: bool
    crossing_ok: bool
    newton: NewtonReport | None
    gauge_shift: float = 0.0
    history: list = field(default_factory=list)


def _flat(c: LoopConfiguration, has_T: bool):
    N = c.N
    parts = [c.gamma.ravel() / np.sqrt(N), c.phi.ravel() / np.sqrt(N)]
    if has_T:
        parts.append([c.T])
    return np.concatenate(parts)


def _unflat(model, v, like: LoopConfiguration, has_T: bool):
    N, n, d = like.N, like.gamma.shape[1], like.phi.shape[1]
    g = v[: N * n].reshape(N, n) * np.sqrt(N)
    ph = v[N * n: N * n + N * d].reshape(N, d) * np.sqrt(N)
    T = v[-1] if has_T else like.T
    return LoopConfiguration(model.retract(g), ph, T)


def _reparametrize(model, nodes, has_T):
    V = np.array([_flat(c, has_T) for c in nodes])
    L = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(V, axis=0), axis=1))])
    s = np.linspace(0.0, L[-1], len(nodes))
    out = [nodes[0]]
    for j in range(1, len(nodes) - 1):
        i = int(np.clip(np.searchsorted(L, s[j]) - 1, 0, len(nodes) - 2))
        a = (s[j] - L[i]) / max(L[i + 1] - L[i], 1e-300)
        out.append(_unflat(model, (1 - a) * V[i] + a * V[i + 1], nodes[0], has_T))
    out.append(nodes[-1])
    return out


def _refine_max(model, nodes, j, fun, has_T, iters=30):
    """Golden-section search for the maximum on the two segments around node j."""
    if j == 0 or j == len(nodes) - 1:
        return nodes[j]
    Va, Vb, Vc = (_flat(nodes[i], has_T) for i in (j - 1, j, j + 1))

    def at(s):
        v = Va + (Vb - Va) * (s + 1) if s < 0 else Vb + (Vc - Vb) * s
        return _unflat(model, v, nodes[j], has_T)

    lo, hi = -1.0, 1.0
    gr = (np.sqrt(5) - 1) / 2
    a, b = hi - gr * (hi - lo), lo + gr * (hi - lo)
    fa, fb = fun.value(model, at(a)), fun.value(model, at(b))
    for _ in range(iters):
        if fa > fb:
            hi, b, fb = b, a, fa
            a = hi - gr * (hi - lo)
            fa = fun.value(model, at(a))
        else:
            lo, a, fa = a, b, fb
            b = lo + gr * (hi - lo)
            fb = fun.value(model, at(b))
    best = at(0.5 * (lo + hi))
    return best if fun.value(model, best) > fun.value(model, nodes[j]) else nodes[j]


def mountain_pass(model, path: MinimaxPath, k, params: FlowParams | None = None, sweeps: int = 40,
                  step: float = 0.05, N_final: int | None = None, tol: float = 1e-10,
                  newton_iter: int = 12, scheme: str = "spectral"):
    """Minimax deformation of ``path`` followed by a Newton polish of its summit.

    Interior nodes are relaxed in the fibre slots, moved along the bounded
    (Sobolev-smoothed) field with the summit climbing along the path, and
    re-spaced by arclength. Nodes inside stopped sets do not move. The
    summit is refined on its neighbouring segments and polished on the path
    grid, then again after resampling to ``N_final`` nodes.
    """
    params = params or FlowParams()
    energy = path.kind == "energy"
    fun = EnergyFunctional(scheme) if energy else ActionFunctional(k, scheme)
    has_T = fun.has_T
    if has_T:
        params.validate(fun.k)
    eps = params.eps_for(fun.k) if has_T else None
    nodes = [path.nodes[0]] + [relax_fibre(model, c, fun, params.T_min, params.T_max) for c in path.nodes[1:-1]] + [path.nodes[-1]]
    Delta = model.group.lattice_gap()
    history = []
    for sw in range(sweeps):
        vals = np.array([fun.value(model, c) for c in nodes])
        j = int(np.argmax(vals))
        history.append(float(vals.max()))
        V = [_flat(c, has_T) for c in nodes]
        new = [nodes[0]]
        for i in range(1, len(nodes) - 1):
            c = nodes[i]
            if has_T and in_stopped_set(model, c, fun.k, params.delta, eps) is not None:
                new.append(c)
                continue
            gc = gradient(model, c, fun)
            g = smooth(model, c, gc)
            gv = _flat(LoopConfiguration(g.xi, g.eta, g.dT), has_T)
            tau = V[i + 1] - V[i - 1]
            tau = tau / max(np.linalg.norm(tau), 1e-300)
            climb = i == j
            gv = gv - (2.0 if climb else 1.0) * np.dot(gv, tau) * tau
            nn = np.linalg.norm(gv)
            ref = ls.tangent_norm(model, c, gc) if climb else vals[i]
            h, keep = step / np.sqrt(1 + nn * nn), c
            for _ in range(4):
                moved = _unflat(model, V[i] - h * gv, c, has_T)
                if has_T:
                    moved.T = float(np.clip(moved.T, params.T_min, params.T_max))
                moved = relax_fibre(model, moved, fun, params.T_min, params.T_max)
                if np.max(np.abs(moved.phi - moved.phi.mean(axis=0))) > Delta / 2:
                    moved = normalize_periodic(model, moved, scheme)
                if climb:
                    score = ls.tangent_norm(model, moved, gradient(model, moved, fun))
                else:
                    score = fun.value(model, moved)
                if score <= ref:
                    keep = moved
                    break
                h *= 0.5
            new.append(keep)
        new.append(nodes[-1])
        nodes = _reparametrize(model, new, has_T)
    vals = np.array([fun.value(model, c) for c in nodes])
    j = int(np.argmax(vals))
    path_max = float(vals.max())
    summit = _refine_max(model, nodes, j, fun, has_T)
    path_max = max(path_max, fun.value(model, summit))
    out_path = MinimaxPath(nodes, path.kind, path.X, path.base_point, path.end_point)
    # margin: near-summit nodes avoid the stopped sets
    margin = True
    if has_T:
        for c, v in zip(nodes, vals):
            if v >= path_max - eps / 2 and in_stopped_set(model, c, fun.k, params.delta, eps / 2) is not None:
                margin = False
    cross = crossing_ok(model, out_path, params.delta)
    kk = fun.k if has_T else None
    kw = dict(max_iter=newton_iter, T_min=params.T_min, T_max=params.T_max, scheme=scheme)
    try:
        cp, rep = newton_polish(model, summit, kk, tol=tol, **kw)
        if N_final is not None and N_final != cp.N:
            cp = ls.resample(model, cp, N_final, scheme)
            cp, rep = newton_polish(model, cp, kk, tol=tol, **kw)
    except SingularJacobianError:
        cp, rep = summit, NewtonReport("singular", [], 0)
    gn = ls.tangent_norm(model, cp, gradient(model, cp, fun))
    c_val = fun.value(model, cp)
    status = "converged" if rep.status == "converged" else "polish-" + rep.status
    rho, normed = gauge_normalize(model, cp, scheme)
    shift = float(model.group.inner(rho.closure(), model.Z))
    if scheme == "spectral":
        # the spectral scheme is gauge invariant only on band-limited data: re-polish
        normed, rep2 = newton_polish(model, normed, kk, tol=tol, **kw)
        if rep2.status == "converged":
            rep = rep2
            gn = ls.tangent_norm(model, normed, gradient(model, normed, fun))
            c_val = fun.value(model, normed) - shift
            status = "converged"
    return MountainPassResult(c_val, normed, cp, status, gn, out_path, path_max, margin, cross, rep, shift, history)


def k_scan(model, path: MinimaxPath, grid, params: FlowParams | None = None, verify_fn=None, **mp_kwargs):
    """Mountain pass along a grid of energies with warm starts.

    Returns rows with keys k, c_k, status, T, kbar, grad_norm, verified and the
    difference quotients of c as a differentiability diagnostic.
    """
    params = params or FlowParams()
    rows = []
    current = path
    for k in sorted(float(x) for x in grid):
        res = mountain_pass(model, current, k, params, **mp_kwargs)
        ok = params.T_min <= res.config.T <= params.T_max and res.status == "converged"
        if verify_fn is not None and ok:
            ok = bool(verify_fn(model, res.config, k))
        rows.append({
            "k": k,
            "c_k": res.c,
            "status": res.status,
            "T": res.config.T,
            "kbar": k - 0.5 * float(model.group.inner(model.Z, model.Z)),
            "grad_norm": res.grad_norm,
            "verified": ok,
            "result": res,
        })
        current = res.path
    ks = np.array([r["k"] for r in rows])
    cs = np.array([r["c_k"] for r in rows])
    dq = list(np.diff(cs) / np.diff(ks)) if len(rows) > 1 else []
    return rows, dq


# -- explicit critical points --------------------------------------------------

def _latitude_value(r, p, q, k):
    c = np.cos(r) ** 2
    W2 = 4 * np.pi ** 2 * (p * p * c + q * q * (1 - c))
    psi = 4 * np.pi ** 2 * p * c / W2
    h = np.sqrt(max(4 * np.pi ** 2 * c - psi * psi * W2, 0.0))
    return h * np.sqrt(2 * k - 1) - psi, psi, h / np.sqrt(2 * k - 1)


def explicit_critical_point(model, k: float, N: int = 64, line: float = 0.25) -> LoopConfiguration:
    """Closed-form critical loop of S_k (spectral scheme).

    Spindle models: the latitude circle ``(sqrt(c) e^{2 pi i t}, sqrt(1 - c))``
    with the radius maximising the reduced action. Exact product: the
    straight line ``x = line`` (1/4 or 3/4) along ``y``, where the magnetic
    form vanishes; ``3/4`` is a local minimiser in its free homotopy class.
    Phi is the constant ``-psi - T`` and T the envelope value.
    """
    if k <= 0.5:
        raise ValueError("needs k > 1/2")
    t = np.arange(N) / N
    if model.name in ("hopf", "spindle"):
        p, q = model.params["p"], model.params["q"]
        from scipy.optimize import minimize_scalar

        r = minimize_scalar(lambda r: -_latitude_value(r, p, q, k)[0], bounds=(1e-3, np.pi / 2 - 1e-3),
                            method="bounded", options={"xatol": 1e-10}).x
        dS = lambda r: (_latitude_value(r + 1e-6, p, q, k)[0] - _latitude_value(r - 1e-6, p, q, k)[0]) / 2e-6
        r = brentq(dS, r - 1e-4, r + 1e-4, xtol=1e-15)
        _, psi, T = _latitude_value(r, p, q, k)
        c = np.cos(r)
        gamma = np.stack([c * np.cos(2 * np.pi * t), c * np.sin(2 * np.pi * t),
                          np.full(N, np.sin(r)), np.zeros(N)], axis=1)
    elif model.name == "exact_product":
        if line not in (0.25, 0.75):
            raise ValueError("line must be 0.25 or 0.75")
        B = model.params["B"]
        psi = B / (2 * np.pi) * np.sin(2 * np.pi * line)
        T = 1.0 / np.sqrt(2 * k - 1)
        gamma = np.zeros((N, 6))
        gamma[:, 1] = np.sin(2 * np.pi * line)
        gamma[:, 2], gamma[:, 3] = np.cos(2 * np.pi * t), np.sin(2 * np.pi * t)
        gamma[:, 4] = 1.0
    else:
        raise ValueError(f"no explicit critical point for model {model.name!r}")
    phi = np.full((N, 1), -psi - T)
    return LoopConfiguration(gamma, phi, float(T))
