"""Discrete loops (gamma, phi, T) and the functionals S_k and E.

Discretization
--------------
``gamma`` is sampled at ``t_i = i/N`` and ``phi`` is constant on
``[t_i, t_{i+1}]``. The covariant velocity on interval ``i`` is the
link-variable difference

    D_i = N * (exp(phi_i / N) . gamma_{i+1} - gamma_i),

evaluated with the lifted metric at the retracted midpoint
``m_i = R((gamma_i + exp(phi_i/N) . gamma_{i+1}) / 2)``. On the shipped
models the chord ``D_i`` is tangent at ``m_i``, so no projection is needed.
This makes the energy exactly invariant under discrete gauge
transformations and exactly zero on vertical loops, and it agrees with
``gamma' + phi(gamma)`` to second order on smooth data.

Sign convention: a loop is vertical when ``gamma' + phi(gamma) = 0``. The
vertical loop labelled by ``X`` is ``gamma_X(t) = exp(-tX) . p`` with
``phi = X``, whose action is ``<X, Z> + kT``. Equivalently the loop
``exp(tX) . p`` paired with ``phi = -X`` has action ``-<X, Z> + kT``.

A second, spectral scheme (``scheme="spectral"``) samples ``phi`` at the
nodes and uses the trigonometric derivative of ``gamma``:

    V_i = P_i (D gamma)_i + phi_i(gamma_i),

with ``P_i`` the tangent projection at ``gamma_i`` and the metric taken at
``gamma_i``. It converges spectrally on smooth loops and is exact on the
band-limited loops that occur as symmetric critical points, at the price of
gauge invariance holding only to interpolation accuracy. The solver uses the
link scheme for deformations and the spectral scheme for polishing.

Derivatives of the discrete functionals are exact up to round-off: they are
computed by complex-step differentiation of the per-interval energy.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CSTEP = 1e-30


class NonPositivePeriodError(ValueError):
    pass


@dataclass
class LoopConfiguration:
    gamma: np.ndarray  # (N, n)
    phi: np.ndarray  # (N, d)
    T: float

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float).reshape(self.gamma.shape[0], -1)
        self.T = float(self.T)

    @property
    def N(self) -> int:
        return self.gamma.shape[0]

    def copy(self) -> "LoopConfiguration":
        return LoopConfiguration(self.gamma.copy(), self.phi.copy(), self.T)


@dataclass
class LoopTangent:
    xi: np.ndarray  # (N, n) ambient tangent vectors
    eta: np.ndarray  # (N, d)
    dT: float

    def scaled(self, c: float) -> "LoopTangent":
        return LoopTangent(c * self.xi, c * self.eta, c * self.dT)

    def __add__(self, other: "LoopTangent") -> "LoopTangent":
        return LoopTangent(self.xi + other.xi, self.eta + other.eta, self.dT + other.dT)


def _check_T(T):
    if not T > 0:
        raise NonPositivePeriodError(f"period must be positive, got {T}")


def shifted(gamma):
    return np.roll(gamma, -1, axis=0)


def _kinetic(model, g0, g1, phi, N):
    """Per-interval ``|D_i|^2`` at the midpoint (complex-safe)."""
    y = model.act(phi / N, g1)
    c = y - g0
    m = model.retract(0.5 * (g0 + y))
    return N * N * model.metric(m, c, c)


SCHEMES = ("link", "spectral")


def _check_scheme(scheme):
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")


def spectral_derivative(f, axis=-2):
    """Trigonometric derivative along the node axis (Nyquist mode dropped)."""
    N = f.shape[axis]
    F = np.fft.rfft(f, axis=axis)
    k = np.arange(F.shape[axis], dtype=float)
    if N % 2 == 0:
        k[-1] = 0.0
    shape = [1] * F.ndim
    shape[axis] = -1
    return np.fft.irfft(F * (2j * np.pi * k).reshape(shape), n=N, axis=axis)


def _tproj(model, q, v):
    """Tangent projection that is safe for complex-step arguments."""
    out = np.array(v, copy=True)
    for j in range(len(model.spheres)):
        idx = model._sphere_idx(j)
        y = q[..., idx] / np.sqrt(np.sum(q[..., idx] * q[..., idx], axis=-1, keepdims=True))
        out[..., idx] = out[..., idx] - y * np.sum(y * out[..., idx], axis=-1, keepdims=True)
    return out


def _spectral_velocity(model, g, u, phi):
    return _tproj(model, g, u) + model.fundamental(phi, g)


def _spectral_local(model, g, u, phi):
    w = _spectral_velocity(model, g, u, phi)
    return model.metric(g, w, w)


def interval_data(model, cfg: LoopConfiguration, scheme="link"):
    """Base points and covariant velocities: ``(m_i, D_i)`` or ``(gamma_i, V_i)``."""
    _check_scheme(scheme)
    if scheme == "spectral":
        u = spectral_derivative(cfg.gamma)
        return cfg.gamma, _spectral_velocity(model, cfg.gamma, u, cfg.phi)
    N = cfg.N
    y = model.act(cfg.phi / N, shifted(cfg.gamma))
    m = model.retract(0.5 * (cfg.gamma + y))
    return m, N * (y - cfg.gamma)


def kinetic_terms(model, cfg, scheme="link"):
    _check_scheme(scheme)
    if scheme == "spectral":
        return _spectral_local(model, cfg.gamma, spectral_derivative(cfg.gamma), cfg.phi)
    return _kinetic(model, cfg.gamma, shifted(cfg.gamma), cfg.phi, cfg.N)


def action_E(model, gamma, phi, scheme="link") -> float:
    cfg = LoopConfiguration(gamma, phi, 1.0)
    return float(np.mean(kinetic_terms(model, cfg, scheme)))


def vertical_residual(model, cfg: LoopConfiguration, scheme="link") -> float:
    """Discrete integral of ``|gamma' + phi(gamma)|^2``."""
    return float(np.mean(kinetic_terms(model, cfg, scheme)))


def action_Sk(model, cfg: LoopConfiguration, k: float, scheme="link") -> float:
    _check_T(cfg.T)
    E = vertical_residual(model, cfg, scheme)
    lin = float(np.mean(model.group.inner(cfg.phi, model.Z)))
    return E / (2.0 * cfg.T) + lin + k * cfg.T


def action_parts(model, cfg, k, scheme="link"):
    """``(kinetic, linear, period)`` summands of S_k."""
    E = vertical_residual(model, cfg, scheme)
    return E / (2.0 * cfg.T), float(np.mean(model.group.inner(cfg.phi, model.Z))), k * cfg.T


def _cs_grad(f, args):
    """Complex-step partials of a pointwise function of several (.., k_j) arrays."""
    sizes = [a.shape[-1] for a in args]
    nv = sum(sizes)
    out = []
    off = 0
    pert = []
    for a, s in zip(args, sizes):
        P = np.zeros((nv,) + a.shape, dtype=complex)
        for j in range(s):
            P[off + j, ..., j] = 1j * CSTEP
        pert.append(a[None] + P)
        off += s
    val = f(*pert).imag / CSTEP  # (nv, ...)
    off = 0
    for s in sizes:
        out.append(np.moveaxis(val[off:off + s], 0, -1))
        off += s
    return out


def energy_differential(model, gamma, phi, scheme="link"):
    """Ambient differential of E: ``(dE/dgamma (.., N, n), dE/dphi (.., N, d))``.

    Leading batch axes are allowed.
    """
    _check_scheme(scheme)
    gamma = np.asarray(gamma, dtype=float)
    phi = np.asarray(phi, dtype=float)
    N = gamma.shape[-2]
    if scheme == "spectral":
        u = spectral_derivative(gamma)
        fg, fu, fp = _cs_grad(lambda g, uu, p: _spectral_local(model, g, uu, p), [gamma, u, phi])
        # D is antisymmetric, so D^T fu = -D fu
        return (fg - spectral_derivative(fu)) / N, fp / N
    g1 = shifted(gamma) if gamma.ndim == 2 else np.roll(gamma, -1, axis=-2)
    f0, f1, fp = _cs_grad(lambda a, b, p: _kinetic(model, a, b, p, N), [gamma, g1, phi])
    return (f0 + np.roll(f1, 1, axis=-2)) / N, fp / N


def differential_Sk(model, cfg, k, scheme="link"):
    """Differential of S_k as ``(dS/dgamma, dS/dphi, dS/dT)`` in ambient coordinates."""
    _check_T(cfg.T)
    dg, dp = energy_differential(model, cfg.gamma, cfg.phi, scheme)
    E = vertical_residual(model, cfg, scheme)
    MZ = model.group.metric @ model.Z
    T = cfg.T
    return dg / (2 * T), dp / (2 * T) + MZ[None, :] / cfg.N, k - E / (2 * T * T)


def riesz(model, gamma, dgamma, dphi, dT=0.0):
    """Turn a differential into a gradient for the discrete L^2 product metric."""
    N = gamma.shape[0]
    E = model.tangent_basis(gamma)  # (N, n, m)
    G = model.metric_matrix(gamma)
    M = np.einsum("inm,inp,ipq->imq", E, G, E)
    a = np.einsum("inm,in->im", E, dgamma)
    c = np.linalg.solve(M, a[..., None])[..., 0]
    xi = N * np.einsum("inm,im->in", E, c)
    eta = N * np.linalg.solve(model.group.metric, dphi.T).T
    return LoopTangent(xi, eta, float(dT))


def grad_Sk(model, cfg: LoopConfiguration, k: float, scheme="link") -> LoopTangent:
    dg, dp, dT = differential_Sk(model, cfg, k, scheme)
    return riesz(model, cfg.gamma, dg, dp, dT)


def grad_E(model, gamma, phi, scheme="link") -> LoopTangent:
    dg, dp = energy_differential(model, gamma, phi, scheme)
    return riesz(model, np.asarray(gamma, float), dg, dp, 0.0)


def tangent_norm(model, cfg: LoopConfiguration, v: LoopTangent) -> float:
    N = cfg.N
    g = model.metric(cfg.gamma, v.xi, v.xi)
    e = model.group.inner(v.eta, v.eta)
    return float(np.sqrt(np.sum(g) / N + np.sum(e) / N + v.dT ** 2))


def grad_norm(model, cfg, k, scheme="link") -> float:
    return tangent_norm(model, cfg, grad_Sk(model, cfg, k, scheme))


def pairing(dgamma, dphi, dT, v: LoopTangent) -> float:
    """Evaluate a differential on a tangent vector."""
    return float(np.sum(dgamma * v.xi) + np.sum(dphi * v.eta) + dT * v.dT)


def retract_step(model, cfg: LoopConfiguration, v: LoopTangent, s: float = 1.0) -> LoopConfiguration:
    return LoopConfiguration(model.retract(cfg.gamma + s * v.xi), cfg.phi + s * v.eta, cfg.T + s * v.dT)


def psi_field(model, cfg: LoopConfiguration, scheme="link"):
    """``theta(gamma')`` per interval (link) or node (spectral)."""
    m, D = interval_data(model, cfg, scheme)
    return model.theta(m, D) - cfg.phi


def speeds(model, cfg, scheme="link"):
    """``|gamma' + phi(gamma)|`` per interval or node."""
    return np.sqrt(np.maximum(kinetic_terms(model, cfg, scheme), 0.0))


# -- construction helpers ------------------------------------------------

def times(N):
    return np.arange(N) / N


def constant_loop(model, q0, N, T, phi=None):
    gamma = np.tile(np.asarray(q0, dtype=float), (N, 1))
    ph = np.zeros((N, model.d)) if phi is None else np.tile(np.atleast_1d(np.asarray(phi, dtype=float)), (N, 1))
    return LoopConfiguration(gamma, ph, T)


def vertical_loop(model, X, q0, N, T):
    """Vertical loop with label ``X``: ``gamma(t) = exp(-tX) q0``, ``phi = X``."""
    X = np.atleast_1d(np.asarray(X, dtype=float))
    t = times(N)
    gamma = model.act(-t[:, None] * X[None, :], np.asarray(q0, dtype=float)[None, :])
    return LoopConfiguration(gamma, np.tile(X, (N, 1)), T)


def random_config(model, rng, N, T=None, modes=3, amp=0.5, phi_scale=1.0):
    """Smooth random loop built from a few Fourier modes, then retracted."""
    t = times(N)[:, None]
    q = rng.normal(size=model.n)
    for j in range(1, modes + 1):
        q = q + amp / j * (rng.normal(size=model.n) * np.cos(2 * np.pi * j * t) + rng.normal(size=model.n) * np.sin(2 * np.pi * j * t))
    gamma = model.retract(q)
    phi = phi_scale * rng.normal(size=(1, model.d)) + 0.3 * phi_scale * (
        rng.normal(size=(1, model.d)) * np.cos(2 * np.pi * (t + 0.5 / N)) + rng.normal(size=(1, model.d)) * np.sin(2 * np.pi * (t + 0.5 / N))
    )
    if T is None:
        T = float(rng.uniform(0.3, 2.0))
    return LoopConfiguration(gamma, phi, T)


def random_tangent(model, rng, cfg, scale=1.0):
    xi = model.tangent_project(cfg.gamma, rng.normal(size=cfg.gamma.shape))
    return LoopTangent(scale * xi, scale * rng.normal(size=cfg.phi.shape), float(scale * rng.normal()))


def resample(model, cfg: LoopConfiguration, N_new: int, scheme="link") -> LoopConfiguration:
    """Resample to ``N_new`` nodes: trigonometric interpolation of the gauge-fixed loop.

    The gauge fixing uses a contractible gauge loop, so the action level is kept.
    """
    from .gauge import normalize_periodic

    g = normalize_periodic(model, cfg, scheme)
    N = cfg.N
    # phi is now constant, so gamma is the only field to interpolate
    F = np.fft.rfft(g.gamma, axis=0)
    t_new = times(N_new)
    k = np.arange(F.shape[0])
    coef = F / N
    coef[1:] *= 2
    if N % 2 == 0:
        coef[-1] /= 2
    gam = np.real(np.exp(2j * np.pi * np.outer(t_new, k)) @ coef)
    gam = model.retract(gam)
    phi = np.tile(g.phi[0], (N_new, 1))
    return LoopConfiguration(gam, phi, cfg.T)
