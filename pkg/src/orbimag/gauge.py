"""Discrete loop group action, level shift and vertical-class detection.

A gauge loop is stored through a generating path ``eta`` sampled at the
``N + 1`` nodes ``t_i = i/N`` with ``rho(t_i) = exp(eta_i)`` and
``eta_N - eta_0`` in the unit lattice. It acts by

    gamma_i -> exp(-eta_i) . gamma_i,
    phi_i   -> phi_i + N (eta_{i+1} - eta_i),

the discrete form of ``(rho^-1 gamma, Ad phi + rho^-1 rho', T)``. With
this orientation the energy is exactly invariant and the action shifts by
``+<eta(1) - eta(0), Z>`` (see the level-shift identity). The shipped
models have abelian structure group, which the discrete formula assumes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .loopspace import LoopConfiguration, vertical_residual


class MismatchedDiscretizationError(ValueError):
    pass


@dataclass
class GaugeTransformation:
    eta: np.ndarray  # (N + 1, d)

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=float)
        if self.eta.ndim == 1:
            self.eta = self.eta[:, None]

    @property
    def N(self) -> int:
        return self.eta.shape[0] - 1

    def closure(self):
        return self.eta[-1] - self.eta[0]

    def compose(self, other: "GaugeTransformation") -> "GaugeTransformation":
        return GaugeTransformation(self.eta + other.eta)


def identity_gauge(N, d=1) -> GaugeTransformation:
    return GaugeTransformation(np.zeros((N + 1, d)))


def linear_gauge(N, X) -> GaugeTransformation:
    """``rho(t) = exp(tX)``."""
    X = np.atleast_1d(np.asarray(X, dtype=float))
    t = np.arange(N + 1) / N
    return GaugeTransformation(t[:, None] * X[None, :])


def random_gauge(rng, N, d=1, winding=None, modes=3, amp=0.5) -> GaugeTransformation:
    t = np.arange(N + 1)[:, None] / N
    if winding is None:
        winding = rng.integers(-3, 4, size=d)
    eta = t * np.asarray(winding, dtype=float)[None, :] + rng.normal(size=(1, d))
    for j in range(1, modes + 1):
        eta = eta + amp / j * (rng.normal(size=(1, d)) * np.sin(2 * np.pi * j * t) + rng.normal(size=(1, d)) * (np.cos(2 * np.pi * j * t) - 1))
    return GaugeTransformation(eta)


def is_loop(model, rho: GaugeTransformation, tol=1e-10) -> bool:
    g = model.group.exp(rho.closure())
    return model.group.distance_to_identity(g) <= tol


def _eta_dot(rho: GaugeTransformation, scheme):
    N = rho.N
    if scheme == "link":
        return N * np.diff(rho.eta, axis=0)
    from .loopspace import spectral_derivative

    w = rho.closure()
    per = rho.eta[:-1] - (np.arange(N) / N)[:, None] * w[None, :]
    return w[None, :] + spectral_derivative(per)


def _eta_from_rate(rate, closure, scheme):
    """Inverse of :func:`_eta_dot` for ``rate`` with mean ``closure``."""
    N = rate.shape[0]
    if scheme == "link":
        eta = np.vstack([np.zeros((1, rate.shape[1])), np.cumsum(rate / N, axis=0)])
        eta[-1] = eta[0] + closure
        return eta
    F = np.fft.rfft(rate - closure[None, :], axis=0)
    kk = np.arange(F.shape[0], dtype=float)
    kk[0] = 1.0
    F = F / (2j * np.pi * kk[:, None])
    F[0] = 0.0
    if N % 2 == 0:
        F[-1] = 0.0
    per = np.fft.irfft(F, n=N, axis=0)
    t = np.arange(N + 1)[:, None] / N
    eta = np.vstack([per, per[:1]]) + t * closure[None, :]
    return eta - eta[0]


def apply(model, rho: GaugeTransformation, cfg: LoopConfiguration, scheme="link") -> LoopConfiguration:
    if rho.N != cfg.N:
        raise MismatchedDiscretizationError(f"gauge has N={rho.N}, loop has N={cfg.N}")
    if model.group.kind != "torus":
        raise NotImplementedError("discrete gauge action is implemented for abelian groups")
    gamma = model.act(-rho.eta[:-1], cfg.gamma)
    phi = cfg.phi + _eta_dot(rho, scheme)
    return LoopConfiguration(gamma, phi, cfg.T)


def delta(model, rho: GaugeTransformation) -> float:
    """Level shift ``<eta(1) - eta(0), Z>``."""
    return float(model.group.inner(rho.closure(), model.Z))


def gauge_normalize(model, cfg: LoopConfiguration, scheme="link"):
    """Gauge the loop so that ``phi`` becomes the constant ``phibar - X``.

    ``X`` is the unit-lattice point nearest the mean ``phibar`` (a genuine
    loop in G needs ``X`` in the unit lattice itself). Returns the gauge
    loop and the normalised configuration.
    """
    phibar = cfg.phi.mean(axis=0)
    X, _ = model.group.lattice_round(phibar, order=1)
    target = phibar - X
    rho = GaugeTransformation(_eta_from_rate(target[None, :] - cfg.phi, -X, scheme))
    out = apply(model, rho, cfg, scheme)
    out.phi[:] = target[None, :]
    return rho, out


def normalize_periodic(model, cfg: LoopConfiguration, scheme="link") -> LoopConfiguration:
    """Make ``phi`` constant with a closed, contractible gauge loop (no level change)."""
    phibar = cfg.phi.mean(axis=0)
    eta = _eta_from_rate(phibar[None, :] - cfg.phi, np.zeros(model.d), scheme)
    out = apply(model, GaugeTransformation(eta), cfg, scheme)
    out.phi[:] = phibar[None, :]
    return out


@dataclass
class VerticalClass:
    X: np.ndarray
    distance: float
    residual: float
    within: bool  # distance < sqrt(delta)


def detect_vertical_class(model, cfg: LoopConfiguration, delta_: float):
    """Lattice label of the component of the delta-vertical set containing ``cfg``.

    Returns ``None`` when the vertical residual is at least ``delta_``.
    """
    r = vertical_residual(model, cfg)
    if r >= delta_:
        return None
    phibar = model.group.center_project(cfg.phi.mean(axis=0))
    X, dist = model.group.lattice_round(phibar)
    return VerticalClass(np.asarray(X, dtype=float), dist, r, dist < np.sqrt(delta_))


def gauge_tangents(model, cfg: LoopConfiguration, scheme="link"):
    """Infinitesimal periodic gauge directions at ``cfg``.

    Returns ``(xi, eta)`` of shapes ``(N*d, N, n)`` and ``(N*d, N, d)``: the
    variation of ``(gamma, phi)`` under ``eta_j -> eta_j + s e_a`` at node ``j``.
    """
    N, d = cfg.N, model.d
    if scheme == "spectral":
        from .loopspace import spectral_derivative

        xi = np.zeros((N * d, N, model.n))
        et = np.zeros((N * d, N, d))
        dl = spectral_derivative(np.eye(N)[:, :, None])[:, :, 0]  # row j: derivative of bump j
        for a in range(d):
            W = model.fundamental(np.eye(d)[a], cfg.gamma)
            for j in range(N):
                xi[j * d + a, j] = -W[j]
                et[j * d + a, :, a] = dl[j]
        return xi, et
    xi = np.zeros((N * d, N, model.n))
    et = np.zeros((N * d, N, d))
    E = np.eye(d)
    for a in range(d):
        W = model.fundamental(E[a], cfg.gamma)  # (N, n)
        for j in range(N):
            r = j * d + a
            xi[r, j] = -W[j]
            et[r, j, a] -= N
            et[r, (j - 1) % N, a] += N
    return xi, et
