"""Concrete Riemannian principal bundles with circle fibres.

Every shipped model lives in an ambient ``R^n`` split into coordinate
planes. The structure group is the circle ``R/Z`` acting by rotating plane
``j`` through the angle ``2*pi*w_j*x`` for integer weights ``w_j``, and
``Q`` is cut out by unit-norm constraints on groups of planes. All metric
and connection evaluations accept complex arrays and use no conjugation,
so complex-step differentiation of anything built from them is exact.

Model summaries
---------------
hopf / spindle(p, q)
    ``Q = S^3`` in ``C^2``, weights ``(p, q)``. The metric is Euclidean on
    horizontal vectors (Euclidean-orthogonal to the orbit) and rescaled on
    the orbit so that the generator has unit length. In the annulus chart
    ``(s, a)`` with ``s = |z1|^2`` and ``a = arg(z2^p conj(z1)^q)`` the
    quotient metric is ``ds^2/(4 s(1-s)) + s(1-s) da^2/(q^2(1-s) + p^2 s)``
    and the curvature is ``-p q / (2 pi D^2) ds^da`` with
    ``D = p^2 s + q^2 (1-s)``; its total integral is ``-1/(p q)``.
    For the Hopf case the charts ``w = z2/z1`` and ``w = z1/z2`` carry the
    metric ``|dw|^2/(1+|w|^2)^2`` (the round sphere of radius 1/2) and the
    curvature ``(1/pi) dA``, i.e. ``1/(4 pi)`` times the area form of the
    unit sphere. A unit-speed horizontal curve therefore sees the constant
    field strength ``b = 1/pi``.
exact_product(B)
    ``Q = T^3`` as three unit circles in ``R^6`` with period-one angles
    ``(x, y, s)``; the circle acts on ``s``. The connection is
    ``ds + (B/2pi) sin(2 pi x) dy``, the metric is the Kaluza-Klein metric
    ``dx^2 + dy^2 + theta^2`` and the curvature is ``B cos(2 pi x) dx^dy``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import gcd

import numpy as np

from .liegroup import GroupModel, torus

TWO_PI = 2.0 * np.pi
FD_STEP = 1e-4


class ChartNotFoundError(ValueError):
    """Raised when a point projects outside every chart of the atlas."""


def _dot(u, v):
    return np.sum(u * v, axis=-1)


def _d4(f, h):
    """Fourth-order central difference of ``f`` at zero."""
    return (-f(2 * h) + 8 * f(h) - 8 * f(-h) + f(-2 * h)) / (12 * h)


@dataclass
class BundleModel:
    """Circle bundle in an ambient coordinate space.

    ``planes`` lists index pairs, ``weights[a, j]`` is the integer weight of
    algebra direction ``a`` on plane ``j``, and ``spheres`` groups plane
    indices that are jointly normalised.
    """

    name: str
    group: GroupModel
    n: int
    planes: list
    weights: np.ndarray
    spheres: list
    params: dict = field(default_factory=dict)
    metric_corruption: float = 0.0

    @property
    def d(self) -> int:
        return self.group.dim

    @property
    def Z(self):
        return self.group.Z

    @property
    def order_bound(self) -> int:
        return self.group.order_bound

    @property
    def dim_Q(self) -> int:
        return self.n - len(self.spheres)

    # -- action ----------------------------------------------------------
    def _angles(self, X):
        X = np.asarray(X)
        return TWO_PI * (X @ self.weights)

    def act(self, X, q):
        """``exp(X) . q`` for algebra coordinates ``X`` (broadcasting)."""
        q = np.asarray(q)
        ang = self._angles(X)
        shape = np.broadcast_shapes(q.shape, ang.shape[:-1] + (self.n,))
        out = np.array(np.broadcast_to(q, shape), dtype=np.result_type(q, ang), copy=True)
        for j, (a, b) in enumerate(self.planes):
            c, s = np.cos(ang[..., j]), np.sin(ang[..., j])
            out[..., a] = c * q[..., a] - s * q[..., b]
            out[..., b] = s * q[..., a] + c * q[..., b]
        return out

    def fundamental(self, X, q):
        """Fundamental field of ``X`` at ``q``: d/dt exp(tX).q at t=0."""
        q = np.asarray(q)
        ang = self._angles(X)
        out = np.zeros(np.broadcast_shapes(q.shape, ang.shape[:-1] + (self.n,)), dtype=np.result_type(q, ang))
        for j, (a, b) in enumerate(self.planes):
            out[..., a] = -ang[..., j] * q[..., b]
            out[..., b] = ang[..., j] * q[..., a]
        return out

    def generators(self, q):
        """Fundamental fields of the basis vectors, shape ``(..., d, n)``."""
        q = np.asarray(q)
        E = np.eye(self.d)
        return np.stack([self.fundamental(E[a], q) for a in range(self.d)], axis=-2)

    # -- constraints -----------------------------------------------------
    def _sphere_idx(self, k):
        return [i for j in self.spheres[k] for i in self.planes[j]]

    def constraint(self, q):
        q = np.asarray(q)
        return np.stack([_dot(q[..., self._sphere_idx(k)], q[..., self._sphere_idx(k)]) - 1.0
                         for k in range(len(self.spheres))], axis=-1)

    def retract(self, q):
        q = np.array(q, copy=True)
        for k in range(len(self.spheres)):
            idx = self._sphere_idx(k)
            r = np.sqrt(_dot(q[..., idx], q[..., idx]))
            q[..., idx] = q[..., idx] / r[..., None]
        return q

    def retract_vjp(self, x, w):
        """``J^T w`` for the Jacobian ``J`` of :meth:`retract` at ``x``."""
        x = np.asarray(x, dtype=float)
        out = np.array(w, dtype=float, copy=True)
        for k in range(len(self.spheres)):
            idx = self._sphere_idx(k)
            r = np.linalg.norm(x[..., idx], axis=-1, keepdims=True)
            y = x[..., idx] / r
            wk = out[..., idx]
            out[..., idx] = (wk - y * np.sum(y * wk, axis=-1, keepdims=True)) / r
        return out

    def normals(self, q):
        q = np.asarray(q, dtype=float)
        out = np.zeros(q.shape[:-1] + (len(self.spheres), self.n))
        for k in range(len(self.spheres)):
            idx = self._sphere_idx(k)
            sub = q[..., idx]
            out[..., k, idx] = sub / np.linalg.norm(sub, axis=-1, keepdims=True)
        return out

    def tangent_project(self, q, v):
        nrm = self.normals(q)
        v = np.asarray(v)
        return v - np.einsum("...k,...kn->...n", np.einsum("...kn,...n->...k", nrm, v), nrm)

    def tangent_basis(self, q):
        """Euclidean-orthonormal tangent frame, shape ``(..., n, dim_Q)``."""
        nrm = self.normals(q)
        # normals are mutually orthogonal (disjoint supports)
        _, _, Vt = np.linalg.svd(nrm, full_matrices=True)
        return np.swapaxes(Vt[..., len(self.spheres):, :], -1, -2)

    def random_point(self, rng):
        return self.retract(rng.normal(size=self.n))

    def random_tangent(self, rng, q):
        return self.tangent_project(q, rng.normal(size=self.n))

    # -- geometry (overridden) -------------------------------------------
    def theta(self, q, v):
        """Connection one-form; accepts points off ``Q`` (ambient extension)."""
        raise NotImplementedError

    def metric(self, q, u, v):
        """Lifted metric; accepts points off ``Q`` (ambient extension)."""
        raise NotImplementedError

    def metric_matrix(self, q):
        q = np.asarray(q)
        E = np.eye(self.n)
        return self.metric(q[..., None, None, :], E[:, None, :], E[None, :, :])

    def horizontal_project(self, q, v):
        th = self.theta(q, v)
        return v - np.einsum("...a,...an->...n", th, self.generators(q))

    # -- curvature -------------------------------------------------------
    def d_theta(self, q, u, v, h=FD_STEP):
        """Exterior derivative of the connection by central differences."""
        q, u, v = (np.asarray(a, dtype=float) for a in (q, u, v))
        du = _d4(lambda s: self.theta(q + s * u, v), h)
        dv = _d4(lambda s: self.theta(q + s * v, u), h)
        return du - dv

    def curvature_sigma(self, X, q, u, v, h=FD_STEP):
        dth = self.d_theta(q, u, v, h)
        br = self.group.bracket(self.theta(q, u), self.theta(q, v))
        return self.group.inner(X, dth) + self.group.inner(X, br)

    def covariant_pair(self, X, q, u, v, h=FD_STEP):
        """``g(u, nabla_v Xbar)`` via Christoffel symbols of the ambient extension."""
        q, u, v = (np.asarray(a, dtype=float) for a in (q, u, v))
        W = self.fundamental(X, q)
        DW = self.fundamental(X, v)  # the field is linear in q

        def dG(a, b, c):
            return _d4(lambda s: self.metric(q + s * a, b, c), h)

        gamma = 0.5 * (dG(v, u, W) + dG(W, u, v) - dG(u, v, W))
        return self.metric(q, u, DW) + gamma

    # -- base ------------------------------------------------------------
    def project_to_base(self, q):
        raise NotImplementedError

    def chart_map(self, chart, q):
        raise NotImplementedError

    def chart_metric(self, chart, x):
        raise NotImplementedError

    def chart_sigma(self, chart, x):
        """Density ``f`` with ``sigma_bar = f dx^dy`` in chart coordinates."""
        raise NotImplementedError

    def chart_differential(self, chart, q, v, h=FD_STEP):
        q, v = np.asarray(q, float), np.asarray(v, float)
        return _d4(lambda s: self.chart_map(chart, self.retract(q + s * v)), h)

    # -- stabilizers -----------------------------------------------------
    def stabilizer_order(self, q, tol=1e-9):
        """Number of circle elements fixing ``q`` (weights are integers)."""
        L = 1
        for w in np.abs(self.weights).ravel().astype(int):
            if w:
                L = L * w // gcd(L, w)
        count = 0
        for j in range(L):
            if np.max(np.abs(self.act(np.full(self.d, j / L), q) - q)) < tol:
                count += 1
        return count


class EuclideanCircleBundle(BundleModel):
    """Orbit rescaled to unit length, horizontal part Euclidean."""

    def theta(self, q, v):
        W = self.generators(q)  # (..., d, n)
        gram = np.einsum("...an,...bn->...ab", W, W)
        rhs = np.einsum("...an,...n->...a", W, v)
        if self.d == 1:
            return rhs / gram[..., 0, :]
        return np.linalg.solve(gram, rhs[..., None])[..., 0]

    def metric(self, q, u, v):
        W = self.generators(q)
        gram = np.einsum("...an,...bn->...ab", W, W)
        tu, tv = self.theta(q, u), self.theta(q, v)
        M = self.group.metric * (1.0 + self.metric_corruption)
        corr = np.einsum("...a,...ab,...b->...", tu, M - gram, tv)
        return _dot(u, v) + corr


class SpindleBundle(EuclideanCircleBundle):
    """S^3 with weights (p, q); hopf is p = q = 1."""

    def _pq(self):
        return self.params["p"], self.params["q"]

    def project_to_base(self, q):
        q = np.asarray(q, dtype=float)
        r1 = np.hypot(q[0], q[1])
        r2 = np.hypot(q[2], q[3])
        chart = "north" if r1 >= r2 else "south"
        return chart, self.chart_map(chart, q)

    def chart_map(self, chart, q):
        q = np.asarray(q)
        p, qq = self._pq()
        z1 = q[..., 0] + 1j * q[..., 1]
        z2 = q[..., 2] + 1j * q[..., 3]
        if chart == "north":
            w = z2 ** p / z1 ** qq
        elif chart == "south":
            w = z1 ** qq / z2 ** p
        elif chart == "annulus":
            s = z1.real ** 2 + z1.imag ** 2
            a = np.angle(z2 ** p * np.conj(z1) ** qq)
            return np.stack([s, a], axis=-1)
        else:
            raise ChartNotFoundError(chart)
        return np.stack([w.real, w.imag], axis=-1)

    def chart_metric(self, chart, x):
        x = np.asarray(x, dtype=float)
        p, qq = self._pq()
        if chart == "annulus":
            s = x[..., 0]
            g = np.zeros(x.shape[:-1] + (2, 2))
            g[..., 0, 0] = 1.0 / (4 * s * (1 - s))
            g[..., 1, 1] = s * (1 - s) / (qq * qq * (1 - s) + p * p * s)
            return g
        if p == 1 and qq == 1:
            lam = 1.0 / (1.0 + np.sum(x * x, axis=-1)) ** 2
            return lam[..., None, None] * np.eye(2)
        raise ChartNotFoundError(f"{chart} chart metric is singular for weights {(p, qq)}")

    def chart_sigma(self, chart, x):
        x = np.asarray(x, dtype=float)
        p, qq = self._pq()
        if chart == "annulus":
            s = x[..., 0]
            D = p * p * s + qq * qq * (1 - s)
            return -p * qq / (TWO_PI * D * D)
        if p == 1 and qq == 1:
            return (1.0 / np.pi) / (1.0 + np.sum(x * x, axis=-1)) ** 2
        raise ChartNotFoundError(f"{chart} chart two-form is singular for weights {(p, qq)}")

    def hopf_map(self, q):
        """Projection onto the round sphere of radius 1/2 in R^3."""
        q = np.asarray(q, dtype=float)
        z1 = q[..., 0] + 1j * q[..., 1]
        z2 = q[..., 2] + 1j * q[..., 3]
        w = z1 * np.conj(z2)
        return 0.5 * np.stack([2 * w.real, 2 * w.imag, np.abs(z1) ** 2 - np.abs(z2) ** 2], axis=-1)


class ExactProductBundle(BundleModel):
    """Flat T^2 times a circle with connection ds + (B/2pi) sin(2 pi x) dy."""

    def _forms(self, q):
        B = self.params["B"]
        out = []
        for j in range(3):
            a, b = q[..., 2 * j], q[..., 2 * j + 1]
            r2 = a * a + b * b
            e = np.zeros(q.shape, dtype=q.dtype)
            e[..., 2 * j] = -b / (TWO_PI * r2)
            e[..., 2 * j + 1] = a / (TWO_PI * r2)
            nr = np.zeros(q.shape, dtype=q.dtype)
            r = np.sqrt(r2)
            nr[..., 2 * j] = a / r
            nr[..., 2 * j + 1] = b / r
            out.append((e, nr))
        sinx = q[..., 1] / np.sqrt(q[..., 0] ** 2 + q[..., 1] ** 2)
        th = out[2][0] + (B / TWO_PI) * sinx[..., None] * out[1][0]
        return out, th

    def theta(self, q, v):
        q = np.asarray(q)
        v = np.asarray(v)
        q = np.broadcast_to(q, np.broadcast_shapes(q.shape, v.shape))
        _, th = self._forms(q)
        return _dot(th, v)[..., None]

    def metric(self, q, u, v):
        q, u, v = np.asarray(q), np.asarray(u), np.asarray(v)
        q = np.broadcast_to(q, np.broadcast_shapes(q.shape, u.shape, v.shape))
        forms, th = self._forms(q)
        (ex, n1), (ey, n2), (_, n3) = forms
        val = _dot(ex, u) * _dot(ex, v) + _dot(ey, u) * _dot(ey, v)
        val = val + (1.0 + self.metric_corruption) * _dot(th, u) * _dot(th, v)
        for nr in (n1, n2, n3):
            val = val + _dot(nr, u) * _dot(nr, v)
        return val

    def project_to_base(self, q):
        return "torus", self.chart_map("torus", q)

    def chart_map(self, chart, q):
        if chart != "torus":
            raise ChartNotFoundError(chart)
        q = np.asarray(q, dtype=float)
        x = np.mod(np.arctan2(q[..., 1], q[..., 0]) / TWO_PI, 1.0)
        y = np.mod(np.arctan2(q[..., 3], q[..., 2]) / TWO_PI, 1.0)
        return np.stack([x, y], axis=-1)

    def chart_metric(self, chart, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)).copy()

    def chart_sigma(self, chart, x):
        x = np.asarray(x, dtype=float)
        return self.params["B"] * np.cos(TWO_PI * x[..., 0])


# -- constructors ----------------------------------------------------------

def spindle(p: int = 2, q: int = 3, metric_corruption: float = 0.0) -> SpindleBundle:
    p, q = int(p), int(q)
    if p <= 0 or q <= 0 or gcd(p, q) != 1:
        raise ValueError(f"spindle weights must be coprime positive integers, got {(p, q)}")
    name = "hopf" if p == q == 1 else "spindle"
    return SpindleBundle(
        name=name,
        group=torus(1, order_bound=p * q // gcd(p, q)),
        n=4,
        planes=[(0, 1), (2, 3)],
        weights=np.array([[p, q]], dtype=float),
        spheres=[[0, 1]],
        params={"p": p, "q": q},
        metric_corruption=metric_corruption,
    )


def hopf(metric_corruption: float = 0.0) -> SpindleBundle:
    return spindle(1, 1, metric_corruption)


def exact_product(B: float = 1.0, base: str = "flat_torus", metric_corruption: float = 0.0) -> ExactProductBundle:
    if base != "flat_torus":
        raise ValueError(f"unsupported base model {base!r}")
    return ExactProductBundle(
        name="exact_product",
        group=torus(1, order_bound=1),
        n=6,
        planes=[(0, 1), (2, 3), (4, 5)],
        weights=np.array([[0, 0, 1]], dtype=float),
        spheres=[[0], [1], [2]],
        params={"B": float(B), "base": base},
        metric_corruption=metric_corruption,
    )


def make_model(name: str, p: int = 2, q: int = 3, B: float = 1.0, metric_corruption: float = 0.0):
    if name == "hopf":
        return hopf(metric_corruption)
    if name == "spindle":
        return spindle(p, q, metric_corruption)
    if name == "exact_product":
        return exact_product(B, metric_corruption=metric_corruption)
    raise ValueError(f"unknown model {name!r}")


# -- functional interface -------------------------------------------------

def fundamental_field(model, X, q):
    return model.fundamental(np.atleast_1d(np.asarray(X, dtype=float)), np.asarray(q, dtype=float))


def connection(model, q, v):
    return model.theta(np.asarray(q, dtype=float), np.asarray(v, dtype=float))


def horizontal_project(model, q, v):
    return model.horizontal_project(np.asarray(q, dtype=float), np.asarray(v, dtype=float))


def curvature_sigma(model, Xdual, q, u, v):
    return float(model.curvature_sigma(np.atleast_1d(np.asarray(Xdual, dtype=float)), q, u, v))


def project_to_base(model, q):
    return model.project_to_base(q)
