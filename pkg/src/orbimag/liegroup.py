"""Compact Lie group kernel: tori and SU(2).

Elements of the Lie algebra are plain coordinate vectors in a fixed basis.
Group elements are wrapped in :class:`GroupElement`; for a torus the
coordinates are a real vector reduced modulo the integer lattice, for SU(2)
they are a unit quaternion ``(w, x, y, z)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np


class EmptyLatticeError(ValueError):
    """Raised when the center of the algebra is trivial."""


@dataclass(frozen=True)
class GroupElement:
    coords: np.ndarray
    kind: str

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float))


def _quat_to_su2(qt):
    # w + i(x s1 + y s2 + z s3)
    w, x, y, z = qt
    return np.array([[w + 1j * z, y + 1j * x], [-y + 1j * x, w - 1j * z]])


def _su2_to_quat(U):
    a, b = U[0, 0], U[0, 1]
    return np.array([a.real, b.imag, b.real, a.imag])


# su(2) basis e_a = -i sigma_a / 2; orthonormal for <X,Y> = -2 tr(XY),
# with [e_1, e_2] = e_3 (cyclic).
_PAULI = np.array([
    [[0, 1], [1, 0]],
    [[0, -1j], [1j, 0]],
    [[1, 0], [0, -1]],
], dtype=complex)
SU2_BASIS = -0.5j * _PAULI


def su2_matrix(X):
    """Matrix of the algebra element with coordinates ``X``."""
    return np.einsum("a,aij->ij", np.asarray(X, dtype=float), SU2_BASIS)


def su2_coords(A):
    """Inverse of :func:`su2_matrix` for traceless anti-Hermitian ``A``."""
    return np.array([np.real(-2.0 * np.trace(A @ e)) for e in SU2_BASIS])


@dataclass(frozen=True)
class GroupModel:
    """A compact group with Ad-invariant metric and central lattice data.

    ``metric`` is the Gram matrix of the inner product in the chosen basis,
    ``structure`` holds constants with ``[e_a, e_b] = sum_c C[a,b,c] e_c``.
    ``center_basis`` spans the center, ``lattice_basis`` spans its unit
    lattice (columns in algebra coordinates), ``order_bound`` is the
    integer N with stabilizer lattice contained in (1/N) times the lattice.
    """

    kind: str
    dim: int
    metric: np.ndarray
    structure: np.ndarray
    center_basis: np.ndarray
    lattice_basis: np.ndarray
    order_bound: int = 1
    Z: np.ndarray | None = None
    _center_proj: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        C = self.center_basis
        if C.shape[1] == 0:
            P = np.zeros((self.dim, self.dim))
        else:
            # orthogonal projection in the metric: P = C (C^T M C)^-1 C^T M
            M = self.metric
            P = C @ np.linalg.solve(C.T @ M @ C, C.T @ M)
        object.__setattr__(self, "_center_proj", P)

    # -- algebra ---------------------------------------------------------
    def inner(self, X, Y):
        return np.einsum("...i,ij,...j->...", np.asarray(X, float), self.metric, np.asarray(Y, float))

    def norm(self, X):
        return float(np.sqrt(max(self.inner(X, X), 0.0)))

    def bracket(self, X, Y):
        return np.einsum("...a,...b,abc->...c", np.asarray(X, float), np.asarray(Y, float), self.structure)

    def center_project(self, X):
        return np.asarray(X, float) @ self._center_proj.T

    # -- group -----------------------------------------------------------
    def identity(self) -> GroupElement:
        if self.kind == "torus":
            return GroupElement(np.zeros(self.dim), "torus")
        return GroupElement(np.array([1.0, 0.0, 0.0, 0.0]), "su2")

    def exp(self, X) -> GroupElement:
        X = np.asarray(X, dtype=float)
        if self.kind == "torus":
            return GroupElement(np.mod(X, 1.0), "torus")
        r = np.linalg.norm(X)
        # exp of -i (r/2) n.sigma = cos(r/2) - i sin(r/2) n.sigma
        if r < 1e-300:
            return self.identity()
        n = X / r
        w = np.cos(r / 2.0)
        s = np.sin(r / 2.0)
        return GroupElement(np.array([w, -s * n[0], -s * n[1], -s * n[2]]), "su2")

    def mul(self, g: GroupElement, h: GroupElement) -> GroupElement:
        if self.kind == "torus":
            return GroupElement(np.mod(g.coords + h.coords, 1.0), "torus")
        q = _su2_to_quat(_quat_to_su2(g.coords) @ _quat_to_su2(h.coords))
        return GroupElement(q / np.linalg.norm(q), "su2")

    def inv(self, g: GroupElement) -> GroupElement:
        if self.kind == "torus":
            return GroupElement(np.mod(-g.coords, 1.0), "torus")
        w, x, y, z = g.coords
        return GroupElement(np.array([w, -x, -y, -z]), "su2")

    def matrix(self, g: GroupElement):
        """SU(2) matrix of a group element (SU(2) only)."""
        return _quat_to_su2(g.coords)

    def distance_to_identity(self, g: GroupElement) -> float:
        if self.kind == "torus":
            c = np.mod(g.coords + 0.5, 1.0) - 0.5
            return float(np.linalg.norm(c))
        return float(np.linalg.norm(self.matrix(g) - np.eye(2)))

    def Ad(self, g: GroupElement, X):
        X = np.asarray(X, dtype=float)
        if self.kind == "torus":
            return X.copy()
        U = self.matrix(g)
        return su2_coords(U @ su2_matrix(X) @ U.conj().T)

    # -- central lattice -------------------------------------------------
    def _lattice_generator(self, order=None):
        B = self.lattice_basis
        if B.shape[1] == 0:
            raise EmptyLatticeError("center of the Lie algebra is trivial")
        return B / float(self.order_bound if order is None else order)

    def lattice_round(self, X, window: int = 2, order=None):
        """Nearest point of (1/N) Lambda to the central part of ``X``.

        Returns ``(point, distance)`` with the distance measured in the
        algebra metric. ``order`` overrides N (``order=1`` rounds to the unit
        lattice itself). The search enumerates a window around the
        coordinate-wise rounding, which is exact for the diagonal metrics
        used by the shipped models.
        """
        B = self._lattice_generator(order)
        Xz = self.center_project(X)
        c, *_ = np.linalg.lstsq(B, Xz, rcond=None)
        base = np.round(c)
        best, best_d = None, np.inf
        for off in itertools.product(range(-window, window + 1), repeat=B.shape[1]):
            cand = B @ (base + np.array(off, dtype=float))
            d = self.norm(cand - Xz)
            if d < best_d - 1e-15:
                best, best_d = cand, d
        return best, float(best_d)

    def lattice_gap(self, window: int = 3) -> float:
        """Minimal norm of a nonzero element of (1/N) Lambda."""
        B = self._lattice_generator()
        best = np.inf
        for off in itertools.product(range(-window, window + 1), repeat=B.shape[1]):
            if not any(off):
                continue
            best = min(best, self.norm(B @ np.array(off, dtype=float)))
        return float(best)


def torus(m: int = 1, metric=None, order_bound: int = 1, Z=None) -> GroupModel:
    """The torus R^m / Z^m. ``Z`` defaults to the first unit-length basis direction."""
    M = np.eye(m) if metric is None else np.asarray(metric, dtype=float)
    if Z is None:
        Z = np.zeros(m)
        Z[0] = 1.0
    Z = np.asarray(Z, dtype=float)
    Z = Z / np.sqrt(Z @ M @ Z)
    return GroupModel(
        kind="torus",
        dim=m,
        metric=M,
        structure=np.zeros((m, m, m)),
        center_basis=np.eye(m),
        lattice_basis=np.eye(m),
        order_bound=int(order_bound),
        Z=Z,
    )


def su2() -> GroupModel:
    C = np.zeros((3, 3, 3))
    for a, b, c in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
        C[a, b, c] = 1.0
        C[b, a, c] = -1.0
    return GroupModel(
        kind="su2",
        dim=3,
        metric=np.eye(3),
        structure=C,
        center_basis=np.zeros((3, 0)),
        lattice_basis=np.zeros((3, 0)),
        order_bound=1,
        Z=None,
    )
