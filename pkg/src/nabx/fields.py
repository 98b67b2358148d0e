"""so(m)-valued matrix fields on the unit disk.

A parameter vector ``theta`` of length ``D = d_m * count`` stores the
coefficient of ``e_ell * A_i`` at position ``ell * d_m + i`` (ell-major,
i-minor), where ``A_i`` runs over the orthonormal basis of so(m) returned by
:func:`so_basis`.  Fields outside the finite span (ground truths) are plain
callables or :class:`BumpField` instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
import math
import warnings

import numpy as np

from .errors import QuadratureWarning
from .geometry import QuadratureRule, disk_quadrature
from .zernike import basis_degrees, real_basis_matrix

__all__ = [
    "SkewBasis",
    "so_basis",
    "so_dim",
    "n_max_for",
    "dimension_for",
    "MatrixField",
    "CoefficientField",
    "CallableField",
    "BumpField",
    "ZeroField",
    "field_eval",
    "commutator_action",
    "project_to_coefficients",
]


def so_dim(m: int) -> int:
    return m * (m - 1) // 2


@dataclass(frozen=True)
class SkewBasis:
    """Frobenius-orthonormal basis of so(m), stacked as an array ``(d_m, m, m)``."""

    m: int
    matrices: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.matrices)

    def combine(self, coords):
        """``sum_i coords[..., i] A_i`` with broadcasting over leading axes."""
        return np.tensordot(np.asarray(coords, dtype=float), self.matrices, axes=(-1, 0))

    def coords(self, mats):
        """Frobenius coordinates of (skew) matrices ``mats[..., m, m]``."""
        return np.einsum("...pq,ipq->...i", mats, self.matrices)


@lru_cache(maxsize=None)
def so_basis(m: int) -> SkewBasis:
    """Elementary skew matrices ``(E_pq - E_qp)/sqrt(2)``, ``p < q`` in lexicographic order."""
    if m < 2:
        raise ValueError("so(m) needs m >= 2")
    mats = []
    s = 1.0 / math.sqrt(2.0)
    for p in range(m):
        for q in range(p + 1, m):
            a = np.zeros((m, m))
            a[p, q] = s
            a[q, p] = -s
            mats.append(a)
    arr = np.array(mats)
    arr.setflags(write=False)
    return SkewBasis(m, arr)


def n_max_for(D: int, m: int) -> int:
    """Top Zernike degree present in a parameter vector of length ``D``."""
    d_m = so_dim(m)
    if D <= 0 or D % d_m:
        raise ValueError(f"D={D} is not a positive multiple of d_m={d_m}")
    return int(basis_degrees(D // d_m)[-1])


def dimension_for(n_max: int, m: int) -> int:
    """``D`` of the span of all Zernike degrees up to ``n_max``."""
    return so_dim(m) * (n_max + 1) * (n_max + 2) // 2


class MatrixField:
    """Base class: a map from points ``(P, 2)`` to skew matrices ``(P, m, m)``."""

    m: int

    def __call__(self, points) -> np.ndarray:
        raise NotImplementedError

    def along_chords(self, x, v, tau, s) -> np.ndarray:
        """Values at ``x_c + s_j tau_c v_c``; returns shape ``(C, S, m, m)``."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        tau = np.asarray(tau, dtype=float)
        s = np.asarray(s, dtype=float)
        pts = x[:, None, :] + (s[None, :, None] * tau[:, None, None]) * v[:, None, :]
        vals = self(pts.reshape(-1, 2))
        return vals.reshape(len(x), len(s), self.m, self.m)

    def describe(self) -> dict:
        return {"kind": type(self).__name__, "m": self.m}


class ZeroField(MatrixField):
    def __init__(self, m: int):
        self.m = m

    def __call__(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return np.zeros((len(pts), self.m, self.m))

    def describe(self):
        return {"kind": "zero", "m": self.m}


class CoefficientField(MatrixField):
    """Field ``Phi_theta = sum theta_{ell,i} e_ell A_i`` of the finite span ``E_D``.

    Parameters
    ----------
    theta : array_like
        Coefficients, length ``D`` divisible by ``m(m-1)/2``.
    m : int
        Matrix size.
    """

    def __init__(self, theta, m: int):
        theta = np.array(theta, dtype=float).ravel()
        self.m = m
        self.basis = so_basis(m)
        self.n_max = n_max_for(len(theta), m)
        self.theta = theta
        self.theta.setflags(write=False)
        self.count = len(theta) // self.basis.dim

    @property
    def D(self) -> int:
        return len(self.theta)

    def coeff_table(self) -> np.ndarray:
        return self.theta.reshape(self.count, self.basis.dim)

    def coords(self, points) -> np.ndarray:
        """so(m) coordinates ``(P, d_m)`` at the given points."""
        E = real_basis_matrix(self.count, np.asarray(points, dtype=float).reshape(-1, 2))
        return E @ self.coeff_table()

    def __call__(self, points):
        return self.basis.combine(self.coords(points))

    def along_chords(self, x, v, tau, s):
        # restricted to a chord the field is a polynomial of degree n_max in s,
        # so n_max + 1 samples plus exact interpolation replace dense evaluation
        s = np.asarray(s, dtype=float)
        nodes = _cheb_nodes(self.n_max)
        if len(s) <= len(nodes):
            return super().along_chords(x, v, tau, s)
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        tau = np.asarray(tau, dtype=float)
        pts = x[:, None, :] + (nodes[None, :, None] * tau[:, None, None]) * v[:, None, :]
        c = self.coords(pts.reshape(-1, 2)).reshape(len(x), len(nodes), -1)
        L = _interp_matrix(nodes, s)
        c_all = np.einsum("sk,cki->csi", L, c)
        return self.basis.combine(c_all)

    def describe(self):
        return {"kind": "coefficients", "m": self.m, "D": self.D, "theta": self.theta.tolist()}


class CallableField(MatrixField):
    """Wraps ``fn(points (P, 2)) -> (P, m, m)``."""

    def __init__(self, fn, m: int, name: str = "callable"):
        self.fn = fn
        self.m = m
        self.name = name

    def __call__(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return np.asarray(self.fn(pts), dtype=float).reshape(len(pts), self.m, self.m)

    def describe(self):
        return {"kind": "callable", "m": self.m, "name": self.name}


def _bump(rho):
    out = np.zeros_like(rho)
    inside = rho < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - rho[inside] ** 2))
    return out


@dataclass
class BumpField(MatrixField):
    """Sum of smooth compactly supported bumps times fixed so(m) directions.

    ``Phi(x) = sum_j amplitude_j * b(|x - c_j| / radius_j) * A(coords_j)`` with
    ``b(rho) = exp(-1/(1 - rho^2))`` on ``rho < 1`` (``b(0) = 1/e``).

    Parameters
    ----------
    m : int
    coords : list of so(m) coordinate vectors, one per bump
    centers : list of 2-vectors, default the origin
    radius : float or list, default 0.8
    amplitude : float or list, default 1.0
    """

    m: int
    coords: list = field(default_factory=list)
    centers: list = field(default_factory=list)
    radius: object = 0.8
    amplitude: object = 1.0

    def __post_init__(self):
        d_m = so_dim(self.m)
        if not self.coords:
            self.coords = [[1.0] + [0.0] * (d_m - 1)]
        self._coords = np.array(self.coords, dtype=float).reshape(-1, d_m)
        nb = len(self._coords)
        if not self.centers:
            self.centers = [[0.0, 0.0]] * nb
        self._centers = np.array(self.centers, dtype=float).reshape(nb, 2)
        self._radius = np.broadcast_to(np.asarray(self.radius, dtype=float), (nb,)).copy()
        self._amp = np.broadcast_to(np.asarray(self.amplitude, dtype=float), (nb,)).copy()
        if np.any(self._radius <= 0):
            raise ValueError("bump radius must be positive")
        if np.any(np.linalg.norm(self._centers, axis=1) + self._radius >= 1.0):
            raise ValueError("bump support must lie inside the open unit disk")
        self.basis = so_basis(self.m)

    def coords_at(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        out = np.zeros((len(pts), self.basis.dim))
        for c, r, a, d in zip(self._centers, self._radius, self._amp, self._coords):
            rho = np.hypot(pts[:, 0] - c[0], pts[:, 1] - c[1]) / r
            out += (a * _bump(rho))[:, None] * d[None, :]
        return out

    def __call__(self, points):
        return self.basis.combine(self.coords_at(points))

    def describe(self):
        return {
            "kind": "bump",
            "m": self.m,
            "coords": self._coords.tolist(),
            "centers": self._centers.tolist(),
            "radius": self._radius.tolist(),
            "amplitude": self._amp.tolist(),
        }


@lru_cache(maxsize=64)
def _cheb_nodes_cached(n: int) -> np.ndarray:
    j = np.arange(n + 1)
    nodes = 0.5 * (1.0 - np.cos(np.pi * j / max(n, 1)))
    if n == 0:
        nodes = np.array([0.5])
    nodes.setflags(write=False)
    return nodes


def _cheb_nodes(n: int) -> np.ndarray:
    return _cheb_nodes_cached(int(n))


def _interp_matrix(nodes, targets) -> np.ndarray:
    """Barycentric Lagrange interpolation matrix from ``nodes`` to ``targets``."""
    nodes = np.asarray(nodes, dtype=float)
    targets = np.asarray(targets, dtype=float)
    n = len(nodes)
    if n == 1:
        return np.ones((len(targets), 1))
    # Chebyshev points of the second kind: weights (-1)^j, halved at the ends
    w = (-1.0) ** np.arange(n)
    w[0] *= 0.5
    w[-1] *= 0.5
    diff = targets[:, None] - nodes[None, :]
    exact = diff == 0.0
    diff[exact] = 1.0
    terms = w[None, :] / diff
    with np.errstate(divide="ignore", invalid="ignore"):
        L = terms / terms.sum(axis=1, keepdims=True)
    rows = exact.any(axis=1)
    L[rows] = exact[rows].astype(float)
    return L


def field_eval(f: MatrixField, p) -> np.ndarray:
    """Evaluate a field at one point ``(2,)`` or many points ``(P, 2)``."""
    p = np.asarray(p, dtype=float)
    vals = f(p.reshape(-1, 2))
    return vals[0] if p.ndim == 1 else vals


def commutator_action(Phi, A, Psi=None):
    """``Phi A - A Psi``; with ``Psi`` omitted this is the commutator ``[Phi, A]``."""
    Phi = np.asarray(Phi)
    A = np.asarray(A)
    Psi = Phi if Psi is None else np.asarray(Psi)
    return Phi @ A - A @ Psi


def _project(f: MatrixField, count: int, rule: QuadratureRule) -> np.ndarray:
    basis = so_basis(f.m)
    vals = f(rule.nodes)
    coords = basis.coords(vals)  # (P, d_m)
    E = real_basis_matrix(count, rule.nodes)
    return ((E * rule.weights[:, None]).T @ coords).ravel()


def project_to_coefficients(f: MatrixField, D: int, rule: QuadratureRule | None = None, check=True):
    """L2(disk) projection of a field onto ``E_D``.

    Parameters
    ----------
    f : MatrixField
    D : int
        Target dimension, a multiple of ``m(m-1)/2``.
    rule : QuadratureRule, optional
        Disk rule; defaults to a 64 x 128 polar rule.
    check : bool
        Recompute on the doubled rule and emit :class:`QuadratureWarning` when
        any coefficient moves by more than ``1e-8``.

    Returns
    -------
    numpy.ndarray
        The coefficient vector ``theta`` of length ``D``.
    """
    d_m = so_dim(f.m)
    n_max_for(D, f.m)
    if rule is None:
        rule = disk_quadrature(64, 128)
    count = D // d_m
    theta = _project(f, count, rule)
    if check:
        fine = _project(f, count, rule.refined(2))
        change = float(np.max(np.abs(fine - theta)))
        if change > 1e-8:
            warnings.warn(
                f"projection changed by {change:.2e} under rule doubling; increase quadrature order",
                QuadratureWarning,
                stacklevel=2,
            )
    return theta
