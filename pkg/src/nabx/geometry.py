"""Unit disk geometry, fan-beam chart of the influx boundary and quadrature rules.

Points of the influx boundary are labelled by fan-beam angles ``(alpha, beta)``
with ``x = e^{i beta}`` and ``v = e^{i (alpha + beta + pi)}``.  The boundary
measure used by the statistical model is the probability measure
``dalpha dbeta / (2 pi^2)``; spectral computations sometimes need the plain
area element ``dalpha dbeta`` instead, which is ``FAN_BEAM_AREA`` times larger.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

__all__ = [
    "GLANCING_TOL",
    "FAN_BEAM_AREA",
    "BoundaryPoint",
    "Chord",
    "QuadratureRule",
    "fan_beam_to_phase",
    "phase_to_fan_beam",
    "fan_beam_arrays",
    "exit_time",
    "chord_point",
    "boundary_quadrature",
    "disk_quadrature",
]

GLANCING_TOL = 1e-12
FAN_BEAM_AREA = 2.0 * math.pi**2
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class BoundaryPoint:
    """Fan-beam coordinates of a chord; ``beta`` is reduced mod 2 pi."""

    alpha: float
    beta: float

    def __post_init__(self):
        alpha = float(self.alpha)
        if not -math.pi / 2 - 1e-12 <= alpha <= math.pi / 2 + 1e-12:
            raise ValueError(f"alpha={alpha} outside [-pi/2, pi/2]")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", float(self.beta) % TWO_PI)

    def phase(self):
        return fan_beam_to_phase(self)

    def chord(self) -> "Chord":
        x, v = fan_beam_to_phase(self)
        return Chord(x, v, exit_time(x, v))


def fan_beam_to_phase(p: BoundaryPoint):
    """Return the phase point ``(x, v)`` of a boundary point as two unit 2-vectors."""
    x = np.array([math.cos(p.beta), math.sin(p.beta)])
    ang = p.alpha + p.beta + math.pi
    v = np.array([math.cos(ang), math.sin(ang)])
    return x, v


def phase_to_fan_beam(x, v) -> BoundaryPoint:
    """Inverse of :func:`fan_beam_to_phase` for influx phase points."""
    beta = math.atan2(x[1], x[0])
    ang = math.atan2(v[1], v[0])
    alpha = math.remainder(ang - beta - math.pi, TWO_PI)
    # glancing directions may land on -pi/2 - eps after rounding
    alpha = min(max(alpha, -math.pi / 2), math.pi / 2)
    return BoundaryPoint(alpha, beta)


def fan_beam_arrays(alpha, beta):
    """Vectorised fan-beam map.

    Returns ``x`` and ``v`` of shape ``(n, 2)`` and exit times ``tau`` of
    shape ``(n,)``.  ``tau = 2 cos(alpha)`` is evaluated in closed form.
    """
    alpha = np.asarray(alpha, dtype=float).ravel()
    beta = np.asarray(beta, dtype=float).ravel()
    x = np.stack([np.cos(beta), np.sin(beta)], axis=-1)
    ang = alpha + beta + math.pi
    v = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    tau = np.maximum(2.0 * np.cos(alpha), 0.0)
    return x, v, tau


def exit_time(x, v) -> float:
    """Hitting time ``tau = -2 x.v`` of the chord starting at ``x`` in direction ``v``."""
    dot = float(np.dot(x, v))
    if dot > GLANCING_TOL:
        raise ValueError(f"not an influx point: x.v = {dot:.3e} > 0")
    return max(-2.0 * dot, 0.0)


@dataclass(frozen=True)
class Chord:
    x: np.ndarray
    v: np.ndarray
    tau: float

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        if self.tau < 0:
            raise ValueError("exit time must be nonnegative")


def chord_point(c: Chord, t: float):
    """Point ``x + t v`` of the chord, for ``0 <= t <= tau``."""
    if t < 0 or t > c.tau * (1 + 1e-14) + 1e-15:
        raise ValueError(f"t={t} outside [0, {c.tau}]")
    return c.x + t * c.v


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and nonnegative weights.

    Boundary rules store ``(alpha, beta)`` pairs and weights summing to one;
    disk rules store cartesian points and weights summing to ``pi``.
    """

    nodes: np.ndarray
    weights: np.ndarray
    kind: str = "boundary"
    shape: tuple = ()

    def __len__(self):
        return len(self.weights)

    def integrate(self, values):
        """Weighted sum over the leading axis of ``values``."""
        values = np.asarray(values)
        return np.tensordot(self.weights, values, axes=(0, 0))

    def refined(self, factor: int = 2) -> "QuadratureRule":
        n1, n2 = self.shape
        if self.kind == "boundary":
            return boundary_quadrature(factor * n1, factor * n2)
        return disk_quadrature(factor * n1, factor * n2)


def _gauss(n, a, b):
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def boundary_quadrature(n_alpha: int, n_beta: int) -> QuadratureRule:
    """Gauss-Legendre in alpha times periodic trapezoid in beta, normalised to mass one."""
    if n_alpha < 2 or n_beta < 2:
        raise ValueError("need at least two nodes per direction")
    a, wa = _gauss(n_alpha, -math.pi / 2, math.pi / 2)
    b = TWO_PI * np.arange(n_beta) / n_beta
    wb = np.full(n_beta, TWO_PI / n_beta)
    A, Bt = np.meshgrid(a, b, indexing="ij")
    nodes = np.stack([A.ravel(), Bt.ravel()], axis=-1)
    weights = np.outer(wa, wb).ravel() / FAN_BEAM_AREA
    return QuadratureRule(nodes, weights, "boundary", (n_alpha, n_beta))


def disk_quadrature(n_r: int, n_phi: int) -> QuadratureRule:
    """Polar rule on the unit disk: Gauss-Legendre in ``u = r^2``, trapezoid in angle.

    Exact for polynomials in ``(x1, x2)`` of total degree below
    ``min(2 n_r, n_phi)``.
    """
    if n_r < 2 or n_phi < 2:
        raise ValueError("need at least two nodes per direction")
    u, wu = _gauss(n_r, 0.0, 1.0)
    r = np.sqrt(u)
    phi = TWO_PI * np.arange(n_phi) / n_phi
    R, P = np.meshgrid(r, phi, indexing="ij")
    nodes = np.stack([(R * np.cos(P)).ravel(), (R * np.sin(P)).ravel()], axis=-1)
    # dA = r dr dphi = du dphi / 2
    weights = np.outer(0.5 * wu, np.full(n_phi, TWO_PI / n_phi)).ravel()
    return QuadratureRule(nodes, weights, "disk", (n_r, n_phi))
