"""Zernike polynomials on the unit disk and the matching fan-beam boundary basis.

Complex Zernike polynomials are indexed by ``0 <= k <= n`` and expanded once
into monomials ``z^a conj(z)^b`` with ``a - b = n - 2k``::

    Z_nk = sum_j  C(k, j) (-1)^(k-j) C(n-j, k)  z^(n-j-k) conj(z)^(k-j)

so that every evaluation, derivative and identity check runs off the same
integer coefficient table.  The real orthonormal basis ``e_ell`` takes real and
imaginary parts and is ordered by the pyramid scheme
``(0,0), (1,0), (1,1), (2,0), ...``.
"""

from __future__ import annotations

from functools import lru_cache
import math

import numpy as np

from .geometry import boundary_quadrature

__all__ = [
    "ell_to_nk",
    "nk_to_ell",
    "basis_degrees",
    "zernike_terms",
    "zernike_eval",
    "zernike_norm",
    "real_basis_eval",
    "real_basis_matrix",
    "eigenvalue",
    "eigenvalues",
    "sobolev_norm",
    "boundary_psi",
    "boundary_psi_normalized",
    "boundary_psi_eval",
    "psi_norm",
    "zernike_identity_residual",
]


def ell_to_nk(ell: int):
    """Pyramid-scheme single index to ``(n, k)``."""
    if ell < 0:
        raise ValueError("single index must be nonnegative")
    n = (math.isqrt(8 * ell + 1) - 1) // 2
    return n, ell - n * (n + 1) // 2


def nk_to_ell(n: int, k: int) -> int:
    if not 0 <= k <= n:
        raise ValueError(f"invalid Zernike index ({n}, {k})")
    return n * (n + 1) // 2 + k


def basis_degrees(count: int) -> np.ndarray:
    """Degrees ``n_ell`` for ``ell = 0 .. count-1``."""
    ell = np.arange(count)
    return ((np.sqrt(8 * ell + 1).astype(np.int64) - 1) // 2).astype(np.int64)


@lru_cache(maxsize=None)
def zernike_terms(n: int, k: int):
    """Monomial expansion of ``Z_nk`` as a tuple of ``(coef, a, b)``."""
    if not 0 <= k <= n:
        return ()
    terms = []
    for j in range(k + 1):
        if n - j < k:
            continue
        c = math.comb(k, j) * (-1) ** (k - j) * math.comb(n - j, k)
        terms.append((c, n - j - k, k - j))
    return tuple(terms)


def _falling(c, a, order):
    for _ in range(order):
        c *= a
        a -= 1
    return c, a


def zernike_eval(n: int, k: int, z, dz: int = 0, dzbar: int = 0):
    """Evaluate ``Z_nk`` (or a Wirtinger derivative of it) at complex ``z``.

    Indices outside ``0 <= k <= n`` give zero, matching the convention used in
    the recurrence identities.
    """
    z = np.asarray(z, dtype=complex)
    out = np.zeros_like(z)
    for c, a, b in zernike_terms(n, k):
        c, a = _falling(c, a, dz)
        c, b = _falling(c, b, dzbar)
        if c == 0:
            continue
        out = out + c * z**a * np.conj(z) ** b
    return out


def zernike_norm(n: int, k: int = 0) -> float:
    """L2(disk) norm of the unnormalised ``Z_nk``."""
    return math.sqrt(math.pi / (n + 1))


@lru_cache(maxsize=None)
def _radial_coeffs(n: int, k: int) -> np.ndarray:
    # Z_nk(r e^{i phi}) = R_nk(r) e^{i (n-2k) phi}, R_nk real with these coefficients
    coeffs = np.zeros(n + 1)
    for c, a, b in zernike_terms(n, k):
        coeffs[a + b] += c
    return coeffs


def real_basis_matrix(count: int, points) -> np.ndarray:
    """Values of ``e_0 .. e_{count-1}`` at cartesian ``points`` (shape ``(P, 2)``).

    Returns an array of shape ``(P, count)``.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    out = np.empty((len(pts), count))
    if count == 0:
        return out
    n_max = int(basis_degrees(count)[-1])
    r = np.hypot(pts[:, 0], pts[:, 1])
    safe = np.where(r > 0, r, 1.0)
    w = np.where(r > 0, (pts[:, 0] + 1j * pts[:, 1]) / safe, 1.0)
    rpow = np.empty((n_max + 1, len(pts)))
    wpow = np.empty((n_max + 1, len(pts)), dtype=complex)
    rpow[0] = 1.0
    wpow[0] = 1.0
    for j in range(1, n_max + 1):
        rpow[j] = rpow[j - 1] * r
        wpow[j] = wpow[j - 1] * w
    for ell in range(count):
        n, k = ell_to_nk(ell)
        p = n - 2 * k
        scale = math.sqrt((n + 1) / math.pi)
        if p > 0:
            radial = _radial_coeffs(n, k) @ rpow[: n + 1]
            out[:, ell] = math.sqrt(2) * scale * radial * wpow[p].real
        elif p == 0:
            out[:, ell] = scale * (_radial_coeffs(n, k) @ rpow[: n + 1])
        else:
            radial = _radial_coeffs(n, n - k) @ rpow[: n + 1]
            out[:, ell] = math.sqrt(2) * scale * radial * wpow[-p].imag
    return out


def real_basis_eval(ell: int, points):
    """Value of the single real basis function ``e_ell`` at ``points``."""
    pts = np.asarray(points, dtype=float)
    vals = real_basis_matrix(ell + 1, pts.reshape(-1, 2))[:, ell]
    return vals.reshape(pts.shape[:-1]) if pts.ndim > 1 else vals[0]


def eigenvalue(ell):
    """Eigenvalue ``((1 + n_ell) / (4 pi))^2`` attached to ``e_ell``."""
    n = basis_degrees(int(ell) + 1)[-1]
    return ((1.0 + n) / (4.0 * math.pi)) ** 2


def eigenvalues(count: int) -> np.ndarray:
    return ((1.0 + basis_degrees(count)) / (4.0 * math.pi)) ** 2


def sobolev_norm(c, s: float, d_m: int = 1) -> float:
    """Zernike-scale norm ``sqrt(sum (1 + n_ell)^{2s} c^2)``.

    ``c`` is laid out ell-major with ``d_m`` so(m) components per index.
    """
    c = np.asarray(c, dtype=float).ravel()
    if len(c) % d_m:
        raise ValueError("coefficient length not divisible by d_m")
    n = np.repeat(basis_degrees(len(c) // d_m), d_m)
    return float(np.sqrt(np.sum((1.0 + n) ** (2.0 * s) * c**2)))


def boundary_psi(n: int, k: int, sign: int, alpha, beta):
    """Unnormalised fan-beam function ``psi^+_nk`` (``sign=+1``) or ``psi^-_nk``."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    par = (-1) ** n
    val = (
        par
        / (4 * math.pi)
        * np.exp(1j * (n - 2 * k) * (alpha + beta))
        * (np.exp(1j * (n + 1) * alpha) + par * np.exp(-1j * (n + 1) * alpha))
    )
    if sign < 0:
        val = np.exp(1j * (alpha + beta + math.pi)) * val
    return val


@lru_cache(maxsize=None)
def psi_norm(n: int, k: int, sign: int) -> float:
    """L2 norm of ``psi^{sign}_nk`` under the normalised boundary measure (128x128 rule)."""
    rule = _psi_rule()
    vals = boundary_psi(n, k, sign, rule.nodes[:, 0], rule.nodes[:, 1])
    return float(np.sqrt(rule.integrate(np.abs(vals) ** 2)))


@lru_cache(maxsize=1)
def _psi_rule():
    return boundary_quadrature(128, 128)


def boundary_psi_normalized(n: int, k: int, sign: int, alpha, beta):
    return boundary_psi(n, k, sign, alpha, beta) / psi_norm(n, k, 1 if sign > 0 else -1)


def boundary_psi_eval(n: int, k: int, sign, p, normalized: bool = True) -> complex:
    """``psi^{+-}_nk`` at a :class:`~nabx.geometry.BoundaryPoint` (``sign`` is ``"+"``/``"-"`` or +-1)."""
    s = 1 if sign in ("+", 1, +1) else -1
    f = boundary_psi_normalized if normalized else boundary_psi
    return complex(f(n, k, s, p.alpha, p.beta))


def zernike_identity_residual(n: int, k: int, z, which: int):
    """Absolute residual of one of the three Zernike recurrences at ``z``.

    1. ``z Z_nk = (1 - k/(n+1)) Z_{n+1,k} - k/(n+1) Z_{n-1,k-1}``
    2. ``(1 - |z|^2) d_zbar Z_nk = (n-k+1) (z Z_nk - Z_{n+1,k})``
    3. ``(z d_z - zbar d_zbar) Z_nk = (n - 2k) Z_nk``, i.e. the angular
       derivative ``d_phi Z_nk = i (n - 2k) Z_nk``.
    """
    z = np.asarray(z, dtype=complex)
    if which == 1:
        lhs = z * zernike_eval(n, k, z)
        rhs = (1 - k / (n + 1)) * zernike_eval(n + 1, k, z) - (k / (n + 1)) * zernike_eval(
            n - 1, k - 1, z
        )
    elif which == 2:
        lhs = (1 - z * np.conj(z)) * zernike_eval(n, k, z, dzbar=1)
        rhs = (n - k + 1) * (z * zernike_eval(n, k, z) - zernike_eval(n + 1, k, z))
    elif which == 3:
        lhs = z * zernike_eval(n, k, z, dz=1) - np.conj(z) * zernike_eval(n, k, z, dzbar=1)
        rhs = (n - 2 * k) * zernike_eval(n, k, z)
    else:
        raise ValueError("which must be 1, 2 or 3")
    return np.abs(lhs - rhs)
