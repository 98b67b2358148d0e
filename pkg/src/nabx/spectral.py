"""Discretised linearisation, singular-value scans and curvature checks.

Boundary integrals come in two normalisations.  ``measure="probability"``
uses ``lambda = dalpha dbeta / (2 pi^2)`` as in the statistical model;
``measure="area"`` uses ``dalpha dbeta`` itself, the normalisation in which
the unattenuated transform has singular values ``sqrt(4 pi / (n + 1))`` on
normalised Zernike polynomials.  The two differ by the factor
``FAN_BEAM_AREA = 2 pi^2`` in every squared norm.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .fields import CoefficientField, MatrixField, ZeroField, dimension_for, n_max_for, project_to_coefficients, so_dim
from .geometry import FAN_BEAM_AREA, QuadratureRule, boundary_quadrature
from .transport import (
    OdeOptions,
    attenuated_xray,
    first_derivative,
    scattering_data,
    scattering_with_gradient,
    second_derivative,
)
from .zernike import basis_degrees, boundary_psi_normalized, ell_to_nk, sobolev_norm, zernike_eval

__all__ = [
    "GradientMatrix",
    "measure_scale",
    "gradient_matrix",
    "direct_derivative_norm",
    "stability_scan",
    "svd_identity_check",
    "expected_hessian_form",
    "expected_hessian_matrix",
    "curvature_scan",
    "normal_form_check",
]


def measure_scale(measure: str) -> float:
    if measure == "area":
        return FAN_BEAM_AREA
    if measure == "probability":
        return 1.0
    raise ValueError("measure must be 'area' or 'probability'")


@dataclass
class GradientMatrix:
    """Rows ``sqrt(w) vec(dC_theta[b_j])`` stacked over quadrature nodes.

    ``||A h||^2`` is the quadrature of ``||dC_theta[h]||_F^2`` in the chosen measure.
    """

    A: np.ndarray
    theta: np.ndarray
    m: int
    measure: str

    def sigma_min(self) -> float:
        return float(np.linalg.svd(self.A, compute_uv=False)[-1])

    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.A, compute_uv=False)


def _rule(rule, D=None, m=2):
    if rule is not None:
        return rule
    n_max = 0 if D is None else n_max_for(D, m)
    return boundary_quadrature(2 * n_max + 16, 4 * n_max + 32)


def gradient_matrix(theta, m: int, rule: QuadratureRule | None = None, opts: OdeOptions = OdeOptions(), measure="area"):
    """Assemble the ``(M m^2) x D`` matrix of the linearised forward map at ``theta``."""
    f = CoefficientField(theta, m)
    rule = _rule(rule, f.D, m)
    _, dC = scattering_with_gradient(f, rule.nodes, opts)
    w = rule.weights * measure_scale(measure)
    rows = np.sqrt(w)[:, None, None, None] * dC  # (M, D, m, m)
    A = rows.transpose(0, 2, 3, 1).reshape(-1, f.D)
    return GradientMatrix(A, f.theta.copy(), m, measure)


def direct_derivative_norm(theta, h, m: int, rule: QuadratureRule, opts: OdeOptions = OdeOptions(), measure="area"):
    """``||dC_theta[h]||`` by quadrature of per-node directional derivatives."""
    d = first_derivative(CoefficientField(theta, m), CoefficientField(h, m), rule.nodes, opts)
    w = rule.weights * measure_scale(measure)
    return float(math.sqrt(np.sum(w * np.sum(d * d, axis=(1, 2)))))


def stability_scan(truth: MatrixField, D_list, rule=None, opts: OdeOptions = OdeOptions(), measure="area"):
    """``(D, sigma_min^2, sigma_min^2 sqrt(D))`` at the projection of ``truth`` onto each ``E_D``.

    ``rule=None`` picks a rule adapted to each ``D``.
    """
    rows = []
    for D in D_list:
        theta = project_to_coefficients(truth, D) if not isinstance(truth, ZeroField) else np.zeros(D)
        G = gradient_matrix(theta, truth.m, _rule(rule, D, truth.m), opts, measure)
        s2 = G.sigma_min() ** 2
        rows.append((int(D), s2, s2 * math.sqrt(D)))
    return rows


def _zhat(n, k):
    c = math.sqrt((n + 1) / math.pi)

    def g(pts):
        z = pts[:, 0] + 1j * pts[:, 1]
        return c * zernike_eval(n, k, z)

    return g


def svd_identity_check(n_max: int, rule: QuadratureRule | None = None, opts: OdeOptions = OdeOptions()):
    """Worst deviations in the singular value decomposition of the plain ray transform.

    For ``0 <= k <= n <= n_max`` compares ``||I_0 Z^_nk||`` and
    ``|<I_0 Z^_nk, psi^+_nk>|`` (area measure, ``psi^`` normalised there) with
    ``sqrt(4 pi / (n + 1))`` and records the largest cross inner product
    ``|<I_0 Z^_nk, psi^+_{n'k'}>|``.

    Returns
    -------
    dict with keys ``norm``, ``diag``, ``cross`` and ``worst`` (max of all three).
    """
    if rule is None:
        rule = boundary_quadrature(2 * n_max + 16, 4 * n_max + 32)
    w = rule.weights * FAN_BEAM_AREA
    a, b = rule.nodes[:, 0], rule.nodes[:, 1]
    idx = [(n, k) for n in range(n_max + 1) for k in range(n + 1)]
    images = np.array([attenuated_xray(_zhat(n, k), rule.nodes, opts) for n, k in idx])
    # area-normalised psi^ is the probability-normalised one over sqrt(2 pi^2)
    psis = np.array([boundary_psi_normalized(n, k, 1, a, b) for n, k in idx]) / math.sqrt(FAN_BEAM_AREA)
    gram = (images * w) @ np.conj(psis).T
    target = np.array([math.sqrt(4 * math.pi / (n + 1)) for n, _ in idx])
    norms = np.sqrt(np.real(np.sum(w * np.abs(images) ** 2, axis=1)))
    dev_norm = float(np.max(np.abs(norms - target)))
    dev_diag = float(np.max(np.abs(np.abs(np.diag(gram)) - target)))
    off = np.abs(gram - np.diag(np.diag(gram)))
    dev_cross = float(off.max()) if len(idx) > 1 else 0.0
    return {"norm": dev_norm, "diag": dev_diag, "cross": dev_cross, "worst": max(dev_norm, dev_diag, dev_cross)}


def expected_hessian_form(truth: MatrixField, theta, h, rule: QuadratureRule, opts: OdeOptions = OdeOptions(),
                          measure="probability", C_star=None):
    """``int ||dC[h]||^2 - <C_truth - C_theta, d2C[h]> dlambda``.

    This is ``-E h^T Hess(l_N / N) h`` for data generated from ``truth``.
    """
    m = truth.m
    f = CoefficientField(theta, m)
    hf = CoefficientField(h, m)
    w = rule.weights * measure_scale(measure)
    if C_star is None:
        C_star = scattering_data(truth, rule.nodes, opts)
    C = scattering_data(f, rule.nodes, opts)
    d1 = first_derivative(f, hf, rule.nodes, opts)
    d2 = second_derivative(f, hf, rule.nodes, opts)
    integrand = np.sum(d1 * d1, axis=(1, 2)) - np.sum((C_star - C) * d2, axis=(1, 2))
    return float(np.sum(w * integrand))


def expected_hessian_matrix(truth: MatrixField, theta, rule: QuadratureRule, opts: OdeOptions = OdeOptions(),
                            measure="probability"):
    """``D x D`` matrix of :func:`expected_hessian_form`.

    The first term is ``A^T A`` from the gradient matrix; the curvature term is
    assembled by polarisation of the second derivative.
    """
    m = truth.m
    theta = np.asarray(theta, dtype=float)
    D = len(theta)
    f = CoefficientField(theta, m)
    w = rule.weights * measure_scale(measure)
    C_star = scattering_data(truth, rule.nodes, opts)
    C, dC = scattering_with_gradient(f, rule.nodes, opts)
    R = C_star - C
    first = np.einsum("n,nipq,njpq->ij", w, dC, dC)

    def q2(h):
        d2 = second_derivative(f, CoefficientField(h, m), rule.nodes, opts)
        return float(np.sum(w * np.sum(R * d2, axis=(1, 2))))

    if not np.any(R):
        return first
    eye = np.eye(D)
    diag = np.array([q2(eye[j]) for j in range(D)])
    B = np.diag(diag)
    for i in range(D):
        for j in range(i + 1, D):
            B[i, j] = B[j, i] = 0.5 * (q2(eye[i] + eye[j]) - diag[i] - diag[j])
    return first - B


def curvature_scan(truth: MatrixField, D: int, eta: float, n_probe: int, rule: QuadratureRule | None = None,
                   opts: OdeOptions = OdeOptions(), seed: int = 0, theta_star=None):
    """``lambda_min(-E Hess l) sqrt(D)`` at probes drawn uniformly from the ball ``B(theta_star, eta)``.

    Returns the per-probe values (minimum first).
    """
    rule = _rule(rule, D, truth.m)
    if theta_star is None:
        theta_star = project_to_coefficients(truth, D) if not isinstance(truth, ZeroField) else np.zeros(D)
    rng = np.random.default_rng(seed)
    vals = []
    for _ in range(n_probe):
        d = rng.standard_normal(D)
        d *= eta * rng.uniform() ** (1.0 / D) / np.linalg.norm(d)
        H = expected_hessian_matrix(truth, theta_star + d, rule, opts)
        vals.append(float(np.linalg.eigvalsh(0.5 * (H + H.T))[0]) * math.sqrt(D))
    return np.sort(np.array(vals))


def normal_form_check(theta, f_coeffs, m: int, rule: QuadratureRule | None = None, opts: OdeOptions = OdeOptions(),
                      attenuation="left", measure="area"):
    """Ratio ``||f||^2_{H^-1/2} / ||I_Phi f||^2`` for ``f`` in ``E_D``.

    ``attenuation`` selects left multiplication by ``Phi_theta`` (``"left"``)
    or the commutator ``[Phi_theta, .]`` (``"commutator"``).
    """
    f_coeffs = np.asarray(f_coeffs, dtype=float)
    if not np.any(f_coeffs):
        raise ValueError("f = 0: ratio undefined")
    phi = CoefficientField(theta, m)
    g = CoefficientField(f_coeffs, m)
    rule = _rule(rule, len(f_coeffs), m)
    right = phi if attenuation == "commutator" else None
    if attenuation not in ("left", "commutator"):
        raise ValueError("attenuation must be 'left' or 'commutator'")
    img = attenuated_xray(g, rule.nodes, opts, left=phi, right=right)
    w = rule.weights * measure_scale(measure)
    denom = float(np.sum(w * np.sum(img * img, axis=(1, 2))))
    return sobolev_norm(f_coeffs, -0.5, so_dim(m)) ** 2 / denom
