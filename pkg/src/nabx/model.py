"""Regression model, Gaussian prior, posterior log-density and MAP estimation.

All log-densities are unnormalised.  The likelihood is
``l_N(theta) = -1/2 sum_i ||Y_i - C_theta(p_i)||_F^2`` (unit noise in the
model, whatever noise level generated the data) and the prior is
``N(0, (N delta_N^2)^-1 Lambda_alpha)`` with ``Lambda_alpha`` diagonal in the
real Zernike basis, ``lambda_ell^-alpha``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .fields import CoefficientField, MatrixField, n_max_for, so_dim
from .fields import project_to_coefficients
from .geometry import QuadratureRule, boundary_quadrature
from .transport import OdeOptions, scattering_data, scattering_with_gradient
from .zernike import eigenvalues

__all__ = [
    "Dataset",
    "PriorSpec",
    "PosteriorContext",
    "MapResult",
    "BiasReport",
    "delta_N",
    "simulate_dataset",
    "log_prior",
    "log_likelihood",
    "log_posterior",
    "map_estimate",
    "bias_norm",
]


def delta_N(N: int, alpha: float, d: int = 2) -> float:
    """Prior scaling ``N^{-alpha / (2 alpha + d)}``."""
    return float(N) ** (-alpha / (2.0 * alpha + d))


@dataclass
class Dataset:
    """Chords ``(alpha_i, beta_i)`` and noisy scattering data ``Y_i``."""

    alpha: np.ndarray
    beta: np.ndarray
    Y: np.ndarray
    m: int
    seed: int = 0
    noise_scale: float = 1.0
    truth: dict = field(default_factory=dict)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        if len(self.alpha) < 1:
            raise ValueError("dataset needs N >= 1")
        if self.Y.shape != (len(self.alpha), self.m, self.m):
            raise ValueError("Y must have shape (N, m, m)")
        if not np.all(np.isfinite(self.Y)):
            raise ValueError("non-finite observations")

    @property
    def N(self) -> int:
        return len(self.alpha)

    @property
    def points(self) -> np.ndarray:
        return np.stack([self.alpha, self.beta], axis=-1)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.alpha[idx], self.beta[idx], self.Y[idx], self.m, self.seed, self.noise_scale, self.truth)


def simulate_dataset(
    truth: MatrixField, N: int, noise_scale: float = 1.0, seed: int = 0, opts: OdeOptions = OdeOptions()
) -> Dataset:
    """Draw ``N`` chords from the normalised boundary measure and noisy data.

    ``alpha`` is uniform on ``[-pi/2, pi/2]`` and ``beta`` uniform on
    ``[0, 2 pi)``; all ``m^2`` noise entries are i.i.d. ``N(0, noise_scale^2)``.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    rng = np.random.default_rng(seed)
    alpha = rng.uniform(-math.pi / 2, math.pi / 2, N)
    beta = rng.uniform(0.0, 2 * math.pi, N)
    eps = rng.standard_normal((N, truth.m, truth.m))
    C = scattering_data(truth, np.stack([alpha, beta], axis=-1), opts)
    return Dataset(alpha, beta, C + noise_scale * eps, truth.m, seed, noise_scale, truth.describe())


@dataclass(frozen=True)
class PriorSpec:
    """Gaussian prior ``N(0, (N delta_N^2)^-1 Lambda_alpha)`` on ``R^D``."""

    alpha: float
    N: int
    D: int
    m: int = 2

    def __post_init__(self):
        if self.alpha <= 0 or self.N < 1:
            raise ValueError("need alpha > 0 and N >= 1")
        n_max_for(self.D, self.m)

    @property
    def delta(self) -> float:
        return delta_N(self.N, self.alpha)

    def precision(self) -> np.ndarray:
        """Diagonal of the prior precision ``N delta_N^2 lambda_ell^alpha``."""
        d_m = so_dim(self.m)
        lam = np.repeat(eigenvalues(self.D // d_m), d_m)
        return self.N * self.delta**2 * lam**self.alpha

    def sample(self, n: int, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return rng.standard_normal((n, self.D)) / np.sqrt(self.precision())


def log_prior(theta, prior: PriorSpec):
    """``-(N delta^2 / 2) sum lambda_ell^alpha theta^2`` and its gradient."""
    theta = np.asarray(theta, dtype=float)
    prec = prior.precision()
    g = -prec * theta
    return 0.5 * float(theta @ g), g


@dataclass
class PosteriorContext:
    """Dataset, prior and solver options, with a one-entry evaluation cache."""

    dataset: Dataset
    prior: PriorSpec
    opts: OdeOptions = field(default_factory=OdeOptions)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.dataset.m != self.prior.m:
            raise ValueError("dataset and prior disagree on m")

    @property
    def m(self) -> int:
        return self.dataset.m

    @property
    def D(self) -> int:
        return self.prior.D


def log_likelihood(theta, ctx: PosteriorContext):
    """Value and gradient of ``-1/2 sum ||Y_i - C_theta(p_i)||^2``.

    One backward sweep per chord provides ``C_theta`` and all ``D`` basis
    derivatives; the reduction over data points has a fixed order.
    """
    theta = np.ascontiguousarray(theta, dtype=float)
    key = theta.tobytes()
    hit = ctx._cache.get("loglik")
    if hit is not None and hit[0] == key:
        return hit[1], hit[2].copy()
    f = CoefficientField(theta, ctx.m)
    C, dC = scattering_with_gradient(f, ctx.dataset.points, ctx.opts)
    R = ctx.dataset.Y - C
    value = -0.5 * float(np.sum(R * R))
    grad = np.einsum("npq,njpq->j", R, dC)
    ctx._cache["loglik"] = (key, value, grad.copy())
    return value, grad


def log_posterior(theta, ctx: PosteriorContext):
    lv, lg = log_likelihood(theta, ctx)
    pv, pg = log_prior(theta, ctx.prior)
    return lv + pv, lg + pg


_EPS = float(np.finfo(float).eps)


@dataclass
class MapResult:
    theta: np.ndarray
    converged: bool
    n_iter: int
    grad_norm: float
    value: float


def map_estimate(target, init, tol: float = 1e-6, max_iter: int = 500, c: float = 1e-4, shrink: float = 0.5):
    """Gradient ascent with Armijo backtracking.

    Parameters
    ----------
    target : PosteriorContext or callable
        A context (maximises :func:`log_posterior`) or ``theta -> (value, grad)``.
    init : array_like
    tol : float
        Stop once ``||grad|| <= tol``.

    Returns
    -------
    MapResult
        Last iterate and a convergence flag; non-convergence is not an error.
    """
    fn = (lambda th: log_posterior(th, target)) if isinstance(target, PosteriorContext) else target
    theta = np.array(init, dtype=float)
    value, grad = fn(theta)
    step = 1.0
    gn = float(np.linalg.norm(grad))
    for it in range(max_iter):
        if gn <= tol:
            return MapResult(theta, True, it, gn, value)
        step *= 2.0
        while True:
            cand = theta + step * grad
            cv, cg = fn(cand)
            if np.isfinite(cv):
                if step * gn**2 > 1e3 * _EPS * (1.0 + abs(value)):
                    if cv >= value + c * step * gn**2:
                        break
                # the predicted gain is below the rounding of the value: accept
                # steps that do not overshoot the maximum along the search line
                elif cg @ grad >= 0.0:
                    break
            step *= shrink
            if step < 1e-300:
                return MapResult(theta, False, it, gn, value)
        theta, value, grad = cand, cv, cg
        gn = float(np.linalg.norm(grad))
    return MapResult(theta, gn <= tol, max_iter, gn, value)


@dataclass
class BiasReport:
    norm: float
    threshold: float
    delta: float

    @property
    def ok(self) -> bool:
        return self.norm <= self.threshold


def bias_norm(
    truth: MatrixField,
    D: int,
    N: int,
    alpha: float,
    rule: QuadratureRule | None = None,
    opts: OdeOptions = OdeOptions(),
    theta_D=None,
) -> BiasReport:
    """``||C_truth - C_{truth,D}||_{L2(lambda)}`` against ``delta_N / (2 sqrt(m) + 1)``."""
    if rule is None:
        rule = boundary_quadrature(24, 48)
    if theta_D is None:
        theta_D = project_to_coefficients(truth, D)
    C_star = scattering_data(truth, rule.nodes, opts)
    C_D = scattering_data(CoefficientField(theta_D, truth.m), rule.nodes, opts)
    err2 = np.sum((C_star - C_D) ** 2, axis=(1, 2))
    d = delta_N(N, alpha)
    return BiasReport(float(np.sqrt(rule.integrate(err2))), d / (2 * math.sqrt(truth.m) + 1), d)
