"""Log-concave surrogate of the posterior around a base point ``theta_init``.

With ``r = ||theta - theta_init||`` the surrogate log-density is

    alpha(r / eta) * (l_N(theta) - l_0) + l_0 - K * gamma_eta(r) + log_prior(theta)

where ``gamma_eta`` is the mollified convex tail ``(t - 5 eta / 8)_+^2``
smoothed at bandwidth ``eta / 8`` and ``alpha`` a smooth cutoff equal to one on
``[0, 3/4]`` and zero on ``[7/8, inf)``.  ``l_0 = l_N(theta_init)`` is an
additive constant (zero when ``center_likelihood`` is off).  It leaves the
density unchanged wherever ``alpha = 1``, but keeps the cutoff from multiplying
the large raw value of ``l_N`` inside the transition band, where that product
would otherwise break concavity.  For ``r <= eta / 2`` the evaluation returns
:func:`log_posterior` itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
import math
import warnings

import numpy as np
from scipy.integrate import quad
from scipy.special import expit

from .model import PosteriorContext, log_likelihood, log_posterior, log_prior

__all__ = [
    "SurrogateSpec",
    "mollifier",
    "mollifier_constant",
    "gamma_eta",
    "alpha_cutoff",
    "default_eta",
    "default_K",
    "make_surrogate_spec",
    "surrogate_logpost",
    "logconcavity_probe",
]


def _raw_bump(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
    return out


@lru_cache(maxsize=1)
def _moments():
    f = lambda u: math.exp(-1.0 / (1.0 - u * u))
    z = quad(f, -1.0, 1.0, epsabs=1e-15, epsrel=1e-13, limit=200)[0]
    m2 = quad(lambda u: u * u * f(u), -1.0, 1.0, epsabs=1e-15, epsrel=1e-13, limit=200)[0]
    return 1.0 / z, m2 / z


def mollifier_constant() -> float:
    """Normalising constant ``c`` of ``phi(u) = c exp(-1/(1-u^2))`` (about 2.25228)."""
    return _moments()[0]


def mollifier(x, h: float):
    """``phi_h(x) = phi(x / h) / h``, supported on ``[-h, h]`` with unit mass."""
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    return mollifier_constant() * _raw_bump(np.asarray(x, dtype=float) / h) / h


@lru_cache(maxsize=8)
def _gl(n: int):
    return np.polynomial.legendre.leggauss(n)


def _partial_moments(y: float, nodes: int):
    """``int_{-1}^{y} u^j phi(u) du`` for ``j = 0, 1, 2``."""
    if y <= -1.0:
        return 0.0, 0.0, 0.0
    if y >= 1.0:
        return 1.0, 0.0, _moments()[1]
    x, w = _gl(nodes)
    half = 0.5 * (y + 1.0)
    u = -1.0 + half * (x + 1.0)
    pw = half * w * mollifier_constant() * _raw_bump(u)
    return float(pw.sum()), float(pw @ u), float(pw @ (u * u))


def gamma_eta(t: float, eta: float, nodes: int = 64):
    """Mollified tail ``[phi_{eta/8} * (. - 5 eta/8)_+^2](t)`` and its derivative.

    With ``a = t - 5 eta / 8`` and ``h = eta / 8``, only the part of the kernel
    below ``a`` contributes:
    ``gamma = a^2 M0 - 2 a h M1 + h^2 M2``, ``gamma' = 2 (a M0 - h M1)``, where
    ``Mj`` are partial moments of the unit mollifier up to ``min(1, a / h)``.
    """
    h = eta / 8.0
    a = t - 5.0 * eta / 8.0
    if a <= -h:
        return 0.0, 0.0
    M0, M1, M2 = _partial_moments(a / h, nodes)
    value = a * a * M0 - 2.0 * a * h * M1 + h * h * M2
    deriv = 2.0 * (a * M0 - h * M1)
    return max(value, 0.0), max(deriv, 0.0)


def alpha_cutoff(t: float):
    """Smooth cutoff: 1 on ``[0, 3/4]``, 0 on ``[7/8, inf)``; returns ``(value, derivative)``.

    Built from ``S(u) = B(u) / (B(u) + B(1-u))``, ``B(u) = exp(-1/u)``, as
    ``1 - S(8 (t - 3/4))``.
    """
    u = 8.0 * (t - 0.75)
    if u <= 0.0:
        return 1.0, 0.0
    if u >= 1.0:
        return 0.0, 0.0
    q = 1.0 / u - 1.0 / (1.0 - u)
    S = float(expit(-q))
    dq = -1.0 / u**2 - 1.0 / (1.0 - u) ** 2
    dS = -S * (1.0 - S) * dq
    return 1.0 - S, -8.0 * dS


def default_eta(D: int, N: int) -> float:
    return 1.0 / (D**2 * math.log(N))


def default_K(N: int, eta: float) -> float:
    return float(math.ceil(N * math.log(N) / eta**2))


@dataclass
class SurrogateSpec:
    """Surrogate parameters.

    Attributes
    ----------
    eta : float
        Radius of the region where the surrogate equals the posterior is ``eta / 2``.
    K : float
        Tail stiffness.
    theta_init : numpy.ndarray
        Base point.
    conv_nodes : int
        Gauss nodes for the mollification integral.
    center_likelihood : bool
        Subtract ``l_N(theta_init)`` before applying the cutoff.
    loglik_offset : float or None
        Cached ``l_N(theta_init)``; filled on first use.
    """

    eta: float
    K: float
    theta_init: np.ndarray
    conv_nodes: int = 64
    center_likelihood: bool = True
    loglik_offset: float | None = field(default=None)

    def __post_init__(self):
        self.theta_init = np.asarray(self.theta_init, dtype=float)
        if self.eta <= 0 or self.K <= 0:
            raise ValueError("eta and K must be positive")

    def check_K(self, N: int) -> bool:
        ok = self.K >= N * math.log(N) / self.eta**2
        if not ok:
            warnings.warn(f"K={self.K:.3g} below N ln N / eta^2", RuntimeWarning, stacklevel=2)
        return ok

    def offset(self, ctx: PosteriorContext) -> float:
        if not self.center_likelihood:
            return 0.0
        if self.loglik_offset is None:
            self.loglik_offset = log_likelihood(self.theta_init, ctx)[0]
        return self.loglik_offset

    def describe(self) -> dict:
        return {
            "eta": self.eta,
            "K": self.K,
            "conv_nodes": self.conv_nodes,
            "center_likelihood": self.center_likelihood,
        }


def make_surrogate_spec(ctx: PosteriorContext, theta_init, eta=None, K=None, **kw) -> SurrogateSpec:
    """Spec with the default ``eta = 1 / (D^2 ln N)`` and ``K = ceil(N ln N / eta^2)``."""
    N, D = ctx.dataset.N, ctx.D
    eta = default_eta(D, N) if eta is None else float(eta)
    K = default_K(N, eta) if K is None else float(K)
    spec = SurrogateSpec(eta, K, theta_init, **kw)
    spec.check_K(N)
    return spec


def surrogate_logpost(theta, ctx: PosteriorContext, spec: SurrogateSpec):
    """Value and gradient of the surrogate log-density (prior included)."""
    theta = np.asarray(theta, dtype=float)
    diff = theta - spec.theta_init
    r = float(np.linalg.norm(diff))
    if r <= 0.5 * spec.eta:
        return log_posterior(theta, ctx)
    unit = diff / r
    a, da = alpha_cutoff(r / spec.eta)
    g, dg = gamma_eta(r, spec.eta, spec.conv_nodes)
    pv, pg = log_prior(theta, ctx.prior)
    l0 = spec.offset(ctx)
    value = l0 - spec.K * g + pv
    grad = pg - (spec.K * dg) * unit
    if a > 0.0:
        lv, lg = log_likelihood(theta, ctx)
        value += a * (lv - l0)
        grad = grad + a * lg + ((lv - l0) * da / spec.eta) * unit
    return value, grad


def _fd_hessian(grad_fn, theta, step):
    D = len(theta)
    H = np.empty((D, D))
    for j in range(D):
        e = np.zeros(D)
        e[j] = step
        H[:, j] = (grad_fn(theta + e) - grad_fn(theta - e)) / (2.0 * step)
    return 0.5 * (H + H.T)


def logconcavity_probe(ctx: PosteriorContext, spec: SurrogateSpec, n_points: int = 200, seed: int = 0, step=None):
    """Smallest eigenvalue of the finite-difference Hessian of ``-log pi~`` over probes.

    Probes are stratified in radius around ``theta_init``: a third in
    ``[0, eta/2]``, a third in ``[eta/2, eta]`` (which contains the cutoff
    band) and the rest in ``[eta, 4 eta]``.

    Returns
    -------
    min_eig : float
    worst_point : numpy.ndarray
    eigs : numpy.ndarray
        Smallest eigenvalue at each probe.
    """
    rng = np.random.default_rng(seed)
    D = len(spec.theta_init)
    step = spec.eta * 1e-4 if step is None else step
    bands = [(0.0, 0.5), (0.5, 1.0), (1.0, 4.0)]
    eigs = np.empty(n_points)
    pts = np.empty((n_points, D))
    for i in range(n_points):
        lo, hi = bands[min(3 * i // n_points, 2)]
        d = rng.standard_normal(D)
        d /= np.linalg.norm(d)
        r = spec.eta * rng.uniform(lo, hi)
        # keep finite-difference stencils on one side of the exact-match boundary
        if abs(r - 0.5 * spec.eta) < 2 * step:
            r = 0.5 * spec.eta - 2 * step
        th = spec.theta_init + r * d
        H = _fd_hessian(lambda x: surrogate_logpost(x, ctx, spec)[1], th, step)
        eigs[i] = np.linalg.eigvalsh(-H)[0]
        pts[i] = th
    worst = int(np.argmin(eigs))
    return float(eigs[worst]), pts[worst], eigs
