"""Unadjusted Langevin algorithm, step-size rule, Wasserstein distances, diagnostics.

Noise for iteration ``k`` depends only on ``(seed, k)``: steps are grouped in
blocks of ``NOISE_BLOCK`` and each block draws from a Philox stream whose
counter starts at ``block << 128``.  Resuming from a checkpoint therefore
reproduces an uninterrupted chain bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
import math

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import NumericalError
from .model import delta_N

__all__ = [
    "SamplerConfig",
    "ChainState",
    "ChainOutput",
    "ChainDivergence",
    "NoiseStream",
    "step",
    "run",
    "run_chain",
    "step_size_heuristic",
    "wasserstein2_empirical",
    "autocorrelation",
    "effective_sample_size",
    "chain_diagnostics",
]

NOISE_BLOCK = 1024


class ChainDivergence(NumericalError):
    """Non-finite gradient; ``state`` holds the last finite iterate."""

    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


@dataclass(frozen=True)
class SamplerConfig:
    gamma: float
    k_max: int
    burn_in: int = 0
    thinning: int = 1
    seed: int = 0
    target: str = "surrogate"
    checkpoint_every: int = 0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.k_max < 1 or self.thinning < 1:
            raise ValueError("k_max and thinning must be positive")
        if not 0 <= self.burn_in < self.k_max:
            raise ValueError("need 0 <= burn_in < k_max")
        if self.target not in ("posterior", "surrogate"):
            raise ValueError("target must be 'posterior' or 'surrogate'")

    @property
    def n_samples(self) -> int:
        return (self.k_max - self.burn_in) // self.thinning

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ChainState:
    theta: np.ndarray
    k: int = 0


class NoiseStream:
    """Standard normal vectors ``xi_k`` in ``R^D`` keyed by ``(seed, k)``."""

    def __init__(self, seed: int, D: int):
        self.seed = int(seed)
        self.D = D
        self._block = -1
        self._buf = None

    def __call__(self, k: int) -> np.ndarray:
        b, off = divmod(k, NOISE_BLOCK)
        if b != self._block:
            bitgen = np.random.Philox(key=self.seed, counter=b << 128)
            self._buf = np.random.Generator(bitgen).standard_normal((NOISE_BLOCK, self.D))
            self._block = b
        return self._buf[off]


def step(state: ChainState, grad_fn, gamma: float, noise: NoiseStream) -> ChainState:
    """One ULA update ``theta + gamma grad + sqrt(2 gamma) xi_k``."""
    g = grad_fn(state.theta)
    if not np.all(np.isfinite(g)):
        raise ChainDivergence(f"non-finite gradient at iteration {state.k}", state)
    xi = noise(state.k)
    return ChainState(state.theta + gamma * g + math.sqrt(2.0 * gamma) * xi, state.k + 1)


@dataclass
class ChainOutput:
    """Retained samples ``(n, D)``, gradient-norm trace and bookkeeping."""

    samples: np.ndarray
    grad_norms: np.ndarray
    state: ChainState
    config: SamplerConfig
    accept_all: bool = True
    meta: dict = field(default_factory=dict)


def run(grad_fn, theta_init, cfg: SamplerConfig, checkpoint=None, resume=None) -> ChainOutput:
    """Run ULA from ``theta_init``.

    Parameters
    ----------
    grad_fn : callable
        ``theta -> grad log density``.
    theta_init : array_like
    cfg : SamplerConfig
    checkpoint : callable, optional
        Called as ``checkpoint(partial_output)`` every ``cfg.checkpoint_every`` steps.
    resume : ChainOutput, optional
        Partial output to continue from; the result equals an uninterrupted run.
    """
    if resume is not None:
        state = ChainState(np.array(resume.state.theta, dtype=float), resume.state.k)
        samples = list(resume.samples)
        norms = list(resume.grad_norms)
    else:
        state = ChainState(np.array(theta_init, dtype=float), 0)
        samples, norms = [], []
    D = len(state.theta)
    noise = NoiseStream(cfg.seed, D)
    gamma = cfg.gamma
    sq = math.sqrt(2.0 * gamma)
    theta = state.theta
    k = state.k
    while k < cfg.k_max:
        g = grad_fn(theta)
        if not np.all(np.isfinite(g)):
            raise ChainDivergence(f"non-finite gradient at iteration {k}", ChainState(theta, k))
        norms.append(float(np.sqrt(g @ g)))
        theta = theta + gamma * g + sq * noise(k)
        k += 1
        if k > cfg.burn_in and (k - cfg.burn_in) % cfg.thinning == 0:
            samples.append(theta)
        if checkpoint is not None and cfg.checkpoint_every and k % cfg.checkpoint_every == 0 and k < cfg.k_max:
            checkpoint(_output(samples, norms, ChainState(theta, k), cfg, D))
    return _output(samples, norms, ChainState(theta, k), cfg, D)


def run_chain(ctx, spec, cfg: SamplerConfig, checkpoint=None, resume=None) -> ChainOutput:
    """ULA on the surrogate (or plain posterior, per ``cfg.target``) started at ``spec.theta_init``."""
    from .model import log_posterior
    from .surrogate import surrogate_logpost

    if cfg.target == "surrogate":
        grad_fn = lambda th: surrogate_logpost(th, ctx, spec)[1]  # noqa: E731
    else:
        grad_fn = lambda th: log_posterior(th, ctx)[1]  # noqa: E731
    return run(grad_fn, spec.theta_init, cfg, checkpoint, resume)


def _output(samples, norms, state, cfg, D):
    arr = np.array(samples, dtype=float).reshape(-1, D)
    return ChainOutput(arr, np.array(norms, dtype=float), state, cfg)


def step_size_heuristic(eps: float, D: int, N: int, alpha: float, eta: float, multiplier: float = 1.0) -> float:
    """``gamma = min(eps^2 mbar^2 / (D Lam^2), eps mbar^{3/2} / (D^{1/2} Lam^2))``.

    ``mbar = N D^{-1/2} + D^alpha N delta_N^2`` bounds the concavity and
    ``Lam = N ln N / eta^2 + D^alpha N delta_N^2`` the gradient Lipschitz
    constant; the unknown proportionality constant is ``multiplier``.
    """
    if min(eps, D, N, alpha, eta) <= 0:
        raise ValueError("all arguments must be positive")
    prior = D**alpha * N * delta_N(N, alpha) ** 2
    mbar = N / math.sqrt(D) + prior
    lam = N * math.log(N) / eta**2 + prior
    g1 = eps**2 * mbar**2 / (D * lam**2)
    g2 = eps * mbar**1.5 / (math.sqrt(D) * lam**2)
    return multiplier * min(g1, g2)


def wasserstein2_empirical(A, B, n_proj: int = 200, seed: int = 0, exact_max: int = 1024) -> float:
    """W2 distance between two empirical measures with uniform weights.

    Up to ``exact_max`` points per side the optimal assignment on squared
    Euclidean costs is solved exactly.  Larger sets use the sliced estimator
    ``sqrt(D * mean_u W2^2(<A,u>, <B,u>))`` over ``n_proj`` random unit
    directions; the factor ``D`` makes it agree with W2 for pure translations
    in expectation over the directions.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise ValueError("dimension mismatch")
    if len(A) <= exact_max and len(B) <= exact_max:
        if len(A) != len(B):
            raise ValueError("exact W2 needs equal sample sizes")
        cost = ((A[:, None, :] - B[None, :, :]) ** 2).sum(-1)
        r, c = linear_sum_assignment(cost)
        return float(math.sqrt(max(cost[r, c].sum() / len(A), 0.0)))
    return sliced_wasserstein2(A, B, n_proj, seed)


def sliced_wasserstein2(A, B, n_proj: int = 200, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    D = A.shape[1]
    U = rng.standard_normal((n_proj, D))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    pa = np.sort(A @ U.T, axis=0)
    pb = np.sort(B @ U.T, axis=0)
    n = max(len(A), len(B))
    q = (np.arange(n) + 0.5) / n
    # quantile functions on a common grid handle unequal sizes
    qa = pa[np.minimum((q * len(A)).astype(int), len(A) - 1)]
    qb = pb[np.minimum((q * len(B)).astype(int), len(B) - 1)]
    return float(math.sqrt(D * np.mean((qa - qb) ** 2)))


def autocorrelation(x, max_lag=None) -> np.ndarray:
    """Sample autocorrelation of a 1-D series via FFT (lags ``0 .. max_lag``)."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    max_lag = n - 1 if max_lag is None else min(max_lag, n - 1)
    xc = x - x.mean()
    var = float(xc @ xc) / n
    if var == 0.0:
        out = np.zeros(max_lag + 1)
        out[0] = 1.0
        return out
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[: max_lag + 1] / n
    return acov / var


def effective_sample_size(x) -> float:
    """ESS with Geyer's initial monotone sequence estimator."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 4:
        return float(n)
    rho = autocorrelation(x)
    if np.all(rho[1:] == 0.0) and np.var(x) == 0.0:
        return float(n)
    n_pairs = (len(rho) - 1) // 2
    gam = rho[0 : 2 * n_pairs : 2] + rho[1 : 2 * n_pairs + 1 : 2]
    # initial positive sequence, then enforce monotonicity
    pos = np.argmax(gam <= 0.0) if np.any(gam <= 0.0) else len(gam)
    gam = np.minimum.accumulate(gam[:pos])
    tau = -1.0 + 2.0 * gam.sum() if len(gam) else 1.0
    return float(n / max(tau, 1.0 / n))


def chain_diagnostics(samples, lags=(1, 5, 10)) -> dict:
    """Per-coordinate mean, variance, autocorrelations and ESS.

    Returns a dict of equal-length columns, one row per coordinate.
    """
    S = np.asarray(samples, dtype=float)
    out = {
        "coord": np.arange(S.shape[1]),
        "mean": S.mean(axis=0),
        "var": S.var(axis=0, ddof=1) if len(S) > 1 else np.zeros(S.shape[1]),
    }
    acs = [autocorrelation(S[:, j], max(lags)) for j in range(S.shape[1])]
    for lag in lags:
        out[f"acf_{lag}"] = np.array([a[lag] if lag < len(a) else np.nan for a in acs])
    out["ess"] = np.array([effective_sample_size(S[:, j]) for j in range(S.shape[1])])
    return out
