import itertools
import math

import numpy as np
import pytest

from conftest import small_context
from nabx.langevin import (
    NOISE_BLOCK,
    ChainDivergence,
    ChainState,
    NoiseStream,
    SamplerConfig,
    autocorrelation,
    chain_diagnostics,
    effective_sample_size,
    run,
    run_chain,
    sliced_wasserstein2,
    step,
    step_size_heuristic,
    wasserstein2_empirical,
)
from nabx.model import delta_N
from nabx.surrogate import default_eta, make_surrogate_spec


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            SamplerConfig(0.0, 10)
        with pytest.raises(ValueError):
            SamplerConfig(0.1, 10, burn_in=10)
        with pytest.raises(ValueError):
            SamplerConfig(0.1, 10, target="mala")

    @pytest.mark.parametrize("k,b,t", [(100, 10, 3), (50, 0, 1), (1000, 999, 7)])
    def test_sample_count(self, k, b, t):
        cfg = SamplerConfig(0.01, k, b, t)
        out = run(lambda th: -th, np.zeros(2), cfg)
        assert len(out.samples) == cfg.n_samples == (k - b) // t
        assert len(out.grad_norms) == k and out.accept_all


class TestNoise:
    def test_order_independent(self):
        a = NoiseStream(5, 3)
        ks = [0, 3000, 7, NOISE_BLOCK, NOISE_BLOCK - 1, 3000]
        first = [a(k).copy() for k in ks]
        b = NoiseStream(5, 3)
        for k, v in zip(reversed(ks), reversed(first)):
            np.testing.assert_array_equal(b(k), v)

    def test_seeds_differ(self):
        assert not np.array_equal(NoiseStream(1, 4)(0), NoiseStream(2, 4)(0))

    def test_standard_normal(self):
        s = NoiseStream(0, 2)
        x = np.array([s(k) for k in range(20_000)])
        np.testing.assert_allclose(x.mean(0), 0, atol=0.03)
        np.testing.assert_allclose(x.var(0), 1, atol=0.03)


class TestStep:
    def test_pure_diffusion(self):
        gamma, k = 0.05, 5
        finals = []
        for seed in range(10_000):
            out = run(lambda th: np.zeros(2), np.zeros(2), SamplerConfig(gamma, k, seed=seed))
            finals.append(out.state.theta)
        finals = np.array(finals)
        v = 2 * gamma * k
        se = v * math.sqrt(2 / len(finals))
        assert np.all(np.abs(finals.var(0) - v) <= 3 * se)

    def test_single_step_formula(self):
        noise = NoiseStream(3, 4)
        st = ChainState(np.ones(4), 0)
        new = step(st, lambda th: -2 * th, 0.1, noise)
        np.testing.assert_allclose(new.theta, np.ones(4) - 0.2 + math.sqrt(0.2) * NoiseStream(3, 4)(0))
        assert new.k == 1

    def test_small_gamma(self):
        noise = NoiseStream(0, 3)
        st = ChainState(np.zeros(3), 0)
        assert np.linalg.norm(step(st, lambda th: -th, 1e-12, noise).theta) < 1e-5

    def test_gaussian_stationary_variance(self):
        sigma, D = 1.3, 8
        gamma = sigma**2 / 10
        out = run(lambda th: -th / sigma**2, np.zeros(D), SamplerConfig(gamma, 200_000, 1000, seed=4))
        target = sigma**2 / (1 - gamma / (2 * sigma**2))
        assert out.samples.var(axis=0).mean() == pytest.approx(target, rel=0.02)

    def test_divergence(self):
        def g(th):
            return np.full_like(th, np.nan) if th[0] > 5 else np.ones_like(th)

        with pytest.raises(ChainDivergence) as ei:
            run(g, np.zeros(2), SamplerConfig(1.0, 100))
        assert np.all(np.isfinite(ei.value.state.theta)) and ei.value.state.k > 0


class TestRun:
    def test_deterministic(self):
        cfg = SamplerConfig(0.05, 300, 50, 2, seed=9)
        a = run(lambda th: -th, np.ones(3), cfg)
        b = run(lambda th: -th, np.ones(3), cfg)
        assert a.samples.tobytes() == b.samples.tobytes()

    def test_resume(self):
        cfg = SamplerConfig(0.05, 700, 100, 3, seed=2, checkpoint_every=250)
        parts = []
        full = run(lambda th: -th, np.ones(3), cfg, checkpoint=parts.append)
        assert [p.state.k for p in parts] == [250, 500]
        for p in parts:
            resumed = run(lambda th: -th, None, cfg, resume=p)
            assert resumed.samples.tobytes() == full.samples.tobytes()
            assert resumed.grad_norms.tobytes() == full.grad_norms.tobytes()

    def test_surrogate_equals_posterior_in_warm_region(self):
        ctx, truth = small_context(seed=3, N=30)
        spec = make_surrogate_spec(ctx, truth.theta)
        a = run_chain(ctx, spec, SamplerConfig(1e-9, 60, 10, 1, seed=1, target="surrogate"))
        b = run_chain(ctx, spec, SamplerConfig(1e-9, 60, 10, 1, seed=1, target="posterior"))
        assert np.linalg.norm(a.samples - truth.theta, axis=1).max() < spec.eta / 2
        assert a.samples.tobytes() == b.samples.tobytes()
        assert np.all(np.isfinite(a.samples.mean(0)))
        # within six prior standard deviations
        assert np.all(np.abs(a.samples.mean(0)) <= 6 / np.sqrt(ctx.prior.precision()))


def heuristic_oracle(eps, D, N, alpha, eta):
    d = N ** (-alpha / (2 * alpha + 2))
    mb = N * D**-0.5 + D**alpha * N * d * d
    lam = N * math.log(N) / eta**2 + D**alpha * N * d * d
    return min(eps**2 * mb**2 / (D * lam**2), eps * mb**1.5 / (D**0.5 * lam**2))


class TestStepSize:
    def test_frozen_desk_value(self):
        eta = 1 / (36 * math.log(500))
        g = step_size_heuristic(0.1, 6, 500, 6.0, eta)
        assert g == pytest.approx(heuristic_oracle(0.1, 6, 500, 6.0, eta), rel=1e-14)
        assert g == pytest.approx(6.449750573533749e-11, rel=1e-12)

    @pytest.mark.parametrize("alpha", [1.0, 2.0])
    def test_monotone_in_D_with_default_eta(self, alpha):
        # likelihood terms dominate the curvature constants for moderate alpha
        N = 500
        gs = [step_size_heuristic(0.1, D, N, alpha, default_eta(D, N)) for D in (3, 6, 10, 15, 21, 28)]
        assert np.all(np.diff(gs) <= 0)

    def test_prior_term_dominates_at_large_alpha(self):
        # the D^alpha N delta_N^2 term in both constants makes gamma grow with D at alpha=6
        N = 500
        gs = [step_size_heuristic(0.1, D, N, 6.0, default_eta(D, N)) for D in (6, 10, 15, 21)]
        assert np.all(np.diff(gs) > 0)

    def test_monotone_in_eps(self):
        es = [step_size_heuristic(e, 6, 500, 6.0, 0.01) for e in (1e-3, 0.01, 0.1, 1.0, 10.0)]
        assert np.all(np.diff(es) > 0)

    @pytest.mark.parametrize("eps", [1e-4, 0.1, 10.0, 1e4])
    def test_eps_scaling(self, eps):
        r = step_size_heuristic(2 * eps, 6, 500, 6.0, 0.005) / step_size_heuristic(eps, 6, 500, 6.0, 0.005)
        assert min(abs(r - 2), abs(r - 4)) < 1e-9

    def test_multiplier(self):
        assert step_size_heuristic(0.1, 6, 500, 6.0, 0.01, 3.0) == pytest.approx(
            3 * step_size_heuristic(0.1, 6, 500, 6.0, 0.01))


class TestWasserstein:
    def test_identical(self):
        A = np.random.default_rng(0).standard_normal((50, 3))
        assert wasserstein2_empirical(A, A) == 0.0

    def test_single_points(self):
        assert wasserstein2_empirical([[0.0, 0.0]], [[3.0, 4.0]]) == pytest.approx(5.0)

    def test_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            A, B = rng.standard_normal((2, 4, 3))
            best = min(sum(np.sum((A[i] - B[p[i]]) ** 2) for i in range(4)) for p in itertools.permutations(range(4)))
            assert wasserstein2_empirical(A, B) == pytest.approx(math.sqrt(best / 4), rel=1e-12)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            wasserstein2_empirical(np.zeros((3, 2)), np.zeros((4, 2)))

    def test_translation(self):
        A = np.random.default_rng(2).standard_normal((100, 6))
        d = np.arange(6.0) / 10
        assert wasserstein2_empirical(A, A + d) == pytest.approx(np.linalg.norm(d), rel=1e-12)
        # sliced: exact against the same random directions, unbiased over directions
        U = np.random.default_rng(0).standard_normal((400, 6))
        U /= np.linalg.norm(U, axis=1, keepdims=True)
        oracle = math.sqrt(6 * np.mean((U @ d) ** 2))
        assert sliced_wasserstein2(A, A + d, 400, seed=0) == pytest.approx(oracle, rel=1e-12)
        assert sliced_wasserstein2(A, A + d, 4000) == pytest.approx(np.linalg.norm(d), rel=0.05)

    def test_sliced_vs_exact(self):
        # separated clouds: the comparison is dominated by the separation rather than
        # by the finite-sample noise floor of the exact estimator
        rng = np.random.default_rng(3)
        A = rng.standard_normal((256, 6))
        B = 1.2 * rng.standard_normal((256, 6)) + 2.0
        e = wasserstein2_empirical(A, B)
        s = sliced_wasserstein2(A, B)
        assert abs(s - e) / e <= 0.15

    def test_large_uses_sliced(self):
        rng = np.random.default_rng(4)
        A, B = rng.standard_normal((2, 1100, 3))
        assert wasserstein2_empirical(A, B, n_proj=50, seed=1) == sliced_wasserstein2(A, B, 50, 1)


class TestDiagnostics:
    def test_iid_ess(self):
        x = np.random.default_rng(0).standard_normal(5000)
        assert effective_sample_size(x) == pytest.approx(5000, rel=0.2)

    def test_ar1_ess(self):
        rng = np.random.default_rng(1)
        rho, n = 0.8, 50_000
        x = np.empty(n)
        x[0] = 0
        e = rng.standard_normal(n)
        for i in range(1, n):
            x[i] = rho * x[i - 1] + e[i]
        assert effective_sample_size(x) == pytest.approx(n * (1 - rho) / (1 + rho), rel=0.15)
        assert autocorrelation(x, 3)[1] == pytest.approx(rho, abs=0.02)

    def test_constant(self):
        d = chain_diagnostics(np.ones((100, 3)))
        np.testing.assert_array_equal(d["var"], 0)
        np.testing.assert_array_equal(d["mean"], 1)

    def test_halves(self):
        S = np.random.default_rng(2).standard_normal((90, 4))
        a, b = S[:30], S[30:]
        m = chain_diagnostics(S)["mean"]
        np.testing.assert_allclose(m, (30 * a.mean(0) + 60 * b.mean(0)) / 90, rtol=1e-14)

    def test_columns(self):
        d = chain_diagnostics(np.random.default_rng(3).standard_normal((200, 5)))
        assert set(d) == {"coord", "mean", "var", "acf_1", "acf_5", "acf_10", "ess"}
        assert all(len(v) == 5 for v in d.values())
