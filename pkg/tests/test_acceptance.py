"""Acceptance criteria 1-11, each at its stated tolerance.

Every test records one ``criterion N: PASS|FAIL`` line; the lines are printed
in the terminal summary (see ``conftest.py``) and on stdout with ``-s``.
"""

import json
import math
import os
import time

import numpy as np
import pytest

from conftest import random_points
from nabx import cli
from nabx.config import build_truth, desk_config, ode_options
from nabx.fields import BumpField, CallableField, CoefficientField, dimension_for, project_to_coefficients
from nabx.geometry import boundary_quadrature, disk_quadrature
from nabx.langevin import SamplerConfig, run, run_chain, wasserstein2_empirical
from nabx.model import PosteriorContext, PriorSpec, log_posterior, simulate_dataset
from nabx.spectral import gradient_matrix, stability_scan
from nabx.surrogate import logconcavity_probe, make_surrogate_spec, surrogate_logpost
from nabx.transport import (
    OdeOptions,
    first_derivative,
    pseudolinearisation_residual,
    scattering_data,
    second_derivative,
)
from nabx.zernike import boundary_psi_normalized, real_basis_matrix, zernike_identity_residual

RESULTS = []

J = np.array([[0.0, 1.0], [-1.0, 0.0]])


def record(n, ok, detail):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def unit_ball(center, radius, count, rng):
    D = len(center)
    d = rng.standard_normal((count, D))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return center + d * (radius * rng.uniform(size=(count, 1)) ** (1.0 / D))


@pytest.fixture(scope="module")
def desk():
    cfg = desk_config()
    opts = ode_options(cfg)
    truth = build_truth(cfg)
    ds = simulate_dataset(truth, cfg["N"], cfg["noise_scale"], cfg["seed"], opts)
    ctx = PosteriorContext(ds, PriorSpec(cfg["alpha"], cfg["N"], cfg["D"], cfg["m"]), opts)
    theta_star = project_to_coefficients(truth, cfg["D"])
    return cfg, ctx, theta_star


def test_c01_svd_anchor():
    t0 = time.time()
    dev = []
    for n_max in range(1, 7):
        s = gradient_matrix(np.zeros(dimension_for(n_max, 2)), 2).sigma_min()
        dev.append(abs(s**2 * (n_max + 1) - 4 * math.pi))
    dt = time.time() - t0
    record(1, max(dev) <= 1e-4 and dt < 60,
           f"max |sigma_min^2 (n_max+1) - 4 pi| = {max(dev):.2e} (tol 1e-4), {dt:.1f}s")


def test_c02_stability_scaling():
    t0 = time.time()
    D_list = [dimension_for(n, 2) for n in range(2, 17)] + [168]
    rows = stability_scan(BumpField(2, [[1.0]]), D_list)
    norm = np.array([r[2] for r in rows])
    ratio = norm.max() / norm.min()
    dt = time.time() - t0
    record(2, norm.min() > 0 and ratio <= 5 and dt < 900,
           f"D = 6..168, min sigma^2 sqrt(D) = {norm.min():.4f}, max/min = {ratio:.3f} (tol 5), {dt:.1f}s")


def test_c03_pseudolinearisation():
    rng = np.random.default_rng(3)
    pts = random_points(100, 3)
    worst = 0.0
    for _ in range(10):
        a, b = rng.standard_normal(18), rng.standard_normal(18)
        a *= rng.uniform(0.1, 1.0) / np.linalg.norm(a)
        b *= rng.uniform(0.1, 1.0) / np.linalg.norm(b)
        worst = max(worst, pseudolinearisation_residual(a, b, pts, m=3).max())
    record(3, worst <= 1e-6, f"max residual over 10 pairs x 100 chords (m=3) = {worst:.2e} (tol 1e-6)")


def test_c04_derivatives():
    def C(m, th, pts):
        return scattering_data(CoefficientField(th, m), pts)

    e1 = e2 = 0.0
    for m in (2, 3):
        rng = np.random.default_rng(40 + m)
        D = 6 * m * (m - 1) // 2
        for i in range(20):
            th = rng.standard_normal(D)
            th *= rng.uniform(0.2, 1.0) / np.linalg.norm(th)
            h = rng.standard_normal(D)
            h /= np.linalg.norm(h)
            p = random_points(1, 1000 * m + i)
            t1, t2 = 1e-4, 1e-3
            fd1 = (C(m, th + t1 * h, p) - C(m, th - t1 * h, p)) / (2 * t1)
            fd2 = (C(m, th + t2 * h, p) - 2 * C(m, th, p) + C(m, th - t2 * h, p)) / t2**2
            d1 = first_derivative(th, h, p, m=m)
            d2 = second_derivative(th, h, p, m=m)
            e1 = max(e1, np.linalg.norm(d1 - fd1) / np.linalg.norm(fd1))
            e2 = max(e2, np.linalg.norm(d2 - fd2) / np.linalg.norm(fd2))
    record(4, e1 <= 1e-6 and e2 <= 1e-4,
           f"relative FD error: first {e1:.2e} (tol 1e-6), second {e2:.2e} (tol 1e-4), 20 triples, m=2,3")


def test_c05_constant_field():
    def rot(x):
        c, s = math.cos(x), math.sin(x)
        return np.array([[c, s], [-s, c]])

    pts = random_points(1000, 5)
    tau = 2 * np.cos(pts[:, 0])
    worst = 0.0
    for a in (0.5, 2.0):
        f = CallableField(lambda p, a=a: np.broadcast_to(a * J, (len(p), 2, 2)), 2, "const")
        C = scattering_data(f, pts)
        ref = np.array([rot(a * t) for t in tau])
        worst = max(worst, np.linalg.norm(C - ref, axis=(1, 2)).max())
    f2 = CallableField(lambda p: np.broadcast_to(2.0 * J, (len(p), 2, 2)), 2, "const")
    sub = pts[:50]
    ref = np.array([rot(2.0 * t) for t in tau[:50]])
    errs = [np.linalg.norm(scattering_data(f2, sub, OdeOptions(rel_step=h, min_step=1e-6, gauss_nodes=1)) - ref,
                           axis=(1, 2)).max() for h in (0.1, 0.05, 0.025)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    ok = worst <= 1e-8 and all(abs(r - 16) <= 3 for r in ratios)
    record(5, ok, f"max ||C - exp(tau a J)|| = {worst:.2e} (tol 1e-8), RK4 ratios {ratios[0]:.2f}, {ratios[1]:.2f}")


def test_c06_surrogate_exact_match(desk):
    cfg, ctx, theta_star = desk
    spec = make_surrogate_spec(ctx, theta_star)
    rng = np.random.default_rng(6)
    bad = 0
    for th in unit_ball(spec.theta_init, spec.eta / 2, 100, rng):
        v, g = surrogate_logpost(th, ctx, spec)
        v0, g0 = log_posterior(th, ctx)
        bad += not (v == v0 and g.tobytes() == g0.tobytes())
    record(6, bad == 0, f"{100 - bad}/100 probes bitwise equal in value and gradient")


def test_c07_logconcavity(desk):
    cfg, ctx, theta_star = desk
    spec = make_surrogate_spec(ctx, theta_star)
    lo, worst, _ = logconcavity_probe(ctx, spec, 200, seed=cfg["seed"])
    record(7, lo > 0, f"min Hessian eigenvalue of -log density over 200 probes = {lo:.4g} (must be > 0)")


def test_c08_ula_gaussian():
    t0 = time.time()
    sigma, D = 1.3, 8
    gamma = sigma**2 / 10
    out = run(lambda th: -th / sigma**2, np.zeros(D), SamplerConfig(gamma, 1_000_000, 1000, seed=8))
    target = sigma**2 / (1 - gamma / (2 * sigma**2))
    var = out.samples.var(axis=0).mean()
    rel = abs(var / target - 1)
    dt = time.time() - t0
    record(8, rel <= 0.02 and dt < 120, f"variance {var:.5f} vs {target:.5f}, rel err {rel:.2e} (tol 0.02), {dt:.1f}s")


def test_c09_end_to_end(desk):
    cfg, ctx, theta_star = desk
    spec = make_surrogate_spec(ctx, theta_star)
    main = run_chain(ctx, spec, SamplerConfig(2e-9, 3000, 500, 2, seed=91))
    half = run_chain(ctx, spec, SamplerConfig(1e-9, 6000, 1000, 4, seed=92))
    S, H = main.samples, half.samples
    D = cfg["D"]
    mean_err = float(np.linalg.norm(S.mean(axis=0) - theta_star))
    sd = float(np.mean(S.std(axis=0)))
    bound = 3 * sd * math.sqrt(D)
    prior = ctx.prior.sample(len(S), seed=93)
    w_half = wasserstein2_empirical(S, H)
    w_prior = wasserstein2_empirical(S, prior)
    ok = mean_err <= bound and w_half < w_prior
    record(9, ok, f"|mean - theta*| = {mean_err:.3e} <= {bound:.3e}; W2(chain, half-step) = {w_half:.3e} "
                  f"< W2(chain, prior) = {w_prior:.3e}")


def test_c10_basis_suite():
    r = disk_quadrature(12, 24)
    B = real_basis_matrix(66, r.nodes)
    gram = np.abs((B * r.weights[:, None]).T @ B - np.eye(66)).max()

    rng = np.random.default_rng(10)
    ident = 0.0
    for which in (1, 2, 3):
        rad = np.sqrt(rng.uniform(0, 0.99**2, 100))
        z = rad * np.exp(2j * math.pi * rng.uniform(size=100))
        for n in range(9):
            for k in range(n + 1):
                ident = max(ident, float(np.max(zernike_identity_residual(n, k, z, which))))

    br = boundary_quadrature(64, 64)
    a, b = br.nodes.T
    idx = [(n, k, s) for n in range(6) for k in range(n + 1) for s in (1, -1)]
    P = np.array([boundary_psi_normalized(n, k, s, a, b) for n, k, s in idx])
    psi = np.abs((P * br.weights) @ np.conj(P).T - np.eye(len(idx))).max()

    pars = 0.0
    for m, counts in ((2, (3, 10, 21, 36, 60)), (3, (3, 10, 21))):
        d_m = m * (m - 1) // 2
        for count in counts:
            th = rng.standard_normal(count * d_m)
            vals = CoefficientField(th, m)(r.nodes)
            pars = max(pars, abs(math.sqrt(r.integrate(np.sum(vals**2, axis=(1, 2)))) - np.linalg.norm(th)))

    rr, pp = np.meshgrid(np.sqrt(np.linspace(0, 1, 60)), np.linspace(0, 2 * np.pi, 121))
    pts = np.stack([(rr * np.cos(pp)).ravel(), (rr * np.sin(pp)).ravel()], axis=-1)
    band = []
    for D in range(3, 61):
        th = rng.standard_normal((100, D))
        sup = np.array([np.abs(CoefficientField(t, 2).coords(pts)).max() for t in th])
        band.append(np.max(sup / np.linalg.norm(th, axis=1)) / D**0.75)
    ok = gram <= 1e-10 and ident <= 1e-10 and psi <= 1e-8 and pars <= 1e-9 and 0.1 < min(band) and max(band) <= 1
    record(10, ok, f"Gram {gram:.1e}, identities {ident:.1e}, psi {psi:.1e}, Parseval {pars:.1e}, "
                   f"sup/(D^0.75 |theta|) in [{min(band):.2f}, {max(band):.2f}] for D=3..60")


def _outputs(d):
    return {f: open(os.path.join(d, f), "rb").read() for f in sorted(os.listdir(d)) if f != "run_log.json"}


def test_c11_reproducibility(tmp_path):
    cfg = {"N": 100, "ode": {"rel_step": 1.0 / 64, "gauss_nodes": 16},
           "sampler": {"gamma": 1e-9, "k_max": 100, "burn_in": 20, "thinning": 2, "checkpoint_every": 50},
           "scan": {"D_list": [6, 10], "anchor_n_max": [1, 2], "n_max_svd": 3},
           "diagnose": {"prior_samples": 40}}
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    mismatched = []
    for cmd, embedded in (("simulate", "dataset.nabx"), ("sample", "chain.nabx"), ("map", "map.nabx"),
                          ("stability-scan", "manifest.json")):
        a, b = tmp_path / f"{cmd}-a", tmp_path / f"{cmd}-b"
        assert cli.main([cmd, "--config", str(p), "--out", str(a)]) == 0
        assert cli.main([cmd, "--config", str(a / embedded), "--out", str(b), "--threads", "3"]) == 0
        if _outputs(a) != _outputs(b):
            mismatched.append(cmd)
    chain = str(tmp_path / "sample-a" / "chain.nabx")
    a, b = tmp_path / "diag-a", tmp_path / "diag-b"
    cli.main(["diagnose", "--config", str(p), "--out", str(a), chain, chain])
    cli.main(["diagnose", "--config", str(a / "manifest.json"), "--out", str(b), "--threads", "2", chain, chain])
    if _outputs(a) != _outputs(b):
        mismatched.append("diagnose")
    record(11, not mismatched, "5 commands re-run from embedded config with other thread counts: "
                               + ("byte-identical" if not mismatched else f"differ: {mismatched}"))
