"""Command-line interface: ``nabx simulate|sample|map|stability-scan|diagnose``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure
(divergence, non-convergence, failed self-checks), 4 I/O error.
Every command prints ``key,value`` lines on stdout and writes a
``manifest.json`` holding the resolved configuration, the library version and
the SHA-256 of each deterministic output file.  Wall-clock timings go to
``run_log.json`` only.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .config import build_truth, load_config, ode_options, resolve_config
from .errors import ConfigError, NumericalError
from .fields import ZeroField, dimension_for, project_to_coefficients
from .geometry import boundary_quadrature
from .io import (
    MAGIC_CHAIN,
    MAGIC_CHECKPOINT,
    MAGIC_THETA,
    read_container,
    read_dataset,
    sha256_file,
    write_container,
    write_csv,
    write_dataset,
)
from .langevin import ChainOutput, ChainState, SamplerConfig, chain_diagnostics, run, wasserstein2_empirical
from .model import PosteriorContext, PriorSpec, bias_norm, log_posterior, log_prior, map_estimate, simulate_dataset
from .spectral import gradient_matrix, stability_scan, svd_identity_check
from .surrogate import SurrogateSpec, surrogate_logpost

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _emit(key, value):
    if isinstance(value, float):
        value = f"{value:.10g}"
    print(f"{key},{value}")


def _write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(json.dumps(obj, sort_keys=True, indent=1, allow_nan=False))
        fh.write("\n")


def _manifest(out, cfg, command, files):
    entries = {os.path.basename(f): sha256_file(f) for f in files}
    _write_json(os.path.join(out, "manifest.json"), {
        "command": command, "version": __version__, "config": cfg, "files": entries,
    })


def _truth_projection(cfg, truth):
    if isinstance(truth, ZeroField):
        return np.zeros(cfg["D"])
    return project_to_coefficients(truth, cfg["D"], check=False)


def _init_vector(spec, cfg, theta_star):
    if isinstance(spec, list):
        return np.array(spec, dtype=float)
    if spec == "zero":
        return np.zeros(cfg["D"])
    return theta_star.copy()


def _dataset(cfg, args, opts, truth):
    if getattr(args, "dataset", None):
        ds, _ = read_dataset(args.dataset)
        if ds.m != cfg["m"]:
            raise ConfigError(f"dataset has m={ds.m}, config has m={cfg['m']}")
        return ds
    return simulate_dataset(truth, cfg["N"], cfg["noise_scale"], cfg["seed"], opts)


def _dataset_digest(ds):
    rec = np.concatenate([ds.alpha[:, None], ds.beta[:, None], ds.Y.reshape(ds.N, -1)], axis=1)
    return hashlib.sha256(np.ascontiguousarray(rec, dtype="<f8").tobytes()).hexdigest()


# ----------------------------------------------------------------- commands


def cmd_simulate(cfg, args, opts):
    truth = build_truth(cfg)
    ds = simulate_dataset(truth, cfg["N"], cfg["noise_scale"], cfg["seed"], opts)
    path = os.path.join(args.out, "dataset.nabx")
    write_dataset(path, ds, {"config": cfg, "version": __version__})
    rule = boundary_quadrature(*cfg["bias_rule"])
    rep = bias_norm(truth, cfg["D"], cfg["N"], cfg["alpha"], rule, opts, _truth_projection(cfg, truth))
    report = {"bias_norm": rep.norm, "threshold": rep.threshold, "delta_N": rep.delta, "within_threshold": rep.ok}
    rpath = os.path.join(args.out, "simulate_report.json")
    _write_json(rpath, report)
    _manifest(args.out, cfg, "simulate", [path, rpath])
    _emit("dataset", path)
    _emit("N", ds.N)
    for k, v in report.items():
        _emit(k, v)
    return EXIT_OK


def _write_checkpoint(path, cfg, part: ChainOutput, extra):
    header = {"format": "nabx-checkpoint", "config": cfg, "version": __version__, "k": part.state.k}
    header.update(extra)
    write_container(path, MAGIC_CHECKPOINT, header, {
        "theta": part.state.theta, "samples": part.samples, "grad_norms": part.grad_norms,
    })


def _read_checkpoint(path, cfg, scfg):
    _, header, arrays = read_container(path, MAGIC_CHECKPOINT)
    if header["config"] != cfg:
        raise ConfigError("checkpoint was written under a different configuration")
    state = ChainState(arrays["theta"], int(header["k"]))
    return ChainOutput(arrays["samples"].reshape(-1, cfg["D"]), arrays["grad_norms"], state, scfg), header


def cmd_sample(cfg, args, opts):
    t0 = time.time()
    truth = build_truth(cfg)
    ds = _dataset(cfg, args, opts, truth)
    theta_star = _truth_projection(cfg, truth)
    sc = cfg["sampler"]
    theta_init = _init_vector(sc["init"], cfg, theta_star)
    if sc["init_perturbation"] > 0:
        d = np.random.default_rng([cfg["seed"], 17]).standard_normal(cfg["D"])
        theta_init = theta_init + sc["init_perturbation"] * cfg["eta"] * d / np.linalg.norm(d)
    ctx = PosteriorContext(ds, PriorSpec(cfg["alpha"], ds.N, cfg["D"], cfg["m"]), opts)
    spec = SurrogateSpec(cfg["eta"], cfg["K"], theta_init, sc["conv_nodes"], sc["center_likelihood"])
    target = args.target or sc["target"]
    scfg = SamplerConfig(sc["gamma"], sc["k_max"], sc["burn_in"], sc["thinning"], cfg["seed"], target,
                         sc["checkpoint_every"])
    guard = 0.5 * cfg["eta"] if args.radius_guard else None

    def grad(theta):
        if target == "surrogate":
            return surrogate_logpost(theta, ctx, spec)[1]
        if guard is not None and np.linalg.norm(theta - theta_init) > guard:
            raise NumericalError("chain left the radius-guard ball around theta_init")
        return log_posterior(theta, ctx)[1]

    extra = {"target": target, "radius_guard": bool(args.radius_guard), "dataset_sha256": _dataset_digest(ds)}
    ck_path = os.path.join(args.out, "checkpoint.nabx")
    resume = None
    if args.resume:
        resume, header = _read_checkpoint(args.resume, cfg, scfg)
        if {k: header.get(k) for k in extra} != extra:
            raise ConfigError("checkpoint target, guard or dataset differ from this run")
    checkpoint = (lambda part: _write_checkpoint(ck_path, cfg, part, extra)) if sc["checkpoint_every"] else None
    out = run(grad, theta_init, scfg, checkpoint=checkpoint, resume=resume)

    header = {"format": "nabx-chain", "config": cfg, "version": __version__, "D": cfg["D"], "m": cfg["m"],
              "n_samples": len(out.samples), "gamma": scfg.gamma, "eta": cfg["eta"], "K": cfg["K"],
              "accept_all": True, "k": out.state.k}
    header.update(extra)
    cpath = os.path.join(args.out, "chain.nabx")
    write_container(cpath, MAGIC_CHAIN, header, {
        "samples": out.samples, "grad_norms": out.grad_norms, "theta_init": theta_init,
        "theta_star": theta_star, "final_theta": out.state.theta,
    })
    diag = chain_diagnostics(out.samples)
    dpath = os.path.join(args.out, "diagnostics.csv")
    _write_wide(dpath, diag, cfg["D"])
    files = [cpath, dpath]
    if args.figures:
        from .plotting import plot_traces

        fpath = os.path.join(args.out, "traces.png")
        plot_traces(out.samples, fpath)
        files.append(fpath)
    _manifest(args.out, cfg, "sample", files)
    _write_json(os.path.join(args.out, "run_log.json"), {"command": "sample", "wall_seconds": time.time() - t0})
    mean = out.samples.mean(axis=0)
    _emit("chain", cpath)
    _emit("n_samples", len(out.samples))
    _emit("gamma", scfg.gamma)
    _emit("mean_error", float(np.linalg.norm(mean - theta_star)))
    _emit("min_ess", float(np.min(diag["ess"])))
    return EXIT_OK


def _write_wide(path, diag, D):
    stats = [k for k in diag if k != "coord"]
    cols = {"stat": np.array(stats, dtype=object)}
    for j in range(D):
        cols[f"theta_{j}"] = np.array([float(diag[s][j]) for s in stats])
    write_csv(path, cols)


def cmd_map(cfg, args, opts):
    truth = build_truth(cfg)
    theta_star = _truth_projection(cfg, truth)
    mc = cfg["map"]
    init = _init_vector(mc["init"], cfg, theta_star)
    prior = PriorSpec(cfg["alpha"], cfg["N"], cfg["D"], cfg["m"])
    report = {"tol": mc["tol"]}
    if args.ridge_selftest:
        a = theta_star + 1.0
        prec = prior.precision()

        def fn(th):
            pv, pg = log_prior(th, prior)
            r = th - a
            return -0.5 * float(r @ r) + pv, -r + pg

        res = map_estimate(fn, init, mc["tol"], mc["max_iter"])
        exact = a / (1.0 + prec)
        report["selftest_error"] = float(np.max(np.abs(res.theta - exact)))
        report["selftest_ok"] = report["selftest_error"] <= mc["tol"]
    else:
        ds = _dataset(cfg, args, opts, truth)
        ctx = PosteriorContext(ds, PriorSpec(cfg["alpha"], ds.N, cfg["D"], cfg["m"]), opts)
        res = map_estimate(ctx, init, mc["tol"], mc["max_iter"])
    report.update({"converged": res.converged, "n_iter": res.n_iter, "grad_norm": res.grad_norm,
                   "value": res.value, "error_to_truth_projection": float(np.linalg.norm(res.theta - theta_star))})
    tpath = os.path.join(args.out, "map.nabx")
    write_container(tpath, MAGIC_THETA, {"format": "nabx-theta", "config": cfg, "version": __version__,
                                         "selftest": bool(args.ridge_selftest)}, {"theta": res.theta})
    rpath = os.path.join(args.out, "map_report.json")
    _write_json(rpath, report)
    _manifest(args.out, cfg, "map", [tpath, rpath])
    for k, v in report.items():
        _emit(k, v)
    if not res.converged or not report.get("selftest_ok", True):
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_stability_scan(cfg, args, opts):
    truth = build_truth(cfg)
    sc = cfg["scan"]
    rows = stability_scan(truth, sc["D_list"], None, opts)
    spath = os.path.join(args.out, "scan.csv")
    write_csv(spath, {"D": [r[0] for r in rows], "sigma_min_sq": [r[1] for r in rows],
                      "normalized": [r[2] for r in rows]})
    anchor = []
    for n in sc["anchor_n_max"]:
        D = dimension_for(n, cfg["m"])
        s2 = gradient_matrix(np.zeros(D), cfg["m"], None, opts).sigma_min() ** 2
        anchor.append((n, D, s2, s2 * (n + 1), abs(s2 * (n + 1) - 4 * math.pi)))
    apath = os.path.join(args.out, "anchor.csv")
    write_csv(apath, {"n_max": [a[0] for a in anchor], "D": [a[1] for a in anchor],
                      "sigma_min_sq": [a[2] for a in anchor], "scaled": [a[3] for a in anchor],
                      "target": [4 * math.pi] * len(anchor), "deviation": [a[4] for a in anchor],
                      "ok": [int(a[4] <= sc["anchor_tolerance"]) for a in anchor]})
    svd = svd_identity_check(sc["n_max_svd"], None, opts)
    vpath = os.path.join(args.out, "svd.csv")
    write_csv(vpath, {"n_max": [sc["n_max_svd"]], "norm_dev": [svd["norm"]], "diag_dev": [svd["diag"]],
                      "cross_dev": [svd["cross"]], "worst": [svd["worst"]], "tolerance": [sc["svd_tolerance"]],
                      "ok": [int(svd["worst"] <= sc["svd_tolerance"])]})
    files = [spath, apath, vpath]
    if args.figures:
        from .plotting import plot_scan

        fpath = os.path.join(args.out, "scan.png")
        plot_scan([r[0] for r in rows], [r[2] for r in rows], fpath,
                  anchor=([a[1] for a in anchor], [a[2] * math.sqrt(a[1]) for a in anchor]))
        files.append(fpath)
    _manifest(args.out, cfg, "stability-scan", files)
    norm = [r[2] for r in rows]
    _emit("scan", spath)
    _emit("normalized_min", min(norm))
    _emit("normalized_ratio", max(norm) / min(norm))
    _emit("anchor_worst_deviation", max(a[4] for a in anchor))
    _emit("svd_worst_deviation", svd["worst"])
    ok = all(a[4] <= sc["anchor_tolerance"] for a in anchor) and svd["worst"] <= sc["svd_tolerance"]
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_diagnose(cfg, args, opts):
    chains = []
    for path in args.chains:
        _, header, arrays = read_container(path, MAGIC_CHAIN)
        chains.append((path, header, arrays))
    if not chains:
        raise ConfigError("diagnose needs at least one chain file")
    Ds = {h["D"] for _, h, _ in chains}
    if len(Ds) != 1:
        raise ConfigError(f"chains disagree on D: {sorted(Ds)}")
    D = Ds.pop()
    dc = cfg["diagnose"]
    first_cfg = chains[0][1]["config"]
    prior = PriorSpec(first_cfg["alpha"], first_cfg["N"], D, first_cfg["m"])
    prior_samples = prior.sample(dc["prior_samples"], seed=cfg["seed"])
    names = [f"chain{i}" for i in range(len(chains))]
    diag_cols = {"chain": [], "coord": [], "mean": [], "var": [], "acf_1": [], "ess": []}
    err_cols = {"chain": [], "mean_error": [], "mean_sd": [], "bound": [], "within": []}
    ess_by = {}
    for name, (path, header, arrays) in zip(names, chains):
        S = arrays["samples"].reshape(-1, D)
        d = chain_diagnostics(S)
        ess_by[name] = d["ess"]
        for j in range(D):
            diag_cols["chain"].append(name)
            diag_cols["coord"].append(j)
            for k in ("mean", "var", "acf_1", "ess"):
                diag_cols[k].append(float(d[k][j]))
        if "theta_star" in arrays:
            err = float(np.linalg.norm(S.mean(axis=0) - arrays["theta_star"]))
            sd = float(np.mean(np.sqrt(d["var"])))
            bound = 3.0 * sd * math.sqrt(D)
            for k, v in zip(err_cols, (name, err, sd, bound, int(err <= bound))):
                err_cols[k].append(v)
    w2 = {"a": [], "b": [], "w2": [], "method": []}
    sets = [(n, c[2]["samples"].reshape(-1, D)) for n, c in zip(names, chains)] + [("prior", prior_samples)]
    for i in range(len(sets)):
        for j in range(i + 1, len(sets)):
            A, B = sets[i][1], sets[j][1]
            n = min(len(A), len(B))
            exact = n <= 1024
            val = wasserstein2_empirical(A[-n:], B[-n:], dc["n_proj"], cfg["seed"])
            for k, v in zip(w2, (sets[i][0], sets[j][0], val, "exact" if exact else "sliced")):
                w2[k].append(v)
    dpath = os.path.join(args.out, "diagnose.csv")
    wpath = os.path.join(args.out, "w2.csv")
    epath = os.path.join(args.out, "mean_error.csv")
    write_csv(dpath, {k: np.array(v, dtype=object) for k, v in diag_cols.items()})
    write_csv(wpath, {k: np.array(v, dtype=object) for k, v in w2.items()})
    write_csv(epath, {k: np.array(v, dtype=object) for k, v in err_cols.items()})
    lines = [f"{n}: {p}" for n, (p, _, _) in zip(names, chains)]
    for a, b, v, mth in zip(w2["a"], w2["b"], w2["w2"], w2["method"]):
        lines.append(f"W2({a}, {b}) = {v:.6g} [{mth}]")
    for row in zip(*err_cols.values()):
        lines.append(f"{row[0]}: |mean - theta_star| = {row[1]:.6g}, bound {row[3]:.6g}")
    spath = os.path.join(args.out, "summary.txt")
    with open(spath, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    files = [dpath, wpath, epath, spath]
    if args.figures:
        from .plotting import plot_ess

        fpath = os.path.join(args.out, "ess.png")
        plot_ess(ess_by, fpath)
        files.append(fpath)
    _manifest(args.out, cfg, "diagnose", files)
    for line in lines:
        print(line)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "sample": cmd_sample,
    "map": cmd_map,
    "stability-scan": cmd_stability_scan,
    "diagnose": cmd_diagnose,
}


def build_parser():
    p = argparse.ArgumentParser(prog="nabx", description="Bayesian inversion of the non-Abelian X-ray transform")
    p.add_argument("--version", action="version", version=f"nabx {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON config, or any nabx output file to reuse its embedded config")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--out", default="out", help="output directory")
        s.add_argument("--threads", type=int, default=1, help="worker threads (never changes results)")
        if name in ("sample", "map"):
            s.add_argument("--dataset", help="dataset file; simulated from the config when omitted")
        if name == "sample":
            s.add_argument("--resume", help="checkpoint file to continue from")
            s.add_argument("--target", choices=["posterior", "surrogate"])
            s.add_argument("--radius-guard", action="store_true",
                           help="with --target posterior: fail if the chain leaves radius eta/2")
        if name == "map":
            s.add_argument("--ridge-selftest", action="store_true",
                           help="replace the likelihood by -|theta - a|^2/2 and compare with the closed form")
        if name in ("sample", "stability-scan", "diagnose"):
            s.add_argument("--figures", action="store_true", help="also render PNG figures")
        if name == "diagnose":
            s.add_argument("chains", nargs="*", help="chain files")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = load_config(args.config, args.seed) if args.config else resolve_config({}, args.seed)
        opts = ode_options(cfg, args.threads)
        os.makedirs(args.out, exist_ok=True)
        return COMMANDS[args.command](cfg, args, opts)
    except ConfigError as exc:
        print(f"error,{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical-failure,{exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"io-error,{exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
