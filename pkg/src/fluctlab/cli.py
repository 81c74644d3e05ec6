"""Command-line experiment runner.

    fluctlab <subcommand> --config <path> [--seed S] [--threads T] [--out DIR]

Each subcommand reads a JSON config (see :mod:`fluctlab.io`), runs one
experiment and writes CSV/JSON artifacts plus ``manifest.json`` into an
output directory that appears atomically.  Failures print a JSON error
object on stderr and exit nonzero without leaving partial output.
"""

import argparse
import json
import os
import re
import sys
import time
import traceback

import numpy as np

from . import io
from .stats import StatSeries

EXIT_USAGE = 2
EXIT_RUNTIME = 1


# --- experiment runners ------------------------------------------------------
# Each takes the validated config and returns {artifact name: StatSeries | dict}.

def _default_a_hat(coupling, y, degree=8, k=1):
    if coupling.is_constant:
        return float(coupling.params["a0"])
    from .variational import minimize_diffusion_coefficient, monomial_basis
    return minimize_diffusion_coefficient(y, monomial_basis(degree, k), coupling).a_hat


def run_simulate(cfg):
    from .dynamics import evolve, replica_rngs
    from .model import sample_equilibrium, total_energy
    from .spheres import SphereSpec, sample_sphere
    params = cfg.build_model()
    config = cfg.build_integrator()
    pr = cfg.params
    rngs, seeds = replica_rngs(cfg.seed, cfg.replicas)
    if pr["start"] == "equilibrium":
        p0 = np.stack([sample_equilibrium(params, g) for g in rngs])
    elif pr["start"] == "sphere":
        spec = SphereSpec.for_model(params.n_sites, params.y)
        p0 = np.stack([sample_sphere(spec, g) for g in rngs])
    else:
        raise io.ConfigError("params.start must be 'equilibrium' or 'sphere'")
    e0 = total_energy(p0)
    obs = {"drift": lambda t, p: np.abs(total_energy(p) - e0) / e0,
           "p0sq": lambda t, p: p[:, 0] ** 2}
    tr = evolve(p0, pr["T"], params, config, obs, pr["sample_every"], rngs=rngs)
    from .stats import replica_mean
    m, se = replica_mean(tr.values["p0sq"], axis=1)
    series = StatSeries(tr.times, m, se, cfg.replicas, seeds,
                        extra={"max_rel_energy_drift": tr.values["drift"].max(axis=1)},
                        meta={"observable": "p_0^2"})
    summary = {"max_rel_energy_drift": float(tr.values["drift"].max()),
               "mean_p0sq": float(m.mean()), "expected_p0sq": params.y**2,
               "steps_per_sample": None if pr["sample_every"] is None else
               int(round(pr["sample_every"] / config.macro_step(params.n_sites)))}
    return {"trajectory": series, "summary": summary}


def run_diffusion_coefficient(cfg):
    from .variational import minimize_diffusion_coefficient, monomial_basis
    params = cfg.build_model()
    pr = cfg.params
    basis = monomial_basis(pr["degree"], pr["k"], parity=pr["parity"])
    res = minimize_diffusion_coefficient(params.y, basis, params.coupling)
    rec = res.to_record()
    rec.update(degree=pr["degree"], k=pr["k"], parity=pr["parity"])
    return {"diffusion_coefficient": rec}


def run_fluctuations(cfg):
    from .fluctuation import (TestFunction, empirical_time_covariance, field_series,
                              field_variance_prediction, fit_ou_decay, ou_covariance_predict)
    from .stats import replica_mean
    params = cfg.build_model()
    config = cfg.build_integrator()
    pr = cfg.params
    tests = [TestFunction.fourier(n) for n in pr["modes"]]
    a_hat = pr["a_hat"] or _default_a_hat(params.coupling, params.y)
    times, Y, seeds = field_series(params, config, cfg.replicas, pr["n_samples"],
                                   pr["stride"], tests)
    dt = times[1] - times[0]
    lags = np.arange(min(pr["max_lag"], Y.shape[1] - 1) + 1)
    out = {}
    fits = {}
    static = {}
    for j, (n, H) in enumerate(zip(pr["modes"], tests)):
        var_m, var_se = replica_mean(np.mean(Y[:, :, j] ** 2, axis=1))
        static[str(n)] = {"variance": var_m, "stderr": var_se,
                          "prediction": field_variance_prediction(H, params.n_sites, params.y)}
        cov = empirical_time_covariance(Y[:, :, j], Y[:, :, j], lags, dt, seeds)
        cov.extra["prediction"] = [ou_covariance_predict(H, H, L, params.y, a_hat)
                                   for L in cov.grid]
        fit = fit_ou_decay(cov)
        pred_rate = a_hat * (2 * np.pi * n) ** 2
        fits[str(n)] = {"rate": fit.rate, "rate_stderr": fit.rate_stderr,
                        "amplitude": fit.amplitude, "amplitude_stderr": fit.amplitude_stderr,
                        "predicted_rate": pred_rate, "predicted_amplitude": 2 * params.y**4,
                        "points": fit.points}
        cov.meta = {"mode": n, "a_hat": a_hat}
        out[f"covariance_mode{n}"] = cov
    out["summary"] = {"a_hat": a_hat, "static_variance": static, "ou_fits": fits}
    return out


def run_clt_variances(cfg):
    from .fluctuation import clt_time_variance
    from .variational import gradient_type_variance
    params = cfg.build_model()
    pr = cfg.params
    y, c, N = params.y, params.coupling, pr["N"]
    exact_targets = [t for t in pr["targets"] if t in ("BB", "HH", "BH", "AB", "AH")]
    ns = np.arange(1, N + 1)
    out = {}
    for t in exact_targets:
        vals = np.array([gradient_type_variance(t, int(n), y, c) / (2 * n) for n in ns])
        extra = {}
        if t == "AB":
            extra["formula"] = -4 * (2 * ns + 1) * y**4 / (2 * ns + 3)
        out[f"exact_{t}"] = StatSeries(ns, vals, np.zeros(ns.size), 0, extra=extra,
                                       meta={"target": t, "normalization": "1/(2N)"})
    summary = {"N": N, "limit_4y4": 4 * y**4,
               "exact": {t: float(out[f"exact_{t}"].estimates[-1]) for t in exact_targets}}
    kinds = sorted({k for t in pr["targets"] if t in ("AA", "BB") for k in t[0]})
    if pr["simulate"] and kinds:
        sims = clt_time_variance(kinds, N, y, c, pr["t"], cfg.replicas, windows=pr["windows"],
                                 dt_micro=pr["dt_micro"], stride=pr["stride"], seed=cfg.seed)
        summary["simulated"] = {}
        for k, s in sims.items():
            out[f"simulated_{k}{k}"] = s
            summary["simulated"][f"{k}{k}"] = {"per_2N": s.meta["per_2N"],
                                               "stderr": s.meta["per_2N_stderr"]}
    out["summary"] = summary
    return out


def run_bg_residual(cfg):
    from .fluctuation import (TestFunction, a_hat_scan, bg_residual, paired_residual_difference,
                              residual_integrals)
    from .polynomial import LocalFunction
    from .variational import minimize_diffusion_coefficient, monomial_basis
    params = cfg.build_model()
    config = cfg.build_integrator()
    pr = cfg.params
    res = minimize_diffusion_coefficient(params.y, monomial_basis(pr["degree"], pr["k"]),
                                         params.coupling)
    H = TestFunction.fourier(pr["mode"])
    ints = residual_integrals(params, config, H,
                              {"zero": LocalFunction(), "star": res.current_function()},
                              pr["t"], cfg.replicas, stride=pr["stride"], n_times=pr["n_times"])
    step, hw = pr["scan_step"], pr["scan_halfwidth"]
    grid = res.a_hat + step * np.arange(-round(hw / step), round(hw / step) + 1)
    scans = {k: a_hat_scan(ints, k, grid) for k in ("zero", "star")}
    pc = paired_residual_difference(ints, "zero", "star", res.a_hat)
    summary = {"a_hat": res.a_hat, "paired_difference": pc.difference,
               "paired_stderr": pc.stderr, "z": pc.z, "residual_zero": pc.base,
               "residual_star": pc.improved, "scan_step": step,
               "scan": {k: {"argmin_grid": s.meta["argmin_grid"],
                            "argmin_exact": s.meta["argmin_exact"]} for k, s in scans.items()}}
    return {"residual_zero": bg_residual(ints, "zero", res.a_hat),
            "residual_star": bg_residual(ints, "star", res.a_hat),
            "a_hat_scan_zero": scans["zero"], "a_hat_scan_star": scans["star"],
            "summary": summary}


_TERM = re.compile(r"p(-?\d+)(?:\^(\d+))?")


def parse_monomial(text):
    """``"p0^2 p1^2"`` -> LocalFunction; factors separated by spaces or ``*``."""
    from .polynomial import LocalFunction
    f = LocalFunction.constant(1.0)
    toks = [t for t in re.split(r"[\s*]+", text.strip()) if t]
    if not toks:
        raise io.ConfigError(f"empty monomial {text!r}")
    for tok in toks:
        m = _TERM.fullmatch(tok)
        if not m:
            raise io.ConfigError(f"cannot parse monomial factor {tok!r}")
        f = f * LocalFunction.var(int(m.group(1))) ** int(m.group(2) or 1)
    return f


def run_ensemble_gap(cfg):
    from .spheres import ensemble_gap, loglog_slope
    params = cfg.build_model()
    pr = cfg.params
    ns = np.asarray(pr["ns"], dtype=float)
    out, slopes = {}, {}
    for j, text in enumerate(pr["observables"]):
        g = parse_monomial(text)
        gaps = np.array([ensemble_gap(g, int(n), params.y)[0] for n in ns])
        slopes[text] = loglog_slope(ns, gaps)
        out[f"gap_{j}"] = StatSeries(ns, gaps, np.zeros(ns.size), 0,
                                     meta={"observable": text, "loglog_slope": slopes[text]})
    out["summary"] = {"loglog_slopes": slopes}
    return out


def run_sphere_checks(cfg):
    from itertools import product

    from .model import Observable
    from .polynomial import LocalFunction as LF
    from .spectral import path_lemma_check, poincare_circle_check
    from .spheres import (CheckResult, SphereSpec, divergence_check, moment_closed_form,
                          pair_product_sum, pair_product_sum_formula, sample_sphere,
                          telescoping_check)
    params = cfg.build_model()
    pr = cfg.params
    n, y, S = pr["n"], params.y, pr["samples"]
    spec = SphereSpec.for_model(n, y)
    rng = np.random.default_rng(cfg.seed)
    checks = []
    pts = sample_sphere(spec, rng, S)
    for a in product(range(pr["max_degree"] // 2 + 1), repeat=min(n, 3)):
        if 0 < 2 * sum(a) <= pr["max_degree"]:
            avec = np.zeros(n)
            avec[: len(a)] = a
            v = np.prod(pts ** (2 * avec), axis=1)
            exact = moment_closed_form(avec, spec)[1]
            m, se = float(v.mean()), float(v.std(ddof=1) / np.sqrt(S))
            checks.append(CheckResult("moment", {"a": list(a), "n": n}, m, exact, se,
                                      (m - exact) / se))
    for N in range(1, 51):
        lhs, rhs = pair_product_sum(N, y), pair_product_sum_formula(N, y)
        ok = abs(lhs - rhs) <= 1e-10 * abs(rhs)
        checks.append(CheckResult("pair_product_sum", {"N": N}, lhs, rhs, 0.0,
                                  0.0 if ok else np.inf))
    f = LF.var(0) ** 2 * LF.var(1) + LF.var(1) * LF.var(2) ** 3
    obs = Observable.from_polynomial(f, n)
    checks.append(divergence_check(obs, 1, spec, S, rng))
    checks.append(telescoping_check(obs, 0, min(3, n - 1), spec, S, rng))
    g = LF.var(0) * LF.var(3) + LF.var(1) ** 2 * LF.var(2) ** 2
    checks.append(path_lemma_check(g, 0, 3, spec, S // 10, rng))
    checks.append(poincare_circle_check(g, 0, 2, spec, S // 10, rng))
    recs = [c.to_record() for c in checks]
    return {"checks": {"results": recs,
                       "all_pass": all(c.verdict == "pass" for c in checks)}}


def run_spectral_gap(cfg):
    from .spectral import relaxation_scaling
    params = cfg.build_model()
    pr = cfg.params
    series, fit = relaxation_scaling(pr["ns"], params.y, params.coupling, replicas=cfg.replicas,
                                     seed=cfg.seed, dt=pr["dt"], topology=params.topology)
    return {"relaxation_times": series, "summary": {"fit": fit.to_record()}}


RUNNERS = {
    "simulate": run_simulate,
    "diffusion-coefficient": run_diffusion_coefficient,
    "fluctuations": run_fluctuations,
    "clt-variances": run_clt_variances,
    "bg-residual": run_bg_residual,
    "sphere-checks": run_sphere_checks,
    "spectral-gap": run_spectral_gap,
    "ensemble-gap": run_ensemble_gap,
}


# --- driver -------------------------------------------------------------------

def resolve_threads(flag, cfg_threads):
    if flag is not None:
        return flag
    env = os.environ.get("FLUCTLAB_THREADS")
    if env:
        try:
            t = int(env)
        except ValueError:
            raise io.ConfigError(f"FLUCTLAB_THREADS must be an integer, got {env!r}") from None
        if t < 1:
            raise io.ConfigError("FLUCTLAB_THREADS must be >= 1")
        return t
    return cfg_threads


def run_experiment(cfg, out=None, threads=None, fmt="both"):
    """Run ``cfg`` and write artifacts atomically; returns the output directory."""
    from .dynamics import set_threads
    threads = threads or cfg.threads
    set_threads(threads)
    version = io.code_version()
    mhash = io.manifest_hash(cfg.echo(), version)
    out = out or cfg.out
    t0 = time.perf_counter()
    results = RUNNERS[cfg.kind](cfg)
    wall = time.perf_counter() - t0
    with io.atomic_dir(out) as tmp:
        files = io.emit_report(results, tmp, mhash, fmt)
        io.write_manifest(tmp, cfg, mhash, version, wall, files, threads)
    return out


def _error(kind, exc, operation):
    tb = traceback.extract_tb(exc.__traceback__)
    module = next((os.path.splitext(os.path.basename(f.filename))[0] for f in reversed(tb)
                   if "fluctlab" in f.filename), "cli")
    json.dump({"error": kind, "type": type(exc).__name__, "message": str(exc),
               "module": module, "operation": operation}, sys.stderr)
    sys.stderr.write("\n")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        json.dump({"error": "usage", "type": "UsageError", "message": message,
                   "module": "cli", "operation": "parse_args"}, sys.stderr)
        sys.stderr.write("\n")
        self.print_usage(sys.stderr)
        sys.exit(EXIT_USAGE)


def build_parser():
    p = _Parser(prog="fluctlab", description="Run one fluctuation-lab experiment.")
    p.add_argument("subcommand", choices=io.KINDS)
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: FLUCTLAB_THREADS, then config)")
    p.add_argument("--out", default=None, help="output directory (replaced atomically)")
    p.add_argument("--format", choices=("csv", "json", "both"), default="both")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise io.ConfigError("config must be a JSON object")
        raw.setdefault("kind", args.subcommand)
        if raw["kind"] != args.subcommand:
            raise io.ConfigError(f"config kind {raw['kind']!r} does not match subcommand "
                                 f"{args.subcommand!r}")
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.out is not None:
            raw["out"] = args.out
        cfg = io.ExperimentConfig.from_dict(raw)
        threads = resolve_threads(args.threads, cfg.threads)
        if threads < 1:
            raise io.ConfigError("--threads must be >= 1")
    except (OSError, json.JSONDecodeError, io.ConfigError) as e:
        _error("usage", e, "load_config")
        return EXIT_USAGE
    try:
        out = run_experiment(cfg, threads=threads, fmt=args.format)
    except Exception as e:  # noqa: BLE001 - reported as machine-readable JSON
        _error("runtime", e, f"run_{cfg.kind.replace('-', '_')}")
        return EXIT_RUNTIME
    print(json.dumps({"status": "ok", "out": os.path.abspath(out)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
