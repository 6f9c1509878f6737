"""Command-line entry point ``gbv``.

Exit codes: 0 success, 2 config/schema error, 3 numerical failure (with the
stage name), 4 missing upstream artifact. Errors go to stderr as a single
``error: ...`` line.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import Config, ConfigError, load_config
from .core import DomainBox, GBVError, GeneralizedPosterior
from .diagnostics import SamplerSettings, concentration_mass, coverage_experiment, tv_to_normal_limit
from .experiments import (
    DATA_FILES,
    ConfigBuilder,
    ConfigGenerator,
    StageError,
    build_model,
    build_prior,
    dump_json,
    grid_box,
    load_data,
    posterior_n,
    run_experiment,
    save_data,
    simulate_data,
    true_theta,
)
from .laplace import laplace_log_normalizer
from .numerics import FitResult, bvm_audit, find_minimizer
from .rng import thread_count
from .sampler import effective_sample_size, grid_density, run_chains, stack_chains

logger = logging.getLogger("gbv")

REPORT_COLUMNS = ["experiment", "n", "model", "tv", "concentration", "logz_laplace", "coverage_raw", "coverage_cal"]


class MissingArtifact(Exception):
    pass


def _fail(code: int, message: str) -> int:
    print(f"error: {' '.join(str(message).split())}", file=sys.stderr)
    return code


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingArtifact(f"missing upstream artifact: {path}")
    return path


def _config(args) -> Config:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def _out(args, cfg: Config) -> Path:
    out = Path(args.out if args.out else cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _n(args, cfg: Config) -> int:
    return args.n if getattr(args, "n", None) else cfg["data.n"][0]


def _data(args, cfg: Config, out: Path):
    if getattr(args, "data", None):
        return load_data(cfg, _require(Path(args.data)))
    if cfg["data.source"] == "file":
        return load_data(cfg, _require(Path(cfg["data.path"])))
    return load_data(cfg, _require(out / DATA_FILES[cfg["model.kind"]]))


def _posterior(args, cfg, out):
    data = _data(args, cfg, out)
    model = build_model(cfg, data)
    n = posterior_n(model, _n(args, cfg))
    return GeneralizedPosterior(model, build_prior(cfg, model.dim), n)


def _fit(out: Path) -> FitResult:
    return FitResult.from_dict(json.loads(_require(out / "fit.json").read_text()))


# subcommands ---------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = _config(args)
    res = run_experiment(cfg, args.seed, args.out, thread_count(args.threads))
    out = Path(args.out if args.out else cfg["output.dir"])
    for r in res["runs"]:
        tv = r.get("tv")
        print(f"n={r['n']} theta_n={np.round(r['fit']['theta_n'], 6).tolist()} "
              f"tv={'-' if tv is None else f'{tv:.6f}'} logz_laplace={r['laplace']['log_zhat']:.6f}")
    print(f"wrote {out / 'result.json'}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    n = _n(args, cfg)
    data = simulate_data(cfg, n, cfg["seed"])
    path = save_data(cfg, data, out)
    dump_json({"model_kind": cfg["model.kind"], "n": n, "seed": cfg["seed"], "config_hash": cfg.hash},
              out / "data.json")
    print(f"wrote {path}")
    return 0


def cmd_fit(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    gp = _posterior(args, cfg, out)
    init = np.zeros(gp.dim) if cfg["optimizer.init"] is None else np.asarray(cfg["optimizer.init"])
    fit = find_minimizer(gp.model, init, cfg["optimizer.tol"], cfg["optimizer.max_iter"])
    dump_json(fit.to_dict(), out / "fit.json")
    print("theta_n = " + " ".join(f"{v:.10g}" for v in fit.theta_n))
    print(f"|grad| = {fit.grad_norm:.3e}  converged = {fit.converged}  iterations = {fit.iterations}")
    if not fit.converged:
        raise StageError("fit", f"optimizer did not converge ({fit.status})")
    return 0


def cmd_laplace(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    fit = _fit(out)
    gp = _posterior(args, cfg, out)
    try:
        lr = laplace_log_normalizer(gp, fit)
    except (GBVError, np.linalg.LinAlgError) as exc:
        raise StageError("laplace", str(exc)) from exc
    dump_json(lr.to_dict(), out / "laplace.json")
    print(f"log_zhat = {lr.log_zhat:.10g}")
    return 0


def cmd_sample(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    fit = _fit(out)
    gp = _posterior(args, cfg, out)
    chains = run_chains(gp, fit.theta_n, cfg["sampler.steps"], cfg["sampler.burn_in"], cfg["seed"],
                        cfg["sampler.chains"], fit)
    draws = stack_chains(chains)
    draws.to_csv(out / "draws.csv")
    ess = effective_sample_size(chains[0]) if len(chains[0]) >= 100 else None
    print(f"draws = {len(draws)}  acceptance = {draws.acceptance_rate:.3f}"
          + ("" if ess is None else f"  ess = {np.round(ess, 1).tolist()}"))
    return 0


def cmd_audit(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    fit = _fit(out)
    gp = _posterior(args, cfg, out)
    E = DomainBox.around(fit.theta_n, cfg["diagnostics.audit_radius"])
    rep = bvm_audit(gp.model, fit, E)
    dump_json(rep.to_dict(), out / "audit.json")
    if rep.refused:
        print(rep.message)
    else:
        print(f"min eig H_n = {rep.min_eigenvalue_H0:.6g}  convexity probe = {rep.convexity_min_eig_over_probes:.6g}  "
              f"third bound = {rep.third_bound_estimate:.6g}  passed = {rep.passed}")
    return 0


def cmd_tv(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    fit = _fit(out)
    gp = _posterior(args, cfg, out)
    if gp.dim > 2:
        raise StageError("tv", "grid TV needs D <= 2; use moment gaps from `run` instead")
    theta0 = fit.theta_n if cfg["diagnostics.theta0"] is None else np.asarray(cfg["diagnostics.theta0"])
    H0 = gp.model.hess(theta0)
    box = grid_box(fit, gp.n, cfg["diagnostics.grid_halfwidth"], gp.model)
    res = cfg["diagnostics.grid_resolution"] if gp.dim == 1 else min(cfg["diagnostics.grid_resolution"], 256)
    try:
        grid = grid_density(gp, box, res)
        tv = tv_to_normal_limit(grid, fit.theta_n, gp.n, H0)
    except GBVError as exc:
        raise StageError("tv", str(exc)) from exc
    conc = {repr(e): concentration_mass(grid, theta0, e) for e in cfg["diagnostics.concentration_eps"]}
    grid.to_csv(out / "grid.csv")
    dump_json({"tv": tv, "log_z_grid": grid.log_z_grid, "concentration": conc}, out / "tv.json")
    print(f"tv = {tv:.6f}  log_z_grid = {grid.log_z_grid:.10g}")
    return 0


def cmd_coverage(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    if args.reps is not None:
        cfg["coverage.reps"] = args.reps
    if args.rho is not None:
        cfg["coverage.rho"] = args.rho
    truth = true_theta(cfg)
    if truth is None:
        raise ConfigError("coverage needs data.theta_true")
    n = _n(args, cfg)
    settings = SamplerSettings(cfg["coverage.steps"], cfg["coverage.burn_in"], cfg["optimizer.tol"],
                               cfg["optimizer.max_iter"])
    init = None if cfg["optimizer.init"] is None else np.asarray(cfg["optimizer.init"])
    modes = {"raw": [False], "calibrated": [True], "both": [False, True]}[cfg["coverage.calibrate"]]
    result = {}
    for cal in modes:
        rep = coverage_experiment(ConfigGenerator(dict(cfg), n), ConfigBuilder(dict(cfg)), truth,
                                  cfg["coverage.rho"], cfg["coverage.reps"], cfg["seed"], cal, settings, init,
                                  thread_count(args.threads))
        key = "coverage_cal" if cal else "coverage_raw"
        result[key] = rep.to_dict()
        lo, hi = rep.wilson_interval
        print(f"{rep.mode}: coverage = {rep.coverage:.4f}  95% Wilson [{lo:.4f}, {hi:.4f}]  "
              f"hits = {rep.hits}/{rep.replications}  failed = {rep.failed}")
    dump_json(result, out / "coverage.json")
    return 0


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_rows(paths) -> list:
    rows = []
    for p in paths:
        res = json.loads(_require(Path(p)).read_text())
        for r in res.get("runs", []):
            conc = r.get("concentration") or {}
            first = next(iter(conc.values()), None) if conc else None
            cr = (r.get("coverage_raw") or {}).get("coverage")
            cc = (r.get("coverage_cal") or {}).get("coverage")
            rows.append({
                "experiment": res.get("experiment", Path(p).parent.name),
                "n": r.get("n"),
                "model": r.get("model"),
                "tv": r.get("tv"),
                "concentration": first,
                "logz_laplace": (r.get("laplace") or {}).get("log_zhat"),
                "coverage_raw": cr,
                "coverage_cal": cc,
            })
    return rows


def cmd_report(args) -> int:
    rows = report_rows(args.results)
    fh = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        wr = csv.writer(fh)
        wr.writerow(REPORT_COLUMNS)
        for row in rows:
            wr.writerow([_fmt(row[c]) for c in REPORT_COLUMNS])
    finally:
        if args.output:
            fh.close()
    return 0


# wiring ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gbv", description="Generalized-posterior experiments")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="experiment config file")
        sp.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
        sp.add_argument("--out", default=None, help="output directory (overrides output.dir)")
        sp.add_argument("--threads", type=int, default=None, help="worker processes (overrides GBV_THREADS)")
        sp.add_argument("-v", "--verbose", action="store_true")

    for name, fn, help_ in [
        ("run", cmd_run, "run the whole pipeline"),
        ("simulate", cmd_simulate, "simulate a dataset"),
        ("fit", cmd_fit, "minimize f_n"),
        ("laplace", cmd_laplace, "Laplace approximation of log z_n"),
        ("sample", cmd_sample, "random-walk Metropolis draws"),
        ("audit", cmd_audit, "curvature audit at theta_n"),
        ("tv", cmd_tv, "grid TV distance to the normal limit"),
        ("coverage", cmd_coverage, "frequentist coverage of credible sets"),
    ]:
        sp = sub.add_parser(name, help=help_)
        common(sp)
        if name != "run":
            sp.add_argument("--n", type=int, default=None, help="sample size (default: first data.n)")
        if name not in ("run", "simulate", "coverage"):
            sp.add_argument("--data", default=None, help="data file (default: the one written by simulate)")
        if name == "coverage":
            sp.add_argument("--reps", type=int, default=None)
            sp.add_argument("--rho", type=float, default=None)
        sp.set_defaults(func=fn)

    rp = sub.add_parser("report", help="aggregate result.json files into one CSV")
    rp.add_argument("results", nargs="+", help="result.json files")
    rp.add_argument("-o", "--output", default=None, help="CSV path (default stdout)")
    rp.add_argument("-v", "--verbose", action="store_true")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(2, exc)
    except MissingArtifact as exc:
        return _fail(4, exc)
    except StageError as exc:
        return _fail(3, exc)
    except (GBVError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail(3, f"stage {args.command}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
