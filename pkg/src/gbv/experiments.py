"""Config-driven pipelines: simulate -> fit -> Laplace -> sample -> diagnose.

Each model kind knows how to simulate, persist, reload and build its data.
The generator/builder pairs here are plain picklable objects so coverage
replications can run in worker processes.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import expit

from . import __version__
from .config import Config
from .core import (
    DomainBox,
    GeneralizedPosterior,
    ObjectiveModel,
    PriorSpec,
    flat_prior,
    gaussian_prior,
    scaled_model,
    uniform_prior,
)
from .diagnostics import (
    SamplerSettings,
    concentration_mass,
    coverage_experiment,
    moment_gap_to_normal,
    sandwich_covariance,
    tv_to_normal_limit,
)
from .laplace import laplace_log_normalizer
from .models.expfam import GLMDataset, build_glm, build_iid_expfam, family
from .models.pseudolik import (
    FieldSample,
    ThetaPacking,
    boltzmann_pseudolik,
    gmrf_pseudolik,
    ising_pseudolik,
    read_spin_csv,
    write_spin_csv,
)
from .models.special import SurvivalDataset, cox_partial_model, median_location_model
from .numerics import FitResult, bvm_audit, find_minimizer
from .rng import make_rng
from .sampler import effective_sample_size, grid_density, run_chains, stack_chains
from .simulate import gen_boltzmann_exact, gen_cox, gen_glm, gen_gmrf, gen_ising_gibbs, gen_location

logger = logging.getLogger(__name__)


class StageError(RuntimeError):
    """A numerical failure inside a named pipeline stage."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


# data per model kind -----------------------------------------------------------

DATA_FILES = {
    "iid-bernoulli": "values.csv",
    "iid-poisson": "values.csv",
    "normal-mean": "values.csv",
    "median": "values.csv",
    "glm-linear": "glm.csv",
    "glm-logistic": "glm.csv",
    "glm-poisson": "glm.csv",
    "ising": "field.txt",
    "gmrf": "field.txt",
    "boltzmann": "spins.csv",
    "cox": "survival.csv",
}


def _num_spec(items) -> tuple:
    out = []
    for s in items:
        try:
            out.append(float(s))
        except ValueError:
            out.append(s)
    return tuple(out)


def model_dim(cfg: Config) -> int:
    kind = cfg["model.kind"]
    if kind in ("iid-bernoulli", "iid-poisson", "normal-mean", "median"):
        return 1
    if kind == "ising":
        return 2
    if kind == "gmrf":
        m = cfg["data.m"]
        return m if cfg["model.isotropic"] else 2 * m
    tt = cfg["data.theta_true"]
    if tt is None:
        raise ValueError(f"{kind} needs data.theta_true to fix the dimension")
    return len(tt)


def true_theta(cfg: Config) -> Optional[np.ndarray]:
    tt = cfg["data.theta_true"]
    return None if tt is None else np.asarray(tt, dtype=float)


def simulate_data(cfg: Config, n: int, seed: int):
    kind = cfg["model.kind"]
    theta = true_theta(cfg)
    if kind in ("iid-bernoulli", "iid-poisson", "normal-mean", "median") and theta is None:
        theta = np.zeros(1)
    if kind == "iid-bernoulli":
        p = float(expit(theta[0]))
        if cfg["data.exact_proportion"]:
            k = int(round(p * n))
            return np.concatenate([np.ones(k), np.zeros(n - k)])
        return (make_rng(seed, 0).random(n) < p).astype(float)
    if kind == "iid-poisson":
        return make_rng(seed, 0).poisson(math.exp(theta[0]), n).astype(float)
    if kind == "normal-mean":
        return theta[0] + math.sqrt(cfg["model.sigma2"]) * make_rng(seed, 0).standard_normal(n)
    if kind == "median":
        return gen_location(n, float(theta[0]), _num_spec(cfg["data.noise"]), seed)
    if kind.startswith("glm-"):
        return gen_glm(
            kind[4:], theta, n, _num_spec(cfg["data.covariates"]), seed,
            intercept=cfg["data.intercept"], sigma=cfg["data.sigma"],
        )
    if kind == "ising":
        return gen_ising_gibbs(cfg["data.L"], cfg["data.m"], theta, cfg["data.sweeps"], cfg["data.burn_sweeps"], seed)
    if kind == "gmrf":
        return gen_gmrf(cfg["data.L"], cfg["data.m"], theta, cfg["model.gamma"], seed)
    if kind == "boltzmann":
        pk = _packing_for(theta)
        A, b = pk.unpack(theta)
        return gen_boltzmann_exact(pk.d, A, b, n, seed)[0]
    if kind == "cox":
        return gen_cox(
            n, theta, _num_spec(cfg["data.baseline"]), _num_spec(cfg["data.censor"]),
            _num_spec(cfg["data.covariates"]) if cfg["data.covariates"][0] != "iid-gaussian"
            else ("bounded-uniform", -1.0, 1.0),
            seed,
        )
    raise ValueError(f"no generator for {kind}")


def _packing_for(theta) -> ThetaPacking:
    D = len(theta)
    d = int(round((-1 + math.sqrt(1 + 8 * D)) / 2))
    pk = ThetaPacking(d)
    if pk.D != D:
        raise ValueError(f"length {D} is not d + d(d-1)/2 for any d")
    return pk


def save_data(cfg: Config, data, directory) -> Path:
    path = Path(directory) / DATA_FILES[cfg["model.kind"]]
    kind = cfg["model.kind"]
    if kind in ("iid-bernoulli", "iid-poisson", "normal-mean", "median"):
        with open(path, "w") as fh:
            fh.write("y\n")
            for v in np.asarray(data, dtype=float):
                fh.write(f"{float(v)!r}\n")
    elif kind.startswith("glm-") or kind == "cox":
        data.to_csv(path)
    elif kind in ("ising", "gmrf"):
        data.to_file(path)
    elif kind == "boltzmann":
        write_spin_csv(path, data)
    return path


def load_data(cfg: Config, path):
    kind = cfg["model.kind"]
    path = Path(path)
    if kind in ("iid-bernoulli", "iid-poisson", "normal-mean", "median"):
        return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=1)
    if kind.startswith("glm-"):
        fam = {"glm-linear": family("gaussian", cfg["model.sigma2"]), "glm-logistic": "bernoulli",
               "glm-poisson": "poisson"}[kind]
        return GLMDataset.from_csv(path, fam)
    if kind == "cox":
        return SurvivalDataset.from_csv(path)
    if kind in ("ising", "gmrf"):
        return FieldSample.from_file(path)
    if kind == "boltzmann":
        return read_spin_csv(path)
    raise ValueError(kind)


def build_model(cfg: Config, data) -> ObjectiveModel:
    kind = cfg["model.kind"]
    if kind == "iid-bernoulli":
        m = build_iid_expfam("bernoulli", data)
    elif kind == "iid-poisson":
        m = build_iid_expfam("poisson", data)
    elif kind == "normal-mean":
        m = build_iid_expfam(family("gaussian", cfg["model.sigma2"]), data, name="normal-mean")
    elif kind == "median":
        m = median_location_model(data, cfg["model.cdf"])
    elif kind.startswith("glm-"):
        if kind == "glm-linear":
            data = GLMDataset(data.X, data.y, family("gaussian", cfg["model.sigma2"]))
        m = build_glm(data)
    elif kind == "ising":
        m = ising_pseudolik(data)
    elif kind == "gmrf":
        m = gmrf_pseudolik(data, cfg["model.gamma"], cfg["model.isotropic"])
    elif kind == "boltzmann":
        m = boltzmann_pseudolik(data)
    elif kind == "cox":
        m = cox_partial_model(data)
    else:
        raise ValueError(kind)
    if cfg["model.power"] != 1.0:
        m = scaled_model(m, cfg["model.power"])
    return m


def build_prior(cfg: Config, dim: int) -> PriorSpec:
    kind = cfg["prior.kind"]
    if kind == "flat":
        return flat_prior(dim)
    if kind == "uniform":
        lo, hi = cfg["prior.lower"], cfg["prior.upper"]
        if lo is None or hi is None:
            raise ValueError("uniform prior needs prior.lower and prior.upper")
        return uniform_prior(DomainBox(np.broadcast_to(lo, dim), np.broadcast_to(hi, dim)))
    mean = np.zeros(dim) if cfg["prior.mean"] is None else np.broadcast_to(cfg["prior.mean"], dim)
    return gaussian_prior(mean, np.eye(dim) * cfg["prior.sd"] ** 2)


def posterior_n(model: ObjectiveModel, fallback: float) -> float:
    return float(model.n) if model.n is not None else float(fallback)


@dataclasses.dataclass
class ConfigGenerator:
    """Picklable ``gen(rng)`` for coverage runs driven by a config."""

    cfg: dict
    n: int

    def __call__(self, rng):
        return simulate_data(Config(self.cfg), self.n, int(rng.integers(2**62)))


@dataclasses.dataclass
class ConfigBuilder:
    cfg: dict

    def __call__(self, data) -> GeneralizedPosterior:
        cfg = Config(self.cfg)
        m = build_model(cfg, data)
        return GeneralizedPosterior(m, build_prior(cfg, m.dim), posterior_n(m, 1))


@dataclasses.dataclass
class NormalMeanGenerator:
    n: int
    mu: float = 0.0
    sigma: float = 1.0

    def __call__(self, rng):
        return self.mu + self.sigma * rng.standard_normal(self.n)


@dataclasses.dataclass
class NormalMeanBuilder:
    """Known-variance normal mean with a flat prior; ``power`` counts each term that many times."""

    sigma: float = 1.0
    power: float = 1.0

    def __call__(self, data) -> GeneralizedPosterior:
        m = build_iid_expfam(family("gaussian", self.sigma**2), data, name="normal-mean")
        if self.power != 1.0:
            m = scaled_model(m, self.power)
        return GeneralizedPosterior(m, flat_prior(1), m.n)


# full run -----------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def grid_box(fit: FitResult, n: float, halfwidth: float, model: ObjectiveModel) -> DomainBox:
    """Box of +-halfwidth Laplace standard deviations around theta_n, clipped to the model domain."""
    cov = np.linalg.inv(n * fit.hessian_at_min)
    sd = np.sqrt(np.diag(cov))
    lo = np.maximum(fit.theta_n - halfwidth * sd, model.domain.lower)
    hi = np.minimum(fit.theta_n + halfwidth * sd, model.domain.upper)
    return DomainBox(lo, hi)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ArithmeticError, ValueError, np.linalg.LinAlgError, RuntimeError) as exc:
        raise StageError(name, str(exc)) from exc


def run_single(cfg: Config, data, n_label: int, seed: int, out_dir: Optional[Path] = None, threads=1) -> dict:
    """All enabled stages for one dataset; returns the JSON-ready record."""
    model = _stage("build", build_model, cfg, data)
    n = posterior_n(model, n_label)
    gp = GeneralizedPosterior(model, build_prior(cfg, model.dim), n)
    init = np.zeros(model.dim) if cfg["optimizer.init"] is None else np.asarray(cfg["optimizer.init"])
    fit = _stage("fit", find_minimizer, model, init, cfg["optimizer.tol"], cfg["optimizer.max_iter"])
    rec: dict = {"n": n_label, "model": model.name, "dim": model.dim, "fit": fit.to_dict()}
    if not fit.converged:
        raise StageError("fit", f"optimizer did not converge ({fit.status}, |grad|={fit.grad_norm:.3g})")
    lap = _stage("laplace", laplace_log_normalizer, gp, fit)
    rec["laplace"] = lap.to_dict()

    theta0 = cfg["diagnostics.theta0"]
    theta0 = fit.theta_n if theta0 is None else np.asarray(theta0, dtype=float)
    rec["theta0"] = theta0
    H0 = model.hess(theta0)
    rec["H0"] = H0

    if cfg["diagnostics.audit"]:
        E = DomainBox.around(fit.theta_n, cfg["diagnostics.audit_radius"])
        rec["audit"] = _stage("audit", bvm_audit, model, fit, E).to_dict()

    grid = None
    if model.dim <= 2 and cfg["diagnostics.tv"]:
        box = grid_box(fit, n, cfg["diagnostics.grid_halfwidth"], model)
        res = cfg["diagnostics.grid_resolution"] if model.dim == 1 else min(cfg["diagnostics.grid_resolution"], 256)
        grid = _stage("grid", grid_density, gp, box, res)
        rec["log_z_grid"] = grid.log_z_grid
        rec["tv"] = _stage("tv", tv_to_normal_limit, grid, fit.theta_n, n, H0)
        rec["concentration"] = {
            repr(e): concentration_mass(grid, theta0, e) for e in cfg["diagnostics.concentration_eps"]
        }

    chains = _stage(
        "sample", run_chains, gp, fit.theta_n, cfg["sampler.steps"], cfg["sampler.burn_in"], seed,
        cfg["sampler.chains"], fit,
    )
    draws = stack_chains(chains)
    rec["sampler"] = {
        "acceptance_rate": draws.acceptance_rate,
        "draws": len(draws),
        "ess": effective_sample_size(chains[0]) if len(chains[0]) >= 100 else None,
    }
    if grid is None:
        rec["concentration"] = {
            repr(e): concentration_mass(draws, theta0, e) for e in cfg["diagnostics.concentration_eps"]
        }
        if len(draws) >= 1000:
            mg, cg = moment_gap_to_normal(draws, fit.theta_n, n, H0)
            rec["moment_gaps"] = {"mean_gap": mg, "cov_gap": cg}

    if cfg["diagnostics.sandwich"] and model.component_gradients is not None:
        try:
            rec["sandwich"] = sandwich_covariance(model, fit).to_dict()
        except Exception as exc:  # reported, not fatal: the sandwich is optional output
            rec["sandwich"] = {"error": str(exc)}

    if cfg["coverage.enabled"]:
        truth = true_theta(cfg)
        if truth is None:
            raise StageError("coverage", "coverage needs data.theta_true")
        settings = SamplerSettings(cfg["coverage.steps"], cfg["coverage.burn_in"], cfg["optimizer.tol"], cfg["optimizer.max_iter"])
        modes = {"raw": [False], "calibrated": [True], "both": [False, True]}[cfg["coverage.calibrate"]]
        for cal in modes:
            rep = _stage(
                "coverage", coverage_experiment, ConfigGenerator(dict(cfg), n_label), ConfigBuilder(dict(cfg)),
                truth, cfg["coverage.rho"], cfg["coverage.reps"], seed, cal, settings, init, threads,
            )
            rec["coverage_cal" if cal else "coverage_raw"] = rep.to_dict()

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        draws.to_csv(out_dir / "draws.csv")
        if grid is not None:
            grid.to_csv(out_dir / "grid.csv")
    return rec


def run_experiment(cfg: Config, seed: Optional[int] = None, out_dir=None, threads=1) -> dict:
    """Run every configured sample size; writes result.json and the draw/grid files."""
    seed = cfg["seed"] if seed is None else int(seed)
    out = Path(out_dir if out_dir is not None else cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    ns = cfg["data.n"]
    runs = []
    for i, n in enumerate(ns):
        if cfg["data.source"] == "file":
            data = load_data(cfg, cfg["data.path"])
        else:
            data = _stage("simulate", simulate_data, cfg, n, int(make_rng(seed, 1000 + i).integers(2**62)))
        sub = out if len(ns) == 1 else out / f"n_{n}"
        rec = run_single(cfg, data, n, seed, sub, threads)
        runs.append(rec)
    if len(ns) > 1:
        # top-level draws/grid mirror the last sample size
        last = out / f"n_{ns[-1]}"
        for name in ("draws.csv", "draws.json", "grid.csv"):
            if (last / name).exists():
                (out / name).write_bytes((last / name).read_bytes())
    result = {
        "experiment": cfg["experiment.name"],
        "model_kind": cfg["model.kind"],
        "provenance": {"config_hash": cfg.hash, "seed": seed, "version": __version__},
        "runs": runs,
    }
    dump_json(result, out / "result.json")
    return result
