"""Flat ``dotted.key = value`` experiment configs with schema validation."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


class ConfigError(ValueError):
    """Schema violation; ``line`` is 1-based, or None when not tied to a line."""

    def __init__(self, message: str, line=None, path=None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line = line


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> list:
    return [float(x) for x in s.replace(",", " ").split()]


def _ints(s: str) -> list:
    return [int(x) for x in s.replace(",", " ").split()]


def _strs(s: str) -> list:
    return [x.strip() for x in s.split(",") if x.strip()]


MODEL_KINDS = (
    "iid-bernoulli", "iid-poisson", "normal-mean", "glm-linear", "glm-logistic",
    "glm-poisson", "ising", "gmrf", "boltzmann", "cox", "median",
)

# key -> (parser, default); a default of None means optional without value
SCHEMA: dict = {
    "experiment.name": (str, "experiment"),
    "seed": (int, 0),
    "output.dir": (str, "out"),
    "model.kind": (str, None),
    "model.sigma2": (float, 1.0),
    "model.power": (float, 1.0),
    "model.gamma": (float, 1.0),
    "model.isotropic": (_bool, True),
    "model.cdf": (str, "logistic"),
    "data.source": (str, "generator"),
    "data.path": (str, None),
    "data.n": (_ints, [100]),
    "data.theta_true": (_floats, None),
    "data.exact_proportion": (_bool, False),
    "data.covariates": (_strs, ["iid-gaussian", "1.0"]),
    "data.intercept": (_bool, False),
    "data.sigma": (float, 1.0),
    "data.L": (int, 32),
    "data.m": (int, 2),
    "data.sweeps": (int, 1000),
    "data.burn_sweeps": (int, 500),
    "data.baseline": (_strs, ["exponential", "1.0"]),
    "data.censor": (_strs, ["exponential", "0.0"]),
    "data.noise": (_strs, ["gaussian", "1.0"]),
    "prior.kind": (str, "gaussian"),
    "prior.mean": (_floats, None),
    "prior.sd": (float, 10.0),
    "prior.lower": (_floats, None),
    "prior.upper": (_floats, None),
    "optimizer.tol": (float, 1e-10),
    "optimizer.max_iter": (int, 200),
    "optimizer.init": (_floats, None),
    "sampler.steps": (int, 20000),
    "sampler.burn_in": (int, 5000),
    "sampler.chains": (int, 1),
    "diagnostics.theta0": (_floats, None),
    "diagnostics.tv": (_bool, True),
    "diagnostics.grid_resolution": (int, 2048),
    "diagnostics.grid_halfwidth": (float, 10.0),
    "diagnostics.concentration_eps": (_floats, [0.1]),
    "diagnostics.audit": (_bool, True),
    "diagnostics.audit_radius": (float, 0.5),
    "diagnostics.sandwich": (_bool, True),
    "coverage.enabled": (_bool, False),
    "coverage.rho": (float, 0.9),
    "coverage.reps": (int, 200),
    "coverage.calibrate": (str, "both"),
    "coverage.steps": (int, 4000),
    "coverage.burn_in": (int, 1000),
}

REQUIRED = ("model.kind",)


class Config(dict):
    """Validated config: every schema key present, defaults filled in."""

    source_text: str = ""

    @property
    def hash(self) -> str:
        blob = json.dumps({k: self[k] for k in sorted(self)}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def explicit(self) -> dict:
        return {k: v for k, v in self.items() if v is not None}


def parse_config(text: str, path=None) -> Config:
    seen: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, path)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", lineno, path)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r}", lineno, path)
        parser = SCHEMA[key][0]
        try:
            seen[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno, path) from None
    cfg = Config()
    for key, (_, default) in SCHEMA.items():
        cfg[key] = seen.get(key, default)
    for key in REQUIRED:
        if cfg[key] is None:
            raise ConfigError(f"missing required key {key!r}", None, path)
    if cfg["model.kind"] not in MODEL_KINDS:
        raise ConfigError(
            f"model.kind must be one of {', '.join(MODEL_KINDS)}; got {cfg['model.kind']!r}", None, path
        )
    if cfg["data.source"] not in ("generator", "file"):
        raise ConfigError("data.source must be 'generator' or 'file'", None, path)
    if cfg["data.source"] == "file" and not cfg["data.path"]:
        raise ConfigError("data.source = file needs data.path", None, path)
    if cfg["prior.kind"] not in ("gaussian", "uniform", "flat"):
        raise ConfigError("prior.kind must be gaussian, uniform or flat", None, path)
    if cfg["coverage.calibrate"] not in ("raw", "calibrated", "both"):
        raise ConfigError("coverage.calibrate must be raw, calibrated or both", None, path)
    cfg.source_text = text
    return cfg


def load_config(path) -> Config:
    path = Path(path)
    return parse_config(path.read_text(), path=str(path))
