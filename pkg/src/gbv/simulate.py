"""Data generators for the experiments. Every generator is a pure function of its
arguments and ``seed``."""

from __future__ import annotations

import dataclasses
import itertools
import logging
import warnings

import numpy as np
from scipy.special import expit

from .core import GBVError
from .models.expfam import GLMDataset, family
from .models.pseudolik import FieldSample, TorusLattice
from .models.special import SurvivalDataset
from .rng import make_rng

logger = logging.getLogger(__name__)

ISING_COUPLING_WARN = 0.4
POISSON_ETA_MAX = 30.0


@dataclasses.dataclass(frozen=True)
class GeneratorSpec:
    kind: str
    params: dict
    seed: int = 0


def covariates(spec, n: int, D: int, rng: np.random.Generator) -> np.ndarray:
    """Draw an (n, D) covariate matrix.

    ``spec`` is ("iid-gaussian", scale), ("rademacher",) or
    ("bounded-uniform", a, b).
    """
    spec = (spec,) if isinstance(spec, str) else tuple(spec)
    kind = spec[0]
    if kind == "iid-gaussian":
        scale = float(spec[1]) if len(spec) > 1 else 1.0
        return scale * rng.standard_normal((n, D))
    if kind == "rademacher":
        return rng.choice(np.array([-1.0, 1.0]), size=(n, D))
    if kind == "bounded-uniform":
        a, b = (float(spec[1]), float(spec[2])) if len(spec) > 2 else (-1.0, 1.0)
        return rng.uniform(a, b, size=(n, D))
    raise ValueError(f"unknown covariate spec {spec!r}")


def gen_glm(
    kind: str,
    theta_true,
    n: int,
    covariate_spec=("iid-gaussian", 1.0),
    seed: int = 0,
    intercept: bool = False,
    sigma: float = 1.0,
) -> GLMDataset:
    """i.i.d. (x_i, y_i) with y_i from the named family at the natural parameter theta . x_i.

    With ``intercept`` the first covariate column is fixed at 1.
    """
    theta = np.atleast_1d(np.asarray(theta_true, dtype=float))
    D = theta.size
    rng = make_rng(seed, 0)
    if intercept:
        X = np.column_stack([np.ones(n), covariates(covariate_spec, n, D - 1, rng)]) if D > 1 else np.ones((n, 1))
    else:
        X = covariates(covariate_spec, n, D, rng)
    eta = X @ theta
    if kind == "linear":
        y = eta + sigma * rng.standard_normal(n)
        fam = family("gaussian", sigma**2)
    elif kind == "logistic":
        y = (rng.random(n) < expit(eta)).astype(float)
        fam = family("bernoulli")
    elif kind == "poisson":
        if np.max(eta) > POISSON_ETA_MAX:
            raise GBVError(
                "Poisson mean overflow (theta.x > 30): use bounded covariates so E exp(c|X|) is finite"
            )
        y = rng.poisson(np.exp(eta)).astype(float)
        fam = family("poisson")
    else:
        raise ValueError(f"unknown GLM kind {kind!r}")
    return GLMDataset(X, y, fam)


def gen_ising_gibbs(
    L: int, m: int, theta_true, sweeps: int = 1000, burn_sweeps: int = 500, seed: int = 0
) -> FieldSample:
    """Systematic-scan Gibbs sampler on the periodic lattice; returns the final field.

    The conditional law of a spin is P(+1 | rest) = sigmoid(2 (theta_1 + theta_2 * neighbor sum)).
    On even L the scan visits all even-parity sites then all odd-parity sites,
    which is the same kernel as a site-by-site sweep in that order.
    """
    if not sweeps > burn_sweeps >= 50:
        raise ValueError("need sweeps > burn_sweeps >= 50")
    h, J = (float(v) for v in np.asarray(theta_true, dtype=float).ravel()[:2])
    if m == 2 and abs(J) >= ISING_COUPLING_WARN:
        warnings.warn(
            f"|theta_2|={abs(J)} is near or above the critical coupling; mixing will be slow",
            RuntimeWarning,
        )
    lat = TorusLattice(m, L)
    rng = make_rng(seed, 0)
    nb = lat.neighbors
    y = rng.choice(np.array([-1.0, 1.0]), size=lat.size)
    if L % 2 == 0:
        parity = np.sum(np.indices(lat.shape), axis=0).ravel() % 2
        blocks = [np.flatnonzero(parity == 0), np.flatnonzero(parity == 1)]
        for _ in range(sweeps):
            for idx in blocks:
                eta = h + J * y[nb[idx]].sum(axis=1)
                y[idx] = np.where(rng.random(idx.size) < expit(2.0 * eta), 1.0, -1.0)
    else:
        for _ in range(sweeps):
            u = rng.random(lat.size)
            for i in range(lat.size):
                eta = h + J * y[nb[i]].sum()
                y[i] = 1.0 if u[i] < expit(2.0 * eta) else -1.0
    return FieldSample(lat, y)


def gmrf_precision(L: int, m: int, theta, gamma: float) -> np.ndarray:
    """Q = gamma (I - B) with B holding theta on neighbor pairs.

    ``theta`` has length 1 (all directions), m (one per axis) or 2m (one per
    neighbor direction, which must agree on opposite directions).
    """
    lat = TorusLattice(m, L)
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    if th.size == 1:
        th = np.repeat(th, 2 * m)
    elif th.size == m:
        th = np.repeat(th, 2)
    elif th.size != 2 * m:
        raise ValueError("theta must have length 1, m or 2m")
    B = np.zeros((lat.size, lat.size))
    rows = np.arange(lat.size)
    for k in range(2 * m):
        np.add.at(B, (rows, lat.neighbors[:, k]), th[k])
    if not np.allclose(B, B.T, atol=0.0):
        raise GBVError("neighbor coefficients are asymmetric: no valid joint Gaussian")
    return gamma * (np.eye(lat.size) - B)


def gen_gmrf(L: int, m: int, theta_true, gamma: float = 1.0, seed: int = 0, n_fields: int = 1):
    """Exact Gaussian field(s) with precision gamma (I - B) via a dense Cholesky factor."""
    if not gamma > 0:
        raise GBVError("gamma must be positive")
    Q = gmrf_precision(L, m, theta_true, gamma)
    try:
        C = np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        raise GBVError("conditional spec has no valid joint: reduce |θ|") from None
    lat = TorusLattice(m, L)
    rng = make_rng(seed, 0)
    z = rng.standard_normal((lat.size, n_fields))
    # Q = C C^T, so y = C^{-T} z has covariance Q^{-1}
    Y = np.linalg.solve(C.T, z)
    fields = [FieldSample(lat, Y[:, k]) for k in range(n_fields)]
    return fields[0] if n_fields == 1 else fields


@dataclasses.dataclass
class BoltzmannTable:
    states: np.ndarray
    probs: np.ndarray


def boltzmann_table(A, b) -> BoltzmannTable:
    """All 2^d states of {-1,1}^d with probabilities proportional to exp(y'Ay + b'y)."""
    b = np.asarray(b, dtype=float).ravel()
    d = b.size
    if d > 20:
        raise GBVError("exact enumeration supports d <= 20")
    A = np.triu(np.asarray(A, dtype=float), k=1)
    states = np.array(list(itertools.product([-1.0, 1.0], repeat=d)))
    energy = np.einsum("si,ij,sj->s", states, A, states) + states @ b
    p = np.exp(energy - energy.max())
    return BoltzmannTable(states, p / p.sum())


def gen_boltzmann_exact(d: int, A, b, n: int, seed: int = 0):
    """n i.i.d. draws by inverse CDF on the enumerated table; returns (samples, table)."""
    if d > 20:
        raise GBVError("exact enumeration supports d <= 20")
    table = boltzmann_table(A, b)
    if table.states.shape[1] != d:
        raise ValueError("A, b do not match d")
    rng = make_rng(seed, 0)
    cdf = np.cumsum(table.probs)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, rng.random(n), side="right")
    return table.states[idx], table


def gen_cox(
    n: int,
    theta_true,
    baseline=("exponential", 1.0),
    censor=("exponential", 0.0),
    covariate_spec=("bounded-uniform", -1.0, 1.0),
    seed: int = 0,
) -> SurvivalDataset:
    """Proportional-hazards times by inverse transform, with independent censoring."""
    theta = np.atleast_1d(np.asarray(theta_true, dtype=float))
    if covariate_spec[0] == "iid-gaussian":
        raise ValueError("Cox covariates must be bounded")
    rng = make_rng(seed, 0)
    X = covariates(covariate_spec, n, theta.size, rng)
    E = -np.log(rng.random(n)) * np.exp(-(X @ theta))  # cumulative baseline hazard at T
    kind = baseline[0]
    if kind == "exponential":
        T = E / float(baseline[1])
    elif kind == "weibull":
        k, lam = float(baseline[1]), float(baseline[2])
        T = lam * E ** (1.0 / k)
    else:
        raise ValueError(f"unknown baseline {baseline!r}")
    ckind = censor[0]
    if ckind == "exponential":
        rate = float(censor[1])
        C = np.full(n, np.inf) if rate == 0 else rng.exponential(1.0 / rate, n)
    elif ckind == "uniform":
        C = rng.uniform(0.0, float(censor[1]), n)
    else:
        raise ValueError(f"unknown censoring {censor!r}")
    z = (T <= C).astype(int)
    return SurvivalDataset(np.minimum(T, C), z, X)


def gen_location(n: int, theta0: float = 0.0, noise=("gaussian", 1.0), seed: int = 0) -> np.ndarray:
    """Location-family draws theta0 + noise.

    noise is ("gaussian", sigma), ("cauchy", scale) or
    ("mixture", eps, outlier_scale[, sigma]); the mixture with eps = 0
    reproduces the gaussian draws exactly.
    """
    rng = make_rng(seed, 0)
    kind = noise[0]
    if kind == "gaussian":
        return theta0 + float(noise[1]) * rng.standard_normal(n)
    if kind == "cauchy":
        return theta0 + float(noise[1]) * rng.standard_cauchy(n)
    if kind == "mixture":
        eps, scale = float(noise[1]), float(noise[2])
        sigma = float(noise[3]) if len(noise) > 3 else 1.0
        z = sigma * rng.standard_normal(n)
        out = rng.random(n) < eps
        return theta0 + np.where(out, scale * z, z)
    raise ValueError(f"unknown noise {noise!r}")


def generate(spec: GeneratorSpec):
    """Dispatch a GeneratorSpec to the matching generator."""
    p = dict(spec.params)
    fns = {
        "glm": lambda: gen_glm(seed=spec.seed, **p),
        "ising": lambda: gen_ising_gibbs(seed=spec.seed, **p),
        "gmrf": lambda: gen_gmrf(seed=spec.seed, **p),
        "boltzmann": lambda: gen_boltzmann_exact(seed=spec.seed, **p)[0],
        "cox": lambda: gen_cox(seed=spec.seed, **p),
        "location": lambda: gen_location(seed=spec.seed, **p),
    }
    try:
        return fns[spec.kind]()
    except KeyError:
        raise ValueError(f"unknown generator kind {spec.kind!r}") from None
