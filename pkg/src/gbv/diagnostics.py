"""Checks of the asymptotic behavior of a generalized posterior at finite n."""

from __future__ import annotations

import dataclasses
import functools
import logging
import math
from typing import Callable, Optional, Union

import numpy as np
from scipy.stats import norm

from .core import GBVError, GeneralizedPosterior, ObjectiveModel, as_param
from .laplace import normal_logpdf
from .numerics import FitResult, find_minimizer
from .rng import make_rng, parallel_map
from .sampler import DrawMatrix, GridDensity, rwm_sample

logger = logging.getLogger(__name__)

NORMAL_MASS_REQUIRED = 0.9999
WILSON_Z = 1.959963984540054


# total variation and moments --------------------------------------------------


def _normal_mass_in_box(lo: np.ndarray, hi: np.ndarray, cov: np.ndarray, x_pts, dens, cell_x) -> float:
    if lo.size == 1:
        sd = math.sqrt(float(cov[0, 0]))
        return float(norm.cdf(hi[0] / sd) - norm.cdf(lo[0] / sd))
    return float(np.sum(dens) * cell_x)


def tv_to_normal_limit(gd: GridDensity, theta_n, n: float, H0) -> float:
    """Total variation between the law of sqrt(n)(theta - theta_n) and N(0, H0^{-1}).

    Computed on the grid: each cell's posterior mass is compared with the
    normal density at the rescaled cell midpoint times the rescaled cell
    volume. Normal mass falling outside the grid is added in full.
    """
    d = gd.dim
    theta_n = as_param(theta_n, d)
    H0 = np.atleast_2d(np.asarray(H0, dtype=float))
    try:
        np.linalg.cholesky(H0)
    except np.linalg.LinAlgError:
        raise GBVError("H0 must be positive definite") from None
    cov = np.linalg.inv(H0)
    rn = math.sqrt(n)
    x = rn * (gd.points() - theta_n)
    cell_x = gd.cell_volume * n ** (d / 2.0)
    dens = np.exp(normal_logpdf(x, np.zeros(d), cov))
    lo = rn * (gd.box.lower - theta_n)
    hi = rn * (gd.box.upper - theta_n)
    inside = _normal_mass_in_box(lo, hi, cov, x, dens, cell_x)
    if inside < NORMAL_MASS_REQUIRED:
        raise GBVError(f"grid too small: covers {inside:.6f} of the normal limit's mass")
    tv = 0.5 * float(np.sum(np.abs(gd.probs.ravel() - dens * cell_x))) + 0.5 * max(0.0, 1.0 - inside)
    return min(1.0, max(0.0, tv))


def moment_gap_to_normal(draws, theta_n, n: float, H0):
    """(||mean x||, ||cov x - H0^{-1}||_F) for x = sqrt(n)(theta - theta_n)."""
    X = draws.draws if isinstance(draws, DrawMatrix) else np.atleast_2d(np.asarray(draws, float))
    if X.shape[0] < 1000:
        raise ValueError("moment gaps need at least 1000 draws")
    x = math.sqrt(n) * (X - as_param(theta_n, X.shape[1]))
    target = np.linalg.inv(np.atleast_2d(np.asarray(H0, dtype=float)))
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    return float(np.linalg.norm(x.mean(axis=0))), float(np.linalg.norm(cov - target))


def concentration_mass(source: Union[DrawMatrix, GridDensity, np.ndarray], theta0, eps: float) -> float:
    """Posterior mass of the open Euclidean ball of radius ``eps`` around ``theta0``.

    For 1-d grids the cells cut by the ball edge contribute their overlapping
    fraction; 2-d grids use cell midpoints.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if isinstance(source, GridDensity):
        p = source.probs.ravel()
        if source.dim == 1:
            t0 = float(np.asarray(theta0).ravel()[0])
            edges = np.linspace(source.box.lower[0], source.box.upper[0], source.resolution[0] + 1)
            left = np.clip(edges[:-1], t0 - eps, t0 + eps)
            right = np.clip(edges[1:], t0 - eps, t0 + eps)
            frac = (right - left) / np.diff(edges)
            return float(np.sum(p * frac))
        dist = np.linalg.norm(source.points() - np.asarray(theta0, dtype=float), axis=1)
        return float(np.sum(p[dist < eps]))
    X = source.draws if isinstance(source, DrawMatrix) else np.atleast_2d(np.asarray(source, float))
    X = X.reshape(X.shape[0], -1)
    dist = np.linalg.norm(X - np.asarray(theta0, dtype=float).ravel(), axis=1)
    return float(np.mean(dist < eps))


# sandwich -------------------------------------------------------------------


@dataclasses.dataclass
class SandwichEstimate:
    A_hat: np.ndarray
    J_hat: np.ndarray
    sandwich_cov: np.ndarray
    component_count: int
    n: float
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "A_hat": self.A_hat.tolist(),
            "J_hat": self.J_hat.tolist(),
            "sandwich_cov": self.sandwich_cov.tolist(),
            "component_count": self.component_count,
            "n": self.n,
            "note": self.note,
        }

    def relative_gap(self) -> float:
        """||A - J||_F / ||A||_F; near zero when the loss is a correctly specified likelihood."""
        return float(np.linalg.norm(self.A_hat - self.J_hat) / np.linalg.norm(self.A_hat))


DEPENDENT_NOTE = (
    "components are sites of one dependent field; J_hat ignores cross-site correlation"
)


def sandwich_covariance(model: ObjectiveModel, fit: FitResult) -> SandwichEstimate:
    """A^{-1} J A^{-1} / n from the Hessian and the centered component gradients at theta_n."""
    if model.component_gradients is None:
        raise GBVError(f"{model.name} exposes no component gradients")
    if not fit.converged:
        raise GBVError("sandwich needs a converged fit")
    G = np.atleast_2d(np.asarray(model.component_gradients(fit.theta_n), dtype=float))
    k, D = G.shape
    if k <= D:
        raise GBVError(f"insufficient components: k={k} <= D={D}")
    n = float(model.n if model.n is not None else k)
    Gc = G - G.mean(axis=0)
    J = Gc.T @ Gc / n
    A = model.hess(fit.theta_n)
    try:
        Ainv = np.linalg.inv(A)
        np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise GBVError("A_hat is singular or not positive definite") from None
    S = Ainv @ J @ Ainv / n
    S = 0.5 * (S + S.T)
    scale = max(1.0, float(np.max(np.abs(S))))
    if float(np.linalg.eigvalsh(S)[0]) <= 1e-14 * scale:
        raise GBVError("sandwich covariance is not positive definite (J_hat degenerate)")
    note = DEPENDENT_NOTE if model.name in ("ising-pseudolik", "gmrf-pseudolik") else ""
    return SandwichEstimate(A, J, S, k, n, note)


# calibration and credible sets -----------------------------------------------


def _sym_sqrt(M: np.ndarray, inverse: bool = False) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    if np.any(w <= 0):
        raise GBVError("matrix is singular or not positive definite")
    p = -0.5 if inverse else 0.5
    return (V * w**p) @ V.T


def affine_calibrate(draws: DrawMatrix, theta_n, sigma_target) -> DrawMatrix:
    """Map theta -> theta_n + C (theta - theta_n), C = target^{1/2} posterior^{-1/2}.

    Afterwards the draws' covariance equals ``sigma_target`` up to sampling
    error while their spread about theta_n keeps its shape.
    """
    X = draws.draws
    if X.shape[0] < 2:
        raise ValueError("need at least two draws")
    d = X.shape[1]
    c = as_param(theta_n, d)
    post = np.atleast_2d(np.cov(X, rowvar=False))
    try:
        C = _sym_sqrt(np.atleast_2d(np.asarray(sigma_target, float))) @ _sym_sqrt(post, inverse=True)
    except GBVError as exc:
        raise GBVError(f"affine calibration failed: {exc}") from None
    return dataclasses.replace(draws, draws=c + (X - c) @ C.T)


@dataclasses.dataclass
class CredibleSet:
    """Ellipsoid {theta : (theta - center)' shape^{-1} (theta - center) <= radius2}."""

    center: np.ndarray
    shape: np.ndarray
    radius2: float
    nominal_mass: float

    def mahalanobis2(self, theta) -> np.ndarray:
        X = np.atleast_2d(np.asarray(theta, dtype=float)) - self.center
        L = np.linalg.cholesky(self.shape)
        z = np.linalg.solve(L, X.T)
        return np.sum(z * z, axis=0)

    def contains(self, theta) -> bool:
        return bool(self.mahalanobis2(theta)[0] <= self.radius2)

    def half_widths(self) -> np.ndarray:
        """Half-width of the ellipsoid along each coordinate axis."""
        return np.sqrt(self.radius2 * np.diag(self.shape))


def credible_set(draws, rho: float) -> CredibleSet:
    """Ellipsoid from the draw mean and covariance holding a fraction ``rho`` of the draws."""
    if not 0 < rho < 1:
        raise ValueError("rho must be in (0, 1)")
    X = draws.draws if isinstance(draws, DrawMatrix) else np.atleast_2d(np.asarray(draws, float))
    X = X.reshape(X.shape[0], -1)
    if X.shape[0] < 1000:
        raise ValueError("credible sets need at least 1000 draws")
    center = X.mean(axis=0)
    shape = np.atleast_2d(np.cov(X, rowvar=False))
    try:
        np.linalg.cholesky(shape)
    except np.linalg.LinAlgError:
        raise GBVError("draw covariance is singular") from None
    cs = CredibleSet(center, shape, 0.0, rho)
    r2 = float(np.quantile(cs.mahalanobis2(X), rho))
    return CredibleSet(center, shape, r2, rho)


# coverage ------------------------------------------------------------------


def wilson_interval(hits: int, total: int, z: float = WILSON_Z):
    if total == 0:
        return (0.0, 1.0)
    p = hits / total
    den = 1 + z * z / total
    mid = (p + z * z / (2 * total)) / den
    half = z * math.sqrt(p * (1 - p) / total + z * z / (4 * total * total)) / den
    return (max(0.0, mid - half), min(1.0, mid + half))


@dataclasses.dataclass
class CoverageReport:
    replications: int
    hits: int
    coverage: float
    wilson_interval: tuple
    mode: str
    failed: int = 0
    rho: float = 0.9

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["wilson_interval"] = list(self.wilson_interval)
        return d


@dataclasses.dataclass(frozen=True)
class SamplerSettings:
    steps: int = 4000
    burn_in: int = 1000
    tol: float = 1e-10
    max_iter: int = 100


def _replicate(
    r: int,
    gen: Callable,
    build: Callable,
    theta0,
    rho: float,
    seed: int,
    calibrate: bool,
    settings: SamplerSettings,
    theta_init,
) -> Optional[bool]:
    data = gen(make_rng(seed, r, 0))
    gp: GeneralizedPosterior = build(data)
    init = np.zeros(gp.dim) if theta_init is None else theta_init
    fit = find_minimizer(gp.model, init, settings.tol, settings.max_iter)
    if not fit.converged:
        return None
    draws = rwm_sample(gp, fit.theta_n, settings.steps, settings.burn_in, seed, fit=fit, chain=r)
    if calibrate:
        sw = sandwich_covariance(gp.model, fit)
        draws = affine_calibrate(draws, fit.theta_n, sw.sandwich_cov)
    return credible_set(draws, rho).contains(theta0)


def coverage_experiment(
    gen: Callable,
    build: Callable,
    theta0,
    rho: float = 0.9,
    reps: int = 2000,
    seed: int = 0,
    calibrate: bool = False,
    settings: SamplerSettings = SamplerSettings(),
    theta_init=None,
    threads=1,
) -> CoverageReport:
    """Frequency with which the rho-credible ellipsoid contains theta0.

    ``gen(rng)`` simulates one dataset and ``build(data)`` turns it into a
    GeneralizedPosterior. Replication r uses the substreams (seed, r). Fits
    that fail to converge are excluded from the hit fraction and reported as
    failed. With ``threads > 1`` both callables must be picklable.
    """
    if reps < 100:
        raise ValueError("coverage needs reps >= 100")
    task = functools.partial(
        _replicate, gen=gen, build=build, theta0=np.asarray(theta0, float), rho=rho,
        seed=seed, calibrate=calibrate, settings=settings, theta_init=theta_init,
    )
    results = parallel_map(task, range(reps), threads)
    ok = [h for h in results if h is not None]
    hits = int(sum(ok))
    total = len(ok)
    cov = hits / total if total else math.nan
    return CoverageReport(
        replications=total,
        hits=hits,
        coverage=cov,
        wilson_interval=wilson_interval(hits, total),
        mode="affine-calibrated" if calibrate else "raw",
        failed=reps - total,
        rho=rho,
    )
