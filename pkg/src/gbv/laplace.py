"""Laplace approximation of the normalizer and the local normal density."""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .core import LOG_2PI, GBVError, GeneralizedPosterior, as_param
from .numerics import FitResult


class NotPositiveDefinite(GBVError, np.linalg.LinAlgError):
    pass


@dataclasses.dataclass
class LaplaceResult:
    log_zhat: float
    mean: np.ndarray
    covariance: np.ndarray
    log_det_H: float

    def to_dict(self) -> dict:
        return {
            "log_zhat": self.log_zhat,
            "mean": self.mean.tolist(),
            "covariance": self.covariance.tolist(),
            "log_det_H": self.log_det_H,
        }


def laplace_log_normalizer(gp: GeneralizedPosterior, fit: FitResult) -> LaplaceResult:
    """log z_n ~ -n f(theta_n) + log prior(theta_n) + D/2 log(2 pi / n) - 1/2 log det H_n.

    The prior is evaluated at theta_n since the limit point is unknown.
    """
    if not fit.converged:
        raise GBVError("Laplace undefined: optimizer did not converge")
    H = np.asarray(fit.hessian_at_min, dtype=float)
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("Laplace undefined: Hessian not positive definite") from None
    d = H.shape[0]
    n = float(gp.n)
    log_det = 2.0 * float(np.sum(np.log(np.diag(L))))
    log_prior = gp.prior(fit.theta_n)
    log_zhat = -n * fit.f_min + log_prior + 0.5 * d * (LOG_2PI - math.log(n)) - 0.5 * log_det
    Linv = np.linalg.inv(L)
    cov = (Linv.T @ Linv) / n
    return LaplaceResult(log_zhat, np.array(fit.theta_n, dtype=float), 0.5 * (cov + cov.T), log_det)


def normal_logpdf(x, mean, cov) -> np.ndarray:
    """Multivariate normal log-density; ``x`` may be a single point or rows of points."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    d = mean.size
    L = np.linalg.cholesky(cov)
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1 and x.size == d
    z = np.linalg.solve(L, (x.reshape(-1, d) - mean).T)
    out = -0.5 * d * LOG_2PI - float(np.sum(np.log(np.diag(L)))) - 0.5 * np.sum(z * z, axis=0)
    return float(out[0]) if single else out


def laplace_normal_density(lr: LaplaceResult, theta) -> float:
    t = as_param(theta, lr.mean.size)
    return math.exp(normal_logpdf(t, lr.mean, lr.covariance))
