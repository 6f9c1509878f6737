"""Cox partial likelihood and the median-based location loss."""

from __future__ import annotations

import csv
import dataclasses
import math
import warnings
from typing import Callable

import numpy as np
from scipy.special import expit, log_ndtr, ndtr

from ..core import GBVError, ObjectiveModel


@dataclasses.dataclass
class SurvivalDataset:
    times: np.ndarray
    events: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).ravel()
        self.events = np.asarray(self.events).ravel().astype(int)
        X = np.asarray(self.X, dtype=float)
        self.X = X.reshape(-1, 1) if X.ndim == 1 else X
        n = self.times.size
        if self.events.size != n or self.X.shape[0] != n:
            raise ValueError("times, events and covariates must have equal length")
        if np.any(~np.isfinite(self.times)) or np.any(~np.isfinite(self.X)):
            raise ValueError("survival data contain NaN or infinite values")
        if np.any(self.times < 0):
            raise ValueError("survival times must be non-negative")
        if not set(np.unique(self.events)) <= {0, 1}:
            raise ValueError("event indicators must be 0 or 1")
        if self.events.sum() == 0:
            raise GBVError("no observed events: partial likelihood is constant")

    @property
    def n(self) -> int:
        return self.times.size

    def to_csv(self, path) -> None:
        D = self.X.shape[1]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["time", "event"] + [f"x_{j + 1}" for j in range(D)])
            for t, z, x in zip(self.times, self.events, self.X):
                wr.writerow([repr(float(t)), int(z)] + [repr(float(v)) for v in x])

    @classmethod
    def from_csv(cls, path) -> "SurvivalDataset":
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = [h.strip() for h in next(rd)]
            if header[:2] != ["time", "event"] or len(header) < 3:
                raise ValueError(f"{path}: survival CSV needs header time,event,x_1..x_D")
            data = np.array([[float(v) for v in row] for row in rd if row])
        return cls(data[:, 0], data[:, 1].astype(int), data[:, 2:])


def cox_partial_model(data: SurvivalDataset) -> ObjectiveModel:
    """f_n(theta) = (1/n) sum_i z_i H_{y_i}(theta) - theta . (1/n) sum_i z_i x_i.

    H_y(theta) = log((1/n) sum_{j: y_j >= y} exp(theta . x_j)). Times are
    sorted once; each evaluation is one cumulative sweep from the latest time
    backwards. Tied times share a risk set (Breslow).
    """
    X, z, n = data.X, data.events.astype(float), data.n
    D = X.shape[1]
    Xc = X - X.mean(axis=0)
    if np.linalg.svd(Xc / math.sqrt(n), compute_uv=False).min() <= 1e-10:
        raise GBVError("covariates linearly dependent or constant: θ not identifiable")

    order = np.argsort(-data.times, kind="stable")
    ts = data.times[order]
    Xs, zs = X[order], z[order]
    # within a block of tied times every member sees the whole block
    block_end = np.searchsorted(-ts, -ts, side="right") - 1
    ev_times = data.times[data.events == 1]
    if np.unique(ev_times).size < ev_times.size or np.any(
        np.isin(ev_times, data.times[data.events == 0])
    ):
        warnings.warn("tied event times: using the Breslow convention", RuntimeWarning)
    zx = (zs @ Xs) / n
    nz = zs > 0
    log_n = math.log(n)
    outer = np.einsum("ri,rj->rij", Xs, Xs)

    def _moments(t, order_needed):
        eta = Xs @ t
        M = float(eta.max())
        w = np.exp(eta - M)
        S0 = np.cumsum(w)[block_end]
        out = [S0, M]
        if order_needed >= 1:
            out.append(np.cumsum(w[:, None] * Xs, axis=0)[block_end])
        if order_needed >= 2:
            out.append(np.cumsum(w[:, None, None] * outer, axis=0)[block_end])
        return eta, out

    def value(t):
        eta = Xs @ t
        H = np.logaddexp.accumulate(eta)[block_end] - log_n
        return float(zs[nz] @ H[nz]) / n - float(zx @ t)

    def _xbar(t):
        _, (S0, _M, S1) = _moments(t, 1)
        return S1 / S0[:, None]

    def gradient(t):
        xbar = _xbar(t)
        return (zs[nz] @ xbar[nz]) / n - zx

    def hessian(t):
        _, (S0, _M, S1, S2) = _moments(t, 2)
        xbar = S1 / S0[:, None]
        cov = S2 / S0[:, None, None] - np.einsum("ri,rj->rij", xbar, xbar)
        return np.tensordot(zs[nz], cov[nz], axes=1) / n

    def component_gradients(t):
        g = np.zeros((n, D))
        g_sorted = zs[:, None] * (_xbar(t) - Xs)
        g[order] = g_sorted
        return g

    return ObjectiveModel(
        dim=D,
        value=value,
        gradient=gradient,
        hessian=hessian,
        convex=True,
        component_gradients=component_gradients,
        n=float(n),
        name="cox-partial",
        info={"component_count": n, "events": int(z.sum())},
    )


# median-based location -------------------------------------------------------


@dataclasses.dataclass(frozen=True, eq=False)
class SymmetricCDF:
    """G with G(-x) = 1 - G(x), plus (log G)', (log G)'', (log G)'''."""

    name: str
    G: Callable
    logG: Callable
    dlogG: Callable
    d2logG: Callable
    d3logG: Callable
    d3_sup: float = math.inf

    def check(self, grid=None) -> None:
        """Validate symmetry, log-concavity and the derivative callables."""
        x = np.linspace(-8.0, 8.0, 161) if grid is None else np.asarray(grid, dtype=float)
        if np.max(np.abs(self.G(-x) - (1.0 - self.G(x)))) > 1e-12:
            raise GBVError(f"{self.name}: G(-x) != 1 - G(x)")
        if np.any(self.d2logG(x) > 1e-15) or not self.d2logG(0.0) < 0:
            raise GBVError(f"{self.name}: log G is not strictly concave at 0")
        h = 1e-4
        for f, df, label in [
            (self.logG, self.dlogG, "first"),
            (self.dlogG, self.d2logG, "second"),
            (self.d2logG, self.d3logG, "third"),
        ]:
            fd = (f(x + h) - f(x - h)) / (2 * h)
            if np.max(np.abs(fd - df(x)) / np.maximum(1.0, np.abs(fd))) > 1e-6:
                raise GBVError(f"{self.name}: {label} derivative of log G fails the difference check")


def _logistic_d2(x):
    g = expit(x)
    return -g * (1.0 - g)


LOGISTIC_CDF = SymmetricCDF(
    name="logistic",
    G=expit,
    logG=lambda x: -np.logaddexp(0.0, -np.asarray(x, dtype=float)),
    dlogG=lambda x: expit(-np.asarray(x, dtype=float)),
    d2logG=_logistic_d2,
    d3logG=lambda x: _logistic_d2(x) * (1.0 - 2.0 * expit(x)),
    d3_sup=1.0 / (6.0 * math.sqrt(3.0)),
)


def _mills(x):
    # phi(x) / Phi(x), computed in log space
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x - 0.5 * math.log(2 * math.pi) - log_ndtr(x))


def _gauss_d2(x):
    r = _mills(x)
    return -r * (x + r)


def _gauss_d3(x):
    r = _mills(x)
    u = x + r
    return r * (u * u - 1.0 + r * u)


GAUSSIAN_CDF = SymmetricCDF(
    name="gaussian",
    G=ndtr,
    logG=log_ndtr,
    dlogG=_mills,
    d2logG=_gauss_d2,
    d3logG=_gauss_d3,
)

CDFS = {"logistic": LOGISTIC_CDF, "gaussian": GAUSSIAN_CDF}


def sample_median(x) -> float:
    """Middle order statistic, or the midpoint of the two middle ones for even n."""
    x = np.sort(np.asarray(x, dtype=float).ravel())
    if x.size == 0:
        raise ValueError("median of empty data")
    k = x.size // 2
    return float(x[k]) if x.size % 2 else 0.5 * float(x[k - 1] + x[k])


def median_location_model(data, G: SymmetricCDF = LOGISTIC_CDF) -> ObjectiveModel:
    """f_n(theta) = -1/2 [log G(m_n - theta) + log G(theta - m_n)], m_n the sample median."""
    G = CDFS[G] if isinstance(G, str) else G
    G.check()
    x = np.asarray(data, dtype=float).ravel()
    m = sample_median(x)

    def value(t):
        u = float(t[0]) - m
        return -0.5 * float(G.logG(-u) + G.logG(u))

    def gradient(t):
        u = float(t[0]) - m
        return np.array([0.5 * float(G.dlogG(-u) - G.dlogG(u))])

    def hessian(t):
        u = float(t[0]) - m
        return np.array([[-0.5 * float(G.d2logG(-u) + G.d2logG(u))]])

    def third(t):
        u = float(t[0]) - m
        return np.array([[[0.5 * float(G.d3logG(-u) - G.d3logG(u))]]])

    bound = None if not math.isfinite(G.d3_sup) else (lambda box: G.d3_sup)
    return ObjectiveModel(
        dim=1,
        value=value,
        gradient=gradient,
        hessian=hessian,
        third=third,
        third_bound=bound,
        convex=True,
        n=float(x.size),
        name=f"median-{G.name}",
        info={"median": m},
    )
