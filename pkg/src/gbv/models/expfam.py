"""One-parameter exponential families, i.i.d. natural-family losses and GLMs.

Every loss here has the form

    f_n(theta) = (1/n) sum_i w_i [kappa(theta . x_i) - s(y_i) theta . x_i]

so value, gradient, Hessian and third tensor all come from kappa and its
derivatives.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from ..core import DomainBox, GBVError, ObjectiveModel


@dataclasses.dataclass(frozen=True, eq=False)
class ExpFam1P:
    """q(y | eta) = exp(eta s(y) - kappa(eta)) with kappa and three derivatives."""

    name: str
    kappa: Callable
    d1: Callable
    d2: Callable
    d3: Callable
    s: Callable
    d3_sup: Optional[float] = None
    eta_domain: tuple = (-math.inf, math.inf)


def gaussian(sigma2: float = 1.0) -> ExpFam1P:
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    return ExpFam1P(
        name=f"gaussian({sigma2:g})",
        kappa=lambda e: np.asarray(e) ** 2 / (2.0 * sigma2),
        d1=lambda e: np.asarray(e) / sigma2,
        d2=lambda e: np.full_like(np.asarray(e, dtype=float), 1.0 / sigma2),
        d3=lambda e: np.zeros_like(np.asarray(e, dtype=float)),
        s=lambda y: np.asarray(y, dtype=float) / sigma2,
        d3_sup=0.0,
    )


def _softplus(e):
    e = np.asarray(e, dtype=float)
    return np.maximum(e, 0.0) + np.log1p(np.exp(-np.abs(e)))


def _bern_d3(e):
    p = expit(e)
    return p * (1.0 - p) * (1.0 - 2.0 * p)


BERNOULLI = ExpFam1P(
    name="bernoulli-logit",
    kappa=_softplus,
    d1=expit,
    d2=lambda e: expit(e) * (1.0 - expit(e)),
    d3=_bern_d3,
    s=lambda y: np.asarray(y, dtype=float),
    # the analytic sup is 1/(6 sqrt 3); 3 is the cruder certified bound
    d3_sup=3.0,
)

POISSON = ExpFam1P(
    name="poisson",
    kappa=lambda e: np.exp(e),
    d1=lambda e: np.exp(e),
    d2=lambda e: np.exp(e),
    d3=lambda e: np.exp(e),
    s=lambda y: np.asarray(y, dtype=float),
    d3_sup=None,
)


def _pm_kappa(e):
    e = np.asarray(e, dtype=float)
    a = np.abs(e)
    return a + np.log1p(np.exp(-2.0 * a))


PLUSMINUS = ExpFam1P(
    name="plusminus-binary",
    kappa=_pm_kappa,
    d1=np.tanh,
    d2=lambda e: 1.0 - np.tanh(e) ** 2,
    d3=lambda e: -2.0 * np.tanh(e) * (1.0 - np.tanh(e) ** 2),
    s=lambda y: np.asarray(y, dtype=float),
    d3_sup=2.0,
)

FAMILIES = {"bernoulli": BERNOULLI, "logistic": BERNOULLI, "poisson": POISSON, "plusminus": PLUSMINUS}


def family(name: str, sigma2: float = 1.0) -> ExpFam1P:
    if name in ("gaussian", "linear", "normal"):
        return gaussian(sigma2)
    try:
        return FAMILIES[name]
    except KeyError:
        raise ValueError(f"unknown family {name!r}") from None


def _d3_bound_on_box(fam: ExpFam1P, rows: np.ndarray, box: DomainBox) -> float:
    """Frobenius bound on the third tensor over ``box``.

    Uses sup|kappa'''| over the box-reachable linear predictors times the
    largest |x_j x_k x_l| per index triple.
    """
    if fam.d3_sup is not None:
        sup = fam.d3_sup
    elif fam is POISSON:
        # kappa''' = exp(eta) is increasing; bound eta over the box corners
        if not box.bounded:
            return math.inf
        eta_max = float(np.max(np.maximum(rows * box.upper, rows * box.lower).sum(axis=1)))
        sup = math.exp(eta_max)
    else:
        return math.inf
    if sup == 0.0:
        return 0.0
    amax = np.max(np.abs(rows), axis=0)
    cube = np.einsum("i,j,k->ijk", amax, amax, amax)
    return float(sup * np.linalg.norm(cube.ravel()))


def linear_predictor_model(
    rows,
    responses,
    fam: ExpFam1P,
    n: Optional[float] = None,
    weights=None,
    groups=None,
    name: str = "glm",
    domain: Optional[DomainBox] = None,
    info: Optional[dict] = None,
) -> ObjectiveModel:
    """f_n(theta) = (1/n) sum_r w_r [kappa(theta . x_r) - s_r theta . x_r].

    ``responses`` are the already-transformed sufficient statistics s(y_r).
    ``groups`` assigns rows to sandwich components (default: one per row);
    ``n`` defaults to the total weight.
    """
    X = np.atleast_2d(np.asarray(rows, dtype=float))
    R, D = X.shape
    s = np.asarray(responses, dtype=float).reshape(R)
    w = np.ones(R) if weights is None else np.asarray(weights, dtype=float).reshape(R)
    if np.any(~np.isfinite(X)) or np.any(~np.isfinite(s)) or np.any(w < 0):
        raise ValueError("rows/responses must be finite and weights non-negative")
    nn = float(w.sum()) if n is None else float(n)
    ws = w * s
    lin = (ws @ X) / nn  # (1/n) sum w s x
    if groups is None:
        gidx, k = np.arange(R), R
    else:
        _, gidx = np.unique(np.asarray(groups), return_inverse=True)
        k = int(gidx.max()) + 1
    kap, d1, d2, d3 = fam.kappa, fam.d1, fam.d2, fam.d3

    def value(t):
        return float(w @ kap(X @ t)) / nn - float(lin @ t)

    def gradient(t):
        return ((w * d1(X @ t)) @ X) / nn - lin

    def hessian(t):
        c = w * d2(X @ t) / nn
        return (X * c[:, None]).T @ X

    def third(t):
        c = w * d3(X @ t) / nn
        return np.einsum("r,ri,rj,rk->ijk", c, X, X, X)

    def component_gradients(t):
        g = (w * (d1(X @ t) - s))[:, None] * X
        if groups is None:
            return g
        out = np.zeros((k, D))
        np.add.at(out, gidx, g)
        return out

    meta = {"component_count": k, "rows": R, "family": fam.name}
    meta.update(info or {})
    return ObjectiveModel(
        dim=D,
        value=value,
        gradient=gradient,
        hessian=hessian,
        third=third,
        third_bound=lambda box: _d3_bound_on_box(fam, X, box),
        domain=domain,
        convex=True,
        component_gradients=component_gradients,
        n=nn,
        name=name,
        info=meta,
    )


# i.i.d. natural exponential families ---------------------------------------


def build_iid_expfam(fam, data, kappa_multi=None, name: Optional[str] = None) -> ObjectiveModel:
    """f_n(theta) = kappa(theta) - theta . S_n for i.i.d. data.

    ``fam`` is a one-parameter family (data are scalars, S_n the mean of s(y)),
    or pass ``kappa_multi=(kappa, grad, hess)`` with ``data`` an (n, D) array of
    sufficient statistics.
    """
    if kappa_multi is None:
        fam = family(fam) if isinstance(fam, str) else fam
        y = np.asarray(data, dtype=float).ravel()
        if y.size == 0:
            raise GBVError("empty data")
        stats = fam.s(y).reshape(-1, 1)
        k0, k1, k2, k3 = fam.kappa, fam.d1, fam.d2, fam.d3

        def kv(t):
            return float(k0(t[0]))

        def kg(t):
            return np.array([float(k1(t[0]))])

        def kh(t):
            return np.array([[float(k2(t[0]))]])

        def kt(t):
            return np.array([[[float(k3(t[0]))]]])

        def kbound(box):
            return _d3_bound_on_box(fam, np.ones((1, 1)), box)

        label = name or f"iid-{fam.name}"
    else:
        stats = np.atleast_2d(np.asarray(data, dtype=float))
        if stats.size == 0:
            raise GBVError("empty data")
        kv, kg, kh = kappa_multi
        kt, kbound = None, None
        label = name or "iid-expfam"
    if not np.all(np.isfinite(stats)):
        raise ValueError("sufficient statistics must be finite")
    n, D = stats.shape
    S = stats.mean(axis=0)

    return ObjectiveModel(
        dim=D,
        value=lambda t: float(kv(t)) - float(S @ t),
        gradient=lambda t: np.asarray(kg(t), dtype=float) - S,
        hessian=lambda t: np.atleast_2d(np.asarray(kh(t), dtype=float)),
        third=kt,
        third_bound=kbound,
        convex=True,
        component_gradients=lambda t: np.asarray(kg(t), dtype=float)[None, :] - stats,
        n=float(n),
        name=label,
        info={"component_count": n, "S_n": S.tolist()},
    )


# GLMs -----------------------------------------------------------------------


@dataclasses.dataclass
class GLMDataset:
    X: np.ndarray
    y: np.ndarray
    family: ExpFam1P

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.shape[0] != self.y.size:
            raise ValueError("X and y have different numbers of rows")
        if np.any(~np.isfinite(self.X)) or np.any(~np.isfinite(self.y)):
            raise ValueError("GLM data contain NaN or infinite values")

    @property
    def n(self) -> int:
        return self.y.size

    def to_csv(self, path) -> None:
        D = self.X.shape[1]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow([f"x_{j + 1}" for j in range(D)] + ["y"])
            for xi, yi in zip(self.X, self.y):
                wr.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])

    @classmethod
    def from_csv(cls, path, fam) -> "GLMDataset":
        fam = family(fam) if isinstance(fam, str) else fam
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd, None)
            if header is None or header[-1].strip() != "y" or not all(
                h.strip().startswith("x_") for h in header[:-1]
            ):
                raise ValueError(f"{path}: GLM CSV needs header x_1..x_D,y")
            data = np.array([[float(v) for v in row] for row in rd if row], dtype=float)
        return cls(data[:, :-1], data[:, -1], fam)


RANK_TOL = 1e-10


def check_full_rank(X: np.ndarray) -> float:
    n = X.shape[0]
    smin = float(np.linalg.svd(X / math.sqrt(n), compute_uv=False).min()) if X.shape[0] >= X.shape[1] else 0.0
    if smin <= RANK_TOL:
        raise GBVError("covariates linearly dependent: θ not identifiable")
    return smin


def build_glm(data: GLMDataset, name: Optional[str] = None) -> ObjectiveModel:
    """Negative average GLM log-likelihood in the natural parametrization."""
    check_full_rank(data.X)
    fam = data.family
    return linear_predictor_model(
        data.X, fam.s(data.y), fam, n=data.n, name=name or f"glm-{fam.name}"
    )


def kappa_derivative_errors(fam: ExpFam1P, etas) -> np.ndarray:
    """Max relative error of kappa', kappa'', kappa''' against central differences of kappa."""
    etas = np.asarray(etas, dtype=float)
    errs = np.zeros((3, etas.size))
    for i, e in enumerate(etas):
        h = 1e-2 * max(1.0, abs(e))
        k = lambda x: float(fam.kappa(x))  # noqa: E731
        # fourth-order stencils keep truncation below 1e-6 at these steps
        fd1 = (-k(e + 2 * h) + 8 * k(e + h) - 8 * k(e - h) + k(e - 2 * h)) / (12 * h)
        fd2 = (-k(e + 2 * h) + 16 * k(e + h) - 30 * k(e) + 16 * k(e - h) - k(e - 2 * h)) / (12 * h * h)
        fd3 = (
            -k(e + 3 * h) + 8 * k(e + 2 * h) - 13 * k(e + h) + 13 * k(e - h) - 8 * k(e - 2 * h) + k(e - 3 * h)
        ) / (8 * h**3)
        for r, (an, fd) in enumerate(
            [(fam.d1(e), fd1), (fam.d2(e), fd2), (fam.d3(e), fd3)]
        ):
            errs[r, i] = abs(float(an) - fd) / max(1.0, abs(fd))
    return errs.max(axis=1)
