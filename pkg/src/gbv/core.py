"""Model contract, priors and the generalized posterior exp(-n f_n) * prior."""

from __future__ import annotations

import dataclasses
import logging
import math
from typing import Callable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


class GBVError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(GBVError, ValueError):
    pass


class EvaluationError(GBVError, ArithmeticError):
    """A model returned NaN; carries the offending parameter."""

    def __init__(self, message: str, theta=None):
        super().__init__(message)
        self.theta = None if theta is None else np.array(theta, dtype=float)


class DomainError(GBVError, ValueError):
    pass


def as_param(theta, dim: Optional[int] = None) -> np.ndarray:
    """Coerce to a finite 1-d float vector, checking the dimension if given."""
    arr = np.atleast_1d(np.asarray(theta, dtype=float))
    if arr.ndim != 1 or arr.size < 1:
        raise DimensionError(f"parameter must be a non-empty vector, got shape {arr.shape}")
    if dim is not None and arr.size != dim:
        raise DimensionError(f"expected dimension {dim}, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError(f"parameter has non-finite entries: {arr}")
    return arr


@dataclasses.dataclass(frozen=True)
class DomainBox:
    """Axis-aligned open box; infinite bounds are allowed."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionError("box bounds must be vectors of equal length")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or not np.all(lo < hi):
            raise DomainError(f"box needs lower < upper componentwise, got {lo} / {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unbounded(cls, dim: int) -> "DomainBox":
        return cls(np.full(dim, -np.inf), np.full(dim, np.inf))

    @classmethod
    def around(cls, center, half_width) -> "DomainBox":
        c = np.atleast_1d(np.asarray(center, dtype=float))
        w = np.broadcast_to(np.asarray(half_width, dtype=float), c.shape)
        return cls(c - w, c + w)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def contains(self, theta) -> bool:
        t = np.asarray(theta, dtype=float)
        return bool(np.all(t > self.lower) and np.all(t < self.upper))

    def translate(self, shift) -> "DomainBox":
        s = np.asarray(shift, dtype=float)
        return DomainBox(self.lower + s, self.upper + s)


def in_ball(theta, center, radius: float) -> bool:
    return float(np.linalg.norm(np.asarray(theta) - np.asarray(center))) < radius


@dataclasses.dataclass(frozen=True, eq=False)
class ObjectiveModel:
    """The loss f_n together with its derivatives.

    ``value``, ``gradient`` and ``hessian`` take a parameter vector. Optional
    pieces:

    * ``third``: theta -> (D, D, D) tensor of third derivatives.
    * ``third_bound``: DomainBox -> certified sup of the Frobenius norm of the
      third tensor over the box.
    * ``component_gradients``: theta -> (k, D) array of gradients g_i with
      n * f_n = sum_i c_i, used for sandwich estimates.
    * ``n``: the sample size multiplying f_n in the posterior.
    """

    dim: int
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    domain: Optional[DomainBox] = None
    third: Optional[Callable[[np.ndarray], np.ndarray]] = None
    third_bound: Optional[Callable[[DomainBox], float]] = None
    convex: bool = False
    component_gradients: Optional[Callable[[np.ndarray], np.ndarray]] = None
    n: Optional[float] = None
    name: str = "custom"
    info: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise DimensionError("model dimension must be >= 1")
        if self.domain is None:
            object.__setattr__(self, "domain", DomainBox.unbounded(self.dim))
        elif self.domain.dim != self.dim:
            raise DimensionError("domain dimension does not match model dimension")

    @property
    def component_count(self) -> Optional[int]:
        if self.component_gradients is None:
            return None
        return int(self.info.get("component_count", -1))

    def f(self, theta) -> float:
        t = as_param(theta, self.dim)
        v = float(self.value(t))
        if math.isnan(v):
            raise EvaluationError(f"{self.name}: f_n is NaN at theta={t}", t)
        return v

    def grad(self, theta) -> np.ndarray:
        t = as_param(theta, self.dim)
        g = np.asarray(self.gradient(t), dtype=float).reshape(self.dim)
        if np.any(np.isnan(g)):
            raise EvaluationError(f"{self.name}: gradient is NaN at theta={t}", t)
        return g

    def hess(self, theta) -> np.ndarray:
        t = as_param(theta, self.dim)
        h = np.asarray(self.hessian(t), dtype=float).reshape(self.dim, self.dim)
        if np.any(np.isnan(h)):
            raise EvaluationError(f"{self.name}: Hessian is NaN at theta={t}", t)
        # stored symmetric so that H == H.T holds exactly
        return 0.5 * (h + h.T)


def scaled_model(model: ObjectiveModel, factor: float, name: Optional[str] = None) -> ObjectiveModel:
    """Multiply f_n (and every derivative and component) by ``factor``.

    With factor 2 this is the power posterior in which each log-likelihood
    term is counted twice.
    """
    if factor <= 0:
        raise ValueError("factor must be positive")
    comps = None
    if model.component_gradients is not None:
        comps = lambda t: factor * model.component_gradients(t)  # noqa: E731
    third = None if model.third is None else (lambda t: factor * model.third(t))
    bound = None if model.third_bound is None else (lambda box: factor * model.third_bound(box))
    return dataclasses.replace(
        model,
        value=lambda t: factor * model.value(t),
        gradient=lambda t: factor * model.gradient(t),
        hessian=lambda t: factor * model.hessian(t),
        third=third,
        third_bound=bound,
        component_gradients=comps,
        name=name or f"{model.name}*{factor:g}",
        info=dict(model.info, power=factor),
    )


def quadratic_model(H, center=None, domain: Optional[DomainBox] = None) -> ObjectiveModel:
    """f(theta) = 1/2 (theta - center)^T H (theta - center)."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    d = H.shape[0]
    m = np.zeros(d) if center is None else as_param(center, d)
    return ObjectiveModel(
        dim=d,
        value=lambda t: 0.5 * float((t - m) @ H @ (t - m)),
        gradient=lambda t: H @ (t - m),
        hessian=lambda t: H.copy(),
        third=lambda t: np.zeros((d, d, d)),
        third_bound=lambda box: 0.0,
        domain=domain,
        convex=bool(np.all(np.linalg.eigvalsh(0.5 * (H + H.T)) >= 0)),
        name="quadratic",
    )


# priors ---------------------------------------------------------------------


@dataclasses.dataclass(frozen=True, eq=False)
class PriorSpec:
    """A prior log-density; ``kind`` is one of uniform, gaussian, custom."""

    dim: int
    log_density: Callable[[np.ndarray], float]
    kind: str = "custom"
    params: dict = dataclasses.field(default_factory=dict)

    def __call__(self, theta) -> float:
        return float(self.log_density(np.asarray(theta, dtype=float)))

    def translate(self, shift) -> "PriorSpec":
        s = np.asarray(shift, dtype=float)
        params = dict(self.params)
        if self.kind == "uniform":
            return uniform_prior(params["box"].translate(s))
        if self.kind == "gaussian":
            return gaussian_prior(params["mean"] + s, params["cov"])
        return PriorSpec(self.dim, lambda t: self.log_density(t - s), self.kind, params)


def uniform_prior(box: DomainBox) -> PriorSpec:
    if not box.bounded:
        raise DomainError("uniform prior needs a bounded box")
    log_vol = float(np.sum(np.log(box.upper - box.lower)))

    def logpdf(t):
        t = np.asarray(t, dtype=float)
        if np.all(t >= box.lower) and np.all(t <= box.upper):
            return -log_vol
        return -math.inf

    return PriorSpec(box.dim, logpdf, "uniform", {"box": box})


def gaussian_prior(mean, cov) -> PriorSpec:
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    d = mean.size
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 0:
        cov = np.eye(d) * float(cov)
    cov = np.atleast_2d(cov)
    chol = np.linalg.cholesky(cov)
    log_norm = -0.5 * d * LOG_2PI - float(np.sum(np.log(np.diag(chol))))

    def logpdf(t):
        z = np.linalg.solve(chol, np.asarray(t, dtype=float) - mean)
        return log_norm - 0.5 * float(z @ z)

    return PriorSpec(d, logpdf, "gaussian", {"mean": mean, "cov": cov})


def flat_prior(dim: int) -> PriorSpec:
    """Improper constant prior (log density 0); useful for exact-posterior tests."""
    return PriorSpec(dim, lambda t: 0.0, "custom", {"improper": True})


def tabulated_prior(points: Sequence[float], log_values: Sequence[float]) -> PriorSpec:
    """1-d prior from a table, log-linearly interpolated, -inf outside the table."""
    x = np.asarray(points, dtype=float)
    lv = np.asarray(log_values, dtype=float)
    if x.ndim != 1 or x.size < 2 or np.any(np.diff(x) <= 0):
        raise ValueError("table points must be strictly increasing")
    dens = np.exp(lv)
    total = float(np.sum(0.5 * (dens[1:] + dens[:-1]) * np.diff(x)))
    lv = lv - math.log(total)

    def logpdf(t):
        t0 = float(np.asarray(t).reshape(-1)[0])
        if t0 < x[0] or t0 > x[-1]:
            return -math.inf
        return float(np.interp(t0, x, lv))

    return PriorSpec(1, logpdf, "custom", {"points": x, "log_values": lv})


# posterior ------------------------------------------------------------------


@dataclasses.dataclass(frozen=True, eq=False)
class GeneralizedPosterior:
    model: ObjectiveModel
    prior: PriorSpec
    n: float

    def __post_init__(self):
        if not self.n >= 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.model.dim != self.prior.dim:
            raise DimensionError(
                f"model dimension {self.model.dim} != prior dimension {self.prior.dim}"
            )

    @property
    def dim(self) -> int:
        return self.model.dim

    def log_density(self, theta) -> float:
        return unnormalized_log_posterior(self, theta)


def unnormalized_log_posterior(gp: GeneralizedPosterior, theta) -> float:
    """-n f_n(theta) + log prior(theta); -inf where the prior vanishes."""
    t = as_param(theta, gp.dim)
    lp = gp.prior(t)
    if lp == -math.inf:
        return -math.inf
    if math.isnan(lp):
        raise EvaluationError(f"prior log-density is NaN at theta={t}", t)
    if not gp.model.domain.contains(t):
        return -math.inf
    return -gp.n * gp.model.f(t) + lp


# derivative validation ------------------------------------------------------


@dataclasses.dataclass
class ValidationReport:
    grad_errors: list
    hess_errors: list
    skipped: int
    grad_tol: float = 1e-5
    hess_tol: float = 1e-3

    @property
    def grad_pass(self) -> list:
        return [e < self.grad_tol for e in self.grad_errors]

    @property
    def hess_pass(self) -> list:
        return [e < self.hess_tol for e in self.hess_errors]

    @property
    def passed(self) -> bool:
        return bool(self.grad_errors) and all(self.grad_pass) and all(self.hess_pass)


def relative_error(analytic, numeric) -> float:
    a = np.asarray(analytic, dtype=float)
    b = np.asarray(numeric, dtype=float)
    return float(np.linalg.norm(a - b) / max(1.0, np.linalg.norm(b)))


def validate_model(model: ObjectiveModel, probes, h: Optional[float] = None) -> ValidationReport:
    """Compare analytic derivatives with central differences at each probe.

    ``h`` overrides the default relative step sizes for both stencils.
    """
    from .numerics import central_gradient, central_hessian

    if h is not None and h <= 0:
        raise ValueError("h must be positive")
    gerr, herr, skipped = [], [], 0
    for p in probes:
        t = as_param(p, model.dim)
        if not model.domain.contains(t):
            logger.warning("probe %s outside the model domain; skipped", t)
            skipped += 1
            continue
        g_fd = central_gradient(model.f, t, h, domain=model.domain)
        H_fd = central_hessian(model.f, t, h, domain=model.domain)
        gerr.append(relative_error(model.grad(t), g_fd))
        herr.append(relative_error(model.hess(t), H_fd))
    return ValidationReport(gerr, herr, skipped)
