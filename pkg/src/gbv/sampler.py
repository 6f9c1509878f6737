"""Random-walk Metropolis draws, grid quadrature of the posterior, and ESS."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import warnings
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .core import DomainBox, DomainError, GBVError, GeneralizedPosterior, as_param
from .rng import make_rng

logger = logging.getLogger(__name__)

TARGET_ACCEPT = 0.30


class StuckChainError(GBVError, RuntimeError):
    pass


@dataclasses.dataclass
class DrawMatrix:
    draws: np.ndarray
    seed: int
    acceptance_rate: float
    burn_in: int
    chain: int = 0
    step_scale: float = 1.0

    def __post_init__(self):
        self.draws = np.atleast_2d(np.asarray(self.draws, dtype=float))
        if self.draws.shape[0] < 1:
            raise ValueError("a DrawMatrix needs at least one draw")

    @property
    def dim(self) -> int:
        return self.draws.shape[1]

    def __len__(self) -> int:
        return self.draws.shape[0]

    def metadata(self) -> dict:
        return {
            "seed": self.seed,
            "acceptance_rate": self.acceptance_rate,
            "burn_in": self.burn_in,
            "chain": self.chain,
            "step_scale": self.step_scale,
            "draws": len(self),
        }

    def to_csv(self, path) -> None:
        """Write ``theta_1..theta_D`` rows plus a ``.json`` metadata sidecar."""
        path = Path(path)
        header = ",".join(f"theta_{j + 1}" for j in range(self.dim))
        with open(path, "w", newline="") as fh:
            fh.write(header + "\n")
            for row in self.draws:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        with open(path.with_suffix(".json"), "w") as fh:
            json.dump(self.metadata(), fh, indent=2, sort_keys=True)

    @classmethod
    def from_csv(cls, path) -> "DrawMatrix":
        path = Path(path)
        draws = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        meta = {}
        side = path.with_suffix(".json")
        if side.exists():
            meta = json.loads(side.read_text())
        return cls(
            draws,
            seed=int(meta.get("seed", 0)),
            acceptance_rate=float(meta.get("acceptance_rate", math.nan)),
            burn_in=int(meta.get("burn_in", 0)),
            chain=int(meta.get("chain", 0)),
            step_scale=float(meta.get("step_scale", 1.0)),
        )


def _log_target(gp: GeneralizedPosterior):
    # hot loop: skip the argument coercion done by unnormalized_log_posterior
    model, prior, n = gp.model, gp.prior, float(gp.n)
    lo, hi = model.domain.lower, model.domain.upper
    value, logprior = model.value, prior.log_density

    def logp(t):
        if np.any(t <= lo) or np.any(t >= hi):
            return -math.inf
        lp = logprior(t)
        if lp == -math.inf:
            return lp
        v = value(t)
        if v != v:
            return -math.inf
        return -n * v + lp

    return logp


def initial_proposal(gp: GeneralizedPosterior, fit=None) -> np.ndarray:
    """Cholesky factor of the starting proposal covariance.

    2.38/sqrt(D) times the Laplace covariance factor when a fit is given,
    else 0.1 * I.
    """
    d = gp.dim
    if fit is not None:
        try:
            cov = np.linalg.inv(gp.n * np.asarray(fit.hessian_at_min, dtype=float))
            return 2.38 / math.sqrt(d) * np.linalg.cholesky(0.5 * (cov + cov.T))
        except np.linalg.LinAlgError:
            logger.warning("Hessian at the fit is not PD; using 0.1*I proposal")
    return 0.1 * np.eye(d)


def rwm_sample(
    gp: GeneralizedPosterior,
    theta_init,
    steps: int,
    burn_in: int,
    seed: int,
    fit=None,
    chain: int = 0,
    proposal_chol: Optional[np.ndarray] = None,
) -> DrawMatrix:
    """Gaussian random-walk Metropolis with burn-in-only scale adaptation.

    During burn-in the log step size follows a Robbins-Monro recursion toward
    acceptance 0.30; afterwards the kernel is fixed so the retained chain is
    Markov with the posterior as its invariant law. Returns the
    ``steps - burn_in`` post-burn-in states.
    """
    if not steps > burn_in >= 0:
        raise ValueError("need steps > burn_in >= 0")
    d = gp.dim
    logp = _log_target(gp)
    x = as_param(theta_init, d).copy()
    lx = logp(x)
    if lx == -math.inf:
        raise DomainError("initial point has zero posterior density")
    L = initial_proposal(gp, fit) if proposal_chol is None else np.asarray(proposal_chol, float)

    rng = make_rng(seed, chain)
    z = rng.standard_normal((steps, d))
    log_u = np.log(rng.random(steps))
    prop = z @ L.T

    out = np.empty((steps - burn_in, d))
    log_s = 0.0
    scale = 1.0
    accepted = 0
    stuck_window = 10 * d
    hopeless = 0
    for t in range(steps):
        y = x + scale * prop[t]
        ly = logp(y)
        log_alpha = ly - lx if ly > -math.inf else -math.inf
        if t < stuck_window:
            hopeless = hopeless + 1 if log_alpha < -23.0 else 0
            if hopeless == stuck_window:
                raise StuckChainError("stuck chain: check initialization/scale")
        if log_u[t] < log_alpha:
            x, lx = y, ly
            if t >= burn_in:
                accepted += 1
        if t < burn_in:
            a = 1.0 if log_alpha >= 0 else math.exp(log_alpha)
            log_s += (a - TARGET_ACCEPT) / (t + 1) ** 0.6
            log_s = min(max(log_s, -20.0), 5.0)
            scale = math.exp(log_s)
        else:
            out[t - burn_in] = x
    rate = accepted / (steps - burn_in)
    return DrawMatrix(out, seed=seed, acceptance_rate=rate, burn_in=burn_in, chain=chain, step_scale=scale)


def run_chains(gp, theta_init, steps, burn_in, seed, chains: int = 1, fit=None) -> list:
    """Independent chains on substreams (seed, chain_index)."""
    return [rwm_sample(gp, theta_init, steps, burn_in, seed, fit=fit, chain=c) for c in range(chains)]


def stack_chains(chains: Sequence[DrawMatrix]) -> DrawMatrix:
    first = chains[0]
    draws = np.vstack([c.draws for c in chains])
    rate = float(np.mean([c.acceptance_rate for c in chains]))
    return DrawMatrix(draws, first.seed, rate, first.burn_in, chain=-1, step_scale=first.step_scale)


# grid -----------------------------------------------------------------------


@dataclasses.dataclass
class GridDensity:
    box: DomainBox
    resolution: tuple
    log_density: np.ndarray  # unnormalized log posterior at cell midpoints
    log_z_grid: float
    axes: list

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def cell_volume(self) -> float:
        return float(np.prod((self.box.upper - self.box.lower) / np.asarray(self.resolution)))

    @property
    def probs(self) -> np.ndarray:
        p = np.exp(self.log_density - logsumexp(self.log_density))
        return p / p.sum()

    def points(self) -> np.ndarray:
        """Cell midpoints as rows, in the same (C-order) layout as ``probs.ravel()``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def mean(self) -> np.ndarray:
        return self.probs.ravel() @ self.points()

    def cdf(self, x) -> np.ndarray:
        """1-d CDF, linear within cells."""
        if self.dim != 1:
            raise ValueError("cdf is defined for 1-d grids only")
        edges = np.linspace(self.box.lower[0], self.box.upper[0], self.resolution[0] + 1)
        cum = np.concatenate([[0.0], np.cumsum(self.probs)])
        return np.interp(x, edges, cum)

    def to_csv(self, path) -> None:
        pts = self.points()
        p = self.probs.ravel()
        header = ",".join(f"theta_{j + 1}" for j in range(self.dim)) + ",mass"
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for row, m in zip(pts, p):
                fh.write(",".join(repr(float(v)) for v in row) + f",{m!r}\n")


def grid_density(gp: GeneralizedPosterior, box: DomainBox, resolution=2048) -> GridDensity:
    """Midpoint-rule quadrature of exp(-n f_n) * prior over ``box`` (D <= 2)."""
    d = gp.dim
    if d > 2:
        raise GBVError(f"grid quadrature supports D <= 2, got D={d}")
    if not box.bounded:
        raise DomainError("grid box must be bounded")
    if box.dim != d:
        raise ValueError("box dimension does not match the posterior")
    res = tuple(int(r) for r in np.broadcast_to(np.asarray(resolution), (d,)))
    if min(res) < 32:
        raise ValueError("resolution must be >= 32 per axis")
    axes = []
    for j in range(d):
        w = (box.upper[j] - box.lower[j]) / res[j]
        axes.append(box.lower[j] + w * (np.arange(res[j]) + 0.5))
    logp = _log_target(gp)
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    vals = np.fromiter((logp(p) for p in pts), dtype=float, count=pts.shape[0]).reshape(res)
    if not np.any(np.isfinite(vals)):
        raise GBVError("posterior density is zero on the whole grid")
    cell = float(np.prod((box.upper - box.lower) / np.asarray(res)))
    log_z = float(logsumexp(vals)) + math.log(cell)
    return GridDensity(box, res, vals, log_z, axes)


# effective sample size -----------------------------------------------------


def _autocorr(x: np.ndarray) -> np.ndarray:
    n = x.size
    xc = x - x.mean()
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n] / n
    return acov / acov[0]


def effective_sample_size(draws, cap: bool = True) -> np.ndarray:
    """Per-coordinate ESS by Geyer's initial positive sequence.

    Antithetic chains can give ESS > S; those are capped at S with a warning
    unless ``cap=False``. A constant coordinate gets ESS 1.
    """
    x = draws.draws if isinstance(draws, DrawMatrix) else np.asarray(draws, dtype=float)
    x = x.reshape(x.shape[0], -1)
    S = x.shape[0]
    if S < 100:
        raise ValueError("ESS needs at least 100 draws")
    out = np.empty(x.shape[1])
    for j in range(x.shape[1]):
        col = x[:, j]
        if np.ptp(col) == 0:
            warnings.warn(f"coordinate {j} is constant; ESS reported as 1", RuntimeWarning)
            out[j] = 1.0
            continue
        rho = _autocorr(col)
        pairs = rho[: 2 * (S // 2)].reshape(-1, 2).sum(axis=1)
        k = 0
        total = 0.0
        while k < pairs.size and pairs[k] > 0:
            total += pairs[k]
            k += 1
        tau = -1.0 + 2.0 * total
        if tau <= 0:
            # alternating chains: Gamma_0 <= 0 means super-efficiency
            tau = 1.0 / S
        ess = S / tau
        if ess > S and cap:
            warnings.warn(f"coordinate {j}: ESS {ess:.4g} exceeds S={S}; capped", RuntimeWarning)
            ess = float(S)
        out[j] = ess
    return out
