"""Pseudolikelihood losses for Gaussian MRFs, Ising fields and Boltzmann machines.

Each site (or each node of each sample) contributes one conditional factor
q(y_i | theta . x_i), so all three models are linear-predictor losses over
neighbor features.
"""

from __future__ import annotations

import dataclasses
import json
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.special import expit

from ..core import GBVError, ObjectiveModel
from .expfam import PLUSMINUS, gaussian, linear_predictor_model


@dataclasses.dataclass(frozen=True)
class TorusLattice:
    """Periodic lattice (Z_L)^m; site index is the C-order ravel of its coordinates."""

    m: int
    L: int

    def __post_init__(self):
        if self.m < 1 or self.L < 3:
            raise ValueError("need m >= 1 and L >= 3 for 2m distinct neighbors")

    @property
    def size(self) -> int:
        return self.L**self.m

    @property
    def shape(self) -> tuple:
        return (self.L,) * self.m

    def coords(self, i) -> tuple:
        return np.unravel_index(i, self.shape)

    def index(self, coords) -> int:
        return int(np.ravel_multi_index(tuple(np.mod(coords, self.L)), self.shape))

    @cached_property
    def neighbors(self) -> np.ndarray:
        """(L^m, 2m) array; columns are (+axis0, -axis0, +axis1, -axis1, ...)."""
        idx = np.arange(self.size).reshape(self.shape)
        cols = []
        for a in range(self.m):
            cols.append(np.roll(idx, -1, axis=a).ravel())
            cols.append(np.roll(idx, 1, axis=a).ravel())
        return np.column_stack(cols)


@dataclasses.dataclass
class FieldSample:
    lattice: TorusLattice
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != self.lattice.size:
            raise ValueError(f"field has {self.values.size} values, lattice needs {self.lattice.size}")

    @property
    def grid(self) -> np.ndarray:
        return self.values.reshape(self.lattice.shape)

    def is_spin(self) -> bool:
        return bool(np.all(np.abs(self.values) == 1.0))

    def to_file(self, path) -> None:
        """First line a JSON header {"m", "L"}, then one site value per line in index order."""
        with open(path, "w") as fh:
            fh.write(json.dumps({"m": self.lattice.m, "L": self.lattice.L}) + "\n")
            for v in self.values:
                fh.write(f"{float(v)!r}\n")

    @classmethod
    def from_file(cls, path) -> "FieldSample":
        lines = Path(path).read_text().splitlines()
        head = json.loads(lines[0])
        vals = np.array([float(x) for x in lines[1:] if x.strip()])
        return cls(TorusLattice(int(head["m"]), int(head["L"])), vals)


def neighbor_features(field: FieldSample, isotropic: bool = True) -> np.ndarray:
    """Per-site neighbor values: summed per axis (D=m) or one column per neighbor (D=2m)."""
    nb = field.values[field.lattice.neighbors]
    if not isotropic:
        return nb
    return nb.reshape(nb.shape[0], field.lattice.m, 2).sum(axis=2)


def gmrf_pseudolik(field: FieldSample, gamma: float, isotropic: bool = True) -> ObjectiveModel:
    """f_n = (1/n) sum_i [gamma/2 (theta . x_i)^2 - gamma (theta . x_i) y_i]."""
    if not gamma > 0:
        raise GBVError("GMRF precision gamma must be positive")
    X = neighbor_features(field, isotropic)
    fam = gaussian(1.0 / gamma)
    return linear_predictor_model(
        X, fam.s(field.values), fam, name="gmrf-pseudolik",
        info={"gamma": gamma, "isotropic": isotropic, "m": field.lattice.m, "L": field.lattice.L},
    )


def ising_features(field: FieldSample) -> np.ndarray:
    s = field.values[field.lattice.neighbors].sum(axis=1)
    return np.column_stack([np.ones_like(s), s])


def ising_pseudolik(field: FieldSample) -> ObjectiveModel:
    """Besag pseudolikelihood with rows (1, sum of neighbor spins)."""
    if not field.is_spin():
        raise GBVError("Ising field values must be -1 or +1")
    return linear_predictor_model(
        ising_features(field), field.values, PLUSMINUS, name="ising-pseudolik",
        info={"m": field.lattice.m, "L": field.lattice.L},
    )


# Boltzmann machine ---------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class ThetaPacking:
    """theta = (b_1..b_d, A_12, A_13, .., A_1d, A_23, ..): row-major upper triangle."""

    d: int

    @property
    def D(self) -> int:
        return self.d + self.d * (self.d - 1) // 2

    @cached_property
    def pairs(self) -> np.ndarray:
        return np.array(np.triu_indices(self.d, k=1)).T

    def pack(self, A, b) -> np.ndarray:
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float).ravel()
        if A.shape != (self.d, self.d) or b.size != self.d:
            raise ValueError("A must be d x d and b length d")
        iu = np.triu_indices(self.d, k=1)
        return np.concatenate([b, A[iu]])

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != self.D:
            raise ValueError(f"theta must have length {self.D}")
        A = np.zeros((self.d, self.d))
        A[np.triu_indices(self.d, k=1)] = theta[self.d:]
        return A, theta[: self.d].copy()


def boltzmann_features(y) -> np.ndarray:
    """phi_j(y) for every node j of one +-1 vector: a (d, D) array."""
    y = np.asarray(y, dtype=float).ravel()
    d = y.size
    pk = ThetaPacking(d)
    phi = np.zeros((d, pk.D))
    phi[np.arange(d), np.arange(d)] = 1.0
    for p, (k, l) in enumerate(pk.pairs):
        phi[k, d + p] = y[l]
        phi[l, d + p] = y[k]
    return phi


def boltzmann_pseudolik(samples, weights=None) -> ObjectiveModel:
    """Sum over samples and nodes of -log q(y_ij | theta . phi_j(y_i)).

    ``weights`` (one per sample) allow fractional-count data such as an exact
    distribution table; n is the total weight.
    """
    Y = np.atleast_2d(np.asarray(samples, dtype=float))
    nsamp, d = Y.shape
    if nsamp < 1 or d < 2:
        raise ValueError("need at least one sample of dimension d >= 2")
    if not np.all(np.abs(Y) == 1.0):
        raise GBVError("Boltzmann samples must have entries in {-1, +1}")
    w = np.ones(nsamp) if weights is None else np.asarray(weights, dtype=float).ravel()
    if w.size != nsamp:
        raise ValueError("one weight per sample")
    rows = np.vstack([boltzmann_features(y) for y in Y])
    return linear_predictor_model(
        rows, Y.ravel(), PLUSMINUS, n=float(w.sum()), weights=np.repeat(w, d),
        groups=np.repeat(np.arange(nsamp), d), name="boltzmann-pseudolik", info={"d": d},
    )


def conditional_probability(kind: str, theta, site: int, field) -> float:
    """P(y_site = +1 | rest) for the binary models.

    ``field`` is a FieldSample for ``kind="ising"`` and a +-1 vector for
    ``kind="boltzmann"``.
    """
    theta = np.asarray(theta, dtype=float).ravel()
    if kind == "ising":
        nb = field.lattice.neighbors[site]
        eta = theta[0] + theta[1] * float(field.values[nb].sum())
    elif kind == "boltzmann":
        eta = float(boltzmann_features(field)[site] @ theta)
    else:
        raise ValueError(f"conditional probability defined for ising/boltzmann, not {kind!r}")
    return float(expit(2.0 * eta))


def read_spin_csv(path) -> np.ndarray:
    Y = np.loadtxt(path, delimiter=",", ndmin=2)
    if not np.all(np.abs(Y) == 1.0):
        raise GBVError(f"{path}: entries must be -1 or +1")
    return Y


def write_spin_csv(path, Y) -> None:
    np.savetxt(path, np.asarray(Y, dtype=int), delimiter=",", fmt="%d")
