"""Candidate-function libraries and identified latent ODEs.

The latent dynamics are approximated by dz/dt = L(z) @ Xi where L stacks a
user-chosen set of basis columns (constant, linear, upper-triangular quadratic
products, cosine) and Xi is a per-trajectory coefficient matrix learned jointly
with the networks. Identified systems are integrated with classic RK4.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DivergenceError, ShapeError, SpecError

TERM_ORDER = ("constant", "linear", "quadratic", "cosine")


@dataclass(frozen=True)
class LibrarySpec:
    """Which basis columns enter the library, and their fixed ordering.

    Column layout: constant | linear z_1..z_n | quadratic upper-triangular
    row-major (z_1^2, z_1 z_2, ..., z_1 z_n, z_2^2, ...) | cosine cos z_1..z_n,
    restricted to the enabled terms.
    """

    n_latent: int
    terms: tuple = ("constant", "linear")

    def __post_init__(self):
        if not self.terms:
            raise SpecError("library needs at least one term kind")
        for t in self.terms:
            if t not in TERM_ORDER:
                raise SpecError(f"unknown library term {t!r}")
        object.__setattr__(self, "terms", tuple(t for t in TERM_ORDER if t in self.terms))

    @property
    def n_columns(self) -> int:
        ns = self.n_latent
        sizes = {
            "constant": 1,
            "linear": ns,
            "quadratic": (ns + 1) * ns // 2,
            "cosine": ns,
        }
        return sum(sizes[t] for t in self.terms)

    def column_names(self) -> list[str]:
        ns = self.n_latent
        names = []
        for t in self.terms:
            if t == "constant":
                names.append("1")
            elif t == "linear":
                names += [f"z{j + 1}" for j in range(ns)]
            elif t == "quadratic":
                names += [f"z{a + 1}*z{b + 1}" for a in range(ns) for b in range(a, ns)]
            else:
                names += [f"cos(z{j + 1})" for j in range(ns)]
        return names

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LibrarySpec":
        return cls(n_latent=d["n_latent"], terms=tuple(d["terms"]))


@dataclass
class IDModel:
    """Identified latent ODE for one training parameter point."""

    library: LibrarySpec
    xi: np.ndarray  # (n_columns, n_latent)
    mu: np.ndarray

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=np.float64)
        self.mu = np.asarray(self.mu, dtype=np.float64)
        expect = (self.library.n_columns, self.library.n_latent)
        if self.xi.shape != expect:
            raise ShapeError(f"coefficient matrix shape {self.xi.shape} != {expect}")
        if not np.all(np.isfinite(self.xi)):
            raise SpecError("coefficient matrix contains non-finite entries")

    def rhs(self, z: np.ndarray) -> np.ndarray:
        return library_matrix(z[None, :], self.library)[0] @ self.xi


def library_matrix(z: np.ndarray, spec: LibrarySpec) -> np.ndarray:
    """Evaluate the library on rows of latent states: (T, n_latent) -> (T, n_columns)."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != spec.n_latent:
        raise ShapeError(f"latent rows must be (T, {spec.n_latent}), got {z.shape}")
    cols = []
    for t in spec.terms:
        if t == "constant":
            cols.append(np.ones((z.shape[0], 1)))
        elif t == "linear":
            cols.append(z)
        elif t == "quadratic":
            iu, ju = np.triu_indices(spec.n_latent)
            cols.append(z[:, iu] * z[:, ju])
        else:
            cols.append(np.cos(z))
    return np.concatenate(cols, axis=1)


def library_op(z: ad.Var, spec: LibrarySpec) -> ad.Var:
    """Tape version of :func:`library_matrix` so gradients flow through z."""
    parts = []
    for t in spec.terms:
        if t == "constant":
            parts.append(z.tape.leaf(np.ones((z.value.shape[0], 1))))
        elif t == "linear":
            parts.append(z)
        elif t == "quadratic":
            for a in range(spec.n_latent):
                left = ad.slice_cols(z, a, a + 1)
                block = ad.slice_cols(z, a, spec.n_latent)
                parts.append(ad.mul(ad.repeat_cols(left, spec.n_latent - a), block))
        else:
            parts.append(ad.cos(z))
    return ad.concat_cols(parts)


def id_loss(trajectories, models) -> float:
    """Derivative-matching loss: mean over trajectories and latent components
    of the summed squared residual dz/dt - L(z) @ xi over time rows.

    ``trajectories`` yields (z, dz) row matrices; one model per trajectory.
    """
    trajectories = list(trajectories)
    models = list(models)
    if len(trajectories) != len(models):
        raise ShapeError("one ID model per trajectory required")
    n_mu = len(models)
    total = 0.0
    for (z, dz), model in zip(trajectories, models):
        z = np.asarray(z, dtype=np.float64)
        dz = np.asarray(dz, dtype=np.float64)
        if z.shape != dz.shape:
            raise ShapeError(f"state rows {z.shape} vs derivative rows {dz.shape}")
        resid = dz - library_matrix(z, model.library) @ model.xi
        total += np.sum(resid * resid) / model.library.n_latent
    return total / n_mu


def solve_latent_ode(model: IDModel, z0, times) -> np.ndarray:
    """Integrate dz/dt = L(z) @ Xi with classic RK4 on a uniform time grid."""
    times = np.asarray(times, dtype=np.float64)
    if times.ndim != 1 or times.size < 2:
        raise ShapeError("need a 1-d time grid with at least two points")
    steps = np.diff(times)
    if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-8, atol=0.0):
        raise SpecError("time grid must be strictly increasing and uniform")
    dt = steps[0]
    z = np.empty((times.size, model.library.n_latent))
    z[0] = np.asarray(z0, dtype=np.float64)
    f = model.rhs
    for m in range(times.size - 1):
        k1 = f(z[m])
        k2 = f(z[m] + 0.5 * dt * k1)
        k3 = f(z[m] + 0.5 * dt * k2)
        k4 = f(z[m] + dt * k3)
        z[m + 1] = z[m] + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(z[m + 1])):
            raise DivergenceError(f"latent ODE solve diverged at step {m + 1}", step=m + 1)
    return z


def fit_coefficients_least_squares(z, dz, spec: LibrarySpec, ridge: float = 1e-10) -> np.ndarray:
    """Offline refit of Xi by ridge-damped normal equations.

    Diagnostic path only; during training the coefficients are learned by
    gradient together with the networks.
    """
    z = np.asarray(z, dtype=np.float64)
    dz = np.asarray(dz, dtype=np.float64)
    theta = library_matrix(z, spec)
    if theta.shape[0] < spec.n_columns:
        raise ShapeError(
            f"need at least {spec.n_columns} time rows to fit, got {theta.shape[0]}"
        )
    if np.linalg.matrix_rank(theta) < spec.n_columns:
        warnings.warn("library matrix is rank-deficient; returning ridge solution")
    gram = theta.T @ theta + ridge * np.eye(spec.n_columns)
    return np.linalg.solve(gram, theta.T @ dz)
