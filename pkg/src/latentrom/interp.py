"""Coefficient interpolation across parameter space: KNN with inverse-distance
weights.

Queries at a trained parameter point return its coefficient matrix verbatim;
elsewhere the k nearest training points (Euclidean distance, by default in
normalized parameter coordinates) are combined with weights proportional to
d^-p, which keeps every interpolated coefficient inside its neighbors' range.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError


@dataclass
class KnnConfig:
    k: int = 5
    power: float = 2.0
    match_tol: float = 1e-12  # distances at or below this count as exact matches
    space: str = "normalized"  # "normalized" | "raw"

    def validate(self):
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.power <= 0:
            raise ConfigError("distance power must be positive")
        if self.space not in ("normalized", "raw"):
            raise ConfigError("space must be 'normalized' or 'raw'")
        return self

    def to_dict(self):
        return {"k": self.k, "power": self.power, "match_tol": self.match_tol, "space": self.space}

    @classmethod
    def from_dict(cls, d):
        return cls(**d).validate()


@dataclass
class InterpolationResult:
    xi: np.ndarray
    neighbor_indices: np.ndarray
    weights: np.ndarray
    exact_match: bool = False


def parameter_distance(mu_a, mu_b) -> float:
    """Euclidean distance between two parameter vectors."""
    a = np.asarray(mu_a, dtype=np.float64)
    b = np.asarray(mu_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"parameter dimensions differ: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def idw_weights(distances, power: float = 2.0) -> np.ndarray:
    """Normalized inverse-distance weights d^-p / sum d^-p; all distances > 0."""
    d = np.asarray(distances, dtype=np.float64)
    if np.any(d <= 0):
        raise ConfigError("zero distance: handle exact matches before weighting")
    inv = d ** (-power)
    return inv / inv.sum()


def interpolate_coefficients(mu_star, mus, xis, config: KnnConfig, normalizer=None) -> InterpolationResult:
    """Interpolate a coefficient matrix at an unseen parameter point.

    ``mus`` is the (n, d) table of training parameter points with their
    coefficient matrices ``xis`` (n, ...). Exact matches (within ``match_tol``)
    return the stored matrix bitwise. Each scalar coefficient is interpolated
    independently; with shared weights that equals the weighted sum of the
    matrices. Ties at the k-th neighbor break by training index order.
    """
    config.validate()
    mus = np.asarray(mus, dtype=np.float64)
    if mus.ndim != 2 or mus.shape[0] == 0:
        raise ShapeError("need a nonempty (n, d) table of training parameters")
    xis = np.asarray(xis, dtype=np.float64)
    mu_star = np.asarray(mu_star, dtype=np.float64).reshape(-1)
    if mu_star.shape[0] != mus.shape[1]:
        raise ShapeError(f"query dimension {mu_star.shape[0]} != table dimension {mus.shape[1]}")

    if config.space == "normalized":
        if normalizer is None:
            raise ConfigError("normalized-space interpolation needs a parameter normalizer")
        table = normalizer.normalize(mus)
        query = normalizer.normalize(mu_star)
    else:
        table, query = mus, mu_star

    dists = np.sqrt(np.sum((table - query) ** 2, axis=1))
    nearest = int(np.argmin(dists))
    if dists[nearest] <= config.match_tol:
        return InterpolationResult(
            xi=xis[nearest].copy(),
            neighbor_indices=np.array([nearest]),
            weights=np.array([1.0]),
            exact_match=True,
        )

    k = config.k
    if k > mus.shape[0]:
        warnings.warn(f"k={k} exceeds training set size {mus.shape[0]}; clamping")
        k = mus.shape[0]
    order = np.argsort(dists, kind="stable")[:k]
    weights = idw_weights(dists[order], config.power)
    xi = np.einsum("i,i...->...", weights, xis[order])
    return InterpolationResult(xi=xi, neighbor_indices=order, weights=weights)
