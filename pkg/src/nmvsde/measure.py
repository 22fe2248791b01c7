"""Uniform-weight empirical measures over particle states.

A measure may carry leading batch axes: ``samples`` has shape ``(*batch, N, d)``
and every reduction runs over the particle axis independently per batch
entry. The solver uses this to advance several Monte Carlo repetitions at
once. Exact Wasserstein distances are offered in one dimension only.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np

__all__ = [
    "EmpiricalMeasure",
    "UnsupportedDimensionError",
    "check_theta",
    "theta_moment",
    "wasserstein_1d",
    "pairing_bound",
    "mean",
]


class UnsupportedDimensionError(ValueError):
    pass


def check_theta(theta: float) -> float:
    theta = float(theta)
    if not theta >= 1.0:
        raise ValueError(f"theta must be >= 1, got {theta}")
    return theta


class EmpiricalMeasure:
    """(1/N) sum_j delta_{x_j}.

    A 1-D input is read as N scalar samples (d = 1).
    """

    def __init__(self, samples):
        arr = np.asarray(samples, dtype=float)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr[:, None]
        if arr.shape[-2] < 1 or arr.shape[-1] < 1:
            raise ValueError(f"an empirical measure needs N >= 1 samples of dimension >= 1, got {arr.shape}")
        self.samples = arr

    @property
    def size(self) -> int:
        return self.samples.shape[-2]

    @property
    def dimension(self) -> int:
        return self.samples.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.samples.shape[:-2]

    @cached_property
    def sorted_cache(self) -> np.ndarray:
        """Samples in nondecreasing order (ties keep their original order); d = 1 only."""
        if self.dimension != 1:
            raise UnsupportedDimensionError("sorted samples exist for d = 1 only")
        return np.sort(self.samples[..., 0], axis=-1, kind="stable")

    def mean(self, keepdims: bool = False) -> np.ndarray:
        """Componentwise mean; ``keepdims`` keeps the particle axis for broadcasting against states."""
        return self.samples.mean(axis=-2, keepdims=keepdims)

    def __repr__(self) -> str:
        return f"EmpiricalMeasure(N={self.size}, d={self.dimension}, batch={self.batch_shape})"


def _as_measure(mu) -> EmpiricalMeasure:
    return mu if isinstance(mu, EmpiricalMeasure) else EmpiricalMeasure(mu)


def _root(value, theta: float):
    out = np.asarray(value) ** (1.0 / theta)
    return float(out) if out.ndim == 0 else out


def theta_moment(mu, theta: float = 2.0):
    """((1/N) sum_j |x_j|^theta)^(1/theta), i.e. the theta-Wasserstein distance to delta_0."""
    mu = _as_measure(mu)
    theta = check_theta(theta)
    norms = np.linalg.norm(mu.samples, axis=-1)
    return _root(np.mean(norms**theta, axis=-1), theta)


def wasserstein_1d(mu, nu, theta: float = 2.0) -> float:
    """Exact W_theta between equal-size one-dimensional empirical measures.

    The sorted (monotone) coupling is optimal for any convex cost |x - y|^theta.
    """
    mu, nu = _as_measure(mu), _as_measure(nu)
    theta = check_theta(theta)
    if mu.dimension != 1 or nu.dimension != 1:
        raise UnsupportedDimensionError(
            f"exact Wasserstein distance is implemented for d = 1 only (got {mu.dimension}, {nu.dimension})"
        )
    if mu.size != nu.size:
        raise ValueError(f"measures must have equal sample counts, got {mu.size} and {nu.size}")
    gaps = np.abs(mu.sorted_cache - nu.sorted_cache)
    return _root(np.mean(gaps**theta, axis=-1), theta)


def pairing_bound(mu, nu, theta: float = 2.0):
    """Cost of the index coupling x_j <-> y_j; an upper bound on W_theta in any dimension."""
    mu, nu = _as_measure(mu), _as_measure(nu)
    theta = check_theta(theta)
    if mu.size != nu.size:
        raise ValueError(f"measures must have equal sample counts, got {mu.size} and {nu.size}")
    if mu.dimension != nu.dimension:
        raise ValueError(f"dimension mismatch: {mu.dimension} vs {nu.dimension}")
    dist = np.linalg.norm(mu.samples - nu.samples, axis=-1)
    return _root(np.mean(dist**theta, axis=-1), theta)


def mean(mu) -> np.ndarray:
    return _as_measure(mu).mean()
