"""Exact sampling of fractional Brownian motion on uniform grids.

Two exact samplers are provided: circulant embedding of the fractional
Gaussian noise (fGn) covariance (Davies-Harte / Wood-Chan, O(M log M)) and a
dense Cholesky factorisation of the same Toeplitz covariance (O(M^3), used as
a cross-check). Every sample path draws from its own counter-based Philox
stream keyed by ``(seed, method, stream, path)`` so that a row never depends on
how many other rows were requested or in which order they were produced.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.linalg import toeplitz

__all__ = [
    "EmbeddingError",
    "TimeGrid",
    "FgnBatch",
    "PathBatch",
    "check_hurst",
    "path_generator",
    "covariance",
    "fgn_autocovariance",
    "circulant_eigenvalues",
    "sample_fgn",
    "scale_and_cumulate",
    "coarsen",
    "sample_fbm",
    "write_paths",
    "read_paths",
]

METHODS = ("circulant", "cholesky")

# Second word of the Philox key; separates the purposes a stream is used for.
STREAM_DOMAINS = {
    "circulant": 0xC1C0_0001,
    "cholesky": 0xC401_0002,
    "initial": 0x1417_0003,
    "probe": 0x960B_0004,
}

_MASK64 = (1 << 64) - 1
EIGEN_RTOL = 1e-10

MAGIC = b"FBMP"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIddQQQ")


class EmbeddingError(RuntimeError):
    """The circulant embedding produced a significantly negative eigenvalue."""


def check_hurst(H: float) -> float:
    H = float(H)
    if not 0.0 < H < 1.0:
        raise ValueError(f"Hurst exponent must lie in the open interval (0, 1), got {H}")
    return H


def path_generator(seed: int, domain: str, *ids: int) -> np.random.Generator:
    """Return the Philox generator owning one path.

    ``seed`` and ``domain`` form the key, ``ids`` (at most three non-negative
    integers, e.g. repetition and row) fill the high counter words. The low
    counter word is left to advance with the draws.
    """
    if not 0 <= int(seed) <= _MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    if len(ids) > 3:
        raise ValueError("at most three stream identifiers are supported")
    if any(int(i) < 0 for i in ids):
        raise ValueError("stream identifiers must be non-negative")
    counter = [0] + [int(i) for i in ids] + [0] * (3 - len(ids))
    key = [int(seed), STREAM_DOMAINS[domain]]
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k * step`` for ``k = 0..n_steps`` with an aligned delay.

    ``delay_steps * step`` is the delay of the equation being discretised.
    """

    step: float
    n_steps: int
    delay_steps: int

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        if int(self.delay_steps) != self.delay_steps or self.delay_steps < 1:
            raise ValueError(f"delay_steps must be a positive integer, got {self.delay_steps}")
        object.__setattr__(self, "step", float(self.step))
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "delay_steps", int(self.delay_steps))

    @classmethod
    def from_horizon(cls, horizon: float, delay: float, n_steps: int) -> "TimeGrid":
        """Grid on ``[0, horizon]`` with ``n_steps`` steps; ``delay`` must be a whole number of steps."""
        step = horizon / n_steps
        ratio = delay / step
        delay_steps = int(round(ratio))
        if delay_steps < 1 or delay_steps * step != delay:
            raise ValueError(
                f"delay {delay} is not an exact multiple of the step {step} (ratio {ratio})"
            )
        return cls(step, n_steps, delay_steps)

    @property
    def horizon(self) -> float:
        return self.step * self.n_steps

    @property
    def delay(self) -> float:
        return self.step * self.delay_steps

    @property
    def times(self) -> np.ndarray:
        return self.step * np.arange(self.n_steps + 1)

    def coarsen(self, factor: int) -> "TimeGrid":
        factor = int(factor)
        if factor < 1 or self.n_steps % factor:
            raise ValueError(f"factor {factor} does not divide n_steps={self.n_steps}")
        if self.delay_steps % factor:
            raise ValueError(f"factor {factor} does not divide delay_steps={self.delay_steps}")
        return TimeGrid(self.step * factor, self.n_steps // factor, self.delay_steps // factor)

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.step / factor, self.n_steps * factor, self.delay_steps * factor)


@dataclass(frozen=True)
class FgnBatch:
    """Unit-step standard fGn, one row per path."""

    increments: np.ndarray
    hurst: float
    seed_lineage: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]

    @property
    def n_steps(self) -> int:
        return self.increments.shape[1]


@dataclass(frozen=True)
class PathBatch:
    """fBm sample paths on ``grid``; column 0 is B_0 = 0."""

    values: np.ndarray
    grid: TimeGrid
    hurst: float

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=1)


def covariance(s, t, H: float):
    """R_H(s, t) = (t^{2H} + s^{2H} - |t - s|^{2H}) / 2; broadcasts over arrays."""
    H = check_hurst(H)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(t < 0):
        raise ValueError("covariance is defined for non-negative times only")
    two_h = 2.0 * H
    out = 0.5 * (t**two_h + s**two_h - np.abs(t - s) ** two_h)
    return float(out) if out.ndim == 0 else out


def fgn_autocovariance(lag, H: float):
    """Autocovariance of unit-step fGn, (|k+1|^{2H} - 2|k|^{2H} + |k-1|^{2H}) / 2."""
    H = check_hurst(H)
    k = np.asarray(lag)
    if not np.issubdtype(k.dtype, np.integer):
        if np.any(k != np.round(k)):
            raise ValueError(f"lag must be integral, got {lag}")
    k = k.astype(float)
    if np.any(k < 0):
        raise ValueError("lag must be non-negative")
    two_h = 2.0 * H
    out = 0.5 * (np.abs(k + 1) ** two_h - 2.0 * k**two_h + np.abs(k - 1) ** two_h)
    return float(out) if out.ndim == 0 else out


@lru_cache(maxsize=64)
def _embedding(H: float, n: int) -> np.ndarray:
    gam = fgn_autocovariance(np.arange(n + 1), H)
    row = np.concatenate([gam, gam[-2:0:-1]])
    eig = np.fft.fft(row).real
    top = eig.max()
    if eig.min() < -EIGEN_RTOL * top:
        raise EmbeddingError(
            f"circulant embedding for H={H}, n={n} has eigenvalue {eig.min():.3e} "
            f"(max {top:.3e})"
        )
    eig = np.clip(eig, 0.0, None)
    scale = np.sqrt(eig / (2 * n))
    scale.setflags(write=False)
    return scale


def circulant_eigenvalues(H: float, n_steps: int) -> np.ndarray:
    """Unclipped spectrum of the size ``2 * n_steps`` circulant embedding."""
    gam = fgn_autocovariance(np.arange(n_steps + 1), check_hurst(H))
    row = np.concatenate([gam, gam[-2:0:-1]])
    return np.fft.fft(row).real


@lru_cache(maxsize=16)
def _cholesky_factor(H: float, n: int) -> np.ndarray:
    cov = toeplitz(fgn_autocovariance(np.arange(n), H))
    factor = np.linalg.cholesky(cov)
    factor.setflags(write=False)
    return factor


def sample_fgn(
    H: float,
    n_steps: int,
    n_paths: int,
    seed: int,
    method: str = "circulant",
    *,
    stream: int = 0,
    first_path: int = 0,
) -> FgnBatch:
    """Draw ``n_paths`` independent rows of unit-step standard fGn.

    Row ``i`` is a function of ``(seed, method, stream, first_path + i)`` only.

    Args:
        H: Hurst exponent in (0, 1).
        n_steps: length of each row.
        n_paths: number of rows.
        seed: unsigned 64-bit master seed.
        method: ``"circulant"`` (default) or ``"cholesky"``.
        stream: extra stream identifier, e.g. a Monte Carlo repetition index.
        first_path: global index of the first row.
    """
    H = check_hurst(H)
    n_steps, n_paths = int(n_steps), int(n_paths)
    if n_steps < 1 or n_paths < 1:
        raise ValueError(f"n_steps and n_paths must be positive, got {n_steps}, {n_paths}")
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")

    out = np.empty((n_paths, n_steps))
    if method == "circulant":
        scale = _embedding(H, n_steps)
        m = 2 * n_steps
        for i in range(n_paths):
            z = path_generator(seed, method, stream, first_path + i).standard_normal((2, m))
            # Real part of F diag(sqrt(lambda / 2n)) (z1 + i z2) has the embedded covariance.
            w = np.fft.fft(scale * (z[0] + 1j * z[1]))
            out[i] = w.real[:n_steps]
    else:
        factor = _cholesky_factor(H, n_steps)
        for i in range(n_paths):
            z = path_generator(seed, method, stream, first_path + i).standard_normal(n_steps)
            out[i] = factor @ z

    lineage = {"seed": int(seed), "method": method, "stream": int(stream), "first_path": int(first_path)}
    return FgnBatch(out, H, lineage)


def scale_and_cumulate(batch: FgnBatch, grid: TimeGrid) -> PathBatch:
    """Turn unit-step fGn into fBm paths on ``grid`` using self-similarity (scale step^H)."""
    if batch.n_steps != grid.n_steps:
        raise ValueError(f"batch has {batch.n_steps} steps but grid has {grid.n_steps}")
    values = np.zeros((batch.n_paths, grid.n_steps + 1))
    np.cumsum(grid.step**batch.hurst * batch.increments, axis=1, out=values[:, 1:])
    return PathBatch(values, grid, batch.hurst)


def coarsen(paths: PathBatch, factor: int) -> PathBatch:
    """Subsample every ``factor``-th grid point; values at shared times are copied exactly."""
    grid = paths.grid.coarsen(factor)
    return PathBatch(paths.values[:, :: int(factor)].copy(), grid, paths.hurst)


def sample_fbm(
    H: float,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    method: str = "circulant",
    *,
    stream: int = 0,
) -> PathBatch:
    return scale_and_cumulate(sample_fgn(H, grid.n_steps, n_paths, seed, method, stream=stream), grid)


def write_paths(path: Union[str, Path], paths: PathBatch, seed: int) -> None:
    """Binary dump: little-endian header then row-major float64 values."""
    header = _HEADER.pack(
        MAGIC, FORMAT_VERSION, paths.hurst, paths.grid.step, paths.grid.n_steps, paths.n_paths, int(seed)
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(paths.values, dtype="<f8").tobytes())


def read_paths(path: Union[str, Path], delay_steps: Optional[int] = None) -> tuple[PathBatch, int]:
    """Inverse of :func:`write_paths`; returns the batch and the recorded seed.

    The format carries no delay, so the grid gets ``delay_steps`` (default: the horizon).
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, H, step, n_steps, n_paths, seed = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 8 * n_paths * (n_steps + 1)
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(n_paths, n_steps + 1)
    grid = TimeGrid(step, n_steps, delay_steps or n_steps)
    return PathBatch(values.astype(float), grid, H), seed
