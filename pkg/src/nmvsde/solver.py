"""Time stepping for the N-particle neutral McKean-Vlasov delay system.

The Euler-Maruyama recursion on the grid t_k = k * step, with delay m steps:

    Y_{k+1} = D(Y_{k+1-m}) + Y_k - D(Y_{k-m}) + b(Y_k, Y_{k-m}, mu_k) step + sigma(Y_k, mu_k) dB_k

where mu_k is the empirical measure of all N particles at step k. The
Caratheodory variant evaluates b and sigma (and the measure) at the state
``lag`` steps in the past, keeping the delay argument at Y_{k-m}.

States live in a ring buffer of max(m, lag) + 1 slices. All arrays may carry
leading batch axes (independent Monte Carlo repetitions); see
:func:`integrate_batch`.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .fbm import TimeGrid, check_hurst, path_generator, sample_fgn
from .measure import EmpiricalMeasure
from .model import ModelSpec

__all__ = [
    "SCHEMES",
    "DivergenceError",
    "SimConfig",
    "DriverSet",
    "SimOutput",
    "BatchResult",
    "make_drivers",
    "sample_initial_segments",
    "em_step",
    "integrate_batch",
    "simulate",
    "caratheodory_simulate",
    "coupled_simulate",
]

SCHEMES = ("euler_maruyama", "caratheodory")


class DivergenceError(FloatingPointError):
    """A state became non-finite."""

    def __init__(self, step: int, particle: int):
        super().__init__(f"non-finite state at step {step}, particle {particle}")
        self.step = int(step)
        self.particle = int(particle)

    def to_dict(self) -> dict:
        return {"step": self.step, "particle": self.particle}


@dataclass(frozen=True)
class SimConfig:
    n_particles: int
    grid: TimeGrid
    hurst: float
    seed: int = 0
    scheme: str = "euler_maruyama"
    caratheodory_lag_steps: int = 1
    allow_small_hurst: bool = False
    fgn_method: str = "circulant"

    def __post_init__(self):
        if int(self.n_particles) != self.n_particles or self.n_particles < 1:
            raise ValueError(f"n_particles must be a positive integer, got {self.n_particles}")
        if self.grid.delay_steps > self.grid.n_steps:
            raise ValueError(
                f"delay_steps ({self.grid.delay_steps}) must not exceed n_steps ({self.grid.n_steps})"
            )
        H = check_hurst(self.hurst)
        if not (0.5 < H < 1.0) and not self.allow_small_hurst:
            raise ValueError(f"Hurst exponent must lie in (1/2, 1); got {H} (set allow_small_hurst to override)")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.caratheodory_lag_steps < 1:
            raise ValueError("caratheodory_lag_steps must be >= 1")

    @property
    def warnings(self) -> tuple:
        if not 0.5 < self.hurst < 1.0:
            return (f"H = {self.hurst} is outside (1/2, 1); convergence theory does not apply",)
        return ()

    def to_dict(self) -> dict:
        return {
            "n_particles": self.n_particles,
            "step": self.grid.step,
            "n_steps": self.grid.n_steps,
            "delay_steps": self.grid.delay_steps,
            "hurst": self.hurst,
            "seed": self.seed,
            "scheme": self.scheme,
            "caratheodory_lag_steps": self.caratheodory_lag_steps,
            "allow_small_hurst": self.allow_small_hurst,
            "fgn_method": self.fgn_method,
        }


@dataclass(frozen=True)
class DriverSet:
    """fBm increments B_{t_{k+1}} - B_{t_k}, shape (*batch, N, d, M)."""

    increments: np.ndarray
    hurst: float
    step: float
    seed: int = 0
    method: str = "circulant"

    @property
    def n_particles(self) -> int:
        return self.increments.shape[-3]

    @property
    def dimension(self) -> int:
        return self.increments.shape[-2]

    @property
    def n_steps(self) -> int:
        return self.increments.shape[-1]

    def block_sum(self, factor: int) -> "DriverSet":
        """Increments on the grid coarsened by ``factor`` (sums of consecutive blocks)."""
        factor = int(factor)
        if factor == 1:
            return self
        if factor < 1 or self.n_steps % factor:
            raise ValueError(f"factor {factor} does not divide n_steps={self.n_steps}")
        shape = self.increments.shape[:-1] + (self.n_steps // factor, factor)
        return replace(self, increments=self.increments.reshape(shape).sum(axis=-1), step=self.step * factor)

    def head(self, n_particles: int) -> "DriverSet":
        return replace(self, increments=self.increments[..., :n_particles, :, :])

    def paths(self) -> np.ndarray:
        """Cumulative fBm values at t_0..t_M (leading zero column)."""
        shape = self.increments.shape[:-1] + (self.n_steps + 1,)
        out = np.zeros(shape)
        np.cumsum(self.increments, axis=-1, out=out[..., 1:])
        return out


def make_drivers(
    config: SimConfig, dimension: int, *, n_particles: Optional[int] = None, stream: int = 0
) -> DriverSet:
    """Independent fBm per particle and component; row index is particle * d + component."""
    n = config.n_particles if n_particles is None else n_particles
    grid = config.grid
    batch = sample_fgn(config.hurst, grid.n_steps, n * dimension, config.seed, config.fgn_method, stream=stream)
    incr = (grid.step**config.hurst * batch.increments).reshape(n, dimension, grid.n_steps)
    return DriverSet(incr, config.hurst, grid.step, config.seed, config.fgn_method)


def sample_initial_segments(
    model: ModelSpec, grid: TimeGrid, n_particles: int, seed: int, *, stream: int = 0
) -> np.ndarray:
    """Initial segment values at t_{-m}..t_0 for each particle, shape (m + 1, N, d)."""
    m = grid.delay_steps
    times = grid.step * np.arange(-m, 1)
    out = np.empty((m + 1, n_particles, model.dimension))
    for i in range(n_particles):
        rng = path_generator(seed, "initial", stream, i)
        out[:, i, :] = np.asarray(model.initial_segment(rng, times), dtype=float).reshape(m + 1, model.dimension)
    return out


def _increment(model: ModelSpec, x, y_delayed, mu, dB, step):
    drift = np.asarray(model.drift(x, y_delayed, mu), dtype=float)
    sig = model.diffusion_matrix(x, mu)
    if model.dimension == 1:
        noise = sig[..., 0] * dB
    else:
        noise = np.einsum("...ij,...j->...i", sig, dB)
    return drift * step + noise


def _first_bad(values: np.ndarray):
    """Per batch entry: whether any particle is non-finite, and the first such particle."""
    finite = np.isfinite(values).all(axis=-1)
    bad = ~finite.all(axis=-1)
    return bad, np.argmax(~finite, axis=-1)


def em_step(
    model: ModelSpec,
    states_k: np.ndarray,
    states_k_minus_m: np.ndarray,
    states_k_plus_1_minus_m: np.ndarray,
    increments_k: np.ndarray,
    step: float,
    *,
    step_index: int = 0,
) -> np.ndarray:
    """One Euler-Maruyama step for all particles; arrays are (N, d).

    Raises:
        DivergenceError: a new state is non-finite (``step`` = step_index + 1).
    """
    x = np.asarray(states_k, dtype=float)
    mu = EmpiricalMeasure(x)
    with np.errstate(all="ignore"):
        new = (
            np.asarray(model.neutral_map(states_k_plus_1_minus_m))
            + x
            - np.asarray(model.neutral_map(states_k_minus_m))
            + _increment(model, x, states_k_minus_m, mu, increments_k, step)
        )
    bad, particle = _first_bad(new)
    if np.any(bad):
        raise DivergenceError(step_index + 1, int(np.ravel(particle)[0]))
    return new


class BatchResult(NamedTuple):
    records: np.ndarray  # (n_records, *batch, N, d)
    diverged_at: np.ndarray  # (*batch,), -1 when the run stayed finite
    diverged_particle: np.ndarray  # (*batch,)


def integrate_batch(
    model: ModelSpec,
    segment: np.ndarray,
    increments: np.ndarray,
    step: float,
    delay_steps: int,
    *,
    lag: int = 0,
    record_every: int = 1,
    stop_on_divergence: bool = False,
) -> BatchResult:
    """Run the scheme for every batch entry at once.

    Args:
        segment: initial values at t_{-m}..t_0, shape (m + 1, *batch, N, d).
        increments: fBm increments, shape (*batch, N, d, M).
        lag: 0 for Euler-Maruyama, >= 1 for the Caratheodory scheme.
        record_every: keep Y at t_0, t_r, t_{2r}, ... (r must divide M).
        stop_on_divergence: return as soon as every entry has diverged.

    Diverged entries keep running on non-finite values; the caller uses
    ``diverged_at`` to exclude them.
    """
    m = int(delay_steps)
    M = increments.shape[-1]
    if segment.shape[0] != m + 1:
        raise ValueError(f"segment must have m + 1 = {m + 1} time slices, got {segment.shape[0]}")
    if segment.shape[1:] != increments.shape[:-1]:
        raise ValueError(f"segment shape {segment.shape[1:]} does not match drivers {increments.shape[:-1]}")
    if M % record_every:
        raise ValueError(f"record_every={record_every} does not divide n_steps={M}")

    dB = np.ascontiguousarray(np.moveaxis(increments, -1, 0))
    width = max(m, lag) + 1
    state_shape = segment.shape[1:]
    buf = np.empty((width,) + state_shape)
    for j in range(-(width - 1), 1):
        buf[j % width] = segment[max(j, -m) + m]
    dbuf = np.asarray(model.neutral_map(buf), dtype=float).copy()

    records = np.empty((M // record_every + 1,) + state_shape)
    records[0] = segment[m]
    batch_shape = state_shape[:-2]
    diverged_at = np.full(batch_shape, -1, dtype=np.int64)
    diverged_particle = np.full(batch_shape, -1, dtype=np.int64)

    with np.errstate(all="ignore"):
        for k in range(M):
            y_k = buf[k % width]
            x = y_k if lag == 0 else buf[(k - lag) % width]
            mu = EmpiricalMeasure(x)
            inc = _increment(model, x, buf[(k - m) % width], mu, dB[k], step)
            new = dbuf[(k + 1 - m) % width] + (y_k - dbuf[(k - m) % width]) + inc
            slot = (k + 1) % width
            buf[slot] = new
            dbuf[slot] = model.neutral_map(new)
            if (k + 1) % record_every == 0:
                records[(k + 1) // record_every] = new

            bad, particle = _first_bad(new)
            fresh = bad & (diverged_at < 0)
            if np.any(fresh):
                diverged_at[fresh] = k + 1
                diverged_particle[fresh] = particle[fresh]
                if stop_on_divergence and np.all(diverged_at >= 0):
                    break

    return BatchResult(records, diverged_at, diverged_particle)


@dataclass(frozen=True)
class SimOutput:
    """Particle states at t_{-m}..t_K, shape (m + K + 1, N, d).

    K = M for a finite run. A diverged run stops at its last finite step and
    records the first non-finite step in ``diverged_at``.
    """

    states: np.ndarray
    config: SimConfig
    model_name: str
    warnings: tuple = ()
    diverged_at: Optional[int] = None
    diverged_particle: Optional[int] = None
    extra: dict = field(default_factory=dict)

    @property
    def grid(self) -> TimeGrid:
        return self.config.grid

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    @property
    def last_index(self) -> int:
        return self.states.shape[0] - 1 - self.grid.delay_steps

    @property
    def time_indices(self) -> np.ndarray:
        return np.arange(-self.grid.delay_steps, self.last_index + 1)

    @property
    def times(self) -> np.ndarray:
        return self.grid.step * self.time_indices

    @property
    def trajectory(self) -> np.ndarray:
        """States at t_0 onwards."""
        return self.states[self.grid.delay_steps :]

    def at(self, k: int) -> np.ndarray:
        return self.states[k + self.grid.delay_steps]

    def divergence(self) -> Optional[DivergenceError]:
        if self.diverged_at is None:
            return None
        return DivergenceError(self.diverged_at, self.diverged_particle)

    def raise_if_diverged(self) -> None:
        err = self.divergence()
        if err is not None:
            raise err

    def write_csv(self, dest: Union[str, Path, io.TextIOBase]) -> None:
        """Columns time, particle, component, value; time-major, particle-minor."""
        if isinstance(dest, (str, Path)):
            with open(dest, "w", newline="") as fh:
                self.write_csv(fh)
            return
        writer = csv.writer(dest, lineterminator="\r\n")
        writer.writerow(["time", "particle", "component", "value"])
        n, d = self.states.shape[1:]
        for t, slab in zip(self.times, self.states):
            t = repr(float(t))
            for i in range(n):
                for c in range(d):
                    writer.writerow([t, i, c, repr(float(slab[i, c]))])


def _check_inputs(model: ModelSpec, config: SimConfig, drivers: DriverSet) -> None:
    grid = config.grid
    if not np.isclose(grid.delay, model.delay, rtol=1e-12, atol=0.0):
        raise ValueError(f"grid delay {grid.delay} does not match the model delay {model.delay}")
    expected = (config.n_particles, model.dimension, grid.n_steps)
    if drivers.increments.shape != expected:
        raise ValueError(f"drivers have shape {drivers.increments.shape}, expected {expected}")
    if drivers.hurst != config.hurst:
        raise ValueError(f"drivers were sampled with H={drivers.hurst}, config has H={config.hurst}")
    if not np.isclose(drivers.step, grid.step, rtol=1e-12, atol=0.0):
        raise ValueError(f"drivers step {drivers.step} differs from grid step {grid.step}")


def _run(model, config, drivers, initial, lag) -> SimOutput:
    if drivers is None:
        drivers = make_drivers(config, model.dimension)
    _check_inputs(model, config, drivers)
    m = config.grid.delay_steps
    if initial is None:
        initial = sample_initial_segments(model, config.grid, config.n_particles, config.seed)
    initial = np.asarray(initial, dtype=float)
    if initial.shape != (m + 1, config.n_particles, model.dimension):
        raise ValueError(f"initial segment has shape {initial.shape}, expected {(m + 1, config.n_particles, model.dimension)}")

    result = integrate_batch(
        model, initial, drivers.increments, config.grid.step, m, lag=lag, stop_on_divergence=True
    )
    states = np.concatenate([initial[:m], result.records])
    diverged_at = particle = None
    if result.diverged_at >= 0:
        diverged_at = int(result.diverged_at)
        particle = int(result.diverged_particle)
        states = states[: m + diverged_at]
    return SimOutput(states, config, model.name, config.warnings, diverged_at, particle)


def simulate(
    model: ModelSpec,
    config: SimConfig,
    drivers: Optional[DriverSet] = None,
    *,
    initial: Optional[np.ndarray] = None,
) -> SimOutput:
    """Run the scheme selected by ``config.scheme`` for the N-particle system.

    Drivers and initial segments default to the streams of ``config.seed``.
    """
    lag = config.caratheodory_lag_steps if config.scheme == "caratheodory" else 0
    return _run(model, config, drivers, initial, lag)


def caratheodory_simulate(
    model: ModelSpec,
    config: SimConfig,
    drivers: Optional[DriverSet] = None,
    *,
    initial: Optional[np.ndarray] = None,
) -> SimOutput:
    """Lagged-coefficient scheme with lag ``config.caratheodory_lag_steps``.

    Lagged states before t_{-m} are taken as the segment value at t_{-m}.
    """
    config = replace(config, scheme="caratheodory")
    return _run(model, config, drivers, initial, config.caratheodory_lag_steps)


def coupled_simulate(
    model: ModelSpec,
    base_config: SimConfig,
    fine_drivers: Optional[DriverSet],
    factors: Sequence[int],
    *,
    initial: Optional[np.ndarray] = None,
) -> list:
    """Runs on coarsened grids sharing one set of fine drivers and initial segments.

    Level ``f`` uses block sums of ``f`` fine increments; factor 1 reproduces
    :func:`simulate` on the fine grid.
    """
    grid = base_config.grid
    for f in factors:
        if int(f) != f or f < 1 or grid.n_steps % f or grid.delay_steps % f:
            raise ValueError(
                f"factor {f} must divide n_steps={grid.n_steps} and delay_steps={grid.delay_steps}"
            )
    if fine_drivers is None:
        fine_drivers = make_drivers(base_config, model.dimension)
    if initial is None:
        initial = sample_initial_segments(model, grid, base_config.n_particles, base_config.seed)
    outputs = []
    for f in factors:
        config = replace(base_config, grid=grid.coarsen(f))
        outputs.append(simulate(model, config, fine_drivers.block_sum(f), initial=initial[:: int(f)]))
    return outputs
