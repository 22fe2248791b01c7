"""Monte Carlo studies: strong convergence in the step size, propagation of
chaos in the particle count, and moment stability.

Repetitions are split into blocks of a fixed size (``block_size``) that are
integrated as one batch; blocks may run on a thread pool. Because the block
partition never depends on the thread count and each repetition draws from
its own streams, every report is bit-identical for any ``threads`` value.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy import stats

from .fbm import TimeGrid, check_hurst
from .model import ModelSpec, validate_assumptions
from .solver import DriverSet, SimConfig, integrate_batch, make_drivers, sample_initial_segments

__all__ = [
    "StudyError",
    "SlopeFit",
    "fit_loglog_slope",
    "ConvergenceReport",
    "ChaosReport",
    "MomentReport",
    "strong_convergence_study",
    "chaos_study",
    "moment_study",
    "synthetic_convergence_report",
    "synthetic_chaos_report",
    "write_json",
    "write_table",
]

EXACT_TOL = 1e-12
DEFAULT_BLOCK = 20
MAX_DIVERGED_FRACTION = 0.5


class StudyError(RuntimeError):
    """Too few usable levels to fit a rate."""


class SlopeFit(NamedTuple):
    slope: float
    intercept: float
    stderr: float
    r_squared: float


def fit_loglog_slope(xs, ys) -> SlopeFit:
    """Ordinary least squares of log(ys) on log(xs)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("xs and ys must be 1-D sequences of equal length")
    if len(xs) < 3:
        raise ValueError(f"need at least 3 points to fit a slope, got {len(xs)}")
    if np.any(~(xs > 0)) or np.any(~(ys > 0)):
        raise ValueError("log-log fit needs strictly positive values")
    res = stats.linregress(np.log(xs), np.log(ys))
    return SlopeFit(float(res.slope), float(res.intercept), float(res.stderr), float(res.rvalue**2))


# ---------------------------------------------------------------------------
# block scheduling
# ---------------------------------------------------------------------------


def _blocks(n_mc: int, block_size: int) -> list:
    return [range(lo, min(lo + block_size, n_mc)) for lo in range(0, n_mc, block_size)]


def _map_blocks(fn: Callable, n_mc: int, block_size: int, threads: int) -> list:
    blocks = _blocks(n_mc, block_size)
    if threads <= 1 or len(blocks) == 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, blocks))


def _batched_inputs(model: ModelSpec, config: SimConfig, reps: range, n_particles: int):
    incr = np.stack([make_drivers(config, model.dimension, n_particles=n_particles, stream=r).increments for r in reps])
    seg = np.stack(
        [sample_initial_segments(model, config.grid, n_particles, config.seed, stream=r) for r in reps], axis=1
    )
    return incr, seg


def _aggregate(per_rep: np.ndarray, p: float):
    """Mean, stderr of the mean, p-th root and its delta-method stderr over finite entries (column-wise)."""
    out = []
    for col in per_rep.T:
        vals = col[np.isfinite(col)]
        n = len(vals)
        if n == 0:
            out.append((math.nan, math.nan, math.nan, math.nan, 0))
            continue
        with np.errstate(over="ignore"):
            m = float(np.sum(vals) / n)
            se = float(np.std(vals, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
        root = m ** (1.0 / p)
        root_se = se / (p * m ** ((p - 1.0) / p)) if m > 0 else 0.0
        out.append((m, se, root, root_se, n))
    return out


def _fit_pair(xs, errors, p):
    """RMS-type fit on p-th-root errors and MSE-type fit on errors^p (slope exactly p times larger)."""
    root = fit_loglog_slope(xs, errors)
    power = fit_loglog_slope(xs, np.asarray(errors) ** p)
    return root, power


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class ConvergenceReport:
    """Strong error (E max_k |Y^Delta_k - Y^ref_k|^p)^(1/p) per step size."""

    deltas: list
    factors: list
    errors: list
    error_stderr: list
    mse: list
    mse_stderr: list
    n_effective: list
    n_diverged: list
    p: float
    n_mc: int
    n_particles: int
    hurst: float
    reference_step: float
    model_name: str
    slope: Optional[float] = None
    intercept: Optional[float] = None
    slope_stderr: Optional[float] = None
    r_squared: Optional[float] = None
    mse_slope: Optional[float] = None
    mse_slope_stderr: Optional[float] = None
    exact: bool = False
    dropped: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    level_name = "delta"

    @property
    def level_values(self) -> list:
        return self.deltas

    def to_dict(self) -> dict:
        return {"kind": "convergence", **asdict(self)}


@dataclass
class ChaosReport:
    """Coupled error between N-particle and N_ref-particle systems per N.

    ``slope`` is fitted on (N, error^p); ``rms_slope`` on (N, error).
    """

    particle_counts: list
    errors: list
    error_stderr: list
    mse: list
    mse_stderr: list
    n_effective: list
    n_diverged: list
    reference_count: int
    tracked_particles: int
    p: float
    n_mc: int
    hurst: float
    step: float
    n_steps: int
    model_name: str
    slope: Optional[float] = None
    intercept: Optional[float] = None
    slope_stderr: Optional[float] = None
    r_squared: Optional[float] = None
    rms_slope: Optional[float] = None
    rms_slope_stderr: Optional[float] = None
    exact: bool = False
    dropped: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    level_name = "n_particles"

    @property
    def level_values(self) -> list:
        return self.particle_counts

    def to_dict(self) -> dict:
        return {"kind": "chaos", **asdict(self)}


@dataclass
class MomentReport:
    """E sup_k |Y_k|^p at step and step / 2 (coupled drivers)."""

    p_values: list
    deltas: list
    estimates: list  # [delta][p]
    stderrs: list
    lp_norms: list
    relative_change: list  # per p, |fine - coarse| / coarse
    bands_overlap: list  # per p, 2-sigma bands intersect
    diverged_fraction: list  # per delta
    unreliable: list  # per delta
    n_mc: int
    n_particles: int
    model_name: str

    def to_dict(self) -> dict:
        return {"kind": "moments", **asdict(self)}


# ---------------------------------------------------------------------------
# strong convergence
# ---------------------------------------------------------------------------


def strong_convergence_study(
    model: ModelSpec,
    H: float,
    coarse_factors: Sequence[int],
    fine_steps: int,
    N: int,
    p: float = 2.0,
    n_mc: int = 100,
    seed: int = 0,
    *,
    horizon: float = 1.0,
    threads: int = 1,
    block_size: int = DEFAULT_BLOCK,
    fgn_method: str = "circulant",
) -> ConvergenceReport:
    """Strong error of coarse Euler-Maruyama runs against a fine reference.

    Each repetition samples drivers on the fine grid (``fine_steps`` steps on
    [0, horizon]); level ``f`` runs on block sums of ``f`` increments, and the
    factor-1 run is the reference. The per-repetition statistic is the mean
    over particles of max over the level's grid times of |Y^f - Y^ref|^p.
    """
    check_hurst(H)
    if p < 2:
        raise ValueError("p must be >= 2")
    factors = sorted({int(f) for f in coarse_factors if int(f) != 1})
    fine = TimeGrid.from_horizon(horizon, model.delay, fine_steps)
    for f in factors:
        if fine.n_steps % f or fine.delay_steps % f:
            raise ValueError(f"factor {f} must divide fine_steps={fine.n_steps} and delay_steps={fine.delay_steps}")
    if len(factors) < 3:
        raise ValueError("need at least 3 coarse factors")
    config = SimConfig(N, fine, H, seed, fgn_method=fgn_method)
    g = math.gcd(*factors)

    def run_block(reps: range) -> np.ndarray:
        incr, seg = _batched_inputs(model, config, reps, N)
        ref = integrate_batch(model, seg, incr, fine.step, fine.delay_steps, record_every=g)
        drivers = DriverSet(incr, H, fine.step, seed, fgn_method)
        out = np.full((len(reps), len(factors)), np.nan)
        for j, f in enumerate(factors):
            lvl = integrate_batch(
                model, seg[::f], drivers.block_sum(f).increments, fine.step * f, fine.delay_steps // f
            )
            with np.errstate(all="ignore"):
                gap = np.linalg.norm(lvl.records - ref.records[:: f // g], axis=-1)
                stat = np.mean(np.max(gap, axis=0) ** p, axis=-1)
            ok = (lvl.diverged_at < 0) & (ref.diverged_at < 0)
            out[ok, j] = stat[ok]
        return out

    per_rep = np.concatenate(_map_blocks(run_block, n_mc, block_size, threads))
    agg = _aggregate(per_rep, p)

    report = ConvergenceReport(
        deltas=[], factors=[], errors=[], error_stderr=[], mse=[], mse_stderr=[], n_effective=[],
        n_diverged=[], p=float(p), n_mc=int(n_mc), n_particles=int(N), hurst=float(H),
        reference_step=fine.step, model_name=model.name,
    )
    for f, (m, se, root, root_se, n) in zip(factors, agg):
        delta = fine.step * f
        if n_mc - n > MAX_DIVERGED_FRACTION * n_mc:
            report.dropped.append({"delta": delta, "n_diverged": n_mc - n})
            continue
        report.deltas.append(delta)
        report.factors.append(f)
        report.errors.append(root)
        report.error_stderr.append(root_se)
        report.mse.append(m)
        report.mse_stderr.append(se)
        report.n_effective.append(n)
        report.n_diverged.append(n_mc - n)

    if len(report.deltas) < 3:
        raise StudyError(f"only {len(report.deltas)} levels survived divergence filtering; need 3")
    if max(report.errors) <= EXACT_TOL:
        report.exact = True
        report.notes.append("all errors below 1e-12: the scheme is exact for this model")
        return report
    root_fit, power_fit = _fit_pair(report.deltas, report.errors, p)
    report.slope, report.intercept, report.slope_stderr, report.r_squared = root_fit
    report.mse_slope, report.mse_slope_stderr = power_fit.slope, power_fit.stderr
    report.notes.append(
        f"theory for state-independent diffusion: p-th-root error slope H = {H}, error^p slope pH = {p * H}"
    )
    if _state_dependent_diffusion(model):
        report.notes.append("diffusion depends on the state; the Delta^H rate is not covered by the theory")
    return report


def _state_dependent_diffusion(model: ModelSpec) -> bool:
    return validate_assumptions(model, n_probes=8, radius=1.0, seed=0).diffusion_x_dependent


# ---------------------------------------------------------------------------
# propagation of chaos
# ---------------------------------------------------------------------------


def chaos_study(
    model: ModelSpec,
    H: float,
    particle_counts: Sequence[int],
    reference_count: int,
    grid: TimeGrid,
    p: float = 2.0,
    n_mc: int = 100,
    seed: int = 0,
    *,
    tracked: int = 32,
    threads: int = 1,
    block_size: int = DEFAULT_BLOCK,
    fgn_method: str = "circulant",
) -> ChaosReport:
    """Coupled comparison of N-particle systems with one large reference system.

    The N-system reuses the first N driver rows and initial draws of the
    reference system, so particle i sees the same noise in both. The limit
    law is unknown; the measured gap is bounded by the chaos error of both
    systems.
    """
    check_hurst(H)
    counts = sorted(int(n) for n in particle_counts)
    if len(set(counts)) != len(counts):
        raise ValueError("particle counts must be distinct")
    if counts[-1] >= reference_count:
        raise ValueError(f"every particle count must be below the reference count {reference_count}")
    if counts[0] < 1:
        raise ValueError("particle counts must be positive")
    config = SimConfig(reference_count, grid, H, seed, fgn_method=fgn_method)
    if not np.isclose(grid.delay, model.delay, rtol=1e-12, atol=0.0):
        raise ValueError(f"grid delay {grid.delay} does not match model delay {model.delay}")

    def run_block(reps: range) -> np.ndarray:
        incr, seg = _batched_inputs(model, config, reps, reference_count)
        ref = integrate_batch(model, seg, incr, grid.step, grid.delay_steps)
        out = np.full((len(reps), len(counts)), np.nan)
        for j, n in enumerate(counts):
            k = min(n, tracked)
            sys_n = integrate_batch(model, seg[:, :, :n], incr[:, :n], grid.step, grid.delay_steps)
            with np.errstate(all="ignore"):
                gap = np.linalg.norm(sys_n.records[:, :, :k] - ref.records[:, :, :k], axis=-1)
                stat = np.mean(np.max(gap, axis=0) ** p, axis=-1)
            ok = (sys_n.diverged_at < 0) & (ref.diverged_at < 0)
            out[ok, j] = stat[ok]
        return out

    per_rep = np.concatenate(_map_blocks(run_block, n_mc, block_size, threads))
    agg = _aggregate(per_rep, p)
    report = ChaosReport(
        particle_counts=[], errors=[], error_stderr=[], mse=[], mse_stderr=[], n_effective=[], n_diverged=[],
        reference_count=int(reference_count), tracked_particles=int(tracked), p=float(p), n_mc=int(n_mc),
        hurst=float(H), step=grid.step, n_steps=grid.n_steps, model_name=model.name,
    )
    report.notes.append(
        f"limit proxy: coupled interacting system with N_ref = {reference_count}; the measured gap is bounded "
        "by the sum of the chaos errors of the N- and N_ref-systems"
    )
    for n, (m, se, root, root_se, neff) in zip(counts, agg):
        if n_mc - neff > MAX_DIVERGED_FRACTION * n_mc:
            report.dropped.append({"n_particles": n, "n_diverged": n_mc - neff})
            continue
        report.particle_counts.append(n)
        report.errors.append(root)
        report.error_stderr.append(root_se)
        report.mse.append(m)
        report.mse_stderr.append(se)
        report.n_effective.append(neff)
        report.n_diverged.append(n_mc - neff)

    if len(report.particle_counts) < 3:
        raise StudyError(f"only {len(report.particle_counts)} particle counts survived; need 3")
    if max(report.errors) <= EXACT_TOL:
        report.exact = True
        report.notes.append("all errors below 1e-12: the coefficients do not interact")
        return report
    root_fit, power_fit = _fit_pair(report.particle_counts, report.errors, p)
    report.slope, report.intercept, report.slope_stderr, report.r_squared = power_fit
    report.rms_slope, report.rms_slope_stderr = root_fit.slope, root_fit.stderr
    return report


# ---------------------------------------------------------------------------
# moments
# ---------------------------------------------------------------------------


def moment_study(
    model: ModelSpec,
    config: SimConfig,
    p_values: Sequence[float],
    n_mc: int,
    *,
    threads: int = 1,
    block_size: int = DEFAULT_BLOCK,
) -> MomentReport:
    """E sup_{k} |Y_{t_k}|^p at ``config.grid.step`` and half of it.

    Both runs share drivers: the halved grid is sampled and block-summed for
    the original step. Bounded moments need (l + 1) p <= p-bar for the
    initial data's integrability p-bar; this is not enforced.
    """
    p_values = [float(p) for p in p_values]
    fine = config.grid.refine(2)
    fine_config = SimConfig(
        config.n_particles, fine, config.hurst, config.seed, allow_small_hurst=config.allow_small_hurst,
        fgn_method=config.fgn_method,
    )
    N = config.n_particles

    def run_block(reps: range) -> np.ndarray:
        incr, seg = _batched_inputs(model, fine_config, reps, N)
        drivers = DriverSet(incr, config.hurst, fine.step, config.seed, config.fgn_method)
        out = np.full((2, len(reps), len(p_values)), np.nan)
        runs = [
            integrate_batch(model, seg[::2], drivers.block_sum(2).increments, config.grid.step, config.grid.delay_steps),
            integrate_batch(model, seg, incr, fine.step, fine.delay_steps),
        ]
        for lvl, res in enumerate(runs):
            with np.errstate(all="ignore"):
                sup = np.max(np.linalg.norm(res.records, axis=-1), axis=0)
                for j, p in enumerate(p_values):
                    out[lvl, :, j] = np.mean(sup**p, axis=-1)
            out[lvl, res.diverged_at >= 0, :] = np.nan
        return out

    per_rep = np.concatenate(_map_blocks(run_block, n_mc, block_size, threads), axis=1)
    estimates, stderrs, lp, frac = [], [], [], []
    for lvl in range(2):
        rows = _aggregate(per_rep[lvl], 1.0)
        estimates.append([r[0] for r in rows])
        stderrs.append([r[1] for r in rows])
        lp.append([r[0] ** (1.0 / p) for r, p in zip(rows, p_values)])
        frac.append(float(1.0 - rows[0][4] / n_mc) if rows else 0.0)
    rel, overlap = [], []
    for j in range(len(p_values)):
        a, b = estimates[0][j], estimates[1][j]
        sa, sb = stderrs[0][j], stderrs[1][j]
        rel.append(abs(b - a) / abs(a) if a else math.inf)
        overlap.append(bool(abs(a - b) <= 2.0 * (sa + sb)))
    return MomentReport(
        p_values=p_values,
        deltas=[config.grid.step, fine.step],
        estimates=estimates,
        stderrs=stderrs,
        lp_norms=lp,
        relative_change=rel,
        bands_overlap=overlap,
        diverged_fraction=frac,
        unreliable=[f > MAX_DIVERGED_FRACTION for f in frac],
        n_mc=int(n_mc),
        n_particles=int(N),
        model_name=model.name,
    )


# ---------------------------------------------------------------------------
# synthetic self-tests
# ---------------------------------------------------------------------------


def synthetic_convergence_report(deltas: Sequence[float], slope: float, scale: float = 1.0, p: float = 2.0):
    """Report built from injected errors scale * delta^slope (checks the fitting pipeline)."""
    deltas = [float(d) for d in sorted(deltas)]
    errors = [scale * d**slope for d in deltas]
    report = ConvergenceReport(
        deltas=deltas, factors=[], errors=errors, error_stderr=[0.0] * len(deltas),
        mse=[e**p for e in errors], mse_stderr=[0.0] * len(deltas), n_effective=[0] * len(deltas),
        n_diverged=[0] * len(deltas), p=float(p), n_mc=0, n_particles=0, hurst=math.nan,
        reference_step=math.nan, model_name="synthetic", notes=[f"injected slope {slope}"],
    )
    root_fit, power_fit = _fit_pair(deltas, errors, p)
    report.slope, report.intercept, report.slope_stderr, report.r_squared = root_fit
    report.mse_slope, report.mse_slope_stderr = power_fit.slope, power_fit.stderr
    return report


def synthetic_chaos_report(particle_counts: Sequence[int], slope: float, scale: float = 1.0, p: float = 2.0):
    """Report whose errors^p follow scale * N^slope exactly."""
    counts = sorted(int(n) for n in particle_counts)
    mse = [scale * n**slope for n in counts]
    errors = [m ** (1.0 / p) for m in mse]
    report = ChaosReport(
        particle_counts=counts, errors=errors, error_stderr=[0.0] * len(counts), mse=mse,
        mse_stderr=[0.0] * len(counts), n_effective=[0] * len(counts), n_diverged=[0] * len(counts),
        reference_count=0, tracked_particles=0, p=float(p), n_mc=0, hurst=math.nan, step=math.nan,
        n_steps=0, model_name="synthetic", notes=[f"injected slope {slope}"],
    )
    root_fit, power_fit = _fit_pair(counts, errors, p)
    report.slope, report.intercept, report.slope_stderr, report.r_squared = power_fit
    report.rms_slope, report.rms_slope_stderr = root_fit.slope, root_fit.stderr
    return report


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if math.isfinite(value) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(payload: dict, path) -> None:
    """Deterministic JSON (non-finite floats become null)."""
    text = json.dumps(_jsonable(payload), indent=2, allow_nan=False)
    Path(path).write_text(text + "\n")


def write_table(report, path) -> None:
    """Per-level CSV: level parameter, error, stderr, error^p, its stderr, n_effective, n_diverged."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow([report.level_name, "error", "stderr", "mse", "mse_stderr", "n_effective", "n_diverged"])
        rows = zip(
            report.level_values, report.errors, report.error_stderr, report.mse, report.mse_stderr,
            report.n_effective, report.n_diverged,
        )
        for level, err, se, mse, mse_se, neff, ndiv in rows:
            writer.writerow([repr(level), repr(float(err)), repr(float(se)), repr(float(mse)), repr(float(mse_se)), neff, ndiv])
