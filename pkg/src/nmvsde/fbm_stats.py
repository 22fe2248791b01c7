"""Monte Carlo checks of sampled fBm against its exact second-order structure.

Standard errors are estimated per statistic from independent paths, so a
z-score of 4 means "four Monte Carlo standard errors away".
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .fbm import TimeGrid, covariance, fgn_autocovariance, sample_fbm

__all__ = [
    "CheckResult",
    "mean_and_stderr",
    "covariance_zscores",
    "check_covariance",
    "check_variance_law",
    "check_stationarity",
    "check_brownian_increments",
    "check_method_agreement",
]


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_z: float
    threshold: float
    max_abs_deviation: float
    details: dict

    def to_dict(self) -> dict:
        return asdict(self)


def mean_and_stderr(samples: np.ndarray, axis: int = 0):
    n = samples.shape[axis]
    return samples.mean(axis=axis), samples.std(axis=axis, ddof=1) / np.sqrt(n)


def covariance_zscores(values: np.ndarray, expected: np.ndarray):
    """Entrywise z-scores of the zero-mean sample covariance of ``values`` (paths x times)."""
    products = values[:, :, None] * values[:, None, :]
    est, se = mean_and_stderr(products)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, (est - expected) / se, np.where(est == expected, 0.0, np.inf))
    return est, se, z


def _grid_16(horizon: float = 1.0, n_times: int = 16) -> TimeGrid:
    return TimeGrid(horizon / n_times, n_times, n_times)


def check_covariance(
    H: float,
    n_paths: int = 10_000,
    seed: int = 0,
    method: str = "circulant",
    n_times: int = 16,
    threshold: float = 4.0,
) -> CheckResult:
    """Every entry of the sample covariance on ``n_times`` points of (0, 1] within ``threshold`` SE."""
    grid = _grid_16(1.0, n_times)
    values = sample_fbm(H, grid, n_paths, seed, method).values[:, 1:]
    t = grid.times[1:]
    expected = covariance(t[:, None], t[None, :], H)
    est, _, z = covariance_zscores(values, expected)
    max_z = float(np.abs(z).max())
    return CheckResult(
        name=f"covariance[H={H},{method}]",
        passed=max_z <= threshold,
        max_z=max_z,
        threshold=threshold,
        max_abs_deviation=float(np.abs(est - expected).max()),
        details={"n_paths": n_paths, "n_times": n_times, "seed": seed},
    )


def check_variance_law(
    H: float,
    n_paths: int = 10_000,
    seed: int = 0,
    method: str = "circulant",
    n_times: int = 16,
    threshold: float = 4.0,
) -> CheckResult:
    grid = _grid_16(1.0, n_times)
    values = sample_fbm(H, grid, n_paths, seed, method).values[:, 1:]
    expected = grid.times[1:] ** (2 * H)
    est, se = mean_and_stderr(values**2)
    z = (est - expected) / se
    max_z = float(np.abs(z).max())
    return CheckResult(
        name=f"variance_law[H={H},{method}]",
        passed=max_z <= threshold,
        max_z=max_z,
        threshold=threshold,
        max_abs_deviation=float(np.abs(est - expected).max()),
        details={"n_paths": n_paths, "n_times": n_times, "seed": seed},
    )


def _lagged_products(incr: np.ndarray, max_lag: int) -> np.ndarray:
    """Per-path time averages of x_j x_{j+k} for k = 0..max_lag (paths x lags)."""
    n = incr.shape[1]
    return np.stack([(incr[:, : n - k] * incr[:, k:]).mean(axis=1) for k in range(max_lag + 1)], axis=1)


def check_stationarity(
    H: float,
    n_steps: int = 64,
    n_paths: int = 10_000,
    seed: int = 0,
    method: str = "circulant",
    max_lag: int = 8,
    threshold: float = 4.0,
) -> CheckResult:
    """Increment autocovariance at lags 0..max_lag against gamma(k) * step^{2H}."""
    grid = TimeGrid(1.0 / n_steps, n_steps, n_steps)
    incr = np.diff(sample_fbm(H, grid, n_paths, seed, method).values, axis=1)
    est, se = mean_and_stderr(_lagged_products(incr, max_lag))
    expected = fgn_autocovariance(np.arange(max_lag + 1), H) * grid.step ** (2 * H)
    z = (est - expected) / se
    max_z = float(np.abs(z).max())
    return CheckResult(
        name=f"stationarity[H={H},{method}]",
        passed=max_z <= threshold,
        max_z=max_z,
        threshold=threshold,
        max_abs_deviation=float(np.abs(est - expected).max()),
        details={"n_paths": n_paths, "n_steps": n_steps, "lags": max_lag, "estimates": est.tolist()},
    )


def check_brownian_increments(
    n_steps: int = 64,
    n_paths: int = 10_000,
    seed: int = 0,
    method: str = "circulant",
    max_lag: int = 8,
    threshold: float = 3.0,
) -> CheckResult:
    """At H = 1/2 increments are white: lag 1..max_lag autocorrelation 0, variance = step."""
    grid = TimeGrid(1.0 / n_steps, n_steps, n_steps)
    incr = np.diff(sample_fbm(0.5, grid, n_paths, seed, method).values, axis=1)
    prods = _lagged_products(incr, max_lag)
    var_est, var_se = mean_and_stderr(prods[:, 0])
    # Autocorrelation at lag k: ratio of two means; its SE via the per-path ratio spread.
    corr_samples = prods[:, 1:] / grid.step
    corr_est, corr_se = mean_and_stderr(corr_samples)
    z_var = (var_est - grid.step) / var_se
    z_corr = corr_est / corr_se
    max_z = float(max(abs(z_var), np.abs(z_corr).max()))
    return CheckResult(
        name=f"brownian_increments[{method}]",
        passed=max_z <= threshold,
        max_z=max_z,
        threshold=threshold,
        max_abs_deviation=float(max(abs(var_est - grid.step), np.abs(corr_est).max() * grid.step)),
        details={
            "n_paths": n_paths,
            "n_steps": n_steps,
            "variance": float(var_est),
            "autocorrelation": corr_est.tolist(),
            "z_variance": float(z_var),
            "z_autocorrelation": z_corr.tolist(),
        },
    )


def check_method_agreement(
    H: float,
    n_steps: int = 256,
    n_paths: int = 10_000,
    seed: int = 0,
    n_times: int = 16,
    threshold: float = 4.0,
) -> CheckResult:
    """Circulant and Cholesky covariance estimates on an ``n_steps`` grid.

    Both estimates must sit inside the ``threshold`` band around the exact
    covariance at ``n_times`` evenly spaced grid times, and their difference
    inside the combined band.
    """
    grid = TimeGrid(1.0 / n_steps, n_steps, n_steps)
    idx = np.linspace(0, n_steps, n_times + 1).astype(int)[1:]
    t = grid.times[idx]
    expected = covariance(t[:, None], t[None, :], H)
    est = {}
    zmax = 0.0
    for method in ("circulant", "cholesky"):
        values = sample_fbm(H, grid, n_paths, seed, method).values[:, idx]
        e, se, z = covariance_zscores(values, expected)
        est[method] = (e, se)
        zmax = max(zmax, float(np.abs(z).max()))
    (e1, s1), (e2, s2) = est["circulant"], est["cholesky"]
    z_diff = float(np.abs((e1 - e2) / np.sqrt(s1**2 + s2**2)).max())
    max_z = max(zmax, z_diff)
    return CheckResult(
        name=f"method_agreement[H={H}]",
        passed=max_z <= threshold,
        max_z=max_z,
        threshold=threshold,
        max_abs_deviation=float(np.abs(e1 - e2).max()),
        details={"n_paths": n_paths, "n_steps": n_steps, "z_truth": zmax, "z_difference": z_diff},
    )
