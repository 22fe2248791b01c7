"""Log-log figures for convergence and chaos reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_report", "guide_line"]

STYLE = {
    "font.family": "serif",
    "font.size": 10,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": (5.0, 3.6),
    "svg.hashsalt": "nmvsde",
    "svg.fonttype": "path",
}


def guide_line(xs, anchor_y: float, slope: float) -> np.ndarray:
    """y = anchor_y * (x / x_0)^slope, passing through the first data point."""
    xs = np.asarray(xs, dtype=float)
    return anchor_y * (xs / xs[0]) ** slope


def plot_report(report, path, reference_slope: float = 1.0, quantity: str = "mse") -> None:
    """Write a log-log plot of a convergence or chaos report.

    ``quantity`` selects error^p ("mse") or its p-th root ("rms"). A dashed
    line of ``reference_slope`` is anchored at the first point.
    """
    xs = np.asarray(report.level_values, dtype=float)
    if quantity == "mse":
        ys, err = np.asarray(report.mse), np.asarray(report.mse_stderr)
        ylabel = f"E max |error|^{report.p:g}"
    elif quantity == "rms":
        ys, err = np.asarray(report.errors), np.asarray(report.error_stderr)
        ylabel = f"(E max |error|^{report.p:g})^(1/{report.p:g})"
    else:
        raise ValueError(f"quantity must be 'mse' or 'rms', got {quantity!r}")

    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.errorbar(xs, ys, yerr=2 * err, fmt="o-", color="tab:red", ms=4, capsize=2, label="estimate (2 s.e.)")
        ax.plot(xs, guide_line(xs, ys[0], reference_slope), "--", color="tab:blue", label=f"slope {reference_slope:g}")
        ax.set_xscale("log", base=2 if report.level_name == "delta" else 10)
        ax.set_yscale("log")
        ax.set_xlabel("step size" if report.level_name == "delta" else "number of particles N")
        ax.set_ylabel(ylabel)
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(loc="best", frameon=False)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
